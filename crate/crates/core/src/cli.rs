//! Experiment configs, run directories and the `binflow` subcommands.
//!
//! Every artifact carries the tool version, the config digest and the seed.
//! Wall-clock timestamps go only to `timestamps.json`, so reruns reproduce
//! all other files byte for byte.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use log::info;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::denoiser::{Denoiser, OracleDenoiser};
use crate::diagnostics::{run_suite, w1_empirical, DiagnosticsReport, SuiteConfig};
use crate::error::{Error, Result};
use crate::likelihood::{
    nll_monte_carlo, nll_quadrature_many, summarize, DenoiserRate, NllEstimate, NllMode,
    RateSource,
};
use crate::model::checkpoint::{decode, save_model, TOOL_VERSION};
use crate::model::train::{train, TrainConfig};
use crate::model::MlpDenoiser;
use crate::poisson_calculus::{relative_density, FlowTables};
use crate::sampler::{run_sampler, SamplerConfig};
use crate::targets::{make_target, sample_target, Family, TargetPmf};

pub const CHECKPOINT_FILE: &str = "checkpoint.bnfw";

const DATA_SEED_OFFSET: u64 = 0x5eed_0001;
const EVAL_SEED_OFFSET: u64 = 0x5eed_0002;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TargetBlock {
    pub family: Family,
    /// Family parameters; the standard preset when absent. For `custom`,
    /// the unnormalized weights on `{0, ..., support_cap}`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub params: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub support_cap: Option<usize>,
}

impl TargetBlock {
    pub fn build(&self) -> Result<TargetPmf> {
        let preset = self.family.standard_preset();
        let params = match (&self.params, &preset) {
            (Some(p), _) => p.clone(),
            (None, Some((p, _))) => p.clone(),
            (None, None) => {
                return Err(Error::Config {
                    path: "target.params".into(),
                    message: "custom targets need explicit weights".into(),
                })
            }
        };
        let cap = match (self.support_cap, &preset) {
            (Some(c), _) => c,
            (None, Some((_, c))) if self.params.is_none() => *c,
            (None, _) if self.family == Family::Custom => params.len().saturating_sub(1),
            (None, Some((_, c))) => *c,
            (None, None) => unreachable!("custom handled above"),
        };
        make_target(self.family, &params, cap).map_err(|e| Error::Config {
            path: "target".into(),
            message: e.to_string(),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Precision {
    #[default]
    F32,
    F64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LikelihoodBlock {
    pub mode: NllMode,
    pub n_nodes: usize,
    pub n_time: usize,
    pub n_inner: usize,
    /// Size of a freshly drawn evaluation set.
    pub n_eval: usize,
}

impl Default for LikelihoodBlock {
    fn default() -> Self {
        Self {
            mode: NllMode::Quadrature,
            n_nodes: 128,
            n_time: 1000,
            n_inner: 1,
            n_eval: 10_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IoBlock {
    /// Parent of the run directories; not part of the digest.
    #[serde(skip_serializing)]
    pub out_dir: PathBuf,
    pub precision: Precision,
}

impl Default for IoBlock {
    fn default() -> Self {
        Self {
            out_dir: PathBuf::from("runs"),
            precision: Precision::F32,
        }
    }
}

/// A whole experiment. Block seeds are overwritten by the global `seed`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(rename = "_notes", default, skip_serializing)]
    pub notes: Option<serde_json::Value>,
    pub target: TargetBlock,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub sampler: SamplerConfig,
    #[serde(default)]
    pub likelihood: LikelihoodBlock,
    #[serde(default)]
    pub diagnostics: SuiteConfig,
    #[serde(default)]
    pub io: IoBlock,
    #[serde(default)]
    pub seed: u64,
}

fn config_err(path: &str, e: Error) -> Error {
    match e {
        Error::Config { .. } => e,
        other => Error::Config {
            path: path.into(),
            message: other.to_string(),
        },
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let mut cfg: Self = serde_path_to_error::deserialize(de).map_err(|e| Error::Config {
            path: e.path().to_string(),
            message: e.inner().to_string(),
        })?;
        cfg.set_seed(cfg.seed);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::Config {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        Self::from_json(&text)
    }

    pub fn set_seed(&mut self, seed: u64) {
        self.seed = seed;
        self.train.seed = seed;
        self.sampler.seed = seed;
        self.diagnostics.seed = seed;
    }

    pub fn validate(&self) -> Result<()> {
        self.target.build()?;
        self.train.validate().map_err(|e| config_err("train", e))?;
        self.sampler.validate().map_err(|e| config_err("sampler", e))?;
        self.diagnostics.validate()?;
        if self.train.final_time != self.sampler.final_time {
            return Err(Error::Config {
                path: "sampler.T".into(),
                message: format!(
                    "T = {} differs from train.T = {}",
                    self.sampler.final_time, self.train.final_time
                ),
            });
        }
        let l = &self.likelihood;
        if l.n_nodes == 0 || l.n_time == 0 || l.n_inner == 0 {
            return Err(Error::Config {
                path: "likelihood".into(),
                message: "node and draw counts must be positive".into(),
            });
        }
        if self.sampler.dim != 1 {
            return Err(Error::Config {
                path: "sampler.dim".into(),
                message: "experiments run on one-dimensional targets".into(),
            });
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form, `_notes` excluded.
    pub fn digest(&self) -> [u8; 32] {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        Sha256::digest(&bytes).into()
    }

    pub fn digest_hex(&self) -> String {
        hex(&self.digest())
    }

    pub fn run_dir(&self) -> PathBuf {
        self.io
            .out_dir
            .join(format!("{}-s{}", &self.digest_hex()[..12], self.seed))
    }

    pub fn final_time(&self) -> f64 {
        self.train.final_time
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().fold(String::new(), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

/// A checkpoint of either precision.
pub enum LoadedModel {
    F32(MlpDenoiser<f32>),
    F64(MlpDenoiser<f64>),
}

impl Denoiser for LoadedModel {
    fn final_time(&self) -> f64 {
        match self {
            LoadedModel::F32(m) => m.final_time(),
            LoadedModel::F64(m) => m.final_time(),
        }
    }

    fn denoise(&self, t: f64, x: &[u32]) -> Result<Vec<f64>> {
        match self {
            LoadedModel::F32(m) => m.denoise(t, x),
            LoadedModel::F64(m) => m.denoise(t, x),
        }
    }

    fn denoise_row(&self, t: f64, max_x: u32) -> Result<Vec<f64>> {
        match self {
            LoadedModel::F32(m) => m.denoise_row(t, max_x),
            LoadedModel::F64(m) => m.denoise_row(t, max_x),
        }
    }
}

pub fn load_checkpoint(path: &Path, expected_dim: Option<usize>) -> Result<LoadedModel> {
    let bytes = fs::read(path)?;
    match bytes.get(8) {
        Some(8) => Ok(LoadedModel::F64(decode(&bytes, expected_dim)?.0)),
        _ => Ok(LoadedModel::F32(decode(&bytes, expected_dim)?.0)),
    }
}

/// Where rates come from: the exact tables or a trained network.
pub enum ModelSource {
    Oracle(OracleDenoiser),
    Checkpoint(LoadedModel),
}

impl ModelSource {
    pub fn label(&self) -> &'static str {
        match self {
            ModelSource::Oracle(_) => "oracle",
            ModelSource::Checkpoint(_) => "checkpoint",
        }
    }

    fn denoiser(&self) -> &dyn Denoiser {
        match self {
            ModelSource::Oracle(d) => d,
            ModelSource::Checkpoint(m) => m,
        }
    }
}

pub fn open_source(
    cfg: &ExperimentConfig,
    pmf: &TargetPmf,
    checkpoint: Option<&Path>,
    oracle: bool,
) -> Result<ModelSource> {
    match (checkpoint, oracle) {
        (Some(_), true) => Err(Error::Config {
            path: "--checkpoint".into(),
            message: "--checkpoint and --oracle are exclusive".into(),
        }),
        (None, true) => Ok(ModelSource::Oracle(OracleDenoiser::new(
            pmf.clone(),
            cfg.final_time(),
        )?)),
        (Some(p), false) => Ok(ModelSource::Checkpoint(load_checkpoint(p, Some(1))?)),
        (None, false) => {
            let p = cfg.run_dir().join(CHECKPOINT_FILE);
            if !p.exists() {
                return Err(Error::Config {
                    path: "--checkpoint".into(),
                    message: format!("no --oracle, no --checkpoint and no {}", p.display()),
                });
            }
            Ok(ModelSource::Checkpoint(load_checkpoint(&p, Some(1))?))
        }
    }
}

/// Result of a subcommand: where its files went and the exit status.
#[derive(Debug, Clone, PartialEq)]
pub struct CommandOutcome {
    pub run_dir: PathBuf,
    pub exit_code: u8,
}

/// Exit status for an error: 1 for usage and config problems, 2 otherwise.
pub fn exit_code_for(err: &Error) -> u8 {
    match err {
        Error::Config { .. } | Error::Parse { .. } => 1,
        _ => 2,
    }
}

fn header(cfg: &ExperimentConfig) -> String {
    format!(
        "# binflow {TOOL_VERSION}\n# config_digest {}\n# seed {}\n",
        cfg.digest_hex(),
        cfg.seed
    )
}

#[derive(Serialize)]
struct Provenance<'a> {
    tool_version: &'a str,
    config_digest: String,
    seed: u64,
}

fn provenance(cfg: &ExperimentConfig) -> Provenance<'static> {
    Provenance {
        tool_version: TOOL_VERSION,
        config_digest: cfg.digest_hex(),
        seed: cfg.seed,
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::Numeric(e.to_string()))?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

fn unix_secs() -> f64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs_f64())
        .unwrap_or(0.0)
}

/// Appends `command: [start, end]` to the run's timestamp sidecar.
fn stamp(dir: &Path, command: &str, start: f64) -> Result<()> {
    let path = dir.join("timestamps.json");
    let mut map: BTreeMap<String, [f64; 2]> = fs::read_to_string(&path)
        .ok()
        .and_then(|s| serde_json::from_str(&s).ok())
        .unwrap_or_default();
    map.insert(command.to_string(), [start, unix_secs()]);
    write_json(&path, &map)
}

fn prepare_dir(cfg: &ExperimentConfig) -> Result<PathBuf> {
    let dir = cfg.run_dir();
    fs::create_dir_all(&dir)?;
    write_json(&dir.join("config.json"), cfg)?;
    Ok(dir)
}

#[derive(Serialize)]
struct TrainSummary<'a> {
    #[serde(flatten)]
    provenance: Provenance<'a>,
    target: &'a str,
    epochs: usize,
    n_train: usize,
    final_loss: Option<f64>,
    floor_events: usize,
}

pub fn cmd_train(cfg: &ExperimentConfig) -> Result<CommandOutcome> {
    let start = unix_secs();
    let dir = prepare_dir(cfg)?;
    let pmf = cfg.target.build()?;
    let data = sample_target(&pmf, cfg.train.n_train, cfg.seed ^ DATA_SEED_OFFSET);
    let (mean, var) = pmf.moments();
    let scaling = cfg.train.scaling(mean, var)?;
    info!(
        "training on {} samples of {} for {} epochs",
        data.len(),
        pmf.family().name(),
        cfg.train.epochs
    );
    let digest = cfg.digest();
    let (history, path) = match cfg.io.precision {
        Precision::F32 => {
            let out = train::<f32>(&data, 1, scaling, &cfg.train)?;
            let path = dir.join(CHECKPOINT_FILE);
            save_model(&out.model, digest, &path)?;
            (out.history, path)
        }
        Precision::F64 => {
            let out = train::<f64>(&data, 1, scaling, &cfg.train)?;
            let path = dir.join(CHECKPOINT_FILE);
            save_model(&out.model, digest, &path)?;
            (out.history, path)
        }
    };
    let mut csv = header(cfg);
    csv.push_str("epoch,mean_loss,floor_events\n");
    for r in &history {
        let _ = writeln!(csv, "{},{:.17e},{}", r.epoch, r.mean_loss, r.floor_events);
    }
    fs::write(dir.join("loss.csv"), csv)?;
    write_json(
        &dir.join("train_summary.json"),
        &TrainSummary {
            provenance: provenance(cfg),
            target: pmf.family().name(),
            epochs: cfg.train.epochs,
            n_train: data.len(),
            final_loss: history.last().map(|r| r.mean_loss),
            floor_events: history.iter().map(|r| r.floor_events).sum(),
        },
    )?;
    info!("wrote {}", path.display());
    stamp(&dir, "train", start)?;
    Ok(CommandOutcome {
        run_dir: dir,
        exit_code: 0,
    })
}

#[derive(Serialize)]
struct SampleSummary<'a> {
    #[serde(flatten)]
    provenance: Provenance<'a>,
    target: &'a str,
    source: &'a str,
    scheme: &'a str,
    n_steps: usize,
    n_chains: usize,
    mean: Option<f64>,
    variance: Option<f64>,
    w1: Option<f64>,
    clamp_events: u64,
    histogram: Vec<(u32, usize)>,
}

pub fn cmd_sample(
    cfg: &ExperimentConfig,
    checkpoint: Option<&Path>,
    oracle: bool,
) -> Result<CommandOutcome> {
    let start = unix_secs();
    let pmf = cfg.target.build()?;
    let source = open_source(cfg, &pmf, checkpoint, oracle)?;
    let dir = prepare_dir(cfg)?;
    let out = run_sampler(source.denoiser(), &cfg.sampler)?;
    let finals = &out.finals;

    let mut csv = header(cfg);
    let _ = writeln!(
        csv,
        "# source {}\n# scheme {}\n# n_steps {}\nchain,x",
        source.label(),
        cfg.sampler.scheme.name(),
        cfg.sampler.n_steps
    );
    for (i, x) in finals.iter().enumerate() {
        let _ = writeln!(csv, "{i},{x}");
    }
    fs::write(dir.join(format!("samples_{}.csv", source.label())), csv)?;

    let mut hist: BTreeMap<u32, usize> = BTreeMap::new();
    for &x in finals {
        *hist.entry(x).or_default() += 1;
    }
    let moments = (!finals.is_empty()).then(|| {
        let v: Vec<f64> = finals.iter().map(|&x| x as f64).collect();
        let n = v.len() as f64;
        let m = v.iter().sum::<f64>() / n;
        (m, v.iter().map(|a| (a - m) * (a - m)).sum::<f64>() / n)
    });
    let w1 = if finals.is_empty() {
        None
    } else {
        Some(w1_empirical(finals, &pmf)?)
    };
    write_json(
        &dir.join(format!("sample_summary_{}.json", source.label())),
        &SampleSummary {
            provenance: provenance(cfg),
            target: pmf.family().name(),
            source: source.label(),
            scheme: cfg.sampler.scheme.name(),
            n_steps: cfg.sampler.n_steps,
            n_chains: finals.len(),
            mean: moments.map(|m| m.0),
            variance: moments.map(|m| m.1),
            w1,
            clamp_events: out.clamp_events,
            histogram: hist.into_iter().collect(),
        },
    )?;
    stamp(&dir, "sample", start)?;
    Ok(CommandOutcome {
        run_dir: dir,
        exit_code: 0,
    })
}

/// Reads one non-negative integer per line. `#` lines, blank lines and a
/// leading non-numeric header are skipped; only the first column is read.
pub fn read_eval_set(path: &Path) -> Result<Vec<u32>> {
    let file = fs::File::open(path)?;
    let mut xs = Vec::new();
    let mut seen_row = false;
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        let field = line.split(',').next().unwrap_or("").trim();
        if field.is_empty() || field.starts_with('#') {
            continue;
        }
        match field.parse::<u32>() {
            Ok(v) => xs.push(v),
            Err(_) if !seen_row && field.chars().all(|c| c.is_alphabetic() || c == '_') => {}
            Err(e) => {
                return Err(Error::Parse {
                    line: i + 1,
                    message: format!("`{field}` is not a non-negative integer: {e}"),
                })
            }
        }
        seen_row = true;
    }
    if xs.is_empty() {
        return Err(Error::Parse {
            line: 0,
            message: format!("evaluation set {} is empty", path.display()),
        });
    }
    Ok(xs)
}

#[derive(Serialize)]
struct NllSummary<'a> {
    #[serde(flatten)]
    provenance: Provenance<'a>,
    target: &'a str,
    source: &'a str,
    mode: NllMode,
    n_eval: usize,
    mean: f64,
    std_error: f64,
    /// `mean ± std_error` with three decimals.
    display: String,
}

fn estimate_all<R: RateSource + ?Sized>(
    rates: &R,
    xs: &[u32],
    cfg: &ExperimentConfig,
) -> Result<Vec<NllEstimate>> {
    let l = &cfg.likelihood;
    match l.mode {
        NllMode::Quadrature => nll_quadrature_many(rates, xs, l.n_nodes),
        NllMode::MonteCarlo => xs
            .iter()
            .enumerate()
            .map(|(i, &x)| {
                let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
                rng.set_stream(i as u64);
                nll_monte_carlo(rates, &[x], l.n_time, l.n_inner, &mut rng)
            })
            .collect(),
    }
}

pub fn cmd_nll(
    cfg: &ExperimentConfig,
    checkpoint: Option<&Path>,
    oracle: bool,
    eval_set: Option<&Path>,
) -> Result<CommandOutcome> {
    let start = unix_secs();
    let pmf = cfg.target.build()?;
    let xs = match eval_set {
        Some(p) => read_eval_set(p)?,
        None => sample_target(&pmf, cfg.likelihood.n_eval, cfg.seed ^ EVAL_SEED_OFFSET),
    };
    if xs.is_empty() {
        return Err(Error::Config {
            path: "likelihood.n_eval".into(),
            message: "evaluation set is empty".into(),
        });
    }
    let source = open_source(cfg, &pmf, checkpoint, oracle)?;
    let dir = prepare_dir(cfg)?;
    let est = match &source {
        ModelSource::Oracle(_) => {
            let tables = relative_density(&pmf, cfg.final_time())?;
            let cap = pmf.support_cap() as u32;
            if let Some(&x) = xs.iter().find(|&&x| x > cap) {
                return Err(Error::Range(format!(
                    "evaluation point {x} lies beyond support_cap {cap}"
                )));
            }
            estimate_all(&tables, &xs, cfg)?
        }
        ModelSource::Checkpoint(m) => estimate_all(&DenoiserRate(m), &xs, cfg)?,
    };
    let values: Vec<f64> = est.iter().map(|e| e.value).collect();
    let (mean, se) = summarize(&values);

    let mut csv = header(cfg);
    let _ = writeln!(csv, "# source {}\nx,nll,std_error", source.label());
    for (x, e) in xs.iter().zip(&est) {
        let _ = writeln!(csv, "{x},{:.17e},{:.17e}", e.value, e.std_error);
    }
    fs::write(dir.join(format!("nll_{}.csv", source.label())), csv)?;
    write_json(
        &dir.join(format!("nll_summary_{}.json", source.label())),
        &NllSummary {
            provenance: provenance(cfg),
            target: pmf.family().name(),
            source: source.label(),
            mode: cfg.likelihood.mode,
            n_eval: xs.len(),
            mean,
            std_error: se,
            display: format!("{mean:.3} ± {se:.3}"),
        },
    )?;
    stamp(&dir, "nll", start)?;
    Ok(CommandOutcome {
        run_dir: dir,
        exit_code: 0,
    })
}

#[derive(Serialize)]
struct ReportFile<'a> {
    #[serde(flatten)]
    provenance: Provenance<'a>,
    source: &'a str,
    all_pass: bool,
    #[serde(flatten)]
    report: &'a DiagnosticsReport,
}

pub fn cmd_validate(
    cfg: &ExperimentConfig,
    checkpoint: Option<&Path>,
    oracle: bool,
) -> Result<CommandOutcome> {
    let start = unix_secs();
    let pmf = cfg.target.build()?;
    let source = open_source(cfg, &pmf, checkpoint, oracle)?;
    let dir = prepare_dir(cfg)?;
    let tables: FlowTables = relative_density(&pmf, cfg.final_time())?;
    let report = run_suite(&tables, source.denoiser(), &cfg.diagnostics)?;
    let pass = report.all_pass();
    write_json(
        &dir.join(format!("report_{}.json", source.label())),
        &ReportFile {
            provenance: provenance(cfg),
            source: source.label(),
            all_pass: pass,
            report: &report,
        },
    )?;
    for c in &report.checks {
        info!(
            "{:<22} {} residual {:.3e} threshold {:.3e}",
            c.name,
            if c.pass { "pass" } else { "FAIL" },
            c.residual,
            c.threshold
        );
    }
    stamp(&dir, "validate", start)?;
    Ok(CommandOutcome {
        run_dir: dir,
        exit_code: if pass { 0 } else { 3 },
    })
}

#[derive(Debug, Deserialize)]
struct StoredSummary {
    target: String,
    source: String,
    seed: u64,
    #[serde(default)]
    mean: Option<f64>,
    #[serde(default)]
    w1: Option<f64>,
}

#[derive(Default)]
struct Row {
    nll: Vec<f64>,
    w1: Vec<f64>,
    seeds: Vec<u64>,
}

fn mean_se(v: &[f64]) -> String {
    match v.len() {
        0 => "n/a".into(),
        1 => format!("{:.3}", v[0]),
        _ => {
            let (m, se) = summarize(v);
            format!("{m:.3} ± {se:.3}")
        }
    }
}

/// Aggregates NLL and W1 summaries from every run directory under `root`.
///
/// Writes `report.md` and `report.csv` into `root`. Runs that lack one of
/// the summaries are listed rather than treated as errors.
pub fn cmd_report(root: &Path) -> Result<CommandOutcome> {
    let mut rows: BTreeMap<(String, String), Row> = BTreeMap::new();
    let mut missing = Vec::new();
    let mut runs: Vec<PathBuf> = match fs::read_dir(root) {
        Ok(rd) => rd
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.is_dir())
            .collect(),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Vec::new(),
        Err(e) => return Err(e.into()),
    };
    runs.sort();
    for run in &runs {
        let mut found = false;
        for source in ["checkpoint", "oracle"] {
            let read = |name: &str| -> Option<StoredSummary> {
                let text = fs::read_to_string(run.join(format!("{name}_{source}.json"))).ok()?;
                serde_json::from_str(&text).ok()
            };
            let nll = read("nll_summary");
            let samples = read("sample_summary");
            for s in nll.iter().chain(samples.iter()) {
                found = true;
                let row = rows.entry((s.target.clone(), s.source.clone())).or_default();
                if !row.seeds.contains(&s.seed) {
                    row.seeds.push(s.seed);
                }
            }
            if let Some(s) = nll {
                if let Some(m) = s.mean {
                    rows.entry((s.target, s.source)).or_default().nll.push(m);
                }
            }
            if let Some(s) = samples {
                if let Some(w) = s.w1 {
                    rows.entry((s.target, s.source)).or_default().w1.push(w);
                }
            }
        }
        if !found {
            missing.push(run.display().to_string());
        }
    }

    let mut md = format!("# binflow report\n\nTool version {TOOL_VERSION}.\n\n");
    let mut csv = String::from("target,source,n_runs,nll_mean,nll_se,w1_mean,w1_se\n");
    if rows.is_empty() {
        md.push_str("## No runs found\n\nNo NLL or sample summaries under this directory.\n");
    } else {
        md.push_str("## NLL and W1 (mean ± standard error over runs)\n\n");
        md.push_str("| target | source | runs | NLL | W1 |\n|---|---|---|---|---|\n");
        for ((target, source), r) in &rows {
            let _ = writeln!(
                md,
                "| {target} | {source} | {} | {} | {} |",
                r.seeds.len(),
                mean_se(&r.nll),
                mean_se(&r.w1)
            );
            let stats = |v: &[f64]| match v.len() {
                0 => ",".to_string(),
                _ => {
                    let (m, se) = summarize(v);
                    format!("{m:.17e},{se:.17e}")
                }
            };
            let _ = writeln!(
                csv,
                "{target},{source},{},{},{}",
                r.seeds.len(),
                stats(&r.nll),
                stats(&r.w1)
            );
        }
    }
    if !missing.is_empty() {
        md.push_str("\n## Runs without summaries\n\n");
        for m in &missing {
            let _ = writeln!(md, "- {m}");
        }
    }
    fs::create_dir_all(root)?;
    fs::File::create(root.join("report.md"))?.write_all(md.as_bytes())?;
    fs::write(root.join("report.csv"), csv)?;
    Ok(CommandOutcome {
        run_dir: root.to_path_buf(),
        exit_code: 0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn field_path_in_errors() {
        let err = ExperimentConfig::from_json(r#"{"target": {"family": "poison"}}"#).unwrap_err();
        match err {
            Error::Config { path, .. } => assert_eq!(path, "target.family"),
            other => panic!("unexpected {other}"),
        }
        let err = ExperimentConfig::from_json(
            r#"{"target": {"family": "poisson"}, "train": {"epochs": -1}}"#,
        )
        .unwrap_err();
        assert!(matches!(err, Error::Config { ref path, .. } if path == "train.epochs"));
    }

    #[test]
    fn notes_do_not_change_the_digest() {
        let a = ExperimentConfig::from_json(r#"{"target": {"family": "poisson"}}"#).unwrap();
        let b = ExperimentConfig::from_json(
            r#"{"_notes": "baseline", "target": {"family": "poisson"}}"#,
        )
        .unwrap();
        assert_eq!(a.digest(), b.digest());
        let mut c = a.clone();
        c.set_seed(3);
        assert_ne!(a.digest(), c.digest());
        assert!(c.run_dir().ends_with(format!("{}-s3", &c.digest_hex()[..12])));
    }

    #[test]
    fn exit_codes() {
        let cfg = Error::Config {
            path: "x".into(),
            message: "y".into(),
        };
        assert_eq!(exit_code_for(&cfg), 1);
        assert_eq!(exit_code_for(&Error::Numeric("nan".into())), 2);
    }
}
