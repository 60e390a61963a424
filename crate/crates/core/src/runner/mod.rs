//! Experiment orchestration: training loops for the three methods, metric
//! streams, checkpoints, posterior-sample dumps and the HMC-length sweep.
//!
//! A run directory contains:
//!
//! - `config.toml`: the resolved configuration
//! - `metadata.json`: dimensions, preprocessing and the choices a config does not pin down
//! - `metrics.jsonl`: one JSON object per evaluation point (deterministic given the seed)
//! - `timing.jsonl`: wall-clock seconds at the same points (not deterministic)
//! - `checkpoint.txt`: final variational parameters
//! - `samples.csv`: draws from the fitted distribution

mod config;

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use rand::seq::index::sample as sample_indices;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use config::{EvalConfig, FamilyConfig, Method, RunConfig, TargetSpec};

use crate::checkpoint;
use crate::error::{Error, Result};
use crate::estimator::elbo_gradient;
use crate::evaluation::elbo_estimate;
use crate::family::{QGrad, SemiImplicitQ};
use crate::optimizer::RmsProp;
use crate::sivi::sivi_surrogate_gradient;
use crate::stats::Estimate;
use crate::targets::{
    gaussian_blobs, load_dataset, mlr_predictive_loglik, LabeledDataset, MlrTarget, Standardizer,
    TargetModel, ToyTarget,
};

const STREAM_DATA: u64 = 1;
const STREAM_INIT: u64 = 2;
const STREAM_TRAIN: u64 = 3;
const STREAM_BATCH: u64 = 4;
const STREAM_EVAL: u64 = 5;
const STREAM_SAMPLES: u64 = 6;

/// Generator used for every random stream in a run.
pub type SeededRng = ChaCha8Rng;

/// Independent ChaCha stream `k` under the run seed.
pub fn rng_stream(seed: u64, k: u64) -> SeededRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(k);
    rng
}

/// One line of `metrics.jsonl`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub iteration: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub elbo: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub elbo_se: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test_loglik: Option<f64>,
    /// Mean HMC acceptance since the previous record.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hmc_acceptance: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub step_size: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sivi_l: Option<usize>,
    /// Mean training objective since the previous record (SIVI surrogate only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub surrogate: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TimingRecord {
    iteration: usize,
    train_seconds: f64,
    wall_seconds: f64,
}

/// The data behind a run, built deterministically from the config and seed.
#[derive(Debug, Clone)]
pub enum Problem {
    Toy(ToyTarget),
    Regression {
        train: Arc<LabeledDataset>,
        test: Arc<LabeledDataset>,
        standardizer: Option<Standardizer>,
    },
}

impl Problem {
    pub fn build(cfg: &RunConfig) -> Result<Self> {
        match &cfg.target {
            TargetSpec::Toy { name } => Ok(Problem::Toy(ToyTarget::from_name(name)?)),
            TargetSpec::Blobs {
                n_train,
                n_test,
                dim,
                classes,
                center_scale,
            } => {
                let mut rng = rng_stream(cfg.seed, STREAM_DATA);
                let (train, test) =
                    gaussian_blobs(*n_train, *n_test, *dim, *classes, *center_scale, &mut rng)?;
                Ok(Problem::Regression {
                    train: Arc::new(train),
                    test: Arc::new(test),
                    standardizer: None,
                })
            }
            TargetSpec::Csv {
                train,
                test,
                preprocess,
            } => {
                let mut train_ds = load_dataset(train, preprocess)?;
                let mut test_ds = match test {
                    Some(p) => load_dataset(p, preprocess)?,
                    None => train_ds.clone(),
                };
                if test_ds.dim() != train_ds.dim() || test_ds.num_classes() > train_ds.num_classes() {
                    return Err(Error::Config(
                        "test set must match the training set's features and classes".into(),
                    ));
                }
                if test_ds.num_classes() < train_ds.num_classes() {
                    test_ds = LabeledDataset::new(
                        test_ds.features().clone(),
                        test_ds.labels().to_vec(),
                        train_ds.num_classes(),
                    )?;
                }
                let standardizer = if preprocess.standardize {
                    let s = Standardizer::fit(&train_ds)?;
                    s.apply(&mut train_ds)?;
                    s.apply(&mut test_ds)?;
                    Some(s)
                } else {
                    None
                };
                Ok(Problem::Regression {
                    train: Arc::new(train_ds),
                    test: Arc::new(test_ds),
                    standardizer,
                })
            }
        }
    }

    pub fn z_dim(&self) -> usize {
        match self {
            Problem::Toy(t) => t.dim(),
            Problem::Regression { train, .. } => train.mlr_dim(),
        }
    }

    /// Full-data target used for ELBO evaluation.
    pub fn full_target(&self) -> RunTarget {
        match self {
            Problem::Toy(t) => RunTarget::Toy(*t),
            Problem::Regression { train, .. } => RunTarget::Mlr(MlrTarget::full(train.clone())),
        }
    }

    pub fn test_set(&self) -> Option<&LabeledDataset> {
        match self {
            Problem::Toy(_) => None,
            Problem::Regression { test, .. } => Some(test),
        }
    }
}

/// Target dispatch for the training loop.
#[derive(Debug, Clone)]
pub enum RunTarget {
    Toy(ToyTarget),
    Mlr(MlrTarget),
}

impl TargetModel for RunTarget {
    fn dim(&self) -> usize {
        match self {
            RunTarget::Toy(t) => t.dim(),
            RunTarget::Mlr(t) => t.dim(),
        }
    }
    fn log_joint(&self, z: &[f64]) -> Result<f64> {
        match self {
            RunTarget::Toy(t) => t.log_joint(z),
            RunTarget::Mlr(t) => t.log_joint(z),
        }
    }
    fn grad_log_joint(&self, z: &[f64]) -> Result<Vec<f64>> {
        match self {
            RunTarget::Toy(t) => t.grad_log_joint(z),
            RunTarget::Mlr(t) => t.grad_log_joint(z),
        }
    }
    fn log_joint_and_grad(&self, z: &[f64]) -> Result<(f64, Vec<f64>)> {
        match self {
            RunTarget::Toy(t) => t.log_joint_and_grad(z),
            RunTarget::Mlr(t) => t.log_joint_and_grad(z),
        }
    }
    fn n_total(&self) -> usize {
        match self {
            RunTarget::Toy(_) => 0,
            RunTarget::Mlr(t) => t.n_total(),
        }
    }
}

/// Initial variational family. SIVI and UIVI share the same draw for a given seed.
pub fn initial_family(cfg: &RunConfig, z_dim: usize) -> Result<SemiImplicitQ> {
    let mut rng = rng_stream(cfg.seed, STREAM_INIT);
    match cfg.method {
        Method::Explicit => {
            SemiImplicitQ::explicit(vec![0.0; z_dim], vec![cfg.family.init_scale; z_dim])
        }
        Method::Uivi | Method::Sivi => SemiImplicitQ::with_mlp(
            cfg.family.eps_dim,
            z_dim,
            &cfg.family.hidden,
            cfg.family.init_scale,
            &mut rng,
        ),
    }
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub dir: PathBuf,
    pub q: SemiImplicitQ,
    pub final_elbo: Option<Estimate>,
    pub final_test_loglik: Option<f64>,
    pub records: Vec<MetricsRecord>,
    pub train_seconds: f64,
}

fn json_line<T: Serialize>(w: &mut impl Write, value: &T, path: &Path) -> Result<()> {
    let line = serde_json::to_string(value).expect("records always serialize");
    writeln!(w, "{line}")
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(path, e))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::io(path, e))
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    std::fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn metadata(cfg: &RunConfig, problem: &Problem, q: &SemiImplicitQ) -> serde_json::Value {
    let (data, preprocess) = match (problem, &cfg.target) {
        (Problem::Toy(t), _) => (serde_json::json!({ "toy": t.name() }), serde_json::Value::Null),
        (Problem::Regression { train, test, standardizer }, spec) => {
            let pre = match spec {
                TargetSpec::Csv { preprocess, .. } => serde_json::to_value(preprocess).ok(),
                _ => None,
            };
            (
                serde_json::json!({
                    "n_train": train.len(),
                    "n_test": test.len(),
                    "features": train.dim(),
                    "classes": train.num_classes(),
                    "standardized": standardizer.is_some(),
                }),
                pre.unwrap_or(serde_json::Value::Null),
            )
        }
    };
    serde_json::json!({
        "uivi_version": env!("CARGO_PKG_VERSION"),
        "method": cfg.method.name(),
        "seed": cfg.seed,
        "data": data,
        "preprocess": preprocess,
        "z_dim": q.z_dim(),
        "eps_dim": q.eps_dim(),
        "num_params": q.num_params(),
        "init": "xavier-uniform weights, zero biases, relu hidden layers, identity output; shared by sivi and uivi for a seed",
        "scale_parameterization": "softplus(scale_raw), global across eps",
        "learning_rate_decay": "both network and scale rates decay",
        "hmc_step_adaptation": if cfg.hmc.adapt_during_burn {
            "step fixed within a chain; burn-in acceptance sets the next iteration's step"
        } else {
            "fixed step"
        },
        "sivi_schedule": cfg.sivi,
        "elbo_estimator": "shared bank of elbo_inner mixing draws per evaluation",
        "rng": "ChaCha8 with separate streams for data, init, training, batches, evaluation and samples",
    })
}

struct Window {
    accept: f64,
    step: f64,
    surrogate: f64,
    n: usize,
}

impl Window {
    fn new() -> Self {
        Self {
            accept: 0.0,
            step: 0.0,
            surrogate: 0.0,
            n: 0,
        }
    }
}

/// Trains according to `cfg` and writes the run directory.
pub fn run_experiment(cfg: &RunConfig) -> Result<RunOutcome> {
    cfg.validate()?;
    let problem = Problem::build(cfg)?;
    let dir = cfg.output_dir.clone();
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let mut q = initial_family(cfg, problem.z_dim())?;
    write_file(&dir.join("config.toml"), &cfg.to_toml())?;
    let meta = serde_json::to_string_pretty(&metadata(cfg, &problem, &q)).expect("metadata serializes");
    write_file(&dir.join("metadata.json"), &meta)?;
    let ckpt_path = dir.join("checkpoint.txt");
    if cfg.iterations == 0 {
        checkpoint::save(&q, &ckpt_path)?;
        return Ok(RunOutcome {
            dir,
            q,
            final_elbo: None,
            final_test_loglik: None,
            records: Vec::new(),
            train_seconds: 0.0,
        });
    }

    let metrics_path = dir.join("metrics.jsonl");
    let timing_path = dir.join("timing.jsonl");
    let mut metrics = create(&metrics_path)?;
    let mut timing = create(&timing_path)?;

    let eval_target = problem.full_target();
    let mut train_target = eval_target.clone();
    let mut opt = RmsProp::for_family(cfg.optimizer.clone(), &q)?;
    let mut hmc = cfg.hmc;
    let mut rng = rng_stream(cfg.seed, STREAM_TRAIN);
    let mut batch_rng = rng_stream(cfg.seed, STREAM_BATCH);
    let mut eval_rng = rng_stream(cfg.seed, STREAM_EVAL);
    let started = Instant::now();
    let mut train_seconds = 0.0;
    let mut window = Window::new();
    let mut records = Vec::new();
    let mut final_elbo = None;
    let mut final_test = None;

    let mut record_at = |t: usize,
                         q: &SemiImplicitQ,
                         window: &mut Window,
                         eval_rng: &mut ChaCha8Rng,
                         train_seconds: f64,
                         records: &mut Vec<MetricsRecord>|
     -> Result<()> {
        let last = t == cfg.iterations;
        let due = |every: usize| last || t == 0 || (every > 0 && t.is_multiple_of(every));
        let mut rec = MetricsRecord {
            iteration: t,
            ..Default::default()
        };
        if due(cfg.eval.elbo_every) {
            let e = elbo_estimate(&eval_target, q, cfg.eval.elbo_outer, cfg.eval.elbo_inner, eval_rng)?;
            rec.elbo = Some(e.value);
            rec.elbo_se = Some(e.std_error);
            if last {
                final_elbo = Some(e);
            }
        }
        if let Some(test) = problem.test_set() {
            if cfg.eval.test_every > 0 && due(cfg.eval.test_every) {
                let v = mlr_predictive_loglik(q, test, cfg.eval.test_samples, eval_rng)?;
                rec.test_loglik = Some(v);
                if last {
                    final_test = Some(v);
                }
            }
        }
        if window.n > 0 {
            let n = window.n as f64;
            match cfg.method {
                Method::Uivi => {
                    rec.hmc_acceptance = Some(window.accept / n);
                    rec.step_size = Some(window.step / n);
                }
                Method::Sivi => {
                    rec.surrogate = Some(window.surrogate / n);
                    rec.sivi_l = Some(cfg.sivi.l_at(t, cfg.iterations));
                }
                Method::Explicit => {}
            }
        }
        if rec.elbo.is_none() && rec.test_loglik.is_none() && t != 0 {
            return Ok(());
        }
        *window = Window::new();
        json_line(&mut metrics, &rec, &metrics_path)?;
        json_line(
            &mut timing,
            &TimingRecord {
                iteration: t,
                train_seconds,
                wall_seconds: started.elapsed().as_secs_f64(),
            },
            &timing_path,
        )?;
        records.push(rec);
        Ok(())
    };

    record_at(0, &q, &mut window, &mut eval_rng, 0.0, &mut records)?;
    let s = cfg.samples_per_step;
    for t in 0..cfg.iterations {
        let tick = Instant::now();
        if let (RunTarget::Mlr(target), Some(b)) = (&mut train_target, cfg.batch_size) {
            let n = target.data().len();
            if b < n {
                let rows = sample_indices(&mut batch_rng, n, b).into_vec();
                target.set_batch(rows)?;
            }
        }
        let step: Result<QGrad> = match cfg.method {
            Method::Uivi | Method::Explicit => {
                elbo_gradient(&train_target, &q, s, &hmc, &mut rng).map(|est| {
                    if cfg.method == Method::Uivi && hmc.adapt_during_burn && hmc.n_burn > 0 {
                        hmc.step_size = est.diagnostics.step_size;
                    }
                    window.accept += est.diagnostics.acceptance;
                    window.step += est.diagnostics.step_size;
                    window.n += 1;
                    est.grad
                })
            }
            Method::Sivi => {
                let l = cfg.sivi.l_at(t, cfg.iterations);
                let mut grad = QGrad::zeros(&q);
                let mut value = 0.0;
                let mut res = Ok(());
                for _ in 0..s {
                    match sivi_surrogate_gradient(&train_target, &q, l, &mut rng) {
                        Ok((v, g)) => {
                            value += v / s as f64;
                            grad.add_scaled(&g, 1.0 / s as f64);
                        }
                        Err(e) => {
                            res = Err(e);
                            break;
                        }
                    }
                }
                res.map(|_| {
                    window.surrogate += value;
                    window.n += 1;
                    grad
                })
            }
        };
        let applied = step.and_then(|g| opt.step_family(&mut q, &g));
        if let Err(e) = applied {
            let rec = MetricsRecord {
                iteration: t,
                error: Some(e.to_string()),
                ..Default::default()
            };
            json_line(&mut metrics, &rec, &metrics_path)?;
            return Err(e);
        }
        train_seconds += tick.elapsed().as_secs_f64();
        record_at(t + 1, &q, &mut window, &mut eval_rng, train_seconds, &mut records)?;
    }

    checkpoint::save(&q, &ckpt_path)?;
    write_samples(&q, cfg, &dir.join("samples.csv"))?;
    Ok(RunOutcome {
        dir,
        q,
        final_elbo,
        final_test_loglik: final_test,
        records,
        train_seconds,
    })
}

fn write_samples(q: &SemiImplicitQ, cfg: &RunConfig, path: &Path) -> Result<()> {
    let mut rng = rng_stream(cfg.seed, STREAM_SAMPLES);
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Config(e.to_string()))?;
    let header: Vec<String> = (1..=q.z_dim()).map(|i| format!("z{i}")).collect();
    w.write_record(&header).map_err(|e| Error::Config(e.to_string()))?;
    for _ in 0..cfg.eval.posterior_samples {
        let z = q.sample(&mut rng)?.z;
        w.write_record(z.iter().map(|v| v.to_string()))
            .map_err(|e| Error::Config(e.to_string()))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads a `metrics.jsonl` file; a truncated final line is ignored.
pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRecord>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let lines: Vec<&str> = text.lines().collect();
    let mut out = Vec::with_capacity(lines.len());
    for (i, line) in lines.iter().enumerate() {
        match serde_json::from_str(line) {
            Ok(r) => out.push(r),
            Err(_) if i + 1 == lines.len() => break,
            Err(e) => {
                return Err(Error::Parse {
                    line: i + 1,
                    message: e.to_string(),
                })
            }
        }
    }
    Ok(out)
}

/// Outcome of one sweep setting.
#[derive(Debug, Clone, Serialize)]
pub struct SweepEntry {
    pub n_burn: usize,
    pub n_keep: usize,
    pub dir: PathBuf,
    pub final_elbo: Option<Estimate>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepReport {
    pub entries: Vec<SweepEntry>,
    /// Iterations at which every setting has an ELBO estimate.
    pub iterations: Vec<usize>,
    /// `max - min` of the final ELBO estimates.
    pub final_spread: f64,
    /// Largest final-ELBO standard error across settings.
    pub max_std_error: f64,
}

/// Trains one UIVI run per `(n_burn, n_keep)` with the same seed and writes
/// `sweep.csv` (aligned ELBO traces) and `sweep.json` into `cfg.output_dir`.
pub fn sweep_hmc_iterations(cfg: &RunConfig, settings: &[(usize, usize)]) -> Result<SweepReport> {
    if settings.is_empty() {
        return Err(Error::Config("sweep needs at least one (n_burn, n_keep) setting".into()));
    }
    cfg.validate()?;
    let mut entries = Vec::new();
    let mut traces: Vec<Vec<(usize, f64)>> = Vec::new();
    for &(n_burn, n_keep) in settings {
        let mut c = cfg.clone();
        c.method = Method::Uivi;
        c.hmc.n_burn = n_burn;
        c.hmc.n_keep = n_keep;
        c.output_dir = cfg.output_dir.join(format!("burn{n_burn}_keep{n_keep}"));
        let out = run_experiment(&c)?;
        traces.push(
            out.records
                .iter()
                .filter_map(|r| r.elbo.map(|e| (r.iteration, e)))
                .collect(),
        );
        entries.push(SweepEntry {
            n_burn,
            n_keep,
            dir: out.dir,
            final_elbo: out.final_elbo,
        });
    }
    let grid: Vec<usize> = traces[0].iter().map(|p| p.0).collect();
    if traces.iter().any(|t| t.iter().map(|p| p.0).ne(grid.iter().copied())) {
        return Err(Error::Config("sweep traces are not aligned".into()));
    }
    let finals: Vec<f64> = entries.iter().filter_map(|e| e.final_elbo.map(|x| x.value)).collect();
    let spread = finals.iter().copied().fold(f64::NEG_INFINITY, f64::max)
        - finals.iter().copied().fold(f64::INFINITY, f64::min);
    let max_se = entries
        .iter()
        .filter_map(|e| e.final_elbo.map(|x| x.std_error))
        .fold(0.0, f64::max);
    let report = SweepReport {
        entries,
        iterations: grid.clone(),
        final_spread: if finals.is_empty() { 0.0 } else { spread },
        max_std_error: max_se,
    };

    std::fs::create_dir_all(&cfg.output_dir).map_err(|e| Error::io(&cfg.output_dir, e))?;
    let csv_path = cfg.output_dir.join("sweep.csv");
    let mut w = csv::Writer::from_path(&csv_path).map_err(|e| Error::Config(e.to_string()))?;
    let mut header = vec!["iteration".to_string()];
    header.extend(settings.iter().map(|(b, k)| format!("elbo_burn{b}_keep{k}")));
    w.write_record(&header).map_err(|e| Error::Config(e.to_string()))?;
    for (i, it) in grid.iter().enumerate() {
        let mut row = vec![it.to_string()];
        row.extend(traces.iter().map(|t| t[i].1.to_string()));
        w.write_record(&row).map_err(|e| Error::Config(e.to_string()))?;
    }
    w.flush().map_err(|e| Error::io(&csv_path, e))?;
    let json = serde_json::to_string_pretty(&report).expect("report serializes");
    write_file(&cfg.output_dir.join("sweep.json"), &json)?;
    Ok(report)
}

/// Metrics for a saved checkpoint under a run configuration.
#[derive(Debug, Clone, Serialize)]
pub struct EvalReport {
    pub elbo: Estimate,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub test_loglik: Option<f64>,
}

pub fn evaluate_checkpoint(cfg: &RunConfig, checkpoint_path: &Path) -> Result<EvalReport> {
    cfg.validate()?;
    let problem = Problem::build(cfg)?;
    let q = checkpoint::load(checkpoint_path)?;
    if q.z_dim() != problem.z_dim() {
        return Err(Error::Config(format!(
            "checkpoint has z_dim {} but the target needs {}",
            q.z_dim(),
            problem.z_dim()
        )));
    }
    let mut rng = rng_stream(cfg.seed, STREAM_EVAL);
    let elbo = elbo_estimate(
        &problem.full_target(),
        &q,
        cfg.eval.elbo_outer,
        cfg.eval.elbo_inner,
        &mut rng,
    )?;
    let test_loglik = match problem.test_set() {
        Some(test) => Some(mlr_predictive_loglik(&q, test, cfg.eval.test_samples, &mut rng)?),
        None => None,
    };
    Ok(EvalReport { elbo, test_loglik })
}
