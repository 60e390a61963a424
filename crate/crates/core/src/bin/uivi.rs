//! Command-line front end: `run`, `sweep-hmc` and `eval`.
//!
//! Settings are layered as defaults, then flags, then the `--config` file, so a
//! value present in the file wins over the same flag. Relative output
//! directories are placed under `$UIVI_OUTPUT_ROOT` when it is set.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use uivi::runner::{
    evaluate_checkpoint, run_experiment, sweep_hmc_iterations, Method, RunConfig, TargetSpec,
};
use uivi::sivi::LSchedule;
use uivi::targets::Preprocess;
use uivi::Error;

const OUTPUT_ROOT_ENV: &str = "UIVI_OUTPUT_ROOT";

#[derive(Parser)]
#[command(name = "uivi", version, about = "Semi-implicit variational inference experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one variational approximation.
    Run(RunFlags),
    /// Train UIVI once per (n_burn, n_keep) setting and compare ELBO traces.
    SweepHmc {
        /// Comma-separated `burn:keep` pairs.
        #[arg(long, default_value = "1:1,5:5,50:50", value_parser = parse_settings)]
        settings: Settings,
        #[command(flatten)]
        flags: RunFlags,
    },
    /// Evaluate a saved checkpoint under a configuration.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[command(flatten)]
        flags: RunFlags,
    },
}

#[derive(Clone, Debug)]
struct Settings(Vec<(usize, usize)>);

fn parse_settings(s: &str) -> Result<Settings, String> {
    let mut out = Vec::new();
    for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let (b, k) = part
            .split_once(':')
            .ok_or_else(|| format!("expected burn:keep, got {part:?}"))?;
        let b = b.trim().parse().map_err(|e| format!("{part:?}: {e}"))?;
        let k = k.trim().parse().map_err(|e| format!("{part:?}: {e}"))?;
        out.push((b, k));
    }
    Ok(Settings(out))
}

#[derive(Clone, Debug)]
struct Widths(Vec<usize>);

fn parse_hidden(s: &str) -> Result<Widths, String> {
    if s.trim().is_empty() {
        return Ok(Widths(Vec::new()));
    }
    s.split(',')
        .map(|p| p.trim().parse().map_err(|e| format!("{p:?}: {e}")))
        .collect::<Result<_, _>>()
        .map(Widths)
}

#[derive(Args, Clone, Debug, Default)]
struct RunFlags {
    /// TOML file; its values override the flags below.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_parser = ["uivi", "sivi", "explicit"])]
    method: Option<String>,

    /// Toy target: banana, multimodal or x-shaped.
    #[arg(long, group = "target")]
    toy: Option<String>,
    /// Synthetic Gaussian-blob classification data.
    #[arg(long, group = "target")]
    blobs: bool,
    #[arg(long, requires = "blobs")]
    blobs_train: Option<usize>,
    #[arg(long, requires = "blobs")]
    blobs_test: Option<usize>,
    #[arg(long, requires = "blobs")]
    blobs_dim: Option<usize>,
    #[arg(long, requires = "blobs")]
    blobs_classes: Option<usize>,
    #[arg(long, requires = "blobs")]
    blobs_center_scale: Option<f64>,
    /// Training CSV (`label,features...` with a header row).
    #[arg(long, group = "target")]
    train_csv: Option<PathBuf>,
    #[arg(long, requires = "train_csv")]
    test_csv: Option<PathBuf>,
    /// Divide features by 255.
    #[arg(long, requires = "train_csv")]
    scale_255: bool,
    /// Standardize features with training statistics.
    #[arg(long, requires = "train_csv")]
    standardize: bool,
    #[arg(long, requires = "train_csv")]
    num_classes: Option<usize>,

    #[arg(long)]
    eps_dim: Option<usize>,
    /// Hidden layer widths, e.g. `50,50`.
    #[arg(long, value_parser = parse_hidden)]
    hidden: Option<Widths>,
    #[arg(long)]
    init_scale: Option<f64>,

    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    samples_per_step: Option<usize>,

    #[arg(long)]
    eta_net: Option<f64>,
    #[arg(long)]
    eta_scale: Option<f64>,
    #[arg(long)]
    decay_every: Option<usize>,
    #[arg(long)]
    decay_factor: Option<f64>,

    #[arg(long)]
    hmc_burn: Option<usize>,
    #[arg(long)]
    hmc_keep: Option<usize>,
    #[arg(long)]
    hmc_leapfrog: Option<usize>,
    #[arg(long)]
    hmc_step_size: Option<f64>,
    #[arg(long)]
    hmc_adapt: Option<bool>,
    #[arg(long)]
    hmc_target_accept: Option<f64>,

    #[arg(long)]
    sivi_l_final: Option<usize>,
    #[arg(long, value_parser = ["linear", "constant"])]
    sivi_schedule: Option<String>,

    #[arg(long)]
    elbo_every: Option<usize>,
    #[arg(long)]
    elbo_outer: Option<usize>,
    #[arg(long)]
    elbo_inner: Option<usize>,
    #[arg(long)]
    test_every: Option<usize>,
    #[arg(long)]
    test_samples: Option<usize>,
    #[arg(long)]
    posterior_samples: Option<usize>,

    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    output_dir: Option<PathBuf>,
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

impl RunFlags {
    fn apply(&self, cfg: &mut RunConfig) {
        if let Some(m) = &self.method {
            cfg.method = match m.as_str() {
                "sivi" => Method::Sivi,
                "explicit" => Method::Explicit,
                _ => Method::Uivi,
            };
        }
        if let Some(name) = &self.toy {
            cfg.target = TargetSpec::Toy { name: name.clone() };
        } else if self.blobs {
            let mut spec = TargetSpec::default_blobs();
            if let TargetSpec::Blobs {
                n_train,
                n_test,
                dim,
                classes,
                center_scale,
            } = &mut spec
            {
                set(n_train, self.blobs_train);
                set(n_test, self.blobs_test);
                set(dim, self.blobs_dim);
                set(classes, self.blobs_classes);
                set(center_scale, self.blobs_center_scale);
            }
            cfg.target = spec;
        } else if let Some(train) = &self.train_csv {
            cfg.target = TargetSpec::Csv {
                train: train.clone(),
                test: self.test_csv.clone(),
                preprocess: Preprocess {
                    scale_255: self.scale_255,
                    standardize: self.standardize,
                    num_classes: self.num_classes,
                },
            };
        }
        set(&mut cfg.family.eps_dim, self.eps_dim);
        set(&mut cfg.family.hidden, self.hidden.clone().map(|w| w.0));
        set(&mut cfg.family.init_scale, self.init_scale);
        set(&mut cfg.iterations, self.iterations);
        if self.batch_size.is_some() {
            cfg.batch_size = self.batch_size;
        }
        set(&mut cfg.samples_per_step, self.samples_per_step);
        set(&mut cfg.optimizer.eta_net, self.eta_net);
        set(&mut cfg.optimizer.eta_scale, self.eta_scale);
        set(&mut cfg.optimizer.decay_every, self.decay_every);
        set(&mut cfg.optimizer.decay_factor, self.decay_factor);
        set(&mut cfg.hmc.n_burn, self.hmc_burn);
        set(&mut cfg.hmc.n_keep, self.hmc_keep);
        set(&mut cfg.hmc.leapfrog_steps, self.hmc_leapfrog);
        set(&mut cfg.hmc.step_size, self.hmc_step_size);
        set(&mut cfg.hmc.adapt_during_burn, self.hmc_adapt);
        set(&mut cfg.hmc.target_accept, self.hmc_target_accept);
        set(&mut cfg.sivi.l_final, self.sivi_l_final);
        if let Some(s) = &self.sivi_schedule {
            cfg.sivi.schedule = if s == "constant" {
                LSchedule::Constant
            } else {
                LSchedule::Linear
            };
        }
        set(&mut cfg.eval.elbo_every, self.elbo_every);
        set(&mut cfg.eval.elbo_outer, self.elbo_outer);
        set(&mut cfg.eval.elbo_inner, self.elbo_inner);
        set(&mut cfg.eval.test_every, self.test_every);
        set(&mut cfg.eval.test_samples, self.test_samples);
        set(&mut cfg.eval.posterior_samples, self.posterior_samples);
        set(&mut cfg.seed, self.seed);
        set(&mut cfg.output_dir, self.output_dir.clone());
    }

    fn resolve(&self) -> Result<RunConfig, Error> {
        let mut cfg = RunConfig::default();
        self.apply(&mut cfg);
        if let Some(path) = &self.config {
            cfg = overlay_file(&cfg, path)?;
        }
        if cfg.output_dir.is_relative() {
            if let Some(root) = std::env::var_os(OUTPUT_ROOT_ENV) {
                cfg.output_dir = PathBuf::from(root).join(&cfg.output_dir);
            }
        }
        Ok(cfg)
    }
}

fn merge(base: &mut toml::Table, over: toml::Table) {
    for (key, value) in over {
        match (base.get_mut(&key), value) {
            // A target table names its own kind; mixing fields from two kinds makes no sense.
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) if key != "target" => merge(b, o),
            (_, v) => {
                base.insert(key, v);
            }
        }
    }
}

/// Applies the file at `path` on top of `cfg`. Dataset paths in the file are
/// relative to the file's directory.
fn overlay_file(cfg: &RunConfig, path: &Path) -> Result<RunConfig, Error> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    let file: toml::Table = text
        .parse()
        .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    let mut base: toml::Table = toml::from_str(&cfg.to_toml()).expect("configs round-trip");
    let file_has_target = file.contains_key("target");
    merge(&mut base, file);
    let mut out: RunConfig = base
        .try_into()
        .map_err(|e: toml::de::Error| Error::Config(format!("{}: {e}", path.display())))?;
    if file_has_target {
        if let TargetSpec::Csv { train, test, .. } = &mut out.target {
            let dir = path.parent().unwrap_or(Path::new("."));
            if train.is_relative() {
                *train = dir.join(&*train);
            }
            if let Some(t) = test.as_mut().filter(|t| t.is_relative()) {
                *t = dir.join(&*t);
            }
        }
    }
    Ok(out)
}

fn execute(cli: Cli) -> Result<serde_json::Value, Error> {
    match cli.command {
        Command::Run(flags) => {
            let cfg = flags.resolve()?;
            let out = run_experiment(&cfg)?;
            Ok(serde_json::json!({
                "output_dir": out.dir,
                "iterations": cfg.iterations,
                "final_elbo": out.final_elbo,
                "final_test_loglik": out.final_test_loglik,
                "train_seconds": out.train_seconds,
            }))
        }
        Command::SweepHmc { settings, flags } => {
            let cfg = flags.resolve()?;
            let report = sweep_hmc_iterations(&cfg, &settings.0)?;
            Ok(serde_json::to_value(&report).expect("report serializes"))
        }
        Command::Eval { checkpoint, flags } => {
            let cfg = flags.resolve()?;
            let report = evaluate_checkpoint(&cfg, &checkpoint)?;
            Ok(serde_json::to_value(&report).expect("report serializes"))
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            let diag = serde_json::json!({ "error": { "kind": e.kind(), "message": e.to_string() } });
            eprintln!("{diag}");
            ExitCode::FAILURE
        }
    }
}
