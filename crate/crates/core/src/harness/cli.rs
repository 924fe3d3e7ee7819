use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::data::{balanced_test, generate, load_csv, save_csv};
use crate::error::{Error, Result};
use crate::metrics::evaluate;
use crate::train::train;

use super::artifacts::{save_embeddings, save_history, save_predictions, save_results, ModelFile, ResultRecord};
use super::config::ExperimentConfig;
use super::experiment::{multibias_trials, proxydim_trials, run_all, sweep_trials, RunOptions, Trial};

#[derive(Debug, Parser)]
#[command(name = "proxy-debias", version, about = "Proxy-feature debiasing experiments")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// Experiment config (JSON).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory; defaults to the config's output_dir.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Overrides the data and training seed of the config.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads for multi-trial commands.
    #[arg(long, global = true, default_value_t = 1)]
    pub jobs: usize,
    /// Suppress progress output on stderr.
    #[arg(long, global = true)]
    pub quiet: bool,
    /// Record wall time in result rows (makes output nondeterministic).
    #[arg(long, global = true)]
    pub timing: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write train.csv and a balanced test.csv.
    Gen,
    /// Train on train.csv and write model.json and history.csv.
    Train {
        /// Train on this CSV instead of the config's generator.
        #[arg(long)]
        train_csv: Option<PathBuf>,
    },
    /// Evaluate a model on a test CSV; prints one JSON result.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        test: PathBuf,
        /// Also dump per-sample predictions.
        #[arg(long)]
        predictions: Option<PathBuf>,
        /// Write the JSON here instead of stdout.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Vanilla and active runs over a list of coupling probabilities.
    Sweep {
        /// Comma-separated coupling probabilities, applied to every attribute.
        #[arg(long, value_delimiter = ',', required = true)]
        rho: Vec<f64>,
        /// Comma-separated seeds; defaults to the config seed.
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
    },
    /// Two-attribute runs with single-attribute baselines.
    Multibias {
        /// Comma-separated seeds; defaults to the config seed.
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
    },
    /// Repeats training across proxy dimensions.
    Proxydim {
        /// Comma-separated proxy dimensions.
        #[arg(long, value_delimiter = ',', required = true)]
        dims: Vec<usize>,
        /// Comma-separated seeds; defaults to the config seed.
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
    },
    /// Write penultimate features with labels for external visualisation.
    ExportEmbeddings {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        test: PathBuf,
        /// Defaults to embeddings.csv in the output directory.
        #[arg(long)]
        output: Option<PathBuf>,
    },
}

struct Context {
    global: GlobalArgs,
}

impl Context {
    fn say(&self, msg: impl AsRef<str>) {
        if !self.global.quiet {
            eprintln!("{}", msg.as_ref());
        }
    }

    /// Loads the config and applies `--seed`. The hash covers the file
    /// bytes, or the effective config when a seed override changed it.
    fn config(&self) -> Result<(ExperimentConfig, String)> {
        let path = self
            .global
            .config
            .as_deref()
            .ok_or_else(|| Error::Config("this command needs --config".into()))?;
        let (cfg, hash) = ExperimentConfig::load(path)?;
        match self.global.seed {
            Some(seed) if seed != cfg.data.seed || seed != cfg.train.seed => {
                let cfg = cfg.with_seed(seed);
                let hash = cfg.hash();
                Ok((cfg, hash))
            }
            _ => Ok((cfg, hash)),
        }
    }

    fn out_dir(&self, cfg: Option<&ExperimentConfig>) -> Result<PathBuf> {
        let dir = match (&self.global.out, cfg) {
            (Some(d), _) => d.clone(),
            (None, Some(c)) => c.output_dir.clone(),
            (None, None) => PathBuf::from("out"),
        };
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        Ok(dir)
    }

    fn options(&self) -> RunOptions {
        RunOptions {
            jobs: self.global.jobs,
            timing: self.global.timing,
        }
    }

    fn seeds(&self, given: &Option<Vec<u64>>, cfg: &ExperimentConfig) -> Vec<u64> {
        given.clone().unwrap_or_else(|| vec![cfg.data.seed])
    }

    fn run_trials(&self, trials: &[Trial], hash: &str, num_bias: usize, path: &Path) -> Result<bool> {
        let rows = run_all(trials, hash, self.options())?;
        save_results(&rows, num_bias, path)?;
        let failed = rows.iter().filter(|r| r.error.is_some()).count();
        self.say(format!("wrote {} rows to {}", rows.len(), path.display()));
        if failed > 0 {
            eprintln!("{} of {} trials failed", failed, rows.len());
        }
        Ok(failed == 0)
    }
}

/// Runs the CLI and returns the process exit status.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli) {
        Ok(true) => 0,
        Ok(false) => 3,
        Err(e) => {
            eprintln!("error: {}", e);
            e.exit_code()
        }
    }
}

fn dispatch(cli: Cli) -> Result<bool> {
    let ctx = Context { global: cli.global };
    match cli.command {
        Command::Gen => {
            let (cfg, _) = ctx.config()?;
            let dir = ctx.out_dir(Some(&cfg))?;
            let train_path = dir.join("train.csv");
            let test_path = dir.join("test.csv");
            save_csv(&generate(&cfg.data)?, &train_path)?;
            save_csv(&balanced_test(&cfg.test_generator())?, &test_path)?;
            ctx.say(format!("wrote {} and {}", train_path.display(), test_path.display()));
            Ok(true)
        }
        Command::Train { train_csv } => {
            let (cfg, hash) = ctx.config()?;
            let dir = ctx.out_dir(Some(&cfg))?;
            let train_path = train_csv.unwrap_or_else(|| dir.join("train.csv"));
            let ds = load_csv(&train_path)?;
            let model_cfg = cfg.model_config()?;
            if ds.feature_dim() != model_cfg.input_dim || ds.num_bias() != cfg.data.num_bias() {
                return Err(Error::Config(format!(
                    "{} has {} features and {} bias attributes, config expects {} and {}",
                    train_path.display(),
                    ds.feature_dim(),
                    ds.num_bias(),
                    model_cfg.input_dim,
                    cfg.data.num_bias()
                )));
            }
            let (model, history) = train(&ds, &cfg.train, &model_cfg)?;
            let model_path = dir.join("model.json");
            ModelFile::new(model, hash, cfg.data.rho.clone()).save(&model_path)?;
            save_history(&history, &dir.join("history.csv"))?;
            ctx.say(format!("wrote {}", model_path.display()));
            Ok(true)
        }
        Command::Eval {
            model,
            test,
            predictions,
            output,
        } => {
            let file = ModelFile::load(&model)?;
            let ds = load_csv(&test)?;
            file.check_dataset(&ds)?;
            let m = &file.model;
            let (report, preds) = evaluate(&m.params, &m.bank, &ds)?;
            if let Some(path) = predictions {
                save_predictions(&preds, &ds.targets, &path)?;
            }
            let record = ResultRecord {
                mode: m.mode.as_str().to_string(),
                seed: m.train_config.seed,
                rho: file.rho.clone(),
                proxy_dim: m.model_config.proxy_dims.first().copied().unwrap_or(0),
                config_hash: file.config_hash.clone(),
                metrics: Some(report),
                wall_time_seconds: 0.0,
                error: None,
            };
            let json = serde_json::to_string_pretty(&record).expect("record serialises") + "\n";
            match output {
                Some(path) => std::fs::write(&path, json).map_err(|e| Error::io(&path, e))?,
                None => print!("{}", json),
            }
            Ok(true)
        }
        Command::Sweep { rho, seeds } => {
            let (cfg, hash) = ctx.config()?;
            let trials = sweep_trials(&cfg, &rho, &ctx.seeds(&seeds, &cfg))?;
            let path = ctx.out_dir(Some(&cfg))?.join("sweep.csv");
            ctx.run_trials(&trials, &hash, cfg.data.num_bias(), &path)
        }
        Command::Multibias { seeds } => {
            let (cfg, hash) = ctx.config()?;
            let trials = multibias_trials(&cfg, &ctx.seeds(&seeds, &cfg))?;
            let path = ctx.out_dir(Some(&cfg))?.join("multibias.csv");
            ctx.run_trials(&trials, &hash, cfg.data.num_bias(), &path)
        }
        Command::Proxydim { dims, seeds } => {
            let (cfg, hash) = ctx.config()?;
            let trials = proxydim_trials(&cfg, &dims, &ctx.seeds(&seeds, &cfg))?;
            let path = ctx.out_dir(Some(&cfg))?.join("proxydim.csv");
            ctx.run_trials(&trials, &hash, cfg.data.num_bias(), &path)
        }
        Command::ExportEmbeddings { model, test, output } => {
            let file = ModelFile::load(&model)?;
            let ds = load_csv(&test)?;
            file.check_dataset(&ds)?;
            let features = file.model.params.penultimate_features(&ds.features)?;
            let path = match output {
                Some(p) => p,
                None => ctx.out_dir(None)?.join("embeddings.csv"),
            };
            save_embeddings(&features, &ds, &path)?;
            ctx.say(format!("wrote {}", path.display()));
            Ok(true)
        }
    }
}
