//! Trial runners behind the sweep-style commands.
//!
//! A trial generates its own training and balanced test sets, trains one
//! model and evaluates it. Trials share nothing, so a batch of them runs on a
//! thread pool and the results are reassembled in submission order.

use std::time::Instant;

use rayon::prelude::*;

use crate::data::{balanced_test, generate};
use crate::error::{Error, Result};
use crate::metrics::{evaluate_mapped, MetricsReport};
use crate::train::{train, Mode};

use super::artifacts::ResultRecord;
use super::config::ExperimentConfig;

#[derive(Clone, Copy, Debug)]
pub struct RunOptions {
    /// Worker threads; 0 lets the pool pick.
    pub jobs: usize,
    /// Record wall time. Off by default so result files are byte-stable.
    pub timing: bool,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions { jobs: 1, timing: false }
    }
}

/// One unit of work. `only_bias` restricts training to a single attribute
/// while evaluation still scores every attribute of the test set.
#[derive(Clone, Debug)]
pub struct Trial {
    pub label: String,
    pub mode: Mode,
    pub config: ExperimentConfig,
    pub only_bias: Option<usize>,
}

impl Trial {
    pub fn new(config: &ExperimentConfig, mode: Mode, seed: u64) -> Self {
        let mut config = config.clone().with_seed(seed);
        config.train.mode = mode;
        Trial {
            label: mode.as_str().to_string(),
            mode,
            config,
            only_bias: None,
        }
    }

    fn evaluate(&self) -> Result<MetricsReport> {
        let cfg = &self.config;
        let model_cfg = cfg.model_config()?;
        let train_set = generate(&cfg.data)?;
        let test_set = balanced_test(&cfg.test_generator())?;
        let (fit_set, model_cfg, map) = match self.only_bias {
            None => {
                let map: Vec<Option<usize>> = (0..train_set.num_bias()).map(Some).collect();
                (train_set, model_cfg, map)
            }
            Some(k) => {
                let mut single = model_cfg;
                single.proxy_dims = vec![single.proxy_dims[k]];
                let map: Vec<Option<usize>> = (0..train_set.num_bias()).map(|j| (j == k).then_some(0)).collect();
                (train_set.project_bias(k)?, single, map)
            }
        };
        let (model, _) = train(&fit_set, &cfg.train, &model_cfg)?;
        let (report, _) = evaluate_mapped(&model.params, &model.bank, &test_set, &map, cfg.eval.counter_p)?;
        Ok(report)
    }

    pub fn run(&self, config_hash: &str, opts: RunOptions) -> ResultRecord {
        let start = Instant::now();
        let outcome = self.evaluate();
        let proxy_dim = if self.mode.uses_proxies() {
            self.config
                .model_config()
                .ok()
                .and_then(|m| m.proxy_dims.get(self.only_bias.unwrap_or(0)).copied())
                .unwrap_or(0)
        } else {
            0
        };
        let (metrics, error) = match outcome {
            Ok(m) => (Some(m), None),
            Err(e) => (None, Some(e.to_string())),
        };
        ResultRecord {
            mode: self.label.clone(),
            seed: self.config.data.seed,
            rho: self.config.data.rho.clone(),
            proxy_dim,
            config_hash: config_hash.to_string(),
            metrics,
            wall_time_seconds: if opts.timing { start.elapsed().as_secs_f64() } else { 0.0 },
            error,
        }
    }
}

/// Runs `trials` on a pool of `opts.jobs` threads, keeping input order.
pub fn run_all(trials: &[Trial], config_hash: &str, opts: RunOptions) -> Result<Vec<ResultRecord>> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.jobs)
        .build()
        .map_err(|e| Error::Resource(format!("thread pool: {}", e)))?;
    Ok(pool.install(|| trials.par_iter().map(|t| t.run(config_hash, opts)).collect()))
}

fn check_seeds(seeds: &[u64]) -> Result<()> {
    if seeds.is_empty() {
        return Err(Error::Config("seed list is empty".into()));
    }
    Ok(())
}

/// Vanilla and active trials for every `(rho, seed)`, ordered by rho, then
/// seed, then mode. Each rho value applies to every bias attribute.
pub fn sweep_trials(config: &ExperimentConfig, rhos: &[f64], seeds: &[u64]) -> Result<Vec<Trial>> {
    if rhos.is_empty() {
        return Err(Error::Config("rho list is empty".into()));
    }
    check_seeds(seeds)?;
    let mut rhos = rhos.to_vec();
    rhos.sort_by(f64::total_cmp);
    let mut seeds = seeds.to_vec();
    seeds.sort_unstable();
    let mut trials = Vec::new();
    for &rho in &rhos {
        let mut cfg = config.clone();
        cfg.data.rho = vec![rho; cfg.data.num_bias()];
        cfg.validate()?;
        for &seed in &seeds {
            for mode in [Mode::Vanilla, Mode::ActivePd] {
                trials.push(Trial::new(&cfg, mode, seed));
            }
        }
    }
    Ok(trials)
}

/// Per seed: vanilla, active with both proxy blocks, then active trained on
/// each attribute alone (`active_pd_b0`, `active_pd_b1`).
pub fn multibias_trials(config: &ExperimentConfig, seeds: &[u64]) -> Result<Vec<Trial>> {
    let k = config.data.num_bias();
    if k != 2 {
        return Err(Error::Config(format!(
            "multibias needs exactly 2 bias attributes, config declares {}",
            k
        )));
    }
    check_seeds(seeds)?;
    config.validate()?;
    let mut trials = Vec::new();
    for &seed in seeds {
        trials.push(Trial::new(config, Mode::Vanilla, seed));
        trials.push(Trial::new(config, Mode::ActivePd, seed));
        for b in 0..k {
            let mut t = Trial::new(config, Mode::ActivePd, seed);
            t.label = format!("active_pd_b{}", b);
            t.only_bias = Some(b);
            trials.push(t);
        }
    }
    Ok(trials)
}

/// The configured mode at each proxy dimension, every attribute getting the
/// same width. Ordered by dimension as given, then seed.
pub fn proxydim_trials(config: &ExperimentConfig, dims: &[usize], seeds: &[u64]) -> Result<Vec<Trial>> {
    if dims.is_empty() || dims.contains(&0) {
        return Err(Error::Config(format!("proxy dimensions must be positive, got {:?}", dims)));
    }
    check_seeds(seeds)?;
    let mut trials = Vec::new();
    for &dim in dims {
        let mut cfg = config.clone();
        cfg.model.proxy_dims = Some(vec![dim; cfg.data.num_bias()]);
        cfg.validate()?;
        for &seed in seeds {
            trials.push(Trial::new(&cfg, cfg.train.mode, seed));
        }
    }
    Ok(trials)
}
