//! Vanilla, naive-proxy and active-proxy training.
//!
//! Active training alternates two updates on every minibatch: a target step
//! on `θ` (backbone and head) with the batch's true-class proxies appended,
//! then an enhancement step on the proxy tables and the head that raises the
//! softmax-normalised proxy importance of the target class. The two updates
//! keep separate Adam moments.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Batch, Dataset};
use crate::error::{Error, Result};
use crate::model::{BiasLabels, InterventionFeature, ModelConfig, ModelParams, ProxyBank};
use crate::numeric::{adam_step, AdamConfig, AdamState, Graph, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Vanilla,
    NaivePd,
    ActivePd,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Vanilla => "vanilla",
            Mode::NaivePd => "naive_pd",
            Mode::ActivePd => "active_pd",
        }
    }

    pub fn uses_proxies(self) -> bool {
        self != Mode::Vanilla
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "vanilla" => Ok(Mode::Vanilla),
            "naive_pd" => Ok(Mode::NaivePd),
            "active_pd" => Ok(Mode::ActivePd),
            other => Err(Error::Config(format!("unknown training mode {:?}", other))),
        }
    }
}

/// Weights used for the intervention feature.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PriorKind {
    #[default]
    Uniform,
    /// Bias-class frequencies of the training set.
    Empirical,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub mode: Mode,
    #[serde(default = "defaults::epochs")]
    pub epochs: usize,
    #[serde(default = "defaults::batch_size")]
    pub batch_size: usize,
    #[serde(default = "defaults::rate")]
    pub learning_rate: f64,
    #[serde(default = "defaults::weight_decay")]
    pub weight_decay: f64,
    #[serde(default = "defaults::rate")]
    pub enhancement_learning_rate: f64,
    /// Run an enhancement step after every `enhancement_every`-th target step.
    #[serde(default = "defaults::one")]
    pub enhancement_every: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "defaults::yes")]
    pub shuffle: bool,
    #[serde(default)]
    pub prior: PriorKind,
}

mod defaults {
    pub fn epochs() -> usize {
        20
    }
    pub fn batch_size() -> usize {
        128
    }
    pub fn rate() -> f64 {
        1e-3
    }
    pub fn weight_decay() -> f64 {
        1e-4
    }
    pub fn one() -> usize {
        1
    }
    pub fn yes() -> bool {
        true
    }
}

impl TrainConfig {
    pub fn new(mode: Mode, seed: u64) -> Self {
        TrainConfig {
            mode,
            epochs: defaults::epochs(),
            batch_size: defaults::batch_size(),
            learning_rate: defaults::rate(),
            weight_decay: defaults::weight_decay(),
            enhancement_learning_rate: defaults::rate(),
            enhancement_every: 1,
            seed,
            shuffle: true,
            prior: PriorKind::Uniform,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 || self.enhancement_every == 0 {
            return Err(Error::Config(
                "epochs, batch_size and enhancement_every must be positive".into(),
            ));
        }
        let rates = [self.learning_rate, self.enhancement_learning_rate, self.weight_decay];
        if rates.iter().any(|r| !r.is_finite() || *r < 0.0) {
            return Err(Error::Config(format!(
                "learning rates and weight decay must be finite and non-negative, got {:?}",
                rates
            )));
        }
        Ok(())
    }

    fn adam(&self, learning_rate: f64) -> AdamConfig {
        AdamConfig {
            learning_rate,
            weight_decay: self.weight_decay,
            ..AdamConfig::default()
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub target_loss: f64,
    /// Mean enhancement loss; `None` outside active mode.
    pub enhancement_loss: Option<f64>,
    pub train_accuracy: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct History {
    pub epochs: Vec<EpochRecord>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainedModel {
    pub mode: Mode,
    pub model_config: ModelConfig,
    pub train_config: TrainConfig,
    pub params: ModelParams,
    pub bank: ProxyBank,
    pub intervention: InterventionFeature,
}

impl TrainedModel {
    /// Structural consistency of a model read from outside: layer shapes
    /// chain, the proxy bank fills the head's proxy columns, and the stored
    /// intervention feature matches the bank.
    pub fn validate(&self) -> Result<()> {
        let p = &self.params;
        let mut width = p.input_dim();
        for (i, layer) in p.backbone.iter().enumerate() {
            if layer.input_dim() != width || layer.bias.len() != layer.output_dim() {
                return Err(Error::Shape(format!("backbone layer {} has inconsistent shapes", i)));
            }
            width = layer.output_dim();
        }
        if p.head.input_dim() < width || p.head.bias.len() != p.head.output_dim() {
            return Err(Error::Shape("head shapes do not match the backbone".into()));
        }
        if self.bank.width() != p.proxy_width() {
            return Err(Error::Shape(format!(
                "proxy bank width {} does not fill {} head proxy columns",
                self.bank.width(),
                p.proxy_width()
            )));
        }
        if self.bank.intervention_feature() != self.intervention {
            return Err(Error::Config(
                "stored intervention feature differs from the proxy bank expectation".into(),
            ));
        }
        Ok(())
    }
}

/// Mutable state of one training run.
pub struct Trainer {
    mode: Mode,
    config: TrainConfig,
    model_config: ModelConfig,
    params: ModelParams,
    bank: ProxyBank,
    theta_state: AdamState,
    enhance_state: Option<AdamState>,
}

impl Trainer {
    /// Initialises parameters and the proxy bank from the config seed.
    /// `bias_classes` gives the class count of each bias attribute; vanilla
    /// mode ignores it and builds a model without a proxy block.
    pub fn new(model_config: &ModelConfig, config: &TrainConfig, bias_classes: &[usize]) -> Result<Self> {
        config.validate()?;
        let mut model_config = model_config.clone();
        if !config.mode.uses_proxies() {
            model_config.proxy_dims.clear();
        } else if model_config.proxy_dims.len() != bias_classes.len() {
            return Err(Error::Config(format!(
                "{} proxy dimensions configured for {} bias attributes",
                model_config.proxy_dims.len(),
                bias_classes.len()
            )));
        }
        model_config.validate()?;

        let mut init_rng = ChaCha8Rng::seed_from_u64(config.seed);
        let params = ModelParams::init(&model_config, &mut init_rng)?;
        let bank = if config.mode.uses_proxies() {
            ProxyBank::naive_presets(bias_classes, &model_config.proxy_dims, anchor_seed(config.seed))?
        } else {
            ProxyBank::empty()
        };

        let theta_state = AdamState::new(config.adam(config.learning_rate), &params.all_tensors());
        let enhance_state = (config.mode == Mode::ActivePd).then(|| {
            let mut group = bank.proxy_tensors();
            group.push(&params.head.weight);
            group.push(&params.head.bias);
            AdamState::new(config.adam(config.enhancement_learning_rate), &group)
        });

        Ok(Trainer {
            mode: config.mode,
            config: config.clone(),
            model_config,
            params,
            bank,
            theta_state,
            enhance_state,
        })
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ModelParams {
        &mut self.params
    }

    pub fn bank(&self) -> &ProxyBank {
        &self.bank
    }

    pub fn set_prior(&mut self, k: usize, prior: Vec<f64>) -> Result<()> {
        self.bank.set_prior(k, prior)
    }

    fn proxy_block(&self, labels: &BiasLabels, rows: usize) -> Result<Tensor> {
        if self.bank.is_empty() {
            Ok(Tensor::zeros(vec![rows, 0]))
        } else {
            self.bank.select_proxies(labels)
        }
    }

    /// One Adam update of θ on the cross-entropy of the true-class-proxy
    /// logits. Proxy tables are constants here. Returns the pre-update loss
    /// and the number of correct pre-update predictions.
    pub fn target_step(&mut self, batch: &Batch) -> Result<(f64, usize)> {
        let rows = batch.targets.len();
        if rows == 0 {
            return Err(Error::Contract("target_step on an empty batch".into()));
        }
        let proxies = self.proxy_block(&batch.bias, rows)?;
        let mut g = Graph::new();
        let bound = self.params.bind(&mut g, true, true);
        let x = g.constant(batch.x.clone());
        let p = g.constant(proxies);
        let logits = bound.forward(&mut g, x, p)?;
        let loss = g.softmax_cross_entropy(logits, &batch.targets)?;
        let loss_value = g.value(loss).values()[0];
        if !loss_value.is_finite() {
            return Err(Error::Numeric(format!("target loss is {}", loss_value)));
        }
        let correct = crate::metrics::argmax_rows(g.value(logits))
            .iter()
            .zip(&batch.targets)
            .filter(|(a, b)| a == b)
            .count();
        g.backward(loss)?;

        let vars: Vec<_> = bound
            .backbone_vars()
            .chain([bound.head.weight, bound.head.bias])
            .collect();
        let mut tensors = self.params.all_tensors_mut();
        for (t, &v) in tensors.iter_mut().zip(&vars) {
            g.accumulate_into(v, t)?;
        }
        adam_step(&mut tensors, &mut self.theta_state)?;
        Ok((loss_value, correct))
    }

    /// Proxy importance `α = Y(x, p_b) − Y(x, anchor)` per sample and class.
    pub fn proxy_importance(&self, x: &Tensor, labels: &BiasLabels) -> Result<Tensor> {
        proxy_importance(&self.params, &self.bank, x, labels)
    }

    /// One Adam update of the proxy tables and the head minimising
    /// `−log softmax(α)_t`, with the backbone and anchors held fixed.
    pub fn enhancement_step(&mut self, batch: &Batch) -> Result<f64> {
        if self.mode != Mode::ActivePd {
            return Err(Error::Contract(format!(
                "enhancement_step requires active_pd mode, trainer is {}",
                self.mode
            )));
        }
        let rows = batch.targets.len();
        if rows == 0 {
            return Err(Error::Contract("enhancement_step on an empty batch".into()));
        }
        let features = self.params.penultimate_features(&batch.x)?;

        let mut g = Graph::new();
        let head = crate::model::BoundParams {
            backbone: Vec::new(),
            head: crate::model::LinearVars {
                weight: g.param(&self.params.head.weight),
                bias: g.param(&self.params.head.bias),
            },
        };
        let tables: Vec<_> = self.bank.proxy_tensors().into_iter().map(|t| g.param(t)).collect();
        let f = g.constant(features);
        let factual_block = self.bank.select_proxies_graph(&mut g, &tables, &batch.bias, rows)?;
        let anchor_block = g.constant(self.bank.anchor_block(rows));
        let factual = head.head_logits(&mut g, f, factual_block)?;
        let counterfactual = head.head_logits(&mut g, f, anchor_block)?;
        let alpha = g.sub(factual, counterfactual)?;
        let loss = g.softmax_cross_entropy(alpha, &batch.targets)?;
        let loss_value = g.value(loss).values()[0];
        if !loss_value.is_finite() {
            return Err(Error::Numeric(format!("enhancement loss is {}", loss_value)));
        }
        g.backward(loss)?;

        let mut group = self.bank.proxy_tensors_mut();
        for (t, &v) in group.iter_mut().zip(&tables) {
            g.accumulate_into(v, t)?;
        }
        group.push(&mut self.params.head.weight);
        group.push(&mut self.params.head.bias);
        let n = group.len();
        g.accumulate_into(head.head.weight, group[n - 2])?;
        g.accumulate_into(head.head.bias, group[n - 1])?;
        let state = self.enhance_state.as_mut().expect("active mode has an enhancement state");
        adam_step(&mut group, state)?;
        Ok(loss_value)
    }

    /// One pass over `ds` in (optionally shuffled) minibatches.
    pub fn run_epoch(&mut self, ds: &Dataset, epoch: usize, rng: &mut ChaCha8Rng) -> Result<EpochRecord> {
        let mut order: Vec<usize> = (0..ds.len()).collect();
        if self.config.shuffle {
            order.shuffle(rng);
        }
        let mut target_sum = 0.0;
        let mut enhance_sum = 0.0;
        let mut enhance_count = 0usize;
        let mut correct = 0usize;
        let mut batches = 0usize;
        for (step, chunk) in order.chunks(self.config.batch_size).enumerate() {
            // Step 1: the batch's proxies are selected inside both updates.
            let batch = ds.batch(chunk);
            // Step 2
            let (loss, hits) = self.target_step(&batch)?;
            target_sum += loss;
            correct += hits;
            batches += 1;
            // Steps 3-4: factual/counterfactual logits and the enhancement update
            if self.mode == Mode::ActivePd && step % self.config.enhancement_every == 0 {
                enhance_sum += self.enhancement_step(&batch)?;
                enhance_count += 1;
            }
        }
        Ok(EpochRecord {
            epoch,
            target_loss: target_sum / batches as f64,
            enhancement_loss: (self.mode == Mode::ActivePd).then(|| enhance_sum / enhance_count.max(1) as f64),
            train_accuracy: correct as f64 / ds.len() as f64,
        })
    }

    /// Freezes the run: the intervention feature is computed from the final bank.
    pub fn finish(self) -> TrainedModel {
        let intervention = self.bank.intervention_feature();
        TrainedModel {
            mode: self.mode,
            model_config: self.model_config,
            train_config: self.config,
            params: self.params,
            bank: self.bank,
            intervention,
        }
    }
}

/// Anchors use their own seed derived from the training seed.
fn anchor_seed(seed: u64) -> u64 {
    seed ^ 0x9e37_79b9_7f4a_7c15
}

/// `α^c = Y_c(x, p_b) − Y_c(x, anchor)` from pre-softmax logits.
pub fn proxy_importance(params: &ModelParams, bank: &ProxyBank, x: &Tensor, labels: &BiasLabels) -> Result<Tensor> {
    let rows = x.rows();
    let factual = params.forward(x, &bank.select_proxies(labels)?)?;
    let counter = params.forward(x, &bank.anchor_block(rows))?;
    let diff: Vec<f64> = factual
        .values()
        .iter()
        .zip(counter.values())
        .map(|(a, b)| a - b)
        .collect();
    Tensor::new(factual.shape().to_vec(), diff)
}

/// Trains on `ds` and returns the frozen model with per-epoch history.
pub fn train(ds: &Dataset, config: &TrainConfig, model_config: &ModelConfig) -> Result<(TrainedModel, History)> {
    if ds.is_empty() {
        return Err(Error::Config("training set is empty".into()));
    }
    if model_config.input_dim != ds.feature_dim() {
        return Err(Error::Config(format!(
            "model input_dim {} does not match {} dataset features",
            model_config.input_dim,
            ds.feature_dim()
        )));
    }
    if model_config.num_classes < ds.target_classes {
        return Err(Error::Config(format!(
            "model has {} classes but the dataset has {} target classes",
            model_config.num_classes, ds.target_classes
        )));
    }
    let mut trainer = Trainer::new(model_config, config, &ds.bias_classes)?;
    if config.mode.uses_proxies() && config.prior == PriorKind::Empirical {
        for k in 0..ds.num_bias() {
            trainer.set_prior(k, ds.bias_frequencies(k))?;
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(2);
    let mut history = History::default();
    for epoch in 0..config.epochs {
        history.epochs.push(trainer.run_epoch(ds, epoch, &mut rng)?);
    }
    Ok((trainer.finish(), history))
}
