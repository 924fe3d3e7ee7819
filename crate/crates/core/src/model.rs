//! MLP backbone with a linear head over `[backbone features ∥ proxy vectors]`,
//! the proxy bank, and interventional inference.
//!
//! Proxy vectors are appended at the penultimate feature level, so the head
//! is the only consumer of proxy columns and the logits are affine in them.
//! Replacing every per-class proxy by the prior-weighted mean therefore
//! yields exactly the prior-weighted mean of per-class logits.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{softmax_rows, Graph, Tensor, Var};

pub const DEFAULT_PROXY_DIM: usize = 100;
pub const DEFAULT_BACKDOOR_CAP: usize = 4096;

/// Per-attribute bias labels stored column-wise: `labels[k][i]` is the class
/// of sample `i` for bias attribute `k`.
pub type BiasLabels = [Vec<usize>];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub input_dim: usize,
    #[serde(default = "default_hidden")]
    pub hidden_dims: Vec<usize>,
    #[serde(default = "default_classes")]
    pub num_classes: usize,
    /// Width of the proxy block of each bias attribute, in attribute order.
    #[serde(default)]
    pub proxy_dims: Vec<usize>,
}

fn default_hidden() -> Vec<usize> {
    vec![64, 32]
}

fn default_classes() -> usize {
    2
}

impl ModelConfig {
    pub fn new(input_dim: usize, proxy_dims: Vec<usize>) -> Self {
        ModelConfig {
            input_dim,
            hidden_dims: default_hidden(),
            num_classes: 2,
            proxy_dims,
        }
    }

    pub fn feature_dim(&self) -> usize {
        self.hidden_dims.last().copied().unwrap_or(self.input_dim)
    }

    pub fn proxy_width(&self) -> usize {
        self.proxy_dims.iter().sum()
    }

    pub fn head_input_dim(&self) -> usize {
        self.feature_dim() + self.proxy_width()
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 {
            return Err(Error::Config("input_dim must be positive".into()));
        }
        if self.hidden_dims.contains(&0) {
            return Err(Error::Config(format!(
                "hidden_dims must be positive, got {:?}",
                self.hidden_dims
            )));
        }
        if self.num_classes < 2 {
            return Err(Error::Config(format!(
                "num_classes must be at least 2, got {}",
                self.num_classes
            )));
        }
        if self.proxy_dims.contains(&0) {
            return Err(Error::Config(format!(
                "proxy_dims must be positive, got {:?}",
                self.proxy_dims
            )));
        }
        Ok(())
    }
}

/// Affine layer `y = x·W + b` with `W` of shape `in × out` and `b` of shape `1 × out`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Linear {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Linear {
    pub fn zeros(input: usize, output: usize) -> Self {
        Linear {
            weight: Tensor::zeros(vec![input, output]),
            bias: Tensor::zeros(vec![1, output]),
        }
    }

    /// Uniform `±1/√fan_in` initialisation for weights and biases.
    pub fn init<R: Rng>(input: usize, output: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (input.max(1) as f64).sqrt();
        let mut draw = |n: usize| -> Vec<f64> { (0..n).map(|_| rng.gen_range(-bound..bound)).collect() };
        let weight = draw(input * output);
        let bias = draw(output);
        Linear {
            weight: Tensor::new(vec![input, output], weight).expect("sized"),
            bias: Tensor::new(vec![1, output], bias).expect("sized"),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.weight.rows()
    }

    pub fn output_dim(&self) -> usize {
        self.weight.cols()
    }

    fn bind(&self, g: &mut Graph, track: bool) -> LinearVars {
        if track {
            LinearVars {
                weight: g.param(&self.weight),
                bias: g.param(&self.bias),
            }
        } else {
            LinearVars {
                weight: g.constant(self.weight.clone()),
                bias: g.constant(self.bias.clone()),
            }
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct LinearVars {
    pub weight: Var,
    pub bias: Var,
}

impl LinearVars {
    pub fn apply(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let xw = g.matmul(x, self.weight)?;
        g.add_row(xw, self.bias)
    }
}

/// Backbone layers (θ without the head) and the classification head `h`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub backbone: Vec<Linear>,
    pub head: Linear,
}

/// Graph handles for a bound [`ModelParams`].
#[derive(Clone, Debug)]
pub struct BoundParams {
    pub backbone: Vec<LinearVars>,
    pub head: LinearVars,
}

impl BoundParams {
    pub fn backbone_vars(&self) -> impl Iterator<Item = Var> + '_ {
        self.backbone.iter().flat_map(|l| [l.weight, l.bias])
    }

    /// Backbone features: stacked affine + ReLU layers.
    pub fn features(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let mut h = x;
        for layer in &self.backbone {
            let z = layer.apply(g, h)?;
            h = g.relu(z);
        }
        Ok(h)
    }

    /// Head applied to `[features ∥ proxies]`.
    pub fn head_logits(&self, g: &mut Graph, features: Var, proxies: Var) -> Result<Var> {
        let joined = g.concat(features, proxies)?;
        self.head.apply(g, joined)
    }

    pub fn forward(&self, g: &mut Graph, x: Var, proxies: Var) -> Result<Var> {
        let f = self.features(g, x)?;
        self.head_logits(g, f, proxies)
    }
}

impl ModelParams {
    pub fn init<R: Rng>(config: &ModelConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let mut backbone = Vec::with_capacity(config.hidden_dims.len());
        let mut width = config.input_dim;
        for &h in &config.hidden_dims {
            backbone.push(Linear::init(width, h, rng));
            width = h;
        }
        let head = Linear::init(config.head_input_dim(), config.num_classes, rng);
        Ok(ModelParams { backbone, head })
    }

    pub fn zeros(config: &ModelConfig) -> Self {
        let mut backbone = Vec::new();
        let mut width = config.input_dim;
        for &h in &config.hidden_dims {
            backbone.push(Linear::zeros(width, h));
            width = h;
        }
        ModelParams {
            backbone,
            head: Linear::zeros(config.head_input_dim(), config.num_classes),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.backbone.first().map_or(self.head.input_dim(), |l| l.input_dim())
    }

    pub fn feature_dim(&self) -> usize {
        self.backbone.last().map_or(self.input_dim(), |l| l.output_dim())
    }

    pub fn proxy_width(&self) -> usize {
        self.head.input_dim() - self.feature_dim()
    }

    pub fn num_classes(&self) -> usize {
        self.head.output_dim()
    }

    pub fn bind(&self, g: &mut Graph, track_backbone: bool, track_head: bool) -> BoundParams {
        BoundParams {
            backbone: self.backbone.iter().map(|l| l.bind(g, track_backbone)).collect(),
            head: self.head.bind(g, track_head),
        }
    }

    pub fn backbone_tensors_mut(&mut self) -> Vec<&mut Tensor> {
        self.backbone
            .iter_mut()
            .flat_map(|l| [&mut l.weight, &mut l.bias])
            .collect()
    }

    /// Every tensor of θ (backbone then head), in binding order.
    pub fn all_tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out: Vec<&mut Tensor> = self
            .backbone
            .iter_mut()
            .flat_map(|l| [&mut l.weight, &mut l.bias])
            .collect();
        out.push(&mut self.head.weight);
        out.push(&mut self.head.bias);
        out
    }

    pub fn all_tensors(&self) -> Vec<&Tensor> {
        let mut out: Vec<&Tensor> = self.backbone.iter().flat_map(|l| [&l.weight, &l.bias]).collect();
        out.push(&self.head.weight);
        out.push(&self.head.bias);
        out
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        x.ensure_matrix("model input")?;
        if x.cols() != self.input_dim() {
            return Err(Error::Shape(format!(
                "model expects {} input features, got shape {:?}",
                self.input_dim(),
                x.shape()
            )));
        }
        Ok(())
    }

    /// Pre-softmax logits `head(concat(backbone(x), proxies))`.
    pub fn forward(&self, x: &Tensor, proxies: &Tensor) -> Result<Tensor> {
        self.check_input(x)?;
        if proxies.cols() != self.proxy_width() {
            return Err(Error::Shape(format!(
                "model expects a proxy block of width {}, got shape {:?}",
                self.proxy_width(),
                proxies.shape()
            )));
        }
        let mut g = Graph::new();
        let bound = self.bind(&mut g, false, false);
        let xv = g.constant(x.clone());
        let pv = g.constant(proxies.clone());
        let logits = bound.forward(&mut g, xv, pv)?;
        Ok(g.value(logits).clone())
    }

    /// Backbone output before concatenation with the proxy block.
    pub fn penultimate_features(&self, x: &Tensor) -> Result<Tensor> {
        self.check_input(x)?;
        let mut g = Graph::new();
        let bound = self.bind(&mut g, false, false);
        let xv = g.constant(x.clone());
        let f = bound.features(&mut g, xv)?;
        Ok(g.value(f).clone())
    }

    /// Features for a batch, computed once and reused under several proxy blocks.
    pub(crate) fn logits_from_features(&self, features: &Tensor, proxies: &Tensor) -> Result<Tensor> {
        let mut g = Graph::new();
        let head = self.head.bind(&mut g, false);
        let f = g.constant(features.clone());
        let p = g.constant(proxies.clone());
        let joined = g.concat(f, p)?;
        let logits = head.apply(&mut g, joined)?;
        Ok(g.value(logits).clone())
    }
}

/// Proxy vectors of one bias attribute.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ProxyTableRepr")]
pub struct ProxyTable {
    /// `N × M`, one row per bias class.
    proxies: Tensor,
    anchor: Vec<f64>,
    prior: Vec<f64>,
}

impl ProxyTable {
    pub fn new(proxies: Tensor, anchor: Vec<f64>, prior: Vec<f64>) -> Result<Self> {
        proxies.ensure_matrix("proxy table")?;
        let (n, m) = (proxies.rows(), proxies.cols());
        if n == 0 || m == 0 {
            return Err(Error::Config(format!(
                "proxy table needs at least one class and one dimension, got {:?}",
                proxies.shape()
            )));
        }
        if anchor.len() != m {
            return Err(Error::Shape(format!(
                "anchor of length {} for proxies of width {}",
                anchor.len(),
                m
            )));
        }
        check_prior(&prior, n)?;
        Ok(ProxyTable {
            proxies,
            anchor,
            prior,
        })
    }

    pub fn class_count(&self) -> usize {
        self.proxies.rows()
    }

    pub fn dim(&self) -> usize {
        self.proxies.cols()
    }

    pub fn proxies(&self) -> &Tensor {
        &self.proxies
    }

    pub fn proxy(&self, class: usize) -> &[f64] {
        self.proxies.row(class)
    }

    pub fn anchor(&self) -> &[f64] {
        &self.anchor
    }

    pub fn prior(&self) -> &[f64] {
        &self.prior
    }

    /// Prior-weighted mean of the proxy rows.
    pub fn expectation(&self) -> Vec<f64> {
        let m = self.dim();
        let mut out = vec![0.0; m];
        for (b, &w) in self.prior.iter().enumerate() {
            for (o, v) in out.iter_mut().zip(self.proxy(b)) {
                *o += w * v;
            }
        }
        out
    }
}

#[derive(Deserialize)]
struct ProxyTableRepr {
    proxies: Tensor,
    anchor: Vec<f64>,
    prior: Vec<f64>,
}

impl TryFrom<ProxyTableRepr> for ProxyTable {
    type Error = Error;

    fn try_from(r: ProxyTableRepr) -> Result<Self> {
        ProxyTable::new(r.proxies, r.anchor, r.prior)
    }
}

fn check_prior(prior: &[f64], n: usize) -> Result<()> {
    if prior.len() != n {
        return Err(Error::Config(format!(
            "prior has {} entries for {} classes",
            prior.len(),
            n
        )));
    }
    if prior.iter().any(|&p| !p.is_finite() || p < 0.0) {
        return Err(Error::Config(format!("prior entries must be non-negative, got {:?}", prior)));
    }
    let total: f64 = prior.iter().sum();
    if (total - 1.0).abs() > 1e-12 {
        return Err(Error::Config(format!("prior sums to {}, expected 1", total)));
    }
    Ok(())
}

/// Proxy tables for every bias attribute, in attribute index order.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ProxyBank {
    tables: Vec<ProxyTable>,
}

impl ProxyBank {
    pub fn empty() -> Self {
        ProxyBank { tables: Vec::new() }
    }

    pub fn from_tables(tables: Vec<ProxyTable>) -> Self {
        ProxyBank { tables }
    }

    /// Preset bank: class `j` of attribute `k` gets the constant vector
    /// `j / (N_k − 1)`, the prior is uniform and each anchor is drawn from a
    /// seeded uniform `[0, 1)`.
    pub fn naive_presets(class_counts: &[usize], proxy_dims: &[usize], seed: u64) -> Result<Self> {
        if class_counts.len() != proxy_dims.len() {
            return Err(Error::Config(format!(
                "{} class counts for {} proxy dimensions",
                class_counts.len(),
                proxy_dims.len()
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut tables = Vec::with_capacity(class_counts.len());
        for (k, (&n, &m)) in class_counts.iter().zip(proxy_dims).enumerate() {
            if n < 2 {
                return Err(Error::Config(format!(
                    "bias attribute {} has {} classes; at least 2 groups are required",
                    k, n
                )));
            }
            if m == 0 {
                return Err(Error::Config(format!("proxy dimension of attribute {} is 0", k)));
            }
            let mut values = Vec::with_capacity(n * m);
            for j in 0..n {
                let level = j as f64 / (n - 1) as f64;
                values.extend(std::iter::repeat_n(level, m));
            }
            let anchor: Vec<f64> = (0..m).map(|_| rng.gen::<f64>()).collect();
            let prior = vec![1.0 / n as f64; n];
            tables.push(ProxyTable::new(Tensor::new(vec![n, m], values)?, anchor, prior)?);
        }
        Ok(ProxyBank { tables })
    }

    pub fn tables(&self) -> &[ProxyTable] {
        &self.tables
    }

    pub fn num_attributes(&self) -> usize {
        self.tables.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tables.is_empty()
    }

    pub fn width(&self) -> usize {
        self.tables.iter().map(|t| t.dim()).sum()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        self.tables.iter().map(|t| t.class_count()).collect()
    }

    pub fn set_prior(&mut self, k: usize, prior: Vec<f64>) -> Result<()> {
        let table = self
            .tables
            .get_mut(k)
            .ok_or_else(|| Error::Index(format!("no bias attribute {}", k)))?;
        check_prior(&prior, table.class_count())?;
        table.prior = prior;
        Ok(())
    }

    /// Mutable proxy matrices for training. Anchors stay read-only.
    pub(crate) fn proxy_tensors_mut(&mut self) -> Vec<&mut Tensor> {
        self.tables.iter_mut().map(|t| &mut t.proxies).collect()
    }

    pub(crate) fn proxy_tensors(&self) -> Vec<&Tensor> {
        self.tables.iter().map(|t| &t.proxies).collect()
    }

    pub(crate) fn check_labels(&self, labels: &BiasLabels, rows: usize) -> Result<()> {
        if labels.len() != self.tables.len() {
            return Err(Error::Shape(format!(
                "{} bias label columns for a bank with {} attributes",
                labels.len(),
                self.tables.len()
            )));
        }
        for (k, (col, table)) in labels.iter().zip(&self.tables).enumerate() {
            if col.len() != rows {
                return Err(Error::Shape(format!(
                    "attribute {} has {} labels for {} rows",
                    k,
                    col.len(),
                    rows
                )));
            }
            let n = table.class_count();
            if let Some((row, &bad)) = col.iter().enumerate().find(|(_, &b)| b >= n) {
                return Err(Error::Index(format!(
                    "bias label {} of attribute {} at row {} out of range for {} classes",
                    bad, k, row, n
                )));
            }
        }
        Ok(())
    }

    /// Row `i` is the concatenation over attributes of the proxy of sample
    /// `i`'s class.
    pub fn select_proxies(&self, labels: &BiasLabels) -> Result<Tensor> {
        let rows = labels.first().map_or(0, |c| c.len());
        self.check_labels(labels, rows)?;
        let width = self.width();
        let mut values = Vec::with_capacity(rows * width);
        for i in 0..rows {
            for (table, col) in self.tables.iter().zip(labels) {
                values.extend_from_slice(table.proxy(col[i]));
            }
        }
        Tensor::new(vec![rows, width], values)
    }

    /// Graph version of [`ProxyBank::select_proxies`]; `tables` are the
    /// graph leaves of the proxy matrices so gradients reach them.
    pub fn select_proxies_graph(&self, g: &mut Graph, tables: &[Var], labels: &BiasLabels, rows: usize) -> Result<Var> {
        self.check_labels(labels, rows)?;
        let mut block = g.constant(Tensor::zeros(vec![rows, 0]));
        for (&t, col) in tables.iter().zip(labels) {
            let sel = g.gather_rows(t, col)?;
            block = g.concat(block, sel)?;
        }
        Ok(block)
    }

    pub fn intervention_feature(&self) -> InterventionFeature {
        InterventionFeature {
            blocks: self.tables.iter().map(|t| t.expectation()).collect(),
        }
    }

    /// Anchors of every attribute broadcast over `rows` rows.
    pub fn anchor_block(&self, rows: usize) -> Tensor {
        broadcast_blocks(self.tables.iter().map(|t| t.anchor()), rows)
    }
}

/// Per-attribute expectation of the proxy vectors under the class prior.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct InterventionFeature {
    pub blocks: Vec<Vec<f64>>,
}

impl InterventionFeature {
    pub fn width(&self) -> usize {
        self.blocks.iter().map(|b| b.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    /// The concatenated feature repeated on every one of `rows` rows.
    pub fn broadcast(&self, rows: usize) -> Tensor {
        broadcast_blocks(self.blocks.iter().map(|b| b.as_slice()), rows)
    }
}

fn broadcast_blocks<'a>(blocks: impl Iterator<Item = &'a [f64]>, rows: usize) -> Tensor {
    let row: Vec<f64> = blocks.flat_map(|b| b.iter().copied()).collect();
    let width = row.len();
    let mut values = Vec::with_capacity(rows * width);
    for _ in 0..rows {
        values.extend_from_slice(&row);
    }
    Tensor::new(vec![rows, width], values).expect("sized")
}

fn softmax_tensor(logits: &Tensor) -> Tensor {
    let probs = softmax_rows(logits.values(), logits.rows(), logits.cols());
    Tensor::new(logits.shape().to_vec(), probs).expect("same shape")
}

/// Class probabilities with every proxy block replaced by the intervention
/// feature. No bias annotation is consulted.
pub fn predict_interventional(params: &ModelParams, bank: &ProxyBank, x: &Tensor) -> Result<Tensor> {
    let feature = bank.intervention_feature();
    let logits = params.forward(x, &feature.broadcast(x.rows()))?;
    Ok(softmax_tensor(&logits))
}

/// Probabilities under a fixed proxy block shared by every row.
pub fn predict_with_proxy_row(params: &ModelParams, x: &Tensor, proxy_row: &[f64]) -> Result<Tensor> {
    let block = broadcast_blocks(std::iter::once(proxy_row), x.rows());
    Ok(softmax_tensor(&params.forward(x, &block)?))
}

/// Exact backdoor sum `Σ_b prior(b)·softmax(forward(x, p_b))` over the
/// cross product of all attributes' classes.
pub fn backdoor_exact(params: &ModelParams, bank: &ProxyBank, x: &Tensor, cap: usize) -> Result<Tensor> {
    let counts = bank.class_counts();
    let combos = counts
        .iter()
        .try_fold(1usize, |acc, &n| acc.checked_mul(n))
        .unwrap_or(usize::MAX);
    if combos > cap {
        return Err(Error::Resource(format!(
            "backdoor enumeration needs {} class combinations, cap is {}",
            combos, cap
        )));
    }
    let features = params.penultimate_features(x)?;
    let rows = x.rows();
    let c = params.num_classes();
    let mut total = vec![0.0; rows * c];
    let mut combo = vec![0usize; counts.len()];
    for _ in 0..combos {
        let mut weight = 1.0;
        let mut row = Vec::with_capacity(bank.width());
        for (table, &b) in bank.tables().iter().zip(&combo) {
            weight *= table.prior()[b];
            row.extend_from_slice(table.proxy(b));
        }
        let block = broadcast_blocks(std::iter::once(row.as_slice()), rows);
        let logits = params.logits_from_features(&features, &block)?;
        let probs = softmax_rows(logits.values(), rows, c);
        for (t, p) in total.iter_mut().zip(&probs) {
            *t += weight * p;
        }
        // odometer increment, last attribute fastest
        for k in (0..combo.len()).rev() {
            combo[k] += 1;
            if combo[k] < counts[k] {
                break;
            }
            combo[k] = 0;
        }
    }
    Tensor::new(vec![rows, c], total)
}
