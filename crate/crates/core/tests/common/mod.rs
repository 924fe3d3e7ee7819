#![allow(dead_code)]

use proxy_debias::data::{generate, Dataset, GeneratorConfig};
use proxy_debias::model::{ModelConfig, ModelParams, ProxyBank, ProxyTable};
use proxy_debias::numeric::{Graph, Tensor, Var};
use proxy_debias::train::{Mode, TrainConfig};
use proxy_debias::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Tensor {
    let v = (0..rows * cols).map(|_| rng.gen_range(-scale..scale)).collect();
    Tensor::new(vec![rows, cols], v).unwrap()
}

/// A normalised random prior over `n` classes.
pub fn random_prior(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..n).map(|_| rng.gen_range(0.05..1.0)).collect();
    let total: f64 = raw.iter().sum();
    let mut p: Vec<f64> = raw.iter().map(|r| r / total).collect();
    let head: f64 = p[1..].iter().sum();
    p[0] = 1.0 - head;
    p
}

/// Bank with random proxies, anchors and priors.
pub fn random_bank(rng: &mut ChaCha8Rng, classes: &[usize], dims: &[usize]) -> ProxyBank {
    let tables = classes
        .iter()
        .zip(dims)
        .map(|(&n, &m)| {
            let proxies = random_matrix(rng, n, m, 1.0);
            let anchor = (0..m).map(|_| rng.gen_range(0.0..1.0)).collect();
            ProxyTable::new(proxies, anchor, random_prior(rng, n)).unwrap()
        })
        .collect();
    ProxyBank::from_tables(tables)
}

pub fn random_model(rng: &mut ChaCha8Rng, input: usize, hidden: &[usize], proxy_dims: &[usize]) -> ModelParams {
    let mut cfg = ModelConfig::new(input, proxy_dims.to_vec());
    cfg.hidden_dims = hidden.to_vec();
    ModelParams::init(&cfg, rng).unwrap()
}

pub fn small_generator(rho: &[f64], seed: u64, n: usize) -> GeneratorConfig {
    let mut g = GeneratorConfig::reference(rho, seed);
    g.n_samples = n;
    g.n_test = 64;
    g
}

pub fn small_dataset(rho: &[f64], seed: u64, n: usize) -> Dataset {
    generate(&small_generator(rho, seed, n)).unwrap()
}

pub fn small_train(mode: Mode, seed: u64) -> TrainConfig {
    let mut cfg = TrainConfig::new(mode, seed);
    cfg.epochs = 3;
    cfg.batch_size = 32;
    cfg
}

pub fn small_model(input: usize, k: usize) -> ModelConfig {
    let mut cfg = ModelConfig::new(input, vec![8; k]);
    cfg.hidden_dims = vec![16, 8];
    cfg
}

/// Graph-level forward pass of a two-hidden-layer net with a proxy block
/// concatenated before the head. `p` holds `[w1, b1, w2, b2, wh, bh]`.
pub fn net_logits(g: &mut Graph, p: &[Var], x: Var, proxies: Var) -> Result<Var> {
    let mut h = x;
    for layer in 0..2 {
        let z = g.matmul(h, p[2 * layer])?;
        let z = g.add_row(z, p[2 * layer + 1])?;
        h = g.relu(z);
    }
    let joined = g.concat(h, proxies)?;
    let z = g.matmul(joined, p[4])?;
    g.add_row(z, p[5])
}

/// Per-class median of a sample.
pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}
