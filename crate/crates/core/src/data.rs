//! Synthetic biased datasets and their CSV form.
//!
//! Every sample carries a binary target label `t` and one binary label per
//! bias attribute. The features are laid out as `[target block | bias
//! blocks in attribute order | noise block]`; each block is Gaussian with a
//! class-dependent mean, so the coupling probability `rho[k] = Pr(b_k = t)`
//! controls how much the bias blocks predict the target.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::Tensor;

pub const TARGET_CLASSES: usize = 2;
pub const GENERATED_BIAS_CLASSES: usize = 2;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    pub n_samples: usize,
    /// Size of the balanced evaluation set built alongside the training set.
    #[serde(default = "default_n_test")]
    pub n_test: usize,
    pub dim_target: usize,
    pub dim_bias: Vec<usize>,
    pub dim_noise: usize,
    pub sep_target: f64,
    pub sep_bias: Vec<f64>,
    pub noise_sigma: f64,
    /// `Pr(b_k = t)` per bias attribute.
    pub rho: Vec<f64>,
    #[serde(default)]
    pub seed: u64,
}

fn default_n_test() -> usize {
    800
}

impl GeneratorConfig {
    /// Reference configuration: the bias blocks are twice as separable as
    /// the target block, so unmitigated training shortcuts onto them.
    pub fn reference(rho: &[f64], seed: u64) -> Self {
        let k = rho.len();
        GeneratorConfig {
            n_samples: 4000,
            n_test: 800,
            dim_target: 6,
            dim_bias: vec![6; k],
            dim_noise: 8,
            sep_target: 1.6,
            sep_bias: vec![3.2; k],
            noise_sigma: 1.0,
            rho: rho.to_vec(),
            seed,
        }
    }

    pub fn num_bias(&self) -> usize {
        self.rho.len()
    }

    pub fn feature_dim(&self) -> usize {
        self.dim_target + self.dim_bias.iter().sum::<usize>() + self.dim_noise
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.rho.len();
        if k == 0 {
            return Err(Error::Config("generator needs at least one bias attribute".into()));
        }
        if self.dim_bias.len() != k || self.sep_bias.len() != k {
            return Err(Error::Config(format!(
                "rho has {} entries but dim_bias has {} and sep_bias has {}",
                k,
                self.dim_bias.len(),
                self.sep_bias.len()
            )));
        }
        if let Some(r) = self.rho.iter().find(|r| !(0.0..=1.0).contains(*r)) {
            return Err(Error::Config(format!("rho entries must lie in [0, 1], got {}", r)));
        }
        if self.n_samples == 0 {
            return Err(Error::Config("n_samples must be positive".into()));
        }
        if !self.noise_sigma.is_finite() || self.noise_sigma <= 0.0 {
            return Err(Error::Config(format!("noise_sigma must be positive, got {}", self.noise_sigma)));
        }
        if self.feature_dim() == 0 {
            return Err(Error::Config("feature dimension is zero".into()));
        }
        Ok(())
    }

    fn cell_count(&self) -> usize {
        TARGET_CLASSES * GENERATED_BIAS_CLASSES.pow(self.num_bias() as u32)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Provenance {
    Generated { config: GeneratorConfig, balanced: bool },
    External,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    /// `n × d` feature matrix.
    pub features: Tensor,
    pub targets: Vec<usize>,
    /// Column-wise bias labels, `bias[k][i]`.
    pub bias: Vec<Vec<usize>>,
    pub target_classes: usize,
    pub bias_classes: Vec<usize>,
    pub provenance: Provenance,
}

/// One minibatch view copied out of a [`Dataset`].
#[derive(Clone, Debug)]
pub struct Batch {
    pub x: Tensor,
    pub targets: Vec<usize>,
    pub bias: Vec<Vec<usize>>,
}

impl Dataset {
    pub fn new(
        features: Tensor,
        targets: Vec<usize>,
        bias: Vec<Vec<usize>>,
        target_classes: usize,
        bias_classes: Vec<usize>,
        provenance: Provenance,
    ) -> Result<Self> {
        features.ensure_matrix("dataset features")?;
        let n = features.rows();
        if targets.len() != n || bias.iter().any(|c| c.len() != n) {
            return Err(Error::Shape(format!(
                "{} feature rows, {} targets, bias label lengths {:?}",
                n,
                targets.len(),
                bias.iter().map(|c| c.len()).collect::<Vec<_>>()
            )));
        }
        if bias.len() != bias_classes.len() {
            return Err(Error::Shape(format!(
                "{} bias label columns but {} class counts",
                bias.len(),
                bias_classes.len()
            )));
        }
        if let Some(i) = targets.iter().position(|&t| t >= target_classes) {
            return Err(Error::Index(format!(
                "target label {} at row {} out of range for {} classes",
                targets[i], i, target_classes
            )));
        }
        for (k, (col, &nk)) in bias.iter().zip(&bias_classes).enumerate() {
            if let Some(i) = col.iter().position(|&b| b >= nk) {
                return Err(Error::Index(format!(
                    "bias label {} of attribute {} at row {} out of range for {} classes",
                    col[i], k, i, nk
                )));
            }
        }
        Ok(Dataset {
            features,
            targets,
            bias,
            target_classes,
            bias_classes,
            provenance,
        })
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn feature_dim(&self) -> usize {
        self.features.cols()
    }

    pub fn num_bias(&self) -> usize {
        self.bias.len()
    }

    pub fn batch(&self, indices: &[usize]) -> Batch {
        Batch {
            x: self.features.select_rows(indices),
            targets: indices.iter().map(|&i| self.targets[i]).collect(),
            bias: self
                .bias
                .iter()
                .map(|col| indices.iter().map(|&i| col[i]).collect())
                .collect(),
        }
    }

    pub fn as_batch(&self) -> Batch {
        Batch {
            x: self.features.clone(),
            targets: self.targets.clone(),
            bias: self.bias.clone(),
        }
    }

    /// Class frequencies of bias attribute `k`.
    pub fn bias_frequencies(&self, k: usize) -> Vec<f64> {
        let mut counts = vec![0usize; self.bias_classes[k]];
        for &b in &self.bias[k] {
            counts[b] += 1;
        }
        let n = self.len().max(1) as f64;
        counts.into_iter().map(|c| c as f64 / n).collect()
    }

    /// The same samples labelled with bias attribute `k` only.
    pub fn project_bias(&self, k: usize) -> Result<Dataset> {
        if k >= self.num_bias() {
            return Err(Error::Index(format!(
                "dataset has {} bias attributes, asked for {}",
                self.num_bias(),
                k
            )));
        }
        Ok(Dataset {
            bias: vec![self.bias[k].clone()],
            bias_classes: vec![self.bias_classes[k]],
            ..self.clone()
        })
    }
}

fn push_features<R: Rng>(rng: &mut R, config: &GeneratorConfig, t: usize, bias: &[usize], out: &mut Vec<f64>) {
    let sigma = config.noise_sigma;
    let block = |rng: &mut R, dim: usize, mean: f64, out: &mut Vec<f64>| {
        for _ in 0..dim {
            let z: f64 = StandardNormal.sample(rng);
            out.push(mean + sigma * z);
        }
    };
    let sign = |label: usize| 2.0 * label as f64 - 1.0;
    block(rng, config.dim_target, sign(t) * config.sep_target / 2.0, out);
    for (k, &b) in bias.iter().enumerate() {
        block(rng, config.dim_bias[k], sign(b) * config.sep_bias[k] / 2.0, out);
    }
    block(rng, config.dim_noise, 0.0, out);
}

fn generated(config: &GeneratorConfig, features: Vec<f64>, targets: Vec<usize>, bias: Vec<Vec<usize>>, balanced: bool) -> Result<Dataset> {
    let n = targets.len();
    Dataset::new(
        Tensor::new(vec![n, config.feature_dim()], features)?,
        targets,
        bias,
        TARGET_CLASSES,
        vec![GENERATED_BIAS_CLASSES; config.num_bias()],
        Provenance::Generated {
            config: config.clone(),
            balanced,
        },
    )
}

/// Draws a training set: `t` uniform, each `b_k` equal to `t` with
/// probability `rho[k]`, then the feature blocks.
pub fn generate(config: &GeneratorConfig) -> Result<Dataset> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let n = config.n_samples;
    let k = config.num_bias();
    let mut features = Vec::with_capacity(n * config.feature_dim());
    let mut targets = Vec::with_capacity(n);
    let mut bias = vec![Vec::with_capacity(n); k];
    let mut labels = vec![0usize; k];
    for _ in 0..n {
        let t = usize::from(rng.gen::<f64>() < 0.5);
        for (j, label) in labels.iter_mut().enumerate() {
            *label = if rng.gen::<f64>() < config.rho[j] { t } else { 1 - t };
            bias[j].push(*label);
        }
        targets.push(t);
        push_features(&mut rng, config, t, &labels, &mut features);
    }
    generated(config, features, targets, bias, false)
}

/// Evaluation set with the same number of samples in every
/// `(t, b_1, …, b_K)` cell. Uses its own random stream, so it never
/// repeats the training draws of the same seed.
pub fn balanced_test(config: &GeneratorConfig) -> Result<Dataset> {
    config.validate()?;
    let cells = config.cell_count();
    let n = config.n_samples;
    if !n.is_multiple_of(cells) {
        return Err(Error::Config(format!(
            "balanced set of {} samples is not divisible into {} cells",
            n, cells
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(1);
    let k = config.num_bias();
    let mut features = Vec::with_capacity(n * config.feature_dim());
    let mut targets = Vec::with_capacity(n);
    let mut bias = vec![Vec::with_capacity(n); k];
    let mut labels = vec![0usize; k];
    for i in 0..n {
        // cell index bits: lowest is t, then b_0, b_1, ...
        let cell = i % cells;
        let t = cell % TARGET_CLASSES;
        let mut rest = cell / TARGET_CLASSES;
        for (j, label) in labels.iter_mut().enumerate() {
            *label = rest % GENERATED_BIAS_CLASSES;
            rest /= GENERATED_BIAS_CLASSES;
            bias[j].push(*label);
        }
        targets.push(t);
        push_features(&mut rng, config, t, &labels, &mut features);
    }
    generated(config, features, targets, bias, true)
}

/// Fraction of samples whose bias label `k` equals the target label.
pub fn empirical_correlation(ds: &Dataset, k: usize) -> Result<f64> {
    let col = ds
        .bias
        .get(k)
        .ok_or_else(|| Error::Index(format!("dataset has no bias attribute {}", k)))?;
    if ds.is_empty() {
        return Err(Error::Contract("empirical_correlation of an empty dataset".into()));
    }
    let same = col.iter().zip(&ds.targets).filter(|(b, t)| b == t).count();
    Ok(same as f64 / ds.len() as f64)
}

pub fn csv_header(num_bias: usize, dim: usize) -> Vec<String> {
    let mut h = vec!["t".to_string()];
    h.extend((0..num_bias).map(|k| format!("b{}", k)));
    h.extend((0..dim).map(|j| format!("f{}", j)));
    h
}

/// Writes `t,b0,…,f0,…` rows; features use the shortest decimal form that
/// parses back to the same `f64`.
pub fn save_csv(ds: &Dataset, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    writeln!(w, "{}", csv_header(ds.num_bias(), ds.feature_dim()).join(",")).map_err(io)?;
    let mut line = String::new();
    for i in 0..ds.len() {
        line.clear();
        line.push_str(&ds.targets[i].to_string());
        for col in &ds.bias {
            line.push(',');
            line.push_str(&col[i].to_string());
        }
        for v in ds.features.row(i) {
            line.push(',');
            line.push_str(&v.to_string());
        }
        writeln!(w, "{}", line).map_err(io)?;
    }
    w.flush().map_err(io)
}

fn parse_header(fields: &csv::StringRecord) -> Result<(usize, usize)> {
    let names: Vec<&str> = fields.iter().collect();
    if names.first() != Some(&"t") {
        return Err(Error::parse(1, format!("header must start with \"t\", got {:?}", names.first())));
    }
    let k = names[1..].iter().take_while(|n| n.starts_with('b')).count();
    let dim = names.len() - 1 - k;
    if k == 0 {
        return Err(Error::parse(1, "header declares no bias columns"));
    }
    let expected = csv_header(k, dim);
    if names != expected {
        return Err(Error::parse(
            1,
            format!("header mismatch: expected \"{}\"", expected.join(",")),
        ));
    }
    Ok((k, dim))
}

/// Reads a dataset written by [`save_csv`]. Class counts are inferred from
/// the labels (at least two per column).
pub fn load_csv(path: &Path) -> Result<Dataset> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(file);
    let mut records = reader.records();
    let header = match records.next() {
        None => return Err(Error::parse(1, "empty file")),
        Some(r) => r.map_err(|e| Error::parse(1, e.to_string()))?,
    };
    let (k, dim) = parse_header(&header)?;
    let width = 1 + k + dim;

    let mut targets = Vec::new();
    let mut bias = vec![Vec::new(); k];
    let mut features = Vec::new();
    for record in records {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            Error::parse(line, e.to_string())
        })?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() != width {
            return Err(Error::parse(
                line,
                format!("expected {} columns, found {}", width, record.len()),
            ));
        }
        let label = |s: &str, name: &str| -> Result<usize> {
            s.trim()
                .parse::<usize>()
                .map_err(|_| Error::parse(line, format!("label {} out of range or malformed: {:?}", name, s)))
        };
        targets.push(label(&record[0], "t")?);
        for (j, col) in bias.iter_mut().enumerate() {
            col.push(label(&record[1 + j], &format!("b{}", j))?);
        }
        for (j, s) in record.iter().skip(1 + k).enumerate() {
            let v: f64 = s
                .trim()
                .parse()
                .map_err(|_| Error::parse(line, format!("malformed feature f{}: {:?}", j, s)))?;
            if !v.is_finite() {
                return Err(Error::parse(line, format!("non-finite feature f{}", j)));
            }
            features.push(v);
        }
    }
    if targets.is_empty() {
        return Err(Error::parse(2, "no data rows"));
    }
    let classes = |labels: &[usize]| labels.iter().max().map_or(2, |m| (m + 1).max(2));
    let target_classes = classes(&targets);
    let bias_classes = bias.iter().map(|c| classes(c)).collect();
    let n = targets.len();
    Dataset::new(
        Tensor::new(vec![n, dim], features)?,
        targets,
        bias,
        target_classes,
        bias_classes,
        Provenance::External,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(rho: f64, n: usize) -> GeneratorConfig {
        GeneratorConfig {
            n_samples: n,
            ..GeneratorConfig::reference(&[rho], 42)
        }
    }

    #[test]
    fn rho_one_couples_exactly() {
        let ds = generate(&small(1.0, 500)).unwrap();
        assert!(ds.bias[0].iter().zip(&ds.targets).all(|(b, t)| b == t));
        assert_eq!(empirical_correlation(&ds, 0).unwrap(), 1.0);
    }

    #[test]
    fn rho_point_nine_concentrates() {
        let ds = generate(&small(0.9, 10_000)).unwrap();
        let c = empirical_correlation(&ds, 0).unwrap();
        assert!((0.88..=0.92).contains(&c), "{c}");
    }

    #[test]
    fn rho_half_is_uncorrelated() {
        let ds = generate(&small(0.5, 10_000)).unwrap();
        let n = ds.len() as f64;
        let mean = |v: &[usize]| v.iter().sum::<usize>() as f64 / n;
        let (mt, mb) = (mean(&ds.targets), mean(&ds.bias[0]));
        let mut cov = 0.0;
        let (mut vt, mut vb) = (0.0, 0.0);
        for (t, b) in ds.targets.iter().zip(&ds.bias[0]) {
            let (dt, db) = (*t as f64 - mt, *b as f64 - mb);
            cov += dt * db;
            vt += dt * dt;
            vb += db * db;
        }
        let corr = cov / (vt * vb).sqrt();
        assert!(corr.abs() < 0.03, "{corr}");
    }

    #[test]
    fn seeded_generation_is_bit_identical() {
        let cfg = small(0.7, 300);
        assert_eq!(generate(&cfg).unwrap(), generate(&cfg).unwrap());
        let other = GeneratorConfig { seed: 43, ..cfg.clone() };
        assert_ne!(generate(&cfg).unwrap().features, generate(&other).unwrap().features);
    }

    #[test]
    fn target_marginal_and_block_means() {
        let cfg = small(0.9, 8000);
        let ds = generate(&cfg).unwrap();
        let n = ds.len() as f64;
        let ones = ds.targets.iter().filter(|&&t| t == 1).count() as f64;
        // 3σ binomial bound on the target marginal
        assert!((ones / n - 0.5).abs() <= 3.0 * (0.25 / n).sqrt());

        for class in 0..2 {
            let rows: Vec<usize> = (0..ds.len()).filter(|&i| ds.targets[i] == class).collect();
            let nc = rows.len() as f64;
            let tol = 4.0 * cfg.noise_sigma / nc.sqrt();
            let expected = (2.0 * class as f64 - 1.0) * cfg.sep_target / 2.0;
            for j in 0..cfg.dim_target {
                let m = rows.iter().map(|&i| ds.features.get(i, j)).sum::<f64>() / nc;
                assert!((m - expected).abs() < tol, "class {class} coord {j}: {m}");
            }
            let rows: Vec<usize> = (0..ds.len()).filter(|&i| ds.bias[0][i] == class).collect();
            let nc = rows.len() as f64;
            let tol = 4.0 * cfg.noise_sigma / nc.sqrt();
            let expected = (2.0 * class as f64 - 1.0) * cfg.sep_bias[0] / 2.0;
            for j in cfg.dim_target..cfg.dim_target + cfg.dim_bias[0] {
                let m = rows.iter().map(|&i| ds.features.get(i, j)).sum::<f64>() / nc;
                assert!((m - expected).abs() < tol, "bias class {class} coord {j}: {m}");
            }
        }
    }

    #[test]
    fn balanced_cells_are_equal() {
        let ds = balanced_test(&small(0.9, 400)).unwrap();
        let mut cells = [0usize; 4];
        for i in 0..ds.len() {
            cells[ds.targets[i] + 2 * ds.bias[0][i]] += 1;
        }
        assert_eq!(cells, [100; 4]);
        assert_eq!(empirical_correlation(&ds, 0).unwrap(), 0.5);

        let cfg = GeneratorConfig {
            n_samples: 800,
            ..GeneratorConfig::reference(&[0.9, 0.9], 1)
        };
        let ds = balanced_test(&cfg).unwrap();
        let mut cells = [0usize; 8];
        for i in 0..ds.len() {
            cells[ds.targets[i] + 2 * ds.bias[0][i] + 4 * ds.bias[1][i]] += 1;
        }
        assert_eq!(cells, [100; 8]);
    }

    #[test]
    fn balanced_rejects_indivisible_size() {
        assert!(matches!(balanced_test(&small(0.9, 402)), Err(Error::Config(_))));
    }

    #[test]
    fn hand_correlation() {
        let ds = Dataset::new(
            Tensor::zeros(vec![4, 1]),
            vec![0, 0, 1, 1],
            vec![vec![0, 1, 1, 1]],
            2,
            vec![2],
            Provenance::External,
        )
        .unwrap();
        assert_eq!(empirical_correlation(&ds, 0).unwrap(), 0.75);
    }

    #[test]
    fn invalid_configs() {
        let mut cfg = small(0.9, 10);
        cfg.rho = vec![1.5];
        assert!(generate(&cfg).is_err());
        let mut cfg = small(0.9, 10);
        cfg.dim_bias = vec![];
        assert!(generate(&cfg).is_err());
    }

    #[test]
    fn csv_round_trip_and_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv");
        let cfg = GeneratorConfig {
            n_samples: 50,
            ..GeneratorConfig::reference(&[0.8, 0.6], 3)
        };
        let ds = generate(&cfg).unwrap();
        save_csv(&ds, &path).unwrap();
        let back = load_csv(&path).unwrap();
        assert_eq!(back.features, ds.features);
        assert_eq!(back.targets, ds.targets);
        assert_eq!(back.bias, ds.bias);

        std::fs::write(&path, "").unwrap();
        assert!(matches!(load_csv(&path), Err(Error::Parse { line: 1, .. })));

        std::fs::write(&path, "t,b0,f1\n0,1,0.5\n").unwrap();
        assert!(matches!(load_csv(&path), Err(Error::Parse { line: 1, .. })));

        std::fs::write(&path, "t,b0,f0\n0,1,0.5\n1,0\n").unwrap();
        assert!(matches!(load_csv(&path), Err(Error::Parse { line: 3, .. })));

        std::fs::write(&path, "t,b0,f0\n0,-1,0.5\n").unwrap();
        assert!(matches!(load_csv(&path), Err(Error::Parse { line: 2, .. })));

        std::fs::write(&path, "t,b0,f0\n0,1,abc\n").unwrap();
        assert!(matches!(load_csv(&path), Err(Error::Parse { line: 2, .. })));
    }
}
