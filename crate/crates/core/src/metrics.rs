//! Accuracy, group-fairness gaps and the proxy-dependence score.
//!
//! Group metrics compare two groups directly; with more than two groups
//! present they average the two-group value over all unordered pairs. A rate
//! whose conditioning cell is empty is an error rather than zero.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::model::{predict_interventional, ModelParams, ProxyBank};
use crate::numeric::{softmax_rows, Tensor};

pub const POSITIVE_CLASS: usize = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub accuracy: f64,
    pub equalodds: Vec<f64>,
    pub equal_opportunity: Vec<f64>,
    pub statistical_parity: Vec<f64>,
    pub counter_p: Vec<f64>,
    pub n_evaluated: usize,
}

pub fn accuracy(predictions: &[usize], targets: &[usize]) -> Result<f64> {
    if predictions.is_empty() {
        return Err(Error::Contract("accuracy of an empty prediction set".into()));
    }
    if predictions.len() != targets.len() {
        return Err(Error::Contract(format!(
            "{} predictions for {} targets",
            predictions.len(),
            targets.len()
        )));
    }
    let hits = predictions.iter().zip(targets).filter(|(p, t)| p == t).count();
    Ok(hits as f64 / predictions.len() as f64)
}

fn distinct(values: &[usize]) -> Vec<usize> {
    values.iter().copied().collect::<BTreeSet<_>>().into_iter().collect()
}

fn check_lengths(a: usize, b: usize, what: &str) -> Result<()> {
    if a != b {
        return Err(Error::Contract(format!("{}: lengths {} and {} differ", what, a, b)));
    }
    if a == 0 {
        return Err(Error::Contract(format!("{}: empty input", what)));
    }
    Ok(())
}

fn groups_of(group_labels: &[usize]) -> Result<Vec<usize>> {
    let groups = distinct(group_labels);
    if groups.len() < 2 {
        return Err(Error::Contract(format!(
            "group metrics need at least two groups, found {:?}",
            groups
        )));
    }
    Ok(groups)
}

/// Hit and total counts for `Pr(ŷ = class | y = class, group)`.
fn recall(predictions: &[usize], targets: &[usize], groups: &[usize], group: usize, class: usize) -> Result<(usize, usize)> {
    let mut total = 0usize;
    let mut hit = 0usize;
    for ((&p, &t), &g) in predictions.iter().zip(targets).zip(groups) {
        if g == group && t == class {
            total += 1;
            if p == class {
                hit += 1;
            }
        }
    }
    if total == 0 {
        return Err(Error::UndefinedRate(format!(
            "no samples with target {} in group {}",
            class, group
        )));
    }
    Ok((hit, total))
}

/// `|a.0/a.1 − b.0/b.1|` from counts, cross-multiplied so the result is a
/// single correctly rounded division.
fn rate_gap(a: (usize, usize), b: (usize, usize)) -> f64 {
    let lhs = a.0 as u128 * b.1 as u128;
    let rhs = b.0 as u128 * a.1 as u128;
    lhs.abs_diff(rhs) as f64 / (a.1 as u128 * b.1 as u128) as f64
}

fn pairwise_mean(groups: &[usize], mut gap: impl FnMut(usize, usize) -> Result<f64>) -> Result<f64> {
    let mut total = 0.0;
    let mut pairs = 0usize;
    for (i, &a) in groups.iter().enumerate() {
        for &b in &groups[i + 1..] {
            total += gap(a, b)?;
            pairs += 1;
        }
    }
    Ok(total / pairs as f64)
}

/// Mean over target classes of the absolute per-class recall gap between groups.
pub fn equalodds(predictions: &[usize], targets: &[usize], group_labels: &[usize]) -> Result<f64> {
    check_lengths(predictions.len(), targets.len(), "equalodds")?;
    check_lengths(predictions.len(), group_labels.len(), "equalodds")?;
    let groups = groups_of(group_labels)?;
    let classes = distinct(targets);
    let mut recalls = Vec::with_capacity(groups.len());
    for &g in &groups {
        let r: Result<Vec<(usize, usize)>> = classes
            .iter()
            .map(|&c| recall(predictions, targets, group_labels, g, c))
            .collect();
        recalls.push(r?);
    }
    let index = |g: usize| groups.iter().position(|&x| x == g).expect("known group");
    pairwise_mean(&groups, |a, b| {
        let (ra, rb) = (&recalls[index(a)], &recalls[index(b)]);
        let sum: f64 = ra.iter().zip(rb).map(|(&x, &y)| rate_gap(x, y)).sum();
        Ok(sum / classes.len() as f64)
    })
}

/// Absolute true-positive-rate gap between groups.
pub fn equal_opportunity(
    predictions: &[usize],
    targets: &[usize],
    group_labels: &[usize],
    positive_class: usize,
) -> Result<f64> {
    check_lengths(predictions.len(), targets.len(), "equal_opportunity")?;
    check_lengths(predictions.len(), group_labels.len(), "equal_opportunity")?;
    let groups = groups_of(group_labels)?;
    pairwise_mean(&groups, |a, b| {
        let ra = recall(predictions, targets, group_labels, a, positive_class)?;
        let rb = recall(predictions, targets, group_labels, b, positive_class)?;
        Ok(rate_gap(ra, rb))
    })
}

/// Absolute gap in the rate of positive predictions between groups.
pub fn statistical_parity(predictions: &[usize], group_labels: &[usize], positive_class: usize) -> Result<f64> {
    check_lengths(predictions.len(), group_labels.len(), "statistical_parity")?;
    let groups = groups_of(group_labels)?;
    let rate = |g: usize| -> (usize, usize) {
        let mut n = 0usize;
        let mut pos = 0usize;
        for (&p, &gl) in predictions.iter().zip(group_labels) {
            if gl == g {
                n += 1;
                if p == positive_class {
                    pos += 1;
                }
            }
        }
        (pos, n)
    };
    pairwise_mean(&groups, |a, b| Ok(rate_gap(rate(a), rate(b))))
}

/// Mean absolute shift of the predicted class distribution when the proxy
/// block of attribute `k` is swapped between two of its classes, averaged
/// over samples and unordered class pairs. Other attributes sit at their
/// intervention blocks. A model without an attribute `k` proxy scores 0.
pub fn counter_p(params: &ModelParams, bank: &ProxyBank, x: &Tensor, k: usize) -> Result<f64> {
    if bank.is_empty() || params.proxy_width() == 0 {
        return Ok(0.0);
    }
    let table = bank
        .tables()
        .get(k)
        .ok_or_else(|| Error::Contract(format!("proxy bank has no attribute {}", k)))?;
    let n = table.class_count();
    if n < 2 {
        return Err(Error::Contract(format!(
            "counter_p needs at least two classes for attribute {}, found {}",
            k, n
        )));
    }
    let rows = x.rows();
    if rows == 0 {
        return Err(Error::Contract("counter_p of an empty input".into()));
    }
    let features = params.penultimate_features(x)?;
    let c = params.num_classes();
    let base = bank.intervention_feature();
    let offset: usize = base.blocks[..k].iter().map(|b| b.len()).sum();

    let mut per_class = Vec::with_capacity(n);
    for b in 0..n {
        let mut row: Vec<f64> = base.blocks.iter().flatten().copied().collect();
        row[offset..offset + table.dim()].copy_from_slice(table.proxy(b));
        let mut block = Vec::with_capacity(rows * row.len());
        for _ in 0..rows {
            block.extend_from_slice(&row);
        }
        let block = Tensor::new(vec![rows, row.len()], block)?;
        let logits = params.logits_from_features(&features, &block)?;
        per_class.push(softmax_rows(logits.values(), rows, c));
    }

    let mut total = 0.0;
    let mut pairs = 0usize;
    for a in 0..n {
        for b in a + 1..n {
            let diff: f64 = per_class[a]
                .iter()
                .zip(&per_class[b])
                .map(|(p, q)| (p - q).abs())
                .sum();
            total += diff / (rows * c) as f64;
            pairs += 1;
        }
    }
    Ok(total / pairs as f64)
}

/// Row-wise argmax; ties resolve to the lowest class index.
pub fn argmax_rows(probs: &Tensor) -> Vec<usize> {
    (0..probs.rows())
        .map(|i| {
            let row = probs.row(i);
            let mut best = 0;
            for (j, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}

/// Scores interventional predictions on `ds`. The dataset's bias labels are
/// read only by the group metrics.
pub fn evaluate(params: &ModelParams, bank: &ProxyBank, ds: &Dataset) -> Result<(MetricsReport, Vec<usize>)> {
    let map: Vec<Option<usize>> = (0..ds.num_bias())
        .map(|k| (k < bank.num_attributes()).then_some(k))
        .collect();
    evaluate_mapped(params, bank, ds, &map, true)
}

/// Like [`evaluate`], for a bank whose attributes are a subset of the
/// dataset's: `bank_index[k]` names the bank attribute proxying dataset
/// attribute `k`, if any. Unproxied attributes score a Counter@P of 0.
pub fn evaluate_mapped(
    params: &ModelParams,
    bank: &ProxyBank,
    ds: &Dataset,
    bank_index: &[Option<usize>],
    with_counter_p: bool,
) -> Result<(MetricsReport, Vec<usize>)> {
    if bank_index.len() != ds.num_bias() {
        return Err(Error::Contract(format!(
            "attribute map has {} entries for {} bias attributes",
            bank_index.len(),
            ds.num_bias()
        )));
    }
    let probs = predict_interventional(params, bank, &ds.features)?;
    let predictions = argmax_rows(&probs);
    let mut report = MetricsReport {
        accuracy: accuracy(&predictions, &ds.targets)?,
        equalodds: Vec::new(),
        equal_opportunity: Vec::new(),
        statistical_parity: Vec::new(),
        counter_p: Vec::new(),
        n_evaluated: ds.len(),
    };
    for (groups, slot) in ds.bias.iter().zip(bank_index) {
        report.equalodds.push(equalodds(&predictions, &ds.targets, groups)?);
        report
            .equal_opportunity
            .push(equal_opportunity(&predictions, &ds.targets, groups, POSITIVE_CLASS)?);
        report
            .statistical_parity
            .push(statistical_parity(&predictions, groups, POSITIVE_CLASS)?);
        let cp = match slot {
            Some(j) if with_counter_p => counter_p(params, bank, &ds.features, *j)?,
            _ => 0.0,
        };
        report.counter_p.push(cp);
    }
    Ok((report, predictions))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Linear, ProxyTable};

    /// group 0: every sample correct; group 1: class 0 recall 3/4, class 1 recall 2/4.
    pub(crate) fn confusion_fixture() -> (Vec<usize>, Vec<usize>, Vec<usize>) {
        let targets = vec![0, 0, 1, 1, 0, 0, 0, 0, 1, 1, 1, 1];
        let preds = vec![0, 0, 1, 1, 0, 0, 0, 1, 1, 1, 0, 0];
        let groups = vec![0, 0, 0, 0, 1, 1, 1, 1, 1, 1, 1, 1];
        (preds, targets, groups)
    }

    #[test]
    fn accuracy_cases() {
        assert_eq!(accuracy(&[1, 0, 1], &[1, 0, 1]).unwrap(), 1.0);
        assert_eq!(accuracy(&[0, 1], &[1, 0]).unwrap(), 0.0);
        assert_eq!(accuracy(&[1, 1, 0, 0], &[1, 1, 0, 1]).unwrap(), 0.75);
        assert!(matches!(accuracy(&[], &[]), Err(Error::Contract(_))));
    }

    #[test]
    fn equalodds_fixture() {
        let (p, t, g) = confusion_fixture();
        assert_eq!(equalodds(&p, &t, &g).unwrap(), 0.375);
        let swapped: Vec<usize> = g.iter().map(|x| 1 - x).collect();
        assert_eq!(equalodds(&p, &t, &swapped).unwrap(), 0.375);
        assert_eq!(equalodds(&t, &t, &g).unwrap(), 0.0);
    }

    #[test]
    fn equalodds_empty_cell_is_an_error() {
        let t = vec![0, 1, 0];
        let g = vec![0, 0, 1];
        match equalodds(&t, &t, &g) {
            Err(Error::UndefinedRate(msg)) => assert!(msg.contains("target 1") && msg.contains("group 1")),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn equal_opportunity_fixture() {
        let targets = vec![1, 1, 1, 1, 1, 1, 1, 1];
        let preds = vec![1, 1, 1, 1, 1, 1, 1, 0];
        let groups = vec![0, 0, 0, 0, 1, 1, 1, 1];
        assert_eq!(equal_opportunity(&preds, &targets, &groups, 1).unwrap(), 0.25);
        assert_eq!(equal_opportunity(&targets, &targets, &groups, 1).unwrap(), 0.0);

        // binary case: equals the positive-class term of equalodds
        let (p, t, g) = confusion_fixture();
        assert_eq!(equal_opportunity(&p, &t, &g, 1).unwrap(), 0.5);
    }

    #[test]
    fn statistical_parity_fixture() {
        let preds = vec![1, 1, 1, 0, 0, 1, 0, 0, 0, 0];
        let groups = vec![0, 0, 0, 0, 0, 1, 1, 1, 1, 1];
        assert_eq!(statistical_parity(&preds, &groups, 1).unwrap(), 0.4);
        assert_eq!(statistical_parity(&[1, 0, 1, 0], &[0, 0, 1, 1], 1).unwrap(), 0.0);
    }

    #[test]
    fn three_groups_average_pairs() {
        // positive rates 1, 0, 0.5 → pair gaps 1, 0.5, 0.5
        let preds = vec![1, 1, 0, 0, 1, 0];
        let groups = vec![0, 0, 1, 1, 2, 2];
        assert!((statistical_parity(&preds, &groups, 1).unwrap() - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn single_group_is_rejected() {
        assert!(statistical_parity(&[1, 0], &[0, 0], 1).is_err());
    }

    fn affine_model(proxy_weights: [f64; 2]) -> (ModelParams, ProxyBank) {
        let params = ModelParams {
            backbone: vec![Linear {
                weight: Tensor::from_rows(&[[1.0]]).unwrap(),
                bias: Tensor::from_rows(&[[0.0]]).unwrap(),
            }],
            head: Linear {
                weight: Tensor::from_rows(&[[0.5, -0.5], [proxy_weights[0], proxy_weights[1]]]).unwrap(),
                bias: Tensor::from_rows(&[[0.0, 0.0]]).unwrap(),
            },
        };
        let table = ProxyTable::new(Tensor::from_rows(&[[0.0], [1.0]]).unwrap(), vec![0.3], vec![0.5, 0.5]).unwrap();
        (params, ProxyBank::from_tables(vec![table]))
    }

    #[test]
    fn counter_p_zero_cases() {
        let (params, bank) = affine_model([0.0, 0.0]);
        let x = Tensor::from_rows(&[[1.0], [2.0]]).unwrap();
        assert_eq!(counter_p(&params, &bank, &x, 0).unwrap(), 0.0);

        let (params, _) = affine_model([2.0, -1.0]);
        let same = ProxyTable::new(Tensor::from_rows(&[[0.4], [0.4]]).unwrap(), vec![0.3], vec![0.5, 0.5]).unwrap();
        let bank = ProxyBank::from_tables(vec![same]);
        assert_eq!(counter_p(&params, &bank, &x, 0).unwrap(), 0.0);
    }

    #[test]
    fn counter_p_by_hand() {
        let (params, bank) = affine_model([2.0, -1.0]);
        let x = Tensor::from_rows(&[[1.0]]).unwrap();
        // features = relu(1) = 1. p=0: logits (0.5, -0.5); p=1: logits (2.5, -1.5)
        let s = |a: f64, b: f64| 1.0 / (1.0 + (b - a).exp());
        let p0 = s(0.5, -0.5);
        let p1 = s(2.5, -1.5);
        // (1/C)·(|Δ class 0| + |Δ class 1|) with C = 2
        let expected = ((p1 - p0).abs() + (p0 - p1).abs()) / 2.0;
        let got = counter_p(&params, &bank, &x, 0).unwrap();
        assert!((got - expected).abs() < 1e-15, "{got} vs {expected}");
    }

    #[test]
    fn counter_p_requires_two_classes() {
        let (params, _) = affine_model([1.0, 1.0]);
        let t = ProxyTable::new(Tensor::from_rows(&[[0.0]]).unwrap(), vec![0.3], vec![1.0]).unwrap();
        let bank = ProxyBank::from_tables(vec![t]);
        let x = Tensor::from_rows(&[[1.0]]).unwrap();
        assert!(matches!(counter_p(&params, &bank, &x, 0), Err(Error::Contract(_))));
    }
}
