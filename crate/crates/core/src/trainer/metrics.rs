//! Micro-averaged F1 and the significance statistics used to compare runs.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};

/// Pooled decision counts.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

impl Counts {
    /// Adds one example; both sides are treated as sets.
    pub fn add(&mut self, predicted: &[usize], gold: &[usize]) {
        let p: BTreeSet<usize> = predicted.iter().copied().collect();
        let g: BTreeSet<usize> = gold.iter().copied().collect();
        let tp = p.intersection(&g).count();
        self.tp += tp;
        self.fp += p.len() - tp;
        self.fn_ += g.len() - tp;
    }

    pub fn metrics(&self) -> Metrics {
        let precision = ratio(self.tp, self.tp + self.fp);
        let recall = ratio(self.tp, self.tp + self.fn_);
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        Metrics { precision, recall, f1 }
    }
}

pub fn f1_micro(predictions: &[Vec<usize>], golds: &[Vec<usize>]) -> Result<Metrics> {
    if predictions.len() != golds.len() {
        return Err(Error::Usage(format!(
            "{} predictions for {} gold sets",
            predictions.len(),
            golds.len()
        )));
    }
    let mut c = Counts::default();
    for (p, g) in predictions.iter().zip(golds) {
        c.add(p, g);
    }
    Ok(c.metrics())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TTest {
    pub t: f64,
    pub dof: f64,
    /// One-tailed p for mean(a) > mean(b).
    pub p: f64,
}

fn mean_var(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, var)
}

/// Welch's unequal-variance t-test, one-tailed toward `a > b`.
///
/// When both samples have zero variance the statistic is undefined: equal
/// means give `p = 0.5`, otherwise `p` is 0 or 1 by the sign of the gap.
pub fn t_test_one_tailed(a: &[f64], b: &[f64]) -> Result<TTest> {
    if a.len() < 2 || b.len() < 2 {
        return Err(Error::Usage(format!("t-test needs >= 2 scores per side, got {} and {}", a.len(), b.len())));
    }
    if a.iter().chain(b).any(|x| !x.is_finite()) {
        return Err(Error::NonFinite { op: "t_test" });
    }
    let (ma, va) = mean_var(a);
    let (mb, vb) = mean_var(b);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let sa = va / na;
    let sb = vb / nb;
    let se2 = sa + sb;
    let dof_floor = (na + nb - 2.0).max(1.0);
    if se2 == 0.0 {
        let (t, p) = match ma.partial_cmp(&mb) {
            Some(std::cmp::Ordering::Greater) => (f64::INFINITY, 0.0),
            Some(std::cmp::Ordering::Less) => (f64::NEG_INFINITY, 1.0),
            _ => (0.0, 0.5),
        };
        return Ok(TTest { t, dof: dof_floor, p });
    }
    let t = (ma - mb) / se2.sqrt();
    let dof = se2 * se2 / (sa * sa / (na - 1.0) + sb * sb / (nb - 1.0));
    let dist = StudentsT::new(0.0, 1.0, dof).map_err(|e| Error::Usage(format!("t distribution: {e}")))?;
    Ok(TTest { t, dof, p: dist.sf(t) })
}

/// `*` below 0.05, `**` below 0.01.
pub fn significance_marker(p: Option<f64>) -> &'static str {
    match p {
        Some(p) if p < 0.01 => "**",
        Some(p) if p < 0.05 => "*",
        _ => "",
    }
}

/// Ranks starting at 1; ties share their average rank.
fn ranks(x: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&i, &j| x[i].total_cmp(&x[j]));
    let mut r = vec![0.0; x.len()];
    let mut k = 0;
    while k < idx.len() {
        let mut e = k;
        while e + 1 < idx.len() && x[idx[e + 1]] == x[idx[k]] {
            e += 1;
        }
        let avg = (k + e) as f64 / 2.0 + 1.0;
        for &i in &idx[k..=e] {
            r[i] = avg;
        }
        k = e + 1;
    }
    r
}

/// Spearman rank correlation (Pearson correlation of average ranks).
pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(Error::Usage(format!("spearman needs equal lengths >= 2, got {} and {}", x.len(), y.len())));
    }
    let (rx, ry) = (ranks(x), ranks(y));
    let n = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Ok(0.0);
    }
    Ok(sxy / (sxx * syy).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn f1_examples() {
        let m = f1_micro(&[vec![0, 1]], &[vec![0, 1]]).unwrap();
        assert_eq!(m.f1, 1.0);
        assert_eq!(f1_micro(&[vec![0]], &[vec![1]]).unwrap().f1, 0.0);
        assert_eq!(f1_micro(&[vec![]], &[vec![]]).unwrap().f1, 0.0);
        let c = Counts { tp: 3, fp: 1, fn_: 2 }.metrics();
        assert_eq!((c.precision, c.recall), (0.75, 0.6));
        assert!((c.f1 - 0.6667).abs() < 1e-4);
        assert!(f1_micro(&[vec![]], &[]).is_err());
    }

    // Reference values from scipy.stats.ttest_ind(a, b, equal_var=False,
    // alternative="greater").
    #[test]
    fn welch_reference() {
        let r = t_test_one_tailed(&[75.0, 75.5, 76.0], &[74.0, 74.2, 74.4]).unwrap();
        assert!((r.t - 4.181_238_885_867_383).abs() < 1e-9);
        assert!((r.p - 0.016_127_185_353_077_57).abs() < 1e-4);
        let r = t_test_one_tailed(&[1.0, 2.0, 4.0, 3.5], &[2.0, 2.5, 2.2]).unwrap();
        assert!((r.t - 0.556_651_713_904_979_4).abs() < 1e-9);
        assert!((r.p - 0.306_839_698_710_540_3).abs() < 1e-4);
    }

    #[test]
    fn welch_edge_cases() {
        let a = [1.0, 2.0, 3.0];
        assert_eq!(t_test_one_tailed(&a, &a).unwrap().p, 0.5);
        assert_eq!(t_test_one_tailed(&[1.0, 1.0], &[1.0, 1.0]).unwrap().p, 0.5);
        let shifted = [11.0, 11.0, 11.0, 11.0];
        assert!(t_test_one_tailed(&shifted, &[1.0, 1.0, 1.0, 1.0]).unwrap().p < 1e-6);
        let far: Vec<f64> = a.iter().map(|x| x + 10.0).collect();
        assert!(t_test_one_tailed(&far, &a).unwrap().p < 1e-3);
        assert!(t_test_one_tailed(&[1.0], &a).is_err());
    }

    #[test]
    fn markers() {
        assert_eq!(significance_marker(Some(0.005)), "**");
        assert_eq!(significance_marker(Some(0.01)), "*");
        assert_eq!(significance_marker(Some(0.05)), "");
        assert_eq!(significance_marker(None), "");
    }

    // scipy.stats.spearmanr reference.
    #[test]
    fn spearman_reference() {
        let d: Vec<f64> = (1..=7).map(f64::from).collect();
        let w = [0.3, 0.2, 0.21, 0.1, 0.05, 0.04, 0.01];
        assert!((spearman(&d, &w).unwrap() + 0.964_285_714_285_714_5).abs() < 1e-12);
        assert_eq!(spearman(&[1.0, 2.0, 2.0], &[1.0, 2.0, 2.0]).unwrap(), 1.0);
    }
}
