//! Rank statistics and per-item fit judgments.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};
use thiserror::Error;

use crate::codec::ScoreOutcome;
use crate::norms::{normalize_rating, Dataset, RatingScale};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum StatsError {
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("need at least {needed} pairs, got {got}")]
    TooFew { needed: usize, got: usize },
    #[error("input contains NaN")]
    NaN,
    #[error("ranks have zero variance; rho is undefined")]
    DegenerateRanks,
    #[error("|rho| = {0} exceeds 1")]
    RhoOutOfRange(f64),
    #[error("outcome for unknown item '{0}'")]
    UnknownItem(String),
    #[error("duplicate outcome for item '{0}'")]
    DuplicateOutcome(String),
    #[error("value {0} outside expected range")]
    OutOfRange(f64),
    #[error("threshold {0} must lie in (0, 1)")]
    BadThreshold(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationResult {
    pub rho: f64,
    /// Defined only when n >= 3.
    pub p_value: Option<f64>,
    pub n: usize,
    pub excluded: usize,
    pub backoff_count: usize,
    pub incoherent_count: usize,
}

/// Fractional ranks (1-based); tied values share the mean of their positions.
pub fn average_ranks(xs: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..xs.len()).collect();
    order.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut ranks = vec![0.0; xs.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && xs[order[j + 1]] == xs[order[i]] {
            j += 1;
        }
        let shared = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            ranks[idx] = shared;
        }
        i = j + 1;
    }
    ranks
}

fn pearson(xs: &[f64], ys: &[f64]) -> Result<f64, StatsError> {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        let (dx, dy) = (x - mx, y - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(StatsError::DegenerateRanks);
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Spearman's rho: Pearson correlation of the average-rank vectors.
pub fn spearman(xs: &[f64], ys: &[f64]) -> Result<CorrelationResult, StatsError> {
    if xs.len() != ys.len() {
        return Err(StatsError::LengthMismatch(xs.len(), ys.len()));
    }
    if xs.len() < 2 {
        return Err(StatsError::TooFew { needed: 2, got: xs.len() });
    }
    if xs.iter().chain(ys).any(|v| v.is_nan()) {
        return Err(StatsError::NaN);
    }
    let rho = pearson(&average_ranks(xs), &average_ranks(ys))?;
    let n = xs.len();
    Ok(CorrelationResult {
        rho,
        p_value: p_value(rho, n).ok(),
        n,
        excluded: 0,
        backoff_count: 0,
        incoherent_count: 0,
    })
}

/// Two-sided p-value from t = rho * sqrt((n-2) / (1-rho^2)) with n-2 d.o.f.
pub fn p_value(rho: f64, n: usize) -> Result<f64, StatsError> {
    if n < 3 {
        return Err(StatsError::TooFew { needed: 3, got: n });
    }
    if rho.is_nan() {
        return Err(StatsError::NaN);
    }
    if rho.abs() > 1.0 {
        return Err(StatsError::RhoOutOfRange(rho));
    }
    if rho.abs() == 1.0 {
        return Ok(0.0);
    }
    let df = (n - 2) as f64;
    let t = rho * (df / (1.0 - rho * rho)).sqrt();
    let dist = StudentsT::new(0.0, 1.0, df).expect("df > 0");
    Ok((2.0 * dist.sf(t.abs())).clamp(0.0, 1.0))
}

pub const EXACT_PERMUTATION_MAX_N: usize = 9;

/// Exact two-sided permutation p-value: the share of all n! pairings whose
/// |rho| is at least the observed |rho|. Limited to n <= 9.
pub fn p_value_exact(xs: &[f64], ys: &[f64]) -> Result<f64, StatsError> {
    let observed = spearman(xs, ys)?.rho.abs();
    let n = xs.len();
    if n > EXACT_PERMUTATION_MAX_N {
        return Err(StatsError::OutOfRange(n as f64));
    }
    let rx = average_ranks(xs);
    let mut ry = average_ranks(ys);
    let (mut hits, mut total) = (0u64, 0u64);
    let mut visit = |perm: &[f64]| {
        total += 1;
        if pearson(&rx, perm).map(|r| r.abs() >= observed - 1e-12).unwrap_or(false) {
            hits += 1;
        }
    };
    // Heap's algorithm.
    let mut c = vec![0usize; n];
    visit(&ry);
    let mut i = 0;
    while i < n {
        if c[i] < i {
            if i % 2 == 0 {
                ry.swap(0, i);
            } else {
                ry.swap(c[i], i);
            }
            visit(&ry);
            c[i] += 1;
            i = 0;
        } else {
            c[i] = 0;
            i += 1;
        }
    }
    Ok(hits as f64 / total as f64)
}

/// Pairs human ratings with model values by item id (sorted by id) and
/// correlates them. Items of `dataset` without an outcome count as excluded.
pub fn correlate_experiment(dataset: &Dataset, outcomes: &[ScoreOutcome]) -> Result<CorrelationResult, StatsError> {
    let human: HashMap<&str, f64> = dataset
        .items
        .iter()
        .map(|it| (it.item_id.as_str(), it.human_rating))
        .collect();
    let mut pairs: Vec<(&str, f64, f64)> = Vec::with_capacity(outcomes.len());
    for o in outcomes {
        let h = *human
            .get(o.item_id.as_str())
            .ok_or_else(|| StatsError::UnknownItem(o.item_id.clone()))?;
        pairs.push((o.item_id.as_str(), h, o.value));
    }
    pairs.sort_by(|a, b| a.0.cmp(b.0));
    if let Some(w) = pairs.windows(2).find(|w| w[0].0 == w[1].0) {
        return Err(StatsError::DuplicateOutcome(w[0].0.to_string()));
    }
    if pairs.len() < 3 {
        return Err(StatsError::TooFew { needed: 3, got: pairs.len() });
    }
    let hs: Vec<f64> = pairs.iter().map(|p| p.1).collect();
    let ms: Vec<f64> = pairs.iter().map(|p| p.2).collect();
    let mut result = spearman(&hs, &ms)?;
    result.excluded = dataset.items.len().saturating_sub(pairs.len());
    result.backoff_count = outcomes.iter().filter(|o| o.source.is_backoff()).count();
    result.incoherent_count = outcomes.iter().map(ScoreOutcome::incoherent).sum();
    Ok(result)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FitLabel {
    Good,
    Bad,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitJudgment {
    pub item_id: String,
    pub human_norm: f64,
    pub model_value: f64,
    pub diff: f64,
    pub label: FitLabel,
    pub threshold: f64,
}

/// Good iff |normalized human rating - model value| < threshold. A diff
/// exactly equal to the threshold is Bad.
pub fn classify_fit(
    item_id: &str,
    human_rating: f64,
    scale: RatingScale,
    model_value: f64,
    threshold: f64,
) -> Result<FitJudgment, StatsError> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(StatsError::BadThreshold(threshold));
    }
    if !(0.0..=1.0).contains(&model_value) {
        return Err(StatsError::OutOfRange(model_value));
    }
    let human_norm = normalize_rating(human_rating, scale).map_err(|_| StatsError::OutOfRange(human_rating))?;
    let diff = (human_norm - model_value).abs();
    Ok(FitJudgment {
        item_id: item_id.to_string(),
        human_norm,
        model_value,
        diff,
        label: if diff < threshold { FitLabel::Good } else { FitLabel::Bad },
        threshold,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn perfect_orders() {
        assert_eq!(spearman(&[1.0, 2.0, 3.0], &[10.0, 20.0, 30.0]).unwrap().rho, 1.0);
        assert_eq!(spearman(&[1.0, 2.0, 3.0], &[30.0, 20.0, 10.0]).unwrap().rho, -1.0);
    }

    #[test]
    fn ties_match_reference() {
        // scipy.stats.spearmanr([1,2,2,4],[1,3,2,4])
        let r = spearman(&[1.0, 2.0, 2.0, 4.0], &[1.0, 3.0, 2.0, 4.0]).unwrap();
        assert!((r.rho - 0.9486832980505139).abs() < 1e-12);
        assert_eq!(average_ranks(&[3.0, 1.0, 3.0, 3.0]), [3.0, 1.0, 3.0, 3.0]);
        assert_eq!(average_ranks(&[5.0, 1.0, 5.0]), [2.5, 1.0, 2.5]);
    }

    #[test]
    fn spearman_errors() {
        assert_eq!(spearman(&[1.0], &[1.0]), Err(StatsError::TooFew { needed: 2, got: 1 }));
        assert_eq!(spearman(&[1.0, 2.0], &[1.0]), Err(StatsError::LengthMismatch(2, 1)));
        assert_eq!(spearman(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]), Err(StatsError::DegenerateRanks));
        assert_eq!(spearman(&[1.0, f64::NAN], &[1.0, 2.0]), Err(StatsError::NaN));
        assert_eq!(spearman(&[1.0, 2.0], &[2.0, 1.0]).unwrap().p_value, None);
    }

    #[test]
    fn p_values() {
        assert!((p_value(0.0, 5).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(p_value(1.0, 10).unwrap(), 0.0);
        assert_eq!(p_value(-1.0, 10).unwrap(), 0.0);
        // scipy: 2 * t.sf(0.5 * sqrt(18 / 0.75), 18)
        assert!((p_value(0.5, 20).unwrap() - 0.024769558804109703).abs() < 5e-3);
        assert!((p_value(0.5, 20).unwrap() - 0.024769558804109703).abs() < 1e-9);
        assert!((p_value(-0.3, 12).unwrap() - 0.34343857105468767).abs() < 1e-9);
        assert!(p_value(0.5, 2).is_err());
    }

    #[test]
    fn exact_permutation_p() {
        // n = 4, perfect order: only the identity and reversal reach |rho| = 1.
        let p = p_value_exact(&[1.0, 2.0, 3.0, 4.0], &[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert!((p - 2.0 / 24.0).abs() < 1e-12);
        let xs: Vec<f64> = (0..10).map(f64::from).collect();
        assert!(p_value_exact(&xs, &xs).is_err());
    }

    #[test]
    fn classify_cases() {
        let s = RatingScale::LIKERT_7;
        let j = classify_fit("a", 6.5, s, 0.75, 0.25).unwrap();
        assert!((j.diff - 0.16667).abs() < 1e-5);
        assert_eq!(j.label, FitLabel::Good);
        let j = classify_fit("b", 7.0, s, 0.5, 0.25).unwrap();
        assert_eq!(j.diff, 0.5);
        assert_eq!(j.label, FitLabel::Bad);
        let j = classify_fit("c", 4.0, s, 0.5, 0.01).unwrap();
        assert_eq!(j.diff, 0.0);
        assert_eq!(j.label, FitLabel::Good);
        // boundary: diff == threshold is Bad
        let j = classify_fit("d", 4.0, s, 0.75, 0.25).unwrap();
        assert_eq!(j.diff, 0.25);
        assert_eq!(j.label, FitLabel::Bad);
        assert!(classify_fit("e", 4.0, s, 0.5, 0.0).is_err());
        assert!(classify_fit("e", 4.0, s, 0.5, 1.0).is_err());
    }

    fn with_ties() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
        (3usize..30).prop_flat_map(|n| {
            (
                prop::collection::vec(0u8..8, n).prop_map(|v| v.into_iter().map(f64::from).collect()),
                prop::collection::vec(-50.0f64..50.0, n),
            )
        })
    }

    proptest! {
        #[test]
        fn symmetric_and_bounded((xs, ys) in with_ties()) {
            match (spearman(&xs, &ys), spearman(&ys, &xs)) {
                (Ok(a), Ok(b)) => {
                    prop_assert!((a.rho - b.rho).abs() < 1e-12);
                    prop_assert!((-1.0..=1.0).contains(&a.rho));
                    let p = a.p_value.unwrap();
                    prop_assert!((0.0..=1.0).contains(&p));
                }
                (Err(a), Err(b)) => prop_assert_eq!(a, b),
                _ => prop_assert!(false, "asymmetric failure"),
            }
        }

        #[test]
        fn monotone_invariance((xs, ys) in with_ties(), scale in 0.1f64..5.0, shift in -3.0f64..3.0) {
            if let Ok(base) = spearman(&xs, &ys) {
                let tx: Vec<f64> = xs.iter().map(|x| (scale * x + shift).exp()).collect();
                let r = spearman(&tx, &ys).unwrap();
                prop_assert!((r.rho - base.rho).abs() < 1e-12);
            }
        }

        #[test]
        fn threshold_monotonicity(h in 1.0f64..=7.0, m in 0.0f64..=1.0, t1 in 0.01f64..0.99, t2 in 0.01f64..0.99) {
            let (lo, hi) = if t1 <= t2 { (t1, t2) } else { (t2, t1) };
            let a = classify_fit("x", h, RatingScale::LIKERT_7, m, lo).unwrap();
            let b = classify_fit("x", h, RatingScale::LIKERT_7, m, hi).unwrap();
            if a.label == FitLabel::Good {
                prop_assert_eq!(b.label, FitLabel::Good);
            }
        }
    }
}
