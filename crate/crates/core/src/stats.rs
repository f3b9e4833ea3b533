//! Paired significance tests and effect sizes for comparing two prediction sets.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;
use thiserror::Error;

/// Below this many discordant pairs McNemar uses the exact binomial test.
pub const MCNEMAR_EXACT_BELOW: usize = 25;
/// Up to this many nonzero differences Wilcoxon uses the exact distribution.
pub const WILCOXON_EXACT_MAX: usize = 25;

#[derive(Debug, Error, PartialEq)]
pub enum StatsError {
    #[error("no discordant pairs: p = 1 and the odds ratio is undefined")]
    NoDiscordantPairs,
    #[error("all paired differences are zero: p = 1")]
    AllZeroDifferences,
    #[error("sample is empty")]
    EmptySample,
    #[error("sample contains a non-finite value")]
    NonFinite,
    #[error("p-value {0} outside [0, 1]")]
    InvalidPValue(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Magnitude {
    Negligible,
    Small,
    Medium,
    Large,
}

impl Magnitude {
    pub fn of(d: f64) -> Self {
        let a = d.abs();
        if a < 0.10 {
            Magnitude::Negligible
        } else if a < 0.33 {
            Magnitude::Small
        } else if a < 0.474 {
            Magnitude::Medium
        } else {
            Magnitude::Large
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum Effect {
    OddsRatio { value: f64 },
    CliffsDelta { value: f64, magnitude: Magnitude },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatResult {
    pub test_name: String,
    pub statistic: f64,
    pub p_value_raw: f64,
    pub p_value_adjusted: Option<f64>,
    pub effect: Effect,
}

/// How the Cliff's delta attached to a Wilcoxon result is computed.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CliffsVariant {
    /// Pair-count formula over the two columns, ignoring the pairing.
    #[default]
    Columns,
    /// Share of pairs where `x > y` minus share where `x < y`.
    PairedSign,
}

fn binomial_pmf_half(n: usize, k: usize) -> f64 {
    let mut c = 1.0f64;
    for i in 0..k {
        c = c * (n - i) as f64 / (i + 1) as f64;
    }
    c * 0.5f64.powi(n as i32)
}

/// Two-sided exact p-value of `k` successes in `Bin(n, 1/2)`.
pub fn binomial_two_sided_half(n: usize, k: usize) -> f64 {
    let low = k.min(n - k);
    let tail: f64 = (0..=low).map(|i| binomial_pmf_half(n, i)).sum();
    (2.0 * tail).min(1.0)
}

/// McNemar's test on paired correctness. `b` counts pairs where only the
/// first system is correct, `c` where only the second is; OR = b / c.
pub fn mcnemar(paired: &[(bool, bool)]) -> Result<StatResult, StatsError> {
    let b = paired.iter().filter(|&&(x, y)| x && !y).count();
    let c = paired.iter().filter(|&&(x, y)| !x && y).count();
    mcnemar_counts(b, c)
}

pub fn mcnemar_counts(b: usize, c: usize) -> Result<StatResult, StatsError> {
    let n = b + c;
    if n == 0 {
        return Err(StatsError::NoDiscordantPairs);
    }
    let odds = if c == 0 {
        f64::INFINITY
    } else {
        b as f64 / c as f64
    };
    let diff = (b as f64 - c as f64).abs();
    let (statistic, p) = if n < MCNEMAR_EXACT_BELOW {
        (b.min(c) as f64, binomial_two_sided_half(n, b))
    } else {
        let chi2 = (diff - 1.0).max(0.0).powi(2) / n as f64;
        (chi2, erfc((chi2 / 2.0).sqrt()))
    };
    Ok(StatResult {
        test_name: "mcnemar".to_string(),
        statistic,
        p_value_raw: p.clamp(0.0, 1.0),
        p_value_adjusted: None,
        effect: Effect::OddsRatio { value: odds },
    })
}

/// Ranks of `values` (1-based), tied values sharing their average rank.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&i, &j| values[i].total_cmp(&values[j]));
    let mut ranks = vec![0.0; values.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && values[order[end]] == values[order[start]] {
            end += 1;
        }
        let rank = (start + 1 + end) as f64 / 2.0;
        for &idx in &order[start..end] {
            ranks[idx] = rank;
        }
        start = end;
    }
    ranks
}

fn check_finite(values: impl IntoIterator<Item = f64>) -> Result<(), StatsError> {
    if values.into_iter().all(f64::is_finite) {
        Ok(())
    } else {
        Err(StatsError::NonFinite)
    }
}

/// Exact two-sided p for the positive-rank sum under random signs.
/// Ranks are doubled so tied averages stay integral.
fn wilcoxon_exact_p(ranks: &[f64], w_plus: f64) -> f64 {
    let doubled: Vec<usize> = ranks.iter().map(|r| (r * 2.0).round() as usize).collect();
    let max: usize = doubled.iter().sum();
    let mut ways = vec![0.0f64; max + 1];
    ways[0] = 1.0;
    for &r in &doubled {
        for s in (r..=max).rev() {
            ways[s] += ways[s - r];
        }
    }
    let total: f64 = ways.iter().sum();
    let observed = (w_plus * 2.0).round() as usize;
    let lower: f64 = ways[..=observed].iter().sum::<f64>() / total;
    let upper: f64 = ways[observed..].iter().sum::<f64>() / total;
    (2.0 * lower.min(upper)).min(1.0)
}

fn wilcoxon_normal_p(ranks: &[f64], abs_diffs: &[f64], w_plus: f64) -> f64 {
    let n = ranks.len() as f64;
    let mean = n * (n + 1.0) / 4.0;
    let mut sorted = abs_diffs.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut tie_term = 0.0;
    let mut i = 0;
    while i < sorted.len() {
        let mut j = i + 1;
        while j < sorted.len() && sorted[j] == sorted[i] {
            j += 1;
        }
        let t = (j - i) as f64;
        tie_term += t * t * t - t;
        i = j;
    }
    let var = n * (n + 1.0) * (2.0 * n + 1.0) / 24.0 - tie_term / 48.0;
    if var <= 0.0 {
        return 1.0;
    }
    let z = (w_plus - mean) / var.sqrt();
    erfc(z.abs() / std::f64::consts::SQRT_2).min(1.0)
}

/// Wilcoxon signed-rank test with the column-wise Cliff's delta as effect.
pub fn wilcoxon_signed_rank(paired: &[(f64, f64)]) -> Result<StatResult, StatsError> {
    wilcoxon_signed_rank_with(paired, CliffsVariant::Columns)
}

/// Wilcoxon signed-rank test. The statistic is `min(W+, W-)`.
pub fn wilcoxon_signed_rank_with(
    paired: &[(f64, f64)],
    variant: CliffsVariant,
) -> Result<StatResult, StatsError> {
    check_finite(paired.iter().flat_map(|&(x, y)| [x, y]))?;
    let diffs: Vec<f64> = paired
        .iter()
        .map(|&(x, y)| x - y)
        .filter(|d| *d != 0.0)
        .collect();
    if diffs.is_empty() {
        return Err(StatsError::AllZeroDifferences);
    }
    let abs: Vec<f64> = diffs.iter().map(|d| d.abs()).collect();
    let ranks = average_ranks(&abs);
    let w_plus: f64 = diffs
        .iter()
        .zip(&ranks)
        .filter(|(d, _)| **d > 0.0)
        .map(|(_, r)| r)
        .sum();
    let total = (diffs.len() * (diffs.len() + 1)) as f64 / 2.0;
    let p = if diffs.len() <= WILCOXON_EXACT_MAX {
        wilcoxon_exact_p(&ranks, w_plus)
    } else {
        wilcoxon_normal_p(&ranks, &abs, w_plus)
    };
    let delta = match variant {
        CliffsVariant::Columns => {
            let (a, b): (Vec<f64>, Vec<f64>) = paired.iter().copied().unzip();
            cliffs_delta_value(&a, &b)?
        }
        CliffsVariant::PairedSign => paired_sign_delta(paired)?,
    };
    Ok(StatResult {
        test_name: "wilcoxon".to_string(),
        statistic: w_plus.min(total - w_plus),
        p_value_raw: p.clamp(0.0, 1.0),
        p_value_adjusted: None,
        effect: Effect::CliffsDelta {
            value: delta,
            magnitude: Magnitude::of(delta),
        },
    })
}

/// `(#{a_i > b_j} - #{a_i < b_j}) / (|a| |b|)`, counted by binary search.
pub fn cliffs_delta_value(a: &[f64], b: &[f64]) -> Result<f64, StatsError> {
    if a.is_empty() || b.is_empty() {
        return Err(StatsError::EmptySample);
    }
    check_finite(a.iter().chain(b).copied())?;
    let mut sorted = b.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut score: i64 = 0;
    for &x in a {
        let below = sorted.partition_point(|&y| y < x);
        let not_above = sorted.partition_point(|&y| y <= x);
        score += below as i64 - (sorted.len() - not_above) as i64;
    }
    Ok(score as f64 / (a.len() * b.len()) as f64)
}

pub fn paired_sign_delta(paired: &[(f64, f64)]) -> Result<f64, StatsError> {
    if paired.is_empty() {
        return Err(StatsError::EmptySample);
    }
    check_finite(paired.iter().flat_map(|&(x, y)| [x, y]))?;
    let score: i64 = paired
        .iter()
        .map(|(x, y)| match x.partial_cmp(y) {
            Some(Ordering::Greater) => 1,
            Some(Ordering::Less) => -1,
            _ => 0,
        })
        .sum();
    Ok(score as f64 / paired.len() as f64)
}

pub fn cliffs_delta(a: &[f64], b: &[f64]) -> Result<StatResult, StatsError> {
    let d = cliffs_delta_value(a, b)?;
    Ok(StatResult {
        test_name: "cliffs_delta".to_string(),
        statistic: d,
        p_value_raw: 1.0,
        p_value_adjusted: None,
        effect: Effect::CliffsDelta {
            value: d,
            magnitude: Magnitude::of(d),
        },
    })
}

/// Holm step-down adjustment, returned in input order.
pub fn holm_adjust(p_values: &[f64]) -> Result<Vec<f64>, StatsError> {
    if let Some(&bad) = p_values.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        return Err(StatsError::InvalidPValue(bad));
    }
    let m = p_values.len();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&i, &j| p_values[i].total_cmp(&p_values[j]));
    let mut adjusted = vec![0.0; m];
    let mut running: f64 = 0.0;
    for (rank, &idx) in order.iter().enumerate() {
        running = running.max(p_values[idx] * (m - rank) as f64).min(1.0);
        adjusted[idx] = running;
    }
    Ok(adjusted)
}

/// Fills `p_value_adjusted` across one family of results.
pub fn holm_apply(results: &mut [StatResult]) {
    let raw: Vec<f64> = results.iter().map(|r| r.p_value_raw).collect();
    if let Ok(adj) = holm_adjust(&raw) {
        for (r, a) in results.iter_mut().zip(adj) {
            r.p_value_adjusted = Some(a);
        }
    }
}
