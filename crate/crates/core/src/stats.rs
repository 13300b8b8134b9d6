//! Nonparametric statistics for the benchmark report: paired Wilcoxon
//! signed-rank with significance marking, Spearman rank correlation, and
//! mean/std aggregation.

use statrs::distribution::{ContinuousCDF, Normal, StudentsT};

use crate::error::{Error, Result};

/// Scores aligned case-by-case between a baseline and a candidate method.
#[derive(Clone, Debug)]
pub struct PairedSample {
    pub case_ids: Vec<String>,
    pub baseline: Vec<f64>,
    pub candidate: Vec<f64>,
}

impl PairedSample {
    pub fn new(case_ids: Vec<String>, baseline: Vec<f64>, candidate: Vec<f64>) -> Result<Self> {
        if baseline.is_empty() {
            return Err(Error::InvalidArgument("empty paired sample".into()));
        }
        if case_ids.len() != baseline.len() || baseline.len() != candidate.len() {
            return Err(Error::InvalidArgument(format!(
                "paired sample lengths disagree: {} ids, {} baseline, {} candidate",
                case_ids.len(),
                baseline.len(),
                candidate.len()
            )));
        }
        if baseline
            .iter()
            .chain(&candidate)
            .any(|v| !v.is_finite())
        {
            return Err(Error::NonFinite("PairedSample".into()));
        }
        Ok(PairedSample {
            case_ids,
            baseline,
            candidate,
        })
    }

    /// Median of candidate - baseline differences (zeros included).
    pub fn median_difference(&self) -> f64 {
        let mut d: Vec<f64> = self
            .candidate
            .iter()
            .zip(&self.baseline)
            .map(|(c, b)| c - b)
            .collect();
        d.sort_by(f64::total_cmp);
        let n = d.len();
        if n % 2 == 1 {
            d[n / 2]
        } else {
            0.5 * (d[n / 2 - 1] + d[n / 2])
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Alternative {
    TwoSided,
    Greater,
    Less,
}

#[derive(Clone, Debug, serde::Serialize, serde::Deserialize)]
pub struct WilcoxonResult {
    /// Sum of ranks of positive differences.
    pub statistic: f64,
    pub p_value: f64,
    /// Nonzero differences entering the test.
    pub m: usize,
    pub exact: bool,
    /// All differences were zero; p is 1.0 by convention.
    pub all_zero: bool,
}

/// Enumeration is exact up to this many nonzero differences; beyond it the
/// normal approximation with tie and continuity corrections is used.
pub const WILCOXON_EXACT_CUTOFF: usize = 20;

/// Average ranks of |values|, ties shared. Returns ranks aligned to input.
fn average_ranks(values: &[f64]) -> Vec<f64> {
    let n = values.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for k in i..=j {
            ranks[order[k]] = avg;
        }
        i = j + 1;
    }
    ranks
}

/// Null distribution of 2W over all sign assignments, by dynamic programming
/// on doubled ranks (average ranks are multiples of 1/2).
fn wilcoxon_null_counts(ranks2: &[u64]) -> Vec<f64> {
    let total: u64 = ranks2.iter().sum();
    let mut counts = vec![0.0f64; total as usize + 1];
    counts[0] = 1.0;
    for &r in ranks2 {
        for s in (r as usize..counts.len()).rev() {
            counts[s] += counts[s - r as usize];
        }
    }
    counts
}

fn exact_tail_p(ranks2: &[u64], w2_obs: u64, alternative: Alternative) -> f64 {
    let counts = wilcoxon_null_counts(ranks2);
    let total: f64 = counts.iter().sum();
    let ge: f64 = counts[w2_obs as usize..].iter().sum();
    let le: f64 = counts[..=w2_obs as usize].iter().sum();
    match alternative {
        Alternative::Greater => ge / total,
        Alternative::Less => le / total,
        Alternative::TwoSided => (2.0 * (ge.min(le)) / total).min(1.0),
    }
}

fn approx_tail_p(ranks: &[f64], w_obs: f64, alternative: Alternative) -> f64 {
    let m = ranks.len() as f64;
    let mean = m * (m + 1.0) / 4.0;
    // Tie correction: group ranks, each tie group of size t removes
    // (t^3 - t)/48 of variance.
    let mut sorted = ranks.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut tie_term = 0.0;
    let mut i = 0;
    while i < sorted.len() {
        let mut j = i;
        while j + 1 < sorted.len() && sorted[j + 1] == sorted[i] {
            j += 1;
        }
        let t = (j - i + 1) as f64;
        tie_term += t * t * t - t;
        i = j + 1;
    }
    let var = m * (m + 1.0) * (2.0 * m + 1.0) / 24.0 - tie_term / 48.0;
    let sd = var.sqrt();
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let p_greater = 1.0 - normal.cdf((w_obs - mean - 0.5) / sd);
    let p_less = normal.cdf((w_obs - mean + 0.5) / sd);
    match alternative {
        Alternative::Greater => p_greater,
        Alternative::Less => p_less,
        Alternative::TwoSided => (2.0 * p_greater.min(p_less)).min(1.0),
    }
}

/// Paired Wilcoxon signed-rank test on candidate - baseline differences.
/// Zero differences are discarded (Wilcoxon's original treatment).
pub fn wilcoxon_signed_rank(
    sample: &PairedSample,
    alternative: Alternative,
) -> Result<WilcoxonResult> {
    let diffs: Vec<f64> = sample
        .candidate
        .iter()
        .zip(&sample.baseline)
        .map(|(c, b)| c - b)
        .filter(|d| *d != 0.0)
        .collect();
    if diffs.is_empty() {
        return Ok(WilcoxonResult {
            statistic: 0.0,
            p_value: 1.0,
            m: 0,
            exact: true,
            all_zero: true,
        });
    }
    let abs: Vec<f64> = diffs.iter().map(|d| d.abs()).collect();
    let ranks = average_ranks(&abs);
    let w_plus: f64 = ranks
        .iter()
        .zip(&diffs)
        .filter(|(_, d)| **d > 0.0)
        .map(|(r, _)| r)
        .sum();
    let m = diffs.len();
    let (p, exact) = if m <= WILCOXON_EXACT_CUTOFF {
        let ranks2: Vec<u64> = ranks.iter().map(|r| (2.0 * r).round() as u64).collect();
        let w2 = (2.0 * w_plus).round() as u64;
        (exact_tail_p(&ranks2, w2, alternative), true)
    } else {
        (approx_tail_p(&ranks, w_plus, alternative), false)
    };
    Ok(WilcoxonResult {
        statistic: w_plus,
        p_value: p,
        m,
        exact,
        all_zero: false,
    })
}

/// Normal-approximation p regardless of sample size; exposed so the exact
/// and approximate branches can be compared.
pub fn wilcoxon_approx_p(sample: &PairedSample, alternative: Alternative) -> Result<f64> {
    let diffs: Vec<f64> = sample
        .candidate
        .iter()
        .zip(&sample.baseline)
        .map(|(c, b)| c - b)
        .filter(|d| *d != 0.0)
        .collect();
    if diffs.is_empty() {
        return Ok(1.0);
    }
    let abs: Vec<f64> = diffs.iter().map(|d| d.abs()).collect();
    let ranks = average_ranks(&abs);
    let w_plus: f64 = ranks
        .iter()
        .zip(&diffs)
        .filter(|(_, d)| **d > 0.0)
        .map(|(r, _)| r)
        .sum();
    Ok(approx_tail_p(&ranks, w_plus, alternative))
}

/// Table-caption rule: star iff p < alpha strictly AND the median paired
/// difference favors the candidate.
pub fn significance_star(p: f64, median_difference: f64, alpha: f64) -> bool {
    p < alpha && median_difference > 0.0
}

#[derive(Clone, Debug, serde::Serialize, serde::Deserialize)]
pub struct SpearmanResult {
    pub rho: f64,
    pub p_value: f64,
    pub exact: bool,
    pub n: usize,
}

fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx).powi(2);
        syy += (b - my).powi(2);
    }
    sxy / (sxx.sqrt() * syy.sqrt())
}

fn for_each_permutation(n: usize, mut f: impl FnMut(&[usize])) {
    // Heap's algorithm, iterative.
    let mut a: Vec<usize> = (0..n).collect();
    let mut c = vec![0usize; n];
    f(&a);
    let mut i = 0;
    while i < n {
        if c[i] < i {
            if i % 2 == 0 {
                a.swap(0, i);
            } else {
                a.swap(c[i], i);
            }
            f(&a);
            c[i] += 1;
            i = 0;
        } else {
            c[i] = 0;
            i += 1;
        }
    }
}

/// Spearman rank correlation with exact permutation p for n <= 8 and a
/// t-distribution approximation beyond that. Two-sided p.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<SpearmanResult> {
    let n = x.len();
    if n != y.len() {
        return Err(Error::InvalidArgument(format!(
            "spearman length mismatch: {} vs {}",
            n,
            y.len()
        )));
    }
    if n < 3 {
        return Err(Error::InvalidArgument(format!(
            "spearman needs n >= 3, got {n}"
        )));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("spearman".into()));
    }
    let constant = |v: &[f64]| v.iter().all(|a| *a == v[0]);
    if constant(x) || constant(y) {
        return Err(Error::InvalidArgument(
            "spearman undefined for a constant input vector".into(),
        ));
    }
    let rx = average_ranks(x);
    let ry = average_ranks(y);
    let rho = pearson(&rx, &ry);

    let (p, exact) = if n <= 8 {
        // Null: every assignment of y-ranks to x-ranks equally likely.
        let mut at_least = 0usize;
        let mut total = 0usize;
        let target = rho.abs() - 1e-12;
        for_each_permutation(n, |perm| {
            let permuted: Vec<f64> = perm.iter().map(|&i| ry[i]).collect();
            if pearson(&rx, &permuted).abs() >= target {
                at_least += 1;
            }
            total += 1;
        });
        (at_least as f64 / total as f64, true)
    } else {
        let df = (n - 2) as f64;
        let denom = (1.0 - rho * rho).max(f64::EPSILON);
        let t = rho * (df / denom).sqrt();
        let dist = StudentsT::new(0.0, 1.0, df).expect("t distribution");
        (2.0 * (1.0 - dist.cdf(t.abs())), false)
    };
    Ok(SpearmanResult {
        rho,
        p_value: p.min(1.0),
        exact,
        n,
    })
}

#[derive(Clone, Copy, Debug, serde::Serialize, serde::Deserialize)]
pub struct AggregateResult {
    pub mean: f64,
    pub std: f64,
    pub n: usize,
    /// Single observation: std reported as 0 by convention.
    pub degenerate: bool,
}

/// Arithmetic mean and n-1 sample standard deviation.
pub fn aggregate(scores: &[f64]) -> Result<AggregateResult> {
    if scores.is_empty() {
        return Err(Error::InvalidArgument("aggregate of empty scores".into()));
    }
    if scores.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("aggregate".into()));
    }
    let n = scores.len();
    let mean = scores.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return Ok(AggregateResult {
            mean,
            std: 0.0,
            n,
            degenerate: true,
        });
    }
    let var = scores.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    Ok(AggregateResult {
        mean,
        std: var.sqrt(),
        n,
        degenerate: false,
    })
}
