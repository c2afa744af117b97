//! Evaluation statistics: stratified k-fold partitions, rank-based AUC, and
//! the exact Wilcoxon signed-rank test.

use rand::seq::SliceRandom;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::seed::fingerprint_bytes;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum StatsError {
    #[error("too few samples: need at least {need}, got {got}")]
    TooFewSamples { need: usize, got: usize },
    #[error("scores contain a single class only")]
    SingleClass,
    #[error("input lengths differ: {a} vs {b}")]
    LengthMismatch { a: usize, b: usize },
    #[error("data is degenerate (rank below 1)")]
    DegenerateData,
}

/// Fixed assignment of samples to folds.
///
/// Folds are stratified by class: within every class, fold counts differ by
/// at most one, and overall fold sizes differ by at most one.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldPartition {
    k: usize,
    assignment: Vec<usize>,
    seed: u64,
}

impl FoldPartition {
    pub fn k(&self) -> usize {
        self.k
    }

    pub fn len(&self) -> usize {
        self.assignment.len()
    }

    pub fn is_empty(&self) -> bool {
        self.assignment.is_empty()
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn assignment(&self) -> &[usize] {
        &self.assignment
    }

    /// Sample indices of fold `f`, ascending.
    pub fn fold_indices(&self, f: usize) -> Vec<usize> {
        (0..self.assignment.len())
            .filter(|&i| self.assignment[i] == f)
            .collect()
    }

    /// Sample indices outside fold `f`, ascending.
    pub fn train_indices(&self, f: usize) -> Vec<usize> {
        (0..self.assignment.len())
            .filter(|&i| self.assignment[i] != f)
            .collect()
    }

    /// Stable fingerprint of the assignment, used to assert that methods
    /// consumed identical fold memberships.
    pub fn fingerprint(&self) -> u64 {
        let bytes: Vec<u8> = self
            .assignment
            .iter()
            .flat_map(|&f| (f as u64).to_le_bytes())
            .collect();
        fingerprint_bytes(&bytes)
    }
}

/// Deterministic stratified k-fold split.
///
/// Each class's indices are shuffled (seeded) and dealt round-robin into
/// folds, with the dealing offset carried across classes so overall fold
/// sizes also differ by at most one. Classes with fewer than `k` members are
/// spread best-effort by the same dealing.
pub fn kfold_split(labels: &[u8], k: usize, seed: u64) -> Result<FoldPartition, StatsError> {
    let n = labels.len();
    if k < 2 || n < k {
        return Err(StatsError::TooFewSamples { need: k.max(2), got: n });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut classes: Vec<u8> = labels.to_vec();
    classes.sort_unstable();
    classes.dedup();

    let mut assignment = vec![0usize; n];
    let mut offset = 0usize;
    for class in classes {
        let mut members: Vec<usize> = (0..n).filter(|&i| labels[i] == class).collect();
        members.shuffle(&mut rng);
        for (j, idx) in members.iter().enumerate() {
            assignment[*idx] = (offset + j) % k;
        }
        offset = (offset + members.len()) % k;
    }
    Ok(FoldPartition {
        k,
        assignment,
        seed,
    })
}

/// Area under the ROC curve in the rank form.
///
/// Average ranks are doubled so all intermediate sums are integers; the only
/// floating-point operation is the final division, which makes the result
/// identical to direct pair counting with half-credit for ties.
pub fn auc(scores: &[f64], labels: &[u8]) -> Result<f64, StatsError> {
    if scores.len() != labels.len() {
        return Err(StatsError::LengthMismatch {
            a: scores.len(),
            b: labels.len(),
        });
    }
    let n = scores.len();
    let pos = labels.iter().filter(|&&l| l == 1).count() as u64;
    let neg = n as u64 - pos;
    if pos == 0 || neg == 0 {
        return Err(StatsError::SingleClass);
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).unwrap());

    // Sum of doubled average ranks over positives (ranks are 1-based).
    let mut rank2_pos: u64 = 0;
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // Tied block [i..=j]: doubled average rank = (i+1) + (j+1).
        let rank2 = (i as u64 + 1) + (j as u64 + 1);
        for &idx in &order[i..=j] {
            if labels[idx] == 1 {
                rank2_pos += rank2;
            }
        }
        i = j + 1;
    }
    // U = R_pos - P(P+1)/2; doubled: U2 = rank2_pos - P(P+1).
    let u2 = rank2_pos - pos * (pos + 1);
    Ok(u2 as f64 / (2 * pos * neg) as f64)
}

/// Wilcoxon signed-rank test result.
#[derive(Debug, Clone, PartialEq)]
pub struct SignedRankTest {
    pub w_plus: f64,
    pub w_minus: f64,
    pub p_value: f64,
    pub n_effective: usize,
    /// True when every difference was zero; the test carries no information,
    /// reported with `p_value = 1.0`.
    pub degenerate: bool,
}

/// Paired comparison between two named methods.
#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonResult {
    pub method_a: String,
    pub method_b: String,
    pub w_plus: f64,
    pub w_minus: f64,
    pub p_value: f64,
    pub n_effective: usize,
    pub degenerate: bool,
}

impl ComparisonResult {
    pub fn from_test(method_a: &str, method_b: &str, test: SignedRankTest) -> Self {
        Self {
            method_a: method_a.to_string(),
            method_b: method_b.to_string(),
            w_plus: test.w_plus,
            w_minus: test.w_minus,
            p_value: test.p_value,
            n_effective: test.n_effective,
            degenerate: test.degenerate,
        }
    }
}

/// Two-sided Wilcoxon signed-rank test on paired samples.
///
/// Zero differences are dropped (reported through `n_effective`); ties in
/// the absolute differences receive average ranks. For `n_effective <= 25`
/// the p-value is exact, computed from the full distribution of the rank sum
/// over all sign assignments (the fixed average ranks keep the enumeration
/// valid under ties); beyond that a normal approximation with tie correction
/// is used.
pub fn wilcoxon_signed_rank(x: &[f64], y: &[f64]) -> Result<SignedRankTest, StatsError> {
    if x.len() != y.len() {
        return Err(StatsError::LengthMismatch {
            a: x.len(),
            b: y.len(),
        });
    }
    let diffs: Vec<f64> = x
        .iter()
        .zip(y)
        .map(|(a, b)| a - b)
        .filter(|d| *d != 0.0)
        .collect();
    let n = diffs.len();
    if n == 0 {
        return Ok(SignedRankTest {
            w_plus: 0.0,
            w_minus: 0.0,
            p_value: 1.0,
            n_effective: 0,
            degenerate: true,
        });
    }

    // Doubled average ranks of |d| (integers even with ties).
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| diffs[a].abs().partial_cmp(&diffs[b].abs()).unwrap());
    let mut ranks2 = vec![0u64; n];
    let mut tie_sizes = Vec::new();
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && diffs[order[j + 1]].abs() == diffs[order[i]].abs() {
            j += 1;
        }
        let rank2 = (i as u64 + 1) + (j as u64 + 1);
        for &idx in &order[i..=j] {
            ranks2[idx] = rank2;
        }
        tie_sizes.push(j - i + 1);
        i = j + 1;
    }

    let w2_plus: u64 = diffs
        .iter()
        .zip(&ranks2)
        .filter(|(d, _)| **d > 0.0)
        .map(|(_, &r)| r)
        .sum();
    let s2: u64 = ranks2.iter().sum(); // n(n+1)
    let w2_minus = s2 - w2_plus;

    let p_value = if n <= 25 {
        exact_two_sided_p(&ranks2, w2_plus, s2)
    } else {
        normal_two_sided_p(w2_plus as f64 / 2.0, n, &tie_sizes)
    };

    Ok(SignedRankTest {
        w_plus: w2_plus as f64 / 2.0,
        w_minus: w2_minus as f64 / 2.0,
        p_value: p_value.clamp(f64::MIN_POSITIVE, 1.0),
        n_effective: n,
        degenerate: false,
    })
}

/// Exact two-sided p: tail mass of the doubled rank-sum distribution over all
/// 2^n sign assignments, computed by polynomial expansion.
fn exact_two_sided_p(ranks2: &[u64], w2_plus: u64, s2: u64) -> f64 {
    let max = s2 as usize;
    let mut counts = vec![0.0f64; max + 1];
    counts[0] = 1.0;
    for &r in ranks2 {
        let r = r as usize;
        for s in (r..=max).rev() {
            counts[s] += counts[s - r];
        }
    }
    let total = 2.0f64.powi(ranks2.len() as i32);
    let lo = w2_plus.min(s2 - w2_plus) as usize;
    let hi = w2_plus.max(s2 - w2_plus) as usize;
    let lower: f64 = counts[..=lo].iter().sum();
    let upper: f64 = counts[hi..].iter().sum();
    ((lower + upper) / total).min(1.0)
}

/// Normal approximation with tie correction for large n.
fn normal_two_sided_p(w_plus: f64, n: usize, tie_sizes: &[usize]) -> f64 {
    let nf = n as f64;
    let mean = nf * (nf + 1.0) / 4.0;
    let tie_term: f64 = tie_sizes
        .iter()
        .map(|&t| {
            let t = t as f64;
            t * t * t - t
        })
        .sum::<f64>()
        / 48.0;
    let var = nf * (nf + 1.0) * (2.0 * nf + 1.0) / 24.0 - tie_term;
    if var <= 0.0 {
        return 1.0;
    }
    let z = (w_plus - mean) / var.sqrt();
    2.0 * standard_normal_sf(z.abs())
}

/// Standard normal survival function via the Abramowitz-Stegun erf
/// approximation (max abs error ~1.5e-7).
fn standard_normal_sf(z: f64) -> f64 {
    0.5 * erfc(z / std::f64::consts::SQRT_2)
}

fn erfc(x: f64) -> f64 {
    let sign_neg = x < 0.0;
    let x = x.abs();
    let t = 1.0 / (1.0 + 0.3275911 * x);
    let poly = t
        * (0.254829592
            + t * (-0.284496736 + t * (1.421413741 + t * (-1.453152027 + t * 1.061405429))));
    let e = poly * (-x * x).exp();
    if sign_neg {
        2.0 - e
    } else {
        e
    }
}
