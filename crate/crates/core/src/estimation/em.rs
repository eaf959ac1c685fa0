//! EM algorithm for the dependency parameters of one block.
//!
//! Rows are collapsed into distinct patterns first; every pass over the data
//! is then a pass over the pattern table weighted by multiplicities.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::data::BinaryDataset;
use crate::model::{canonical_block, BlockKernel, BlockSpec, VariableParams};
use crate::seed::derive_seed;

use super::{FitConfig, Warning, EPSILON_MAX};

/// Distinct row patterns of a block with their multiplicities.
#[derive(Debug, Clone)]
pub struct BlockData {
    d: usize,
    n: usize,
    patterns: Vec<u8>,
    counts: Vec<f64>,
}

impl BlockData {
    pub fn new(data: &BinaryDataset, members: &[usize]) -> Self {
        let d = members.len();
        let mut index: HashMap<Vec<u8>, usize> = HashMap::new();
        let mut patterns = Vec::new();
        let mut counts: Vec<f64> = Vec::new();
        let mut key = vec![0u8; d];
        for row in data.rows() {
            for (k, &j) in key.iter_mut().zip(members) {
                *k = row[j];
            }
            match index.get(&key) {
                Some(&i) => counts[i] += 1.0,
                None => {
                    index.insert(key.clone(), counts.len());
                    patterns.extend_from_slice(&key);
                    counts.push(1.0);
                }
            }
        }
        Self {
            d,
            n: data.n(),
            patterns,
            counts,
        }
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn n_patterns(&self) -> usize {
        self.counts.len()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&[u8], f64)> {
        self.patterns
            .chunks_exact(self.d.max(1))
            .zip(self.counts.iter().copied())
    }

    /// Observed-data log-likelihood under `params` (member order).
    pub fn log_likelihood(&self, params: &[VariableParams]) -> f64 {
        let kernel = BlockKernel::new(params);
        let mut seg = vec![0.0; self.d + 1];
        self.iter()
            .map(|(x, c)| c * kernel.segment_log_weights(x, &mut seg))
            .sum()
    }
}

/// Posterior probabilities `t_ij = P(U < beta_j | x_i)` for block columns.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorWeights {
    n: usize,
    d: usize,
    t: Vec<f64>,
}

impl PosteriorWeights {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn get(&self, row: usize, var: usize) -> f64 {
        self.t[row * self.d + var]
    }

    pub fn row(&self, row: usize) -> &[f64] {
        &self.t[row * self.d..(row + 1) * self.d]
    }
}

/// Exact E step over the rows of `data` for the columns of `block`.
pub fn e_step(block: &BlockSpec, data: &BinaryDataset) -> (PosteriorWeights, Vec<Warning>) {
    let kernel = block.kernel();
    let d = block.len();
    let mut warnings = Vec::new();
    let mut seg = vec![0.0; d + 1];
    let mut x = vec![0u8; d];
    let mut t = Vec::with_capacity(data.n() * d);
    let mut cum = vec![0.0; d + 2];
    for (i, row) in data.rows().enumerate() {
        for (slot, &j) in x.iter_mut().zip(block.members()) {
            *slot = row[j];
        }
        let lp = kernel.segment_log_weights(&x, &mut seg);
        if !lp.is_finite() {
            warnings.push(Warning::new(format!(
                "row {}: zero block probability, posterior set to prior",
                i + 1
            )));
            t.extend(block.params().iter().map(VariableParams::beta));
            continue;
        }
        BlockKernel::posterior_masses(&mut seg, lp);
        cumulate(&seg, &mut cum);
        let start = t.len();
        t.resize(start + d, 0.0);
        // The sorted position s has beta as its upper segment boundary, so
        // P(U < beta) is the mass of segments 0..=s.
        for (s, &p) in kernel.order().iter().enumerate() {
            t[start + p] = cum[s + 1].clamp(0.0, 1.0);
        }
    }
    (PosteriorWeights { n: data.n(), d, t }, warnings)
}

fn cumulate(masses: &[f64], cum: &mut [f64]) {
    cum[0] = 0.0;
    for (k, &m) in masses.iter().enumerate() {
        cum[k + 1] = cum[k] + m;
    }
}

/// `P(U < c)` from cumulative segment masses and boundaries.
fn below(bounds: &[f64], masses: &[f64], cum: &[f64], c: f64) -> f64 {
    // first boundary index with bounds[idx] > c; segment idx-1 contains c
    let idx = bounds.partition_point(|&b| b <= c);
    if idx == 0 {
        return 0.0;
    }
    if idx >= bounds.len() {
        return 1.0;
    }
    let k = idx - 1;
    let (lo, hi) = (bounds[k], bounds[k + 1]);
    let frac = if hi > lo { (c - lo) / (hi - lo) } else { 0.0 };
    (cum[k] + masses[k] * frac).clamp(0.0, 1.0)
}

/// Expected complete-data frequencies for one variable: `n11` and `n10` are
/// the rows with `x = 1` in the high and low regimes, `n01` and `n00` the
/// rows with `x = 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ExpectedCounts {
    pub n11: f64,
    pub n10: f64,
    pub n01: f64,
    pub n00: f64,
}

impl ExpectedCounts {
    /// Expected complete-data log-likelihood (per row) at `epsilon`, with the
    /// margin fixed to `n11 + n10`.
    pub fn objective(&self, epsilon: f64) -> f64 {
        let a = self.n11 + self.n10;
        let low = (1.0 - epsilon) * a;
        let term = |w: f64, p: f64| if w > 0.0 { w * p.ln() } else { 0.0 };
        term(self.n10, low)
            + term(self.n11, low + epsilon)
            + term(self.n00, 1.0 - low)
            + term(self.n01, (1.0 - epsilon) * (1.0 - a))
    }
}

/// Solution of the one-dimensional M step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MStep {
    pub epsilon: f64,
    /// Smaller root of the stationarity quadratic.
    pub s1: f64,
    /// Larger root of the stationarity quadratic.
    pub s2: f64,
}

/// Maximizes [`ExpectedCounts::objective`] over `epsilon in [0, 1)`.
///
/// Setting the derivative to zero gives `A e^2 + B e + C = 0` with
/// `A = -a(1-a) < 0`, so the objective increases between the two roots and
/// the maximizer is the larger root clipped at zero.
pub fn m_step_epsilon(c: &ExpectedCounts) -> (MStep, Option<Warning>) {
    let a = c.n11 + c.n10;
    if !(a > 0.0 && a < 1.0) {
        let w = Warning::new(format!("degenerate margin {a} in M step, epsilon set to 0"));
        return (
            MStep {
                epsilon: 0.0,
                s1: 0.0,
                s2: 0.0,
            },
            Some(w),
        );
    }
    let b = 1.0 - a;
    let qa = -a * b;
    let qb = c.n11 * a + c.n00 * b - a * a - b * b;
    let qc = c.n11 * b + c.n00 * a + qa;
    let mut disc = qb * qb - 4.0 * qa * qc;
    let mut warning = None;
    if disc < 0.0 {
        if disc > -1e-12 {
            disc = 0.0;
        } else {
            let w = Warning::new(format!("negative discriminant {disc} in M step, epsilon set to 0"));
            return (
                MStep {
                    epsilon: 0.0,
                    s1: 0.0,
                    s2: 0.0,
                },
                Some(w),
            );
        }
    }
    let sq = disc.sqrt();
    // Stable pair of roots.
    let q = -0.5 * (qb + qb.signum() * sq);
    let (r1, r2) = if q != 0.0 { (q / qa, qc / q) } else { (0.0, 0.0) };
    let (s1, s2) = if r1 <= r2 { (r1, r2) } else { (r2, r1) };
    let mut epsilon = s2.max(0.0);
    if epsilon > EPSILON_MAX {
        epsilon = EPSILON_MAX;
        warning = Some(Warning::new("M step epsilon truncated below 1"));
    }
    (MStep { epsilon, s1, s2 }, warning)
}

/// Result of fitting one block with EM.
#[derive(Debug, Clone)]
pub struct EmBlockFit {
    /// Canonical parameters in member order.
    pub params: Vec<VariableParams>,
    pub loglik: f64,
    pub best_restart: usize,
    /// Iterations used by each restart.
    pub iterations: Vec<usize>,
    /// Final observed log-likelihood of each restart (`-inf` if aborted).
    pub restart_logliks: Vec<f64>,
    pub warnings: Vec<Warning>,
}

/// Per-block seed that depends only on the block's content, not on its
/// position in a partition or the order of its columns.
pub(crate) fn block_seed(seed: u64, data: &BlockData, alpha_hat: &[f64], sums: &[usize]) -> u64 {
    let mut sorted: Vec<u64> = sums.iter().map(|&s| s as u64).collect();
    sorted.sort_unstable();
    let mut counters = vec![data.d() as u64, data.n() as u64, alpha_hat.len() as u64];
    counters.extend(sorted);
    derive_seed(seed, &counters)
}

/// Fits `(delta, epsilon)` of a block with margins fixed at `alpha_hat`
/// (member order) by EM with random restarts.
pub fn em_fit_block(data: &BlockData, alpha_hat: &[f64], cfg: &FitConfig, seed: u64) -> EmBlockFit {
    let d = data.d();
    assert_eq!(alpha_hat.len(), d, "one margin per block member");
    // Draw order and anchor follow ascending margins, so relabeling
    // columns does not change the estimates.
    let mut rank: Vec<usize> = (0..d).collect();
    rank.sort_by(|&a, &b| alpha_hat[a].total_cmp(&alpha_hat[b]).then(a.cmp(&b)));
    let anchor = rank[0];

    let mut best: Option<(f64, usize, Vec<VariableParams>)> = None;
    let mut iterations = Vec::with_capacity(cfg.restarts);
    let mut restart_logliks = Vec::with_capacity(cfg.restarts);
    let mut warnings = Vec::new();
    let mut ws = Workspace::new(d);

    for restart in 0..cfg.restarts {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[restart as u64]));
        let mut params: Vec<VariableParams> = alpha_hat
            .iter()
            .map(|&alpha| VariableParams {
                alpha,
                epsilon: 0.0,
                delta: 1,
            })
            .collect();
        for &p in &rank {
            let delta = if p == anchor { 1 } else { u8::from(rng.random_bool(0.5)) };
            params[p].delta = delta;
            params[p].epsilon = rng.random_range(0.05..0.95);
        }
        let (params, loglik, iters) = run_em(data, params, anchor, cfg, &mut ws, &mut warnings);
        iterations.push(iters);
        restart_logliks.push(loglik);
        if !loglik.is_finite() {
            warnings.push(Warning::new(format!(
                "EM restart {restart}: non-finite log-likelihood, restart discarded"
            )));
            continue;
        }
        let better = match &best {
            None => true,
            Some((ll, _, _)) => loglik > *ll,
        };
        if better {
            best = Some((loglik, restart, params));
        }
    }

    let (loglik, best_restart, params) = best.unwrap_or_else(|| {
        // Every restart failed; fall back to independence.
        let params: Vec<VariableParams> = alpha_hat.iter().map(|&a| VariableParams::independent(a)).collect();
        (data.log_likelihood(&params), usize::MAX, params)
    });
    let positions: Vec<usize> = (0..d).collect();
    let params = canonical_block(&positions, &params);
    EmBlockFit {
        params,
        loglik,
        best_restart,
        iterations,
        restart_logliks,
        warnings,
    }
}

struct Workspace {
    seg: Vec<f64>,
    cum: Vec<f64>,
    /// Per variable: sums of count * (x t+, x (1-t+), (1-x) t+, (1-x)(1-t+))
    /// for the delta = 1 threshold and the same for delta = 0.
    acc: Vec<[f64; 8]>,
}

impl Workspace {
    fn new(d: usize) -> Self {
        Self {
            seg: vec![0.0; d + 1],
            cum: vec![0.0; d + 2],
            acc: vec![[0.0; 8]; d],
        }
    }
}

/// E step on the pattern table. Accumulates expected counts for both
/// directions of every variable and returns the observed log-likelihood.
fn accumulate(data: &BlockData, params: &[VariableParams], ws: &mut Workspace) -> f64 {
    let kernel = BlockKernel::new(params);
    for a in ws.acc.iter_mut() {
        *a = [0.0; 8];
    }
    let mut loglik = 0.0;
    for (x, count) in data.iter() {
        let lp = kernel.segment_log_weights(x, &mut ws.seg);
        if !lp.is_finite() {
            return f64::NEG_INFINITY;
        }
        loglik += count * lp;
        BlockKernel::posterior_masses(&mut ws.seg, lp);
        cumulate(&ws.seg, &mut ws.cum);
        for (p, vp) in params.iter().enumerate() {
            // High regime is U < alpha when delta = 1 and U > 1 - alpha
            // when delta = 0.
            let hi_pos = below(kernel.bounds(), &ws.seg, &ws.cum, vp.alpha);
            let hi_neg = 1.0 - below(kernel.bounds(), &ws.seg, &ws.cum, 1.0 - vp.alpha);
            let acc = &mut ws.acc[p];
            if x[p] == 1 {
                acc[0] += count * hi_pos;
                acc[1] += count * (1.0 - hi_pos);
                acc[4] += count * hi_neg;
                acc[5] += count * (1.0 - hi_neg);
            } else {
                acc[2] += count * hi_pos;
                acc[3] += count * (1.0 - hi_pos);
                acc[6] += count * hi_neg;
                acc[7] += count * (1.0 - hi_neg);
            }
        }
    }
    loglik
}

fn counts_for(acc: &[f64; 8], delta: u8, n: f64) -> ExpectedCounts {
    let o = if delta == 1 { 0 } else { 4 };
    ExpectedCounts {
        n11: acc[o] / n,
        n10: acc[o + 1] / n,
        n01: acc[o + 2] / n,
        n00: acc[o + 3] / n,
    }
}

/// Runs EM from `params` until the gain drops below `cfg.tol`.
/// Returns the last evaluated parameters with their log-likelihood.
fn run_em(
    data: &BlockData,
    mut params: Vec<VariableParams>,
    anchor: usize,
    cfg: &FitConfig,
    ws: &mut Workspace,
    warnings: &mut Vec<Warning>,
) -> (Vec<VariableParams>, f64, usize) {
    let n = data.n() as f64;
    let mut prev = f64::NEG_INFINITY;
    let mut iter = 0;
    let mut truncated = false;
    loop {
        let loglik = accumulate(data, &params, ws);
        if !loglik.is_finite() {
            return (params, loglik, iter);
        }
        if iter > 0 && loglik - prev < cfg.tol {
            return (params, loglik, iter);
        }
        if iter >= cfg.max_iter {
            return (params, loglik, iter);
        }
        prev = loglik;
        iter += 1;
        for (p, vp) in params.iter_mut().enumerate() {
            let deltas: &[u8] = if p == anchor { &[1] } else { &[1, 0] };
            let mut choice: Option<(f64, u8, f64)> = None;
            for &delta in deltas {
                let counts = counts_for(&ws.acc[p], delta, n);
                let (step, _) = m_step_epsilon(&counts);
                if step.epsilon == EPSILON_MAX && !truncated {
                    truncated = true;
                    warnings.push(Warning::new("EM epsilon truncated below 1"));
                }
                let value = counts.objective(step.epsilon);
                let better = match choice {
                    None => true,
                    Some((v, _, _)) => value > v,
                };
                if better {
                    choice = Some((value, delta, step.epsilon));
                }
            }
            if let Some((_, delta, epsilon)) = choice {
                vp.delta = delta;
                vp.epsilon = epsilon;
            }
        }
    }
}

/// Runs EM from a given starting point and returns the observed
/// log-likelihood after every iteration (the first entry is the start).
pub fn em_trajectory(data: &BlockData, start: Vec<VariableParams>, anchor: usize, iterations: usize) -> Vec<f64> {
    let cfg = FitConfig {
        restarts: 1,
        tol: f64::NEG_INFINITY,
        max_iter: 1,
        seed: 0,
    };
    let mut ws = Workspace::new(data.d());
    let mut warnings = Vec::new();
    let mut params = start;
    let mut trace = Vec::with_capacity(iterations + 1);
    trace.push(data.log_likelihood(&params));
    for _ in 0..iterations {
        let (next, ll, _) = run_em(data, params, anchor, &cfg, &mut ws, &mut warnings);
        trace.push(ll);
        params = next;
    }
    trace
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{sample, Model, Partition};

    fn vp(alpha: f64, epsilon: f64, delta: u8) -> VariableParams {
        VariableParams::new(alpha, epsilon, delta).unwrap()
    }

    /// Direct two-segment-boundary enumeration of the posterior for a pair.
    fn pair_posterior(params: &[VariableParams; 2], x: [u8; 2]) -> [f64; 2] {
        let cond = |vp: &VariableParams, u: f64, xi: u8| {
            let p = if u < vp.beta() { vp.lambda() } else { vp.nu() };
            if xi == 1 {
                p
            } else {
                1.0 - p
            }
        };
        let mut cuts = [0.0, params[0].beta(), params[1].beta(), 1.0];
        cuts.sort_by(f64::total_cmp);
        let mut total = 0.0;
        let mut below = [0.0; 2];
        for w in cuts.windows(2) {
            let mid = 0.5 * (w[0] + w[1]);
            let mass = (w[1] - w[0]) * cond(&params[0], mid, x[0]) * cond(&params[1], mid, x[1]);
            total += mass;
            for v in 0..2 {
                if w[1] <= params[v].beta() {
                    below[v] += mass;
                }
            }
        }
        [below[0] / total, below[1] / total]
    }

    #[test]
    fn e_step_with_zero_epsilon_returns_prior() {
        let model = Model::new(
            Partition::single_block(3),
            vec![vp(0.3, 0.0, 1), vp(0.6, 0.0, 0), vp(0.5, 0.0, 1)],
        )
        .unwrap();
        let data = sample(&model, 50, 1);
        let block = &model.blocks()[0];
        let (t, warnings) = e_step(block, &data);
        assert!(warnings.is_empty());
        for i in 0..data.n() {
            for (p, vp) in block.params().iter().enumerate() {
                assert!((t.get(i, p) - vp.beta()).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn e_step_matches_pair_enumeration() {
        let cases = [
            [vp(0.3, 0.6, 1), vp(0.7, 0.4, 1)],
            [vp(0.3, 0.6, 1), vp(0.7, 0.4, 0)],
            [vp(0.55, 0.9, 0), vp(0.2, 0.1, 1)],
        ];
        for params in cases {
            let block = BlockSpec::new(vec![0, 1], params.to_vec()).unwrap();
            let data = BinaryDataset::from_rows(2, vec![0, 0, 0, 1, 1, 0, 1, 1]).unwrap();
            let (t, _) = e_step(&block, &data);
            for (i, row) in data.rows().enumerate() {
                let oracle = pair_posterior(&params, [row[0], row[1]]);
                for (v, o) in oracle.iter().enumerate() {
                    assert!((t.get(i, v) - o).abs() < 1e-12, "{params:?} {row:?}");
                }
            }
        }
    }

    #[test]
    fn e_step_near_full_dependency() {
        let params = vec![vp(0.4, 0.999, 1), vp(0.5, 0.999, 1), vp(0.45, 0.999, 1)];
        let block = BlockSpec::new(vec![0, 1, 2], params).unwrap();
        let data = BinaryDataset::from_rows(3, vec![1, 1, 1]).unwrap();
        let (t, _) = e_step(&block, &data);
        for p in 0..3 {
            assert!(t.get(0, p) > 0.99, "{}", t.get(0, p));
        }
    }

    #[test]
    fn m_step_at_independence_is_zero() {
        // a = 0.4 and expected high-regime mass 0.3 for both x values.
        let c = ExpectedCounts {
            n11: 0.12,
            n10: 0.28,
            n01: 0.18,
            n00: 0.42,
        };
        let (step, _) = m_step_epsilon(&c);
        assert!(step.s2 <= 1e-12, "{step:?}");
        assert_eq!(step.epsilon, 0.0);
        assert!(step.s1 < 0.0);
    }

    #[test]
    fn m_step_matches_grid_argmax() {
        let c = ExpectedCounts {
            n11: 0.3,
            n10: 0.1,
            n01: 0.1,
            n00: 0.5,
        };
        let (step, _) = m_step_epsilon(&c);
        let mut best = (f64::NEG_INFINITY, 0.0);
        for k in 0..1_000_000 {
            let e = k as f64 * 1e-6;
            let v = c.objective(e);
            if v > best.0 {
                best = (v, e);
            }
        }
        assert!((step.epsilon - best.1).abs() <= 1e-6, "{} vs {}", step.epsilon, best.1);
        assert!((step.epsilon - 7.0 / 12.0).abs() < 1e-12);
        assert!(step.s1 < 0.0);
    }

    #[test]
    fn degenerate_margin_gives_zero() {
        let c = ExpectedCounts {
            n11: 0.0,
            n10: 0.0,
            n01: 0.4,
            n00: 0.6,
        };
        let (step, warning) = m_step_epsilon(&c);
        assert_eq!(step.epsilon, 0.0);
        assert!(warning.is_some());
    }

    #[test]
    fn block_data_collapses_patterns() {
        let data = BinaryDataset::from_rows(3, vec![1, 0, 1, 1, 1, 1, 1, 0, 1, 0, 0, 0]).unwrap();
        let bd = BlockData::new(&data, &[0, 2]);
        assert_eq!(bd.n_patterns(), 2);
        let collected: Vec<(Vec<u8>, f64)> = bd.iter().map(|(x, c)| (x.to_vec(), c)).collect();
        assert_eq!(collected, vec![(vec![1, 1], 3.0), (vec![0, 0], 1.0)]);
    }

    #[test]
    fn em_ascends() {
        let model = Model::new(
            Partition::single_block(4),
            vec![vp(0.4, 0.6, 1), vp(0.3, 0.5, 0), vp(0.6, 0.7, 1), vp(0.5, 0.4, 1)],
        )
        .unwrap();
        let data = sample(&model, 300, 3);
        let bd = BlockData::new(&data, &[0, 1, 2, 3]);
        let alpha: Vec<f64> = data.column_sums().iter().map(|&s| s as f64 / 300.0).collect();
        let start: Vec<VariableParams> = alpha
            .iter()
            .zip([1u8, 1, 0, 1])
            .map(|(&a, d)| VariableParams {
                alpha: a,
                epsilon: 0.5,
                delta: d,
            })
            .collect();
        let trace = em_trajectory(&bd, start, 0, 40);
        for w in trace.windows(2) {
            assert!(w[1] >= w[0] - 1e-9, "{trace:?}");
        }
    }
}
