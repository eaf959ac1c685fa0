//! The blockwise one-factor family.
//!
//! Variables are split into independent blocks. Inside a block every
//! variable is Bernoulli given a shared latent `U ~ Uniform(0, 1)`: with
//! probability `lambda` when `U < beta` and `nu` otherwise. Because the
//! conditional law is piecewise constant in `U`, the block pmf is a finite
//! sum over the segments cut by the sorted `beta` values.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{default_names, BinaryDataset};
use crate::error::ModelError;

/// Floor applied to `lambda`, `nu` and their complements inside log-pmfs.
pub const PROB_FLOOR: f64 = 1e-12;

/// Parameters `(alpha, epsilon, delta)` of one variable.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VariableParams {
    /// Marginal probability that the variable equals one.
    pub alpha: f64,
    /// Dependency strength with the block factor.
    pub epsilon: f64,
    /// Direction of the dependency: 1 positive, 0 negative.
    pub delta: u8,
}

/// Quantities derived from [`VariableParams`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Derived {
    /// Probability that the variable equals `delta`; the latent threshold.
    pub beta: f64,
    /// Success probability while `U < beta`.
    pub lambda: f64,
    /// Success probability while `U >= beta`.
    pub nu: f64,
}

impl VariableParams {
    pub fn new(alpha: f64, epsilon: f64, delta: u8) -> Result<Self, ModelError> {
        let vp = Self { alpha, epsilon, delta };
        vp.validate(0)?;
        Ok(vp)
    }

    /// An independent Bernoulli variable in canonical singleton form.
    pub fn independent(alpha: f64) -> Self {
        Self {
            alpha,
            epsilon: 0.0,
            delta: 1,
        }
    }

    pub(crate) fn validate(&self, index: usize) -> Result<(), ModelError> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(ModelError::Alpha {
                index,
                value: self.alpha,
            });
        }
        if !(self.epsilon >= 0.0 && self.epsilon < 1.0) {
            return Err(ModelError::Epsilon {
                index,
                value: self.epsilon,
            });
        }
        if self.delta > 1 {
            return Err(ModelError::Delta {
                index,
                value: self.delta,
            });
        }
        Ok(())
    }

    #[inline]
    pub fn beta(&self) -> f64 {
        if self.delta == 1 {
            self.alpha
        } else {
            1.0 - self.alpha
        }
    }

    #[inline]
    pub fn lambda(&self) -> f64 {
        (1.0 - self.epsilon) * self.alpha + self.epsilon * f64::from(self.delta)
    }

    #[inline]
    pub fn nu(&self) -> f64 {
        (1.0 - self.epsilon) * self.alpha + self.epsilon * f64::from(1 - self.delta)
    }

    pub fn derive(&self) -> Derived {
        Derived {
            beta: self.beta(),
            lambda: self.lambda(),
            nu: self.nu(),
        }
    }

    /// Same variable seen through `U -> 1 - U`.
    pub fn flipped(&self) -> Self {
        Self {
            delta: 1 - self.delta,
            ..*self
        }
    }
}

pub fn derive(vp: &VariableParams) -> Derived {
    vp.derive()
}

/// Assignment of variables to blocks, labels `0..B` in order of first
/// appearance.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Partition {
    labels: Vec<usize>,
}

impl Partition {
    /// Canonicalizes arbitrary labels (any integers) by first appearance.
    pub fn from_labels<T: Copy + Eq + std::hash::Hash>(labels: &[T]) -> Self {
        let mut map = std::collections::HashMap::new();
        let labels = labels
            .iter()
            .map(|l| {
                let next = map.len();
                *map.entry(*l).or_insert(next)
            })
            .collect();
        Self { labels }
    }

    pub fn singletons(d: usize) -> Self {
        Self {
            labels: (0..d).collect(),
        }
    }

    pub fn single_block(d: usize) -> Self {
        Self { labels: vec![0; d] }
    }

    /// Consecutive blocks of `size` variables (the last one may be shorter).
    pub fn consecutive(d: usize, size: usize) -> Self {
        Self {
            labels: (0..d).map(|j| j / size.max(1)).collect(),
        }
    }

    /// Builds a partition from explicit member lists.
    pub fn from_blocks(d: usize, blocks: &[Vec<usize>]) -> Result<Self, ModelError> {
        let mut labels = vec![usize::MAX; d];
        for (b, members) in blocks.iter().enumerate() {
            if members.is_empty() {
                return Err(ModelError::EmptyBlock);
            }
            for &j in members {
                if j >= d {
                    return Err(ModelError::UnknownVariable(format!("index {j}")));
                }
                if labels[j] != usize::MAX {
                    return Err(ModelError::RepeatedVariable(format!("index {j}")));
                }
                labels[j] = b;
            }
        }
        if let Some(j) = labels.iter().position(|&l| l == usize::MAX) {
            return Err(ModelError::UnassignedVariable(format!("index {j}")));
        }
        Ok(Self::from_labels(&labels))
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn d(&self) -> usize {
        self.labels.len()
    }

    pub fn n_blocks(&self) -> usize {
        self.labels.iter().max().map_or(0, |m| m + 1)
    }

    /// Member lists per block, each ascending.
    pub fn blocks(&self) -> Vec<Vec<usize>> {
        let mut blocks = vec![Vec::new(); self.n_blocks()];
        for (j, &l) in self.labels.iter().enumerate() {
            blocks[l].push(j);
        }
        blocks
    }

    pub fn block_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.n_blocks()];
        for &l in &self.labels {
            sizes[l] += 1;
        }
        sizes
    }

    pub fn same_block(&self, j: usize, k: usize) -> bool {
        self.labels[j] == self.labels[k]
    }

    /// Moves variable `j` to block `label` (`label == n_blocks()` opens a new
    /// block) and returns the canonicalized result.
    pub fn with_move(&self, j: usize, label: usize) -> Self {
        let mut labels = self.labels.clone();
        labels[j] = label;
        Self::from_labels(&labels)
    }

    /// Labels as 1-based integers, the external convention.
    pub fn one_based(&self) -> Vec<usize> {
        self.labels.iter().map(|l| l + 1).collect()
    }

    /// Applies a column permutation: new variable `k` is old variable `order[k]`.
    pub fn permuted(&self, order: &[usize]) -> Self {
        let labels: Vec<usize> = order.iter().map(|&j| self.labels[j]).collect();
        Self::from_labels(&labels)
    }
}

impl std::fmt::Display for Partition {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let parts: Vec<String> = self.one_based().iter().map(usize::to_string).collect();
        write!(f, "[{}]", parts.join(","))
    }
}

/// One block: its members, their parameters, and the beta-sorted order.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockSpec {
    members: Vec<usize>,
    params: Vec<VariableParams>,
    /// Local positions (into `members`) sorted by ascending beta, ties by
    /// variable index.
    order: Vec<usize>,
}

impl BlockSpec {
    pub fn new(members: Vec<usize>, params: Vec<VariableParams>) -> Result<Self, ModelError> {
        if members.len() != params.len() {
            return Err(ModelError::Dimension {
                expected: members.len(),
                found: params.len(),
            });
        }
        if members.is_empty() {
            return Err(ModelError::EmptyBlock);
        }
        for (vp, &j) in params.iter().zip(&members) {
            vp.validate(j)?;
        }
        let order = beta_order(&members, &params);
        Ok(Self { members, params, order })
    }

    pub fn members(&self) -> &[usize] {
        &self.members
    }

    pub fn params(&self) -> &[VariableParams] {
        &self.params
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    /// Local positions sorted by beta.
    pub fn order(&self) -> &[usize] {
        &self.order
    }

    /// Member variable indices sorted by beta.
    pub fn sigma(&self) -> Vec<usize> {
        self.order.iter().map(|&p| self.members[p]).collect()
    }

    pub fn kernel(&self) -> BlockKernel {
        BlockKernel::new(&self.params)
    }
}

pub(crate) fn beta_order(members: &[usize], params: &[VariableParams]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..params.len()).collect();
    order.sort_by(|&a, &b| {
        params[a]
            .beta()
            .total_cmp(&params[b].beta())
            .then(members[a].cmp(&members[b]))
    });
    order
}

#[inline]
fn clamp_prob(p: f64) -> f64 {
    p.clamp(PROB_FLOOR, 1.0 - PROB_FLOOR)
}

/// Precomputed log-domain evaluator for one block.
///
/// Segment `k` (for `k = 0..=d_b`) is `[beta_(k), beta_(k+1))` with
/// `beta_(0) = 0` and `beta_(d_b+1) = 1`; inside it the first `k` sorted
/// variables are in their `nu` regime and the rest in their `lambda` regime.
#[derive(Debug, Clone)]
pub struct BlockKernel {
    /// Local position of the variable at each sorted position.
    order: Vec<usize>,
    /// Segment boundaries, length `d_b + 2`.
    bounds: Vec<f64>,
    /// ln of segment widths, `-inf` for empty segments.
    log_width: Vec<f64>,
    /// Per sorted position: [ln(1-lambda), ln(lambda), ln(1-nu), ln(nu)].
    log_terms: Vec<[f64; 4]>,
}

impl BlockKernel {
    /// Builds the kernel; members are identified by local position and ties in
    /// beta are broken by position.
    pub fn new(params: &[VariableParams]) -> Self {
        let positions: Vec<usize> = (0..params.len()).collect();
        Self::with_order(params, beta_order(&positions, params))
    }

    pub(crate) fn with_order(params: &[VariableParams], order: Vec<usize>) -> Self {
        let d = params.len();
        let mut bounds = Vec::with_capacity(d + 2);
        bounds.push(0.0);
        bounds.extend(order.iter().map(|&p| params[p].beta()));
        bounds.push(1.0);
        let log_width = bounds
            .windows(2)
            .map(|w| {
                let width = w[1] - w[0];
                if width > 0.0 {
                    width.ln()
                } else {
                    f64::NEG_INFINITY
                }
            })
            .collect();
        let log_terms = order
            .iter()
            .map(|&p| {
                let lambda = clamp_prob(params[p].lambda());
                let nu = clamp_prob(params[p].nu());
                [(1.0 - lambda).ln(), lambda.ln(), (1.0 - nu).ln(), nu.ln()]
            })
            .collect();
        Self {
            order,
            bounds,
            log_width,
            log_terms,
        }
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    pub fn order(&self) -> &[usize] {
        &self.order
    }

    pub fn bounds(&self) -> &[f64] {
        &self.bounds
    }

    /// Fills `seg` (length `d_b + 1`) with `ln(width_k) + ln f(k)` for the
    /// outcome `x` (indexed by local position) and returns the log-pmf.
    pub fn segment_log_weights(&self, x: &[u8], seg: &mut [f64]) -> f64 {
        let d = self.order.len();
        debug_assert_eq!(seg.len(), d + 1);
        // seg[k] accumulates the suffix sum of lambda terms over sorted
        // positions >= k, then the prefix of nu terms is added in a second
        // pass.
        let mut acc = 0.0;
        seg[d] = 0.0;
        for i in (0..d).rev() {
            acc += self.log_terms[i][x[self.order[i]] as usize];
            seg[i] = acc;
        }
        let mut prefix = 0.0;
        let mut max = f64::NEG_INFINITY;
        for k in 0..=d {
            if k > 0 {
                prefix += self.log_terms[k - 1][2 + x[self.order[k - 1]] as usize];
            }
            let v = self.log_width[k] + seg[k] + prefix;
            seg[k] = v;
            if v > max {
                max = v;
            }
        }
        if max == f64::NEG_INFINITY {
            return max;
        }
        let sum: f64 = seg.iter().map(|&v| (v - max).exp()).sum();
        max + sum.ln()
    }

    pub fn log_pmf(&self, x: &[u8]) -> f64 {
        let mut seg = vec![0.0; self.order.len() + 1];
        self.segment_log_weights(x, &mut seg)
    }

    /// Turns segment log weights into normalized posterior segment masses.
    pub fn posterior_masses(seg: &mut [f64], log_pmf: f64) {
        for v in seg.iter_mut() {
            *v = (*v - log_pmf).exp();
        }
    }

    /// `P(U < c | x)` from posterior segment masses.
    pub fn posterior_below(&self, masses: &[f64], c: f64) -> f64 {
        let mut total = 0.0;
        for (k, &m) in masses.iter().enumerate() {
            let (lo, hi) = (self.bounds[k], self.bounds[k + 1]);
            if hi <= c {
                total += m;
            } else {
                if c > lo && hi > lo {
                    total += m * (c - lo) / (hi - lo);
                }
                break;
            }
        }
        total.clamp(0.0, 1.0)
    }
}

/// Closed-form block pmf; `x` is aligned with the block members.
pub fn block_pmf(block: &BlockSpec, x: &[u8]) -> Result<f64, ModelError> {
    block_log_pmf(block, x).map(f64::exp)
}

pub fn block_log_pmf(block: &BlockSpec, x: &[u8]) -> Result<f64, ModelError> {
    if x.len() != block.len() {
        return Err(ModelError::Dimension {
            expected: block.len(),
            found: x.len(),
        });
    }
    Ok(BlockKernel::with_order(&block.params, block.order.clone()).log_pmf(x))
}

/// A partition together with per-variable parameters and column names.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    partition: Partition,
    params: Vec<VariableParams>,
    names: Vec<String>,
}

impl Model {
    pub fn new(partition: Partition, params: Vec<VariableParams>) -> Result<Self, ModelError> {
        let names = default_names(params.len());
        Self::with_names(partition, params, names)
    }

    pub fn with_names(
        partition: Partition,
        params: Vec<VariableParams>,
        names: Vec<String>,
    ) -> Result<Self, ModelError> {
        if partition.d() != params.len() {
            return Err(ModelError::PartitionSize {
                expected: params.len(),
                found: partition.d(),
            });
        }
        if names.len() != params.len() {
            return Err(ModelError::Dimension {
                expected: params.len(),
                found: names.len(),
            });
        }
        for (j, vp) in params.iter().enumerate() {
            vp.validate(j)?;
        }
        Ok(Self {
            partition,
            params,
            names,
        })
    }

    /// All variables independent Bernoulli.
    pub fn independent(alphas: &[f64]) -> Result<Self, ModelError> {
        Self::new(
            Partition::singletons(alphas.len()),
            alphas.iter().map(|&a| VariableParams::independent(a)).collect(),
        )
    }

    pub fn d(&self) -> usize {
        self.params.len()
    }

    pub fn partition(&self) -> &Partition {
        &self.partition
    }

    pub fn params(&self) -> &[VariableParams] {
        &self.params
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn blocks(&self) -> Vec<BlockSpec> {
        self.partition
            .blocks()
            .into_iter()
            .map(|members| {
                let params: Vec<VariableParams> = members.iter().map(|&j| self.params[j]).collect();
                let order = beta_order(&members, &params);
                BlockSpec { members, params, order }
            })
            .collect()
    }

    /// Returns the observationally equivalent model in canonical form.
    pub fn canonicalize(&self) -> Model {
        let mut params = self.params.clone();
        for members in self.partition.blocks() {
            let local: Vec<VariableParams> = members.iter().map(|&j| self.params[j]).collect();
            let canon = canonical_block(&members, &local);
            for (&j, vp) in members.iter().zip(canon) {
                params[j] = vp;
            }
        }
        Model {
            partition: self.partition.clone(),
            params,
            names: self.names.clone(),
        }
    }

    pub fn is_canonical(&self) -> bool {
        self.canonicalize().params == self.params
    }
}

fn first_sorted_is_positive(members: &[usize], params: &[VariableParams]) -> bool {
    let order = beta_order(members, params);
    params[order[0]].delta == 1
}

/// Canonical representative of `{params, flip(params)}` for one block.
///
/// The beta-sorted first member gets `delta = 1` whenever exactly one of the
/// two representatives achieves it; otherwise the lowest-index member gets
/// `delta = 1`. Pairs share `epsilon = sqrt(eps1 * eps2)`, singletons get
/// `epsilon = 0, delta = 1`.
pub(crate) fn canonical_block(members: &[usize], params: &[VariableParams]) -> Vec<VariableParams> {
    if params.len() == 1 {
        return vec![VariableParams::independent(params[0].alpha)];
    }
    let flipped: Vec<VariableParams> = params.iter().map(VariableParams::flipped).collect();
    let keep_ok = first_sorted_is_positive(members, params);
    let flip_ok = first_sorted_is_positive(members, &flipped);
    let lowest = (0..members.len()).min_by_key(|&p| members[p]).unwrap_or(0);
    let keep = match (keep_ok, flip_ok) {
        (true, false) => true,
        (false, true) => false,
        _ => params[lowest].delta == 1,
    };
    let mut out = if keep { params.to_vec() } else { flipped };
    if out.len() == 2 {
        let shared = (out[0].epsilon * out[1].epsilon).sqrt();
        out[0].epsilon = shared;
        out[1].epsilon = shared;
    }
    out
}

/// Log-probability of a full outcome; `-inf` if some block has zero mass.
pub fn joint_log_pmf(model: &Model, x: &[u8]) -> Result<f64, ModelError> {
    if x.len() != model.d() {
        return Err(ModelError::Dimension {
            expected: model.d(),
            found: x.len(),
        });
    }
    let mut total = 0.0;
    for block in model.blocks() {
        let xb: Vec<u8> = block.members().iter().map(|&j| x[j]).collect();
        let lp = block_log_pmf(&block, &xb)?;
        if lp == f64::NEG_INFINITY {
            return Ok(f64::NEG_INFINITY);
        }
        total += lp;
    }
    Ok(total)
}

/// Log-likelihood of every row of `data` under `model`.
pub fn log_likelihood(model: &Model, data: &BinaryDataset) -> Result<f64, ModelError> {
    if data.d() != model.d() {
        return Err(ModelError::Dimension {
            expected: model.d(),
            found: data.d(),
        });
    }
    let mut total = 0.0;
    for block in model.blocks() {
        let kernel = BlockKernel::with_order(block.params(), block.order().to_vec());
        let mut seg = vec![0.0; block.len() + 1];
        let mut xb = vec![0u8; block.len()];
        for row in data.rows() {
            for (slot, &j) in xb.iter_mut().zip(block.members()) {
                *slot = row[j];
            }
            total += kernel.segment_log_weights(&xb, &mut seg);
        }
    }
    Ok(total)
}

/// Draws `n` rows; deterministic in `seed`.
pub fn sample(model: &Model, n: usize, seed: u64) -> BinaryDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let blocks = model.partition.blocks();
    let derived: Vec<Derived> = model.params.iter().map(VariableParams::derive).collect();
    let d = model.d();
    let mut values = vec![0u8; n * d];
    for row in values.chunks_exact_mut(d) {
        for members in &blocks {
            let u: f64 = rng.random();
            for &j in members {
                let dv = derived[j];
                let p = if u < dv.beta { dv.lambda } else { dv.nu };
                row[j] = u8::from(rng.random::<f64>() < p);
            }
        }
    }
    BinaryDataset::new(model.names.clone(), values).expect("sampled matrix is binary and non-empty")
}

/// `P(X_j = 1, X_k = 1)` for two variables.
///
/// Within a block each variable is `(1-eps) alpha + eps * g(U)` where `g` is
/// the indicator of its high-probability region (`[0, alpha)` when `delta = 1`,
/// `[1 - alpha, 1)` otherwise), so the pair probability only needs the overlap
/// of the two regions.
pub fn pair_prob(a: &VariableParams, b: &VariableParams, same_block: bool) -> f64 {
    let independent = a.alpha * b.alpha;
    if !same_block {
        return independent;
    }
    let overlap = if a.delta == b.delta {
        a.alpha.min(b.alpha)
    } else {
        (a.alpha + b.alpha - 1.0).max(0.0)
    };
    independent + a.epsilon * b.epsilon * (overlap - independent)
}

/// Model-implied Cramér's V between variables `j` and `k`.
pub fn model_cramers_v(model: &Model, j: usize, k: usize) -> f64 {
    if j == k {
        return 1.0;
    }
    if !model.partition.same_block(j, k) {
        return 0.0;
    }
    let (a, b) = (&model.params[j], &model.params[k]);
    let (lo, hi) = {
        let (x, y) = (a.beta(), b.beta());
        if x <= y {
            (x, y)
        } else {
            (y, x)
        }
    };
    a.epsilon * b.epsilon * (lo * (1.0 - hi) / (hi * (1.0 - lo))).sqrt()
}

/// Full `d x d` matrix of model-implied Cramér's V (unit diagonal).
pub fn model_cramers_matrix(model: &Model) -> Vec<Vec<f64>> {
    let d = model.d();
    (0..d)
        .map(|j| (0..d).map(|k| model_cramers_v(model, j, k)).collect())
        .collect()
}
