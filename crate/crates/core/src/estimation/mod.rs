//! Two-step estimation for a fixed partition.
//!
//! Margins are the column means. Dependency parameters are then fitted block
//! by block with the margins held fixed: nothing to fit for singletons, a
//! closed form for pairs, and EM for three or more variables.

mod em;

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::BinaryDataset;
use crate::model::{canonical_block, Model, Partition, VariableParams};

pub use em::{
    e_step, em_fit_block, em_trajectory, m_step_epsilon, BlockData, EmBlockFit, ExpectedCounts, MStep, PosteriorWeights,
};

/// Upper bound applied to fitted dependency strengths.
pub const EPSILON_MAX: f64 = 1.0 - 1e-9;

/// A non-fatal condition met while fitting.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Warning(pub String);

impl Warning {
    pub fn new(msg: impl Into<String>) -> Self {
        Self(msg.into())
    }
}

impl std::fmt::Display for Warning {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitConfig {
    /// Random EM initializations per block.
    pub restarts: usize,
    /// Stop when one EM iteration gains less than this in log-likelihood.
    pub tol: f64,
    pub max_iter: usize,
    pub seed: u64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            restarts: 40,
            tol: 0.01,
            max_iter: 1000,
            seed: crate::io::DEFAULT_SEED,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.restarts == 0 {
            return Err("restarts must be at least 1".into());
        }
        if self.tol.is_nan() || self.tol <= 0.0 {
            return Err("tol must be positive".into());
        }
        if self.max_iter == 0 {
            return Err("max_iter must be at least 1".into());
        }
        Ok(())
    }
}

/// Column means clamped into `[1/(2n), 1 - 1/(2n)]`.
#[derive(Debug, Clone, PartialEq)]
pub struct MarginFit {
    pub alpha: Vec<f64>,
    pub warnings: Vec<Warning>,
}

pub fn margin_step(data: &BinaryDataset) -> MarginFit {
    let n = data.n() as f64;
    let lo = 1.0 / (2.0 * n);
    let hi = 1.0 - lo;
    let mut warnings = Vec::new();
    let alpha = data
        .column_sums()
        .iter()
        .enumerate()
        .map(|(j, &s)| {
            let mean = s as f64 / n;
            let clamped = mean.clamp(lo, hi);
            if clamped != mean {
                warnings.push(Warning::new(format!(
                    "column {:?} is constant; margin clamped to {clamped}",
                    data.names()[j]
                )));
            }
            clamped
        })
        .collect();
    MarginFit { alpha, warnings }
}

/// Closed-form dependency estimate for a block of two variables.
#[derive(Debug, Clone, PartialEq)]
pub struct PairFit {
    /// Canonical parameters of `(j1, j2)`.
    pub params: [VariableParams; 2],
    pub epsilon: f64,
    pub warning: Option<Warning>,
}

pub fn fit_pair(data: &BinaryDataset, j1: usize, j2: usize, alpha_hat: &[f64]) -> PairFit {
    assert_ne!(j1, j2, "fit_pair needs two distinct variables");
    let n = data.n() as f64;
    let both = data.rows().filter(|r| r[j1] == 1 && r[j2] == 1).count() as f64;
    pair_estimate(both / n, alpha_hat[j1], alpha_hat[j2], j1 < j2)
}

/// `n11` is the empirical frequency of `(1, 1)`; `first_is_lower` tells
/// which of the two has the lower variable index.
pub(crate) fn pair_estimate(n11: f64, a1: f64, a2: f64, first_is_lower: bool) -> PairFit {
    let cov = n11 - a1 * a2;
    let mut params = [VariableParams::independent(a1), VariableParams::independent(a2)];
    if cov < 0.0 {
        // Opposite directions; the smaller margin keeps delta = 1.
        let flip = if a1 < a2 || (a1 == a2 && first_is_lower) { 1 } else { 0 };
        params[flip].delta = 0;
    }
    let (b1, b2) = (params[0].beta(), params[1].beta());
    let (lo, hi) = if b1 <= b2 { (b1, b2) } else { (b2, b1) };
    let mut epsilon = (cov.abs() / (lo * (1.0 - hi))).sqrt();
    let mut warning = None;
    if epsilon > EPSILON_MAX {
        warning = Some(Warning::new(format!("pair epsilon {epsilon} truncated below 1")));
        epsilon = EPSILON_MAX;
    }
    params[0].epsilon = epsilon;
    params[1].epsilon = epsilon;
    let members = if first_is_lower { [0, 1] } else { [1, 0] };
    let canon = canonical_block(&members, &params);
    PairFit {
        params: [canon[0], canon[1]],
        epsilon,
        warning,
    }
}

/// Number of continuous parameters of a partition.
pub fn count_params(partition: &Partition) -> usize {
    partition.block_sizes().iter().map(|&s| block_param_count(s)).sum()
}

pub fn block_param_count(size: usize) -> usize {
    match size {
        0 => 0,
        1 => 1,
        2 => 3,
        s => 2 * s,
    }
}

/// How a block was fitted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BlockMethod {
    Margin,
    Pair,
    Em,
}

/// Fit of one block; independent of the rest of the partition.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BlockFit {
    pub members: Vec<usize>,
    /// Canonical parameters in member order.
    #[serde(skip)]
    pub params: Vec<VariableParams>,
    pub loglik: f64,
    pub method: BlockMethod,
    /// Index of the best EM restart.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub best_restart: Option<usize>,
    /// EM iterations used by each restart.
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub iterations: Vec<usize>,
    /// Final log-likelihood of each EM restart.
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub restart_logliks: Vec<f64>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<Warning>,
}

/// Fits one block with the margins in `alpha_hat` (full length `d`).
pub fn fit_block(data: &BinaryDataset, members: &[usize], alpha_hat: &[f64], cfg: &FitConfig) -> BlockFit {
    let block = BlockData::new(data, members);
    let local_alpha: Vec<f64> = members.iter().map(|&j| alpha_hat[j]).collect();
    match members.len() {
        1 => {
            let params = vec![VariableParams::independent(local_alpha[0])];
            BlockFit {
                members: members.to_vec(),
                loglik: block.log_likelihood(&params),
                params,
                method: BlockMethod::Margin,
                best_restart: None,
                iterations: Vec::new(),
                restart_logliks: Vec::new(),
                warnings: Vec::new(),
            }
        }
        2 => {
            let pair = fit_pair(data, members[0], members[1], alpha_hat);
            let params = pair.params.to_vec();
            BlockFit {
                members: members.to_vec(),
                loglik: block.log_likelihood(&params),
                params,
                method: BlockMethod::Pair,
                best_restart: None,
                iterations: Vec::new(),
                restart_logliks: Vec::new(),
                warnings: pair.warning.into_iter().collect(),
            }
        }
        _ => {
            let sums: Vec<usize> = {
                let all = data.column_sums();
                members.iter().map(|&j| all[j]).collect()
            };
            let seed = em::block_seed(cfg.seed, &block, &local_alpha, &sums);
            let fit = em_fit_block(&block, &local_alpha, cfg, seed);
            BlockFit {
                members: members.to_vec(),
                params: fit.params,
                loglik: fit.loglik,
                method: BlockMethod::Em,
                best_restart: Some(fit.best_restart),
                iterations: fit.iterations,
                restart_logliks: fit.restart_logliks,
                warnings: fit.warnings,
            }
        }
    }
}

/// Concurrent cache of block fits keyed on block membership.
///
/// Valid for one dataset and one [`FitConfig`]; inserts are idempotent
/// because a block fit depends only on its members.
#[derive(Debug, Default)]
pub struct BlockFitCache {
    map: Mutex<HashMap<Vec<usize>, Arc<BlockFit>>>,
}

impl BlockFitCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.map.lock().expect("cache lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get_or_fit(
        &self,
        data: &BinaryDataset,
        members: &[usize],
        alpha_hat: &[f64],
        cfg: &FitConfig,
    ) -> Arc<BlockFit> {
        if let Some(hit) = self.map.lock().expect("cache lock").get(members) {
            return Arc::clone(hit);
        }
        let fit = Arc::new(fit_block(data, members, alpha_hat, cfg));
        let mut map = self.map.lock().expect("cache lock");
        Arc::clone(map.entry(members.to_vec()).or_insert(fit))
    }
}

/// A model fitted to data together with its scores and diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct FittedModel {
    pub model: Model,
    pub loglik: f64,
    pub bic: f64,
    pub n: usize,
    pub n_params: usize,
    pub seed: u64,
    pub blocks: Vec<BlockFit>,
    pub warnings: Vec<Warning>,
}

pub fn bic(loglik: f64, n_params: usize, n: usize) -> f64 {
    loglik - 0.5 * n_params as f64 * (n as f64).ln()
}

/// Fits `partition` to `data`.
pub fn fit(data: &BinaryDataset, partition: &Partition, cfg: &FitConfig) -> FittedModel {
    let margins = margin_step(data);
    fit_with(data, partition, cfg, &margins, None)
}

/// Fit with precomputed margins and an optional block cache.
pub fn fit_with(
    data: &BinaryDataset,
    partition: &Partition,
    cfg: &FitConfig,
    margins: &MarginFit,
    cache: Option<&BlockFitCache>,
) -> FittedModel {
    assert_eq!(partition.d(), data.d(), "partition must cover every column");
    let blocks: Vec<BlockFit> = partition
        .blocks()
        .par_iter()
        .map(|members| match cache {
            Some(c) => (*c.get_or_fit(data, members, &margins.alpha, cfg)).clone(),
            None => fit_block(data, members, &margins.alpha, cfg),
        })
        .collect();
    assemble(data, partition, cfg, margins, blocks)
}

pub(crate) fn assemble(
    data: &BinaryDataset,
    partition: &Partition,
    cfg: &FitConfig,
    margins: &MarginFit,
    blocks: Vec<BlockFit>,
) -> FittedModel {
    let mut params = vec![VariableParams::independent(0.5); data.d()];
    let mut loglik = 0.0;
    let mut warnings = margins.warnings.clone();
    for b in &blocks {
        for (&j, vp) in b.members.iter().zip(&b.params) {
            params[j] = *vp;
        }
        loglik += b.loglik;
        warnings.extend(b.warnings.iter().cloned());
    }
    let model =
        Model::with_names(partition.clone(), params, data.names().to_vec()).expect("fitted parameters are in range");
    let n_params = count_params(partition);
    FittedModel {
        model,
        loglik,
        bic: bic(loglik, n_params, data.n()),
        n: data.n(),
        n_params,
        seed: cfg.seed,
        blocks,
        warnings,
    }
}
