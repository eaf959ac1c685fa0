//! Seeded simulation studies: data from a known block design, model
//! selection, and agreement between the truth and the selected fit.

use std::fmt::Write as _;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::ModelError;
use crate::estimation::{FitConfig, Warning};
use crate::model::{sample, BlockKernel, Model, Partition, VariableParams};
use crate::seed::derive_seed;
use crate::selection::{hac_candidates, select_hac, select_mh, Linkage, MhConfig, SelectionResult};

/// Largest merged component enumerated by [`kl_divergence`] by default.
pub const DEFAULT_KL_CAP: usize = 20;

/// Connected components of the union of two partitions, each sorted.
pub fn merged_components(p1: &Partition, p2: &Partition) -> Vec<Vec<usize>> {
    let d = p1.d();
    let mut parent: Vec<usize> = (0..d).collect();
    fn find(parent: &mut [usize], mut i: usize) -> usize {
        while parent[i] != i {
            parent[i] = parent[parent[i]];
            i = parent[i];
        }
        i
    }
    for p in [p1, p2] {
        for block in p.blocks() {
            for w in block.windows(2) {
                let (a, b) = (find(&mut parent, w[0]), find(&mut parent, w[1]));
                if a != b {
                    parent[a.max(b)] = a.min(b);
                }
            }
        }
    }
    let roots: Vec<usize> = (0..d).map(|j| find(&mut parent, j)).collect();
    Partition::from_labels(&roots).blocks()
}

struct ComponentBlocks {
    /// Positions inside the component, aligned with the kernel's variables.
    positions: Vec<Vec<usize>>,
    kernels: Vec<BlockKernel>,
}

impl ComponentBlocks {
    fn new(model: &Model, component: &[usize]) -> Self {
        let mut positions = Vec::new();
        let mut kernels = Vec::new();
        for members in model.partition().blocks() {
            if !component.contains(&members[0]) {
                continue;
            }
            let params: Vec<VariableParams> = members.iter().map(|&j| model.params()[j]).collect();
            positions.push(
                members
                    .iter()
                    .map(|j| component.binary_search(j).expect("block inside component"))
                    .collect(),
            );
            kernels.push(BlockKernel::new(&params));
        }
        Self { positions, kernels }
    }

    fn log_pmf(&self, x: &[u8], buf: &mut Vec<u8>) -> f64 {
        let mut total = 0.0;
        for (pos, kernel) in self.positions.iter().zip(&self.kernels) {
            buf.clear();
            buf.extend(pos.iter().map(|&p| x[p]));
            total += kernel.log_pmf(buf);
        }
        total
    }
}

/// Kullback-Leibler divergence `KL(true || est)` by exact enumeration over the
/// connected components of the union of both partitions.
pub fn kl_divergence(true_model: &Model, est_model: &Model, cap: usize) -> Result<f64, ModelError> {
    if true_model.d() != est_model.d() {
        return Err(ModelError::Dimension {
            expected: true_model.d(),
            found: est_model.d(),
        });
    }
    let components = merged_components(true_model.partition(), est_model.partition());
    if let Some(big) = components.iter().find(|c| c.len() > cap) {
        return Err(ModelError::ComponentTooLarge { size: big.len(), cap });
    }
    let mut total = 0.0;
    for comp in &components {
        let t = ComponentBlocks::new(true_model, comp);
        let e = ComponentBlocks::new(est_model, comp);
        let m = comp.len();
        let mut x = vec![0u8; m];
        let mut buf = Vec::with_capacity(m);
        let mut kl = 0.0;
        for mask in 0u64..(1u64 << m) {
            for (i, v) in x.iter_mut().enumerate() {
                *v = ((mask >> i) & 1) as u8;
            }
            let lt = t.log_pmf(&x, &mut buf);
            if lt == f64::NEG_INFINITY {
                continue;
            }
            let le = e.log_pmf(&x, &mut buf);
            if le == f64::NEG_INFINITY {
                return Ok(f64::INFINITY);
            }
            kl += lt.exp() * (lt - le);
        }
        total += kl;
    }
    Ok(total.max(0.0))
}

fn choose2(k: usize) -> f64 {
    (k * k.saturating_sub(1)) as f64 / 2.0
}

/// Adjusted Rand index from the pair-counting contingency table.
pub fn adjusted_rand_index(p1: &Partition, p2: &Partition) -> f64 {
    assert_eq!(p1.d(), p2.d(), "partitions must have the same length");
    let (r, c) = (p1.n_blocks(), p2.n_blocks());
    let mut table = vec![0usize; r * c];
    for (&a, &b) in p1.labels().iter().zip(p2.labels()) {
        table[a * c + b] += 1;
    }
    let index: f64 = table.iter().map(|&k| choose2(k)).sum();
    let rows: f64 = p1.block_sizes().into_iter().map(choose2).sum();
    let cols: f64 = p2.block_sizes().into_iter().map(choose2).sum();
    let total = choose2(p1.d());
    if total == 0.0 {
        return 1.0;
    }
    let expected = rows * cols / total;
    let max = 0.5 * (rows + cols);
    if max == expected {
        return 1.0;
    }
    (index - expected) / (max - expected)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ScenarioMethod {
    #[default]
    Hac,
    Mh,
    Both,
}

impl ScenarioMethod {
    fn runs_hac(self) -> bool {
        matches!(self, ScenarioMethod::Hac | ScenarioMethod::Both)
    }

    fn runs_mh(self) -> bool {
        matches!(self, ScenarioMethod::Mh | ScenarioMethod::Both)
    }
}

/// A simulation cell: consecutive blocks of `block_size` variables sharing
/// `alpha`, `epsilon` and `delta`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub n: usize,
    pub d: usize,
    pub block_size: usize,
    pub alpha: f64,
    pub epsilon: f64,
    pub delta: u8,
    pub replicates: usize,
    pub seed: u64,
    pub method: ScenarioMethod,
    pub linkage: Linkage,
    pub fit: FitConfig,
    pub mh: MhConfig,
    pub kl_cap: usize,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            n: 400,
            d: 10,
            block_size: 5,
            alpha: 0.4,
            epsilon: 0.4,
            delta: 1,
            replicates: 20,
            seed: crate::io::DEFAULT_SEED,
            method: ScenarioMethod::Hac,
            linkage: Linkage::Ward,
            fit: FitConfig {
                restarts: 10,
                ..FitConfig::default()
            },
            mh: MhConfig::default(),
            kl_cap: DEFAULT_KL_CAP,
        }
    }
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.n == 0 {
            return Err("n must be at least 1".into());
        }
        if self.block_size == 0 || self.d == 0 || !self.d.is_multiple_of(self.block_size) {
            return Err(format!(
                "d = {} must be a positive multiple of block_size = {}",
                self.d, self.block_size
            ));
        }
        if self.replicates == 0 {
            return Err("replicates must be at least 1".into());
        }
        if self.method.runs_mh() && (self.mh.iterations == 0 || self.mh.chains == 0) {
            return Err("mh iterations and chains must be at least 1".into());
        }
        VariableParams::new(self.alpha, self.epsilon, self.delta).map_err(|e| e.to_string())?;
        self.fit.validate()
    }

    pub fn true_partition(&self) -> Partition {
        Partition::consecutive(self.d, self.block_size)
    }

    pub fn true_model(&self) -> Result<Model, ModelError> {
        let vp = VariableParams::new(self.alpha, self.epsilon, self.delta)?;
        Model::new(self.true_partition(), vec![vp; self.d])
    }
}

/// Outcome of one selection procedure on one replicate.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MethodOutcome {
    pub method: String,
    pub selected: Vec<usize>,
    pub selected_true: bool,
    pub ari: f64,
    pub kl: Option<f64>,
    pub bic: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReplicateRecord {
    pub replicate: usize,
    pub seed: u64,
    /// Whether the true partition is one of the HAC reduction-step candidates.
    pub in_candidates: bool,
    pub outcomes: Vec<MethodOutcome>,
    pub warnings: Vec<Warning>,
}

/// Aggregates over replicates for one method.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MethodSummary {
    pub method: String,
    pub replicates: usize,
    pub recovered: usize,
    pub selected_true: usize,
    pub mean_ari: f64,
    pub sd_ari: f64,
    pub mean_kl: f64,
    pub sd_kl: f64,
    pub kl_available: usize,
    pub mean_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentReport {
    pub config: ScenarioConfig,
    pub records: Vec<ReplicateRecord>,
    pub summaries: Vec<MethodSummary>,
}

fn mean_sd(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

fn outcome(
    method: &str,
    result: &SelectionResult,
    truth: &Model,
    cap: usize,
    seconds: f64,
    warnings: &mut Vec<Warning>,
) -> MethodOutcome {
    let selected = result.best.model.partition();
    let kl = match kl_divergence(truth, &result.best.model, cap) {
        Ok(v) => Some(v),
        Err(e) => {
            warnings.push(Warning::new(format!("{method}: KL not computed: {e}")));
            None
        }
    };
    MethodOutcome {
        method: method.to_string(),
        selected: selected.one_based(),
        selected_true: selected == truth.partition(),
        ari: adjusted_rand_index(truth.partition(), selected),
        kl,
        bic: result.best.bic,
        seconds,
    }
}

/// Runs one replicate; all randomness derives from `(cfg.seed, replicate)`.
pub fn run_replicate(cfg: &ScenarioConfig, truth: &Model, replicate: usize) -> ReplicateRecord {
    let rep_seed = derive_seed(cfg.seed, &[replicate as u64]);
    let data = sample(truth, cfg.n, derive_seed(rep_seed, &[1]));
    let fit_cfg = FitConfig {
        seed: derive_seed(rep_seed, &[2]),
        ..cfg.fit
    };
    let in_candidates = hac_candidates(&data, cfg.linkage)
        .iter()
        .any(|p| p == truth.partition());
    let mut warnings = Vec::new();
    let mut outcomes = Vec::new();
    if cfg.method.runs_hac() {
        let start = Instant::now();
        let result = select_hac(&data, &fit_cfg, cfg.linkage);
        let seconds = start.elapsed().as_secs_f64();
        outcomes.push(outcome("hac", &result, truth, cfg.kl_cap, seconds, &mut warnings));
    }
    if cfg.method.runs_mh() {
        let start = Instant::now();
        let result = select_mh(&data, &fit_cfg, &cfg.mh);
        let seconds = start.elapsed().as_secs_f64();
        outcomes.push(outcome("mh", &result, truth, cfg.kl_cap, seconds, &mut warnings));
    }
    ReplicateRecord {
        replicate,
        seed: rep_seed,
        in_candidates,
        outcomes,
        warnings,
    }
}

/// Runs every replicate of `cfg` and aggregates per method.
pub fn run_scenario(cfg: &ScenarioConfig) -> Result<ExperimentReport, String> {
    cfg.validate()?;
    let truth = cfg.true_model().map_err(|e| e.to_string())?;
    let records: Vec<ReplicateRecord> = (0..cfg.replicates)
        .into_par_iter()
        .map(|r| run_replicate(cfg, &truth, r))
        .collect();
    let recovered = records.iter().filter(|r| r.in_candidates).count();
    let methods: Vec<String> = records[0].outcomes.iter().map(|o| o.method.clone()).collect();
    let summaries = methods
        .iter()
        .enumerate()
        .map(|(m, name)| {
            let outs: Vec<&MethodOutcome> = records.iter().map(|r| &r.outcomes[m]).collect();
            let aris: Vec<f64> = outs.iter().map(|o| o.ari).collect();
            let kls: Vec<f64> = outs.iter().filter_map(|o| o.kl).collect();
            let secs: Vec<f64> = outs.iter().map(|o| o.seconds).collect();
            let (mean_ari, sd_ari) = mean_sd(&aris);
            let (mean_kl, sd_kl) = mean_sd(&kls);
            MethodSummary {
                method: name.clone(),
                replicates: records.len(),
                recovered,
                selected_true: outs.iter().filter(|o| o.selected_true).count(),
                mean_ari,
                sd_ari,
                mean_kl,
                sd_kl,
                kl_available: kls.len(),
                mean_seconds: mean_sd(&secs).0,
            }
        })
        .collect();
    Ok(ExperimentReport {
        config: cfg.clone(),
        records,
        summaries,
    })
}

fn num(v: f64) -> String {
    if v.is_nan() {
        String::new()
    } else {
        format!("{v:.6}")
    }
}

const SUMMARY_HEADER: &str =
    "n,d,block_size,alpha,epsilon,method,replicates,recovered,selected_true,mean_ari,sd_ari,mean_kl,sd_kl,kl_available";
const REPLICATE_HEADER: &str =
    "n,d,block_size,alpha,epsilon,replicate,seed,in_candidates,method,selected_true,ari,kl,bic";

impl ExperimentReport {
    fn cell(&self) -> String {
        let c = &self.config;
        format!("{},{},{},{},{}", c.n, c.d, c.block_size, c.alpha, c.epsilon)
    }

    /// One row per method. Wall time is appended only when `timing` is set,
    /// keeping the default output reproducible byte for byte.
    pub fn summary_rows(&self, timing: bool) -> String {
        let mut out = String::new();
        for s in &self.summaries {
            let _ = write!(
                out,
                "{},{},{},{},{},{},{},{},{},{}",
                self.cell(),
                s.method,
                s.replicates,
                s.recovered,
                s.selected_true,
                num(s.mean_ari),
                num(s.sd_ari),
                num(s.mean_kl),
                num(s.sd_kl),
                s.kl_available
            );
            if timing {
                let _ = write!(out, ",{}", num(s.mean_seconds));
            }
            out.push('\n');
        }
        out
    }

    pub fn summary_header(timing: bool) -> String {
        if timing {
            format!("{SUMMARY_HEADER},mean_seconds\n")
        } else {
            format!("{SUMMARY_HEADER}\n")
        }
    }

    pub fn replicate_rows(&self, timing: bool) -> String {
        let mut out = String::new();
        for r in &self.records {
            for o in &r.outcomes {
                let _ = write!(
                    out,
                    "{},{},{},{},{},{},{},{},{}",
                    self.cell(),
                    r.replicate,
                    r.seed,
                    r.in_candidates,
                    o.method,
                    o.selected_true,
                    num(o.ari),
                    o.kl.map_or(String::new(), num),
                    num(o.bic)
                );
                if timing {
                    let _ = write!(out, ",{}", num(o.seconds));
                }
                out.push('\n');
            }
        }
        out
    }

    pub fn replicate_header(timing: bool) -> String {
        if timing {
            format!("{REPLICATE_HEADER},seconds\n")
        } else {
            format!("{REPLICATE_HEADER}\n")
        }
    }
}

/// A scenario file holds one scenario or a list of them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ScenarioFile {
    One(ScenarioConfig),
    Many(Vec<ScenarioConfig>),
}

impl ScenarioFile {
    pub fn into_vec(self) -> Vec<ScenarioConfig> {
        match self {
            ScenarioFile::One(c) => vec![c],
            ScenarioFile::Many(v) => v,
        }
    }
}
