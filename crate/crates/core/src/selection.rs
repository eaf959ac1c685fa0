//! Partition search by BIC.
//!
//! Two procedures are provided. The deterministic one clusters the variables
//! hierarchically on `1 - V`, where `V` is the empirical Cramér's V, and
//! scores the `d` nested partitions of the dendrogram. The stochastic one is
//! a Metropolis-Hastings walk over partitions whose invariant law is
//! proportional to `exp(BIC)`.

use std::cell::RefCell;
use std::collections::{HashMap, HashSet};
use std::fmt;
use std::str::FromStr;
use std::sync::Mutex;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::BinaryDataset;
use crate::estimation::{
    bic, count_params, fit_block, fit_with, margin_step, BlockFitCache, FitConfig, FittedModel, MarginFit, Warning,
};
use crate::model::Partition;
use crate::seed::derive_seed;

/// Empirical Cramér's V between columns `j` and `k`; zero when either column
/// is constant.
pub fn empirical_cramers_v(data: &BinaryDataset, j: usize, k: usize) -> f64 {
    let n = data.n() as f64;
    let mut counts = [[0usize; 2]; 2];
    for row in data.rows() {
        counts[row[j] as usize][row[k] as usize] += 1;
    }
    cramers_v_from_counts(&counts, n)
}

fn cramers_v_from_counts(counts: &[[usize; 2]; 2], n: f64) -> f64 {
    let p = |h: usize, g: usize| counts[h][g] as f64 / n;
    let row = [p(0, 0) + p(0, 1), p(1, 0) + p(1, 1)];
    let col = [p(0, 0) + p(1, 0), p(0, 1) + p(1, 1)];
    if row.iter().chain(&col).any(|&m| m == 0.0) {
        return 0.0;
    }
    let mut chi = 0.0;
    for (h, r) in row.iter().enumerate() {
        for (g, c) in col.iter().enumerate() {
            let e = r * c;
            chi += (p(h, g) - e).powi(2) / e;
        }
    }
    chi.sqrt().min(1.0)
}

/// Empirical Cramér's V for every pair of columns, unit diagonal, with a
/// warning per constant column.
pub fn empirical_cramers_matrix(data: &BinaryDataset) -> (Vec<Vec<f64>>, Vec<Warning>) {
    let d = data.d();
    let n = data.n() as f64;
    let sums = data.column_sums();
    let mut both = vec![0usize; d * d];
    let mut ones = Vec::with_capacity(d);
    for row in data.rows() {
        ones.clear();
        ones.extend(row.iter().enumerate().filter(|(_, &v)| v == 1).map(|(j, _)| j));
        for (a, &j) in ones.iter().enumerate() {
            for &k in &ones[a + 1..] {
                both[j * d + k] += 1;
            }
        }
    }
    let mut warnings = Vec::new();
    for (j, &s) in sums.iter().enumerate() {
        if s == 0 || s == data.n() {
            warnings.push(Warning::new(format!(
                "column {:?} is constant; its Cramér's V is set to 0",
                data.names()[j]
            )));
        }
    }
    let mut v = vec![vec![0.0; d]; d];
    for j in 0..d {
        v[j][j] = 1.0;
        for k in j + 1..d {
            let n11 = both[j * d + k];
            let n10 = sums[j] - n11;
            let n01 = sums[k] - n11;
            let n00 = data.n() - n11 - n10 - n01;
            let x = cramers_v_from_counts(&[[n00, n01], [n10, n11]], n);
            v[j][k] = x;
            v[k][j] = x;
        }
    }
    (v, warnings)
}

/// Symmetric `d x d` matrix of `1 - V` with zero diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct DissimilarityMatrix {
    d: usize,
    values: Vec<f64>,
}

impl DissimilarityMatrix {
    /// Validates symmetry, range and diagonal of a row-major matrix.
    pub fn new(d: usize, values: Vec<f64>) -> Result<Self, String> {
        if values.len() != d * d {
            return Err(format!("expected {} entries, found {}", d * d, values.len()));
        }
        for i in 0..d {
            if values[i * d + i] != 0.0 {
                return Err(format!("diagonal entry {i} is not zero"));
            }
            for j in 0..d {
                let v = values[i * d + j];
                if !(0.0..=1.0).contains(&v) {
                    return Err(format!("entry ({i}, {j}) = {v} outside [0, 1]"));
                }
                if v != values[j * d + i] {
                    return Err(format!("entries ({i}, {j}) and ({j}, {i}) differ"));
                }
            }
        }
        Ok(Self { d, values })
    }

    /// Builds `1 - V` for every pair of columns; constant columns end up at
    /// distance one from everything.
    pub fn from_data(data: &BinaryDataset) -> (Self, Vec<Warning>) {
        let (v, warnings) = empirical_cramers_matrix(data);
        let d = data.d();
        let values = v.iter().flatten().map(|&x| 1.0 - x).collect();
        (Self { d, values }, warnings)
    }

    pub fn d(&self) -> usize {
        self.d
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.d + j]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Linkage {
    #[default]
    Ward,
    Single,
    Complete,
    Average,
}

impl fmt::Display for Linkage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Linkage::Ward => "ward",
            Linkage::Single => "single",
            Linkage::Complete => "complete",
            Linkage::Average => "average",
        })
    }
}

impl FromStr for Linkage {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "ward" => Ok(Linkage::Ward),
            "single" => Ok(Linkage::Single),
            "complete" => Ok(Linkage::Complete),
            "average" => Ok(Linkage::Average),
            other => Err(format!("unknown linkage {other:?}")),
        }
    }
}

/// One agglomeration step. Leaves are clusters `0..d`; the cluster formed
/// at step `s` gets id `d + s`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Merge {
    pub left: usize,
    pub right: usize,
    pub height: f64,
    pub size: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dendrogram {
    d: usize,
    merges: Vec<Merge>,
}

impl Dendrogram {
    pub fn d(&self) -> usize {
        self.d
    }

    pub fn merges(&self) -> &[Merge] {
        &self.merges
    }

    /// The `d` nested partitions, from `d` blocks down to one.
    pub fn partitions(&self) -> Vec<Partition> {
        let mut labels: Vec<usize> = (0..self.d).collect();
        let mut members: Vec<Vec<usize>> = (0..self.d).map(|j| vec![j]).collect();
        let mut out = Vec::with_capacity(self.d);
        out.push(Partition::from_labels(&labels));
        for (s, m) in self.merges.iter().enumerate() {
            let mut joined = std::mem::take(&mut members[m.left]);
            joined.append(&mut std::mem::take(&mut members[m.right]));
            let id = self.d + s;
            for &j in &joined {
                labels[j] = id;
            }
            members.push(joined);
            out.push(Partition::from_labels(&labels));
        }
        out
    }

    /// Partition with exactly `k` blocks, `1 <= k <= d`.
    pub fn partition_with(&self, k: usize) -> Partition {
        self.partitions().swap_remove(self.d - k)
    }
}

/// Agglomerative clustering with Lance-Williams updates.
///
/// Each active cluster lives in the slot of its smallest member, so ties in
/// the minimal dissimilarity go to the lexicographically smallest slot pair.
/// Ward treats the entries as squared distances.
pub fn hac(m: &DissimilarityMatrix, linkage: Linkage) -> Dendrogram {
    let d = m.d();
    let mut dist = m.values.clone();
    let mut active = vec![true; d];
    let mut size = vec![1usize; d];
    let mut id: Vec<usize> = (0..d).collect();
    let mut merges = Vec::with_capacity(d.saturating_sub(1));
    for step in 0..d.saturating_sub(1) {
        let mut best = (f64::INFINITY, usize::MAX, usize::MAX);
        for i in 0..d {
            if !active[i] {
                continue;
            }
            for j in i + 1..d {
                if active[j] && dist[i * d + j] < best.0 {
                    best = (dist[i * d + j], i, j);
                }
            }
        }
        let (height, a, b) = best;
        let (na, nb) = (size[a] as f64, size[b] as f64);
        for k in 0..d {
            if !active[k] || k == a || k == b {
                continue;
            }
            let (dka, dkb) = (dist[k * d + a], dist[k * d + b]);
            let nk = size[k] as f64;
            let v = match linkage {
                Linkage::Single => dka.min(dkb),
                Linkage::Complete => dka.max(dkb),
                Linkage::Average => (na * dka + nb * dkb) / (na + nb),
                Linkage::Ward => ((na + nk) * dka + (nb + nk) * dkb - nk * height) / (na + nb + nk),
            };
            dist[k * d + a] = v;
            dist[a * d + k] = v;
        }
        active[b] = false;
        size[a] += size[b];
        merges.push(Merge {
            left: id[a],
            right: id[b],
            height,
            size: size[a],
        });
        id[a] = d + step;
    }
    Dendrogram { d, merges }
}

/// Reduction step: the nested HAC partitions of the data's columns.
pub fn hac_candidates(data: &BinaryDataset, linkage: Linkage) -> Vec<Partition> {
    let (m, _) = DissimilarityMatrix::from_data(data);
    hac(&m, linkage).partitions()
}

/// A scored partition.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Candidate {
    #[serde(serialize_with = "serialize_partition")]
    pub partition: Partition,
    pub bic: f64,
    pub loglik: f64,
    pub n_params: usize,
    pub n_blocks: usize,
}

fn serialize_partition<S: serde::Serializer>(p: &Partition, s: S) -> Result<S::Ok, S::Error> {
    p.one_based().serialize(s)
}

impl Candidate {
    /// Higher BIC wins; ties go to fewer parameters, then fewer blocks, then
    /// the lexicographically smaller labeling.
    pub fn beats(&self, other: &Candidate) -> bool {
        if self.bic != other.bic {
            return self.bic > other.bic;
        }
        (self.n_params, self.n_blocks, self.partition.labels())
            < (other.n_params, other.n_blocks, other.partition.labels())
    }
}

fn best_of(cands: &[Candidate]) -> Option<&Candidate> {
    cands.iter().fold(None, |best: Option<&Candidate>, c| match best {
        Some(b) if !c.beats(b) => Some(b),
        _ => Some(c),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Hac,
    Mh,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Hac => "hac",
            Method::Mh => "mh",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChainStats {
    pub seed: u64,
    /// Proposals accepted, including proposals equal to the current state.
    pub accepted: usize,
    /// Accepted proposals that changed the state.
    pub moves: usize,
    pub acceptance_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "method", rename_all = "lowercase")]
pub enum Diagnostics {
    Hac {
        linkage: Linkage,
        merge_heights: Vec<f64>,
    },
    Mh {
        iterations: usize,
        chains: Vec<ChainStats>,
        acceptance_rate: f64,
        distinct_partitions: usize,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelectionResult {
    pub best: FittedModel,
    /// Scored partitions in evaluation order.
    pub candidates: Vec<Candidate>,
    pub method: Method,
    pub diagnostics: Diagnostics,
    pub warnings: Vec<Warning>,
}

/// BIC evaluation of partitions against one dataset, sharing block fits.
pub struct PartitionScorer<'a> {
    data: &'a BinaryDataset,
    cfg: FitConfig,
    margins: MarginFit,
    cache: Option<BlockFitCache>,
    memo: Option<Mutex<HashMap<Partition, Candidate>>>,
}

impl<'a> PartitionScorer<'a> {
    pub fn new(data: &'a BinaryDataset, cfg: &FitConfig, caching: bool) -> Self {
        Self {
            data,
            cfg: *cfg,
            margins: margin_step(data),
            cache: caching.then(BlockFitCache::new),
            memo: caching.then(|| Mutex::new(HashMap::new())),
        }
    }

    pub fn score(&self, partition: &Partition) -> Candidate {
        if let Some(memo) = &self.memo {
            if let Some(hit) = memo.lock().expect("memo lock").get(partition) {
                return hit.clone();
            }
        }
        let loglik: f64 = partition
            .blocks()
            .iter()
            .map(|members| self.block_loglik(members))
            .sum();
        let n_params = count_params(partition);
        let cand = Candidate {
            partition: partition.clone(),
            bic: bic(loglik, n_params, self.data.n()),
            loglik,
            n_params,
            n_blocks: partition.n_blocks(),
        };
        if let Some(memo) = &self.memo {
            memo.lock().expect("memo lock").insert(partition.clone(), cand.clone());
        }
        cand
    }

    fn block_loglik(&self, members: &[usize]) -> f64 {
        match &self.cache {
            Some(c) => c.get_or_fit(self.data, members, &self.margins.alpha, &self.cfg).loglik,
            None => fit_block(self.data, members, &self.margins.alpha, &self.cfg).loglik,
        }
    }

    /// Full fitted model for `partition`.
    pub fn fitted(&self, partition: &Partition) -> FittedModel {
        fit_with(self.data, partition, &self.cfg, &self.margins, self.cache.as_ref())
    }

    pub fn margins(&self) -> &MarginFit {
        &self.margins
    }

    pub fn cached_blocks(&self) -> usize {
        self.cache.as_ref().map_or(0, BlockFitCache::len)
    }
}

/// Deterministic selection: HAC reduction step then BIC comparison.
pub fn select_hac(data: &BinaryDataset, cfg: &FitConfig, linkage: Linkage) -> SelectionResult {
    select_hac_with(data, cfg, linkage, true)
}

pub fn select_hac_with(data: &BinaryDataset, cfg: &FitConfig, linkage: Linkage, caching: bool) -> SelectionResult {
    let (m, mut warnings) = DissimilarityMatrix::from_data(data);
    let dendrogram = hac(&m, linkage);
    let scorer = PartitionScorer::new(data, cfg, caching);
    let candidates: Vec<Candidate> = dendrogram.partitions().par_iter().map(|p| scorer.score(p)).collect();
    let best = best_of(&candidates).expect("at least one candidate").partition.clone();
    let fitted = scorer.fitted(&best);
    warnings.extend(fitted.warnings.iter().cloned());
    SelectionResult {
        best: fitted,
        candidates,
        method: Method::Hac,
        diagnostics: Diagnostics::Hac {
            linkage,
            merge_heights: dendrogram.merges().iter().map(|m| m.height).collect(),
        },
        warnings,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MhConfig {
    pub iterations: usize,
    pub chains: usize,
    /// Memoize BIC per partition and fits per block.
    pub memoize: bool,
}

impl Default for MhConfig {
    fn default() -> Self {
        Self {
            iterations: 2000,
            chains: 3,
            memoize: true,
        }
    }
}

/// Acceptance probability of moving from a state with `blocks` blocks and
/// score `score` to a candidate with `cand_blocks` and `cand_score`, under
/// the proposal `q(. | w) = 1 / (d (B(w) + 1))`.
pub fn acceptance_probability(score: f64, blocks: usize, cand_score: f64, cand_blocks: usize) -> f64 {
    let log_ratio = cand_score - score + ((blocks + 1) as f64).ln() - ((cand_blocks + 1) as f64).ln();
    if log_ratio >= 0.0 {
        1.0
    } else {
        log_ratio.exp()
    }
}

/// Proposal: variable `j` uniform in `0..d`, target label uniform in
/// `0..=B`, where label `B` opens a new block.
pub fn propose<R: Rng>(current: &Partition, rng: &mut R) -> Partition {
    let d = current.d();
    let j = rng.random_range(0..d);
    let label = rng.random_range(0..=current.n_blocks());
    current.with_move(j, label)
}

/// Random initial state: independent uniform labels in `0..d`.
pub fn initial_state<R: Rng>(d: usize, rng: &mut R) -> Partition {
    let labels: Vec<usize> = (0..d).map(|_| rng.random_range(0..d)).collect();
    Partition::from_labels(&labels)
}

/// One Metropolis-Hastings chain. `score` maps a canonical partition to its
/// log target (the BIC); `visit` sees the state after every iteration,
/// preceded by the initial state.
pub fn run_chain<S, V>(d: usize, iterations: usize, seed: u64, mut score: S, mut visit: V) -> ChainStats
where
    S: FnMut(&Partition) -> f64,
    V: FnMut(&Partition, f64),
{
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut current = initial_state(d, &mut rng);
    let mut current_score = score(&current);
    visit(&current, current_score);
    let (mut accepted, mut moves) = (0, 0);
    for _ in 0..iterations {
        let cand = propose(&current, &mut rng);
        if cand == current {
            accepted += 1;
        } else {
            let cand_score = score(&cand);
            let rho = acceptance_probability(current_score, current.n_blocks(), cand_score, cand.n_blocks());
            let u: f64 = rng.random();
            if u < rho {
                accepted += 1;
                moves += 1;
                current = cand;
                current_score = cand_score;
            }
        }
        visit(&current, current_score);
    }
    ChainStats {
        seed,
        accepted,
        moves,
        acceptance_rate: if iterations > 0 {
            accepted as f64 / iterations as f64
        } else {
            0.0
        },
    }
}

/// Stochastic selection: `chains` Metropolis-Hastings chains of `iterations`
/// steps; returns the best visited partition.
pub fn select_mh(data: &BinaryDataset, cfg: &FitConfig, mh: &MhConfig) -> SelectionResult {
    let d = data.d();
    let scorer = PartitionScorer::new(data, cfg, mh.memoize);
    let runs: Vec<(ChainStats, Vec<Candidate>)> = (0..mh.chains)
        .into_par_iter()
        .map(|c| {
            let seed = derive_seed(cfg.seed, &[0x4d48, c as u64]);
            let mut first_seen: Vec<Candidate> = Vec::new();
            let mut seen: HashSet<Partition> = HashSet::new();
            let scored: RefCell<HashMap<Partition, Candidate>> = RefCell::new(HashMap::new());
            let stats = run_chain(
                d,
                mh.iterations,
                seed,
                |p| {
                    let cand = scorer.score(p);
                    let s = cand.bic;
                    scored.borrow_mut().entry(p.clone()).or_insert(cand);
                    s
                },
                |p, _| {
                    if seen.insert(p.clone()) {
                        first_seen.push(scored.borrow()[p].clone());
                    }
                },
            );
            (stats, first_seen)
        })
        .collect();

    let mut candidates = Vec::new();
    let mut index: HashSet<Partition> = HashSet::new();
    let mut chains = Vec::with_capacity(runs.len());
    for (stats, visited) in runs {
        chains.push(stats);
        for c in visited {
            if index.insert(c.partition.clone()) {
                candidates.push(c);
            }
        }
    }
    let best = best_of(&candidates)
        .expect("chains visit at least one state")
        .partition
        .clone();
    let fitted = scorer.fitted(&best);
    let total: usize = chains.iter().map(|c| c.accepted).sum();
    let steps = mh.iterations * mh.chains;
    let warnings = fitted.warnings.clone();
    SelectionResult {
        best: fitted,
        diagnostics: Diagnostics::Mh {
            iterations: mh.iterations,
            acceptance_rate: if steps > 0 { total as f64 / steps as f64 } else { 0.0 },
            distinct_partitions: candidates.len(),
            chains,
        },
        candidates,
        method: Method::Mh,
        warnings,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn matrix(d: usize, upper: &[f64]) -> DissimilarityMatrix {
        let mut values = vec![0.0; d * d];
        let mut it = upper.iter();
        for i in 0..d {
            for j in i + 1..d {
                let v = *it.next().unwrap();
                values[i * d + j] = v;
                values[j * d + i] = v;
            }
        }
        DissimilarityMatrix::new(d, values).unwrap()
    }

    #[test]
    fn cramers_v_examples() {
        let data = BinaryDataset::from_rows(2, vec![1, 1, 0, 0, 1, 1, 0, 0, 1, 1]).unwrap();
        assert!((empirical_cramers_v(&data, 0, 1) - 1.0).abs() < 1e-12);
        let constant = BinaryDataset::from_rows(2, vec![1, 1, 1, 0, 1, 1]).unwrap();
        assert_eq!(empirical_cramers_v(&constant, 0, 1), 0.0);
        let (m, warnings) = DissimilarityMatrix::from_data(&constant);
        assert_eq!(m.get(0, 1), 1.0);
        assert_eq!(warnings.len(), 1);

        // 2x2 counts (n11, n10, n01, n00) = (30, 10, 10, 50)
        let mut rows = Vec::new();
        for (x, y, c) in [(1u8, 1u8, 30), (1, 0, 10), (0, 1, 10), (0, 0, 50)] {
            for _ in 0..c {
                rows.extend([x, y]);
            }
        }
        let data = BinaryDataset::from_rows(2, rows).unwrap();
        let (p1, q1, p11) = (0.4f64, 0.4f64, 0.3f64);
        let identity = (p11 - p1 * q1).abs() / (p1 * (1.0 - p1) * q1 * (1.0 - q1)).sqrt();
        assert!((empirical_cramers_v(&data, 0, 1) - identity).abs() < 1e-12);
        let (m, _) = DissimilarityMatrix::from_data(&data);
        assert!((m.get(1, 0) - (1.0 - identity)).abs() < 1e-12);
    }

    #[test]
    fn rejects_invalid_dissimilarity() {
        assert!(DissimilarityMatrix::new(2, vec![0.0, 0.5, 0.4, 0.0]).is_err());
        assert!(DissimilarityMatrix::new(2, vec![0.1, 0.5, 0.5, 0.0]).is_err());
        assert!(DissimilarityMatrix::new(2, vec![0.0, 1.5, 1.5, 0.0]).is_err());
    }

    #[test]
    fn single_linkage_three_points() {
        let m = matrix(3, &[0.1, 0.9, 0.8]);
        let dendro = hac(&m, Linkage::Single);
        assert_eq!((dendro.merges()[0].left, dendro.merges()[0].right), (0, 1));
        assert_eq!((dendro.merges()[1].left, dendro.merges()[1].right), (3, 2));
        assert!((dendro.merges()[1].height - 0.8).abs() < 1e-15);
        let parts = dendro.partitions();
        assert_eq!(parts[1].labels(), &[0, 0, 1]);
        assert_eq!(parts[2].labels(), &[0, 0, 0]);
    }

    #[test]
    fn block_diagonal_recovered_by_every_linkage() {
        // blocks {0,2,5}, {1,4}, {3}
        let truth = Partition::from_labels(&[0, 1, 0, 2, 1, 0]);
        let d = 6;
        let mut values = vec![0.0; d * d];
        for i in 0..d {
            for j in 0..d {
                if i != j {
                    values[i * d + j] = if truth.same_block(i, j) {
                        0.2 + 0.05 * ((i + j) % 4) as f64
                    } else {
                        1.0
                    };
                }
            }
        }
        let m = DissimilarityMatrix::new(d, values).unwrap();
        for linkage in [Linkage::Ward, Linkage::Single, Linkage::Complete, Linkage::Average] {
            assert_eq!(hac(&m, linkage).partition_with(3), truth, "{linkage}");
        }
    }

    #[test]
    fn ties_go_to_smallest_pair() {
        let m = matrix(4, &[0.5, 0.5, 0.5, 0.5, 0.5, 0.5]);
        let dendro = hac(&m, Linkage::Average);
        assert_eq!((dendro.merges()[0].left, dendro.merges()[0].right), (0, 1));
        assert_eq!((dendro.merges()[1].left, dendro.merges()[1].right), (4, 2));
    }

    #[test]
    fn acceptance_rules() {
        assert_eq!(acceptance_probability(-10.0, 2, -10.0, 2), 1.0);
        assert_eq!(acceptance_probability(-10.0, 2, -5.0, 3), 1.0);
        let rho = acceptance_probability(-10.0, 2, -11.0, 2);
        assert!((rho - (-1.0f64).exp()).abs() < 1e-15);
        let rho = acceptance_probability(0.0, 1, 0.0, 2);
        assert!((rho - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn proposal_to_own_block_is_identity() {
        let p = Partition::from_labels(&[0, 0, 1]);
        assert_eq!(p.with_move(2, 1), p);
        let single = Partition::from_labels(&[0, 1, 1]);
        assert_eq!(single.with_move(0, 2), Partition::from_labels(&[0, 1, 1]));
    }

    #[test]
    fn candidate_tie_break() {
        let mk = |labels: &[usize], bic: f64, n_params: usize| {
            let partition = Partition::from_labels(labels);
            Candidate {
                n_blocks: partition.n_blocks(),
                partition,
                bic,
                loglik: bic,
                n_params,
            }
        };
        let a = mk(&[0, 0, 1], -5.0, 4);
        let b = mk(&[0, 1, 2], -5.0, 3);
        assert!(b.beats(&a));
        let c = mk(&[0, 1, 1], -5.0, 4);
        assert!(a.beats(&c));
        assert!(mk(&[0, 0, 0], -4.0, 6).beats(&b));
    }
}
