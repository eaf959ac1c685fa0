//! JSON documents for models, selections and partition strings.
//!
//! A model document looks like
//!
//! ```json
//! {
//!   "columns": ["A", "B", "C"],
//!   "blocks": [
//!     {"variables": ["A", "B"],
//!      "params": [{"alpha": 0.4, "epsilon": 0.5, "delta": 1},
//!                 {"alpha": 0.3, "epsilon": 0.5, "delta": 1}]},
//!     {"variables": ["C"], "params": [{"alpha": 0.6, "epsilon": 0.0, "delta": 1}]}
//!   ],
//!   "loglik": -812.3, "bic": -830.1, "n": 500, "seed": 12345
//! }
//! ```
//!
//! Floats are written in shortest round-trip form, so reading a document
//! back reproduces every parameter bit for bit.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::ModelError;
use crate::estimation::{BlockMethod, FittedModel, Warning};
use crate::model::{Model, Partition, VariableParams};
use crate::selection::{Candidate, Diagnostics, Method, SelectionResult};

/// Seed used when none is given.
pub const DEFAULT_SEED: u64 = 12345;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockDocument {
    pub variables: Vec<String>,
    pub params: Vec<VariableParams>,
}

/// Per-block fitting diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceDocument {
    pub variables: Vec<String>,
    pub method: BlockMethod,
    pub loglik: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub best_restart: Option<usize>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub iterations: Vec<usize>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub restart_logliks: Vec<Option<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelDocument {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub columns: Option<Vec<String>>,
    pub blocks: Vec<BlockDocument>,
    #[serde(default)]
    pub loglik: Option<f64>,
    #[serde(default)]
    pub bic: Option<f64>,
    #[serde(default)]
    pub n: Option<usize>,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_params: Option<usize>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub em_trace: Vec<TraceDocument>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<Warning>,
}

impl ModelDocument {
    pub fn from_model(model: &Model) -> Self {
        let names = model.names();
        let blocks = model
            .partition()
            .blocks()
            .into_iter()
            .map(|members| BlockDocument {
                variables: members.iter().map(|&j| names[j].clone()).collect(),
                params: members.iter().map(|&j| model.params()[j]).collect(),
            })
            .collect();
        Self {
            columns: Some(names.to_vec()),
            blocks,
            loglik: None,
            bic: None,
            n: None,
            seed: None,
            n_params: None,
            em_trace: Vec::new(),
            warnings: Vec::new(),
        }
    }

    pub fn from_fitted(fitted: &FittedModel) -> Self {
        let names = fitted.model.names();
        let mut doc = Self::from_model(&fitted.model);
        doc.loglik = Some(fitted.loglik);
        doc.bic = Some(fitted.bic);
        doc.n = Some(fitted.n);
        doc.seed = Some(fitted.seed);
        doc.n_params = Some(fitted.n_params);
        doc.em_trace = fitted
            .blocks
            .iter()
            .map(|b| TraceDocument {
                variables: b.members.iter().map(|&j| names[j].clone()).collect(),
                method: b.method,
                loglik: b.loglik,
                best_restart: b.best_restart,
                iterations: b.iterations.clone(),
                restart_logliks: b.restart_logliks.iter().map(|&l| l.is_finite().then_some(l)).collect(),
            })
            .collect();
        doc.warnings = fitted.warnings.clone();
        doc
    }

    pub fn to_model(&self) -> Result<Model, ModelError> {
        let columns: Vec<String> = match &self.columns {
            Some(c) => c.clone(),
            None => self.blocks.iter().flat_map(|b| b.variables.iter().cloned()).collect(),
        };
        let index = name_index(&columns)?;
        let d = columns.len();
        let mut params: Vec<Option<VariableParams>> = vec![None; d];
        let mut groups = Vec::with_capacity(self.blocks.len());
        for block in &self.blocks {
            if block.variables.len() != block.params.len() {
                return Err(ModelError::Document(format!(
                    "block {:?} lists {} variables but {} parameter sets",
                    block.variables,
                    block.variables.len(),
                    block.params.len()
                )));
            }
            let mut members = Vec::with_capacity(block.variables.len());
            for (name, vp) in block.variables.iter().zip(&block.params) {
                let &j = index
                    .get(name.as_str())
                    .ok_or_else(|| ModelError::UnknownVariable(name.clone()))?;
                if params[j].is_some() {
                    return Err(ModelError::RepeatedVariable(name.clone()));
                }
                vp.validate(j)?;
                params[j] = Some(*vp);
                members.push(j);
            }
            groups.push(members);
        }
        let params = params
            .into_iter()
            .enumerate()
            .map(|(j, p)| p.ok_or_else(|| ModelError::UnassignedVariable(columns[j].clone())))
            .collect::<Result<Vec<_>, _>>()?;
        let partition = Partition::from_blocks(d, &groups)?;
        Model::with_names(partition, params, columns)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("model document serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self, ModelError> {
        Ok(serde_json::from_str(text)?)
    }
}

/// One row of the candidate table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateDocument {
    pub blocks: Vec<Vec<String>>,
    pub n_blocks: usize,
    pub n_params: usize,
    pub loglik: f64,
    pub bic: f64,
}

/// Selected model, every scored candidate and search diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SelectionDocument {
    pub method: Method,
    pub best: ModelDocument,
    pub candidates: Vec<CandidateDocument>,
    pub diagnostics: Diagnostics,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<Warning>,
}

fn candidate_document(c: &Candidate, names: &[String]) -> CandidateDocument {
    CandidateDocument {
        blocks: c
            .partition
            .blocks()
            .iter()
            .map(|b| b.iter().map(|&j| names[j].clone()).collect())
            .collect(),
        n_blocks: c.n_blocks,
        n_params: c.n_params,
        loglik: c.loglik,
        bic: c.bic,
    }
}

impl SelectionDocument {
    pub fn from_result(result: &SelectionResult) -> Self {
        let names = result.best.model.names();
        Self {
            method: result.method,
            best: ModelDocument::from_fitted(&result.best),
            candidates: result.candidates.iter().map(|c| candidate_document(c, names)).collect(),
            diagnostics: result.diagnostics.clone(),
            warnings: result.warnings.clone(),
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("selection document serializes");
        s.push('\n');
        s
    }

    /// Candidate table as CSV; blocks are written as `A+B|C`.
    pub fn candidates_csv(&self) -> String {
        let mut out = String::from("rank,partition,n_blocks,n_params,loglik,bic\n");
        for (i, c) in self.candidates.iter().enumerate() {
            let groups: Vec<String> = c.blocks.iter().map(|b| b.join("+")).collect();
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                i + 1,
                groups.join("|"),
                c.n_blocks,
                c.n_params,
                c.loglik,
                c.bic
            ));
        }
        out
    }
}

fn name_index(names: &[String]) -> Result<HashMap<&str, usize>, ModelError> {
    let mut index = HashMap::with_capacity(names.len());
    for (j, name) in names.iter().enumerate() {
        if index.insert(name.as_str(), j).is_some() {
            return Err(ModelError::RepeatedVariable(name.clone()));
        }
    }
    Ok(index)
}

/// Parses a partition given either as groups of column names
/// (`[["A","B"],["C"]]`, quotes optional) or as one integer label per column
/// (`[1,1,2]`).
pub fn parse_partition(spec: &str, names: &[String]) -> Result<Partition, ModelError> {
    let spec = spec.trim();
    if let Ok(value) = serde_json::from_str::<serde_json::Value>(spec) {
        if let Some(items) = value.as_array() {
            if !items.is_empty() && items.iter().all(serde_json::Value::is_u64) {
                let labels: Vec<u64> = items.iter().filter_map(serde_json::Value::as_u64).collect();
                if labels.len() != names.len() {
                    return Err(ModelError::PartitionSize {
                        expected: names.len(),
                        found: labels.len(),
                    });
                }
                return Ok(Partition::from_labels(&labels));
            }
            if items.iter().all(serde_json::Value::is_array) {
                let groups = items
                    .iter()
                    .map(|g| {
                        g.as_array()
                            .into_iter()
                            .flatten()
                            .map(|v| match v {
                                serde_json::Value::String(s) => Ok(s.clone()),
                                other => Err(ModelError::Document(format!(
                                    "partition entries must be column names, found {other}"
                                ))),
                            })
                            .collect::<Result<Vec<_>, _>>()
                    })
                    .collect::<Result<Vec<_>, _>>()?;
                return partition_from_groups(&groups, names);
            }
        }
        return Err(ModelError::Document(format!(
            "unsupported partition string {spec:?}"
        )));
    }
    partition_from_groups(&parse_loose_groups(spec)?, names)
}

fn parse_loose_groups(spec: &str) -> Result<Vec<Vec<String>>, ModelError> {
    let bad = || ModelError::Document(format!("cannot parse partition string {spec:?}"));
    let inner = spec
        .strip_prefix('[')
        .and_then(|s| s.strip_suffix(']'))
        .ok_or_else(bad)?;
    let mut groups = Vec::new();
    let mut rest = inner.trim();
    while !rest.is_empty() {
        let open = rest.strip_prefix('[').ok_or_else(bad)?;
        let close = open.find(']').ok_or_else(bad)?;
        let group: Vec<String> = open[..close]
            .split(',')
            .map(|t| t.trim().trim_matches('"').trim_matches('\'').to_string())
            .filter(|t| !t.is_empty())
            .collect();
        groups.push(group);
        rest = open[close + 1..].trim_start();
        if let Some(r) = rest.strip_prefix(',') {
            rest = r.trim_start();
        } else if !rest.is_empty() {
            return Err(bad());
        }
    }
    Ok(groups)
}

pub fn partition_from_groups(groups: &[Vec<String>], names: &[String]) -> Result<Partition, ModelError> {
    let index = name_index(names)?;
    let mut labels: Vec<Option<usize>> = vec![None; names.len()];
    for (b, group) in groups.iter().enumerate() {
        if group.is_empty() {
            return Err(ModelError::EmptyBlock);
        }
        for name in group {
            let &j = index
                .get(name.as_str())
                .ok_or_else(|| ModelError::UnknownVariable(name.clone()))?;
            if labels[j].is_some() {
                return Err(ModelError::RepeatedVariable(name.clone()));
            }
            labels[j] = Some(b);
        }
    }
    let labels = labels
        .into_iter()
        .enumerate()
        .map(|(j, l)| l.ok_or_else(|| ModelError::UnassignedVariable(names[j].clone())))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Partition::from_labels(&labels))
}
