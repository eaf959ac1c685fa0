//! Blockwise one-factor distributions for high-dimensional binary data.
//!
//! The crate covers the exact block pmf and sampling ([`model`]), two-step
//! estimation with an EM algorithm for larger blocks ([`estimation`]),
//! BIC-driven partition search by agglomerative clustering or
//! Metropolis-Hastings ([`selection`]), and a seeded simulation harness
//! ([`experiments`]). JSON documents for models and selections live in
//! [`io`].

pub mod data;
pub mod error;
pub mod estimation;
pub mod experiments;
pub mod io;
pub mod model;
mod seed;
pub mod selection;

pub use data::BinaryDataset;
pub use error::{DataError, ModelError};
pub use estimation::{count_params, fit, FitConfig, FittedModel};
pub use model::{BlockSpec, Model, Partition, VariableParams};
pub use seed::derive_seed;
pub use selection::{select_hac, select_mh, Linkage, SelectionResult};
