//! Block-structured sparse dictionary learning.
//!
//! The crate covers greedy sparse coding ([`coding`]), estimation of the
//! block structure of a dictionary ([`structure`]), block KSVD training
//! ([`learning`]), synthetic oracle data ([`synthetic`]), diagnostics
//! ([`analysis`]), sparse-representation classification ([`classify`]) and
//! the seeded experiment sweeps built on top of them ([`experiments`]).

pub mod analysis;
pub mod classify;
pub mod coding;
pub mod error;
pub mod experiments;
pub mod io;
pub mod learning;
pub mod linalg;
pub mod model;
pub mod structure;
pub mod synthetic;

pub use error::{Error, Result};
pub use model::{
    BlockStructure, ClassLabels, Dictionary, ExperimentConfig, SparseCodes, StructureMode,
    TrainingSet,
};
