//! Coherence diagnostics and experiment metrics.

use std::collections::BTreeSet;

use nalgebra::DMatrix;

use crate::coding::{code_columns, BlockOmp};
use crate::error::{Error, Result};
use crate::model::{BlockStructure, Dictionary, SparseCodes, TrainingSet};

/// Default `|corr|` threshold for counting highly coherent atom pairs.
pub const COHERENCE_THRESHOLD: f64 = 0.6;

/// All `n(n-1)/2` pairwise `|<d_i, d_j>|`, sorted in descending order.
pub fn coherence_profile(dictionary: &Dictionary) -> Result<Vec<f64>> {
    let n = dictionary.n_atoms();
    if n < 2 {
        return Err(Error::invalid("coherence profile needs at least two atoms"));
    }
    let g = dictionary.gram();
    let mut out = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for j in i + 1..n {
            out.push(g[(i, j)].abs().min(1.0));
        }
    }
    out.sort_by(|a, b| b.total_cmp(a));
    Ok(out)
}

pub fn count_above(profile: &[f64], threshold: f64) -> usize {
    profile.iter().filter(|&&v| v > threshold).count()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlockCoherenceStats {
    pub intra_mean: f64,
    pub inter_mean: f64,
    pub inter_max: f64,
    /// Mean of the 20 largest inter-block `|corr|` values.
    pub inter_top20_mean: f64,
    /// Set when every block is a singleton; `intra_mean` is then 0.
    pub singletons_only: bool,
}

pub fn block_coherence_stats(
    dictionary: &Dictionary,
    structure: &BlockStructure,
) -> Result<BlockCoherenceStats> {
    let n = dictionary.n_atoms();
    if structure.n_atoms() != n || !structure.is_complete() {
        return Err(Error::invalid("structure must fully cover the dictionary"));
    }
    let g = dictionary.gram();
    let ids = structure.assignment();
    let (mut intra_sum, mut intra_n) = (0.0, 0usize);
    let mut inter = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            let v = g[(i, j)].abs();
            if ids[i] == ids[j] {
                intra_sum += v;
                intra_n += 1;
            } else {
                inter.push(v);
            }
        }
    }
    inter.sort_by(|a, b| b.total_cmp(a));
    let mean = |v: &[f64]| {
        if v.is_empty() {
            0.0
        } else {
            v.iter().sum::<f64>() / v.len() as f64
        }
    };
    Ok(BlockCoherenceStats {
        intra_mean: if intra_n == 0 {
            0.0
        } else {
            intra_sum / intra_n as f64
        },
        inter_mean: mean(&inter),
        inter_max: inter.first().copied().unwrap_or(0.0),
        inter_top20_mean: mean(&inter[..inter.len().min(20)]),
        singletons_only: intra_n == 0,
    })
}

/// Fraction of oracle blocks that appear verbatim (as atom sets) in `estimated`.
pub fn block_recovery_rate(estimated: &BlockStructure, oracle: &BlockStructure) -> Result<f64> {
    if estimated.n_atoms() != oracle.n_atoms() {
        return Err(Error::dim("structures cover different atom counts"));
    }
    let found: BTreeSet<Vec<usize>> = estimated.blocks().into_iter().collect();
    let truth = oracle.blocks();
    if truth.is_empty() {
        return Ok(0.0);
    }
    let hits = truth.iter().filter(|b| found.contains(*b)).count();
    Ok(hits as f64 / truth.len() as f64)
}

/// `|Y - D U|_F / |Y|_F`.
pub fn relative_error(signals: &DMatrix<f64>, dictionary: &Dictionary, codes: &SparseCodes) -> f64 {
    let r = signals - dictionary.atoms() * codes.coefficients();
    r.norm() / signals.norm()
}

/// BOMP-codes every signal with block sparsity `p` and returns the relative
/// Frobenius reconstruction error.
pub fn reconstruction_error(
    signals: &TrainingSet,
    dictionary: &Dictionary,
    structure: &BlockStructure,
    block_sparsity: usize,
) -> Result<f64> {
    if signals.signals().norm() == 0.0 {
        return Err(Error::invalid("zero-energy signals"));
    }
    let coder = BlockOmp::new(dictionary, structure, block_sparsity, 0.0)?;
    let codes = code_columns(&coder, signals.signals())?;
    Ok(relative_error(signals.signals(), dictionary, &codes))
}
