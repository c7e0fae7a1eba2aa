//! Shared domain types.
//!
//! Atom, signal and class indices are 0-based in the Rust API. Block ids and
//! class ids keep their 1-based values everywhere (0 is reserved for
//! "unassigned" in a [`BlockStructure`]), which is also what the file formats
//! store.

use std::collections::BTreeSet;
use std::fmt;
use std::ops::Range;

use nalgebra::{DMatrix, DVector, DVectorView};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Column norms within this distance of 1 are accepted as-is.
pub const UNIT_NORM_TOL: f64 = 1e-9;
/// Column norms drifting up to this far are renormalized; beyond it they are rejected.
pub const RENORM_LIMIT: f64 = 1e-6;

/// Column-stacked unit-norm atoms, `m × n_a`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dictionary {
    atoms: DMatrix<f64>,
}

impl Dictionary {
    /// Validates `atoms`. Columns whose norm deviates from 1 by at most
    /// [`RENORM_LIMIT`] are renormalized; anything further off is an error.
    pub fn new(mut atoms: DMatrix<f64>) -> Result<Self> {
        check_shape(&atoms)?;
        for (j, mut col) in atoms.column_iter_mut().enumerate() {
            if col.iter().any(|v| !v.is_finite()) {
                return Err(Error::invariant(format!("non-finite atom {}", j + 1)));
            }
            let norm = col.norm();
            let dev = (norm - 1.0).abs();
            if dev > RENORM_LIMIT {
                return Err(Error::invariant(format!(
                    "non-unit atom {} (norm {norm})",
                    j + 1
                )));
            }
            if dev > UNIT_NORM_TOL {
                col /= norm;
            }
        }
        Ok(Self { atoms })
    }

    /// Scales every column to unit norm. Zero columns are rejected.
    pub fn from_unnormalized(mut atoms: DMatrix<f64>) -> Result<Self> {
        check_shape(&atoms)?;
        for (j, mut col) in atoms.column_iter_mut().enumerate() {
            if col.iter().any(|v| !v.is_finite()) {
                return Err(Error::invariant(format!("non-finite atom {}", j + 1)));
            }
            let norm = col.norm();
            if norm == 0.0 {
                return Err(Error::invariant(format!("zero atom {}", j + 1)));
            }
            col /= norm;
        }
        Ok(Self { atoms })
    }

    pub fn atoms(&self) -> &DMatrix<f64> {
        &self.atoms
    }

    pub fn into_atoms(self) -> DMatrix<f64> {
        self.atoms
    }

    /// Signal dimension `m`.
    pub fn dim(&self) -> usize {
        self.atoms.nrows()
    }

    pub fn n_atoms(&self) -> usize {
        self.atoms.ncols()
    }

    pub fn atom(&self, i: usize) -> DVectorView<'_, f64> {
        self.atoms.column(i)
    }

    pub fn gram(&self) -> DMatrix<f64> {
        self.atoms.tr_mul(&self.atoms)
    }

    pub fn max_norm_deviation(&self) -> f64 {
        self.atoms
            .column_iter()
            .map(|c| (c.norm() - 1.0).abs())
            .fold(0.0, f64::max)
    }

    /// Returns a dictionary with the columns reordered so that new column `k`
    /// is old column `order[k]`.
    pub fn permuted(&self, order: &[usize]) -> Self {
        let atoms = DMatrix::from_fn(self.dim(), order.len(), |r, c| self.atoms[(r, order[c])]);
        Self { atoms }
    }
}

fn check_shape(m: &DMatrix<f64>) -> Result<()> {
    if m.nrows() == 0 || m.ncols() == 0 {
        return Err(Error::invariant(format!(
            "empty dictionary ({}x{})",
            m.nrows(),
            m.ncols()
        )));
    }
    Ok(())
}

/// Per-atom block ids. `0` marks an unassigned atom; ids `1..=n_b` are
/// contiguous and every id names a non-empty block.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BlockStructure {
    assignment: Vec<usize>,
}

impl BlockStructure {
    pub fn new(assignment: Vec<usize>) -> Result<Self> {
        let max = assignment.iter().copied().max().unwrap_or(0);
        let mut seen = vec![false; max + 1];
        for &id in &assignment {
            seen[id] = true;
        }
        if seen.iter().skip(1).any(|s| !s) {
            return Err(Error::invariant("non-contiguous block ids"));
        }
        Ok(Self { assignment })
    }

    /// All atoms unassigned.
    pub fn unassigned(n_atoms: usize) -> Self {
        Self {
            assignment: vec![0; n_atoms],
        }
    }

    /// One block per atom, ids in atom order.
    pub fn singletons(n_atoms: usize) -> Self {
        Self {
            assignment: (1..=n_atoms).collect(),
        }
    }

    /// Consecutive runs of `size` atoms; the last block may be shorter.
    pub fn contiguous(n_atoms: usize, size: usize) -> Self {
        assert!(size > 0);
        Self {
            assignment: (0..n_atoms).map(|i| i / size + 1).collect(),
        }
    }

    /// Builds a structure from 0-based atom index sets; set `k` gets id `k + 1`.
    pub fn from_blocks(n_atoms: usize, blocks: &[Vec<usize>]) -> Result<Self> {
        let mut assignment = vec![0; n_atoms];
        for (k, block) in blocks.iter().enumerate() {
            if block.is_empty() {
                return Err(Error::invariant(format!("block {} is empty", k + 1)));
            }
            for &atom in block {
                if atom >= n_atoms {
                    return Err(Error::invariant(format!("atom {} out of range", atom + 1)));
                }
                if assignment[atom] != 0 {
                    return Err(Error::invariant(format!(
                        "atom {} assigned to two blocks",
                        atom + 1
                    )));
                }
                assignment[atom] = k + 1;
            }
        }
        Ok(Self { assignment })
    }

    pub fn assignment(&self) -> &[usize] {
        &self.assignment
    }

    pub fn n_atoms(&self) -> usize {
        self.assignment.len()
    }

    pub fn n_blocks(&self) -> usize {
        self.assignment.iter().copied().max().unwrap_or(0)
    }

    /// Block id of `atom`, `None` when unassigned.
    pub fn block_of(&self, atom: usize) -> Option<usize> {
        match self.assignment[atom] {
            0 => None,
            id => Some(id),
        }
    }

    /// Sorted atom indices of every block; entry `k` holds block id `k + 1`.
    pub fn blocks(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.n_blocks()];
        for (atom, &id) in self.assignment.iter().enumerate() {
            if id > 0 {
                out[id - 1].push(atom);
            }
        }
        out
    }

    pub fn is_complete(&self) -> bool {
        self.assignment.iter().all(|&id| id > 0)
    }

    pub fn max_block_size(&self) -> usize {
        self.blocks().iter().map(Vec::len).max().unwrap_or(0)
    }

    /// The partition as a set of atom-index sets, independent of block ids.
    pub fn partition(&self) -> BTreeSet<BTreeSet<usize>> {
        self.blocks()
            .into_iter()
            .map(|b| b.into_iter().collect())
            .collect()
    }

    /// Renumbers block ids in order of first appearance along the atom axis.
    pub fn renumbered(&self) -> Self {
        let mut map = vec![0; self.n_blocks() + 1];
        let mut next = 1;
        let assignment = self
            .assignment
            .iter()
            .map(|&id| {
                if id == 0 {
                    return 0;
                }
                if map[id] == 0 {
                    map[id] = next;
                    next += 1;
                }
                map[id]
            })
            .collect();
        Self { assignment }
    }

    /// Per-atom block ids after moving old atom `order[k]` to position `k`.
    pub fn permuted(&self, order: &[usize]) -> Self {
        Self {
            assignment: order.iter().map(|&o| self.assignment[o]).collect(),
        }
    }
}

impl fmt::Display for BlockStructure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[")?;
        for (i, id) in self.assignment.iter().enumerate() {
            if i > 0 {
                write!(f, ", ")?;
            }
            write!(f, "{id}")?;
        }
        write!(f, "]")
    }
}

/// Training signals as columns, `m × n_s`, with optional 1-based class ids.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSet {
    signals: DMatrix<f64>,
    classes: Option<Vec<usize>>,
}

impl TrainingSet {
    pub fn new(signals: DMatrix<f64>) -> Result<Self> {
        if signals.iter().any(|v| !v.is_finite()) {
            return Err(Error::invariant("non-finite signal entry"));
        }
        Ok(Self {
            signals,
            classes: None,
        })
    }

    pub fn with_classes(signals: DMatrix<f64>, classes: Vec<usize>) -> Result<Self> {
        if classes.len() != signals.ncols() {
            return Err(Error::dim(format!(
                "{} class ids for {} signals",
                classes.len(),
                signals.ncols()
            )));
        }
        check_class_range(&classes)?;
        let mut set = Self::new(signals)?;
        set.classes = Some(classes);
        Ok(set)
    }

    pub fn signals(&self) -> &DMatrix<f64> {
        &self.signals
    }

    pub fn classes(&self) -> Option<&[usize]> {
        self.classes.as_deref()
    }

    pub fn dim(&self) -> usize {
        self.signals.nrows()
    }

    pub fn len(&self) -> usize {
        self.signals.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.signals.ncols() == 0
    }

    pub fn signal(&self, i: usize) -> DVectorView<'_, f64> {
        self.signals.column(i)
    }

    pub fn n_classes(&self) -> usize {
        self.classes
            .as_ref()
            .map_or(0, |c| c.iter().copied().max().unwrap_or(0))
    }

    /// 0-based indices of the signals labelled with class `class` (1-based).
    pub fn indices_of_class(&self, class: usize) -> Vec<usize> {
        match &self.classes {
            Some(c) => (0..c.len()).filter(|&i| c[i] == class).collect(),
            None => Vec::new(),
        }
    }

    /// Sub-matrix of the listed signal columns.
    pub fn columns(&self, idx: &[usize]) -> DMatrix<f64> {
        self.signals.select_columns(idx)
    }
}

fn check_class_range(classes: &[usize]) -> Result<()> {
    let max = classes.iter().copied().max().unwrap_or(0);
    let mut seen = vec![false; max + 1];
    for &c in classes {
        if c == 0 {
            return Err(Error::invariant("class ids start at 1"));
        }
        seen[c] = true;
    }
    if seen.iter().skip(1).any(|s| !s) {
        return Err(Error::invariant("non-contiguous class ids"));
    }
    Ok(())
}

/// Dense coefficient matrix `n_a × n_s`, aligned column-wise with the signals.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseCodes {
    coefficients: DMatrix<f64>,
}

impl SparseCodes {
    pub fn new(coefficients: DMatrix<f64>) -> Result<Self> {
        if coefficients.iter().any(|v| !v.is_finite()) {
            return Err(Error::invariant("non-finite coefficient"));
        }
        Ok(Self { coefficients })
    }

    pub fn zeros(n_atoms: usize, n_signals: usize) -> Self {
        Self {
            coefficients: DMatrix::zeros(n_atoms, n_signals),
        }
    }

    pub fn coefficients(&self) -> &DMatrix<f64> {
        &self.coefficients
    }

    pub fn coefficients_mut(&mut self) -> &mut DMatrix<f64> {
        &mut self.coefficients
    }

    pub fn into_inner(self) -> DMatrix<f64> {
        self.coefficients
    }

    pub fn n_atoms(&self) -> usize {
        self.coefficients.nrows()
    }

    pub fn n_signals(&self) -> usize {
        self.coefficients.ncols()
    }

    /// Atom indices carrying a nonzero coefficient in column `i`.
    pub fn support(&self, i: usize) -> Vec<usize> {
        self.coefficients
            .column(i)
            .iter()
            .enumerate()
            .filter(|(_, v)| **v != 0.0)
            .map(|(k, _)| k)
            .collect()
    }

    /// Number of distinct blocks touched by column `i`.
    pub fn block_support(&self, i: usize, structure: &BlockStructure) -> usize {
        let ids: BTreeSet<usize> = self
            .support(i)
            .into_iter()
            .map(|a| structure.assignment()[a])
            .collect();
        ids.len()
    }

    pub fn max_block_support(&self, structure: &BlockStructure) -> usize {
        (0..self.n_signals())
            .map(|i| self.block_support(i, structure))
            .max()
            .unwrap_or(0)
    }

    pub fn column(&self, i: usize) -> DVector<f64> {
        self.coefficients.column(i).into_owned()
    }
}

/// Per-atom 1-based class labels laid out in contiguous runs `[1,..,1,2,..,C]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClassLabels {
    labels: Vec<usize>,
}

impl ClassLabels {
    pub fn new(labels: Vec<usize>) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::invariant("empty class labels"));
        }
        check_class_range(&labels)?;
        if labels.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::invariant("class labels are not in contiguous runs"));
        }
        Ok(Self { labels })
    }

    /// `counts[c]` atoms for class `c + 1`.
    pub fn from_counts(counts: &[usize]) -> Result<Self> {
        if counts.iter().any(|&n| n == 0) {
            return Err(Error::invariant("class with zero atoms"));
        }
        let labels = counts
            .iter()
            .enumerate()
            .flat_map(|(c, &n)| std::iter::repeat_n(c + 1, n))
            .collect();
        Self::new(labels)
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn n_atoms(&self) -> usize {
        self.labels.len()
    }

    pub fn n_classes(&self) -> usize {
        *self.labels.last().unwrap_or(&0)
    }

    pub fn counts(&self) -> Vec<usize> {
        (1..=self.n_classes()).map(|c| self.range(c).len()).collect()
    }

    /// 0-based atom range of class `class` (1-based).
    pub fn range(&self, class: usize) -> Range<usize> {
        let start = self.labels.partition_point(|&l| l < class);
        let end = self.labels.partition_point(|&l| l <= class);
        start..end
    }
}

/// How block structure is obtained during training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StructureMode {
    Sac,
    Cgc,
    SupervisedCgc,
    FixedSupervised,
}

impl StructureMode {
    pub fn as_str(self) -> &'static str {
        match self {
            StructureMode::Sac => "sac",
            StructureMode::Cgc => "cgc",
            StructureMode::SupervisedCgc => "supervised_cgc",
            StructureMode::FixedSupervised => "fixed_supervised",
        }
    }
}

impl fmt::Display for StructureMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for StructureMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sac" => Ok(Self::Sac),
            "cgc" => Ok(Self::Cgc),
            "supervised_cgc" => Ok(Self::SupervisedCgc),
            "fixed_supervised" => Ok(Self::FixedSupervised),
            other => Err(Error::invalid(format!("unknown structure mode {other:?}"))),
        }
    }
}

/// Training and experiment tunables.
///
/// `structure_update_period` of `None` means the structure is estimated once
/// in the first iteration and then kept fixed. `snr_db` of `None` means
/// noiseless data. `atom_sparsity` of `None` resolves to
/// `block_sparsity * max_block_size`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub max_block_size: usize,
    pub block_sparsity: usize,
    pub atom_sparsity: Option<usize>,
    pub outer_iterations: usize,
    pub structure_update_period: Option<usize>,
    pub shrink_fraction: f64,
    pub snr_db: Option<f64>,
    pub trials: usize,
    pub rng_seed: u64,
    pub structure_mode: StructureMode,
    pub residual_tolerance: f64,
    /// Run one class-local KSVD pass when initializing supervised dictionaries.
    pub supervised_init_ksvd: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            max_block_size: 3,
            block_sparsity: 3,
            atom_sparsity: None,
            outer_iterations: 10,
            structure_update_period: Some(1),
            shrink_fraction: 0.2,
            snr_db: None,
            trials: 50,
            rng_seed: 0,
            structure_mode: StructureMode::Cgc,
            residual_tolerance: 1e-9,
            supervised_init_ksvd: false,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("max_block_size", self.max_block_size),
            ("block_sparsity", self.block_sparsity),
            ("trials", self.trials),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::invalid(format!("{name} must be positive")));
            }
        }
        if self.atom_sparsity == Some(0) {
            return Err(Error::invalid("atom_sparsity must be positive"));
        }
        if self.structure_update_period == Some(0) {
            return Err(Error::invalid("structure_update_period must be positive"));
        }
        // 0 disables shrinking (fixed block size).
        if !(0.0..1.0).contains(&self.shrink_fraction) {
            return Err(Error::invalid("shrink_fraction must lie in [0, 1)"));
        }
        if let Some(snr) = self.snr_db {
            if snr.is_nan() {
                return Err(Error::invalid("snr_db is NaN"));
            }
        }
        if !(self.residual_tolerance >= 0.0) {
            return Err(Error::invalid("residual_tolerance must be >= 0"));
        }
        Ok(())
    }

    pub fn effective_atom_sparsity(&self) -> usize {
        self.atom_sparsity
            .unwrap_or(self.block_sparsity * self.max_block_size)
    }

    /// Whether the structure is (re-)estimated at 0-based outer iteration `iter`.
    pub fn updates_structure_at(&self, iter: usize) -> bool {
        match self.structure_update_period {
            None => iter == 0,
            Some(period) => iter % period == 0,
        }
    }
}
