//! Greedy sparse coders: OMP over single atoms and block OMP over a block
//! structure. Both refit all selected coefficients by least squares after
//! every selection.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg::{axpy, dot, IncrementalQr};
use crate::model::{BlockStructure, Dictionary, ExperimentConfig, SparseCodes, TrainingSet};

/// Scores closer than this are ties; ties go to the lower index.
pub const TIE_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct CodingResult {
    pub code: DVector<f64>,
    pub residual_norm: f64,
    /// Selection order: 0-based atom indices for OMP, 1-based block ids for BOMP.
    pub selected: Vec<usize>,
    /// Residual norm before the first selection and after each refit.
    pub residual_trace: Vec<f64>,
}

/// Anything that codes one signal against a fixed dictionary.
pub trait SparseCoder: Sync {
    fn n_atoms(&self) -> usize;
    fn dim(&self) -> usize;
    fn code(&self, y: &[f64]) -> Result<CodingResult>;
}

#[derive(Debug, Clone)]
pub struct Omp<'a> {
    dictionary: &'a Dictionary,
    gram: DMatrix<f64>,
    sparsity: usize,
    tolerance: f64,
}

impl<'a> Omp<'a> {
    pub fn new(dictionary: &'a Dictionary, sparsity: usize, tolerance: f64) -> Result<Self> {
        let limit = dictionary.dim().min(dictionary.n_atoms());
        if sparsity == 0 || sparsity > limit {
            return Err(Error::invalid(format!(
                "sparsity {sparsity} outside 1..={limit}"
            )));
        }
        Ok(Self {
            dictionary,
            gram: dictionary.gram(),
            sparsity,
            tolerance,
        })
    }
}

/// Index of the largest score among `candidates` with the lowest-index tie rule.
fn argmax_scores(scores: impl Iterator<Item = (usize, f64)>) -> Option<(usize, f64)> {
    let mut best: Option<(usize, f64)> = None;
    for (i, s) in scores {
        match best {
            Some((_, b)) if s <= b + TIE_TOL => {}
            _ => best = Some((i, s)),
        }
    }
    best
}

fn check_len(y: &[f64], dim: usize) -> Result<()> {
    if y.len() != dim {
        return Err(Error::dim(format!(
            "signal has length {}, dictionary dimension is {dim}",
            y.len()
        )));
    }
    Ok(())
}

fn norm(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

/// `Dᵀ r` kept current through the Gram matrix: each accepted column adds one
/// orthonormal direction `q`, and `Dᵀ q` follows from the Gram column and the
/// triangular factor without touching the signal dimension.
struct Correlations<'g> {
    gram: &'g DMatrix<f64>,
    values: Vec<f64>,
    /// `Dᵀ qᵢ` for each accepted basis vector.
    dtq: Vec<Vec<f64>>,
}

impl<'g> Correlations<'g> {
    fn new(d: &DMatrix<f64>, gram: &'g DMatrix<f64>, y: &[f64]) -> Self {
        Self {
            gram,
            values: d.column_iter().map(|c| dot(c.as_slice(), y)).collect(),
            dtq: Vec::new(),
        }
    }

    /// Pushes `atom` into `qr` and updates the correlations if it was accepted.
    fn push(&mut self, qr: &mut IncrementalQr, d: &DMatrix<f64>, atom: usize) {
        if !qr.push(d.column(atom).as_slice()) {
            return;
        }
        let k = qr.rank() - 1;
        let mut w = self.gram.column(atom).as_slice().to_vec();
        for (i, prev) in self.dtq.iter().enumerate() {
            axpy(-qr.r(i, k), prev, &mut w);
        }
        let diag = qr.r(k, k);
        w.iter_mut().for_each(|x| *x /= diag);
        axpy(-qr.projections()[k], &w, &mut self.values);
        self.dtq.push(w);
    }
}

impl SparseCoder for Omp<'_> {
    fn n_atoms(&self) -> usize {
        self.dictionary.n_atoms()
    }

    fn dim(&self) -> usize {
        self.dictionary.dim()
    }

    fn code(&self, y: &[f64]) -> Result<CodingResult> {
        let d = self.dictionary.atoms();
        let m = d.nrows();
        check_len(y, m)?;
        let n = d.ncols();
        let mut used = vec![false; n];
        let mut selected = Vec::with_capacity(self.sparsity);
        let mut qr = IncrementalQr::new(y, self.sparsity);
        let mut corr = Correlations::new(d, &self.gram, y);
        let mut rnorm = norm(y);
        let mut trace = vec![rnorm];

        while selected.len() < self.sparsity && rnorm > self.tolerance {
            let best = argmax_scores(
                (0..n)
                    .filter(|&i| !used[i])
                    .map(|i| (i, corr.values[i].abs())),
            );
            let Some((atom, score)) = best else { break };
            if score <= f64::EPSILON * rnorm {
                break;
            }
            used[atom] = true;
            selected.push(atom);
            corr.push(&mut qr, d, atom);
            rnorm = norm(qr.residual());
            trace.push(rnorm);
        }

        let mut code = DVector::zeros(n);
        for (&atom, c) in selected.iter().zip(qr.coefficients()) {
            code[atom] = c;
        }
        Ok(CodingResult {
            code,
            residual_norm: rnorm,
            selected,
            residual_trace: trace,
        })
    }
}

/// Block OMP. Each step picks the unselected block whose correlations with the
/// residual have the largest Euclidean norm.
#[derive(Debug, Clone)]
pub struct BlockOmp<'a> {
    dictionary: &'a Dictionary,
    gram: DMatrix<f64>,
    blocks: Vec<Vec<usize>>,
    block_sparsity: usize,
    tolerance: f64,
}

impl<'a> BlockOmp<'a> {
    pub fn new(
        dictionary: &'a Dictionary,
        structure: &BlockStructure,
        block_sparsity: usize,
        tolerance: f64,
    ) -> Result<Self> {
        if structure.n_atoms() != dictionary.n_atoms() {
            return Err(Error::dim(format!(
                "structure covers {} atoms, dictionary has {}",
                structure.n_atoms(),
                dictionary.n_atoms()
            )));
        }
        if !structure.is_complete() {
            return Err(Error::invalid("block structure has unassigned atoms"));
        }
        let n_b = structure.n_blocks();
        if block_sparsity == 0 || block_sparsity > n_b {
            return Err(Error::invalid(format!(
                "block sparsity {block_sparsity} outside 1..={n_b}"
            )));
        }
        Ok(Self {
            dictionary,
            gram: dictionary.gram(),
            blocks: structure.blocks(),
            block_sparsity,
            tolerance,
        })
    }
}

impl SparseCoder for BlockOmp<'_> {
    fn n_atoms(&self) -> usize {
        self.dictionary.n_atoms()
    }

    fn dim(&self) -> usize {
        self.dictionary.dim()
    }

    fn code(&self, y: &[f64]) -> Result<CodingResult> {
        let d = self.dictionary.atoms();
        let m = d.nrows();
        check_len(y, m)?;
        let n = d.ncols();
        let capacity = self
            .blocks
            .iter()
            .map(Vec::len)
            .max()
            .unwrap_or(1)
            .saturating_mul(self.block_sparsity)
            .min(m);
        let mut used = vec![false; self.blocks.len()];
        let mut selected = Vec::with_capacity(self.block_sparsity);
        let mut atoms_in_order = Vec::with_capacity(capacity);
        let mut qr = IncrementalQr::new(y, capacity);
        let mut rnorm = norm(y);
        let mut trace = vec![rnorm];
        let mut corr = Correlations::new(d, &self.gram, y);

        while selected.len() < self.block_sparsity && rnorm > self.tolerance {
            let c = &corr.values;
            let best = argmax_scores(self.blocks.iter().enumerate().filter(|(k, _)| !used[*k]).map(
                |(k, atoms)| (k, atoms.iter().map(|&a| c[a] * c[a]).sum::<f64>().sqrt()),
            ));
            let Some((block, score)) = best else { break };
            if score <= f64::EPSILON * rnorm {
                break;
            }
            used[block] = true;
            selected.push(block + 1);
            for &a in &self.blocks[block] {
                corr.push(&mut qr, d, a);
                atoms_in_order.push(a);
            }
            rnorm = norm(qr.residual());
            trace.push(rnorm);
        }

        let mut code = DVector::zeros(n);
        for (&atom, c) in atoms_in_order.iter().zip(qr.coefficients()) {
            code[atom] = c;
        }
        Ok(CodingResult {
            code,
            residual_norm: rnorm,
            selected,
            residual_trace: trace,
        })
    }
}

pub fn omp(
    dictionary: &Dictionary,
    y: &[f64],
    sparsity: usize,
    residual_tolerance: f64,
) -> Result<CodingResult> {
    Omp::new(dictionary, sparsity, residual_tolerance)?.code(y)
}

pub fn bomp(
    dictionary: &Dictionary,
    structure: &BlockStructure,
    y: &[f64],
    block_sparsity: usize,
    residual_tolerance: f64,
) -> Result<CodingResult> {
    BlockOmp::new(dictionary, structure, block_sparsity, residual_tolerance)?.code(y)
}

/// Codes every column of `signals`; columns are independent and merged by index.
pub fn code_columns(coder: &dyn SparseCoder, signals: &DMatrix<f64>) -> Result<SparseCodes> {
    if signals.nrows() != coder.dim() {
        return Err(Error::dim(format!(
            "signals have dimension {}, dictionary {}",
            signals.nrows(),
            coder.dim()
        )));
    }
    let columns: Vec<DVector<f64>> = (0..signals.ncols())
        .into_par_iter()
        .map(|i| {
            coder
                .code(signals.column(i).as_slice())
                .map(|r| r.code)
                .map_err(|e| Error::Column {
                    column: i,
                    source: Box::new(e),
                })
        })
        .collect::<Result<_>>()?;
    let mut out = DMatrix::zeros(coder.n_atoms(), signals.ncols());
    for (i, c) in columns.into_iter().enumerate() {
        out.set_column(i, &c);
    }
    Ok(SparseCodes::new(out)?)
}

/// OMP (no structure, `cfg.atom_sparsity`) or BOMP (`cfg.block_sparsity`) on every signal.
pub fn batch_code(
    dictionary: &Dictionary,
    structure: Option<&BlockStructure>,
    signals: &TrainingSet,
    cfg: &ExperimentConfig,
) -> Result<SparseCodes> {
    match structure {
        Some(b) => {
            let coder = BlockOmp::new(dictionary, b, cfg.block_sparsity, cfg.residual_tolerance)?;
            code_columns(&coder, signals.signals())
        }
        None => {
            let coder = Omp::new(
                dictionary,
                cfg.effective_atom_sparsity(),
                cfg.residual_tolerance,
            )?;
            code_columns(&coder, signals.signals())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dict(m: DMatrix<f64>) -> Dictionary {
        Dictionary::new(m).unwrap()
    }

    #[test]
    fn omp_picks_single_atom() {
        let d = dict(DMatrix::identity(3, 3));
        let r = omp(&d, &[0.0, 2.0, 0.0], 1, 1e-9).unwrap();
        assert_eq!(r.selected, vec![1]);
        assert_eq!(r.code[1], 2.0);
        assert_eq!(r.residual_norm, 0.0);
    }

    #[test]
    fn omp_exact_basis() {
        let d = dict(DMatrix::identity(2, 2));
        let r = omp(&d, &[3.0, 4.0], 2, 1e-9).unwrap();
        assert_eq!(r.code.as_slice(), &[3.0, 4.0]);
        assert!(r.residual_norm < 1e-12);
    }

    #[test]
    fn omp_rejects_bad_sparsity_and_length() {
        let d = dict(DMatrix::identity(2, 2));
        assert!(omp(&d, &[1.0, 0.0], 3, 0.0).is_err());
        assert!(omp(&d, &[1.0, 0.0], 0, 0.0).is_err());
        assert!(matches!(omp(&d, &[1.0], 1, 0.0), Err(Error::Dimension(_))));
    }

    #[test]
    fn omp_ties_go_to_lower_index() {
        let d = dict(DMatrix::identity(2, 2));
        let r = omp(&d, &[1.0, 1.0], 1, 0.0).unwrap();
        assert_eq!(r.selected, vec![0]);
    }

    #[test]
    fn omp_duplicate_atom_does_not_crash() {
        let mut m = DMatrix::zeros(2, 3);
        m[(0, 0)] = 1.0;
        m[(0, 1)] = 1.0;
        m[(1, 2)] = 1.0;
        let d = dict(m);
        let r = omp(&d, &[1.0, 0.5], 2, 0.0).unwrap();
        assert!(r.residual_norm < 1e-12);
        assert!(r.code.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn bomp_signal_inside_one_block() {
        let d = dict(DMatrix::identity(4, 4));
        let b = BlockStructure::new(vec![1, 1, 2, 2]).unwrap();
        let r = bomp(&d, &b, &[0.5, 2.0, 0.0, 0.0], 1, 1e-9).unwrap();
        assert_eq!(r.selected, vec![1]);
        assert_eq!(r.residual_norm, 0.0);
        assert_eq!(r.code.as_slice(), &[0.5, 2.0, 0.0, 0.0]);
    }

    #[test]
    fn bomp_zero_signal() {
        let d = dict(DMatrix::identity(4, 4));
        let b = BlockStructure::new(vec![1, 1, 2, 2]).unwrap();
        let r = bomp(&d, &b, &[0.0; 4], 2, 1e-9).unwrap();
        assert!(r.selected.is_empty());
        assert_eq!(r.residual_norm, 0.0);
        assert!(r.code.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn bomp_preconditions() {
        let d = dict(DMatrix::identity(4, 4));
        let b = BlockStructure::new(vec![1, 1, 2, 2]).unwrap();
        assert!(bomp(&d, &b, &[0.0; 4], 3, 0.0).is_err());
        let partial = BlockStructure::new(vec![1, 1, 0, 2]).unwrap();
        assert!(bomp(&d, &partial, &[0.0; 4], 1, 0.0).is_err());
    }

    #[test]
    fn batch_identity() {
        let d = dict(DMatrix::identity(3, 3));
        let ys = TrainingSet::new(DMatrix::identity(3, 3)).unwrap();
        let cfg = ExperimentConfig {
            atom_sparsity: Some(1),
            ..Default::default()
        };
        let u = batch_code(&d, None, &ys, &cfg).unwrap();
        assert_eq!(u.coefficients(), &DMatrix::identity(3, 3));
    }

    #[test]
    fn batch_reports_failing_column() {
        let d = dict(DMatrix::identity(3, 3));
        let coder = Omp::new(&d, 1, 0.0).unwrap();
        let err = code_columns(&coder, &DMatrix::zeros(2, 4)).unwrap_err();
        assert!(matches!(err, Error::Dimension(_)));
    }
}
