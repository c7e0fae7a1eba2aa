//! Dictionary training: KSVD, the block SVD update, and the alternating
//! drivers for unsupervised (SAC / CGC) and class-supervised block learning.

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use serde::Serialize;

use crate::coding::{code_columns, BlockOmp, Omp};
use crate::error::{Error, Result};
use crate::linalg::{orthonormal_columns, top_left_singular};
use crate::model::{
    BlockStructure, ClassLabels, Dictionary, ExperimentConfig, SparseCodes, StructureMode,
    TrainingSet,
};
use crate::structure::{cgc_estimate, sac_estimate, supervised_cgc_estimate};
use crate::synthetic::{derive_seed, rng};

/// Relative-error improvement below which an iteration counts as converged.
pub const CONVERGENCE_TOL: f64 = 1e-4;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainReport {
    /// `|Y - DU|_F / |Y|_F` after each iteration's update.
    pub rel_errors: Vec<f64>,
    /// Block count in force during each iteration.
    pub n_blocks: Vec<usize>,
    /// Structure used in each iteration.
    pub structures: Vec<BlockStructure>,
    pub converged: bool,
    pub iterations: usize,
}

#[derive(Serialize)]
struct ReportLine {
    iter: usize,
    rel_error: f64,
    n_blocks: usize,
}

impl TrainReport {
    fn record(&mut self, err: f64, structure: Option<&BlockStructure>) {
        if let Some(&prev) = self.rel_errors.last() {
            if prev > 0.0 && (prev - err) / prev < CONVERGENCE_TOL {
                self.converged = true;
            }
        }
        if !err.is_finite() {
            self.converged = false;
        }
        self.rel_errors.push(err);
        self.n_blocks.push(structure.map_or(0, BlockStructure::n_blocks));
        if let Some(s) = structure {
            self.structures.push(s.clone());
        }
        self.iterations += 1;
    }

    /// One `{"iter": k, "rel_error": e, "n_blocks": n_b}` object per line, `k` from 1.
    pub fn to_json_lines(&self) -> String {
        let mut out = String::new();
        for (k, (&e, &nb)) in self.rel_errors.iter().zip(&self.n_blocks).enumerate() {
            let line = ReportLine {
                iter: k + 1,
                rel_error: e,
                n_blocks: nb,
            };
            out.push_str(&serde_json::to_string(&line).expect("report line serializes"));
            out.push('\n');
        }
        out
    }

    pub fn final_error(&self) -> Option<f64> {
        self.rel_errors.last().copied()
    }
}

/// Picks `n_atoms` distinct non-zero training columns at random and normalizes them.
pub fn init_from_signals(signals: &DMatrix<f64>, n_atoms: usize, seed: u64) -> Result<Dictionary> {
    let n_s = signals.ncols();
    if n_atoms == 0 || n_atoms > n_s {
        return Err(Error::invalid(format!(
            "cannot pick {n_atoms} atoms from {n_s} signals"
        )));
    }
    let mut order: Vec<usize> = (0..n_s).collect();
    order.shuffle(&mut rng(seed));
    let picked: Vec<usize> = order
        .into_iter()
        .filter(|&i| signals.column(i).norm() > 0.0)
        .take(n_atoms)
        .collect();
    if picked.len() < n_atoms {
        return Err(Error::invalid(format!(
            "only {} non-zero signals for {n_atoms} atoms",
            picked.len()
        )));
    }
    Dictionary::from_unnormalized(signals.select_columns(&picked))
}

/// Signals whose code touches any of `rows`.
fn users(codes: &DMatrix<f64>, rows: &[usize]) -> Vec<usize> {
    (0..codes.ncols())
        .filter(|&s| rows.iter().any(|&r| codes[(r, s)] != 0.0))
        .collect()
}

/// Replacement atoms for an unused block: the signals with the largest current
/// residual norm, normalized and orthogonalized. `None` if too few independent
/// candidates exist.
fn reseed_atoms(signals: &DMatrix<f64>, residual: &DMatrix<f64>, count: usize) -> Option<Vec<Vec<f64>>> {
    let mut order: Vec<(usize, f64)> = residual
        .column_iter()
        .enumerate()
        .map(|(i, c)| (i, c.norm_squared()))
        .collect();
    order.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    let candidates: Vec<Vec<f64>> = order
        .iter()
        .take(count.saturating_mul(4).max(count + 8))
        .map(|&(i, _)| signals.column(i).iter().copied().collect())
        .collect();
    let basis = orthonormal_columns(&candidates, count);
    (basis.len() == count).then_some(basis)
}

/// Result of one sweep of block SVD updates.
#[derive(Debug, Clone)]
pub struct BlockUpdate {
    pub dictionary: Dictionary,
    pub codes: SparseCodes,
    /// Number of SVDs computed (one per block with a non-empty user set).
    pub svd_calls: usize,
    /// Block ids that had no users and were re-seeded.
    pub reseeded: Vec<usize>,
    /// `Y - DU` after the sweep.
    pub residual: DMatrix<f64>,
}

/// One sweep of block updates.
///
/// For every block, the signals using it are collected, the representation
/// error without the block's contribution is formed, and the block's atoms and
/// coefficient rows are replaced by the leading `|block|` singular triplets of
/// that error. Blocks are visited in id order, grouped by class when labels are
/// given; each update sees the latest atoms and codes of all other blocks.
pub fn bksvd_block_update(
    dictionary: &Dictionary,
    structure: &BlockStructure,
    signals: &TrainingSet,
    codes: &SparseCodes,
    labels: Option<&ClassLabels>,
) -> Result<BlockUpdate> {
    let n = dictionary.n_atoms();
    let m = dictionary.dim();
    if structure.n_atoms() != n || codes.n_atoms() != n {
        return Err(Error::dim("structure / codes do not match the dictionary"));
    }
    if codes.n_signals() != signals.len() || signals.dim() != m {
        return Err(Error::dim("codes / signals do not match"));
    }
    if !structure.is_complete() {
        return Err(Error::invalid("block structure has unassigned atoms"));
    }
    let blocks = structure.blocks();
    if let Some(b) = blocks.iter().find(|b| b.len() > m) {
        return Err(Error::invalid(format!(
            "block of {} atoms exceeds dimension {m}",
            b.len()
        )));
    }
    let mut order: Vec<usize> = (0..blocks.len()).collect();
    if let Some(l) = labels {
        if l.n_atoms() != n {
            return Err(Error::dim("labels do not match the dictionary"));
        }
        order.sort_by_key(|&k| (l.labels()[blocks[k][0]], k));
    }

    let y = signals.signals();
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("non-finite training data".into()));
    }
    let mut atoms = dictionary.atoms().clone();
    let mut u = codes.coefficients().clone();
    let mut residual = y - &atoms * &u;
    let mut svd_calls = 0;
    let mut reseeded = Vec::new();

    for k in order {
        let block = &blocks[k];
        let omega = users(&u, block);
        if omega.is_empty() {
            if let Some(fresh) = reseed_atoms(y, &residual, block.len()) {
                for (&a, v) in block.iter().zip(fresh) {
                    atoms.column_mut(a).copy_from_slice(&v);
                }
            }
            reseeded.push(k + 1);
            continue;
        }
        let d_block = atoms.select_columns(block);
        let u_block = DMatrix::from_fn(block.len(), omega.len(), |r, c| u[(block[r], omega[c])]);
        let e = residual.select_columns(&omega) + &d_block * &u_block;
        if e.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical(format!("non-finite residual for block {}", k + 1)));
        }
        let (basis, _) = top_left_singular(&e, block.len());
        svd_calls += 1;
        let coeffs = basis.transpose() * &e;
        let new_res = &e - &basis * &coeffs;
        for (r, &a) in block.iter().enumerate() {
            atoms.set_column(a, &basis.column(r));
            for (c, &s) in omega.iter().enumerate() {
                u[(a, s)] = coeffs[(r, c)];
            }
        }
        for (c, &s) in omega.iter().enumerate() {
            residual.set_column(s, &new_res.column(c));
        }
    }

    Ok(BlockUpdate {
        dictionary: Dictionary::new(atoms)?,
        codes: SparseCodes::new(u)?,
        svd_calls,
        reseeded,
        residual,
    })
}

/// KSVD iterations starting from `initial`: OMP coding followed by
/// atom-by-atom rank-1 updates.
pub fn ksvd_refine(
    signals: &TrainingSet,
    initial: Dictionary,
    sparsity: usize,
    iterations: usize,
) -> Result<(Dictionary, SparseCodes, TrainReport)> {
    let y = signals.signals();
    let mut d = initial;
    let mut report = TrainReport::default();
    let mut codes = code_columns(&Omp::new(&d, sparsity, 0.0)?, y)?;
    if iterations == 0 {
        return Ok((d, codes, report));
    }
    let y_norm = y.norm();
    for it in 0..iterations {
        if it > 0 {
            codes = code_columns(&Omp::new(&d, sparsity, 0.0)?, y)?;
        }
        let singletons = BlockStructure::singletons(d.n_atoms());
        let update = bksvd_block_update(&d, &singletons, signals, &codes, None)?;
        let err = update.residual.norm() / y_norm;
        d = update.dictionary;
        codes = update.codes;
        report.record(err, None);
    }
    Ok((d, codes, report))
}

/// KSVD with `n_atoms` atoms initialized from randomly chosen training signals.
pub fn ksvd_train(
    signals: &TrainingSet,
    n_atoms: usize,
    sparsity: usize,
    iterations: usize,
    seed: u64,
) -> Result<(Dictionary, SparseCodes, TrainReport)> {
    let d0 = init_from_signals(signals.signals(), n_atoms, seed)?;
    ksvd_refine(signals, d0, sparsity, iterations)
}

/// Output of the block-structured training drivers.
#[derive(Debug, Clone)]
pub struct Trained {
    pub dictionary: Dictionary,
    pub structure: BlockStructure,
    pub codes: SparseCodes,
    pub report: TrainReport,
}

fn estimate_structure(
    d: &Dictionary,
    signals: &TrainingSet,
    labels: Option<&ClassLabels>,
    fixed: Option<&BlockStructure>,
    cfg: &ExperimentConfig,
) -> Result<BlockStructure> {
    match cfg.structure_mode {
        StructureMode::Sac => {
            let sparsity = cfg
                .effective_atom_sparsity()
                .min(d.dim())
                .min(d.n_atoms());
            let codes = code_columns(
                &Omp::new(d, sparsity, cfg.residual_tolerance)?,
                signals.signals(),
            )?;
            sac_estimate(d, &codes, cfg.max_block_size)
        }
        StructureMode::Cgc => cgc_estimate(d, cfg.max_block_size, cfg.shrink_fraction),
        StructureMode::SupervisedCgc => {
            let l = labels.ok_or_else(|| Error::invalid("supervised_cgc needs class labels"))?;
            supervised_cgc_estimate(d, l, cfg.max_block_size, cfg.shrink_fraction)
        }
        StructureMode::FixedSupervised => fixed
            .cloned()
            .ok_or_else(|| Error::invalid("fixed_supervised needs an initial structure")),
    }
}

fn alternate(
    signals: &TrainingSet,
    d0: Dictionary,
    labels: Option<&ClassLabels>,
    fixed: Option<&BlockStructure>,
    cfg: &ExperimentConfig,
    observe: &mut dyn FnMut(usize, &Dictionary, &BlockStructure),
) -> Result<Trained> {
    cfg.validate()?;
    if signals.dim() != d0.dim() {
        return Err(Error::dim("signals and dictionary dimensions differ"));
    }
    let y = signals.signals();
    let y_norm = y.norm();
    if y_norm == 0.0 {
        return Err(Error::invalid("zero-energy training data"));
    }
    let mut d = d0;
    let mut structure = estimate_structure(&d, signals, labels, fixed, cfg)?;
    let mut report = TrainReport::default();
    let mut codes = SparseCodes::zeros(d.n_atoms(), signals.len());

    for it in 0..cfg.outer_iterations {
        if it > 0 && cfg.updates_structure_at(it) {
            structure = estimate_structure(&d, signals, labels, fixed, cfg)?;
        }
        let p = cfg.block_sparsity.min(structure.n_blocks());
        codes = code_columns(&BlockOmp::new(&d, &structure, p, cfg.residual_tolerance)?, y)?;
        let update = bksvd_block_update(&d, &structure, signals, &codes, labels)?;
        let err = update.residual.norm() / y_norm;
        d = update.dictionary;
        codes = update.codes;
        report.record(err, Some(&structure));
        observe(it + 1, &d, &structure);
    }
    Ok(Trained {
        dictionary: d,
        structure,
        codes,
        report,
    })
}

/// Unsupervised block dictionary learning (`structure_mode` `sac` or `cgc`).
pub fn bksvd_train(signals: &TrainingSet, d0: Dictionary, cfg: &ExperimentConfig) -> Result<Trained> {
    bksvd_train_observed(signals, d0, cfg, |_, _, _| {})
}

/// [`bksvd_train`] calling `observe(iteration, dictionary, structure)` after every iteration.
pub fn bksvd_train_observed(
    signals: &TrainingSet,
    d0: Dictionary,
    cfg: &ExperimentConfig,
    mut observe: impl FnMut(usize, &Dictionary, &BlockStructure),
) -> Result<Trained> {
    if !matches!(cfg.structure_mode, StructureMode::Sac | StructureMode::Cgc) {
        return Err(Error::invalid(format!(
            "bksvd_train expects sac or cgc, got {}",
            cfg.structure_mode
        )));
    }
    alternate(signals, d0, None, None, cfg, &mut observe)
}

/// Class-contiguous blocks of at most `size` consecutive atoms within each class.
pub fn fixed_class_blocks(labels: &ClassLabels, size: usize) -> BlockStructure {
    let mut blocks = Vec::new();
    for class in 1..=labels.n_classes() {
        let range: Vec<usize> = labels.range(class).collect();
        blocks.extend(range.chunks(size.max(1)).map(<[usize]>::to_vec));
    }
    BlockStructure::from_blocks(labels.n_atoms(), &blocks).expect("class ranges partition the atoms")
}

#[derive(Debug, Clone)]
pub struct SupervisedTrained {
    pub trained: Trained,
    pub labels: ClassLabels,
}

/// Class-supervised initial dictionary: `atoms_per_class` signals drawn from
/// each class, in class order, optionally refined by one class-local KSVD pass.
pub fn supervised_init(
    signals: &TrainingSet,
    atoms_per_class: usize,
    cfg: &ExperimentConfig,
) -> Result<(Dictionary, ClassLabels)> {
    let n_classes = signals.n_classes();
    if n_classes == 0 {
        return Err(Error::invalid("supervised training needs class labels"));
    }
    if atoms_per_class == 0 {
        return Err(Error::invalid("atoms_per_class must be positive"));
    }
    let mut columns: Vec<DMatrix<f64>> = Vec::with_capacity(n_classes);
    for class in 1..=n_classes {
        let idx = signals.indices_of_class(class);
        if idx.len() < atoms_per_class {
            return Err(Error::invalid(format!(
                "class {class} has {} signals, needs {atoms_per_class}",
                idx.len()
            )));
        }
        let class_signals = signals.columns(&idx);
        let seed = derive_seed(cfg.rng_seed, &[0x5u64, class as u64]);
        let mut sub = init_from_signals(&class_signals, atoms_per_class, seed)?;
        if cfg.supervised_init_ksvd {
            let class_set = TrainingSet::new(class_signals)?;
            let sparsity = cfg
                .effective_atom_sparsity()
                .min(sub.dim())
                .min(atoms_per_class);
            sub = ksvd_refine(&class_set, sub, sparsity, 1)?.0;
        }
        columns.push(sub.into_atoms());
    }
    let m = signals.dim();
    let mut atoms = DMatrix::zeros(m, n_classes * atoms_per_class);
    for (c, block) in columns.iter().enumerate() {
        atoms
            .columns_mut(c * atoms_per_class, atoms_per_class)
            .copy_from(block);
    }
    let labels = ClassLabels::from_counts(&vec![atoms_per_class; n_classes])?;
    Ok((Dictionary::new(atoms)?, labels))
}

/// Supervised block dictionary learning from a given class-laid-out dictionary.
///
/// `supervised_cgc` re-estimates class-pure blocks with CGC per class;
/// `fixed_supervised` keeps consecutive fixed-size blocks inside each class.
pub fn supervised_train_from(
    signals: &TrainingSet,
    d0: Dictionary,
    labels: &ClassLabels,
    cfg: &ExperimentConfig,
) -> Result<Trained> {
    if labels.n_atoms() != d0.n_atoms() {
        return Err(Error::dim("labels do not match the dictionary"));
    }
    let fixed = match cfg.structure_mode {
        StructureMode::FixedSupervised => Some(fixed_class_blocks(labels, cfg.max_block_size)),
        StructureMode::SupervisedCgc => None,
        other => {
            return Err(Error::invalid(format!(
                "supervised training expects supervised_cgc or fixed_supervised, got {other}"
            )))
        }
    };
    alternate(signals, d0, Some(labels), fixed.as_ref(), cfg, &mut |_, _, _| {})
}

pub fn supervised_train(
    signals: &TrainingSet,
    atoms_per_class: usize,
    cfg: &ExperimentConfig,
) -> Result<SupervisedTrained> {
    let (d0, labels) = supervised_init(signals, atoms_per_class, cfg)?;
    let trained = supervised_train_from(signals, d0, &labels, cfg)?;
    Ok(SupervisedTrained { trained, labels })
}
