//! Block structure estimation.
//!
//! * [`sac_estimate`] merges blocks whose sparse-code supports overlap most.
//! * [`cgc_estimate`] greedily groups the most mutually correlated atoms.
//! * [`supervised_cgc_estimate`] runs CGC inside each class's atom range.

use nalgebra::DMatrix;

use crate::coding::TIE_TOL;
use crate::error::{Error, Result};
use crate::model::{BlockStructure, ClassLabels, Dictionary, SparseCodes};

// ---------------------------------------------------------------------------
// SAC

/// Signal-support bitset of one block.
#[derive(Debug, Clone)]
struct Support(Vec<u64>);

impl Support {
    fn intersection(&self, other: &Support) -> u32 {
        self.0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| (a & b).count_ones())
            .sum()
    }

    fn union_with(&mut self, other: &Support) {
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            *a |= b;
        }
    }
}

/// Sparse agglomerative clustering.
///
/// Starts from singleton blocks and repeatedly merges the pair of blocks
/// whose signal supports intersect the most, as long as the merged block fits
/// in `max_block_size`. Stops once no feasible pair shares a signal. Ties go
/// to the lexicographically smallest pair of (current) block positions.
pub fn sac_estimate(
    dictionary: &Dictionary,
    codes: &SparseCodes,
    max_block_size: usize,
) -> Result<BlockStructure> {
    let n = dictionary.n_atoms();
    if codes.n_atoms() != n {
        return Err(Error::dim(format!(
            "codes have {} rows for {n} atoms",
            codes.n_atoms()
        )));
    }
    let n_s = codes.n_signals();
    if n_s == 0 {
        return Err(Error::invalid("empty codes matrix"));
    }
    if max_block_size == 0 {
        return Err(Error::invalid("max_block_size must be positive"));
    }

    let words = n_s.div_ceil(64);
    let u = codes.coefficients();
    let mut supports: Vec<Support> = (0..n)
        .map(|a| {
            let mut bits = vec![0u64; words];
            for (s, v) in u.row(a).iter().enumerate() {
                if *v != 0.0 {
                    bits[s / 64] |= 1 << (s % 64);
                }
            }
            Support(bits)
        })
        .collect();
    let mut members: Vec<Vec<usize>> = (0..n).map(|a| vec![a]).collect();
    let mut alive = vec![true; n];
    let mut inter = vec![0u32; n * n];
    for i in 0..n {
        for j in i + 1..n {
            let c = supports[i].intersection(&supports[j]);
            inter[i * n + j] = c;
            inter[j * n + i] = c;
        }
    }

    loop {
        let mut best: Option<(usize, usize, u32)> = None;
        for i in (0..n).filter(|&i| alive[i]) {
            for j in (i + 1..n).filter(|&j| alive[j]) {
                if members[i].len() + members[j].len() > max_block_size {
                    continue;
                }
                let c = inter[i * n + j];
                if best.is_none_or(|(_, _, b)| c > b) {
                    best = Some((i, j, c));
                }
            }
        }
        let Some((i, j, count)) = best else { break };
        if count == 0 {
            break;
        }
        let absorbed = std::mem::take(&mut members[j]);
        members[i].extend(absorbed);
        members[i].sort_unstable();
        let sj = supports[j].clone();
        supports[i].union_with(&sj);
        alive[j] = false;
        for k in (0..n).filter(|&k| alive[k] && k != i) {
            let c = supports[i].intersection(&supports[k]);
            inter[i * n + k] = c;
            inter[k * n + i] = c;
        }
    }

    let blocks: Vec<Vec<usize>> = (0..n)
        .filter(|&i| alive[i])
        .map(|i| members[i].clone())
        .collect();
    Ok(BlockStructure::from_blocks(n, &blocks)?.renumbered())
}

// ---------------------------------------------------------------------------
// CGC

/// Maximum block size while `n_alive` of `n_total` atoms remain ungrouped.
///
/// Above `ceil(shrink_fraction * n_total)` remaining atoms the base size is
/// used. Below it, `(0, threshold]` is cut into `base_size - 1` equal bands
/// and the size drops by one per band, never below 1. A zero fraction keeps
/// the base size throughout.
pub fn shrink_schedule(
    n_alive: usize,
    n_total: usize,
    base_size: usize,
    shrink_fraction: f64,
) -> usize {
    debug_assert!(n_alive >= 1 && n_alive <= n_total);
    // guard against 0.2 * 15 = 3.0000000000000004 rounding up
    let threshold = (shrink_fraction * n_total as f64 - 1e-9).ceil().max(0.0) as usize;
    if base_size <= 1 || n_alive > threshold {
        return base_size;
    }
    let depth = threshold - n_alive;
    let band = depth * (base_size - 1) / threshold + 1;
    base_size.saturating_sub(band).max(1)
}

/// Bookkeeping of one CGC run: correlations, the ungrouped atoms, the
/// per-atom cumulative scores and the partners achieving them.
#[derive(Debug, Clone)]
pub struct CgcWorkspace {
    /// `|<d_i, d_j>|` with a zero diagonal.
    pub corr: DMatrix<f64>,
    /// Ungrouped atoms in increasing index order.
    pub alive: Vec<usize>,
    /// Score of each alive atom (aligned with `alive`).
    pub scores: Vec<f64>,
    /// Best partners of each alive atom (aligned with `alive`), strongest first.
    pub candidate_groups: Vec<Vec<usize>>,
}

impl CgcWorkspace {
    pub fn new(dictionary: &Dictionary) -> Self {
        Self::from_correlations(abs_correlations(dictionary), None)
    }

    /// Workspace over `subset` (all atoms when `None`) of a correlation matrix.
    pub fn from_correlations(corr: DMatrix<f64>, subset: Option<Vec<usize>>) -> Self {
        let alive = subset.unwrap_or_else(|| (0..corr.nrows()).collect());
        Self {
            corr,
            scores: Vec::new(),
            candidate_groups: Vec::new(),
            alive,
        }
    }

    /// Recomputes scores and candidate groups for groups of `group_size` atoms.
    pub fn score(&mut self, group_size: usize) {
        let partners = group_size.saturating_sub(1).min(self.alive.len() - 1);
        self.scores.clear();
        self.candidate_groups.clear();
        let mut top: Vec<(usize, f64)> = Vec::with_capacity(partners + 1);
        for &i in &self.alive {
            top.clear();
            for &j in &self.alive {
                if j == i || partners == 0 {
                    continue;
                }
                let v = self.corr[(i, j)];
                // candidates arrive in increasing index order; equal values stay behind
                let pos = top
                    .iter()
                    .position(|&(_, w)| v > w + TIE_TOL)
                    .unwrap_or(top.len());
                if pos < partners {
                    top.insert(pos, (j, v));
                    top.truncate(partners);
                }
            }
            self.scores.push(top.iter().map(|(_, v)| v).sum());
            self.candidate_groups.push(top.iter().map(|(j, _)| *j).collect());
        }
    }

    /// Forms the block of the best-scoring seed, drops its atoms and returns
    /// them (sorted) with the winning score.
    pub fn take_best(&mut self) -> (Vec<usize>, f64) {
        let mut best = 0;
        for (k, &s) in self.scores.iter().enumerate() {
            if s > self.scores[best] + TIE_TOL {
                best = k;
            }
        }
        let mut block = vec![self.alive[best]];
        block.extend_from_slice(&self.candidate_groups[best]);
        block.sort_unstable();
        let score = self.scores[best];
        self.alive.retain(|a| block.binary_search(a).is_err());
        (block, score)
    }
}

/// `|DᵀD|` with a zeroed diagonal, clamped to `[0, 1]`.
pub fn abs_correlations(dictionary: &Dictionary) -> DMatrix<f64> {
    let mut g = dictionary.gram().map(|v| v.abs().min(1.0));
    g.fill_diagonal(0.0);
    g
}

/// One block formed by CGC.
#[derive(Debug, Clone, PartialEq)]
pub struct CgcStep {
    pub block: Vec<usize>,
    /// Size limit in force when the block was formed.
    pub size_limit: usize,
    pub score: f64,
}

fn run_cgc(mut ws: CgcWorkspace, max_block_size: usize, shrink_fraction: f64) -> Vec<CgcStep> {
    let n_total = ws.alive.len();
    let mut steps = Vec::new();
    while !ws.alive.is_empty() {
        let limit = shrink_schedule(ws.alive.len(), n_total, max_block_size, shrink_fraction);
        ws.score(limit.min(ws.alive.len()));
        let (block, score) = ws.take_best();
        steps.push(CgcStep {
            block,
            size_limit: limit,
            score,
        });
    }
    steps
}

fn check_cgc_args(max_block_size: usize, shrink_fraction: f64) -> Result<()> {
    if max_block_size == 0 {
        return Err(Error::invalid("max_block_size must be positive"));
    }
    if !(0.0..1.0).contains(&shrink_fraction) {
        return Err(Error::invalid("shrink_fraction must lie in [0, 1)"));
    }
    Ok(())
}

/// Correlation-based greedy clustering, returning every formation step.
pub fn cgc_trace(
    dictionary: &Dictionary,
    max_block_size: usize,
    shrink_fraction: f64,
) -> Result<Vec<CgcStep>> {
    check_cgc_args(max_block_size, shrink_fraction)?;
    Ok(run_cgc(
        CgcWorkspace::new(dictionary),
        max_block_size,
        shrink_fraction,
    ))
}

/// Correlation-based greedy clustering. Block ids follow formation order.
pub fn cgc_estimate(
    dictionary: &Dictionary,
    max_block_size: usize,
    shrink_fraction: f64,
) -> Result<BlockStructure> {
    let steps = cgc_trace(dictionary, max_block_size, shrink_fraction)?;
    let blocks: Vec<Vec<usize>> = steps.into_iter().map(|s| s.block).collect();
    BlockStructure::from_blocks(dictionary.n_atoms(), &blocks)
}

/// CGC restricted to each class's atoms. Classes are processed in order and
/// block ids continue across classes, so every block is class-pure.
pub fn supervised_cgc_estimate(
    dictionary: &Dictionary,
    labels: &ClassLabels,
    max_block_size: usize,
    shrink_fraction: f64,
) -> Result<BlockStructure> {
    check_cgc_args(max_block_size, shrink_fraction)?;
    let n = dictionary.n_atoms();
    if labels.n_atoms() != n {
        return Err(Error::dim(format!(
            "{} labels for {n} atoms",
            labels.n_atoms()
        )));
    }
    let corr = abs_correlations(dictionary);
    let mut blocks = Vec::new();
    for class in 1..=labels.n_classes() {
        let range = labels.range(class);
        if range.is_empty() {
            return Err(Error::invariant(format!("class {class} has no atoms")));
        }
        let ws = CgcWorkspace::from_correlations(corr.clone(), Some(range.collect()));
        blocks.extend(
            run_cgc(ws, max_block_size, shrink_fraction)
                .into_iter()
                .map(|s| s.block),
        );
    }
    BlockStructure::from_blocks(n, &blocks)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Unit-norm atoms whose pairwise inner products equal `g` (must be PD).
    pub(crate) fn dict_with_gram(g: &DMatrix<f64>) -> Dictionary {
        let chol = g.clone().cholesky().expect("gram must be positive definite");
        Dictionary::new(chol.l().transpose()).unwrap()
    }

    fn gram5() -> DMatrix<f64> {
        let mut g = DMatrix::identity(5, 5);
        let mut set = |i: usize, j: usize, v: f64| {
            g[(i - 1, j - 1)] = v;
            g[(j - 1, i - 1)] = v;
        };
        set(2, 4, 0.9);
        set(1, 3, 0.8);
        set(1, 2, 0.1);
        set(1, 5, 0.2);
        set(3, 5, -0.15);
        set(4, 5, 0.05);
        set(2, 3, 0.12);
        g
    }

    #[test]
    fn cgc_five_atom_example() {
        let d = dict_with_gram(&gram5());
        let b = cgc_estimate(&d, 2, 0.2).unwrap();
        assert_eq!(b.assignment(), &[2, 1, 2, 1, 3]);
    }

    #[test]
    fn cgc_orthogonal_atoms_tie_to_index_order() {
        let d = Dictionary::new(DMatrix::identity(4, 4)).unwrap();
        assert_eq!(cgc_estimate(&d, 2, 0.2).unwrap().assignment(), &[1, 1, 2, 2]);
        let d = Dictionary::new(DMatrix::identity(6, 6)).unwrap();
        assert_eq!(
            cgc_estimate(&d, 2, 0.0).unwrap().assignment(),
            &[1, 1, 2, 2, 3, 3]
        );
    }

    #[test]
    fn cgc_rejects_bad_args() {
        let d = Dictionary::new(DMatrix::identity(2, 2)).unwrap();
        assert!(cgc_estimate(&d, 0, 0.2).is_err());
        assert!(cgc_estimate(&d, 2, 1.0).is_err());
    }

    #[test]
    fn shrink_schedule_examples() {
        assert_eq!(shrink_schedule(50, 100, 3, 0.2), 3);
        assert_eq!(shrink_schedule(15, 100, 3, 0.2), 2);
        assert_eq!(shrink_schedule(4, 100, 3, 0.2), 1);
        assert_eq!(shrink_schedule(20, 100, 3, 0.2), 2);
        assert_eq!(shrink_schedule(21, 100, 3, 0.2), 3);
        assert_eq!(shrink_schedule(10, 100, 3, 0.2), 1);
        assert_eq!(shrink_schedule(3, 15, 3, 0.2), 2);
        assert_eq!(shrink_schedule(1, 100, 3, 0.0), 3);
    }

    #[test]
    fn sac_figure_one_example() {
        let mut u = DMatrix::zeros(3, 20);
        for s in 0..15 {
            u[(0, s)] = 1.0;
        }
        for s in 0..12 {
            u[(1, s)] = 0.5;
        }
        u[(2, 2)] = 1.0;
        u[(2, 3)] = -1.0;
        let d = Dictionary::new(DMatrix::identity(3, 3)).unwrap();
        let b = sac_estimate(&d, &SparseCodes::new(u).unwrap(), 2).unwrap();
        assert_eq!(b.assignment(), &[1, 1, 2]);
    }

    #[test]
    fn sac_disjoint_supports_do_not_merge() {
        let d = Dictionary::new(DMatrix::identity(3, 3)).unwrap();
        let u = SparseCodes::new(DMatrix::identity(3, 3)).unwrap();
        assert_eq!(sac_estimate(&d, &u, 3).unwrap().assignment(), &[1, 2, 3]);
    }

    #[test]
    fn sac_respects_size_cap() {
        // A={1,2,3}, B={1,2,3}, C={1,2}, D={9}
        let mut u = DMatrix::zeros(4, 9);
        for s in 0..3 {
            u[(0, s)] = 1.0;
            u[(1, s)] = 1.0;
        }
        u[(2, 0)] = 1.0;
        u[(2, 1)] = 1.0;
        u[(3, 8)] = 1.0;
        let d = Dictionary::new(DMatrix::identity(4, 4)).unwrap();
        let b = sac_estimate(&d, &SparseCodes::new(u).unwrap(), 2).unwrap();
        assert_eq!(b.assignment(), &[1, 1, 2, 3]);
    }

    #[test]
    fn sac_rejects_empty_codes() {
        let d = Dictionary::new(DMatrix::identity(2, 2)).unwrap();
        let err = sac_estimate(&d, &SparseCodes::zeros(2, 0), 2).unwrap_err();
        assert!(err.to_string().contains("empty codes"));
    }

    #[test]
    fn supervised_forbids_cross_class_blocks() {
        let mut g = DMatrix::identity(4, 4);
        let mut set = |i: usize, j: usize, v: f64| {
            g[(i, j)] = v;
            g[(j, i)] = v;
        };
        set(0, 2, 0.95);
        set(0, 1, 0.5);
        set(2, 3, 0.5);
        set(1, 3, 0.1);
        set(0, 3, 0.3);
        set(1, 2, 0.3);
        let d = dict_with_gram(&g);
        // unsupervised CGC groups the cross-class pair
        assert_eq!(cgc_estimate(&d, 2, 0.0).unwrap().blocks()[0], vec![0, 2]);
        let labels = ClassLabels::new(vec![1, 1, 2, 2]).unwrap();
        let b = supervised_cgc_estimate(&d, &labels, 2, 0.2).unwrap();
        assert_eq!(b.blocks(), vec![vec![0, 1], vec![2, 3]]);
    }

    #[test]
    fn supervised_single_class_equals_cgc() {
        let d = dict_with_gram(&gram5());
        let labels = ClassLabels::new(vec![1; 5]).unwrap();
        assert_eq!(
            supervised_cgc_estimate(&d, &labels, 2, 0.2).unwrap(),
            cgc_estimate(&d, 2, 0.2).unwrap()
        );
    }

    #[test]
    fn supervised_class_size_equals_block_size() {
        let d = Dictionary::new(DMatrix::identity(6, 6)).unwrap();
        let labels = ClassLabels::from_counts(&[3, 3]).unwrap();
        let b = supervised_cgc_estimate(&d, &labels, 3, 0.0).unwrap();
        assert_eq!(b.n_blocks(), 2);
        assert_eq!(b.assignment(), &[1, 1, 1, 2, 2, 2]);
    }
}
