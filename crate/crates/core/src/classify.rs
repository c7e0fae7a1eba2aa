//! Sparse-representation classification over learned dictionaries.
//!
//! Two closed-set rules work directly on a class-pure block dictionary
//! (per-class residual and per-class coefficient energy). Cosine distance
//! scoring against per-class mean-code templates works with any dictionary,
//! supervised or not; it stands in for enrollment/test scoring.

use nalgebra::{DVector, DVectorView};

use crate::coding::bomp;
use crate::error::{Error, Result};
use crate::model::{BlockStructure, ClassLabels, Dictionary, SparseCodes};

/// Cosine of the angle between two code vectors.
pub fn cds_score(a: DVectorView<'_, f64>, b: DVectorView<'_, f64>) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::dim(format!("lengths {} and {}", a.len(), b.len())));
    }
    let (na, nb) = (a.norm(), b.norm());
    if na == 0.0 || nb == 0.0 {
        return Err(Error::invalid("cosine score of a zero vector"));
    }
    Ok((a.dot(&b) / (na * nb)).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Decision {
    /// 1-based class id.
    Class(usize),
    /// The code carries no class evidence.
    Reject,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClassRule {
    /// Smallest `|y - D_c u_c|` using only class-`c` coefficients.
    Residual,
    /// Largest `sum u_i²` over class-`c` atoms.
    Energy,
}

fn check_pure(structure: &BlockStructure, labels: &ClassLabels) -> Result<()> {
    if structure.n_atoms() != labels.n_atoms() {
        return Err(Error::dim("labels do not match the structure"));
    }
    for block in structure.blocks() {
        let first = labels.labels()[block[0]];
        if block.iter().any(|&a| labels.labels()[a] != first) {
            return Err(Error::invalid("block structure is not class-pure"));
        }
    }
    Ok(())
}

/// Index of the best value (ties to the lowest index).
fn pick(values: &[f64], larger_is_better: bool) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        let better = if larger_is_better {
            v > values[best]
        } else {
            v < values[best]
        };
        if better {
            best = i;
        }
    }
    best
}

/// BOMP-codes `y` and assigns a class with `rule`.
pub fn classify_signal(
    dictionary: &Dictionary,
    structure: &BlockStructure,
    labels: &ClassLabels,
    y: &[f64],
    block_sparsity: usize,
    rule: ClassRule,
) -> Result<Decision> {
    check_pure(structure, labels)?;
    let code = bomp(dictionary, structure, y, block_sparsity, 0.0)?.code;
    if code.iter().all(|&v| v == 0.0) {
        return Ok(Decision::Reject);
    }
    let n_classes = labels.n_classes();
    let scores: Vec<f64> = (1..=n_classes)
        .map(|c| {
            let range = labels.range(c);
            match rule {
                ClassRule::Energy => range.map(|a| code[a] * code[a]).sum(),
                ClassRule::Residual => {
                    let mut r = DVector::from_column_slice(y);
                    for a in range {
                        if code[a] != 0.0 {
                            r.axpy(-code[a], &dictionary.atom(a), 1.0);
                        }
                    }
                    r.norm()
                }
            }
        })
        .collect();
    let best = pick(&scores, rule == ClassRule::Energy);
    Ok(Decision::Class(best + 1))
}

/// Per-class mean code magnitudes.
///
/// Coefficient signs follow the random weights of each signal, so signed
/// class means shrink towards zero; templates and scored codes therefore use
/// `|u|`, the pattern of atom usage.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassTemplates {
    means: Vec<DVector<f64>>,
}

impl ClassTemplates {
    /// `classes[i]` is the 1-based class of code column `i`.
    pub fn from_codes(codes: &SparseCodes, classes: &[usize]) -> Result<Self> {
        if classes.len() != codes.n_signals() {
            return Err(Error::dim("one class id per code column required"));
        }
        let n_classes = classes.iter().copied().max().unwrap_or(0);
        let mut sums = vec![DVector::zeros(codes.n_atoms()); n_classes];
        let mut counts = vec![0usize; n_classes];
        for (i, &c) in classes.iter().enumerate() {
            if c == 0 {
                return Err(Error::invalid("class ids start at 1"));
            }
            sums[c - 1] += codes.coefficients().column(i).abs();
            counts[c - 1] += 1;
        }
        let means = sums
            .into_iter()
            .zip(counts)
            .map(|(s, n)| if n == 0 { s } else { s / n as f64 })
            .collect();
        Ok(Self { means })
    }

    pub fn n_classes(&self) -> usize {
        self.means.len()
    }

    /// Class whose template has the highest cosine score with `|code|`.
    pub fn classify(&self, code: DVectorView<'_, f64>) -> Result<Decision> {
        if code.iter().all(|&v| v == 0.0) {
            return Ok(Decision::Reject);
        }
        let code = code.abs();
        let code = code.as_view();
        let scores: Vec<f64> = self
            .means
            .iter()
            .map(|t| {
                if t.iter().all(|&v| v == 0.0) {
                    Ok(f64::NEG_INFINITY)
                } else {
                    cds_score(code, t.as_view())
                }
            })
            .collect::<Result<_>>()?;
        Ok(Decision::Class(pick(&scores, true) + 1))
    }
}

/// Fraction of decisions equal to the true class; rejects count as errors.
pub fn accuracy(decisions: &[Decision], truth: &[usize]) -> f64 {
    if decisions.is_empty() {
        return 0.0;
    }
    let hits = decisions
        .iter()
        .zip(truth)
        .filter(|(d, &t)| **d == Decision::Class(t))
        .count();
    hits as f64 / decisions.len() as f64
}
