//! Seeded generators for oracle block dictionaries, block-sparse datasets and
//! additive noise at a prescribed SNR.

use nalgebra::DMatrix;
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{BlockStructure, Dictionary, TrainingSet};

/// Maps a master seed and a path of counters to an independent seed.
pub fn derive_seed(master: u64, path: &[u64]) -> u64 {
    let mut state = splitmix(master ^ 0x5DEE_CE66_D1CE_B00C);
    for &p in path {
        state = splitmix(state ^ splitmix(p.wrapping_add(0x9E37_79B9_7F4A_7C15)));
    }
    state
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian_matrix(rng: &mut impl Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    // column-major fill order keeps the stream layout independent of nalgebra internals
    let data: Vec<f64> = (0..rows * cols).map(|_| rng.sample(StandardNormal)).collect();
    DMatrix::from_vec(rows, cols, data)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleSpec {
    pub m: usize,
    pub n_atoms: usize,
    pub block_size: usize,
    pub target_intra_corr: f64,
    pub seed: u64,
}

impl Default for OracleSpec {
    fn default() -> Self {
        Self {
            m: 30,
            n_atoms: 60,
            block_size: 3,
            target_intra_corr: 0.68,
            seed: 0,
        }
    }
}

impl OracleSpec {
    pub fn validate(&self) -> Result<()> {
        if self.m == 0 || self.block_size == 0 || self.n_atoms == 0 {
            return Err(Error::invalid("m, n_atoms and block_size must be positive"));
        }
        if self.n_atoms % self.block_size != 0 {
            return Err(Error::invalid(format!(
                "block size {} does not divide {} atoms",
                self.block_size, self.n_atoms
            )));
        }
        if !(0.5..=1.0).contains(&self.target_intra_corr) {
            return Err(Error::invalid("target_intra_corr must lie in [0.5, 1]"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct OracleDictionary {
    pub dictionary: Dictionary,
    pub structure: BlockStructure,
    /// Average within-block `|corr|` of the generated instance.
    pub intra_corr: f64,
    /// Clone noise standard deviation found by calibration.
    pub noise_std: f64,
}

const CALIBRATION_STEPS: usize = 100;
const CALIBRATION_TOL: f64 = 0.02;

fn build_blocks(base: &DMatrix<f64>, noise: &DMatrix<f64>, block_size: usize, sigma: f64) -> DMatrix<f64> {
    let (m, n_b) = base.shape();
    let clones = block_size - 1;
    let mut atoms = DMatrix::zeros(m, n_b * block_size);
    for k in 0..n_b {
        atoms.set_column(k * block_size, &base.column(k));
        for c in 0..clones {
            let col = base.column(k) + noise.column(k * clones + c) * sigma;
            atoms.set_column(k * block_size + c + 1, &col);
        }
    }
    for mut col in atoms.column_iter_mut() {
        let n = col.norm();
        col /= n;
    }
    atoms
}

fn mean_intra(atoms: &DMatrix<f64>, block_size: usize) -> f64 {
    let n_b = atoms.ncols() / block_size;
    let mut sum = 0.0;
    let mut count = 0usize;
    for k in 0..n_b {
        for i in 0..block_size {
            for j in i + 1..block_size {
                let a = atoms.column(k * block_size + i);
                let b = atoms.column(k * block_size + j);
                sum += a.dot(&b).abs();
                count += 1;
            }
        }
    }
    if count == 0 {
        1.0
    } else {
        sum / count as f64
    }
}

/// Oracle block dictionary: `n_atoms / block_size` Gaussian base atoms, each
/// followed by `block_size - 1` noisy clones. The clone noise level is found
/// by bisection so that the instance's average intra-block `|corr|` matches
/// the target. Blocks occupy consecutive atom indices.
pub fn gen_oracle_dict(spec: &OracleSpec) -> Result<OracleDictionary> {
    spec.validate()?;
    let n_b = spec.n_atoms / spec.block_size;
    let clones = spec.block_size - 1;
    let mut rng = rng(spec.seed);
    let base = gaussian_matrix(&mut rng, spec.m, n_b);
    if base.column_iter().any(|c| c.norm() == 0.0) {
        return Err(Error::Numerical("degenerate base atom".into()));
    }
    let noise = gaussian_matrix(&mut rng, spec.m, n_b * clones);
    let structure = BlockStructure::contiguous(spec.n_atoms, spec.block_size);
    let target = spec.target_intra_corr;

    let corr_at = |sigma: f64| mean_intra(&build_blocks(&base, &noise, spec.block_size, sigma), spec.block_size);

    let sigma = if clones == 0 || target >= 1.0 {
        0.0
    } else {
        let mut hi = 1.0;
        while corr_at(hi) > target {
            hi *= 2.0;
            if hi > 1e6 {
                return Err(Error::Numerical(format!(
                    "clone noise calibration cannot reach intra-corr {target}"
                )));
            }
        }
        let mut lo = 0.0;
        for _ in 0..CALIBRATION_STEPS {
            let mid = 0.5 * (lo + hi);
            if corr_at(mid) > target {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo < 1e-12 {
                break;
            }
        }
        0.5 * (lo + hi)
    };

    let atoms = build_blocks(&base, &noise, spec.block_size, sigma);
    let intra_corr = mean_intra(&atoms, spec.block_size);
    if clones > 0 && (intra_corr - target).abs() > CALIBRATION_TOL {
        return Err(Error::Numerical(format!(
            "clone noise calibration reached intra-corr {intra_corr:.4}, target {target}"
        )));
    }
    Ok(OracleDictionary {
        dictionary: Dictionary::new(atoms)?,
        structure,
        intra_corr,
        noise_std: sigma,
    })
}

/// A generated dataset with the block ids used to synthesize each signal.
#[derive(Debug, Clone)]
pub struct BlockSparseData {
    pub set: TrainingSet,
    /// Sorted generating block ids (1-based) per signal.
    pub supports: Vec<Vec<usize>>,
}

/// Each signal sums `blocks_per_signal` distinct uniformly chosen blocks, each
/// block's atoms weighted by independent standard-normal coefficients.
pub fn gen_block_sparse_data(
    dictionary: &Dictionary,
    structure: &BlockStructure,
    n_signals: usize,
    blocks_per_signal: usize,
    seed: u64,
) -> Result<BlockSparseData> {
    let blocks = structure.blocks();
    if structure.n_atoms() != dictionary.n_atoms() || !structure.is_complete() {
        return Err(Error::invalid("structure must fully cover the dictionary"));
    }
    if blocks_per_signal == 0 || blocks_per_signal > blocks.len() {
        return Err(Error::invalid(format!(
            "blocks per signal {blocks_per_signal} outside 1..={}",
            blocks.len()
        )));
    }
    let d = dictionary.atoms();
    let mut rng = rng(seed);
    let mut signals = DMatrix::zeros(dictionary.dim(), n_signals);
    let mut supports = Vec::with_capacity(n_signals);
    for s in 0..n_signals {
        let mut chosen: Vec<usize> = sample(&mut rng, blocks.len(), blocks_per_signal)
            .into_iter()
            .collect();
        chosen.sort_unstable();
        let mut col = signals.column_mut(s);
        for &k in &chosen {
            for &a in &blocks[k] {
                let w: f64 = rng.sample(StandardNormal);
                col.axpy(w, &d.column(a), 1.0);
            }
        }
        supports.push(chosen.into_iter().map(|k| k + 1).collect());
    }
    Ok(BlockSparseData {
        set: TrainingSet::new(signals)?,
        supports,
    })
}

/// Adds white Gaussian noise scaled so that `10 log10(|Y|² / |N|²)` equals
/// `snr_db` exactly for this realization. `+inf` returns the input unchanged.
pub fn add_noise_snr(set: &TrainingSet, snr_db: f64, seed: u64) -> Result<TrainingSet> {
    if snr_db.is_nan() || snr_db == f64::NEG_INFINITY {
        return Err(Error::invalid(format!("invalid SNR {snr_db}")));
    }
    if snr_db == f64::INFINITY {
        return Ok(set.clone());
    }
    let signal_norm = set.signals().norm();
    if signal_norm == 0.0 {
        return Err(Error::invalid("zero-energy input with finite SNR"));
    }
    let mut rng = rng(seed);
    let noise = gaussian_matrix(&mut rng, set.dim(), set.len());
    let scale = signal_norm / (noise.norm() * 10f64.powf(snr_db / 20.0));
    let noisy = set.signals() + noise * scale;
    match set.classes() {
        Some(c) => TrainingSet::with_classes(noisy, c.to_vec()),
        None => TrainingSet::new(noisy),
    }
}

/// Realized SNR in dB between a clean set and its noisy version.
pub fn realized_snr_db(clean: &TrainingSet, noisy: &TrainingSet) -> f64 {
    let noise = noisy.signals() - clean.signals();
    20.0 * (clean.signals().norm() / noise.norm()).log10()
}
