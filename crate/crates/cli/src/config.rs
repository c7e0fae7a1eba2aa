//! Flat JSON run configuration.
//!
//! Keys mirror `ExperimentConfig` field names, plus data, sweep and benchmark
//! settings. Every key except `m` is optional; unknown keys are rejected.

use std::path::Path;

use anyhow::{bail, Context};
use blockdict::experiments::{default_update_period, ClassifySettings, SweepSettings};
use blockdict::synthetic::OracleSpec;
use blockdict::{ExperimentConfig, StructureMode};
use serde::{Deserialize, Deserializer};

/// An SNR in dB: a number, or `null` / `"inf"` for noiseless data.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Snr(pub Option<f64>);

impl<'de> Deserialize<'de> for Snr {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Text(String),
        }
        match Option::<Raw>::deserialize(d)? {
            None => Ok(Snr(None)),
            Some(Raw::Num(v)) => Ok(Snr(Some(v))),
            Some(Raw::Text(t)) if matches!(t.as_str(), "inf" | "+inf" | "infinity") => Ok(Snr(None)),
            Some(Raw::Text(t)) => Err(serde::de::Error::custom(format!(
                "invalid SNR {t:?}: expected a number, null or \"inf\""
            ))),
        }
    }
}

/// Distinguishes an absent key from an explicit `null`.
fn explicit<'de, D, T>(d: D) -> Result<Option<Option<T>>, D::Error>
where
    D: Deserializer<'de>,
    T: Deserialize<'de>,
{
    Option::<T>::deserialize(d).map(Some)
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Signal dimension.
    pub m: usize,

    pub max_block_size: Option<usize>,
    pub block_sparsity: Option<usize>,
    pub atom_sparsity: Option<usize>,
    pub outer_iterations: Option<usize>,
    /// `null` keeps the first estimated structure for the whole run. When
    /// absent, cgc keeps it and the other modes re-estimate every iteration.
    #[serde(default, deserialize_with = "explicit")]
    pub structure_update_period: Option<Option<usize>>,
    pub shrink_fraction: Option<f64>,
    #[serde(default)]
    pub snr_db: Option<Snr>,
    pub trials: Option<usize>,
    pub rng_seed: Option<u64>,
    pub structure_mode: Option<StructureMode>,
    pub residual_tolerance: Option<f64>,
    pub supervised_init_ksvd: Option<bool>,

    pub n_atoms: Option<usize>,
    pub oracle_block_size: Option<usize>,
    pub intra_corr: Option<f64>,
    pub n_signals: Option<usize>,
    pub blocks_per_signal: Option<usize>,
    /// `gen` writes class-labelled train/test data instead of one corpus.
    pub labeled: Option<bool>,

    pub eval_block_sparsity: Option<usize>,
    pub ksvd_iterations: Option<usize>,
    pub ksvd_sparsity: Option<usize>,
    pub fig5_signals: Option<usize>,
    pub fig5_shrink_fraction: Option<f64>,
    pub methods: Option<Vec<StructureMode>>,
    pub intra_corr_grid: Option<Vec<f64>>,
    pub block_size_grid: Option<Vec<usize>>,
    pub snr_grid: Option<Vec<Snr>>,
    pub blocks_per_signal_grid: Option<Vec<usize>>,
    pub coherence_runs: Option<usize>,
    pub coherence_threshold: Option<f64>,

    pub n_classes: Option<usize>,
    pub blocks_per_class: Option<usize>,
    pub shared_blocks: Option<usize>,
    pub class_blocks_per_signal: Option<usize>,
    pub train_per_class: Option<usize>,
    pub test_per_class: Option<usize>,
    pub atoms_per_class: Option<usize>,
}

/// Command-line values that replace config keys.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub trials: Option<usize>,
    pub mode: Option<StructureMode>,
}

impl RunConfig {
    pub fn parse(text: &str) -> anyhow::Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text =
            std::fs::read_to_string(path).with_context(|| format!("cannot read config {}", path.display()))?;
        Self::parse(&text).with_context(|| format!("invalid config {}", path.display()))
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(s) = o.seed {
            self.rng_seed = Some(s);
        }
        if let Some(t) = o.trials {
            self.trials = Some(t);
        }
        if let Some(m) = o.mode {
            self.structure_mode = Some(m);
        }
    }

    pub fn experiment(&self) -> anyhow::Result<ExperimentConfig> {
        let d = ExperimentConfig::default();
        let mode = self.structure_mode.unwrap_or(d.structure_mode);
        let cfg = ExperimentConfig {
            max_block_size: self.max_block_size.unwrap_or(d.max_block_size),
            block_sparsity: self.block_sparsity.unwrap_or(d.block_sparsity),
            atom_sparsity: self.atom_sparsity.or(d.atom_sparsity),
            outer_iterations: self.outer_iterations.unwrap_or(d.outer_iterations),
            structure_update_period: self
                .structure_update_period
                .unwrap_or_else(|| default_update_period(mode)),
            shrink_fraction: self.shrink_fraction.unwrap_or(d.shrink_fraction),
            snr_db: self.snr_db.map_or(d.snr_db, |s| s.0),
            trials: self.trials.unwrap_or(d.trials),
            rng_seed: self.rng_seed.unwrap_or(d.rng_seed),
            structure_mode: mode,
            residual_tolerance: self.residual_tolerance.unwrap_or(d.residual_tolerance),
            supervised_init_ksvd: self.supervised_init_ksvd.unwrap_or(d.supervised_init_ksvd),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn oracle_spec(&self) -> anyhow::Result<OracleSpec> {
        let d = SweepSettings::default();
        let spec = OracleSpec {
            m: self.m,
            n_atoms: self.n_atoms.unwrap_or(d.n_atoms),
            block_size: self.oracle_block_size.unwrap_or(d.oracle_block_size),
            target_intra_corr: self.intra_corr.unwrap_or(d.oracle_intra_corr),
            seed: self.rng_seed.unwrap_or(0),
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn n_signals(&self) -> usize {
        self.n_signals.unwrap_or(SweepSettings::default().n_signals)
    }

    pub fn blocks_per_signal(&self) -> usize {
        self.blocks_per_signal
            .unwrap_or(SweepSettings::default().blocks_per_signal)
    }

    pub fn ksvd_iterations(&self) -> usize {
        self.ksvd_iterations
            .unwrap_or(SweepSettings::default().ksvd_iterations)
    }

    pub fn coherence_runs(&self) -> usize {
        self.coherence_runs.unwrap_or(10)
    }

    pub fn coherence_threshold(&self) -> f64 {
        self.coherence_threshold
            .unwrap_or(blockdict::analysis::COHERENCE_THRESHOLD)
    }

    pub fn sweep(&self) -> anyhow::Result<SweepSettings> {
        let d = SweepSettings::default();
        let s = SweepSettings {
            experiment: self.experiment()?,
            m: self.m,
            n_atoms: self.n_atoms.unwrap_or(d.n_atoms),
            oracle_block_size: self.oracle_block_size.unwrap_or(d.oracle_block_size),
            oracle_intra_corr: self.intra_corr.unwrap_or(d.oracle_intra_corr),
            n_signals: self.n_signals(),
            blocks_per_signal: self.blocks_per_signal(),
            eval_block_sparsity: self.eval_block_sparsity.unwrap_or(d.eval_block_sparsity),
            ksvd_iterations: self.ksvd_iterations(),
            ksvd_sparsity: self.ksvd_sparsity.or(d.ksvd_sparsity),
            fig5_signals: self.fig5_signals.unwrap_or(d.fig5_signals),
            fig5_shrink_fraction: self.fig5_shrink_fraction.unwrap_or(d.fig5_shrink_fraction),
            methods: self.methods.clone().unwrap_or(d.methods),
            intra_corr_grid: self.intra_corr_grid.clone().unwrap_or(d.intra_corr_grid),
            block_size_grid: self.block_size_grid.clone().unwrap_or(d.block_size_grid),
            snr_grid: self
                .snr_grid
                .as_ref()
                .map_or(d.snr_grid, |g| g.iter().map(|s| s.0).collect()),
            blocks_per_signal_grid: self
                .blocks_per_signal_grid
                .clone()
                .unwrap_or(d.blocks_per_signal_grid),
        };
        if s.m == 0 || s.n_atoms == 0 {
            bail!("m and n_atoms must be positive");
        }
        Ok(s)
    }

    pub fn classify(&self) -> anyhow::Result<ClassifySettings> {
        let d = ClassifySettings::default();
        let s = ClassifySettings {
            experiment: self.experiment()?,
            m: self.m,
            n_classes: self.n_classes.unwrap_or(d.n_classes),
            blocks_per_class: self.blocks_per_class.unwrap_or(d.blocks_per_class),
            shared_blocks: self.shared_blocks.unwrap_or(d.shared_blocks),
            oracle_block_size: self.oracle_block_size.unwrap_or(d.oracle_block_size),
            oracle_intra_corr: self.intra_corr.unwrap_or(d.oracle_intra_corr),
            class_blocks_per_signal: self.class_blocks_per_signal.unwrap_or(d.class_blocks_per_signal),
            train_per_class: self.train_per_class.unwrap_or(d.train_per_class),
            test_per_class: self.test_per_class.unwrap_or(d.test_per_class),
            atoms_per_class: self.atoms_per_class.unwrap_or(d.atoms_per_class),
            snr_db: self.snr_db.map_or(d.snr_db, |s| s.0),
            ksvd_iterations: self.ksvd_iterations(),
        };
        s.validate()?;
        Ok(s)
    }
}
