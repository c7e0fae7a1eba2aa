//! Seeded synthetic experiment sweeps.
//!
//! * `fig5`: exact block recovery over (intra-block correlation, block size).
//! * `fig6a`..`fig6d`: reconstruction error of SAC- vs CGC-structured block
//!   dictionaries over iterations, training SNR, learned block size and the
//!   number of generating blocks per signal.
//!
//! Every trial draws its randomness from seeds derived from the master seed,
//! the experiment tag and the trial index, so results do not depend on the
//! order or parallelism in which trials run. Rows are sorted before being
//! returned.

use std::fmt::Write as _;

use nalgebra::DMatrix;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analysis::{block_recovery_rate, coherence_profile, count_above, reconstruction_error};
use crate::classify::{accuracy, classify_signal, ClassRule, ClassTemplates};
use crate::coding::{code_columns, BlockOmp, Omp};
use crate::error::{Error, Result};
use crate::learning::{bksvd_train, bksvd_train_observed, ksvd_train, supervised_train};
use crate::model::{
    BlockStructure, ClassLabels, Dictionary, ExperimentConfig, SparseCodes, StructureMode, TrainingSet,
};
use crate::structure::{cgc_estimate, sac_estimate};
use crate::synthetic::{add_noise_snr, derive_seed, gen_block_sparse_data, gen_oracle_dict, OracleSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Experiment {
    Fig5,
    Fig6a,
    Fig6b,
    Fig6c,
    Fig6d,
}

impl Experiment {
    pub const ALL: [Experiment; 5] = [
        Experiment::Fig5,
        Experiment::Fig6a,
        Experiment::Fig6b,
        Experiment::Fig6c,
        Experiment::Fig6d,
    ];

    pub fn id(self) -> &'static str {
        match self {
            Experiment::Fig5 => "fig5",
            Experiment::Fig6a => "fig6a",
            Experiment::Fig6b => "fig6b",
            Experiment::Fig6c => "fig6c",
            Experiment::Fig6d => "fig6d",
        }
    }

    fn tag(self) -> u64 {
        self as u64 + 1
    }

    /// Parameter column names, in CSV order.
    pub fn param_columns(self) -> &'static [&'static str] {
        match self {
            Experiment::Fig5 => &["intra_corr", "block_size"],
            Experiment::Fig6a => &["iteration"],
            Experiment::Fig6b => &["snr_db"],
            Experiment::Fig6c => &["block_size"],
            Experiment::Fig6d => &["blocks_per_signal"],
        }
    }

    pub fn metric_column(self) -> &'static str {
        match self {
            Experiment::Fig5 => "recovery",
            _ => "rel_error",
        }
    }
}

impl std::str::FromStr for Experiment {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Experiment::ALL
            .into_iter()
            .find(|e| e.id() == s)
            .ok_or_else(|| Error::invalid(format!("unknown experiment {s:?}")))
    }
}

/// Settings shared by all sweeps. Grids that an experiment does not sweep
/// are ignored by it.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepSettings {
    pub experiment: ExperimentConfig,
    pub m: usize,
    pub n_atoms: usize,
    /// Block size of the generating oracle.
    pub oracle_block_size: usize,
    pub oracle_intra_corr: f64,
    pub n_signals: usize,
    /// Blocks summed per generated signal.
    pub blocks_per_signal: usize,
    /// Block sparsity used when measuring reconstruction error.
    pub eval_block_sparsity: usize,
    pub ksvd_iterations: usize,
    /// OMP sparsity of the KSVD initializer; `None` uses the config's atom sparsity.
    pub ksvd_sparsity: Option<usize>,
    /// Signals coded for SAC in `fig5`.
    pub fig5_signals: usize,
    /// CGC shrink fraction in `fig5`; 0 keeps every block at the nominal size,
    /// which equal-size oracle blocks need.
    pub fig5_shrink_fraction: f64,
    pub methods: Vec<StructureMode>,
    pub intra_corr_grid: Vec<f64>,
    pub block_size_grid: Vec<usize>,
    /// `None` entries mean noiseless training data.
    pub snr_grid: Vec<Option<f64>>,
    pub blocks_per_signal_grid: Vec<usize>,
}

impl Default for SweepSettings {
    fn default() -> Self {
        Self {
            experiment: ExperimentConfig {
                outer_iterations: 10,
                ..Default::default()
            },
            m: 30,
            n_atoms: 60,
            oracle_block_size: 3,
            oracle_intra_corr: 0.68,
            n_signals: 5000,
            blocks_per_signal: 2,
            eval_block_sparsity: 3,
            ksvd_iterations: 20,
            ksvd_sparsity: None,
            fig5_signals: 1000,
            fig5_shrink_fraction: 0.0,
            methods: vec![StructureMode::Sac, StructureMode::Cgc],
            intra_corr_grid: vec![0.5, 0.6, 0.7, 0.8, 0.9],
            block_size_grid: vec![2, 3, 4, 5, 6],
            snr_grid: vec![None, Some(30.0), Some(20.0), Some(10.0)],
            blocks_per_signal_grid: vec![1, 2, 3, 4, 5],
        }
    }
}

impl SweepSettings {
    pub fn validate(&self, exp: Experiment) -> Result<()> {
        self.experiment.validate()?;
        ExperimentConfig {
            shrink_fraction: self.fig5_shrink_fraction,
            ..self.experiment.clone()
        }
        .validate()?;
        if self.methods.is_empty() {
            return Err(Error::invalid("no methods to run"));
        }
        if let Some(m) = self
            .methods
            .iter()
            .find(|m| !matches!(m, StructureMode::Sac | StructureMode::Cgc))
        {
            return Err(Error::invalid(format!("sweeps run sac or cgc, not {m}")));
        }
        let empty = match exp {
            Experiment::Fig5 => self.intra_corr_grid.is_empty() || self.block_size_grid.is_empty(),
            Experiment::Fig6a => self.experiment.outer_iterations == 0,
            Experiment::Fig6b => self.snr_grid.is_empty(),
            Experiment::Fig6c => self.block_size_grid.is_empty(),
            Experiment::Fig6d => self.blocks_per_signal_grid.is_empty(),
        };
        if empty {
            return Err(Error::invalid(format!("empty sweep grid for {}", exp.id())));
        }
        if self.intra_corr_grid.iter().any(|c| !(0.5..=1.0).contains(c)) {
            return Err(Error::invalid("intra_corr grid values must lie in [0.5, 1]"));
        }
        if self.block_size_grid.iter().any(|&b| b == 0 || self.n_atoms % b != 0) {
            return Err(Error::invalid("block sizes must be positive divisors of n_atoms"));
        }
        if self.snr_grid.iter().flatten().any(|s| s.is_nan()) {
            return Err(Error::invalid("SNR grid contains NaN"));
        }
        let n_b = self.n_atoms / self.oracle_block_size.max(1);
        if self.blocks_per_signal_grid.iter().any(|&p| p == 0 || p > n_b)
            || self.blocks_per_signal == 0
            || self.blocks_per_signal > n_b
        {
            return Err(Error::invalid(format!("blocks per signal must lie in 1..={n_b}")));
        }
        Ok(())
    }

    fn oracle_spec(&self, block_size: usize, intra_corr: f64, seed: u64) -> OracleSpec {
        OracleSpec {
            m: self.m,
            n_atoms: self.n_atoms,
            block_size,
            target_intra_corr: intra_corr,
            seed,
        }
    }
}

/// One CSV row. `trial` is `None` for the across-trial mean.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub params: Vec<Param>,
    pub method: StructureMode,
    pub trial: Option<usize>,
    pub value: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Param {
    Real(f64),
    Int(usize),
    /// Noiseless / infinite SNR.
    Inf,
}

impl Param {
    fn sort_key(&self) -> f64 {
        match *self {
            Param::Real(v) => v,
            Param::Int(v) => v as f64,
            Param::Inf => f64::INFINITY,
        }
    }
}

impl std::fmt::Display for Param {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Param::Real(v) => write!(f, "{v}"),
            Param::Int(v) => write!(f, "{v}"),
            Param::Inf => f.write_str("inf"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentResult {
    pub experiment: Experiment,
    pub rows: Vec<ResultRow>,
}

impl ExperimentResult {
    fn from_trials(experiment: Experiment, mut rows: Vec<ResultRow>) -> Self {
        rows.sort_by(|a, b| row_order(a, b));
        let mut means = Vec::new();
        let mut i = 0;
        while i < rows.len() {
            let mut j = i;
            while j < rows.len() && rows[j].params == rows[i].params && rows[j].method == rows[i].method {
                j += 1;
            }
            let mean = rows[i..j].iter().map(|r| r.value).sum::<f64>() / (j - i) as f64;
            means.push(ResultRow {
                params: rows[i].params.clone(),
                method: rows[i].method,
                trial: None,
                value: mean,
            });
            i = j;
        }
        rows.extend(means);
        rows.sort_by(|a, b| row_order(a, b));
        Self { experiment, rows }
    }

    /// Mean rows only.
    pub fn means(&self) -> impl Iterator<Item = &ResultRow> {
        self.rows.iter().filter(|r| r.trial.is_none())
    }

    /// Mean value for `method` at the given parameters.
    pub fn mean(&self, method: StructureMode, params: &[Param]) -> Option<f64> {
        self.means()
            .find(|r| r.method == method && r.params == params)
            .map(|r| r.value)
    }

    /// Columns: `experiment_id,trial,<params...>,method,<metric>`; mean rows
    /// carry `mean` in the trial column.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        out.push_str("experiment_id,trial,");
        for p in self.experiment.param_columns() {
            out.push_str(p);
            out.push(',');
        }
        let _ = writeln!(out, "method,{}", self.experiment.metric_column());
        for r in &self.rows {
            let trial = r.trial.map_or_else(|| "mean".to_string(), |t| t.to_string());
            let _ = write!(out, "{},{trial},", self.experiment.id());
            for p in &r.params {
                let _ = write!(out, "{p},");
            }
            let _ = writeln!(out, "{},{}", r.method, r.value);
        }
        out
    }
}

fn row_order(a: &ResultRow, b: &ResultRow) -> std::cmp::Ordering {
    for (x, y) in a.params.iter().zip(&b.params) {
        let o = x.sort_key().total_cmp(&y.sort_key());
        if o.is_ne() {
            return o;
        }
    }
    a.method
        .as_str()
        .cmp(b.method.as_str())
        .then(a.trial.unwrap_or(usize::MAX).cmp(&b.trial.unwrap_or(usize::MAX)))
}

pub fn run(exp: Experiment, settings: &SweepSettings) -> Result<ExperimentResult> {
    settings.validate(exp)?;
    let rows = match exp {
        Experiment::Fig5 => fig5(settings)?,
        _ => fig6(exp, settings)?,
    };
    Ok(ExperimentResult::from_trials(exp, rows))
}

fn trials(settings: &SweepSettings) -> Vec<usize> {
    (0..settings.experiment.trials).collect()
}

fn fig5(s: &SweepSettings) -> Result<Vec<ResultRow>> {
    let master = s.experiment.rng_seed;
    let tag = Experiment::Fig5.tag();
    let mut jobs = Vec::new();
    for (ci, &corr) in s.intra_corr_grid.iter().enumerate() {
        for &bs in &s.block_size_grid {
            for t in trials(s) {
                jobs.push((ci, corr, bs, t));
            }
        }
    }
    let nested: Vec<Vec<ResultRow>> = jobs
        .into_par_iter()
        .map(|(ci, corr, bs, t)| {
            let seed = derive_seed(master, &[tag, ci as u64, bs as u64, t as u64]);
            let oracle = gen_oracle_dict(&s.oracle_spec(bs, corr, seed))?;
            let params = vec![Param::Real(corr), Param::Int(bs)];
            let mut out = Vec::new();
            for &method in &s.methods {
                let estimated = match method {
                    StructureMode::Cgc => cgc_estimate(&oracle.dictionary, bs, s.fig5_shrink_fraction)?,
                    StructureMode::Sac => {
                        let p = s.blocks_per_signal.min(oracle.structure.n_blocks());
                        let data = gen_block_sparse_data(
                            &oracle.dictionary,
                            &oracle.structure,
                            s.fig5_signals,
                            p,
                            derive_seed(seed, &[1]),
                        )?;
                        let sparsity = (p * bs).min(s.m).min(s.n_atoms);
                        let codes = code_columns(
                            &Omp::new(&oracle.dictionary, sparsity, s.experiment.residual_tolerance)?,
                            data.set.signals(),
                        )?;
                        sac_estimate(&oracle.dictionary, &codes, bs)?
                    }
                    _ => unreachable!("validated"),
                };
                out.push(ResultRow {
                    params: params.clone(),
                    method,
                    trial: Some(t),
                    value: block_recovery_rate(&estimated, &oracle.structure)?,
                });
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;
    Ok(nested.into_iter().flatten().collect())
}

/// Data and initial dictionary for one fig6 trial.
struct Fig6Setup {
    clean: TrainingSet,
    training: TrainingSet,
    init: Dictionary,
}

/// The oracle and clean data come from `data_seed`; noise from `noise_seed`.
/// The KSVD initializer is seeded from `data_seed` so every noise level of a
/// trial starts from the same random atoms.
fn fig6_setup(
    s: &SweepSettings,
    data_seed: u64,
    noise_seed: u64,
    blocks_per_signal: usize,
    snr: Option<f64>,
) -> Result<Fig6Setup> {
    let oracle = gen_oracle_dict(&s.oracle_spec(
        s.oracle_block_size,
        s.oracle_intra_corr,
        derive_seed(data_seed, &[1]),
    ))?;
    let clean = gen_block_sparse_data(
        &oracle.dictionary,
        &oracle.structure,
        s.n_signals,
        blocks_per_signal,
        derive_seed(data_seed, &[2]),
    )?
    .set;
    let training = match snr {
        Some(db) => add_noise_snr(&clean, db, derive_seed(noise_seed, &[3]))?,
        None => clean.clone(),
    };
    let ksvd_sparsity = s
        .ksvd_sparsity
        .unwrap_or_else(|| s.experiment.effective_atom_sparsity())
        .min(s.m)
        .min(s.n_atoms);
    let (init, _, _) = ksvd_train(
        &training,
        s.n_atoms,
        ksvd_sparsity,
        s.ksvd_iterations,
        derive_seed(data_seed, &[4]),
    )?;
    Ok(Fig6Setup { clean, training, init })
}

/// CGC keeps the structure estimated in the first iteration; the other modes
/// re-estimate it every iteration. Re-running CGC on a trained dictionary
/// regroups atoms whose blocks were just orthonormalized.
pub fn default_update_period(method: StructureMode) -> Option<usize> {
    match method {
        StructureMode::Cgc => None,
        _ => Some(1),
    }
}

/// Training config for one method, with its default update period.
pub fn method_config(base: &ExperimentConfig, method: StructureMode, block_size: usize) -> ExperimentConfig {
    ExperimentConfig {
        structure_mode: method,
        max_block_size: block_size,
        structure_update_period: default_update_period(method),
        ..base.clone()
    }
}

fn train_and_score(
    setup: &Fig6Setup,
    cfg: &ExperimentConfig,
    eval_p: usize,
    every_iteration: bool,
) -> Result<Vec<f64>> {
    let mut errors = Vec::new();
    let mut failure = None;
    let last = cfg.outer_iterations;
    let trained = bksvd_train_observed(&setup.training, setup.init.clone(), cfg, |it, d, b| {
        if failure.is_some() || !(every_iteration || it == last) {
            return;
        }
        match reconstruction_error(&setup.clean, d, b, eval_p.min(b.n_blocks())) {
            Ok(e) => errors.push(e),
            Err(e) => failure = Some(e),
        }
    })?;
    if let Some(e) = failure {
        return Err(e);
    }
    if last == 0 {
        let b = &trained.structure;
        errors.push(reconstruction_error(&setup.clean, &trained.dictionary, b, eval_p.min(b.n_blocks()))?);
    }
    Ok(errors)
}

fn fig6(exp: Experiment, s: &SweepSettings) -> Result<Vec<ResultRow>> {
    let master = s.experiment.rng_seed;
    let tag = exp.tag();
    let base = &s.experiment;
    let eval_p = s.eval_block_sparsity;

    let nested: Vec<Vec<ResultRow>> = trials(s)
        .into_par_iter()
        .map(|t| -> Result<Vec<ResultRow>> {
            let trial_seed = derive_seed(master, &[tag, t as u64]);
            let mut out = Vec::new();
            let mut push = |params: Vec<Param>, method, value| {
                out.push(ResultRow {
                    params,
                    method,
                    trial: Some(t),
                    value,
                })
            };
            match exp {
                Experiment::Fig6a => {
                    let setup = fig6_setup(s, trial_seed, trial_seed, s.blocks_per_signal, base.snr_db)?;
                    for &method in &s.methods {
                        let cfg = method_config(base, method, base.max_block_size);
                        for (k, e) in train_and_score(&setup, &cfg, eval_p, true)?.into_iter().enumerate() {
                            push(vec![Param::Int(k + 1)], method, e);
                        }
                    }
                }
                Experiment::Fig6b => {
                    for (si, snr) in s.snr_grid.iter().enumerate() {
                        let noise_seed = derive_seed(trial_seed, &[si as u64]);
                        let setup = fig6_setup(s, trial_seed, noise_seed, s.blocks_per_signal, *snr)?;
                        let param = snr.map_or(Param::Inf, Param::Real);
                        for &method in &s.methods {
                            let cfg = method_config(base, method, base.max_block_size);
                            let e = train_and_score(&setup, &cfg, eval_p, false)?;
                            push(vec![param], method, e[0]);
                        }
                    }
                }
                Experiment::Fig6c => {
                    let setup = fig6_setup(s, trial_seed, trial_seed, s.blocks_per_signal, base.snr_db)?;
                    for &bs in &s.block_size_grid {
                        for &method in &s.methods {
                            let cfg = method_config(base, method, bs);
                            let e = train_and_score(&setup, &cfg, eval_p, false)?;
                            push(vec![Param::Int(bs)], method, e[0]);
                        }
                    }
                }
                Experiment::Fig6d => {
                    for &p in &s.blocks_per_signal_grid {
                        let seed = derive_seed(trial_seed, &[p as u64]);
                        let setup = fig6_setup(s, seed, seed, p, base.snr_db)?;
                        for &method in &s.methods {
                            let cfg = method_config(base, method, base.max_block_size);
                            let e = train_and_score(&setup, &cfg, eval_p, false)?;
                            push(vec![Param::Int(p)], method, e[0]);
                        }
                    }
                }
                Experiment::Fig5 => unreachable!(),
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;
    Ok(nested.into_iter().flatten().collect())
}

/// Five-class (by default) synthetic classification benchmark.
///
/// One oracle dictionary holds `shared_blocks` background blocks followed by
/// `blocks_per_class` blocks for each class. A class-`c` signal sums
/// `class_blocks_per_signal` random blocks of class `c` plus one random
/// background block when there are any (standard-normal weights), then gets
/// white noise at `snr_db`. With the defaults the oracle is the 30×60, size-3
/// dictionary of the reconstruction sweeps with its 20 blocks split evenly
/// over the classes, and each signal sums two blocks of its class.
///
/// Dictionaries are learned on the training split; class templates are the
/// mean training code magnitudes and test codes are scored against them with
/// CDS. Class-pure dictionaries are also scored with the residual and energy
/// rules.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifySettings {
    pub experiment: ExperimentConfig,
    pub m: usize,
    pub n_classes: usize,
    pub blocks_per_class: usize,
    pub shared_blocks: usize,
    pub oracle_block_size: usize,
    pub oracle_intra_corr: f64,
    pub class_blocks_per_signal: usize,
    pub train_per_class: usize,
    pub test_per_class: usize,
    /// Dictionary atoms per class; unsupervised dictionaries get
    /// `n_classes * atoms_per_class` atoms in total.
    pub atoms_per_class: usize,
    pub snr_db: Option<f64>,
    pub ksvd_iterations: usize,
}

impl Default for ClassifySettings {
    fn default() -> Self {
        Self {
            experiment: ExperimentConfig::default(),
            m: 30,
            n_classes: 5,
            blocks_per_class: 4,
            shared_blocks: 0,
            oracle_block_size: 3,
            oracle_intra_corr: 0.68,
            class_blocks_per_signal: 2,
            train_per_class: 200,
            test_per_class: 200,
            atoms_per_class: 12,
            snr_db: None,
            ksvd_iterations: 20,
        }
    }
}

impl ClassifySettings {
    pub fn validate(&self) -> Result<()> {
        self.experiment.validate()?;
        if self.n_classes < 2 {
            return Err(Error::invalid("classification needs at least two classes"));
        }
        if self.blocks_per_class == 0 || self.class_blocks_per_signal == 0 {
            return Err(Error::invalid("classes need at least one block per signal"));
        }
        if self.class_blocks_per_signal > self.blocks_per_class {
            return Err(Error::invalid("class_blocks_per_signal exceeds blocks_per_class"));
        }
        if self.oracle_block_size == 0 || self.atoms_per_class == 0 {
            return Err(Error::invalid("block and dictionary sizes must be positive"));
        }
        if self.train_per_class < self.atoms_per_class || self.test_per_class == 0 {
            return Err(Error::invalid(
                "train_per_class must cover atoms_per_class and test_per_class must be positive",
            ));
        }
        if self.snr_db.is_some_and(f64::is_nan) {
            return Err(Error::invalid("snr_db is NaN"));
        }
        Ok(())
    }

    fn n_atoms(&self) -> usize {
        self.n_classes * self.atoms_per_class
    }
}

/// Dictionary families compared by the benchmark.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum DictionaryKind {
    SupervisedCgc,
    FixedSupervised,
    Cgc,
    Ksvd,
}

impl DictionaryKind {
    pub const ALL: [DictionaryKind; 4] = [
        DictionaryKind::SupervisedCgc,
        DictionaryKind::FixedSupervised,
        DictionaryKind::Cgc,
        DictionaryKind::Ksvd,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            DictionaryKind::SupervisedCgc => "supervised_cgc",
            DictionaryKind::FixedSupervised => "fixed_supervised",
            DictionaryKind::Cgc => "cgc",
            DictionaryKind::Ksvd => "ksvd",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum ScoringRule {
    Cds,
    Residual,
    Energy,
}

impl ScoringRule {
    pub fn as_str(self) -> &'static str {
        match self {
            ScoringRule::Cds => "cds",
            ScoringRule::Residual => "residual",
            ScoringRule::Energy => "energy",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassifyRow {
    /// `None` for the across-trial mean.
    pub trial: Option<usize>,
    pub rule: ScoringRule,
    pub kind: DictionaryKind,
    pub accuracy: f64,
}

#[derive(Debug, Clone)]
pub struct ClassifyResult {
    pub rows: Vec<ClassifyRow>,
}

impl ClassifyResult {
    pub fn mean(&self, rule: ScoringRule, kind: DictionaryKind) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.trial.is_none() && r.rule == rule && r.kind == kind)
            .map(|r| r.accuracy)
    }

    /// Columns: `trial,rule,dictionary_mode,accuracy`; mean rows carry `mean`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("trial,rule,dictionary_mode,accuracy\n");
        for r in &self.rows {
            let trial = r.trial.map_or_else(|| "mean".to_string(), |t| t.to_string());
            let _ = writeln!(out, "{trial},{},{},{}", r.rule.as_str(), r.kind.as_str(), r.accuracy);
        }
        out
    }
}

/// Labelled train/test splits drawn from one class-partitioned oracle.
#[derive(Debug, Clone)]
pub struct ClassData {
    pub oracle: crate::synthetic::OracleDictionary,
    pub train: TrainingSet,
    pub test: TrainingSet,
}

pub fn class_data(s: &ClassifySettings, seed: u64) -> Result<ClassData> {
    s.validate()?;
    let bs = s.oracle_block_size;
    let n_blocks = s.shared_blocks + s.n_classes * s.blocks_per_class;
    let oracle = gen_oracle_dict(&OracleSpec {
        m: s.m,
        n_atoms: n_blocks * bs,
        block_size: bs,
        target_intra_corr: s.oracle_intra_corr,
        seed: derive_seed(seed, &[1]),
    })?;
    let blocks = oracle.structure.blocks();
    let d = oracle.dictionary.atoms();
    let make = |per_class: usize, split: u64| -> Result<TrainingSet> {
        let mut rng = crate::synthetic::rng(derive_seed(seed, &[2, split]));
        let mut y = DMatrix::zeros(s.m, per_class * s.n_classes);
        let mut classes = Vec::with_capacity(y.ncols());
        for c in 0..s.n_classes {
            let own = s.shared_blocks + c * s.blocks_per_class;
            for _ in 0..per_class {
                let col = classes.len();
                let mut chosen: Vec<usize> =
                    rand::seq::index::sample(&mut rng, s.blocks_per_class, s.class_blocks_per_signal)
                        .into_iter()
                        .map(|k| own + k)
                        .collect();
                if s.shared_blocks > 0 {
                    chosen.push(rng.random_range(0..s.shared_blocks));
                }
                for k in chosen {
                    for &a in &blocks[k] {
                        let w: f64 = rng.sample(rand_distr::StandardNormal);
                        y.column_mut(col).axpy(w, &d.column(a), 1.0);
                    }
                }
                classes.push(c + 1);
            }
        }
        let clean = TrainingSet::with_classes(y, classes)?;
        match s.snr_db {
            Some(db) => add_noise_snr(&clean, db, derive_seed(seed, &[3, split])),
            None => Ok(clean),
        }
    };
    let train = make(s.train_per_class, 0)?;
    let test = make(s.test_per_class, 1)?;
    Ok(ClassData { oracle, train, test })
}

/// Dictionary plus how to code with it.
struct Learned {
    kind: DictionaryKind,
    dictionary: Dictionary,
    /// `None` means plain OMP.
    structure: Option<BlockStructure>,
    labels: Option<ClassLabels>,
}

fn learn_all(s: &ClassifySettings, data: &ClassData, seed: u64) -> Result<Vec<Learned>> {
    let cfg = ExperimentConfig {
        rng_seed: seed,
        ..s.experiment.clone()
    };
    let atom_sparsity = cfg.effective_atom_sparsity().min(s.m).min(s.n_atoms());
    let (ksvd, _, _) = ksvd_train(
        &data.train,
        s.n_atoms(),
        atom_sparsity,
        s.ksvd_iterations,
        derive_seed(seed, &[4]),
    )?;
    let mut out = Vec::new();
    for (kind, mode) in [
        (DictionaryKind::SupervisedCgc, StructureMode::SupervisedCgc),
        (DictionaryKind::FixedSupervised, StructureMode::FixedSupervised),
    ] {
        let cfg = method_config(&cfg, mode, cfg.max_block_size);
        let t = supervised_train(&data.train, s.atoms_per_class, &cfg)?;
        out.push(Learned {
            kind,
            dictionary: t.trained.dictionary,
            structure: Some(t.trained.structure),
            labels: Some(t.labels),
        });
    }
    let cgc_cfg = method_config(&cfg, StructureMode::Cgc, cfg.max_block_size);
    let t = bksvd_train(&data.train, ksvd.clone(), &cgc_cfg)?;
    out.push(Learned {
        kind: DictionaryKind::Cgc,
        dictionary: t.dictionary,
        structure: Some(t.structure),
        labels: None,
    });
    out.push(Learned {
        kind: DictionaryKind::Ksvd,
        dictionary: ksvd,
        structure: None,
        labels: None,
    });
    Ok(out)
}

fn labelled(set: &TrainingSet) -> Result<&[usize]> {
    set.classes()
        .ok_or_else(|| Error::invariant("benchmark data without classes"))
}

fn score_dictionary(s: &ClassifySettings, data: &ClassData, l: &Learned) -> Result<Vec<(ScoringRule, f64)>> {
    let cfg = &s.experiment;
    let code = |set: &TrainingSet| -> Result<SparseCodes> {
        match &l.structure {
            Some(b) => {
                let p = cfg.block_sparsity.min(b.n_blocks());
                code_columns(&BlockOmp::new(&l.dictionary, b, p, cfg.residual_tolerance)?, set.signals())
            }
            None => {
                let k = cfg.effective_atom_sparsity().min(s.m).min(l.dictionary.n_atoms());
                code_columns(&Omp::new(&l.dictionary, k, cfg.residual_tolerance)?, set.signals())
            }
        }
    };
    let templates = ClassTemplates::from_codes(&code(&data.train)?, labelled(&data.train)?)?;
    let test_codes = code(&data.test)?;
    let truth = labelled(&data.test)?;
    let decisions = (0..test_codes.n_signals())
        .map(|i| templates.classify(test_codes.coefficients().column(i)))
        .collect::<Result<Vec<_>>>()?;
    let mut out = vec![(ScoringRule::Cds, accuracy(&decisions, truth))];
    if let (Some(b), Some(labels)) = (&l.structure, &l.labels) {
        let p = cfg.block_sparsity.min(b.n_blocks());
        for (rule, class_rule) in [(ScoringRule::Residual, ClassRule::Residual), (ScoringRule::Energy, ClassRule::Energy)] {
            let decisions = data
                .test
                .signals()
                .column_iter()
                .map(|y| classify_signal(&l.dictionary, b, labels, y.as_slice(), p, class_rule))
                .collect::<Result<Vec<_>>>()?;
            out.push((rule, accuracy(&decisions, truth)));
        }
    }
    Ok(out)
}

pub fn classification_benchmark(s: &ClassifySettings) -> Result<ClassifyResult> {
    s.validate()?;
    let tag = Experiment::ALL.len() as u64 + 1;
    let nested: Vec<Vec<ClassifyRow>> = (0..s.experiment.trials)
        .into_par_iter()
        .map(|t| -> Result<Vec<ClassifyRow>> {
            let seed = derive_seed(s.experiment.rng_seed, &[tag, t as u64]);
            let data = class_data(s, seed)?;
            let mut rows = Vec::new();
            for l in learn_all(s, &data, seed)? {
                for (rule, acc) in score_dictionary(s, &data, &l)? {
                    rows.push(ClassifyRow {
                        trial: Some(t),
                        rule,
                        kind: l.kind,
                        accuracy: acc,
                    });
                }
            }
            Ok(rows)
        })
        .collect::<Result<_>>()?;
    let mut rows: Vec<ClassifyRow> = nested.into_iter().flatten().collect();
    let key = |r: &ClassifyRow| (r.rule, r.kind, r.trial.unwrap_or(usize::MAX));
    rows.sort_by_key(key);
    let mut means = Vec::new();
    for chunk in rows.chunk_by(|a, b| (a.rule, a.kind) == (b.rule, b.kind)) {
        means.push(ClassifyRow {
            trial: None,
            rule: chunk[0].rule,
            kind: chunk[0].kind,
            accuracy: chunk.iter().map(|r| r.accuracy).sum::<f64>() / chunk.len() as f64,
        });
    }
    rows.extend(means);
    rows.sort_by_key(key);
    Ok(ClassifyResult { rows })
}

/// Pairs counts of `|corr|` above the threshold for a KSVD dictionary and the
/// CGC block dictionary trained from it, on one seeded default corpus.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoherenceRow {
    pub run: usize,
    pub ksvd_count: usize,
    pub cgc_count: usize,
}

pub fn coherence_reduction(s: &SweepSettings, runs: usize, threshold: f64) -> Result<Vec<CoherenceRow>> {
    s.experiment.validate()?;
    let tag = Experiment::ALL.len() as u64 + 2;
    (0..runs)
        .into_par_iter()
        .map(|run| {
            let seed = derive_seed(s.experiment.rng_seed, &[tag, run as u64]);
            let setup = fig6_setup(s, seed, seed, s.blocks_per_signal, s.experiment.snr_db)?;
            let cfg = method_config(&s.experiment, StructureMode::Cgc, s.experiment.max_block_size);
            let trained = bksvd_train(&setup.training, setup.init.clone(), &cfg)?;
            Ok(CoherenceRow {
                run,
                ksvd_count: count_above(&coherence_profile(&setup.init)?, threshold),
                cgc_count: count_above(&coherence_profile(&trained.dictionary)?, threshold),
            })
        })
        .collect()
}
