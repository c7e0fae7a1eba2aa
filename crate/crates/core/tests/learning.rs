use blockdict::analysis::{block_recovery_rate, relative_error};
use blockdict::coding::{bomp, code_columns, BlockOmp};
use blockdict::experiments::{class_data, ClassifySettings};
use blockdict::learning::{
    bksvd_block_update, bksvd_train, ksvd_refine, ksvd_train, init_from_signals, supervised_init,
    supervised_train, supervised_train_from,
};
use blockdict::structure::cgc_estimate;
use blockdict::synthetic::{add_noise_snr, gaussian_matrix, gen_block_sparse_data, gen_oracle_dict, rng, OracleSpec};
use blockdict::{BlockStructure, ClassLabels, Dictionary, ExperimentConfig, StructureMode, TrainingSet};
use nalgebra::DMatrix;

fn corpus(seed: u64, n: usize) -> (blockdict::synthetic::OracleDictionary, TrainingSet) {
    let oracle = gen_oracle_dict(&OracleSpec { seed, ..OracleSpec::default() }).unwrap();
    let data = gen_block_sparse_data(&oracle.dictionary, &oracle.structure, n, 2, seed + 1).unwrap();
    (oracle, data.set)
}

fn max_intra_block_corr(d: &Dictionary, b: &BlockStructure) -> f64 {
    let g = d.gram();
    let mut worst: f64 = 0.0;
    for block in b.blocks() {
        for (i, &x) in block.iter().enumerate() {
            for &y in &block[i + 1..] {
                worst = worst.max(g[(x, y)].abs());
            }
        }
    }
    worst
}

#[test]
fn cgc_recovers_high_correlation_oracle() {
    for seed in 0..5 {
        let oracle = gen_oracle_dict(&OracleSpec {
            target_intra_corr: 0.9,
            seed,
            ..OracleSpec::default()
        })
        .unwrap();
        let est = cgc_estimate(&oracle.dictionary, 3, 0.0).unwrap();
        assert_eq!(est.partition(), oracle.structure.partition(), "seed {seed}");
        assert_eq!(block_recovery_rate(&est, &oracle.structure).unwrap(), 1.0);
    }
}

#[test]
fn block_update_sweep_does_not_increase_error() {
    let (oracle, clean) = corpus(2, 2000);
    let noisy = add_noise_snr(&clean, 20.0, 9).unwrap();
    let coder = BlockOmp::new(&oracle.dictionary, &oracle.structure, 2, 0.0).unwrap();
    let codes = code_columns(&coder, noisy.signals()).unwrap();
    let before = relative_error(noisy.signals(), &oracle.dictionary, &codes);

    let up = bksvd_block_update(&oracle.dictionary, &oracle.structure, &noisy, &codes, None).unwrap();
    let after = relative_error(noisy.signals(), &up.dictionary, &up.codes);
    assert!(after <= before + 1e-12, "{after} > {before}");
    assert!((up.residual.norm() / noisy.signals().norm() - after).abs() < 1e-12);
    assert_eq!(up.svd_calls, oracle.structure.n_blocks());
    assert!(up.reseeded.is_empty());
    assert!(max_intra_block_corr(&up.dictionary, &oracle.structure) < 1e-8);
}

#[test]
fn ksvd_improves_on_its_initialization() {
    let (_, set) = corpus(4, 5000);
    let d0 = init_from_signals(set.signals(), 60, 11).unwrap();
    let (d0, codes0, _) = ksvd_refine(&set, d0, 6, 0).unwrap();
    let init_err = relative_error(set.signals(), &d0, &codes0);
    let (d, codes, report) = ksvd_train(&set, 60, 6, 3, 11).unwrap();
    let err = relative_error(set.signals(), &d, &codes);
    assert!(err < init_err, "{err} vs {init_err}");
    assert!((report.final_error().unwrap() - err).abs() < 1e-12);
}

#[test]
fn single_class_supervised_cgc_matches_cgc() {
    let (_, set) = corpus(6, 300);
    let cfg = ExperimentConfig {
        outer_iterations: 3,
        ..ExperimentConfig::default()
    };
    let labelled = TrainingSet::with_classes(set.signals().clone(), vec![1; set.len()]).unwrap();
    let (d0, labels) = supervised_init(&labelled, 24, &cfg).unwrap();
    let sup = supervised_train_from(
        &labelled,
        d0.clone(),
        &labels,
        &ExperimentConfig {
            structure_mode: StructureMode::SupervisedCgc,
            ..cfg.clone()
        },
    )
    .unwrap();
    let plain = bksvd_train(&set, d0, &cfg).unwrap();
    assert_eq!(sup.structure, plain.structure);
    assert_eq!(sup.dictionary, plain.dictionary);
    assert_eq!(sup.report.rel_errors, plain.report.rel_errors);
}

/// Two classes, each generated from its own block dictionary living in one
/// half of the coordinates.
fn orthogonal_classes() -> TrainingSet {
    let m = 20;
    let per_class = 200;
    let mut signals = DMatrix::zeros(m, 2 * per_class);
    let mut classes = Vec::new();
    for c in 0..2 {
        let mut atoms = DMatrix::zeros(m, 12);
        let sub = gaussian_matrix(&mut rng(40 + c as u64), 10, 12);
        atoms.view_mut((10 * c, 0), (10, 12)).copy_from(&sub);
        let d = Dictionary::from_unnormalized(atoms).unwrap();
        let b = BlockStructure::contiguous(12, 3);
        let data = gen_block_sparse_data(&d, &b, per_class, 2, 50 + c as u64).unwrap();
        signals
            .columns_mut(c * per_class, per_class)
            .copy_from(data.set.signals());
        classes.extend(std::iter::repeat(c + 1).take(per_class));
    }
    TrainingSet::with_classes(signals, classes).unwrap()
}

fn class_energy_fraction(d: &Dictionary, b: &BlockStructure, labels: &ClassLabels, set: &TrainingSet) -> Vec<f64> {
    let classes = set.classes().unwrap();
    let mut own = vec![0.0; 2];
    let mut total = vec![0.0; 2];
    for i in 0..set.len() {
        let code = bomp(d, b, set.signal(i).as_slice().to_vec().as_slice(), 2, 0.0).unwrap().code;
        let k = classes[i];
        for a in 0..code.len() {
            let e = code[a] * code[a];
            total[k - 1] += e;
            if labels.labels()[a] == k {
                own[k - 1] += e;
            }
        }
    }
    own.iter().zip(&total).map(|(o, t)| o / t).collect()
}

#[test]
fn supervised_training_keeps_energy_on_own_class() {
    let set = orthogonal_classes();
    let cfg = ExperimentConfig {
        structure_mode: StructureMode::SupervisedCgc,
        block_sparsity: 2,
        outer_iterations: 5,
        ..ExperimentConfig::default()
    };
    let out = supervised_train(&set, 12, &cfg).unwrap();
    let fractions = class_energy_fraction(
        &out.trained.dictionary,
        &out.trained.structure,
        &out.labels,
        &set,
    );
    for (k, f) in fractions.iter().enumerate() {
        assert!(*f >= 0.9, "class {}: {f}", k + 1);
    }
}

fn is_class_pure(b: &BlockStructure, labels: &ClassLabels) -> bool {
    b.blocks()
        .iter()
        .all(|blk| blk.iter().all(|&a| labels.labels()[a] == labels.labels()[blk[0]]))
}

#[test]
fn supervised_cgc_not_worse_than_fixed_blocks() {
    let s = ClassifySettings::default();
    let data = class_data(&s, 21).unwrap();
    // same blocks-per-atom budget for both; only the grouping differs
    let cfg = ExperimentConfig {
        block_sparsity: 2,
        shrink_fraction: 0.0,
        structure_update_period: None,
        ..s.experiment.clone()
    };
    let (d0, labels) = supervised_init(&data.train, s.atoms_per_class, &cfg).unwrap();
    let run = |mode| {
        supervised_train_from(
            &data.train,
            d0.clone(),
            &labels,
            &ExperimentConfig {
                structure_mode: mode,
                ..cfg.clone()
            },
        )
        .unwrap()
    };
    let cgc = run(StructureMode::SupervisedCgc);
    let fixed = run(StructureMode::FixedSupervised);
    assert!(is_class_pure(&cgc.structure, &labels));
    assert!(is_class_pure(&fixed.structure, &labels));
    let (e_cgc, e_fixed) = (cgc.report.final_error().unwrap(), fixed.report.final_error().unwrap());
    assert!(e_cgc <= e_fixed, "supervised_cgc {e_cgc} > fixed_supervised {e_fixed}");
}
