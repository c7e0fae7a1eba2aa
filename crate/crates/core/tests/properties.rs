use std::collections::BTreeSet;

use blockdict::analysis::{block_recovery_rate, reconstruction_error};
use blockdict::classify::{cds_score, classify_signal, ClassRule};
use blockdict::coding::{batch_code, bomp, omp};
use blockdict::io::{load_dictionary, save_dictionary};
use blockdict::learning::bksvd_block_update;
use blockdict::structure::{cgc_estimate, cgc_trace, sac_estimate, shrink_schedule, supervised_cgc_estimate};
use blockdict::synthetic::{gaussian_matrix, gen_block_sparse_data, gen_oracle_dict, rng, OracleSpec};
use blockdict::{BlockStructure, ClassLabels, Dictionary, ExperimentConfig, SparseCodes, TrainingSet};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::Rng;

fn random_dict(seed: u64, m: usize, n: usize) -> Dictionary {
    Dictionary::from_unnormalized(gaussian_matrix(&mut rng(seed), m, n)).unwrap()
}

/// Contiguous blocks with sizes drawn from `1..=max`.
fn random_blocks(seed: u64, n: usize, max: usize) -> BlockStructure {
    let mut r = rng(seed);
    let mut assignment = Vec::with_capacity(n);
    let mut id = 0;
    while assignment.len() < n {
        id += 1;
        let size = r.random_range(1..=max).min(n - assignment.len());
        assignment.extend(std::iter::repeat(id).take(size));
    }
    BlockStructure::new(assignment).unwrap()
}

fn partition_of(blocks: &[Vec<usize>]) -> BTreeSet<BTreeSet<usize>> {
    blocks.iter().map(|b| b.iter().copied().collect()).collect()
}

fn is_partition(b: &BlockStructure, n: usize) -> bool {
    let mut seen = vec![false; n];
    for block in b.blocks() {
        for a in block {
            if seen[a] {
                return false;
            }
            seen[a] = true;
        }
    }
    seen.iter().all(|&s| s) && b.is_complete()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn omp_residuals_shrink_and_stay_orthogonal(seed in any::<u64>(), m in 4usize..12, extra in 0usize..8, k in 1usize..6) {
        let n = m + extra;
        let d = random_dict(seed, m, n);
        let y = gaussian_matrix(&mut rng(seed ^ 1), m, 1);
        let k = k.min(m);
        let r = omp(&d, y.as_slice(), k, 0.0).unwrap();
        for w in r.residual_trace.windows(2) {
            prop_assert!(w[1] <= w[0] + 1e-12);
        }
        let res = DVector::from_column_slice(y.as_slice()) - d.atoms() * &r.code;
        prop_assert!((res.norm() - r.residual_norm).abs() <= 1e-8);
        let unique: BTreeSet<usize> = r.selected.iter().copied().collect();
        prop_assert_eq!(unique.len(), r.selected.len());
        // every prefix is an earlier iteration of the same run
        for j in 1..=k {
            let p = omp(&d, y.as_slice(), j, 0.0).unwrap();
            prop_assert_eq!(&p.selected[..], &r.selected[..p.selected.len()]);
            let res = DVector::from_column_slice(y.as_slice()) - d.atoms() * &p.code;
            for &a in &p.selected {
                prop_assert!(d.atom(a).dot(&res).abs() <= 1e-8);
            }
        }
    }

    #[test]
    fn bomp_residuals_shrink(seed in any::<u64>(), m in 4usize..12, p in 1usize..4) {
        let d = random_dict(seed, m, 2 * m);
        let b = random_blocks(seed ^ 2, 2 * m, 3);
        let y = gaussian_matrix(&mut rng(seed ^ 3), m, 1);
        let r = bomp(&d, &b, y.as_slice(), p.min(b.n_blocks()), 0.0).unwrap();
        for w in r.residual_trace.windows(2) {
            prop_assert!(w[1] <= w[0] + 1e-12);
        }
        let res = DVector::from_column_slice(y.as_slice()) - d.atoms() * &r.code;
        prop_assert!((res.norm() - r.residual_norm).abs() <= 1e-8);
        let unique: BTreeSet<usize> = r.selected.iter().copied().collect();
        prop_assert_eq!(unique.len(), r.selected.len());
    }

    #[test]
    fn bomp_exact_on_orthogonal_blocks(seed in any::<u64>(), max_size in 1usize..4, p in 1usize..4) {
        let n = 12;
        let q = gaussian_matrix(&mut rng(seed), 16, 16).qr().q();
        let d = Dictionary::new(q.columns(0, n).into_owned()).unwrap();
        let b = random_blocks(seed ^ 4, n, max_size);
        let mut r = rng(seed ^ 5);
        let p = p.min(b.n_blocks());
        let k = r.random_range(1..=p);
        let mut ids: Vec<usize> = (1..=b.n_blocks()).collect();
        ids.shuffle(&mut r);
        let chosen: BTreeSet<usize> = ids[..k].iter().copied().collect();
        let mut y = DVector::zeros(16);
        for (a, &id) in b.assignment().iter().enumerate() {
            if chosen.contains(&id) {
                let w: f64 = r.random_range(0.5..2.0) * if r.random::<bool>() { 1.0 } else { -1.0 };
                y.axpy(w, &d.atom(a), 1.0);
            }
        }
        let tol = ExperimentConfig::default().residual_tolerance;
        let out = bomp(&d, &b, y.as_slice(), p, tol).unwrap();
        prop_assert!(out.residual_norm <= 1e-10);
        let got: BTreeSet<usize> = out.selected.iter().copied().collect();
        prop_assert_eq!(got, chosen);
    }

    #[test]
    fn coding_and_generation_are_deterministic(seed in any::<u64>()) {
        let spec = OracleSpec { m: 12, n_atoms: 24, block_size: 3, target_intra_corr: 0.7, seed };
        let a = gen_oracle_dict(&spec).unwrap();
        let b = gen_oracle_dict(&spec).unwrap();
        prop_assert_eq!(&a.dictionary, &b.dictionary);
        let da = gen_block_sparse_data(&a.dictionary, &a.structure, 40, 2, seed ^ 6).unwrap();
        let db = gen_block_sparse_data(&b.dictionary, &b.structure, 40, 2, seed ^ 6).unwrap();
        prop_assert_eq!(da.set.signals(), db.set.signals());
        prop_assert_eq!(da.supports, db.supports);
        let cfg = ExperimentConfig { block_sparsity: 2, ..ExperimentConfig::default() };
        let ca = batch_code(&a.dictionary, Some(&a.structure), &da.set, &cfg).unwrap();
        let cb = batch_code(&a.dictionary, Some(&a.structure), &da.set, &cfg).unwrap();
        prop_assert_eq!(ca.coefficients(), cb.coefficients());
    }

    #[test]
    fn block_support_never_exceeds_p(seed in any::<u64>(), p in 1usize..4, max_size in 1usize..5) {
        let d = random_dict(seed, 10, 24);
        let b = random_blocks(seed ^ 7, 24, max_size);
        let set = TrainingSet::new(gaussian_matrix(&mut rng(seed ^ 8), 10, 30)).unwrap();
        let cfg = ExperimentConfig { block_sparsity: p, ..ExperimentConfig::default() };
        let codes = batch_code(&d, Some(&b), &set, &cfg).unwrap();
        prop_assert!(codes.max_block_support(&b) <= p);
    }

    #[test]
    fn cgc_forms_a_valid_greedy_partition(seed in any::<u64>(), n in 2usize..30, bs in 1usize..6, shrink in prop::sample::select(vec![0.0, 0.2, 0.5])) {
        let d = random_dict(seed, 8, n);
        let steps = cgc_trace(&d, bs, shrink).unwrap();
        let b = cgc_estimate(&d, bs, shrink).unwrap();
        prop_assert!(is_partition(&b, n));
        let blocks: Vec<Vec<usize>> = steps.iter().map(|s| s.block.clone()).collect();
        prop_assert_eq!(partition_of(&blocks), b.partition());
        for s in &steps {
            prop_assert!(s.block.len() <= s.size_limit && s.size_limit <= bs);
        }
        for w in steps.windows(2) {
            prop_assert!(w[1].score <= w[0].score + 1e-12);
        }
    }

    #[test]
    fn cgc_is_permutation_equivariant(seed in any::<u64>(), n in 2usize..25, bs in 1usize..5) {
        let d = random_dict(seed, 8, n);
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng(seed ^ 9));
        let permuted = Dictionary::new(DMatrix::from_fn(8, n, |r, c| d.atoms()[(r, order[c])])).unwrap();
        let base = cgc_estimate(&d, bs, 0.0).unwrap().partition();
        let back: BTreeSet<BTreeSet<usize>> = cgc_estimate(&permuted, bs, 0.0)
            .unwrap()
            .blocks()
            .iter()
            .map(|blk| blk.iter().map(|&j| order[j]).collect())
            .collect();
        prop_assert_eq!(back, base);
    }

    #[test]
    fn sac_respects_the_size_cap(seed in any::<u64>(), n in 1usize..20, bs in 1usize..5) {
        let d = random_dict(seed, 6, n);
        let mut r = rng(seed ^ 10);
        let u = DMatrix::from_fn(n, 40, |_, _| if r.random_bool(0.3) { r.random_range(-1.0..1.0) } else { 0.0 });
        let b = sac_estimate(&d, &SparseCodes::new(u).unwrap(), bs).unwrap();
        prop_assert!(is_partition(&b, n));
        prop_assert!(b.max_block_size() <= bs);
        prop_assert!(n - b.n_blocks() < n.max(1));
    }

    #[test]
    fn recovery_rate_ignores_block_ids(seed in any::<u64>(), n in 1usize..30) {
        let est = random_blocks(seed, n, 4);
        let oracle = random_blocks(seed ^ 11, n, 4);
        let rate = block_recovery_rate(&est, &oracle).unwrap();
        let relabel = |b: &BlockStructure, s: u64| {
            let mut blocks = b.blocks();
            blocks.shuffle(&mut rng(s));
            BlockStructure::from_blocks(n, &blocks).unwrap()
        };
        prop_assert_eq!(block_recovery_rate(&relabel(&est, seed ^ 12), &oracle).unwrap(), rate);
        prop_assert_eq!(block_recovery_rate(&est, &relabel(&oracle, seed ^ 13)).unwrap(), rate);
        prop_assert_eq!(block_recovery_rate(&oracle, &oracle).unwrap(), 1.0);
    }

    #[test]
    fn reconstruction_error_ignores_signal_order(seed in any::<u64>(), p in 1usize..4) {
        let d = random_dict(seed, 10, 20);
        let b = random_blocks(seed ^ 14, 20, 3);
        let y = gaussian_matrix(&mut rng(seed ^ 15), 10, 25);
        let mut order: Vec<usize> = (0..25).collect();
        order.shuffle(&mut rng(seed ^ 16));
        let yp = DMatrix::from_fn(10, 25, |r, c| y[(r, order[c])]);
        let p = p.min(b.n_blocks());
        let e = reconstruction_error(&TrainingSet::new(y).unwrap(), &d, &b, p).unwrap();
        let ep = reconstruction_error(&TrainingSet::new(yp).unwrap(), &d, &b, p).unwrap();
        prop_assert!((e - ep).abs() <= 1e-12 * e.max(1.0));
    }

    #[test]
    fn cds_scales(seed in any::<u64>(), alpha in -5.0f64..5.0, beta in -5.0f64..5.0) {
        prop_assume!(alpha.abs() > 1e-3 && beta.abs() > 1e-3);
        let a = gaussian_matrix(&mut rng(seed), 12, 1).column(0).into_owned();
        let b = gaussian_matrix(&mut rng(seed ^ 17), 12, 1).column(0).into_owned();
        let base = cds_score(a.as_view(), b.as_view()).unwrap();
        let scaled = cds_score((&a * alpha).as_view(), (&b * beta).as_view()).unwrap();
        prop_assert!((scaled - (alpha * beta).signum() * base).abs() <= 1e-12);
    }

    #[test]
    fn classification_ignores_block_ids(seed in any::<u64>(), rule in prop::sample::select(vec![ClassRule::Residual, ClassRule::Energy])) {
        let labels = ClassLabels::from_counts(&[6, 6, 6]).unwrap();
        let d = random_dict(seed, 10, 18);
        let b = supervised_cgc_estimate(&d, &labels, 3, 0.0).unwrap();
        let mut blocks = b.blocks();
        blocks.shuffle(&mut rng(seed ^ 18));
        let relabelled = BlockStructure::from_blocks(18, &blocks).unwrap();
        let y = gaussian_matrix(&mut rng(seed ^ 19), 10, 1);
        let first = classify_signal(&d, &b, &labels, y.as_slice(), 2, rule).unwrap();
        prop_assert_eq!(classify_signal(&d, &b, &labels, y.as_slice(), 2, rule).unwrap(), first);
        prop_assert_eq!(classify_signal(&d, &relabelled, &labels, y.as_slice(), 2, rule).unwrap(), first);
    }

    #[test]
    fn save_load_is_identity(seed in any::<u64>(), n in 1usize..20, labelled in any::<bool>()) {
        let d = random_dict(seed, 5, n);
        let b = random_blocks(seed ^ 20, n, 3);
        let labels = labelled.then(|| ClassLabels::from_counts(&[n.div_ceil(2), n / 2].iter().copied().filter(|&c| c > 0).collect::<Vec<_>>()).unwrap());
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.bdk");
        save_dictionary(&path, &d, &b, labels.as_ref()).unwrap();
        let (d2, b2, l2) = load_dictionary(&path).unwrap();
        prop_assert_eq!(d2, d);
        prop_assert_eq!(b2, b);
        prop_assert_eq!(l2, labels);
    }

    #[test]
    fn block_update_invariants(seed in any::<u64>(), max_size in 1usize..4, p in 1usize..3) {
        let d = random_dict(seed, 10, 18);
        let b = random_blocks(seed ^ 21, 18, max_size);
        let set = TrainingSet::new(gaussian_matrix(&mut rng(seed ^ 22), 10, 12)).unwrap();
        let cfg = ExperimentConfig { block_sparsity: p, ..ExperimentConfig::default() };
        let codes = batch_code(&d, Some(&b), &set, &cfg).unwrap();
        let before = (set.signals() - d.atoms() * codes.coefficients()).norm();
        let up = bksvd_block_update(&d, &b, &set, &codes, None).unwrap();
        let after = (set.signals() - up.dictionary.atoms() * up.codes.coefficients()).norm();
        prop_assert!(after <= before + 1e-8);
        prop_assert!((up.residual.norm() - after).abs() <= 1e-8);

        let mut used = 0;
        for (k, block) in b.blocks().iter().enumerate() {
            let cols = DMatrix::from_columns(&block.iter().map(|&a| up.dictionary.atom(a)).collect::<Vec<_>>());
            let gram = cols.transpose() * &cols;
            prop_assert!((gram - DMatrix::identity(block.len(), block.len())).amax() <= 1e-8);
            let users: Vec<usize> = (0..set.len())
                .filter(|&i| block.iter().any(|&a| codes.coefficients()[(a, i)] != 0.0))
                .collect();
            if users.is_empty() {
                prop_assert!(up.reseeded.contains(&(k + 1)));
            } else {
                used += 1;
            }
            for i in 0..set.len() {
                if !users.contains(&i) {
                    for &a in block {
                        prop_assert_eq!(up.codes.coefficients()[(a, i)], 0.0);
                    }
                }
            }
        }
        prop_assert_eq!(up.svd_calls, used);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn supervised_blocks_are_class_pure(seed in any::<u64>(), counts in prop::collection::vec(1usize..7, 1..5), bs in 1usize..5, shrink in prop::sample::select(vec![0.0, 0.2, 0.5])) {
        let labels = ClassLabels::from_counts(&counts).unwrap();
        let d = random_dict(seed, 6, labels.n_atoms());
        let b = supervised_cgc_estimate(&d, &labels, bs, shrink).unwrap();
        prop_assert!(is_partition(&b, labels.n_atoms()));
        for block in b.blocks() {
            let c = labels.labels()[block[0]];
            prop_assert!(block.iter().all(|&a| labels.labels()[a] == c));
            prop_assert!(block.len() <= bs);
        }
    }
}

/// Independent statement of the banding rule: with `T = ceil(f n)`, band
/// `k = 1..b-1` covers `((b-1-k) T / (b-1), (b-k) T / (b-1)]` and has size `b - k`.
fn banded_size(n_alive: usize, n_total: usize, base: usize, num: usize, den: usize) -> usize {
    let t = (num * n_total).div_ceil(den);
    if base <= 1 || n_alive > t {
        return base;
    }
    let steps = base - 1;
    for k in 1..=steps {
        let lower = (steps - k) * t;
        let upper = (steps + 1 - k) * t;
        let x = n_alive * steps;
        if lower < x && x <= upper {
            return base - k;
        }
    }
    unreachable!("n_alive {n_alive} outside (0, {t}]")
}

#[test]
fn shrink_schedule_matches_banding_exhaustively() {
    let fractions = [(0, 1), (1, 10), (1, 5), (1, 4), (1, 3), (1, 2), (3, 4), (9, 10)];
    for n_total in 1..=200 {
        for base in 1..=6 {
            for &(num, den) in &fractions {
                let f = num as f64 / den as f64;
                for n_alive in 1..=n_total {
                    assert_eq!(
                        shrink_schedule(n_alive, n_total, base, f),
                        banded_size(n_alive, n_total, base, num, den),
                        "n_alive {n_alive} n_total {n_total} base {base} fraction {num}/{den}"
                    );
                }
            }
        }
    }
}
