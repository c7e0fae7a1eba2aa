use blockdict::coding::{batch_code, bomp, omp};
use blockdict::synthetic::{gaussian_matrix, gen_oracle_dict, rng, OracleSpec};
use blockdict::{BlockStructure, Dictionary, ExperimentConfig, TrainingSet};
use nalgebra::{DMatrix, DVector};

fn lstsq_residual(a: &DMatrix<f64>, y: &DVector<f64>) -> (f64, DVector<f64>) {
    let x = a.clone().svd(true, true).solve(y, 1e-12).unwrap();
    ((y - a * &x).norm(), x)
}

fn coherence(d: &DMatrix<f64>) -> f64 {
    let g = d.transpose() * d;
    let mut mu: f64 = 0.0;
    for i in 0..g.nrows() {
        for j in i + 1..g.ncols() {
            mu = mu.max(g[(i, j)].abs());
        }
    }
    mu
}

/// Low-coherence frame: projected gradient descent on the sphere for the
/// potential `sum_{i<j} g_ij^16`, which approximates the max `|g_ij|`.
fn low_coherence_frame(m: usize, n: usize, target: f64, seed: u64) -> DMatrix<f64> {
    let mut d = gaussian_matrix(&mut rng(seed), m, n);
    for mut c in d.column_iter_mut() {
        c.normalize_mut();
    }
    for _ in 0..20_000 {
        let mu = coherence(&d);
        if mu < target {
            break;
        }
        let g = d.transpose() * &d;
        let mut w = g.map(|x| (x / mu).powi(15));
        w.fill_diagonal(0.0);
        d -= (&d * w) * 0.01;
        for mut c in d.column_iter_mut() {
            c.normalize_mut();
        }
    }
    d
}

#[test]
fn omp_recovers_two_atoms_in_low_coherence_frame() {
    let atoms = low_coherence_frame(8, 16, 0.3, 17);
    assert!(coherence(&atoms) < 0.3, "frame coherence {}", coherence(&atoms));
    let d = Dictionary::new(atoms.clone()).unwrap();
    let y: DVector<f64> = atoms.column(0) * 2.0 - atoms.column(4);

    // exhaustive search: {0, 4} must be the only exact 2-atom support
    let mut exact = Vec::new();
    for i in 0..16 {
        for j in i + 1..16 {
            let a = DMatrix::from_columns(&[atoms.column(i), atoms.column(j)]);
            if lstsq_residual(&a, &y).0 < 1e-8 {
                exact.push((i, j));
            }
        }
    }
    assert_eq!(exact, vec![(0, 4)]);

    let r = omp(&d, y.as_slice(), 2, 0.0).unwrap();
    let mut sel = r.selected.clone();
    sel.sort_unstable();
    assert_eq!(sel, vec![0, 4]);
    assert!((r.code[0] - 2.0).abs() < 1e-8);
    assert!((r.code[4] + 1.0).abs() < 1e-8);
    assert!(r.residual_norm < 1e-8);
}

#[test]
fn bomp_finds_generating_block_pair() {
    let oracle = gen_oracle_dict(&OracleSpec::default()).unwrap();
    let atoms = oracle.dictionary.atoms();
    let blocks = oracle.structure.blocks();
    let w = gaussian_matrix(&mut rng(3), 6, 1);
    let mut y = DVector::zeros(30);
    for (k, &a) in blocks[3].iter().chain(&blocks[8]).enumerate() {
        y += atoms.column(a) * w[k];
    }

    let mut exact = Vec::new();
    for i in 0..blocks.len() {
        for j in i + 1..blocks.len() {
            let cols: Vec<_> = blocks[i].iter().chain(&blocks[j]).map(|&a| atoms.column(a)).collect();
            if lstsq_residual(&DMatrix::from_columns(&cols), &y).0 < 1e-8 {
                exact.push((i + 1, j + 1));
            }
        }
    }
    assert_eq!(exact, vec![(4, 9)]);

    let r = bomp(&oracle.dictionary, &oracle.structure, y.as_slice(), 2, 0.0).unwrap();
    let mut sel = r.selected.clone();
    sel.sort_unstable();
    assert_eq!(sel, vec![4, 9]);
    assert!(r.residual_norm < 1e-8);
}

#[test]
fn batch_equals_loop_bitwise() {
    let d = Dictionary::from_unnormalized(gaussian_matrix(&mut rng(5), 12, 24)).unwrap();
    let b = BlockStructure::contiguous(24, 3);
    let y = gaussian_matrix(&mut rng(6), 12, 100);
    let set = TrainingSet::new(y.clone()).unwrap();
    let cfg = ExperimentConfig {
        block_sparsity: 2,
        atom_sparsity: Some(4),
        ..ExperimentConfig::default()
    };

    let unstructured = batch_code(&d, None, &set, &cfg).unwrap();
    let blocked = batch_code(&d, Some(&b), &set, &cfg).unwrap();
    for i in 0..100 {
        let col = y.column(i);
        let o = omp(&d, col.as_slice(), 4, cfg.residual_tolerance).unwrap();
        let bo = bomp(&d, &b, col.as_slice(), 2, cfg.residual_tolerance).unwrap();
        let got_o = unstructured.column(i);
        let got_b = blocked.column(i);
        for k in 0..24 {
            assert_eq!(got_o[k].to_bits(), o.code[k].to_bits());
            assert_eq!(got_b[k].to_bits(), bo.code[k].to_bits());
        }
    }
}
