use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use blockdict::analysis::{block_coherence_stats, coherence_profile, count_above, relative_error};
use blockdict::coding::{code_columns, BlockOmp, Omp};
use blockdict::experiments::{self, class_data, classification_benchmark, coherence_reduction, Experiment};
use blockdict::io::{load_dictionary, load_training_set, save_dictionary, save_training_set};
use blockdict::learning::{bksvd_train_observed, ksvd_train, supervised_init, supervised_train_from};
use blockdict::synthetic::{add_noise_snr, derive_seed, gen_block_sparse_data, gen_oracle_dict, realized_snr_db};
use blockdict::{BlockStructure, StructureMode};

use crate::config::RunConfig;
use crate::Failure;

type Outcome = Result<(), Failure>;

fn write(path: &Path, text: &str) -> Result<(), Failure> {
    fs::write(path, text)
        .with_context(|| format!("cannot write {}", path.display()))
        .map_err(Failure::data)
}

fn out_dir(dir: &Path) -> Result<(), Failure> {
    fs::create_dir_all(dir)
        .with_context(|| format!("cannot create {}", dir.display()))
        .map_err(Failure::data)
}

pub fn gen(cfg: &RunConfig, out: &Path) -> Outcome {
    let exp = cfg.experiment().map_err(Failure::config)?;
    out_dir(out)?;
    if cfg.labeled.unwrap_or(false) {
        let settings = cfg.classify().map_err(Failure::config)?;
        let data = class_data(&settings, derive_seed(exp.rng_seed, &[1])).map_err(Failure::run)?;
        save_dictionary(&out.join("oracle.bdk"), &data.oracle.dictionary, &data.oracle.structure, None)
            .map_err(Failure::run)?;
        save_training_set(&out.join("signals.bdk"), &data.train).map_err(Failure::run)?;
        save_training_set(&out.join("test.bdk"), &data.test).map_err(Failure::run)?;
        print_oracle_stats(&data.oracle)?;
        println!(
            "wrote {} training and {} test signals over {} classes",
            data.train.len(),
            data.test.len(),
            settings.n_classes
        );
        return Ok(());
    }
    let spec = cfg.oracle_spec().map_err(Failure::config)?;
    let oracle = gen_oracle_dict(&spec).map_err(Failure::run)?;
    let data = gen_block_sparse_data(
        &oracle.dictionary,
        &oracle.structure,
        cfg.n_signals(),
        cfg.blocks_per_signal(),
        derive_seed(exp.rng_seed, &[2]),
    )
    .map_err(Failure::run)?;
    save_dictionary(&out.join("oracle.bdk"), &oracle.dictionary, &oracle.structure, None).map_err(Failure::run)?;
    save_training_set(&out.join("clean.bdk"), &data.set).map_err(Failure::run)?;
    let mut supports = String::from("signal,blocks\n");
    for (i, s) in data.supports.iter().enumerate() {
        let ids: Vec<String> = s.iter().map(usize::to_string).collect();
        let _ = writeln!(supports, "{i},{}", ids.join(" "));
    }
    write(&out.join("supports.csv"), &supports)?;
    let training = match exp.snr_db {
        Some(db) => {
            let noisy = add_noise_snr(&data.set, db, derive_seed(exp.rng_seed, &[3])).map_err(Failure::run)?;
            println!("realized snr_db {}", realized_snr_db(&data.set, &noisy));
            noisy
        }
        None => data.set,
    };
    save_training_set(&out.join("signals.bdk"), &training).map_err(Failure::run)?;
    print_oracle_stats(&oracle)?;
    println!("wrote {} signals of dimension {}", training.len(), training.dim());
    Ok(())
}

fn print_oracle_stats(oracle: &blockdict::synthetic::OracleDictionary) -> Outcome {
    let stats = block_coherence_stats(&oracle.dictionary, &oracle.structure).map_err(Failure::run)?;
    println!("intra_block_corr_mean {}", stats.intra_mean);
    println!("inter_block_corr_mean {}", stats.inter_mean);
    println!("inter_block_corr_top20_mean {}", stats.inter_top20_mean);
    println!("inter_block_corr_max {}", stats.inter_max);
    Ok(())
}

pub fn train(cfg: &RunConfig, data: &Path, init: Option<&Path>, out: &Path) -> Outcome {
    let exp = cfg.experiment().map_err(Failure::config)?;
    let signals = load_training_set(data).map_err(Failure::run)?;
    if signals.dim() != cfg.m {
        return Err(Failure::data(anyhow!(
            "{} has dimension {}, config says m = {}",
            data.display(),
            signals.dim(),
            cfg.m
        )));
    }
    let initial = init.map(load_dictionary).transpose().map_err(Failure::run)?;
    out_dir(out)?;
    let supervised = matches!(
        exp.structure_mode,
        StructureMode::SupervisedCgc | StructureMode::FixedSupervised
    );
    let (trained, labels) = if supervised {
        let (d0, labels) = match initial {
            Some((d, _, Some(l))) => (d, l),
            Some(_) => {
                return Err(Failure::data(anyhow!(
                    "supervised training needs an initial dictionary with class labels"
                )))
            }
            None => {
                let settings = cfg.classify().map_err(Failure::config)?;
                supervised_init(&signals, settings.atoms_per_class, &exp).map_err(Failure::run)?
            }
        };
        let t = supervised_train_from(&signals, d0, &labels, &exp).map_err(Failure::run)?;
        (t, Some(labels))
    } else {
        let d0 = match initial {
            Some((d, _, _)) => d,
            None => {
                let n_atoms = cfg.n_atoms.unwrap_or(experiments::SweepSettings::default().n_atoms);
                let sparsity = cfg
                    .ksvd_sparsity
                    .unwrap_or_else(|| exp.effective_atom_sparsity())
                    .min(signals.dim())
                    .min(n_atoms);
                ksvd_train(&signals, n_atoms, sparsity, cfg.ksvd_iterations(), derive_seed(exp.rng_seed, &[4]))
                    .map_err(Failure::run)?
                    .0
            }
        };
        save_dictionary(&out.join("init.bdk"), &d0, &BlockStructure::unassigned(d0.n_atoms()), None)
            .map_err(Failure::run)?;
        let t = bksvd_train_observed(&signals, d0, &exp, |_, _, _| {}).map_err(Failure::run)?;
        (t, None)
    };
    save_dictionary(
        &out.join("dictionary.bdk"),
        &trained.dictionary,
        &trained.structure,
        labels.as_ref(),
    )
    .map_err(Failure::run)?;
    let lines = trained.report.to_json_lines();
    write(&out.join("report.jsonl"), &lines)?;
    print!("{lines}");
    Ok(())
}

fn is_unstructured(b: &BlockStructure) -> bool {
    b.assignment().iter().all(|&id| id == 0)
}

pub fn code(cfg: &RunConfig, dict: &Path, data: &Path, out: &Path) -> Outcome {
    let exp = cfg.experiment().map_err(Failure::config)?;
    let (d, b, _) = load_dictionary(dict).map_err(Failure::run)?;
    let signals = load_training_set(data).map_err(Failure::run)?;
    if signals.dim() != d.dim() {
        return Err(Failure::data(anyhow!(
            "signals have dimension {}, dictionary {}",
            signals.dim(),
            d.dim()
        )));
    }
    let codes = if is_unstructured(&b) {
        let k = exp.effective_atom_sparsity().min(d.dim()).min(d.n_atoms());
        code_columns(&Omp::new(&d, k, exp.residual_tolerance).map_err(Failure::config)?, signals.signals())
    } else {
        let p = exp.block_sparsity.min(b.n_blocks());
        let coder = BlockOmp::new(&d, &b, p, exp.residual_tolerance).map_err(Failure::data_err)?;
        code_columns(&coder, signals.signals())
    }
    .map_err(Failure::run)?;
    out_dir(out)?;
    let mut csv = String::from("signal,atom,value\n");
    let u = codes.coefficients();
    for j in 0..u.ncols() {
        for i in 0..u.nrows() {
            if u[(i, j)] != 0.0 {
                let _ = writeln!(csv, "{j},{i},{}", u[(i, j)]);
            }
        }
    }
    write(&out.join("codes.csv"), &csv)?;
    println!("rel_error {}", relative_error(signals.signals(), &d, &codes));
    Ok(())
}

pub fn analyze(dicts: &[PathBuf], threshold: f64, out: &Path) -> Outcome {
    if dicts.is_empty() || dicts.len() > 2 {
        return Err(Failure::config(anyhow!("analyze takes one or two dictionary files")));
    }
    let mut profiles = Vec::new();
    for p in dicts {
        let (d, _, _) = load_dictionary(p).map_err(Failure::run)?;
        profiles.push(coherence_profile(&d).map_err(Failure::data_err)?);
    }
    out_dir(out)?;
    let mut csv = String::from("rank");
    for i in 1..=profiles.len() {
        let _ = write!(csv, ",dict{i}");
    }
    csv.push('\n');
    let rows = profiles.iter().map(Vec::len).max().unwrap_or(0);
    for r in 0..rows {
        let _ = write!(csv, "{}", r + 1);
        for p in &profiles {
            match p.get(r) {
                Some(v) => {
                    let _ = write!(csv, ",{v}");
                }
                None => csv.push(','),
            }
        }
        csv.push('\n');
    }
    write(&out.join("coherence.csv"), &csv)?;
    let mut counts = String::from("dictionary,path,pairs,threshold,count_above\n");
    for (i, (p, prof)) in dicts.iter().zip(&profiles).enumerate() {
        let n = count_above(prof, threshold);
        let _ = writeln!(counts, "dict{},{},{},{threshold},{n}", i + 1, p.display(), prof.len());
        println!("dict{} pairs_above_{threshold} {n}", i + 1);
    }
    write(&out.join("coherence_counts.csv"), &counts)
}

/// `exp` targets: the five figure sweeps plus `coherence`.
pub fn exp(cfg: &RunConfig, name: &str, out: &Path) -> Outcome {
    let settings = cfg.sweep().map_err(Failure::config)?;
    out_dir(out)?;
    if name == "coherence" {
        let threshold = cfg.coherence_threshold();
        let rows = coherence_reduction(&settings, cfg.coherence_runs(), threshold).map_err(Failure::run)?;
        let mut csv = String::from("experiment_id,run,threshold,ksvd_count,cgc_count\n");
        for r in &rows {
            let _ = writeln!(csv, "coherence,{},{threshold},{},{}", r.run, r.ksvd_count, r.cgc_count);
        }
        return write(&out.join("coherence.csv"), &csv);
    }
    let which: Experiment = name.parse().map_err(|e| Failure::config(anyhow!("{e}")))?;
    settings.validate(which).map_err(Failure::config)?;
    let result = experiments::run(which, &settings).map_err(Failure::run)?;
    write(&out.join(format!("{}.csv", which.id())), &result.to_csv())?;
    for r in result.means() {
        let params: Vec<String> = r.params.iter().map(ToString::to_string).collect();
        println!("{} {} {} {}", which.id(), params.join(" "), r.method, r.value);
    }
    Ok(())
}

pub fn classify(cfg: &RunConfig, out: &Path) -> Outcome {
    let settings = cfg.classify().map_err(Failure::config)?;
    out_dir(out)?;
    let result = classification_benchmark(&settings).map_err(Failure::run)?;
    write(&out.join("classify.csv"), &result.to_csv())?;
    for r in result.rows.iter().filter(|r| r.trial.is_none()) {
        println!("{} {} {}", r.rule.as_str(), r.kind.as_str(), r.accuracy);
    }
    Ok(())
}

pub fn require_config(path: Option<&Path>) -> Result<RunConfig, Failure> {
    let Some(path) = path else {
        return Err(Failure::config(anyhow!("--config PATH is required")));
    };
    RunConfig::load(path).map_err(Failure::config)
}
