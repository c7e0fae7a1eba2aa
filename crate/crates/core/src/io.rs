//! Dictionary and dataset files.
//!
//! Binary layout (`.bdkt`, little-endian):
//!
//! ```text
//! "BDKT1"                      5 bytes
//! m                            u32
//! n_a                          u32
//! has_labels                   u8
//! assignment                   n_a x i32
//! labels (if has_labels)       n_a x i32
//! atoms                        m*n_a x f64, column-major
//! ```
//!
//! A `.json` file carries the same fields: `m`, `n_a`, `assignment`,
//! `labels` (or `null`) and `atoms` as an array of columns.
//!
//! Training sets reuse the container: columns are signals, the assignment is
//! all zeros and the labels hold the per-signal class ids.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{BlockStructure, ClassLabels, Dictionary, TrainingSet};

pub const MAGIC: &[u8; 5] = b"BDKT1";

/// Raw contents of a container file, before any domain validation.
#[derive(Debug, Clone, PartialEq)]
pub struct MatrixFile {
    pub matrix: DMatrix<f64>,
    pub assignment: Vec<i32>,
    pub labels: Option<Vec<i32>>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct JsonContainer {
    m: u32,
    n_a: u32,
    assignment: Vec<i32>,
    #[serde(default)]
    labels: Option<Vec<i32>>,
    atoms: Vec<Vec<f64>>,
}

fn is_json(path: &Path) -> bool {
    path.extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("json"))
}

fn format_err(path: &Path, message: impl Into<String>) -> Error {
    Error::Format {
        path: path.to_path_buf(),
        message: message.into(),
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

pub fn write_container(path: &Path, file: &MatrixFile) -> Result<()> {
    let (m, n) = file.matrix.shape();
    if file.assignment.len() != n || file.labels.as_ref().is_some_and(|l| l.len() != n) {
        return Err(Error::dim("per-column vectors do not match the column count"));
    }
    let m32 = u32::try_from(m).map_err(|_| format_err(path, "dimension overflow"))?;
    let n32 = u32::try_from(n).map_err(|_| format_err(path, "dimension overflow"))?;

    if is_json(path) {
        let doc = JsonContainer {
            m: m32,
            n_a: n32,
            assignment: file.assignment.clone(),
            labels: file.labels.clone(),
            atoms: file
                .matrix
                .column_iter()
                .map(|c| c.iter().copied().collect())
                .collect(),
        };
        let text = serde_json::to_string(&doc).map_err(|e| format_err(path, e.to_string()))?;
        return fs::write(path, text).map_err(io_err(path));
    }

    let f = fs::File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(f);
    let mut put = |bytes: &[u8]| w.write_all(bytes).map_err(io_err(path));
    put(MAGIC)?;
    put(&m32.to_le_bytes())?;
    put(&n32.to_le_bytes())?;
    put(&[u8::from(file.labels.is_some())])?;
    for v in &file.assignment {
        put(&v.to_le_bytes())?;
    }
    if let Some(labels) = &file.labels {
        for v in labels {
            put(&v.to_le_bytes())?;
        }
    }
    for v in file.matrix.iter() {
        put(&v.to_le_bytes())?;
    }
    w.flush().map_err(io_err(path))
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| format_err(self.path, "truncated file"))?;
        let out = &self.buf[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn i32s(&mut self, n: usize) -> Result<Vec<i32>> {
        let bytes = self.take(n.checked_mul(4).ok_or_else(|| format_err(self.path, "dimension overflow"))?)?;
        Ok(bytes
            .chunks_exact(4)
            .map(|c| i32::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}

pub fn read_container(path: &Path) -> Result<MatrixFile> {
    if is_json(path) {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        let doc: JsonContainer =
            serde_json::from_str(&text).map_err(|e| format_err(path, e.to_string()))?;
        let (m, n) = (doc.m as usize, doc.n_a as usize);
        if doc.atoms.len() != n || doc.atoms.iter().any(|c| c.len() != m) {
            return Err(format_err(path, "atoms do not match m x n_a"));
        }
        if doc.assignment.len() != n || doc.labels.as_ref().is_some_and(|l| l.len() != n) {
            return Err(format_err(path, "per-atom vectors do not match n_a"));
        }
        let matrix = DMatrix::from_fn(m, n, |r, c| doc.atoms[c][r]);
        return Ok(MatrixFile {
            matrix,
            assignment: doc.assignment,
            labels: doc.labels,
        });
    }

    let buf = fs::read(path).map_err(io_err(path))?;
    let mut r = Reader {
        buf: &buf,
        pos: 0,
        path,
    };
    if r.take(MAGIC.len()).ok() != Some(&MAGIC[..]) {
        return Err(format_err(path, "bad magic"));
    }
    let m = r.u32()? as usize;
    let n = r.u32()? as usize;
    let has_labels = match r.take(1)?[0] {
        0 => false,
        1 => true,
        v => return Err(format_err(path, format!("bad has_labels flag {v}"))),
    };
    let assignment = r.i32s(n)?;
    let labels = if has_labels { Some(r.i32s(n)?) } else { None };
    let count = m
        .checked_mul(n)
        .and_then(|c| c.checked_mul(8))
        .ok_or_else(|| format_err(path, "dimension overflow"))?;
    let bytes = r.take(count)?;
    if r.pos != buf.len() {
        return Err(format_err(path, "trailing bytes"));
    }
    let values: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok(MatrixFile {
        matrix: DMatrix::from_vec(m, n, values),
        assignment,
        labels,
    })
}

fn to_i32(values: &[usize], path: &Path) -> Result<Vec<i32>> {
    values
        .iter()
        .map(|&v| i32::try_from(v).map_err(|_| format_err(path, "id overflow")))
        .collect()
}

fn to_usize(values: &[i32], what: &str, path: &Path) -> Result<Vec<usize>> {
    values
        .iter()
        .map(|&v| usize::try_from(v).map_err(|_| format_err(path, format!("negative {what}"))))
        .collect()
}

fn with_path(path: &Path) -> impl FnOnce(Error) -> Error {
    let path: PathBuf = path.to_path_buf();
    move |e| match e {
        Error::Invariant(message) => Error::Format { path, message },
        other => other,
    }
}

pub fn save_dictionary(
    path: &Path,
    dictionary: &Dictionary,
    structure: &BlockStructure,
    labels: Option<&ClassLabels>,
) -> Result<()> {
    let n = dictionary.n_atoms();
    if structure.n_atoms() != n || labels.is_some_and(|l| l.n_atoms() != n) {
        return Err(Error::dim(format!(
            "structure/labels length does not match {n} atoms"
        )));
    }
    let file = MatrixFile {
        matrix: dictionary.atoms().clone(),
        assignment: to_i32(structure.assignment(), path)?,
        labels: labels.map(|l| to_i32(l.labels(), path)).transpose()?,
    };
    write_container(path, &file)
}

/// Loads a dictionary file and re-validates every invariant.
pub fn load_dictionary(
    path: &Path,
) -> Result<(Dictionary, BlockStructure, Option<ClassLabels>)> {
    let file = read_container(path)?;
    let structure =
        BlockStructure::new(to_usize(&file.assignment, "block id", path)?).map_err(with_path(path))?;
    let labels = file
        .labels
        .as_deref()
        .map(|l| to_usize(l, "class label", path).and_then(ClassLabels::new))
        .transpose()
        .map_err(with_path(path))?;
    let dictionary = Dictionary::new(file.matrix).map_err(with_path(path))?;
    Ok((dictionary, structure, labels))
}

pub fn save_training_set(path: &Path, set: &TrainingSet) -> Result<()> {
    let file = MatrixFile {
        matrix: set.signals().clone(),
        assignment: vec![0; set.len()],
        labels: set.classes().map(|c| to_i32(c, path)).transpose()?,
    };
    write_container(path, &file)
}

pub fn load_training_set(path: &Path) -> Result<TrainingSet> {
    let file = read_container(path)?;
    match file.labels {
        Some(l) => TrainingSet::with_classes(file.matrix, to_usize(&l, "class label", path)?),
        None => TrainingSet::new(file.matrix),
    }
    .map_err(with_path(path))
}
