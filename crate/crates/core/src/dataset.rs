//! Labeled feature vectors and their on-disk formats.
//!
//! Two formats are supported:
//!
//! * **CBFV** (binary, canonical): magic `b"CBFV"`, `u32` version (= 1), `u32` dim,
//!   `u64` record count, then for every record a `u32` label followed by `dim`
//!   IEEE-754 `f32` values. All integers and floats are little-endian.
//! * **CSV**: one record per line, label in the first column, no header row.
//!
//! Record order is preserved everywhere. Agg-Var clustering is order-sensitive, so
//! the order of a file is part of its data.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const CBFV_MAGIC: &[u8; 4] = b"CBFV";
pub const CBFV_VERSION: u32 = 1;
/// Magic + version + dim + record count.
pub const CBFV_HEADER_BYTES: u64 = 4 + 4 + 4 + 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FileFormat {
    Binary,
    Csv,
}

impl FileFormat {
    /// Guesses the format from a file extension; anything but `.csv` is binary.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("csv") => FileFormat::Csv,
            _ => FileFormat::Binary,
        }
    }
}

impl FromStr for FileFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "binary" | "cbfv" => Ok(FileFormat::Binary),
            "csv" => Ok(FileFormat::Csv),
            other => Err(Error::invalid(format!("unknown file format '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureRecord {
    pub label: u32,
    pub vector: Vec<f32>,
}

impl FeatureRecord {
    pub fn new(label: u32, vector: Vec<f32>) -> Self {
        Self { label, vector }
    }
}

impl AsRef<[f32]> for FeatureRecord {
    fn as_ref(&self) -> &[f32] {
        &self.vector
    }
}

/// A validated, non-empty list of records sharing one dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureDataset {
    dim: usize,
    records: Vec<FeatureRecord>,
}

impl FeatureDataset {
    pub fn new(dim: usize, records: Vec<FeatureRecord>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("dataset dimension must be at least 1"));
        }
        if records.is_empty() {
            return Err(Error::Empty("dataset needs at least one record"));
        }
        for (index, record) in records.iter().enumerate() {
            check_record(index as u64, dim, &record.vector)?;
        }
        Ok(Self { dim, records })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn records(&self) -> &[FeatureRecord] {
        &self.records
    }

    pub fn into_records(self) -> Vec<FeatureRecord> {
        self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn class_ids(&self) -> BTreeSet<u32> {
        self.records.iter().map(|r| r.label).collect()
    }

    /// Records of the given classes, in file order.
    pub fn filter_classes(&self, classes: &BTreeSet<u32>) -> Option<FeatureDataset> {
        let records: Vec<_> = self
            .records
            .iter()
            .filter(|r| classes.contains(&r.label))
            .cloned()
            .collect();
        if records.is_empty() {
            None
        } else {
            Some(FeatureDataset {
                dim: self.dim,
                records,
            })
        }
    }
}

fn check_record(index: u64, dim: usize, vector: &[f32]) -> Result<()> {
    if vector.len() != dim {
        return Err(Error::Record {
            index,
            reason: format!("expected {dim} components, found {}", vector.len()),
        });
    }
    if let Some(pos) = vector.iter().position(|v| !v.is_finite()) {
        return Err(Error::Record {
            index,
            reason: format!("component {pos} is not finite"),
        });
    }
    Ok(())
}

/// Groups records by label. Within-class order follows the dataset order.
pub fn split_by_class(dataset: &FeatureDataset) -> BTreeMap<u32, Vec<FeatureRecord>> {
    let mut out: BTreeMap<u32, Vec<FeatureRecord>> = BTreeMap::new();
    for record in dataset.records() {
        out.entry(record.label).or_default().push(record.clone());
    }
    out
}

pub fn read_dataset(path: impl AsRef<Path>, format: FileFormat) -> Result<FeatureDataset> {
    let file = File::open(path.as_ref())?;
    let reader = BufReader::new(file);
    match format {
        FileFormat::Binary => read_binary(reader),
        FileFormat::Csv => read_csv(reader),
    }
}

pub fn write_dataset(
    dataset: &FeatureDataset,
    path: impl AsRef<Path>,
    format: FileFormat,
) -> Result<()> {
    if dataset.is_empty() {
        return Err(Error::Empty("dataset needs at least one record"));
    }
    let mut writer = BufWriter::new(File::create(path.as_ref())?);
    match format {
        FileFormat::Binary => write_binary(dataset, &mut writer)?,
        FileFormat::Csv => write_csv(dataset, &mut writer)?,
    }
    writer.flush()?;
    Ok(())
}

pub fn write_binary<W: Write>(dataset: &FeatureDataset, w: &mut W) -> Result<()> {
    w.write_all(CBFV_MAGIC)?;
    w.write_all(&CBFV_VERSION.to_le_bytes())?;
    w.write_all(&(dataset.dim as u32).to_le_bytes())?;
    w.write_all(&(dataset.len() as u64).to_le_bytes())?;
    for record in dataset.records() {
        w.write_all(&record.label.to_le_bytes())?;
        write_f32s(w, &record.vector)?;
    }
    Ok(())
}

pub fn read_binary<R: Read>(mut r: R) -> Result<FeatureDataset> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)
        .map_err(|_| Error::Format("file too short for CBFV header".into()))?;
    if &magic != CBFV_MAGIC {
        return Err(Error::Format(format!("bad magic {magic:?}, expected CBFV")));
    }
    let version = read_u32(&mut r).map_err(|_| header_truncated())?;
    if version != CBFV_VERSION {
        return Err(Error::Format(format!("unsupported CBFV version {version}")));
    }
    let dim = read_u32(&mut r).map_err(|_| header_truncated())? as usize;
    let count = read_u64(&mut r).map_err(|_| header_truncated())?;
    if dim == 0 {
        return Err(Error::Format("dimension 0 in header".into()));
    }
    if count == 0 {
        return Err(Error::Empty("dataset needs at least one record"));
    }

    let mut records = Vec::with_capacity(count.min(1 << 20) as usize);
    for index in 0..count {
        let truncated = |_| Error::Record {
            index,
            reason: "file truncated".into(),
        };
        let label = read_u32(&mut r).map_err(truncated)?;
        let vector = read_f32s(&mut r, dim).map_err(truncated)?;
        check_record(index, dim, &vector)?;
        records.push(FeatureRecord { label, vector });
    }

    let mut rest = Vec::new();
    r.read_to_end(&mut rest)?;
    if !rest.is_empty() {
        return Err(Error::Format(format!(
            "{} trailing bytes after {count} records",
            rest.len()
        )));
    }
    Ok(FeatureDataset { dim, records })
}

fn header_truncated() -> Error {
    Error::Format("file too short for CBFV header".into())
}

pub fn write_csv<W: Write>(dataset: &FeatureDataset, w: &mut W) -> Result<()> {
    for record in dataset.records() {
        write!(w, "{}", record.label)?;
        for v in &record.vector {
            // `Display` for f32 prints the shortest string that parses back to the same bits.
            write!(w, ",{v}")?;
        }
        writeln!(w)?;
    }
    Ok(())
}

pub fn read_csv<R: BufRead>(r: R) -> Result<FeatureDataset> {
    let mut dim = None;
    let mut records = Vec::new();
    for line in r.lines() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let index = records.len() as u64;
        let bad = |reason: String| Error::Record { index, reason };
        let mut fields = line.split(',').map(str::trim);
        let label = fields
            .next()
            .ok_or_else(|| bad("missing label".into()))?
            .parse::<u32>()
            .map_err(|e| bad(format!("bad label: {e}")))?;
        let vector = fields
            .enumerate()
            .map(|(i, f)| {
                f.parse::<f32>()
                    .map_err(|e| bad(format!("bad component {i} '{f}': {e}")))
            })
            .collect::<Result<Vec<f32>>>()?;
        let d = *dim.get_or_insert(vector.len());
        if d == 0 {
            return Err(bad("record has no components".into()));
        }
        check_record(index, d, &vector)?;
        records.push(FeatureRecord { label, vector });
    }
    match dim {
        Some(dim) => Ok(FeatureDataset { dim, records }),
        None => Err(Error::Empty("dataset needs at least one record")),
    }
}

// Little-endian primitives shared by the CBFV, CBMS, and CBLC formats.

pub(crate) fn read_u32<R: Read>(r: &mut R) -> std::io::Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

pub(crate) fn read_u64<R: Read>(r: &mut R) -> std::io::Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

pub(crate) fn read_f32s<R: Read>(r: &mut R, n: usize) -> std::io::Result<Vec<f32>> {
    let mut buf = vec![0u8; n * 4];
    r.read_exact(&mut buf)?;
    Ok(buf
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect())
}

pub(crate) fn write_f32s<W: Write>(w: &mut W, values: &[f32]) -> std::io::Result<()> {
    let mut buf = Vec::with_capacity(values.len() * 4);
    for v in values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&buf)
}
