//! Feature tables, seeded per-class splits and memory-bank persistence.
//!
//! Two feature formats are supported and detected by content:
//!
//! * CSV: UTF-8, LF line endings, header `id,label,f0,...,f{D-1}`, one row
//!   per image. Scalars are written in shortest round-trip form and parsed
//!   with a locale-independent decimal parser.
//! * `FTB1` binary: magic `FTB1`, `u32` dim, `u64` row count, then per row a
//!   `u32` byte length and UTF-8 bytes for the id, the same for the label,
//!   and `dim` raw `f64` values. All integers and floats little-endian.
//!
//! Banks are JSON documents carrying `"version": 1`; see [`save_bank`].

use std::collections::{BTreeMap, HashSet};
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::corepatterns::{CoreId, CorePattern, MemoryBank};
use crate::error::{Error, Result};
use crate::hopfield::{Mode, Pattern};
use crate::rng::SplitMix64;

pub const FTB1_MAGIC: &[u8; 4] = b"FTB1";
pub const BANK_FORMAT: &str = "hopmem-bank";
pub const BANK_VERSION: u64 = 1;
/// Banks holding more scalars than this keep them in a binary sidecar.
pub const SIDECAR_THRESHOLD: usize = 1_000_000;

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureRow {
    pub id: String,
    pub label: String,
    pub values: Vec<f64>,
}

/// Labeled feature vectors with unique ids, uniform dimension `dim >= 2`
/// and finite values.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTable {
    dim: usize,
    rows: Vec<FeatureRow>,
}

impl FeatureTable {
    pub fn new(dim: usize, rows: Vec<FeatureRow>) -> Result<Self> {
        if dim < 2 {
            return Err(Error::contract(format!(
                "feature dimension {dim} is below 2"
            )));
        }
        let mut ids = HashSet::with_capacity(rows.len());
        for row in &rows {
            if row.values.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    found: row.values.len(),
                });
            }
            if row.values.iter().any(|v| !v.is_finite()) {
                return Err(Error::contract(format!(
                    "row `{}` has a non-finite value",
                    row.id
                )));
            }
            if !ids.insert(row.id.as_str()) {
                return Err(Error::contract(format!("duplicate row id `{}`", row.id)));
            }
        }
        Ok(Self { dim, rows })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn rows(&self) -> &[FeatureRow] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Distinct labels, sorted.
    pub fn labels(&self) -> Vec<&str> {
        let mut labels: Vec<&str> = self.rows.iter().map(|r| r.label.as_str()).collect();
        labels.sort_unstable();
        labels.dedup();
        labels
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeatureFormat {
    Csv,
    Ftb1,
}

fn open(path: &Path) -> Result<File> {
    File::open(path).map_err(|e| Error::io(path, e))
}

/// Load a CSV or `FTB1` feature table, whichever the file contains.
pub fn load_features(path: impl AsRef<Path>) -> Result<FeatureTable> {
    let path = path.as_ref();
    let mut bytes = Vec::new();
    open(path)?
        .read_to_end(&mut bytes)
        .map_err(|e| Error::io(path, e))?;
    if bytes.starts_with(FTB1_MAGIC) {
        parse_ftb1(path, &bytes)
    } else {
        parse_csv(path, &bytes)
    }
}

fn parse_error(path: &Path, line: u64, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

fn parse_csv(path: &Path, bytes: &[u8]) -> Result<FeatureTable> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(bytes);
    let mut records = reader.records();
    let header = match records.next() {
        Some(Ok(h)) => h,
        Some(Err(e)) => return Err(parse_error(path, 1, e.to_string())),
        None => return Err(parse_error(path, 1, "missing header")),
    };
    if header.len() < 4 || &header[0] != "id" || &header[1] != "label" {
        return Err(parse_error(
            path,
            1,
            "header must be `id,label,f0,...,f{D-1}` with D >= 2",
        ));
    }
    for (d, name) in header.iter().skip(2).enumerate() {
        if name != format!("f{d}") {
            return Err(parse_error(
                path,
                1,
                format!("header column {} is `{name}`, expected `f{d}`", d + 2),
            ));
        }
    }
    let dim = header.len() - 2;

    let mut rows = Vec::new();
    let mut ids = HashSet::new();
    for record in records {
        let record = record.map_err(|e| {
            let line = e.position().map(|p| p.line()).unwrap_or(0);
            parse_error(path, line, e.to_string())
        })?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        if record.len() != dim + 2 {
            return Err(parse_error(
                path,
                line,
                format!("expected {} fields, found {}", dim + 2, record.len()),
            ));
        }
        let id = record[0].to_string();
        if !ids.insert(id.clone()) {
            return Err(parse_error(path, line, format!("duplicate id `{id}`")));
        }
        let values = record
            .iter()
            .skip(2)
            .enumerate()
            .map(|(d, field)| match field.trim().parse::<f64>() {
                Ok(v) if v.is_finite() => Ok(v),
                Ok(_) => Err(parse_error(
                    path,
                    line,
                    format!("non-finite value `{field}` in column f{d}"),
                )),
                Err(_) => Err(parse_error(
                    path,
                    line,
                    format!("invalid number `{field}` in column f{d}"),
                )),
            })
            .collect::<Result<Vec<f64>>>()?;
        rows.push(FeatureRow {
            id,
            label: record[1].to_string(),
            values,
        });
    }
    FeatureTable::new(dim, rows)
}

struct Cursor<'a> {
    path: &'a Path,
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let out = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(out)
            }
            None => Err(Error::Corrupt {
                path: self.path.to_path_buf(),
                message: format!("unexpected end of data at byte {}", self.pos),
            }),
        }
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn string(&mut self) -> Result<String> {
        let len = self.u32()? as usize;
        let raw = self.take(len)?;
        String::from_utf8(raw.to_vec()).map_err(|_| Error::Corrupt {
            path: self.path.to_path_buf(),
            message: "string is not UTF-8".into(),
        })
    }
}

fn parse_ftb1(path: &Path, bytes: &[u8]) -> Result<FeatureTable> {
    let mut cur = Cursor {
        path,
        bytes,
        pos: FTB1_MAGIC.len(),
    };
    let dim = cur.u32()? as usize;
    let count = cur.u64()?;
    let mut rows = Vec::new();
    for r in 0..count {
        let id = cur.string()?;
        let label = cur.string()?;
        let values = (0..dim).map(|_| cur.f64()).collect::<Result<Vec<_>>>()?;
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Corrupt {
                path: path.to_path_buf(),
                message: format!("row {r} (`{id}`) has a non-finite value"),
            });
        }
        rows.push(FeatureRow { id, label, values });
    }
    if cur.pos != bytes.len() {
        return Err(Error::Corrupt {
            path: path.to_path_buf(),
            message: format!("{} trailing bytes", bytes.len() - cur.pos),
        });
    }
    FeatureTable::new(dim, rows).map_err(|e| Error::Corrupt {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

/// Shortest decimal text that parses back to the same `f64`.
pub fn format_scalar(v: f64) -> String {
    format!("{v:?}")
}

pub fn save_features(
    table: &FeatureTable,
    path: impl AsRef<Path>,
    format: FeatureFormat,
) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    match format {
        FeatureFormat::Csv => write_csv(table, &mut out).map_err(|e| Error::io(path, e))?,
        FeatureFormat::Ftb1 => write_ftb1(table, &mut out).map_err(|e| Error::io(path, e))?,
    }
    out.flush().map_err(|e| Error::io(path, e))
}

fn write_csv(table: &FeatureTable, out: &mut impl Write) -> std::io::Result<()> {
    let mut writer = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(out);
    let mut header = vec!["id".to_string(), "label".to_string()];
    header.extend((0..table.dim()).map(|d| format!("f{d}")));
    writer.write_record(&header)?;
    for row in table.rows() {
        let mut record = vec![row.id.clone(), row.label.clone()];
        record.extend(row.values.iter().map(|&v| format_scalar(v)));
        writer.write_record(&record)?;
    }
    writer.flush()
}

fn write_ftb1(table: &FeatureTable, out: &mut impl Write) -> std::io::Result<()> {
    let len32 = |n: usize| {
        u32::try_from(n)
            .map_err(|_| std::io::Error::new(std::io::ErrorKind::InvalidInput, "field too long"))
    };
    out.write_all(FTB1_MAGIC)?;
    out.write_all(&len32(table.dim())?.to_le_bytes())?;
    out.write_all(&(table.len() as u64).to_le_bytes())?;
    for row in table.rows() {
        for s in [&row.id, &row.label] {
            out.write_all(&len32(s.len())?.to_le_bytes())?;
            out.write_all(s.as_bytes())?;
        }
        for v in &row.values {
            out.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TestCount {
    Count(usize),
    AllRemaining,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplitSpec {
    pub train_per_class: usize,
    pub test_per_class: TestCount,
    pub seed: u64,
    /// Put every row of a class with too few rows into train instead of
    /// failing; such classes get no test rows.
    pub allow_small_classes: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Split {
    pub train: FeatureTable,
    pub test: FeatureTable,
    /// Classes that had `<= train_per_class` rows and went entirely to train.
    pub small_classes: Vec<String>,
}

/// Per class (labels sorted, class `i` shuffled with Fisher–Yates seeded by
/// `substream(seed, i)` over its rows in table order): the first
/// `train_per_class` rows go to train, the next `test_per_class` (or all
/// remaining) to test. Both outputs keep the original row order.
pub fn split(table: &FeatureTable, spec: &SplitSpec) -> Result<Split> {
    if spec.train_per_class == 0 {
        return Err(Error::contract("train_per_class must be at least 1"));
    }
    let mut by_class: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, row) in table.rows().iter().enumerate() {
        by_class.entry(row.label.as_str()).or_default().push(i);
    }
    let small: Vec<String> = by_class
        .iter()
        .filter(|(_, rows)| rows.len() <= spec.train_per_class)
        .map(|(label, _)| label.to_string())
        .collect();
    if !small.is_empty() && !spec.allow_small_classes {
        return Err(Error::contract(format!(
            "classes with at most {} rows cannot be split: {}",
            spec.train_per_class,
            small.join(", ")
        )));
    }

    #[derive(Clone, Copy, PartialEq)]
    enum Side {
        Unused,
        Train,
        Test,
    }
    let mut side = vec![Side::Unused; table.len()];
    for (class_index, (_, mut rows)) in by_class.into_iter().enumerate() {
        if rows.len() <= spec.train_per_class {
            rows.iter().for_each(|&r| side[r] = Side::Train);
            continue;
        }
        SplitMix64::new(SplitMix64::substream(spec.seed, class_index as u64)).shuffle(&mut rows);
        let (train, rest) = rows.split_at(spec.train_per_class);
        let n_test = match spec.test_per_class {
            TestCount::Count(n) => n.min(rest.len()),
            TestCount::AllRemaining => rest.len(),
        };
        train.iter().for_each(|&r| side[r] = Side::Train);
        rest[..n_test].iter().for_each(|&r| side[r] = Side::Test);
    }

    let pick = |wanted: Side| {
        table
            .rows()
            .iter()
            .zip(&side)
            .filter(|(_, &s)| s == wanted)
            .map(|(r, _)| r.clone())
            .collect::<Vec<_>>()
    };
    Ok(Split {
        train: FeatureTable::new(table.dim(), pick(Side::Train))?,
        test: FeatureTable::new(table.dim(), pick(Side::Test))?,
        small_classes: small,
    })
}

#[derive(Serialize, Deserialize)]
struct VersionProbe {
    format: String,
    version: u64,
}

#[derive(Serialize, Deserialize)]
struct BankDoc {
    format: String,
    version: u64,
    n: usize,
    mode: Mode,
    k_per_class: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    sidecar: Option<SidecarRef>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    thresholds: Option<Vec<f64>>,
    core_patterns: Vec<CoreDoc>,
}

#[derive(Serialize, Deserialize)]
struct SidecarRef {
    /// File name relative to the bank document's directory.
    path: String,
    /// Total `f64` count: thresholds (if bipolar) then each core pattern.
    values: usize,
}

#[derive(Serialize, Deserialize)]
struct CoreDoc {
    id: CoreId,
    class_id: String,
    member_count: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    values: Option<Vec<f64>>,
}

fn sidecar_path(path: &Path) -> PathBuf {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(".bin");
    path.with_file_name(name)
}

/// Write `bank` as a JSON document. Scalars are stored inline unless the bank
/// holds more than [`SIDECAR_THRESHOLD`] of them.
pub fn save_bank(bank: &MemoryBank, path: impl AsRef<Path>) -> Result<()> {
    save_bank_with_threshold(bank, path, SIDECAR_THRESHOLD)
}

/// [`save_bank`] with an explicit inline-scalar limit. The sidecar, when
/// used, is `<file name>.bin` next to the document and holds raw
/// little-endian `f64`s.
pub fn save_bank_with_threshold(
    bank: &MemoryBank,
    path: impl AsRef<Path>,
    max_inline: usize,
) -> Result<()> {
    let path = path.as_ref();
    let total = bank.thresholds().map_or(0, <[f64]>::len) + bank.core_patterns().len() * bank.n();
    let use_sidecar = total > max_inline;

    let mut doc = BankDoc {
        format: BANK_FORMAT.into(),
        version: BANK_VERSION,
        n: bank.n(),
        mode: bank.mode(),
        k_per_class: bank.k_per_class(),
        sidecar: None,
        thresholds: bank.thresholds().map(<[f64]>::to_vec),
        core_patterns: bank
            .core_patterns()
            .iter()
            .map(|c| CoreDoc {
                id: c.id,
                class_id: c.class_id.clone(),
                member_count: c.member_count,
                values: Some(c.values.values().to_vec()),
            })
            .collect(),
    };

    if use_sidecar {
        let side = sidecar_path(path);
        let file = File::create(&side).map_err(|e| Error::io(&side, e))?;
        let mut out = BufWriter::new(file);
        let scalars = bank
            .thresholds()
            .into_iter()
            .flatten()
            .chain(bank.core_patterns().iter().flat_map(|c| c.values.values()));
        for v in scalars {
            out.write_all(&v.to_le_bytes())
                .map_err(|e| Error::io(&side, e))?;
        }
        out.flush().map_err(|e| Error::io(&side, e))?;
        doc.thresholds = None;
        doc.core_patterns.iter_mut().for_each(|c| c.values = None);
        doc.sidecar = Some(SidecarRef {
            path: side
                .file_name()
                .unwrap_or_default()
                .to_string_lossy()
                .into_owned(),
            values: total,
        });
    }

    let mut text = serde_json::to_string_pretty(&doc).expect("bank serializes");
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Read a bank written by [`save_bank`], rejecting unknown versions, corrupt
/// payloads and banks that violate the bank invariants.
pub fn load_bank(path: impl AsRef<Path>) -> Result<MemoryBank> {
    let path = path.as_ref();
    let mut text = String::new();
    BufReader::new(open(path)?)
        .read_to_string(&mut text)
        .map_err(|e| Error::io(path, e))?;
    let corrupt = |message: String| Error::Corrupt {
        path: path.to_path_buf(),
        message,
    };

    let probe: VersionProbe = serde_json::from_str(&text).map_err(|e| corrupt(e.to_string()))?;
    if probe.format != BANK_FORMAT {
        return Err(corrupt(format!(
            "unknown document format `{}`",
            probe.format
        )));
    }
    if probe.version != BANK_VERSION {
        return Err(Error::UnsupportedVersion {
            path: path.to_path_buf(),
            found: probe.version,
            expected: BANK_VERSION,
        });
    }
    let mut doc: BankDoc = serde_json::from_str(&text).map_err(|e| corrupt(e.to_string()))?;

    if let Some(side) = &doc.sidecar {
        if doc.thresholds.is_some() || doc.core_patterns.iter().any(|c| c.values.is_some()) {
            return Err(corrupt("inline values alongside a sidecar".into()));
        }
        let side_path = path.with_file_name(&side.path);
        let mut bytes = Vec::new();
        open(&side_path)?
            .read_to_end(&mut bytes)
            .map_err(|e| Error::io(&side_path, e))?;
        let expected =
            doc.core_patterns.len() * doc.n + if doc.mode == Mode::Bipolar { doc.n } else { 0 };
        if side.values != expected || bytes.len() != expected * 8 {
            return Err(corrupt(format!(
                "sidecar holds {} bytes, expected {} values",
                bytes.len(),
                expected
            )));
        }
        let mut scalars = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()));
        if doc.mode == Mode::Bipolar {
            doc.thresholds = Some(scalars.by_ref().take(doc.n).collect());
        }
        for c in &mut doc.core_patterns {
            c.values = Some(scalars.by_ref().take(doc.n).collect());
        }
    }

    let core_patterns = doc
        .core_patterns
        .into_iter()
        .map(|c| {
            let values = c
                .values
                .ok_or_else(|| corrupt(format!("core pattern {} has no values", c.id)))?;
            let values = Pattern::new(values, doc.mode)
                .map_err(|e| corrupt(format!("core pattern {}: {e}", c.id)))?;
            Ok(CorePattern {
                id: c.id,
                class_id: c.class_id,
                values,
                member_count: c.member_count,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    MemoryBank::new(
        doc.n,
        doc.mode,
        core_patterns,
        doc.thresholds,
        doc.k_per_class,
    )
    .map_err(|e| corrupt(e.to_string()))
}
