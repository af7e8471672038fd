//! Domain types, manifest ingestion, and the binary feature cache.
//!
//! A dataset is a list of labeled image records, optionally carrying a
//! feature table (one fixed-length f32 row per record). The cache format
//! is little-endian: magic `OPRD`, version u32, n u32, d u32, n*d f32
//! row-major, then n index entries of (u32 person, u32 camera, u8 session,
//! u32 frame).

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

pub const CACHE_MAGIC: [u8; 4] = *b"OPRD";
pub const CACHE_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Session {
    Training,
    Test,
}

impl Session {
    pub fn as_byte(self) -> u8 {
        match self {
            Session::Training => 0,
            Session::Test => 1,
        }
    }

    pub fn from_byte(b: u8) -> Result<Self> {
        match b {
            0 => Ok(Session::Training),
            1 => Ok(Session::Test),
            _ => Err(Error::TruncatedFile),
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "train" => Some(Session::Training),
            "test" => Some(Session::Test),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Session::Training => "train",
            Session::Test => "test",
        }
    }
}

/// Unique key of a record within a dataset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct RecordKey {
    pub person_id: u32,
    pub camera_id: u32,
    pub session: Session,
    pub frame: u32,
}

impl RecordKey {
    /// Packs the key into a u64 for digests. Frame and person dominate;
    /// collisions are irrelevant for audit hashing.
    pub fn as_u64(&self) -> u64 {
        ((self.person_id as u64) << 40)
            | ((self.camera_id as u64) << 33)
            | ((self.session.as_byte() as u64) << 32)
            | self.frame as u64
    }
}

/// One labeled pedestrian crop.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageRecord {
    pub person_id: u32,
    pub camera_id: u32,
    pub session: Session,
    pub frame: u32,
    /// Path to the source image; empty for records whose features are
    /// supplied directly (synthetic data, released feature sets).
    pub path: PathBuf,
}

impl ImageRecord {
    pub fn key(&self) -> RecordKey {
        RecordKey {
            person_id: self.person_id,
            camera_id: self.camera_id,
            session: self.session,
            frame: self.frame,
        }
    }
}

/// Fixed-dimension feature rows parallel to `Dataset::records`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTable {
    pub dim: usize,
    data: Vec<f32>,
}

impl FeatureTable {
    pub fn new(dim: usize) -> Self {
        FeatureTable { dim, data: Vec::new() }
    }

    pub fn push(&mut self, row: &[f32]) -> Result<()> {
        if row.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: row.len(),
            });
        }
        self.data.extend_from_slice(row);
        Ok(())
    }

    pub fn len(&self) -> usize {
        if self.dim == 0 {
            0
        } else {
            self.data.len() / self.dim
        }
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn row_f64(&self, i: usize) -> Vec<f64> {
        self.row(i).iter().map(|&v| v as f64).collect()
    }
}

/// Immutable after load; safe to share read-only across workers.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub records: Vec<ImageRecord>,
    pub features: Option<FeatureTable>,
}

impl Dataset {
    pub fn new(records: Vec<ImageRecord>) -> Result<Self> {
        let mut seen = HashMap::new();
        for r in &records {
            if let Some(_) = seen.insert(r.key(), ()) {
                return Err(Error::DuplicateKey(r.key()));
            }
        }
        Ok(Dataset {
            records,
            features: None,
        })
    }

    pub fn with_features(records: Vec<ImageRecord>, features: FeatureTable) -> Result<Self> {
        let mut ds = Dataset::new(records)?;
        if features.len() != ds.records.len() {
            return Err(Error::DimensionMismatch {
                expected: ds.records.len(),
                got: features.len(),
            });
        }
        ds.features = Some(features);
        Ok(ds)
    }

    pub fn index_by_key(&self) -> HashMap<RecordKey, usize> {
        self.records
            .iter()
            .enumerate()
            .map(|(i, r)| (r.key(), i))
            .collect()
    }

    pub fn session_records(&self, session: Session) -> impl Iterator<Item = &ImageRecord> {
        self.records.iter().filter(move |r| r.session == session)
    }
}

/// Loads a manifest CSV with header `person_id,camera_id,session,frame,path`.
pub fn load_manifest(path: &Path) -> Result<Dataset> {
    let content = std::fs::read_to_string(path)
        .map_err(|_| Error::MissingFile(path.display().to_string()))?;
    let mut lines = content.lines().enumerate();
    let header = lines
        .next()
        .ok_or_else(|| Error::MalformedRow(1, "missing header".into()))?;
    if header.1.trim() != "person_id,camera_id,session,frame,path" {
        return Err(Error::MalformedRow(1, format!("bad header: {}", header.1)));
    }
    let mut records = Vec::new();
    for (idx, line) in lines {
        let lineno = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.splitn(5, ',').collect();
        if fields.len() != 5 {
            return Err(Error::MalformedRow(lineno, line.to_string()));
        }
        let person_id: i64 = fields[0]
            .trim()
            .parse()
            .map_err(|_| Error::MalformedRow(lineno, line.to_string()))?;
        let camera_id: i64 = fields[1]
            .trim()
            .parse()
            .map_err(|_| Error::MalformedRow(lineno, line.to_string()))?;
        if person_id < 1 || camera_id < 1 {
            return Err(Error::NonPositiveId(lineno));
        }
        let session = Session::parse(fields[2].trim())
            .ok_or_else(|| Error::MalformedRow(lineno, line.to_string()))?;
        let frame: u32 = fields[3]
            .trim()
            .parse()
            .map_err(|_| Error::MalformedRow(lineno, line.to_string()))?;
        let path_field = fields[4].trim().trim_matches('"');
        records.push(ImageRecord {
            person_id: person_id as u32,
            camera_id: camera_id as u32,
            session,
            frame,
            path: PathBuf::from(path_field),
        });
    }
    Dataset::new(records)
}

/// Writes a dataset back out in manifest form. Load-save-load is a fixed point.
pub fn save_manifest(dataset: &Dataset, path: &Path) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    writeln!(out, "person_id,camera_id,session,frame,path")?;
    for r in &dataset.records {
        writeln!(
            out,
            "{},{},{},{},{}",
            r.person_id,
            r.camera_id,
            r.session.as_str(),
            r.frame,
            r.path.display()
        )?;
    }
    Ok(())
}

/// Writes records plus their feature rows to the binary cache format.
pub fn write_feature_cache(dataset: &Dataset, path: &Path) -> Result<()> {
    let features = dataset.features.as_ref().ok_or(Error::DimensionMismatch {
        expected: dataset.records.len(),
        got: 0,
    })?;
    if features.len() != dataset.records.len() {
        return Err(Error::DimensionMismatch {
            expected: dataset.records.len(),
            got: features.len(),
        });
    }
    let mut out = BufWriter::new(File::create(path)?);
    out.write_all(&CACHE_MAGIC)?;
    out.write_all(&CACHE_VERSION.to_le_bytes())?;
    out.write_all(&(dataset.records.len() as u32).to_le_bytes())?;
    out.write_all(&(features.dim as u32).to_le_bytes())?;
    for i in 0..dataset.records.len() {
        for &v in features.row(i) {
            out.write_all(&v.to_le_bytes())?;
        }
    }
    for r in &dataset.records {
        out.write_all(&r.person_id.to_le_bytes())?;
        out.write_all(&r.camera_id.to_le_bytes())?;
        out.write_all(&[r.session.as_byte()])?;
        out.write_all(&r.frame.to_le_bytes())?;
    }
    out.flush()?;
    Ok(())
}

fn read_u32(reader: &mut impl Read) -> Result<u32> {
    let mut buf = [0u8; 4];
    reader
        .read_exact(&mut buf)
        .map_err(|_| Error::TruncatedFile)?;
    Ok(u32::from_le_bytes(buf))
}

/// Reads a feature cache written by [`write_feature_cache`]. The round trip
/// is bit-exact.
pub fn read_feature_cache(path: &Path) -> Result<Dataset> {
    let file =
        File::open(path).map_err(|_| Error::MissingFile(path.display().to_string()))?;
    let mut reader = BufReader::new(file);
    let mut magic = [0u8; 4];
    reader
        .read_exact(&mut magic)
        .map_err(|_| Error::TruncatedFile)?;
    if magic != CACHE_MAGIC {
        return Err(Error::BadMagic);
    }
    let version = read_u32(&mut reader)?;
    if version != CACHE_VERSION {
        return Err(Error::VersionUnsupported(version));
    }
    let n = read_u32(&mut reader)? as usize;
    let dim = read_u32(&mut reader)? as usize;
    let mut features = FeatureTable::new(dim);
    let mut buf = vec![0u8; dim * 4];
    let mut row = vec![0f32; dim];
    for _ in 0..n {
        reader
            .read_exact(&mut buf)
            .map_err(|_| Error::TruncatedFile)?;
        for (j, chunk) in buf.chunks_exact(4).enumerate() {
            row[j] = f32::from_le_bytes(chunk.try_into().unwrap());
        }
        features.push(&row)?;
    }
    let mut records = Vec::with_capacity(n);
    for _ in 0..n {
        let person_id = read_u32(&mut reader)?;
        let camera_id = read_u32(&mut reader)?;
        let mut sb = [0u8; 1];
        reader
            .read_exact(&mut sb)
            .map_err(|_| Error::TruncatedFile)?;
        let session = Session::from_byte(sb[0])?;
        let frame = read_u32(&mut reader)?;
        records.push(ImageRecord {
            person_id,
            camera_id,
            session,
            frame,
            path: PathBuf::new(),
        });
    }
    Dataset::with_features(records, features)
}
