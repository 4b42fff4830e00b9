//! BTSF v1 template store: a fixed little-endian binary layout holding the
//! templates of one recognizer.
//!
//! ```text
//! header (52 bytes)
//!   magic     4   "BTSF"
//!   version   u32 = 1
//!   dim       u32
//!   count     u64
//!   frs_name  32  UTF-8, zero padded
//! record (12 + 4*dim bytes), repeated `count` times
//!   subject_id u32 | sample_id u32 | role u8 | 3 zero bytes | dim x f32
//! ```

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MAGIC: [u8; 4] = *b"BTSF";
pub const VERSION: u32 = 1;
pub const HEADER_LEN: usize = 52;
pub const NAME_LEN: usize = 32;
/// Tolerance on the norm of stored f32 vectors.
pub const UNIT_NORM_TOL: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Reference = 0,
    Probe = 1,
    MorphVariant = 2,
}

impl Role {
    pub fn from_byte(b: u8) -> Option<Role> {
        match b {
            0 => Some(Role::Reference),
            1 => Some(Role::Probe),
            2 => Some(Role::MorphVariant),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TemplateRecord {
    pub subject_id: u32,
    pub sample_id: u32,
    pub role: Role,
    pub vector: Vec<f32>,
}

impl TemplateRecord {
    pub fn key(&self) -> (u32, u32, Role) {
        (self.subject_id, self.sample_id, self.role)
    }

    pub fn vector_f64(&self) -> Vec<f64> {
        self.vector.iter().map(|&v| f64::from(v)).collect()
    }

    pub fn norm(&self) -> f64 {
        self.vector
            .iter()
            .map(|&v| f64::from(v) * f64::from(v))
            .sum::<f64>()
            .sqrt()
    }
}

/// In-memory contents of one store file.
#[derive(Debug, Clone, PartialEq)]
pub struct TemplateStore {
    pub frs_name: String,
    pub dim: usize,
    pub records: Vec<TemplateRecord>,
}

impl TemplateStore {
    pub fn new(frs_name: impl Into<String>, dim: usize, records: Vec<TemplateRecord>) -> Self {
        Self {
            frs_name: frs_name.into(),
            dim,
            records,
        }
    }

    pub fn with_role(&self, role: Role) -> impl Iterator<Item = &TemplateRecord> {
        self.records.iter().filter(move |r| r.role == role)
    }

    /// Records of `role` grouped by subject, each group sorted by sample id.
    pub fn by_subject(&self, role: Role) -> BTreeMap<u32, Vec<&TemplateRecord>> {
        let mut map: BTreeMap<u32, Vec<&TemplateRecord>> = BTreeMap::new();
        for r in self.with_role(role) {
            map.entry(r.subject_id).or_default().push(r);
        }
        for v in map.values_mut() {
            v.sort_by_key(|r| r.sample_id);
        }
        map
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_store(path, &self.frs_name, self.dim, &self.records)
    }

    pub fn read(path: &Path) -> Result<Self> {
        read_store(path)
    }
}

fn validate_records(dim: usize, records: &[TemplateRecord]) -> Result<()> {
    if dim < 2 {
        return Err(Error::DimTooSmall(dim));
    }
    let mut seen = HashSet::with_capacity(records.len());
    for r in records {
        if r.vector.len() != dim {
            return Err(Error::DimMismatch {
                expected: dim,
                actual: r.vector.len(),
            });
        }
        if r.vector.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteValue);
        }
        if !seen.insert(r.key()) {
            return Err(Error::DuplicateKey {
                subject: r.subject_id,
                sample: r.sample_id,
                role: r.role,
            });
        }
    }
    Ok(())
}

/// Serializes records into BTSF bytes.
pub fn encode_store(frs_name: &str, dim: usize, records: &[TemplateRecord]) -> Result<Vec<u8>> {
    validate_records(dim, records)?;
    let name = frs_name.as_bytes();
    if name.len() > NAME_LEN {
        return Err(Error::InvalidConfig(format!(
            "frs name {frs_name:?} exceeds {NAME_LEN} bytes"
        )));
    }
    let dim32 = u32::try_from(dim).map_err(|_| Error::InvalidConfig("dim exceeds u32".into()))?;

    let mut buf = Vec::with_capacity(HEADER_LEN + records.len() * record_len(dim));
    buf.extend_from_slice(&MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&dim32.to_le_bytes());
    buf.extend_from_slice(&(records.len() as u64).to_le_bytes());
    let mut padded = [0u8; NAME_LEN];
    padded[..name.len()].copy_from_slice(name);
    buf.extend_from_slice(&padded);

    for r in records {
        buf.extend_from_slice(&r.subject_id.to_le_bytes());
        buf.extend_from_slice(&r.sample_id.to_le_bytes());
        buf.push(r.role as u8);
        buf.extend_from_slice(&[0u8; 3]);
        for v in &r.vector {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(buf)
}

pub fn write_store(
    path: &Path,
    frs_name: &str,
    dim: usize,
    records: &[TemplateRecord],
) -> Result<()> {
    let bytes = encode_store(frs_name, dim, records)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn record_len(dim: usize) -> usize {
    12 + 4 * dim
}

fn u32_at(b: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(b[at..at + 4].try_into().unwrap())
}

/// Parses BTSF bytes, validating header, length and values.
pub fn decode_store(bytes: &[u8]) -> Result<TemplateStore> {
    if bytes.len() < HEADER_LEN {
        if bytes.len() >= 4 && bytes[..4] != MAGIC {
            return Err(Error::BadMagic(bytes[..4].try_into().unwrap()));
        }
        return Err(Error::MalformedStore(format!(
            "file is {} bytes, shorter than the {HEADER_LEN}-byte header",
            bytes.len()
        )));
    }
    let magic: [u8; 4] = bytes[..4].try_into().unwrap();
    if magic != MAGIC {
        return Err(Error::BadMagic(magic));
    }
    let version = u32_at(bytes, 4);
    if version != VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let dim = u32_at(bytes, 8) as usize;
    if dim < 2 {
        return Err(Error::DimTooSmall(dim));
    }
    let count = u64::from_le_bytes(bytes[12..20].try_into().unwrap());
    let name_raw = &bytes[20..HEADER_LEN];
    let name_end = name_raw.iter().position(|&b| b == 0).unwrap_or(NAME_LEN);
    if name_raw[name_end..].iter().any(|&b| b != 0) {
        return Err(Error::MalformedStore("frs name padding is not zero".into()));
    }
    let frs_name = std::str::from_utf8(&name_raw[..name_end])
        .map_err(|_| Error::MalformedStore("frs name is not UTF-8".into()))?
        .to_string();

    let payload = &bytes[HEADER_LEN..];
    let rec_len = record_len(dim);
    let available = (payload.len() / rec_len) as u64;
    if available < count {
        return Err(Error::TruncatedFile {
            declared: count,
            available,
        });
    }
    if payload.len() as u64 != count * rec_len as u64 {
        return Err(Error::MalformedStore(format!(
            "{} trailing bytes after {count} records",
            payload.len() as u64 - count * rec_len as u64
        )));
    }

    let mut records = Vec::with_capacity(count as usize);
    for chunk in payload.chunks_exact(rec_len) {
        let role = Role::from_byte(chunk[8])
            .ok_or_else(|| Error::MalformedStore(format!("unknown role byte {}", chunk[8])))?;
        if chunk[9..12] != [0, 0, 0] {
            return Err(Error::MalformedStore("record padding is not zero".into()));
        }
        let vector: Vec<f32> = chunk[12..]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        if vector.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteValue);
        }
        records.push(TemplateRecord {
            subject_id: u32_at(chunk, 0),
            sample_id: u32_at(chunk, 4),
            role,
            vector,
        });
    }
    validate_records(dim, &records)?;
    Ok(TemplateStore {
        frs_name,
        dim,
        records,
    })
}

pub fn read_store(path: &Path) -> Result<TemplateStore> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_store(&bytes)
}

/// Records whose norm deviates from 1 by more than [`UNIT_NORM_TOL`].
pub fn non_unit_records(store: &TemplateStore) -> Vec<(u32, u32, Role)> {
    store
        .records
        .iter()
        .filter(|r| (r.norm() - 1.0).abs() > UNIT_NORM_TOL)
        .map(TemplateRecord::key)
        .collect()
}

/// Path of the optional `<store>.subjects.json` label sidecar.
pub fn sidecar_path(store_path: &Path) -> PathBuf {
    let mut name = store_path.as_os_str().to_os_string();
    name.push(".subjects.json");
    PathBuf::from(name)
}

pub fn write_subject_labels(store_path: &Path, labels: &BTreeMap<u32, String>) -> Result<()> {
    let path = sidecar_path(store_path);
    let json = serde_json::to_string_pretty(labels)?;
    fs::write(&path, json).map_err(|e| Error::io(path, e))
}

/// Reads the label sidecar; `None` when it does not exist.
pub fn read_subject_labels(store_path: &Path) -> Result<Option<BTreeMap<u32, String>>> {
    let path = sidecar_path(store_path);
    match fs::read(&path) {
        Ok(bytes) => Ok(Some(serde_json::from_slice(&bytes)?)),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
        Err(e) => Err(Error::io(path, e)),
    }
}
