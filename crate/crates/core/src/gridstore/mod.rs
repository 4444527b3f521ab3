//! Persisted value stores, job manifests and job execution.
//!
//! A value store is a little-endian binary file:
//!
//! | offset | size | field |
//! |---|---|---|
//! | 0 | 8 | magic `CVAGRIDV` |
//! | 8 | 4 | format version (`u32`) |
//! | 12 | 4 | layout flags (`u32`): bit 0 time-major, bit 1 exercise flags present |
//! | 16 | 64 | deal id, UTF-8, zero padded |
//! | 80 | 8 | grid length `T` (`u64`) |
//! | 88 | 8 | path count `N` (`u64`) |
//! | 96 | 8 | grid hash (`u64`, FNV-1a of the grid times) |
//! | 104 | 8 | scenario seed (`u64`) |
//! | 112 | 8·T | grid times (`f64`) |
//! | | T | grid source tags (`u8`) |
//! | | 8·T·N | values (`f64`), entry `(i, p)` at `i·N + p` |
//! | | T·N | exercise flags (`u8`), when flagged in the layout |

mod jobs;

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

pub use jobs::{
    collect_cubes, load_scenario_set, plan_jobs, run_job, save_scenario_set, Job, JobManifest, JobStatus,
    ScenarioDescriptor, ScenarioSetSpec,
};

use crate::error::{CvaError, Result};
use crate::grid::{SourceTag, TimeGrid};
use crate::valuation::ValueCube;

pub const MAGIC: [u8; 8] = *b"CVAGRIDV";
pub const FORMAT_VERSION: u32 = 1;
pub const LAYOUT_TIME_MAJOR: u32 = 1;
pub const LAYOUT_EXERCISE: u32 = 2;
pub const ID_BYTES: usize = 64;
pub const HEADER_BYTES: usize = 112;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ValueStoreHeader {
    pub version: u32,
    pub layout: u32,
    pub deal_id: String,
    pub grid_len: u64,
    pub n_paths: u64,
    pub grid_hash: u64,
    pub seed: u64,
}

impl ValueStoreHeader {
    fn body_len(&self) -> Option<usize> {
        let t = usize::try_from(self.grid_len).ok()?;
        let n = usize::try_from(self.n_paths).ok()?;
        let cells = t.checked_mul(n)?;
        let flags = if self.layout & LAYOUT_EXERCISE != 0 { cells } else { 0 };
        t.checked_mul(9)?.checked_add(cells.checked_mul(8)?)?.checked_add(flags)
    }
}

fn store_err(path: &Path, message: impl Into<String>) -> CvaError {
    CvaError::Store {
        path: path.display().to_string(),
        message: message.into(),
    }
}

/// Serializes a cube. Fails when the id does not fit the header.
pub fn encode_cube(cube: &ValueCube) -> Result<Vec<u8>> {
    cube.validate()?;
    let id = cube.id.as_bytes();
    if id.len() > ID_BYTES || id.contains(&0) {
        return Err(crate::error::invalid(format!(
            "deal id {:?} must be at most {ID_BYTES} bytes without NUL",
            cube.id
        )));
    }
    let t = cube.grid.len();
    let cells = cube.values.len();
    let mut out = Vec::with_capacity(HEADER_BYTES + 9 * t + 9 * cells);
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    let layout = LAYOUT_TIME_MAJOR | if cube.exercise.is_some() { LAYOUT_EXERCISE } else { 0 };
    out.extend_from_slice(&layout.to_le_bytes());
    let mut id_field = [0u8; ID_BYTES];
    id_field[..id.len()].copy_from_slice(id);
    out.extend_from_slice(&id_field);
    for x in [t as u64, cube.n_paths as u64, cube.grid.hash(), cube.seed] {
        out.extend_from_slice(&x.to_le_bytes());
    }
    for x in cube.grid.times() {
        out.extend_from_slice(&x.to_le_bytes());
    }
    out.extend(cube.grid.tags().iter().map(|t| t.code()));
    for x in &cube.values {
        out.extend_from_slice(&x.to_le_bytes());
    }
    if let Some(ex) = &cube.exercise {
        out.extend_from_slice(ex);
    }
    Ok(out)
}

fn u32_at(b: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(b[at..at + 4].try_into().expect("4 bytes"))
}

fn u64_at(b: &[u8], at: usize) -> u64 {
    u64::from_le_bytes(b[at..at + 8].try_into().expect("8 bytes"))
}

fn f64_at(b: &[u8], at: usize) -> f64 {
    f64::from_le_bytes(b[at..at + 8].try_into().expect("8 bytes"))
}

/// Parses and checks the fixed-size header.
pub fn decode_header(bytes: &[u8], origin: &Path) -> Result<ValueStoreHeader> {
    if bytes.len() < HEADER_BYTES {
        return Err(store_err(origin, format!("truncated header ({} bytes)", bytes.len())));
    }
    if bytes[..8] != MAGIC {
        return Err(store_err(origin, format!("bad magic {:02x?}", &bytes[..8])));
    }
    let id_raw = &bytes[16..16 + ID_BYTES];
    let id_len = id_raw.iter().position(|&b| b == 0).unwrap_or(ID_BYTES);
    let header = ValueStoreHeader {
        version: u32_at(bytes, 8),
        layout: u32_at(bytes, 12),
        deal_id: String::from_utf8_lossy(&id_raw[..id_len]).into_owned(),
        grid_len: u64_at(bytes, 80),
        n_paths: u64_at(bytes, 88),
        grid_hash: u64_at(bytes, 96),
        seed: u64_at(bytes, 104),
    };
    if header.version != FORMAT_VERSION {
        return Err(store_err(origin, format!("unsupported version; header {header:?}")));
    }
    if header.layout & LAYOUT_TIME_MAJOR == 0 || header.layout & !(LAYOUT_TIME_MAJOR | LAYOUT_EXERCISE) != 0 {
        return Err(store_err(origin, format!("unknown layout; header {header:?}")));
    }
    if header.grid_len == 0 || header.n_paths == 0 {
        return Err(store_err(origin, format!("empty dimensions; header {header:?}")));
    }
    Ok(header)
}

/// Parses a value store. `expected_hash` guards against cubes from another
/// grid.
pub fn decode_cube(bytes: &[u8], origin: &Path, expected_hash: Option<u64>) -> Result<ValueCube> {
    let header = decode_header(bytes, origin)?;
    let body = header
        .body_len()
        .ok_or_else(|| store_err(origin, format!("dimensions overflow; header {header:?}")))?;
    if bytes.len() != HEADER_BYTES + body {
        return Err(store_err(
            origin,
            format!(
                "expected {} bytes, found {}; header {header:?}",
                HEADER_BYTES + body,
                bytes.len()
            ),
        ));
    }
    if let Some(h) = expected_hash {
        if h != header.grid_hash {
            return Err(CvaError::GridMismatch(format!(
                "{}: stored grid hash {:016x}, expected {h:016x}",
                origin.display(),
                header.grid_hash
            )));
        }
    }
    let t = header.grid_len as usize;
    let n = header.n_paths as usize;
    let mut at = HEADER_BYTES;
    let times: Vec<f64> = (0..t).map(|k| f64_at(bytes, at + 8 * k)).collect();
    at += 8 * t;
    let tags = bytes[at..at + t]
        .iter()
        .map(|&c| SourceTag::from_code(c).ok_or_else(|| store_err(origin, format!("bad grid tag {c}"))))
        .collect::<Result<Vec<_>>>()?;
    at += t;
    let grid = TimeGrid::from_tagged(times, tags).map_err(|e| store_err(origin, e.to_string()))?;
    if grid.hash() != header.grid_hash {
        return Err(store_err(
            origin,
            format!("grid times do not match the header hash; header {header:?}"),
        ));
    }
    let values: Vec<f64> = (0..t * n).map(|k| f64_at(bytes, at + 8 * k)).collect();
    at += 8 * t * n;
    let exercise = (header.layout & LAYOUT_EXERCISE != 0).then(|| bytes[at..at + t * n].to_vec());
    Ok(ValueCube {
        id: header.deal_id,
        grid,
        n_paths: n,
        seed: header.seed,
        values,
        exercise,
    })
}

/// Writes `bytes` next to `path` and renames it into place, so readers
/// never observe a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    let mut tmp_name = path.file_name().unwrap_or_default().to_os_string();
    tmp_name.push(format!(".tmp{}", std::process::id()));
    let tmp = path.with_file_name(tmp_name);
    let result = (|| -> std::io::Result<()> {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if result.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    Ok(result?)
}

pub fn save_cube(path: &Path, cube: &ValueCube) -> Result<()> {
    write_atomic(path, &encode_cube(cube)?)
}

pub fn load_cube(path: &Path, expected_hash: Option<u64>) -> Result<ValueCube> {
    let bytes = fs::read(path).map_err(|e| store_err(path, e.to_string()))?;
    decode_cube(&bytes, path, expected_hash)
}

pub fn read_header(path: &Path) -> Result<ValueStoreHeader> {
    let bytes = fs::read(path).map_err(|e| store_err(path, e.to_string()))?;
    decode_header(&bytes, path)
}

/// Sidecar paths recording a job's outcome.
pub fn sidecars(output: &Path) -> (PathBuf, PathBuf) {
    let with = |ext: &str| {
        let mut name = output.file_name().unwrap_or_default().to_os_string();
        name.push(ext);
        output.with_file_name(name)
    };
    (with(".ok"), with(".err"))
}
