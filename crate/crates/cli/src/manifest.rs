use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::Fail;

#[derive(Debug, Clone, Serialize)]
pub struct InputDigest {
    pub path: PathBuf,
    pub sha256: String,
}

/// Provenance record written next to every command output.
#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: &'static str,
    pub config: serde_json::Value,
    pub inputs: Vec<InputDigest>,
    pub outputs: Vec<PathBuf>,
    pub seeds: Vec<u64>,
    pub started_unix: u64,
    pub finished_unix: u64,
}

pub fn unix_now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

pub fn digest_file(path: &Path) -> Result<InputDigest, Fail> {
    let bytes = fs::read(path).map_err(|e| Fail::io(path, e))?;
    Ok(InputDigest {
        path: path.to_path_buf(),
        sha256: hex::encode(Sha256::digest(&bytes)),
    })
}

/// Writes via a temp file in the target directory, then renames into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), Fail> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    fs::create_dir_all(dir).map_err(|e| Fail::io(dir, e))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Fail::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| Fail::io(path, e))?;
    tmp.as_file().sync_all().map_err(|e| Fail::io(path, e))?;
    tmp.persist(path).map_err(|e| Fail::io(path, e.error))?;
    Ok(())
}

pub fn manifest_path(output: &Path) -> PathBuf {
    let mut name = output.file_name().unwrap_or_default().to_os_string();
    name.push(".manifest.json");
    output.with_file_name(name)
}

/// Writes every output, then one manifest per output.
pub fn write_outputs(
    command: &'static str,
    config: &impl Serialize,
    inputs: &[&Path],
    seeds: Vec<u64>,
    started_unix: u64,
    outputs: &[(PathBuf, Vec<u8>)],
) -> Result<(), Fail> {
    let inputs = inputs.iter().map(|p| digest_file(p)).collect::<Result<Vec<_>, _>>()?;
    let config = serde_json::to_value(config).map_err(|e| Fail::Validation(e.to_string()))?;
    for (path, bytes) in outputs {
        write_atomic(path, bytes)?;
    }
    let manifest = RunManifest {
        tool: env!("CARGO_PKG_NAME"),
        version: env!("CARGO_PKG_VERSION"),
        command,
        config,
        inputs,
        outputs: outputs.iter().map(|(p, _)| p.clone()).collect(),
        seeds,
        started_unix,
        finished_unix: unix_now(),
    };
    let mut bytes = serde_json::to_vec_pretty(&manifest).map_err(|e| Fail::Validation(e.to_string()))?;
    bytes.push(b'\n');
    for (path, _) in outputs {
        write_atomic(&manifest_path(path), &bytes)?;
    }
    Ok(())
}
