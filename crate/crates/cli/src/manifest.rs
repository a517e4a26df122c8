//! Run manifest: one line per artifact with its SHA-256 digest and size,
//! plus a completeness marker.

use std::io::Write;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

pub fn file_digest(path: &Path) -> std::io::Result<(String, u64)> {
    let bytes = std::fs::read(path)?;
    let mut hasher = Sha256::new();
    hasher.update(&bytes);
    let digest = hasher.finalize();
    let hex: String = digest.iter().map(|b| format!("{b:02x}")).collect();
    Ok((hex, bytes.len() as u64))
}

/// Write `MANIFEST` into `dir`, listing the given artifacts (paths must be
/// inside `dir`). `status` is "complete" or "incomplete: failed at ...".
pub fn write_manifest(
    dir: &Path,
    artifacts: &[PathBuf],
    status: &str,
) -> std::io::Result<PathBuf> {
    let path = dir.join("MANIFEST");
    let mut f = std::io::BufWriter::new(std::fs::File::create(&path)?);
    writeln!(f, "status: {status}")?;
    writeln!(f, "artifacts: {}", artifacts.len())?;
    for a in artifacts {
        let rel = a.strip_prefix(dir).unwrap_or(a);
        let (hex, size) = file_digest(a)?;
        writeln!(f, "{hex}  {size:>10}  {}", rel.display())?;
    }
    Ok(path)
}
