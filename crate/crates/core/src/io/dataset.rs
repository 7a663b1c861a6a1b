//! Dataset files: a binary payload of snapshots plus a JSON manifest
//! sidecar (`<path>.json`) carrying the full generation configuration,
//! seeds, conventions, and a SHA-256 content hash of the payload.

use std::fs;
use std::io::{Cursor, Read, Write};
use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::{read_exact, read_f64, read_u32, read_u64, sha256_hex, write_f64, write_u32, write_u64, DFT_CONVENTION};
use crate::conditioning::SparseObservation;
use crate::error::{Error, Result};
use crate::field::RealField2D;
use crate::grid::Grid2D;
use crate::random::GrfSpec;
use crate::solver::{Dataset, NsConfig, Protocol, Snapshot};

const MAGIC: &[u8; 4] = b"SCLO";
const FORMAT_VERSION: u32 = 1;
const DTYPE_F64: u8 = 0;

/// Everything about a dataset that is not the field data itself.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format_version: u32,
    pub config: NsConfig,
    pub grf: GrfSpec,
    pub protocol: Protocol,
    pub root_seed: u64,
    pub dft_convention: String,
    pub content_hash: String,
}

pub fn manifest_path(path: &Path) -> PathBuf {
    let mut os = path.as_os_str().to_owned();
    os.push(".json");
    PathBuf::from(os)
}

fn write_field<W: Write>(w: &mut W, values: &Array2<f64>) -> Result<()> {
    for v in values {
        write_f64(w, *v)?;
    }
    Ok(())
}

fn read_field<R: Read>(r: &mut R, n: usize) -> Result<Array2<f64>> {
    let mut values = Array2::zeros((n, n));
    for v in values.iter_mut() {
        *v = read_f64(r)?;
    }
    Ok(values)
}

fn encode_payload(ds: &Dataset) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    let w = &mut buf;
    w.extend_from_slice(MAGIC);
    write_u32(w, FORMAT_VERSION)?;
    w.push(DTYPE_F64);
    write_u32(w, ds.protocol.target_n as u32)?;
    write_u32(w, ds.protocol.sparse_n as u32)?;
    write_u64(w, ds.snapshots.len() as u64)?;
    for snap in &ds.snapshots {
        write_u32(w, snap.trajectory as u32)?;
        write_f64(w, snap.time)?;
        write_field(w, snap.omega.values())?;
        write_field(w, snap.g_truth.values())?;
        write_field(w, snap.h_truth.values())?;
        write_field(w, snap.sparse_g.values())?;
        write_field(w, snap.sparse_h.values())?;
    }
    Ok(buf)
}

/// Write the payload and its manifest sidecar; returns the content hash.
pub fn write_dataset(path: &Path, ds: &Dataset) -> Result<String> {
    let payload = encode_payload(ds)?;
    let content_hash = sha256_hex(&payload);
    fs::write(path, &payload)?;

    let manifest = DatasetManifest {
        format_version: FORMAT_VERSION,
        config: ds.config,
        grf: ds.grf,
        protocol: ds.protocol,
        root_seed: ds.root_seed,
        dft_convention: DFT_CONVENTION.to_string(),
        content_hash: content_hash.clone(),
    };
    let json = serde_json::to_string_pretty(&manifest)
        .map_err(|e| Error::Format(format!("manifest serialization failed: {e}")))?;
    fs::write(manifest_path(path), json)?;
    Ok(content_hash)
}

/// Read and verify a dataset: the manifest hash must match the payload,
/// and the header dimensions must match the manifest protocol.
pub fn read_dataset(path: &Path) -> Result<Dataset> {
    let manifest_text = fs::read_to_string(manifest_path(path))?;
    let manifest: DatasetManifest = serde_json::from_str(&manifest_text)
        .map_err(|e| Error::Format(format!("bad dataset manifest: {e}")))?;

    let payload = fs::read(path)?;
    let hash = sha256_hex(&payload);
    if hash != manifest.content_hash {
        return Err(Error::Format(format!(
            "content hash mismatch: manifest says {}, payload is {hash}",
            manifest.content_hash
        )));
    }

    let mut r = Cursor::new(payload.as_slice());
    let magic = read_exact::<_, 4>(&mut r)?;
    if &magic != MAGIC {
        return Err(Error::Format("not a dataset file (bad magic)".into()));
    }
    let version = read_u32(&mut r)?;
    if version != FORMAT_VERSION {
        return Err(Error::Format(format!(
            "unsupported dataset format version {version}"
        )));
    }
    let dtype = read_exact::<_, 1>(&mut r)?[0];
    if dtype != DTYPE_F64 {
        return Err(Error::Format(format!("unsupported dtype code {dtype}")));
    }
    let n = read_u32(&mut r)? as usize;
    let ns = read_u32(&mut r)? as usize;
    if n != manifest.protocol.target_n || ns != manifest.protocol.sparse_n {
        return Err(Error::Format(format!(
            "header dims {n}/{ns} disagree with the manifest protocol {}/{}",
            manifest.protocol.target_n, manifest.protocol.sparse_n
        )));
    }
    let count = read_u64(&mut r)? as usize;
    let record_bytes = 4 + 8 + 8 * (3 * n * n + 2 * ns * ns);
    let expected = 4 + 4 + 1 + 4 + 4 + 8 + count * record_bytes;
    if payload.len() != expected {
        return Err(Error::Format(format!(
            "payload is {} bytes, header implies {expected}",
            payload.len()
        )));
    }

    let length = manifest.config.grid.length();
    let grid = Grid2D::with_length(n, length)?;
    let mut snapshots = Vec::with_capacity(count);
    for _ in 0..count {
        let trajectory = read_u32(&mut r)? as usize;
        let time = read_f64(&mut r)?;
        let omega = RealField2D::from_values(grid, read_field(&mut r, n)?)?;
        let g_truth = RealField2D::from_values(grid, read_field(&mut r, n)?)?;
        let h_truth = RealField2D::from_values(grid, read_field(&mut r, n)?)?;
        let sparse_g = SparseObservation::from_values(ns, n, length, read_field(&mut r, ns)?)?;
        let sparse_h = SparseObservation::from_values(ns, n, length, read_field(&mut r, ns)?)?;
        snapshots.push(Snapshot {
            trajectory,
            time,
            omega,
            g_truth,
            h_truth,
            sparse_g,
            sparse_h,
        });
    }

    Ok(Dataset {
        config: manifest.config,
        grf: manifest.grf,
        protocol: manifest.protocol,
        root_seed: manifest.root_seed,
        snapshots,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::random::SeedStream;
    use crate::solver::generate_dataset;

    fn tiny_dataset() -> Dataset {
        let grid = Grid2D::new(16).unwrap();
        let cfg = NsConfig::new(grid);
        let protocol = Protocol {
            source_n: 16,
            target_n: 8,
            sparse_n: 4,
            trajectories: 2,
            train_trajectories: 1,
            warmup_time: 0.01,
            horizon_time: 0.05,
            record_every: 10,
        };
        generate_dataset(&cfg, &GrfSpec::default(), &protocol, SeedStream::root(77)).unwrap()
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("data.sclo");
        let ds = tiny_dataset();

        let hash1 = write_dataset(&path, &ds).unwrap();
        let loaded = read_dataset(&path).unwrap();
        assert_eq!(loaded.snapshots.len(), ds.snapshots.len());
        assert_eq!(loaded.root_seed, ds.root_seed);
        for (a, b) in ds.snapshots.iter().zip(loaded.snapshots.iter()) {
            assert_eq!(a.trajectory, b.trajectory);
            assert_eq!(a.time, b.time);
            assert_eq!(a.omega.values(), b.omega.values());
            assert_eq!(a.g_truth.values(), b.g_truth.values());
            assert_eq!(a.h_truth.values(), b.h_truth.values());
            assert_eq!(a.sparse_g.values(), b.sparse_g.values());
            assert_eq!(a.sparse_h.values(), b.sparse_h.values());
        }

        let path2 = dir.path().join("data2.sclo");
        let hash2 = write_dataset(&path2, &loaded).unwrap();
        assert_eq!(hash1, hash2);
        assert_eq!(fs::read(&path).unwrap(), fs::read(&path2).unwrap());
    }

    #[test]
    fn corruption_is_detected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("data.sclo");
        write_dataset(&path, &tiny_dataset()).unwrap();

        let mut bytes = fs::read(&path).unwrap();
        let at = bytes.len() / 2;
        bytes[at] ^= 0xff;
        fs::write(&path, &bytes).unwrap();

        let err = read_dataset(&path).unwrap_err();
        assert!(err.to_string().contains("hash"), "{err}");
    }

    #[test]
    fn truncation_is_detected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("data.sclo");
        write_dataset(&path, &tiny_dataset()).unwrap();

        let bytes = fs::read(&path).unwrap();
        let cut = &bytes[..bytes.len() - 9];
        fs::write(&path, cut).unwrap();
        assert!(read_dataset(&path).is_err());
    }

    #[test]
    fn missing_manifest_fails_cleanly() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("data.sclo");
        write_dataset(&path, &tiny_dataset()).unwrap();
        fs::remove_file(manifest_path(&path)).unwrap();
        assert!(read_dataset(&path).is_err());
    }
}
