//! Versioned binary checkpoint files.
//!
//! Layout: magic `PSNC`, format version (u32 LE), a kind string, a JSON
//! metadata block (architecture descriptor, normalization stats, anything
//! the owning model needs to rebuild itself), then the parameter block as
//! little-endian f32 in canonical flat order. Round-trips are bit-exact.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};

use super::dense::Activation;
use super::{DenseNet, Parameterized, RecurrentNet};

pub const MAGIC: &[u8; 4] = b"PSNC";
pub const FORMAT_VERSION: u32 = 1;

pub fn write_checkpoint<M: Serialize>(
    path: &Path,
    kind: &str,
    meta: &M,
    params: &[f64],
) -> Result<()> {
    let meta_json = serde_json::to_vec(meta)
        .map_err(|e| SimError::CorruptCheckpoint(format!("meta encode: {e}")))?;
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&FORMAT_VERSION.to_le_bytes())?;
    let kind_bytes = kind.as_bytes();
    w.write_all(&(kind_bytes.len() as u16).to_le_bytes())?;
    w.write_all(kind_bytes)?;
    w.write_all(&(meta_json.len() as u32).to_le_bytes())?;
    w.write_all(&meta_json)?;
    w.write_all(&(params.len() as u64).to_le_bytes())?;
    for &p in params {
        w.write_all(&(p as f32).to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_checkpoint<M: DeserializeOwned>(path: &Path, kind: &str) -> Result<(M, Vec<f64>)> {
    let mut r = BufReader::new(File::open(path)?);

    let mut magic = [0u8; 4];
    read_exact(&mut r, &mut magic, "magic")?;
    if &magic != MAGIC {
        return Err(SimError::CorruptCheckpoint("bad magic bytes".into()));
    }

    let mut version = [0u8; 4];
    read_exact(&mut r, &mut version, "version")?;
    let version = u32::from_le_bytes(version);
    if version != FORMAT_VERSION {
        return Err(SimError::CheckpointVersion { found: version, expected: FORMAT_VERSION });
    }

    let mut kind_len = [0u8; 2];
    read_exact(&mut r, &mut kind_len, "kind length")?;
    let mut kind_bytes = vec![0u8; u16::from_le_bytes(kind_len) as usize];
    read_exact(&mut r, &mut kind_bytes, "kind")?;
    let found_kind = String::from_utf8(kind_bytes)
        .map_err(|_| SimError::CorruptCheckpoint("kind not utf8".into()))?;
    if found_kind != kind {
        return Err(SimError::ArchMismatch(format!(
            "checkpoint holds `{found_kind}`, expected `{kind}`"
        )));
    }

    let mut meta_len = [0u8; 4];
    read_exact(&mut r, &mut meta_len, "meta length")?;
    let mut meta_bytes = vec![0u8; u32::from_le_bytes(meta_len) as usize];
    read_exact(&mut r, &mut meta_bytes, "meta")?;
    let meta: M = serde_json::from_slice(&meta_bytes)
        .map_err(|e| SimError::CorruptCheckpoint(format!("meta decode: {e}")))?;

    let mut count = [0u8; 8];
    read_exact(&mut r, &mut count, "parameter count")?;
    let count = u64::from_le_bytes(count) as usize;
    let mut params = Vec::with_capacity(count);
    let mut buf = [0u8; 4];
    for _ in 0..count {
        read_exact(&mut r, &mut buf, "parameters")?;
        params.push(f32::from_le_bytes(buf) as f64);
    }

    let mut trailing = [0u8; 1];
    if r.read(&mut trailing)? != 0 {
        return Err(SimError::CorruptCheckpoint("trailing bytes after parameters".into()));
    }
    Ok((meta, params))
}

fn read_exact(r: &mut impl Read, buf: &mut [u8], what: &str) -> Result<()> {
    r.read_exact(buf)
        .map_err(|_| SimError::CorruptCheckpoint(format!("truncated while reading {what}")))
}

#[derive(Serialize, Deserialize)]
struct DenseMeta {
    dims: Vec<usize>,
    acts: Vec<Activation>,
}

pub fn save_dense(net: &DenseNet, path: &Path) -> Result<()> {
    let meta = DenseMeta { dims: net.dims(), acts: net.activations() };
    write_checkpoint(path, "dense", &meta, &net.params())
}

pub fn load_dense(path: &Path) -> Result<DenseNet> {
    let (meta, params): (DenseMeta, _) = read_checkpoint(path, "dense")?;
    let mut net = DenseNet::zeros(&meta.dims, &meta.acts)?;
    net.set_params(&params)?;
    Ok(net)
}

#[derive(Serialize, Deserialize)]
struct RnnMeta {
    input_dim: usize,
    hidden: Vec<usize>,
    head_out: usize,
    head_act: Activation,
}

pub fn save_rnn(net: &RecurrentNet, path: &Path) -> Result<()> {
    let meta = RnnMeta {
        input_dim: net.input_dim(),
        hidden: net.hidden_sizes(),
        head_out: net.output_dim(),
        head_act: net.head.act,
    };
    write_checkpoint(path, "rnn", &meta, &net.params())
}

pub fn load_rnn(path: &Path) -> Result<RecurrentNet> {
    let (meta, params): (RnnMeta, _) = read_checkpoint(path, "rnn")?;
    let mut net = RecurrentNet::zeros(meta.input_dim, &meta.hidden, meta.head_out, meta.head_act)?;
    net.set_params(&params)?;
    Ok(net)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::seeded_rng;
    use rand::Rng;

    #[test]
    fn dense_roundtrip_preserves_outputs_at_stored_precision() {
        let mut rng = seeded_rng(7);
        let net = DenseNet::new(&[4, 6, 2], &[Activation::Relu, Activation::Sigmoid], &mut rng)
            .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.ckpt");
        save_dense(&net, &path).unwrap();
        let loaded = load_dense(&path).unwrap();

        for _ in 0..50 {
            let x: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let a = net.forward(&x).unwrap();
            let b = loaded.forward(&x).unwrap();
            for (av, bv) in a.iter().zip(&b) {
                assert!((av - bv).abs() < 1e-6, "{av} vs {bv}");
            }
        }

        // a second save of the loaded net is byte-identical
        let path2 = dir.path().join("net2.ckpt");
        save_dense(&loaded, &path2).unwrap();
        let reloaded = load_dense(&path2).unwrap();
        assert_eq!(loaded.params(), reloaded.params());
        assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&path2).unwrap());
    }

    #[test]
    fn rnn_roundtrip() {
        let mut rng = seeded_rng(8);
        let net = RecurrentNet::new(3, &[4, 2], 3, Activation::Sigmoid, &mut rng).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("rnn.ckpt");
        save_rnn(&net, &path).unwrap();
        let loaded = load_rnn(&path).unwrap();
        let inputs = vec![vec![0.1, -0.2, 0.3], vec![0.0, 0.5, -0.5]];
        let a = net.forward(&inputs).unwrap();
        let b = loaded.forward(&inputs).unwrap();
        for (ra, rb) in a.iter().zip(&b) {
            for (av, bv) in ra.iter().zip(rb) {
                assert!((av - bv).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn wrong_version_is_a_version_error() {
        let mut rng = seeded_rng(9);
        let net = DenseNet::new(&[2, 1], &[Activation::Identity], &mut rng).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.ckpt");
        save_dense(&net, &path).unwrap();

        let mut bytes = std::fs::read(&path).unwrap();
        bytes[4] = 99; // bump the version field
        std::fs::write(&path, &bytes).unwrap();
        match load_dense(&path) {
            Err(SimError::CheckpointVersion { found: 99, .. }) => {}
            other => panic!("expected version error, got {other:?}"),
        }
    }

    #[test]
    fn truncated_file_is_corrupt() {
        let mut rng = seeded_rng(10);
        let net = DenseNet::new(&[2, 1], &[Activation::Identity], &mut rng).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.ckpt");
        save_dense(&net, &path).unwrap();

        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 3]).unwrap();
        match load_dense(&path) {
            Err(SimError::CorruptCheckpoint(_)) => {}
            other => panic!("expected corrupt error, got {other:?}"),
        }
    }

    #[test]
    fn bad_magic_is_corrupt() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("junk.ckpt");
        std::fs::write(&path, b"not a checkpoint").unwrap();
        assert!(matches!(load_dense(&path), Err(SimError::CorruptCheckpoint(_))));
    }
}
