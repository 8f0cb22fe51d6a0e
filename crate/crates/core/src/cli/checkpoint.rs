//! Named-tensor checkpoint files.
//!
//! ```text
//! "SRPP" | version: u32 | count: u64 | count × (name_len: u64 | UTF-8 name | tensor)
//! ```
//!
//! Integers are little-endian; each tensor uses the layout of
//! [`crate::tensor::serialize`].

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::params::Parameters;
use crate::tensor::serialize::{read_tensor, write_tensor, ByteReader};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"SRPP";
pub const FORMAT_VERSION: u32 = 1;

pub fn encode(tensors: &[(String, &Tensor)]) -> Vec<u8> {
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(tensors.len() as u64).to_le_bytes());
    for (name, t) in tensors {
        buf.extend_from_slice(&(name.len() as u64).to_le_bytes());
        buf.extend_from_slice(name.as_bytes());
        write_tensor(&mut buf, t).expect("writing to a Vec cannot fail");
    }
    buf
}

pub fn encode_params<P: Parameters>(params: &P) -> Vec<u8> {
    encode(&params.named(""))
}

pub fn decode(bytes: &[u8]) -> Result<Vec<(String, Tensor)>> {
    let mut r = ByteReader::new(bytes);
    if r.bytes(4, "magic")? != MAGIC {
        return Err(r.fail(0, "not a checkpoint: bad magic bytes"));
    }
    let at = r.offset();
    let version = r.u32("format version")?;
    if version != FORMAT_VERSION {
        return Err(r.fail(
            at,
            format!("unsupported format version {version}, expected {FORMAT_VERSION}"),
        ));
    }
    let count = r.u64("tensor count")?;
    let mut out = Vec::new();
    for _ in 0..count {
        let at = r.offset();
        let len = r.u64("name length")?;
        if len > r.remaining() as u64 {
            return Err(r.fail(
                at,
                format!(
                    "name length {len} exceeds the remaining {} bytes",
                    r.remaining()
                ),
            ));
        }
        let name = std::str::from_utf8(r.bytes(len as usize, "name")?)
            .map_err(|_| r.fail(at + 8, "tensor name is not UTF-8"))?
            .to_string();
        out.push((name, read_tensor(&mut r)?));
    }
    if r.remaining() != 0 {
        return Err(r.fail(r.offset(), format!("{} trailing bytes", r.remaining())));
    }
    Ok(out)
}

/// Overwrites every tensor of `params` with the entry of the same name.
/// Names and shapes must match exactly.
pub fn load_into<P: Parameters>(params: &mut P, entries: Vec<(String, Tensor)>) -> Result<()> {
    let expected: Vec<(String, Vec<usize>)> = params
        .named("")
        .into_iter()
        .map(|(n, t)| (n, t.shape().to_vec()))
        .collect();
    if expected.len() != entries.len() {
        return Err(Error::Config(format!(
            "checkpoint holds {} tensors, model expects {}",
            entries.len(),
            expected.len()
        )));
    }
    for ((name, shape), (got, t)) in expected.iter().zip(&entries) {
        if name != got || shape.as_slice() != t.shape() {
            return Err(Error::Config(format!(
                "checkpoint tensor {got} {:?} does not match model tensor {name} {shape:?}",
                t.shape()
            )));
        }
    }
    let mut it = entries.into_iter();
    params.visit_mut("", &mut |_, t| *t = it.next().unwrap().1);
    Ok(())
}

/// Writes `bytes` to a temporary sibling and renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    let name = path
        .file_name()
        .ok_or_else(|| Error::Config(format!("{} is not a file path", path.display())))?;
    let tmp = dir.join(format!(
        ".{}.tmp{}",
        name.to_string_lossy(),
        std::process::id()
    ));
    let mut f = fs::File::create(&tmp)?;
    f.write_all(bytes)?;
    f.sync_all()?;
    drop(f);
    fs::rename(&tmp, path).inspect_err(|_| {
        let _ = fs::remove_file(&tmp);
    })?;
    Ok(())
}

pub fn save<P: Parameters>(path: &Path, params: &P) -> Result<()> {
    write_atomic(path, &encode_params(params))
}

pub fn load(path: &Path) -> Result<Vec<(String, Tensor)>> {
    decode(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{DType, SeededRng};

    fn sample() -> Vec<(String, Tensor)> {
        let mut rng = SeededRng::new(5);
        vec![
            (
                "a.w".to_string(),
                Tensor::uniform(&[2, 3], -1.0, 1.0, &mut rng),
            ),
            (
                "b".to_string(),
                Tensor::uniform(&[4], -1.0, 1.0, &mut rng).to_dtype(DType::F32),
            ),
        ]
    }

    #[test]
    fn round_trip_is_bitwise() {
        let s = sample();
        let refs: Vec<(String, &Tensor)> = s.iter().map(|(n, t)| (n.clone(), t)).collect();
        let back = decode(&encode(&refs)).unwrap();
        assert_eq!(back.len(), 2);
        for ((n0, t0), (n1, t1)) in s.iter().zip(&back) {
            assert_eq!(n0, n1);
            assert!(t0.bits_eq(t1));
            assert_eq!(t0.dtype(), t1.dtype());
        }
    }

    #[test]
    fn version_mismatch_rejected() {
        let s = sample();
        let refs: Vec<(String, &Tensor)> = s.iter().map(|(n, t)| (n.clone(), t)).collect();
        let mut bytes = encode(&refs);
        bytes[4] = 9;
        let msg = decode(&bytes).unwrap_err().to_string();
        assert!(
            msg.contains("version 9") && msg.contains("offset 4"),
            "{msg}"
        );
    }

    #[test]
    fn truncation_reports_offset() {
        let s = sample();
        let refs: Vec<(String, &Tensor)> = s.iter().map(|(n, t)| (n.clone(), t)).collect();
        let bytes = encode(&refs);
        for cut in [2, 10, 20, bytes.len() - 1] {
            match decode(&bytes[..cut]) {
                Err(Error::Format { offset, .. }) => assert!(offset as usize <= cut),
                other => panic!("cut {cut}: {other:?}"),
            }
        }
    }
}
