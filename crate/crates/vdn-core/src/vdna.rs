//! Portable binary array format.
//!
//! Layout: magic bytes `"VDNA"`, one version byte (currently 1), one byte for
//! the number of dimensions, `ndim` little-endian `u32` dims, then the payload
//! as little-endian `f32`. Round-trips are bit-exact, which the prior fields,
//! dataset sigma maps and checkpoints all rely on.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::Array3;

use crate::error::{Error, Result};
use crate::tensor::ImageTensor;

pub const MAGIC: [u8; 4] = *b"VDNA";
pub const VERSION: u8 = 1;

/// An array of arbitrary rank as stored on disk.
#[derive(Clone, Debug, PartialEq)]
pub struct RawArray {
    pub dims: Vec<u32>,
    pub data: Vec<f32>,
}

impl RawArray {
    pub fn new(dims: Vec<u32>, data: Vec<f32>) -> Result<Self> {
        let expect: usize = dims.iter().map(|&d| d as usize).product();
        if dims.is_empty() || dims.iter().any(|&d| d == 0) {
            return Err(Error::InvalidParam(format!("bad dims {dims:?}")));
        }
        if expect != data.len() {
            return Err(Error::InvalidParam(format!(
                "dims {dims:?} imply {expect} elements, got {}",
                data.len()
            )));
        }
        Ok(Self { dims, data })
    }
}

pub fn write_raw(path: &Path, arr: &RawArray) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    w.write_all(&MAGIC).map_err(io)?;
    w.write_all(&[VERSION, arr.dims.len() as u8]).map_err(io)?;
    for &d in &arr.dims {
        w.write_all(&d.to_le_bytes()).map_err(io)?;
    }
    for &v in &arr.data {
        w.write_all(&v.to_le_bytes()).map_err(io)?;
    }
    w.flush().map_err(io)
}

pub fn read_raw(path: &Path) -> Result<RawArray> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(file);
    let bad = |msg: &str| Error::Format {
        path: path.to_path_buf(),
        msg: msg.to_string(),
    };

    let mut head = [0u8; 6];
    r.read_exact(&mut head)
        .map_err(|_| bad("truncated header"))?;
    if head[..4] != MAGIC {
        return Err(bad("wrong magic"));
    }
    if head[4] != VERSION {
        return Err(bad(&format!("unsupported version {}", head[4])));
    }
    let ndim = head[5] as usize;
    if ndim == 0 || ndim > 8 {
        return Err(bad(&format!("implausible ndim {ndim}")));
    }

    let mut dims = Vec::with_capacity(ndim);
    let mut buf4 = [0u8; 4];
    for _ in 0..ndim {
        r.read_exact(&mut buf4).map_err(|_| bad("truncated dims"))?;
        dims.push(u32::from_le_bytes(buf4));
    }
    if dims.iter().any(|&d| d == 0) {
        return Err(bad("zero dimension"));
    }
    let count = dims
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d as usize))
        .ok_or_else(|| bad("dimension overflow"))?;

    let mut payload = vec![0u8; count * 4];
    r.read_exact(&mut payload)
        .map_err(|_| bad("payload shorter than header dims"))?;
    let mut trailing = [0u8; 1];
    if r.read(&mut trailing).map_err(|e| Error::io(path, e))? != 0 {
        return Err(bad("trailing bytes after payload"));
    }

    let data = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    Ok(RawArray { dims, data })
}

/// Save a `(channels, height, width)` tensor as a 3-dimensional array file.
pub fn save_array(t: &ImageTensor, path: &Path) -> Result<()> {
    let (c, h, w) = t.shape();
    let arr = RawArray {
        dims: vec![c as u32, h as u32, w as u32],
        data: t.as_slice().to_vec(),
    };
    write_raw(path, &arr)
}

/// Load a 3-dimensional array file as an [`ImageTensor`].
pub fn load_array(path: &Path) -> Result<ImageTensor> {
    let raw = read_raw(path)?;
    if raw.dims.len() != 3 {
        return Err(Error::Format {
            path: path.to_path_buf(),
            msg: format!("expected 3 dims for a tensor, got {}", raw.dims.len()),
        });
    }
    let (c, h, w) = (
        raw.dims[0] as usize,
        raw.dims[1] as usize,
        raw.dims[2] as usize,
    );
    let data = Array3::from_shape_vec((c, h, w), raw.data)
        .expect("length validated against dims on read");
    ImageTensor::new(data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn tmp(name: &str) -> std::path::PathBuf {
        let dir = std::env::temp_dir().join("vdna-tests");
        std::fs::create_dir_all(&dir).unwrap();
        dir.join(name)
    }

    #[test]
    fn wrong_magic_is_rejected() {
        let path = tmp("wrong_magic.vdna");
        std::fs::write(&path, b"NOPE\x01\x01\x01\x00\x00\x00\x00\x00\x80\x3f").unwrap();
        match load_array(&path) {
            Err(Error::Format { msg, .. }) => assert!(msg.contains("magic")),
            other => panic!("expected format error, got {other:?}"),
        }
    }

    #[test]
    fn header_consistency_is_checked() {
        // 3 dims (1,4,4) with only 15 floats: rejected; with 16: accepted.
        let path = tmp("short_payload.vdna");
        let mut bytes = Vec::new();
        bytes.extend_from_slice(b"VDNA");
        bytes.push(1);
        bytes.push(3);
        for d in [1u32, 4, 4] {
            bytes.extend_from_slice(&d.to_le_bytes());
        }
        for _ in 0..15 {
            bytes.extend_from_slice(&1.0f32.to_le_bytes());
        }
        std::fs::write(&path, &bytes).unwrap();
        assert!(load_array(&path).is_err());

        bytes.extend_from_slice(&1.0f32.to_le_bytes());
        std::fs::write(&path, &bytes).unwrap();
        let t = load_array(&path).unwrap();
        assert_eq!(t.shape(), (1, 4, 4));
    }

    #[test]
    fn missing_file_is_io_error() {
        assert!(matches!(
            load_array(Path::new("/nonexistent/x.vdna")),
            Err(Error::Io { .. })
        ));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        // Round-trip is bit-exact for arbitrary finite payloads.
        #[test]
        fn round_trip_bit_exact(
            c in 1usize..4, h in 1usize..9, w in 1usize..9,
            seed in any::<u64>(),
        ) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let data: Vec<f32> = (0..c * h * w)
                .map(|_| f32::from_bits(rng.gen::<u32>()))
                .map(|v| if v.is_finite() { v } else { 0.25 })
                .collect();
            let t = ImageTensor::new(
                ndarray::Array3::from_shape_vec((c, h, w), data).unwrap()
            ).unwrap();
            let path = tmp(&format!("round_trip_{seed}.vdna"));
            save_array(&t, &path).unwrap();
            let back = load_array(&path).unwrap();
            prop_assert_eq!(back.shape(), t.shape());
            for (a, b) in back.as_slice().iter().zip(t.as_slice()) {
                prop_assert_eq!(a.to_bits(), b.to_bits());
            }
            std::fs::remove_file(&path).ok();
        }
    }
}
