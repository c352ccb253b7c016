//! `MOORELYR` layer checkpoints.
//!
//! Layout (little-endian): magic `MOORELYR`, `u32` version (1), six `u64`
//! dims `D_out, D, D_t, D_s, L, K`, then the matrix payloads (version, rows,
//! cols, data; no magic) of `U, V, T, P, Q, Γ, R`, then `σ` as a `u64`
//! length followed by the values.
//!
//! A merged layer is stored as an `L = 0` layer whose `V` slot holds
//! `V'ᵀ = Hᵀ V`; loading it yields a layer with the same outputs.

use std::io::{Read, Write};
use std::path::Path;

use super::{MooreLayer, Router};
use crate::error::{MooreError, Result};
use crate::linalg::io::{read_f64s, read_matrix_payload, read_u64, read_version, write_f64s, write_matrix_payload, FORMAT_VERSION};
use crate::linalg::{HouseholderChain, Matrix, SvdFactors};

pub const LAYER_MAGIC: [u8; 8] = *b"MOORELYR";

pub fn write_layer<W: Write>(w: &mut W, layer: &MooreLayer) -> Result<()> {
    let dims = layer.dims();
    w.write_all(&LAYER_MAGIC)?;
    w.write_all(&FORMAT_VERSION.to_le_bytes())?;
    for v in [dims.d_out, dims.d, dims.d_t, dims.d_s, dims.l, dims.k] {
        w.write_all(&(v as u64).to_le_bytes())?;
    }
    let f = layer.factors();
    let r = layer.router();
    for m in [&f.u, &f.v, &r.t, &r.p, &r.q, &r.gamma, layer.chain().r()] {
        write_matrix_payload(w, m)?;
    }
    w.write_all(&(f.sigma.len() as u64).to_le_bytes())?;
    write_f64s(w, &f.sigma)
}

pub fn read_layer<R: Read>(r: &mut R) -> Result<MooreLayer> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if magic != LAYER_MAGIC {
        return Err(MooreError::Format(format!("bad layer magic {magic:02X?}")));
    }
    read_version(r)?;
    let mut dims = [0usize; 6];
    for d in dims.iter_mut() {
        *d = read_u64(r)? as usize;
    }
    let [d_out, d, d_t, d_s, l, k] = dims;
    let expect = [(d_out, d), (d, d), (d_t, k), (d_t, d), (d_s, d), (d_s, d), (d, l)];
    let mut mats = Vec::with_capacity(7);
    for (i, &(rows, cols)) in expect.iter().enumerate() {
        let m = read_matrix_payload(r)?;
        if m.shape() != (rows, cols) {
            return Err(MooreError::Format(format!(
                "tensor {i} has shape {:?}, header implies {rows}x{cols}",
                m.shape()
            )));
        }
        mats.push(m);
    }
    let n = read_u64(r)? as usize;
    if n != d {
        return Err(MooreError::Format(format!("sigma length {n}, expected {d}")));
    }
    let sigma = read_f64s(r, n)?;
    let mut it = mats.into_iter();
    let mut next = || it.next().expect("seven tensors");
    let (u, v, t, p, q, gamma, rmat): (Matrix, Matrix, Matrix, Matrix, Matrix, Matrix, Matrix) =
        (next(), next(), next(), next(), next(), next(), next());
    let chain = HouseholderChain::new(rmat)?;
    MooreLayer::from_parts(SvdFactors { u, sigma, v }, Router { t, p, q, gamma }, chain)
}

pub fn save_layer(path: impl AsRef<Path>, layer: &MooreLayer) -> Result<()> {
    let mut buf = Vec::new();
    write_layer(&mut buf, layer)?;
    std::fs::write(path, buf)?;
    Ok(())
}

pub fn load_layer(path: impl AsRef<Path>) -> Result<MooreLayer> {
    let bytes = std::fs::read(path)?;
    let mut cursor = bytes.as_slice();
    let layer = read_layer(&mut cursor)?;
    if !cursor.is_empty() {
        return Err(MooreError::Format(format!("{} trailing bytes", cursor.len())));
    }
    Ok(layer)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::moore::MooreConfig;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn round_trip_and_header() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let w = Matrix::random_uniform(6, 4, -1.0, 1.0, &mut rng);
        let layer = MooreLayer::moeize(&w, MooreConfig { d_t: 2, d_s: 3, l: 2, k: 2 }, 1).unwrap();
        let mut buf = Vec::new();
        write_layer(&mut buf, &layer).unwrap();
        assert_eq!(&buf[..8], &[0x4D, 0x4F, 0x4F, 0x52, 0x45, 0x4C, 0x59, 0x52]);
        assert_eq!(&buf[8..12], &1u32.to_le_bytes());
        assert_eq!(&buf[12..20], &6u64.to_le_bytes());
        assert_eq!(&buf[52..60], &2u64.to_le_bytes());
        let back = read_layer(&mut buf.as_slice()).unwrap();
        assert_eq!(back, layer);
    }

    #[test]
    fn merged_checkpoint_evaluates_the_same() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let w = Matrix::random_uniform(6, 4, -1.0, 1.0, &mut rng);
        let mut layer = MooreLayer::moeize(&w, MooreConfig { d_t: 2, d_s: 2, l: 4, k: 1 }, 1).unwrap();
        // break the pairing so H is not the identity
        layer.learnable_mut()[4].set(0, 0, 0.7);
        layer.sync().unwrap();
        let merged = layer.merge().into_layer().unwrap();
        let mut buf = Vec::new();
        write_layer(&mut buf, &merged).unwrap();
        let back = read_layer(&mut buf.as_slice()).unwrap();
        assert_eq!(back.dims().l, 0);
        let x = [0.2, -0.4, 1.0, 0.3];
        let a = layer.forward(&x, 0, None).unwrap();
        let b = back.forward(&x, 0, None).unwrap();
        assert!(crate::linalg::max_abs_diff(&a, &b) < 1e-10);
    }

    #[test]
    fn rejects_wrong_magic() {
        let mut buf = Vec::new();
        let layer = MooreLayer::moeize(&Matrix::identity(2), MooreConfig { d_t: 1, d_s: 1, l: 0, k: 1 }, 0).unwrap();
        write_layer(&mut buf, &layer).unwrap();
        buf[7] = b'T';
        assert!(matches!(read_layer(&mut buf.as_slice()), Err(MooreError::Format(_))));
    }
}
