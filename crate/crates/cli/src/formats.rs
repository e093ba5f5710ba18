//! On-disk formats.
//!
//! Binary container: a 64-byte header (`USOT0001`, then little-endian `u32`
//! dim, M, N, Q, channel count and three reserved words, zero padded) followed
//! by the channels as little-endian `f64`. Trajectories carry four channels
//! `ρ_s, m_s, n_s, H_c` in the grid's flat index order; `n_s` is empty in 1D.
//! Density files carry one channel of `M·N` values with `Q = 0`.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use usot::geometry::MarkovKernel;
use usot::grid::{GridSpec, StaggeredField};

use crate::failure::Failure;

pub const MAGIC: &[u8; 8] = b"USOT0001";
pub const HEADER_LEN: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Header {
    pub dim: u32,
    pub m: u32,
    pub n: u32,
    pub q: u32,
    pub channels: u32,
}

impl Header {
    fn encode(&self) -> [u8; HEADER_LEN] {
        let mut out = [0u8; HEADER_LEN];
        out[..8].copy_from_slice(MAGIC);
        for (i, v) in [self.dim, self.m, self.n, self.q, self.channels].iter().enumerate() {
            out[8 + 4 * i..12 + 4 * i].copy_from_slice(&v.to_le_bytes());
        }
        out
    }

    fn decode(bytes: &[u8]) -> Result<Self, Failure> {
        if bytes.len() < HEADER_LEN || &bytes[..8] != MAGIC {
            return Err(Failure::ingest("not a USOT0001 container"));
        }
        let word = |i: usize| u32::from_le_bytes(bytes[8 + 4 * i..12 + 4 * i].try_into().unwrap());
        Ok(Self {
            dim: word(0),
            m: word(1),
            n: word(2),
            q: word(3),
            channels: word(4),
        })
    }
}

fn encode(header: Header, channels: &[&[f64]]) -> Vec<u8> {
    let total: usize = channels.iter().map(|c| c.len()).sum();
    let mut out = Vec::with_capacity(HEADER_LEN + 8 * total);
    out.extend_from_slice(&header.encode());
    for c in channels {
        for v in c.iter() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

fn decode_payload(bytes: &[u8], lens: &[usize]) -> Result<Vec<Vec<f64>>, Failure> {
    let body = &bytes[HEADER_LEN..];
    let total: usize = lens.iter().sum();
    if body.len() != 8 * total {
        return Err(Failure::ingest(format!(
            "payload has {} bytes, expected {}",
            body.len(),
            8 * total
        )));
    }
    let mut vals = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()));
    Ok(lens.iter().map(|&l| vals.by_ref().take(l).collect()).collect())
}

fn grid_header(g: &GridSpec, q: usize, channels: u32) -> Header {
    Header {
        dim: g.dim() as u32,
        m: g.m() as u32,
        n: g.n() as u32,
        q: q as u32,
        channels,
    }
}

/// Staggered unknowns and source on one grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub grid: GridSpec,
    pub u: StaggeredField,
    pub h: Vec<f64>,
}

impl Trajectory {
    pub fn to_bytes(&self) -> Vec<u8> {
        let g = &self.grid;
        encode(
            grid_header(g, g.q(), 4),
            &[&self.u.rho, &self.u.m, &self.u.n, &self.h],
        )
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, Failure> {
        let h = Header::decode(bytes)?;
        if h.channels != 4 {
            return Err(Failure::ingest(format!("trajectory needs 4 channels, got {}", h.channels)));
        }
        let g = GridSpec::new(h.dim as usize, h.m as usize, h.n as usize, h.q as usize)
            .map_err(|e| Failure::ingest(e.to_string()))?;
        let mut ch = decode_payload(bytes, &[g.rho_len(), g.m_len(), g.n_len(), g.centered_len()])?;
        let hc = ch.pop().unwrap();
        let n = ch.pop().unwrap();
        let m = ch.pop().unwrap();
        let rho = ch.pop().unwrap();
        Ok(Self {
            grid: g,
            u: StaggeredField { m, n, rho },
            h: hc,
        })
    }
}

pub fn density_to_bytes(g: &GridSpec, values: &[f64]) -> Vec<u8> {
    encode(grid_header(g, 0, 1), &[values])
}

/// Reads a density file and checks it against the spatial grid of `g`.
pub fn density_from_bytes(bytes: &[u8], g: &GridSpec) -> Result<Vec<f64>, Failure> {
    let h = Header::decode(bytes)?;
    if h.channels != 1 || h.q != 0 {
        return Err(Failure::ingest("density file needs one channel and Q = 0"));
    }
    if (h.dim, h.m, h.n) != (g.dim() as u32, g.m() as u32, g.n() as u32) {
        return Err(Failure::ingest(format!(
            "density grid {}D {}×{} does not match {}D {}×{}",
            h.dim,
            h.m,
            h.n,
            g.dim(),
            g.m(),
            g.n()
        )));
    }
    Ok(decode_payload(bytes, &[g.spatial_len()])?.pop().unwrap())
}

/// Sparse Markov kernel from spatial cells to secondary support points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelFile {
    pub rows: usize,
    pub support: Vec<Vec<f64>>,
    /// `(row, column, weight)`; rows are renormalized to sum to one.
    pub entries: Vec<(usize, usize, f64)>,
}

impl KernelFile {
    pub fn load(path: &Path) -> Result<MarkovKernel, Failure> {
        let text = fs::read_to_string(path)
            .map_err(|e| Failure::io(format!("cannot read {}: {e}", path.display())))?;
        let k: Self = serde_json::from_str(&text).map_err(|e| Failure::ingest(e.to_string()))?;
        MarkovKernel::from_triplets(k.rows, k.support, &k.entries).map_err(Failure::from)
    }
}

/// 8-bit binary PGM of one density slice, min-max normalized; row `N−1` on top.
pub fn pgm(g: &GridSpec, slice: &[f64]) -> (Vec<u8>, f64, f64) {
    let lo = slice.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = slice.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let (w, h) = (g.m(), g.n());
    let mut out = format!("P5\n{w} {h}\n255\n").into_bytes();
    for j in (0..h).rev() {
        for i in 0..w {
            let v = slice[j * w + i];
            let s = if hi > lo { (v - lo) / (hi - lo) } else { 0.0 };
            out.push((s * 255.0).round().clamp(0.0, 255.0) as u8);
        }
    }
    (out, lo, hi)
}

/// Writes through a temporary file in the same directory, then renames.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), Failure> {
    let err = |e: std::io::Error| Failure::io(format!("cannot write {}: {e}", path.display()));
    let dir = path.parent().unwrap_or(Path::new("."));
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("out");
    let tmp = dir.join(format!(".{name}.tmp"));
    {
        let mut f = fs::File::create(&tmp).map_err(err)?;
        f.write_all(bytes).map_err(err)?;
        f.sync_all().map_err(err)?;
    }
    fs::rename(&tmp, path).map_err(err)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_is_64_bytes_with_magic() {
        let g = GridSpec::new_2d(3, 4, 5).unwrap();
        let b = density_to_bytes(&g, &vec![0.5; 12]);
        assert_eq!(b.len(), 64 + 8 * 12);
        assert_eq!(&b[..8], b"USOT0001");
        assert_eq!(u32::from_le_bytes(b[8..12].try_into().unwrap()), 2);
        assert_eq!(u32::from_le_bytes(b[12..16].try_into().unwrap()), 3);
        assert_eq!(u32::from_le_bytes(b[16..20].try_into().unwrap()), 4);
        assert_eq!(u32::from_le_bytes(b[20..24].try_into().unwrap()), 0);
        assert_eq!(u32::from_le_bytes(b[24..28].try_into().unwrap()), 1);
        assert!(b[28..64].iter().all(|x| *x == 0));
    }

    #[test]
    fn density_rejects_mismatched_grid() {
        let g = GridSpec::new_1d(8, 4).unwrap();
        let b = density_to_bytes(&g, &[1.0; 8]);
        assert_eq!(density_from_bytes(&b, &g).unwrap(), vec![1.0; 8]);
        let other = GridSpec::new_1d(9, 4).unwrap();
        assert!(density_from_bytes(&b, &other).is_err());
        assert!(density_from_bytes(&b[..70], &g).is_err());
    }

    #[test]
    fn pgm_normalizes_and_flips_rows() {
        let g = GridSpec::new_2d(2, 2, 2).unwrap();
        let (img, lo, hi) = pgm(&g, &[0.0, 1.0, 2.0, 4.0]);
        assert_eq!((lo, hi), (0.0, 4.0));
        let body = &img[img.len() - 4..];
        assert_eq!(body, &[128, 255, 0, 64]);
    }
}
