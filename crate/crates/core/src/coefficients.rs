//! Piecewise-constant coefficient fields and their binary file format.
//!
//! Random values come from [`SplitMix64`]: the state advances by
//! `0x9E3779B97F4A7C15`, the output is mixed with the constants
//! `0xBF58476D1CE4E5B9` / `0x94D049BB133111EB` (shifts 30, 27, 31), and a
//! uniform double in `[0, 1)` is `(next_u64() >> 11) * 2^-53`. Draws are
//! consumed in row-major cell order.
//!
//! File layout (all little-endian):
//!
//! | offset | size | content                 |
//! |--------|------|-------------------------|
//! | 0      | 8    | magic `LODCOEFF`        |
//! | 8      | 4    | version (u32, = 1)      |
//! | 12     | 4    | level (u32)             |
//! | 16     | 8    | seed (u64)              |
//! | 24     | 8    | alpha (f64)             |
//! | 32     | 8    | beta (f64)              |
//! | 40     | 8*4^level | cell values (f64), row-major |

use std::path::Path;

use crate::error::{LodError, Result};
use crate::mesh::{CartesianMesh, MAX_LEVEL};

pub const COEFF_MAGIC: &[u8; 8] = b"LODCOEFF";
pub const COEFF_VERSION: u32 = 1;
const HEADER_LEN: usize = 40;

#[derive(Debug, Clone)]
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        Self { state: seed }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }
}

/// Scalar coefficient, constant on each cell of a `2^level` grid.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientField {
    level: u32,
    seed: u64,
    alpha: f64,
    beta: f64,
    cells: Vec<f64>,
}

impl CoefficientField {
    /// Builds a field and sets `(alpha, beta)` to the attained minimum and maximum.
    pub fn from_cells(level: u32, seed: u64, cells: Vec<f64>) -> Result<Self> {
        if level > MAX_LEVEL {
            return Err(LodError::Resource(format!("coefficient level {level} too large")));
        }
        if cells.len() != 1usize << (2 * level) {
            return Err(LodError::arg(format!(
                "expected {} cell values, got {}",
                1usize << (2 * level),
                cells.len()
            )));
        }
        let alpha = cells.iter().copied().fold(f64::INFINITY, f64::min);
        let beta = cells.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let field = Self {
            level,
            seed,
            alpha,
            beta,
            cells,
        };
        field.validate()?;
        Ok(field)
    }

    pub fn constant(level: u32, value: f64) -> Result<Self> {
        Self::from_cells(level, 0, vec![value; 1usize << (2 * level)])
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0) || !self.beta.is_finite() || self.alpha > self.beta {
            return Err(LodError::Validation(format!(
                "bounds must satisfy 0 < alpha <= beta < inf, got ({}, {})",
                self.alpha, self.beta
            )));
        }
        if let Some((k, v)) = self
            .cells
            .iter()
            .enumerate()
            .find(|(_, &v)| !(v >= self.alpha && v <= self.beta))
        {
            return Err(LodError::Validation(format!(
                "cell {k} has value {v} outside [{}, {}]",
                self.alpha, self.beta
            )));
        }
        Ok(())
    }

    pub fn level(&self) -> u32 {
        self.level
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn cells(&self) -> &[f64] {
        &self.cells
    }

    /// Value on each cell of `mesh`, which must be at least as fine as the field.
    pub fn on_mesh(&self, mesh: &CartesianMesh) -> Result<Vec<f64>> {
        if mesh.level() < self.level {
            return Err(LodError::arg(format!(
                "coefficient level {} is finer than mesh level {}",
                self.level,
                mesh.level()
            )));
        }
        let shift = mesh.level() - self.level;
        let nc = 1usize << self.level;
        Ok(mesh
            .elements()
            .map(|e| self.cells[(e.j >> shift) * nc + (e.i >> shift)])
            .collect())
    }

    /// Averages onto the `2^level` grid (level <= self.level).
    pub fn coarsened(&self, level: u32) -> Vec<f64> {
        assert!(level <= self.level);
        let shift = self.level - level;
        let n = 1usize << level;
        let nf = 1usize << self.level;
        let mut out = vec![0.0; n * n];
        for j in 0..nf {
            for i in 0..nf {
                out[(j >> shift) * n + (i >> shift)] += self.cells[j * nf + i];
            }
        }
        let w = 1.0 / (1usize << (2 * shift)) as f64;
        out.iter_mut().for_each(|v| *v *= w);
        out
    }
}

/// Multi-scale random field with values in `[1, 4]`.
///
/// For every scale `k = 1..=level` an iid uniform field on the `2^k` grid is
/// drawn, weighted by `2^(-k/2)` and prolongated; the sum is mapped affinely
/// onto `[1, 4]`.
pub fn gen_a1(seed: u64, level: u32) -> Result<CoefficientField> {
    if level == 0 || level > MAX_LEVEL {
        return Err(LodError::arg(format!("A1 needs 1 <= level <= {MAX_LEVEL}, got {level}")));
    }
    let mut rng = SplitMix64::new(seed);
    let n = 1usize << level;
    let mut sum = vec![0.0; n * n];
    for k in 1..=level {
        let nk = 1usize << k;
        let weight = (-(k as f64) / 2.0).exp2();
        let layer: Vec<f64> = (0..nk * nk).map(|_| rng.next_f64()).collect();
        let shift = level - k;
        for j in 0..n {
            for i in 0..n {
                sum[j * n + i] += weight * layer[(j >> shift) * nk + (i >> shift)];
            }
        }
    }
    let lo = sum.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = sum.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let cells = sum.iter().map(|v| 1.0 + 3.0 * ((v - lo) / (hi - lo))).collect();
    CoefficientField::from_cells(level, seed, cells)
}

/// Centerlines of the high-conductivity channels of [`gen_a2`] as
/// `(horizontal?, position)` pairs.
pub const A2_CHANNELS: [(bool, f64); 4] = [(true, 0.2), (true, 0.45), (true, 0.7), (false, 0.55)];

/// Uniform(0.1, 1) background with four channels of value 10.
///
/// Each channel covers the two cell rows (or columns) adjacent to the grid
/// line nearest its centerline, and spans the cells whose centers lie in
/// `[0.1, 0.9]` along the channel.
pub fn gen_a2(seed: u64, level: u32) -> Result<CoefficientField> {
    if !(4..=MAX_LEVEL).contains(&level) {
        return Err(LodError::arg(format!("A2 needs 4 <= level <= {MAX_LEVEL}, got {level}")));
    }
    let mut rng = SplitMix64::new(seed);
    let n = 1usize << level;
    let mut cells: Vec<f64> = (0..n * n).map(|_| 0.1 + 0.9 * rng.next_f64()).collect();
    let nf = n as f64;
    let along = |k: usize| {
        let c = (k as f64 + 0.5) / nf;
        (0.1..=0.9).contains(&c)
    };
    for (horizontal, pos) in A2_CHANNELS {
        let line = (pos * nf).round() as usize;
        for across in [line - 1, line] {
            for k in (0..n).filter(|&k| along(k)) {
                let (i, j) = if horizontal { (k, across) } else { (across, k) };
                cells[j * n + i] = 10.0;
            }
        }
    }
    CoefficientField::from_cells(level, seed, cells)
}

pub fn encode_coefficient(field: &CoefficientField) -> Vec<u8> {
    let mut buf = Vec::with_capacity(HEADER_LEN + 8 * field.cells.len());
    buf.extend_from_slice(COEFF_MAGIC);
    buf.extend_from_slice(&COEFF_VERSION.to_le_bytes());
    buf.extend_from_slice(&field.level.to_le_bytes());
    buf.extend_from_slice(&field.seed.to_le_bytes());
    buf.extend_from_slice(&field.alpha.to_le_bytes());
    buf.extend_from_slice(&field.beta.to_le_bytes());
    for v in &field.cells {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    buf
}

fn take<const N: usize>(bytes: &[u8], offset: usize, what: &str) -> Result<[u8; N]> {
    bytes
        .get(offset..offset + N)
        .map(|s| s.try_into().unwrap())
        .ok_or_else(|| LodError::Parse {
            offset: bytes.len(),
            message: format!("truncated while reading {what}"),
        })
}

pub fn decode_coefficient(bytes: &[u8]) -> Result<CoefficientField> {
    let magic: [u8; 8] = take(bytes, 0, "magic")?;
    if &magic != COEFF_MAGIC {
        return Err(LodError::Parse {
            offset: 0,
            message: "bad magic, not a coefficient file".into(),
        });
    }
    let version = u32::from_le_bytes(take(bytes, 8, "version")?);
    if version != COEFF_VERSION {
        return Err(LodError::Parse {
            offset: 8,
            message: format!("unsupported version {version}"),
        });
    }
    let level = u32::from_le_bytes(take(bytes, 12, "level")?);
    if level > MAX_LEVEL {
        return Err(LodError::Parse {
            offset: 12,
            message: format!("level {level} exceeds {MAX_LEVEL}"),
        });
    }
    let seed = u64::from_le_bytes(take(bytes, 16, "seed")?);
    let alpha = f64::from_le_bytes(take(bytes, 24, "alpha")?);
    let beta = f64::from_le_bytes(take(bytes, 32, "beta")?);
    let count = 1usize << (2 * level);
    let expected = HEADER_LEN + 8 * count;
    if bytes.len() < expected {
        return Err(LodError::Parse {
            offset: bytes.len(),
            message: format!("truncated payload: expected {expected} bytes"),
        });
    }
    if bytes.len() > expected {
        return Err(LodError::Parse {
            offset: expected,
            message: "trailing bytes after payload".into(),
        });
    }
    let cells = bytes[HEADER_LEN..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let field = CoefficientField {
        level,
        seed,
        alpha,
        beta,
        cells,
    };
    field.validate()?;
    Ok(field)
}

pub fn save_coefficient(field: &CoefficientField, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, encode_coefficient(field))?;
    Ok(())
}

pub fn load_coefficient(path: impl AsRef<Path>) -> Result<CoefficientField> {
    decode_coefficient(&std::fs::read(path)?)
}
