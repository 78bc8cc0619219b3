//! Binary grid dumps for plotting.
//!
//! Layout, all integers `u32` and all values `f64`, little-endian:
//!
//! | offset | field                                       |
//! |--------|---------------------------------------------|
//! | 0      | magic `LODFIELD`                            |
//! | 8      | version (1)                                 |
//! | 12     | kind: 0 basis, 1 bubble, 2 coefficient, 3 solution |
//! | 16     | coarse level (0 if not applicable)          |
//! | 20     | fine level, or coefficient level for kind 2 |
//! | 24     | element i                                   |
//! | 28     | element j                                   |
//! | 32     | Legendre index j                            |
//! | 36     | polynomial degree p                         |
//! | 40     | rows                                        |
//! | 44     | cols                                        |
//! | 48     | `rows * cols` values, row-major (row = y)   |
//!
//! Node fields have `2^fine + 1` rows and columns; coefficients have one
//! value per cell.

use std::io::Write;
use std::path::Path;

pub const FIELD_MAGIC: &[u8; 8] = b"LODFIELD";
pub const FIELD_VERSION: u32 = 1;
pub const FIELD_HEADER_LEN: usize = 48;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FieldKind {
    Basis = 0,
    Bubble = 1,
    Coefficient = 2,
    Solution = 3,
}

impl FieldKind {
    fn from_code(c: u32) -> Option<Self> {
        Some(match c {
            0 => FieldKind::Basis,
            1 => FieldKind::Bubble,
            2 => FieldKind::Coefficient,
            3 => FieldKind::Solution,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FieldDump {
    pub kind: FieldKind,
    pub coarse_level: u32,
    pub fine_level: u32,
    pub element: (u32, u32),
    pub index: u32,
    pub p: u32,
    pub rows: u32,
    pub cols: u32,
    pub values: Vec<f64>,
}

impl FieldDump {
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(FIELD_HEADER_LEN + 8 * self.values.len());
        out.extend_from_slice(FIELD_MAGIC);
        for v in [
            FIELD_VERSION,
            self.kind as u32,
            self.coarse_level,
            self.fine_level,
            self.element.0,
            self.element.1,
            self.index,
            self.p,
            self.rows,
            self.cols,
        ] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for v in &self.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, String> {
        if bytes.len() < FIELD_HEADER_LEN {
            return Err(format!("dump has {} bytes, header needs {FIELD_HEADER_LEN}", bytes.len()));
        }
        if &bytes[..8] != FIELD_MAGIC {
            return Err("bad magic".into());
        }
        let u = |i: usize| u32::from_le_bytes(bytes[8 + 4 * i..12 + 4 * i].try_into().expect("4 bytes"));
        if u(0) != FIELD_VERSION {
            return Err(format!("unsupported version {}", u(0)));
        }
        let kind = FieldKind::from_code(u(1)).ok_or_else(|| format!("unknown kind {}", u(1)))?;
        let (rows, cols) = (u(8), u(9));
        let n = rows as usize * cols as usize;
        if bytes.len() != FIELD_HEADER_LEN + 8 * n {
            return Err(format!("payload length mismatch for {rows} x {cols}"));
        }
        let values = bytes[FIELD_HEADER_LEN..]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        Ok(Self {
            kind,
            coarse_level: u(2),
            fine_level: u(3),
            element: (u(4), u(5)),
            index: u(6),
            p: u(7),
            rows,
            cols,
            values,
        })
    }

    pub fn write(&self, path: &Path) -> std::io::Result<()> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(&self.encode())
    }

    pub fn read(path: &Path) -> Result<Self, String> {
        let bytes = std::fs::read(path).map_err(|e| e.to_string())?;
        Self::decode(&bytes)
    }
}
