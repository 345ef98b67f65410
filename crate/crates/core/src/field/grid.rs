use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

use super::Vec3;

const MAGIC: &[u8; 4] = b"RVXG";
const VERSION: u32 = 1;

#[inline]
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Inverse of [`softplus`]; `y` must be positive.
#[inline]
pub fn softplus_inverse(y: f64) -> f64 {
    if y > 30.0 {
        y
    } else {
        y.exp_m1().ln()
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[inline]
pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

#[inline]
fn activate(raw: [f64; 4]) -> [f64; 4] {
    [
        softplus(raw[0]),
        sigmoid(raw[1]),
        sigmoid(raw[2]),
        sigmoid(raw[3]),
    ]
}

/// Derivative of each activation with respect to its raw input.
#[inline]
pub(crate) fn activation_grad(raw: [f64; 4], act: [f64; 4]) -> [f64; 4] {
    [
        sigmoid(raw[0]),
        act[1] * (1.0 - act[1]),
        act[2] * (1.0 - act[2]),
        act[3] * (1.0 - act[3]),
    ]
}

/// Trilinear footprint of a point: eight cell indices and their weights.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Footprint {
    pub cells: [usize; 8],
    pub weights: [f64; 8],
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSample {
    pub density: f64,
    pub rgb: Vec3,
}

/// Dense density + RGB lattice with raw (pre-activation) storage.
///
/// Activated values are cached alongside the raw parameters and refreshed by
/// every mutating method, so rendering never re-evaluates activations.
#[derive(Debug, Clone, PartialEq)]
pub struct VoxelGrid {
    dims: [usize; 3],
    raw: Vec<[f64; 4]>,
    act: Vec<[f64; 4]>,
}

impl VoxelGrid {
    /// Grid with every cell set to the same raw parameters.
    pub fn filled(dims: [usize; 3], raw: [f64; 4]) -> Result<Self> {
        Self::from_raw(dims, vec![raw; dims.iter().product()])
    }

    pub fn from_raw(dims: [usize; 3], raw: Vec<[f64; 4]>) -> Result<Self> {
        if dims.iter().any(|&d| d < 2) {
            return Err(Error::invalid(format!(
                "grid dims must be >= 2 in every axis, got {dims:?}"
            )));
        }
        let n: usize = dims.iter().product();
        if raw.len() != n {
            return Err(Error::invalid(format!(
                "grid {dims:?} needs {n} cells, got {}",
                raw.len()
            )));
        }
        let act = raw.iter().copied().map(activate).collect();
        Ok(Self { dims, raw, act })
    }

    /// Grid whose activated values are `(density, rgb)` per cell. Zero density
    /// and saturated colors are clamped to finite raw values.
    pub fn from_activated(dims: [usize; 3], values: &[(f64, Vec3)]) -> Result<Self> {
        let raw = values
            .iter()
            .map(|&(d, c)| {
                let dc = d.max(1e-9);
                let cc = |v: f64| logit(v.clamp(1e-6, 1.0 - 1e-6));
                [softplus_inverse(dc), cc(c[0]), cc(c[1]), cc(c[2])]
            })
            .collect();
        Self::from_raw(dims, raw)
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn len(&self) -> usize {
        self.raw.len()
    }

    pub fn is_empty(&self) -> bool {
        self.raw.is_empty()
    }

    /// Cell index; x varies fastest, z slowest.
    #[inline]
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        (k * self.dims[1] + j) * self.dims[0] + i
    }

    pub fn raw(&self) -> &[[f64; 4]] {
        &self.raw
    }

    pub fn activated(&self) -> &[[f64; 4]] {
        &self.act
    }

    pub fn raw_cell(&self, idx: usize) -> [f64; 4] {
        self.raw[idx]
    }

    pub fn set_raw(&mut self, idx: usize, value: [f64; 4]) {
        self.raw[idx] = value;
        self.act[idx] = activate(value);
    }

    /// Lattice position of a cell in the unit cube.
    pub fn cell_position(&self, i: usize, j: usize, k: usize) -> Vec3 {
        [
            i as f64 / (self.dims[0] - 1) as f64,
            j as f64 / (self.dims[1] - 1) as f64,
            k as f64 / (self.dims[2] - 1) as f64,
        ]
    }

    pub(crate) fn footprint(&self, p: Vec3) -> Footprint {
        let mut base = [0usize; 3];
        let mut frac = [0f64; 3];
        for a in 0..3 {
            let n = self.dims[a];
            let x = p[a].clamp(0.0, 1.0) * (n - 1) as f64;
            let i = (x.floor() as usize).min(n - 2);
            base[a] = i;
            frac[a] = x - i as f64;
        }
        let mut cells = [0usize; 8];
        let mut weights = [0f64; 8];
        for c in 0..8 {
            let (dx, dy, dz) = (c & 1, (c >> 1) & 1, (c >> 2) & 1);
            cells[c] = self.index(base[0] + dx, base[1] + dy, base[2] + dz);
            let wx = if dx == 1 { frac[0] } else { 1.0 - frac[0] };
            let wy = if dy == 1 { frac[1] } else { 1.0 - frac[1] };
            let wz = if dz == 1 { frac[2] } else { 1.0 - frac[2] };
            weights[c] = wx * wy * wz;
        }
        Footprint { cells, weights }
    }

    #[inline]
    pub(crate) fn interpolate(&self, fp: &Footprint) -> [f64; 4] {
        let mut out = [0.0; 4];
        for c in 0..8 {
            let w = fp.weights[c];
            let v = &self.act[fp.cells[c]];
            for q in 0..4 {
                out[q] += w * v[q];
            }
        }
        out
    }

    /// Trilinearly interpolated activated field at `p` (clamped to the cube).
    pub fn sample(&self, p: Vec3) -> GridSample {
        let v = self.interpolate(&self.footprint(p));
        GridSample {
            density: v[0],
            rgb: [v[1], v[2], v[3]],
        }
    }

    pub fn write_rvxg(&self, w: &mut impl Write) -> std::io::Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        for d in self.dims {
            w.write_all(&(d as u32).to_le_bytes())?;
        }
        let mut buf = Vec::with_capacity(self.raw.len() * 16);
        for cell in &self.raw {
            for v in cell {
                buf.extend_from_slice(&(*v as f32).to_le_bytes());
            }
        }
        w.write_all(&buf)
    }

    pub fn read_rvxg(r: &mut impl Read) -> Result<Self> {
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)
            .map_err(|e| Error::format("RVXG", e.to_string()))?;
        if bytes.len() < 20 || &bytes[..4] != MAGIC {
            return Err(Error::format("RVXG", "bad magic"));
        }
        let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
        let version = u32_at(4);
        if version != VERSION {
            return Err(Error::format("RVXG", format!("unsupported version {version}")));
        }
        let dims = [u32_at(8) as usize, u32_at(12) as usize, u32_at(16) as usize];
        let n: usize = dims.iter().product();
        let payload = &bytes[20..];
        if payload.len() != n * 16 {
            return Err(Error::format(
                "RVXG",
                format!("expected {} payload bytes, found {}", n * 16, payload.len()),
            ));
        }
        let raw = payload
            .chunks_exact(16)
            .map(|c| {
                let f = |o: usize| f32::from_le_bytes(c[o..o + 4].try_into().unwrap()) as f64;
                [f(0), f(4), f(8), f(12)]
            })
            .collect();
        Self::from_raw(dims, raw)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_rvxg(&mut f).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut f = fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_rvxg(&mut f)
    }
}
