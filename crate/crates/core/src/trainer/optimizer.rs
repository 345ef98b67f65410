use serde::{Deserialize, Serialize};

use crate::field::VoxelGrid;

use super::OptimizerKind;

/// Lazy optimizer state: only cells that received gradient in a step are
/// updated, so an image's step never moves parameters its rays did not reach.
/// Adam bias correction uses each cell's own update count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState {
    pub kind: OptimizerKind,
    /// Number of updates applied.
    pub t: u64,
    pub m: Vec<[f64; 4]>,
    pub v: Vec<[f64; 4]>,
    /// Per-cell update counts.
    pub n: Vec<u32>,
}

impl OptimizerState {
    pub fn new(kind: OptimizerKind, n_cells: usize) -> Self {
        let n = match kind {
            OptimizerKind::Sgd => 0,
            OptimizerKind::Adam { .. } => n_cells,
        };
        Self {
            kind,
            t: 0,
            m: vec![[0.0; 4]; n],
            v: vec![[0.0; 4]; n],
            n: vec![0; n],
        }
    }

    /// Applies one update to the cells in `touched` (ascending order).
    pub fn apply(&mut self, grid: &mut VoxelGrid, lr: f64, grad: &[[f64; 4]], touched: &[usize]) {
        self.t += 1;
        match self.kind {
            OptimizerKind::Sgd => {
                for &idx in touched {
                    let mut raw = grid.raw_cell(idx);
                    for q in 0..4 {
                        raw[q] -= lr * grad[idx][q];
                    }
                    grid.set_raw(idx, raw);
                }
            }
            OptimizerKind::Adam { beta1, beta2, eps } => {
                for &idx in touched {
                    self.n[idx] += 1;
                    let k = self.n[idx] as i32;
                    let bc1 = 1.0 - beta1.powi(k);
                    let bc2 = 1.0 - beta2.powi(k);
                    let mut raw = grid.raw_cell(idx);
                    let (m, v) = (&mut self.m[idx], &mut self.v[idx]);
                    for q in 0..4 {
                        let g = grad[idx][q];
                        m[q] = beta1 * m[q] + (1.0 - beta1) * g;
                        v[q] = beta2 * v[q] + (1.0 - beta2) * g * g;
                        let m_hat = m[q] / bc1;
                        let v_hat = v[q] / bc2;
                        raw[q] -= lr * m_hat / (v_hat.sqrt() + eps);
                    }
                    grid.set_raw(idx, raw);
                }
            }
        }
    }
}
