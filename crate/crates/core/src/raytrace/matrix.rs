//! Cached sparse system matrix.
//!
//! Rows are stored in blocks of consecutive rays. Each row keeps the weights
//! in traversal order, so a row times a coefficient vector reproduces the
//! on-the-fly projector bit for bit.

use rayon::prelude::*;

use super::{reduce_rows, spline, voxel, Lattice, LinearOperator};
use crate::bspline::{BasisSpec, CoefficientVolume};
use crate::contribnet::{ContribNet, Scratch};
use crate::geometry::{Ray, ScanGeometry};
use crate::Result;

const BLOCK_ROWS: usize = 2048;

#[derive(Clone, Debug, Default)]
struct Block {
    /// Row starts into `cols`/`vals`, one entry per row plus the end.
    starts: Vec<usize>,
    cols: Vec<u32>,
    vals: Vec<f64>,
}

impl Block {
    fn build(rays: &[Ray], mut row: impl FnMut(&Ray, &mut Vec<u32>, &mut Vec<f64>)) -> Self {
        let mut b = Block {
            starts: Vec::with_capacity(rays.len() + 1),
            ..Default::default()
        };
        b.starts.push(0);
        for ray in rays {
            row(ray, &mut b.cols, &mut b.vals);
            b.starts.push(b.cols.len());
        }
        b.cols.shrink_to_fit();
        b.vals.shrink_to_fit();
        b
    }

    fn row_dot(&self, r: usize, x: &[f64]) -> f64 {
        let (a, b) = (self.starts[r], self.starts[r + 1]);
        let mut acc = 0.0;
        for (c, v) in self.cols[a..b].iter().zip(&self.vals[a..b]) {
            acc += x[*c as usize] * v;
        }
        acc
    }
}

/// Sparse matrix of a projector over a fixed geometry and coefficient box.
#[derive(Clone, Debug)]
pub struct SystemMatrix {
    rows: usize,
    cols: usize,
    blocks: Vec<Block>,
}

impl SystemMatrix {
    fn from_rows<F>(geometry: &ScanGeometry, cols: usize, row: F) -> Self
    where
        F: Fn(&Ray, &mut Scratch, &mut Vec<u32>, &mut Vec<f64>) + Sync,
    {
        assert!(cols <= u32::MAX as usize, "volume too large for 32-bit column indices");
        let blocks = geometry
            .rays()
            .par_chunks(BLOCK_ROWS)
            .map(|rays| {
                let mut scratch = Scratch::default();
                Block::build(rays, |ray, c, v| row(ray, &mut scratch, c, v))
            })
            .collect();
        Self {
            rows: geometry.num_rays(),
            cols,
            blocks,
        }
    }

    /// Spline projector weights; zero weights are not stored.
    pub fn splinesplat(
        geometry: &ScanGeometry,
        template: &CoefficientVolume,
        net: &ContribNet,
        basis: &BasisSpec,
    ) -> Result<Self> {
        net.check_basis(basis)?;
        let lattice = Lattice::of(template);
        let radius = basis.neighbor_radius();
        Ok(Self::from_rows(geometry, lattice.len(), |ray, scratch, cols, vals| {
            spline::trace(ray, &lattice, net, radius, scratch, |flat, _, _, w| {
                if w != 0.0 {
                    cols.push(flat as u32);
                    vals.push(w);
                }
            })
        }))
    }

    /// Voxel projector chord lengths; zero chords are not stored.
    pub fn voxel(geometry: &ScanGeometry, template: &CoefficientVolume) -> Self {
        let lattice = Lattice::of(template);
        Self::from_rows(geometry, lattice.len(), |ray, _, cols, vals| {
            voxel::trace(ray, &lattice, |flat, len| {
                if len != 0.0 {
                    cols.push(flat as u32);
                    vals.push(len);
                }
            })
        })
    }

    pub fn nnz(&self) -> usize {
        self.blocks.iter().map(|b| b.cols.len()).sum()
    }

    /// Stored entries of row `m` as `(column, weight)`.
    pub fn row(&self, m: usize) -> Vec<(usize, f64)> {
        let b = &self.blocks[m / BLOCK_ROWS];
        let r = m % BLOCK_ROWS;
        (b.starts[r]..b.starts[r + 1])
            .map(|i| (b.cols[i] as usize, b.vals[i]))
            .collect()
    }
}

impl LinearOperator for SystemMatrix {
    fn num_rows(&self) -> usize {
        self.rows
    }

    fn num_cols(&self) -> usize {
        self.cols
    }

    fn apply(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.cols);
        let mut y = vec![0.0; self.rows];
        y.par_chunks_mut(BLOCK_ROWS)
            .zip(self.blocks.par_iter())
            .for_each(|(out, b)| {
                for (r, o) in out.iter_mut().enumerate() {
                    *o = b.row_dot(r, x);
                }
            });
        y
    }

    fn apply_adjoint(&self, y: &[f64]) -> Vec<f64> {
        assert_eq!(y.len(), self.rows);
        reduce_rows(self.rows, self.cols, |range, acc| {
            for m in range {
                let b = &self.blocks[m / BLOCK_ROWS];
                let r = m % BLOCK_ROWS;
                let ym = y[m];
                for i in b.starts[r]..b.starts[r + 1] {
                    acc[b.cols[i] as usize] += ym * b.vals[i];
                }
            }
        })
    }
}
