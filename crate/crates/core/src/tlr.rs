//! Tile Low-Rank (TLR) covariance representation and tiled Cholesky.
//!
//! The matrix is cut into `nb × nb` tiles (the last row/column of tiles may be
//! ragged). Diagonal tiles stay dense; each off-diagonal tile `D_ij` in the
//! lower triangle is replaced by `U_ij V_ij` truncated so that
//! `‖D_ij − U_ij V_ij‖₂ ≤ tlr_acc`. Upper tiles are implicit transposes.

use std::ops::Range;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::covariance::{build_cov, build_cov_sym, CovMatrix, MaternSpec};
use crate::error::{Error, Result};
use crate::geometry::LocationSet;
use crate::linalg::potrf_in_place;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TlrConfig {
    /// Tile side length.
    pub nb: usize,
    /// Largest admissible rank of any off-diagonal tile.
    pub tlr_max_rank: usize,
    /// Spectral-norm truncation threshold per tile. `0` keeps every nonzero
    /// singular value.
    pub tlr_acc: f64,
}

impl TlrConfig {
    pub fn new(nb: usize, tlr_max_rank: usize, tlr_acc: f64) -> Result<Self> {
        let c = TlrConfig {
            nb,
            tlr_max_rank,
            tlr_acc,
        };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if self.nb < 2 {
            return Err(Error::InvalidArgument(format!("nb must be >= 2, got {}", self.nb)));
        }
        if self.tlr_max_rank < 1 || self.tlr_max_rank > self.nb {
            return Err(Error::InvalidArgument(format!(
                "tlr_max_rank must lie in [1, nb = {}], got {}",
                self.nb, self.tlr_max_rank
            )));
        }
        if !(self.tlr_acc.is_finite() && self.tlr_acc >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "tlr_acc must be finite and >= 0, got {}",
                self.tlr_acc
            )));
        }
        Ok(())
    }
}

/// Factor pair `U (m × k)`, `V (k × n)` of a compressed tile.
#[derive(Debug, Clone, PartialEq)]
pub struct LowRank {
    pub u: DMatrix<f64>,
    pub v: DMatrix<f64>,
}

impl LowRank {
    pub fn zero(m: usize, n: usize) -> Self {
        LowRank {
            u: DMatrix::zeros(m, 0),
            v: DMatrix::zeros(0, n),
        }
    }

    pub fn rank(&self) -> usize {
        self.u.ncols()
    }

    pub fn nrows(&self) -> usize {
        self.u.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.v.ncols()
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        &self.u * &self.v
    }

    fn stored_floats(&self) -> usize {
        self.u.len() + self.v.len()
    }
}

/// Truncates an SVD-able block at `acc`. `Err(k)` reports the rank that would
/// have been needed when it exceeds `max_rank`.
fn truncate_block(block: &DMatrix<f64>, acc: f64, max_rank: usize) -> std::result::Result<LowRank, usize> {
    let (m, n) = block.shape();
    if m == 0 || n == 0 || block.iter().all(|&v| v == 0.0) {
        return Ok(LowRank::zero(m, n));
    }
    let svd = block.clone().svd(true, true);
    let (u, vt) = (svd.u.expect("u requested"), svd.v_t.expect("v_t requested"));
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let k = order
        .iter()
        .take_while(|&&i| svd.singular_values[i] > acc)
        .count();
    if k > max_rank {
        return Err(k);
    }
    let mut uk = DMatrix::zeros(m, k);
    let mut vk = DMatrix::zeros(k, n);
    for (c, &i) in order[..k].iter().enumerate() {
        let s = svd.singular_values[i];
        uk.set_column(c, &(u.column(i) * s));
        vk.set_row(c, &vt.row(i));
    }
    Ok(LowRank { u: uk, v: vk })
}

/// Compresses one off-diagonal tile. The returned rank `k` is the smallest
/// count with `sigma_{k+1} <= tlr_acc`, so `‖block − U V‖₂ = sigma_{k+1}`.
pub fn compress_tile(block: &DMatrix<f64>, cfg: &TlrConfig) -> Result<LowRank> {
    compress_at(block, cfg, (0, 0))
}

fn compress_at(block: &DMatrix<f64>, cfg: &TlrConfig, tile: (usize, usize)) -> Result<LowRank> {
    if block.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument(format!("tile {tile:?} has non-finite entries")));
    }
    truncate_block(block, cfg.tlr_acc, cfg.tlr_max_rank).map_err(|required| Error::RankOverflow {
        row: tile.0,
        col: tile.1,
        required,
        max_rank: cfg.tlr_max_rank,
    })
}

/// Re-truncates `[U_1 … U_r][V_1; …; V_r]` without forming the dense product
/// unless the concatenated rank already reaches the tile dimension.
fn recompress(u: DMatrix<f64>, v: DMatrix<f64>, acc: f64, max_rank: usize) -> std::result::Result<LowRank, usize> {
    let (m, r) = u.shape();
    let n = v.ncols();
    if r == 0 {
        return Ok(LowRank::zero(m, n));
    }
    if r >= m.min(n) {
        return truncate_block(&(&u * &v), acc, max_rank);
    }
    let qr_u = u.qr();
    let qr_v = v.transpose().qr();
    let (q1, r1) = (qr_u.q(), qr_u.r());
    let (q2, r2) = (qr_v.q(), qr_v.r());
    let core = r1 * r2.transpose();
    let small = truncate_block(&core, acc, max_rank)?;
    Ok(LowRank {
        u: q1 * small.u,
        v: small.v * q2.transpose(),
    })
}

/// Tile boundaries `[0, nb, 2nb, …, n]`. A single tile when `nb >= n`.
fn tile_offsets(n: usize, nb: usize) -> Vec<usize> {
    let mut v: Vec<usize> = (0..n).step_by(nb.max(1)).collect();
    v.push(n);
    v
}

/// Packed index of lower tile `(i, j)`, `i > j`.
fn lower_index(i: usize, j: usize) -> usize {
    debug_assert!(i > j);
    i * (i - 1) / 2 + j
}

fn lower_pairs(t: usize) -> Vec<(usize, usize)> {
    (1..t).flat_map(|i| (0..i).map(move |j| (i, j))).collect()
}

#[derive(Debug, Clone)]
pub struct TlrMatrix {
    n: usize,
    offsets: Vec<usize>,
    diag: Vec<DMatrix<f64>>,
    off: Vec<LowRank>,
}

impl TlrMatrix {
    /// Builds the tiled matrix from a block generator `f(rows, cols)`, which
    /// is called for diagonal tiles and for lower off-diagonal tiles.
    pub fn from_blocks<F>(n: usize, cfg: &TlrConfig, f: F) -> Result<Self>
    where
        F: Fn(Range<usize>, Range<usize>) -> DMatrix<f64> + Sync,
    {
        cfg.validate()?;
        if n == 0 {
            return Err(Error::InvalidArgument("empty matrix".into()));
        }
        let offsets = tile_offsets(n, cfg.nb);
        let t = offsets.len() - 1;
        let range = |i: usize| offsets[i]..offsets[i + 1];
        let diag = (0..t).into_par_iter().map(|i| f(range(i), range(i))).collect();
        let off = lower_pairs(t)
            .into_par_iter()
            .map(|(i, j)| compress_at(&f(range(i), range(j)), cfg, (i, j)))
            .collect::<Result<Vec<_>>>()?;
        Ok(TlrMatrix { n, offsets, diag, off })
    }

    /// Tiles a dense symmetric matrix (lower triangle is read).
    pub fn from_dense(a: &DMatrix<f64>, cfg: &TlrConfig) -> Result<Self> {
        if a.nrows() != a.ncols() {
            return Err(Error::DimensionMismatch {
                expected: a.nrows(),
                got: a.ncols(),
            });
        }
        Self::from_blocks(a.nrows(), cfg, |r, c| {
            let mut b = a.view((r.start, c.start), (r.len(), c.len())).into_owned();
            if r == c {
                for j in 0..b.ncols() {
                    for i in 0..j {
                        b[(i, j)] = b[(j, i)];
                    }
                }
            }
            b
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn tile_count(&self) -> usize {
        self.diag.len()
    }

    pub fn tile_range(&self, i: usize) -> Range<usize> {
        self.offsets[i]..self.offsets[i + 1]
    }

    pub fn diag_tile(&self, i: usize) -> &DMatrix<f64> {
        &self.diag[i]
    }

    /// Compressed lower tile `(i, j)`, `i > j`.
    pub fn off_tile(&self, i: usize, j: usize) -> &LowRank {
        &self.off[lower_index(i, j)]
    }

    pub fn max_rank(&self) -> usize {
        self.off.iter().map(LowRank::rank).max().unwrap_or(0)
    }

    /// Floats held: dense diagonal tiles plus `U` and `V` of each lower tile.
    pub fn stored_floats(&self) -> usize {
        self.diag.iter().map(|d| d.len()).sum::<usize>()
            + self.off.iter().map(LowRank::stored_floats).sum::<usize>()
    }
}

/// Tiles the Matérn covariance of `locs` in the given order.
pub fn assemble_tlr(locs: &LocationSet, spec: &MaternSpec, cfg: &TlrConfig) -> Result<TlrMatrix> {
    let sub = |r: Range<usize>| -> LocationSet { locs.permuted(&r.collect::<Vec<_>>()) };
    TlrMatrix::from_blocks(locs.len(), cfg, |r, c| {
        if r == c {
            build_cov_sym(&sub(r), spec)
        } else {
            build_cov(&sub(r), &sub(c), spec)
        }
    })
}

/// Expands every tile to a dense symmetric matrix.
pub fn dense_reconstruct(a: &TlrMatrix) -> CovMatrix {
    let mut out = DMatrix::zeros(a.n, a.n);
    let t = a.tile_count();
    for i in 0..t {
        let ri = a.tile_range(i);
        out.view_mut((ri.start, ri.start), (ri.len(), ri.len()))
            .copy_from(&a.diag[i]);
        for j in 0..i {
            let rj = a.tile_range(j);
            let d = a.off_tile(i, j).to_dense();
            out.view_mut((ri.start, rj.start), (ri.len(), rj.len())).copy_from(&d);
            out.view_mut((rj.start, ri.start), (rj.len(), ri.len()))
                .copy_from(&d.transpose());
        }
    }
    out
}

/// Tiled lower Cholesky factor: dense lower-triangular diagonal tiles and
/// low-rank off-diagonal tiles.
#[derive(Debug, Clone)]
pub struct TlrFactor {
    n: usize,
    offsets: Vec<usize>,
    diag: Vec<DMatrix<f64>>,
    off: Vec<LowRank>,
    logdet: f64,
}

impl TlrFactor {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn logdet(&self) -> f64 {
        self.logdet
    }

    pub fn max_rank(&self) -> usize {
        self.off.iter().map(LowRank::rank).max().unwrap_or(0)
    }

    fn range(&self, i: usize) -> Range<usize> {
        self.offsets[i]..self.offsets[i + 1]
    }

    /// Dense lower factor, for tests and diagnostics.
    pub fn dense_lower(&self) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(self.n, self.n);
        for i in 0..self.diag.len() {
            let ri = self.range(i);
            out.view_mut((ri.start, ri.start), (ri.len(), ri.len()))
                .copy_from(&self.diag[i]);
            for j in 0..i {
                let rj = self.range(j);
                out.view_mut((ri.start, rj.start), (ri.len(), rj.len()))
                    .copy_from(&self.off[lower_index(i, j)].to_dense());
            }
        }
        out
    }

    /// `L⁻¹ z`, tile by tile.
    pub fn forward_solve(&self, z: &DVector<f64>) -> Result<DVector<f64>> {
        if z.len() != self.n {
            return Err(Error::DimensionMismatch {
                expected: self.n,
                got: z.len(),
            });
        }
        let t = self.diag.len();
        let mut y = z.clone();
        for i in 0..t {
            let ri = self.range(i);
            let mut yi = y.rows(ri.start, ri.len()).into_owned();
            for j in 0..i {
                let rj = self.range(j);
                let lr = &self.off[lower_index(i, j)];
                let tmp = &lr.v * y.rows(rj.start, rj.len());
                yi -= &lr.u * tmp;
            }
            self.diag[i].solve_lower_triangular_mut(&mut yi);
            y.rows_mut(ri.start, ri.len()).copy_from(&yi);
        }
        Ok(y)
    }

    /// `(L Lᵀ)⁻¹ z` by forward then backward substitution.
    pub fn solve(&self, z: &DVector<f64>) -> Result<DVector<f64>> {
        let mut x = self.forward_solve(z)?;
        let t = self.diag.len();
        for i in (0..t).rev() {
            let ri = self.range(i);
            let mut xi = x.rows(ri.start, ri.len()).into_owned();
            for j in i + 1..t {
                let rj = self.range(j);
                let lr = &self.off[lower_index(j, i)];
                // L_ji^T x_j = V^T (U^T x_j)
                let tmp = lr.u.tr_mul(&x.rows(rj.start, rj.len()));
                xi -= lr.v.tr_mul(&tmp);
            }
            self.diag[i].tr_solve_lower_triangular_mut(&mut xi);
            x.rows_mut(ri.start, ri.len()).copy_from(&xi);
        }
        Ok(x)
    }
}

/// Left-looking tiled Cholesky. For each tile column `k`: the diagonal tile
/// receives the dense updates `−L_kj L_kjᵀ` (`j < k`, ascending) and is
/// factored; each tile below gets its low-rank updates appended and
/// recompressed at `tlr_acc`, then the triangular solve is applied to its `V`
/// factor. The log-determinant is `2 Σ log diag(L_kk)` in tile order.
pub fn tlr_cholesky(a: &TlrMatrix, cfg: &TlrConfig) -> Result<TlrFactor> {
    cfg.validate()?;
    let t = a.tile_count();
    let mut diag: Vec<DMatrix<f64>> = Vec::with_capacity(t);
    let mut off: Vec<LowRank> = a.off.clone();
    let mut logdet = 0.0;
    for k in 0..t {
        let mut dkk = a.diag[k].clone();
        for j in 0..k {
            let lr = &off[lower_index(k, j)];
            if lr.rank() > 0 {
                let w = &lr.u * (&lr.v * lr.v.transpose());
                dkk -= w * lr.u.transpose();
            }
        }
        let start = a.offsets[k];
        potrf_in_place(&mut dkk).map_err(|p| {
            Error::not_pd(format!("TLR diagonal tile {k}, pivot {}", start + p))
        })?;
        logdet += 2.0 * dkk.diagonal().iter().map(|d| d.ln()).sum::<f64>();

        let updated: Vec<LowRank> = (k + 1..t)
            .into_par_iter()
            .map(|i| {
                let base = &off[lower_index(i, k)];
                let mut us = vec![base.u.clone()];
                let mut vs = vec![base.v.clone()];
                for j in 0..k {
                    let lij = &off[lower_index(i, j)];
                    let lkj = &off[lower_index(k, j)];
                    if lij.rank() == 0 || lkj.rank() == 0 {
                        continue;
                    }
                    let core = &lij.v * lkj.v.transpose();
                    us.push(-(&lij.u * core));
                    vs.push(lkj.u.transpose());
                }
                let tile = if us.len() == 1 {
                    base.clone()
                } else {
                    let u = hcat(&us, base.nrows());
                    let v = vcat(&vs, base.ncols());
                    recompress(u, v, cfg.tlr_acc, cfg.tlr_max_rank).map_err(|required| {
                        Error::RankOverflow {
                            row: i,
                            col: k,
                            required,
                            max_rank: cfg.tlr_max_rank,
                        }
                    })?
                };
                // L_ik = A_ik L_kk^{-T}  =>  V' = V L_kk^{-T}, i.e. V'ᵀ = L_kk^{-1} Vᵀ
                let mut vt = tile.v.transpose();
                dkk.solve_lower_triangular_mut(&mut vt);
                Ok(LowRank {
                    u: tile.u,
                    v: vt.transpose(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        for (i, lr) in (k + 1..t).zip(updated) {
            off[lower_index(i, k)] = lr;
        }
        diag.push(dkk);
    }
    Ok(TlrFactor {
        n: a.n,
        offsets: a.offsets.clone(),
        diag,
        off,
        logdet,
    })
}

fn hcat(blocks: &[DMatrix<f64>], rows: usize) -> DMatrix<f64> {
    let cols = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = DMatrix::zeros(rows, cols);
    let mut c = 0;
    for b in blocks {
        out.view_mut((0, c), (rows, b.ncols())).copy_from(b);
        c += b.ncols();
    }
    out
}

fn vcat(blocks: &[DMatrix<f64>], cols: usize) -> DMatrix<f64> {
    let rows = blocks.iter().map(|b| b.nrows()).sum();
    let mut out = DMatrix::zeros(rows, cols);
    let mut r = 0;
    for b in blocks {
        out.view_mut((r, 0), (b.nrows(), cols)).copy_from(b);
        r += b.nrows();
    }
    out
}

/// `(log det Σ, zᵀ Σ⁻¹ z)` from the tiled factor; the quadratic form is
/// `‖L⁻¹ z‖²`.
pub fn tlr_logdet_and_quadform(f: &TlrFactor, z: &DVector<f64>) -> Result<(f64, f64)> {
    let y = f.forward_solve(z)?;
    Ok((f.logdet, y.norm_squared()))
}
