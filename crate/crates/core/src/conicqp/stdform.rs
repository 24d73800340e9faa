//! Lowering of a `ConicProgram` to the standard conic form
//!
//! ```text
//! minimize    c'x
//! subject to  A x = b
//!             G x + s = h,   s in K = R+^l x SOC(q_1) x ... x SOC(q_N)
//! ```
//!
//! A quadratic cost `0.5 x'Qx` (diagonal plus Gram rows) is lowered to a
//! linear cost through one epigraph variable `t` and the rotated-cone rows
//! `2 t >= ||F x||^2`, written as the second-order cone
//! `(t + 1, t - 1, sqrt(2) F x)`.

use super::{ConicProgram, RowSense};
use crate::error::Result;

pub(crate) const SQRT2: f64 = std::f64::consts::SQRT_2;

/// Row-major sparse matrix; rows hold sorted (col, value) pairs.
#[derive(Debug, Clone, Default)]
pub(crate) struct RowMat {
    pub rows: Vec<Vec<(usize, f64)>>,
}

impl RowMat {
    pub fn nrows(&self) -> usize {
        self.rows.len()
    }

    pub fn mul(&self, x: &[f64], out: &mut [f64]) {
        for (r, row) in self.rows.iter().enumerate() {
            out[r] = row.iter().map(|&(j, v)| v * x[j]).sum();
        }
    }

    /// out += A' y
    pub fn tr_mul_acc(&self, y: &[f64], out: &mut [f64]) {
        for (r, row) in self.rows.iter().enumerate() {
            let yr = y[r];
            if yr != 0.0 {
                for &(j, v) in row {
                    out[j] += v * yr;
                }
            }
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.rows
            .iter()
            .flat_map(|r| r.iter().map(|&(_, v)| v.abs()))
            .fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone)]
pub(crate) struct StdForm {
    pub n: usize,
    pub a: RowMat,
    pub b: Vec<f64>,
    pub g: RowMat,
    pub h: Vec<f64>,
    pub layout: super::cones::ConeLayout,
    pub c: Vec<f64>,
    pub offset: f64,
    /// For each user linear row: (G-or-A row index, in_a, sign applied).
    pub row_map: Vec<(usize, bool, f64)>,
    /// For each variable: orthant row of the lower/upper bound when finite.
    pub bound_rows: Vec<(Option<usize>, Option<usize>)>,
    /// First G row of each user rotated cone block.
    pub rsoc_rows: Vec<usize>,
}

fn canonical_coeffs(coeffs: &[(usize, f64)]) -> Vec<(usize, f64)> {
    let mut sorted = coeffs.to_vec();
    sorted.sort_unstable_by_key(|&(j, _)| j);
    let mut out: Vec<(usize, f64)> = Vec::with_capacity(sorted.len());
    for (j, v) in sorted {
        match out.last_mut() {
            Some((pj, pv)) if *pj == j => *pv += v,
            _ => out.push((j, v)),
        }
    }
    out.retain(|&(_, v)| v != 0.0);
    out
}

pub(crate) fn lower(prog: &ConicProgram) -> Result<StdForm> {
    prog.validate()?;
    let nv = prog.nvar;
    let has_quad = prog.quad_diag.iter().any(|&q| q > 0.0) || !prog.gram_rows.is_empty();
    let n = nv + usize::from(has_quad);
    let lift = if has_quad { Some(nv) } else { None };

    let mut c = vec![0.0; n];
    c[..nv].copy_from_slice(&prog.cost);
    if let Some(t) = lift {
        c[t] = 1.0;
    }

    let mut a = RowMat { rows: Vec::new() };
    let mut b = Vec::new();
    let mut g = RowMat { rows: Vec::new() };
    let mut h = Vec::new();
    let mut row_map = vec![(0usize, false, 1.0f64); prog.rows.len()];

    // user linear rows; Ge rows are negated into Le form
    for (ridx, row) in prog.rows.iter().enumerate() {
        let coeffs = canonical_coeffs(&row.coeffs);
        match row.sense {
            RowSense::Eq => {
                row_map[ridx] = (a.nrows(), true, 1.0);
                a.rows.push(coeffs);
                b.push(row.rhs);
            }
            RowSense::Le => {
                row_map[ridx] = (g.nrows(), false, 1.0);
                g.rows.push(coeffs);
                h.push(row.rhs);
            }
            RowSense::Ge => {
                row_map[ridx] = (g.nrows(), false, -1.0);
                g.rows
                    .push(coeffs.into_iter().map(|(j, v)| (j, -v)).collect());
                h.push(-row.rhs);
            }
        }
    }

    // bounds: equalities for pinned variables, orthant rows otherwise
    let mut bound_rows = vec![(None, None); nv];
    for j in 0..nv {
        let (lo, hi) = (prog.lo[j], prog.hi[j]);
        if lo == hi {
            a.rows.push(vec![(j, 1.0)]);
            b.push(lo);
            continue;
        }
        if lo.is_finite() {
            bound_rows[j].0 = Some(g.nrows());
            g.rows.push(vec![(j, -1.0)]);
            h.push(-lo);
        }
        if hi.is_finite() {
            bound_rows[j].1 = Some(g.nrows());
            g.rows.push(vec![(j, 1.0)]);
            h.push(hi);
        }
    }

    let l = g.nrows();
    let mut socs = Vec::new();
    let mut rsoc_rows = Vec::new();

    // user rotated cones: 2ab >= ||x||^2 becomes (a+b, a-b, sqrt(2) x) in SOC
    for blk in &prog.rsoc {
        rsoc_rows.push(g.nrows());
        let q = blk.x.len() + 2;
        socs.push(q);
        g.rows.push(canonical_coeffs(&[(blk.a, -1.0), (blk.b, -1.0)]));
        h.push(0.0);
        g.rows.push(canonical_coeffs(&[(blk.a, -1.0), (blk.b, 1.0)]));
        h.push(0.0);
        for &xj in &blk.x {
            g.rows.push(vec![(xj, -SQRT2)]);
            h.push(0.0);
        }
    }

    // quadratic-cost epigraph block
    if let Some(t) = lift {
        let mut rows: Vec<(Vec<(usize, f64)>, f64)> = Vec::new();
        rows.push((vec![(t, -1.0)], 1.0));
        rows.push((vec![(t, -1.0)], -1.0));
        for (j, &qd) in prog.quad_diag.iter().enumerate() {
            if qd > 0.0 {
                rows.push((vec![(j, -SQRT2 * qd.sqrt())], 0.0));
            }
        }
        for f_row in &prog.gram_rows {
            let coeffs: Vec<(usize, f64)> =
                f_row.iter().map(|&(j, v)| (j, -SQRT2 * v)).collect();
            rows.push((canonical_coeffs(&coeffs), 0.0));
        }
        socs.push(rows.len());
        for (coeffs, rhs) in rows {
            g.rows.push(coeffs);
            h.push(rhs);
        }
    }

    Ok(StdForm {
        n,
        a,
        b,
        g,
        h,
        layout: super::cones::ConeLayout { l, socs },
        c,
        offset: prog.offset,
        row_map,
        bound_rows,
        rsoc_rows,
    })
}
