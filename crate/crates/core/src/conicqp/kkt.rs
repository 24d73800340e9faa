//! Assembly and factorization of the regularized KKT system
//!
//! ```text
//! [ eps*I   A'      G'    ]
//! [ A      -delta*I  0    ]
//! [ G       0      -W^2 - delta*I ]
//! ```
//!
//! The pattern is fixed per program; only the scaling block changes between
//! interior-point iterations. Iterative refinement runs against the exact
//! (unregularized) matrix.

use super::cones::NtScaling;
use super::ldl::{min_degree_order, LdlFactor, LdlSymbolic, UpperCsc};
use super::stdform::StdForm;
use crate::error::{Error, Result};

/// Where a KKT entry's value comes from on each refresh.
#[derive(Debug, Clone, Copy)]
enum Src {
    Const(f64),
    OrthantW2(usize),
    SocW2 { blk: usize, i: usize, j: usize },
}

pub(crate) struct KktSolver {
    nkkt: usize,
    nx: usize,
    csc: UpperCsc,
    positions: Vec<usize>,
    sources: Vec<Src>,
    diag_positions: Vec<usize>,
    signs: Vec<i8>,
    perm: Vec<usize>,
    symbolic: LdlSymbolic,
    factor: Option<LdlFactor>,
    pub static_reg: f64,
    scratch: Vec<f64>,
    scratch2: Vec<f64>,
}

impl KktSolver {
    pub fn new(sf: &StdForm, static_reg: f64) -> Self {
        let nx = sf.n;
        let np = sf.a.nrows();
        let mg = sf.g.nrows();
        let nkkt = nx + np + mg;

        let mut coords: Vec<(usize, usize)> = Vec::new();
        let mut sources: Vec<Src> = Vec::new();
        let push = |coords: &mut Vec<(usize, usize)>, sources: &mut Vec<Src>, i: usize, j: usize, s: Src| {
            let (a, b) = if i <= j { (i, j) } else { (j, i) };
            coords.push((a, b));
            sources.push(s);
        };

        // explicit diagonal everywhere (regularization target)
        for k in 0..nkkt {
            push(&mut coords, &mut sources, k, k, Src::Const(0.0));
        }
        for (r, row) in sf.a.rows.iter().enumerate() {
            for &(j, v) in row {
                push(&mut coords, &mut sources, j, nx + r, Src::Const(v));
            }
        }
        for (r, row) in sf.g.rows.iter().enumerate() {
            for &(j, v) in row {
                push(&mut coords, &mut sources, j, nx + np + r, Src::Const(v));
            }
        }
        for i in 0..sf.layout.l {
            let k = nx + np + i;
            push(&mut coords, &mut sources, k, k, Src::OrthantW2(i));
        }
        let mut off = sf.layout.l;
        for (blk, &q) in sf.layout.socs.iter().enumerate() {
            for i in 0..q {
                for j in i..q {
                    push(
                        &mut coords,
                        &mut sources,
                        nx + np + off + i,
                        nx + np + off + j,
                        Src::SocW2 { blk, i, j },
                    );
                }
            }
            off += q;
        }

        // fill-reducing ordering on the undirected pattern
        let edges: Vec<(usize, usize)> = coords
            .iter()
            .copied()
            .filter(|&(i, j)| i != j)
            .collect();
        let perm = min_degree_order(nkkt, &edges);
        let mut iperm = vec![0usize; nkkt];
        for (k, &v) in perm.iter().enumerate() {
            iperm[v] = k;
        }
        let permuted: Vec<(usize, usize)> = coords
            .iter()
            .map(|&(i, j)| {
                let (a, b) = (iperm[i], iperm[j]);
                (a.min(b), a.max(b))
            })
            .collect();
        let (csc, positions) = UpperCsc::from_coords(nkkt, &permuted);

        let mut diag_positions = vec![0usize; nkkt];
        for k in 0..nkkt {
            // the first nkkt coords are the diagonal, in original order
            diag_positions[perm[k]] = positions[k];
        }
        let signs: Vec<i8> = perm.iter().map(|&v| if v < nx { 1 } else { -1 }).collect();
        let symbolic = LdlSymbolic::analyze(&csc);

        Self {
            nkkt,
            nx,
            csc,
            positions,
            sources,
            diag_positions,
            signs,
            perm,
            symbolic,
            factor: None,
            static_reg,
            scratch: vec![0.0; nkkt],
            scratch2: vec![0.0; nkkt],
        }
    }

    /// Refreshes scaling-dependent values and refactors.
    pub fn refactor(&mut self, nt: &NtScaling) -> Result<()> {
        self.csc.values.iter_mut().for_each(|v| *v = 0.0);
        for (pos, src) in self.positions.iter().zip(&self.sources) {
            let v = match *src {
                Src::Const(v) => v,
                Src::OrthantW2(i) => -nt.orthant_w2(i),
                Src::SocW2 { blk, i, j } => -nt.soc_w2(blk, i, j),
            };
            self.csc.values[*pos] += v;
        }
        // static regularization on top of the exact values
        let exact = self.csc.values.clone();
        for k in 0..self.nkkt {
            let orig = self.perm[k];
            let reg = if orig < self.nx {
                self.static_reg
            } else {
                -self.static_reg
            };
            self.csc.values[self.diag_positions[orig]] += reg;
        }
        let factor = self.symbolic.factor(&self.csc, &self.signs, 1e-13);
        // restore exact values for refinement matvecs
        self.csc.values = exact;
        self.factor = Some(factor);
        Ok(())
    }

    /// Solves the exact KKT system with the regularized factor plus iterative
    /// refinement. Refinement keeps the best candidate and stops when a round
    /// no longer improves. `rhs` and the result live in (x, y, z) block order.
    pub fn solve(&mut self, rhs: &[f64], out: &mut [f64]) -> Result<()> {
        let factor = self
            .factor
            .as_ref()
            .ok_or_else(|| Error::NumericalBreakdown("solve before factorization".into()))?;
        let n = self.nkkt;
        let xp = &mut self.scratch;
        for k in 0..n {
            xp[k] = rhs[self.perm[k]];
        }
        factor.solve(xp);
        let mut sol_p = xp.clone();
        let mut best = sol_p.clone();

        let rhs_norm = rhs.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let kscale = self.matrix_scale();
        let mut best_res = f64::INFINITY;
        for _ in 0..12 {
            let res = &mut self.scratch2;
            self.csc.sym_mul(&sol_p, res);
            let mut worst = 0.0f64;
            for k in 0..n {
                res[k] = rhs[self.perm[k]] - res[k];
                worst = worst.max(res[k].abs());
            }
            if worst < best_res {
                best_res = worst;
                best.copy_from_slice(&sol_p);
            } else if worst > 0.5 * best_res {
                break; // refinement stagnated
            }
            let sol_norm = sol_p.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            if worst <= 1e-15 * (1.0 + rhs_norm + kscale * sol_norm) {
                break;
            }
            factor.solve(res);
            for k in 0..n {
                sol_p[k] += res[k];
            }
        }
        for k in 0..n {
            out[self.perm[k]] = best[k];
        }
        Ok(())
    }

    /// Largest absolute entry of the exact KKT values, used to scale residual
    /// acceptance thresholds.
    pub fn matrix_scale(&self) -> f64 {
        self.csc.values.iter().fold(1.0f64, |m, v| m.max(v.abs()))
    }

    /// Residual norm of the exact system for the given solution, used to
    /// detect a failed factorization that needs more regularization.
    pub fn residual_norm(&mut self, rhs: &[f64], sol: &[f64]) -> f64 {
        let n = self.nkkt;
        for k in 0..n {
            self.scratch[k] = sol[self.perm[k]];
        }
        let res = &mut self.scratch2;
        self.csc.sym_mul(&self.scratch, res);
        let mut worst = 0.0f64;
        for k in 0..n {
            worst = worst.max((rhs[self.perm[k]] - res[k]).abs());
        }
        worst
    }
}
