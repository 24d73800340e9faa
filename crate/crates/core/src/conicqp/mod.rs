//! The shared continuous-optimization engine: convex programs with a
//! positive-semidefinite quadratic cost, linear constraints, bounds and
//! rotated second-order cone blocks, solved by a primal-dual interior-point
//! method. Every continuous subproblem in the suite is expressed in this one
//! canonical form.

mod cones;
mod ipm;
mod kkt;
mod ldl;
mod stdform;

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};

use crate::error::{Error, Result};

/// Sense of a linear constraint row.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RowSense {
    Le,
    Eq,
    Ge,
}

#[derive(Debug, Clone)]
pub(crate) struct LinRow {
    pub coeffs: Vec<(usize, f64)>,
    pub sense: RowSense,
    pub rhs: f64,
}

/// A rotated second-order cone `2 x_a x_b >= ||x_members||^2`, `x_a, x_b >= 0`.
#[derive(Debug, Clone)]
pub struct RsocBlock {
    pub a: usize,
    pub b: usize,
    pub x: Vec<usize>,
}

/// A convex program in the canonical form accepted by [`solve`].
#[derive(Debug, Clone, Default)]
pub struct ConicProgram {
    nvar: usize,
    quad_diag: Vec<f64>,
    gram_rows: Vec<Vec<(usize, f64)>>,
    cost: Vec<f64>,
    offset: f64,
    lo: Vec<f64>,
    hi: Vec<f64>,
    rows: Vec<LinRow>,
    rsoc: Vec<RsocBlock>,
}

impl ConicProgram {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds a variable with the given bounds and returns its index.
    pub fn add_var(&mut self, lo: f64, hi: f64) -> usize {
        let id = self.nvar;
        self.nvar += 1;
        self.lo.push(lo);
        self.hi.push(hi);
        self.cost.push(0.0);
        self.quad_diag.push(0.0);
        id
    }

    pub fn add_vars(&mut self, count: usize, lo: f64, hi: f64) -> Vec<usize> {
        (0..count).map(|_| self.add_var(lo, hi)).collect()
    }

    /// Adds a variable pinned to a constant value.
    pub fn add_fixed_var(&mut self, value: f64) -> usize {
        self.add_var(value, value)
    }

    pub fn nvar(&self) -> usize {
        self.nvar
    }

    pub fn set_cost(&mut self, var: usize, c: f64) {
        self.cost[var] = c;
    }

    pub fn add_cost(&mut self, var: usize, c: f64) {
        self.cost[var] += c;
    }

    /// Adds `0.5 * q * x_var^2` to the objective (q >= 0).
    pub fn add_quad_diag(&mut self, var: usize, q: f64) {
        self.quad_diag[var] += q;
    }

    /// Adds `0.5 * (f' x)^2` to the objective.
    pub fn add_quad_gram_row(&mut self, coeffs: Vec<(usize, f64)>) {
        self.gram_rows.push(coeffs);
    }

    pub fn set_offset(&mut self, offset: f64) {
        self.offset = offset;
    }

    pub fn add_row(&mut self, sense: RowSense, rhs: f64, coeffs: Vec<(usize, f64)>) -> usize {
        self.rows.push(LinRow { coeffs, sense, rhs });
        self.rows.len() - 1
    }

    /// Declares `2 x_a x_b >= sum of x_j^2` over the member list.
    pub fn add_rsoc(&mut self, a: usize, b: usize, x: Vec<usize>) -> usize {
        self.rsoc.push(RsocBlock { a, b, x });
        self.rsoc.len() - 1
    }

    pub fn set_bounds(&mut self, var: usize, lo: f64, hi: f64) {
        self.lo[var] = lo;
        self.hi[var] = hi;
    }

    pub(crate) fn validate(&self) -> Result<()> {
        let n = self.nvar;
        let check = |j: usize| -> Result<()> {
            if j >= n {
                return Err(Error::IndexOutOfRange { index: j, bound: n });
            }
            Ok(())
        };
        for row in &self.rows {
            if !row.rhs.is_finite() {
                return Err(Error::InvalidConfig("row rhs must be finite".into()));
            }
            for &(j, v) in &row.coeffs {
                check(j)?;
                if !v.is_finite() {
                    return Err(Error::InvalidConfig("row coefficient must be finite".into()));
                }
            }
        }
        for j in 0..n {
            if self.lo[j] > self.hi[j] {
                return Err(Error::InvalidConfig(format!(
                    "variable {j} has lo > hi"
                )));
            }
            if self.quad_diag[j] < 0.0 {
                return Err(Error::InvalidConfig(
                    "quadratic diagonal must be nonnegative".into(),
                ));
            }
        }
        let mut ab_seen = std::collections::HashSet::new();
        for blk in &self.rsoc {
            check(blk.a)?;
            check(blk.b)?;
            for &j in &blk.x {
                check(j)?;
            }
            if !ab_seen.insert(blk.a) || !ab_seen.insert(blk.b) {
                return Err(Error::InvalidConfig(
                    "a variable may occupy at most one cone's (a, b) slot".into(),
                ));
            }
        }
        for row in &self.gram_rows {
            for &(j, _) in row {
                check(j)?;
            }
        }
        Ok(())
    }

    /// 0.5 x'Qx + c'x + offset evaluated at a point in user-variable space.
    pub fn objective_at(&self, x: &[f64]) -> f64 {
        let mut obj = self.offset;
        for j in 0..self.nvar {
            obj += self.cost[j] * x[j] + 0.5 * self.quad_diag[j] * x[j] * x[j];
        }
        for row in &self.gram_rows {
            let dot: f64 = row.iter().map(|&(j, v)| v * x[j]).sum();
            obj += 0.5 * dot * dot;
        }
        obj
    }

    /// Worst violation of the rotated-cone blocks at a point, normalized by
    /// 1 + ||x_members||^2. Nonpositive means feasible.
    pub fn rsoc_violation(&self, x: &[f64]) -> f64 {
        let mut worst: f64 = 0.0;
        for blk in &self.rsoc {
            let nrm2: f64 = blk.x.iter().map(|&j| x[j] * x[j]).sum();
            let slack = 2.0 * x[blk.a] * x[blk.b] - nrm2;
            worst = worst.max(-slack / (1.0 + nrm2));
            worst = worst.max(-x[blk.a]).max(-x[blk.b]);
        }
        worst
    }

    /// Structural and numeric fingerprint for warm-start identity checks.
    pub fn fingerprint(&self) -> u64 {
        let mut h = DefaultHasher::new();
        self.nvar.hash(&mut h);
        for v in self
            .quad_diag
            .iter()
            .chain(&self.cost)
            .chain(&self.lo)
            .chain(&self.hi)
        {
            v.to_bits().hash(&mut h);
        }
        self.offset.to_bits().hash(&mut h);
        for row in &self.rows {
            (row.sense as u8).hash(&mut h);
            row.rhs.to_bits().hash(&mut h);
            for &(j, v) in &row.coeffs {
                j.hash(&mut h);
                v.to_bits().hash(&mut h);
            }
        }
        for blk in &self.rsoc {
            blk.a.hash(&mut h);
            blk.b.hash(&mut h);
            blk.x.hash(&mut h);
        }
        for row in &self.gram_rows {
            for &(j, v) in row {
                j.hash(&mut h);
                v.to_bits().hash(&mut h);
            }
        }
        h.finish()
    }

    /// Plain-text canonical listing (sorted triplets) for golden-file diffing.
    pub fn dump_canonical(&self) -> String {
        use std::fmt::Write;
        let mut out = String::new();
        writeln!(out, "vars {}", self.nvar).unwrap();
        for j in 0..self.nvar {
            writeln!(
                out,
                "var {} lo {:?} hi {:?} cost {:?} quad {:?}",
                j, self.lo[j], self.hi[j], self.cost[j], self.quad_diag[j]
            )
            .unwrap();
        }
        writeln!(out, "offset {:?}", self.offset).unwrap();
        let mut rows: Vec<String> = self
            .rows
            .iter()
            .map(|r| {
                let mut coeffs = r.coeffs.clone();
                coeffs.sort_unstable_by_key(|&(j, _)| j);
                let body: Vec<String> =
                    coeffs.iter().map(|(j, v)| format!("{j}:{v:?}")).collect();
                format!("row {:?} rhs {:?} [{}]", r.sense, r.rhs, body.join(" "))
            })
            .collect();
        rows.sort();
        for r in rows {
            writeln!(out, "{r}").unwrap();
        }
        let mut cones: Vec<String> = self
            .rsoc
            .iter()
            .map(|b| format!("rsoc a {} b {} x {:?}", b.a, b.b, b.x))
            .collect();
        cones.sort();
        for c in cones {
            writeln!(out, "{c}").unwrap();
        }
        let mut grams: Vec<String> = self
            .gram_rows
            .iter()
            .map(|row| {
                let mut coeffs = row.clone();
                coeffs.sort_unstable_by_key(|&(j, _)| j);
                format!(
                    "gram [{}]",
                    coeffs
                        .iter()
                        .map(|(j, v)| format!("{j}:{v:?}"))
                        .collect::<Vec<_>>()
                        .join(" ")
                )
            })
            .collect();
        grams.sort();
        for g in grams {
            writeln!(out, "{g}").unwrap();
        }
        out
    }
}

/// Solver exit status.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveStatus {
    Optimal,
    Infeasible,
    Unbounded,
    IterLimit,
    TimeLimit,
}

/// Residual summary of a solve; the certificate entry carries the Farkas-ray
/// violation measure for infeasible/unbounded exits.
#[derive(Debug, Clone, Default)]
pub struct Residuals {
    pub primal: f64,
    pub dual: f64,
    pub gap: f64,
    pub certificate: Option<f64>,
}

/// Multipliers grouped per constraint class, in the sign convention of the
/// canonicalized rows (Ge rows report nonpositive values).
#[derive(Debug, Clone, Default)]
pub struct Duals {
    pub rows: Vec<f64>,
    pub bound_lo: Vec<f64>,
    pub bound_hi: Vec<f64>,
    pub rsoc: Vec<Vec<f64>>,
}

#[derive(Debug, Clone)]
pub struct ConicSolution {
    pub x: Vec<f64>,
    pub duals: Duals,
    pub primal_obj: f64,
    pub dual_obj: f64,
    pub status: SolveStatus,
    pub residuals: Residuals,
    pub iterations: usize,
    pub solve_time_s: f64,
    pub fingerprint: u64,
    warm: Option<ipm::WarmPoint>,
}

/// Interior-point options; the defaults match the suite-wide contracts.
///
/// `tol` is the strict optimality target. When progress stalls before it is
/// reached (degenerate optimal faces push the scaling matrices beyond what
/// f64 factorizations resolve), the best iterate is still accepted as
/// Optimal if its residuals meet `tol_reduced` and its relative duality gap
/// meets `tol_reduced / 10`; the actual residuals are always reported on the
/// solution.
#[derive(Debug, Clone)]
pub struct SolveOptions {
    pub tol: f64,
    pub tol_reduced: f64,
    pub max_iter: usize,
    pub time_limit_s: Option<f64>,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            tol_reduced: 1e-5,
            max_iter: 200,
            time_limit_s: None,
        }
    }
}

/// Solves the program cold.
pub fn solve(prog: &ConicProgram, opts: &SolveOptions) -> Result<ConicSolution> {
    solve_inner(prog, opts, None)
}

/// Re-solves a program that differs from the prior's only in bounds or
/// right-hand sides, seeding the interior point from the prior solution.
/// Falls back to a cold start on any shape mismatch; an unchanged program
/// returns the prior solution as-is.
pub fn warm_start(
    prog: &ConicProgram,
    prior: &ConicSolution,
    opts: &SolveOptions,
) -> Result<ConicSolution> {
    if prior.status == SolveStatus::Optimal && prior.fingerprint == prog.fingerprint() {
        return Ok(prior.clone());
    }
    solve_inner(prog, opts, prior.warm.as_ref())
}

fn solve_inner(
    prog: &ConicProgram,
    opts: &SolveOptions,
    warm: Option<&ipm::WarmPoint>,
) -> Result<ConicSolution> {
    let sf = stdform::lower(prog)?;
    let warm_usable = warm.filter(|wp| {
        wp.x.len() == sf.n
            && wp.y.len() == sf.a.nrows()
            && wp.z.len() == sf.g.nrows()
            && wp.s.len() == sf.g.nrows()
    });
    let settings = ipm::IpmSettings {
        tol: opts.tol,
        tol_reduced: opts.tol_reduced.max(opts.tol),
        max_iter: opts.max_iter,
        time_limit: opts.time_limit_s,
        static_reg: 1e-9,
    };
    let out = ipm::solve_hsde(&sf, &settings, warm_usable)?;

    let x_user = out.x[..prog.nvar].to_vec();
    let primal_obj = prog.objective_at(&x_user);
    let n = sf.n;
    let p = sf.a.nrows();
    let dual_obj = {
        let by: f64 = sf.b.iter().zip(&out.y).map(|(a, b)| a * b).sum();
        let hz: f64 = sf.h.iter().zip(&out.z).map(|(a, b)| a * b).sum();
        -(by + hz) + sf.offset
    };
    let _ = (n, p);

    let mut duals = Duals::default();
    for &(pos, in_a, sign) in &sf.row_map {
        let v = if in_a { out.y[pos] } else { out.z[pos] };
        duals.rows.push(sign * v);
    }
    for &(lo_row, hi_row) in &sf.bound_rows {
        duals.bound_lo.push(lo_row.map(|r| out.z[r]).unwrap_or(0.0));
        duals.bound_hi.push(hi_row.map(|r| out.z[r]).unwrap_or(0.0));
    }
    for (blk, &start) in sf.rsoc_rows.iter().enumerate() {
        let q = prog.rsoc[blk].x.len() + 2;
        duals.rsoc.push(out.z[start..start + q].to_vec());
    }

    Ok(ConicSolution {
        x: x_user,
        duals,
        primal_obj,
        dual_obj,
        status: out.status,
        residuals: Residuals {
            primal: out.primal_residual,
            dual: out.dual_residual,
            gap: out.gap,
            certificate: out.certificate_residual,
        },
        iterations: out.iterations,
        solve_time_s: out.solve_time_s,
        fingerprint: prog.fingerprint(),
        warm: Some(ipm::WarmPoint {
            x: out.x,
            y: out.y,
            z: out.z,
            s: out.s,
        }),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn solve_default(prog: &ConicProgram) -> ConicSolution {
        solve(prog, &SolveOptions::default()).unwrap()
    }

    #[test]
    fn min_square_above_one() {
        // min x^2 s.t. x >= 1  ->  x = 1, obj = 1
        let mut prog = ConicProgram::new();
        let x = prog.add_var(1.0, f64::INFINITY);
        prog.add_quad_diag(x, 2.0);
        let sol = solve_default(&prog);
        assert_eq!(sol.status, SolveStatus::Optimal);
        assert!((sol.x[x] - 1.0).abs() < 1e-6, "x = {}", sol.x[x]);
        assert!((sol.primal_obj - 1.0).abs() < 1e-6);
    }

    #[test]
    fn rotated_cone_geometric_mean() {
        // min a + b s.t. 2ab >= 1 -> a = b = 1/sqrt(2), obj = sqrt(2)
        let mut prog = ConicProgram::new();
        let a = prog.add_var(0.0, f64::INFINITY);
        let b = prog.add_var(0.0, f64::INFINITY);
        let one = prog.add_fixed_var(1.0);
        prog.set_cost(a, 1.0);
        prog.set_cost(b, 1.0);
        prog.add_rsoc(a, b, vec![one]);
        let sol = solve_default(&prog);
        assert_eq!(sol.status, SolveStatus::Optimal);
        let inv_sqrt2 = 1.0 / std::f64::consts::SQRT_2;
        assert!((sol.x[a] - inv_sqrt2).abs() < 1e-6);
        assert!((sol.x[b] - inv_sqrt2).abs() < 1e-6);
        assert!((sol.primal_obj - std::f64::consts::SQRT_2).abs() < 1e-6);
    }

    #[test]
    fn infeasible_box_detected() {
        // x >= 2 and x <= 1 as rows (not bounds) is conically infeasible
        let mut prog = ConicProgram::new();
        let x = prog.add_var(f64::NEG_INFINITY, f64::INFINITY);
        prog.set_cost(x, 1.0);
        prog.add_row(RowSense::Ge, 2.0, vec![(x, 1.0)]);
        prog.add_row(RowSense::Le, 1.0, vec![(x, 1.0)]);
        let sol = solve_default(&prog);
        assert_eq!(sol.status, SolveStatus::Infeasible);
        assert!(sol.residuals.certificate.is_some());
    }

    #[test]
    fn unbounded_detected() {
        let mut prog = ConicProgram::new();
        let x = prog.add_var(f64::NEG_INFINITY, 0.0);
        prog.set_cost(x, 1.0);
        let sol = solve_default(&prog);
        assert_eq!(sol.status, SolveStatus::Unbounded);
    }

    #[test]
    fn equality_and_quadratic() {
        // min 0.5(x^2 + y^2) s.t. x + y = 2 -> x = y = 1
        let mut prog = ConicProgram::new();
        let x = prog.add_var(f64::NEG_INFINITY, f64::INFINITY);
        let y = prog.add_var(f64::NEG_INFINITY, f64::INFINITY);
        prog.add_quad_diag(x, 1.0);
        prog.add_quad_diag(y, 1.0);
        prog.add_row(RowSense::Eq, 2.0, vec![(x, 1.0), (y, 1.0)]);
        let sol = solve_default(&prog);
        assert_eq!(sol.status, SolveStatus::Optimal);
        assert!((sol.x[x] - 1.0).abs() < 1e-7);
        assert!((sol.x[y] - 1.0).abs() < 1e-7);
        assert!((sol.primal_obj - 1.0).abs() < 1e-7);
        // weak duality at the solution
        assert!(sol.dual_obj <= sol.primal_obj + 1e-8 * (1.0 + sol.primal_obj.abs()));
    }

    #[test]
    fn warm_start_identical_program_returns_prior() {
        let mut prog = ConicProgram::new();
        let x = prog.add_var(1.0, f64::INFINITY);
        prog.add_quad_diag(x, 2.0);
        let sol = solve_default(&prog);
        let again = warm_start(&prog, &sol, &SolveOptions::default()).unwrap();
        assert_eq!(again.status, SolveStatus::Optimal);
        assert_eq!(again.primal_obj, sol.primal_obj);
    }

    #[test]
    fn warm_start_after_bound_change() {
        let mut prog = ConicProgram::new();
        let x = prog.add_var(1.0, f64::INFINITY);
        let y = prog.add_var(0.0, f64::INFINITY);
        prog.add_quad_diag(x, 2.0);
        prog.add_quad_diag(y, 2.0);
        prog.add_row(RowSense::Ge, 1.5, vec![(x, 1.0), (y, 1.0)]);
        let parent = solve_default(&prog);

        let mut child = prog.clone();
        child.set_bounds(y, 0.0, 0.0);
        let sol = warm_start(&child, &parent, &SolveOptions::default()).unwrap();
        assert_eq!(sol.status, SolveStatus::Optimal);
        // restriction can only raise the optimum
        assert!(sol.primal_obj >= parent.primal_obj - 1e-9);

        // tightening into contradiction flips to infeasible
        let mut bad = prog.clone();
        bad.add_row(RowSense::Le, 0.5, vec![(x, 1.0)]);
        let sol = warm_start(&bad, &parent, &SolveOptions::default()).unwrap();
        assert_eq!(sol.status, SolveStatus::Infeasible);
    }

    #[test]
    fn canonical_dump_is_stable() {
        let mut prog = ConicProgram::new();
        let x = prog.add_var(0.0, 1.0);
        let y = prog.add_var(0.0, 1.0);
        prog.add_row(RowSense::Le, 1.0, vec![(y, 2.0), (x, 1.0)]);
        let d1 = prog.dump_canonical();
        let d2 = prog.dump_canonical();
        assert_eq!(d1, d2);
        assert!(d1.contains("row Le rhs 1.0 [0:1.0 1:2.0]"));
    }

    #[test]
    fn fingerprint_tracks_changes() {
        let mut prog = ConicProgram::new();
        let x = prog.add_var(0.0, 1.0);
        prog.set_cost(x, 1.0);
        let f1 = prog.fingerprint();
        prog.set_bounds(x, 0.0, 2.0);
        assert_ne!(f1, prog.fingerprint());
    }
}
