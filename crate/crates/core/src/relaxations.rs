//! Continuous lower-bounding machinery: the box relaxation of the big-M
//! formulation (BoxMP), the decomposed per-feature conic relaxations of the
//! complementarity formulation (DSCoP, and DSCoMP with big-M cuts), the
//! 3x3-block membership check behind the cone decomposition, and the
//! threshold above which BoxMP collapses to the plain SVM value.

use nalgebra::{DVector, Matrix3};

use crate::conicqp::{self, ConicProgram, RowSense, SolveOptions, SolveStatus};
use crate::domain::{
    support_of, Dataset, IndicatorKind, IndicatorVector, PrimalPoint, RelaxationSolution,
    SolveStats, DEFAULT_ZERO_TOL,
};
use crate::error::{Error, Result};
use crate::svm::{add_margin_rows, solve_svm};

/// Variable handles of a margin model shared by all relaxation builders.
pub(crate) struct MarginVars {
    pub w: Vec<usize>,
    pub b: usize,
    pub xi: Vec<usize>,
}

/// Adds (w, b, xi) with margin rows and the C-weighted slack cost.
pub(crate) fn margin_model(prog: &mut ConicProgram, data: &Dataset, c: f64) -> MarginVars {
    let w = prog.add_vars(data.n(), f64::NEG_INFINITY, f64::INFINITY);
    let b = prog.add_var(f64::NEG_INFINITY, f64::INFINITY);
    let xi = prog.add_vars(data.m(), 0.0, f64::INFINITY);
    for &x in &xi {
        prog.set_cost(x, c);
    }
    add_margin_rows(prog, data, &w, b, &xi);
    MarginVars { w, b, xi }
}

fn extract_stats(sol: &conicqp::ConicSolution) -> SolveStats {
    SolveStats {
        iterations: sol.iterations,
        primal_residual: sol.residuals.primal,
        dual_residual: sol.residuals.dual,
        duality_gap: sol.residuals.gap,
        wall_time_s: sol.solve_time_s,
        notes: Vec::new(),
    }
}

fn require_optimal(sol: &conicqp::ConicSolution, what: &str) -> Result<()> {
    match sol.status {
        SolveStatus::Optimal => Ok(()),
        other => Err(Error::NumericalBreakdown(format!(
            "{what} ended with status {other:?}"
        ))),
    }
}

/// Relaxation points carry exactly-feasible minimal slacks so that the
/// recomputed value error stays dominated by the solver's duality gap.
fn primal_point(
    data: &Dataset,
    c: f64,
    w: DVector<f64>,
    b: f64,
    xi_solver: DVector<f64>,
) -> PrimalPoint {
    let xi = crate::domain::min_slacks(&w, b, data).expect("dimensions fixed by builder");
    let _ = xi_solver;
    let objective = 0.5 * w.norm_squared() + c * xi.sum();
    let support = support_of(&w, DEFAULT_ZERO_TOL);
    PrimalPoint {
        w,
        b,
        xi,
        objective,
        support,
    }
}

/// Box relaxation of the big-M formulation: selection indicators relaxed to
/// [0, 1] with the budget held at equality. The bound is valid for the
/// cardinality-constrained problem only when M covers the max-norm of its
/// optimum; validity provenance is the caller's responsibility.
pub fn solve_boxmp(data: &Dataset, c: f64, budget: usize, big_m: f64) -> Result<RelaxationSolution> {
    solve_boxmp_with(data, c, budget, big_m, &SolveOptions::default())
}

pub fn solve_boxmp_with(
    data: &Dataset,
    c: f64,
    budget: usize,
    big_m: f64,
    opts: &SolveOptions,
) -> Result<RelaxationSolution> {
    if !(big_m > 0.0) {
        return Err(Error::InvalidConfig(format!("big-M must be > 0, got {big_m}")));
    }
    let n = data.n();
    let mut prog = ConicProgram::new();
    let mv = margin_model(&mut prog, data, c);
    for &wj in &mv.w {
        prog.add_quad_diag(wj, 1.0);
    }
    let v = prog.add_vars(n, 0.0, 1.0);
    for j in 0..n {
        // -M v_j <= w_j <= M v_j
        prog.add_row(RowSense::Le, 0.0, vec![(mv.w[j], 1.0), (v[j], -big_m)]);
        prog.add_row(RowSense::Ge, 0.0, vec![(mv.w[j], 1.0), (v[j], big_m)]);
    }
    prog.add_row(
        RowSense::Eq,
        budget as f64,
        v.iter().map(|&vj| (vj, 1.0)).collect(),
    );

    let sol = conicqp::solve(&prog, opts)?;
    require_optimal(&sol, "box relaxation")?;

    let w = DVector::from_fn(n, |j, _| sol.x[mv.w[j]]);
    let xi = DVector::from_fn(data.m(), |i, _| sol.x[mv.xi[i]]);
    let point = primal_point(data, c, w.clone(), sol.x[mv.b], xi);
    let indicator = IndicatorVector::new(
        DVector::from_fn(n, |j, _| sol.x[v[j]].clamp(0.0, 1.0)),
        IndicatorKind::SelectV,
    )?;
    let diag_w = w.map(|x| x * x);
    let lower_bound = point.objective;
    let mut stats = extract_stats(&sol);
    stats.notes.push(format!(
        "bound valid for the cardinality problem when M={big_m} covers the optimum's max-norm (caller-supplied)"
    ));
    Ok(RelaxationSolution {
        point,
        indicator,
        diag_w,
        lower_bound,
        stats,
    })
}

/// Decomposed conic relaxation of the complementarity formulation: one
/// rotated-cone block per feature, `(1 - u_j) W_jj >= w_j^2`, with the
/// deselection budget at equality. Needs no big-M and is always a valid
/// lower bound for the cardinality-constrained problem.
pub fn solve_dscop(data: &Dataset, c: f64, budget: usize) -> Result<RelaxationSolution> {
    solve_dscop_with(data, c, budget, &SolveOptions::default())
}

pub fn solve_dscop_with(
    data: &Dataset,
    c: f64,
    budget: usize,
    opts: &SolveOptions,
) -> Result<RelaxationSolution> {
    let built = build_dscop(data, c, budget, None)?;
    let sol = conicqp::solve(&built.prog, opts)?;
    require_optimal(&sol, "decomposed conic relaxation")?;
    finish_dscop(data, c, built, sol, None)
}

/// DSCoP plus the big-M linking cuts `|w_j| <= M (1 - u_j)`; at least as
/// tight as both DSCoP and BoxMP for the same (valid) M.
pub fn solve_dscomp(
    data: &Dataset,
    c: f64,
    budget: usize,
    big_m: f64,
) -> Result<RelaxationSolution> {
    solve_dscomp_with(data, c, budget, big_m, &SolveOptions::default())
}

pub fn solve_dscomp_with(
    data: &Dataset,
    c: f64,
    budget: usize,
    big_m: f64,
    opts: &SolveOptions,
) -> Result<RelaxationSolution> {
    if !(big_m > 0.0) {
        return Err(Error::InvalidConfig(format!("big-M must be > 0, got {big_m}")));
    }
    let built = build_dscop(data, c, budget, Some(big_m))?;
    let sol = conicqp::solve(&built.prog, opts)?;
    require_optimal(&sol, "decomposed conic relaxation with big-M cuts")?;
    finish_dscop(data, c, built, sol, Some(big_m))
}

/// Decomposed form of the box relaxation. Its two-by-two blocks reproduce the
/// box relaxation's value exactly, so it is solved through the same path and
/// the equivalence is recorded in the notes.
pub fn solve_dsmp(data: &Dataset, c: f64, budget: usize, big_m: f64) -> Result<RelaxationSolution> {
    let mut out = solve_boxmp(data, c, budget, big_m)?;
    out.stats
        .notes
        .push("decomposed two-by-two form; attains the box relaxation value exactly".into());
    Ok(out)
}

pub(crate) struct DscopModel {
    pub prog: ConicProgram,
    pub mv: MarginVars,
    pub u: Vec<usize>,
    pub s: Vec<usize>,
    pub q: Vec<usize>,
}

fn build_dscop(data: &Dataset, c: f64, budget: usize, big_m: Option<f64>) -> Result<DscopModel> {
    let n = data.n();
    if budget < 1 || budget > n {
        return Err(Error::InvalidConfig(format!(
            "budget must lie in [1, {n}], got {budget}"
        )));
    }
    let mut prog = ConicProgram::new();
    let mv = margin_model(&mut prog, data, c);
    let u = prog.add_vars(n, 0.0, 1.0);
    let s = prog.add_vars(n, f64::NEG_INFINITY, f64::INFINITY);
    let q = prog.add_vars(n, f64::NEG_INFINITY, f64::INFINITY);
    for j in 0..n {
        prog.set_cost(q[j], 1.0);
        prog.add_row(RowSense::Eq, 1.0, vec![(s[j], 1.0), (u[j], 1.0)]);
        // 2 q_j s_j >= w_j^2, i.e. (1 - u_j) W_jj >= w_j^2 with W_jj = 2 q_j
        prog.add_rsoc(q[j], s[j], vec![mv.w[j]]);
        if let Some(m) = big_m {
            // |w_j| <= M s_j
            prog.add_row(RowSense::Le, 0.0, vec![(mv.w[j], 1.0), (s[j], -m)]);
            prog.add_row(RowSense::Ge, 0.0, vec![(mv.w[j], 1.0), (s[j], m)]);
        }
    }
    prog.add_row(
        RowSense::Eq,
        (n - budget) as f64,
        u.iter().map(|&uj| (uj, 1.0)).collect(),
    );
    Ok(DscopModel { prog, mv, u, s, q })
}

fn finish_dscop(
    data: &Dataset,
    c: f64,
    built: DscopModel,
    sol: conicqp::ConicSolution,
    big_m: Option<f64>,
) -> Result<RelaxationSolution> {
    let n = data.n();
    let w = DVector::from_fn(n, |j, _| sol.x[built.mv.w[j]]);
    let xi = DVector::from_fn(data.m(), |i, _| sol.x[built.mv.xi[i]]);
    let point = primal_point(data, c, w.clone(), sol.x[built.mv.b], xi);
    let u = DVector::from_fn(n, |j, _| sol.x[built.u[j]].clamp(0.0, 1.0));
    let diag_w = DVector::from_fn(n, |j, _| (2.0 * sol.x[built.q[j]]).max(0.0));
    let lower_bound = 0.5 * diag_w.sum() + c * point.xi.sum();

    let mut stats = extract_stats(&sol);
    if let Some(m) = big_m {
        stats.notes.push(format!(
            "big-M cuts active with M={m}; bound inherits the caller's validity provenance for M"
        ));
    }
    // perspective identity at the optimum: W_jj (1 - u_j) = w_j^2
    for j in 0..n {
        if u[j] <= 1.0 - 1e-6 {
            let lhs = diag_w[j] * (1.0 - u[j]);
            let gap = (lhs - w[j] * w[j]).abs();
            if gap > 1e-6 * (1.0 + diag_w[j]) {
                stats.notes.push(format!(
                    "perspective identity violated at feature {j}: |W(1-u) - w^2| = {gap:.3e}"
                ));
            }
        }
    }
    let indicator = IndicatorVector::new(u, IndicatorKind::DeselectU)?;
    Ok(RelaxationSolution {
        point,
        indicator,
        diag_w,
        lower_bound,
        stats,
    })
}

/// Membership in the feasible slice
/// `{(w, u, W) : [[1, w, u], [w, W, 0], [u, 0, u]] is PSD}`
/// decided by two independent routes: smallest eigenvalue of the 3x3 matrix,
/// and the equivalent second-order-cone inequality
/// `sqrt((W - s)^2 + 4 w^2) <= W + s` with `s = 1 - u`, `u in [0, 1]`,
/// `W >= 0`. The routes agree for points farther than `tol` from the
/// boundary.
pub fn psd3_membership(w: f64, u: f64, w_jj: f64, tol: f64) -> (bool, bool) {
    let m = Matrix3::new(1.0, w, u, w, w_jj, 0.0, u, 0.0, u);
    let eig = m.symmetric_eigenvalues();
    let eig_route = eig.iter().all(|&ev| ev >= -tol);

    let s = 1.0 - u;
    let soc_route = u >= -tol
        && u <= 1.0 + tol
        && w_jj >= -tol
        && ((w_jj - s).powi(2) + 4.0 * w * w).sqrt() <= w_jj + s + tol;
    (eig_route, soc_route)
}

/// The data-based threshold: for any M at or above `||w*||_1 / budget`
/// (w* the plain-SVM optimum), the box relaxation collapses to the SVM value
/// and carries no selection information.
pub fn big_m_collapse_threshold(data: &Dataset, c: f64, budget: usize) -> Result<f64> {
    if budget < 1 || budget > data.n() {
        return Err(Error::InvalidConfig(format!(
            "budget must lie in [1, {}], got {budget}",
            data.n()
        )));
    }
    let svm = solve_svm(data, c, None)?;
    Ok(svm.w.iter().map(|v| v.abs()).sum::<f64>() / budget as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;
    use proptest::prelude::*;

    fn two_point_sparse() -> Dataset {
        Dataset::new(
            DMatrix::from_row_slice(2, 2, &[1.0, 0.0, -1.0, 0.0]),
            DVector::from_vec(vec![1.0, -1.0]),
            None,
            "sparse fixture",
        )
        .unwrap()
    }

    fn two_point_dense() -> Dataset {
        Dataset::new(
            DMatrix::from_row_slice(2, 2, &[1.0, 1.0, -1.0, -1.0]),
            DVector::from_vec(vec![1.0, -1.0]),
            None,
            "dense fixture",
        )
        .unwrap()
    }

    #[test]
    fn boxmp_sparse_fixture() {
        let data = two_point_sparse();
        let r = solve_boxmp(&data, 1.0, 1, 1.0).unwrap();
        assert!((r.lower_bound - 0.5).abs() < 1e-6, "lb = {}", r.lower_bound);
    }

    #[test]
    fn boxmp_dense_fixture_collapses_to_svm() {
        let data = two_point_dense();
        let r = solve_boxmp(&data, 10.0, 1, 1.0).unwrap();
        assert!((r.lower_bound - 0.25).abs() < 1e-6, "lb = {}", r.lower_bound);
    }

    #[test]
    fn boxmp_full_budget_equals_svm() {
        let data = two_point_dense();
        let r = solve_boxmp(&data, 10.0, 2, 1e4).unwrap();
        let svm = solve_svm(&data, 10.0, None).unwrap();
        assert!((r.lower_bound - svm.objective).abs() < 1e-6);
    }

    #[test]
    fn dscop_sparse_fixture() {
        let data = two_point_sparse();
        let r = solve_dscop(&data, 1.0, 1).unwrap();
        assert!((r.lower_bound - 0.5).abs() < 1e-6, "lb = {}", r.lower_bound);
        let u = r.indicator.as_deselect();
        assert!(u[0] < 1e-4, "u = {u:?}");
        assert!(u[1] > 1.0 - 1e-4, "u = {u:?}");
    }

    #[test]
    fn dscop_dense_fixture_strict_gap() {
        // the SVM optimum is dense, so the decomposed bound must sit strictly
        // above the SVM value: 0.5 against 0.25
        let data = two_point_dense();
        let r = solve_dscop(&data, 10.0, 1).unwrap();
        assert!((r.lower_bound - 0.5).abs() < 1e-6, "lb = {}", r.lower_bound);
        let svm = solve_svm(&data, 10.0, None).unwrap();
        assert!(r.lower_bound >= svm.objective + 1e-6);
        // no perspective-identity violations recorded
        assert!(r.stats.notes.iter().all(|n| !n.contains("violated")));
    }

    #[test]
    fn dscop_full_budget_equals_svm() {
        let data = two_point_dense();
        let r = solve_dscop(&data, 10.0, 2).unwrap();
        let svm = solve_svm(&data, 10.0, None).unwrap();
        assert!((r.lower_bound - svm.objective).abs() < 1e-6);
    }

    #[test]
    fn dscomp_dense_fixture() {
        let data = two_point_dense();
        let r = solve_dscomp(&data, 10.0, 1, 1.0).unwrap();
        assert!((r.lower_bound - 0.5).abs() < 1e-6, "lb = {}", r.lower_bound);
        // never below the plain decomposed bound
        let base = solve_dscop(&data, 10.0, 1).unwrap();
        assert!(r.lower_bound >= base.lower_bound - 1e-7 * (1.0 + base.lower_bound.abs()));
    }

    #[test]
    fn dscomp_dominates_boxmp_same_m() {
        let data = crate::dataio::synth_dataset(30, 6, 3);
        let (c, budget, m) = (1.0, 2usize, 2.0);
        let a = solve_dscomp(&data, c, budget, m).unwrap();
        let b = solve_boxmp(&data, c, budget, m).unwrap();
        assert!(a.lower_bound >= b.lower_bound - 2e-6 * (1.0 + b.lower_bound.abs()));
    }

    #[test]
    fn dsmp_matches_boxmp() {
        let data = two_point_dense();
        let a = solve_dsmp(&data, 10.0, 1, 1.0).unwrap();
        let b = solve_boxmp(&data, 10.0, 1, 1.0).unwrap();
        assert!((a.lower_bound - b.lower_bound).abs() < 1e-9);
        assert!(a.stats.notes.iter().any(|n| n.contains("two-by-two")));
    }

    #[test]
    fn psd3_examples() {
        assert_eq!(psd3_membership(0.0, 1.0, 0.0, 1e-9), (true, true));
        assert_eq!(psd3_membership(1.0, 0.0, 1.0, 1e-9), (true, true));
        assert_eq!(psd3_membership(1.0, 0.5, 1.0, 1e-9), (false, false));
    }

    #[test]
    fn collapse_threshold_examples() {
        let sparse = two_point_sparse();
        let t = big_m_collapse_threshold(&sparse, 1.0, 1).unwrap();
        assert!((t - 1.0).abs() < 1e-5);

        let dense = two_point_dense();
        let t1 = big_m_collapse_threshold(&dense, 10.0, 1).unwrap();
        assert!((t1 - 1.0).abs() < 1e-5);
        let t2 = big_m_collapse_threshold(&dense, 10.0, 2).unwrap();
        assert!((t2 - 0.5).abs() < 1e-5);
    }

    #[test]
    fn collapse_threshold_contract_budget_one() {
        // for budget 1 the l1 threshold dominates the max-norm, so any M at
        // or above it makes BoxMP equal the SVM value
        let data = crate::dataio::synth_dataset(25, 5, 9);
        let c = 1.0;
        let thresh = big_m_collapse_threshold(&data, c, 1).unwrap();
        let svm = solve_svm(&data, c, None).unwrap();
        let r = solve_boxmp(&data, c, 1, thresh * (1.0 + 1e-6)).unwrap();
        assert!(
            (r.lower_bound - svm.objective).abs() <= 1e-6 * (1.0 + svm.objective.abs()),
            "boxmp {} vs svm {}",
            r.lower_bound,
            svm.objective
        );
    }

    #[test]
    fn collapse_needs_max_norm_when_optimum_concentrated() {
        // with budget >= 2 and a concentrated SVM optimum, the l1/B threshold
        // alone does not collapse BoxMP (the selection variables are capped
        // at one); the max-norm does
        let data = crate::dataio::synth_dataset(25, 5, 9);
        let (c, budget) = (1.0, 2usize);
        let svm = solve_svm(&data, c, None).unwrap();
        let linf = svm.w.iter().map(|v| v.abs()).fold(0.0f64, f64::max);
        let thresh = big_m_collapse_threshold(&data, c, budget).unwrap();
        assert!(linf > thresh, "fixture must have a concentrated optimum");
        let gap = solve_boxmp(&data, c, budget, thresh * (1.0 + 1e-6)).unwrap();
        assert!(gap.lower_bound > svm.objective + 1e-4);
        let collapsed = solve_boxmp(&data, c, budget, linf.max(thresh) * (1.0 + 1e-6)).unwrap();
        assert!(
            (collapsed.lower_bound - svm.objective).abs() <= 1e-6 * (1.0 + svm.objective.abs())
        );
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(512))]
        #[test]
        fn psd3_routes_agree_off_boundary(
            w in -2.0f64..2.0,
            u in -0.5f64..1.5,
            w_jj in 0.0f64..4.0,
        ) {
            let tol = 1e-7;
            let (eig, soc) = psd3_membership(w, u, w_jj, tol);
            if eig != soc {
                // disagreement is only allowed within tol of the boundary:
                // flipping the tolerance sign must flip at least one answer
                let (eig_hi, soc_hi) = psd3_membership(w, u, w_jj, 1e-5);
                let (eig_lo, soc_lo) = psd3_membership(w, u, w_jj, -1e-5);
                prop_assert!(eig_hi != eig_lo || soc_hi != soc_lo,
                    "genuine disagreement at ({w}, {u}, {w_jj})");
            }
        }
    }
}
