//! Plain soft-margin linear SVM solves (optionally restricted to a feature
//! subset), the exhaustive subset-enumeration oracle, and accuracy scoring.

use nalgebra::DVector;

use crate::conicqp::{self, ConicProgram, RowSense, SolveOptions, SolveStatus};
use crate::domain::{min_slacks, Dataset, PrimalPoint};
use crate::error::{Error, Result};

/// Ties in the enumeration oracle are resolved toward the lexicographically
/// smaller subset whenever objectives agree within this relative band.
const TIE_TOL: f64 = 1e-9;

/// Adds margin rows `y_i (w'x_i + b) >= 1 - xi_i` to a program.
pub(crate) fn add_margin_rows(
    prog: &mut ConicProgram,
    data: &Dataset,
    w: &[usize],
    b: usize,
    xi: &[usize],
) {
    for i in 0..data.m() {
        let yi = data.y()[i];
        let mut coeffs: Vec<(usize, f64)> = Vec::with_capacity(w.len() + 2);
        for (jj, &wv) in w.iter().enumerate() {
            let a = yi * data.x()[(i, jj)];
            if a != 0.0 {
                coeffs.push((wv, a));
            }
        }
        coeffs.push((b, yi));
        coeffs.push((xi[i], 1.0));
        prog.add_row(RowSense::Ge, 1.0, coeffs);
    }
}

/// Solves the soft-margin SVM restricted to `active` features (all features
/// when absent). The returned point is full-width, with zero weights outside
/// the active set, and carries minimal slacks.
pub fn solve_svm(data: &Dataset, c: f64, active: Option<&[usize]>) -> Result<PrimalPoint> {
    solve_svm_with(data, c, active, &SolveOptions::default())
}

/// As [`solve_svm`] with explicit solver options.
pub fn solve_svm_with(
    data: &Dataset,
    c: f64,
    active: Option<&[usize]>,
    opts: &SolveOptions,
) -> Result<PrimalPoint> {
    if !(c > 0.0) {
        return Err(Error::InvalidConfig(format!("C must be > 0, got {c}")));
    }
    let all: Vec<usize> = (0..data.n()).collect();
    let active = match active {
        Some(set) => {
            for &j in set {
                if j >= data.n() {
                    return Err(Error::IndexOutOfRange {
                        index: j,
                        bound: data.n(),
                    });
                }
            }
            set.to_vec()
        }
        None => all,
    };
    let restricted = data.restrict_columns(&active)?;

    let mut prog = ConicProgram::new();
    let w = prog.add_vars(restricted.n(), f64::NEG_INFINITY, f64::INFINITY);
    let b = prog.add_var(f64::NEG_INFINITY, f64::INFINITY);
    let xi = prog.add_vars(restricted.m(), 0.0, f64::INFINITY);
    for &wj in &w {
        prog.add_quad_diag(wj, 1.0);
    }
    for &x in &xi {
        prog.set_cost(x, c);
    }
    add_margin_rows(&mut prog, &restricted, &w, b, &xi);

    let sol = conicqp::solve(&prog, opts)?;
    match sol.status {
        SolveStatus::Optimal => {}
        SolveStatus::TimeLimit => {
            return Err(Error::NumericalBreakdown("svm solve hit time limit".into()))
        }
        other => {
            return Err(Error::NumericalBreakdown(format!(
                "svm solve ended with status {other:?}"
            )))
        }
    }

    let mut w_full = DVector::zeros(data.n());
    for (jj, &j) in active.iter().enumerate() {
        w_full[j] = sol.x[w[jj]];
    }
    let point = PrimalPoint::from_hyperplane(w_full, sol.x[b], data, c)?;
    debug_assert!(
        point.objective <= sol.primal_obj + 1e-7 * (1.0 + sol.primal_obj.abs()),
        "polished objective should not exceed the solver value"
    );
    Ok(point)
}

/// Exhaustively enumerates all feature subsets of size exactly `budget` (the
/// optimum over sizes up to the budget is attained at some size-budget
/// superset) and returns the best subset with its optimal point. Subsets are
/// visited in lexicographic order and ties keep the earlier subset.
pub fn brute_force_fs(
    data: &Dataset,
    c: f64,
    budget: usize,
    max_n: usize,
) -> Result<(Vec<usize>, PrimalPoint)> {
    if data.n() > max_n {
        return Err(Error::GuardExceeded {
            n: data.n(),
            max_n,
        });
    }
    if budget < 1 || budget > data.n() {
        return Err(Error::InvalidConfig(format!(
            "budget must lie in [1, {}], got {budget}",
            data.n()
        )));
    }
    let mut best: Option<(Vec<usize>, PrimalPoint)> = None;
    let mut subset: Vec<usize> = (0..budget).collect();
    loop {
        let point = solve_svm(data, c, Some(&subset))?;
        let take = match &best {
            None => true,
            Some((_, bp)) => point.objective < bp.objective - TIE_TOL * (1.0 + bp.objective.abs()),
        };
        if take {
            best = Some((subset.clone(), point));
        }
        if !next_combination(&mut subset, data.n()) {
            break;
        }
    }
    Ok(best.expect("at least one subset enumerated"))
}

/// Advances a sorted combination to its lexicographic successor.
fn next_combination(subset: &mut [usize], n: usize) -> bool {
    let k = subset.len();
    let mut i = k;
    while i > 0 {
        i -= 1;
        if subset[i] < n - (k - i) {
            subset[i] += 1;
            for j in i + 1..k {
                subset[j] = subset[j - 1] + 1;
            }
            return true;
        }
    }
    false
}

/// Fraction of samples with sgn(w'x + b) == y, counting sgn(0) as +1.
pub fn accuracy(point: &PrimalPoint, data: &Dataset) -> Result<f64> {
    if point.w.len() != data.n() {
        return Err(Error::Dimension {
            what: "weight vector",
            expected: data.n(),
            got: point.w.len(),
        });
    }
    let mut correct = 0usize;
    for i in 0..data.m() {
        let score = data.x().row(i).transpose().dot(&point.w) + point.b;
        let pred = if score >= 0.0 { 1.0 } else { -1.0 };
        if pred == data.y()[i] {
            correct += 1;
        }
    }
    Ok(correct as f64 / data.m() as f64)
}

/// Margin-feasible completion of a hyperplane: convenience used by polishing.
pub fn point_from_hyperplane(
    w: DVector<f64>,
    b: f64,
    data: &Dataset,
    c: f64,
) -> Result<PrimalPoint> {
    let xi = min_slacks(&w, b, data)?;
    let _ = xi;
    PrimalPoint::from_hyperplane(w, b, data, c)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;

    pub(crate) fn two_point_sparse() -> Dataset {
        Dataset::new(
            DMatrix::from_row_slice(2, 2, &[1.0, 0.0, -1.0, 0.0]),
            DVector::from_vec(vec![1.0, -1.0]),
            None,
            "sparse fixture",
        )
        .unwrap()
    }

    pub(crate) fn two_point_dense() -> Dataset {
        Dataset::new(
            DMatrix::from_row_slice(2, 2, &[1.0, 1.0, -1.0, -1.0]),
            DVector::from_vec(vec![1.0, -1.0]),
            None,
            "dense fixture",
        )
        .unwrap()
    }

    #[test]
    fn sparse_fixture_svm() {
        let data = two_point_sparse();
        let p = solve_svm(&data, 1.0, None).unwrap();
        assert!((p.objective - 0.5).abs() < 1e-6, "obj = {}", p.objective);
        assert!((p.w[0] - 1.0).abs() < 1e-5);
        assert!(p.w[1].abs() < 1e-5);
        assert!(p.b.abs() < 1e-5);
    }

    #[test]
    fn dense_fixture_svm() {
        let data = two_point_dense();
        let p = solve_svm(&data, 10.0, None).unwrap();
        assert!((p.objective - 0.25).abs() < 1e-6);
        assert!((p.w[0] - 0.5).abs() < 1e-5);
        assert!((p.w[1] - 0.5).abs() < 1e-5);
    }

    #[test]
    fn dense_fixture_restricted() {
        let data = two_point_dense();
        let p = solve_svm(&data, 10.0, Some(&[0])).unwrap();
        assert!((p.objective - 0.5).abs() < 1e-6);
        assert!((p.w[0] - 1.0).abs() < 1e-5);
        assert_eq!(p.w[1], 0.0);
    }

    #[test]
    fn brute_force_tie_break_lexicographic() {
        let data = two_point_dense();
        let (subset, p) = brute_force_fs(&data, 10.0, 1, 20).unwrap();
        assert_eq!(subset, vec![0]);
        assert!((p.objective - 0.5).abs() < 1e-6);
    }

    #[test]
    fn brute_force_sparse_budget_one() {
        let data = two_point_sparse();
        let (subset, p) = brute_force_fs(&data, 1.0, 1, 20).unwrap();
        assert_eq!(subset, vec![0]);
        assert!((p.objective - 0.5).abs() < 1e-6);
        // the rejected subset {1} costs 2.0
        let alt = solve_svm(&data, 1.0, Some(&[1])).unwrap();
        assert!((alt.objective - 2.0).abs() < 1e-6);
    }

    #[test]
    fn brute_force_full_budget_equals_svm() {
        let data = two_point_dense();
        let (_, p) = brute_force_fs(&data, 10.0, 2, 20).unwrap();
        let svm = solve_svm(&data, 10.0, None).unwrap();
        assert!((p.objective - svm.objective).abs() < 1e-7);
    }

    #[test]
    fn brute_force_guard() {
        let data = two_point_dense();
        assert!(matches!(
            brute_force_fs(&data, 1.0, 1, 1),
            Err(Error::GuardExceeded { .. })
        ));
    }

    #[test]
    fn accuracy_examples() {
        let data = two_point_sparse();
        let perfect = solve_svm(&data, 1.0, None).unwrap();
        assert_eq!(accuracy(&perfect, &data).unwrap(), 1.0);

        // zero classifier predicts +1 everywhere
        let zero = PrimalPoint::from_hyperplane(DVector::zeros(2), 0.0, &data, 1.0).unwrap();
        assert_eq!(accuracy(&zero, &data).unwrap(), 0.5);
    }

    #[test]
    fn restriction_monotone_on_nested_subsets() {
        let data = crate::dataio::synth_dataset(24, 6, 11);
        let full = solve_svm(&data, 1.0, None).unwrap();
        let sub2 = solve_svm(&data, 1.0, Some(&[0, 1])).unwrap();
        let sub4 = solve_svm(&data, 1.0, Some(&[0, 1, 2, 3])).unwrap();
        assert!(sub2.objective >= sub4.objective - 1e-7 * (1.0 + sub4.objective.abs()));
        assert!(sub4.objective >= full.objective - 1e-7 * (1.0 + full.objective.abs()));
    }
}
