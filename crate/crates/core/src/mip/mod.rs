//! Branch-and-bound over binary feature indicators with conic node
//! relaxations. Two problem families share the engine: the restricted
//! complementarity formulation (used by the heuristics, optionally with
//! objective-cutoff and cover constraints), and the semi-relaxed
//! mixed-integer conic subproblem of the exact procedure. The big-M and
//! complementarity formulations over all features are the special case
//! K = all features.

mod bigm;
mod cop;
mod engine;
mod srdlmp;

use nalgebra::DVector;

use crate::conicqp::SolveOptions;
use crate::domain::{Dataset, MipResult, MipStatus};
use crate::error::{Error, Result};

pub(crate) use engine::{branch_and_bound, EngineOptions};

/// Which exact reformulation backs a restricted solve.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Formulation {
    /// Complementarity indicators, enforced structurally by branching;
    /// needs no big-M.
    CopComplementarity,
    /// Big-M linking of selection indicators.
    BigM,
}

/// Specification of a restricted mixed-integer solve.
#[derive(Debug, Clone)]
pub struct BranchSpec {
    /// Feature ids carrying binary indicators.
    pub binary_set: Vec<usize>,
    pub formulation: Formulation,
    /// Required by the big-M formulation.
    pub big_m: Option<f64>,
    /// Upper cutoff on the objective; the solve may come back infeasible.
    pub extra_ub_cutoff: Option<f64>,
    /// At least one of these features must be selected.
    pub cover_set: Option<Vec<usize>>,
}

impl BranchSpec {
    pub fn cop(binary_set: Vec<usize>) -> Self {
        Self {
            binary_set,
            formulation: Formulation::CopComplementarity,
            big_m: None,
            extra_ub_cutoff: None,
            cover_set: None,
        }
    }
}

/// Options governing one branch-and-bound run.
#[derive(Debug, Clone)]
pub struct MipOptions {
    pub eps_rel_gap: f64,
    pub time_limit_s: Option<f64>,
    pub node_limit: usize,
    /// Full-problem solves refuse instances wider than this unless raised.
    pub full_guard: usize,
    /// One line per node on stderr.
    pub node_log: bool,
    pub ipm: SolveOptions,
}

impl Default for MipOptions {
    fn default() -> Self {
        Self {
            eps_rel_gap: 1e-6,
            time_limit_s: None,
            node_limit: 1_000_000,
            full_guard: 64,
            node_log: false,
            ipm: SolveOptions::default(),
        }
    }
}

impl MipOptions {
    fn engine(&self) -> EngineOptions {
        EngineOptions {
            eps_rel_gap: self.eps_rel_gap,
            time_limit_s: self.time_limit_s,
            node_limit: self.node_limit,
            node_log: self.node_log,
        }
    }
}

fn sorted_unique(mut ids: Vec<usize>, n: usize) -> Result<Vec<usize>> {
    ids.sort_unstable();
    ids.dedup();
    if let Some(&last) = ids.last() {
        if last >= n {
            return Err(Error::IndexOutOfRange {
                index: last,
                bound: n,
            });
        }
    }
    Ok(ids)
}

fn infeasible_result(branched_set: Vec<usize>) -> MipResult {
    MipResult {
        incumbent: None,
        branched_set,
        binary_assignment: None,
        lb: f64::INFINITY,
        ub: f64::INFINITY,
        status: MipStatus::Infeasible,
        nodes_explored: 0,
    }
}

/// Solves the restricted problem over `spec.binary_set`: the incumbent's
/// support lives inside the set and uses at most `budget` features, with the
/// deselection budget held at equality. Infeasible is a legitimate outcome
/// under cutoff and cover constraints.
pub fn solve_cop_restricted(
    data: &Dataset,
    c: f64,
    budget: usize,
    spec: &BranchSpec,
    opts: &MipOptions,
) -> Result<MipResult> {
    let k_ids = sorted_unique(spec.binary_set.clone(), data.n())?;
    if k_ids.is_empty() {
        return Err(Error::InvalidConfig("binary set must be nonempty".into()));
    }
    if budget < 1 {
        return Err(Error::InvalidConfig("budget must be at least 1".into()));
    }
    if budget > k_ids.len() {
        // the equality budget cannot be met on a set smaller than it
        return Ok(infeasible_result(k_ids));
    }
    // cover features outside the binary set can never be selected
    let cover = match &spec.cover_set {
        Some(cov) => {
            let positions: Vec<usize> = cov
                .iter()
                .filter_map(|f| k_ids.binary_search(f).ok())
                .collect();
            if positions.is_empty() {
                return Ok(infeasible_result(k_ids));
            }
            Some(positions)
        }
        None => None,
    };

    let outcome = match spec.formulation {
        Formulation::CopComplementarity => {
            let model = cop::CopModel::new(
                data,
                k_ids.clone(),
                c,
                budget,
                spec.extra_ub_cutoff,
                cover,
                opts.ipm.clone(),
            )?;
            branch_and_bound(&model, k_ids, &opts.engine())?
        }
        Formulation::BigM => {
            let big_m = spec.big_m.ok_or_else(|| {
                Error::InvalidConfig("the big-M formulation requires M".into())
            })?;
            let model = bigm::BigMModel::new(
                data,
                k_ids.clone(),
                c,
                budget,
                big_m,
                spec.extra_ub_cutoff,
                cover,
                opts.ipm.clone(),
            )?;
            branch_and_bound(&model, k_ids, &opts.engine())?
        }
    };
    Ok(outcome.result)
}

/// Global solve of the complementarity formulation over all features.
pub fn solve_cop_full(
    data: &Dataset,
    c: f64,
    budget: usize,
    opts: &MipOptions,
) -> Result<MipResult> {
    if data.n() > opts.full_guard {
        return Err(Error::GuardExceeded {
            n: data.n(),
            max_n: opts.full_guard,
        });
    }
    let spec = BranchSpec::cop((0..data.n()).collect());
    solve_cop_restricted(data, c, budget, &spec, opts)
}

/// Global solve of the big-M formulation over all features. Exact for the
/// cardinality-constrained problem whenever M is valid for it.
pub fn solve_bigmp_full(
    data: &Dataset,
    c: f64,
    budget: usize,
    big_m: f64,
    opts: &MipOptions,
) -> Result<MipResult> {
    if data.n() > opts.full_guard {
        return Err(Error::GuardExceeded {
            n: data.n(),
            max_n: opts.full_guard,
        });
    }
    let spec = BranchSpec {
        binary_set: (0..data.n()).collect(),
        formulation: Formulation::BigM,
        big_m: Some(big_m),
        extra_ub_cutoff: None,
        cover_set: None,
    };
    solve_cop_restricted(data, c, budget, &spec, opts)
}

/// Outcome of a semi-relaxed solve.
#[derive(Debug, Clone)]
pub struct SrDlmpResult {
    /// Valid global lower bound for the cardinality-constrained problem.
    pub value: f64,
    /// Full relaxed indicator vector for ranking.
    pub relaxed_u: DVector<f64>,
    pub mip: MipResult,
}

/// Solves the semi-relaxation with binaries on `k_set` and perspective-cone
/// relaxations elsewhere. `big_m` must be valid for the cardinality problem
/// for the K-side linking to be exact.
pub fn solve_sr_dlmp(
    data: &Dataset,
    c: f64,
    budget: usize,
    k_set: &[usize],
    big_m: f64,
    opts: &MipOptions,
) -> Result<SrDlmpResult> {
    if !(big_m > 0.0) {
        return Err(Error::InvalidConfig(format!(
            "big-M must be > 0, got {big_m}"
        )));
    }
    if budget < 1 || budget > data.n() {
        return Err(Error::InvalidConfig(format!(
            "budget must lie in [1, {}], got {budget}",
            data.n()
        )));
    }
    let k_ids = sorted_unique(k_set.to_vec(), data.n())?;
    let model = srdlmp::SrDlmpModel {
        data: data.clone(),
        k_ids: k_ids.clone(),
        c,
        budget,
        big_m,
        ipm: opts.ipm.clone(),
    };
    let root_u = model.root_relaxed_u()?;
    let outcome = branch_and_bound(&model, k_ids, &opts.engine())?;
    let relaxed = outcome
        .relaxed_u
        .or(root_u)
        .ok_or_else(|| Error::NumericalBreakdown("semi-relaxation root infeasible".into()))?;
    Ok(SrDlmpResult {
        value: outcome.result.lb,
        relaxed_u: DVector::from_vec(relaxed),
        mip: outcome.result,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::synth_dataset;
    use crate::domain::DEFAULT_ZERO_TOL;
    use crate::relaxations::solve_dscop;
    use crate::svm::{brute_force_fs, solve_svm};
    use nalgebra::DMatrix;

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
    fn cop_restricted_dense_fixture() {
        let data = two_point_dense();
        let spec = BranchSpec::cop(vec![0, 1]);
        let r = solve_cop_restricted(&data, 10.0, 1, &spec, &MipOptions::default()).unwrap();
        assert_eq!(r.status, MipStatus::Optimal);
        assert!((r.ub - 0.5).abs() < 1e-6, "ub = {}", r.ub);
        assert!(r.gap() <= 1e-6);
        // both single-feature supports are optimal here; the run must be
        // deterministic
        let inc = r.incumbent.unwrap();
        assert!(inc.support == vec![0] || inc.support == vec![1]);
        let again = solve_cop_restricted(&data, 10.0, 1, &spec, &MipOptions::default()).unwrap();
        assert_eq!(again.incumbent.unwrap().support, inc.support);
        assert_eq!(again.nodes_explored, r.nodes_explored);
    }

    #[test]
    fn cop_restricted_cutoff_infeasible() {
        let data = two_point_dense();
        let mut spec = BranchSpec::cop(vec![0, 1]);
        spec.extra_ub_cutoff = Some(0.4);
        let r = solve_cop_restricted(&data, 10.0, 1, &spec, &MipOptions::default()).unwrap();
        assert_eq!(r.status, MipStatus::Infeasible);
    }

    #[test]
    fn cop_restricted_sparse_fixture() {
        let data = two_point_sparse();
        let spec = BranchSpec::cop(vec![0, 1]);
        let r = solve_cop_restricted(&data, 1.0, 1, &spec, &MipOptions::default()).unwrap();
        assert!((r.ub - 0.5).abs() < 1e-6);
        assert_eq!(r.incumbent.unwrap().support, vec![0]);
    }

    #[test]
    fn full_formulations_match_oracle() {
        let data = synth_dataset(16, 5, 21);
        let (c, budget) = (1.0, 2usize);
        let (_, oracle) = brute_force_fs(&data, c, budget, 20).unwrap();
        let opts = MipOptions::default();
        let cop = solve_cop_full(&data, c, budget, &opts).unwrap();
        assert_eq!(cop.status, MipStatus::Optimal);
        assert!(
            (cop.ub - oracle.objective).abs() <= 1e-5 * (1.0 + oracle.objective.abs()),
            "cop {} vs oracle {}",
            cop.ub,
            oracle.objective
        );
        let m = 10.0; // safely above any optimum weight here
        let bigm = solve_bigmp_full(&data, c, budget, m, &opts).unwrap();
        assert!(
            (bigm.ub - oracle.objective).abs() <= 1e-5 * (1.0 + oracle.objective.abs()),
            "bigm {} vs oracle {}",
            bigm.ub,
            oracle.objective
        );
        assert!((cop.ub - bigm.ub).abs() <= 1e-6 * (1.0 + cop.ub.abs()));
        // incumbents pass core feasibility
        let inc = cop.incumbent.unwrap();
        assert!(inc.l0(DEFAULT_ZERO_TOL) <= budget);
        assert!(inc.is_margin_feasible(&data, 1e-7));
    }

    #[test]
    fn full_budget_equals_svm() {
        let data = two_point_dense();
        let r = solve_cop_full(&data, 10.0, 2, &MipOptions::default()).unwrap();
        let svm = solve_svm(&data, 10.0, None).unwrap();
        assert!((r.ub - svm.objective).abs() < 1e-6);
    }

    #[test]
    fn guard_respected() {
        let data = synth_dataset(10, 5, 1);
        let opts = MipOptions {
            full_guard: 3,
            ..Default::default()
        };
        assert!(matches!(
            solve_cop_full(&data, 1.0, 1, &opts),
            Err(Error::GuardExceeded { .. })
        ));
    }

    #[test]
    fn sr_dlmp_empty_k_equals_dscop() {
        let data = synth_dataset(14, 4, 5);
        let (c, budget) = (1.0, 2usize);
        let sr = solve_sr_dlmp(&data, c, budget, &[], 10.0, &MipOptions::default()).unwrap();
        let dscop = solve_dscop(&data, c, budget).unwrap();
        assert!(
            (sr.value - dscop.lower_bound).abs() <= 1e-5 * (1.0 + dscop.lower_bound.abs()),
            "sr {} vs dscop {}",
            sr.value,
            dscop.lower_bound
        );
    }

    #[test]
    fn sr_dlmp_full_k_equals_oracle() {
        let data = synth_dataset(14, 4, 5);
        let (c, budget) = (1.0, 2usize);
        let all: Vec<usize> = (0..data.n()).collect();
        let (_, oracle) = brute_force_fs(&data, c, budget, 20).unwrap();
        // a valid M from the oracle optimum's max-norm
        let m = oracle.w.iter().map(|v| v.abs()).fold(0.0f64, f64::max) * 2.0 + 1.0;
        let sr = solve_sr_dlmp(&data, c, budget, &all, m, &MipOptions::default()).unwrap();
        assert!(
            (sr.value - oracle.objective).abs() <= 1e-5 * (1.0 + oracle.objective.abs()),
            "sr {} vs oracle {}",
            sr.value,
            oracle.objective
        );
    }

    #[test]
    fn sr_dlmp_dense_fixture_single_binary() {
        let data = two_point_dense();
        let sr = solve_sr_dlmp(&data, 10.0, 1, &[0], 1.0, &MipOptions::default()).unwrap();
        assert!((sr.value - 0.5).abs() < 1e-5, "value = {}", sr.value);
        assert_eq!(sr.relaxed_u.len(), 2);
    }

    #[test]
    fn sr_dlmp_monotone_in_k() {
        let data = synth_dataset(14, 5, 8);
        let (c, budget, m) = (1.0, 2usize, 10.0);
        let opts = MipOptions::default();
        let v0 = solve_sr_dlmp(&data, c, budget, &[], m, &opts).unwrap().value;
        let v1 = solve_sr_dlmp(&data, c, budget, &[0, 3], m, &opts).unwrap().value;
        let v2 = solve_sr_dlmp(&data, c, budget, &[0, 1, 3, 4], m, &opts)
            .unwrap()
            .value;
        let slack = |v: f64| 1e-5 * (1.0 + v.abs());
        assert!(v1 >= v0 - slack(v0), "v1 {v1} vs v0 {v0}");
        assert!(v2 >= v1 - slack(v1), "v2 {v2} vs v1 {v1}");
    }
}
