//! Upper-bounding strategies driven by the decomposed relaxation's
//! indicator values: a one-shot local search over the most promising
//! features, a kernel search walking ranked buckets under an objective
//! cutoff, big-M tightening from level-set subproblems, and the combined
//! procedure that re-ranks with big-M cuts when they are informative.

use std::collections::HashMap;

use nalgebra::DVector;
use rayon::prelude::*;

use crate::conicqp::{self, ConicProgram, RowSense, SolveStatus};
use crate::dataio::ResultRecord;
use crate::domain::{indicator_key, Dataset, MipStatus, PrimalPoint, ProblemConfig, Strategy};
use crate::error::{Error, Result};
use crate::mip::{solve_cop_restricted, BranchSpec, MipOptions};
use crate::relaxations::{
    big_m_collapse_threshold, margin_model, solve_dscomp_with, solve_dscop_with,
};
use crate::svm::solve_svm_with;

/// A deterministic feature ordering together with the key that produced it.
#[derive(Debug, Clone)]
pub struct RankedFeatures {
    pub order: Vec<usize>,
    pub key: DVector<f64>,
}

impl RankedFeatures {
    /// Ascending by key; solver-noise ties break toward the smaller index.
    pub fn ascending(key: &DVector<f64>) -> Self {
        let mut order: Vec<usize> = (0..key.len()).collect();
        order.sort_by_key(|&j| (indicator_key(key[j]), j));
        Self {
            order,
            key: key.clone(),
        }
    }

    /// Descending by `u - u^2` ("less binary" first), ties toward the
    /// smaller index.
    pub fn less_binary(u: &DVector<f64>) -> Self {
        let score = u.map(|v| v - v * v);
        let mut order: Vec<usize> = (0..u.len()).collect();
        order.sort_by_key(|&j| (-indicator_key(score[j]), j));
        Self { order, key: score }
    }
}

/// Outcome of one upper-bounding strategy run.
#[derive(Debug, Clone)]
pub struct HeurOutcome {
    pub point: PrimalPoint,
    pub ub: f64,
    pub selected: Vec<usize>,
    /// Upper bound after each feasible subproblem, nonincreasing.
    pub ub_trace: Vec<f64>,
    pub records: Vec<ResultRecord>,
}

fn deselect_ranking(
    data: &Dataset,
    c: f64,
    budget: usize,
    relax_u: Option<&DVector<f64>>,
    opts: &MipOptions,
    records: &mut Vec<ResultRecord>,
) -> Result<DVector<f64>> {
    match relax_u {
        Some(u) => {
            if u.len() != data.n() {
                return Err(Error::Dimension {
                    what: "ranking vector",
                    expected: data.n(),
                    got: u.len(),
                });
            }
            Ok(u.clone())
        }
        None => {
            let relax = solve_dscop_with(data, c, budget, &opts.ipm)?;
            let mut rec = ResultRecord::new(data.provenance(), "dscop", c, budget);
            rec.lb = Some(relax.lower_bound);
            rec.time_s = relax.stats.wall_time_s;
            records.push(rec);
            Ok(relax.indicator.as_deselect())
        }
    }
}

/// Local search: restrict to the `budget + excess` features with the
/// smallest deselection values and solve that subproblem exactly.
pub fn local_search(
    data: &Dataset,
    c: f64,
    budget: usize,
    excess: usize,
    relax_u: Option<&DVector<f64>>,
    opts: &MipOptions,
) -> Result<HeurOutcome> {
    let n = data.n();
    if budget < 1 || budget > n {
        return Err(Error::InvalidConfig(format!(
            "budget must lie in [1, {n}], got {budget}"
        )));
    }
    if excess > n - budget {
        return Err(Error::InvalidConfig(format!(
            "excess must lie in [0, {}], got {excess}",
            n - budget
        )));
    }
    let mut records = Vec::new();
    let u = deselect_ranking(data, c, budget, relax_u, opts, &mut records)?;
    let ranked = RankedFeatures::ascending(&u);
    let k_ids: Vec<usize> = ranked.order[..budget + excess].to_vec();

    let spec = BranchSpec::cop(k_ids);
    let result = solve_cop_restricted(data, c, budget, &spec, opts)?;
    let point = result.incumbent.clone().ok_or_else(|| {
        Error::NumericalBreakdown(format!(
            "restricted subproblem ended {:?} without an incumbent",
            result.status
        ))
    })?;
    let ub = point.objective;
    let selected = point.support.clone();
    let mut rec = ResultRecord::new(data.provenance(), "local-search", c, budget);
    rec.obj = Some(ub);
    rec.ub = Some(ub);
    rec.lb = Some(result.lb);
    rec.gap = Some(result.gap());
    rec.features = selected.clone();
    records.push(rec);
    Ok(HeurOutcome {
        point,
        ub,
        selected,
        ub_trace: vec![ub],
        records,
    })
}

/// Kernel search: walk ranked buckets, solving the restricted problem over
/// the running kernel plus the bucket under the current upper-bound cutoff
/// and a cover constraint forcing at least one bucket feature in. Feasible
/// solves grow the kernel with the bucket's selected features; kernel
/// features unselected in the two most recent feasible iterations drop out;
/// infeasible solves leave the kernel untouched.
pub fn kernel_search(
    data: &Dataset,
    c: f64,
    budget: usize,
    rho: usize,
    sub_time_limit_s: f64,
    relax_u: Option<&DVector<f64>>,
    opts: &MipOptions,
) -> Result<HeurOutcome> {
    let n = data.n();
    if budget < 1 || budget > n {
        return Err(Error::InvalidConfig(format!(
            "budget must lie in [1, {n}], got {budget}"
        )));
    }
    if rho < 1 || rho > n {
        return Err(Error::InvalidConfig(format!(
            "bucket size must lie in [1, {n}], got {rho}"
        )));
    }
    let mut records = Vec::new();
    let u = deselect_ranking(data, c, budget, relax_u, opts, &mut records)?;
    let ranked = RankedFeatures::ascending(&u);

    let n_buckets = n.div_ceil(rho);
    let buckets: Vec<Vec<usize>> = (0..n_buckets)
        .map(|i| {
            let lo = i * rho;
            let hi = ((i + 1) * rho).min(n);
            ranked.order[lo..hi].to_vec()
        })
        .collect();

    let mut kernel: Vec<usize> = Vec::new();
    let mut ub = f64::INFINITY;
    let mut best: Option<PrimalPoint> = None;
    let mut ub_trace = Vec::new();
    // last two feasible-iteration selection outcomes per feature
    let mut history: HashMap<usize, (Option<bool>, Option<bool>)> = HashMap::new();

    for (iter, bucket) in buckets.iter().enumerate() {
        let mut k_cur: Vec<usize> = kernel.iter().chain(bucket.iter()).copied().collect();
        k_cur.sort_unstable();
        k_cur.dedup();

        let mut rec = ResultRecord::new(data.provenance(), format!("kernel-search/bucket{iter}"), c, budget);
        rec.features = bucket.clone();

        if k_cur.len() < budget {
            // the equality budget cannot be met on this subproblem
            rec.obj = None;
            records.push(rec);
            continue;
        }

        let spec = BranchSpec {
            binary_set: k_cur.clone(),
            formulation: crate::mip::Formulation::CopComplementarity,
            big_m: None,
            extra_ub_cutoff: ub.is_finite().then_some(ub),
            cover_set: Some(bucket.clone()),
        };
        let sub_opts = MipOptions {
            time_limit_s: Some(sub_time_limit_s),
            ..opts.clone()
        };
        let result = solve_cop_restricted(data, c, budget, &spec, &sub_opts)?;

        let feasible = match result.status {
            MipStatus::Infeasible => false,
            MipStatus::TimeLimit => {
                // a timed-out bucket contributes its incumbent if it found one
                if result.incumbent.is_none() {
                    rec.obj = None;
                    records.push(rec);
                    continue;
                }
                true
            }
            _ => result.incumbent.is_some(),
        };
        if !feasible {
            records.push(rec);
            continue;
        }
        let point = result.incumbent.clone().expect("feasible implies incumbent");
        ub = point.objective;
        ub_trace.push(ub);
        rec.obj = Some(ub);
        rec.ub = Some(ub);
        rec.lb = Some(result.lb);
        rec.features = point.support.clone();
        records.push(rec);

        // selected means the deselection indicator came out zero
        let assignment = result.binary_assignment.as_ref().expect("incumbent has assignment");
        let selected: Vec<usize> = result
            .branched_set
            .iter()
            .zip(assignment)
            .filter(|(_, &a)| a == 0)
            .map(|(&j, _)| j)
            .collect();
        best = Some(point);

        for &j in &k_cur {
            let entry = history.entry(j).or_insert((None, None));
            *entry = (entry.1, Some(selected.contains(&j)));
        }
        let additions: Vec<usize> = bucket
            .iter()
            .filter(|j| selected.contains(j))
            .copied()
            .collect();
        kernel.extend(additions);
        kernel.sort_unstable();
        kernel.dedup();
        kernel.retain(|j| {
            let (prev, last) = history.get(j).copied().unwrap_or((None, None));
            // drop only features rejected in both of the last two feasible
            // iterations they took part in
            !(prev == Some(false) && last == Some(false))
        });
    }

    let (point, ub) = match best {
        Some(p) => {
            let obj = p.objective;
            (p, obj)
        }
        None => {
            // every bucket subproblem was infeasible (possible when the
            // bucket size is below the budget); fall back to the top-ranked
            // features so a valid bound is always produced
            let fallback: Vec<usize> = ranked.order[..budget].to_vec();
            let spec = BranchSpec::cop(fallback);
            let result = solve_cop_restricted(data, c, budget, &spec, opts)?;
            let point = result.incumbent.ok_or_else(|| {
                Error::NumericalBreakdown("kernel-search fallback found no incumbent".into())
            })?;
            let mut rec = ResultRecord::new(data.provenance(), "kernel-search/fallback", c, budget);
            rec.obj = Some(point.objective);
            rec.features = point.support.clone();
            records.push(rec);
            ub_trace.push(point.objective);
            let obj = point.objective;
            (point, obj)
        }
    };
    let selected = point.support.clone();
    Ok(HeurOutcome {
        point,
        ub,
        selected,
        ub_trace,
        records,
    })
}

/// Per-feature weight range over the relaxation's feasible set intersected
/// with the objective level set, and the resulting big-M.
#[derive(Debug, Clone)]
pub struct BigMBounds {
    pub m: f64,
    pub upper: DVector<f64>,
    pub lower: DVector<f64>,
}

/// Estimates a valid big-M from a known upper bound: for each feature the
/// extreme weight values over the decomposed-relaxation feasible set with
/// the objective capped at `ub` (2n independent solves).
pub fn tighten_big_m(
    data: &Dataset,
    c: f64,
    budget: usize,
    ub: f64,
    opts: &MipOptions,
) -> Result<BigMBounds> {
    if !ub.is_finite() {
        return Err(Error::InvalidConfig("upper bound must be finite".into()));
    }
    let n = data.n();
    let jobs: Vec<(usize, bool)> = (0..n)
        .flat_map(|j| [(j, true), (j, false)])
        .collect();
    let extremes: Result<Vec<((usize, bool), f64)>> = jobs
        .par_iter()
        .map(|&(j, maximize)| {
            let v = weight_extreme(data, c, budget, ub, j, maximize, opts)?;
            Ok(((j, maximize), v))
        })
        .collect();
    let mut upper = DVector::zeros(n);
    let mut lower = DVector::zeros(n);
    for ((j, maximize), v) in extremes? {
        if maximize {
            upper[j] = v;
        } else {
            lower[j] = v;
        }
    }
    let m = (0..n)
        .map(|j| upper[j].abs().max(lower[j].abs()))
        .fold(0.0f64, f64::max);
    Ok(BigMBounds { m, upper, lower })
}

fn weight_extreme(
    data: &Dataset,
    c: f64,
    budget: usize,
    ub: f64,
    feature: usize,
    maximize: bool,
    opts: &MipOptions,
) -> Result<f64> {
    let n = data.n();
    let mut prog = ConicProgram::new();
    let mv = margin_model(&mut prog, data, c);
    // slacks enter the level row, not the objective
    for &x in &mv.xi {
        prog.set_cost(x, 0.0);
    }
    let u = prog.add_vars(n, 0.0, 1.0);
    // the epigraph variables carry no objective here; a vanishing cost pins
    // them to the cone and removes an unbounded optimal face (the projection
    // onto the remaining variables is unchanged, and the induced error in
    // the extreme value stays far below the bound's slack)
    let pin = 1e-7 * (1.0 + ub.abs());
    for j in 0..n {
        let sj = prog.add_var(f64::NEG_INFINITY, f64::INFINITY);
        let qj = prog.add_var(f64::NEG_INFINITY, f64::INFINITY);
        prog.set_cost(qj, pin);
        prog.add_row(RowSense::Eq, 1.0, vec![(sj, 1.0), (u[j], 1.0)]);
        prog.add_rsoc(qj, sj, vec![mv.w[j]]);
    }
    prog.add_row(
        RowSense::Eq,
        (n - budget) as f64,
        u.iter().map(|&uj| (uj, 1.0)).collect(),
    );
    // 0.5 ||w||^2 + C sum(xi) <= ub through one epigraph block. The cap is
    // inflated so the level set keeps a workable interior when ub is already
    // the exact optimum (the region is otherwise a sliver of width
    // sqrt(slack) that stalls interior-point iterations); inflating only
    // grows the resulting M, so validity is preserved at a small tightness
    // cost.
    let t = prog.add_var(f64::NEG_INFINITY, f64::INFINITY);
    let one = prog.add_fixed_var(1.0);
    prog.add_rsoc(t, one, mv.w.clone());
    let cap = ub * (1.0 + 1e-4) + 1e-8;
    let mut level: Vec<(usize, f64)> = vec![(t, 1.0)];
    level.extend(mv.xi.iter().map(|&x| (x, c)));
    prog.add_row(RowSense::Le, cap, level);

    prog.set_cost(mv.w[feature], if maximize { -1.0 } else { 1.0 });
    let sol = conicqp::solve(&prog, &opts.ipm)?;
    if sol.status != SolveStatus::Optimal {
        // level sets pinned at the exact optimum can be slivers the
        // interior-point method cannot traverse; 0.5 w_j^2 <= cap always
        // holds on the set, so the square-root bound stays valid
        let safe = (2.0 * cap).max(0.0).sqrt();
        return Ok(if maximize { safe } else { -safe });
    }
    Ok(if maximize {
        -sol.primal_obj
    } else {
        sol.primal_obj
    })
}

/// Outcome of the combined heuristic procedure.
#[derive(Debug, Clone)]
pub struct HeuristicRun {
    pub point: PrimalPoint,
    pub ub: f64,
    pub selected: Vec<usize>,
    pub big_m: f64,
    /// Whether the strategy was rerun with the big-M-cut ranking.
    pub reran: bool,
    pub records: Vec<ResultRecord>,
}

fn run_strategy(
    data: &Dataset,
    cfg: &ProblemConfig,
    strategy: Strategy,
    relax_u: Option<&DVector<f64>>,
    opts: &MipOptions,
) -> Result<HeurOutcome> {
    match strategy {
        Strategy::LocalSearch => local_search(
            data,
            cfg.c,
            cfg.budget,
            cfg.heur_k.min(data.n() - cfg.budget),
            relax_u,
            opts,
        ),
        Strategy::KernelSearch => kernel_search(
            data,
            cfg.c,
            cfg.budget,
            cfg.heur_rho.min(data.n()),
            cfg.sub_time_limit_s,
            relax_u,
            opts,
        ),
    }
}

/// The combined procedure: run the chosen strategy, tighten the big-M from
/// its bound, and when the tightened M is informative (below the collapse
/// threshold of the box relaxation) re-rank with the big-M-cut relaxation
/// and keep the better incumbent.
pub fn heuristic_procedure(
    data: &Dataset,
    cfg: &ProblemConfig,
    strategy: Strategy,
    opts: &MipOptions,
) -> Result<HeuristicRun> {
    cfg.validate(data.n())?;
    let stage1 = run_strategy(data, cfg, strategy, None, opts)?;
    let mut records = stage1.records.clone();

    let bounds = tighten_big_m(data, cfg.c, cfg.budget, stage1.ub, opts)?;
    let mut rec = ResultRecord::new(data.provenance(), "tighten-big-m", cfg.c, cfg.budget);
    rec.big_m = Some(bounds.m);
    records.push(rec);

    let threshold = big_m_collapse_threshold(data, cfg.c, cfg.budget)?;
    if bounds.m < threshold {
        let relax = solve_dscomp_with(data, cfg.c, cfg.budget, bounds.m, &opts.ipm)?;
        let mut rec = ResultRecord::new(data.provenance(), "dscomp", cfg.c, cfg.budget);
        rec.lb = Some(relax.lower_bound);
        rec.big_m = Some(bounds.m);
        records.push(rec);
        let u2 = relax.indicator.as_deselect();
        let stage2 = run_strategy(data, cfg, strategy, Some(&u2), opts)?;
        records.extend(stage2.records.clone());
        if stage2.ub <= stage1.ub {
            return Ok(HeuristicRun {
                point: stage2.point,
                ub: stage2.ub,
                selected: stage2.selected,
                big_m: bounds.m,
                reran: true,
                records,
            });
        }
        return Ok(HeuristicRun {
            point: stage1.point,
            ub: stage1.ub,
            selected: stage1.selected,
            big_m: bounds.m,
            reran: true,
            records,
        });
    }
    Ok(HeuristicRun {
        point: stage1.point,
        ub: stage1.ub,
        selected: stage1.selected,
        big_m: bounds.m,
        reran: false,
        records,
    })
}
