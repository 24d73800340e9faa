//! Semi-relaxed subproblem of the exact procedure: indicators in K are
//! binary with big-M linking and plain two-by-two epigraph blocks, indicators
//! outside K keep the continuous perspective-cone relaxation. Its optimal
//! value is a valid global lower bound for the cardinality-constrained
//! problem no matter which K is chosen.

use crate::conicqp::{self, ConicProgram, RowSense, SolveOptions, SolveStatus};
use crate::domain::{indicator_key, Dataset};
use crate::error::{Error, Result};
use crate::svm::add_margin_rows;

use super::engine::{BranchModel, Incumbent, NodeEval};

pub(crate) struct SrDlmpModel {
    pub data: Dataset,
    /// Sorted original feature ids branched as binaries.
    pub k_ids: Vec<usize>,
    pub c: f64,
    pub budget: usize,
    pub big_m: f64,
    pub ipm: SolveOptions,
}

struct SolvedNode {
    bound: f64,
    value: f64,
    u_full: Vec<f64>,
    feasible: bool,
    certified: bool,
}

impl SrDlmpModel {
    fn solve_node(&self, fixed: &[Option<bool>]) -> Result<Option<SolvedNode>> {
        let n = self.data.n();
        let deselect_target = n - self.budget;
        let in_k = |j: usize| self.k_ids.binary_search(&j).ok();

        let cnt_f1 = fixed.iter().filter(|f| **f == Some(true)).count();
        // continuous indicators plus free binaries must be able to make up
        // the rest of the budget
        let relaxed_count = n - self.k_ids.len();
        let free = self
            .k_ids
            .iter()
            .enumerate()
            .filter(|(p, _)| fixed[*p].is_none())
            .count();
        if cnt_f1 > deselect_target || deselect_target > cnt_f1 + free + relaxed_count {
            return Ok(None);
        }

        // dropped columns: binaries fixed to deselection
        let kept: Vec<usize> = (0..n)
            .filter(|&j| in_k(j).map(|p| fixed[p] != Some(true)).unwrap_or(true))
            .collect();
        let node_data = self.data.restrict_columns(&kept)?;

        let mut prog = ConicProgram::new();
        let w = prog.add_vars(node_data.n(), f64::NEG_INFINITY, f64::INFINITY);
        let b = prog.add_var(f64::NEG_INFINITY, f64::INFINITY);
        let xi = prog.add_vars(node_data.m(), 0.0, f64::INFINITY);
        for &x in &xi {
            prog.set_cost(x, self.c);
        }
        add_margin_rows(&mut prog, &node_data, &w, b, &xi);

        let mut u = Vec::with_capacity(kept.len());
        for (idx, &j) in kept.iter().enumerate() {
            let qj = prog.add_var(f64::NEG_INFINITY, f64::INFINITY);
            prog.set_cost(qj, 1.0);
            match in_k(j) {
                Some(pos) => {
                    // binary side: plain epigraph block plus big-M linking
                    let (lo, hi) = match fixed[pos] {
                        Some(false) => (0.0, 0.0),
                        None => (0.0, 1.0),
                        Some(true) => unreachable!("dropped above"),
                    };
                    let uj = prog.add_var(lo, hi);
                    let one = prog.add_fixed_var(1.0);
                    prog.add_rsoc(qj, one, vec![w[idx]]);
                    prog.add_row(
                        RowSense::Le,
                        self.big_m,
                        vec![(w[idx], 1.0), (uj, self.big_m)],
                    );
                    prog.add_row(
                        RowSense::Ge,
                        -self.big_m,
                        vec![(w[idx], 1.0), (uj, -self.big_m)],
                    );
                    u.push(uj);
                }
                None => {
                    // relaxed side: perspective cone
                    let uj = prog.add_var(0.0, 1.0);
                    let sj = prog.add_var(f64::NEG_INFINITY, f64::INFINITY);
                    prog.add_row(RowSense::Eq, 1.0, vec![(sj, 1.0), (uj, 1.0)]);
                    prog.add_rsoc(qj, sj, vec![w[idx]]);
                    u.push(uj);
                }
            }
        }
        prog.add_row(
            RowSense::Eq,
            (deselect_target - cnt_f1) as f64,
            u.iter().map(|&uj| (uj, 1.0)).collect(),
        );

        let sol = conicqp::solve(&prog, &self.ipm)?;
        match sol.status {
            SolveStatus::Infeasible => return Ok(None),
            SolveStatus::Unbounded => {
                return Err(Error::NumericalBreakdown(
                    "semi-relaxation reported unbounded".into(),
                ))
            }
            _ => {}
        }
        let certified = sol.status == SolveStatus::Optimal;
        let mut u_full = vec![1.0; n];
        for (idx, &j) in kept.iter().enumerate() {
            u_full[j] = sol.x[u[idx]].clamp(0.0, 1.0);
        }
        Ok(Some(SolvedNode {
            bound: if certified {
                sol.primal_obj.min(sol.dual_obj)
            } else {
                f64::NEG_INFINITY
            },
            value: sol.primal_obj,
            u_full,
            feasible: true,
            certified,
        }))
    }

    /// Full relaxed indicator vector of the root relaxation, used as a
    /// fallback ranking when no leaf gets solved.
    pub fn root_relaxed_u(&self) -> Result<Option<Vec<f64>>> {
        let fixed = vec![None; self.k_ids.len()];
        Ok(self.solve_node(&fixed)?.map(|s| s.u_full))
    }
}

impl BranchModel for SrDlmpModel {
    fn num_binaries(&self) -> usize {
        self.k_ids.len()
    }

    fn eval(&self, fixed: &[Option<bool>]) -> Result<Option<NodeEval>> {
        let solved = match self.solve_node(fixed)? {
            Some(s) => s,
            None => return Ok(None),
        };
        let k = self.k_ids.len();
        let n = self.data.n();
        let u_values: Vec<f64> = (0..k).map(|p| solved.u_full[self.k_ids[p]]).collect();

        // rounding guide: deselection count must leave room for the
        // continuous side to absorb the rest of the budget
        let lo = (k as i64 - self.budget as i64).max(0) as usize;
        let hi = (n - self.budget).min(k);
        let target = u_values
            .iter()
            .sum::<f64>()
            .round()
            .clamp(lo as f64, hi as f64) as usize;
        let mut order: Vec<usize> = (0..k).collect();
        order.sort_by_key(|&p| {
            (
                fixed[p] != Some(true), // forced deselections first
                -indicator_key(u_values[p]),
                p,
            )
        });
        let forced1 = fixed.iter().filter(|f| **f == Some(true)).count();
        let mut assignment = vec![false; k];
        for &p in order.iter().take(target.max(forced1)) {
            assignment[p] = true;
        }
        let _ = solved.feasible;
        Ok(Some(NodeEval {
            bound: solved.bound,
            u_values,
            heuristic_assignment: Some(assignment),
        }))
    }

    fn incumbent(&self, assignment: &[bool]) -> Result<Option<Incumbent>> {
        let fixed: Vec<Option<bool>> = assignment.iter().map(|&a| Some(a)).collect();
        let solved = match self.solve_node(&fixed)? {
            Some(s) => s,
            None => return Ok(None),
        };
        if !solved.certified {
            return Ok(None);
        }
        // the leaf value bounds the semi-relaxed optimum from above; the
        // point itself need not satisfy the cardinality constraint, so no
        // primal incumbent is exposed
        Ok(Some(Incumbent {
            objective: solved.value,
            point: None,
            assignment: assignment.to_vec(),
            relaxed_u: solved.u_full,
        }))
    }
}
