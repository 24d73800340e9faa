//! The complementarity formulation restricted to a feature subset K:
//! binaries deselect features, complementarity is enforced structurally by
//! branching, and node relaxations are the per-feature perspective cones.
//! Needs no big-M. Supports the objective-cutoff and cover side constraints
//! used by the kernel-search heuristic.

use nalgebra::DVector;

use crate::conicqp::{self, ConicProgram, RowSense, SolveOptions, SolveStatus};
use crate::domain::{indicator_key, Dataset};
use crate::error::{Error, Result};
use crate::svm::{add_margin_rows, solve_svm_with};

use super::engine::{BranchModel, Incumbent, NodeEval};

pub(crate) struct CopModel {
    pub data: Dataset,
    /// Sorted original feature ids of K; binary position i branches k_ids[i].
    pub k_ids: Vec<usize>,
    /// Dataset restricted to the K columns, in k_ids order.
    pub restricted: Dataset,
    pub c: f64,
    pub budget: usize,
    pub cutoff: Option<f64>,
    /// Cover positions within K: at least one must be selected.
    pub cover: Option<Vec<usize>>,
    pub ipm: SolveOptions,
}

impl CopModel {
    pub fn new(
        data: &Dataset,
        k_ids: Vec<usize>,
        c: f64,
        budget: usize,
        cutoff: Option<f64>,
        cover: Option<Vec<usize>>,
        ipm: SolveOptions,
    ) -> Result<Self> {
        if k_ids.is_empty() {
            return Err(Error::InvalidConfig("binary set must be nonempty".into()));
        }
        let restricted = data.restrict_columns(&k_ids)?;
        Ok(Self {
            data: data.clone(),
            k_ids,
            restricted,
            c,
            budget,
            cutoff,
            cover,
            ipm,
        })
    }

    fn cutoff_accepts(&self, objective: f64) -> bool {
        match self.cutoff {
            Some(ub) => objective <= ub * (1.0 + 1e-9) + 1e-12,
            None => true,
        }
    }

    fn cover_accepts(&self, selected: &[usize]) -> bool {
        match &self.cover {
            Some(cov) => cov.iter().any(|p| selected.contains(p)),
            None => true,
        }
    }
}

impl BranchModel for CopModel {
    fn num_binaries(&self) -> usize {
        self.k_ids.len()
    }

    fn eval(&self, fixed: &[Option<bool>]) -> Result<Option<NodeEval>> {
        let k = self.k_ids.len();
        let deselect_target = k - self.budget;
        let cnt_f1 = fixed.iter().filter(|f| **f == Some(true)).count();
        let cnt_f0 = fixed.iter().filter(|f| **f == Some(false)).count();
        let free = k - cnt_f1 - cnt_f0;
        if cnt_f1 > deselect_target || deselect_target - cnt_f1 > free {
            return Ok(None); // the deselection budget can no longer be met
        }
        if let Some(cov) = &self.cover {
            if cov.iter().all(|&p| fixed[p] == Some(true)) {
                return Ok(None); // cover forced empty
            }
        }

        // structural fixing: deselected columns are dropped entirely
        let kept: Vec<usize> = (0..k).filter(|&p| fixed[p] != Some(true)).collect();
        let node_data = self.restricted.restrict_columns(&kept)?;

        let mut prog = ConicProgram::new();
        let w = prog.add_vars(node_data.n(), f64::NEG_INFINITY, f64::INFINITY);
        let b = prog.add_var(f64::NEG_INFINITY, f64::INFINITY);
        let xi = prog.add_vars(node_data.m(), 0.0, f64::INFINITY);
        for &x in &xi {
            prog.set_cost(x, self.c);
        }
        add_margin_rows(&mut prog, &node_data, &w, b, &xi);

        let mut u = Vec::with_capacity(kept.len());
        let mut q = Vec::with_capacity(kept.len());
        for (idx, &pos) in kept.iter().enumerate() {
            let (ulo, uhi) = if fixed[pos] == Some(false) {
                (0.0, 0.0)
            } else {
                (0.0, 1.0)
            };
            let uj = prog.add_var(ulo, uhi);
            let sj = prog.add_var(f64::NEG_INFINITY, f64::INFINITY);
            let qj = prog.add_var(f64::NEG_INFINITY, f64::INFINITY);
            prog.set_cost(qj, 1.0);
            prog.add_row(RowSense::Eq, 1.0, vec![(sj, 1.0), (uj, 1.0)]);
            prog.add_rsoc(qj, sj, vec![w[idx]]);
            u.push(uj);
            q.push(qj);
        }
        prog.add_row(
            RowSense::Eq,
            (deselect_target - cnt_f1) as f64,
            u.iter().map(|&uj| (uj, 1.0)).collect(),
        );
        if let Some(ub) = self.cutoff {
            let mut coeffs: Vec<(usize, f64)> = q.iter().map(|&qj| (qj, 1.0)).collect();
            coeffs.extend(xi.iter().map(|&x| (x, self.c)));
            prog.add_row(RowSense::Le, ub, coeffs);
        }
        if let Some(cov) = &self.cover {
            let in_kept: Vec<(usize, f64)> = kept
                .iter()
                .enumerate()
                .filter(|(_, &pos)| cov.contains(&pos))
                .map(|(idx, _)| (u[idx], 1.0))
                .collect();
            let rhs = cov.len() as i64 - 1 - cov.iter().filter(|&&p| fixed[p] == Some(true)).count() as i64;
            if rhs < 0 {
                return Ok(None);
            }
            if !in_kept.is_empty() {
                prog.add_row(RowSense::Le, rhs as f64, in_kept);
            }
        }

        let sol = conicqp::solve(&prog, &self.ipm)?;
        match sol.status {
            SolveStatus::Infeasible => return Ok(None),
            SolveStatus::Unbounded => {
                return Err(Error::NumericalBreakdown(
                    "node relaxation reported unbounded".into(),
                ))
            }
            _ => {}
        }
        let certified = sol.status == SolveStatus::Optimal;
        let bound = if certified {
            sol.primal_obj.min(sol.dual_obj)
        } else {
            f64::NEG_INFINITY
        };

        let mut u_values = vec![1.0; k];
        for (idx, &pos) in kept.iter().enumerate() {
            u_values[pos] = sol.x[u[idx]].clamp(0.0, 1.0);
        }

        // rounding guide: keep the budget-many smallest deselection values
        let mut order: Vec<usize> = (0..k).filter(|&p| fixed[p] != Some(true)).collect();
        order.sort_by_key(|&p| {
            (
                fixed[p] != Some(false), // forced selections first
                indicator_key(u_values[p]),
                p,
            )
        });
        let mut assignment = vec![true; k];
        for &p in order.iter().take(self.budget) {
            assignment[p] = false;
        }
        let heuristic = (order.len() >= self.budget).then_some(assignment);

        Ok(Some(NodeEval {
            bound,
            u_values,
            heuristic_assignment: heuristic,
        }))
    }

    fn incumbent(&self, assignment: &[bool]) -> Result<Option<Incumbent>> {
        let selected_pos: Vec<usize> = (0..assignment.len()).filter(|&p| !assignment[p]).collect();
        if selected_pos.len() > self.budget || selected_pos.is_empty() {
            return Ok(None);
        }
        if !self.cover_accepts(&selected_pos) {
            return Ok(None);
        }
        let selected_ids: Vec<usize> = selected_pos.iter().map(|&p| self.k_ids[p]).collect();
        let point = solve_svm_with(&self.data, self.c, Some(&selected_ids), &self.ipm)?;
        if !self.cutoff_accepts(point.objective) {
            return Ok(None);
        }
        let objective = point.objective;
        Ok(Some(Incumbent {
            objective,
            point: Some(point),
            assignment: assignment.to_vec(),
            relaxed_u: assignment.iter().map(|&a| f64::from(u8::from(a))).collect(),
        }))
    }
}

/// Full-width embedding helper shared by model polish steps.
pub(crate) fn embed_full(n: usize, ids: &[usize], values: &[f64]) -> DVector<f64> {
    let mut w = DVector::zeros(n);
    for (i, &j) in ids.iter().enumerate() {
        w[j] = values[i];
    }
    w
}
