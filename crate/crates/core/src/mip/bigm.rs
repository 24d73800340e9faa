//! The big-M formulation restricted to a feature subset: binaries select
//! features, node relaxations are the box relaxation with fixings, and
//! incumbents are polished under the |w_j| <= M bounds the formulation
//! imposes.

use crate::conicqp::{self, ConicProgram, RowSense, SolveOptions, SolveStatus};
use crate::domain::{indicator_key, Dataset, PrimalPoint};
use crate::error::{Error, Result};
use crate::svm::add_margin_rows;

use super::cop::embed_full;
use super::engine::{BranchModel, Incumbent, NodeEval};

pub(crate) struct BigMModel {
    pub data: Dataset,
    pub k_ids: Vec<usize>,
    pub restricted: Dataset,
    pub c: f64,
    pub budget: usize,
    pub big_m: f64,
    pub cutoff: Option<f64>,
    pub cover: Option<Vec<usize>>,
    pub ipm: SolveOptions,
}

impl BigMModel {
    pub fn new(
        data: &Dataset,
        k_ids: Vec<usize>,
        c: f64,
        budget: usize,
        big_m: f64,
        cutoff: Option<f64>,
        cover: Option<Vec<usize>>,
        ipm: SolveOptions,
    ) -> Result<Self> {
        if !(big_m > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "big-M must be > 0, got {big_m}"
            )));
        }
        let restricted = data.restrict_columns(&k_ids)?;
        Ok(Self {
            data: data.clone(),
            k_ids,
            restricted,
            c,
            budget,
            big_m,
            cutoff,
            cover,
            ipm,
        })
    }

    /// Restricted SVM with the formulation's |w_j| <= M bounds, polished as
    /// the exact continuous optimum on the induced support.
    fn polish(&self, selected_ids: &[usize]) -> Result<PrimalPoint> {
        let sub = self.data.restrict_columns(selected_ids)?;
        let mut prog = ConicProgram::new();
        let w = prog.add_vars(sub.n(), -self.big_m, self.big_m);
        let b = prog.add_var(f64::NEG_INFINITY, f64::INFINITY);
        let xi = prog.add_vars(sub.m(), 0.0, f64::INFINITY);
        for &wj in &w {
            prog.add_quad_diag(wj, 1.0);
        }
        for &x in &xi {
            prog.set_cost(x, self.c);
        }
        add_margin_rows(&mut prog, &sub, &w, b, &xi);
        let sol = conicqp::solve(&prog, &self.ipm)?;
        if sol.status != SolveStatus::Optimal {
            return Err(Error::NumericalBreakdown(format!(
                "incumbent polish ended with status {:?}",
                sol.status
            )));
        }
        let w_full = embed_full(
            self.data.n(),
            selected_ids,
            &w.iter().map(|&v| sol.x[v]).collect::<Vec<_>>(),
        );
        PrimalPoint::from_hyperplane(w_full, sol.x[b], &self.data, self.c)
    }
}

impl BranchModel for BigMModel {
    fn num_binaries(&self) -> usize {
        self.k_ids.len()
    }

    fn eval(&self, fixed: &[Option<bool>]) -> Result<Option<NodeEval>> {
        let k = self.k_ids.len();
        let cnt_v1 = fixed.iter().filter(|f| **f == Some(true)).count();
        let cnt_v0 = fixed.iter().filter(|f| **f == Some(false)).count();
        let free = k - cnt_v1 - cnt_v0;
        if cnt_v1 > self.budget || self.budget - cnt_v1 > free {
            return Ok(None);
        }
        if let Some(cov) = &self.cover {
            if cov.iter().all(|&p| fixed[p] == Some(false)) {
                return Ok(None);
            }
        }

        // deselected columns are dropped; selected ones keep plain M bounds
        let kept: Vec<usize> = (0..k).filter(|&p| fixed[p] != Some(false)).collect();
        let node_data = self.restricted.restrict_columns(&kept)?;

        let mut prog = ConicProgram::new();
        let mut w = Vec::with_capacity(kept.len());
        let mut v = Vec::with_capacity(kept.len());
        for &pos in &kept {
            if fixed[pos] == Some(true) {
                w.push(prog.add_var(-self.big_m, self.big_m));
                v.push(None);
            } else {
                w.push(prog.add_var(f64::NEG_INFINITY, f64::INFINITY));
                v.push(Some(prog.add_var(0.0, 1.0)));
            }
        }
        let b = prog.add_var(f64::NEG_INFINITY, f64::INFINITY);
        let xi = prog.add_vars(node_data.m(), 0.0, f64::INFINITY);
        for &x in &xi {
            prog.set_cost(x, self.c);
        }
        add_margin_rows(&mut prog, &node_data, &w, b, &xi);
        for (idx, vv) in v.iter().enumerate() {
            if let Some(vj) = vv {
                prog.add_row(RowSense::Le, 0.0, vec![(w[idx], 1.0), (*vj, -self.big_m)]);
                prog.add_row(RowSense::Ge, 0.0, vec![(w[idx], 1.0), (*vj, self.big_m)]);
            }
        }
        let budget_coeffs: Vec<(usize, f64)> =
            v.iter().flatten().map(|&vj| (vj, 1.0)).collect();
        if !budget_coeffs.is_empty() {
            prog.add_row(
                RowSense::Eq,
                (self.budget - cnt_v1) as f64,
                budget_coeffs,
            );
        }

        // objective: quadratic directly, or through an epigraph when a
        // cutoff row needs to reference it
        if let Some(ub) = self.cutoff {
            let t = prog.add_var(f64::NEG_INFINITY, f64::INFINITY);
            let one = prog.add_fixed_var(1.0);
            prog.set_cost(t, 1.0);
            prog.add_rsoc(t, one, w.clone());
            let mut coeffs: Vec<(usize, f64)> = vec![(t, 1.0)];
            coeffs.extend(xi.iter().map(|&x| (x, self.c)));
            prog.add_row(RowSense::Le, ub, coeffs);
        } else {
            for &wj in &w {
                prog.add_quad_diag(wj, 1.0);
            }
        }
        if let Some(cov) = &self.cover {
            let in_kept: Vec<(usize, f64)> = kept
                .iter()
                .enumerate()
                .filter(|(_, &pos)| cov.contains(&pos))
                .filter_map(|(idx, _)| v[idx].map(|vj| (vj, 1.0)))
                .collect();
            // at least one cover feature selected
            let forced = cov.iter().filter(|&&p| fixed[p] == Some(true)).count();
            if forced == 0 && !in_kept.is_empty() {
                prog.add_row(RowSense::Ge, 1.0, in_kept);
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

        let mut u_values = vec![0.0; k];
        for (idx, &pos) in kept.iter().enumerate() {
            u_values[pos] = match v[idx] {
                Some(vj) => sol.x[vj].clamp(0.0, 1.0),
                None => 1.0,
            };
        }

        // rounding guide: select the budget-many largest selection values
        let mut order: Vec<usize> = (0..k).filter(|&p| fixed[p] != Some(false)).collect();
        order.sort_by_key(|&p| {
            (
                fixed[p] != Some(true), // forced selections first
                -indicator_key(u_values[p]),
                p,
            )
        });
        let mut assignment = vec![false; k];
        for &p in order.iter().take(self.budget) {
            assignment[p] = true;
        }
        let heuristic = (order.len() >= self.budget).then_some(assignment);

        Ok(Some(NodeEval {
            bound,
            u_values,
            heuristic_assignment: heuristic,
        }))
    }

    fn incumbent(&self, assignment: &[bool]) -> Result<Option<Incumbent>> {
        let selected_pos: Vec<usize> = (0..assignment.len()).filter(|&p| assignment[p]).collect();
        if selected_pos.len() > self.budget || selected_pos.is_empty() {
            return Ok(None);
        }
        if let Some(cov) = &self.cover {
            if !cov.iter().any(|p| selected_pos.contains(p)) {
                return Ok(None);
            }
        }
        let selected_ids: Vec<usize> = selected_pos.iter().map(|&p| self.k_ids[p]).collect();
        let point = self.polish(&selected_ids)?;
        if let Some(ub) = self.cutoff {
            if point.objective > ub * (1.0 + 1e-9) + 1e-12 {
                return Ok(None);
            }
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
