//! Domain types shared by every solver: datasets, solve configurations,
//! primal points and solution records, plus the l0/indicator bookkeeping.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Support-detection threshold on standardized data. Sits three orders of
/// magnitude above the interior-point residual tolerance.
pub const DEFAULT_ZERO_TOL: f64 = 1e-6;

/// Tolerance under which an indicator entry counts as integral.
pub const INT_TOL: f64 = 1e-6;

/// An immutable m-by-n sample matrix with labels in {-1, +1}.
#[derive(Debug, Clone)]
pub struct Dataset {
    x: DMatrix<f64>,
    y: DVector<f64>,
    feature_names: Option<Vec<String>>,
    provenance: String,
}

impl Dataset {
    /// Validates labels, finiteness and class balance.
    pub fn new(
        x: DMatrix<f64>,
        y: DVector<f64>,
        feature_names: Option<Vec<String>>,
        provenance: impl Into<String>,
    ) -> Result<Self> {
        let (m, n) = x.shape();
        if m == 0 || n == 0 {
            return Err(Error::InvalidConfig("dataset must be non-empty".into()));
        }
        if y.len() != m {
            return Err(Error::Dimension {
                what: "label vector",
                expected: m,
                got: y.len(),
            });
        }
        if let Some(names) = &feature_names {
            if names.len() != n {
                return Err(Error::Dimension {
                    what: "feature names",
                    expected: n,
                    got: names.len(),
                });
            }
        }
        let mut pos = 0usize;
        let mut neg = 0usize;
        for &v in y.iter() {
            if v == 1.0 {
                pos += 1;
            } else if v == -1.0 {
                neg += 1;
            } else {
                return Err(Error::InvalidConfig(format!(
                    "labels must be exactly -1 or +1, found {v}"
                )));
            }
        }
        if pos == 0 || neg == 0 {
            return Err(Error::SingleClass);
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidConfig(
                "sample matrix contains NaN or infinite entries".into(),
            ));
        }
        Ok(Self {
            x,
            y,
            feature_names,
            provenance: provenance.into(),
        })
    }

    pub fn m(&self) -> usize {
        self.x.nrows()
    }

    pub fn n(&self) -> usize {
        self.x.ncols()
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn y(&self) -> &DVector<f64> {
        &self.y
    }

    pub fn feature_names(&self) -> Option<&[String]> {
        self.feature_names.as_deref()
    }

    pub fn provenance(&self) -> &str {
        &self.provenance
    }

    pub fn class_counts(&self) -> (usize, usize) {
        let pos = self.y.iter().filter(|&&v| v == 1.0).count();
        (pos, self.m() - pos)
    }

    /// Returns the dataset restricted to the given feature columns,
    /// in the given order. Dropping columns keeps restricted programs small.
    pub fn restrict_columns(&self, cols: &[usize]) -> Result<Self> {
        for &j in cols {
            if j >= self.n() {
                return Err(Error::IndexOutOfRange {
                    index: j,
                    bound: self.n(),
                });
            }
        }
        let m = self.m();
        let mut x = DMatrix::zeros(m, cols.len());
        for (jj, &j) in cols.iter().enumerate() {
            x.set_column(jj, &self.x.column(j));
        }
        let names = self
            .feature_names
            .as_ref()
            .map(|ns| cols.iter().map(|&j| ns[j].clone()).collect());
        Ok(Self {
            x,
            y: self.y.clone(),
            feature_names: names,
            provenance: format!("{} [columns {:?}]", self.provenance, cols),
        })
    }
}

/// Heuristic upper-bound strategy selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Strategy {
    LocalSearch,
    KernelSearch,
}

/// One struct-of-record governing a solve.
#[derive(Debug, Clone)]
pub struct ProblemConfig {
    /// Misclassification weight C > 0.
    pub c: f64,
    /// Feature budget, 1 <= budget <= n.
    pub budget: usize,
    /// Big-M parameter; only required by big-M formulations.
    pub big_m: Option<f64>,
    /// Feasibility tolerance for membership checks.
    pub eps_feas: f64,
    /// Relative optimality gap for branch-and-bound termination.
    pub eps_rel_gap: f64,
    /// Exact-procedure stopping gap, in percent.
    pub mip_gap_stop: f64,
    /// Wall-clock budget per solve, seconds.
    pub time_limit_s: Option<f64>,
    /// Local-search excess parameter k in [0, n - budget].
    pub heur_k: usize,
    /// Kernel-search bucket size rho in [1, n].
    pub heur_rho: usize,
    /// Exact-procedure K+ size s in [1, n].
    pub exact_s: usize,
    /// Per-subproblem cap inside Kernel Search, seconds.
    pub sub_time_limit_s: f64,
    /// RNG seed for randomized tie-breaking (fold shuffling only).
    pub seed: u64,
}

impl ProblemConfig {
    pub fn new(c: f64, budget: usize) -> Self {
        Self {
            c,
            budget,
            big_m: None,
            eps_feas: 1e-8,
            eps_rel_gap: 1e-6,
            mip_gap_stop: 0.01,
            time_limit_s: None,
            heur_k: 10,
            heur_rho: 10,
            exact_s: 10,
            sub_time_limit_s: 60.0,
            seed: 0,
        }
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        if !(self.c > 0.0) {
            return Err(Error::InvalidConfig(format!("C must be > 0, got {}", self.c)));
        }
        if self.budget < 1 || self.budget > n {
            return Err(Error::InvalidConfig(format!(
                "budget must lie in [1, {n}], got {}",
                self.budget
            )));
        }
        if let Some(m) = self.big_m {
            if !(m > 0.0) {
                return Err(Error::InvalidConfig(format!("big-M must be > 0, got {m}")));
            }
        }
        for (name, v) in [
            ("eps_feas", self.eps_feas),
            ("eps_rel_gap", self.eps_rel_gap),
            ("mip_gap_stop", self.mip_gap_stop),
            ("sub_time_limit_s", self.sub_time_limit_s),
        ] {
            if !(v > 0.0) {
                return Err(Error::InvalidConfig(format!("{name} must be > 0, got {v}")));
            }
        }
        Ok(())
    }
}

/// A primal triple (w, b, xi) with its penalized objective and support.
#[derive(Debug, Clone)]
pub struct PrimalPoint {
    pub w: DVector<f64>,
    pub b: f64,
    pub xi: DVector<f64>,
    pub objective: f64,
    pub support: Vec<usize>,
}

impl PrimalPoint {
    /// Builds a point from (w, b) by taking componentwise-minimal slacks.
    pub fn from_hyperplane(w: DVector<f64>, b: f64, data: &Dataset, c: f64) -> Result<Self> {
        let xi = min_slacks(&w, b, data)?;
        let mut point = Self {
            w,
            b,
            xi,
            objective: 0.0,
            support: Vec::new(),
        };
        point.objective = objective(&point, c)?;
        point.support = support_of(&point.w, DEFAULT_ZERO_TOL);
        Ok(point)
    }

    /// Margin feasibility within eps, i.e. membership in the soft-margin set.
    pub fn is_margin_feasible(&self, data: &Dataset, eps: f64) -> bool {
        if self.w.len() != data.n() || self.xi.len() != data.m() {
            return false;
        }
        if self.xi.iter().any(|&v| v < -eps) {
            return false;
        }
        for i in 0..data.m() {
            let margin = data.y()[i] * (data.x().row(i).transpose().dot(&self.w) + self.b);
            if margin < 1.0 - self.xi[i] - eps {
                return false;
            }
        }
        true
    }

    pub fn l0(&self, zero_tol: f64) -> usize {
        l0_norm(&self.w, zero_tol)
    }
}

/// Which convention an indicator vector follows.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IndicatorKind {
    /// v_j = 1 means feature j is selected; sum relates to the budget.
    SelectV,
    /// u_j = 1 means feature j is deselected; sum relates to n - budget.
    DeselectU,
}

/// A relaxed (or integral) indicator vector, carried with its convention
/// instead of silently negating between formulations.
#[derive(Debug, Clone)]
pub struct IndicatorVector {
    pub values: DVector<f64>,
    pub kind: IndicatorKind,
    pub integral: bool,
}

impl IndicatorVector {
    pub fn new(values: DVector<f64>, kind: IndicatorKind) -> Result<Self> {
        if values.iter().any(|&v| v < -INT_TOL || v > 1.0 + INT_TOL) {
            return Err(Error::InvalidConfig(
                "indicator entries must lie in [0, 1]".into(),
            ));
        }
        let integral = values
            .iter()
            .all(|&v| v.abs() <= INT_TOL || (v - 1.0).abs() <= INT_TOL);
        Ok(Self {
            values,
            kind,
            integral,
        })
    }

    /// Named conversion u = e - v (and back), to avoid sign bugs.
    pub fn complement(&self) -> Self {
        let values = self.values.map(|v| 1.0 - v);
        Self {
            values,
            kind: match self.kind {
                IndicatorKind::SelectV => IndicatorKind::DeselectU,
                IndicatorKind::DeselectU => IndicatorKind::SelectV,
            },
            integral: self.integral,
        }
    }

    /// Deselection values regardless of the stored convention.
    pub fn as_deselect(&self) -> DVector<f64> {
        match self.kind {
            IndicatorKind::DeselectU => self.values.clone(),
            IndicatorKind::SelectV => self.values.map(|v| 1.0 - v),
        }
    }
}

/// Per-solve statistics attached to relaxation solutions.
#[derive(Debug, Clone, Default)]
pub struct SolveStats {
    pub iterations: usize,
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub duality_gap: f64,
    pub wall_time_s: f64,
    /// Free-form provenance notes (e.g. how a big-M was validated).
    pub notes: Vec<String>,
}

/// A continuous relaxation optimum carrying a certified lower bound.
#[derive(Debug, Clone)]
pub struct RelaxationSolution {
    pub point: PrimalPoint,
    pub indicator: IndicatorVector,
    /// Per-feature epigraph values (diagonal of the lifted matrix).
    pub diag_w: DVector<f64>,
    pub lower_bound: f64,
    pub stats: SolveStats,
}

/// Branch-and-bound termination status.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MipStatus {
    Optimal,
    TimeLimit,
    Infeasible,
    GapStop,
}

/// Outcome of a mixed-integer solve.
#[derive(Debug, Clone)]
pub struct MipResult {
    pub incumbent: Option<PrimalPoint>,
    /// 0/1 assignment over the branched index set (paired with the set itself).
    pub branched_set: Vec<usize>,
    pub binary_assignment: Option<Vec<u8>>,
    pub lb: f64,
    pub ub: f64,
    pub status: MipStatus,
    pub nodes_explored: usize,
}

impl MipResult {
    /// Relative gap with a floor on the denominator to survive near-zero
    /// objective values.
    pub fn gap(&self) -> f64 {
        relative_gap(self.lb, self.ub)
    }
}

/// (UB - LB) / max(|UB|, 1e-12), clamped below at zero.
pub fn relative_gap(lb: f64, ub: f64) -> f64 {
    if !ub.is_finite() {
        return f64::INFINITY;
    }
    ((ub - lb) / ub.abs().max(1e-12)).max(0.0)
}

/// The penalized primal value 0.5*||w||^2 + C * sum(xi).
pub fn objective(point: &PrimalPoint, c: f64) -> Result<f64> {
    if !(c > 0.0) {
        return Err(Error::InvalidConfig(format!("C must be > 0, got {c}")));
    }
    Ok(0.5 * point.w.norm_squared() + c * point.xi.sum())
}

/// Componentwise-minimal nonnegative slacks making (w, b, xi) margin-feasible.
pub fn min_slacks(w: &DVector<f64>, b: f64, data: &Dataset) -> Result<DVector<f64>> {
    if w.len() != data.n() {
        return Err(Error::Dimension {
            what: "weight vector",
            expected: data.n(),
            got: w.len(),
        });
    }
    let m = data.m();
    let mut xi = DVector::zeros(m);
    for i in 0..m {
        let margin = data.y()[i] * (data.x().row(i).transpose().dot(w) + b);
        xi[i] = (1.0 - margin).max(0.0);
    }
    Ok(xi)
}

/// Number of entries with |w_j| strictly above the threshold.
pub fn l0_norm(w: &DVector<f64>, zero_tol: f64) -> usize {
    w.iter().filter(|v| v.abs() > zero_tol).count()
}

/// Quantized sort key for relaxed indicator values. On flat optimal faces
/// the interior-point solution carries tolerance-level wiggle (observed at
/// the 1e-4 scale), so rankings compare at 1e-3 resolution and fall back to
/// index order; the keys only steer heuristics and branching order, never
/// correctness.
pub(crate) fn indicator_key(v: f64) -> i64 {
    (v * 1e3).round() as i64
}

/// Indices of entries with |w_j| strictly above the threshold.
pub fn support_of(w: &DVector<f64>, zero_tol: f64) -> Vec<usize> {
    w.iter()
        .enumerate()
        .filter(|(_, v)| v.abs() > zero_tol)
        .map(|(j, _)| j)
        .collect()
}
