//! Generic branch-and-bound over binary indicator variables with conic node
//! relaxations. Node selection is best-bound with depth-first plunging until
//! the first incumbent; branching picks the most fractional indicator with
//! ties broken by the smallest index, so runs are deterministic.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashSet};
use std::time::Instant;

use crate::domain::{indicator_key, relative_gap, MipResult, MipStatus, PrimalPoint, INT_TOL};
use crate::error::Result;

/// Node relaxation outcome handed back by a model.
pub(crate) struct NodeEval {
    /// Valid lower bound for the subtree.
    pub bound: f64,
    /// Relaxed values of the branched binaries, in binary-position order.
    pub u_values: Vec<f64>,
    /// Model-specific rounding of the relaxation to a full assignment.
    pub heuristic_assignment: Option<Vec<bool>>,
}

/// A feasible completion of an integral assignment.
pub(crate) struct Incumbent {
    pub objective: f64,
    /// Cardinality-feasible polished point, when the formulation yields one.
    pub point: Option<PrimalPoint>,
    pub assignment: Vec<bool>,
    /// Full relaxed indicator vector at the leaf (models that carry
    /// continuous indicators outside the branched set fill it).
    pub relaxed_u: Vec<f64>,
}

/// One problem family pluggable into the engine.
pub(crate) trait BranchModel {
    fn num_binaries(&self) -> usize;
    /// Solves the node relaxation under the given fixings; `Ok(None)` means
    /// the node is infeasible.
    fn eval(&self, fixed: &[Option<bool>]) -> Result<Option<NodeEval>>;
    /// Completes an integral assignment into a feasible incumbent; `Ok(None)`
    /// when side constraints (cutoff, cover) reject it.
    fn incumbent(&self, assignment: &[bool]) -> Result<Option<Incumbent>>;
}

#[derive(Debug, Clone)]
pub(crate) struct EngineOptions {
    pub eps_rel_gap: f64,
    pub time_limit_s: Option<f64>,
    pub node_limit: usize,
    pub node_log: bool,
}

impl Default for EngineOptions {
    fn default() -> Self {
        Self {
            eps_rel_gap: 1e-6,
            time_limit_s: None,
            node_limit: 1_000_000,
            node_log: false,
        }
    }
}

struct Node {
    fixed: Vec<Option<bool>>,
    bound: f64,
    depth: usize,
    id: u64,
}

struct HeapEntry {
    bound: f64,
    id: u64,
    node: Node,
}

impl PartialEq for HeapEntry {
    fn eq(&self, other: &Self) -> bool {
        self.bound == other.bound && self.id == other.id
    }
}
impl Eq for HeapEntry {}
impl PartialOrd for HeapEntry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for HeapEntry {
    fn cmp(&self, other: &Self) -> Ordering {
        // BinaryHeap is a max-heap; invert so the smallest bound pops first,
        // older nodes first on ties
        other
            .bound
            .total_cmp(&self.bound)
            .then_with(|| other.id.cmp(&self.id))
    }
}

pub(crate) struct EngineOutcome {
    pub result: MipResult,
    pub relaxed_u: Option<Vec<f64>>,
}

pub(crate) fn branch_and_bound(
    model: &dyn BranchModel,
    branched_set: Vec<usize>,
    opts: &EngineOptions,
) -> Result<EngineOutcome> {
    let start = Instant::now();
    let k = model.num_binaries();
    let mut next_id = 0u64;
    let mut nodes_explored = 0usize;
    let mut incumbent: Option<Incumbent> = None;
    let mut ub = f64::INFINITY;
    let mut tried: HashSet<Vec<bool>> = HashSet::new();
    let mut dfs: Vec<Node> = Vec::new();
    let mut heap: BinaryHeap<HeapEntry> = BinaryHeap::new();
    let mut any_feasible_leaf = false;
    let mut timed_out = false;

    let root = Node {
        fixed: vec![None; k],
        bound: f64::NEG_INFINITY,
        depth: 0,
        id: {
            next_id += 1;
            next_id
        },
    };
    dfs.push(root);

    let improvement_margin = |ub: f64| 1e-10 * (1.0 + ub.abs());
    let prune_margin = |ub: f64| opts.eps_rel_gap * ub.abs().max(1e-12);

    let mut try_assignment =
        |assignment: &[bool],
         incumbent: &mut Option<Incumbent>,
         ub: &mut f64,
         tried: &mut HashSet<Vec<bool>>,
         any_feasible_leaf: &mut bool|
         -> Result<()> {
            if !tried.insert(assignment.to_vec()) {
                return Ok(());
            }
            if let Some(cand) = model.incumbent(assignment)? {
                *any_feasible_leaf = true;
                let improves =
                    !ub.is_finite() || cand.objective < *ub - improvement_margin(*ub);
                if improves {
                    *ub = cand.objective;
                    *incumbent = Some(cand);
                }
            }
            Ok(())
        };

    loop {
        if let Some(limit) = opts.time_limit_s {
            if start.elapsed().as_secs_f64() > limit {
                timed_out = true;
                break;
            }
        }
        if nodes_explored >= opts.node_limit {
            timed_out = true;
            break;
        }
        // plunge depth-first until an incumbent exists, then best-bound
        let node = if incumbent.is_none() {
            match dfs.pop() {
                Some(n) => n,
                None => match heap.pop() {
                    Some(e) => e.node,
                    None => break,
                },
            }
        } else {
            if !dfs.is_empty() {
                for n in dfs.drain(..) {
                    heap.push(HeapEntry {
                        bound: n.bound,
                        id: n.id,
                        node: n,
                    });
                }
            }
            match heap.pop() {
                Some(e) => e.node,
                None => break,
            }
        };

        if node.bound >= ub - prune_margin(ub) {
            continue; // bound-pruned without evaluation
        }
        nodes_explored += 1;

        let eval = match model.eval(&node.fixed)? {
            Some(e) => e,
            None => continue, // infeasible node
        };
        let bound = eval.bound.max(node.bound); // bounds are monotone down a path
        if opts.node_log {
            let fixings: Vec<String> = node
                .fixed
                .iter()
                .enumerate()
                .filter_map(|(i, f)| f.map(|v| format!("{}={}", branched_set[i], u8::from(v))))
                .collect();
            eprintln!(
                "node {} depth {} bound {:.9e} fixings [{}]",
                node.id,
                node.depth,
                bound,
                fixings.join(" ")
            );
        }
        if bound >= ub - prune_margin(ub) {
            continue;
        }

        // model-guided rounding for an early upper bound
        if let Some(assignment) = &eval.heuristic_assignment {
            try_assignment(
                assignment,
                &mut incumbent,
                &mut ub,
                &mut tried,
                &mut any_feasible_leaf,
            )?;
            if bound >= ub - prune_margin(ub) {
                continue;
            }
        }

        // integral relaxation closes the node; otherwise branch on the most
        // fractional indicator (quantized so ties break by smallest index)
        let mut most_fractional: Option<(usize, i64)> = None;
        for (pos, &uv) in eval.u_values.iter().enumerate() {
            if node.fixed[pos].is_some() {
                continue;
            }
            let frac = indicator_key((uv - 0.5).abs());
            if uv.min(1.0 - uv).abs() > INT_TOL
                && most_fractional.map(|(_, bf)| frac < bf).unwrap_or(true)
            {
                most_fractional = Some((pos, frac));
            }
        }
        match most_fractional {
            None => {
                let assignment: Vec<bool> = eval
                    .u_values
                    .iter()
                    .enumerate()
                    .map(|(pos, &uv)| node.fixed[pos].unwrap_or(uv >= 0.5))
                    .collect();
                try_assignment(
                    &assignment,
                    &mut incumbent,
                    &mut ub,
                    &mut tried,
                    &mut any_feasible_leaf,
                )?;
            }
            Some((pos, _)) => {
                // plunge toward the rounded value, ties toward zero
                let first = eval.u_values[pos] > 0.5;
                for &value in &[!first, first] {
                    let mut fixed = node.fixed.clone();
                    fixed[pos] = Some(value);
                    next_id += 1;
                    let child = Node {
                        fixed,
                        bound,
                        depth: node.depth + 1,
                        id: next_id,
                    };
                    if incumbent.is_none() {
                        dfs.push(child);
                    } else {
                        heap.push(HeapEntry {
                            bound: child.bound,
                            id: child.id,
                            node: child,
                        });
                    }
                }
            }
        }
    }

    // global lower bound from what remains open
    let open_lb = dfs
        .iter()
        .map(|n| n.bound)
        .chain(heap.iter().map(|e| e.bound))
        .fold(f64::INFINITY, f64::min);
    let (lb, status) = if timed_out {
        let lb = if open_lb.is_finite() { open_lb } else { ub };
        (lb.min(ub), MipStatus::TimeLimit)
    } else if incumbent.is_none() && !any_feasible_leaf {
        (f64::INFINITY, MipStatus::Infeasible)
    } else {
        // exhausted or gap-closed
        let lb = if open_lb.is_finite() {
            open_lb.min(ub)
        } else {
            ub
        };
        (lb, MipStatus::Optimal)
    };

    let relaxed_u = incumbent.as_ref().map(|i| i.relaxed_u.clone());
    let (point, assignment) = match incumbent {
        Some(i) => (i.point, Some(i.assignment.iter().map(|&b| u8::from(b)).collect())),
        None => (None, None),
    };
    let result = MipResult {
        incumbent: point,
        branched_set,
        binary_assignment: assignment,
        lb,
        ub,
        status,
        nodes_explored,
    };
    debug_assert!(
        result.lb <= result.ub + 1e-9 * result.ub.abs().max(1.0),
        "lb {} above ub {}",
        result.lb,
        result.ub
    );
    let _ = relative_gap;
    Ok(EngineOutcome { result, relaxed_u })
}
