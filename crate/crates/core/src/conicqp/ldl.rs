//! Sparse LDL^T factorization of quasidefinite KKT systems: minimum-degree
//! ordering, elimination-tree symbolic analysis and an up-looking numeric
//! factorization with signed dynamic pivot floors.

/// Nodes with degree above this are deferred and ordered after all sparse
/// nodes; among deferred nodes, ascending degree is used. Exact fill
/// minimization in the dense tail does not pay for itself.
const DENSE_THRESHOLD: usize = 48;

/// Fill-reducing ordering computed by plain minimum degree on the adjacency
/// graph of the symmetric pattern. Returns `perm` with `perm[k]` = original
/// index of the k-th pivot.
pub fn min_degree_order(n: usize, edges: &[(usize, usize)]) -> Vec<usize> {
    use std::collections::BTreeSet;
    let mut adj: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); n];
    for &(i, j) in edges {
        if i != j {
            adj[i].insert(j);
            adj[j].insert(i);
        }
    }
    let mut degree: Vec<usize> = adj.iter().map(|a| a.len()).collect();
    let mut queue: BTreeSet<(usize, usize)> = (0..n).map(|v| (degree[v], v)).collect();
    let mut eliminated = vec![false; n];
    let mut perm = Vec::with_capacity(n);

    while let Some(&(d, v)) = queue.iter().next() {
        if d > DENSE_THRESHOLD {
            break;
        }
        queue.remove(&(d, v));
        if eliminated[v] || d != degree[v] {
            continue; // stale entry
        }
        eliminated[v] = true;
        perm.push(v);
        let neighbors: Vec<usize> = adj[v].iter().copied().filter(|&u| !eliminated[u]).collect();
        // form the elimination clique
        for (ai, &a) in neighbors.iter().enumerate() {
            for &b in neighbors.iter().skip(ai + 1) {
                if adj[a].insert(b) {
                    adj[b].insert(a);
                }
            }
        }
        for &u in &neighbors {
            adj[u].remove(&v);
            let nd = adj[u].iter().filter(|&&w| !eliminated[w]).count();
            if nd != degree[u] {
                degree[u] = nd;
                queue.insert((nd, u));
            }
        }
    }
    // deferred dense tail, ascending degree then index for determinism
    let mut rest: Vec<(usize, usize)> = (0..n)
        .filter(|&v| !eliminated[v])
        .map(|v| (adj[v].iter().filter(|&&w| !eliminated[w]).count(), v))
        .collect();
    rest.sort_unstable();
    perm.extend(rest.into_iter().map(|(_, v)| v));
    perm
}

/// Upper-triangular CSC pattern with a value array refreshed per iteration.
#[derive(Debug, Clone)]
pub struct UpperCsc {
    pub n: usize,
    pub colptr: Vec<usize>,
    pub rowidx: Vec<usize>,
    pub values: Vec<f64>,
}

impl UpperCsc {
    /// Builds the pattern from deduplicated upper-triangle coordinates and
    /// returns, for each input coordinate, its position in `values`.
    pub fn from_coords(n: usize, coords: &[(usize, usize)]) -> (Self, Vec<usize>) {
        let mut unique: Vec<(usize, usize)> = coords.to_vec();
        unique.sort_unstable_by_key(|&(r, c)| (c, r));
        unique.dedup();
        let mut colptr = vec![0usize; n + 1];
        for &(_, c) in &unique {
            colptr[c + 1] += 1;
        }
        for c in 0..n {
            colptr[c + 1] += colptr[c];
        }
        let rowidx: Vec<usize> = unique.iter().map(|&(r, _)| r).collect();
        let nnz = rowidx.len();
        let csc = Self {
            n,
            colptr,
            rowidx,
            values: vec![0.0; nnz],
        };
        // map each original coordinate to its slot by binary search
        let positions = coords
            .iter()
            .map(|&(r, c)| {
                let lo = csc.colptr[c];
                let hi = csc.colptr[c + 1];
                lo + csc.rowidx[lo..hi]
                    .binary_search(&r)
                    .expect("coordinate present by construction")
            })
            .collect();
        (csc, positions)
    }

    /// y = K x for the full symmetric matrix this upper triangle represents.
    pub fn sym_mul(&self, x: &[f64], y: &mut [f64]) {
        y.iter_mut().for_each(|v| *v = 0.0);
        for c in 0..self.n {
            for p in self.colptr[c]..self.colptr[c + 1] {
                let r = self.rowidx[p];
                let v = self.values[p];
                y[r] += v * x[c];
                if r != c {
                    y[c] += v * x[r];
                }
            }
        }
    }
}

/// Symbolic data reused across numeric refactorizations.
#[derive(Debug)]
pub struct LdlSymbolic {
    n: usize,
    parent: Vec<i64>,
    l_colptr: Vec<usize>,
}

/// Numeric LDL^T factor.
#[derive(Debug)]
pub struct LdlFactor {
    n: usize,
    l_colptr: Vec<usize>,
    l_rowidx: Vec<usize>,
    l_values: Vec<f64>,
    d: Vec<f64>,
    /// Count of dynamically floored pivots in the last factorization.
    #[allow(dead_code)]
    pub pivot_bumps: usize,
}

impl LdlSymbolic {
    /// Elimination-tree analysis of an upper CSC pattern.
    pub fn analyze(a: &UpperCsc) -> Self {
        let n = a.n;
        let mut parent = vec![-1i64; n];
        let mut flag = vec![usize::MAX; n];
        let mut lnz = vec![0usize; n];
        for k in 0..n {
            flag[k] = k;
            for p in a.colptr[k]..a.colptr[k + 1] {
                let mut i = a.rowidx[p];
                while i < k && flag[i] != k {
                    if parent[i] == -1 {
                        parent[i] = k as i64;
                    }
                    lnz[i] += 1;
                    flag[i] = k;
                    i = parent[i] as usize;
                }
            }
        }
        let mut l_colptr = vec![0usize; n + 1];
        for k in 0..n {
            l_colptr[k + 1] = l_colptr[k] + lnz[k];
        }
        Self {
            n,
            parent,
            l_colptr,
        }
    }

    pub fn l_nnz(&self) -> usize {
        self.l_colptr[self.n]
    }

    /// Up-looking numeric factorization. `sign[k]` is the expected pivot sign
    /// (+1 primal, -1 dual); pivots are floored away from zero toward the
    /// expected sign at `dyn_floor_rel` relative to their own input diagonal
    /// magnitude, which keeps quasidefinite systems factorable without
    /// drowning small legitimate pivots elsewhere in the matrix.
    pub fn factor(&self, a: &UpperCsc, sign: &[i8], dyn_floor_rel: f64) -> LdlFactor {
        let n = self.n;
        let mut l_rowidx = vec![0usize; self.l_nnz()];
        let mut l_values = vec![0.0f64; self.l_nnz()];
        let mut d = vec![0.0f64; n];
        let mut y = vec![0.0f64; n];
        let mut pattern = vec![0usize; n];
        let mut stack = vec![0usize; n];
        let mut flag = vec![usize::MAX; n];
        let mut lnz_used = vec![0usize; n];
        let mut bumps = 0usize;

        for k in 0..n {
            let mut top = n;
            flag[k] = k;
            y[k] = 0.0;
            for p in a.colptr[k]..a.colptr[k + 1] {
                let i = a.rowidx[p];
                if i > k {
                    continue;
                }
                y[i] += a.values[p];
                let mut len = 0usize;
                let mut ii = i;
                while ii < k && flag[ii] != k {
                    pattern[len] = ii;
                    len += 1;
                    flag[ii] = k;
                    ii = self.parent[ii] as usize;
                }
                while len > 0 {
                    len -= 1;
                    top -= 1;
                    stack[top] = pattern[len];
                }
            }
            let mut dk = y[k];
            // the pivot's rounding noise scales with the largest term that
            // entered it; a computed value below that is numerically zero
            let mut dk_scale = dk.abs();
            y[k] = 0.0;
            for &i in &stack[top..n] {
                let yi = y[i];
                y[i] = 0.0;
                let p2 = self.l_colptr[i] + lnz_used[i];
                for p in self.l_colptr[i]..p2 {
                    y[l_rowidx[p]] -= l_values[p] * yi;
                }
                let lki = yi / d[i];
                let upd = lki * yi;
                dk -= upd;
                dk_scale = dk_scale.max(upd.abs());
                l_rowidx[p2] = k;
                l_values[p2] = lki;
                lnz_used[i] += 1;
            }
            let want = sign[k] as f64;
            let floor_k = dyn_floor_rel * (1.0 + dk_scale);
            if dk * want < floor_k {
                dk = want * floor_k;
                bumps += 1;
            }
            d[k] = dk;
        }

        LdlFactor {
            n,
            l_colptr: self.l_colptr.clone(),
            l_rowidx,
            l_values,
            d,
            pivot_bumps: bumps,
        }
    }
}

impl LdlFactor {
    /// In-place solve of L D L^T x = b.
    pub fn solve(&self, x: &mut [f64]) {
        let n = self.n;
        for j in 0..n {
            let xj = x[j];
            if xj != 0.0 {
                for p in self.l_colptr[j]..self.l_colptr[j + 1] {
                    x[self.l_rowidx[p]] -= self.l_values[p] * xj;
                }
            }
        }
        for j in 0..n {
            x[j] /= self.d[j];
        }
        for j in (0..n).rev() {
            let mut xj = x[j];
            for p in self.l_colptr[j]..self.l_colptr[j + 1] {
                xj -= self.l_values[p] * x[self.l_rowidx[p]];
            }
            x[j] = xj;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dense_from(n: usize, entries: &[(usize, usize, f64)]) -> Vec<Vec<f64>> {
        let mut m = vec![vec![0.0; n]; n];
        for &(i, j, v) in entries {
            m[i][j] += v;
            if i != j {
                m[j][i] += v;
            }
        }
        m
    }

    #[test]
    fn factor_solves_quasidefinite_system() {
        // [ 2  0  1 ]
        // [ 0  3  1 ]
        // [ 1  1 -2 ]
        let entries = [
            (0usize, 0usize, 2.0),
            (1, 1, 3.0),
            (0, 2, 1.0),
            (1, 2, 1.0),
            (2, 2, -2.0),
        ];
        let coords: Vec<(usize, usize)> = entries.iter().map(|&(i, j, _)| (i, j)).collect();
        let (mut csc, pos) = UpperCsc::from_coords(3, &coords);
        for (k, &(_, _, v)) in entries.iter().enumerate() {
            csc.values[pos[k]] += v;
        }
        let sym = LdlSymbolic::analyze(&csc);
        let f = sym.factor(&csc, &[1, 1, -1], 1e-14);
        assert_eq!(f.pivot_bumps, 0);
        let dense = dense_from(3, &entries);
        let b = vec![1.0, -2.0, 0.5];
        let mut x = b.clone();
        f.solve(&mut x);
        for i in 0..3 {
            let ax: f64 = (0..3).map(|j| dense[i][j] * x[j]).sum();
            assert!((ax - b[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn ordering_covers_all_nodes() {
        let edges = vec![(0, 1), (1, 2), (2, 3), (3, 0), (0, 2)];
        let perm = min_degree_order(4, &edges);
        let mut sorted = perm.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, vec![0, 1, 2, 3]);
    }

    #[test]
    fn sym_mul_matches_dense() {
        let entries = [
            (0usize, 0usize, 2.0),
            (0, 1, -1.0),
            (1, 1, 4.0),
            (1, 3, 0.5),
            (2, 2, 1.0),
            (3, 3, -3.0),
        ];
        let coords: Vec<(usize, usize)> = entries.iter().map(|&(i, j, _)| (i, j)).collect();
        let (mut csc, pos) = UpperCsc::from_coords(4, &coords);
        for (k, &(_, _, v)) in entries.iter().enumerate() {
            csc.values[pos[k]] += v;
        }
        let dense = dense_from(4, &entries);
        let x = vec![1.0, 2.0, -1.0, 0.5];
        let mut y = vec![0.0; 4];
        csc.sym_mul(&x, &mut y);
        for i in 0..4 {
            let want: f64 = (0..4).map(|j| dense[i][j] * x[j]).sum();
            assert!((y[i] - want).abs() < 1e-14);
        }
    }

    #[test]
    fn larger_random_quasidefinite_roundtrip() {
        // arrow matrix: diagonal plus a dense last row/col, mixed signs
        let n = 40;
        let mut entries: Vec<(usize, usize, f64)> = Vec::new();
        for i in 0..n {
            let sign = if i % 3 == 0 { -1.0 } else { 1.0 };
            entries.push((i, i, sign * (2.0 + (i as f64) * 0.1)));
        }
        for i in 0..n - 1 {
            entries.push((i, n - 1, 0.3 + 0.01 * i as f64));
        }
        let coords: Vec<(usize, usize)> = entries.iter().map(|&(i, j, _)| (i, j)).collect();
        let perm = min_degree_order(
            n,
            &coords
                .iter()
                .copied()
                .filter(|&(i, j)| i != j)
                .collect::<Vec<_>>(),
        );
        let mut iperm = vec![0usize; n];
        for (k, &v) in perm.iter().enumerate() {
            iperm[v] = k;
        }
        let permuted: Vec<(usize, usize)> = coords
            .iter()
            .map(|&(i, j)| {
                let (a, b) = (iperm[i], iperm[j]);
                (a.min(b), a.max(b))
            })
            .collect();
        let (mut csc, pos) = UpperCsc::from_coords(n, &permuted);
        for (k, &(_, _, v)) in entries.iter().enumerate() {
            csc.values[pos[k]] += v;
        }
        let sym = LdlSymbolic::analyze(&csc);
        let signs: Vec<i8> = perm.iter().map(|&v| if v % 3 == 0 { -1 } else { 1 }).collect();
        let f = sym.factor(&csc, &signs, 1e-14);
        let dense = dense_from(n, &entries);
        let b: Vec<f64> = (0..n).map(|i| (i as f64 * 0.37).sin()).collect();
        let mut xp: Vec<f64> = (0..n).map(|k| b[perm[k]]).collect();
        f.solve(&mut xp);
        let mut x = vec![0.0; n];
        for k in 0..n {
            x[perm[k]] = xp[k];
        }
        for i in 0..n {
            let ax: f64 = (0..n).map(|j| dense[i][j] * x[j]).sum();
            assert!((ax - b[i]).abs() < 1e-9, "row {i}: {} vs {}", ax, b[i]);
        }
    }
}
