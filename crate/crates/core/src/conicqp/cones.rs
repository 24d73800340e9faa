//! Cone layout and Nesterov-Todd scaling for the product of a nonnegative
//! orthant and second-order cones, plus the Jordan-algebra pieces the
//! predictor-corrector needs.

/// Layout of the conic slack vector: `l` leading orthant entries followed by
/// second-order cone blocks of the given dimensions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConeLayout {
    pub l: usize,
    pub socs: Vec<usize>,
}

impl ConeLayout {
    pub fn dim(&self) -> usize {
        self.l + self.socs.iter().sum::<usize>()
    }

    /// Barrier degree: one per orthant coordinate, one per cone block.
    pub fn degree(&self) -> usize {
        self.l + self.socs.len()
    }

    /// Identity element of the Jordan algebra.
    pub fn identity(&self) -> Vec<f64> {
        let mut e = vec![0.0; self.dim()];
        for v in e.iter_mut().take(self.l) {
            *v = 1.0;
        }
        let mut off = self.l;
        for &q in &self.socs {
            e[off] = 1.0;
            off += q;
        }
        e
    }

    /// Minimum interior margin of `v`: componentwise for the orthant,
    /// `v0 - ||v1||` per cone block. Positive iff strictly interior.
    pub fn interior_margin(&self, v: &[f64]) -> f64 {
        let mut worst = f64::INFINITY;
        for &vi in v.iter().take(self.l) {
            worst = worst.min(vi);
        }
        let mut off = self.l;
        for &q in &self.socs {
            let head = v[off];
            let tail = norm(&v[off + 1..off + q]);
            worst = worst.min(head - tail);
            off += q;
        }
        worst
    }

    /// Lifts `v` into the interior with the least disturbance: orthant
    /// entries are clipped from below and only the head coordinate of a
    /// deficient cone block is raised. A global identity shift would inject
    /// a large initial dual residual that costs endgame accuracy.
    pub fn shift_to_interior(&self, v: &mut [f64]) {
        let cushion = 0.1 * (1.0 + v.iter().fold(0.0f64, |m, x| m.max(x.abs())));
        for vi in v.iter_mut().take(self.l) {
            if *vi < cushion {
                *vi = cushion;
            }
        }
        let mut off = self.l;
        for &q in &self.socs {
            let head = v[off];
            let tail = norm(&v[off + 1..off + q]);
            if head - tail < cushion {
                v[off] = tail + cushion;
            }
            off += q;
        }
    }

    /// Largest step `a` with `v + a*dv` staying in the cone (possibly inf).
    pub fn max_step(&self, v: &[f64], dv: &[f64]) -> f64 {
        let mut alpha = f64::INFINITY;
        for i in 0..self.l {
            if dv[i] < 0.0 {
                alpha = alpha.min(-v[i] / dv[i]);
            }
        }
        let mut off = self.l;
        for &q in &self.socs {
            alpha = alpha.min(soc_max_step(&v[off..off + q], &dv[off..off + q]));
            off += q;
        }
        alpha
    }

    /// Smallest Jordan eigenvalue of s o z across cones: min s_i z_i on the
    /// orthant, `u0 - ||u1||` with `u = s o z` per SOC block. Keeping this
    /// above a fraction of mu is the wide-neighborhood centrality condition.
    pub fn min_complementarity(&self, s: &[f64], z: &[f64]) -> f64 {
        let mut worst = f64::INFINITY;
        for i in 0..self.l {
            worst = worst.min(s[i] * z[i]);
        }
        let mut off = self.l;
        for &q in &self.socs {
            let sb = &s[off..off + q];
            let zb = &z[off..off + q];
            let u0: f64 = sb.iter().zip(zb).map(|(a, b)| a * b).sum();
            let mut nrm2 = 0.0;
            for i in 1..q {
                let ui = sb[0] * zb[i] + zb[0] * sb[i];
                nrm2 += ui * ui;
            }
            worst = worst.min(u0 - nrm2.sqrt());
            off += q;
        }
        worst
    }

    /// Jordan product u o v.
    pub fn product(&self, u: &[f64], v: &[f64], out: &mut [f64]) {
        for i in 0..self.l {
            out[i] = u[i] * v[i];
        }
        let mut off = self.l;
        for &q in &self.socs {
            let (ub, vb) = (&u[off..off + q], &v[off..off + q]);
            let dot: f64 = ub.iter().zip(vb).map(|(a, b)| a * b).sum();
            out[off] = dot;
            for i in 1..q {
                out[off + i] = ub[0] * vb[i] + vb[0] * ub[i];
            }
            off += q;
        }
    }

    /// Solves lambda o x = d for x.
    pub fn inverse_product(&self, lambda: &[f64], d: &[f64], out: &mut [f64]) {
        for i in 0..self.l {
            out[i] = d[i] / lambda[i];
        }
        let mut off = self.l;
        for &q in &self.socs {
            let lb = &lambda[off..off + q];
            let db = &d[off..off + q];
            let det = lb[0] * lb[0] - lb[1..].iter().map(|v| v * v).sum::<f64>();
            let cross: f64 = lb[1..].iter().zip(&db[1..]).map(|(a, b)| a * b).sum();
            let x0 = (lb[0] * db[0] - cross) / det;
            out[off] = x0;
            for i in 1..q {
                out[off + i] = (db[i] - x0 * lb[i]) / lb[0];
            }
            off += q;
        }
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Largest feasible step inside one second-order cone.
fn soc_max_step(v: &[f64], dv: &[f64]) -> f64 {
    let a = dv[0] * dv[0] - dv[1..].iter().map(|x| x * x).sum::<f64>();
    let b = 2.0 * (v[0] * dv[0] - v[1..].iter().zip(&dv[1..]).map(|(x, y)| x * y).sum::<f64>());
    let c = v[0] * v[0] - v[1..].iter().map(|x| x * x).sum::<f64>();
    let mut alpha = f64::INFINITY;
    // first positive root of a*t^2 + b*t + c, starting from c > 0
    if a.abs() <= 1e-300 {
        if b < 0.0 {
            alpha = alpha.min(-c / b);
        }
    } else {
        let disc = b * b - 4.0 * a * c;
        if a > 0.0 {
            if disc >= 0.0 {
                let sq = disc.sqrt();
                let r1 = (-b - sq) / (2.0 * a);
                if r1 > 0.0 {
                    alpha = alpha.min(r1);
                }
            }
        } else {
            let sq = disc.max(0.0).sqrt();
            let r = (-b - sq) / (2.0 * a);
            if r > 0.0 {
                alpha = alpha.min(r);
            }
        }
    }
    // guard the head coordinate directly
    if dv[0] < 0.0 {
        alpha = alpha.min(-v[0] / dv[0]);
    }
    alpha.max(0.0)
}

/// Nesterov-Todd scaling state: `W z = W^{-1} s = lambda` with symmetric `W`.
#[derive(Debug, Clone)]
pub struct NtScaling {
    layout: ConeLayout,
    /// Orthant: w_i = sqrt(s_i / z_i).
    orthant_w: Vec<f64>,
    /// Per-SOC (eta, wbar) with wbar hyperbolic-normalized.
    soc: Vec<(f64, Vec<f64>)>,
    pub lambda: Vec<f64>,
}

impl NtScaling {
    pub fn identity(layout: ConeLayout) -> Self {
        let orthant_w = vec![1.0; layout.l];
        let soc = layout
            .socs
            .iter()
            .map(|&q| {
                let mut wbar = vec![0.0; q];
                wbar[0] = 1.0;
                (1.0, wbar)
            })
            .collect();
        let lambda = layout.identity();
        Self {
            layout,
            orthant_w,
            soc,
            lambda,
        }
    }

    /// Recomputes the scaling at a strictly interior primal-dual pair.
    pub fn update(&mut self, s: &[f64], z: &[f64]) -> Result<(), String> {
        for i in 0..self.layout.l {
            if s[i] <= 0.0 || z[i] <= 0.0 {
                return Err(format!("orthant iterate left the cone at {i}"));
            }
            self.orthant_w[i] = (s[i] / z[i]).sqrt();
            self.lambda[i] = (s[i] * z[i]).sqrt();
        }
        let mut off = self.layout.l;
        for (blk, &q) in self.layout.socs.iter().enumerate() {
            let sb = &s[off..off + q];
            let zb = &z[off..off + q];
            let ds = sb[0] * sb[0] - sb[1..].iter().map(|v| v * v).sum::<f64>();
            let dz = zb[0] * zb[0] - zb[1..].iter().map(|v| v * v).sum::<f64>();
            if ds <= 0.0 || dz <= 0.0 || sb[0] <= 0.0 || zb[0] <= 0.0 {
                return Err(format!("soc iterate left the cone in block {blk}"));
            }
            let sqs = ds.sqrt();
            let sqz = dz.sqrt();
            let mut dot = 0.0;
            for i in 0..q {
                dot += (sb[i] / sqs) * (zb[i] / sqz);
            }
            let gamma = ((1.0 + dot) / 2.0).sqrt();
            let (eta, wbar) = &mut self.soc[blk];
            *eta = (sqs / sqz).sqrt();
            wbar[0] = (sb[0] / sqs + zb[0] / sqz) / (2.0 * gamma);
            for i in 1..q {
                wbar[i] = (sb[i] / sqs - zb[i] / sqz) / (2.0 * gamma);
            }
            off += q;
        }
        // lambda = W z (identically W^{-1} s)
        let z_copy = z.to_vec();
        let mut lambda = vec![0.0; self.layout.dim()];
        self.mult_w(&z_copy, &mut lambda);
        for i in 0..self.layout.l {
            lambda[i] = (s[i] * z[i]).sqrt();
        }
        self.lambda = lambda;
        Ok(())
    }

    /// out = W v.
    pub fn mult_w(&self, v: &[f64], out: &mut [f64]) {
        for i in 0..self.layout.l {
            out[i] = self.orthant_w[i] * v[i];
        }
        let mut off = self.layout.l;
        for (blk, &q) in self.layout.socs.iter().enumerate() {
            let (eta, wbar) = &self.soc[blk];
            let vb = &v[off..off + q];
            let cross: f64 = wbar[1..].iter().zip(&vb[1..]).map(|(a, b)| a * b).sum();
            out[off] = eta * (wbar[0] * vb[0] + cross);
            let coef = vb[0] + cross / (1.0 + wbar[0]);
            for i in 1..q {
                out[off + i] = eta * (vb[i] + coef * wbar[i]);
            }
            off += q;
        }
    }

    /// out = W^{-1} v.
    pub fn mult_w_inv(&self, v: &[f64], out: &mut [f64]) {
        for i in 0..self.layout.l {
            out[i] = v[i] / self.orthant_w[i];
        }
        let mut off = self.layout.l;
        for (blk, &q) in self.layout.socs.iter().enumerate() {
            let (eta, wbar) = &self.soc[blk];
            let vb = &v[off..off + q];
            let cross: f64 = wbar[1..].iter().zip(&vb[1..]).map(|(a, b)| a * b).sum();
            out[off] = (wbar[0] * vb[0] - cross) / eta;
            let coef = cross / (1.0 + wbar[0]) - vb[0];
            for i in 1..q {
                out[off + i] = (vb[i] + coef * wbar[i]) / eta;
            }
            off += q;
        }
    }

    /// Diagonal of W^2 for the orthant part.
    pub fn orthant_w2(&self, i: usize) -> f64 {
        self.orthant_w[i] * self.orthant_w[i]
    }

    /// Entry (i, j) of W^2 = eta^2 (2 wbar wbar' - J) for one SOC block.
    pub fn soc_w2(&self, blk: usize, i: usize, j: usize) -> f64 {
        let (eta, wbar) = &self.soc[blk];
        let e2 = eta * eta;
        let base = 2.0 * wbar[i] * wbar[j];
        // J = diag(1, -1, ..., -1)
        let jj = if i == j {
            if i == 0 {
                1.0
            } else {
                -1.0
            }
        } else {
            0.0
        };
        e2 * (base - jj)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn layout() -> ConeLayout {
        ConeLayout {
            l: 3,
            socs: vec![4],
        }
    }

    fn interior_pair() -> (Vec<f64>, Vec<f64>) {
        let s = vec![1.0, 2.0, 0.5, 3.0, 0.5, -1.0, 0.8];
        let z = vec![0.7, 0.1, 2.0, 2.5, -0.3, 1.1, 0.2];
        (s, z)
    }

    #[test]
    fn scaling_maps_s_and_z_to_lambda() {
        let (s, z) = interior_pair();
        let mut nt = NtScaling::identity(layout());
        nt.update(&s, &z).unwrap();
        let mut wz = vec![0.0; 7];
        nt.mult_w(&z, &mut wz);
        let mut winv_s = vec![0.0; 7];
        nt.mult_w_inv(&s, &mut winv_s);
        for i in 0..7 {
            assert!((wz[i] - winv_s[i]).abs() < 1e-12, "Wz != W^-1 s at {i}");
            assert!((wz[i] - nt.lambda[i]).abs() < 1e-12, "lambda mismatch at {i}");
        }
    }

    #[test]
    fn w_and_w_inv_are_inverses() {
        let (s, z) = interior_pair();
        let mut nt = NtScaling::identity(layout());
        nt.update(&s, &z).unwrap();
        let v = vec![0.3, -1.2, 0.5, 1.0, 0.2, -0.4, 0.9];
        let mut wv = vec![0.0; 7];
        nt.mult_w(&v, &mut wv);
        let mut back = vec![0.0; 7];
        nt.mult_w_inv(&wv, &mut back);
        for i in 0..7 {
            assert!((back[i] - v[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn w2_entries_match_composition() {
        let (s, z) = interior_pair();
        let mut nt = NtScaling::identity(layout());
        nt.update(&s, &z).unwrap();
        // apply W twice to basis vectors restricted to the SOC block
        for col in 0..4 {
            let mut v = vec![0.0; 7];
            v[3 + col] = 1.0;
            let mut wv = vec![0.0; 7];
            nt.mult_w(&v, &mut wv);
            let mut w2v = vec![0.0; 7];
            nt.mult_w(&wv, &mut w2v);
            for row in 0..4 {
                let direct = nt.soc_w2(0, row, col);
                assert!(
                    (direct - w2v[3 + row]).abs() < 1e-12,
                    "W^2 entry ({row},{col})"
                );
            }
        }
    }

    #[test]
    fn inverse_product_solves() {
        let lay = layout();
        let (s, z) = interior_pair();
        let mut nt = NtScaling::identity(lay.clone());
        nt.update(&s, &z).unwrap();
        let d = vec![0.4, 1.0, -0.7, 2.0, 0.3, -0.2, 0.5];
        let mut x = vec![0.0; 7];
        lay.inverse_product(&nt.lambda, &d, &mut x);
        let mut check = vec![0.0; 7];
        lay.product(&nt.lambda, &x, &mut check);
        for i in 0..7 {
            assert!((check[i] - d[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn max_step_hits_boundary() {
        let lay = layout();
        let v = lay.identity();
        let mut dv = vec![0.0; 7];
        dv[0] = -2.0; // orthant: boundary at 0.5
        let a = lay.max_step(&v, &dv);
        assert!((a - 0.5).abs() < 1e-12);

        let mut dv = vec![0.0; 7];
        dv[4] = 1.0; // soc tail grows: (1, t, 0, 0) leaves at t = 1
        let a = lay.max_step(&v, &dv);
        assert!((a - 1.0).abs() < 1e-9);

        // identity direction: never leaves
        let dv = lay.identity();
        assert!(lay.max_step(&v, &dv).is_infinite());
    }
}
