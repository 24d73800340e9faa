//! Mehrotra predictor-corrector interior-point method on the homogeneous
//! self-dual embedding of the standard conic form. Infeasibility and
//! unboundedness are certified through the embedding rather than guessed
//! from divergence.

use std::time::Instant;

use super::cones::{ConeLayout, NtScaling};
use super::kkt::KktSolver;
use super::stdform::StdForm;
use super::SolveStatus;
use crate::error::{Error, Result};

const STEP_FRAC: f64 = 0.99;
const MAX_REG_ESCALATIONS: usize = 3;
/// Wide-neighborhood parameter: every complementarity pair must stay above
/// this fraction of the barrier parameter after a step.
const CENTRALITY_FRACTION: f64 = 1e-4;

#[derive(Debug, Clone)]
pub(crate) struct IpmSettings {
    pub tol: f64,
    /// Acceptance tolerance when strict progress stalls; the standard
    /// "optimal to reduced precision" exit of practical interior-point codes.
    pub tol_reduced: f64,
    pub max_iter: usize,
    pub time_limit: Option<f64>,
    pub static_reg: f64,
}

#[derive(Debug, Clone)]
pub(crate) struct IpmOutcome {
    pub status: SolveStatus,
    /// Unscaled primal/dual iterate (divided by tau), or the certificate ray
    /// for infeasible/unbounded exits.
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub z: Vec<f64>,
    pub s: Vec<f64>,
    pub iterations: usize,
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub gap: f64,
    pub certificate_residual: Option<f64>,
    pub solve_time_s: f64,
}

#[derive(Debug, Clone)]
pub(crate) struct WarmPoint {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub z: Vec<f64>,
    pub s: Vec<f64>,
}

type Direction = (Vec<f64>, Vec<f64>, Vec<f64>, f64, Vec<f64>, f64);

struct Iterate {
    x: Vec<f64>,
    y: Vec<f64>,
    z: Vec<f64>,
    s: Vec<f64>,
    tau: f64,
    kappa: f64,
}

struct Problem<'a> {
    sf: &'a StdForm,
    data_scale: f64,
    nb: f64,
    nh: f64,
    nc: f64,
    start: Instant,
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

/// Progress signals of one iterate: optimality metrics plus the normalized
/// quality of the two infeasibility certificates (lower is better).
#[derive(Debug, Clone, Copy)]
struct Signals {
    pres: f64,
    dres: f64,
    relgap: f64,
    merit: f64,
    rho_p: f64,
    rho_d: f64,
}

impl Signals {
    fn best(&self) -> f64 {
        self.merit.min(self.rho_p).min(self.rho_d)
    }
}

impl Problem<'_> {
    /// Checks optimality at `opt_tol` and the two infeasibility certificates
    /// at `inf_tol`; also returns the progress signals of the iterate.
    fn classify(
        &self,
        it: &Iterate,
        iter: usize,
        opt_tol: f64,
        inf_tol: f64,
    ) -> (Option<IpmOutcome>, Signals) {
        let sf = self.sf;
        let n = sf.n;
        let p = sf.a.nrows();
        let mg = sf.g.nrows();

        let mut r_x = vec![0.0; n];
        sf.a.tr_mul_acc(&it.y, &mut r_x);
        sf.g.tr_mul_acc(&it.z, &mut r_x);
        for j in 0..n {
            r_x[j] += sf.c[j] * it.tau;
        }
        let mut r_y = vec![0.0; p];
        sf.a.mul(&it.x, &mut r_y);
        for r in 0..p {
            r_y[r] -= sf.b[r] * it.tau;
        }
        let mut r_z = vec![0.0; mg];
        sf.g.mul(&it.x, &mut r_z);
        for r in 0..mg {
            r_z[r] += it.s[r] - sf.h[r] * it.tau;
        }
        let dot_cx: f64 = sf.c.iter().zip(&it.x).map(|(a, b)| a * b).sum();
        let dot_by: f64 = sf.b.iter().zip(&it.y).map(|(a, b)| a * b).sum();
        let dot_hz: f64 = sf.h.iter().zip(&it.z).map(|(a, b)| a * b).sum();

        let inv_tau = 1.0 / it.tau;
        let pres = (inf_norm(&r_y) * inv_tau / self.nb).max(inf_norm(&r_z) * inv_tau / self.nh);
        let dres = inf_norm(&r_x) * inv_tau / self.nc;
        let pobj = dot_cx * inv_tau;
        let dobj = -(dot_by + dot_hz) * inv_tau;
        let gap_abs = (pobj - dobj).abs();
        let relgap = gap_abs / (1.0 + pobj.abs());
        let merit = pres.max(dres).max(relgap);

        let scaled = |status: SolveStatus, cert: Option<f64>| IpmOutcome {
            status,
            x: it.x.iter().map(|v| v * inv_tau).collect(),
            y: it.y.iter().map(|v| v * inv_tau).collect(),
            z: it.z.iter().map(|v| v * inv_tau).collect(),
            s: it.s.iter().map(|v| v * inv_tau).collect(),
            iterations: iter,
            primal_residual: pres,
            dual_residual: dres,
            gap: gap_abs,
            certificate_residual: cert,
            solve_time_s: self.start.elapsed().as_secs_f64(),
        };

        let mut signals = Signals {
            pres,
            dres,
            relgap,
            merit,
            rho_p: f64::INFINITY,
            rho_d: f64::INFINITY,
        };

        if pres <= opt_tol && dres <= opt_tol && relgap <= opt_tol {
            return (Some(scaled(SolveStatus::Optimal, None)), signals);
        }

        // primal infeasibility: A'y + G'z = 0 with b'y + h'z < 0
        let den_p = -(dot_by + dot_hz);
        if den_p > 1e-12 {
            let mut cert = vec![0.0; n];
            sf.a.tr_mul_acc(&it.y, &mut cert);
            sf.g.tr_mul_acc(&it.z, &mut cert);
            let rho = inf_norm(&cert) / den_p;
            signals.rho_p = rho / self.data_scale;
            if rho <= inf_tol * self.data_scale {
                let inv = 1.0 / den_p;
                let mut out = scaled(SolveStatus::Infeasible, Some(rho));
                out.x = vec![0.0; n];
                out.y = it.y.iter().map(|v| v * inv).collect();
                out.z = it.z.iter().map(|v| v * inv).collect();
                out.s = it.s.iter().map(|v| v * inv).collect();
                return (Some(out), signals);
            }
        }
        // dual infeasibility (primal unbounded ray): Ax = 0, Gx + s = 0, c'x < 0
        let den_d = -dot_cx;
        if den_d > 1e-12 {
            let inv = 1.0 / den_d;
            let mut ax = vec![0.0; p];
            sf.a.mul(&it.x, &mut ax);
            let mut gxs = vec![0.0; mg];
            sf.g.mul(&it.x, &mut gxs);
            for r in 0..mg {
                gxs[r] += it.s[r];
            }
            let rho = (inf_norm(&ax).max(inf_norm(&gxs))) * inv;
            signals.rho_d = rho / self.data_scale;
            if rho <= inf_tol * self.data_scale {
                let mut out = scaled(SolveStatus::Unbounded, Some(rho));
                out.x = it.x.iter().map(|v| v * inv).collect();
                out.y = vec![0.0; p];
                out.z = vec![0.0; mg];
                out.s = it.s.iter().map(|v| v * inv).collect();
                return (Some(out), signals);
            }
        }
        (None, signals)
    }
}

pub(crate) fn solve_hsde(
    sf: &StdForm,
    settings: &IpmSettings,
    warm: Option<&WarmPoint>,
) -> Result<IpmOutcome> {
    let start = Instant::now();
    let n = sf.n;
    let p = sf.a.nrows();
    let mg = sf.g.nrows();
    let nkkt = n + p + mg;
    let layout = sf.layout.clone();
    let degree = (layout.degree() + 1) as f64;

    let prob = Problem {
        sf,
        data_scale: 1.0 + sf.a.max_abs().max(sf.g.max_abs()),
        nb: 1.0 + inf_norm(&sf.b),
        nh: 1.0 + inf_norm(&sf.h),
        nc: 1.0 + inf_norm(&sf.c),
        start,
    };

    let mut nt = NtScaling::identity(layout.clone());
    let mut kkt = KktSolver::new(sf, settings.static_reg);

    let mut it = match warm {
        Some(wp) => {
            let mut s = wp.s.clone();
            let mut z = wp.z.clone();
            let margin = 1e-4 * (1.0 + inf_norm(&s).max(inf_norm(&z)));
            shift_with_margin(&layout, &mut s, margin);
            shift_with_margin(&layout, &mut z, margin);
            let sz: f64 = s.iter().zip(&z).map(|(a, b)| a * b).sum();
            Iterate {
                x: wp.x.clone(),
                y: wp.y.clone(),
                z,
                s,
                tau: 1.0,
                kappa: (sz + 1.0) / degree,
            }
        }
        None => {
            kkt.refactor(&nt)?;
            let mut rhs = vec![0.0; nkkt];
            rhs[n..n + p].copy_from_slice(&sf.b);
            rhs[n + p..].copy_from_slice(&sf.h);
            let mut sol = vec![0.0; nkkt];
            kkt.solve(&rhs, &mut sol)?;
            let x = sol[..n].to_vec();
            let mut s: Vec<f64> = sol[n + p..].iter().map(|v| -v).collect();
            layout.shift_to_interior(&mut s);
            let mut rhs2 = vec![0.0; nkkt];
            for j in 0..n {
                rhs2[j] = -sf.c[j];
            }
            let mut sol2 = vec![0.0; nkkt];
            kkt.solve(&rhs2, &mut sol2)?;
            let y = sol2[n..n + p].to_vec();
            let mut z = sol2[n + p..].to_vec();
            layout.shift_to_interior(&mut z);
            Iterate {
                x,
                y,
                z,
                s,
                tau: 1.0,
                kappa: 1.0,
            }
        }
    };

    let mut best: Option<(f64, IpmOutcome)> = None;
    let mut escalations = 0usize;
    let mut final_iter = 0usize;
    let mut best_signal = f64::INFINITY;
    let mut signal_history: Vec<f64> = Vec::new();

    let mut r_x = vec![0.0; n];
    let mut r_y = vec![0.0; p];
    let mut r_z = vec![0.0; mg];

    let debug = std::env::var_os("SPARSE_SVM_IPM_DEBUG").is_some();
    for iter in 0..=settings.max_iter {
        final_iter = iter;
        let (outcome, signals) = prob.classify(&it, iter, settings.tol, settings.tol);
        if debug {
            eprintln!(
                "ipm iter {iter}: merit {:.3e} pres {:.3e} dres {:.3e} gap {:.3e} rho_p {:.3e} rho_d {:.3e} tau {:.3e} kappa {:.3e}",
                signals.merit,
                signals.pres,
                signals.dres,
                signals.relgap,
                signals.rho_p,
                signals.rho_d,
                it.tau,
                it.kappa
            );
        }
        if let Some(out) = outcome {
            return Ok(out);
        }
        if best
            .as_ref()
            .map(|(bm, _)| signals.merit < *bm)
            .unwrap_or(true)
        {
            let inv_tau = 1.0 / it.tau;
            best = Some((
                signals.merit,
                IpmOutcome {
                    status: SolveStatus::IterLimit,
                    x: it.x.iter().map(|v| v * inv_tau).collect(),
                    y: it.y.iter().map(|v| v * inv_tau).collect(),
                    z: it.z.iter().map(|v| v * inv_tau).collect(),
                    s: it.s.iter().map(|v| v * inv_tau).collect(),
                    iterations: iter,
                    primal_residual: signals.pres,
                    dual_residual: signals.dres,
                    gap: signals.relgap,
                    certificate_residual: None,
                    solve_time_s: start.elapsed().as_secs_f64(),
                },
            ));
        }
        // stall exit: neither optimality nor either certificate has improved
        // substantially over a trailing window
        best_signal = best_signal.min(signals.best());
        signal_history.push(best_signal);
        let lag = 12;
        if signal_history.len() > lag
            && best_signal > 0.7 * signal_history[signal_history.len() - 1 - lag]
        {
            break;
        }
        if iter == settings.max_iter {
            break;
        }
        if let Some(limit) = settings.time_limit {
            if start.elapsed().as_secs_f64() > limit {
                let mut out = best.map(|(_, o)| o).expect("best iterate recorded");
                out.status = SolveStatus::TimeLimit;
                return Ok(out);
            }
        }

        // residuals of the embedding
        r_x.iter_mut().for_each(|v| *v = 0.0);
        sf.a.tr_mul_acc(&it.y, &mut r_x);
        sf.g.tr_mul_acc(&it.z, &mut r_x);
        for j in 0..n {
            r_x[j] += sf.c[j] * it.tau;
        }
        sf.a.mul(&it.x, &mut r_y);
        for r in 0..p {
            r_y[r] -= sf.b[r] * it.tau;
        }
        sf.g.mul(&it.x, &mut r_z);
        for r in 0..mg {
            r_z[r] += it.s[r] - sf.h[r] * it.tau;
        }
        let dot_cx: f64 = sf.c.iter().zip(&it.x).map(|(a, b)| a * b).sum();
        let dot_by: f64 = sf.b.iter().zip(&it.y).map(|(a, b)| a * b).sum();
        let dot_hz: f64 = sf.h.iter().zip(&it.z).map(|(a, b)| a * b).sum();
        let r_tau = dot_cx + dot_by + dot_hz + it.kappa;

        let sz: f64 = it.s.iter().zip(&it.z).map(|(a, b)| a * b).sum();
        let mu = (sz + it.tau * it.kappa) / degree;

        if let Err(msg) = nt.update(&it.s, &it.z) {
            return finish(best, msg, &prob, &it, final_iter, settings);
        }

        // compute a trusted step, escalating the static regularization and
        // refactoring when a near-singular pivot poisons the directions
        enum Plan {
            Step {
                dir: Direction,
                affine: Direction,
                alpha: f64,
                centering: bool,
            },
            Abort,
        }
        let plan = 'attempt: loop {
            let mut escalate = |kkt: &mut KktSolver, escalations: &mut usize| -> bool {
                if *escalations < MAX_REG_ESCALATIONS {
                    *escalations += 1;
                    kkt.static_reg *= 100.0;
                    true
                } else {
                    false
                }
            };
            kkt.refactor(&nt)?;
            let mut zeta2 = vec![0.0; nkkt];
            let mut rhs2 = vec![0.0; nkkt];
            for j in 0..n {
                rhs2[j] = -sf.c[j];
            }
            rhs2[n..n + p].copy_from_slice(&sf.b);
            rhs2[n + p..].copy_from_slice(&sf.h);
            kkt.solve(&rhs2, &mut zeta2)?;
            let res = kkt.residual_norm(&rhs2, &zeta2);
            // the acceptance threshold must not scale with the solution
            // norm: a factorization gone singular produces arbitrarily
            // large solutions that would otherwise self-certify
            if res > 1e-6 * (1.0 + inf_norm(&rhs2)) && escalate(&mut kkt, &mut escalations) {
                continue 'attempt;
            }
            let phi2 = phi(sf, &zeta2, n, p);

            // affine (predictor) direction
            let mut ds = vec![0.0; mg];
            layout.product(&nt.lambda, &nt.lambda, &mut ds);
            ds.iter_mut().for_each(|v| *v = -*v);
            let dkappa_rhs = -it.tau * it.kappa;
            let affine = match direction(
                sf, &layout, &nt, &mut kkt, &r_x, &r_y, &r_z, r_tau, 1.0, &ds, dkappa_rhs,
                &zeta2, phi2, &it,
            ) {
                Ok(d) => d,
                Err(Error::NumericalBreakdown(_)) => {
                    if escalate(&mut kkt, &mut escalations) {
                        continue 'attempt;
                    }
                    break 'attempt Plan::Abort;
                }
                Err(e) => return Err(e),
            };
            // the usable affine step honors the centrality neighborhood, so
            // a pinned iterate yields sigma near one and the combined step
            // recenters
            let alpha_aff =
                neighborhood_step(&layout, &it, &affine.4, &affine.2, affine.3, affine.5, degree);
            let sigma = (1.0 - alpha_aff).powi(3).clamp(1e-8, 0.999);

            // combined (corrector) direction
            let mut w_dz = vec![0.0; mg];
            nt.mult_w(&affine.2, &mut w_dz);
            let mut winv_ds = vec![0.0; mg];
            nt.mult_w_inv(&affine.4, &mut winv_ds);
            let mut corr = vec![0.0; mg];
            layout.product(&winv_ds, &w_dz, &mut corr);
            let e = layout.identity();
            for r in 0..mg {
                ds[r] += sigma * mu * e[r] - corr[r];
            }
            let dkappa_rhs = -it.tau * it.kappa + sigma * mu - affine.3 * affine.5;
            let combined = match direction(
                sf,
                &layout,
                &nt,
                &mut kkt,
                &r_x,
                &r_y,
                &r_z,
                r_tau,
                1.0 - sigma,
                &ds,
                dkappa_rhs,
                &zeta2,
                phi2,
                &it,
            ) {
                Ok(d) => d,
                Err(Error::NumericalBreakdown(_)) => {
                    if escalate(&mut kkt, &mut escalations) {
                        continue 'attempt;
                    }
                    break 'attempt Plan::Abort;
                }
                Err(e) => return Err(e),
            };

            // step back from the cone boundary and stay inside the wide
            // centrality neighborhood; complementarity pairs collapsing far
            // below mu is what produces garbage Newton directions
            let mut alpha =
                neighborhood_step(&layout, &it, &combined.4, &combined.2, combined.3, combined.5, degree);
            let mut dir = combined;
            if alpha < 0.5 * alpha_aff {
                // the second-order correction hurt the step: retry plain
                let mut ds_plain = vec![0.0; mg];
                layout.product(&nt.lambda, &nt.lambda, &mut ds_plain);
                for r in 0..mg {
                    ds_plain[r] = -ds_plain[r] + sigma * mu * e[r];
                }
                let dk_plain = -it.tau * it.kappa + sigma * mu;
                if let Ok(plain) = direction(
                    sf,
                    &layout,
                    &nt,
                    &mut kkt,
                    &r_x,
                    &r_y,
                    &r_z,
                    r_tau,
                    1.0 - sigma,
                    &ds_plain,
                    dk_plain,
                    &zeta2,
                    phi2,
                    &it,
                ) {
                    let alpha_plain = neighborhood_step(
                        &layout, &it, &plain.4, &plain.2, plain.3, plain.5, degree,
                    );
                    if alpha_plain > alpha {
                        alpha = alpha_plain;
                        dir = plain;
                    }
                }
            }
            let centering = alpha < 1e-4;
            if debug {
                eprintln!(
                    "    step alpha {alpha:.3e} sigma {sigma:.3e} mu {mu:.3e} alpha_aff {alpha_aff:.3e} centering {centering} K {:.2e} |dz| {:.2e} mincomp {:.2e}",
                    kkt.matrix_scale(),
                    inf_norm(&dir.2),
                    layout.min_complementarity(&it.s, &it.z) / mu
                );
            }

            // directions orders of magnitude beyond the iterate scale signal
            // a fried factorization; applying any fraction of them wrecks
            // the dual iterate
            let iterate_scale = 1.0
                + inf_norm(&it.z)
                    .max(inf_norm(&it.s))
                    .max(inf_norm(&it.x))
                    .max(inf_norm(&it.y));
            let (cdz, cdy, cdtau, crs): (&[f64], &[f64], f64, f64) = if centering {
                (&affine.2, &affine.1, affine.3, 1.0)
            } else {
                (&dir.2, &dir.1, dir.3, 1.0 - sigma)
            };
            if inf_norm(cdz).max(inf_norm(cdy)) > 1e5 * iterate_scale {
                let mut e1 = vec![0.0; n];
                sf.a.tr_mul_acc(cdy, &mut e1);
                sf.g.tr_mul_acc(cdz, &mut e1);
                for j in 0..n {
                    e1[j] += sf.c[j] * cdtau + crs * r_x[j];
                }
                if inf_norm(&e1) > 1e-3 * (1.0 + inf_norm(&r_x)) {
                    if escalate(&mut kkt, &mut escalations) {
                        continue 'attempt;
                    }
                    break 'attempt Plan::Abort;
                }
            }
            break 'attempt Plan::Step {
                dir,
                affine,
                alpha,
                centering,
            };
        };

        match plan {
            Plan::Abort => break,
            Plan::Step {
                dir,
                affine,
                alpha,
                centering,
            } => {
                if centering {
                    // neither corrected direction can move: fall back to the
                    // plain affine direction, whose complementarity target
                    // lambda \ d_s equals -lambda exactly and cannot amplify
                    // a collapsed scaling
                    let mut alpha_c =
                        0.5 * step_length(&layout, &it, &affine.4, &affine.2, affine.3, affine.5);
                    alpha_c = alpha_c.min(1.0);
                    for _ in 0..40 {
                        let ok_s = interior_after(&layout, &it.s, &affine.4, alpha_c);
                        let ok_z = interior_after(&layout, &it.z, &affine.2, alpha_c);
                        let ok_t = it.tau + alpha_c * affine.3 > 0.0
                            && it.kappa + alpha_c * affine.5 > 0.0;
                        if ok_s && ok_z && ok_t {
                            break;
                        }
                        alpha_c *= 0.5;
                    }
                    apply_step(
                        &mut it, &affine.0, &affine.1, &affine.2, &affine.4, affine.3, affine.5,
                        alpha_c,
                    );
                } else {
                    apply_step(&mut it, &dir.0, &dir.1, &dir.2, &dir.4, dir.3, dir.5, alpha);
                }
            }
        }
    }

    finish(
        best,
        "iteration limit".to_string(),
        &prob,
        &it,
        final_iter,
        settings,
    )
}

/// Endgame when the loop cannot continue: reclassify at the reduced
/// tolerance (the certificate residual stays recorded), accept the best
/// iterate as reduced-precision optimal when it qualifies, otherwise hand it
/// back as-is; a breakdown error only when nothing usable exists.
fn finish(
    best: Option<(f64, IpmOutcome)>,
    reason: String,
    prob: &Problem<'_>,
    it: &Iterate,
    iter: usize,
    settings: &IpmSettings,
) -> Result<IpmOutcome> {
    let relaxed_inf = (settings.tol * 100.0).max(settings.tol_reduced);
    let (outcome, _) = prob.classify(it, iter, settings.tol_reduced, relaxed_inf);
    if let Some(out) = outcome {
        return Ok(out);
    }
    match best {
        Some((_, mut out)) => {
            let gap_bar = (0.1 * settings.tol_reduced).max(settings.tol);
            if out.primal_residual <= settings.tol_reduced
                && out.dual_residual <= settings.tol_reduced
                && out.gap <= gap_bar
            {
                out.status = SolveStatus::Optimal;
            }
            Ok(out)
        }
        None => Err(Error::NumericalBreakdown(format!(
            "no usable iterate: {reason}"
        ))),
    }
}

fn shift_with_margin(layout: &ConeLayout, v: &mut [f64], margin: f64) {
    let current = layout.interior_margin(v);
    if current < margin {
        let step = margin - current;
        for (vi, ei) in v.iter_mut().zip(layout.identity()) {
            *vi += step * ei;
        }
    }
}

fn phi(sf: &StdForm, zeta: &[f64], n: usize, p: usize) -> f64 {
    let cx: f64 = sf.c.iter().zip(&zeta[..n]).map(|(a, b)| a * b).sum();
    let by: f64 = sf.b.iter().zip(&zeta[n..n + p]).map(|(a, b)| a * b).sum();
    let hz: f64 = sf.h.iter().zip(&zeta[n + p..]).map(|(a, b)| a * b).sum();
    cx + by + hz
}

/// Solves one Newton system of the embedding given the complementarity
/// right-hand sides; `res_scale` multiplies the linear residual targets.
#[allow(clippy::too_many_arguments)]
fn direction(
    sf: &StdForm,
    layout: &ConeLayout,
    nt: &NtScaling,
    kkt: &mut KktSolver,
    r_x: &[f64],
    r_y: &[f64],
    r_z: &[f64],
    r_tau: f64,
    res_scale: f64,
    d_s: &[f64],
    d_kappa: f64,
    zeta2: &[f64],
    phi2: f64,
    it: &Iterate,
) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>, f64, Vec<f64>, f64)> {
    let n = sf.n;
    let p = sf.a.nrows();
    let mg = sf.g.nrows();
    let nkkt = n + p + mg;

    let mut lam_inv_ds = vec![0.0; mg];
    layout.inverse_product(&nt.lambda, d_s, &mut lam_inv_ds);
    let mut w_lam_inv_ds = vec![0.0; mg];
    nt.mult_w(&lam_inv_ds, &mut w_lam_inv_ds);

    let mut rhs = vec![0.0; nkkt];
    for j in 0..n {
        rhs[j] = -res_scale * r_x[j];
    }
    for r in 0..p {
        rhs[n + r] = -res_scale * r_y[r];
    }
    for r in 0..mg {
        rhs[n + p + r] = -res_scale * r_z[r] - w_lam_inv_ds[r];
    }
    let mut zeta1 = vec![0.0; nkkt];
    kkt.solve(&rhs, &mut zeta1)?;
    if std::env::var_os("SPARSE_SVM_IPM_DEBUG").is_some() {
        let res = kkt.residual_norm(&rhs, &zeta1);
        eprintln!(
            "      dir solve: |rhs| {:.2e} |zeta1| {:.2e} res {:.2e} denom {:.2e}",
            rhs.iter().fold(0.0f64, |m, v| m.max(v.abs())),
            zeta1.iter().fold(0.0f64, |m, v| m.max(v.abs())),
            res,
            phi(sf, zeta2, n, p) - it.kappa / it.tau
        );
    }
    let phi1 = phi(sf, &zeta1, n, p);

    let eta_tau = -res_scale * r_tau;
    let denom = phi2 - it.kappa / it.tau;
    // the denominator is -|zeta2|^2 in the scaled metric minus kappa/tau; a
    // nonnegative or non-finite value certifies a broken factorization
    if !(denom < 0.0) || !phi1.is_finite() {
        return Err(Error::NumericalBreakdown(format!(
            "newton system produced denom {denom:.3e}"
        )));
    }
    let dtau = (eta_tau - d_kappa / it.tau - phi1) / denom;

    let dx: Vec<f64> = (0..n).map(|j| zeta1[j] + dtau * zeta2[j]).collect();
    let dy: Vec<f64> = (0..p).map(|r| zeta1[n + r] + dtau * zeta2[n + r]).collect();
    let dz: Vec<f64> = (0..mg)
        .map(|r| zeta1[n + p + r] + dtau * zeta2[n + p + r])
        .collect();

    // ds = W(lambda \ d_s - W dz)
    let mut w_dz = vec![0.0; mg];
    nt.mult_w(&dz, &mut w_dz);
    let mut tmp = vec![0.0; mg];
    for r in 0..mg {
        tmp[r] = lam_inv_ds[r] - w_dz[r];
    }
    let mut dsv = vec![0.0; mg];
    nt.mult_w(&tmp, &mut dsv);

    let dkap = (d_kappa - it.kappa * dtau) / it.tau;
    Ok((dx, dy, dz, dtau, dsv, dkap))
}

/// Largest backtracked step keeping the candidate strictly interior and
/// inside the wide neighborhood `min_eig(s o z) >= fraction * mu`.
#[allow(clippy::too_many_arguments)]
fn neighborhood_step(
    layout: &ConeLayout,
    it: &Iterate,
    dsv: &[f64],
    dz: &[f64],
    dtau: f64,
    dkap: f64,
    degree: f64,
) -> f64 {
    let mg = dsv.len();
    let mut alpha = STEP_FRAC * step_length(layout, it, dsv, dz, dtau, dkap);
    alpha = alpha.min(1.0);
    let mut s_cand = vec![0.0; mg];
    let mut z_cand = vec![0.0; mg];
    for _ in 0..20 {
        for r in 0..mg {
            s_cand[r] = it.s[r] + alpha * dsv[r];
            z_cand[r] = it.z[r] + alpha * dz[r];
        }
        let tau_c = it.tau + alpha * dtau;
        let kap_c = it.kappa + alpha * dkap;
        if tau_c > 0.0
            && kap_c > 0.0
            && layout.interior_margin(&s_cand) > 0.0
            && layout.interior_margin(&z_cand) > 0.0
        {
            let sz_c: f64 = s_cand.iter().zip(&z_cand).map(|(a, b)| a * b).sum();
            let mu_c = (sz_c + tau_c * kap_c) / degree;
            let min_comp = layout
                .min_complementarity(&s_cand, &z_cand)
                .min(tau_c * kap_c);
            if min_comp >= CENTRALITY_FRACTION * mu_c {
                return alpha;
            }
        }
        alpha *= 0.5;
    }
    0.0
}

#[allow(clippy::too_many_arguments)]
fn apply_step(
    it: &mut Iterate,
    dx: &[f64],
    dy: &[f64],
    dz: &[f64],
    dsv: &[f64],
    dtau: f64,
    dkap: f64,
    alpha: f64,
) {
    for (v, d) in it.x.iter_mut().zip(dx) {
        *v += alpha * d;
    }
    for (v, d) in it.y.iter_mut().zip(dy) {
        *v += alpha * d;
    }
    for (v, d) in it.z.iter_mut().zip(dz) {
        *v += alpha * d;
    }
    for (v, d) in it.s.iter_mut().zip(dsv) {
        *v += alpha * d;
    }
    it.tau += alpha * dtau;
    it.kappa += alpha * dkap;
}

fn step_length(
    layout: &ConeLayout,
    it: &Iterate,
    ds: &[f64],
    dz: &[f64],
    dtau: f64,
    dkap: f64,
) -> f64 {
    let mut alpha = layout.max_step(&it.s, ds).min(layout.max_step(&it.z, dz));
    if dtau < 0.0 {
        alpha = alpha.min(-it.tau / dtau);
    }
    if dkap < 0.0 {
        alpha = alpha.min(-it.kappa / dkap);
    }
    alpha.min(1.0)
}

fn interior_after(layout: &ConeLayout, v: &[f64], dv: &[f64], alpha: f64) -> bool {
    let cand: Vec<f64> = v.iter().zip(dv).map(|(a, b)| a + alpha * b).collect();
    layout.interior_margin(&cand) > 0.0
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::conicqp::{ConicProgram, RowSense};

    // the Newton direction must satisfy its six defining linearized
    // equations to solver precision
    #[test]
    fn direction_solves_linearized_system() {
        let mut prog = ConicProgram::new();
        let x0 = prog.add_var(0.0, 2.0);
        let x1 = prog.add_var(f64::NEG_INFINITY, f64::INFINITY);
        let a = prog.add_var(0.0, f64::INFINITY);
        let bvar = prog.add_var(0.0, f64::INFINITY);
        prog.set_cost(x0, 1.0);
        prog.set_cost(a, 0.5);
        prog.set_cost(bvar, 0.25);
        prog.add_quad_diag(x1, 2.0);
        prog.add_row(RowSense::Eq, 1.0, vec![(x0, 1.0), (x1, 1.0)]);
        prog.add_row(RowSense::Le, 3.0, vec![(x0, 2.0), (x1, -1.0)]);
        prog.add_rsoc(a, bvar, vec![x0, x1]);
        let sf = super::super::stdform::lower(&prog).unwrap();

        let n = sf.n;
        let p = sf.a.nrows();
        let mg = sf.g.nrows();
        let layout = sf.layout.clone();
        // deterministic pseudo-random interior iterate
        let lcg = |k: usize| ((k * 2654435761 + 12345) % 1000) as f64 / 1000.0;
        let x: Vec<f64> = (0..n).map(|k| lcg(k) - 0.5).collect();
        let y: Vec<f64> = (0..p).map(|k| lcg(k + 100) - 0.5).collect();
        let mut s: Vec<f64> = (0..mg).map(|k| lcg(k + 200) + 0.1).collect();
        let mut z: Vec<f64> = (0..mg).map(|k| lcg(k + 300) + 0.1).collect();
        layout.shift_to_interior(&mut s);
        layout.shift_to_interior(&mut z);
        let it = Iterate {
            x,
            y,
            z,
            s,
            tau: 0.9,
            kappa: 0.7,
        };

        let mut nt = NtScaling::identity(layout.clone());
        nt.update(&it.s, &it.z).unwrap();
        let mut kkt = KktSolver::new(&sf, 1e-10);
        kkt.refactor(&nt).unwrap();

        // residuals
        let mut r_x = vec![0.0; n];
        sf.a.tr_mul_acc(&it.y, &mut r_x);
        sf.g.tr_mul_acc(&it.z, &mut r_x);
        for j in 0..n {
            r_x[j] += sf.c[j] * it.tau;
        }
        let mut r_y = vec![0.0; p];
        sf.a.mul(&it.x, &mut r_y);
        for r in 0..p {
            r_y[r] -= sf.b[r] * it.tau;
        }
        let mut r_z = vec![0.0; mg];
        sf.g.mul(&it.x, &mut r_z);
        for r in 0..mg {
            r_z[r] += it.s[r] - sf.h[r] * it.tau;
        }
        let dot_cx: f64 = sf.c.iter().zip(&it.x).map(|(a, b)| a * b).sum();
        let dot_by: f64 = sf.b.iter().zip(&it.y).map(|(a, b)| a * b).sum();
        let dot_hz: f64 = sf.h.iter().zip(&it.z).map(|(a, b)| a * b).sum();
        let r_tau = dot_cx + dot_by + dot_hz + it.kappa;

        let nkkt = n + p + mg;
        let mut zeta2 = vec![0.0; nkkt];
        let mut rhs2 = vec![0.0; nkkt];
        for j in 0..n {
            rhs2[j] = -sf.c[j];
        }
        rhs2[n..n + p].copy_from_slice(&sf.b);
        rhs2[n + p..].copy_from_slice(&sf.h);
        kkt.solve(&rhs2, &mut zeta2).unwrap();
        let phi2 = phi(&sf, &zeta2, n, p);

        // arbitrary complementarity targets
        let d_s: Vec<f64> = (0..mg).map(|k| lcg(k + 400) - 0.3).collect();
        let d_kappa = -0.21;
        let res_scale = 0.8;
        let (dx, dy, dz, dtau, dsv, dkap) = direction(
            &sf, &layout, &nt, &mut kkt, &r_x, &r_y, &r_z, r_tau, res_scale, &d_s, d_kappa,
            &zeta2, phi2, &it,
        )
        .unwrap();

        // E1: A'dy + G'dz + c dtau + rs*r_x = 0
        let mut e1 = vec![0.0; n];
        sf.a.tr_mul_acc(&dy, &mut e1);
        sf.g.tr_mul_acc(&dz, &mut e1);
        for j in 0..n {
            e1[j] += sf.c[j] * dtau + res_scale * r_x[j];
        }
        // E2: A dx - b dtau + rs*r_y = 0
        let mut e2 = vec![0.0; p];
        sf.a.mul(&dx, &mut e2);
        for r in 0..p {
            e2[r] += -sf.b[r] * dtau + res_scale * r_y[r];
        }
        // E3: G dx + ds - h dtau + rs*r_z = 0
        let mut e3 = vec![0.0; mg];
        sf.g.mul(&dx, &mut e3);
        for r in 0..mg {
            e3[r] += dsv[r] - sf.h[r] * dtau + res_scale * r_z[r];
        }
        // E4: c'dx + b'dy + h'dz + dkappa + rs*r_tau = 0
        let e4 = sf.c.iter().zip(&dx).map(|(a, b)| a * b).sum::<f64>()
            + sf.b.iter().zip(&dy).map(|(a, b)| a * b).sum::<f64>()
            + sf.h.iter().zip(&dz).map(|(a, b)| a * b).sum::<f64>()
            + dkap
            + res_scale * r_tau;
        // E5: lambda o (W dz + W^-1 ds) = d_s
        let mut wdz = vec![0.0; mg];
        nt.mult_w(&dz, &mut wdz);
        let mut winv_ds = vec![0.0; mg];
        nt.mult_w_inv(&dsv, &mut winv_ds);
        let sum: Vec<f64> = wdz.iter().zip(&winv_ds).map(|(a, b)| a + b).collect();
        let mut e5 = vec![0.0; mg];
        layout.product(&nt.lambda, &sum, &mut e5);
        for r in 0..mg {
            e5[r] -= d_s[r];
        }
        // E6: tau dkappa + kappa dtau = d_kappa
        let e6 = it.tau * dkap + it.kappa * dtau - d_kappa;

        let worst = inf_norm(&e1)
            .max(inf_norm(&e2))
            .max(inf_norm(&e3))
            .max(e4.abs())
            .max(inf_norm(&e5))
            .max(e6.abs());
        assert!(worst < 1e-9, "direction equation residual {worst:.3e}");
    }
}
