//! Coupled-channel S-matrix by Riccati (log-derivative) marching.
//!
//! For `-(P u')' + M u = 0` with `P = I + A_eff` and
//! `M = diag(tau) + V_eff - lambda`, the matrix `Y = P u' u^{-1}` obeys
//! `Y' = M - Y P^{-1} Y`, and `G = u(-X) u(x)^{-1}` obeys `G' = -G P^{-1} Y`.
//! Starting from the purely left-outgoing (and left-decaying) solutions at
//! `-X`, matching at `+X` gives reflection and transmission for waves
//! incident from the right; the mirrored profile gives incidence from the left.

use nalgebra::DMatrix;
use serde::Serialize;

use crate::channels::gauss_legendre;
use crate::error::{Error, Result};
use crate::linalg::{C64, ONE, ZERO};
use crate::scenario::{Profile, Scenario, Target};

/// Coupling norm below which the perturbation counts as absent.
pub const MATCH_TOL: f64 = 1e-8;

#[derive(Clone, Debug)]
struct Problem<'a> {
    profile: &'a Profile,
    /// Retained channel indices.
    kept: Vec<usize>,
    tau: Vec<f64>,
    lambda: f64,
}

impl Problem<'_> {
    fn dim(&self) -> usize {
        self.kept.len()
    }

    fn select(&self, full: &[C64]) -> DMatrix<C64> {
        let k = self.profile.channels;
        DMatrix::from_fn(self.dim(), self.dim(), |r, c| full[self.kept[r] * k + self.kept[c]])
    }

    /// `(P^{-1}, M)` at `x`.
    fn coefficients(&self, x: f64) -> Result<(DMatrix<C64>, DMatrix<C64>)> {
        let n = self.dim();
        let p = self.select(&self.profile.block(Target::Metric, x)) + DMatrix::identity(n, n);
        let mut m = self.select(&self.profile.block(Target::Potential, x));
        for c in 0..n {
            m[(c, c)] += C64::new(self.tau[c] - self.lambda, 0.0);
        }
        let pinv = p.try_inverse().ok_or(Error::Ellipticity { x, min_eig: 0.0 })?;
        Ok((pinv, m))
    }

    fn rhs(&self, x: f64, y: &DMatrix<C64>, g: &DMatrix<C64>) -> Result<(DMatrix<C64>, DMatrix<C64>)> {
        let (pinv, m) = self.coefficients(x)?;
        let py = &pinv * y;
        Ok((m - y * &py, -(g * py)))
    }

    /// Local diagonal momentum `sqrt((lambda - tau - V_jj) / (1 + A_jj))` of retained channel `c`.
    fn local_k(&self, c: usize, x: f64) -> f64 {
        let k = self.profile.channels;
        let j = self.kept[c];
        let v = self.profile.block(Target::Potential, x)[j * k + j].re;
        let a = self.profile.block(Target::Metric, x)[j * k + j].re;
        ((self.lambda - self.tau[c] - v) / (1.0 + a)).max(0.0).sqrt()
    }
}

/// Coefficients are sampled strictly inside `seg` so that jumps at its ends
/// are seen from the correct side.
fn rk4(
    p: &Problem,
    seg: (f64, f64),
    x: f64,
    h: f64,
    y: &DMatrix<C64>,
    g: &DMatrix<C64>,
) -> Result<(DMatrix<C64>, DMatrix<C64>)> {
    let eta = 1e-12 * (1.0 + seg.0.abs().max(seg.1.abs()));
    let at = |x: f64| x.clamp(seg.0 + eta, seg.1 - eta);
    let hc = C64::new(h, 0.0);
    let half = C64::new(0.5 * h, 0.0);
    let (k1y, k1g) = p.rhs(at(x), y, g)?;
    let (k2y, k2g) = p.rhs(at(x + 0.5 * h), &(y + &k1y * half), &(g + &k1g * half))?;
    let (k3y, k3g) = p.rhs(at(x + 0.5 * h), &(y + &k2y * half), &(g + &k2g * half))?;
    let (k4y, k4g) = p.rhs(at(x + h), &(y + &k3y * hc), &(g + &k3g * hc))?;
    let sixth = C64::new(h / 6.0, 0.0);
    let two = C64::new(2.0, 0.0);
    Ok((
        y + (k1y + &k2y * two + &k3y * two + k4y) * sixth,
        g + (k1g + &k2g * two + &k3g * two + k4g) * sixth,
    ))
}

fn max_entry(m: &DMatrix<C64>) -> f64 {
    m.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

/// Adaptive RK4 with step doubling over `[a, b]`, with no discontinuity inside.
fn march_smooth(p: &Problem, a: f64, b: f64, y: &mut DMatrix<C64>, g: &mut DMatrix<C64>, tol: f64, steps: &mut usize) -> Result<()> {
    let mut x = a;
    let mut h = ((b - a) / 8.0).min(0.05);
    if b <= a {
        return Ok(());
    }
    while x < b {
        h = h.min(b - x);
        let (y1, g1) = rk4(p, (a, b), x, h, y, g)?;
        let (ym, gm) = rk4(p, (a, b), x, 0.5 * h, y, g)?;
        let (y2, g2) = rk4(p, (a, b), x + 0.5 * h, 0.5 * h, &ym, &gm)?;
        let scale = 1.0 + max_entry(&y2).max(max_entry(&g2));
        let err = max_entry(&(&y2 - &y1)).max(max_entry(&(&g2 - &g1))) / scale;
        if !err.is_finite() {
            return Err(Error::Stiffness { x });
        }
        if err <= tol || h < 1e-9 {
            if h < 1e-9 && err > tol {
                return Err(Error::Stiffness { x });
            }
            let c = C64::new(1.0 / 15.0, 0.0);
            *y = &y2 + (&y2 - &y1) * c;
            *g = &g2 + (&g2 - &g1) * c;
            x += h;
            *steps += 1;
            let grow = if err == 0.0 { 2.0 } else { (0.9 * (tol / err).powf(0.2)).clamp(0.2, 2.0) };
            h *= grow;
        } else {
            h *= (0.9 * (tol / err).powf(0.2)).clamp(0.1, 0.5);
        }
    }
    Ok(())
}

/// Radius beyond which the coupling norm stays below `tol`, scanning inward
/// from `x_far`; `None` when the norm at `x_far` itself is too large.
pub fn match_radius(profile: &Profile, x_far: f64, tol: f64) -> Option<f64> {
    if let Some(r) = profile.exact_support() {
        return Some(r.min(x_far));
    }
    if profile.coupling_norm(x_far) >= tol || profile.coupling_norm(-x_far) >= tol {
        return None;
    }
    let step = 0.01;
    let mut x = x_far;
    while x > 0.0 {
        let nx = x - step;
        if profile.coupling_norm(nx) >= tol || profile.coupling_norm(-nx) >= tol {
            return Some(x);
        }
        x = nx;
    }
    Some(0.0)
}

/// Fundamental data at `+X` for waves incident from the right.
#[derive(Clone, Debug, Serialize)]
pub struct CoupledSolution {
    pub lambda: f64,
    /// Retained channels (scenario indices) and which of them are open.
    pub kept: Vec<usize>,
    pub open: Vec<usize>,
    pub x_match: f64,
    /// `Y(+X)` for the solutions that are purely outgoing/decaying at `-X`.
    pub y: DMatrix<C64>,
    /// `u(-X) u(+X)^{-1}`.
    pub g: DMatrix<C64>,
    /// WKB phase `int_X^inf (k(s) - k) ds` per open channel on the right and left.
    pub phase_right: Vec<f64>,
    pub phase_left: Vec<f64>,
    /// Local momentum and its slope at `+X`, and local momentum at `-X`, per open channel.
    pub local_right: Vec<(f64, f64)>,
    pub local_left: Vec<f64>,
    pub steps: usize,
}

/// `int_X^inf (k(s) - k) ds` by Gauss-Legendre panels in `t = X / s`.
fn wkb_phase(p: &Problem, c: usize, x: f64, sign: f64) -> f64 {
    let k = (p.lambda - p.tau[c]).sqrt();
    let (gx, gw) = gauss_legendre(16);
    let panels = 32;
    let mut total = 0.0;
    for q in 0..panels {
        let (a, b) = (q as f64 / panels as f64, (q + 1) as f64 / panels as f64);
        for (t, w) in gx.iter().zip(&gw) {
            let tt = 0.5 * (a + b) + 0.5 * (b - a) * t;
            let s = x / tt;
            total += w * 0.5 * (b - a) * (p.local_k(c, sign * s) - k) * x / (tt * tt);
        }
    }
    total
}

fn solve_problem(p: &Problem, x_match: f64, wkb: bool) -> Result<CoupledSolution> {
    let n = p.dim();
    let open: Vec<usize> = (0..n).filter(|&c| p.tau[c] < p.lambda).collect();
    let mut y = DMatrix::zeros(n, n);
    let local = |c: usize, x: f64| -> (f64, f64) {
        if !wkb {
            return ((p.lambda - p.tau[c]).sqrt(), 0.0);
        }
        let h = 1e-4 * (1.0 + x.abs());
        (p.local_k(c, x), (p.local_k(c, x + h) - p.local_k(c, x - h)) / (2.0 * h))
    };
    // u'/u of k(x)^{-1/2} exp(i dir int k).
    let log_deriv = |c: usize, x: f64, dir: f64| -> C64 {
        let (k0, kp) = local(c, x);
        C64::new(-kp / (2.0 * k0), dir * k0)
    };
    for c in 0..n {
        y[(c, c)] = if open.contains(&c) {
            log_deriv(c, -x_match, -1.0)
        } else {
            C64::new((p.tau[c] - p.lambda).sqrt(), 0.0)
        };
    }
    let mut g = DMatrix::identity(n, n);
    let mut cuts: Vec<f64> = p.profile.breakpoints().into_iter().filter(|b| b.abs() < x_match).collect();
    cuts.insert(0, -x_match);
    cuts.push(x_match);
    let mut steps = 0;
    for w in cuts.windows(2) {
        march_smooth(p, w[0], w[1], &mut y, &mut g, 1e-12, &mut steps)?;
    }
    let (phase_right, phase_left) = if wkb {
        (
            open.iter().map(|&c| wkb_phase(p, c, x_match, 1.0)).collect(),
            open.iter().map(|&c| wkb_phase(p, c, x_match, -1.0)).collect(),
        )
    } else {
        (vec![0.0; open.len()], vec![0.0; open.len()])
    };
    let local_right = open.iter().map(|&c| local(c, x_match)).collect();
    let local_left = open.iter().map(|&c| local(c, -x_match).0).collect();
    Ok(CoupledSolution {
        lambda: p.lambda,
        kept: p.kept.clone(),
        open,
        x_match,
        y,
        g,
        phase_right,
        phase_left,
        local_right,
        local_left,
        steps,
    })
}

fn retained(scenario: &Scenario, lambda: f64) -> Vec<usize> {
    let d = scenario.distinct_thresholds();
    let below = d.iter().copied().filter(|&t| t <= lambda).fold(f64::NEG_INFINITY, f64::max);
    let above = d.iter().copied().find(|&t| t > lambda);
    let limit = match above {
        Some(a) if below.is_finite() => lambda + 3.0 * (a - below),
        Some(a) => lambda + 3.0 * (a - lambda),
        None => f64::INFINITY,
    };
    (0..scenario.channels()).filter(|&j| scenario.thresholds[j] <= limit).collect()
}

/// Matching radius and whether a WKB correction is needed.
fn radius(scenario: &Scenario) -> Result<(f64, bool)> {
    let x_far = scenario.grid.x_max();
    match match_radius(&scenario.profile, x_far, MATCH_TOL) {
        Some(r) => Ok((r.max(1e-3), false)),
        None if !scenario.profile.long_range.is_empty() => Ok((x_far, true)),
        None => Err(Error::MatchRadius {
            x_match: x_far,
            norm: scenario.profile.coupling_norm(x_far).max(scenario.profile.coupling_norm(-x_far)),
            tol: MATCH_TOL,
        }),
    }
}

/// Integrate the coupled-channel system across the interaction region.
pub fn solve_coupled_channel(scenario: &Scenario, lambda: f64) -> Result<CoupledSolution> {
    scenario.check_energy(lambda)?;
    let kept = retained(scenario, lambda);
    let p = Problem { profile: &scenario.profile, tau: kept.iter().map(|&j| scenario.thresholds[j]).collect(), kept, lambda };
    let (x, wkb) = radius(scenario)?;
    solve_problem(&p, x, wkb)
}

/// Reflection and transmission (open x open, flux normalized) for incidence from the right.
pub struct Amplitudes {
    pub reflection: DMatrix<C64>,
    pub transmission: DMatrix<C64>,
    pub condition: f64,
}

pub fn amplitudes(sol: &CoupledSolution, tau: &[f64]) -> Result<Amplitudes> {
    let n = sol.kept.len();
    let m = sol.open.len();
    let x = sol.x_match;
    let closed: Vec<usize> = (0..n).filter(|c| !sol.open.contains(c)).collect();
    // Column values and derivatives of the boundary waves at +X.
    let wave = |c: usize, p: usize, dir: f64| -> (C64, C64) {
        let k = (sol.lambda - tau[c]).sqrt();
        let (kx, kp) = sol.local_right[p];
        let v = C64::from_polar(kx.powf(-0.5), dir * (k * x - sol.phase_right[p]));
        (v, v * C64::new(-kp / (2.0 * kx), dir * kx))
    };
    let mut lhs = DMatrix::<C64>::zeros(n, n);
    let mut rhs = DMatrix::<C64>::zeros(n, m);
    let mut b_in = DMatrix::<C64>::zeros(n, m);
    let mut b_out = DMatrix::<C64>::zeros(n, m);
    for (p, &c) in sol.open.iter().enumerate() {
        let (vo, dvo) = wave(c, p, 1.0);
        let (vi, dvi) = wave(c, p, -1.0);
        b_out[(c, p)] = vo;
        b_in[(c, p)] = vi;
        // (Y B_out - B_out') column.
        for r in 0..n {
            lhs[(r, p)] = sol.y[(r, c)] * vo - if r == c { dvo } else { ZERO };
            rhs[(r, p)] = (if r == c { dvi } else { ZERO }) - sol.y[(r, c)] * vi;
        }
    }
    let mut b_cl = DMatrix::<C64>::zeros(n, closed.len());
    for (q, &c) in closed.iter().enumerate() {
        let kappa = (tau[c] - sol.lambda).sqrt();
        b_cl[(c, q)] = ONE;
        for r in 0..n {
            lhs[(r, m + q)] = sol.y[(r, c)] + if r == c { C64::new(kappa, 0.0) } else { ZERO };
        }
    }
    let sv = lhs.clone().singular_values();
    let condition = sv.max() / sv.min().max(f64::MIN_POSITIVE);
    let coef = lhs.lu().solve(&rhs).ok_or(Error::SolverBreakdown { node: 0 })?;
    let alpha = coef.rows(0, m).into_owned();
    let gamma = coef.rows(m, closed.len()).into_owned();
    let xi = &b_in + &b_out * &alpha + &b_cl * &gamma;
    let left = &sol.g * xi;
    let mut transmission = DMatrix::<C64>::zeros(m, m);
    for (p, &c) in sol.open.iter().enumerate() {
        let k = (sol.lambda - tau[c]).sqrt();
        // Left-outgoing wave k^{-1/2} exp(-i k y) (with its WKB phase) at y = -X.
        let w = C64::from_polar(sol.local_left[p].powf(-0.5), k * x - sol.phase_left[p]);
        for q in 0..m {
            transmission[(p, q)] = left[(c, q)] / w;
        }
    }
    Ok(Amplitudes { reflection: alpha, transmission, condition })
}

/// `S(lambda)` by matching, in the direction-major ordering of [`super::SMatrix`].
pub fn smatrix_ode(scenario: &Scenario, lambda: f64) -> Result<super::SMatrix> {
    let sol = solve_coupled_channel(scenario, lambda)?;
    let tau: Vec<f64> = sol.kept.iter().map(|&j| scenario.thresholds[j]).collect();
    let from_right = amplitudes(&sol, &tau)?;
    let mirrored = Scenario { profile: scenario.profile.mirrored(), ..scenario.clone() };
    let sol_l = solve_coupled_channel(&mirrored, lambda)?;
    let from_left = amplitudes(&sol_l, &tau)?;
    let m = sol.open.len();
    let mut s = DMatrix::<C64>::zeros(2 * m, 2 * m);
    // Column block 0: incident from the right; block 1: from the left.
    // Row block 0: exit at the left end; row block 1: exit at the right end.
    s.view_mut((0, 0), (m, m)).copy_from(&from_right.transmission);
    s.view_mut((m, 0), (m, m)).copy_from(&from_right.reflection);
    s.view_mut((m, m), (m, m)).copy_from(&from_left.transmission);
    s.view_mut((0, m), (m, m)).copy_from(&from_left.reflection);
    let open: Vec<usize> = sol.open.iter().map(|&c| sol.kept[c]).collect();
    let momenta = open.iter().map(|&j| (lambda - scenario.thresholds[j]).sqrt()).collect();
    Ok(super::SMatrix::new(lambda, open, momenta, s, super::Provenance::Ode, from_right.condition.max(from_left.condition)))
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::linalg::I;
    use crate::scenario::{AxialGrid, Part, Shape, Term};

    fn scenario(thresholds: Vec<f64>, profile: Profile) -> Scenario {
        Scenario::free(thresholds, AxialGrid::spanning(30.0, 600).unwrap()).with_profile(profile, 2.0, 6.0)
    }

    #[test]
    fn decoupled_solutions_are_exact_waves() {
        let s = scenario(vec![0.0, 1.0, 4.0], Profile::zero(3));
        let sol = solve_coupled_channel(&s, 2.0).unwrap();
        let k0: f64 = 2.0f64.sqrt();
        assert!((sol.y[(0, 0)] - C64::new(0.0, -k0)).norm() < 1e-10);
        assert!((sol.y[(1, 1)] - C64::new(0.0, -1.0)).norm() < 1e-10);
        // Closed channel keeps its exact decay rate.
        assert!((sol.y[(2, 2)] - C64::new(2f64.sqrt(), 0.0)).norm() < 1e-10);
        let x = sol.x_match;
        let want = C64::from_polar(1.0, 2.0 * k0 * x);
        assert!((sol.g[(0, 0)] - want).norm() < 1e-10);
    }

    #[test]
    fn constant_well_log_derivative() {
        let v0 = -1.5;
        let p = Profile::zero(1).with_term(Part::ShortRange, Term::potential(0, 0, v0, Shape::Barrier { center: 0.0, width: 2.0 }));
        let s = scenario(vec![0.0], p);
        let lambda: f64 = 0.7;
        let sol = solve_coupled_channel(&s, lambda).unwrap();
        assert!((sol.x_match - 1.0).abs() < 1e-15);
        let (k, q) = (lambda.sqrt(), (lambda - v0).sqrt());
        let u = C64::new((2.0 * q).cos(), 0.0) + C64::new(0.0, -k / q) * (2.0 * q).sin();
        let du = C64::new(-q * (2.0 * q).sin(), 0.0) + C64::new(0.0, -k) * (2.0 * q).cos();
        assert!((sol.y[(0, 0)] - du / u).norm() < 1e-8, "{} vs {}", sol.y[(0, 0)], du / u);
    }

    /// Analytic transmission and reflection amplitudes of the barrier `v0` on `[-a, a]`.
    pub(crate) fn barrier_amplitudes(lambda: f64, v0: f64, a: f64) -> (C64, C64) {
        let k = lambda.sqrt();
        let q = C64::new(lambda - v0, 0.0).sqrt();
        let kk = C64::new(k, 0.0);
        let den = (q * 2.0 * a).cos() - I * (kk * kk + q * q) / (kk * q * 2.0) * (q * 2.0 * a).sin();
        let phase = C64::from_polar(1.0, -2.0 * k * a);
        let t = phase / den;
        let r = I * phase * (q * q - kk * kk) / (kk * q * 2.0) * (q * 2.0 * a).sin() / den;
        (t, r)
    }

    #[test]
    fn barrier_matches_closed_form() {
        let p = Profile::zero(1).with_term(Part::ShortRange, Term::potential(0, 0, 1.0, Shape::Barrier { center: 0.0, width: 1.0 }));
        let s = scenario(vec![0.0], p);
        for lambda in [0.3, 0.8, 2.0, 3.7] {
            let sm = smatrix_ode(&s, lambda).unwrap();
            let (t, r) = barrier_amplitudes(lambda, 1.0, 0.5);
            assert!((sm.data[(0, 0)] - t).norm() < 1e-8, "{lambda}: {} vs {t}", sm.data[(0, 0)]);
            assert!((sm.data[(1, 0)] - r).norm() < 1e-8);
            assert!((sm.data[(1, 1)] - t).norm() < 1e-8);
            assert!((sm.data[(0, 1)] - r).norm() < 1e-8);
            assert!(sm.unitarity_defect < 1e-9);
        }
    }

    #[test]
    fn free_smatrix_is_identity() {
        let s = scenario(vec![0.0, 1.0, 1.0], Profile::zero(3));
        let sm = smatrix_ode(&s, 2.3).unwrap();
        let id = DMatrix::<C64>::identity(6, 6);
        assert!((sm.data - id).norm() < 1e-8);
    }

    #[test]
    fn asymmetric_coupling_is_unitary() {
        let mut t = Term::potential(0, 1, 0.6, Shape::GaussianWell { center: 0.7, width: 0.8 });
        t.amplitude_im = 0.3;
        let p = Profile::zero(2)
            .with_term(Part::ShortRange, t)
            .with_term(Part::ShortRange, Term::metric(1, 1, 0.4, Shape::GaussianWell { center: -0.5, width: 1.0 }));
        let s = scenario(vec![0.0, 1.0], p);
        let sm = smatrix_ode(&s, 1.8).unwrap();
        assert_eq!(sm.open.len(), 2);
        assert!(sm.unitarity_defect <= 1e-6, "{}", sm.unitarity_defect);
        // Below the second threshold only one channel is open; the closed one still couples.
        let sm = smatrix_ode(&s, 0.6).unwrap();
        assert_eq!(sm.data.nrows(), 2);
        assert!(sm.unitarity_defect <= 1e-6);
    }

    #[test]
    fn short_range_tail_must_decay_inside_grid() {
        let p = Profile::zero(1).with_term(Part::ShortRange, Term::potential(0, 0, 1.0, Shape::PowerTail { center: 0.0, power: 2.0 }));
        let s = Scenario::free(vec![0.0], AxialGrid::spanning(10.0, 100).unwrap()).with_profile(p, f64::INFINITY, 2.0);
        assert!(matches!(solve_coupled_channel(&s, 1.0), Err(Error::MatchRadius { .. })));
    }

    #[test]
    fn long_range_tail_uses_wkb_and_converges_in_radius() {
        let p = Profile::zero(1).with_term(Part::LongRange, Term::potential(0, 0, 0.5, Shape::PowerTail { center: 0.0, power: 2.0 }));
        let at = |x: f64| {
            let s = Scenario::free(vec![0.0], AxialGrid::spanning(x, 100).unwrap()).with_profile(p.clone(), 2.0, f64::INFINITY);
            smatrix_ode(&s, 1.5).unwrap()
        };
        let (a, b) = (at(100.0), at(200.0));
        assert!(a.unitarity_defect < 1e-8);
        assert!((a.data.clone() - b.data.clone()).norm() < 1e-4, "{}", (a.data - b.data).norm());
    }
}
