//! Channel algebra and the free reference system: open channels, the spectral
//! transform `F0`, free evolution, incoming projections and the time
//! operator in the spectral representation.
//!
//! Fourier convention: `phi_hat(xi) = (2 pi)^{-1/2} int e^{-i xi x} phi(x) dx`.
//! Fiber component `minus` sits at `xi = -k`, `plus` at `xi = +k`.

use std::f64::consts::PI;

use rustfft::FftPlanner;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{C64, I, ZERO};
use crate::scenario::AxialGrid;

/// Channel-resolved state on a symmetric axial grid, stored channel-major.
#[derive(Clone, Debug, PartialEq)]
pub struct WavePacket {
    pub grid: AxialGrid,
    /// Threshold of each channel.
    pub thresholds: Vec<f64>,
    pub data: Vec<C64>,
}

impl WavePacket {
    pub fn zeros(grid: AxialGrid, thresholds: Vec<f64>) -> Self {
        let len = grid.n * thresholds.len();
        Self { grid, thresholds, data: vec![ZERO; len] }
    }

    pub fn from_fn(grid: AxialGrid, thresholds: Vec<f64>, f: impl Fn(usize, f64) -> C64) -> Self {
        let mut p = Self::zeros(grid, thresholds);
        for c in 0..p.channels() {
            for i in 0..grid.n {
                p.data[c * grid.n + i] = f(c, grid.x(i));
            }
        }
        p
    }

    pub fn channels(&self) -> usize {
        self.thresholds.len()
    }

    #[inline]
    pub fn at(&self, c: usize, i: usize) -> C64 {
        self.data[c * self.grid.n + i]
    }

    #[inline]
    pub fn at_mut(&mut self, c: usize, i: usize) -> &mut C64 {
        &mut self.data[c * self.grid.n + i]
    }

    pub fn channel(&self, c: usize) -> &[C64] {
        &self.data[c * self.grid.n..(c + 1) * self.grid.n]
    }

    pub fn channel_mut(&mut self, c: usize) -> &mut [C64] {
        let n = self.grid.n;
        &mut self.data[c * n..(c + 1) * n]
    }

    /// `L^2` inner product `dx sum conj(self) other`.
    pub fn inner(&self, other: &WavePacket) -> C64 {
        crate::linalg::dot(&self.data, &other.data) * self.grid.dx
    }

    pub fn norm(&self) -> f64 {
        self.inner(self).re.max(0.0).sqrt()
    }

    pub fn axpy(&mut self, a: C64, other: &WavePacket) {
        for (x, y) in self.data.iter_mut().zip(&other.data) {
            *x += a * y;
        }
    }

    pub fn scaled(&self, a: C64) -> WavePacket {
        let mut out = self.clone();
        out.data.iter_mut().for_each(|z| *z *= a);
        out
    }

    /// `|| <x>^t phi ||`, the weighted norm used to certify `D_t` membership.
    pub fn weighted_norm(&self, t: f64) -> f64 {
        let mut s = 0.0;
        for c in 0..self.channels() {
            for i in 0..self.grid.n {
                let x = self.grid.x(i);
                s += (1.0 + x * x).powf(t) * self.at(c, i).norm_sqr();
            }
        }
        (s * self.grid.dx).sqrt()
    }

    /// `phi_hat(xi)` of channel `c` by direct evaluation of the discrete-time
    /// Fourier sum, i.e. the exact transform of the band-limited interpolant.
    pub fn fourier_at(&self, c: usize, xi: f64) -> C64 {
        let g = self.grid;
        let x0 = g.x(0);
        let step = C64::from_polar(1.0, -xi * g.dx);
        let mut phase = C64::from_polar(1.0, -xi * x0);
        let mut s = ZERO;
        for v in self.channel(c) {
            s += v * phase;
            phase *= step;
        }
        s * (g.dx / (2.0 * PI).sqrt())
    }

    /// Momentum-space samples on the FFT grid, in FFT order, with the
    /// `(2 pi)^{-1/2} dx` normalization and the grid-offset phase applied.
    pub fn to_momentum(&self) -> Vec<Vec<C64>> {
        let g = self.grid;
        let mut planner = FftPlanner::new();
        let fft = planner.plan_fft_forward(g.n);
        let xi = fft_frequencies(g);
        let x0 = g.x(0);
        (0..self.channels())
            .map(|c| {
                let mut buf = self.channel(c).to_vec();
                fft.process(&mut buf);
                buf.iter().zip(&xi).map(|(v, &q)| v * C64::from_polar(g.dx / (2.0 * PI).sqrt(), -q * x0)).collect()
            })
            .collect()
    }

    /// Inverse of [`WavePacket::to_momentum`].
    pub fn from_momentum(grid: AxialGrid, thresholds: Vec<f64>, spectra: &[Vec<C64>]) -> Self {
        let mut planner = FftPlanner::new();
        let ifft = planner.plan_fft_inverse(grid.n);
        let xi = fft_frequencies(grid);
        let x0 = grid.x(0);
        let scale = (2.0 * PI).sqrt() / (grid.dx * grid.n as f64);
        let mut out = Self::zeros(grid, thresholds);
        for (c, s) in spectra.iter().enumerate() {
            let mut buf: Vec<C64> = s.iter().zip(&xi).map(|(v, &q)| v * C64::from_polar(scale, q * x0)).collect();
            ifft.process(&mut buf);
            out.channel_mut(c).copy_from_slice(&buf);
        }
        out
    }

    /// Squared norm carried by momenta of the given sign (`< 0` or `> 0`).
    pub fn momentum_mass(&self, positive: bool) -> f64 {
        let xi = fft_frequencies(self.grid);
        let dxi = 2.0 * PI / (self.grid.n as f64 * self.grid.dx);
        self.to_momentum()
            .iter()
            .flat_map(|s| s.iter().zip(&xi).filter(|(_, &q)| if positive { q > 0.0 } else { q < 0.0 }).map(|(v, _)| v.norm_sqr()))
            .sum::<f64>()
            * dxi
    }
}

/// FFT angular frequencies in FFT order: `2 pi m / (n dx)`, `m` wrapped to `[-n/2, n/2)`.
pub fn fft_frequencies(grid: AxialGrid) -> Vec<f64> {
    let n = grid.n as isize;
    let dxi = 2.0 * PI / (grid.n as f64 * grid.dx);
    (0..n).map(|m| if m < n / 2 { m as f64 * dxi } else { (m - n) as f64 * dxi }).collect()
}

/// Distinct thresholds and the exclusion test `|lambda - tau| <= factor * local gap`.
pub fn threshold_proximity(thresholds: &[f64], lambda: f64, factor: f64) -> Option<(f64, f64)> {
    let mut d = thresholds.to_vec();
    d.sort_by(f64::total_cmp);
    d.dedup_by(|a, b| (*a - *b).abs() <= 1e-12 * (1.0 + b.abs()));
    for (i, &t) in d.iter().enumerate() {
        let gap = match (i.checked_sub(1).map(|p| d[p]), d.get(i + 1)) {
            (Some(lo), Some(&hi)) => (t - lo).min(hi - t),
            (Some(lo), None) => t - lo,
            (None, Some(&hi)) => hi - t,
            (None, None) => 1.0,
        };
        if (lambda - t).abs() <= factor * gap {
            return Some((t, factor * gap));
        }
    }
    None
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ChannelSet {
    pub lambda: f64,
    /// Indices `j` with `tau_j <= lambda`.
    pub open: Vec<usize>,
    /// `k_j = sqrt(lambda - tau_j)` for the open channels.
    pub momenta: Vec<f64>,
    /// `(j, kappa_j)` with `kappa_j = sqrt(tau_j - lambda)` for the closed channels.
    pub closed: Vec<(usize, f64)>,
}

/// Open channels at `lambda`, refusing energies inside a threshold window.
pub fn open_channels(lambda: f64, thresholds: &[f64], window: f64) -> Result<ChannelSet> {
    if let Some((threshold, w)) = threshold_proximity(thresholds, lambda, window) {
        return Err(Error::ThresholdProximity { lambda, threshold, window: w });
    }
    let mut set = ChannelSet { lambda, open: Vec::new(), momenta: Vec::new(), closed: Vec::new() };
    for (j, &t) in thresholds.iter().enumerate() {
        if t <= lambda {
            set.open.push(j);
            set.momenta.push((lambda - t).sqrt());
        } else {
            set.closed.push((j, (t - lambda).sqrt()));
        }
    }
    Ok(set)
}

/// An element of the fiber `H0(lambda)`: a `(minus, plus)` pair per open channel.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FiberVector {
    pub lambda: f64,
    pub channels: Vec<usize>,
    pub minus: Vec<C64>,
    pub plus: Vec<C64>,
}

impl FiberVector {
    pub fn zeros(lambda: f64, channels: Vec<usize>) -> Self {
        let n = channels.len();
        Self { lambda, channels, minus: vec![ZERO; n], plus: vec![ZERO; n] }
    }

    pub fn norm_sqr(&self) -> f64 {
        self.minus.iter().chain(&self.plus).map(|z| z.norm_sqr()).sum()
    }

    pub fn component(&self, channel: usize) -> Option<(C64, C64)> {
        self.channels.iter().position(|&c| c == channel).map(|p| (self.minus[p], self.plus[p]))
    }
}

/// `F0(lambda) phi`: component `j` is `2^{-1/2} (lambda - tau_j)^{-1/4} phi_hat_j(-+k_j)`.
pub fn apply_f0(lambda: f64, phi: &WavePacket, window: f64) -> Result<FiberVector> {
    let set = open_channels(lambda, &phi.thresholds, window)?;
    let nyquist = PI / phi.grid.dx;
    let mut out = FiberVector::zeros(lambda, set.open.clone());
    for (p, (&c, &k)) in set.open.iter().zip(&set.momenta).enumerate() {
        if k >= nyquist {
            return Err(Error::Precondition(format!(
                "momentum {k:.4} of channel {c} beyond the grid's band limit {nyquist:.4}"
            )));
        }
        let w = (2.0 * k).sqrt().recip();
        out.minus[p] = phi.fourier_at(c, -k) * w;
        out.plus[p] = phi.fourier_at(c, k) * w;
    }
    Ok(out)
}

/// Fiber values sampled over an ascending energy grid.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FiberFamily {
    pub samples: Vec<FiberVector>,
}

impl FiberFamily {
    pub fn sample(phi: &WavePacket, lambdas: &[f64], window: f64) -> Result<Self> {
        use rayon::prelude::*;
        let samples = lambdas.par_iter().map(|&l| apply_f0(l, phi, window)).collect::<Result<Vec<_>>>()?;
        Ok(Self { samples })
    }
}

/// Natural cubic spline through `(x_i, y_i)`, `x` strictly increasing.
#[derive(Clone, Debug)]
pub struct Spline {
    xs: Vec<f64>,
    ys: Vec<C64>,
    m: Vec<C64>,
}

impl Spline {
    pub fn new(xs: Vec<f64>, ys: Vec<C64>) -> Self {
        let n = xs.len();
        let mut m = vec![ZERO; n];
        if n > 2 {
            // Thomas solve for the interior second derivatives.
            let mut c = vec![0.0; n];
            let mut d = vec![ZERO; n];
            for i in 1..n - 1 {
                let (h0, h1) = (xs[i] - xs[i - 1], xs[i + 1] - xs[i]);
                let a = h0 / 6.0;
                let b = (h0 + h1) / 3.0;
                let cc = h1 / 6.0;
                let r = (ys[i + 1] - ys[i]) / h1 - (ys[i] - ys[i - 1]) / h0;
                let denom = b - a * c[i - 1];
                c[i] = cc / denom;
                d[i] = (r - d[i - 1] * a) / denom;
            }
            for i in (1..n - 1).rev() {
                m[i] = d[i] - m[i + 1] * c[i];
            }
        }
        Self { xs, ys, m }
    }

    /// Value at `x`, zero outside the sampled range.
    pub fn eval(&self, x: f64) -> C64 {
        let n = self.xs.len();
        if n == 0 || x < self.xs[0] || x > self.xs[n - 1] {
            return ZERO;
        }
        if n == 1 {
            return self.ys[0];
        }
        let i = self.xs.partition_point(|&v| v <= x).clamp(1, n - 1);
        let (x0, x1) = (self.xs[i - 1], self.xs[i]);
        let h = x1 - x0;
        let (a, b) = ((x1 - x) / h, (x - x0) / h);
        self.ys[i - 1] * a
            + self.ys[i] * b
            + (self.m[i - 1] * (a * a * a - a) + self.m[i] * (b * b * b - b)) * (h * h / 6.0)
    }
}

/// `F0^{-1}` of a sampled fiber family onto `grid`: the momentum profile
/// `phi_hat_j(-+k) = sqrt(2k) f_j^{-+}(tau_j + k^2)` is spline-interpolated in
/// `k` and synthesized by FFT. The result is checked by re-applying `F0` at the
/// samples; a relative residual above `tol` signals undersampling.
pub fn inverse_f0(family: &FiberFamily, grid: AxialGrid, thresholds: &[f64], tol: f64) -> Result<WavePacket> {
    let nch = thresholds.len();
    let xi = fft_frequencies(grid);
    let mut spectra = vec![vec![ZERO; grid.n]; nch];
    for (c, spectrum) in spectra.iter_mut().enumerate() {
        let mut pts: Vec<(f64, C64, C64)> = family
            .samples
            .iter()
            .filter_map(|s| {
                s.component(c).map(|(m, p)| {
                    let k = (s.lambda - thresholds[c]).sqrt();
                    let w = (2.0 * k).sqrt();
                    (k, m * w, p * w)
                })
            })
            .collect();
        if pts.is_empty() {
            continue;
        }
        pts.sort_by(|a, b| a.0.total_cmp(&b.0));
        pts.dedup_by(|a, b| (a.0 - b.0).abs() < 1e-15);
        let ks: Vec<f64> = pts.iter().map(|p| p.0).collect();
        let minus = Spline::new(ks.clone(), pts.iter().map(|p| p.1).collect());
        let plus = Spline::new(ks, pts.iter().map(|p| p.2).collect());
        for (v, &q) in spectrum.iter_mut().zip(&xi) {
            *v = if q < 0.0 { minus.eval(-q) } else { plus.eval(q) };
        }
    }
    let packet = WavePacket::from_momentum(grid, thresholds.to_vec(), &spectra);
    if family.samples.iter().all(|s| s.norm_sqr() == 0.0) {
        return Ok(packet);
    }
    let peak = family.samples.iter().map(|s| s.norm_sqr().sqrt()).fold(0.0, f64::max);
    let mut residual: f64 = 0.0;
    for s in &family.samples {
        let back = apply_f0(s.lambda, &packet, 0.0)?;
        for ch in &s.channels {
            let (m0, p0) = s.component(*ch).unwrap();
            let (m1, p1) = back.component(*ch).unwrap_or((ZERO, ZERO));
            residual = residual.max((m0 - m1).norm()).max((p0 - p1).norm());
        }
    }
    let residual = residual / peak;
    if residual > tol {
        return Err(Error::Undersampled { residual, tol });
    }
    Ok(packet)
}

/// Free dispersion relation used for `e^{-it H0}`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub enum Dispersion {
    /// `xi^2 + tau`.
    Continuum,
    /// Lattice symbol `(2 - 2 cos(xi dx)) / dx^2 + tau`.
    Lattice,
    /// Crank-Nicolson phase of the lattice symbol with time step `dt`:
    /// `omega = (2 / dt) atan(E dt / 2)`.
    CrankNicolson { dt: f64 },
}

impl Dispersion {
    pub fn omega(&self, xi: f64, tau: f64, dx: f64) -> f64 {
        match *self {
            Dispersion::Continuum => xi * xi + tau,
            Dispersion::Lattice => (2.0 - 2.0 * (xi * dx).cos()) / (dx * dx) + tau,
            Dispersion::CrankNicolson { dt } => {
                let e = (2.0 - 2.0 * (xi * dx).cos()) / (dx * dx) + tau;
                2.0 / dt * (e * dt / 2.0).atan()
            }
        }
    }
}

/// `e^{-it H0} phi`, channel-wise multiplication in momentum space.
pub fn free_evolve(phi: &WavePacket, t: f64, dispersion: Dispersion) -> WavePacket {
    let xi = fft_frequencies(phi.grid);
    let dx = phi.grid.dx;
    let mut spectra = phi.to_momentum();
    for (c, s) in spectra.iter_mut().enumerate() {
        let tau = phi.thresholds[c];
        for (v, &q) in s.iter_mut().zip(&xi) {
            *v *= C64::from_polar(1.0, -t * dispersion.omega(q, tau, dx));
        }
    }
    WavePacket::from_momentum(phi.grid, phi.thresholds.clone(), &spectra)
}

/// Keep only momenta `xi < 0` (the incoming subspace); idempotent.
pub fn incoming_projection(phi: &WavePacket) -> WavePacket {
    half_line_projection(phi, false)
}

/// Keep only momenta `xi > 0` (the outgoing subspace).
pub fn outgoing_projection(phi: &WavePacket) -> WavePacket {
    half_line_projection(phi, true)
}

fn half_line_projection(phi: &WavePacket, positive: bool) -> WavePacket {
    let xi = fft_frequencies(phi.grid);
    let nyquist = PI / phi.grid.dx;
    let mut spectra = phi.to_momentum();
    for s in &mut spectra {
        for (v, &q) in s.iter_mut().zip(&xi) {
            let keep = if positive { q > 0.0 } else { q < 0.0 && q > -nyquist + 1e-12 };
            if !keep {
                *v = ZERO;
            }
        }
    }
    WavePacket::from_momentum(phi.grid, phi.thresholds.clone(), &spectra)
}

/// Gauss-Legendre nodes and weights on `[-1, 1]`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    for i in 0..(n + 1) / 2 {
        let mut z = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, z);
            for m in 2..=n {
                let p2 = ((2 * m - 1) as f64 * z * p1 - (m - 1) as f64 * p0) / m as f64;
                p0 = p1;
                p1 = p2;
            }
            let pn = if n == 0 { 1.0 } else if n == 1 { z } else { p1 };
            let pm = if n == 1 { 1.0 } else { p0 };
            dp = n as f64 * (z * pn - pm) / (z * z - 1.0);
            let dz = pn / dp;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        x[i] = -z;
        x[n - 1 - i] = z;
        w[i] = 2.0 / ((1.0 - z * z) * dp * dp);
        w[n - 1 - i] = w[i];
    }
    (x, w)
}

/// Quadrature `(lambda, weight)` for `int_{tau_min}^{lambda_max} d lambda`
/// across every band between consecutive distinct thresholds, substituting
/// `lambda = tau_j + u^2` in each band so the opening singularities vanish.
pub fn spectral_quadrature(thresholds: &[f64], lambda_max: f64, panels: usize, order: usize) -> Vec<(f64, f64)> {
    let mut d = thresholds.to_vec();
    d.sort_by(f64::total_cmp);
    d.dedup_by(|a, b| (*a - *b).abs() <= 1e-12 * (1.0 + b.abs()));
    d.retain(|&t| t < lambda_max);
    let (gx, gw) = gauss_legendre(order);
    let mut out = Vec::new();
    for (b, &lo) in d.iter().enumerate() {
        let hi = d.get(b + 1).copied().unwrap_or(lambda_max);
        let umax = (hi - lo).sqrt();
        let du = umax / panels as f64;
        for p in 0..panels {
            let (a, c) = (p as f64 * du, (p + 1) as f64 * du);
            for (x, w) in gx.iter().zip(&gw) {
                let u = 0.5 * (a + c) + 0.5 * (c - a) * x;
                out.push((lo + u * u, w * 0.5 * (c - a) * 2.0 * u));
            }
        }
    }
    out
}

/// `<phi, T phi>` with `T` acting as `i d/dlambda` on a fiber family sampled
/// on a uniform energy grid inside one band.
pub fn time_operator_expectation(family: &FiberFamily) -> Result<f64> {
    let s = &family.samples;
    if s.len() < 3 {
        return Err(Error::Invalid("time operator needs at least 3 energy samples".into()));
    }
    let h = s[1].lambda - s[0].lambda;
    if s.windows(2).any(|w| ((w[1].lambda - w[0].lambda) - h).abs() > 1e-9 * h.abs() || w[1].channels != w[0].channels) {
        return Err(Error::Invalid("time operator needs a uniform energy grid inside one band".into()));
    }
    let peak = s.iter().map(|v| v.norm_sqr()).fold(0.0, f64::max).sqrt();
    let edge = s[0].norm_sqr().sqrt().max(s[s.len() - 1].norm_sqr().sqrt());
    if edge > 1e-6 * peak {
        return Err(Error::Precondition(format!(
            "spectral profile does not vanish at the band edges ({:.2e} of peak)",
            edge / peak.max(f64::MIN_POSITIVE)
        )));
    }
    let flat = |v: &FiberVector| -> Vec<C64> { v.minus.iter().chain(&v.plus).copied().collect() };
    let mut acc = ZERO;
    for i in 1..s.len() - 1 {
        let (a, f, b) = (flat(&s[i - 1]), flat(&s[i]), flat(&s[i + 1]));
        for q in 0..f.len() {
            let d = (b[q] - a[q]) / (2.0 * h);
            acc += f[q].conj() * I * d * h;
        }
    }
    Ok(acc.re)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gaussian(grid: AxialGrid, x0: f64, width: f64, k0: f64) -> WavePacket {
        WavePacket::from_fn(grid, vec![0.0], |_, x| {
            C64::from_polar((-((x - x0) / width).powi(2) / 2.0).exp(), k0 * x)
        })
    }

    #[test]
    fn open_channel_examples() {
        let t = [0.0, 1.0, 1.0, 4.0];
        let s = open_channels(0.5, &t, 1e-3).unwrap();
        assert_eq!(s.open, vec![0]);
        assert!((s.momenta[0] - 0.5f64.sqrt()).abs() < 1e-15);
        let s = open_channels(2.0, &t, 1e-3).unwrap();
        assert_eq!(s.open, vec![0, 1, 2]);
        assert!((s.momenta[0] - 2f64.sqrt()).abs() < 1e-15 && s.momenta[1] == 1.0 && s.momenta[2] == 1.0);
        assert!(matches!(open_channels(1.0, &t, 1e-3), Err(Error::ThresholdProximity { .. })));
    }

    #[test]
    fn f0_of_gaussian_matches_closed_form() {
        let grid = AxialGrid::spanning(20.0, 512).unwrap();
        let phi = gaussian(grid, 0.0, 1.0, 0.0);
        for lambda in [0.3, 1.0, 2.5] {
            let f = apply_f0(lambda, &phi, 1e-3).unwrap();
            let k: f64 = lambda.sqrt();
            let ghat = (-k * k / 2.0).exp();
            let want = 2f64.sqrt().recip() * lambda.powf(-0.25) * ghat;
            assert!((f.minus[0] - want).norm() < 1e-8 && (f.plus[0] - want).norm() < 1e-8);
        }
    }

    #[test]
    fn closed_channel_absent_from_fiber() {
        let grid = AxialGrid::spanning(10.0, 128).unwrap();
        let phi = WavePacket::from_fn(grid, vec![0.0, 5.0], |c, x| if c == 1 { C64::new((-x * x).exp(), 0.0) } else { ZERO });
        let f = apply_f0(2.0, &phi, 1e-3).unwrap();
        assert_eq!(f.channels, vec![0]);
        assert_eq!(f.minus[0], ZERO);
    }

    #[test]
    fn parseval_over_spectral_quadrature() {
        let grid = AxialGrid::spanning(30.0, 1024).unwrap();
        let phi = WavePacket::from_fn(grid, vec![0.0, 1.0, 1.0], |c, x| {
            C64::from_polar((-(x - c as f64).powi(2) / 2.0).exp(), (1.0 + c as f64) * x)
        });
        let quad = spectral_quadrature(&phi.thresholds, 60.0, 40, 8);
        let total: f64 = quad.iter().map(|&(l, w)| apply_f0(l, &phi, 0.0).unwrap().norm_sqr() * w).sum();
        assert!((total - phi.norm().powi(2)).abs() <= 1e-4 * phi.norm().powi(2), "{total}");
    }

    #[test]
    fn f0_diagonalizes_free_hamiltonian() {
        // The lattice H0 acts on band-limited packets as the lattice symbol.
        let grid = AxialGrid::spanning(20.0, 400).unwrap();
        let phi = gaussian(grid, 1.0, 1.5, 0.7);
        let dx = grid.dx;
        let mut h0phi = phi.clone();
        for i in 0..grid.n {
            let l = if i > 0 { phi.at(0, i - 1) } else { ZERO };
            let r = if i + 1 < grid.n { phi.at(0, i + 1) } else { ZERO };
            *h0phi.at_mut(0, i) = (phi.at(0, i) * 2.0 - l - r) / (dx * dx);
        }
        for lambda in [0.2f64, 0.8, 1.7] {
            let k: f64 = lambda.sqrt();
            let symbol = (2.0 - 2.0 * (k * dx).cos()) / (dx * dx);
            let a = apply_f0(lambda, &h0phi, 0.0).unwrap();
            let b = apply_f0(lambda, &phi, 0.0).unwrap();
            assert!((a.minus[0] - b.minus[0] * symbol).norm() <= 1e-6);
            assert!((a.plus[0] - b.plus[0] * symbol).norm() <= 1e-6);
        }
    }

    #[test]
    fn round_trip_through_fibers() {
        let grid = AxialGrid::spanning(40.0, 1024).unwrap();
        let phi = gaussian(grid, -2.0, 2.0, -2.5);
        let lambdas: Vec<f64> = (1..=10000).map(|i| i as f64 * 0.0025).collect();
        let fam = FiberFamily::sample(&phi, &lambdas, 0.0).unwrap();
        let back = inverse_f0(&fam, grid, &[0.0], 1e-3).unwrap();
        let mut diff = back.clone();
        diff.axpy(C64::new(-1.0, 0.0), &phi);
        assert!(diff.norm() <= 1e-4 * phi.norm(), "{}", diff.norm() / phi.norm());
        let coarse: Vec<f64> = (1..=25).map(|i| i as f64).collect();
        let fam = FiberFamily::sample(&phi, &coarse, 0.0).unwrap();
        assert!(matches!(inverse_f0(&fam, grid, &[0.0], 1e-3), Err(Error::Undersampled { .. })));
    }

    #[test]
    fn zero_and_outgoing_fibers() {
        let grid = AxialGrid::spanning(100.0, 2048).unwrap();
        let lambdas: Vec<f64> = (1..600).map(|i| i as f64 * 0.01).collect();
        let zero = FiberFamily { samples: lambdas.iter().map(|&l| FiberVector::zeros(l, vec![0])).collect() };
        let p = inverse_f0(&zero, grid, &[0.0], 1e-3).unwrap();
        assert_eq!(p.norm(), 0.0);
        let bump = |l: f64| if (0.5..4.5).contains(&l) { (-1.0 / (1.0 - ((l - 2.5) / 2.0).powi(2))).exp() } else { 0.0 };
        let plus = FiberFamily {
            samples: lambdas
                .iter()
                .map(|&l| FiberVector { lambda: l, channels: vec![0], minus: vec![ZERO], plus: vec![C64::new(bump(l), 0.0)] })
                .collect(),
        };
        let p = inverse_f0(&plus, grid, &[0.0], 1e-3).unwrap();
        assert!(p.momentum_mass(false) <= 1e-20 * p.norm().powi(2));
        assert!(p.norm() > 0.1);
    }

    #[test]
    fn free_evolution_identities() {
        let grid = AxialGrid::spanning(60.0, 2048).unwrap();
        let phi = gaussian(grid, -10.0, 1.5, 1.3);
        assert!((free_evolve(&phi, 0.0, Dispersion::Continuum).data.iter().zip(&phi.data).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max)) < 1e-12);
        for t in [0.7, 3.0, 8.0] {
            let p = free_evolve(&phi, t, Dispersion::Lattice);
            assert!((p.norm() - phi.norm()).abs() <= 1e-12 * phi.norm());
        }
        // Closed-form free Gaussian: width^2 -> width^2 + 2 i t, centre moves by 2 k t.
        let t = 4.0;
        let evolved = free_evolve(&phi, t, Dispersion::Continuum);
        let (s2, k0, x0) = (1.5f64 * 1.5, 1.3, -10.0);
        let err = grid
            .xs()
            .iter()
            .enumerate()
            .map(|(i, &x)| {
                let a = C64::new(s2, 2.0 * t);
                let shift = x - x0 - 2.0 * k0 * t;
                let exact = (C64::new(s2, 0.0) / a).sqrt()
                    * (-C64::new(shift * shift, 0.0) / (a * 2.0) + I * (k0 * x - k0 * k0 * t)).exp();
                (evolved.at(0, i) - exact).norm()
            })
            .fold(0.0, f64::max);
        assert!(err < 1e-8, "{err}");
    }

    #[test]
    fn incoming_projection_properties() {
        let grid = AxialGrid::spanning(30.0, 512).unwrap();
        let left = gaussian(grid, 0.0, 2.0, -2.0);
        let p = incoming_projection(&left);
        let once = incoming_projection(&p);
        assert!(once.data.iter().zip(&p.data).all(|(a, b)| (a - b).norm() < 1e-13));
        let right = gaussian(grid, 0.0, 2.0, 2.0);
        assert!(incoming_projection(&outgoing_projection(&right)).norm() < 1e-14);
        // Even momentum profile vanishing at xi = 0: -phi'' of a Gaussian.
        let even = WavePacket::from_fn(grid, vec![0.0], |_, x| C64::new((1.0 - x * x) * (-x * x / 2.0).exp(), 0.0));
        let half = incoming_projection(&even);
        assert!((half.norm().powi(2) - 0.5 * even.norm().powi(2)).abs() < 1e-12);
    }

    fn profile_family(a: f64, lo: f64, hi: f64, n: usize) -> FiberFamily {
        let h = (hi - lo) / (n - 1) as f64;
        FiberFamily {
            samples: (0..n)
                .map(|i| {
                    let l = lo + i as f64 * h;
                    let u = (2.0 * (l - lo) / (hi - lo)) - 1.0;
                    let rho = if u.abs() < 1.0 { (-1.0 / (1.0 - u * u)).exp() } else { 0.0 };
                    FiberVector { lambda: l, channels: vec![0], minus: vec![C64::from_polar(rho, a * l)], plus: vec![ZERO] }
                })
                .collect(),
        }
    }

    #[test]
    fn time_operator_on_spectral_profiles() {
        let real = profile_family(0.0, 1.0, 2.0, 801);
        assert!(time_operator_expectation(&real).unwrap().abs() < 1e-12);
        let a = 3.0;
        let fam = profile_family(a, 1.0, 2.0, 2001);
        let norm: f64 = fam.samples.iter().map(|s| s.norm_sqr()).sum::<f64>() * 0.0005;
        let e = time_operator_expectation(&fam).unwrap() / norm;
        assert!((e + a).abs() < 1e-5, "{e}");
    }

    #[test]
    fn time_operator_shifts_under_free_evolution() {
        let lo = 1.0;
        let fam = profile_family(0.7, lo, 2.0, 2001);
        let t = 2.5;
        let evolved = FiberFamily {
            samples: fam
                .samples
                .iter()
                .map(|s| FiberVector {
                    minus: s.minus.iter().map(|z| z * C64::from_polar(1.0, -t * s.lambda)).collect(),
                    ..s.clone()
                })
                .collect(),
        };
        let norm: f64 = fam.samples.iter().map(|s| s.norm_sqr()).sum::<f64>() * 0.0005;
        let shift = (time_operator_expectation(&evolved).unwrap() - time_operator_expectation(&fam).unwrap()) / norm;
        assert!((shift - t).abs() < 1e-5, "{shift}");
    }

    #[test]
    fn time_operator_requires_vanishing_edges() {
        let mut fam = profile_family(0.0, 1.0, 2.0, 101);
        fam.samples[0].minus[0] = C64::new(1.0, 0.0);
        assert!(matches!(time_operator_expectation(&fam), Err(Error::Precondition(_))));
    }

    #[test]
    fn gauss_legendre_integrates_polynomials() {
        let (x, w) = gauss_legendre(6);
        let s: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(10)).sum();
        assert!((s - 2.0 / 11.0).abs() < 1e-14);
    }
}
