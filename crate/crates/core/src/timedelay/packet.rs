//! Reference wave packets synthesized from a smooth spectral bump.

use serde::Serialize;

use crate::channels::{inverse_f0, FiberFamily, FiberVector, WavePacket};
use crate::error::{Error, Result};
use crate::linalg::C64;
use crate::scenario::AxialGrid;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Direction {
    /// Negative momentum in end coordinates (`H0^-`).
    Incoming,
    /// Positive momentum (`H0^+`).
    Outgoing,
}

/// Spectral profile `rho(lambda) h` with `rho` a smooth bump on
/// `[lambda_bar - half_width, lambda_bar + half_width]` and `h` a unit fiber
/// vector in one end and channel.
#[derive(Clone, Debug, Serialize)]
pub struct PacketSpec {
    /// 0 = `L`, 1 = `R`.
    pub end: usize,
    pub channel: usize,
    pub lambda_bar: f64,
    pub half_width: f64,
    pub direction: Direction,
    /// Energy samples of the fiber family.
    pub samples: usize,
    /// Largest relative round-trip residual of the synthesis; the box
    /// truncates the slowly decaying spatial tails of a compact bump.
    pub tol: f64,
}

impl PacketSpec {
    pub fn incoming(end: usize, channel: usize, lambda_bar: f64, half_width: f64) -> Self {
        Self { end, channel, lambda_bar, half_width, direction: Direction::Incoming, samples: 401, tol: 1e-2 }
    }

    pub fn lambdas(&self) -> Vec<f64> {
        let n = self.samples.max(3);
        (0..n).map(|i| self.lambda_bar - self.half_width + 2.0 * self.half_width * i as f64 / (n - 1) as f64).collect()
    }

    /// Unnormalized bump `exp(-6 u^2) exp(1 - 1 / (1 - u^2))`, `u` the scaled
    /// energy offset. The Gaussian envelope suppresses the endpoint
    /// singularities that govern the spatial tails.
    pub fn bump(&self, lambda: f64) -> f64 {
        let u = (lambda - self.lambda_bar) / self.half_width;
        if u.abs() >= 1.0 {
            0.0
        } else {
            (-6.0 * u * u + 1.0 - 1.0 / (1.0 - u * u)).exp()
        }
    }
}

/// A synthesized packet with its fiber family and smoothness certificate.
#[derive(Clone, Debug)]
pub struct PreparedState {
    pub packet: WavePacket,
    /// `F0` of `packet` itself at the spectral samples.
    pub family: FiberFamily,
    /// Relative deviation of `family` from the requested profile.
    pub residual: f64,
    /// `|| <x>^3 phi ||`.
    pub weighted_norm3: f64,
}

/// Synthesize a unit packet on the reference space (both ends, `thresholds`
/// per end) whose support avoids `critical` by at least `window`.
pub fn build_state(grid: AxialGrid, thresholds: &[f64], critical: &[f64], window: f64, spec: &PacketSpec) -> Result<PreparedState> {
    let k = thresholds.len();
    if spec.end > 1 || spec.channel >= k {
        return Err(Error::Invalid(format!("no end {} / channel {} among {k} channels", spec.end, spec.channel)));
    }
    let (lo, hi) = (spec.lambda_bar - spec.half_width, spec.lambda_bar + spec.half_width);
    if !(spec.half_width > 0.0) || lo <= thresholds[spec.channel] {
        return Err(Error::Precondition(format!("packet support [{lo}, {hi}] must lie above the channel threshold")));
    }
    if let Some(c) = critical.iter().find(|&&c| c > lo - window && c < hi + window) {
        return Err(Error::Precondition(format!("packet support [{lo}, {hi}] touches the critical value {c} (window {window})")));
    }
    let lambdas = spec.lambdas();
    let h = 2.0 * spec.half_width / (lambdas.len() - 1) as f64;
    let mass: f64 = lambdas.iter().map(|&l| spec.bump(l).powi(2)).sum::<f64>() * h;
    let scale = mass.sqrt().recip();
    let mut ref_thresholds = thresholds.to_vec();
    ref_thresholds.extend_from_slice(thresholds);
    let target = spec.end * k + spec.channel;
    let samples = lambdas
        .iter()
        .map(|&l| {
            let open: Vec<usize> = (0..2 * k).filter(|&c| ref_thresholds[c] < l).collect();
            let mut v = FiberVector::zeros(l, open.clone());
            let p = open.iter().position(|&c| c == target).unwrap();
            let a = C64::new(spec.bump(l) * scale, 0.0);
            match spec.direction {
                Direction::Incoming => v.minus[p] = a,
                Direction::Outgoing => v.plus[p] = a,
            }
            v
        })
        .collect();
    let target_family = FiberFamily { samples };
    let raw = inverse_f0(&target_family, grid, &ref_thresholds, spec.tol)?;
    let packet = raw.scaled(C64::new(raw.norm().recip(), 0.0));
    let family = FiberFamily::sample(&packet, &lambdas, 0.0)?;
    let residual = target_family
        .samples
        .iter()
        .zip(&family.samples)
        .map(|(a, b)| a.minus.iter().chain(&a.plus).zip(b.minus.iter().chain(&b.plus)).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max))
        .fold(0.0, f64::max)
        * scale.recip();
    let weighted_norm3 = packet.weighted_norm(3.0);
    Ok(PreparedState { packet, family, residual, weighted_norm3 })
}

pub fn build_incoming_state(grid: AxialGrid, thresholds: &[f64], critical: &[f64], window: f64, spec: &PacketSpec) -> Result<PreparedState> {
    build_state(grid, thresholds, critical, window, &PacketSpec { direction: Direction::Incoming, ..spec.clone() })
}

/// Smallest and largest group velocity `2 |xi|` over the `1 - tail` momentum support.
pub fn velocity_range(phi: &WavePacket, tail: f64) -> (f64, f64) {
    let xi = crate::channels::fft_frequencies(phi.grid);
    let spectra = phi.to_momentum();
    let mut pts: Vec<(f64, f64)> = spectra
        .iter()
        .flat_map(|s| s.iter().zip(&xi).map(|(v, &q)| (2.0 * q.abs(), v.norm_sqr())))
        .filter(|p| p.1 > 0.0)
        .collect();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    let total: f64 = pts.iter().map(|p| p.1).sum();
    let (mut acc, mut vmin, mut vmax) = (0.0, f64::NAN, f64::NAN);
    for &(v, w) in &pts {
        acc += w;
        if vmin.is_nan() && acc >= 0.5 * tail * total {
            vmin = v;
        }
        if vmax.is_nan() && acc >= (1.0 - 0.5 * tail) * total {
            vmax = v;
        }
    }
    (vmin, vmax)
}

/// Radius containing all but `tail` of the mass, over all channels.
pub fn spatial_extent(phi: &WavePacket, tail: f64) -> f64 {
    let g = phi.grid;
    let mut pts: Vec<(f64, f64)> = (0..g.n)
        .map(|i| (g.x(i).abs(), (0..phi.channels()).map(|c| phi.at(c, i).norm_sqr()).sum()))
        .collect();
    pts.sort_by(|a, b| b.0.total_cmp(&a.0));
    let total: f64 = pts.iter().map(|p| p.1).sum();
    let mut acc = 0.0;
    for (x, w) in pts {
        acc += w;
        if acc > tail * total {
            return x;
        }
    }
    0.0
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn incoming_synthesis_is_left_moving_and_normalized() {
        let g = AxialGrid::spanning(60.0, 2400).unwrap();
        let s = build_incoming_state(g, &[0.0], &[0.0], 1e-3, &PacketSpec::incoming(1, 0, 2.0, 0.8)).unwrap();
        assert!((s.packet.norm() - 1.0).abs() < 1e-12);
        assert!(s.residual < 0.05, "{}", s.residual);
        assert!(s.packet.momentum_mass(true) < 1e-10);
        // The left end carries nothing.
        assert!(s.packet.channel(0).iter().all(|z| z.norm() < 1e-12));
    }

    #[test]
    fn synthesis_is_linear() {
        let g = AxialGrid::spanning(60.0, 2400).unwrap();
        let (a, b) = (PacketSpec::incoming(1, 0, 1.5, 0.3), PacketSpec::incoming(1, 0, 2.5, 0.3));
        let lambdas: Vec<f64> = (0..801).map(|i| 1.2 + 1.6 * i as f64 / 800.0).collect();
        let family = |f: &dyn Fn(f64) -> f64| FiberFamily {
            samples: lambdas
                .iter()
                .map(|&l| {
                    let mut v = FiberVector::zeros(l, vec![0, 1]);
                    v.minus[1] = C64::new(f(l), 0.0);
                    v
                })
                .collect(),
        };
        let synth = |f: &dyn Fn(f64) -> f64| inverse_f0(&family(f), g, &[0.0, 0.0], 0.5).unwrap();
        let mut sum = synth(&|l| a.bump(l));
        sum.axpy(C64::new(1.0, 0.0), &synth(&|l| b.bump(l)));
        sum.axpy(C64::new(-1.0, 0.0), &synth(&|l| a.bump(l) + b.bump(l)));
        assert!(sum.norm() < 1e-10, "{}", sum.norm());
    }

    #[test]
    fn support_must_avoid_critical_set() {
        let g = AxialGrid::spanning(30.0, 600).unwrap();
        let r = build_incoming_state(g, &[0.0, 1.0], &[0.0, 1.0], 1e-3, &PacketSpec::incoming(1, 0, 1.2, 0.3));
        assert!(matches!(r, Err(Error::Precondition(_))));
    }

    #[test]
    fn weighted_norm_is_grid_stable() {
        let spec = PacketSpec::incoming(1, 0, 2.0, 0.8);
        let g = AxialGrid::spanning(60.0, 1200).unwrap();
        let a = build_incoming_state(g, &[0.0], &[0.0], 1e-3, &spec).unwrap().weighted_norm3;
        let b = build_incoming_state(g.refined(2), &[0.0], &[0.0], 1e-3, &spec).unwrap().weighted_norm3;
        assert!((a - b).abs() <= 0.01 * b, "{a} vs {b}");
    }
}
