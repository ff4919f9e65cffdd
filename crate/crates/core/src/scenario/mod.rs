//! Problem description: ends, decay-split perturbation, cutoff, lattice and
//! the identification operator `J` between the reference cylinder and the
//! manifold.
//!
//! The physical axial lattice is `y_i = (i - (n - 1) / 2) dx` with `n` even,
//! so lattice midpoints sit at integer multiples of `dx`. The reference space
//! carries two ends (`L`, `R`), each a full line `x` on the same nodes with
//! the same `K` channels; reference channel `e * K + j` is channel `j` of end
//! `e` (0 = `L`, 1 = `R`). End `R` is glued along `y = x`, end `L` along
//! `y = -x`.

pub mod config;
pub mod profile;

use nalgebra::DMatrix;
use serde::Serialize;

pub use profile::{Part, PartProfile, Profile, Shape, Table, Target, Term};

use crate::channels::WavePacket;
use crate::cross_section::{transverse_spectrum, CrossSectionSpec};
use crate::error::{Error, Result};
use crate::linalg::{decay_power, C64, ZERO};

/// Smooth step `s(t) = e^{-1/t} / (e^{-1/t} + e^{-1/(1-t)})` applied at `t = x - 1`:
/// 0 on `(-inf, 1]`, 1 on `[2, inf)`.
pub fn cutoff_j(x: f64) -> f64 {
    let t = x - 1.0;
    if t <= 0.0 {
        return 0.0;
    }
    if t >= 1.0 {
        return 1.0;
    }
    let a = (-1.0 / t).exp();
    let b = (-1.0 / (1.0 - t)).exp();
    a / (a + b)
}

/// Symmetric uniform axial lattice.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct AxialGrid {
    pub n: usize,
    pub dx: f64,
}

impl AxialGrid {
    pub fn new(n: usize, dx: f64) -> Result<Self> {
        if n < 4 || n % 2 != 0 || !(dx > 0.0) {
            return Err(Error::Invalid(format!("axial grid needs even n >= 4 and dx > 0, got n = {n}, dx = {dx}")));
        }
        Ok(Self { n, dx })
    }

    /// Grid with `n` nodes spanning `(-x_max, x_max)`.
    pub fn spanning(x_max: f64, n: usize) -> Result<Self> {
        Self::new(n, 2.0 * x_max / n as f64)
    }

    pub fn x_max(&self) -> f64 {
        self.n as f64 * self.dx / 2.0
    }

    pub fn x(&self, i: usize) -> f64 {
        (i as f64 - (self.n as f64 - 1.0) / 2.0) * self.dx
    }

    /// Position of the midpoint between nodes `i` and `i + 1` (`i = -1..n-1`).
    pub fn mid(&self, i: isize) -> f64 {
        (i as f64 + 1.0 - self.n as f64 / 2.0) * self.dx
    }

    pub fn xs(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.x(i)).collect()
    }

    /// Same extent, `factor` times finer.
    pub fn refined(&self, factor: usize) -> AxialGrid {
        AxialGrid { n: self.n * factor, dx: self.dx / factor as f64 }
    }

    pub fn same_as(&self, other: &AxialGrid) -> bool {
        self.n == other.n && (self.dx - other.dx).abs() <= 1e-14 * self.dx
    }
}

/// A finite Hermitian core coupling `ends` half-infinite ends.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct JunctionCore {
    pub ends: usize,
    /// Core block dimension.
    pub size: usize,
    /// Row-major Hermitian `size x size` core matrix.
    pub core: Vec<C64>,
    /// Row-major `size x (ends * K)` coupling from the core to the first node of each end.
    pub coupling: Vec<C64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub enum Realization {
    FullLine,
    Junction(JunctionCore),
}

#[derive(Clone, Debug, Serialize)]
pub struct Scenario {
    pub cross_section: CrossSectionSpec,
    pub realization: Realization,
    /// Channel thresholds of each end, ascending.
    pub thresholds: Vec<f64>,
    pub profile: Profile,
    pub mu_long: f64,
    pub mu_short: f64,
    pub grid: AxialGrid,
    /// Fraction of the axial half-extent treated as the outer layer.
    pub absorbing_fraction: f64,
    /// Threshold exclusion window relative to the local threshold gap.
    pub threshold_window: f64,
}

impl Scenario {
    /// Unperturbed full-line cylinder with the given channel thresholds.
    pub fn free(thresholds: Vec<f64>, grid: AxialGrid) -> Self {
        let k = thresholds.len();
        Self {
            cross_section: CrossSectionSpec::default(),
            realization: Realization::FullLine,
            thresholds,
            profile: Profile::zero(k),
            mu_long: f64::INFINITY,
            mu_short: f64::INFINITY,
            grid,
            absorbing_fraction: 0.2,
            threshold_window: 1e-3,
        }
    }

    /// Full-line cylinder whose channels are the first `k` merged thresholds of `cs`.
    pub fn from_cross_section(cs: CrossSectionSpec, k: usize, grid: AxialGrid) -> Result<Self> {
        let ts = transverse_spectrum(&cs, k)?;
        let mut s = Self::free(ts.thresholds[..k].to_vec(), grid);
        s.cross_section = cs;
        Ok(s)
    }

    pub fn with_profile(mut self, profile: Profile, mu_long: f64, mu_short: f64) -> Self {
        self.profile = profile;
        self.mu_long = mu_long;
        self.mu_short = mu_short;
        self
    }

    pub fn with_grid(mut self, grid: AxialGrid) -> Self {
        self.grid = grid;
        self
    }

    pub fn channels(&self) -> usize {
        self.thresholds.len()
    }

    /// Effective decay exponent: parts without terms impose no constraint.
    pub fn mu(&self) -> f64 {
        let l = if self.profile.long_range.is_empty() { f64::INFINITY } else { self.mu_long };
        let s = if self.profile.short_range.is_empty() { f64::INFINITY } else { self.mu_short };
        l.min(s)
    }

    /// Distinct thresholds, ascending.
    pub fn distinct_thresholds(&self) -> Vec<f64> {
        let mut t = self.thresholds.clone();
        t.dedup_by(|a, b| (*a - *b).abs() <= 1e-12 * (1.0 + b.abs()));
        t
    }

    /// The threshold `lambda` is too close to, with its exclusion half-width.
    pub fn threshold_proximity(&self, lambda: f64) -> Option<(f64, f64)> {
        crate::channels::threshold_proximity(&self.thresholds, lambda, self.threshold_window)
    }

    pub fn check_energy(&self, lambda: f64) -> Result<()> {
        match self.threshold_proximity(lambda) {
            Some((threshold, window)) => Err(Error::ThresholdProximity { lambda, threshold, window }),
            None => Ok(()),
        }
    }

    /// Hermiticity of every sampled block and ellipticity of `I + A_eff`.
    pub fn validate(&self) -> Result<()> {
        self.profile.validate()?;
        if self.profile.channels != self.channels() {
            return Err(Error::Invalid(format!(
                "profile has {} channels, scenario {}",
                self.profile.channels,
                self.channels()
            )));
        }
        if self.thresholds.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::Invalid("thresholds must be ascending".into()));
        }
        let k = self.channels();
        let g = &self.grid;
        let samples = (0..g.n).map(|i| g.x(i)).chain((-1..g.n as isize).map(|i| g.mid(i)));
        for y in samples {
            for (target, name) in [(Target::Potential, "V_eff"), (Target::Metric, "A_eff")] {
                let b = self.profile.block(target, y);
                let defect = profile::hermitian_defect(&b, k);
                if defect > 1e-12 {
                    return Err(Error::NonHermitian { block: name.into(), x: y, defect });
                }
            }
            let p = self.profile.metric(y);
            let m = DMatrix::from_fn(k, k, |r, c| p[r * k + c] + if r == c { 1.0 } else { 0.0 });
            let min_eig = m.symmetric_eigen().eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
            if min_eig <= 0.0 {
                return Err(Error::Ellipticity { x: y, min_eig });
            }
        }
        Ok(())
    }

    fn check_reference(&self, phi: &WavePacket) -> Result<()> {
        if !phi.grid.same_as(&self.grid) || phi.channels() != 2 * self.channels() {
            return Err(Error::GridMismatch(format!(
                "reference state on {} nodes x {} channels, scenario needs {} x {}",
                phi.grid.n,
                phi.channels(),
                self.grid.n,
                2 * self.channels()
            )));
        }
        Ok(())
    }

    /// `J`: reference state (two ends) to a node-major state on the manifold.
    pub fn apply_j(&self, phi: &WavePacket) -> Result<Vec<C64>> {
        self.check_reference(phi)?;
        let (n, k) = (self.grid.n, self.channels());
        let mut out = vec![ZERO; n * k];
        for i in 0..n {
            let (wr, wl) = (cutoff_j(self.grid.x(i)), cutoff_j(-self.grid.x(i)));
            for j in 0..k {
                out[i * k + j] = phi.at(k + j, i) * wr + phi.at(j, n - 1 - i) * wl;
            }
        }
        Ok(out)
    }

    /// `J^*`: node-major state on the manifold to a reference state.
    pub fn apply_j_star(&self, psi: &[C64]) -> Result<WavePacket> {
        let (n, k) = (self.grid.n, self.channels());
        if psi.len() != n * k {
            return Err(Error::GridMismatch(format!("state has {} entries, lattice needs {}", psi.len(), n * k)));
        }
        let mut thresholds = self.thresholds.clone();
        thresholds.extend_from_slice(&self.thresholds);
        let mut out = WavePacket::zeros(self.grid, thresholds);
        for m in 0..n {
            let w = cutoff_j(self.grid.x(m));
            if w == 0.0 {
                continue;
            }
            for j in 0..k {
                *out.at_mut(k + j, m) = psi[m * k + j] * w;
                *out.at_mut(j, m) = psi[(n - 1 - m) * k + j] * w;
            }
        }
        Ok(out)
    }

    /// Fit the tail decay of every block and derivative order.
    pub fn validate_decay(&self) -> Result<DecayReport> {
        validate_decay(self)
    }
}

#[derive(Clone, Debug, Serialize)]
pub enum DecayFit {
    /// All tail samples vanish.
    ExactlyZero,
    /// Non-zero somewhere in the tail but underflows before enough samples.
    FasterThanAnyPower,
    Power(f64),
}

#[derive(Clone, Debug, Serialize)]
pub struct DecayEntry {
    pub part: Part,
    pub target: Target,
    pub order: usize,
    pub fit: DecayFit,
    pub required: f64,
    pub pass: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct DecayReport {
    pub entries: Vec<DecayEntry>,
    pub tail_samples: usize,
    pub mu: f64,
    pub admissible_for_scattering: bool,
    pub admissible_for_time_delay: bool,
}

impl DecayReport {
    pub fn entry(&self, part: Part, target: Target, order: usize) -> Option<&DecayEntry> {
        self.entries.iter().find(|e| e.part == part && e.target == target && e.order == order)
    }

    pub fn all_pass(&self) -> bool {
        self.entries.iter().all(|e| e.pass)
    }
}

const FIT_SLACK: f64 = 0.1;

fn validate_decay(s: &Scenario) -> Result<DecayReport> {
    s.validate()?;
    let g = &s.grid;
    let x_max = g.x_max();
    let tail: Vec<f64> = (0..g.n).map(|i| g.x(i)).filter(|y| y.abs() >= x_max / 2.0).collect();
    // Both ends carry a tail; count the samples of one side.
    let per_side = tail.iter().filter(|&&y| y > 0.0).count();
    if per_side < 8 {
        return Err(Error::TooFewTailSamples { found: per_side, required: 8 });
    }
    let h = 1e-3 * g.dx.min(1.0);
    let fro = |b: &[C64]| b.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    let mut entries = Vec::new();
    for part in [Part::LongRange, Part::ShortRange] {
        if s.profile.part(part).is_empty() {
            continue;
        }
        let mu = match part {
            Part::LongRange => s.mu_long,
            Part::ShortRange => s.mu_short,
        };
        for target in [Target::Potential, Target::Metric] {
            let f = |y: f64| s.profile.part_block(part, target, y);
            for order in 0..=2usize {
                let norm_at = |y: f64| -> f64 {
                    match order {
                        0 => fro(&f(y)),
                        1 => {
                            let (a, b) = (f(y + h), f(y - h));
                            fro(&a.iter().zip(&b).map(|(p, q)| (p - q) / (2.0 * h)).collect::<Vec<_>>())
                        }
                        _ => {
                            let (a, b, c) = (f(y + h), f(y), f(y - h));
                            fro(&a
                                .iter()
                                .zip(&b)
                                .zip(&c)
                                .map(|((p, q), r)| (p - q * 2.0 + r) / (h * h))
                                .collect::<Vec<_>>())
                        }
                    }
                };
                // Finite differences lose roughly `eps / h^order` of the block scale.
                let scale = tail.iter().map(|&y| fro(&f(y))).fold(0.0, f64::max).max(1e-300);
                let floor = match order {
                    0 => 0.0,
                    1 => 1e-13 * scale / h,
                    _ => 1e-13 * scale / (h * h),
                };
                let samples: Vec<(f64, f64)> = tail
                    .iter()
                    .map(|&y| ((1.0 + y * y).sqrt(), norm_at(y)))
                    .filter(|&(_, v)| v > floor && v > 1e-300)
                    .collect();
                let required = match part {
                    Part::LongRange => mu + order as f64,
                    Part::ShortRange => mu,
                };
                let fit = if samples.is_empty() {
                    DecayFit::ExactlyZero
                } else if samples.len() < 8 {
                    DecayFit::FasterThanAnyPower
                } else {
                    let (xs, ys): (Vec<f64>, Vec<f64>) = samples.into_iter().unzip();
                    DecayFit::Power(decay_power(&xs, &ys))
                };
                let pass = match fit {
                    DecayFit::Power(p) => p >= required - FIT_SLACK,
                    _ => true,
                };
                entries.push(DecayEntry { part, target, order, fit, required, pass });
            }
        }
    }
    let mu = s.mu();
    let ok = entries.iter().all(|e| e.pass);
    Ok(DecayReport {
        entries,
        tail_samples: per_side,
        mu,
        admissible_for_scattering: ok && mu > 1.0,
        admissible_for_time_delay: ok && mu > 4.0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn grid() -> AxialGrid {
        AxialGrid::spanning(10.0, 200).unwrap()
    }

    #[test]
    fn cutoff_values() {
        assert_eq!(cutoff_j(0.5), 0.0);
        assert_eq!(cutoff_j(1.0), 0.0);
        assert_eq!(cutoff_j(3.0), 1.0);
        assert_eq!(cutoff_j(2.0), 1.0);
        assert!((cutoff_j(1.5) - 0.5).abs() < 1e-15);
        let mut prev = 0.0;
        for i in 0..=1000 {
            let v = cutoff_j(0.5 + 2.0 * i as f64 / 1000.0);
            assert!((0.0..=1.0).contains(&v) && v >= prev);
            prev = v;
        }
    }

    #[test]
    fn grid_midpoints_are_integer_multiples() {
        let g = AxialGrid::spanning(4.0, 16).unwrap();
        assert!((g.mid(7) - 0.0).abs() < 1e-15);
        assert!((g.mid(8) - 0.5).abs() < 1e-15);
        assert!((g.x(0) + 3.75).abs() < 1e-15);
        assert!(AxialGrid::new(15, 0.1).is_err());
    }

    fn packet(g: AxialGrid, k: usize, mut f: impl FnMut(usize, f64) -> C64) -> WavePacket {
        let mut p = WavePacket::zeros(g, vec![0.0; 2 * k]);
        for c in 0..2 * k {
            for i in 0..g.n {
                *p.at_mut(c, i) = f(c, g.x(i));
            }
        }
        p
    }

    #[test]
    fn j_is_isometric_far_out_and_zero_near_core() {
        let s = Scenario::free(vec![0.0, 1.0], grid());
        let far = packet(s.grid, 2, |c, x| {
            if (3.0..=5.0).contains(&x) {
                C64::new((x * (c + 1) as f64).sin(), 0.3 * x)
            } else {
                ZERO
            }
        });
        let j = s.apply_j(&far).unwrap();
        let ratio = crate::linalg::norm(&j) * s.grid.dx.sqrt() / far.norm();
        assert!((ratio - 1.0).abs() < 1e-10);
        let near = packet(s.grid, 2, |_, x| if x <= 0.0 { C64::new(1.0, x) } else { ZERO });
        assert!(crate::linalg::max_abs(&s.apply_j(&near).unwrap()) == 0.0);
    }

    #[test]
    fn j_adjointness() {
        let s = Scenario::free(vec![0.0, 1.0], grid());
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let phi = packet(s.grid, 2, |_, _| C64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5));
        let psi: Vec<C64> = (0..s.grid.n * 2).map(|_| C64::new(rng.random::<f64>(), rng.random::<f64>())).collect();
        let lhs = crate::linalg::dot(&s.apply_j(&phi).unwrap(), &psi) * s.grid.dx;
        let rhs = phi.inner(&s.apply_j_star(&psi).unwrap());
        assert!((lhs - rhs).norm() <= 1e-12 * lhs.norm().max(1.0));
    }

    #[test]
    fn jjstar_and_jstarj_act_locally() {
        let s = Scenario::free(vec![0.0], grid());
        let g = s.grid;
        // (JJ* - 1) psi = 0 for psi supported in |y| >= 2 + dx.
        let psi: Vec<C64> = g.xs().iter().map(|&y| if y.abs() >= 2.0 + g.dx { C64::new(y, 1.0) } else { ZERO }).collect();
        let back = s.apply_j(&s.apply_j_star(&psi).unwrap()).unwrap();
        assert!(back.iter().zip(&psi).all(|(a, b)| (a - b).norm() < 1e-15));
        // (J*J - 1) = (j^2 - 1) pointwise.
        let phi = packet(g, 1, |c, x| C64::new(1.0 + c as f64, x));
        let jj = s.apply_j_star(&s.apply_j(&phi).unwrap()).unwrap();
        for c in 0..2 {
            for i in 0..g.n {
                let w = cutoff_j(g.x(i));
                assert!((jj.at(c, i) - phi.at(c, i) * w * w).norm() < 1e-14);
            }
        }
    }

    #[test]
    fn j_has_unit_norm() {
        let s = Scenario::free(vec![0.0], AxialGrid::spanning(5.0, 40).unwrap());
        let g = s.grid;
        // J is diagonal up to the end fold; its singular values are the cutoff values.
        let sv = (0..g.n).map(|i| cutoff_j(g.x(i))).fold(0.0, f64::max);
        assert!((sv - 1.0).abs() < 1e-8);
        let thresholds = vec![0.0; 2];
        let mut worst: f64 = 0.0;
        for c in 0..2 {
            for i in 0..g.n {
                let mut e = WavePacket::zeros(g, thresholds.clone());
                *e.at_mut(c, i) = C64::new(1.0, 0.0);
                worst = worst.max(crate::linalg::norm(&s.apply_j(&e).unwrap()));
            }
        }
        assert!((worst - 1.0).abs() < 1e-8);
    }

    #[test]
    fn grid_mismatch_rejected() {
        let s = Scenario::free(vec![0.0], grid());
        let other = WavePacket::zeros(AxialGrid::spanning(10.0, 100).unwrap(), vec![0.0, 0.0]);
        assert!(matches!(s.apply_j(&other), Err(Error::GridMismatch(_))));
    }

    #[test]
    fn decay_of_inverse_square_tail() {
        let p = Profile::zero(1).with_term(Part::ShortRange, Term::potential(0, 0, 0.7, Shape::PowerTail { center: 0.0, power: 2.0 }));
        let s = Scenario::free(vec![0.0], AxialGrid::spanning(40.0, 400).unwrap()).with_profile(p, f64::INFINITY, 2.0);
        let r = s.validate_decay().unwrap();
        match r.entry(Part::ShortRange, Target::Potential, 0).unwrap().fit {
            DecayFit::Power(p) => assert!((p - 2.0).abs() <= 0.1, "{p}"),
            ref f => panic!("{f:?}"),
        }
        assert!(r.all_pass());
        assert!(r.admissible_for_scattering && !r.admissible_for_time_delay);
    }

    #[test]
    fn decay_of_zero_and_constant() {
        let s = Scenario::free(vec![0.0], grid());
        let r = s.validate_decay().unwrap();
        assert!(r.entries.is_empty() && r.admissible_for_time_delay && r.mu.is_infinite());
        let p = Profile::zero(1).with_term(Part::LongRange, Term::metric(0, 0, 0.5, Shape::Constant));
        let s = Scenario::free(vec![0.0], grid()).with_profile(p, 0.5, f64::INFINITY);
        let r = s.validate_decay().unwrap();
        let e = r.entry(Part::LongRange, Target::Metric, 0).unwrap();
        match e.fit {
            DecayFit::Power(p) => assert!(p.abs() < 1e-9),
            ref f => panic!("{f:?}"),
        }
        assert!(!e.pass);
        assert!(matches!(r.entry(Part::LongRange, Target::Metric, 1).unwrap().fit, DecayFit::ExactlyZero));
    }

    #[test]
    fn decay_needs_tail_samples() {
        let s = Scenario::free(vec![0.0], AxialGrid::spanning(10.0, 20).unwrap());
        assert!(matches!(s.validate_decay(), Err(Error::TooFewTailSamples { .. })));
    }

    #[test]
    fn ellipticity_violation_rejected() {
        let p = Profile::zero(1).with_term(Part::ShortRange, Term::metric(0, 0, -1.5, Shape::GaussianWell { center: 0.0, width: 1.0 }));
        let s = Scenario::free(vec![0.0], grid()).with_profile(p, 0.0, 6.0);
        assert!(matches!(s.validate(), Err(Error::Ellipticity { .. })));
    }

    #[test]
    fn threshold_window() {
        let s = Scenario::free(vec![0.0, 1.0, 1.0, 4.0], grid());
        assert!(s.check_energy(0.5).is_ok());
        assert!(matches!(s.check_energy(1.0), Err(Error::ThresholdProximity { .. })));
        assert!(s.check_energy(1.0 + 2e-3).is_ok());
    }
}
