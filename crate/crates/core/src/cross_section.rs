//! Transverse Laplace-Beltrami spectra on one-dimensional compact components.
//!
//! A component is parametrized by arclength `s` of its nominal shape (circle
//! of radius `R` or periodic interval of length `L`); the metric density
//! `h(s) > 0` rescales arclength, so the operator is
//! `-h^{-1} d/ds (h^{-1} d/ds)` with measure `h ds`.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Density {
    Constant { value: f64 },
    /// `mean + amplitude * cos(2 pi harmonic u)` in the normalized parameter `u`.
    Cosine { mean: f64, amplitude: f64, harmonic: u32 },
    /// Equispaced samples over one period, trigonometrically interpolated.
    Samples { values: Vec<f64> },
}

impl Density {
    /// Density at normalized parameter `u` in `[0, 1)`.
    pub fn eval(&self, u: f64) -> f64 {
        match self {
            Density::Constant { value } => *value,
            Density::Cosine { mean, amplitude, harmonic } => {
                mean + amplitude * (2.0 * std::f64::consts::PI * *harmonic as f64 * u).cos()
            }
            Density::Samples { values } => trig_interpolate(values, u),
        }
    }
}

/// Band-limited periodic interpolation of equispaced samples.
fn trig_interpolate(values: &[f64], u: f64) -> f64 {
    let n = values.len();
    let t = u * n as f64;
    let nearest = t.round();
    if (t - nearest).abs() < 1e-14 {
        return values[(nearest as usize) % n];
    }
    // Periodic sinc (Dirichlet) kernel; even n uses the cotangent form.
    let pi = std::f64::consts::PI;
    values
        .iter()
        .enumerate()
        .map(|(j, v)| {
            let x = pi * (t - j as f64) / n as f64;
            let kernel = if n % 2 == 1 {
                (n as f64 * x).sin() / (n as f64 * x.sin())
            } else {
                (n as f64 * x).sin() / (n as f64 * x.tan())
            };
            v * kernel
        })
        .sum()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ComponentKind {
    Circle { radius: f64 },
    IntervalPeriodic { length: f64 },
    /// A discrete ring graph; its spectrum is that of the graph itself.
    Ring { length: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComponentSpec {
    #[serde(flatten)]
    pub kind: ComponentKind,
    #[serde(default = "unit_density")]
    pub density: Density,
    pub resolution: usize,
}

fn unit_density() -> Density {
    Density::Constant { value: 1.0 }
}

impl ComponentSpec {
    pub fn circle(radius: f64, resolution: usize) -> Self {
        Self { kind: ComponentKind::Circle { radius }, density: unit_density(), resolution }
    }

    pub fn interval(length: f64, resolution: usize) -> Self {
        Self { kind: ComponentKind::IntervalPeriodic { length }, density: unit_density(), resolution }
    }

    pub fn with_density(mut self, density: Density) -> Self {
        self.density = density;
        self
    }

    pub fn period(&self) -> f64 {
        match self.kind {
            ComponentKind::Circle { radius } => 2.0 * std::f64::consts::PI * radius,
            ComponentKind::IntervalPeriodic { length } | ComponentKind::Ring { length } => length,
        }
    }

    fn is_graph(&self) -> bool {
        matches!(self.kind, ComponentKind::Ring { .. })
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CrossSectionSpec {
    pub components: Vec<ComponentSpec>,
}

impl CrossSectionSpec {
    pub fn single(c: ComponentSpec) -> Self {
        Self { components: vec![c] }
    }

    pub fn validate(&self) -> Result<()> {
        if self.components.is_empty() {
            return Err(Error::Invalid("cross-section needs at least one component".into()));
        }
        for (ci, c) in self.components.iter().enumerate() {
            let p = match c.kind {
                ComponentKind::Circle { radius } => radius,
                ComponentKind::IntervalPeriodic { length } | ComponentKind::Ring { length } => length,
            };
            if !(p > 0.0 && p.is_finite()) {
                return Err(Error::Invalid(format!("component {ci}: geometric parameter must be positive, got {p}")));
            }
            if c.resolution < 8 {
                return Err(Error::Invalid(format!("component {ci}: resolution {} below 8", c.resolution)));
            }
            if let Density::Samples { values } = &c.density {
                if values.is_empty() {
                    return Err(Error::Invalid(format!("component {ci}: empty density samples")));
                }
                if let Some((node, &value)) = values.iter().enumerate().find(|(_, v)| !(**v > 0.0)) {
                    return Err(Error::NonPositiveDensity { component: ci, node, value });
                }
            }
        }
        Ok(())
    }
}

/// Discretized transverse operator of one component at one resolution.
#[derive(Clone, Debug)]
pub struct ComponentOperator {
    pub n: usize,
    /// Arclength spacing of the nominal parametrization.
    pub ds: f64,
    /// Density at the nodes (the discrete measure is `density * ds`).
    pub density: Vec<f64>,
    /// Stiffness matrix `K` (symmetric, row sums zero).
    pub stiffness: DMatrix<f64>,
}

impl ComponentOperator {
    fn assemble(spec: &ComponentSpec, component: usize, n: usize) -> Result<Self> {
        let ds = spec.period() / n as f64;
        let node: Vec<f64> = (0..n).map(|i| spec.density.eval(i as f64 / n as f64)).collect();
        let mid: Vec<f64> = (0..n).map(|i| spec.density.eval((i as f64 + 0.5) / n as f64)).collect();
        for (i, &v) in node.iter().chain(mid.iter()).enumerate() {
            if !(v > 0.0) {
                return Err(Error::NonPositiveDensity { component, node: i % n, value: v });
            }
        }
        let mut k = DMatrix::zeros(n, n);
        for i in 0..n {
            let j = (i + 1) % n;
            let c = 1.0 / (mid[i] * ds * ds);
            k[(i, i)] += c;
            k[(j, j)] += c;
            k[(i, j)] -= c;
            k[(j, i)] -= c;
        }
        Ok(Self { n, ds, density: node, stiffness: k })
    }

    /// The generator `M^{-1} K` acting on nodal values.
    pub fn generator(&self) -> DMatrix<f64> {
        let mut g = self.stiffness.clone();
        for i in 0..self.n {
            let m = self.density[i];
            g.row_mut(i).iter_mut().for_each(|v| *v /= m);
        }
        g
    }

    /// The symmetric form `M^{-1/2} K M^{-1/2}`.
    pub fn symmetric(&self) -> DMatrix<f64> {
        let s: Vec<f64> = self.density.iter().map(|m| m.sqrt()).collect();
        DMatrix::from_fn(self.n, self.n, |r, c| self.stiffness[(r, c)] / (s[r] * s[c]))
    }

    /// Ascending eigenvalues and eigenvectors orthonormal in `sum_i h_i ds |v_i|^2`.
    fn eigen(&self) -> (Vec<f64>, DMatrix<f64>) {
        let eig = SymmetricEigen::new(self.symmetric());
        let mut order: Vec<usize> = (0..self.n).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
        let vals = order.iter().map(|&i| eig.eigenvalues[i]).collect();
        let vecs = DMatrix::from_fn(self.n, self.n, |r, c| {
            eig.eigenvectors[(r, order[c])] / (self.density[r] * self.ds).sqrt()
        });
        (vals, vecs)
    }
}

/// Discretize every component at its configured resolution.
pub fn build_cross_section(spec: &CrossSectionSpec) -> Result<Vec<ComponentOperator>> {
    spec.validate()?;
    spec.components
        .iter()
        .enumerate()
        .map(|(ci, c)| ComponentOperator::assemble(c, ci, c.resolution))
        .collect()
}

#[derive(Clone, Debug, Serialize)]
pub struct ComponentSpectrum {
    pub eigenvalues: Vec<f64>,
    /// Richardson convergence estimate per eigenvalue (0 for graphs).
    pub estimates: Vec<f64>,
    /// Measured convergence order under grid doubling, when resolvable.
    pub orders: Vec<Option<f64>>,
    /// Mode vectors at the base resolution, orthonormal in the discrete measure.
    pub modes: Vec<Vec<f64>>,
    /// Largest residual `|(K - tau M) v|` over the returned base-level pairs.
    pub max_residual: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct TransverseSpectrum {
    pub components: Vec<ComponentSpectrum>,
    /// Merged thresholds, ascending with multiplicity.
    pub thresholds: Vec<f64>,
    /// Merged index to `(component, local index)`.
    pub back_map: Vec<(usize, usize)>,
}

impl TransverseSpectrum {
    /// Max-norm deviation of the Gram matrix of component `c` from identity.
    pub fn gram_defect(&self, ops: &[ComponentOperator], c: usize) -> f64 {
        let modes = &self.components[c].modes;
        let op = &ops[c];
        let mut worst: f64 = 0.0;
        for (a, va) in modes.iter().enumerate() {
            for (b, vb) in modes.iter().enumerate() {
                let g: f64 = (0..op.n).map(|i| va[i] * vb[i] * op.density[i] * op.ds).sum();
                let target = if a == b { 1.0 } else { 0.0 };
                worst = worst.max((g - target).abs());
            }
        }
        worst
    }
}

const CLUSTER_TOL: f64 = 1e-8;

/// Canonical basis of each cluster of (numerically) equal eigenvalues:
/// project unit vectors in node order, Gram-Schmidt in the discrete measure,
/// first significant entry positive.
fn canonical_modes(vals: &[f64], vecs: &DMatrix<f64>, weight: &[f64], count: usize) -> Vec<Vec<f64>> {
    let n = vecs.nrows();
    let ip = |a: &[f64], b: &[f64]| -> f64 { (0..n).map(|i| a[i] * b[i] * weight[i]).sum() };
    let mut out: Vec<Vec<f64>> = Vec::with_capacity(count);
    let mut start = 0;
    while start < count {
        let scale = 1.0 + vals[start].abs();
        let mut end = start + 1;
        while end < vals.len() && (vals[end] - vals[start]).abs() <= CLUSTER_TOL * scale {
            end += 1;
        }
        let cluster: Vec<Vec<f64>> = (start..end).map(|c| vecs.column(c).iter().copied().collect()).collect();
        let mut basis: Vec<Vec<f64>> = Vec::new();
        for unit in 0..n {
            if basis.len() == cluster.len() {
                break;
            }
            // Projection of the unit vector e_unit onto the cluster subspace.
            let mut v = vec![0.0; n];
            for c in &cluster {
                let coef = c[unit] * weight[unit];
                v.iter_mut().zip(c).for_each(|(x, y)| *x += coef * y);
            }
            for b in &basis {
                let coef = ip(b, &v);
                v.iter_mut().zip(b).for_each(|(x, y)| *x -= coef * y);
            }
            let nv = ip(&v, &v).sqrt();
            if nv < 1e-6 {
                continue;
            }
            v.iter_mut().for_each(|x| *x /= nv);
            basis.push(v);
        }
        for mut b in basis {
            let peak = b.iter().map(|x| x.abs()).fold(0.0, f64::max);
            if let Some(first) = b.iter().find(|x| x.abs() > 1e-8 * peak) {
                if *first < 0.0 {
                    b.iter_mut().for_each(|x| *x = -*x);
                }
            }
            if out.len() < count {
                out.push(b);
            }
        }
        start = end;
    }
    out
}

fn component_spectrum(spec: &ComponentSpec, component: usize, k_max: usize) -> Result<ComponentSpectrum> {
    let base = ComponentOperator::assemble(spec, component, spec.resolution)?;
    let (v0, e0) = base.eigen();
    let weight: Vec<f64> = base.density.iter().map(|h| h * base.ds).collect();
    let modes = canonical_modes(&v0, &e0, &weight, k_max);
    let max_residual = modes
        .iter()
        .zip(&v0)
        .map(|(m, &tau)| {
            let kv = &base.stiffness * nalgebra::DVector::from_column_slice(m);
            (0..base.n).map(|i| (kv[i] - tau * base.density[i] * m[i]).powi(2)).sum::<f64>().sqrt()
        })
        .fold(0.0, f64::max);
    let scale = base.stiffness.iter().map(|v| v.abs()).fold(0.0, f64::max);
    if max_residual > 1e-8 * scale {
        return Err(Error::EigenNonConvergence { max_residual });
    }
    // The constant mode is an exact kernel vector; only round-off separates it from 0.
    let clamp = |t: f64| if t.abs() < 1e-9 { 0.0 } else { t };
    if spec.is_graph() {
        return Ok(ComponentSpectrum {
            eigenvalues: v0[..k_max].iter().map(|&t| clamp(t)).collect(),
            estimates: vec![0.0; k_max],
            orders: vec![None; k_max],
            modes,
            max_residual,
        });
    }
    let levels: Vec<Vec<f64>> = std::iter::once(Ok(v0[..k_max].to_vec()))
        .chain([2usize, 4].iter().map(|&f| {
            ComponentOperator::assemble(spec, component, f * spec.resolution).map(|op| op.eigen().0[..k_max].to_vec())
        }))
        .collect::<Result<_>>()?;
    let mut eigenvalues = Vec::with_capacity(k_max);
    let mut estimates = Vec::with_capacity(k_max);
    let mut orders = Vec::with_capacity(k_max);
    for j in 0..k_max {
        let (a, b, c) = (levels[0][j], levels[1][j], levels[2][j]);
        let r1 = (4.0 * b - a) / 3.0;
        let r2 = (4.0 * c - b) / 3.0;
        let r = (16.0 * r2 - r1) / 15.0;
        eigenvalues.push(clamp(r));
        estimates.push((r - r2).abs());
        let (d1, d2) = ((a - b).abs(), (b - c).abs());
        orders.push(if d1 > 1e-13 * (1.0 + a.abs()) && d2 > 0.0 { Some((d1 / d2).log2()) } else { None });
    }
    Ok(ComponentSpectrum { eigenvalues, estimates, orders, modes, max_residual })
}

/// First `k_max` eigenpairs of every component, Richardson-extrapolated over
/// three grid levels, and the merged threshold list.
pub fn transverse_spectrum(spec: &CrossSectionSpec, k_max: usize) -> Result<TransverseSpectrum> {
    use rayon::prelude::*;
    spec.validate()?;
    if k_max == 0 {
        return Err(Error::Invalid("k_max must be at least 1".into()));
    }
    for (ci, c) in spec.components.iter().enumerate() {
        if k_max > c.resolution / 4 {
            return Err(Error::Invalid(format!(
                "component {ci}: k_max {k_max} exceeds resolution/4 = {}",
                c.resolution / 4
            )));
        }
    }
    let components: Vec<ComponentSpectrum> = spec
        .components
        .par_iter()
        .enumerate()
        .map(|(ci, c)| component_spectrum(c, ci, k_max))
        .collect::<Result<_>>()?;
    let lists: Vec<Vec<f64>> = components.iter().map(|c| c.eigenvalues.clone()).collect();
    let (thresholds, back_map) = merge_thresholds(&lists);
    Ok(TransverseSpectrum { components, thresholds, back_map })
}

/// Stable merge of ascending lists; ties keep component order.
pub fn merge_thresholds(spectra: &[Vec<f64>]) -> (Vec<f64>, Vec<(usize, usize)>) {
    let mut all: Vec<(f64, usize, usize)> = spectra
        .iter()
        .enumerate()
        .flat_map(|(c, list)| list.iter().enumerate().map(move |(k, &t)| (t, c, k)))
        .collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    (all.iter().map(|e| e.0).collect(), all.iter().map(|e| (e.1, e.2)).collect())
}

/// Inverse of the merge: per-component lists from merged values and back-map.
pub fn split_thresholds(merged: &[f64], back_map: &[(usize, usize)], components: usize) -> Vec<Vec<f64>> {
    let mut out: Vec<Vec<(usize, f64)>> = vec![Vec::new(); components];
    for (&t, &(c, k)) in merged.iter().zip(back_map) {
        out[c].push((k, t));
    }
    out.into_iter()
        .map(|mut v| {
            v.sort_by_key(|e| e.0);
            v.into_iter().map(|e| e.1).collect()
        })
        .collect()
}
