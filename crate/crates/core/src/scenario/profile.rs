//! Mode-space perturbation profiles: Hermitian `K x K` blocks `V_eff(y)` and
//! `A_eff(y)` built from closed-form terms or sampled tables.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{C64, ZERO};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Target {
    Potential,
    Metric,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Part {
    LongRange,
    ShortRange,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Shape {
    /// `exp(-((y - center) / width)^2)`.
    GaussianWell { center: f64, width: f64 },
    /// `<y - center>^{-power}`.
    PowerTail { center: f64, power: f64 },
    /// Indicator of `|y - center| <= width / 2`.
    Barrier { center: f64, width: f64 },
    Constant,
}

impl Shape {
    pub fn eval(&self, y: f64) -> f64 {
        match *self {
            Shape::GaussianWell { center, width } => (-((y - center) / width).powi(2)).exp(),
            Shape::PowerTail { center, power } => (1.0 + (y - center).powi(2)).powf(-power / 2.0),
            Shape::Barrier { center, width } => {
                if (y - center).abs() <= width / 2.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Shape::Constant => 1.0,
        }
    }

    fn breakpoints(&self) -> Vec<f64> {
        match *self {
            Shape::Barrier { center, width } => vec![center - width / 2.0, center + width / 2.0],
            _ => Vec::new(),
        }
    }

    /// Support radius beyond which the shape vanishes identically, if any.
    fn support(&self) -> Option<f64> {
        match *self {
            Shape::Barrier { center, width } => Some(center.abs() + width / 2.0),
            _ => None,
        }
    }
}

/// One closed-form entry; the mirrored entry `(col, row)` receives the
/// conjugate amplitude so the block stays Hermitian.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Term {
    pub target: Target,
    pub row: usize,
    pub col: usize,
    pub amplitude: f64,
    #[serde(default)]
    pub amplitude_im: f64,
    #[serde(flatten)]
    pub shape: Shape,
}

impl Term {
    pub fn potential(row: usize, col: usize, amplitude: f64, shape: Shape) -> Self {
        Self { target: Target::Potential, row, col, amplitude, amplitude_im: 0.0, shape }
    }

    pub fn metric(row: usize, col: usize, amplitude: f64, shape: Shape) -> Self {
        Self { target: Target::Metric, row, col, amplitude, amplitude_im: 0.0, shape }
    }
}

/// Samples `(x, block)` with linear interpolation and zero outside the range.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Table {
    pub target: Target,
    pub xs: Vec<f64>,
    /// Row-major `K x K` blocks, one per sample.
    pub blocks: Vec<Vec<C64>>,
}

impl Table {
    /// Read a table whose columns are `x`, then the row-major block entries
    /// with real and imaginary parts interleaved.
    pub fn from_csv(path: &Path, target: Target, k: usize) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).comment(Some(b'#')).from_path(path)?;
        let mut xs = Vec::new();
        let mut blocks = Vec::new();
        for (line, rec) in rdr.records().enumerate() {
            let rec = rec?;
            if rec.len() != 1 + 2 * k * k {
                return Err(Error::config(
                    path.display().to_string(),
                    format!("row {line}: expected {} columns, got {}", 1 + 2 * k * k, rec.len()),
                ));
            }
            let vals: Vec<f64> = rec
                .iter()
                .map(|s| s.trim().parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::config(path.display().to_string(), format!("row {line}: {e}")))?;
            xs.push(vals[0]);
            blocks.push((0..k * k).map(|e| C64::new(vals[1 + 2 * e], vals[2 + 2 * e])).collect());
        }
        if xs.len() < 2 || xs.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::config(path.display().to_string(), "x column must hold >= 2 increasing samples"));
        }
        Ok(Self { target, xs, blocks })
    }

    fn add_into(&self, y: f64, out: &mut [C64]) {
        let (first, last) = (self.xs[0], *self.xs.last().unwrap());
        if y < first || y > last {
            return;
        }
        let i = self.xs.partition_point(|&x| x <= y).clamp(1, self.xs.len() - 1);
        let t = (y - self.xs[i - 1]) / (self.xs[i] - self.xs[i - 1]);
        for (o, (a, b)) in out.iter_mut().zip(self.blocks[i - 1].iter().zip(&self.blocks[i])) {
            *o += a * (1.0 - t) + b * t;
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PartProfile {
    pub terms: Vec<Term>,
    pub tables: Vec<Table>,
}

impl PartProfile {
    pub fn is_empty(&self) -> bool {
        self.terms.is_empty() && self.tables.is_empty()
    }

    fn add_into(&self, target: Target, y: f64, k: usize, out: &mut [C64]) {
        for t in self.terms.iter().filter(|t| t.target == target) {
            let f = t.shape.eval(y);
            if f == 0.0 {
                continue;
            }
            let a = C64::new(t.amplitude, t.amplitude_im);
            out[t.row * k + t.col] += a * f;
            if t.row != t.col {
                out[t.col * k + t.row] += a.conj() * f;
            }
        }
        for tab in self.tables.iter().filter(|t| t.target == target) {
            tab.add_into(y, out);
        }
    }
}

/// The full decay-split perturbation in the transverse-mode basis.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Profile {
    pub channels: usize,
    pub long_range: PartProfile,
    pub short_range: PartProfile,
}

impl Profile {
    pub fn zero(channels: usize) -> Self {
        Self { channels, ..Default::default() }
    }

    pub fn with_term(mut self, part: Part, term: Term) -> Self {
        match part {
            Part::LongRange => self.long_range.terms.push(term),
            Part::ShortRange => self.short_range.terms.push(term),
        }
        self
    }

    pub fn part(&self, part: Part) -> &PartProfile {
        match part {
            Part::LongRange => &self.long_range,
            Part::ShortRange => &self.short_range,
        }
    }

    pub fn is_zero(&self) -> bool {
        self.long_range.is_empty() && self.short_range.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.channels;
        for part in [&self.long_range, &self.short_range] {
            for t in &part.terms {
                if t.row >= k || t.col >= k {
                    return Err(Error::Invalid(format!("term entry ({}, {}) outside {k} channels", t.row, t.col)));
                }
                if t.row == t.col && t.amplitude_im != 0.0 {
                    return Err(Error::NonHermitian {
                        block: format!("{:?}", t.target),
                        x: f64::NAN,
                        defect: t.amplitude_im.abs(),
                    });
                }
            }
            for tab in &part.tables {
                if tab.blocks.iter().any(|b| b.len() != k * k) {
                    return Err(Error::Invalid(format!("table blocks must be {k}x{k}")));
                }
            }
        }
        Ok(())
    }

    /// Block of one part and target at `y`.
    pub fn part_block(&self, part: Part, target: Target, y: f64) -> Vec<C64> {
        let k = self.channels;
        let mut out = vec![ZERO; k * k];
        self.part(part).add_into(target, y, k, &mut out);
        out
    }

    pub fn block(&self, target: Target, y: f64) -> Vec<C64> {
        let k = self.channels;
        let mut out = vec![ZERO; k * k];
        self.long_range.add_into(target, y, k, &mut out);
        self.short_range.add_into(target, y, k, &mut out);
        out
    }

    pub fn potential(&self, y: f64) -> Vec<C64> {
        self.block(Target::Potential, y)
    }

    pub fn metric(&self, y: f64) -> Vec<C64> {
        self.block(Target::Metric, y)
    }

    /// Frobenius norm of the whole perturbation `(V_eff, A_eff)` at `y`.
    pub fn coupling_norm(&self, y: f64) -> f64 {
        let v = self.potential(y);
        let a = self.metric(y);
        v.iter().chain(a.iter()).map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }

    /// Positions where some block is discontinuous.
    pub fn breakpoints(&self) -> Vec<f64> {
        let mut out: Vec<f64> = [&self.long_range, &self.short_range]
            .iter()
            .flat_map(|p| {
                p.terms
                    .iter()
                    .flat_map(|t| t.shape.breakpoints())
                    .chain(p.tables.iter().flat_map(|t| [t.xs[0], *t.xs.last().unwrap()]))
            })
            .collect();
        out.sort_by(f64::total_cmp);
        out.dedup_by(|a, b| (*a - *b).abs() < 1e-14);
        out
    }

    /// Radius beyond which the perturbation is known to vanish identically.
    pub fn exact_support(&self) -> Option<f64> {
        let mut r: f64 = 0.0;
        for p in [&self.long_range, &self.short_range] {
            for t in &p.terms {
                r = r.max(t.shape.support()?);
            }
            for t in &p.tables {
                r = r.max(t.xs[0].abs()).max(t.xs.last().unwrap().abs());
            }
        }
        Some(r)
    }

    /// Mirror image `y -> -y`.
    pub fn mirrored(&self) -> Profile {
        let flip_shape = |s: &Shape| match *s {
            Shape::GaussianWell { center, width } => Shape::GaussianWell { center: -center, width },
            Shape::PowerTail { center, power } => Shape::PowerTail { center: -center, power },
            Shape::Barrier { center, width } => Shape::Barrier { center: -center, width },
            Shape::Constant => Shape::Constant,
        };
        let flip = |p: &PartProfile| PartProfile {
            terms: p.terms.iter().map(|t| Term { shape: flip_shape(&t.shape), ..t.clone() }).collect(),
            tables: p
                .tables
                .iter()
                .map(|t| Table {
                    target: t.target,
                    xs: t.xs.iter().rev().map(|x| -x).collect(),
                    blocks: t.blocks.iter().rev().cloned().collect(),
                })
                .collect(),
        };
        Profile { channels: self.channels, long_range: flip(&self.long_range), short_range: flip(&self.short_range) }
    }
}

/// Max-norm of `B - B^*` for a row-major block.
pub fn hermitian_defect(b: &[C64], k: usize) -> f64 {
    let mut worst: f64 = 0.0;
    for r in 0..k {
        for c in 0..k {
            worst = worst.max((b[r * k + c] - b[c * k + r].conj()).norm());
        }
    }
    worst
}
