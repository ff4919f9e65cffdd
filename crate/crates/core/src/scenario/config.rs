//! TOML scenario files.
//!
//! Units: lengths in the axial/transverse coordinate, energies as inverse
//! length squared, times as length squared. Grammar:
//!
//! ```toml
//! seed = 7                                # every random start flows from here
//!
//! [cross_section]
//! channels = 3                            # K, lowest merged thresholds kept
//! components = [{ kind = "circle", radius = 1.0, resolution = 128 }]
//!
//! [realization]
//! kind = "full-line"                      # or "junction-core" (see below)
//!
//! [perturbation.long_range]
//! mu = 2.0                                # declared decay exponent
//! terms = [{ target = "potential", row = 0, col = 0, amplitude = 0.5,
//!            kind = "power-tail", center = 0.0, power = 2.0 }]
//!
//! [perturbation.short_range]
//! mu = 6.0
//! tables = [{ target = "metric", path = "a_eff.csv" }]   # relative to this file
//!
//! [cutoff]
//! kind = "smooth-step"
//!
//! [discretization]
//! x_max = 30.0
//! nodes = 1200
//! absorbing_fraction = 0.2
//! threshold_window = 1e-3
//! ```
//!
//! Stage sections (`[smatrix]`, `[lap]`, `[mourre]`, `[timedelay]`) are
//! optional and fall back to the defaults of their structs.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::profile::{PartProfile, Profile, Table, Target, Term};
use super::{AxialGrid, JunctionCore, Realization, Scenario};
use crate::cross_section::{transverse_spectrum, CrossSectionSpec};
use crate::error::{Error, Result};
use crate::linalg::C64;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CrossSectionSection {
    pub channels: usize,
    pub components: Vec<crate::cross_section::ComponentSpec>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum RealizationSection {
    #[default]
    FullLine,
    JunctionCore {
        ends: usize,
        size: usize,
        /// Row-major `[re, im]` pairs.
        core: Vec<[f64; 2]>,
        coupling: Vec<[f64; 2]>,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TableRef {
    pub target: Target,
    pub path: PathBuf,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PartSection {
    /// Declared decay exponent; absent means the part must be empty.
    pub mu: Option<f64>,
    #[serde(default)]
    pub terms: Vec<Term>,
    #[serde(default)]
    pub tables: Vec<TableRef>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PerturbationSection {
    #[serde(default)]
    pub long_range: PartSection,
    #[serde(default)]
    pub short_range: PartSection,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum CutoffSection {
    #[default]
    SmoothStep,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiscretizationSection {
    pub x_max: f64,
    pub nodes: usize,
    #[serde(default = "default_absorbing")]
    pub absorbing_fraction: f64,
    #[serde(default = "default_window")]
    pub threshold_window: f64,
}

fn default_absorbing() -> f64 {
    0.2
}

fn default_window() -> f64 {
    1e-3
}

/// Energy sweep for the scattering matrix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SmatrixStage {
    pub lambda_min: f64,
    pub lambda_max: f64,
    pub points: usize,
    /// Also run the stationary (resolvent) route and report the cross-check.
    pub cross_check: bool,
}

impl Default for SmatrixStage {
    fn default() -> Self {
        Self { lambda_min: 0.1, lambda_max: 3.0, points: 30, cross_check: false }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WeightKind {
    Position,
    Conjugate,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LapStage {
    pub lambda: f64,
    pub epsilons: Vec<f64>,
    pub s: f64,
    pub power: usize,
    pub weight: WeightKind,
    /// Axial nodes of the (smaller) probe grid.
    pub nodes: usize,
}

impl Default for LapStage {
    fn default() -> Self {
        Self {
            lambda: 0.5,
            epsilons: vec![0.1, 0.05, 0.025, 0.0125, 0.00625],
            s: 1.0,
            power: 1,
            weight: WeightKind::Position,
            nodes: 200,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MourreStage {
    pub lambda: f64,
    pub delta: f64,
    pub nodes: usize,
}

impl Default for MourreStage {
    fn default() -> Self {
        Self { lambda: 0.5, delta: 0.1, nodes: 400 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TimedelayStage {
    pub lambda_bar: f64,
    pub half_width: f64,
    pub radii: Vec<f64>,
}

impl Default for TimedelayStage {
    fn default() -> Self {
        Self { lambda_bar: 2.0, half_width: 0.8, radii: vec![5.0, 7.0, 10.0, 14.0, 20.0, 28.0, 40.0] }
    }
}

/// The whole file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    #[serde(default)]
    pub seed: u64,
    pub cross_section: CrossSectionSection,
    #[serde(default)]
    pub realization: RealizationSection,
    #[serde(default)]
    pub perturbation: PerturbationSection,
    #[serde(default)]
    pub cutoff: CutoffSection,
    pub discretization: DiscretizationSection,
    #[serde(default)]
    pub smatrix: SmatrixStage,
    #[serde(default)]
    pub lap: LapStage,
    #[serde(default)]
    pub mourre: MourreStage,
    #[serde(default)]
    pub timedelay: TimedelayStage,
}

impl ScenarioConfig {
    /// Parse TOML text; schema errors name the offending key path.
    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        let de = toml::Deserializer::parse(text).map_err(|e| Error::config(origin, e.message().to_string()))?;
        serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            Error::config(if path == "." { origin.to_string() } else { format!("{origin}: {path}") }, e.inner().message())
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text, &path.display().to_string())
    }

    /// Build the scenario; table paths resolve relative to `base`.
    pub fn build(&self, base: &Path) -> Result<Scenario> {
        let cs = CrossSectionSpec { components: self.cross_section.components.clone() };
        let k = self.cross_section.channels;
        if k == 0 {
            return Err(Error::config("cross_section.channels", "need at least one channel"));
        }
        let grid = AxialGrid::spanning(self.discretization.x_max, self.discretization.nodes)
            .map_err(|e| Error::config("discretization", e.to_string()))?;
        let spectrum = transverse_spectrum(&cs, k)?;
        let realization = match &self.realization {
            RealizationSection::FullLine => Realization::FullLine,
            RealizationSection::JunctionCore { ends, size, core, coupling } => {
                if core.len() != size * size || coupling.len() != size * ends * k {
                    return Err(Error::config(
                        "realization",
                        format!("core needs {} entries and coupling {}", size * size, size * ends * k),
                    ));
                }
                let c = |v: &[[f64; 2]]| v.iter().map(|p| C64::new(p[0], p[1])).collect();
                Realization::Junction(JunctionCore { ends: *ends, size: *size, core: c(core), coupling: c(coupling) })
            }
        };
        let part = |sec: &PartSection, name: &str| -> Result<(PartProfile, f64)> {
            let tables = sec
                .tables
                .iter()
                .map(|t| Table::from_csv(&base.join(&t.path), t.target, k))
                .collect::<Result<Vec<_>>>()?;
            let p = PartProfile { terms: sec.terms.clone(), tables };
            let mu = match sec.mu {
                Some(mu) => mu,
                None if p.is_empty() => f64::INFINITY,
                None => return Err(Error::config(format!("perturbation.{name}.mu"), "required when terms or tables are given")),
            };
            Ok((p, mu))
        };
        let (long_range, mu_long) = part(&self.perturbation.long_range, "long_range")?;
        let (short_range, mu_short) = part(&self.perturbation.short_range, "short_range")?;
        let mut s = Scenario::free(spectrum.thresholds[..k].to_vec(), grid)
            .with_profile(Profile { channels: k, long_range, short_range }, mu_long, mu_short);
        s.cross_section = cs;
        s.realization = realization;
        s.absorbing_fraction = self.discretization.absorbing_fraction;
        s.threshold_window = self.discretization.threshold_window;
        s.validate()?;
        Ok(s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const FREE: &str = r#"
        seed = 3
        [cross_section]
        channels = 3
        components = [{ kind = "circle", radius = 1.0, resolution = 64 }]
        [discretization]
        x_max = 20.0
        nodes = 200
    "#;

    #[test]
    fn free_config_builds() {
        let c = ScenarioConfig::parse(FREE, "free.toml").unwrap();
        assert_eq!(c.seed, 3);
        let s = c.build(Path::new(".")).unwrap();
        assert_eq!(s.channels(), 3);
        assert!(s.profile.is_zero());
        assert!((s.thresholds[1] - 1.0).abs() < 1e-6);
        assert_eq!(s.mu(), f64::INFINITY);
    }

    #[test]
    fn perturbation_terms_parse() {
        let text = format!(
            "{FREE}\n[perturbation.short_range]\nmu = 6.0\nterms = [{{ target = \"potential\", row = 0, col = 1, amplitude = 0.3, kind = \"gaussian-well\", center = 0.0, width = 1.0 }}]\n"
        );
        let s = ScenarioConfig::parse(&text, "x").unwrap().build(Path::new(".")).unwrap();
        assert_eq!(s.mu_short, 6.0);
        let v = s.profile.potential(0.0);
        assert!((v[1].re - 0.3).abs() < 1e-15 && (v[3].re - 0.3).abs() < 1e-15);
    }

    #[test]
    fn schema_errors_name_the_key() {
        let bad = FREE.replace("nodes = 200", "nodes = \"many\"");
        let e = ScenarioConfig::parse(&bad, "f.toml").unwrap_err().to_string();
        assert!(e.contains("discretization.nodes"), "{e}");
        let unknown = format!("{FREE}\n[perturbation.short_range]\nmuu = 1.0\n");
        let e = ScenarioConfig::parse(&unknown, "f.toml").unwrap_err().to_string();
        assert!(e.contains("perturbation.short_range"), "{e}");
    }

    #[test]
    fn missing_mu_rejected() {
        let text = format!(
            "{FREE}\n[perturbation.long_range]\nterms = [{{ target = \"potential\", row = 0, col = 0, amplitude = 1.0, kind = \"power-tail\", center = 0.0, power = 2.0 }}]\n"
        );
        let e = ScenarioConfig::parse(&text, "x").unwrap().build(Path::new(".")).unwrap_err();
        assert!(e.to_string().contains("long_range.mu"), "{e}");
    }

    #[test]
    fn csv_table_relative_to_config() {
        let dir = std::env::temp_dir().join(format!("cylscat-cfg-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let mut csv = String::from("x");
        for e in 0..9 {
            csv.push_str(&format!(",b{e}re,b{e}im"));
        }
        csv.push('\n');
        for x in [-2.0, 0.0, 2.0] {
            let a: f64 = if x == 0.0 { 1.0 } else { 0.0 };
            csv.push_str(&format!("{x},{a},0,0,0,0,0,0,0,0,0,0,0,0,0,0,0,0,0\n"));
        }
        std::fs::write(dir.join("v.csv"), csv).unwrap();
        let text = format!("{FREE}\n[perturbation.short_range]\nmu = 8.0\ntables = [{{ target = \"potential\", path = \"v.csv\" }}]\n");
        let s = ScenarioConfig::parse(&text, "x").unwrap().build(&dir).unwrap();
        assert!((s.profile.potential(1.0)[0].re - 0.5).abs() < 1e-15);
        std::fs::remove_dir_all(&dir).ok();
    }
}
