//! Pipeline stages: each computes, writes its CSVs and reports a status.

use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use cylscat::cross_section::transverse_spectrum;
use cylscat::hamiltonian::lap::{dense_norm, ProbeSettings};
use cylscat::hamiltonian::mourre::mourre_scenario;
use cylscat::hamiltonian::{assemble_full, conjugate_operator, detect_eigenvalues, weighted_resolvent_probe, ProbeSide, Weight};
use cylscat::scattering::{smatrix, Method, SMatrix, StationarySettings};
use cylscat::scenario::config::{ScenarioConfig, WeightKind};
use cylscat::scenario::{AxialGrid, Scenario};
use cylscat::timedelay::{scattering_state, symmetrized_time_delay, PacketSpec, TimeDelayReport, TimeDelaySettings, WaveSettings, MU_TIME_DELAY};
use cylscat::Error;

use crate::output::{OutDir, Status};

/// Largest tolerated `||S* S - I||` on the sweep.
pub const UNITARITY_TOL: f64 = 1e-6;
/// Largest tolerated difference between the two S-matrix routes.
pub const CROSS_CHECK_TOL: f64 = 1e-4;
/// Largest tolerated drift of `||Omega(t0) phi||` from `||phi||`.
pub const NORM_TOL: f64 = 1e-4;
/// Largest tolerated relative gap between the time delay and its spectral value.
pub const EW_TOL: f64 = 0.05;
/// Absolute floor for that gap, relative to the free sojourn at the largest
/// radius; a relative gap is meaningless when the delay itself vanishes.
pub const EW_FLOOR: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, clap::ValueEnum)]
pub enum Stage {
    Spectrum,
    Smatrix,
    Lap,
    Mourre,
    Propagate,
    Timedelay,
}

impl Stage {
    /// Dependency order.
    pub const ALL: [Stage; 6] = [Stage::Spectrum, Stage::Smatrix, Stage::Lap, Stage::Mourre, Stage::Propagate, Stage::Timedelay];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Spectrum => "spectrum",
            Stage::Smatrix => "smatrix",
            Stage::Lap => "lap",
            Stage::Mourre => "mourre",
            Stage::Propagate => "propagate",
            Stage::Timedelay => "timedelay",
        }
    }
}

/// S-matrix route(s) of the smatrix stage.
#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum MethodChoice {
    Ode,
    Stationary,
    Both,
}

/// Why a stage did not pass; each kind maps to one exit code.
#[derive(Debug)]
pub enum Failure {
    Config(String),
    Certificate(String),
    Prerequisite(String),
    Internal(String),
}

impl Failure {
    pub fn exit_code(&self) -> u8 {
        match self {
            Failure::Internal(_) => 1,
            Failure::Config(_) => 2,
            Failure::Certificate(_) => 3,
            Failure::Prerequisite(_) => 4,
        }
    }

    pub fn status(&self) -> Status {
        match self {
            Failure::Certificate(_) => Status::Fail,
            Failure::Prerequisite(_) => Status::Refused,
            Failure::Config(_) | Failure::Internal(_) => Status::Error,
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Config(m) => write!(f, "config error: {m}"),
            Failure::Certificate(m) => write!(f, "certificate failed: {m}"),
            Failure::Prerequisite(m) => write!(f, "prerequisite missing: {m}"),
            Failure::Internal(m) => f.write_str(m),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let m = e.to_string();
        match e {
            Error::Config { .. }
            | Error::Invalid(_)
            | Error::Precondition(_)
            | Error::NonPositiveDensity { .. }
            | Error::NonHermitian { .. }
            | Error::Ellipticity { .. }
            | Error::ThresholdProximity { .. }
            | Error::StraddlesThreshold { .. } => Failure::Config(m),
            Error::NotAdmissible(_) => Failure::Prerequisite(m),
            Error::Io(_) | Error::Csv(_) => Failure::Internal(m),
            _ => Failure::Certificate(m),
        }
    }
}

/// Outcome of one stage, with the files it wrote either way.
pub struct Outcome {
    pub result: Result<String, Failure>,
    pub files: Vec<String>,
}

impl Outcome {
    fn pass(message: String, files: Vec<String>) -> Self {
        Self { result: Ok(message), files }
    }

    /// Passes unless `certified` is false.
    fn certify(certified: bool, message: String, files: Vec<String>) -> Self {
        Self { result: if certified { Ok(message) } else { Err(Failure::Certificate(message)) }, files }
    }
}

impl From<Failure> for Outcome {
    fn from(f: Failure) -> Self {
        Self { result: Err(f), files: Vec::new() }
    }
}

impl From<Error> for Outcome {
    fn from(e: Error) -> Self {
        Failure::from(e).into()
    }
}

impl From<anyhow::Error> for Outcome {
    fn from(e: anyhow::Error) -> Self {
        Failure::Internal(format!("{e:#}")).into()
    }
}

type Staged = Result<Outcome, Outcome>;

pub struct Context {
    pub cfg: ScenarioConfig,
    pub scenario: Scenario,
    pub out: OutDir,
    pub seed: u64,
    pub force: bool,
    pub method: Option<MethodChoice>,
}

impl Context {
    pub fn run(&self, stage: Stage) -> Outcome {
        let r = match stage {
            Stage::Spectrum => self.spectrum(),
            Stage::Smatrix => self.smatrix(),
            Stage::Lap => self.lap(),
            Stage::Mourre => self.mourre(),
            Stage::Propagate => self.propagate(),
            Stage::Timedelay => self.timedelay(),
        };
        r.unwrap_or_else(|o| o)
    }

    /// Energies of the S-matrix sweep.
    pub fn sweep(&self) -> Vec<f64> {
        let st = &self.cfg.smatrix;
        match st.points {
            0 => Vec::new(),
            1 => vec![st.lambda_min],
            n => (0..n).map(|i| st.lambda_min + (st.lambda_max - st.lambda_min) * i as f64 / (n - 1) as f64).collect(),
        }
    }

    /// The scenario on `nodes` axial nodes of the configured spacing.
    fn with_nodes(&self, nodes: usize) -> Result<Scenario, Outcome> {
        let g = AxialGrid::new(nodes, self.scenario.grid.dx)?;
        Ok(self.scenario.clone().with_grid(g))
    }

    fn spectrum(&self) -> Staged {
        let s = &self.scenario;
        let k = s.channels();
        let ts = transverse_spectrum(&s.cross_section, k)?;
        let rows: Vec<ThresholdRow> = ts
            .back_map
            .iter()
            .enumerate()
            .take(k)
            .map(|(m, &(c, j))| ThresholdRow {
                component: c,
                local_index: j,
                merged_index: m,
                tau: ts.thresholds[m],
                convergence_estimate: ts.components[c].estimates.get(j).copied().unwrap_or(0.0),
            })
            .collect();
        let mut files = vec![self.out.write_csv("spectrum.csv", &rows)?];
        // Bound states lie below the bottom threshold and above it minus the
        // largest coupling.
        let h = assemble_full(s)?;
        let bottom = s.thresholds[0];
        let depth = s.grid.xs().iter().map(|&x| s.profile.coupling_norm(x)).fold(0.0, f64::max);
        let window = s.threshold_window.max(1e-3);
        let cs = detect_eigenvalues(&h, bottom - depth - 1.0, bottom - window, &s.thresholds, 0.2, 0.01, window)?;
        let same = |a: f64, b: f64| (a - b).abs() <= 1e-12 * (1.0 + b.abs());
        let mut critical: Vec<CriticalRow> = s
            .distinct_thresholds()
            .into_iter()
            .map(|t| CriticalRow { value: t, kind: "threshold".into(), multiplicity: s.thresholds.iter().filter(|&&u| same(u, t)).count() })
            .collect();
        critical.extend(cs.eigenvalues.iter().map(|e| CriticalRow { value: e.value, kind: "eigenvalue".into(), multiplicity: e.multiplicity }));
        critical.sort_by(|a, b| a.value.total_cmp(&b.value));
        files.push(self.out.write_csv("critical.csv", &critical)?);
        let message = format!("{k} thresholds up to {:.6}, {} bound state(s) below {bottom:.6}", s.thresholds[k - 1], cs.eigenvalues.len());
        Ok(Outcome::pass(message, files))
    }

    fn method(&self) -> MethodChoice {
        self.method.unwrap_or(if self.cfg.smatrix.cross_check { MethodChoice::Both } else { MethodChoice::Ode })
    }

    fn smatrix(&self) -> Staged {
        let s = &self.scenario;
        let lambdas = self.sweep();
        if lambdas.is_empty() {
            return Err(Failure::Config("smatrix.points must be positive".into()).into());
        }
        for &l in &lambdas {
            s.check_energy(l)?;
        }
        let sweep = |m: Method| lambdas.par_iter().map(|&l| smatrix(s, l, &m)).collect::<Result<Vec<SMatrix>, Error>>();
        let stationary = || Method::Stationary(StationarySettings::default());
        let (primary, secondary) = match self.method() {
            MethodChoice::Ode => (sweep(Method::Ode)?, None),
            MethodChoice::Stationary => (sweep(stationary())?, None),
            MethodChoice::Both => (sweep(Method::Ode)?, Some(sweep(stationary())?)),
        };
        let mut rows: Vec<_> = primary.iter().flat_map(SMatrix::rows).collect();
        rows.extend(secondary.iter().flatten().flat_map(SMatrix::rows));
        let mut files = vec![self.out.write_csv("smatrix.csv", &rows)?];
        let all = || primary.iter().chain(secondary.iter().flatten());
        let worst = all().map(|m| m.unitarity_defect).fold(0.0, f64::max);
        let flagged = all().filter(|m| m.flagged).count();
        let mut message = format!("{} samples", primary.len());
        let mut gap = 0.0;
        if let Some(other) = &secondary {
            let cross: Vec<CrossCheckRow> = primary
                .iter()
                .zip(other)
                .map(|(a, b)| CrossCheckRow {
                    lambda: a.lambda,
                    difference: if a.data.shape() == b.data.shape() { dense_norm(&(&a.data - &b.data)) } else { f64::INFINITY },
                })
                .collect();
            gap = cross.iter().map(|c| c.difference).fold(0.0, f64::max);
            files.push(self.out.write_csv("crosscheck.csv", &cross)?);
            message += &format!(", max ode/stationary difference {gap:.2e}");
        }
        message += &format!(", max unitarity defect {worst:.2e}");
        if flagged > 0 {
            message += &format!(", {flagged} ill-conditioned");
        }
        Ok(Outcome::certify(worst <= UNITARITY_TOL && gap <= CROSS_CHECK_TOL && flagged == 0, message, files))
    }

    fn lap(&self) -> Staged {
        let st = &self.cfg.lap;
        let s = self.with_nodes(st.nodes)?;
        s.check_energy(st.lambda)?;
        let h = assemble_full(&s)?;
        let weight = match st.weight {
            WeightKind::Position => Weight::position(&h, st.s),
            WeightKind::Conjugate => Weight::conjugate(&conjugate_operator(s.grid, s.channels()), st.s),
        };
        let settings = ProbeSettings { seed: self.seed, ..Default::default() };
        let p = weighted_resolvent_probe(&h, st.lambda, st.s, st.power, &st.epsilons, &weight, settings)?;
        let side = match p.side {
            ProbeSide::Plus => "+",
            ProbeSide::Minus => "-",
        };
        let rows: Vec<LapRow> = p
            .epsilons
            .iter()
            .zip(&p.norms)
            .map(|(&epsilon, &norm)| LapRow { lambda: p.lambda, s: p.s, ell: p.ell, epsilon, norm, side: side.into() })
            .collect();
        let cauchy: Vec<CauchyRow> = p
            .differences
            .iter()
            .enumerate()
            .map(|(i, &difference)| CauchyRow {
                epsilon: p.epsilons[i + 1],
                difference,
                ratio: i.checked_sub(1).and_then(|j| p.cauchy_ratios.get(j).copied()),
            })
            .collect();
        let files = vec![self.out.write_csv("lap.csv", &rows)?, self.out.write_csv("lap_cauchy.csv", &cauchy)?];
        let message = format!(
            "lambda {}, s {}, l {}: limit norm {:.4e}, max Cauchy ratio {:.3}, growth slope {:.3}",
            p.lambda,
            p.s,
            p.ell,
            p.limit_norm,
            p.cauchy_ratios.iter().copied().fold(0.0, f64::max),
            p.growth_slope
        );
        Ok(Outcome::certify(p.converged, message, files))
    }

    fn mourre(&self) -> Staged {
        let st = &self.cfg.mourre;
        let s = self.with_nodes(st.nodes)?;
        let r = mourre_scenario(&s, st.lambda, st.delta, 1e-6)?;
        let rows: Vec<MourreRow> = r.eigenvalues.iter().enumerate().map(|(index, &eigenvalue)| MourreRow { index, eigenvalue, a: r.a }).collect();
        let files = vec![self.out.write_csv("mourre.csv", &rows)?];
        let message = format!(
            "window {} +- {}: dimension {}, {} eigenvalue(s) below a = {:.4} (budget {})",
            st.lambda, st.delta, r.dimension, r.below_a, r.a, r.rank_budget
        );
        Ok(Outcome::certify(r.verified, message, files))
    }

    fn packet(&self) -> PacketSpec {
        let td = &self.cfg.timedelay;
        PacketSpec::incoming(1, 0, td.lambda_bar, td.half_width)
    }

    fn propagate(&self) -> Staged {
        let (probe, _) = scattering_state(&self.scenario, &self.packet(), &WaveSettings::default())?;
        let rows: Vec<PropagateRow> =
            probe.times.iter().zip(&probe.cauchy).map(|(&t0, &cauchy_difference)| PropagateRow { t0, cauchy_difference }).collect();
        let files = vec![self.out.write_csv("propagate.csv", &rows)?];
        let message = format!(
            "Cauchy differences decay like |t0|^-{:.2}, first converged t0 {}, norm ratio {:.8}",
            probe.power,
            probe.t0.map_or("none".to_string(), |t| format!("{t:.2}")),
            probe.norm_ratio
        );
        Ok(Outcome::certify(probe.converged && (probe.norm_ratio - 1.0).abs() <= NORM_TOL, message, files))
    }

    fn timedelay(&self) -> Staged {
        let mu = self.scenario.mu();
        if mu <= MU_TIME_DELAY && !self.force {
            return Err(Failure::Prerequisite(format!(
                "the time delay requires mu > {MU_TIME_DELAY}; the scenario declares mu = {mu} (--force explores it without a certificate)"
            ))
            .into());
        }
        match self.out.stamped_hash("smatrix.csv")? {
            Some(h) if h == self.out.hash => {}
            Some(_) => return Err(Failure::Prerequisite("smatrix.csv belongs to a different scenario; rerun the smatrix stage".into()).into()),
            None => return Err(Failure::Prerequisite("the time delay needs the S-matrix grid; run the smatrix stage first".into()).into()),
        }
        let spec = self.packet();
        let st = &self.cfg.smatrix;
        let (lo, hi) = (spec.lambda_bar - spec.half_width, spec.lambda_bar + spec.half_width);
        if lo < st.lambda_min || hi > st.lambda_max {
            return Err(Failure::Prerequisite(format!(
                "packet support [{lo}, {hi}] is not covered by the S-matrix grid [{}, {}]",
                st.lambda_min, st.lambda_max
            ))
            .into());
        }
        let settings = TimeDelaySettings { force: self.force, ..Default::default() };
        let r = symmetrized_time_delay(&self.scenario, &spec, &self.cfg.timedelay.radii, &settings)?;
        let mut files = vec![self.out.write_csv("sojourn.csv", &r.records)?];
        let summary = [
            ("tau_inf", r.tau_inf),
            ("eisenbud_wigner", r.eisenbud_wigner),
            ("eisenbud_wigner_imag", r.eisenbud_wigner_imag),
            ("discrepancy", r.discrepancy),
            ("fit_slope", r.fit_slope),
            ("fit_residual", r.fit_residual),
            ("fit_gap", r.fit_gap),
            ("hermiticity_defect", r.hermiticity_defect),
            ("tau_slope", r.tau_slope),
            ("tau_stderr", r.tau_stderr),
            ("tau_in_slope", r.tau_in_slope),
            ("tau_in_stderr", r.tau_in_stderr),
            ("horizon", r.horizon),
            ("horizon_ratio", r.horizon_ratio),
            ("norm_drift", r.norm_drift),
            ("mu", r.mu),
        ]
        .map(|(quantity, value)| SummaryRow { quantity: quantity.into(), value });
        files.push(self.out.write_csv("timedelay_summary.csv", &summary)?);
        let doc = TimeDelayDocument { scenario_hash: &self.out.hash, report: &r };
        let text = serde_json::to_string_pretty(&doc).map_err(anyhow::Error::from)? + "\n";
        std::fs::write(self.out.path("timedelay.json"), text).map_err(anyhow::Error::from)?;
        files.push("timedelay.json".into());
        let message = format!(
            "tau_inf {:.5}, Eisenbud-Wigner {:.5}, relative discrepancy {:.2e}, fit residual {:.2e} vs gap {:.2e}",
            r.tau_inf, r.eisenbud_wigner, r.discrepancy, r.fit_residual, r.fit_gap
        );
        if !r.admissible {
            // Outside the admissible range the numbers are reported, not judged.
            return Ok(Outcome::pass(format!("{message} (forced at mu = {mu}: reported without a certificate)"), files));
        }
        let scale = r.records.last().map_or(0.0, |s| s.t_r0_phi);
        let agrees = r.discrepancy <= EW_TOL || (r.tau_inf - r.eisenbud_wigner).abs() <= EW_FLOOR * scale;
        Ok(Outcome::certify(agrees, message, files))
    }
}

#[derive(Serialize)]
struct TimeDelayDocument<'a> {
    scenario_hash: &'a str,
    #[serde(flatten)]
    report: &'a TimeDelayReport,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ThresholdRow {
    pub component: usize,
    pub local_index: usize,
    pub merged_index: usize,
    pub tau: f64,
    pub convergence_estimate: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CriticalRow {
    pub value: f64,
    pub kind: String,
    pub multiplicity: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CrossCheckRow {
    pub lambda: f64,
    pub difference: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LapRow {
    pub lambda: f64,
    pub s: f64,
    pub ell: usize,
    pub epsilon: f64,
    pub norm: f64,
    pub side: String,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CauchyRow {
    pub epsilon: f64,
    pub difference: f64,
    pub ratio: Option<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MourreRow {
    pub index: usize,
    pub eigenvalue: f64,
    pub a: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PropagateRow {
    pub t0: f64,
    pub cauchy_difference: f64,
}

/// Sojourn series columns the report reads back.
#[derive(Clone, Debug, Deserialize)]
pub struct SojournRow {
    pub r: f64,
    pub tau_r: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SummaryRow {
    pub quantity: String,
    pub value: f64,
}

/// S-matrix columns the report reads back.
#[derive(Clone, Debug, Deserialize)]
pub struct SmatrixRecord {
    pub lambda: f64,
    pub unitarity_defect: f64,
    pub provenance: String,
}
