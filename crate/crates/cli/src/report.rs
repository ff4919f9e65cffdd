//! Summary report rendered from persisted outputs only.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use anyhow::{anyhow, Result};
use plotters::prelude::*;
use serde::de::DeserializeOwned;

use crate::output::read_csv;
use crate::stages::{CauchyRow, CriticalRow, LapRow, MourreRow, PropagateRow, SmatrixRecord, SojournRow, SummaryRow, ThresholdRow};

/// Values below this are drawn at the floor of logarithmic axes.
const LOG_FLOOR: f64 = 1e-17;

struct Series {
    name: String,
    points: Vec<(f64, f64)>,
}

struct Panel<'a> {
    title: &'a str,
    x_label: &'a str,
    y_label: &'a str,
    log_x: bool,
    log_y: bool,
    series: Vec<Series>,
    /// Named horizontal reference lines.
    levels: Vec<(String, f64)>,
}

fn bounds(values: impl Iterator<Item = f64>, log: bool) -> (f64, f64) {
    let (mut lo, mut hi) = values.filter(|v| v.is_finite()).fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| {
        let v = if log { v.max(LOG_FLOOR) } else { v };
        (a.min(v), b.max(v))
    });
    if !lo.is_finite() {
        return if log { (LOG_FLOOR, 1.0) } else { (0.0, 1.0) };
    }
    if log {
        (lo / 2.0, hi * 2.0)
    } else {
        if hi - lo <= 1e-12 * (1.0 + lo.abs()) {
            lo -= 0.5 * (1.0 + lo.abs());
            hi += 0.5 * (1.0 + hi.abs());
        }
        let pad = 0.05 * (hi - lo);
        (lo - pad, hi + pad)
    }
}

fn draw(path: &Path, p: &Panel) -> Result<()> {
    let root = SVGBackend::new(path, (720, 440)).into_drawing_area();
    root.fill(&WHITE).map_err(|e| anyhow!("{e}"))?;
    let xs = bounds(p.series.iter().flat_map(|s| s.points.iter().map(|q| q.0)), p.log_x);
    let ys = bounds(p.series.iter().flat_map(|s| s.points.iter().map(|q| q.1)).chain(p.levels.iter().map(|l| l.1)), p.log_y);
    let mut builder = ChartBuilder::on(&root);
    builder.caption(p.title, ("sans-serif", 20)).margin(12).x_label_area_size(40).y_label_area_size(70);
    let clamp = |v: f64, log: bool| if log { v.max(LOG_FLOOR) } else { v };
    macro_rules! render {
        ($chart:expr) => {{
            let mut chart = $chart.map_err(|e| anyhow!("{e}"))?;
            chart.configure_mesh().x_desc(p.x_label).y_desc(p.y_label).draw().map_err(|e| anyhow!("{e}"))?;
            for (i, s) in p.series.iter().enumerate() {
                let color = Palette99::pick(i).to_rgba();
                let pts: Vec<(f64, f64)> = s.points.iter().map(|&(x, y)| (clamp(x, p.log_x), clamp(y, p.log_y))).collect();
                chart
                    .draw_series(LineSeries::new(pts.clone(), color.stroke_width(2)))
                    .map_err(|e| anyhow!("{e}"))?
                    .label(s.name.clone())
                    .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 16, y)], color));
                chart.draw_series(pts.iter().map(|&q| Circle::new(q, 3, color.filled()))).map_err(|e| anyhow!("{e}"))?;
            }
            for (name, level) in &p.levels {
                let y = clamp(*level, p.log_y);
                chart
                    .draw_series(LineSeries::new(vec![(xs.0, y), (xs.1, y)], BLACK.stroke_width(1)))
                    .map_err(|e| anyhow!("{e}"))?
                    .label(name.clone())
                    .legend(|(x, y)| PathElement::new(vec![(x, y), (x + 16, y)], BLACK));
            }
            chart.configure_series_labels().background_style(WHITE.mix(0.8)).border_style(BLACK).draw().map_err(|e| anyhow!("{e}"))?;
        }};
    }
    match (p.log_x, p.log_y) {
        (false, false) => render!(builder.build_cartesian_2d(xs.0..xs.1, ys.0..ys.1)),
        (false, true) => render!(builder.build_cartesian_2d(xs.0..xs.1, (ys.0..ys.1).log_scale())),
        (true, false) => render!(builder.build_cartesian_2d((xs.0..xs.1).log_scale(), ys.0..ys.1)),
        (true, true) => render!(builder.build_cartesian_2d((xs.0..xs.1).log_scale(), (ys.0..ys.1).log_scale())),
    }
    root.present().map_err(|e| anyhow!("{e}"))?;
    Ok(())
}

/// Rows of `name`, or `None` when the stage output is missing.
fn load<T: DeserializeOwned>(dir: &Path, name: &str) -> Result<Option<Vec<T>>> {
    let path = dir.join(name);
    if path.exists() {
        read_csv(&path).map(Some)
    } else {
        Ok(None)
    }
}

fn gap(md: &mut String, what: &str, file: &str) {
    let _ = writeln!(md, "> **Missing:** {what} (`{file}` not found); this section is left empty.\n");
}

/// Files produced by [`emit_report`].
pub struct ReportFiles {
    pub document: String,
    pub plots: Vec<String>,
    pub gaps: usize,
}

/// Render `report.md` and SVG panels in `dir` from the CSVs found there.
pub fn emit_report(dir: &Path) -> Result<ReportFiles> {
    let mut md = String::from("# Scattering report\n\n");
    let mut plots = Vec::new();
    let mut gaps = 0;
    let manifest = dir.join("manifest.json");
    if manifest.exists() {
        let m: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&manifest)?)?;
        let _ = writeln!(md, "Scenario hash `{}`, tool version {}.\n", m["scenario_hash"].as_str().unwrap_or("?"), m["tool_version"].as_str().unwrap_or("?"));
        md.push_str("| stage | status | seconds | message |\n|---|---|---|---|\n");
        for s in m["stages"].as_array().into_iter().flatten() {
            let _ = writeln!(
                md,
                "| {} | {} | {:.1} | {} |",
                s["stage"].as_str().unwrap_or("?"),
                s["status"].as_str().unwrap_or("?"),
                s["seconds"].as_f64().unwrap_or(0.0),
                s["message"].as_str().unwrap_or("").replace('|', "\\|")
            );
        }
        md.push('\n');
    } else {
        gaps += 1;
        gap(&mut md, "run manifest", "manifest.json");
    }
    let mut plot = |file: &str, panel: Panel, md: &mut String| -> Result<()> {
        draw(&dir.join(file), &panel)?;
        let _ = writeln!(md, "![{}]({file})\n", panel.title);
        plots.push(file.to_string());
        Ok(())
    };

    md.push_str("## Thresholds and critical set\n\n");
    match load::<ThresholdRow>(dir, "spectrum.csv")? {
        Some(rows) => {
            md.push_str("| merged index | component | local index | tau | convergence estimate |\n|---|---|---|---|---|\n");
            for r in rows {
                let _ = writeln!(md, "| {} | {} | {} | {:.10} | {:.2e} |", r.merged_index, r.component, r.local_index, r.tau, r.convergence_estimate);
            }
            md.push('\n');
        }
        None => {
            gaps += 1;
            gap(&mut md, "threshold table", "spectrum.csv");
        }
    }
    if let Some(rows) = load::<CriticalRow>(dir, "critical.csv")? {
        md.push_str("| value | kind | multiplicity |\n|---|---|---|\n");
        for r in rows {
            let _ = writeln!(md, "| {:.10} | {} | {} |", r.value, r.kind, r.multiplicity);
        }
        md.push('\n');
    }

    md.push_str("## S-matrix unitarity\n\n");
    match load::<SmatrixRecord>(dir, "smatrix.csv")? {
        Some(rows) => {
            let mut by: BTreeMap<String, Vec<(f64, f64)>> = BTreeMap::new();
            for r in &rows {
                let v = by.entry(r.provenance.clone()).or_default();
                if v.last().is_none_or(|p| p.0 != r.lambda) {
                    v.push((r.lambda, r.unitarity_defect));
                }
            }
            let worst = rows.iter().map(|r| r.unitarity_defect).fold(0.0, f64::max);
            let _ = writeln!(md, "Largest unitarity defect {worst:.3e} over {} entries.\n", rows.len());
            let series = by.into_iter().map(|(name, points)| Series { name, points }).collect();
            let panel = Panel { title: "unitarity defect", x_label: "lambda", y_label: "||S*S - I||", log_x: false, log_y: true, series, levels: vec![] };
            plot("unitarity.svg", panel, &mut md)?;
        }
        None => {
            gaps += 1;
            gap(&mut md, "S-matrix sweep", "smatrix.csv");
        }
    }

    md.push_str("## Limiting absorption\n\n");
    match load::<LapRow>(dir, "lap.csv")? {
        Some(rows) => {
            let series = vec![Series { name: "||W R^l W||".into(), points: rows.iter().map(|r| (r.epsilon, r.norm)).collect() }];
            let panel = Panel { title: "weighted resolvent norms", x_label: "epsilon", y_label: "norm", log_x: true, log_y: true, series, levels: vec![] };
            plot("lap_norms.svg", panel, &mut md)?;
            if let Some(c) = load::<CauchyRow>(dir, "lap_cauchy.csv")? {
                let series = vec![Series { name: "successive differences".into(), points: c.iter().map(|r| (r.epsilon, r.difference)).collect() }];
                let panel = Panel { title: "Cauchy differences", x_label: "epsilon", y_label: "difference", log_x: true, log_y: true, series, levels: vec![] };
                plot("lap_cauchy.svg", panel, &mut md)?;
            }
        }
        None => {
            gaps += 1;
            gap(&mut md, "limiting-absorption probe", "lap.csv");
        }
    }

    md.push_str("## Mourre estimate\n\n");
    match load::<MourreRow>(dir, "mourre.csv")? {
        Some(rows) if !rows.is_empty() => {
            let a = rows[0].a;
            let below = rows.iter().filter(|r| r.eigenvalue < a).count();
            let _ = writeln!(md, "{} eigenvalue(s) of the compressed commutator, {below} below a = {a:.6}.\n", rows.len());
            let series = vec![Series { name: "compressed commutator".into(), points: rows.iter().map(|r| (r.index as f64, r.eigenvalue)).collect() }];
            let panel = Panel { title: "Mourre spectrum", x_label: "index", y_label: "eigenvalue", log_x: false, log_y: false, series, levels: vec![("a".into(), a)] };
            plot("mourre.svg", panel, &mut md)?;
        }
        Some(_) => md.push_str("The spectral window is empty.\n\n"),
        None => {
            gaps += 1;
            gap(&mut md, "Mourre compression", "mourre.csv");
        }
    }

    md.push_str("## Wave operators\n\n");
    match load::<PropagateRow>(dir, "propagate.csv")? {
        Some(rows) => {
            let series = vec![Series { name: "||Omega(2 t0) phi - Omega(t0) phi||".into(), points: rows.iter().map(|r| (r.t0.abs(), r.cauchy_difference)).collect() }];
            let panel = Panel { title: "preparation series", x_label: "|t0|", y_label: "difference", log_x: true, log_y: true, series, levels: vec![] };
            plot("propagate.svg", panel, &mut md)?;
        }
        None => {
            gaps += 1;
            gap(&mut md, "wave-operator series", "propagate.csv");
        }
    }

    md.push_str("## Time delay\n\n");
    match (load::<SojournRow>(dir, "sojourn.csv")?, load::<SummaryRow>(dir, "timedelay_summary.csv")?) {
        (Some(rows), Some(summary)) => {
            let get = |q: &str| summary.iter().find(|s| s.quantity == q).map(|s| s.value).unwrap_or(f64::NAN);
            let _ = writeln!(
                md,
                "tau_inf = {:.6}, Eisenbud-Wigner = {:.6}, relative discrepancy {:.3e}.\n",
                get("tau_inf"),
                get("eisenbud_wigner"),
                get("discrepancy")
            );
            let series = vec![Series { name: "tau_r".into(), points: rows.iter().map(|r| (r.r, r.tau_r)).collect() }];
            let levels = vec![("Eisenbud-Wigner".into(), get("eisenbud_wigner"))];
            let panel = Panel { title: "symmetrized time delay", x_label: "r", y_label: "tau_r", log_x: false, log_y: false, series, levels };
            plot("timedelay.svg", panel, &mut md)?;
        }
        _ => {
            gaps += 1;
            gap(&mut md, "time-delay series", "sojourn.csv / timedelay_summary.csv");
        }
    }

    std::fs::write(dir.join("report.md"), &md)?;
    Ok(ReportFiles { document: "report.md".into(), plots, gaps })
}
