//! Report assembly and emission: schema-versioned JSON, RFC-4180 CSV tables
//! (17 significant digits), and static SVG plots.

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::bounds::{AronsonFit, CksResult, LowerBoundResult, VerdictReport, ARONSON_FLOOR};
use crate::error::{Error, Result};
use crate::operators::GardingResult;
use crate::scenario::Scenario;
use crate::semigroup::ViscosityDiagnostics;
use crate::svg::{BarPlot, Series, XyPlot};

pub const SCHEMA_VERSION: &str = "ellikernel/1";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FieldSummary {
    pub family: String,
    pub mu_pointwise: f64,
    pub lambda_pointwise: f64,
    pub norm_c: f64,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct KernelDiagRecord {
    pub t: f64,
    pub symmetry_defect: f64,
    pub mass_defect: f64,
    pub min_entry: f64,
    pub max_entry: f64,
    pub negativity_rel: f64,
    pub passes: bool,
}

/// One kernel-profile sample from the reference cell: t^{d/2} K against
/// s = dist^2 / t.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ProfilePoint {
    pub t: f64,
    pub s: f64,
    pub t_pow_k: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Report {
    pub schema: String,
    pub scenario: Scenario,
    pub field_summary: FieldSummary,
    pub garding: Option<GardingResult>,
    pub viscosity: Option<ViscosityDiagnostics>,
    pub kernel_diagnostics: Vec<KernelDiagRecord>,
    pub lower_bound: Option<LowerBoundResult>,
    pub aronson: Option<AronsonFit>,
    pub cks: Option<CksResult>,
    pub verdicts: Option<VerdictReport>,
    pub profile: Vec<ProfilePoint>,
    /// Wall-clock per stage; segregated so determinism checks can drop it.
    pub timing_ms: BTreeMap<String, f64>,
}

impl Report {
    pub fn to_json_pretty(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serialization");
        s.push('\n');
        s
    }

    /// JSON with the timing object removed; byte-identical across runs with
    /// the same scenario and seed.
    pub fn canonical_json(&self) -> String {
        let mut value = serde_json::to_value(self).expect("report serialization");
        if let Some(map) = value.as_object_mut() {
            map.remove("timing_ms");
        }
        let mut s = serde_json::to_string_pretty(&value).expect("report serialization");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Report> {
        serde_json::from_str(text).map_err(|e| Error::Parse {
            path: PathBuf::from("<json>"),
            message: e.to_string(),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Json,
    Csv,
    Svg,
}

impl std::str::FromStr for Format {
    type Err = Error;
    fn from_str(s: &str) -> Result<Format> {
        match s {
            "json" => Ok(Format::Json),
            "csv" => Ok(Format::Csv),
            "svg" => Ok(Format::Svg),
            other => Err(Error::InvalidArgument(format!(
                "unknown format `{other}` (expected json, csv, svg)"
            ))),
        }
    }
}

fn sig17(x: f64) -> String {
    format!("{x:.16e}")
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    std::fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn csv_kernel_profile(report: &Report) -> String {
    let mut out = String::from("t,s,t_pow_K\r\n");
    for p in &report.profile {
        let _ = write!(out, "{},{},{}\r\n", sig17(p.t), sig17(p.s), sig17(p.t_pow_k));
    }
    out
}

fn csv_envelope(report: &Report, fit: &AronsonFit) -> String {
    let mut out = String::from("t,s,t_pow_K,upper_env,lower_env\r\n");
    for p in &report.profile {
        let upper = fit.a * (-fit.b * p.s).exp();
        let lower = fit.a_prime * (-fit.b_prime * p.s).exp();
        let _ = write!(
            out,
            "{},{},{},{},{}\r\n",
            sig17(p.t),
            sig17(p.s),
            sig17(p.t_pow_k),
            sig17(upper),
            sig17(lower)
        );
    }
    out
}

fn csv_viscosity(v: &ViscosityDiagnostics) -> String {
    let mut out = String::from("eps,delta\r\n");
    for (j, d) in v.deltas.iter().enumerate() {
        let _ = write!(out, "{},{}\r\n", sig17(v.eps[j + 1]), sig17(*d));
    }
    out
}

/// Re-checks the envelope on the emitted profile points; every admissible
/// point must lie inside both fitted envelopes.
fn envelope_emit_check(report: &Report, fit: &AronsonFit) -> Result<()> {
    for p in &report.profile {
        if p.s > fit.s_cap || p.t_pow_k <= ARONSON_FLOOR {
            continue;
        }
        let upper = fit.a * (-fit.b * p.s).exp();
        let lower = fit.a_prime * (-fit.b_prime * p.s).exp();
        if p.t_pow_k > upper * (1.0 + 1e-9) || p.t_pow_k < lower * (1.0 - 1e-9) {
            return Err(Error::InvalidArgument(format!(
                "envelope validity failed at emit time: t = {}, s = {}, value = {}",
                p.t, p.s, p.t_pow_k
            )));
        }
    }
    Ok(())
}

fn svg_envelope(report: &Report, fit: &AronsonFit) -> String {
    let scatter: Vec<(f64, f64)> = report
        .profile
        .iter()
        .filter(|p| p.t_pow_k > ARONSON_FLOOR && p.s <= fit.s_cap)
        .map(|p| (p.s, p.t_pow_k.log10()))
        .collect();
    let smax = fit.s_cap;
    let curve = |a: f64, b: f64| -> Vec<(f64, f64)> {
        (0..=100)
            .map(|i| {
                let s = smax * i as f64 / 100.0;
                (s, (a * (-b * s).exp()).log10())
            })
            .collect()
    };
    XyPlot {
        title: format!("{}: Gaussian envelopes", report.scenario.name),
        x_label: "s = dist^2 / t".into(),
        y_label: "log10 t^{d/2} K".into(),
        scatter,
        lines: vec![
            Series {
                label: format!("upper a={:.3} b={:.3}", fit.a, fit.b),
                color: "crimson".into(),
                points: curve(fit.a, fit.b),
            },
            Series {
                label: format!("lower a'={:.3e} b'={:.3}", fit.a_prime, fit.b_prime),
                color: "seagreen".into(),
                points: curve(fit.a_prime, fit.b_prime),
            },
        ],
    }
    .render()
}

fn svg_mu(report: &Report) -> String {
    let mut bars = vec![(
        "mu_pointwise".to_string(),
        report.field_summary.mu_pointwise,
    )];
    if let Some(g) = &report.garding {
        bars.push(("garding_mu".into(), g.mu));
    }
    if let Some(c) = &report.cks {
        bars.push(("mu_cks".into(), c.mu_cks));
    }
    BarPlot {
        title: format!("{}: ellipticity constants", report.scenario.name),
        y_label: "mu".into(),
        bars,
    }
    .render()
}

fn svg_viscosity(report: &Report, v: &ViscosityDiagnostics) -> String {
    let points: Vec<(f64, f64)> = v
        .deltas
        .iter()
        .enumerate()
        .map(|(j, d)| (j as f64, d.max(1e-300).log10()))
        .collect();
    XyPlot {
        title: format!("{}: resolvent Cauchy decay", report.scenario.name),
        x_label: "schedule step j".into(),
        y_label: "log10 delta_j".into(),
        scatter: points.clone(),
        lines: vec![Series {
            label: "delta_j".into(),
            color: "steelblue".into(),
            points,
        }],
    }
    .render()
}

/// Writes the requested formats into `out_dir`, returning the file manifest.
/// File names are deterministic functions of the scenario name.
pub fn emit_report(report: &Report, out_dir: &Path, formats: &[Format]) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let name = &report.scenario.name;
    let mut manifest = Vec::new();
    for format in formats {
        match format {
            Format::Json => {
                let path = out_dir.join(format!("{name}.json"));
                write_file(&path, &report.to_json_pretty())?;
                manifest.push(path);
            }
            Format::Csv => {
                let path = out_dir.join(format!("{name}_kernel_profile.csv"));
                write_file(&path, &csv_kernel_profile(report))?;
                manifest.push(path);
                if let Some(fit) = &report.aronson {
                    let path = out_dir.join(format!("{name}_envelope.csv"));
                    write_file(&path, &csv_envelope(report, fit))?;
                    manifest.push(path);
                }
                if let Some(v) = &report.viscosity {
                    let path = out_dir.join(format!("{name}_viscosity.csv"));
                    write_file(&path, &csv_viscosity(v))?;
                    manifest.push(path);
                }
            }
            Format::Svg => {
                if let Some(fit) = &report.aronson {
                    envelope_emit_check(report, fit)?;
                    let path = out_dir.join(format!("{name}_envelope.svg"));
                    write_file(&path, &svg_envelope(report, fit))?;
                    manifest.push(path);
                }
                let path = out_dir.join(format!("{name}_mu.svg"));
                write_file(&path, &svg_mu(report))?;
                manifest.push(path);
                if let Some(v) = &report.viscosity {
                    let path = out_dir.join(format!("{name}_viscosity.svg"));
                    write_file(&path, &svg_viscosity(report, v))?;
                    manifest.push(path);
                }
            }
        }
    }
    Ok(manifest)
}
