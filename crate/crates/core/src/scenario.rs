//! Declarative scenarios, the builtin gallery, and full-pipeline
//! orchestration.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use crate::bounds::{
    aronson_fit, bump_pair, cks_mu_recovery, cks_spectral_audit, equivalence_verdicts,
    local_lower_bound, Thresholds,
};
use crate::error::{Error, Result};
use crate::field::{make_field, FieldFamily};
use crate::grid::Grid;
use crate::operators::{assemble_h, assemble_laplacian, garding_constant, GardingOpts};
use crate::report::{FieldSummary, KernelDiagRecord, ProfilePoint, Report, SCHEMA_VERSION};
use crate::semigroup::{
    kernel_battery, time_grid, viscosity_limit, EpsSchedule, KernelSlice, SemigroupOpts,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnalysisKind {
    Garding,
    Viscosity,
    Kernel,
    LowerBound,
    Aronson,
    Cks,
    Equivalence,
}

pub const ALL_ANALYSES: [AnalysisKind; 7] = [
    AnalysisKind::Garding,
    AnalysisKind::Viscosity,
    AnalysisKind::Kernel,
    AnalysisKind::LowerBound,
    AnalysisKind::Aronson,
    AnalysisKind::Cks,
    AnalysisKind::Equivalence,
];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeGridSpec {
    pub t_min: f64,
    pub t_max: f64,
    pub points: usize,
}

/// Raw scenario file contents; optional fields take defaults on validation.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: String,
    pub d: usize,
    pub n: usize,
    pub l: f64,
    pub field: FieldFamily,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub time_grid: Option<TimeGridSpec>,
    #[serde(default)]
    pub thresholds: Option<Thresholds>,
    #[serde(default)]
    pub eps_schedule: Option<Vec<f64>>,
    #[serde(default)]
    pub analyses: Option<Vec<AnalysisKind>>,
}

/// Validated scenario with all defaults resolved.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Scenario {
    pub name: String,
    pub grid: Grid,
    pub field: FieldFamily,
    pub seed: u64,
    pub times: Vec<f64>,
    pub thresholds: Thresholds,
    pub eps_schedule: Vec<f64>,
    pub analyses: Vec<AnalysisKind>,
}

impl Scenario {
    pub fn from_config(cfg: ScenarioConfig) -> Result<Scenario> {
        if cfg.name.is_empty() {
            return Err(Error::InvalidScenario {
                field: "name".into(),
                message: "scenario name must be nonempty".into(),
            });
        }
        let grid = Grid::new(cfg.d, cfg.n, cfg.l).map_err(|e| Error::InvalidScenario {
            field: "d/n/l".into(),
            message: e.to_string(),
        })?;
        let seed = cfg.seed.unwrap_or(42);
        // dry-run the field construction so config errors surface at load
        make_field(&grid, &cfg.field, seed).map_err(|e| Error::InvalidScenario {
            field: "field".into(),
            message: e.to_string(),
        })?;
        let times = match cfg.time_grid {
            None => time_grid(&grid),
            Some(tg) => {
                if !(tg.t_min > 0.0 && tg.t_max > tg.t_min) || tg.points < 2 {
                    return Err(Error::InvalidScenario {
                        field: "time_grid".into(),
                        message: "need 0 < t_min < t_max and points >= 2".into(),
                    });
                }
                (0..tg.points)
                    .map(|i| {
                        let f = i as f64 / (tg.points - 1) as f64;
                        (tg.t_min.ln() + f * (tg.t_max.ln() - tg.t_min.ln())).exp()
                    })
                    .collect()
            }
        };
        let thresholds = cfg.thresholds.unwrap_or_default();
        if !(thresholds.probe_radius > 0.0) {
            return Err(Error::InvalidScenario {
                field: "thresholds.probe_radius".into(),
                message: "probe radius must be positive".into(),
            });
        }
        let eps_schedule = match cfg.eps_schedule {
            None => EpsSchedule::default().values().to_vec(),
            Some(values) => {
                EpsSchedule::new(values.clone()).map_err(|e| Error::InvalidScenario {
                    field: "eps_schedule".into(),
                    message: e.to_string(),
                })?;
                values
            }
        };
        let analyses = cfg.analyses.unwrap_or_else(|| ALL_ANALYSES.to_vec());
        Ok(Scenario {
            name: cfg.name,
            grid,
            field: cfg.field,
            seed,
            times,
            thresholds,
            eps_schedule,
            analyses,
        })
    }

    pub fn wants(&self, kind: AnalysisKind) -> bool {
        self.analyses.contains(&kind)
    }
}

/// Builtin gallery spanning elliptic, anisotropic, and degenerate regimes.
pub fn gallery() -> Vec<Scenario> {
    let build = |name: &str, d: usize, n: usize, l: f64, field: FieldFamily, seed: u64| {
        Scenario::from_config(ScenarioConfig {
            name: name.into(),
            d,
            n,
            l,
            field,
            seed: Some(seed),
            time_grid: None,
            thresholds: None,
            eps_schedule: None,
            analyses: None,
        })
        .expect("gallery entries are valid by construction")
    };
    let plateau_values: Vec<f64> = {
        let grid = Grid::new(1, 128, 8.0).unwrap();
        (0..128)
            .map(|i| {
                let x = grid.center(i)[0];
                if (2.0..4.0).contains(&x) {
                    0.0
                } else {
                    1.0
                }
            })
            .collect()
    };
    vec![
        build(
            "elliptic-constant-1d",
            1,
            256,
            8.0,
            FieldFamily::Constant { c0: 1.0 },
            42,
        ),
        build(
            "elliptic-checkerboard-1d",
            1,
            256,
            8.0,
            FieldFamily::Checkerboard {
                c_lo: 0.5,
                c_hi: 2.0,
            },
            42,
        ),
        build(
            "elliptic-lognormal-1d",
            1,
            256,
            8.0,
            FieldFamily::Lognormal {
                sigma: 0.5,
                correlation_len: 0.5,
            },
            7,
        ),
        build(
            "anisotropic-2d",
            2,
            32,
            8.0,
            FieldFamily::Anisotropic {
                c_xx: 2.0,
                c_yy: 1.0,
                c_xy: 0.5,
            },
            42,
        ),
        build(
            "checkerboard-2d",
            2,
            32,
            8.0,
            FieldFamily::Checkerboard {
                c_lo: 0.1,
                c_hi: 10.0,
            },
            42,
        ),
        build(
            "degenerate-sine-1d",
            1,
            64,
            8.0,
            FieldFamily::DegenerateSine { power: 2 },
            42,
        ),
        build(
            "degenerate-plateau-1d",
            1,
            128,
            8.0,
            FieldFamily::ScalarTable {
                values: plateau_values,
            },
            42,
        ),
        build(
            "zero-field-1d",
            1,
            64,
            8.0,
            FieldFamily::Constant { c0: 0.0 },
            42,
        ),
    ]
}

pub fn gallery_entry(name: &str) -> Option<Scenario> {
    gallery().into_iter().find(|s| s.name == name)
}

/// Loads a scenario from a TOML file.
pub fn load_scenario(path: &Path) -> Result<Scenario> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let cfg: ScenarioConfig = toml::from_str(&text).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    Scenario::from_config(cfg)
}

/// Resolves a CLI argument: gallery name first, then a config file path.
pub fn resolve_scenario(arg: &str) -> Result<Scenario> {
    if let Some(sc) = gallery_entry(arg) {
        return Ok(sc);
    }
    let path = Path::new(arg);
    if path.is_file() {
        return load_scenario(path);
    }
    Err(Error::UnknownScenario(arg.to_string()))
}

#[derive(Debug, Clone, Copy, Default)]
pub struct RunOpts {
    pub semigroup: SemigroupOpts,
    pub garding: GardingOpts,
}

/// Intermediate products of a pipeline run, kept for callers (tests,
/// acceptance battery) that probe beyond the report.
pub struct PipelineArtifacts {
    pub field: crate::field::CoefficientField,
    pub h_op: crate::operators::SparseOperator,
    pub delta: crate::operators::SparseOperator,
    pub kernels: Vec<KernelSlice>,
}

/// Executes the requested analyses in dependency order:
/// assemble -> garding/viscosity -> kernels -> bounds -> verdicts.
pub fn run_scenario(sc: &Scenario, opts: &RunOpts) -> Result<Report> {
    run_scenario_full(sc, opts).map(|(report, _)| report)
}

/// As [`run_scenario`], additionally returning the assembled operators and
/// kernel slices.
pub fn run_scenario_full(sc: &Scenario, opts: &RunOpts) -> Result<(Report, PipelineArtifacts)> {
    let mut timing_ms: BTreeMap<String, f64> = BTreeMap::new();
    let mut stage = |name: &str, start: Instant| {
        timing_ms.insert(name.to_string(), start.elapsed().as_secs_f64() * 1e3);
    };

    let t0 = Instant::now();
    let field = make_field(&sc.grid, &sc.field, sc.seed).map_err(|e| e.in_stage("field"))?;
    let (mu_pointwise, lambda_pointwise) = field.eig_range();
    let field_summary = FieldSummary {
        family: field.family_tag().to_string(),
        mu_pointwise,
        lambda_pointwise,
        norm_c: field.norm_c(),
    };
    stage("field", t0);

    let t0 = Instant::now();
    let h_op = assemble_h(&field).map_err(|e| e.in_stage("assembly"))?;
    let delta = assemble_laplacian(&sc.grid);
    stage("assembly", t0);

    let garding = if sc.wants(AnalysisKind::Garding) || sc.wants(AnalysisKind::Equivalence) {
        let t0 = Instant::now();
        let g = garding_constant(&h_op, &delta, &opts.garding).map_err(|e| e.in_stage("garding"))?;
        stage("garding", t0);
        Some(g)
    } else {
        None
    };

    let viscosity = if sc.wants(AnalysisKind::Viscosity) {
        let t0 = Instant::now();
        let schedule =
            EpsSchedule::new(sc.eps_schedule.clone()).map_err(|e| e.in_stage("viscosity"))?;
        let mut rng = ChaCha8Rng::seed_from_u64(sc.seed ^ 0x5649_5343);
        let psi: Vec<f64> = (0..sc.grid.num_cells())
            .map(|_| rand_distr::Distribution::sample(&rand_distr::StandardNormal, &mut rng))
            .collect();
        let diag = viscosity_limit(&h_op, &delta, &schedule, &psi, 1e-10)
            .map_err(|e| e.in_stage("viscosity"))?;
        stage("viscosity", t0);
        Some(diag)
    } else {
        None
    };

    let needs_kernels = sc.wants(AnalysisKind::Kernel)
        || sc.wants(AnalysisKind::LowerBound)
        || sc.wants(AnalysisKind::Aronson)
        || sc.wants(AnalysisKind::Cks)
        || sc.wants(AnalysisKind::Equivalence);
    let kernels: Vec<KernelSlice> = if needs_kernels {
        let t0 = Instant::now();
        let ks = kernel_battery(&h_op, &sc.times, &opts.semigroup)
            .map_err(|e| e.in_stage("kernel"))?;
        stage("kernel", t0);
        ks
    } else {
        Vec::new()
    };
    let kernel_diagnostics: Vec<KernelDiagRecord> = kernels
        .iter()
        .map(|k| KernelDiagRecord {
            t: k.t,
            symmetry_defect: k.diagnostics.symmetry_defect,
            mass_defect: k.diagnostics.mass_defect,
            min_entry: k.diagnostics.min_entry,
            max_entry: k.diagnostics.max_entry,
            negativity_rel: k.diagnostics.negativity_rel,
            passes: k.passes_diagnostics(),
        })
        .collect();

    let lower = if sc.wants(AnalysisKind::LowerBound)
        || sc.wants(AnalysisKind::Cks)
        || sc.wants(AnalysisKind::Equivalence)
    {
        let t0 = Instant::now();
        let lb = local_lower_bound(&kernels, sc.thresholds.probe_radius, sc.thresholds.a_thresh)
            .map_err(|e| e.in_stage("lower_bound"))?;
        stage("lower_bound", t0);
        Some(lb)
    } else {
        None
    };

    let aronson = if sc.wants(AnalysisKind::Aronson) || sc.wants(AnalysisKind::Equivalence) {
        let t0 = Instant::now();
        let fit = aronson_fit(&kernels, 16.0).map_err(|e| e.in_stage("aronson"))?;
        stage("aronson", t0);
        Some(fit)
    } else {
        None
    };

    let cks = if sc.wants(AnalysisKind::Cks) || sc.wants(AnalysisKind::Equivalence) {
        let t0 = Instant::now();
        let a_best = lower.as_ref().map(|l| l.a).unwrap_or(0.0);
        let mut result = cks_mu_recovery(a_best, sc.thresholds.probe_radius, sc.grid.d)
            .map_err(|e| e.in_stage("cks"))?;
        // difference-form audit trail on seeded bump pairs
        let mut rng = ChaCha8Rng::seed_from_u64(sc.seed ^ 0x434b_5300);
        let pairs: Vec<(Vec<f64>, Vec<f64>)> = (0..4)
            .map(|_| {
                let center = rand::Rng::random_range(&mut rng, 0..sc.grid.num_cells());
                bump_pair(&sc.grid, center, sc.grid.l / 8.0, &mut rng)
            })
            .collect();
        let (samples, _pass) =
            cks_spectral_audit(&h_op, &kernels, &pairs).map_err(|e| e.in_stage("cks"))?;
        result.difference_form_values = samples;
        stage("cks", t0);
        Some(result)
    } else {
        None
    };

    let verdicts = if sc.wants(AnalysisKind::Equivalence) {
        let t0 = Instant::now();
        let v = equivalence_verdicts(
            &field,
            garding.as_ref(),
            lower.as_ref().expect("equivalence requires lower bound"),
            aronson.as_ref().expect("equivalence requires aronson"),
            cks.as_ref(),
            &sc.thresholds,
        );
        stage("equivalence", t0);
        Some(v)
    } else {
        None
    };

    // kernel profile from the reference cell for report emission
    let mut profile: Vec<ProfilePoint> = Vec::new();
    let half_d = sc.grid.d as f64 / 2.0;
    for slice in &kernels {
        for y in 0..sc.grid.num_cells() {
            let dd = sc.grid.torus_dist(0, y);
            if dd <= sc.grid.l / 4.0 {
                profile.push(ProfilePoint {
                    t: slice.t,
                    s: dd * dd / slice.t,
                    t_pow_k: slice.t.powf(half_d) * slice.k(0, y),
                });
            }
        }
    }

    let report = Report {
        schema: SCHEMA_VERSION.to_string(),
        scenario: sc.clone(),
        field_summary,
        garding,
        viscosity,
        kernel_diagnostics,
        lower_bound: lower,
        aronson,
        cks,
        verdicts,
        profile,
        timing_ms,
    };
    Ok((
        report,
        PipelineArtifacts {
            field,
            h_op,
            delta,
            kernels,
        },
    ))
}
