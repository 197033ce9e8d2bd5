//! Monte-Carlo sweeps over one scene parameter, with CSV and JSON output.

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::Vector3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use toml::{Table, Value};

use super::config::{parse_toml, pipeline_config_from_table, read};
use super::scene::{generate_scene, Scene, SceneSpec};
use crate::error::{Error, Result};
use crate::geometry::RigidTransform;
use crate::metrics::{aggregate, rotation_error, translation_error, SuccessCriteria, TrialRecord};
use crate::pipeline::{register_with_correspondences, Attitude, InsReadings, PipelineConfig, Solver};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepVariable {
    OutlierRatio,
    /// Ground-truth yaw in degrees.
    YawMagnitude,
    /// Translation length in meters, along the base translation direction.
    ViewpointDistance,
    /// Forced number of surviving inliers.
    InlierCount,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub variable: SweepVariable,
    pub values: Vec<f64>,
    pub trials_per_value: usize,
    pub solvers: Vec<Solver>,
    /// Feed the scene's INS reading of the source to the pipeline.
    #[serde(default)]
    pub use_ins: bool,
    #[serde(default)]
    pub criteria: SuccessCriteria,
}

impl SweepSpec {
    pub fn validate(&self) -> Result<()> {
        if self.values.is_empty() || self.solvers.is_empty() || self.trials_per_value == 0 {
            return Err(Error::Spec("sweep needs values, solvers and at least one trial".into()));
        }
        if self.variable == SweepVariable::InlierCount && self.values.iter().any(|v| !(v.fract() == 0.0 && *v >= 1.0)) {
            return Err(Error::Spec("inlier_count values must be positive integers".into()));
        }
        Ok(())
    }

    /// Scene for one (value, trial) cell. Seeds are `base.seed ^ trial`.
    pub fn scene_spec(&self, base: &SceneSpec, value: f64, trial: usize) -> SceneSpec {
        let mut s = base.clone();
        s.seed = base.seed ^ trial as u64;
        match self.variable {
            SweepVariable::OutlierRatio => s.outlier_ratio = value,
            SweepVariable::YawMagnitude => s.yaw_deg = value,
            SweepVariable::ViewpointDistance => {
                let t = Vector3::from(base.translation);
                let dir = if t.norm() > 0.0 { t.normalize() } else { Vector3::x() };
                s.translation = (dir * value).into();
            }
            SweepVariable::InlierCount => s.inlier_floor = Some(value as usize),
        }
        s
    }
}

/// A complete sweep definition as read from a TOML file with `[sweep]`,
/// `[scene]` and `[pipeline]` tables.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepFile {
    pub sweep: SweepSpec,
    pub scene: SceneSpec,
    pub config: PipelineConfig,
}

pub fn parse_sweep_file(text: &str) -> Result<SweepFile> {
    let mut table: Table = text.parse().map_err(|e: toml::de::Error| Error::Spec(e.to_string()))?;
    let mut section = |name: &str| match table.remove(name) {
        None => Ok(Table::new()),
        Some(Value::Table(t)) => Ok(t),
        Some(_) => Err(Error::Spec(format!("[{name}] must be a table"))),
    };
    let (sweep, scene, pipeline) = (section("sweep")?, section("scene")?, section("pipeline")?);
    if let Some(key) = table.keys().next() {
        return Err(Error::Spec(format!("unknown top-level key '{key}'")));
    }
    let sweep: SweepSpec = parse_toml(&sweep.to_string())?;
    sweep.validate()?;
    let scene: SceneSpec = parse_toml(&scene.to_string())?;
    scene.validate()?;
    Ok(SweepFile {
        sweep,
        scene,
        config: pipeline_config_from_table(pipeline)?,
    })
}

pub fn load_sweep_file(path: impl AsRef<Path>) -> Result<SweepFile> {
    parse_sweep_file(&read(path.as_ref())?)
}

pub fn load_scene_spec(path: impl AsRef<Path>) -> Result<SceneSpec> {
    let spec: SceneSpec = parse_toml(&read(path.as_ref())?)?;
    spec.validate()?;
    Ok(spec)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum TrialStatus {
    Ok,
    DegenerateRotation,
    Error,
}

/// One (value, solver, trial) outcome. Errors are in meters and degrees.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub variable: SweepVariable,
    pub value: f64,
    pub solver: Solver,
    pub trial: usize,
    pub seed: u64,
    /// Squared translation error in m².
    pub t_err_sq: f64,
    pub t_err: f64,
    pub r_err: f64,
    pub success: bool,
    pub degenerate: bool,
    pub status: TrialStatus,
}

/// Wall-clock timings, kept apart from the results so those stay
/// reproducible byte for byte.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TimingRow {
    pub value: f64,
    pub solver: Solver,
    pub trial: usize,
    pub pruning_ms: f64,
    pub optimization_ms: f64,
    pub total_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryRow {
    pub value: f64,
    pub solver: Solver,
    pub n: usize,
    /// Mean squared translation error in m².
    pub t_avg: f64,
    pub t_rmse: f64,
    /// Mean rotation error in degrees.
    pub r_avg: f64,
    pub success_rate: f64,
    pub degenerate_rate: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepReport {
    pub rows: Vec<SweepRow>,
    pub timings: Vec<TimingRow>,
    pub summary: Vec<SummaryRow>,
}

impl SweepReport {
    pub fn summary_for(&self, value: f64, solver: Solver) -> Option<&SummaryRow> {
        self.summary.iter().find(|s| s.value == value && s.solver == solver)
    }

    pub fn results_csv(&self) -> Result<String> {
        to_csv(&self.rows)
    }

    pub fn timings_csv(&self) -> Result<String> {
        to_csv(&self.timings)
    }

    pub fn summary_json(&self) -> Result<String> {
        serde_json::to_string_pretty(&self.summary).map_err(|e| Error::Spec(e.to_string()))
    }

    /// Writes `results.csv`, `summary.json` and `timings.csv` into `dir`.
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let files = [
            ("results.csv", self.results_csv()?),
            ("summary.json", self.summary_json()? + "\n"),
            ("timings.csv", self.timings_csv()?),
        ];
        let mut written = Vec::new();
        for (name, body) in files {
            let path = dir.join(name);
            fs::write(&path, body).map_err(|e| Error::io(&path, e))?;
            written.push(path);
        }
        Ok(written)
    }
}

fn to_csv<T: Serialize>(rows: &[T]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(|e| Error::Spec(e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Spec(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Error::Spec(e.to_string()))
}

/// Runs one solver on a generated scene. Failed registrations are scored
/// as the identity transform.
pub fn run_trial(
    scene: &Scene,
    solver: Solver,
    config: &PipelineConfig,
    seed: u64,
    use_ins: bool,
) -> (RigidTransform, TrialStatus, crate::pipeline::StageTimings) {
    let mut cfg = config.clone();
    cfg.solver = solver;
    cfg.ransac.seed = seed;
    if use_ins {
        cfg.ins = Some(InsReadings {
            src: scene.ins,
            tgt: Attitude::default(),
        });
    }
    match register_with_correspondences(&scene.src, &scene.tgt, &scene.corr, &cfg) {
        Ok(r) => (r.transform, TrialStatus::Ok, r.timings),
        Err(e) => {
            let status = if e.is_degenerate_rotation() {
                TrialStatus::DegenerateRotation
            } else {
                TrialStatus::Error
            };
            let identity = RigidTransform::identity().with_degenerate(e.is_degenerate_rotation());
            (identity, status, Default::default())
        }
    }
}

pub fn run_sweep(sweep: &SweepSpec, base: &SceneSpec, config: &PipelineConfig) -> Result<SweepReport> {
    sweep.validate()?;
    base.validate()?;
    config.validate()?;
    let cells: Vec<(f64, usize)> = sweep
        .values
        .iter()
        .flat_map(|&v| (0..sweep.trials_per_value).map(move |t| (v, t)))
        .collect();
    let outcomes: Vec<Vec<(SweepRow, TimingRow)>> = cells
        .par_iter()
        .map(|&(value, trial)| {
            let spec = sweep.scene_spec(base, value, trial);
            let scene = generate_scene(&spec)?;
            let gt = &scene.ground_truth;
            Ok(sweep
                .solvers
                .iter()
                .map(|&solver| {
                    let (est, status, timings) = run_trial(&scene, solver, config, spec.seed, sweep.use_ins);
                    let t_err_sq = translation_error(&est.translation, &gt.translation);
                    let r_err = rotation_error(&est.rotation, &gt.rotation);
                    let row = SweepRow {
                        variable: sweep.variable,
                        value,
                        solver,
                        trial,
                        seed: spec.seed,
                        t_err_sq,
                        t_err: t_err_sq.sqrt(),
                        r_err,
                        success: sweep.criteria.check(t_err_sq.sqrt(), r_err),
                        degenerate: est.degenerate,
                        status,
                    };
                    let ms = |d: std::time::Duration| d.as_secs_f64() * 1e3;
                    let timing = TimingRow {
                        value,
                        solver,
                        trial,
                        pruning_ms: ms(timings.pruning),
                        optimization_ms: ms(timings.optimization),
                        total_ms: ms(timings.total),
                    };
                    (row, timing)
                })
                .collect())
        })
        .collect::<Result<_>>()?;
    let (rows, timings): (Vec<SweepRow>, Vec<TimingRow>) = outcomes.into_iter().flatten().unzip();

    let mut summary = Vec::new();
    for &value in &sweep.values {
        for &solver in &sweep.solvers {
            let records: Vec<TrialRecord> = rows
                .iter()
                .filter(|r| r.value == value && r.solver == solver)
                .map(|r| TrialRecord::new(r.t_err_sq, r.r_err, r.degenerate, &sweep.criteria))
                .collect();
            let rep = aggregate(&records)?;
            summary.push(SummaryRow {
                value,
                solver,
                n: rep.n,
                t_avg: rep.t_avg,
                t_rmse: rep.t_rmse,
                r_avg: rep.r_avg,
                success_rate: rep.success_rate,
                degenerate_rate: rep.degenerate_rate,
            });
        }
    }
    Ok(SweepReport { rows, timings, summary })
}
