//! Synthetic benchmarks: scene generation, parameter sweeps and config
//! files.

mod config;
mod scene;
mod sweep;

pub use config::{load_pipeline_config, parse_pipeline_config, pipeline_config_from_table};
pub use scene::{generate_scene, PairKind, Scene, SceneSpec};
pub use sweep::{
    load_scene_spec, load_sweep_file, parse_sweep_file, run_sweep, run_trial, SummaryRow, SweepFile, SweepReport,
    SweepRow, SweepSpec, SweepVariable, TimingRow, TrialStatus,
};
