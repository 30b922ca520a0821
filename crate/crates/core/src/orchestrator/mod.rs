//! The closed loop: baseline training and serving, attack injection,
//! monitor-triggered defense and redeployment, backed by the model volume
//! and an append-only event log.

pub mod grid;
pub mod pipeline;
pub mod state;
pub mod volume;

pub use grid::{read_csv, run_grid, to_csv, write_csv, GridOutcome, ResultRow, CSV_HEADER, REFERENCE_GRID};
pub use pipeline::{
    run_attack, run_defense, run_normal, run_scenario, whitebox_accuracy, DefenseResult, ScenarioConfig,
    ScenarioOutcome, Workspace,
};
pub use state::{read_event_log, Event, EventBody, PipelineState, State};
pub use volume::{decode_params, encode_params, ModelMeta, ModelRecord, ModelRole, ModelVolume, NewModel};
