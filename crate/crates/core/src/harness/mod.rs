//! Configuration, episode records, evaluation campaigns and result files.

pub mod campaign;
pub mod config;
pub mod episode;
pub mod report;

pub use campaign::{episode_seed, run_campaign, CampaignOutput, CellResult, ControllerKind, ResultsTable};
pub use config::{Algorithm, CampaignMode, CampaignSection, Config, ControllerSpec, CONFIG_VERSION};
pub use episode::{run_full_pipeline, run_insertion, ApproachLog, EpisodeRecord, RecordOutcome, StepLog};
pub use report::{
    read_curve_csv, read_episodes_jsonl, read_results_csv, report, results_grid, write_curve_csv, write_episodes_jsonl,
    write_results_csv, ReportOptions,
};
