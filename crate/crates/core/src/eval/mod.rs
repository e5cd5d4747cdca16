//! Evaluation protocol: error statistics, occlusion, experiments, reports.

mod experiment;
mod occlusion;
mod report;
mod stats;

pub use experiment::{run_experiment, run_shoulder_experiment, Experiment, ExperimentOptions, FrameRecord};
pub use occlusion::{apply_occlusion, occlusion_mask, OcclusionExtent, OcclusionKind};
pub use report::{
    config_hash, emit_report, parse_report, records_to_jsonl, report_to_jsonl, report_to_table, ReportEntry,
    ReportFiles, STD_NOTE,
};
pub use stats::{
    angle_error, angular_errors, frame_is_accurate, localization_error, stats_from_errors, ErrorStats, MeanStd,
    ACCURACY_THRESHOLD_DEG,
};
