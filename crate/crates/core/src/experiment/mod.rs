//! Configured runs, reports, the gradient-check suite and ablation sweeps.

mod ablation;
mod config;
mod gradcheck;
mod run;

pub use ablation::{run_variants, AblationRow, AblationTable, MeanStd, SeedResult, Variant};
pub use config::{
    apply_override, load_synthetic_config, DataSection, ModelSection, ObjectiveSection, OptimSection, ReferenceSection,
    RunConfig, OUT_DIR_ENV,
};
pub use gradcheck::{run_gradcheck_suite, GradcheckReport, GradcheckRow, DEFAULT_TOLERANCE};
pub use run::{
    curves_csv, evaluate_checkpoint, run_prepared, run_training, write_run, CheckpointEval,
    DatasetSummary, ModalitySummary, PreparedData, RunOutcome, RunReport, Split, REPORT_FORMAT,
    REPORT_VERSION,
};
