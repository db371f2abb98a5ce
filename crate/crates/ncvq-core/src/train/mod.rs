//! Reproducible jobs: stage-1 and stage-2 training, generation, evaluation
//! and reporting, plus checkpoint and figure plumbing.

pub mod checkpoint;
pub mod evaluate;
pub mod plot;
pub mod stage1;
pub mod stage2;

pub use checkpoint::{
    check_stage_link, load_stage1, load_stage2, RunMeta, Stage1Artifacts, Stage2Artifacts,
};
pub use evaluate::{
    generate, load_eval_context, report_table, run_eval, run_generate, write_samples_file,
    GenerationResult,
};
pub use stage1::{run_stage1, EpochRecord, Stage1RunResult, Stage1Trainer, StepLosses};
pub use stage2::{run_stage2, tokenize_split, Stage2RunResult, Stage2Trainer};
