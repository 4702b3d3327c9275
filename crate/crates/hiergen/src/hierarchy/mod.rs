//! Hierarchical super-resolution: the direct encoder-decoder stage and
//! the iterative local-parallel refinement stage, plus the refinement
//! schedule.

pub mod direct_sr;
pub mod iterative_sr;
pub mod schedule;

pub use direct_sr::{decoder_logits, direct_sr, encode_low_grid, DirectSrRun};
pub use iterative_sr::{iterative_sr, IterativeSrRun, IterativeSrStats};
pub use schedule::{
    build_lopar_schedule, window_col, window_row, KeepPattern, LoParSchedule, PlanKind,
    COMPRESSED_ITERATIONS, KEPT,
};
