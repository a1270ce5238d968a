//! Sliding-window inference, detection metrics and evaluation protocols.

mod inference;
mod metrics;
mod protocol;
pub mod report;

pub use inference::{score_entries, score_entry, sliding_windows, video_score, EvalRecord, Window};
pub use metrics::{auc, average_precision, metrics, Metrics};
pub use protocol::{
    ablation_tag, run_protocol, split_by_video, ProtocolKind, ProtocolOutput, ProtocolSpec, Report, RunRow, Stat,
    SummaryRow,
};
