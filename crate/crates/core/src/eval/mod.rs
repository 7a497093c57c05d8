//! Evaluation metrics and timing.

pub mod bench;
pub mod metrics;

pub use bench::{bench, BenchReport};
pub use metrics::{
    ced, ced_resampled, default_thresholds, landmark_errors, nme, pose_table, summarize_bins,
    write_records_csv, yaw_from_camera, BBox, BinStats, CedCurve, NmeMode, NmeRecord, PoseBin,
    PoseTable,
};
