//! Preprocessing of recorded pose logs into local-frame training pairs.

mod pairs;
mod savgol;
mod split;

pub use crate::geometry::wrap_angle_diff;
pub use pairs::{
    build_pairs, finite_diff_velocities, local_velocities, smooth_poses, to_global_frame,
    to_local_frame, PoseLog, SmoothingConfig, TrainingPair,
};
pub use savgol::{savgol_smooth, SavitzkyGolay};
pub use split::{
    carve_validation, read_pairs_jsonl, split_and_save, split_dataset, write_pairs_jsonl,
    DatasetManifest, FileEntry, SplitConfig, SplitDataset, ValidationEntry, ValidationTrajectory,
    MANIFEST_FILE,
};
