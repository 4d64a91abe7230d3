//! Loss, optimizer, schedule, training loop, metrics, latency bench and
//! activation-map tooling.

pub mod adam;
pub mod bench;
pub mod cam;
pub mod loss;
pub mod metrics;
pub mod schedule;
pub mod trainer;

pub use adam::{AdamConfig, AdamState};
pub use bench::{bench_latency, LatencyStats};
pub use cam::{score_cam, score_cam_channel_weights};
pub use loss::{cross_entropy_loss, LossOutput, IGNORE_INDEX};
pub use metrics::{evaluate, majority_baseline_miou, MetricsReport};
pub use schedule::cosine_lr;
pub use trainer::{train, EpochLog, TrainConfig, TrainResult};
