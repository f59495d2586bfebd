//! Simulated fiber-to-fiber coupling stage with Poisson photon counting.
//!
//! [`OpticalStage`] is the raw move/measure interface used by the heuristic
//! aligner; [`AlignmentEnv`] wraps the same physics as a reset/step MDP.

mod coupling;
mod mdp;
mod measure;

pub use coupling::{wrap_angle, CouplingModel, Pose};
pub use mdp::{
    write_trajectory_csv, AlignmentEnv, AlignmentState, EnvConfig, MdpConfig,
    ObservationNormalizer, RewardConfig, StartPose, StepAction, StepInfo, StepOutcome,
    TrajectoryRow, ACTION_DIM, FRAME_LEN, THETA_STEP_MAX,
};
pub use measure::{measure, poisson_counts, MeasurementRecord, OpticalStage};
