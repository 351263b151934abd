//! Dense networks, the two insertion trainers and the visual-servoing
//! baseline.

pub mod baseline;
pub mod features;
pub mod nn;
pub mod offpolicy;
pub mod onpolicy;
pub mod replay;
pub mod rollout;

pub use baseline::vs_baseline;
pub use features::{featurize, featurize_raw, FeatureVector, FEATURE_DIM};
pub use nn::{gradient_check, Activation, Adam, Dense, Mlp, Trace};
pub use offpolicy::{train_offpolicy, OffPolicyConfig, TrainReport};
pub use onpolicy::{train_onpolicy, OnPolicyConfig};
pub use replay::{Experience, ReplayBuffer};
pub use rollout::{
    curve_ends, BanditEnv, Controller, CurvePoint, InsertionTask, PolicyController, PolicyParams, RlEnv, Transition,
    VsController, POLICY_VERSION,
};
