//! Network architectures, fusion, the trident model and training.

pub mod arch;
pub mod fusion;
pub mod train;
pub mod trident;

pub use arch::{
    branch_feature_layers, build_branch_net, build_ffd_net, build_locnet, head_layers, BranchArch, FfdArch, LocnetArch,
};
pub use fusion::{fuse, fusion_conv_spec, FusionKind, FusionPlan};
pub use train::{
    evaluate_loss, log_to_csv, train, write_log_csv, EpochLog, Loss, TrainConfig, Trainable, FFD_ADADELTA_EPS,
    FFD_ADADELTA_MULTIPLIER,
};
pub use trident::{assemble_poseidon, train_poseidon, truncate_network, FusionHead, TridentModel, BRANCH_NAMES};
