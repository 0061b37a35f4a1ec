//! Group weight transform, schedules, partitioning and sign binarization.

mod partition;
mod schedule;
mod transform;

pub use partition::PartitionSpec;
pub use schedule::{alpha_at_step, zeta_at_step, BinarizeConfig};
pub use transform::{
    interpolate_alpha, interpolate_alpha_backward, sign_binarize, BinarizeState, UMode,
};
