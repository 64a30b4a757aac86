//! Soft actor-critic: losses, temperature tuning, target tracking, replay
//! storage and image augmentation.

mod augment;
mod buffer;
mod sac;

pub use augment::{augment, AugmentParams};
pub use buffer::{ReplayBuffer, StoredTransition, Transition};
pub use sac::{
    act, actor_loss, actor_loss_fwd, alpha_update, critic_loss, critic_loss_fwd, critic_target, squash_fwd,
    squashed_log_prob, standard_normal, target_update, Batch, SacHyper,
};
