//! Diffusion engine: noise schedule, forward noising, the weighted training objective
//! with condition dropout, training with EMA, DDIM/DDPM sampling with
//! classifier-free guidance, and masked-denoising editing.

pub mod edit;
pub mod losses;
pub mod sample;
pub mod schedule;
pub mod train;

pub use edit::{edit_masked, EditMask};
pub use losses::{LossBreakdown, LossFlags, LossWeights};
pub use sample::{cfg_predict, ddim_core, ddim_core_observed, ddim_sample, ddpm_step, DdpmRule, SamplerConfig};
pub use schedule::{make_schedule, q_sample, DiffusionSchedule};
pub use train::{train, TrainConfig, TrainItem, TrainOutcome};
