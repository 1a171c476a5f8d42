//! Losses, Adam, the fitting loop and gradient verification.

pub mod adam;
pub mod fit;
pub mod gradcheck;
pub mod loss;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use fit::{fit, fit_step, fit_until, FitConfig, FitSchedule, FitState, FitView, Phase, TraceRow};
pub use gradcheck::{finite_difference_check, GradOp, GradcheckReport, Precision};
pub use loss::{loss_l2, ray_loss, LossTerms, LossWeights, PixelTarget, TargetImage};
