//! Optimization: loss terms, Adam, checkpoints, and the training loop.

pub mod adam;
pub mod checkpoint;
mod loop_;
pub mod loss;

pub use adam::{adam_step, lr_schedule, AdamState, BETA1, BETA2, EPS};
pub use checkpoint::{Checkpoint, MAGIC, VERSION};
pub use loop_::{
    batch_gradient, build_model_spec, make_checkpoint, restore_checkpoint, train_loop, LogRecord,
    TrainConfig, TrainOutput,
};
pub use loss::{
    eikonal_term_grad, loss_color, loss_color_grad, loss_eikonal, loss_mask, loss_normal_reg,
    mask_term, normal_reg_term_grad, total_loss, LossParts, LOG_CLAMP,
};
