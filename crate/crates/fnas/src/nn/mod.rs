//! Dense numeric substrate: parameter containers, MLP/LSTM forward passes,
//! tape-based reverse-mode gradients, Adam, finite-difference verification,
//! and the binary checkpoint format.

pub mod adam;
pub mod checkpoint;
pub mod gradcheck;
pub mod kernels;
pub mod lstm;
pub mod mlp;
pub mod params;
pub mod tape;

pub use adam::{apply_update, step_in_place, AdamConfig, AdamState};
pub use gradcheck::{check_against, check_gradients, GradCheckReport};
pub use lstm::{LstmSpec, LstmState};
pub use mlp::{Activation, MlpSpec};
pub use params::{Layout, LayoutBuilder, Params, Segment};
pub use tape::{eval_loss, grad, tape_over, value_and_grad, ParamLeaves, Tape, Var};
