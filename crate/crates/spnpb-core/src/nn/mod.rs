//! Differentiable building blocks and optimizers.

pub mod layers;
pub mod optim;
pub mod tape;

#[cfg(test)]
pub(crate) mod testing;

pub use layers::{sigmoid, DenseLayer, LstmCell, LstmState};
pub use optim::{AdamState, MomentumState};
pub use tape::{Gradients, ParamId, Tape, Var};
