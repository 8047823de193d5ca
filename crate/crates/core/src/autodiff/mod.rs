//! Reverse-mode scalar graph and small dense networks.

pub mod net;
pub mod tape;

pub use net::{
    accumulate_gradient, forward, forward_with_tangents, init_params, input_derivatives,
    read_checkpoint, write_checkpoint, Activation, EvalRecord, NetworkParams, NetworkSpec,
};
pub use tape::{Gradients, Op, Tape, Var};
