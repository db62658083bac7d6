//! Ego-attention deep Q-learning for negotiating an unsignalized intersection.
//!
//! - [`sim`]: kinematic-bicycle traffic with IDM car following and priority yielding.
//! - [`obs`]: list-of-features and occupancy-grid encodings of a scene.
//! - [`nn`]: FCN, CNN and ego-attention Q-networks with hand-written gradients.
//! - [`dqn`]: replay memory, epsilon-greedy exploration and the training loop.

// Validation uses `!(x > 0.0)` so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod dqn;
pub mod nn;
pub mod obs;
pub mod sim;
