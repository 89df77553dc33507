//! Transformer-based Q-networks (TBQN) for classic-control reinforcement learning.
//!
//! The crate is organised bottom-up:
//!
//! - [`tensor`]: a small reverse-mode autodiff engine with the operations,
//!   initialisers, Adam and global-norm clipping the network needs.
//! - [`qnet`]: the Q-network itself: input projection, sinusoidal positional
//!   encoding, a stack of encoder layers of one of six variants and a Q-value head.
//! - [`envs`]: native CartPole, MountainCar and Acrobot plus observation history stacking.
//! - [`agent`]: replay buffer, target network, TD targets, losses and the training loop.
//! - [`hpo`]: random and TPE sampling, study execution and MDI parameter importance.

pub mod agent;
pub mod envs;
pub mod error;
pub mod hpo;
pub mod qnet;
pub mod rng;
pub mod tensor;

pub use error::{Result, TbqnError};
pub use rng::RngState;
