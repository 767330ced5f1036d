//! Cognitive internet-of-nuclear-things: a probabilistic asset twin for a PWR
//! startup and a game-theoretic offloading layer for its subsystems.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod twin;
pub mod channel;
pub mod offload;
pub mod game;
pub mod agent;
pub mod harness;
