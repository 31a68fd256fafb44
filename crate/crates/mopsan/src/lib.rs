//! A self-contained laboratory for cooperative reinforcement learning with
//! spiking networks: a two-cook gridworld, a surrogate-gradient spiking
//! actor-critic, a transformer context encoder, a mixture-of-personality
//! partner model with a determinantal diversity bonus, and the training and
//! evaluation machinery that ties them together.
//!
//! Everything is written against a small reverse-mode autodiff tape over
//! dense `f64` matrices; no GPU or external ML runtime is involved. Runs are
//! deterministic given a seed.
//!
//! The `examples/` directory is the front door; each example exercises one
//! capability end to end:
//!
//! ```text
//! cargo run -p mopsan --example autodiff_basics      # tape, gradients, optimizer
//! cargo run -p mopsan --example lif_dynamics         # spiking neuron traces
//! cargo run -p mopsan --example cookgrid_playthrough # scripted episode in the gridworld
//! cargo run -p mopsan --example context_masking      # history encoder and padding
//! cargo run -p mopsan --example personality_mixture  # partner mixture and diversity bonus
//! cargo run -p mopsan --example train_quickstart     # short end-to-end training run
//! cargo run -p mopsan --example crossplay_demo       # cross-play evaluation matrix
//! ```
//!
//! The `mopsan` binary wraps the same library behind `train`, `crossplay`,
//! `ablate`, and `report` subcommands for batch use.

pub mod autodiff;
pub mod config;
pub mod context;
pub mod dpp;
pub mod env;
pub mod eval;
pub mod mop;
pub mod snn;
pub mod trainer;
