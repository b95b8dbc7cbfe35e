//! Partially observable hidden Markov models (POHMM).
//!
//! A POHMM is a hidden Markov model whose starting, transition and emission
//! parameters are conditioned on an observed event type, such as the key
//! pressed in a keystroke sequence. Event types unseen during training fall
//! back to marginal distributions with the event type summed out.
//!
//! The crate covers inference ([`inference`]), Baum-Welch estimation with
//! parameter smoothing ([`estimation`]), a Monte Carlo goodness-of-fit test
//! ([`gof`]), keystroke ingestion ([`dataset`]), biometric evaluation
//! ([`biometric`]) and the consistency simulations ([`simulation`]).

pub mod benchmark;
pub mod biometric;
pub mod dataset;
pub mod emissions;
pub mod error;
pub mod estimation;
pub mod event_chain;
pub mod gof;
pub mod inference;
pub mod model;
pub mod model_file;
pub mod rng;
pub mod simulation;
pub mod stats;

pub use emissions::{EmissionKind, EmissionParams, SCALE_FLOOR};
pub use error::{PohmmError, Result};
pub use event_chain::{fit_event_chain, EventAlphabet, EventChain};
pub use inference::{ForwardState, PosteriorTables};
pub use model::{ObservationSequence, PohmmParams};
