//! System-identification search workbench.
//!
//! The crate simulates two benchmark plants (a cascaded two-tank system and a
//! nano-quadrotor), trains a zoo of black-box / grey-box / hybrid sequence
//! models under an immutable cross-validation protocol, and drives
//! configuration search with interchangeable proposers (scripted replay,
//! random search, or an external chat-completion endpoint).

pub mod autodiff;
pub mod evaluate;
pub mod models;
pub mod datamodel;
pub mod search;
pub mod simulate;
pub mod train;
