//! Quality-diversity neuroevolution toolkit.
//!
//! The centerpiece is a MAP-Elites archive driven by evolution-strategies
//! updates: each generation an ES step improves one archive cell's champion
//! for either fitness (exploit) or behavioral novelty (explore), and every
//! offspring evaluated along the way is offered to the archive. Baseline
//! algorithms (map-based GA, novelty-search ES variants) share the same
//! building blocks, and a Gaussian-process adaptation routine can search a
//! finished archive for behaviors that survive damage.

pub mod adaptation;
pub mod baselines;
pub mod config;
pub mod env;
pub mod error;
pub mod es;
pub mod evaluate;
pub mod map;
pub mod novelty;
pub mod persist;
pub mod policy;
pub mod runner;
pub mod scheduler;
pub mod seeds;

pub use error::MeesError;
