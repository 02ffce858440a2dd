//! Chain-of-thought style fingerprinting for language models.
//!
//! A source model's reasoning style is captured by a contrastively trained
//! encoder. Distances between paired responses form a reference
//! distribution, and a suspect model is judged by how far its distance
//! distribution drifts from that reference.

pub mod hashing;

pub mod collect;
pub mod corpus;
pub mod divergence;
pub mod encoder;
pub mod harness;
pub mod stylesim;

pub use collect::{CorpusRole, EndpointConfig, ResponseCorpus, ResponseRecord};
pub use corpus::{CoTQuery, QuerySet, ReasoningQuestion};
pub use divergence::{DecisionRule, DistanceDistribution, VerificationReport, Verdict};
pub use encoder::{EncoderParams, FeatureVector, TrainConfig, Triplet};
pub use harness::{Experiment, MetricsTable, TrialPlan};
pub use stylesim::{SimEndpoint, StyleProfile};
