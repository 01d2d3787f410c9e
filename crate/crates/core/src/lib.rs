//! Social-pattern analytics over egocentric photo-stream features.
//!
//! The pipeline starts from pre-extracted per-frame observations (face
//! geometry, head orientation, expression probabilities, scene descriptors)
//! and runs four stages:
//!
//! 1. [`signals`] turns observations into multi-dimensional time-series,
//!    one per tracked person (detection) or per sequence (categorization).
//! 2. [`lstm`] classifies variable-length time-series with a from-scratch
//!    gated recurrent network trained by full backpropagation through time.
//! 3. [`cluster`] groups face-sets across events so recurring people get a
//!    stable identity.
//! 4. [`patterns`] computes frequency / trend / diversity / duration
//!    statistics and exports a temporal interaction map.
//!
//! [`ingest`] defines the on-disk dataset format, [`augment`] provides
//! label-preserving eigen-perturbation of training series, [`synth`]
//! generates ground-truthed synthetic corpora for end-to-end verification,
//! and [`bundle`] ties fitted transforms and network weights into a single
//! portable model document.

pub mod augment;
pub mod bundle;
pub mod cluster;
pub mod ingest;
pub mod linalg;
pub mod lstm;
pub mod patterns;
pub mod signals;
pub mod synth;
