//! Forecasting future suicidality levels from timelines of annotated posts
//! written by people with bipolar disorder.
//!
//! The pipeline runs corpus -> timelines -> embeddings -> multi-task model ->
//! training and evaluation, with cohort statistics in [`analysis`].

pub mod analysis;
pub mod corpus;
pub mod encoder;
pub mod model;
pub mod timeline;
pub mod trainer;
