//! Debiased cross-modal matching of background music to micro-videos.
//!
//! A teacher VAE trained on clean professionally matched pairs guides a
//! student VAE trained on biased uploader selections. The student's music
//! embedding is concatenated with an averaged genre-preference embedding
//! (backdoor adjustment over the uploader's genre preference), and rankings are
//! evaluated with popularity-weighted Recall/NDCG on intervened test sets.

pub mod crossmodal;
pub mod datamodel;
pub mod error;
pub mod evalkit;
pub mod experiment;
pub mod nncore;
pub mod student;
pub mod synthgen;
pub mod teacher;
pub mod training;

pub use error::{Error, Result};
