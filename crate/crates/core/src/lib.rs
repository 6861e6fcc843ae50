//! Detection of lexical semantic change between two time-sliced corpora.
//!
//! The pipeline runs in stages, each in its own module:
//!
//! - [`corpus`] tokenizes dated documents and merges them into two period slices.
//! - [`sgns`] trains skip-gram negative-sampling embeddings per slice or jointly
//!   with word injection.
//! - [`align`] rotates the earlier slice's embeddings onto the later slice.
//! - [`metrics`] scores a word's displacement, either between two static vectors
//!   or between two sets of contextual occurrence vectors.
//! - [`detector`] ranks target words, binarizes the ranking and evaluates it
//!   against gold changed/stable lists.
//! - [`projection`] lays embeddings out in 3-D with exact t-SNE.
//! - [`storage`] persists every artifact under a run registry.

pub mod align;
pub mod corpus;
pub mod detector;
pub mod metrics;
pub mod projection;
pub mod sgns;
pub mod storage;
pub mod synthetic;
