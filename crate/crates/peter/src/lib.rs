//! PETER: a personalized transformer that, given a user ID and an item ID
//! (plus optional feature words), jointly generates a natural-language
//! explanation, predicts a bag of context words, and predicts a rating.
//!
//! The crate is organized along the pipeline:
//!
//! - [`autodiff`]: reverse-mode tape engine over dense f64 tensors
//! - [`corpus`]: dataset loading, vocabulary, splits, sequence encoding,
//!   batching, and a synthetic-corpus generator
//! - [`model`]: embeddings, masked transformer layers, and the three task
//!   heads
//! - [`training`]: multi-task loss, SGD loop with lr-decay early stopping,
//!   and ablation switches
//! - [`inference`]: greedy decoding, rating prediction, context-word reports
//! - [`evaluation`]: BLEU, ROUGE, USR, FMR, FCR, DIV, RMSE, MAE
//! - [`cli`]: the `peter` command-line entry point

pub mod autodiff;
pub mod cli;
pub mod corpus;
pub mod evaluation;
pub mod inference;
pub mod model;
pub mod training;
