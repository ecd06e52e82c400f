//! Label embeddings learned jointly from a relational co-occurrence matrix
//! and one or more partially observed label–attribute tables.
//!
//! The relational term is the explicit-matrix-factorization form of
//! skip-gram with negative sampling; the descriptive term is a masked
//! least-squares factorization whose attribute embedding carries an
//! elastic-net penalty and is solved with FISTA. Training alternates
//! gradient steps on the context and label embeddings with a FISTA solve
//! for the attribute embedding.
//!
//! Modules, bottom up:
//!
//! * [`datamodel`]: vocabularies, matrices, hyperparameters, persistence
//! * [`ingest`]: relation/hierarchy/attribute readers and the negative-sample bound
//! * [`relational`]: the co-occurrence loss and its gradients
//! * [`descriptive`]: the masked attribute loss, elastic-net prox and FISTA
//! * [`trainer`]: alternating minimization, single and multi-context
//! * [`eval`]: retrieval, correlation clustering and embedding description
//! * [`cli`]: the `phcle` command-line front end

pub mod cli;
pub mod datamodel;
pub mod descriptive;
pub mod error;
pub mod eval;
pub mod ingest;
pub mod relational;
pub mod trainer;

pub use datamodel::{
    AttributeContext, CooccurrenceMatrix, EmbeddingModel, HyperParams, InitScheme,
    NegativeBoundMatrix, StepRule, Vocabulary, VocabularyMaps,
};
pub use error::{Error, Result};
