//! Codebook-guided annotation of negotiation reports into a longitudinal
//! interaction network of (sender, receiver, relation, topic) quadruplets.

pub mod codebook;
pub mod corpus;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod finetune;
pub mod gateway;
pub mod manifest;
pub mod model;
pub mod pipeline;
pub mod records;
pub mod rules;
pub mod topics;

pub use error::{Error, Result};
pub use model::{
    Entity, EntityKind, EntitySpace, Interaction, InteractionKey, ParagraphRef, Party, Provenance,
    RelationType, TopicId,
};
