//! Conversational recommendation under vague user preferences.
//!
//! The crate is generic over the float type; [`f32`] is used for training and
//! [`f64`] for numerical checks. Concrete aliases are exported at the root.

pub mod catalog;
pub mod embeddings;
pub mod encoder;
pub mod estimation;
pub mod harness;
pub mod ids;
pub mod nn;
pub mod optim;
pub mod policy;
pub mod qnet;
pub mod replay;
pub mod scalar;
pub mod simulator;

pub use catalog::{Catalog, CatalogError, RawCatalog, SyntheticSpec};
pub use ids::{AttrId, ItemId, TypeId, UserId};
pub use scalar::Scalar;

pub type EmbeddingTable32 = embeddings::EmbeddingTable<f32>;
pub type EmbeddingTable64 = embeddings::EmbeddingTable<f64>;
pub type Agent32 = policy::Agent<f32>;
pub type Agent64 = policy::Agent<f64>;
pub type Knowledge32 = policy::Knowledge<f32>;
pub type Knowledge64 = policy::Knowledge<f64>;
