//! Deep co-attention comparator for pairwise image similarity.
//!
//! Two feature maps are encoded co-dependently through an affinity matrix,
//! then a recurrent comparator alternates small attention glimpses between
//! the two attention summaries. Its final hidden state is the relative
//! representation of the pair, scored against every class of an episode.

pub mod coattention;
pub mod comparator;
pub mod data;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod glimpse;
pub mod gradcheck;
pub mod graph;
pub mod head;
pub mod model;
pub mod params;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use graph::{Gradients, Graph, Var};
pub use params::{Bound, ParamId, ParamStore};
pub use tensor::Tensor;
