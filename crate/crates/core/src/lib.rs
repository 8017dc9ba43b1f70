//! Exact-likelihood normalizing flows built from invertible couplings.
//!
//! The crate is organized around a small dense-tensor engine with
//! reverse-mode autodiff ([`tensor`], [`tape`]), the invertible layer set
//! ([`layers`]), the multi-scale flow model ([`model`]), truncated-SVD
//! image preprocessing ([`svd`]), dataset ingestion ([`data`]), and the
//! NLL training loop plus evaluation metrics ([`train`]).

pub mod checkpoint;
pub mod conv;
pub mod data;
pub mod error;
pub mod layers;
pub mod linalg;
pub mod model;
pub mod oracle;
pub mod reshape;
pub mod scalar;
pub mod svd;
pub mod tape;
pub mod tensor;
pub mod train;

pub use error::{FlowError, Result};
pub use layers::{ConvKind, CouplingKind, LayerOutput};
pub use model::{ArchitectureConfig, FlowModel, LatentParts};
pub use scalar::Scalar;
pub use svd::SvdConfig;
pub use tape::{ParamStore, Tape, Var};
pub use tensor::Tensor;
