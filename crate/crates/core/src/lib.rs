//! Disassociation-based km-anonymization of set-valued data.
//!
//! Records are clustered horizontally (`horizontal`), each cluster is split
//! vertically into record chunks, a term chunk, and, after refining, shared
//! chunks spanning merged clusters (`vertical`, `refine`), and the result is
//! published as a cluster forest (`pipeline`, `model`). `verify` audits a
//! published form against the anonymity guarantee, `oracle` proves or
//! refutes it by enumerating consistent originals, `reconstruct` samples
//! plausible originals back out, and `metrics` prices the information loss.

pub mod dataset;
pub mod error;
pub mod horizontal;
pub mod metrics;
pub mod model;
pub mod oracle;
pub mod params;
pub mod pipeline;
pub mod reconstruct;
pub mod refine;
pub mod synth;
pub mod testdata;
pub mod verify;
pub mod vertical;

pub use dataset::{Dataset, Record, TermDictionary, TermId};
pub use error::{Error, Result};
pub use model::{ClusterNode, DisassociatedDataset, Joint, Leaf, RecordChunk, SharedChunk};
pub use params::Params;
