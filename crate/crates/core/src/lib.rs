//! Vendor linking for escort-ad corpora.
//!
//! The pipeline runs from raw ads to evaluation reports:
//!
//! * [`records`] parses ads, builds the `title [SEP] description` text,
//!   extracts phone identifiers and masks PII.
//! * [`communities`] turns shared identifiers into vendor labels.
//! * [`embedder`] produces or imports embeddings and fuses modalities.
//! * [`objectives`] holds CE, SupCon, Triplet and NT-Xent losses with
//!   analytic gradients and a finite-difference checker.
//! * [`head`] trains a projection + classifier head with AdamW.
//! * [`index`] is an exact cosine top-k search.
//! * [`metrics`] computes MRR@10, R-Precision@X and Macro-F1@X.
//! * [`eval`] orchestrates identification, retrieval and OOD experiments.
//! * [`graph`] exports query-centred similarity graphs.
//! * [`diagnostics`] runs seeded finite-difference checks of every loss.

pub mod communities;
pub mod diagnostics;
pub mod embedder;
pub mod error;
pub mod eval;
pub mod graph;
pub mod head;
pub mod index;
pub mod io;
pub mod linalg;
pub mod metrics;
pub mod objectives;
pub mod records;

pub use communities::{build_communities, filter_min_ads, VendorCommunities};
pub use embedder::{EmbeddingMatrix, FusionStrategy, HashEmbedConfig};
pub use error::{Error, Result};
pub use head::{HeadParams, Objective, TrainConfig, TrainHistory};
pub use index::FlatIndex;
pub use linalg::Matrix;
pub use metrics::{MetricReport, RetrievalRun};
pub use records::{DatasetSplit, MaskedAd, MultimodalSample, RawAd, Region};

/// Crate version, echoed into reports.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
