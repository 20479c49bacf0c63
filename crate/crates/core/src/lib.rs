//! Function-call lexicon extraction and lexical-evolution statistics for
//! corpora of R scripts.
//!
//! The crate is organised as a pipeline of mostly pure stages:
//!
//! - [`ingest`]: repository manifests, content-addressed script storage,
//!   local-directory and HTTP harvesting, repository-level filters.
//! - [`extract`]: the lexical call scanner and per-repository call profiles.
//! - [`catalog`]: package attribution, categories and the occupancy filter.
//! - [`diversity`]: relative abundances, Hill numbers, monthly pooled matrices.
//! - [`ordination`]: Bray-Curtis, PCoA, NMDS, distance-based RDA, hulls.
//! - [`glm`]: penalized IRLS regression engine with B-spline smooths.
//! - [`trends`]: the trend analyses built on top of all of the above.

pub mod catalog;
pub mod diversity;
pub mod extract;
pub mod glm;
pub mod ingest;
pub mod ordination;
pub mod table;
pub mod trends;

pub use catalog::{Catalog, CatalogEntry, Category};
pub use diversity::{AbundanceVector, HillEstimate, HillOrder, MonthlyAbundanceMatrix};
pub use extract::{CallEvent, CallProfile, ScanMode};
pub use glm::{Family, GlmFit, Link, ModelSpec};
pub use ingest::{Exclusion, RepoRecord, ScriptBlob, StudyEpoch};
