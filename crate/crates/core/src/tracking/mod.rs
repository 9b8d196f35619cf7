//! Parallel PMB filters for the RIS and non-RIS measurements and their
//! fusion.

pub mod association;
pub mod fusion;
pub mod model;
pub mod pmb;

pub use association::{bp_marginals, exact_marginals, marginals, AssociationMatrix};
pub use fusion::gci_fuse;
pub use model::{measurement_jacobian, measurement_model};
pub use pmb::{pmb_update, Bernoulli, PmbPosterior, PosteriorSnapshot, Region, UpdateContext};
