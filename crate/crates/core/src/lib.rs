//! Dense semantic correspondence between images of the same visual class.
//!
//! The pipeline trains one linear discriminant (LDA) exemplar classifier per
//! reference-image pixel against stationary negative statistics gathered from
//! an image corpus, evaluates the classifiers as sliding-window unaries with
//! calibrated posterior probabilities, and solves a regularized discrete flow
//! objective between the two images. A Mahalanobis-distance harness scores
//! predicted correspondences against multi-annotator keypoint labels.
//!
//! Module map:
//! - [`image`]: grayscale image loading and the max-dimension resize rule.
//! - [`sift`]: dense per-pixel SIFT feature maps.
//! - [`stats`]: streaming stationary statistics over a corpus.
//! - [`covariance`]: structured covariance assembly, regularization, and
//!   factorization.
//! - [`exemplar`]: per-pixel classifier banks, likelihood/posterior maps, and
//!   the L1 baseline unary.
//! - [`flow`]: windowed cost volumes and coarse-to-fine belief-propagation
//!   inference.
//! - [`eval`]: annotation ingestion, Mahalanobis scoring, CDF curves, and
//!   baselines.
//! - [`synth`]: seeded synthetic corpora and benchmark pairs for desk-scale
//!   testing.
//! - [`io`]: binary file formats (SCOV stats, SFLO flows, SFEA features, PGM
//!   dumps).

pub mod covariance;
pub mod eval;
pub mod exemplar;
pub mod flow;
pub mod image;
pub mod io;
pub mod linalg;
pub mod sift;
pub mod stats;
pub mod synth;
