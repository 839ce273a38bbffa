//! Topic-model learners for LDA and PLSA over a shared set of count
//! statistics.
//!
//! Six learning algorithms are provided: maximum likelihood (PLSA EM), MAP,
//! variational Bayes, collapsed variational Bayes (CVB and its zeroth-order
//! variant CVB0) and collapsed Gibbs sampling. All of them read and write the
//! same [`CountMatrices`], which makes it straightforward to compare them
//! under matched hyperparameters.
//!
//! The crate is organised bottom-up:
//!
//! * [`corpus`]: UCI bag-of-words IO, train/validation/test splits and
//!   token-level fold-in halves.
//! * [`model_state`]: counts, responsibilities, initialisation and the
//!   point estimators used for prediction.
//! * [`batch`]: ML, MAP and VB sweeps with frozen counts.
//! * [`collapsed`]: CGS, CVB and CVB0 with in-place token updates, the
//!   parallel CVB0 sweep and an exact enumeration oracle.
//! * [`hyperopt`]: Minka fixed-point updates and validation grid search.
//! * [`evaluation`]: fold-in, perplexity, classification metrics, timing.
//! * [`train`]: the training loop that ties the pieces together.
//!
//! Data-parallel loops run on rayon when the `parallel` feature is enabled
//! (the default) and fall back to plain iterators otherwise; see [`exec`].

pub mod batch;
pub mod collapsed;
pub mod corpus;
pub mod error;
pub mod evaluation;
pub mod exec;
pub mod hyperopt;
pub mod model_state;
pub mod rng;
pub mod special;
pub mod synth;
pub mod trace;
pub mod train;

pub use corpus::{Corpus, Entry, FoldInSplit, SplitCorpus};
pub use error::{Error, Result};
pub use exec::Exec;
pub use model_state::{
    CountMatrices, EstimatorTag, GammaPrior, Hyperparams, Layout, Responsibilities,
    TopicAssignments, TopicEstimates, VarianceCounts,
};
pub use train::{Algorithm, TrainConfig, TrainedModel};
