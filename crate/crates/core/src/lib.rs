//! Sequential Monte Carlo inference for phylogenetic birth-death models.
//!
//! The crate is organised around a small checkpoint-program contract
//! ([`smc::CheckpointProgram`]) that both inference engines consume:
//!
//! - [`smc::run_bpf`]: the bootstrap particle filter.
//! - [`smc::run_apf`]: the alive particle filter extended to importance
//!   weights, which re-propagates until `N + 1` particles carry a strictly
//!   positive weight and divides by `P_t - 1` in the evidence estimate.
//!
//! Models live in [`models`]: the constant-rate birth-death (CRBD) and
//! binary-state (BiSSE) augmentation programs, plus two toy state-space
//! models with exact answers used to validate the engines. Rates can be fixed,
//! sampled up front from a gamma prior, or marginalised with the conjugate
//! [`delayed::GammaNode`].

pub mod delayed;
pub mod dists;
pub mod models;
pub mod phylo;
pub mod rng;
pub mod smc;

pub use delayed::{GammaNode, RateVar};
pub use models::{
    bisse::{BisseConfig, BisseProgram, BisseState},
    crbd::{AugmentationStats, CrbdConfig, CrbdProgram, CrbdState},
    posterior::{
        mixture_from_batch, posterior_mixture, PosteriorError, PosteriorMixture, RateMixture,
        RatePosteriors,
    },
    toy::{kalman_log_evidence, IndicatorConfig, IndicatorProgram, LgssConfig, LgssProgram},
    GammaPrior, RateSpec, Sampling,
};
pub use phylo::{parse_newick, write_newick, Tree, TreeStats};
pub use rng::{derive_seed, stream, Stream};
pub use smc::{
    batch, batch_map, run_apf, run_bpf, BatchConfig, BatchSummary, CheckpointProgram, Method,
    ModelError, RunRecord, RunResult, SmcError,
};
