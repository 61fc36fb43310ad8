//! Aggregate population models: the first-order price-feedback model and the
//! three-stage Markov bin model.

pub mod bins;
pub mod simple;
pub mod spectrum;
pub mod transition;

pub use bins::{assign_bin, BinDistribution, BinGrid, OpSet};
pub use simple::{simple_classify, simple_equilibrium, simple_trajectory, Equilibrium, SimpleAggModel, Stability};
pub use spectrum::{classify_spectrum, eigenvalues, max_abs_imag, spectrum, SpectrumClass};
pub use transition::{
    b_off, b_on, identify_transition, propagate, reset_matrix, split, split_and_reset, Conditioning, TransitionCounts,
    TransitionMeta, TransitionModel,
};
