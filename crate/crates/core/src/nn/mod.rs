//! Minimal neural-network toolkit: a reverse-mode autodiff graph, dense
//! layers with optional spectral normalization, batch normalization,
//! dropout, binary cross-entropy and Adam.

mod forward;
mod gradcheck;
mod graph;
mod params;
mod spec;
pub mod spectral;

pub use forward::{forward, forward_eval, predict, Mode, Tracking, NORM_EPS, NORM_MOMENTUM};
pub use gradcheck::grad_check;
pub use graph::{bce_term, Gradients, Graph, NormStats, ObservedStats, Var, BCE_EPS};
pub use params::{
    init_params, reinit, AdamConfig, Param, ParamStore, RunningStats, SpectralState, StoreId,
};
pub use spec::{Layer, NetworkSpec, DEFAULT_DROPOUT, DEFAULT_LEAKY_SLOPE};
pub use spectral::spectral_normalize;
