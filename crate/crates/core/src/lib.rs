//! Sparse conditional-dependence graphs for mixed continuous and discrete
//! data, learned with penalized mid-quantile neighborhood regressions.
//!
//! Estimation runs in two steps per node. Step one fits a conditional
//! mid-CDF from threshold logistic regressions; step two solves a LASSO
//! penalized implicit equation for the conditional mid-quantile at each level
//! of a quantile grid. Edges follow an OR rule across directions and levels.

pub mod analysis;
pub mod benchmark;
pub mod error;
pub mod mgm;
pub mod midcdf;
pub mod model;
pub mod penalized;
pub mod selection;

pub use error::{QmgmError, Result};
pub use model::{
    CoefficientCube, Dataset, EdgeSign, EstimatedGraph, Link, QuantileGrid, VariableKind, VariableSpec,
};
pub use selection::{fit_qmgm, select_graph, QmgmConfig, ResidualScale, SelectionCriterion};
