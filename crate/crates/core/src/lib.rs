//! Discrete choice modeling: a columnar choice dataset, an `(observable|variation)`
//! formula language, and regularized maximum-likelihood estimation of
//! conditional logit and two-level nested logit models.

pub mod bench;
pub mod clogit;
pub mod dataset;
pub mod error;
pub mod estimation;
pub mod formula;
pub mod ingest;
pub mod nested;
pub mod optim;
pub mod params;
pub mod synth;

pub use clogit::ConditionalLogit;
pub use dataset::{
    Availability, CategoryPartition, ChoiceDataset, DatasetBuilder, JointDataset, ObsVariation,
    Observable, Precision, Records,
};
pub use error::{Error, Result};
pub use nested::{Level, NestStructure, NestedLogit};
pub use formula::{CoefVariation, ModelSpec, Norm, Regularization, Term};
pub use params::{Init, ParamStore};
pub use estimation::{fit, standard_errors, CoefRow, EarlyStop, Estimable, FitOptions, FitResult, Optimizer};
