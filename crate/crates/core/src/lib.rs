//! Zero-shot learning by classifier synthesis (SynC) and visual-exemplar
//! prediction (EXEM), with conventional and generalized zero-shot evaluation,
//! class-wise cross-validation and diagnostic analyses.
//!
//! Every numerical routine is generic over [`Scalar`] (`f32` or `f64`);
//! the `*F64` aliases below fix the precision used by the command-line tool.

pub mod analysis;
pub mod baselines;
pub mod cv;
pub mod data;
pub mod error;
pub mod eval;
pub mod exem;
pub mod gzsl;
pub mod linalg;
pub mod pipeline;
pub mod report;
pub mod scalar;
pub mod svr;
pub mod sync;
pub mod synth;

pub use error::{Result, ZslError};
pub use scalar::Scalar;

pub type DatasetF64 = data::Dataset<f64>;
pub type SemanticMatrixF64 = data::SemanticMatrix<f64>;
pub type PcaModelF64 = linalg::PcaModel<f64>;
pub type SyncModelF64 = sync::SyncModel<f64>;
pub type SvrModelF64 = svr::SvrModel<f64>;
pub type ExemplarPredictorF64 = exem::ExemplarPredictor<f64>;
pub type ConseModelF64 = baselines::ConseModel<f64>;
pub type SuCurveF64 = gzsl::SuCurve<f64>;

pub type DatasetF32 = data::Dataset<f32>;
pub type SyncModelF32 = sync::SyncModel<f32>;
pub type ExemplarPredictorF32 = exem::ExemplarPredictor<f32>;
