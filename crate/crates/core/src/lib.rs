//! Numerical laboratory for SRB measures of partially hyperbolic torus
//! endomorphisms: models, cone checks, hyperbolic times, natural extension
//! pre-orbits, measure construction, certificates, spectra and stability sweeps.
//!
//! Geometric kernels are generic over [`scalar::Real`]; the aliases below fix
//! them to `f64`, which is what the measure and experiment layers use.

pub mod lattice;
pub mod linalg;
pub mod scalar;
pub mod torus;
pub mod models;
pub mod cones;
pub mod hyperbolic_times;
pub mod natural_extension;
pub mod measure;
pub mod parallel;
pub mod srb;
pub mod certify;
pub mod spectrum;
pub mod stability;
pub mod config;
pub mod experiment;

pub type Model = models::MapModel<f64>;
pub type Point = torus::TorusPoint<f64>;
pub type Cone = cones::ConeSpec<f64>;
pub type Frame = linalg::Frame<f64>;
pub type Matrix = linalg::Matrix<f64>;
pub type Vector = linalg::Vector<f64>;

pub use config::{parse_config, ExperimentConfig, Kind};
pub use experiment::{run_experiment, RunManifest};
