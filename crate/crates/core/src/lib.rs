//! Finite-truncation construction of Fourier-decaying measures on Diophantine
//! limsup sets, with exact window spectra, divisor combinatorics, and
//! dimension estimators.

pub mod bump;
pub mod dimension;
pub mod divisors;
pub mod error;
pub mod grid;
pub mod measure;
pub mod qsets;
pub mod scenario;
pub mod spectrum;
pub mod verify;

pub use dimension::{DimDescriptor, DimPrediction, DimensionReport, Rational};
pub use error::{Result, SalemError};
pub use grid::{FourierGrid, SpatialGrid};
pub use measure::{Envelope, MeasureBuild, MeasureLevel};
pub use qsets::{QSetKind, QSetSpec};
pub use scenario::{CertReport, HSpec, PsiSpec, Scenario, ScenarioParams};
pub use spectrum::{EnvelopeFit, GriddedSpectrum, SpectrumTable, TailTable};
