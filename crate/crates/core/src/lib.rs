//! Online vibration learning with band-limited multiple Fourier linear
//! combiners (BMFLC).
//!
//! The crate provides
//!
//! * [`filter`]: the BMFLC model and its four weight-update rules (constant
//!   step-size LMS, logistic-damped LMS, RLS and random-walk Kalman),
//! * [`synth`]: procedural voluntary motions and drifting multi-frequency
//!   vibration forces,
//! * [`plant`]: a 1 kHz mass-spring-damper testbed under impedance control
//!   with feedforward vibration cancellation,
//! * [`metrics`]: suppression rate, band-passed error power, spectra and
//!   update-step timing,
//! * [`tuner`]: Nelder-Mead search over step-size parameters.
//!
//! ```
//! use bmflc::filter::{Bmflc, FilterConfig, StepSizeParams, Variant};
//!
//! let config = FilterConfig::new(6.0, 10.0, 100, StepSizeParams::for_variant(Variant::Damped));
//! let mut bmflc = Bmflc::new(config).unwrap();
//! let y = bmflc.predict_at(0.0);
//! bmflc.update(0.1).unwrap();
//! assert_eq!(y, 0.0);
//! ```

pub mod filter;
pub mod metrics;
pub mod plant;
pub mod synth;
pub mod tuner;

pub use filter::{Bmflc, FilterConfig, FilterError, FilterState, FrequencyGrid, StepSizeParams, Variant};
pub use plant::{ControllerParams, ExperimentRecord, PlantParams, PlantState, SimError};
pub use synth::{MotionParams, MotionSpec, SineComponent, SynthParams};
