//! Simulator for microwave-dressed states of a single ¹⁷¹Yb⁺ ion: level
//! structure, dressed-state dynamics under microwave and RF drives, noise
//! ensembles, fluorescence readout and gradient addressing of ion chains.
//!
//! Everything numerical is generic over [`Real`] (`f32` or `f64`); the
//! aliases below fix the scalar for the common case.

pub mod atomphys;
pub mod detection;
pub mod error;
pub mod hamiltonian;
pub mod linalg;
pub mod noise;
pub mod optimize;
pub mod propagator;
pub mod scalar;
pub mod sequence;

pub use error::{Error, Result};
pub use scalar::Real;

pub use atomphys::{IonChainGeometry, MagneticEnvironment, PhysicalConstants, TransitionFrequencies};
pub use detection::{FluorescenceModel, ReadoutCalibration};
pub use hamiltonian::{Basis, DressedState, Drive, Frame, HamiltonianGenerator};
pub use noise::{NoiseModel, NoiseProcess};
pub use propagator::{PropagationControl, StateVector};
pub use sequence::{ExperimentModel, GaussianRampSpec, Protocol, RunOptions, SequenceStep};

pub type Constants = PhysicalConstants<f64>;
pub type Frequencies = TransitionFrequencies<f64>;
pub type Environment = MagneticEnvironment<f64>;
pub type Chain = IonChainGeometry<f64>;
pub type State = StateVector<f64>;
pub type Generator = HamiltonianGenerator<f64>;
pub type Control = PropagationControl<f64>;
pub type Noise = NoiseProcess<f64>;
pub type Model = ExperimentModel<f64>;
pub type Sequence = Protocol<f64>;
pub type Step = SequenceStep<f64>;
pub type Options = RunOptions<f64>;
pub type RampSpec = GaussianRampSpec<f64>;

pub type StateF32 = StateVector<f32>;
pub type GeneratorF32 = HamiltonianGenerator<f32>;
pub type ModelF32 = ExperimentModel<f32>;
