//! Nuclear spin polarization by repeated, noncontinuous measurement of a
//! quantum-dot electron spin.
//!
//! The exact engine splits the electron–nuclear Hilbert space into conserved
//! `J_z` sectors ([`hamiltonian`]), exponentiates each one and keeps the
//! electron-up corner `V(τ)` together with its complementary Kraus operator
//! ([`propagator`]). Nuclear states are stored as weighted direct sums over
//! `I_z` sectors ([`states`]) and evolved under post-selected or sampled
//! measurement records ([`protocol`]). For `K` far beyond exact reach the
//! [`largek`] module evaluates the diagonal-average model in closed form.
//!
//! Matrix code is generic over [`Real`] (`f32` or `f64`); the aliases below
//! fix the double-precision types used by the CLI.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod hamiltonian;
pub mod largek;
pub mod propagator;
pub mod protocol;
pub mod scalar;
pub mod spinspace;
pub mod states;

pub use error::{Error, Result};
pub use hamiltonian::{CouplingConvention, HNucSpec, SectorHamiltonian, SystemParams};
pub use largek::{DiagonalModel, DiagonalModelParams};
pub use propagator::{ConditionedPropagator, SpectralReport};
pub use protocol::{FailurePolicy, ProtocolRecord, TrajectoryPolicy, TrajectoryRecord};
pub use scalar::{CMat, Real, C};
pub use spinspace::{SectorBasis, SectorIndex, SpinConfiguration};
pub use states::BlockedDensity;

pub type SystemParamsF64 = SystemParams<f64>;
pub type SystemParamsF32 = SystemParams<f32>;
pub type HNucSpecF64 = HNucSpec<f64>;
pub type SectorHamiltonianF64 = SectorHamiltonian<f64>;
pub type ConditionedPropagatorF64 = ConditionedPropagator<f64>;
pub type ConditionedPropagatorF32 = ConditionedPropagator<f32>;
pub type BlockedDensityF64 = BlockedDensity<f64>;
pub type BlockedDensityF32 = BlockedDensity<f32>;
pub type CMatF64 = CMat<f64>;
