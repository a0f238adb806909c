//! Gramian-based actuator and sensor placement for linear advection.
//!
//! A velocity field is discretised into a box partition and turned into a
//! sparse Ulam transition matrix. That one matrix drives densities forward
//! (Perron-Frobenius) and observables backward (Koopman). Controllability and
//! observability gramians are then per-cell fields, so candidate regions can
//! be compared by the support and norm of those fields, controls can be
//! synthesised by pointwise division, and infinite-horizon sums give
//! residence times and stability certificates.
//!
//! ```
//! use gramflow::{AnalyticField, BoundaryPolicy, BoxPartition, CellSet, Domain, TransferOperator, UlamSettings};
//! use gramflow::gramian::controllability_gramian;
//!
//! let domain = Domain::new(-1.0, -1.0, 1.0, 1.0)?;
//! let field = AnalyticField::LinearSink.sample(domain, 9, 9, BoundaryPolicy::Clamp)?;
//! let part = BoxPartition::new(domain, 16, 16)?;
//! let op = TransferOperator::build(&field, part, &UlamSettings::new(0.1)?.samples(25))?;
//! let b = CellSet::from_rect(part, &Domain::new(0.5, 0.5, 1.0, 1.0)?)?;
//! let g = controllability_gramian(&op, &b, 20)?;
//! assert!(g.field.total_mass() > 0.0);
//! # Ok::<(), gramflow::Error>(())
//! ```

// Negated comparisons below deliberately reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod control;
pub mod error;
pub mod field;
pub mod gramian;
pub mod partition;
pub mod placement;
pub mod sparse;
pub mod transfer;

pub use control::{ControlMethod, ControlSchedule, SteeringResult};
pub use error::{Error, Result};
pub use field::{AnalyticField, BoundaryPolicy, Domain, FlowConfig, Point, VectorField};
pub use gramian::{GramianField, GramianKind, Horizon, InfiniteOptions, StabilityReport};
pub use partition::{BoxPartition, CellSet, ScalarField};
pub use placement::{NormDirection, PlacementMode, PlacementScore};
pub use transfer::{Propagator, Sampling, TransferOperator, UlamSettings};
