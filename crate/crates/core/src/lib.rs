//! Finite-key BBM92 security bounds and a hybrid QKD/PQC encryption pipeline.

pub mod bits;
pub mod bounds;
pub mod hybrid;
pub mod instruction;
pub mod mac;
pub mod optimizer;
pub mod pqc;
pub mod protocol;
pub mod psk;
pub mod qkd;

pub use bits::Bits;
pub use bounds::{BoundsError, EpsilonBudget, ErrorCountRule, HypergeomMethod, QberSymbols, SecurityParams, XObsRule};
pub use optimizer::{optimize, GridPreset, OptimizationResult, OptimizerConfig, OptimizerError, PeType};
pub use qkd::{ParityCheckMatrix, QkdError, RawKeyPair, SessionOutcome, SessionStatus};
pub use protocol::{run_batch, run_cycle, BatchReport, CycleConfig, CycleCsvRow, CycleReport, CycleStatus, ProtocolError, Transport};
