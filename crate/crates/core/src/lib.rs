//! Transducer sequence losses with controllable alignment: the lattice
//! forward-backward machinery, the vanilla transducer objective, Bayes-risk
//! reweighted objectives that steer emission timing (offline last-token and
//! streaming per-token variants) with analytic gradients, brute-force
//! oracles, Viterbi alignment, frame-synchronous beam search with an
//! early-stop mechanism, latency metrics, and a desk-scale synthetic
//! experiment harness.

pub mod alignment;
pub mod brt_loss;
pub mod decoder;
pub mod error;
pub mod lattice;
pub mod metrics;
pub mod numerics;
pub mod oracle;
pub mod risk;
pub mod toy;
pub mod verify;
mod wire;

pub use brt_loss::{brt_loss, LossResult};
pub use error::{BrtError, Result};
pub use lattice::{FBTables, GateTable, JointLogits, LabelSequence, LatticeLogits, BLANK};
pub use oracle::Path;
pub use risk::{RiskSpec, RiskVariant};
