//! Adaptive private information retrieval over secure coded storage with
//! colluding servers and time-varying stragglers.

pub mod field;
pub mod framework;
pub mod params;
pub mod protocol;
pub mod query_array;
pub mod simulator;
pub mod wire;

pub use field::{FieldElement, FieldError, FieldMatrix, FieldModulus};
pub use params::{derive_system, EncodingParameters, ParamsError, SystemParams};
pub use query_array::{build_query_array, column_specs, verify_conditions, Cell, ColumnSpec, QueryArray};
pub use framework::{certify_framework, BasisSet, FrameworkCertificate, FrameworkError, FrameworkKind, PartialFileRequest};
pub use protocol::{
    adaptive_decode, encode_storage, make_queries, rate_and_cost, server_answer, AdaptiveDecoder,
    Dataset, DecodeOutcome, DecodeStatus, ProtocolError, RateCost, ResponseBundle,
};
pub use simulator::{run_session, sweep_rates, stress_identity_churn, SessionConfig, SessionReport, SimError, StragglerModel};
