pub mod basis;
pub mod checks;
pub mod cli;
pub mod diagnostics;
pub mod error;
pub mod forms;
pub mod expr;
pub mod mesh;
pub mod problems;
pub mod runner;
pub mod space;
pub mod sparse;
pub mod time;

pub use diagnostics::{ConvergenceTable, DiagnosticsRecord, Energy};
pub use error::{PnpError, Result};
pub use forms::{gamma_of_beta1, FormAssembler, Method};
pub use mesh::{Domain, Mesh};
pub use problems::{builtin, ProblemSpec, UserProblem};
pub use runner::{sweep, Beta1, DtRule, MethodKind, RunConfig, Simulation};
pub use space::{Field, Space};
pub use time::{StepReport, Stepper, SystemState, TimeOrder};
