//! Method drivers, suite orchestration and run configuration.

mod config;
mod drivers;
mod suite;

pub use config::{BackendConfig, BackendKind, FeedbackMode, Knobs, RunConfig};
pub use drivers::{
    extract_answer, feedback_oracle, lookup, parse_react_turn, run_direct, run_method, run_minimal_reflect, run_react,
    run_reflexion, run_self_refine, Feedback, Method, ReactAction, Runtime,
};
pub use suite::{find_script, run_suite, trace_file, SuiteError, SuiteReport, RESULTS_FILE};
