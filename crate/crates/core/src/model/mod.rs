//! Model declaration, compilation and trace execution.

mod plan;
mod spec;
mod trace;

pub use plan::{compile, ExecutionPlan, NoiseKind, ParamStore, Rows};
pub use spec::{
    define_model, Activation, ConstantParams, Family, MlpSpec, ModelGraph, ParamFn, Supervision, VariableSpec,
};
pub use trace::{
    importance_weight, recognition_dist, run_trace, sample_generative, Evidence, GenerateMode, NodeTrace,
    RelaxedDensity, SampleSet, Sampling, Trace, TraceConfig,
};
