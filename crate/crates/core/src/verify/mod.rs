//! Executable checks of every formula: finite-difference gradient checks,
//! continuant identity sweeps, and the continuant-versus-literal kernel
//! benchmark.

mod bench;
mod gradcheck;
mod identities;

pub use bench::{run_bench, BenchArm, BenchConfig, BenchReport, Timing};
pub use gradcheck::{
    analytic_cf_grad, central_difference, cf_gradient_sweep, component_suite, gradcheck_store, relative_error, sample_pole_free,
    GradCheckReport, GradSweepConfig, FD_STEP, GRAD_TOLERANCE, REL_ERR_FLOOR,
};
pub use identities::{determinant_sweep, identity_sweep, literal_equivalence_sweep, EquivalenceReport, SweepReport};
