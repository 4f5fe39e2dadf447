//! Control Hamiltonians and the drift/diffusion control experiments.

mod experiments;
mod hamiltonian;

pub use experiments::{
    barlow_control_coefficients, diffusion_control_experiment, drift_control_experiment, fstar_bsde_value,
    girsanov_consistency, hat_average_sigma_sq, strong_drift_value, strong_tolerance, weak_drift_value,
    ControlExperimentResult, ControlPolicy, DiffusionExperimentOptions, DriftExperimentOptions, DriftSetting,
    ReferenceDrift, StrongLevel, HJB_TOLERANCE, SECOND_DIFFERENCE_TOLERANCE,
};
pub use hamiltonian::{
    adjoint_transform, f_star, hamiltonian_catalog, hamiltonian_h, hamiltonian_hat, hamiltonian_spec,
    hamiltonian_tilde, maximize, probe_hamiltonians, ControlFn, HamiltonianProbe, HamiltonianSpec, HamiltonianTable,
    StateFn, DEFAULT_CONTROLS, TILDE_GAP_TOL,
};
