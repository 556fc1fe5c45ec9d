//! Mode-by-mode simulation of Maxwell's equations in generalized
//! Drude-Lorentz media, with numerical certification of the frequency
//! dependent Lyapunov identities and of the polynomial energy decay rates.

pub mod decay;
pub mod grid;
pub mod ledger;
pub mod material;
pub mod memory;
pub mod mode;
pub mod rng;

pub use decay::{
    auto_window, discrete_spectrum_curve, envelope_sup, fit_decay_exponent, hf_lf_split, moment_order_check,
    total_energy_curve, DecayError, DecayFit, DiscreteMode, EnergyCurve, InitialDataSpec, Profile, QuadratureConfig,
    RadialQuadrature,
};
pub use ledger::{
    densities, gronwall_certificate, identity_residual, initial_bound_ratio, lemma_form, lemma_ratio, DensityLedger,
    IdentityReport, LedgerError, LemmaForm,
};
pub use material::{
    classify_dissipation, complex_response, gamma, herglotz_scan, susceptibility_kernel, total_kernel,
    validate_material, Branch, DissipationClass, DissipationTag, FigotinCase, MaterialError, MaterialParams,
    Oscillator,
};
pub use memory::{
    convolve_kernel, general_lyapunov_identity, q_form_identity_residual, sign_condition_check, KernelFunction,
    KernelTerm, MemoryError, ScalarTrajectory, Signal,
};
pub use mode::{
    build_generator, derivative_ladder, divergence_residual, evolve, spectral_abscissa, CVec3, Generator, ModeError,
    ModeState, Subspace,
};
