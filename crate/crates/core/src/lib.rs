//! Quantum detector tomography for phase-insensitive photon counters.
//!
//! The crate models detectors as diagonal POVMs in a truncated Fock space,
//! simulates coherent-state probe experiments against them, and inverts the
//! resulting click statistics back into a POVM under positivity and
//! completeness constraints. A phase-space (Wigner) view of the elements is
//! provided for inspection.

pub mod detector;
pub mod error;
pub mod fock;
pub mod io;
pub mod probe;
pub mod reconstruction;
pub mod simulation;
pub mod wigner;

pub use detector::{
    apd_povm, convolution_bruteforce, convolution_matrix, loss_matrix, outcome_probabilities,
    tmd_povm, ConvolutionMatrix, DetectorModel, LossMatrix, OutcomeProbabilities, PovmElement,
    PovmSet,
};
pub use error::{Error, Result};
pub use fock::{attenuate, coherent_fock_distribution, log_binomial, CoherentAmplitude, FockDistribution};
pub use probe::{
    completeness_check, completeness_matrix, mean_photon_to_power, power_to_mean_photon,
    CoherentProbe, CompletenessReport, PhysicalConstants, ProbeSet,
};
pub use reconstruction::{
    build_problem, povm_distance, reconstruct, PovmDistance, ReconstructedPovm,
    ReconstructionProblem, SolverOptions, TailHandling,
};
pub use simulation::{exact_dataset, response_curve, sample_dataset, ResponseCurve, TomographyDataset};
pub use wigner::{fock_wigner, povm_wigner, radial_nodes, wigner_overlap, WignerField, WignerGrid};
