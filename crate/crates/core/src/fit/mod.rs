//! Inverse problems: multiplet and polarization fits, decay fits and
//! magnetometry sensitivity.

mod decay;
mod lm;
mod multiplet;
mod polarization;
mod sensitivity;

pub use decay::{compare_stretch, fit_decay, DecayComparison, DecayModel};
pub use lm::{levenberg_marquardt, FitDiagnostics, LmOptions, LmOutcome};
pub use multiplet::{
    fit_multiplet, multiplet_curve, unpolarized_amplitudes, AmplitudeLaw, FitOptions, MultipletModel,
};
pub use polarization::{
    fit_polarization, polarization_amplitudes, polarization_amplitudes_2, LineOrder, PolarizationModel,
    PolarizationResult,
};
pub use sensitivity::{
    lorentzian_max_slope, max_slope, sensitivity_ac, sensitivity_dc, AcReport, DcMode, SensitivityInput,
    GAMMA_E_HZ_PER_T,
};

use serde::Serialize;

/// Parameters, uncertainties and convergence record of one fit.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FitReport {
    pub parameter_names: Vec<String>,
    pub values: Vec<f64>,
    /// 1 sigma from the scaled inverse normal matrix.
    pub sigmas: Vec<f64>,
    /// Root of the residual sum of squares.
    pub residual_norm: f64,
    pub reduced_chi2: f64,
    pub iterations: usize,
    pub converged: bool,
    pub dof: usize,
}

impl FitReport {
    pub fn value(&self, name: &str) -> Option<f64> {
        self.index(name).map(|i| self.values[i])
    }

    pub fn sigma(&self, name: &str) -> Option<f64> {
        self.index(name).map(|i| self.sigmas[i])
    }

    fn index(&self, name: &str) -> Option<usize> {
        self.parameter_names.iter().position(|n| n == name)
    }
}
