//! Two-qubit polarization states and analytic CHSH values.

use std::f64::consts::{FRAC_PI_4, FRAC_PI_8};

use nalgebra::{Matrix4, Vector4};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, Error, Result};
use crate::jones::{OpticalElement, PolarizationState};

/// Density matrix in the `{HH, HV, VH, VV}` basis. Qubit 1 (the left factor)
/// is the photon sent to the satellite.
#[derive(Debug, Clone, PartialEq)]
pub struct TwoQubitState {
    rho: Matrix4<Complex64>,
}

const HERMITIAN_TOL: f64 = 1e-12;
const TRACE_TOL: f64 = 1e-12;
const PSD_TOL: f64 = 1e-10;

impl TwoQubitState {
    /// Validate Hermiticity, unit trace and positivity.
    pub fn new(rho: Matrix4<Complex64>) -> Result<Self> {
        if rho.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::input("density matrix has non-finite entries"));
        }
        let herm = (rho - rho.adjoint()).iter().map(|z| z.norm()).fold(0.0, f64::max);
        if herm > HERMITIAN_TOL {
            return Err(Error::input(format!("density matrix is not Hermitian (deviation {herm:e})")));
        }
        let tr = rho.trace();
        if (tr.re - 1.0).abs() > TRACE_TOL || tr.im.abs() > TRACE_TOL {
            return Err(Error::input(format!("density matrix trace is {tr}, expected 1")));
        }
        let min_eig = min_eigenvalue(&rho);
        if min_eig < -PSD_TOL {
            return Err(Error::input(format!("density matrix has negative eigenvalue {min_eig:e}")));
        }
        Ok(Self { rho })
    }

    pub fn from_pure(psi: &Vector4<Complex64>) -> Result<Self> {
        let n = psi.norm();
        if !(n > 0.0 && n.is_finite()) {
            return Err(Error::input("state vector must be non-zero"));
        }
        let psi = psi / Complex64::new(n, 0.0);
        Self::new(psi * psi.adjoint())
    }

    pub fn product(a: &PolarizationState, b: &PolarizationState) -> Result<Self> {
        Self::from_pure(&kron_vec(&a.normalize()?, &b.normalize()?))
    }

    /// `(|HH⟩ + |VV⟩)/√2`.
    pub fn phi_plus() -> Self {
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let psi = Vector4::new(c(s), c(0.0), c(0.0), c(s));
        Self { rho: psi * psi.adjoint() }
    }

    pub fn maximally_mixed() -> Self {
        Self { rho: Matrix4::identity() * c(0.25) }
    }

    /// `V·|Φ+⟩⟨Φ+| + (1−V)·I/4`.
    pub fn werner(visibility: f64) -> Result<Self> {
        ensure_finite("visibility", visibility)?;
        if !(-1.0 / 3.0..=1.0).contains(&visibility) {
            return Err(Error::input(format!("Werner visibility must lie in [-1/3, 1], got {visibility}")));
        }
        let rho = Self::phi_plus().rho * c(visibility) + Self::maximally_mixed().rho * c(1.0 - visibility);
        Ok(Self { rho })
    }

    pub fn rho(&self) -> &Matrix4<Complex64> {
        &self.rho
    }

    /// `⟨ψ|ρ|ψ⟩` for a pure two-qubit state.
    pub fn overlap(&self, psi: &Vector4<Complex64>) -> f64 {
        (psi.adjoint() * self.rho * psi)[(0, 0)].re
    }

    pub fn fidelity_to_phi_plus(&self) -> f64 {
        let s = std::f64::consts::FRAC_1_SQRT_2;
        self.overlap(&Vector4::new(c(s), c(0.0), c(0.0), c(s)))
    }

    /// Apply a unitary to qubit 1.
    pub fn rotate_first(&self, u: &OpticalElement) -> Result<Self> {
        if !u.is_unitary(1e-9) {
            return Err(Error::input("channel rotation must be unitary"));
        }
        let m = u.matrix();
        let mut full = Matrix4::zeros();
        for i in 0..2 {
            for j in 0..2 {
                for k in 0..2 {
                    full[(2 * i + k, 2 * j + k)] = m[(i, j)];
                }
            }
        }
        Ok(Self { rho: full * self.rho * full.adjoint() })
    }

    /// Depolarize qubit 1 with probability `p`: `(1−p)ρ + p·I/2 ⊗ Tr₁ρ`.
    pub fn depolarize_first(&self, p: f64) -> Result<Self> {
        ensure_finite("depolarization", p)?;
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::input(format!("depolarization probability must lie in [0, 1], got {p}")));
        }
        let mut reduced = nalgebra::Matrix2::<Complex64>::zeros();
        for k in 0..2 {
            for l in 0..2 {
                reduced[(k, l)] = self.rho[(k, l)] + self.rho[(2 + k, 2 + l)];
            }
        }
        let mut mixed = Matrix4::zeros();
        for i in 0..2 {
            for k in 0..2 {
                for l in 0..2 {
                    mixed[(2 * i + k, 2 * i + l)] = reduced[(k, l)] * 0.5;
                }
            }
        }
        Ok(Self { rho: self.rho * c(1.0 - p) + mixed * c(p) })
    }

    /// Joint probability of outcomes `a` (qubit 1) and `b` (qubit 2) for
    /// linear analyzers at `phi1`, `phi2`; `true` selects the analyzer axis,
    /// `false` its orthogonal port.
    pub fn joint_probability(&self, phi1: f64, a: bool, phi2: f64, b: bool) -> f64 {
        let v = kron_vec(&analyzer_port(phi1, a), &analyzer_port(phi2, b));
        self.overlap(&v).max(0.0)
    }

    /// Probabilities in wire order `[pp, mm, pm, mp]`.
    pub fn outcome_probabilities(&self, phi1: f64, phi2: f64) -> [f64; 4] {
        [
            self.joint_probability(phi1, true, phi2, true),
            self.joint_probability(phi1, false, phi2, false),
            self.joint_probability(phi1, true, phi2, false),
            self.joint_probability(phi1, false, phi2, true),
        ]
    }

    /// Marginal probability of port `a` on qubit 1.
    pub fn first_marginal(&self, phi1: f64, a: bool) -> f64 {
        self.joint_probability(phi1, a, 0.0, true) + self.joint_probability(phi1, a, 0.0, false)
    }

    /// Marginal probability of port `b` on qubit 2.
    pub fn second_marginal(&self, phi2: f64, b: bool) -> f64 {
        self.joint_probability(0.0, true, phi2, b) + self.joint_probability(0.0, false, phi2, b)
    }
}

fn c(x: f64) -> Complex64 {
    Complex64::new(x, 0.0)
}

fn min_eigenvalue(rho: &Matrix4<Complex64>) -> f64 {
    // symmetrize so rounding noise cannot defeat the Hermitian solver
    let h = (rho + rho.adjoint()) * c(0.5);
    h.symmetric_eigenvalues().iter().copied().fold(f64::INFINITY, f64::min)
}

fn analyzer_port(phi: f64, axis: bool) -> PolarizationState {
    if axis {
        PolarizationState::linear(phi)
    } else {
        PolarizationState::linear(phi + std::f64::consts::FRAC_PI_2)
    }
}

fn kron_vec(a: &PolarizationState, b: &PolarizationState) -> Vector4<Complex64> {
    let (a0, a1) = a.amplitudes();
    let (b0, b1) = b.amplitudes();
    Vector4::new(a0 * b0, a0 * b1, a1 * b0, a1 * b1)
}

/// Werner state with fidelity `F` to |Φ+⟩, `V = (4F − 1)/3`.
pub fn make_source(fidelity: f64) -> Result<TwoQubitState> {
    ensure_finite("fidelity", fidelity)?;
    if !(0.25..=1.0).contains(&fidelity) {
        return Err(Error::input(format!("source fidelity must lie in [0.25, 1], got {fidelity}")));
    }
    TwoQubitState::werner(visibility_from_fidelity(fidelity))
}

pub fn visibility_from_fidelity(fidelity: f64) -> f64 {
    (4.0 * fidelity - 1.0) / 3.0
}

/// Expectation of the product of ±1 outcomes, mirroring the coincidence
/// combination `(C++ + C−− − C+− − C−+)/ΣC` with probabilities.
pub fn correlation(state: &TwoQubitState, phi1: f64, phi2: f64) -> f64 {
    let [pp, mm, pm, mp] = state.outcome_probabilities(phi1, phi2);
    (pp + mm - pm - mp) / (pp + mm + pm + mp)
}

/// Four analyzer pairs `(φ1, φ2)` in the order entering
/// `S = |E1 − E2 + E3 + E4|`. Radians.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChshSettings(pub [(f64, f64); 4]);

impl ChshSettings {
    /// `(0, π/8), (0, 3π/8), (π/4, π/8), (π/4, 3π/8)`.
    pub fn standard() -> Self {
        Self([(0.0, FRAC_PI_8), (0.0, 3.0 * FRAC_PI_8), (FRAC_PI_4, FRAC_PI_8), (FRAC_PI_4, 3.0 * FRAC_PI_8)])
    }

    /// CHSH arrangement `(a, b), (a, b′), (a′, b), (a′, b′)`.
    pub fn from_angles(a: f64, a_prime: f64, b: f64, b_prime: f64) -> Self {
        Self([(a, b), (a, b_prime), (a_prime, b), (a_prime, b_prime)])
    }

    pub fn pairs(&self) -> &[(f64, f64); 4] {
        &self.0
    }
}

impl Default for ChshSettings {
    fn default() -> Self {
        Self::standard()
    }
}

/// `|E1 − E2 + E3 + E4|` from four correlations.
pub fn chsh_combination(e: [f64; 4]) -> f64 {
    (e[0] - e[1] + e[2] + e[3]).abs()
}

pub fn chsh_analytic(state: &TwoQubitState, settings: &ChshSettings) -> f64 {
    chsh_combination(settings.0.map(|(a, b)| correlation(state, a, b)))
}
