//! Jones calculus for fully polarized single photons.
//!
//! Conventions: states are written in the H/V basis, a linear state at angle
//! `γ` is `(cos γ, sin γ)`, and every element angle is the fast axis measured
//! counterclockwise from H. Waveplates use the symmetric retardance split
//! `R(θ)·diag(e^{-iδ/2}, e^{iδ/2})·R(-θ)`, so all of them lie in SU(2).

use std::f64::consts::{FRAC_1_SQRT_2, FRAC_PI_2, FRAC_PI_4, PI};
use std::fmt;
use std::ops::Mul;

use nalgebra::{Matrix2, Vector2};
use num_complex::Complex64;

use crate::error::{ensure_finite, Error, Result};

/// PER reported when the crossed-analyzer intensity vanishes.
pub const PER_CAP: f64 = 1e9;

const NORM_TOL: f64 = 1e-9;

fn c(re: f64) -> Complex64 {
    Complex64::new(re, 0.0)
}

/// Polarization of a single photon as a complex amplitude pair `(a_H, a_V)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PolarizationState {
    amps: Vector2<Complex64>,
}

impl PolarizationState {
    /// Build a state from raw amplitudes. The result is not normalized.
    pub fn new(h: Complex64, v: Complex64) -> Self {
        Self { amps: Vector2::new(h, v) }
    }

    pub fn h() -> Self {
        Self::new(c(1.0), c(0.0))
    }

    pub fn v() -> Self {
        Self::new(c(0.0), c(1.0))
    }

    /// `(|H⟩ + |V⟩)/√2`
    pub fn plus() -> Self {
        Self::new(c(FRAC_1_SQRT_2), c(FRAC_1_SQRT_2))
    }

    /// `(|H⟩ - |V⟩)/√2`
    pub fn minus() -> Self {
        Self::new(c(FRAC_1_SQRT_2), c(-FRAC_1_SQRT_2))
    }

    /// Linear polarization at `angle` radians from H.
    pub fn linear(angle: f64) -> Self {
        Self::new(c(angle.cos()), c(angle.sin()))
    }

    pub fn amplitudes(&self) -> (Complex64, Complex64) {
        (self.amps[0], self.amps[1])
    }

    pub fn norm_sqr(&self) -> f64 {
        self.amps[0].norm_sqr() + self.amps[1].norm_sqr()
    }

    pub fn is_normalized(&self) -> bool {
        (self.norm_sqr() - 1.0).abs() <= NORM_TOL
    }

    pub fn normalize(&self) -> Result<Self> {
        let n = self.norm_sqr().sqrt();
        if !(n.is_finite() && n > 0.0) {
            return Err(Error::input("cannot normalize a zero or non-finite state"));
        }
        Ok(Self { amps: self.amps / c(n) })
    }

    /// `⟨self|other⟩`
    pub fn inner(&self, other: &Self) -> Complex64 {
        self.amps[0].conj() * other.amps[0] + self.amps[1].conj() * other.amps[1]
    }

    /// Intensity transmitted by an ideal linear polarizer at `angle`.
    pub fn linear_projection(&self, angle: f64) -> f64 {
        Self::linear(angle).inner(self).norm_sqr()
    }

    /// Orientation of the major axis of the polarization ellipse, in `[-π/2, π/2)`.
    pub fn orientation(&self) -> f64 {
        let (h, v) = self.amplitudes();
        let s1 = h.norm_sqr() - v.norm_sqr();
        let s2 = 2.0 * (h.conj() * v).re;
        0.5 * s2.atan2(s1)
    }
}

/// A 2×2 complex Jones matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OpticalElement {
    matrix: Matrix2<Complex64>,
}

impl OpticalElement {
    pub fn from_matrix(matrix: Matrix2<Complex64>) -> Self {
        Self { matrix }
    }

    pub fn identity() -> Self {
        Self::from_matrix(Matrix2::identity())
    }

    pub fn matrix(&self) -> &Matrix2<Complex64> {
        &self.matrix
    }

    pub fn apply(&self, state: &PolarizationState) -> PolarizationState {
        PolarizationState { amps: self.matrix * state.amps }
    }

    /// `self` applied after `first`.
    pub fn then_after(&self, first: &OpticalElement) -> OpticalElement {
        Self::from_matrix(self.matrix * first.matrix)
    }

    pub fn adjoint(&self) -> OpticalElement {
        Self::from_matrix(self.matrix.adjoint())
    }

    /// Largest deviation of `M†M` from the identity (max-abs entry).
    pub fn unitarity_error(&self) -> f64 {
        let d = self.matrix.adjoint() * self.matrix - Matrix2::identity();
        d.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    pub fn is_unitary(&self, tol: f64) -> bool {
        self.unitarity_error() <= tol
    }

    /// Largest singular value.
    pub fn operator_norm(&self) -> f64 {
        operator_norm(&self.matrix)
    }

    /// Operator-norm distance to the nearest `e^{iγ}·I`.
    pub fn distance_from_identity_up_to_phase(&self) -> f64 {
        let tr = self.matrix.trace();
        let phase = if tr.norm() > 0.0 { tr.conj() / tr.norm() } else { c(1.0) };
        operator_norm(&(self.matrix * phase - Matrix2::identity()))
    }
}

impl Mul for OpticalElement {
    type Output = OpticalElement;

    fn mul(self, rhs: OpticalElement) -> OpticalElement {
        OpticalElement::from_matrix(self.matrix * rhs.matrix)
    }
}

impl Mul<PolarizationState> for OpticalElement {
    type Output = PolarizationState;

    fn mul(self, rhs: PolarizationState) -> PolarizationState {
        self.apply(&rhs)
    }
}

fn operator_norm(m: &Matrix2<Complex64>) -> f64 {
    // sqrt of the largest eigenvalue of the Hermitian M†M
    let g = m.adjoint() * m;
    let a = g[(0, 0)].re;
    let d = g[(1, 1)].re;
    let b = g[(0, 1)].norm();
    let half_tr = 0.5 * (a + d);
    let disc = (0.25 * (a - d) * (a - d) + b * b).sqrt();
    (half_tr + disc).max(0.0).sqrt()
}

fn rotation_matrix(angle: f64) -> Matrix2<Complex64> {
    let (s, co) = angle.sin_cos();
    Matrix2::new(c(co), c(-s), c(s), c(co))
}

fn retarder(angle: f64, retardance: f64) -> Matrix2<Complex64> {
    let half = 0.5 * retardance;
    let core = Matrix2::new(Complex64::from_polar(1.0, -half), c(0.0), c(0.0), Complex64::from_polar(1.0, half));
    rotation_matrix(angle) * core * rotation_matrix(-angle)
}

/// Half-wave plate with its fast axis at `angle`.
pub fn hwp(angle: f64) -> Result<OpticalElement> {
    ensure_finite("hwp angle", angle)?;
    Ok(OpticalElement::from_matrix(retarder(angle, PI)))
}

/// Quarter-wave plate with its fast axis at `angle`.
pub fn qwp(angle: f64) -> Result<OpticalElement> {
    ensure_finite("qwp angle", angle)?;
    Ok(OpticalElement::from_matrix(retarder(angle, FRAC_PI_2)))
}

/// Rotates linear polarization counterclockwise by `angle`.
pub fn rotator(angle: f64) -> Result<OpticalElement> {
    ensure_finite("rotator angle", angle)?;
    Ok(OpticalElement::from_matrix(rotation_matrix(angle)))
}

/// Ideal linear polarizer transmitting along `angle`.
pub fn polarizer(angle: f64) -> Result<OpticalElement> {
    ensure_finite("polarizer angle", angle)?;
    let (s, co) = angle.sin_cos();
    Ok(OpticalElement::from_matrix(Matrix2::new(c(co * co), c(co * s), c(co * s), c(s * s))))
}

/// Complex amplitude reflectances of a mirror for s and p light.
///
/// `r_p` follows the sign convention in which an ideal mirror is
/// `(r_s, r_p) = (1, -1)`, i.e. s and p pick up a relative phase of π.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MirrorResponse {
    pub r_s: Complex64,
    pub r_p: Complex64,
}

impl MirrorResponse {
    pub fn new(r_s: Complex64, r_p: Complex64) -> Self {
        Self { r_s, r_p }
    }

    /// Lossless mirror with a relative phase of exactly π.
    pub fn ideal() -> Self {
        Self::new(c(1.0), c(-1.0))
    }

    /// Build from power reflectances and the relative phase
    /// `Δφ = arg(r_s) − arg(r_p)`, taking `arg(r_s) = 0`.
    pub fn from_power(rs_power: f64, rp_power: f64, relative_phase: f64) -> Result<Self> {
        for (name, v) in [("s reflectance", rs_power), ("p reflectance", rp_power)] {
            ensure_finite(name, v)?;
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::input(format!("{name} must lie in [0, 1], got {v}")));
            }
        }
        ensure_finite("relative phase", relative_phase)?;
        Ok(Self::new(c(rs_power.sqrt()), Complex64::from_polar(rp_power.sqrt(), -relative_phase)))
    }

    /// 50-layer dielectric coating of the scanning-head mirrors at 780 nm:
    /// 99.9908 % (s), 99.8168 % (p), relative phase 0.9996π.
    pub fn coated_780nm() -> Self {
        Self::from_power(0.999908, 0.998168, 0.9996 * PI).expect("constants are valid")
    }

    pub fn rs_power(&self) -> f64 {
        self.r_s.norm_sqr()
    }

    pub fn rp_power(&self) -> f64 {
        self.r_p.norm_sqr()
    }

    /// `arg(r_s) − arg(r_p)` wrapped to `(-π, π]`.
    pub fn relative_phase(&self) -> f64 {
        let d = self.r_s.arg() - self.r_p.arg();
        let w = d.rem_euclid(2.0 * PI);
        if w > PI {
            w - 2.0 * PI
        } else {
            w
        }
    }
}

/// Diagonal Jones matrix `diag(r_s, r_p)` in the mirror's own s/p frame.
pub fn mirror_element(resp: &MirrorResponse) -> Result<OpticalElement> {
    for (name, r) in [("r_s", resp.r_s), ("r_p", resp.r_p)] {
        if !(r.re.is_finite() && r.im.is_finite()) {
            return Err(Error::input(format!("{name} must be finite")));
        }
        if r.norm() > 1.0 + 1e-12 {
            return Err(Error::input(format!("|{name}| = {} exceeds 1 (gain medium)", r.norm())));
        }
    }
    Ok(OpticalElement::from_matrix(Matrix2::new(resp.r_s, c(0.0), c(0.0), resp.r_p)))
}

/// Pure-state fidelity `|⟨a|b⟩|²`.
pub fn fidelity(a: &PolarizationState, b: &PolarizationState) -> Result<f64> {
    if !a.is_normalized() || !b.is_normalized() {
        return Err(Error::input("fidelity requires normalized states"));
    }
    Ok(a.inner(b).norm_sqr().min(1.0))
}

/// `PER / (PER + 1)`.
pub fn per_to_fidelity(per: f64) -> Result<f64> {
    if per.is_nan() || per <= 0.0 {
        return Err(Error::input(format!("PER must be positive, got {per}")));
    }
    if per.is_infinite() {
        return Ok(1.0);
    }
    Ok(per / (per + 1.0))
}

/// Inverse of [`per_to_fidelity`] on `(0, 1)`.
pub fn fidelity_to_per(fidelity: f64) -> Result<f64> {
    if !(fidelity > 0.0 && fidelity < 1.0) {
        return Err(Error::input(format!("fidelity must lie in (0, 1), got {fidelity}")));
    }
    Ok(fidelity / (1.0 - fidelity))
}

/// Extinction ratio seen by a polarizer at `reference_angle` and at
/// `reference_angle + π/2`: larger intensity over smaller, capped at
/// [`PER_CAP`].
pub fn measure_per(state: &PolarizationState, reference_angle: f64) -> f64 {
    let along = state.linear_projection(reference_angle);
    let across = state.linear_projection(reference_angle + FRAC_PI_2);
    let (hi, lo) = if along >= across { (along, across) } else { (across, along) };
    if lo <= hi / PER_CAP {
        PER_CAP
    } else {
        hi / lo
    }
}

/// Plate angles `(q1, h, q2)` such that `qwp(q1)·hwp(h)·qwp(q2)` undoes a channel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FiberCompensation {
    pub q1: f64,
    pub h: f64,
    pub q2: f64,
    /// Operator-norm distance of the compensated channel from `e^{iγ}·I`.
    pub residual: f64,
}

impl FiberCompensation {
    pub fn element(&self) -> OpticalElement {
        let m = retarder(self.q1, FRAC_PI_2) * retarder(self.h, PI) * retarder(self.q2, FRAC_PI_2);
        OpticalElement::from_matrix(m)
    }
}

const FIBER_TOL: f64 = 1e-6;

/// Solve for the QWP–HWP–QWP triple that cancels a unitary `channel`.
///
/// On the SU(2) cover, `qwp(a)·hwp(b)·qwp(c) = −Y(2a)·X(2a+2c−4b)·Y(−2c)`
/// where `X`, `Y` are rotations about the σx and σy axes. The target `channel†`
/// is factored into Y-X-Y Euler angles, mapped back to plate angles, folded
/// into `[-π/2, π/2)` and then polished with a few Newton steps.
pub fn solve_fiber_compensation(channel: &OpticalElement) -> Result<FiberCompensation> {
    let m = channel.matrix();
    if m.iter().any(|z| !(z.re.is_finite() && z.im.is_finite())) {
        return Err(Error::input("channel matrix has non-finite entries"));
    }
    let err = channel.unitarity_error();
    if err > 1e-9 {
        return Err(Error::input(format!("channel is not unitary (|M†M − I| = {err:e})")));
    }

    let target = m.adjoint();
    let det_root = target.determinant().sqrt();
    let w = target / det_root;

    // w = q0·I − i(qx σx + qy σy + qz σz)
    let q0 = w[(0, 0)].re;
    let qz = -w[(0, 0)].im;
    let qy = w[(1, 0)].re;
    let qx = -w[(1, 0)].im;

    let sum_half = qy.atan2(q0);
    let diff_half = (-qz).atan2(qx);
    let beta = 2.0 * (qx.hypot(qz)).atan2(q0.hypot(qy));
    let alpha = sum_half + diff_half;
    let gamma = sum_half - diff_half;

    let mut angles =
        [fold_half_turn(alpha / 2.0), fold_half_turn((alpha - gamma - beta) / 4.0), fold_half_turn(-gamma / 2.0)];

    let residual_of = |a: &[f64; 3]| {
        let sol = FiberCompensation { q1: a[0], h: a[1], q2: a[2], residual: 0.0 };
        (sol.element() * *channel).distance_from_identity_up_to_phase()
    };
    let mut residual = residual_of(&angles);
    if residual > 1e-13 {
        polish(&mut angles, channel);
        angles = angles.map(fold_half_turn);
        residual = residual_of(&angles);
    }
    if residual > FIBER_TOL || !residual.is_finite() {
        return Err(Error::Numeric { message: "fiber compensation did not converge".into(), residual });
    }
    Ok(FiberCompensation { q1: angles[0], h: angles[1], q2: angles[2], residual })
}

/// Newton iterations on `1 − |tr(P)|²/4`, with finite-difference derivatives.
fn polish(angles: &mut [f64; 3], channel: &OpticalElement) {
    let cost = |a: &[f64; 3]| {
        let p = retarder(a[0], FRAC_PI_2) * retarder(a[1], PI) * retarder(a[2], FRAC_PI_2) * channel.matrix();
        1.0 - p.trace().norm_sqr() / 4.0
    };
    let h = 1e-5;
    for _ in 0..20 {
        let f0 = cost(angles);
        if f0 < 1e-26 {
            break;
        }
        let mut grad = [0.0; 3];
        let mut hess = nalgebra::Matrix3::<f64>::zeros();
        for i in 0..3 {
            let mut p = *angles;
            let mut m = *angles;
            p[i] += h;
            m[i] -= h;
            let (fp, fm) = (cost(&p), cost(&m));
            grad[i] = (fp - fm) / (2.0 * h);
            hess[(i, i)] = (fp - 2.0 * f0 + fm) / (h * h);
            for j in (i + 1)..3 {
                let mut pp = *angles;
                let mut pm = *angles;
                let mut mp = *angles;
                let mut mm = *angles;
                pp[i] += h;
                pp[j] += h;
                pm[i] += h;
                pm[j] -= h;
                mp[i] -= h;
                mp[j] += h;
                mm[i] -= h;
                mm[j] -= h;
                let v = (cost(&pp) - cost(&pm) - cost(&mp) + cost(&mm)) / (4.0 * h * h);
                hess[(i, j)] = v;
                hess[(j, i)] = v;
            }
        }
        let g = nalgebra::Vector3::from(grad);
        let step = match hess.try_inverse() {
            Some(inv) => inv * g,
            None => g,
        };
        let trial = [angles[0] - step[0], angles[1] - step[1], angles[2] - step[2]];
        if cost(&trial) < f0 {
            *angles = trial;
        } else {
            break;
        }
    }
}

/// Fold an angle with period π into `[-π/2, π/2)`.
fn fold_half_turn(angle: f64) -> f64 {
    let r = (angle + FRAC_PI_2).rem_euclid(PI) - FRAC_PI_2;
    if r >= FRAC_PI_2 {
        r - PI
    } else {
        r
    }
}

impl fmt::Display for PolarizationState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let (h, v) = self.amplitudes();
        write!(f, "({h})|H⟩ + ({v})|V⟩")
    }
}

/// The four probe states of the local antenna test, with their labels.
pub fn probe_states() -> [(&'static str, PolarizationState); 4] {
    [
        ("H", PolarizationState::h()),
        ("V", PolarizationState::v()),
        ("+", PolarizationState::plus()),
        ("-", PolarizationState::minus()),
    ]
}

/// Look up a probe state by its label (`H`, `V`, `+`, `-`, or `D`/`A`).
pub fn probe_state(label: &str) -> Option<PolarizationState> {
    match label {
        "H" | "h" => Some(PolarizationState::h()),
        "V" | "v" => Some(PolarizationState::v()),
        "+" | "D" | "d" => Some(PolarizationState::plus()),
        "-" | "A" | "a" => Some(PolarizationState::minus()),
        _ => None,
    }
}

/// Linear polarization angle of the probe state, if it is linear.
pub fn linear_angle_of(label: &str) -> Option<f64> {
    match label {
        "H" | "h" => Some(0.0),
        "V" | "v" => Some(FRAC_PI_2),
        "+" | "D" | "d" => Some(FRAC_PI_4),
        "-" | "A" | "a" => Some(-FRAC_PI_4),
        _ => None,
    }
}
