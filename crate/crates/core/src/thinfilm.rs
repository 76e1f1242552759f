//! Fresnel reflection at a single interface and multilayer coating response.
//!
//! Indices are complex `n + iκ` with `κ ≥ 0` for absorbing media, and fields
//! carry the time dependence `e^{-iωt}`. The p-polarization reflectance uses
//! the convention
//!
//! ```text
//! r_s = (n0 cosθi − n cosθt) / (n0 cosθi + n cosθt)
//! r_p = (n cosθi − n0 cosθt) / (n cosθi + n0 cosθt)
//! ```
//!
//! so that at normal incidence `r_s = −r_p`. Multilayer stacks are evaluated
//! two ways: the characteristic (transfer) matrix product and a recursive
//! single-interface composition. The two agree to rounding.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::path::Path;

use num_complex::Complex64;

use crate::error::{ensure_finite, Error, Result};
use crate::jones::MirrorResponse;

fn c(re: f64) -> Complex64 {
    Complex64::new(re, 0.0)
}

/// Boundary between an incident medium `n0` and a transmitting medium `n`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interface {
    pub n0: Complex64,
    pub n: Complex64,
}

impl Interface {
    pub fn new(n0: Complex64, n: Complex64) -> Result<Self> {
        validate_index("incident index", n0)?;
        validate_index("transmitting index", n)?;
        Ok(Self { n0, n })
    }

    /// Interface between two lossless media.
    pub fn real(n0: f64, n: f64) -> Result<Self> {
        Self::new(c(n0), c(n))
    }
}

fn validate_index(name: &str, n: Complex64) -> Result<()> {
    ensure_finite(name, n.re)?;
    ensure_finite(name, n.im)?;
    if n.re <= 0.0 {
        return Err(Error::input(format!("{name} must have a positive real part, got {n}")));
    }
    if n.im < 0.0 {
        return Err(Error::input(format!("{name} has negative extinction (gain), got {n}")));
    }
    Ok(())
}

/// Angle of incidence and vacuum wavelength.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ray {
    pub theta_i: f64,
    pub wavelength_nm: f64,
}

impl Ray {
    pub fn new(theta_i: f64, wavelength_nm: f64) -> Result<Self> {
        validate_angle(theta_i)?;
        ensure_finite("wavelength", wavelength_nm)?;
        if wavelength_nm <= 0.0 {
            return Err(Error::input(format!("wavelength must be positive, got {wavelength_nm}")));
        }
        Ok(Self { theta_i, wavelength_nm })
    }
}

fn validate_angle(theta_i: f64) -> Result<()> {
    ensure_finite("angle of incidence", theta_i)?;
    if !(0.0..PI / 2.0).contains(&theta_i) {
        return Err(Error::input(format!("angle of incidence must lie in [0, π/2), got {theta_i}")));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Layer {
    pub index: Complex64,
    pub thickness_nm: f64,
}

/// Thin films between an ambient medium and a substrate, listed from the
/// ambient side.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerStack {
    pub ambient: Complex64,
    pub layers: Vec<Layer>,
    pub substrate: Complex64,
}

impl LayerStack {
    pub fn new(ambient: Complex64, layers: Vec<Layer>, substrate: Complex64) -> Result<Self> {
        validate_index("ambient index", ambient)?;
        validate_index("substrate index", substrate)?;
        for (i, l) in layers.iter().enumerate() {
            validate_index(&format!("layer {} index", i + 1), l.index)?;
            ensure_finite("layer thickness", l.thickness_nm)?;
            if l.thickness_nm <= 0.0 {
                return Err(Error::input(format!(
                    "layer {} thickness must be positive, got {}",
                    i + 1,
                    l.thickness_nm
                )));
            }
        }
        Ok(Self { ambient, layers, substrate })
    }

    pub fn bare(ambient: Complex64, substrate: Complex64) -> Result<Self> {
        Self::new(ambient, Vec::new(), substrate)
    }

    /// Parse the plain-text stack format:
    ///
    /// ```text
    /// # comment
    /// ambient   1.0  0.0
    /// substrate 1.52 0.0
    /// 2.10 0.0 98.9     # index_real index_imag thickness_nm, ambient side first
    /// ```
    pub fn parse(text: &str) -> Result<Self> {
        let what = "stack file";
        let mut ambient = None;
        let mut substrate = None;
        let mut layers = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line_no = lineno + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let fields: Vec<(usize, &str)> = tokens_with_columns(raw.split('#').next().unwrap_or(""));
            let number = |k: usize| -> Result<f64> {
                let (col, tok) = fields[k];
                tok.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| Error::parse(what, line_no, col, format!("expected a number, found `{tok}`")))
            };
            let head = fields[0].1;
            if head == "ambient" || head == "substrate" {
                if fields.len() != 3 {
                    return Err(Error::parse(
                        what,
                        line_no,
                        1,
                        format!("`{head}` needs exactly two values: index_real index_imag"),
                    ));
                }
                let n = Complex64::new(number(1)?, number(2)?);
                validate_index(head, n).map_err(|e| Error::parse(what, line_no, fields[1].0, e.to_string()))?;
                let slot = if head == "ambient" { &mut ambient } else { &mut substrate };
                if slot.replace(n).is_some() {
                    return Err(Error::parse(what, line_no, 1, format!("duplicate `{head}` line")));
                }
                continue;
            }
            if fields.len() != 3 {
                return Err(Error::parse(
                    what,
                    line_no,
                    1,
                    format!("layer line needs 3 fields (index_real index_imag thickness_nm), found {}", fields.len()),
                ));
            }
            let index = Complex64::new(number(0)?, number(1)?);
            validate_index("layer index", index)
                .map_err(|e| Error::parse(what, line_no, fields[0].0, e.to_string()))?;
            let thickness_nm = number(2)?;
            if thickness_nm <= 0.0 {
                return Err(Error::parse(what, line_no, fields[2].0, "thickness must be positive"));
            }
            layers.push(Layer { index, thickness_nm });
        }
        let last = text.lines().count().max(1);
        let ambient = ambient.ok_or_else(|| Error::parse(what, last, 1, "missing `ambient` line"))?;
        let substrate = substrate.ok_or_else(|| Error::parse(what, last, 1, "missing `substrate` line"))?;
        Self::new(ambient, layers, substrate)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text).map_err(|e| match e {
            Error::Parse { line, column, message, .. } => {
                Error::Parse { what: path.display().to_string(), line, column, message }
            }
            other => other,
        })
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "ambient {} {}", self.ambient.re, self.ambient.im);
        let _ = writeln!(out, "substrate {} {}", self.substrate.re, self.substrate.im);
        for l in &self.layers {
            let _ = writeln!(out, "{} {} {}", l.index.re, l.index.im, l.thickness_nm);
        }
        out
    }

    /// Alternating high/low stack, `pairs` × (H, L) from the ambient side, with
    /// every layer a quarter wave thick at `design_angle` and `design_wavelength_nm`.
    pub fn quarter_wave(
        ambient: f64,
        high: f64,
        low: f64,
        substrate: f64,
        pairs: usize,
        design_angle: f64,
        design_wavelength_nm: f64,
    ) -> Result<Self> {
        let s0 = ambient * design_angle.sin();
        let qw = |n: f64| design_wavelength_nm / (4.0 * n * (1.0 - (s0 / n).powi(2)).sqrt());
        let mut layers = Vec::with_capacity(2 * pairs);
        for _ in 0..pairs {
            layers.push(Layer { index: c(high), thickness_nm: qw(high) });
            layers.push(Layer { index: c(low), thickness_nm: qw(low) });
        }
        Self::new(c(ambient), layers, c(substrate))
    }

    /// Stand-in for the scanning-head coating: 25 pairs of Ta2O5 (2.10) /
    /// SiO2 (1.45) quarter waves for 45° at 780 nm on a 1.52 substrate.
    pub fn reference() -> Self {
        Self::quarter_wave(1.0, 2.10, 1.45, 1.52, 25, PI / 4.0, 780.0).expect("reference stack is valid")
    }
}

fn tokens_with_columns(line: &str) -> Vec<(usize, &str)> {
    let mut out = Vec::new();
    let mut start = None;
    for (i, ch) in line.char_indices() {
        match (ch.is_whitespace(), start) {
            (false, None) => start = Some(i),
            (true, Some(s)) => {
                out.push((s + 1, &line[s..i]));
                start = None;
            }
            _ => {}
        }
    }
    if let Some(s) = start {
        out.push((s + 1, &line[s..]));
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Pol {
    S,
    P,
}

/// `cos θ` inside a medium of index `n`, given the conserved `n0 sin θ0`.
/// The root is chosen so the wave decays into the medium (`Im(n cosθ) ≥ 0`),
/// or propagates forward when lossless.
fn cos_in(n: Complex64, invariant: Complex64) -> Complex64 {
    let s = invariant / n;
    let mut cos = (c(1.0) - s * s).sqrt();
    let k = n * cos;
    if k.im < -1e-15 || (k.im.abs() <= 1e-15 && k.re < 0.0) {
        cos = -cos;
    }
    cos
}

/// Tilted optical admittance.
fn admittance(n: Complex64, cos: Complex64, pol: Pol) -> Complex64 {
    match pol {
        Pol::S => n * cos,
        Pol::P => n / cos,
    }
}

/// Transmission angle from Snell's law; complex past the critical angle.
pub fn snell(iface: &Interface, theta_i: f64) -> Result<Complex64> {
    validate_angle(theta_i)?;
    let s = iface.n0 * theta_i.sin() / iface.n;
    if s.im == 0.0 && s.re.abs() <= 1.0 {
        return Ok(c(s.re.asin()));
    }
    Ok(s.asin())
}

/// Single-interface amplitude reflectances.
pub fn fresnel(iface: &Interface, theta_i: f64) -> Result<MirrorResponse> {
    validate_angle(theta_i)?;
    let inv = iface.n0 * theta_i.sin();
    let ci = cos_in(iface.n0, inv);
    let ct = cos_in(iface.n, inv);
    let (n0, n) = (iface.n0, iface.n);
    let r_s = (n0 * ci - n * ct) / (n0 * ci + n * ct);
    let r_p = (n * ci - n0 * ct) / (n * ci + n0 * ct);
    Ok(MirrorResponse::new(r_s, r_p))
}

/// Amplitude transmission coefficients `(t_s, t_p)` matching [`fresnel`].
pub fn fresnel_transmission(iface: &Interface, theta_i: f64) -> Result<(Complex64, Complex64)> {
    validate_angle(theta_i)?;
    let inv = iface.n0 * theta_i.sin();
    let ci = cos_in(iface.n0, inv);
    let ct = cos_in(iface.n, inv);
    let (n0, n) = (iface.n0, iface.n);
    let t_s = c(2.0) * n0 * ci / (n0 * ci + n * ct);
    let t_p = c(2.0) * n0 * ci / (n * ci + n0 * ct);
    Ok((t_s, t_p))
}

/// Power fraction carried by a transmitted field of unit amplitude:
/// `Re(n cosθt) / (n0 cosθi)`.
pub fn transmitted_power_factor(iface: &Interface, theta_i: f64) -> Result<f64> {
    validate_angle(theta_i)?;
    let inv = iface.n0 * theta_i.sin();
    let ci = cos_in(iface.n0, inv);
    let ct = cos_in(iface.n, inv);
    Ok((iface.n * ct).re / (iface.n0 * ci).re)
}

/// Multilayer response from the product of per-layer characteristic matrices.
pub fn stack_response(stack: &LayerStack, ray: &Ray) -> MirrorResponse {
    let r_s = characteristic_matrix_r(stack, ray, Pol::S);
    let r_p = characteristic_matrix_r(stack, ray, Pol::P);
    MirrorResponse::new(r_s, -r_p)
}

fn characteristic_matrix_r(stack: &LayerStack, ray: &Ray, pol: Pol) -> Complex64 {
    let inv = stack.ambient * ray.theta_i.sin();
    let eta0 = admittance(stack.ambient, cos_in(stack.ambient, inv), pol);
    let eta_sub = admittance(stack.substrate, cos_in(stack.substrate, inv), pol);
    let i = Complex64::i();
    // [B, C] = M_1 · M_2 ⋯ M_N · [1, η_sub]; apply from the substrate upward
    let (mut b, mut cc) = (c(1.0), eta_sub);
    for layer in stack.layers.iter().rev() {
        let cos = cos_in(layer.index, inv);
        let eta = admittance(layer.index, cos, pol);
        let delta = c(2.0 * PI * layer.thickness_nm / ray.wavelength_nm) * layer.index * cos;
        let (sd, cd) = (delta.sin(), delta.cos());
        let nb = cd * b - i * sd / eta * cc;
        let nc = -i * eta * sd * b + cd * cc;
        b = nb;
        cc = nc;
    }
    (eta0 * b - cc) / (eta0 * b + cc)
}

/// Same contract as [`stack_response`], computed by recursive composition of
/// single-interface reflectances (Airy summation layer by layer).
///
/// Flipping the sign of every p reflectance leaves the two-interface Airy
/// formula unchanged, so the recursion runs directly on [`fresnel`]-convention
/// coefficients.
pub fn stack_response_oracle(stack: &LayerStack, ray: &Ray) -> MirrorResponse {
    MirrorResponse::new(recursive_r(stack, ray, Pol::S), recursive_r(stack, ray, Pol::P))
}

fn recursive_r(stack: &LayerStack, ray: &Ray, pol: Pol) -> Complex64 {
    let inv = stack.ambient * ray.theta_i.sin();
    let media: Vec<Complex64> = std::iter::once(stack.ambient)
        .chain(stack.layers.iter().map(|l| l.index))
        .chain(std::iter::once(stack.substrate))
        .collect();
    let cosines: Vec<Complex64> = media.iter().map(|&n| cos_in(n, inv)).collect();
    let interface_r = |a: usize| {
        let (na, nb, ca, cb) = (media[a], media[a + 1], cosines[a], cosines[a + 1]);
        match pol {
            Pol::S => (na * ca - nb * cb) / (na * ca + nb * cb),
            Pol::P => (nb * ca - na * cb) / (nb * ca + na * cb),
        }
    };

    let mut r = interface_r(media.len() - 2);
    for j in (1..media.len() - 1).rev() {
        let kz = media[j] * cosines[j];
        let thickness = stack.layers[j - 1].thickness_nm;
        let phase = (Complex64::i() * c(4.0 * PI * thickness / ray.wavelength_nm) * kz).exp();
        let r_top = interface_r(j - 1);
        r = (r_top + r * phase) / (c(1.0) + r_top * r * phase);
    }
    r
}
