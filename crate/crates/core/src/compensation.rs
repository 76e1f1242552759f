//! Half-wave-plate motion compensation: the HWP angle law, schedules built
//! from pass profiles, and end-to-end verification through the antenna.

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::angles::{reduce_half_turn_deg as reduce_half_turn, unwrap};
use crate::antenna::{scanning_head_jones, PointingDirection};
use crate::error::{ensure_finite, Error, Result};
use crate::exec::Exec;
use crate::jones::{self, fidelity, MirrorResponse, OpticalElement, PolarizationState};
use crate::tle_pass::orbit::seconds_between;
use crate::tle_pass::pass::{format_time, PassProfile};

/// Calibrated HWP angle at which |H⟩ is restored with the antenna at rest.
pub const DEFAULT_ZERO_POINT_DEG: f64 = 145.8;
/// Default maximum rotation rate of the motorized HWP mount.
pub const DEFAULT_MAX_SLEW_DEG_PER_S: f64 = 10.0;
/// Largest per-sample change of the unwrapped angle treated as continuous.
pub const MAX_STEP_DEG: f64 = 1.0;

/// Direction in which the motion rotates the polarization frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sense {
    /// Frame angle increases by θ + φ + β; HWP follows with +½.
    #[default]
    Positive,
    /// Mirrored installation: frame angle decreases.
    Negative,
}

impl Sense {
    pub fn sign(self) -> f64 {
        match self {
            Sense::Positive => 1.0,
            Sense::Negative => -1.0,
        }
    }
}

/// Installation parameters of the compensator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Compensator {
    pub zero_point_deg: f64,
    pub sense: Sense,
    pub max_slew_deg_per_s: f64,
}

impl Default for Compensator {
    fn default() -> Self {
        Self {
            zero_point_deg: DEFAULT_ZERO_POINT_DEG,
            sense: Sense::Positive,
            max_slew_deg_per_s: DEFAULT_MAX_SLEW_DEG_PER_S,
        }
    }
}

impl Compensator {
    pub fn new(zero_point_deg: f64, sense: Sense, max_slew_deg_per_s: f64) -> Result<Self> {
        ensure_finite("zero point", zero_point_deg)?;
        if !(max_slew_deg_per_s > 0.0 && max_slew_deg_per_s.is_finite()) {
            return Err(Error::input(format!("max slew must be positive, got {max_slew_deg_per_s}")));
        }
        Ok(Self { zero_point_deg, sense, max_slew_deg_per_s })
    }

    /// Unreduced HWP angle for the given pointing, degrees.
    pub fn raw_angle(&self, theta: f64, phi: f64, beta: f64) -> f64 {
        self.zero_point_deg + self.sense.sign() * (theta + phi + beta) / 2.0
    }

    pub fn angle(&self, theta: f64, phi: f64, beta: f64) -> Result<f64> {
        for (n, v) in [("theta", theta), ("phi", phi), ("beta", beta)] {
            ensure_finite(n, v)?;
        }
        Ok(reduce_half_turn(self.raw_angle(theta, phi, beta)))
    }
}

/// `zero_point + (θ + φ + β)/2`, reduced to `[0, 180)`. All degrees.
pub fn compensation_angle(theta: f64, phi: f64, beta: f64, zero_point: f64) -> Result<f64> {
    ensure_finite("zero point", zero_point)?;
    Compensator { zero_point_deg: zero_point, ..Compensator::default() }.angle(theta, phi, beta)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScheduleSample {
    pub t: DateTime<Utc>,
    /// Commanded angle in `[0, 180)`.
    pub hwp_deg: f64,
    /// Rate of the unwrapped angle since the previous sample (forward
    /// difference for the first sample).
    pub rate_deg_per_s: f64,
}

/// HWP angle time series for one pass, with rate diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct CompensationSchedule {
    pub samples: Vec<ScheduleSample>,
    pub compensator: Compensator,
    /// Continuous version of the angle series used for rate analysis.
    pub unwrapped_deg: Vec<f64>,
    pub max_rate_deg_per_s: f64,
    pub warnings: Vec<String>,
}

/// Metadata written next to a schedule CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduleMetadata {
    pub zero_point_deg: f64,
    pub sense: Sense,
    pub max_slew_deg_per_s: f64,
    pub max_rate_deg_per_s: f64,
    pub samples: usize,
    pub start: String,
    pub end: String,
    pub warnings: Vec<String>,
}

/// Compute the HWP angle at every sample of `pass`.
pub fn schedule_from_pass(pass: &PassProfile, compensator: &Compensator) -> Result<CompensationSchedule> {
    let s = pass.samples();
    let raw: Vec<f64> = s.iter().map(|p| compensator.raw_angle(p.azimuth_deg, p.elevation_deg, p.beta_deg)).collect();
    let reduced: Vec<f64> = raw.iter().map(|&a| reduce_half_turn(a)).collect();
    let unwrapped = unwrap(&reduced, 180.0);

    let mut warnings = Vec::new();
    let mut rates = vec![0.0; s.len()];
    for i in 1..s.len() {
        let dt = seconds_between(s[i - 1].t, s[i].t);
        let step = unwrapped[i] - unwrapped[i - 1];
        rates[i] = step / dt;
        if step.abs() > MAX_STEP_DEG && dt <= 1.0 + 1e-9 {
            warnings.push(format!(
                "{}: angle jumps {:.3} deg in {:.3} s (discontinuous input)",
                format_time(s[i].t),
                step,
                dt
            ));
        }
        if rates[i].abs() > compensator.max_slew_deg_per_s {
            warnings.push(format!(
                "{}: rate {:.3} deg/s exceeds max slew {} deg/s",
                format_time(s[i].t),
                rates[i],
                compensator.max_slew_deg_per_s
            ));
        }
    }
    if s.len() > 1 {
        rates[0] = rates[1];
    }
    let max_rate = rates.iter().fold(0.0f64, |m, r| m.max(r.abs()));
    let samples = s
        .iter()
        .zip(reduced.iter().zip(&rates))
        .map(|(p, (&hwp_deg, &rate_deg_per_s))| ScheduleSample { t: p.t, hwp_deg, rate_deg_per_s })
        .collect();
    Ok(CompensationSchedule {
        samples,
        compensator: *compensator,
        unwrapped_deg: unwrapped,
        max_rate_deg_per_s: max_rate,
        warnings,
    })
}

/// Schedules for several passes, one pass per task.
pub fn schedules_from_passes(
    passes: &[PassProfile],
    compensator: &Compensator,
    exec: Exec,
) -> Result<Vec<CompensationSchedule>> {
    exec.map(passes, |p| schedule_from_pass(p, compensator)).into_iter().collect()
}

impl CompensationSchedule {
    /// CSV with header `t_iso8601,hwp_deg,rate_deg_per_s`.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let io = |e: csv::Error| Error::Io(std::io::Error::other(e));
        w.write_record(["t_iso8601", "hwp_deg", "rate_deg_per_s"]).map_err(io)?;
        for s in &self.samples {
            w.write_record([format_time(s.t), s.hwp_deg.to_string(), s.rate_deg_per_s.to_string()]).map_err(io)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Io(std::io::Error::other(e.to_string())))?;
        Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
    }

    /// Samples from the CSV written by [`Self::to_csv`].
    pub fn samples_from_csv(text: &str) -> Result<Vec<ScheduleSample>> {
        const WHAT: &str = "schedule CSV";
        let mut rd = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
        let header = rd.headers().map_err(|e| Error::parse(WHAT, 1, 1, e.to_string()))?;
        if header.iter().ne(["t_iso8601", "hwp_deg", "rate_deg_per_s"]) {
            return Err(Error::parse(WHAT, 1, 1, "header must be `t_iso8601,hwp_deg,rate_deg_per_s`"));
        }
        let mut out = Vec::new();
        for (i, rec) in rd.records().enumerate() {
            let line = i + 2;
            let rec = rec.map_err(|e| Error::parse(WHAT, line, 1, e.to_string()))?;
            if rec.len() != 3 {
                return Err(Error::parse(WHAT, line, 1, format!("expected 3 columns, found {}", rec.len())));
            }
            let t = DateTime::parse_from_rfc3339(&rec[0])
                .map_err(|e| Error::parse(WHAT, line, 1, format!("bad timestamp: {e}")))?
                .with_timezone(&Utc);
            let num = |col: usize| -> Result<f64> {
                rec[col]
                    .parse()
                    .map_err(|_| Error::parse(WHAT, line, col + 1, format!("`{}` is not a number", &rec[col])))
            };
            out.push(ScheduleSample { t, hwp_deg: num(1)?, rate_deg_per_s: num(2)? });
        }
        Ok(out)
    }

    pub fn metadata(&self) -> ScheduleMetadata {
        ScheduleMetadata {
            zero_point_deg: self.compensator.zero_point_deg,
            sense: self.compensator.sense,
            max_slew_deg_per_s: self.compensator.max_slew_deg_per_s,
            max_rate_deg_per_s: self.max_rate_deg_per_s,
            samples: self.samples.len(),
            start: self.samples.first().map(|s| format_time(s.t)).unwrap_or_default(),
            end: self.samples.last().map(|s| format_time(s.t)).unwrap_or_default(),
            warnings: self.warnings.clone(),
        }
    }
}

/// Error introduced by a finite HWP positioning accuracy.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuantizationError {
    /// Positioning accuracy in radians.
    pub accuracy_rad: f64,
    /// Polarization infidelity `sin²(2·accuracy)` of a mispositioned HWP.
    pub infidelity: f64,
}

pub fn quantization_error(hwp_accuracy_deg: f64) -> Result<QuantizationError> {
    ensure_finite("HWP accuracy", hwp_accuracy_deg)?;
    if hwp_accuracy_deg < 0.0 {
        return Err(Error::input(format!("HWP accuracy must be non-negative, got {hwp_accuracy_deg}")));
    }
    let a = hwp_accuracy_deg.to_radians();
    Ok(QuantizationError { accuracy_rad: a, infidelity: (2.0 * a).sin().powi(2) })
}

/// Polarization-frame change from antenna pointing and satellite telescope:
/// `R(β)·J_head(θ, φ)`, mirrored for [`Sense::Negative`]. Degrees in.
pub fn motion_element(
    theta: f64,
    phi: f64,
    beta: f64,
    coating: &MirrorResponse,
    sense: Sense,
) -> Result<OpticalElement> {
    let dir = PointingDirection::wrapped(theta, phi)?;
    let forward = jones::rotator(beta.to_radians())? * scanning_head_jones(&dir, coating)?;
    Ok(match sense {
        Sense::Positive => forward,
        Sense::Negative => {
            let flip = jones::mirror_element(&MirrorResponse::ideal())?;
            flip * forward * flip
        }
    })
}

/// Fixed optics before the antenna that the zero point calibrates out.
pub fn reference_element(compensator: &Compensator) -> Result<OpticalElement> {
    jones::rotator(2.0 * compensator.zero_point_deg.to_radians())
}

/// Complete chain `hwp(α) · motion · reference`.
pub fn chain_element(
    theta: f64,
    phi: f64,
    beta: f64,
    hwp_deg: f64,
    coating: &MirrorResponse,
    compensator: &Compensator,
) -> Result<OpticalElement> {
    Ok(jones::hwp(hwp_deg.to_radians())?
        * motion_element(theta, phi, beta, coating, compensator.sense)?
        * reference_element(compensator)?)
}

/// Whether the HWP follows the schedule or stays at its first angle.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HwpMode {
    Scheduled,
    Fixed,
}

/// Fidelity at each pass sample between the delivered state and the state an
/// ideal, motionless link delivers.
pub fn verify_compensation(
    pass: &PassProfile,
    coating: &MirrorResponse,
    input: &PolarizationState,
    compensator: &Compensator,
    mode: HwpMode,
) -> Result<Vec<f64>> {
    let input = input.normalize()?;
    let ideal = MirrorResponse::ideal();
    let rest = compensator.angle(0.0, 0.0, 0.0)?;
    let expected = chain_element(0.0, 0.0, 0.0, rest, &ideal, compensator)? * input;
    let schedule = schedule_from_pass(pass, compensator)?;
    let fixed = schedule.samples[0].hwp_deg;
    pass.samples()
        .iter()
        .zip(&schedule.samples)
        .map(|(p, s)| {
            let hwp_deg = match mode {
                HwpMode::Scheduled => s.hwp_deg,
                HwpMode::Fixed => fixed,
            };
            let out = chain_element(p.azimuth_deg, p.elevation_deg, p.beta_deg, hwp_deg, coating, compensator)? * input;
            fidelity(&out.normalize()?, &expected)
        })
        .collect()
}
