//! Pass extraction, the satellite telescope angle β, and pass CSV files.

use chrono::{DateTime, Duration, SecondsFormat, Utc};

use super::orbit::{ecef_to_eci, propagate, seconds_between, topocentric, GroundStation};
use super::tle::TleRecord;
use crate::angles::unwrap;
use crate::error::{ensure_finite, Error, Result};
use crate::exec::Exec;

/// One pointing sample. Angles in degrees.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PassSample {
    pub t: DateTime<Utc>,
    pub azimuth_deg: f64,
    pub elevation_deg: f64,
    pub beta_deg: f64,
}

/// Time series of (θ, φ, β) for one passage, strictly increasing in time.
#[derive(Debug, Clone, PartialEq)]
pub struct PassProfile {
    samples: Vec<PassSample>,
}

impl PassProfile {
    pub fn new(samples: Vec<PassSample>) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::input("a pass needs at least one sample"));
        }
        for (i, s) in samples.iter().enumerate() {
            ensure_finite("azimuth", s.azimuth_deg)?;
            ensure_finite("elevation", s.elevation_deg)?;
            ensure_finite("beta", s.beta_deg)?;
            if !(-90.0..=90.0).contains(&s.elevation_deg) {
                return Err(Error::input(format!("sample {i}: elevation {} outside [-90, 90]", s.elevation_deg)));
            }
            if i > 0 && s.t <= samples[i - 1].t {
                return Err(Error::input(format!("sample {i}: timestamps must be strictly increasing")));
            }
        }
        Ok(Self { samples })
    }

    pub fn samples(&self) -> &[PassSample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn start(&self) -> DateTime<Utc> {
        self.samples[0].t
    }

    pub fn end(&self) -> DateTime<Utc> {
        self.samples[self.samples.len() - 1].t
    }

    pub fn duration_s(&self) -> f64 {
        seconds_between(self.start(), self.end())
    }

    /// Seconds since the first sample, per sample.
    pub fn elapsed_s(&self) -> Vec<f64> {
        let t0 = self.start();
        self.samples.iter().map(|s| seconds_between(t0, s.t)).collect()
    }

    /// Sample of maximum elevation.
    pub fn culmination(&self) -> &PassSample {
        self.samples.iter().max_by(|a, b| a.elevation_deg.total_cmp(&b.elevation_deg)).expect("non-empty")
    }

    /// Replace β with a new series of the same length.
    pub fn with_beta(mut self, beta_deg: &[f64]) -> Result<Self> {
        if beta_deg.len() != self.samples.len() {
            return Err(Error::input(format!(
                "beta series has {} values for {} samples",
                beta_deg.len(),
                self.samples.len()
            )));
        }
        for (s, &b) in self.samples.iter_mut().zip(beta_deg) {
            ensure_finite("beta", b)?;
            s.beta_deg = b;
        }
        Ok(self)
    }

    /// CSV with header `t_iso8601,az_deg,el_deg,beta_deg`.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let io = |e: csv::Error| Error::Io(std::io::Error::other(e));
        w.write_record(["t_iso8601", "az_deg", "el_deg", "beta_deg"]).map_err(io)?;
        for s in &self.samples {
            w.write_record([
                format_time(s.t),
                s.azimuth_deg.to_string(),
                s.elevation_deg.to_string(),
                s.beta_deg.to_string(),
            ])
            .map_err(io)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Io(std::io::Error::other(e.to_string())))?;
        Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
    }

    /// Read a pass or ephemeris CSV. The `beta_deg` column is optional; the
    /// flag reports whether it was present (β is zero otherwise).
    pub fn from_csv(text: &str) -> Result<(Self, bool)> {
        const WHAT: &str = "pass CSV";
        let mut rd = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
        let header = rd.headers().map_err(|e| Error::parse(WHAT, 1, 1, e.to_string()))?.clone();
        let names: Vec<&str> = header.iter().collect();
        let has_beta = match names.as_slice() {
            ["t_iso8601", "az_deg", "el_deg"] => false,
            ["t_iso8601", "az_deg", "el_deg", "beta_deg"] => true,
            _ => return Err(Error::parse(WHAT, 1, 1, "header must be `t_iso8601,az_deg,el_deg[,beta_deg]`")),
        };
        let mut samples = Vec::new();
        for (i, rec) in rd.records().enumerate() {
            let line = i + 2;
            let rec = rec.map_err(|e| Error::parse(WHAT, line, 1, e.to_string()))?;
            if rec.len() != names.len() {
                return Err(Error::parse(
                    WHAT,
                    line,
                    1,
                    format!("expected {} columns, found {}", names.len(), rec.len()),
                ));
            }
            let t = DateTime::parse_from_rfc3339(&rec[0])
                .map_err(|e| Error::parse(WHAT, line, 1, format!("bad timestamp: {e}")))?
                .with_timezone(&Utc);
            let num = |col: usize| -> Result<f64> {
                rec[col]
                    .parse::<f64>()
                    .map_err(|_| Error::parse(WHAT, line, col + 1, format!("`{}` is not a number", &rec[col])))
            };
            samples.push(PassSample {
                t,
                azimuth_deg: num(1)?,
                elevation_deg: num(2)?,
                beta_deg: if has_beta { num(3)? } else { 0.0 },
            });
        }
        let profile = Self::new(samples).map_err(|e| Error::parse(WHAT, 2, 1, e.to_string()))?;
        Ok((profile, has_beta))
    }
}

pub fn format_time(t: DateTime<Utc>) -> String {
    t.to_rfc3339_opts(SecondsFormat::AutoSi, true)
}

/// How the satellite telescope angle β is obtained.
#[derive(Debug, Clone, PartialEq, Default)]
pub enum BetaModel {
    /// Telescope frame never rolls: β = 0.
    NadirFixed,
    /// Bearing of the station seen from the satellite's nadir-pointing
    /// frame, measured from the velocity direction counterclockwise as seen
    /// from above. Series are unwrapped modulo 180°.
    #[default]
    Geometric,
    /// Externally supplied series, used verbatim.
    Injected(Vec<f64>),
}

/// Station bearing from the satellite, degrees within ±180; `None` when
/// the station is at the sub-satellite point.
fn station_bearing(rec: &TleRecord, station: &GroundStation, t: DateTime<Utc>) -> Result<Option<f64>> {
    let sv = propagate(rec, t)?;
    let los = ecef_to_eci(&station.ecef(), t) - sv.position;
    let down = -sv.position.normalize();
    let forward = (sv.velocity - down * sv.velocity.dot(&down)).normalize();
    let right = down.cross(&forward);
    let (f, r) = (los.dot(&forward), los.dot(&right));
    if f.hypot(r) <= 1e-9 * los.norm() {
        return Ok(None);
    }
    Ok(Some(-r.atan2(f).to_degrees()))
}

/// Geometric β at a single instant, degrees within ±180 (0 when the
/// station is exactly at nadir).
pub fn beta_geometric(rec: &TleRecord, station: &GroundStation, t: DateTime<Utc>) -> Result<f64> {
    Ok(station_bearing(rec, station, t)?.unwrap_or(0.0))
}

/// β for each instant under `model`.
pub fn beta_angle(
    model: &BetaModel,
    rec: &TleRecord,
    station: &GroundStation,
    times: &[DateTime<Utc>],
) -> Result<Vec<f64>> {
    if times.is_empty() {
        return Err(Error::input("beta requires a non-empty pass"));
    }
    match model {
        BetaModel::NadirFixed => Ok(vec![0.0; times.len()]),
        BetaModel::Geometric => {
            let mut raw = Vec::with_capacity(times.len());
            for &t in times {
                let b = station_bearing(rec, station, t)?;
                // undefined at nadir: hold the previous value
                raw.push(b.unwrap_or_else(|| raw.last().copied().unwrap_or(0.0)));
            }
            Ok(unwrap(&raw, 180.0))
        }
        BetaModel::Injected(series) => {
            if series.len() != times.len() {
                return Err(Error::input(format!(
                    "injected beta has {} values for {} samples",
                    series.len(),
                    times.len()
                )));
            }
            Ok(series.clone())
        }
    }
}

/// Settings for [`extract_passes`].
#[derive(Debug, Clone, PartialEq)]
pub struct PassSearch {
    pub threshold_deg: f64,
    pub step: Duration,
    pub beta: BetaModel,
}

impl Default for PassSearch {
    fn default() -> Self {
        Self { threshold_deg: 10.0, step: Duration::seconds(1), beta: BetaModel::Geometric }
    }
}

impl PassSearch {
    pub fn with_threshold(threshold_deg: f64) -> Self {
        Self { threshold_deg, ..Self::default() }
    }
}

/// Elevation of the satellite at `t`, degrees.
pub fn elevation_at(rec: &TleRecord, station: &GroundStation, t: DateTime<Utc>) -> Result<f64> {
    Ok(topocentric(&propagate(rec, t)?.position, station, t).elevation_deg)
}

/// All complete passes in `[start, end]`. Rise and set instants are located
/// to 1 ns so that the first and last samples sit on the threshold; passes
/// already in progress at either window edge are dropped.
pub fn extract_passes(
    rec: &TleRecord,
    station: &GroundStation,
    start: DateTime<Utc>,
    end: DateTime<Utc>,
    search: &PassSearch,
) -> Result<Vec<PassProfile>> {
    let thr = search.threshold_deg;
    if !(0.0..90.0).contains(&thr) {
        return Err(Error::input(format!("threshold must lie in [0, 90), got {thr}")));
    }
    if end <= start {
        return Err(Error::input("window end must follow its start"));
    }
    if end - start > Duration::days(7) {
        return Err(Error::input("window must not exceed 7 days"));
    }
    let step_ns = search.step.num_nanoseconds().unwrap_or(0);
    if step_ns <= 0 {
        return Err(Error::input("sampling step must be positive"));
    }
    if let BetaModel::Injected(_) = search.beta {
        return Err(Error::input("injected beta cannot be used for pass search"));
    }

    let span_ns = (end - start).num_nanoseconds().expect("at most 7 days");
    let n = span_ns / step_ns;
    let at = |k: i64| start + Duration::nanoseconds(k * step_ns);
    let above = |t: DateTime<Utc>| -> Result<bool> { Ok(elevation_at(rec, station, t)? >= thr) };

    let mut passes = Vec::new();
    let mut k = 0;
    let mut prev_above = above(at(0))?;
    // skip a pass already under way at the window start
    while prev_above && k < n {
        k += 1;
        prev_above = above(at(k))?;
    }
    while k < n {
        let k_rise = k + 1;
        if !above(at(k_rise))? {
            k += 1;
            continue;
        }
        let mut k_last = k_rise;
        while k_last < n && above(at(k_last + 1))? {
            k_last += 1;
        }
        if k_last == n {
            break;
        }
        let rise = first_above(at(k), at(k_rise), &above)?;
        let set = first_above(at(k_last + 1), at(k_last), &above)?;
        let mut times = vec![rise];
        times.extend((k_rise..=k_last).map(at).filter(|&t| t > rise && t < set));
        if set > rise {
            times.push(set);
        }
        passes.push(build_profile(rec, station, &times, &search.beta)?);
        k = k_last + 1;
    }
    Ok(passes)
}

/// Bisect between `outside` (below threshold) and `inside` (at or above) to
/// the instant nearest `outside` that is still at or above threshold.
fn first_above(
    mut outside: DateTime<Utc>,
    mut inside: DateTime<Utc>,
    above: &impl Fn(DateTime<Utc>) -> Result<bool>,
) -> Result<DateTime<Utc>> {
    loop {
        let gap = (inside - outside).num_nanoseconds().expect("bounded");
        if gap.abs() <= 1 {
            return Ok(inside);
        }
        let mid = outside + Duration::nanoseconds(gap / 2);
        if above(mid)? {
            inside = mid;
        } else {
            outside = mid;
        }
    }
}

fn build_profile(
    rec: &TleRecord,
    station: &GroundStation,
    times: &[DateTime<Utc>],
    model: &BetaModel,
) -> Result<PassProfile> {
    let beta = beta_angle(model, rec, station, times)?;
    let samples = times
        .iter()
        .zip(beta)
        .map(|(&t, beta_deg)| {
            let look = topocentric(&propagate(rec, t)?.position, station, t);
            Ok(PassSample { t, azimuth_deg: look.azimuth_deg, elevation_deg: look.elevation_deg, beta_deg })
        })
        .collect::<Result<Vec<_>>>()?;
    PassProfile::new(samples)
}

/// [`extract_passes`] over several records, one record per task.
pub fn extract_passes_many(
    recs: &[TleRecord],
    station: &GroundStation,
    start: DateTime<Utc>,
    end: DateTime<Utc>,
    search: &PassSearch,
    exec: Exec,
) -> Result<Vec<Vec<PassProfile>>> {
    exec.map(recs, |r| extract_passes(r, station, start, end, search)).into_iter().collect()
}
