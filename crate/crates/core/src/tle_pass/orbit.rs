//! Two-body propagation and ground-station geometry on a spherical Earth.

use std::f64::consts::{PI, TAU};

use chrono::{DateTime, Utc};
use nalgebra::Vector3;

use super::tle::TleRecord;
use crate::error::{ensure_finite, Error, Result};

/// Earth gravitational parameter, km³/s².
pub const MU_EARTH: f64 = 398_600.441_8;
/// Equatorial radius used for the spherical Earth, km.
pub const EARTH_RADIUS_KM: f64 = 6378.137;
/// Propagation is refused further than this from the element epoch.
pub const MAX_PROPAGATION_DAYS: f64 = 7.0;

const KEPLER_TOL: f64 = 1e-12;

/// Solve `E − e·sin E = M` for the eccentric anomaly. `M` is reduced to
/// `[0, 2π)` first; the returned `E` lies in `[0, 2π]`.
pub fn solve_kepler(mean_anomaly: f64, e: f64) -> Result<f64> {
    ensure_finite("mean anomaly", mean_anomaly)?;
    if !(0.0..1.0).contains(&e) {
        return Err(Error::input(format!("eccentricity must lie in [0, 1), got {e}")));
    }
    let m = mean_anomaly.rem_euclid(TAU);
    let f = |x: f64| x - e * x.sin() - m;
    // f is increasing on [0, 2π] with f(0) ≤ 0 ≤ f(2π)
    let (mut lo, mut hi) = (0.0, TAU);
    let mut x = if e < 0.8 { m + e * m.sin() } else { PI };
    for _ in 0..100 {
        let fx = f(x);
        if fx.abs() < KEPLER_TOL {
            // one more Newton step costs nothing and leaves rounding-level residuals
            let polished = x - fx / (1.0 - e * x.cos());
            return Ok(if f(polished).abs() < fx.abs() { polished } else { x });
        }
        if fx < 0.0 {
            lo = x;
        } else {
            hi = x;
        }
        let step = fx / (1.0 - e * x.cos());
        let next = x - step;
        x = if next > lo && next < hi { next } else { 0.5 * (lo + hi) };
    }
    let residual = f(x).abs();
    if residual < KEPLER_TOL {
        Ok(x)
    } else {
        Err(Error::Numeric { message: "Kepler solver did not converge".into(), residual })
    }
}

/// Position and velocity in the Earth-centered inertial frame, km and km/s.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StateVector {
    pub position: Vector3<f64>,
    pub velocity: Vector3<f64>,
}

impl StateVector {
    /// Specific orbital energy `v²/2 − μ/r`.
    pub fn specific_energy(&self) -> f64 {
        0.5 * self.velocity.norm_squared() - MU_EARTH / self.position.norm()
    }
}

/// Mean motion in rad/s.
pub fn mean_motion_rad_s(rec: &TleRecord) -> f64 {
    rec.mean_motion_rev_per_day * TAU / 86_400.0
}

pub fn semi_major_axis_km(rec: &TleRecord) -> f64 {
    let n = mean_motion_rad_s(rec);
    (MU_EARTH / (n * n)).cbrt()
}

/// Keplerian state at `t`, ignoring all perturbations.
pub fn propagate(rec: &TleRecord, t: DateTime<Utc>) -> Result<StateVector> {
    let dt = seconds_between(rec.epoch(), t);
    if dt.abs() > MAX_PROPAGATION_DAYS * 86_400.0 {
        return Err(Error::Range(format!(
            "{:.3} days from epoch exceeds the {MAX_PROPAGATION_DAYS}-day two-body horizon",
            dt / 86_400.0
        )));
    }
    let n = mean_motion_rad_s(rec);
    let a = semi_major_axis_km(rec);
    let e = rec.eccentricity();
    let m = rec.mean_anomaly_deg.to_radians() + n * dt;
    let ea = solve_kepler(m, e)?;
    let (se, ce) = ea.sin_cos();
    let b = (1.0 - e * e).sqrt();
    let r = a * (1.0 - e * ce);
    let pf_pos = Vector3::new(a * (ce - e), a * b * se, 0.0);
    let k = (MU_EARTH * a).sqrt() / r;
    let pf_vel = Vector3::new(-k * se, k * b * ce, 0.0);

    let rot =
        perifocal_to_eci(rec.raan_deg.to_radians(), rec.inclination_deg.to_radians(), rec.arg_perigee_deg.to_radians());
    Ok(StateVector { position: rot * pf_pos, velocity: rot * pf_vel })
}

fn perifocal_to_eci(raan: f64, inc: f64, argp: f64) -> nalgebra::Matrix3<f64> {
    let (so, co) = raan.sin_cos();
    let (si, ci) = inc.sin_cos();
    let (sw, cw) = argp.sin_cos();
    nalgebra::Matrix3::new(
        co * cw - so * sw * ci,
        -co * sw - so * cw * ci,
        so * si,
        so * cw + co * sw * ci,
        -so * sw + co * cw * ci,
        -co * si,
        sw * si,
        cw * si,
        ci,
    )
}

pub(crate) fn seconds_between(from: DateTime<Utc>, to: DateTime<Utc>) -> f64 {
    let d = to - from;
    match d.num_nanoseconds() {
        Some(ns) => ns as f64 * 1e-9,
        None => d.num_milliseconds() as f64 * 1e-3,
    }
}

/// Greenwich mean sidereal angle, radians in `[0, 2π)` (UT1 ≈ UTC).
pub fn gmst(t: DateTime<Utc>) -> f64 {
    // seconds from J2000.0 (2000-01-01 12:00 UTC), kept off the Julian-date
    // scale where f64 spacing is ~40 µs
    let secs_j2000 = (t.timestamp() - 946_728_000) as f64 + t.timestamp_subsec_nanos() as f64 * 1e-9;
    let tu = secs_j2000 / 86_400.0 / 36_525.0;
    let secs =
        67_310.548_41 + (876_600.0 * 3600.0 + 8_640_184.812_866) * tu + 0.093_104 * tu * tu - 6.2e-6 * tu * tu * tu;
    (secs.rem_euclid(86_400.0) / 240.0).to_radians()
}

/// Rotate an inertial vector into the Earth-fixed frame.
pub fn eci_to_ecef(v: &Vector3<f64>, t: DateTime<Utc>) -> Vector3<f64> {
    let (s, c) = gmst(t).sin_cos();
    Vector3::new(c * v.x + s * v.y, -s * v.x + c * v.y, v.z)
}

pub fn ecef_to_eci(v: &Vector3<f64>, t: DateTime<Utc>) -> Vector3<f64> {
    let (s, c) = gmst(t).sin_cos();
    Vector3::new(c * v.x - s * v.y, s * v.x + c * v.y, v.z)
}

/// Observer on a spherical Earth; latitude is used as geocentric.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GroundStation {
    pub latitude_deg: f64,
    pub longitude_deg: f64,
    pub altitude_m: f64,
}

impl GroundStation {
    pub fn new(latitude_deg: f64, longitude_deg: f64, altitude_m: f64) -> Result<Self> {
        ensure_finite("latitude", latitude_deg)?;
        ensure_finite("longitude", longitude_deg)?;
        ensure_finite("altitude", altitude_m)?;
        if latitude_deg.abs() > 90.0 {
            return Err(Error::input(format!("latitude must lie in [-90, 90], got {latitude_deg}")));
        }
        if altitude_m <= -500.0 {
            return Err(Error::input(format!("altitude must exceed -500 m, got {altitude_m}")));
        }
        Ok(Self { latitude_deg, longitude_deg, altitude_m })
    }

    /// Ngari observatory: 32°19′33.07″ N, 80°01′34.18″ E, 5047 m.
    pub fn ngari() -> Self {
        let lat = 32.0 + 19.0 / 60.0 + 33.07 / 3600.0;
        let lon = 80.0 + 1.0 / 60.0 + 34.18 / 3600.0;
        Self::new(lat, lon, 5047.0).expect("constants are valid")
    }

    pub fn ecef(&self) -> Vector3<f64> {
        let r = EARTH_RADIUS_KM + self.altitude_m / 1000.0;
        let (sl, cl) = self.latitude_deg.to_radians().sin_cos();
        let (so, co) = self.longitude_deg.to_radians().sin_cos();
        Vector3::new(r * cl * co, r * cl * so, r * sl)
    }

    /// Local east, north, up unit vectors in the Earth-fixed frame.
    pub fn enu_basis(&self) -> [Vector3<f64>; 3] {
        let (sl, cl) = self.latitude_deg.to_radians().sin_cos();
        let (so, co) = self.longitude_deg.to_radians().sin_cos();
        [Vector3::new(-so, co, 0.0), Vector3::new(-sl * co, -sl * so, cl), Vector3::new(cl * co, cl * so, sl)]
    }
}

/// Azimuth (from north through east, `[0, 360)`), elevation and slant range.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LookAngles {
    pub azimuth_deg: f64,
    pub elevation_deg: f64,
    pub range_km: f64,
}

/// Look angles to an Earth-fixed position.
pub fn topocentric_ecef(sat_ecef: &Vector3<f64>, station: &GroundStation) -> LookAngles {
    let rel = sat_ecef - station.ecef();
    let range = rel.norm();
    let [e, n, u] = station.enu_basis();
    let (de, dn, du) = (rel.dot(&e), rel.dot(&n), rel.dot(&u));
    let horiz = de.hypot(dn);
    let azimuth_deg = if horiz <= 1e-12 * range.max(1.0) { 0.0 } else { de.atan2(dn).to_degrees().rem_euclid(360.0) };
    LookAngles {
        azimuth_deg: if azimuth_deg >= 360.0 { 0.0 } else { azimuth_deg },
        elevation_deg: du.atan2(horiz).to_degrees(),
        range_km: range,
    }
}

/// Look angles to an inertial position at time `t`.
pub fn topocentric(sat_eci: &Vector3<f64>, station: &GroundStation, t: DateTime<Utc>) -> LookAngles {
    topocentric_ecef(&eci_to_ecef(sat_eci, t), station)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tle_pass::tle::TleRecord;
    use approx::assert_abs_diff_eq;
    use chrono::{Duration, TimeZone};

    fn bisect_kepler(m: f64, e: f64) -> f64 {
        let (mut lo, mut hi) = (0.0f64, TAU);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid - e * mid.sin() - m < 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn kepler_against_bisection() {
        let oracle = bisect_kepler(2.0, 0.7);
        let e = solve_kepler(2.0, 0.7).unwrap();
        assert_abs_diff_eq!(e, oracle, epsilon = 1e-12);
        assert_abs_diff_eq!(e, 2.447_683_214_6, epsilon = 1e-9);
        for (m, ecc) in [(0.0, 0.0), (0.1, 0.9), (6.2, 0.9), (3.0, 0.5), (-1.0, 0.3)] {
            let x = solve_kepler(m, ecc).unwrap();
            let mr = f64::rem_euclid(m, TAU);
            assert!((x - ecc * x.sin() - mr).abs() < 1e-12);
        }
        assert!(solve_kepler(1.0, 1.0).is_err());
    }

    fn circular() -> TleRecord {
        let epoch = Utc.with_ymd_and_hms(2020, 1, 1, 0, 0, 0).unwrap();
        TleRecord::from_elements(None, 1, epoch, 97.4, 30.0, 0.0, 0.0, 0.0, 15.2).unwrap()
    }

    #[test]
    fn circular_radius() {
        let rec = circular();
        let s = propagate(&rec, rec.epoch()).unwrap();
        let n = rec.mean_motion_rev_per_day * TAU / 86_400.0;
        assert_abs_diff_eq!(s.position.norm(), (MU_EARTH / (n * n)).cbrt(), epsilon = 1e-9);
    }

    #[test]
    fn periodic_after_one_period() {
        let epoch = Utc.with_ymd_and_hms(2020, 1, 1, 0, 0, 0).unwrap();
        let rec = TleRecord::from_elements(None, 1, epoch, 51.6, 10.0, 0.001, 40.0, 20.0, 15.5).unwrap();
        let period_ns = (86_400e9 / rec.mean_motion_rev_per_day).round() as i64;
        let a = propagate(&rec, epoch).unwrap();
        let b = propagate(&rec, epoch + Duration::nanoseconds(period_ns)).unwrap();
        // 1 ns of rounding in the period moves the satellite ~8e-6 km
        assert!((a.position - b.position).norm() < 1e-5);
    }

    #[test]
    fn horizon_guard() {
        let rec = circular();
        assert!(matches!(propagate(&rec, rec.epoch() + Duration::days(8)), Err(Error::Range(_))));
    }

    #[test]
    fn energy_constant_over_a_week() {
        let epoch = Utc.with_ymd_and_hms(2020, 1, 1, 0, 0, 0).unwrap();
        let rec = TleRecord::from_elements(None, 1, epoch, 51.6, 10.0, 0.05, 40.0, 20.0, 14.0).unwrap();
        let e0 = propagate(&rec, epoch).unwrap().specific_energy();
        for h in (0..=168).step_by(7) {
            let e = propagate(&rec, epoch + Duration::hours(h)).unwrap().specific_energy();
            assert!(((e - e0) / e0).abs() < 1e-9);
        }
    }

    #[test]
    fn zenith_horizon_and_hand_geometry() {
        let st = GroundStation::new(0.0, 0.0, 0.0).unwrap();
        let up = topocentric_ecef(&Vector3::new(EARTH_RADIUS_KM + 500.0, 0.0, 0.0), &st);
        assert_abs_diff_eq!(up.elevation_deg, 90.0, epsilon = 1e-12);
        assert_eq!(up.azimuth_deg, 0.0);
        let horizon = topocentric_ecef(&Vector3::new(EARTH_RADIUS_KM, 0.0, 1000.0), &st);
        assert_abs_diff_eq!(horizon.elevation_deg, 0.0, epsilon = 1e-12);
        let over = topocentric_ecef(&Vector3::new(0.0, EARTH_RADIUS_KM + 600.0, 0.0), &st);
        assert_abs_diff_eq!(over.azimuth_deg, 90.0, epsilon = 1e-12);
        assert!(over.elevation_deg < 0.0);
    }

    #[test]
    fn frame_rotations_invert() {
        let t = Utc.with_ymd_and_hms(2019, 3, 5, 17, 3, 2).unwrap();
        let v = Vector3::new(1000.0, -2000.0, 3000.0);
        assert!((ecef_to_eci(&eci_to_ecef(&v, t), t) - v).norm() < 1e-9);
        // J2000 epoch: GMST ≈ 280.46°
        let j2000 = Utc.with_ymd_and_hms(2000, 1, 1, 12, 0, 0).unwrap();
        assert_abs_diff_eq!(gmst(j2000).to_degrees(), 280.46061837, epsilon = 1e-6);
    }

    #[test]
    fn station_validation() {
        assert!(GroundStation::new(91.0, 0.0, 0.0).is_err());
        assert!(GroundStation::new(0.0, 0.0, -600.0).is_err());
        let n = GroundStation::ngari();
        assert_abs_diff_eq!(n.latitude_deg, 32.325853, epsilon = 1e-6);
    }
}
