//! Transmitting antenna: a double off-axis paraboloid beam expander followed by
//! a two-mirror periscope scanning head.
//!
//! The paraboloids see incidence angles below 7° over their full apertures and
//! are treated as polarization neutral. The scanning head carries the coating
//! response. Its Jones matrix is
//!
//! ```text
//! J(θ, φ) = M · R(−φ) · M · R(θ),   M = diag(r_s, r_p)
//! ```
//!
//! where `R` is a frame rotation. For ideal mirrors `(1, −1)` this collapses to
//! `R(θ + φ)`: pointing rotates linear polarization by azimuth plus elevation.

use crate::error::{ensure_finite, Error, Result};
use crate::exec::Exec;
use crate::jones::{
    self, measure_per, mirror_element, per_to_fidelity, MirrorResponse, OpticalElement, PolarizationState,
};

/// Paraboloid parameters of the beam expander (focal lengths from the vertex
/// radii, `f = |R|/2`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TelescopeGeometry {
    pub primary_focal_mm: f64,
    pub primary_semi_diameter_mm: f64,
    pub secondary_focal_mm: f64,
    pub secondary_semi_diameter_mm: f64,
    pub conic: f64,
}

impl TelescopeGeometry {
    pub fn new(
        primary_focal_mm: f64,
        primary_semi_diameter_mm: f64,
        secondary_focal_mm: f64,
        secondary_semi_diameter_mm: f64,
        conic: f64,
    ) -> Result<Self> {
        for (name, v) in [
            ("primary focal length", primary_focal_mm),
            ("primary semi-diameter", primary_semi_diameter_mm),
            ("secondary focal length", secondary_focal_mm),
            ("secondary semi-diameter", secondary_semi_diameter_mm),
        ] {
            ensure_finite(name, v)?;
            if v <= 0.0 {
                return Err(Error::input(format!("{name} must be positive, got {v}")));
            }
        }
        if conic != -1.0 {
            return Err(Error::input(format!("only paraboloids (conic = -1) are modeled, got {conic}")));
        }
        Ok(Self { primary_focal_mm, primary_semi_diameter_mm, secondary_focal_mm, secondary_semi_diameter_mm, conic })
    }

    /// Ngari transmitter: radii −1625 mm and −65 mm, semi-diameters 190 mm and 7.6 mm.
    pub fn ngari() -> Self {
        Self::new(812.5, 190.0, 32.5, 7.6, -1.0).expect("constants are valid")
    }

    /// Largest incidence angle over both apertures.
    pub fn max_incidence_angle(&self) -> f64 {
        let p = (self.primary_semi_diameter_mm / (2.0 * self.primary_focal_mm)).atan();
        let s = (self.secondary_semi_diameter_mm / (2.0 * self.secondary_focal_mm)).atan();
        p.max(s)
    }

    /// Jones matrix of the beam expander: identity under the small-angle model.
    pub fn expander_element(&self) -> OpticalElement {
        OpticalElement::identity()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Paraboloid {
    Primary,
    Secondary,
}

/// Angle between an axis-parallel ray at height `ray_height_mm` and the
/// surface normal of the paraboloid `z = r²/(4f)`.
pub fn parabola_incidence_angle(geom: &TelescopeGeometry, mirror: Paraboloid, ray_height_mm: f64) -> Result<f64> {
    ensure_finite("ray height", ray_height_mm)?;
    let (f, semi) = match mirror {
        Paraboloid::Primary => (geom.primary_focal_mm, geom.primary_semi_diameter_mm),
        Paraboloid::Secondary => (geom.secondary_focal_mm, geom.secondary_semi_diameter_mm),
    };
    if !(0.0..=semi).contains(&ray_height_mm) {
        return Err(Error::input(format!("ray height {ray_height_mm} mm is outside the aperture [0, {semi}] mm")));
    }
    Ok((ray_height_mm / (2.0 * f)).atan())
}

/// Azimuth `θ` and elevation `φ` of the scanning head, in degrees.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PointingDirection {
    azimuth_deg: f64,
    elevation_deg: f64,
}

impl PointingDirection {
    pub fn new(azimuth_deg: f64, elevation_deg: f64) -> Result<Self> {
        ensure_finite("azimuth", azimuth_deg)?;
        ensure_finite("elevation", elevation_deg)?;
        if !(-180.0..180.0).contains(&azimuth_deg) {
            return Err(Error::input(format!("azimuth must lie in [-180, 180), got {azimuth_deg}")));
        }
        if !(0.0..=90.0).contains(&elevation_deg) {
            return Err(Error::input(format!("elevation must lie in [0, 90], got {elevation_deg}")));
        }
        Ok(Self { azimuth_deg, elevation_deg })
    }

    /// Like [`PointingDirection::new`] but wraps any finite azimuth into `[-180, 180)`.
    pub fn wrapped(azimuth_deg: f64, elevation_deg: f64) -> Result<Self> {
        ensure_finite("azimuth", azimuth_deg)?;
        Self::new((azimuth_deg + 180.0).rem_euclid(360.0) - 180.0, elevation_deg)
    }

    pub fn azimuth_deg(&self) -> f64 {
        self.azimuth_deg
    }

    pub fn elevation_deg(&self) -> f64 {
        self.elevation_deg
    }

    /// Polarization frame rotation `θ + φ`, radians.
    pub fn frame_rotation(&self) -> f64 {
        (self.azimuth_deg + self.elevation_deg).to_radians()
    }
}

/// Composed Jones matrix of the two 45° scanning-head mirrors.
pub fn scanning_head_jones(dir: &PointingDirection, coating: &MirrorResponse) -> Result<OpticalElement> {
    let m = mirror_element(coating)?;
    let az = dir.azimuth_deg.to_radians();
    let el = dir.elevation_deg.to_radians();
    Ok(m * jones::rotator(-el)? * m * jones::rotator(az)?)
}

/// Full transmitter: expander then scanning head.
pub fn antenna_jones(
    geom: &TelescopeGeometry,
    dir: &PointingDirection,
    coating: &MirrorResponse,
) -> Result<OpticalElement> {
    Ok(scanning_head_jones(dir, coating)? * geom.expander_element())
}

/// One probe state at one pointing direction.
#[derive(Debug, Clone, PartialEq)]
pub struct PerCell {
    pub elevation_deg: f64,
    pub azimuth_deg: f64,
    pub state_label: String,
    pub per: f64,
    pub fidelity: f64,
}

/// Simulated local PER test, elevation-major then azimuth then state.
#[derive(Debug, Clone, PartialEq)]
pub struct PerGrid {
    pub cells: Vec<PerCell>,
}

impl PerGrid {
    pub fn min_per(&self) -> f64 {
        self.cells.iter().map(|c| c.per).fold(f64::INFINITY, f64::min)
    }

    pub fn mean_per(&self) -> f64 {
        self.cells.iter().map(|c| c.per).sum::<f64>() / self.cells.len() as f64
    }

    pub fn min_fidelity(&self) -> f64 {
        self.cells.iter().map(|c| c.fidelity).fold(f64::INFINITY, f64::min)
    }

    pub fn mean_fidelity(&self) -> f64 {
        self.cells.iter().map(|c| c.fidelity).sum::<f64>() / self.cells.len() as f64
    }

    /// CSV with header `elevation_deg,azimuth_deg,state_label,per,fidelity`.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let io = |e: csv::Error| Error::Io(std::io::Error::other(e));
        w.write_record(["elevation_deg", "azimuth_deg", "state_label", "per", "fidelity"]).map_err(io)?;
        for c in &self.cells {
            w.write_record([
                c.elevation_deg.to_string(),
                c.azimuth_deg.to_string(),
                c.state_label.clone(),
                c.per.to_string(),
                c.fidelity.to_string(),
            ])
            .map_err(io)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Io(std::io::Error::other(e.to_string())))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut rd = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
        let mut cells = Vec::new();
        for (i, rec) in rd.records().enumerate() {
            let line = i + 2;
            let rec = rec.map_err(|e| Error::parse("PER grid", line, 1, e.to_string()))?;
            if rec.len() != 5 {
                return Err(Error::parse("PER grid", line, 1, format!("expected 5 columns, found {}", rec.len())));
            }
            let num = |k: usize| -> Result<f64> {
                rec[k].parse().map_err(|_| Error::parse("PER grid", line, k + 1, format!("bad number `{}`", &rec[k])))
            };
            cells.push(PerCell {
                elevation_deg: num(0)?,
                azimuth_deg: num(1)?,
                state_label: rec[2].to_string(),
                per: num(3)?,
                fidelity: num(4)?,
            });
        }
        Ok(Self { cells })
    }
}

/// PER of `input` after the antenna, with the analyzer aligned to where an
/// ideal-mirror antenna would put the polarization.
pub fn cell_per(
    geom: &TelescopeGeometry,
    dir: &PointingDirection,
    coating: &MirrorResponse,
    input: &PolarizationState,
) -> Result<f64> {
    let out = antenna_jones(geom, dir, coating)? * *input;
    let expected = jones::rotator(dir.frame_rotation())? * *input;
    Ok(measure_per(&out, expected.orientation()))
}

/// PER for every (elevation, azimuth, state) combination.
pub fn antenna_per_scan(
    geom: &TelescopeGeometry,
    coating: &MirrorResponse,
    elevations_deg: &[f64],
    azimuths_deg: &[f64],
    states: &[(String, PolarizationState)],
    exec: Exec,
) -> Result<PerGrid> {
    if elevations_deg.is_empty() || azimuths_deg.is_empty() || states.is_empty() {
        return Err(Error::input("PER scan needs at least one elevation, azimuth and state"));
    }
    mirror_element(coating)?;
    let mut jobs = Vec::with_capacity(elevations_deg.len() * azimuths_deg.len() * states.len());
    for &el in elevations_deg {
        for &az in azimuths_deg {
            let dir = PointingDirection::wrapped(az, el)?;
            for (label, st) in states {
                let st = st.normalize()?;
                jobs.push((el, az, dir, label.clone(), st));
            }
        }
    }
    let cells = exec.map(&jobs, |(el, az, dir, label, st)| -> Result<PerCell> {
        let per = cell_per(geom, dir, coating, st)?;
        Ok(PerCell {
            elevation_deg: *el,
            azimuth_deg: *az,
            state_label: label.clone(),
            per,
            fidelity: per_to_fidelity(per)?,
        })
    });
    Ok(PerGrid { cells: cells.into_iter().collect::<Result<_>>()? })
}

/// Elevations of the local test, degrees.
pub const LOCAL_TEST_ELEVATIONS: [f64; 3] = [30.0, 50.0, 70.0];

/// Azimuths of the local test, degrees.
pub const LOCAL_TEST_AZIMUTHS: [f64; 8] = [-180.0, -135.0, -90.0, -45.0, 0.0, 45.0, 90.0, 135.0];

/// The H, V, +, − probe states with labels.
pub fn local_test_states() -> Vec<(String, PolarizationState)> {
    jones::probe_states().iter().map(|(l, s)| (l.to_string(), *s)).collect()
}

/// Frame rotation actually produced by the head on linear light, radians in `[-π/2, π/2)`.
pub fn measured_frame_rotation(dir: &PointingDirection, coating: &MirrorResponse) -> Result<f64> {
    let out = scanning_head_jones(dir, coating)? * PolarizationState::h();
    Ok(out.orientation())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use jones::PER_CAP;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn wrap_half_turn(x: f64) -> f64 {
        (x + PI / 2.0).rem_euclid(PI) - PI / 2.0
    }

    #[test]
    fn paraboloid_angles() {
        let g = TelescopeGeometry::ngari();
        assert_eq!(parabola_incidence_angle(&g, Paraboloid::Primary, 0.0).unwrap(), 0.0);
        let p = parabola_incidence_angle(&g, Paraboloid::Primary, 190.0).unwrap();
        assert_abs_diff_eq!(p, (190.0f64 / 1625.0).atan(), epsilon = 1e-15);
        assert_abs_diff_eq!(p.to_degrees(), 6.67, epsilon = 0.01);
        let s = parabola_incidence_angle(&g, Paraboloid::Secondary, 7.6).unwrap();
        assert_abs_diff_eq!(s, (7.6f64 / 65.0).atan(), epsilon = 1e-15);
        assert!(parabola_incidence_angle(&g, Paraboloid::Secondary, 7.7).is_err());
        assert!(parabola_incidence_angle(&g, Paraboloid::Primary, -1.0).is_err());
        assert!(g.max_incidence_angle().to_degrees() < 7.0);
    }

    #[test]
    fn geometry_validation() {
        assert!(TelescopeGeometry::new(-1.0, 1.0, 1.0, 1.0, -1.0).is_err());
        assert!(TelescopeGeometry::new(1.0, 1.0, 1.0, 1.0, 0.0).is_err());
        assert!(PointingDirection::new(180.0, 10.0).is_err());
        assert!(PointingDirection::new(0.0, 91.0).is_err());
        assert_eq!(PointingDirection::wrapped(270.0, 10.0).unwrap().azimuth_deg(), -90.0);
    }

    #[test]
    fn ideal_head_reference_and_rotation() {
        let ideal = MirrorResponse::ideal();
        let zero = PointingDirection::new(0.0, 0.0).unwrap();
        let j0 = scanning_head_jones(&zero, &ideal).unwrap();
        assert_eq!(measure_per(&(j0 * PolarizationState::h()), 0.0), PER_CAP);

        let east = PointingDirection::new(90.0, 0.0).unwrap();
        let out = scanning_head_jones(&east, &ideal).unwrap() * PolarizationState::h();
        let rotated = (out.orientation() - (j0 * PolarizationState::h()).orientation()).abs();
        assert_abs_diff_eq!(rotated, PI / 2.0, epsilon = 1e-12);
    }

    #[test]
    fn coated_head_keeps_per_above_floor() {
        let dir = PointingDirection::new(0.0, 50.0).unwrap();
        let per =
            cell_per(&TelescopeGeometry::ngari(), &dir, &MirrorResponse::coated_780nm(), &PolarizationState::plus())
                .unwrap();
        assert!(per >= 400.0, "{per}");
    }

    #[test]
    fn full_local_scan() {
        let g = TelescopeGeometry::ngari();
        let grid = antenna_per_scan(
            &g,
            &MirrorResponse::coated_780nm(),
            &LOCAL_TEST_ELEVATIONS,
            &LOCAL_TEST_AZIMUTHS,
            &local_test_states(),
            Exec::Parallel,
        )
        .unwrap();
        assert_eq!(grid.cells.len(), 96);
        assert!(grid.min_per() >= 400.0);
        let seq = antenna_per_scan(
            &g,
            &MirrorResponse::coated_780nm(),
            &LOCAL_TEST_ELEVATIONS,
            &LOCAL_TEST_AZIMUTHS,
            &local_test_states(),
            Exec::Sequential,
        )
        .unwrap();
        assert_eq!(grid, seq);
        assert_eq!(PerGrid::from_csv(&grid.to_csv().unwrap()).unwrap(), grid);
    }

    #[test]
    fn ideal_scan_is_capped() {
        let grid = antenna_per_scan(
            &TelescopeGeometry::ngari(),
            &MirrorResponse::ideal(),
            &LOCAL_TEST_ELEVATIONS,
            &LOCAL_TEST_AZIMUTHS,
            &local_test_states(),
            Exec::Sequential,
        )
        .unwrap();
        assert!(grid.cells.iter().all(|c| c.per == PER_CAP));
    }

    #[test]
    fn single_cell_matches_composition() {
        let g = TelescopeGeometry::ngari();
        let coat = MirrorResponse::coated_780nm();
        let states = vec![("+".to_string(), PolarizationState::plus())];
        let grid = antenna_per_scan(&g, &coat, &[50.0], &[-45.0], &states, Exec::Sequential).unwrap();
        assert_eq!(grid.cells.len(), 1);
        let dir = PointingDirection::new(-45.0, 50.0).unwrap();
        let out = scanning_head_jones(&dir, &coat).unwrap() * PolarizationState::plus();
        let expect = measure_per(&out, PI / 4.0 + dir.frame_rotation());
        assert_eq!(grid.cells[0].per, expect);
        assert!(antenna_per_scan(&g, &coat, &[], &[0.0], &states, Exec::Sequential).is_err());
    }

    proptest! {
        #[test]
        fn head_is_passive(az in -180.0f64..180.0, el in 0.0f64..=90.0) {
            let dir = PointingDirection::new(az, el).unwrap();
            let j = scanning_head_jones(&dir, &MirrorResponse::coated_780nm()).unwrap();
            prop_assert!(j.operator_norm() <= 1.0 + 1e-12);
        }

        #[test]
        fn ideal_rotation_is_additive(az in -180.0f64..180.0, el in 0.0f64..=90.0, g in -1.5f64..1.5) {
            let dir = PointingDirection::new(az, el).unwrap();
            let ideal = MirrorResponse::ideal();
            let rot = measured_frame_rotation(&dir, &ideal).unwrap();
            prop_assert!(wrap_half_turn(rot - dir.frame_rotation()).abs() < 1e-9);
            let input = PolarizationState::linear(g);
            let out = scanning_head_jones(&dir, &ideal).unwrap() * input;
            prop_assert_eq!(measure_per(&out, g + dir.frame_rotation()), PER_CAP);
        }
    }
}
