//! Offset scan: deliberate ground and satellite angle offsets added to the
//! compensation, and the resulting pass-averaged fidelity.

use crate::compensation::{chain_element, schedule_from_pass, Compensator};
use crate::error::{ensure_finite, Error, Result};
use crate::exec::Exec;
use crate::jones::{fidelity, MirrorResponse, PolarizationState};
use crate::tle_pass::pass::PassProfile;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OffsetCell {
    pub ground_offset_deg: f64,
    pub sat_offset_deg: f64,
    pub fidelity: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OffsetGrid {
    pub cells: Vec<OffsetCell>,
}

impl OffsetGrid {
    /// Cell of highest fidelity (first one on ties).
    pub fn peak(&self) -> &OffsetCell {
        self.cells
            .iter()
            .reduce(|best, c| if c.fidelity > best.fidelity { c } else { best })
            .expect("grids are non-empty")
    }

    pub fn at(&self, ground_offset_deg: f64, sat_offset_deg: f64) -> Option<&OffsetCell> {
        self.cells.iter().find(|c| c.ground_offset_deg == ground_offset_deg && c.sat_offset_deg == sat_offset_deg)
    }

    /// CSV with header `ground_offset_deg,sat_offset_deg,fidelity`.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let io = |e: csv::Error| Error::Io(std::io::Error::other(e));
        w.write_record(["ground_offset_deg", "sat_offset_deg", "fidelity"]).map_err(io)?;
        for c in &self.cells {
            w.write_record([c.ground_offset_deg.to_string(), c.sat_offset_deg.to_string(), c.fidelity.to_string()])
                .map_err(io)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Io(std::io::Error::other(e.to_string())))?;
        Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        const WHAT: &str = "offset grid";
        let mut rd = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
        let header = rd.headers().map_err(|e| Error::parse(WHAT, 1, 1, e.to_string()))?;
        if header.iter().ne(["ground_offset_deg", "sat_offset_deg", "fidelity"]) {
            return Err(Error::parse(WHAT, 1, 1, "header must be `ground_offset_deg,sat_offset_deg,fidelity`"));
        }
        let mut cells = Vec::new();
        for (i, rec) in rd.records().enumerate() {
            let line = i + 2;
            let rec = rec.map_err(|e| Error::parse(WHAT, line, 1, e.to_string()))?;
            if rec.len() != 3 {
                return Err(Error::parse(WHAT, line, 1, format!("expected 3 columns, found {}", rec.len())));
            }
            let num = |col: usize| -> Result<f64> {
                rec[col]
                    .parse()
                    .map_err(|_| Error::parse(WHAT, line, col + 1, format!("`{}` is not a number", &rec[col])))
            };
            cells.push(OffsetCell { ground_offset_deg: num(0)?, sat_offset_deg: num(1)?, fidelity: num(2)? });
        }
        if cells.is_empty() {
            return Err(Error::parse(WHAT, 2, 1, "grid has no rows"));
        }
        Ok(Self { cells })
    }
}

/// Pass-averaged fidelity for every (ground, satellite) offset pair. The
/// ground offset is added to the commanded HWP angle; the satellite offset
/// is added to β in the compensation law only, so the residual rotation is
/// `2g + s`.
pub fn offset_scan(
    ground_offsets_deg: &[f64],
    sat_offsets_deg: &[f64],
    coating: &MirrorResponse,
    input: &PolarizationState,
    pass: &PassProfile,
    compensator: &Compensator,
    exec: Exec,
) -> Result<OffsetGrid> {
    if ground_offsets_deg.is_empty() || sat_offsets_deg.is_empty() {
        return Err(Error::input("offset grids must be non-empty"));
    }
    for &v in ground_offsets_deg.iter().chain(sat_offsets_deg) {
        ensure_finite("offset", v)?;
    }
    let input = input.normalize()?;
    let ideal = MirrorResponse::ideal();
    let rest = compensator.angle(0.0, 0.0, 0.0)?;
    let expected = chain_element(0.0, 0.0, 0.0, rest, &ideal, compensator)? * input;
    let schedule = schedule_from_pass(pass, compensator)?;

    let pairs: Vec<(f64, f64)> =
        ground_offsets_deg.iter().flat_map(|&g| sat_offsets_deg.iter().map(move |&s| (g, s))).collect();
    let cells = exec
        .map(&pairs, |&(g, s)| -> Result<OffsetCell> {
            let mut sum = 0.0;
            for (p, sch) in pass.samples().iter().zip(&schedule.samples) {
                let hwp = sch.hwp_deg + g + compensator.sense.sign() * s / 2.0;
                let out = chain_element(p.azimuth_deg, p.elevation_deg, p.beta_deg, hwp, coating, compensator)? * input;
                sum += fidelity(&out.normalize()?, &expected)?;
            }
            Ok(OffsetCell { ground_offset_deg: g, sat_offset_deg: s, fidelity: sum / pass.len() as f64 })
        })
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    Ok(OffsetGrid { cells })
}

/// `-5, -4, …, 5`.
pub fn default_ground_offsets() -> Vec<f64> {
    (-5..=5).map(f64::from).collect()
}

/// `0, -1`.
pub fn default_sat_offsets() -> Vec<f64> {
    vec![0.0, -1.0]
}
