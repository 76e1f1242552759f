//! Command implementations behind the `polsim` binary.
//!
//! Config values are in degrees and conventional units; each command turns
//! them into model inputs, runs the model, writes its files into the output
//! directory and returns a short text summary.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use chrono::{DateTime, Duration, Utc};
use serde::Serialize;

use crate::antenna::{self, TelescopeGeometry};
use crate::compensation::{self, Compensator, Sense};
use crate::config::Config;
use crate::error::{Error, Result};
use crate::exec::{with_jobs, Exec};
use crate::jones::{self, MirrorResponse, PolarizationState};
use crate::link_sim::counting::{self, counts_from_csv, counts_to_csv, DEFAULT_DARK_RATE, DEFAULT_WINDOW_S};
use crate::link_sim::offset::{default_ground_offsets, default_sat_offsets};
use crate::link_sim::{
    bootstrap_sigma_s, calibrate, estimate_chsh, offset_scan, run_ensemble, simulate_chsh, BellReport, ChannelModel,
    ChshSettings, DetectionModel, LinkModel, ModelParameters, SourceModel,
};
use crate::thinfilm::{stack_response, LayerStack, Ray};
use crate::tle_pass::pass::{extract_passes, BetaModel, PassProfile, PassSearch};
use crate::tle_pass::{parse_tle, GroundStation};

/// Reference stack shipped in the data directory.
pub const REFERENCE_STACK_FILE: &str = "reference_stack_780nm.txt";
/// Synthetic sun-synchronous record passing over the Ngari station.
pub const REFERENCE_TLE_FILE: &str = "ngari_sso.tle";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Coating,
    PerMap,
    Compensate,
    OffsetScan,
    Bell,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Coating => "coating",
            Command::PerMap => "per-map",
            Command::Compensate => "compensate",
            Command::OffsetScan => "offset-scan",
            Command::Bell => "bell",
        }
    }

    /// Config keys the command accepts.
    pub fn keys(self) -> &'static [&'static str] {
        match self {
            Command::Coating => &["stack_file", "angle_deg", "wavelength_nm"],
            Command::PerMap => &["coating", "stack_file", "wavelength_nm", "elevations_deg", "azimuths_deg", "states"],
            Command::Compensate => &[
                "tle_file",
                "pass_file",
                "station_lat_deg",
                "station_lon_deg",
                "station_alt_m",
                "start_iso8601",
                "duration_h",
                "threshold_deg",
                "step_s",
                "beta_model",
                "zero_point_deg",
                "sense",
                "max_slew_deg_per_s",
            ],
            Command::OffsetScan => &[
                "tle_file",
                "pass_file",
                "station_lat_deg",
                "station_lon_deg",
                "station_alt_m",
                "start_iso8601",
                "duration_h",
                "threshold_deg",
                "step_s",
                "beta_model",
                "pass_index",
                "zero_point_deg",
                "sense",
                "max_slew_deg_per_s",
                "coating",
                "stack_file",
                "wavelength_nm",
                "input_state",
                "ground_offsets_deg",
                "sat_offsets_deg",
            ],
            Command::Bell => &[
                "source_fidelity",
                "pair_rate_per_s",
                "loss_db",
                "depolarization",
                "channel_rotation_deg",
                "efficiency",
                "dark_rate_per_s",
                "window_ns",
                "integration_s",
                "calibrate",
                "target_s",
                "target_coincidences",
                "settings_deg",
                "counts_file",
                "bootstrap_resamples",
                "ensemble_runs",
            ],
        }
    }
}

/// Everything a command needs besides its config.
#[derive(Debug, Clone)]
pub struct RunContext {
    pub seed: u64,
    pub jobs: usize,
    pub out_dir: PathBuf,
    pub data_dir: PathBuf,
}

impl RunContext {
    fn exec(&self) -> Exec {
        if self.jobs > 1 {
            Exec::Parallel
        } else {
            Exec::Sequential
        }
    }

    fn write(&self, name: &str, contents: &str) -> Result<PathBuf> {
        std::fs::create_dir_all(&self.out_dir)?;
        let path = self.out_dir.join(name);
        std::fs::write(&path, contents)?;
        Ok(path)
    }
}

/// `POLSIM_DATA_DIR`, or the `data` directory of this package.
pub fn default_data_dir() -> PathBuf {
    match std::env::var_os("POLSIM_DATA_DIR") {
        Some(d) if !d.is_empty() => PathBuf::from(d),
        _ => Path::new(env!("CARGO_MANIFEST_DIR")).join("data"),
    }
}

/// Process exit status for an error.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Input(_) | Error::Io(_) => 1,
        Error::Parse { .. } => 2,
        Error::Numeric { .. } | Error::Range(_) | Error::Estimation(_) => 3,
    }
}

/// Files written and the text printed by one command.
#[derive(Debug, Clone)]
pub struct Outcome {
    pub files: Vec<PathBuf>,
    pub summary: String,
}

pub fn run(cmd: Command, cfg: &Config, ctx: &RunContext) -> Result<Outcome> {
    cfg.check_keys(cmd.keys())?;
    with_jobs(ctx.jobs, || match cmd {
        Command::Coating => cmd_coating(cfg, ctx),
        Command::PerMap => cmd_per_map(cfg, ctx),
        Command::Compensate => cmd_compensate(cfg, ctx),
        Command::OffsetScan => cmd_offset_scan(cfg, ctx),
        Command::Bell => cmd_bell(cfg, ctx),
    })
}

fn positive(name: &str, v: f64) -> Result<f64> {
    if v > 0.0 {
        Ok(v)
    } else {
        Err(Error::Input(format!("`{name}` must be positive, got {v}")))
    }
}

fn stack_path(cfg: &Config, ctx: &RunContext) -> PathBuf {
    cfg.path("stack_file").unwrap_or_else(|| ctx.data_dir.join(REFERENCE_STACK_FILE))
}

fn load_stack(path: &Path) -> Result<LayerStack> {
    LayerStack::load(path).map_err(|e| match e {
        Error::Io(io) => Error::Input(format!("cannot read stack file {}: {io}", path.display())),
        other => other,
    })
}

fn read_input(path: &Path, what: &str) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::Input(format!("cannot read {what} {}: {e}", path.display())))
}

#[derive(Serialize)]
struct CoatingReport {
    stack_file: String,
    layers: usize,
    angle_deg: f64,
    wavelength_nm: f64,
    rs_power: f64,
    rp_power: f64,
    relative_phase_over_pi: f64,
    average_reflectance: f64,
}

fn json<T: Serialize>(v: &T) -> Result<String> {
    serde_json::to_string_pretty(v).map(|s| s + "\n").map_err(|e| Error::Io(std::io::Error::other(e)))
}

/// Relative phase folded to `[0, 2π)`, in units of π.
fn phase_over_pi(resp: &MirrorResponse) -> f64 {
    resp.relative_phase().rem_euclid(2.0 * std::f64::consts::PI) / std::f64::consts::PI
}

fn cmd_coating(cfg: &Config, ctx: &RunContext) -> Result<Outcome> {
    let path = stack_path(cfg, ctx);
    let stack = load_stack(&path)?;
    let angle_deg = cfg.f64_or("angle_deg", 45.0)?;
    let wavelength_nm = positive("wavelength_nm", cfg.f64_or("wavelength_nm", 780.0)?)?;
    let resp = stack_response(&stack, &Ray::new(angle_deg.to_radians(), wavelength_nm)?);
    let report = CoatingReport {
        stack_file: path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default(),
        layers: stack.layers.len(),
        angle_deg,
        wavelength_nm,
        rs_power: resp.rs_power(),
        rp_power: resp.rp_power(),
        relative_phase_over_pi: phase_over_pi(&resp),
        average_reflectance: 0.5 * (resp.rs_power() + resp.rp_power()),
    };
    let file = ctx.write("coating.json", &json(&report)?)?;
    let mut summary = String::new();
    let _ = writeln!(summary, "stack: {} layers, {angle_deg} deg, {wavelength_nm} nm", report.layers);
    let _ = writeln!(summary, "|r_s|^2 = {:.6}", report.rs_power);
    let _ = writeln!(summary, "|r_p|^2 = {:.6}", report.rp_power);
    let _ = writeln!(summary, "dphi/pi = {:.6}", report.relative_phase_over_pi);
    let _ = writeln!(summary, "average reflectance = {:.6}", report.average_reflectance);
    Ok(Outcome { files: vec![file], summary })
}

/// `coated` (measured 780 nm mirror figures), `ideal`, or `stack` (the stack file
/// evaluated at 45°).
fn coating_response(cfg: &Config, ctx: &RunContext) -> Result<MirrorResponse> {
    match cfg.choice_or("coating", &["coated", "ideal", "stack"], "coated")? {
        "coated" => Ok(MirrorResponse::coated_780nm()),
        "ideal" => Ok(MirrorResponse::ideal()),
        _ => {
            let stack = load_stack(&stack_path(cfg, ctx))?;
            let wavelength_nm = positive("wavelength_nm", cfg.f64_or("wavelength_nm", 780.0)?)?;
            Ok(stack_response(&stack, &Ray::new(45f64.to_radians(), wavelength_nm)?))
        }
    }
}

fn states(labels: &[String]) -> Result<Vec<(String, PolarizationState)>> {
    if labels.is_empty() {
        return Err(Error::input("`states` must list at least one state"));
    }
    labels
        .iter()
        .map(|l| {
            jones::probe_state(l)
                .map(|s| (l.clone(), s))
                .ok_or_else(|| Error::Input(format!("unknown state `{l}` (use H, V, +, -)")))
        })
        .collect()
}

fn cmd_per_map(cfg: &Config, ctx: &RunContext) -> Result<Outcome> {
    let coating = coating_response(cfg, ctx)?;
    let els = cfg.list_or("elevations_deg", &antenna::LOCAL_TEST_ELEVATIONS)?;
    let azs = cfg.list_or("azimuths_deg", &antenna::LOCAL_TEST_AZIMUTHS)?;
    let states = states(&cfg.words_or("states", &["H", "V", "+", "-"]))?;
    let grid = antenna::antenna_per_scan(&TelescopeGeometry::ngari(), &coating, &els, &azs, &states, ctx.exec())?;
    let file = ctx.write("per_map.csv", &grid.to_csv()?)?;
    let summary = format!(
        "{} cells: min PER {:.1}, mean PER {:.1}, min fidelity {:.6}\n",
        grid.cells.len(),
        grid.min_per(),
        grid.mean_per(),
        grid.min_fidelity()
    );
    Ok(Outcome { files: vec![file], summary })
}

fn compensator(cfg: &Config) -> Result<Compensator> {
    let sense = match cfg.choice_or("sense", &["positive", "negative"], "positive")? {
        "positive" => Sense::Positive,
        _ => Sense::Negative,
    };
    Compensator::new(
        cfg.f64_or("zero_point_deg", compensation::DEFAULT_ZERO_POINT_DEG)?,
        sense,
        cfg.f64_or("max_slew_deg_per_s", compensation::DEFAULT_MAX_SLEW_DEG_PER_S)?,
    )
}

fn parse_instant(s: &str) -> Result<DateTime<Utc>> {
    DateTime::parse_from_rfc3339(s)
        .map(|t| t.with_timezone(&Utc))
        .map_err(|e| Error::Input(format!("`start_iso8601` is not an RFC 3339 instant: {e}")))
}

/// Passes from `pass_file`, or from a TLE propagated over the station.
fn load_passes(cfg: &Config, ctx: &RunContext) -> Result<Vec<PassProfile>> {
    if let Some(path) = cfg.path("pass_file") {
        if cfg.contains("tle_file") {
            return Err(Error::input("give either `tle_file` or `pass_file`, not both"));
        }
        let (pass, _) = PassProfile::from_csv(&read_input(&path, "pass file")?).map_err(|e| rename(e, &path))?;
        return Ok(vec![pass]);
    }
    let path = cfg.path("tle_file").unwrap_or_else(|| ctx.data_dir.join(REFERENCE_TLE_FILE));
    let rec = parse_tle(&read_input(&path, "TLE file")?).map_err(|e| rename(e, &path))?;
    let ngari = GroundStation::ngari();
    let station = GroundStation::new(
        cfg.f64_or("station_lat_deg", ngari.latitude_deg)?,
        cfg.f64_or("station_lon_deg", ngari.longitude_deg)?,
        cfg.f64_or("station_alt_m", ngari.altitude_m)?,
    )?;
    let start = match cfg.str("start_iso8601") {
        Some(s) => parse_instant(s)?,
        None => rec.epoch(),
    };
    let hours = positive("duration_h", cfg.f64_or("duration_h", 24.0)?)?;
    let step_s = positive("step_s", cfg.f64_or("step_s", 1.0)?)?;
    let beta = match cfg.choice_or("beta_model", &["geometric", "nadir"], "geometric")? {
        "geometric" => BetaModel::Geometric,
        _ => BetaModel::NadirFixed,
    };
    let search = PassSearch {
        threshold_deg: cfg.f64_or("threshold_deg", 10.0)?,
        step: Duration::nanoseconds((step_s * 1e9).round() as i64),
        beta,
    };
    let end = start + Duration::nanoseconds((hours * 3600e9).round().min(i64::MAX as f64) as i64);
    let passes = extract_passes(&rec, &station, start, end, &search)?;
    if passes.is_empty() {
        return Err(Error::Range(format!(
            "no pass above {}° between {} and {}",
            search.threshold_deg,
            crate::tle_pass::pass::format_time(start),
            crate::tle_pass::pass::format_time(end)
        )));
    }
    Ok(passes)
}

fn rename(e: Error, path: &Path) -> Error {
    match e {
        Error::Parse { line, column, message, .. } => {
            Error::Parse { what: path.display().to_string(), line, column, message }
        }
        other => other,
    }
}

fn cmd_compensate(cfg: &Config, ctx: &RunContext) -> Result<Outcome> {
    let comp = compensator(cfg)?;
    let passes = load_passes(cfg, ctx)?;
    let schedules = compensation::schedules_from_passes(&passes, &comp, ctx.exec())?;
    let mut files = Vec::new();
    let mut summary = String::new();
    for (k, (pass, sch)) in passes.iter().zip(&schedules).enumerate() {
        let n = k + 1;
        files.push(ctx.write(&format!("pass_{n}.csv"), &pass.to_csv()?)?);
        files.push(ctx.write(&format!("schedule_{n}.csv"), &sch.to_csv()?)?);
        files.push(ctx.write(&format!("schedule_{n}.json"), &json(&sch.metadata())?)?);
        let _ = writeln!(
            summary,
            "pass {n}: {} samples, {:.0} s, culmination {:.1} deg, max rate {:.3} deg/s, {} warnings",
            sch.samples.len(),
            pass.duration_s(),
            pass.culmination().elevation_deg,
            sch.max_rate_deg_per_s,
            sch.warnings.len()
        );
    }
    Ok(Outcome { files, summary })
}

fn cmd_offset_scan(cfg: &Config, ctx: &RunContext) -> Result<Outcome> {
    let comp = compensator(cfg)?;
    let coating = coating_response(cfg, ctx)?;
    let passes = load_passes(cfg, ctx)?;
    let index = cfg.u64_or("pass_index", 1)? as usize;
    let pass = index
        .checked_sub(1)
        .and_then(|i| passes.get(i))
        .ok_or_else(|| Error::Input(format!("`pass_index` = {index} but {} passes were found", passes.len())))?;
    let label = cfg.str("input_state").unwrap_or("H");
    let input = jones::probe_state(label).ok_or_else(|| Error::Input(format!("unknown input_state `{label}`")))?;
    let ground = cfg.list_or("ground_offsets_deg", &default_ground_offsets())?;
    let sat = cfg.list_or("sat_offsets_deg", &default_sat_offsets())?;
    let grid = offset_scan(&ground, &sat, &coating, &input, pass, &comp, ctx.exec())?;
    let file = ctx.write("offset_scan.csv", &grid.to_csv()?)?;
    let peak = grid.peak();
    let summary = format!(
        "{} cells over pass {index} ({} samples): peak fidelity {:.6} at ground {} deg, satellite {} deg\n",
        grid.cells.len(),
        pass.len(),
        peak.fidelity,
        peak.ground_offset_deg,
        peak.sat_offset_deg
    );
    Ok(Outcome { files: vec![file], summary })
}

fn settings(cfg: &Config) -> Result<ChshSettings> {
    if !cfg.contains("settings_deg") {
        return Ok(ChshSettings::standard());
    }
    let v = cfg.list_or("settings_deg", &[])?;
    match v.as_slice() {
        &[a, a2, b, b2] => {
            Ok(ChshSettings::from_angles(a.to_radians(), a2.to_radians(), b.to_radians(), b2.to_radians()))
        }
        _ => Err(Error::Input(format!("`settings_deg` needs four angles a, a', b, b', got {}", v.len()))),
    }
}

fn link_model(cfg: &Config) -> Result<LinkModel> {
    let source = SourceModel::new(cfg.f64_or("source_fidelity", 0.9329)?, cfg.f64_or("pair_rate_per_s", 1e6)?)?;
    let rotation = jones::rotator(cfg.f64_or("channel_rotation_deg", 0.0)?.to_radians())?;
    let channel = ChannelModel::new(cfg.f64_or("loss_db", 46.0)?, rotation, cfg.f64_or("depolarization", 0.0)?)?;
    let detection = DetectionModel::new(
        cfg.f64_or("efficiency", 0.5)?,
        cfg.f64_or("dark_rate_per_s", DEFAULT_DARK_RATE)?,
        cfg.f64_or("window_ns", DEFAULT_WINDOW_S * 1e9)? * 1e-9,
        cfg.f64_or("integration_s", 1.0)?,
    )?;
    Ok(LinkModel { source, channel, detection })
}

fn cmd_bell(cfg: &Config, ctx: &RunContext) -> Result<Outcome> {
    let seed = ctx.seed;
    let mut files = Vec::new();
    let mut summary = String::new();
    let (settings, counts, model) = match cfg.path("counts_file") {
        Some(path) => {
            let (s, c) = counts_from_csv(&read_input(&path, "counts file")?).map_err(|e| rename(e, &path))?;
            (s, c, None)
        }
        None => {
            let settings = settings(cfg)?;
            let mut model = link_model(cfg)?;
            if cfg.bool_or("calibrate", true)? {
                model = calibrate(
                    &model,
                    &settings,
                    cfg.f64_or("target_s", 2.312)?,
                    cfg.f64_or("target_coincidences", 2138.0)?,
                )?;
                let _ = writeln!(
                    summary,
                    "calibrated: depolarization {:.6}, integration {:.3} s, expected S {:.4}",
                    model.channel.depolarization,
                    model.detection.integration_s,
                    model.expected_s(&settings)?
                );
            }
            let counts = simulate_chsh(&model, &settings, seed)?;
            (settings, counts, Some(model))
        }
    };
    let result = estimate_chsh(&settings, &counts)?;
    let resamples = cfg.u64_or("bootstrap_resamples", 0)? as usize;
    let bootstrap = match resamples {
        0 => None,
        n => Some(bootstrap_sigma_s(&counts, n, seed)?),
    };
    files.push(ctx.write("counts.csv", &counts_to_csv(&settings, &counts)?)?);
    let report = BellReport {
        seed: model.as_ref().map(|_| seed),
        result: result.clone(),
        bootstrap_sigma_s: bootstrap,
        model: model.as_ref().map(ModelParameters::of),
    };
    files.push(ctx.write("bell.json", &(report.to_json()? + "\n"))?);
    for (k, c) in result.correlations.iter().enumerate() {
        let _ = writeln!(summary, "E{} = {:+.4} ± {:.4} ({} coincidences)", k + 1, c.e, c.sigma_e, c.counts.total());
    }
    let _ = writeln!(
        summary,
        "S = {:.4} ± {:.4} from {} coincidences",
        result.s, result.sigma_s, result.total_coincidences
    );
    if let Some(b) = bootstrap {
        let _ = writeln!(summary, "bootstrap sigma_S = {b:.4} ({resamples} resamples)");
    }

    let runs = cfg.u64_or("ensemble_runs", 0)?;
    if runs > 0 {
        let Some(model) = &model else {
            return Err(Error::input("`ensemble_runs` needs a simulated model, not `counts_file`"));
        };
        let seeds: Vec<u64> = (0..runs).map(|i| seed.wrapping_add(i)).collect();
        let results = run_ensemble(model, &settings, &seeds, ctx.exec())?;
        let s: Vec<f64> = results.iter().map(|r| r.s).collect();
        let sig: Vec<f64> = results.iter().map(|r| r.sigma_s).collect();
        let _ = writeln!(
            summary,
            "ensemble of {runs}: mean S {:.4}, sd {:.4}, mean sigma_S {:.4}",
            counting::mean(&s),
            if s.len() > 1 { counting::std_dev(&s) } else { 0.0 },
            counting::mean(&sig)
        );
    }
    Ok(Outcome { files, summary })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ctx(dir: &Path) -> RunContext {
        RunContext {
            seed: 1,
            jobs: 1,
            out_dir: dir.to_path_buf(),
            data_dir: Path::new(env!("CARGO_MANIFEST_DIR")).join("data"),
        }
    }

    #[test]
    fn unknown_key_is_a_config_error() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = Config::parse("los_db = 3\n").unwrap();
        let err = run(Command::Bell, &cfg, &ctx(dir.path())).unwrap_err();
        assert_eq!(exit_code(&err), 1);
    }

    #[test]
    fn empty_stack_reflectance() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("glass.txt"), "ambient 1 0\nsubstrate 1.5 0\n").unwrap();
        std::fs::write(dir.path().join("run.conf"), "stack_file = glass.txt\nangle_deg = 0\n").unwrap();
        let cfg = Config::load(&dir.path().join("run.conf")).unwrap();
        let out = run(Command::Coating, &cfg, &ctx(dir.path())).unwrap();
        assert!(out.summary.contains("|r_s|^2 = 0.040000"), "{}", out.summary);
        assert!(out.summary.contains("|r_p|^2 = 0.040000"));
    }

    #[test]
    fn single_cell_per_map() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = Config::parse("elevations_deg = 30\nazimuths_deg = 45\nstates = H\ncoating = ideal\n").unwrap();
        run(Command::PerMap, &cfg, &ctx(dir.path())).unwrap();
        let text = std::fs::read_to_string(dir.path().join("per_map.csv")).unwrap();
        let grid = antenna::PerGrid::from_csv(&text).unwrap();
        assert_eq!(grid.cells.len(), 1);
        assert_eq!(grid.cells[0].per, jones::PER_CAP);
    }

    #[test]
    fn error_classes() {
        assert_eq!(exit_code(&Error::Input("x".into())), 1);
        assert_eq!(exit_code(&Error::Parse { what: "w".into(), line: 1, column: 1, message: "m".into() }), 2);
        assert_eq!(exit_code(&Error::Range("x".into())), 3);
        assert_eq!(exit_code(&Error::Estimation("x".into())), 3);
    }
}
