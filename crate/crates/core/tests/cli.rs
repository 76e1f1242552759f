use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use polsim::antenna::PerGrid;
use polsim::compensation::{CompensationSchedule, ScheduleMetadata};
use polsim::jones::PER_CAP;
use polsim::link_sim::counting::{counts_from_csv, counts_to_csv};
use polsim::link_sim::{BellReport, OffsetGrid};
use polsim::tle_pass::PassProfile;
use tempfile::TempDir;

fn polsim(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_polsim"))
        .args(args)
        .arg("--out")
        .arg(dir)
        .env_remove("POLSIM_DATA_DIR")
        .output()
        .unwrap()
}

fn config(dir: &Path, name: &str, body: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, body).unwrap();
    p.display().to_string()
}

fn read(dir: &Path, name: &str) -> String {
    std::fs::read_to_string(dir.join(name)).unwrap()
}

fn example(name: &str) -> String {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("configs").join(name).display().to_string()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn json(dir: &Path, name: &str) -> serde_json::Value {
    serde_json::from_str(&read(dir, name)).unwrap()
}

#[test]
fn coating_reports_reference_stack() {
    let d = TempDir::new().unwrap();
    let o = polsim(&["coating"], d.path());
    assert!(o.status.success(), "{o:?}");
    let v = json(d.path(), "coating.json");
    let (rs, rp) = (v["rs_power"].as_f64().unwrap(), v["rp_power"].as_f64().unwrap());
    assert!(rs > 0.999 && rs >= rp);
    assert!(stdout(&o).contains("dphi/pi"));
}

#[test]
fn coating_bare_glass_and_off_band() {
    let d = TempDir::new().unwrap();
    std::fs::write(d.path().join("glass.txt"), "ambient 1 0\nsubstrate 1.5 0\n").unwrap();
    let c = config(d.path(), "c.conf", "stack_file = glass.txt\nangle_deg = 0\n");
    assert!(polsim(&["coating", "--config", &c], d.path()).status.success());
    let v = json(d.path(), "coating.json");
    assert!((v["rs_power"].as_f64().unwrap() - 0.04).abs() < 1e-12);

    let o = polsim(&["coating", "--config", &example("coating_532.conf")], d.path());
    assert!(o.status.success());
    assert!(stdout(&o).contains("average reflectance"));
    assert_eq!(json(d.path(), "coating.json")["wavelength_nm"].as_f64(), Some(532.0));
}

#[test]
fn coating_parse_error_has_line_number() {
    let d = TempDir::new().unwrap();
    std::fs::write(d.path().join("bad.txt"), "ambient 1 0\nsubstrate 1.5 0\n2.1 0 abc\n").unwrap();
    let c = config(d.path(), "c.conf", "stack_file = bad.txt\n");
    let o = polsim(&["coating", "--config", &c], d.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("line 3"));
}

#[test]
fn per_map_default_and_ideal() {
    let d = TempDir::new().unwrap();
    let o = polsim(&["per-map", "--config", &example("per_map.conf")], d.path());
    assert!(o.status.success());
    let text = read(d.path(), "per_map.csv");
    assert_eq!(text.lines().count(), 97);
    let grid = PerGrid::from_csv(&text).unwrap();
    assert!(grid.min_per() >= 400.0);
    assert_eq!(grid.to_csv().unwrap(), text);
    assert!(stdout(&o).contains("min PER"));

    let c = config(d.path(), "i.conf", "coating = ideal\n");
    assert!(polsim(&["per-map", "--config", &c], d.path()).status.success());
    let grid = PerGrid::from_csv(&read(d.path(), "per_map.csv")).unwrap();
    assert!(grid.cells.iter().all(|c| c.per == PER_CAP));
}

#[test]
fn compensate_synthetic_sso() {
    let d = TempDir::new().unwrap();
    let o = polsim(&["compensate", "--config", &example("compensate.conf")], d.path());
    assert!(o.status.success(), "{o:?}");
    let meta: ScheduleMetadata = serde_json::from_str(&read(d.path(), "schedule_1.json")).unwrap();
    assert!(meta.max_rate_deg_per_s < 0.5);
    let pass_csv = read(d.path(), "pass_1.csv");
    let (pass, has_beta) = PassProfile::from_csv(&pass_csv).unwrap();
    assert!(has_beta);
    assert_eq!(pass.to_csv().unwrap(), pass_csv);
    let sched_csv = read(d.path(), "schedule_1.csv");
    assert_eq!(CompensationSchedule::samples_from_csv(&sched_csv).unwrap().len(), meta.samples);
}

#[test]
fn compensate_injected_pass() {
    let d = TempDir::new().unwrap();
    let mut csv = String::from("t_iso8601,az_deg,el_deg,beta_deg\n");
    for i in 0..37 {
        csv += &format!(
            "2020-01-01T00:{:02}:{:02}Z,{},{},{}\n",
            i / 60,
            i % 60,
            10.0 + i as f64,
            20.0 + i as f64 * 0.5,
            -0.2 * i as f64
        );
    }
    std::fs::write(d.path().join("pass.csv"), csv).unwrap();
    let c = config(d.path(), "c.conf", "pass_file = pass.csv\n");
    let o = polsim(&["compensate", "--config", &c], d.path());
    assert!(o.status.success(), "{o:?}");
    assert_eq!(read(d.path(), "schedule_1.csv").lines().count(), 38);
}

#[test]
fn compensate_failures() {
    let d = TempDir::new().unwrap();
    std::fs::write(d.path().join("bad.tle"), "1 25544U 98067A\n2 25544\n").unwrap();
    let c = config(d.path(), "bad.conf", "tle_file = bad.tle\n");
    assert_eq!(polsim(&["compensate", "--config", &c], d.path()).status.code(), Some(2));

    let c = config(d.path(), "short.conf", "start_iso8601 = 2020-03-01T02:00:00Z\nduration_h = 0.5\n");
    let o = polsim(&["compensate", "--config", &c], d.path());
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).contains("no pass"));
}

#[test]
fn offset_scan_examples() {
    let d = TempDir::new().unwrap();
    let o = polsim(&["offset-scan", "--config", &example("offset_scan.conf")], d.path());
    assert!(o.status.success(), "{o:?}");
    let text = read(d.path(), "offset_scan.csv");
    let grid = OffsetGrid::from_csv(&text).unwrap();
    assert_eq!(grid.to_csv().unwrap(), text);
    let peak = grid.peak();
    assert_eq!(peak.ground_offset_deg, 0.0);
    assert!(peak.sat_offset_deg == 0.0 || peak.sat_offset_deg == -1.0);
    assert!(peak.fidelity >= 0.995);

    let c = config(d.path(), "i.conf", "coating = ideal\nground_offsets_deg = 0, 5\nsat_offsets_deg = 0\n");
    assert!(polsim(&["offset-scan", "--config", &c], d.path()).status.success());
    let grid = OffsetGrid::from_csv(&read(d.path(), "offset_scan.csv")).unwrap();
    assert!((grid.at(0.0, 0.0).unwrap().fidelity - 1.0).abs() < 1e-12);
    assert!((grid.at(5.0, 0.0).unwrap().fidelity - 10f64.to_radians().cos().powi(2)).abs() < 1e-12);
}

#[test]
fn bell_ideal_reaches_tsirelson() {
    let d = TempDir::new().unwrap();
    let o = polsim(&["bell", "--config", &example("bell_ideal.conf")], d.path());
    assert!(o.status.success());
    let r: BellReport = serde_json::from_str(&read(d.path(), "bell.json")).unwrap();
    assert!((r.result.s - 2.0 * 2f64.sqrt()).abs() < 4.0 * r.result.sigma_s);
    assert!(r.result.sigma_s < 0.01);
}

#[test]
fn bell_calibrated_seed_one() {
    let d = TempDir::new().unwrap();
    let o = polsim(&["bell", "--config", &example("bell_calibrated.conf"), "--seed", "1"], d.path());
    assert!(o.status.success());
    let r: BellReport = serde_json::from_str(&read(d.path(), "bell.json")).unwrap();
    assert_eq!(r.seed, Some(1));
    assert_eq!(r.result.correlations.len(), 4);
    // seed 1 lands 1.1 σ above the target; the one-σ frequency is checked in the library tests
    assert!((r.result.s - 2.312).abs() < 2.0 * r.result.sigma_s, "{}", r.result.s);
    let b = r.bootstrap_sigma_s.unwrap();
    assert!((b / r.result.sigma_s - 1.0).abs() < 0.15);

    let text = read(d.path(), "counts.csv");
    let (st, counts) = counts_from_csv(&text).unwrap();
    assert_eq!(counts_to_csv(&st, &counts).unwrap(), text);

    // re-analysis of recorded counts gives the same estimate
    let e = TempDir::new().unwrap();
    std::fs::copy(d.path().join("counts.csv"), e.path().join("counts.csv")).unwrap();
    let c = config(e.path(), "c.conf", "counts_file = counts.csv\n");
    assert!(polsim(&["bell", "--config", &c], e.path()).status.success());
    let again: BellReport = serde_json::from_str(&read(e.path(), "bell.json")).unwrap();
    assert_eq!(again.result, r.result);
    assert_eq!(again.model, None);
}

#[test]
fn bell_zero_coincidences_is_estimation_failure() {
    let d = TempDir::new().unwrap();
    let c = config(d.path(), "z.conf", "calibrate = false\nintegration_s = 1e-6\n");
    let o = polsim(&["bell", "--config", &c], d.path());
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).contains("zero coincidences"));
}

#[test]
fn bell_ensemble_summary() {
    let d = TempDir::new().unwrap();
    let c = config(d.path(), "e.conf", "ensemble_runs = 20\n");
    let o = polsim(&["bell", "--config", &c, "--jobs", "2"], d.path());
    assert!(o.status.success());
    assert!(stdout(&o).contains("ensemble of 20"));
}

#[test]
fn config_and_usage_errors_exit_one() {
    let d = TempDir::new().unwrap();
    let c = config(d.path(), "u.conf", "loss_db = 46\nlos_db = 1\n");
    let o = polsim(&["bell", "--config", &c], d.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("los_db"));

    let c = config(d.path(), "s.conf", "just words\n");
    assert_eq!(polsim(&["bell", "--config", &c], d.path()).status.code(), Some(1));
    let c = config(d.path(), "v.conf", "loss_db = loud\n");
    assert_eq!(polsim(&["bell", "--config", &c], d.path()).status.code(), Some(1));
    assert_eq!(polsim(&["bell", "--config", "/nonexistent/x.conf"], d.path()).status.code(), Some(1));
    assert_eq!(polsim(&["frobnicate"], d.path()).status.code(), Some(1));
    assert_eq!(polsim(&["bell", "--seed", "minus-one"], d.path()).status.code(), Some(1));
}

#[test]
fn data_dir_override() {
    let d = TempDir::new().unwrap();
    let data: PathBuf = d.path().join("data");
    std::fs::create_dir(&data).unwrap();
    let run = || {
        Command::new(env!("CARGO_BIN_EXE_polsim"))
            .args(["coating", "--out"])
            .arg(d.path())
            .env("POLSIM_DATA_DIR", &data)
            .output()
            .unwrap()
    };
    assert_eq!(run().status.code(), Some(1));
    std::fs::write(data.join("reference_stack_780nm.txt"), "ambient 1 0\nsubstrate 1.5 0\n").unwrap();
    assert!(run().status.success());
    assert_eq!(json(d.path(), "coating.json")["layers"].as_u64(), Some(0));
}
