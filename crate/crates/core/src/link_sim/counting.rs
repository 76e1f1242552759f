//! Source, channel and detector models, Poisson coincidence sampling and
//! CHSH estimation from counts.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use super::state::{chsh_combination, make_source, ChshSettings, TwoQubitState};
use crate::error::{ensure_finite, Error, Result};
use crate::exec::Exec;
use crate::jones::OpticalElement;

/// Entangled-pair source.
#[derive(Debug, Clone, PartialEq)]
pub struct SourceModel {
    pub state: TwoQubitState,
    pub fidelity: f64,
    pub pair_rate: f64,
}

impl SourceModel {
    /// Werner source with the given fidelity to |Φ+⟩, pairs per second.
    pub fn new(fidelity: f64, pair_rate: f64) -> Result<Self> {
        let state = make_source(fidelity)?;
        Self::with_state(state, pair_rate)
    }

    pub fn with_state(state: TwoQubitState, pair_rate: f64) -> Result<Self> {
        ensure_finite("pair rate", pair_rate)?;
        if pair_rate < 0.0 {
            return Err(Error::input(format!("pair rate must be non-negative, got {pair_rate}")));
        }
        let fidelity = state.fidelity_to_phi_plus();
        Ok(Self { state, fidelity, pair_rate })
    }
}

/// Uplink channel acting on the satellite photon.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelModel {
    pub loss_db: f64,
    pub rotation: OpticalElement,
    pub depolarization: f64,
}

impl ChannelModel {
    pub fn new(loss_db: f64, rotation: OpticalElement, depolarization: f64) -> Result<Self> {
        ensure_finite("loss", loss_db)?;
        ensure_finite("depolarization", depolarization)?;
        if loss_db < 0.0 {
            return Err(Error::input(format!("loss must be non-negative, got {loss_db} dB")));
        }
        if !(0.0..=1.0).contains(&depolarization) {
            return Err(Error::input(format!("depolarization must lie in [0, 1], got {depolarization}")));
        }
        if !rotation.is_unitary(1e-9) {
            return Err(Error::input("channel rotation must be unitary"));
        }
        Ok(Self { loss_db, rotation, depolarization })
    }

    pub fn lossless() -> Self {
        Self { loss_db: 0.0, rotation: OpticalElement::identity(), depolarization: 0.0 }
    }

    pub fn transmission(&self) -> f64 {
        10f64.powf(-self.loss_db / 10.0)
    }

    /// State delivered to the analyzers.
    pub fn apply(&self, state: &TwoQubitState) -> Result<TwoQubitState> {
        state.rotate_first(&self.rotation)?.depolarize_first(self.depolarization)
    }
}

/// Detectors and time tagging, identical on both ends.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectionModel {
    pub efficiency: f64,
    pub dark_rate: f64,
    pub window_s: f64,
    pub integration_s: f64,
}

pub const DEFAULT_DARK_RATE: f64 = 100.0;
pub const DEFAULT_WINDOW_S: f64 = 2.5e-9;

impl DetectionModel {
    pub fn new(efficiency: f64, dark_rate: f64, window_s: f64, integration_s: f64) -> Result<Self> {
        for (n, v) in [
            ("efficiency", efficiency),
            ("dark rate", dark_rate),
            ("coincidence window", window_s),
            ("integration time", integration_s),
        ] {
            ensure_finite(n, v)?;
        }
        if !(efficiency > 0.0 && efficiency <= 1.0) {
            return Err(Error::input(format!("efficiency must lie in (0, 1], got {efficiency}")));
        }
        if dark_rate < 0.0 {
            return Err(Error::input(format!("dark rate must be non-negative, got {dark_rate}")));
        }
        if window_s <= 0.0 {
            return Err(Error::input(format!("coincidence window must be positive, got {window_s}")));
        }
        if integration_s <= 0.0 {
            return Err(Error::input(format!("integration time must be positive, got {integration_s}")));
        }
        Ok(Self { efficiency, dark_rate, window_s, integration_s })
    }

    pub fn ideal(integration_s: f64) -> Result<Self> {
        Self::new(1.0, 0.0, DEFAULT_WINDOW_S, integration_s)
    }
}

/// Everything needed to predict coincidence counts.
#[derive(Debug, Clone, PartialEq)]
pub struct LinkModel {
    pub source: SourceModel,
    pub channel: ChannelModel,
    pub detection: DetectionModel,
}

impl LinkModel {
    /// Mean counts in wire order `[pp, mm, pm, mp]` for one analyzer pair.
    pub fn expected_counts(&self, phi1: f64, phi2: f64) -> Result<[f64; 4]> {
        let st = self.channel.apply(&self.source.state)?;
        Ok(expected_from_state(&st, self, phi1, phi2))
    }

    /// Mean counts for all four settings.
    pub fn expected_chsh_counts(&self, settings: &ChshSettings) -> Result<[[f64; 4]; 4]> {
        let st = self.channel.apply(&self.source.state)?;
        Ok(settings.0.map(|(a, b)| expected_from_state(&st, self, a, b)))
    }

    /// S evaluated on expected counts (includes accidentals).
    pub fn expected_s(&self, settings: &ChshSettings) -> Result<f64> {
        let counts = self.expected_chsh_counts(settings)?;
        Ok(chsh_combination(counts.map(|c| {
            let n: f64 = c.iter().sum();
            (c[0] + c[1] - c[2] - c[3]) / n
        })))
    }

    pub fn expected_total(&self, settings: &ChshSettings) -> Result<f64> {
        Ok(self.expected_chsh_counts(settings)?.iter().flatten().sum())
    }
}

// Accidentals pair up uncorrelated detections: dark counts plus photons
// whose twin went undetected.
fn expected_from_state(st: &TwoQubitState, m: &LinkModel, phi1: f64, phi2: f64) -> [f64; 4] {
    let r = m.source.pair_rate;
    let t_ch = m.channel.transmission();
    let d = &m.detection;
    let eta = d.efficiency;
    let p = st.outcome_probabilities(phi1, phi2);
    let sat = |a: bool| r * t_ch * eta * (1.0 - eta) * st.first_marginal(phi1, a) + d.dark_rate;
    let gnd = |b: bool| r * eta * (1.0 - t_ch * eta) * st.second_marginal(phi2, b) + d.dark_rate;
    let ports = [(true, true), (false, false), (true, false), (false, true)];
    let mut out = [0.0; 4];
    for (k, &(a, b)) in ports.iter().enumerate() {
        let true_rate = r * t_ch * eta * eta * p[k];
        let accidental = sat(a) * gnd(b) * d.window_s;
        out[k] = (true_rate + accidental) * d.integration_s;
    }
    out
}

/// Coincidence counts of one analyzer pair in wire order
/// `C(φ1,φ2), C(φ1⊥,φ2⊥), C(φ1,φ2⊥), C(φ1⊥,φ2)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub pp: u64,
    pub mm: u64,
    pub pm: u64,
    pub mp: u64,
}

impl Counts {
    pub fn from_array(c: [u64; 4]) -> Self {
        Self { pp: c[0], mm: c[1], pm: c[2], mp: c[3] }
    }

    pub fn as_array(&self) -> [u64; 4] {
        [self.pp, self.mm, self.pm, self.mp]
    }

    pub fn total(&self) -> u64 {
        self.pp + self.mm + self.pm + self.mp
    }
}

/// Generator for one `(seed, stream)` pair. Settings of a CHSH run use their
/// index (0–3) as the stream, so each setting's draws are independent of
/// the others and of evaluation order.
pub fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn poisson(mean: f64, rng: &mut ChaCha8Rng) -> Result<u64> {
    if mean == 0.0 {
        return Ok(0);
    }
    let d = Poisson::new(mean).map_err(|e| Error::input(format!("bad Poisson mean {mean}: {e}")))?;
    Ok(d.sample(rng) as u64)
}

/// Draw Poisson counts for one analyzer pair.
pub fn simulate_coincidences(model: &LinkModel, phi1: f64, phi2: f64, seed: u64, stream: u64) -> Result<Counts> {
    let mean = model.expected_counts(phi1, phi2)?;
    sample_counts(&mean, &mut rng_for(seed, stream))
}

fn sample_counts(mean: &[f64; 4], rng: &mut ChaCha8Rng) -> Result<Counts> {
    let mut c = [0u64; 4];
    for (k, &m) in mean.iter().enumerate() {
        c[k] = poisson(m, rng)?;
    }
    Ok(Counts::from_array(c))
}

/// Counts for the four settings of a CHSH run.
pub fn simulate_chsh(model: &LinkModel, settings: &ChshSettings, seed: u64) -> Result<[Counts; 4]> {
    let mean = model.expected_chsh_counts(settings)?;
    let mut out = [Counts::from_array([0; 4]); 4];
    for (k, m) in mean.iter().enumerate() {
        out[k] = sample_counts(m, &mut rng_for(seed, k as u64))?;
    }
    Ok(out)
}

/// One correlation estimate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorrelationEstimate {
    pub phi1_rad: f64,
    pub phi2_rad: f64,
    pub e: f64,
    pub sigma_e: f64,
    pub counts: Counts,
}

/// S with propagated Poisson error.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChshResult {
    pub correlations: Vec<CorrelationEstimate>,
    pub s: f64,
    pub sigma_s: f64,
    pub total_coincidences: u64,
}

impl ChshResult {
    pub fn settings(&self) -> ChshSettings {
        let mut p = [(0.0, 0.0); 4];
        for (k, c) in self.correlations.iter().enumerate() {
            p[k] = (c.phi1_rad, c.phi2_rad);
        }
        ChshSettings(p)
    }
}

/// `E = (A − B)/N` with `A = C++ + C−−`, `B = C+− + C−+`, and
/// `var(E) = 4AB/N³` from first-order Poisson propagation.
pub fn correlation_from_counts(c: &Counts) -> Result<(f64, f64)> {
    let n = c.total();
    if n == 0 {
        return Err(Error::Estimation("no coincidences recorded for a setting".into()));
    }
    let a = (c.pp + c.mm) as f64;
    let b = (c.pm + c.mp) as f64;
    let n = n as f64;
    Ok(((a - b) / n, (4.0 * a * b / (n * n * n)).sqrt()))
}

pub fn estimate_chsh(settings: &ChshSettings, counts: &[Counts; 4]) -> Result<ChshResult> {
    let mut correlations = Vec::with_capacity(4);
    let mut e = [0.0; 4];
    let mut var = 0.0;
    for (k, (&(phi1, phi2), c)) in settings.0.iter().zip(counts).enumerate() {
        let (ek, sk) = correlation_from_counts(c).map_err(|_| {
            Error::Estimation(format!("setting {} (φ1={phi1}, φ2={phi2}) has zero coincidences", k + 1))
        })?;
        e[k] = ek;
        var += sk * sk;
        correlations.push(CorrelationEstimate { phi1_rad: phi1, phi2_rad: phi2, e: ek, sigma_e: sk, counts: *c });
    }
    Ok(ChshResult {
        correlations,
        s: chsh_combination(e),
        sigma_s: var.sqrt(),
        total_coincidences: counts.iter().map(Counts::total).sum(),
    })
}

/// Standard deviation of `E1 − E2 + E3 + E4` under Poisson resampling of
/// the observed counts (the sign is kept so the spread is not folded at 0).
/// Resamples with an empty setting are skipped; fails if fewer than two
/// usable resamples remain.
pub fn bootstrap_sigma_s(counts: &[Counts; 4], resamples: usize, seed: u64) -> Result<f64> {
    let mut rng = rng_for(seed, 4);
    let mut values = Vec::with_capacity(resamples);
    for _ in 0..resamples {
        let mut e = [0.0; 4];
        let mut ok = true;
        for (k, c) in counts.iter().enumerate() {
            let mean = c.as_array().map(|x| x as f64);
            match correlation_from_counts(&sample_counts(&mean, &mut rng)?) {
                Ok((ek, _)) => e[k] = ek,
                Err(_) => ok = false,
            }
        }
        if ok {
            values.push(e[0] - e[1] + e[2] + e[3]);
        }
    }
    if values.len() < 2 {
        return Err(Error::Estimation("too few usable bootstrap resamples".into()));
    }
    Ok(std_dev(&values))
}

pub(crate) fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

pub(crate) fn std_dev(xs: &[f64]) -> f64 {
    let m = mean(xs);
    (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() as f64 - 1.0)).sqrt()
}

/// Simulate and estimate for each seed, in seed order.
pub fn run_ensemble(model: &LinkModel, settings: &ChshSettings, seeds: &[u64], exec: Exec) -> Result<Vec<ChshResult>> {
    exec.map(seeds, |&seed| estimate_chsh(settings, &simulate_chsh(model, settings, seed)?)).into_iter().collect()
}

/// Solve for the channel depolarization that brings the expected-count S to
/// `target_s`, then the integration time that yields `target_total`
/// coincidences over the four settings.
pub fn calibrate(model: &LinkModel, settings: &ChshSettings, target_s: f64, target_total: f64) -> Result<LinkModel> {
    ensure_finite("target S", target_s)?;
    ensure_finite("target total", target_total)?;
    if target_total <= 0.0 {
        return Err(Error::input("target coincidence total must be positive"));
    }
    let with_p = |p: f64| -> Result<LinkModel> {
        let mut m = model.clone();
        m.channel.depolarization = p;
        Ok(m)
    };
    let s_at = |p: f64| -> Result<f64> { with_p(p)?.expected_s(settings) };
    let (s0, s1) = (s_at(0.0)?, s_at(1.0)?);
    if !(s1 <= target_s && target_s <= s0) {
        return Err(Error::Estimation(format!("target S = {target_s} outside the reachable range [{s1:.6}, {s0:.6}]")));
    }
    let (mut lo, mut hi) = (0.0, 1.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if s_at(mid)? > target_s {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-15 {
            break;
        }
    }
    let mut m = with_p(0.5 * (lo + hi))?;
    let total = m.expected_total(settings)?;
    if total.is_nan() || total <= 0.0 {
        return Err(Error::Estimation("model predicts no coincidences".into()));
    }
    m.detection.integration_s *= target_total / total;
    Ok(m)
}

/// Kolmogorov–Smirnov test of a sample against the standard normal.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KsResult {
    pub statistic: f64,
    pub p_value: f64,
}

pub fn ks_test_standard_normal(sample: &[f64]) -> Result<KsResult> {
    use statrs::distribution::{ContinuousCDF, Normal};
    if sample.is_empty() {
        return Err(Error::input("KS test needs a non-empty sample"));
    }
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let mut xs = sample.to_vec();
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    let d = xs
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = normal.cdf(x);
            (f - i as f64 / n).max((i + 1) as f64 / n - f)
        })
        .fold(0.0, f64::max);
    let sn = n.sqrt();
    let lambda = (sn + 0.12 + 0.11 / sn) * d;
    Ok(KsResult { statistic: d, p_value: kolmogorov_q(lambda) })
}

/// Survival function of the Kolmogorov distribution.
fn kolmogorov_q(lambda: f64) -> f64 {
    if lambda < 1e-3 {
        return 1.0;
    }
    let mut sum = 0.0;
    for k in 1..=100 {
        let k = k as f64;
        let term = (-2.0 * k * k * lambda * lambda).exp();
        sum += if k as i64 % 2 == 1 { term } else { -term };
        if term < 1e-16 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

/// Counts CSV with header
/// `setting_phi1_rad,setting_phi2_rad,c_pp,c_mm,c_pm,c_mp`.
pub fn counts_to_csv(settings: &ChshSettings, counts: &[Counts; 4]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let io = |e: csv::Error| Error::Io(std::io::Error::other(e));
    w.write_record(["setting_phi1_rad", "setting_phi2_rad", "c_pp", "c_mm", "c_pm", "c_mp"]).map_err(io)?;
    for (&(a, b), c) in settings.0.iter().zip(counts) {
        w.write_record([
            a.to_string(),
            b.to_string(),
            c.pp.to_string(),
            c.mm.to_string(),
            c.pm.to_string(),
            c.mp.to_string(),
        ])
        .map_err(io)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(std::io::Error::other(e.to_string())))?;
    Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
}

pub fn counts_from_csv(text: &str) -> Result<(ChshSettings, [Counts; 4])> {
    const WHAT: &str = "counts CSV";
    const HEADER: [&str; 6] = ["setting_phi1_rad", "setting_phi2_rad", "c_pp", "c_mm", "c_pm", "c_mp"];
    let mut rd = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    let header = rd.headers().map_err(|e| Error::parse(WHAT, 1, 1, e.to_string()))?;
    if header.iter().ne(HEADER) {
        return Err(Error::parse(WHAT, 1, 1, format!("header must be `{}`", HEADER.join(","))));
    }
    let mut settings = [(0.0, 0.0); 4];
    let mut counts = [Counts::from_array([0; 4]); 4];
    let mut rows = 0;
    for (i, rec) in rd.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| Error::parse(WHAT, line, 1, e.to_string()))?;
        if i >= 4 {
            return Err(Error::parse(WHAT, line, 1, "expected exactly four settings"));
        }
        if rec.len() != 6 {
            return Err(Error::parse(WHAT, line, 1, format!("expected 6 columns, found {}", rec.len())));
        }
        let angle = |col: usize| -> Result<f64> {
            let v: f64 = rec[col]
                .parse()
                .map_err(|_| Error::parse(WHAT, line, col + 1, format!("`{}` is not a number", &rec[col])))?;
            if !v.is_finite() {
                return Err(Error::parse(WHAT, line, col + 1, "angle must be finite"));
            }
            Ok(v)
        };
        let count = |col: usize| -> Result<u64> {
            rec[col].parse().map_err(|_| Error::parse(WHAT, line, col + 1, format!("`{}` is not a count", &rec[col])))
        };
        settings[i] = (angle(0)?, angle(1)?);
        counts[i] = Counts::from_array([count(2)?, count(3)?, count(4)?, count(5)?]);
        rows += 1;
    }
    if rows != 4 {
        return Err(Error::parse(WHAT, rows + 2, 1, format!("expected four settings, found {rows}")));
    }
    Ok((ChshSettings(settings), counts))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::link_sim::state::{chsh_analytic, TwoQubitState};
    use approx::assert_abs_diff_eq;
    use std::f64::consts::SQRT_2;

    fn link(fidelity: f64, rate: f64, loss_db: f64, det: DetectionModel) -> LinkModel {
        LinkModel {
            source: SourceModel::new(fidelity, rate).unwrap(),
            channel: ChannelModel::new(loss_db, OpticalElement::identity(), 0.0).unwrap(),
            detection: det,
        }
    }

    fn within_5_sigma(observed: f64, mean: f64) -> bool {
        (observed - mean).abs() <= 5.0 * mean.sqrt().max(1.0)
    }

    #[test]
    fn perfect_correlation_run() {
        let m = link(1.0, 1e6, 0.0, DetectionModel::ideal(1.0).unwrap());
        let c = simulate_coincidences(&m, 0.0, 0.0, 1, 0).unwrap();
        assert!(within_5_sigma((c.pp + c.mm) as f64, 1e6));
        assert!(c.pm + c.mp <= 5);
    }

    #[test]
    fn loss_scales_coincidences() {
        let det = DetectionModel::ideal(1.0).unwrap();
        let base = link(1.0, 1e6, 0.0, det).expected_total(&ChshSettings::standard()).unwrap();
        let m = link(1.0, 1e6, 46.0, det);
        let lossy = m.expected_total(&ChshSettings::standard()).unwrap();
        assert_abs_diff_eq!(lossy / base, 10f64.powf(-4.6), epsilon = 1e-18);
        let det = DetectionModel::ideal(2000.0).unwrap();
        let m = link(1.0, 1e6, 46.0, det);
        let total: u64 = simulate_chsh(&m, &ChshSettings::standard(), 3).unwrap().iter().map(Counts::total).sum();
        assert!(within_5_sigma(total as f64, 4.0 * 1e6 * 2000.0 * 10f64.powf(-4.6)));
        // doubling the loss in dB squares the transmission
        let m23 = link(1.0, 1e6, 23.0, det).expected_total(&ChshSettings::standard()).unwrap();
        let m46 = m.expected_total(&ChshSettings::standard()).unwrap();
        let m0 = link(1.0, 1e6, 0.0, det).expected_total(&ChshSettings::standard()).unwrap();
        assert_abs_diff_eq!(m46 / m0, (m23 / m0).powi(2), epsilon = 1e-15);
    }

    #[test]
    fn dark_counts_only() {
        let det = DetectionModel::new(1.0, 1e4, 2.5e-9, 1e5).unwrap();
        let m = link(1.0, 0.0, 0.0, det);
        let expect = 1e4 * 1e4 * 2.5e-9 * 1e5;
        for k in m.expected_counts(0.3, 0.1).unwrap() {
            assert_abs_diff_eq!(k, expect, epsilon = 1e-9);
        }
        let c = simulate_coincidences(&m, 0.3, 0.1, 9, 0).unwrap();
        for k in c.as_array() {
            assert!(within_5_sigma(k as f64, expect));
        }
    }

    #[test]
    fn seeded_runs_are_reproducible() {
        let m = link(0.9329, 1e6, 46.0, DetectionModel::new(0.5, 100.0, 2.5e-9, 100.0).unwrap());
        let st = ChshSettings::standard();
        assert_eq!(simulate_chsh(&m, &st, 42).unwrap(), simulate_chsh(&m, &st, 42).unwrap());
        assert_ne!(simulate_chsh(&m, &st, 42).unwrap(), simulate_chsh(&m, &st, 43).unwrap());
        let single = simulate_coincidences(&m, st.0[2].0, st.0[2].1, 42, 2).unwrap();
        assert_eq!(single, simulate_chsh(&m, &st, 42).unwrap()[2]);
    }

    #[test]
    fn estimator_examples() {
        let st = ChshSettings::standard();
        let (e, s) = correlation_from_counts(&Counts::from_array([100, 100, 0, 0])).unwrap();
        assert_eq!((e, s), (1.0, 0.0));
        let (e, s) = correlation_from_counts(&Counts::from_array([50, 50, 50, 50])).unwrap();
        assert_eq!(e, 0.0);
        assert_abs_diff_eq!(s, 1.0 / 200f64.sqrt(), epsilon = 1e-15);
        let c = [Counts::from_array([50; 4]); 4];
        let boot = bootstrap_sigma_s(&c, 4000, 5).unwrap() / 2.0;
        assert!((boot - 1.0 / 200f64.sqrt()).abs() < 0.1 / 200f64.sqrt(), "bootstrap {boot}");
        let mut zero = c;
        zero[1] = Counts::from_array([0; 4]);
        assert!(matches!(estimate_chsh(&st, &zero), Err(Error::Estimation(_))));
        let r = estimate_chsh(&st, &c).unwrap();
        assert_eq!(r.total_coincidences, 800);
        assert_abs_diff_eq!(r.sigma_s, 2.0 / 200f64.sqrt(), epsilon = 1e-15);
    }

    #[test]
    fn long_lossless_run_approaches_tsirelson() {
        let m = link(1.0, 1e6, 0.0, DetectionModel::ideal(10.0).unwrap());
        let st = ChshSettings::standard();
        let r = estimate_chsh(&st, &simulate_chsh(&m, &st, 1).unwrap()).unwrap();
        assert!((r.s - 2.0 * SQRT_2).abs() < 5.0 * r.sigma_s);
        assert!(r.sigma_s < 1e-3);
        assert_abs_diff_eq!(
            m.expected_s(&st).unwrap(),
            chsh_analytic(&TwoQubitState::phi_plus(), &st),
            epsilon = 1e-12
        );
    }

    #[test]
    fn calibration_hits_targets() {
        let m = link(0.9329, 1e6, 46.0, DetectionModel::new(0.5, 100.0, 2.5e-9, 1.0).unwrap());
        let st = ChshSettings::standard();
        let cal = calibrate(&m, &st, 2.312, 2138.0).unwrap();
        assert_abs_diff_eq!(cal.expected_s(&st).unwrap(), 2.312, epsilon = 1e-12);
        assert_abs_diff_eq!(cal.expected_total(&st).unwrap(), 2138.0, epsilon = 1e-6);
        assert!(cal.channel.depolarization > 0.0 && cal.channel.depolarization < 0.2);
        assert!(calibrate(&m, &st, 2.7, 2138.0).is_err());
    }

    #[test]
    fn counts_csv_round_trip_and_errors() {
        let st = ChshSettings::standard();
        let c = [
            Counts::from_array([1, 2, 3, 4]),
            Counts::from_array([5, 6, 7, 8]),
            Counts::from_array([9, 10, 11, 12]),
            Counts::from_array([13, 14, 15, 16]),
        ];
        let text = counts_to_csv(&st, &c).unwrap();
        let (s2, c2) = counts_from_csv(&text).unwrap();
        assert_eq!((s2, c2), (st, c));
        let bad = text.replacen(",7,", ",x,", 1);
        match counts_from_csv(&bad) {
            Err(Error::Parse { line, column, .. }) => assert_eq!((line, column), (3, 5)),
            other => panic!("unexpected {other:?}"),
        }
        let short: String = text.lines().take(4).map(|l| format!("{l}\n")).collect();
        assert!(counts_from_csv(&short).is_err());
    }

    #[test]
    fn ks_detects_non_normal_samples() {
        use rand::Rng;
        use rand_distr::StandardNormal;
        let mut rng = rng_for(1, 0);
        let normal: Vec<f64> = (0..500).map(|_| rng.sample(StandardNormal)).collect();
        assert!(ks_test_standard_normal(&normal).unwrap().p_value > 0.01);
        let shifted: Vec<f64> = normal.iter().map(|x| x + 0.5).collect();
        assert!(ks_test_standard_normal(&shifted).unwrap().p_value < 1e-4);
        // known value: Q(1.0) ≈ 0.26999967
        assert_abs_diff_eq!(kolmogorov_q(1.0), 0.269_999_67, epsilon = 1e-7);
    }

    #[test]
    fn model_validation() {
        assert!(DetectionModel::new(0.0, 0.0, 1e-9, 1.0).is_err());
        assert!(DetectionModel::new(0.5, -1.0, 1e-9, 1.0).is_err());
        assert!(DetectionModel::new(0.5, 0.0, 0.0, 1.0).is_err());
        assert!(ChannelModel::new(-1.0, OpticalElement::identity(), 0.0).is_err());
        assert!(ChannelModel::new(1.0, OpticalElement::identity(), 1.5).is_err());
        assert!(SourceModel::new(0.9, -1.0).is_err());
    }

    #[test]
    fn calibrated_runs_land_within_one_sigma_about_two_thirds_of_the_time() {
        let st = ChshSettings::standard();
        let det = DetectionModel::new(0.5, DEFAULT_DARK_RATE, DEFAULT_WINDOW_S, 1.0).unwrap();
        let cal = calibrate(&link(0.9329, 1e6, 46.0, det), &st, 2.312, 2138.0).unwrap();
        let seeds: Vec<u64> = (1..=400).collect();
        let runs = run_ensemble(&cal, &st, &seeds, Exec::Parallel).unwrap();
        let inside = runs.iter().filter(|r| (r.s - 2.312).abs() <= r.sigma_s).count() as f64 / runs.len() as f64;
        // 68% with a binomial sd of 2.3% at n = 400
        assert!((0.61..=0.75).contains(&inside), "{inside}");
    }
}
