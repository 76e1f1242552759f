//! Entangled-photon uplink: source, channel, detection, CHSH estimation and
//! the offset-scan experiment.

pub mod counting;
pub mod offset;
pub mod state;

use serde::{Deserialize, Serialize};

pub use counting::{
    bootstrap_sigma_s, calibrate, estimate_chsh, ks_test_standard_normal, run_ensemble, simulate_chsh,
    simulate_coincidences, ChannelModel, ChshResult, Counts, DetectionModel, LinkModel, SourceModel,
};
pub use offset::{offset_scan, OffsetCell, OffsetGrid};
pub use state::{chsh_analytic, correlation, make_source, ChshSettings, TwoQubitState};

/// Model parameters recorded alongside a result.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParameters {
    pub source_fidelity: f64,
    pub pair_rate_per_s: f64,
    pub loss_db: f64,
    pub depolarization: f64,
    pub detection: DetectionModel,
}

impl ModelParameters {
    pub fn of(model: &LinkModel) -> Self {
        Self {
            source_fidelity: model.source.fidelity,
            pair_rate_per_s: model.source.pair_rate,
            loss_db: model.channel.loss_db,
            depolarization: model.channel.depolarization,
            detection: model.detection,
        }
    }
}

/// Serialized result of a Bell run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BellReport {
    pub seed: Option<u64>,
    pub result: ChshResult,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bootstrap_sigma_s: Option<f64>,
    pub model: Option<ModelParameters>,
}

impl BellReport {
    pub fn to_json(&self) -> crate::Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| crate::Error::Io(std::io::Error::other(e)))
    }
}
