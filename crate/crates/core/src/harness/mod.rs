//! Declarative scenarios and the runners that turn them into data files.
//!
//! A scenario is one JSON document. Only `kind` is required: the document is
//! deep-merged over the defaults of that kind, then validated. Every output
//! file starts with a metadata block (tool version, seed, SHA-256 of the
//! resolved scenario) and contains no timestamps, so a re-run with the same
//! scenario is byte-identical.

mod probe;
mod runners;
pub mod tally_io;

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use sha2::{Digest, Sha256};

use crate::chip::{DecoderSettings, PhaseSettings};
use crate::feedback::FeedbackConfig;
use crate::link::{ChannelConfig, DetectorConfig, SourceConfig};
use crate::security::SecurityParams;
use crate::{Error, Result};

pub use probe::{LinkProbe, WindowRecord};
pub use runners::{
    run, run_keyrate, run_povm_table, run_recovery_trials, run_scramble, run_stability, run_sweep, RecoverySummary,
    TrialOutcome,
};

pub const TOOL_VERSION: &str = concat!("polqkd ", env!("CARGO_PKG_VERSION"));

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScenarioKind {
    PovmTable,
    Stability,
    Scramble,
    Sweep,
    Keyrate,
}

impl ScenarioKind {
    pub fn label(self) -> &'static str {
        match self {
            ScenarioKind::PovmTable => "povm-table",
            ScenarioKind::Stability => "stability",
            ScenarioKind::Scramble => "scramble",
            ScenarioKind::Sweep => "sweep",
            ScenarioKind::Keyrate => "keyrate",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Real-valued expected counts.
    #[default]
    Expect,
    /// Seeded Monte Carlo counts.
    Mc,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub kind: ScenarioKind,
    pub mode: Mode,
    pub seed: Option<u64>,
    /// Simulated span of time series, seconds.
    pub duration_s: f64,
    /// Measurement window of time series, seconds.
    pub window_s: f64,
    pub source: SourceConfig,
    pub channel: ChannelConfig,
    pub detector: DetectorConfig,
    /// Chip settings used when `compensate` is off.
    pub decoder: DecoderSettings,
    /// Start from the analytic compensation of the channel's initial drift.
    pub compensate: bool,
    pub feedback: Option<FeedbackConfig>,
    pub security: Option<SecurityParams>,
    pub distances_km: Vec<f64>,
    /// Use the reference runs' source settings and spool losses at their
    /// distances.
    pub reference_presets: bool,
    /// Independent disturbances for the recovery statistics.
    pub trials: usize,
    /// Tally file analyzed by `keyrate`.
    pub tally_file: Option<PathBuf>,
    pub output_dir: Option<PathBuf>,
}

impl Scenario {
    /// Defaults for one kind.
    pub fn defaults(kind: ScenarioKind) -> Scenario {
        let base = Scenario {
            kind,
            mode: Mode::Expect,
            seed: None,
            duration_s: 1.0,
            window_s: 1.0,
            source: SourceConfig::default(),
            channel: ChannelConfig::fiber(0.0),
            detector: DetectorConfig::default(),
            decoder: PhaseSettings::ideal().into(),
            compensate: true,
            feedback: None,
            security: None,
            distances_km: Vec::new(),
            reference_presets: true,
            trials: 0,
            tally_file: None,
            output_dir: None,
        };
        match kind {
            ScenarioKind::PovmTable => Scenario {
                compensate: false,
                ..base
            },
            ScenarioKind::Stability => Scenario {
                duration_s: 10.0 * 3600.0,
                window_s: 300.0,
                ..base
            },
            ScenarioKind::Scramble => {
                let mut channel = ChannelConfig::fiber(75.0);
                channel.fiber_loss_db = Some(14.22);
                channel.scrambler.enabled = true;
                Scenario {
                    mode: Mode::Mc,
                    duration_s: 180.0 * 60.0,
                    window_s: 1.0,
                    source: SourceConfig::default(),
                    channel,
                    feedback: Some(FeedbackConfig::default()),
                    trials: 100,
                    ..base
                }
            }
            ScenarioKind::Sweep => Scenario {
                security: Some(SecurityParams::default()),
                distances_km: vec![25.0, 50.0, 75.0, 100.0],
                ..base
            },
            ScenarioKind::Keyrate => Scenario {
                security: Some(SecurityParams::default()),
                ..base
            },
        }
    }

    /// Parses a scenario document, filling everything it leaves out from the
    /// defaults of its kind.
    pub fn from_json(text: &str) -> Result<Scenario> {
        let user: Value = serde_json::from_str(text)?;
        Self::from_value(user)
    }

    pub fn from_value(user: Value) -> Result<Scenario> {
        let kind_v = user
            .get("kind")
            .cloned()
            .ok_or_else(|| Error::config("scenario needs a `kind`"))?;
        let kind: ScenarioKind =
            serde_json::from_value(kind_v).map_err(|e| Error::config(format!("unknown scenario kind: {e}")))?;
        let mut merged = serde_json::to_value(Scenario::defaults(kind))?;
        deep_merge(&mut merged, user);
        let s: Scenario = serde_json::from_value(merged)?;
        s.validate()?;
        Ok(s)
    }

    pub fn load(path: &Path) -> Result<Scenario> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.source.validate()?;
        self.channel.validate()?;
        self.detector.validate()?;
        if !(self.duration_s > 0.0 && self.duration_s.is_finite()) {
            return Err(Error::config("duration_s must be positive"));
        }
        if !(self.window_s > 0.0 && self.window_s <= self.duration_s) {
            return Err(Error::config("window_s must lie in (0, duration_s]"));
        }
        let needs_seed = match self.kind {
            ScenarioKind::Scramble => true,
            ScenarioKind::Stability | ScenarioKind::Sweep => self.mode == Mode::Mc,
            _ => false,
        };
        if needs_seed && self.seed.is_none() {
            return Err(Error::config(format!(
                "a {} scenario in this mode needs a seed",
                self.kind.label()
            )));
        }
        match self.kind {
            ScenarioKind::Scramble => {
                self.feedback
                    .as_ref()
                    .ok_or_else(|| Error::config("scramble needs a feedback block"))?
                    .validate()?;
            }
            ScenarioKind::Sweep | ScenarioKind::Keyrate => {
                self.security
                    .as_ref()
                    .ok_or_else(|| Error::config("key-rate scenarios need a security block"))?
                    .validate()?;
            }
            _ => {}
        }
        if self.kind == ScenarioKind::Sweep {
            if self.distances_km.is_empty() {
                return Err(Error::config("sweep needs at least one distance"));
            }
            if self.distances_km.iter().any(|d| !(*d >= 0.0 && d.is_finite())) {
                return Err(Error::config("distances must be >= 0 km"));
            }
        }
        Ok(())
    }

    /// SHA-256 of the resolved scenario's compact JSON.
    pub fn config_hash(&self) -> String {
        let text = serde_json::to_string(self).expect("scenario serializes");
        hex::encode(Sha256::digest(text.as_bytes()))
    }

    pub fn metadata(&self) -> Metadata {
        Metadata {
            tool: TOOL_VERSION.to_string(),
            kind: self.kind.label().to_string(),
            config_sha256: self.config_hash(),
            seed: self.seed,
        }
    }
}

/// Objects merge key by key; everything else is replaced.
pub fn deep_merge(base: &mut Value, patch: Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => merge_maps(b, p),
        (b, p) => *b = p,
    }
}

fn merge_maps(b: &mut Map<String, Value>, p: Map<String, Value>) {
    for (k, v) in p {
        match b.get_mut(&k) {
            Some(slot) if slot.is_object() && v.is_object() => deep_merge(slot, v),
            _ => {
                b.insert(k, v);
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Metadata {
    pub tool: String,
    pub kind: String,
    pub config_sha256: String,
    pub seed: Option<u64>,
}

impl Metadata {
    /// `#`-prefixed header lines for CSV files.
    pub fn csv_header(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "# tool: {}", self.tool);
        let _ = writeln!(s, "# kind: {}", self.kind);
        let _ = writeln!(s, "# config_sha256: {}", self.config_sha256);
        match self.seed {
            Some(seed) => {
                let _ = writeln!(s, "# seed: {seed}");
            }
            None => s.push_str("# seed: none\n"),
        }
        s
    }
}

/// The files a runner produced, plus its headline numbers.
#[derive(Debug, Clone, PartialEq)]
pub struct Artifact {
    pub files: Vec<(String, String)>,
    pub summary: Value,
    /// Set when a feedback run failed to converge.
    pub non_converged: bool,
}

impl Artifact {
    pub fn file(&self, name: &str) -> Option<&str> {
        self.files.iter().find(|(n, _)| n == name).map(|(_, c)| c.as_str())
    }

    /// Writes every file into `dir`, creating it if needed.
    pub fn write_to(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        std::fs::create_dir_all(dir)?;
        self.files
            .iter()
            .map(|(name, contents)| {
                let path = dir.join(name);
                std::fs::write(&path, contents)?;
                Ok(path)
            })
            .collect()
    }
}

/// CSV body builder with a fixed header.
pub(crate) struct Csv {
    text: String,
}

impl Csv {
    pub(crate) fn new(meta: &Metadata, columns: &[&str]) -> Self {
        let mut text = meta.csv_header();
        text.push_str(&columns.join(","));
        text.push('\n');
        Self { text }
    }

    pub(crate) fn row(&mut self, cells: &[String]) {
        self.text.push_str(&cells.join(","));
        self.text.push('\n');
    }

    pub(crate) fn finish(self) -> String {
        self.text
    }
}

pub(crate) fn json_report(meta: &Metadata, report: Value) -> String {
    let v = serde_json::json!({ "metadata": meta, "report": report });
    let mut s = serde_json::to_string_pretty(&v).expect("report serializes");
    s.push('\n');
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn kind_only_document_resolves_to_defaults() {
        let s = Scenario::from_json(r#"{"kind": "stability"}"#).unwrap();
        assert_eq!(s, Scenario::defaults(ScenarioKind::Stability));
        assert_eq!(s.window_s, 300.0);
    }

    #[test]
    fn nested_overrides_merge() {
        let s = Scenario::from_json(r#"{"kind": "sweep", "source": {"mu": 0.5}, "security": {"f_ec": 1.2}}"#).unwrap();
        assert_eq!(s.source.mu, 0.5);
        assert_eq!(s.source.nu, SourceConfig::default().nu);
        assert_eq!(s.security.unwrap().f_ec, 1.2);
        assert_eq!(s.security.unwrap().eps_sec, 1e-9);
    }

    #[test]
    fn round_trip_is_idempotent() {
        for kind in ["povm-table", "stability", "sweep", "keyrate"] {
            let s = Scenario::from_json(&format!(r#"{{"kind": "{kind}", "seed": 3}}"#)).unwrap();
            let again = Scenario::from_json(&s.to_json()).unwrap();
            assert_eq!(s, again);
            assert_eq!(s.to_json(), again.to_json());
            assert_eq!(s.config_hash(), again.config_hash());
        }
    }

    #[test]
    fn bad_documents_are_rejected() {
        assert!(Scenario::from_json(r#"{"source": {}}"#).is_err());
        assert!(Scenario::from_json(r#"{"kind": "nope"}"#).is_err());
        assert!(Scenario::from_json(r#"{"kind": "stability", "bogus": 1}"#).is_err());
        assert!(Scenario::from_json(r#"{"kind": "stability", "source": {"mu": -1}}"#).is_err());
        // Monte Carlo kinds need a seed.
        assert!(Scenario::from_json(r#"{"kind": "scramble"}"#).is_err());
        assert!(Scenario::from_json(r#"{"kind": "scramble", "seed": 1}"#).is_ok());
        assert!(Scenario::from_json(r#"{"kind": "stability", "mode": "mc"}"#).is_err());
        assert!(Scenario::from_json("not json").unwrap_err().is_invalid_input());
    }

    #[test]
    fn merge_replaces_scalars_and_arrays() {
        let mut a = json!({"a": {"b": 1, "c": [1, 2]}, "d": 4});
        deep_merge(&mut a, json!({"a": {"c": [9]}, "e": 5}));
        assert_eq!(a, json!({"a": {"b": 1, "c": [9]}, "d": 4, "e": 5}));
    }

    #[test]
    fn hash_depends_on_content() {
        let a = Scenario::defaults(ScenarioKind::Sweep);
        let mut b = a.clone();
        b.source.mu = 0.61;
        assert_ne!(a.config_hash(), b.config_hash());
        assert_eq!(a.config_hash().len(), 64);
        assert!(a.metadata().csv_header().starts_with("# tool: polqkd "));
    }
}
