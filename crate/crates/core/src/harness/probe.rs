use crate::chip::{ShifterCalibration, VoltageState};
use crate::exec::{derive_seed, Execution};
use crate::feedback::{QberPair, QberProbe};
use crate::link::{expected_tally_at, qber, sample_tally_at, ChannelConfig, DetectorConfig, SourceConfig, TallyBlock};
use crate::polarization::Basis;

use super::Mode;

const PROBE_STREAM: u64 = 0x5052_4f42;

/// One measured window.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowRecord {
    pub t: f64,
    pub v: [f64; 4],
    pub tally: TallyBlock,
}

/// Measures QBER by simulating the link at the given chip voltages.
///
/// In Monte Carlo mode the `i`-th window uses a seed derived from the master
/// seed and `i`, so a run is reproducible regardless of timing details.
pub struct LinkProbe {
    pub src: SourceConfig,
    pub chan: ChannelConfig,
    pub det: DetectorConfig,
    pub calibrations: [ShifterCalibration; 4],
    pub mode: Mode,
    pub seed: u64,
    windows: u64,
    log: Option<Vec<WindowRecord>>,
}

impl LinkProbe {
    pub fn new(
        src: SourceConfig,
        chan: ChannelConfig,
        det: DetectorConfig,
        calibrations: [ShifterCalibration; 4],
        mode: Mode,
        seed: u64,
    ) -> Self {
        Self {
            src,
            chan,
            det,
            calibrations,
            mode,
            seed,
            windows: 0,
            log: None,
        }
    }

    /// Keep every measured window for later output.
    pub fn recording(mut self) -> Self {
        self.log = Some(Vec::new());
        self
    }

    pub fn take_log(&mut self) -> Vec<WindowRecord> {
        self.log.as_mut().map(std::mem::take).unwrap_or_default()
    }

    pub fn windows_measured(&self) -> u64 {
        self.windows
    }

    /// Tally of one window; `None` if the voltages are outside the calibration.
    pub fn tally(&mut self, v: &VoltageState, t: f64, window: f64) -> Option<TallyBlock> {
        let settings = v.decoder_settings(&self.calibrations).ok()?;
        let index = self.windows;
        self.windows += 1;
        let tally = match self.mode {
            Mode::Expect => expected_tally_at(&self.src, &self.chan, &self.det, &settings, t, window),
            Mode::Mc => sample_tally_at(
                &self.src,
                &self.chan,
                &self.det,
                &settings,
                t,
                window,
                derive_seed(self.seed, &[PROBE_STREAM, index]),
                Execution::Sequential,
            ),
        }
        .ok()?;
        if let Some(log) = self.log.as_mut() {
            log.push(WindowRecord { t, v: v.v, tally });
        }
        Some(tally)
    }
}

impl QberProbe for LinkProbe {
    fn measure(&mut self, v: &VoltageState, t: f64, window: f64) -> Option<QberPair> {
        let tally = self.tally(v, t, window)?;
        Some(QberPair {
            e_z: qber(&tally, Basis::Z)?,
            e_x: qber(&tally, Basis::X)?,
        })
    }
}
