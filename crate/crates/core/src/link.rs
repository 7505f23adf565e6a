//! Source, channel and detectors: from decoder settings to per-window tallies.
//!
//! Every pulse slot falls into one of nine outcomes: for each (Alice basis,
//! intensity) pair either a sifted correct bit, a sifted error, or (shared)
//! "nothing sifted". Expectation mode multiplies the per-slot probabilities by
//! the slot count; Monte Carlo mode draws the outcome multinomially, batch by
//! batch, each batch with its own ChaCha stream.

use std::f64::consts::{FRAC_PI_2, PI};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution};
use serde::{Deserialize, Serialize};

use crate::chip::{port_intensities, DecoderSettings, PortProbabilities, CHIP_INSERTION_LOSS_DB};
use crate::exec::Execution;
use crate::polarization::{drifted_bb84, Basis, Bb84State, DriftParams};
use crate::{Complex64, Error, Result};

/// Pulse slots per Monte Carlo batch.
pub const BATCH_SLOTS: u64 = 1 << 27;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Intensity {
    /// Signal, μ.
    Mu,
    /// Decoy, ν.
    Nu,
}

impl Intensity {
    pub const ALL: [Intensity; 2] = [Intensity::Mu, Intensity::Nu];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn label(self) -> &'static str {
        match self {
            Intensity::Mu => "mu",
            Intensity::Nu => "nu",
        }
    }

    pub fn parse(s: &str) -> Option<Intensity> {
        match s {
            "mu" => Some(Intensity::Mu),
            "nu" => Some(Intensity::Nu),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceConfig {
    pub rep_rate: f64,
    pub mu: f64,
    pub nu: f64,
    pub p_mu: f64,
    pub p_nu: f64,
    pub p_z: f64,
    pub p_x: f64,
    /// Probability that the encoder emits the orthogonal partner state.
    pub intrinsic_error: f64,
}

impl Default for SourceConfig {
    fn default() -> Self {
        Self {
            rep_rate: 50e6,
            mu: 0.6,
            nu: 0.1,
            p_mu: 1.0,
            p_nu: 0.0,
            p_z: 0.5,
            p_x: 0.5,
            intrinsic_error: 0.005,
        }
    }
}

impl SourceConfig {
    pub fn validate(&self) -> Result<()> {
        let prob = |x: f64| (0.0..=1.0).contains(&x);
        if !(self.rep_rate > 0.0 && self.rep_rate.is_finite()) {
            return Err(Error::domain("repetition rate must be positive"));
        }
        if !(self.mu > self.nu && self.nu >= 0.0 && self.mu.is_finite()) {
            return Err(Error::domain(format!(
                "need mu > nu >= 0 (mu = {}, nu = {})",
                self.mu, self.nu
            )));
        }
        if !prob(self.p_mu) || !prob(self.p_nu) || (self.p_mu + self.p_nu - 1.0).abs() > 1e-9 {
            return Err(Error::domain("intensity probabilities must sum to 1"));
        }
        if !prob(self.p_z) || !prob(self.p_x) || (self.p_z + self.p_x - 1.0).abs() > 1e-9 {
            return Err(Error::domain("basis probabilities must sum to 1"));
        }
        if !(0.0..0.5).contains(&self.intrinsic_error) {
            return Err(Error::domain("intrinsic error must lie in [0, 0.5)"));
        }
        Ok(())
    }

    pub fn mean_photons(&self, k: Intensity) -> f64 {
        match k {
            Intensity::Mu => self.mu,
            Intensity::Nu => self.nu,
        }
    }

    pub fn intensity_prob(&self, k: Intensity) -> f64 {
        match k {
            Intensity::Mu => self.p_mu,
            Intensity::Nu => self.p_nu,
        }
    }

    pub fn basis_prob(&self, b: Basis) -> f64 {
        match b {
            Basis::Z => self.p_z,
            Basis::X => self.p_x,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectorConfig {
    pub efficiency: f64,
    /// Dark count rate per detector, Hz.
    pub dark_rate: f64,
    pub chip_loss_db: f64,
    /// Power fraction routed to the Z controller.
    pub bob_basis_prob_z: f64,
    /// Effective detection gate; dark counts per slot are `dark_rate · gate_window_s`.
    pub gate_window_s: f64,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self {
            efficiency: 0.10,
            dark_rate: 400.0,
            chip_loss_db: CHIP_INSERTION_LOSS_DB,
            bob_basis_prob_z: 0.5,
            gate_window_s: 5e-9,
        }
    }
}

impl DetectorConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.efficiency > 0.0 && self.efficiency <= 1.0) {
            return Err(Error::domain("detector efficiency must lie in (0, 1]"));
        }
        if !(self.dark_rate >= 0.0 && self.dark_rate.is_finite()) {
            return Err(Error::domain("dark rate must be >= 0"));
        }
        if !(self.chip_loss_db >= 0.0 && self.chip_loss_db.is_finite()) {
            return Err(Error::domain("chip loss must be >= 0 dB"));
        }
        if !(0.0..=1.0).contains(&self.bob_basis_prob_z) {
            return Err(Error::domain("Bob's basis probability must lie in [0, 1]"));
        }
        if !(self.gate_window_s > 0.0 && self.gate_window_s.is_finite()) {
            return Err(Error::domain("gate window must be positive"));
        }
        Ok(())
    }

    pub fn dark_per_gate(&self) -> f64 {
        (self.dark_rate * self.gate_window_s).min(1.0)
    }
}

/// How scrambler events redraw the drift.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DriftDistribution {
    pub varphi_range: [f64; 2],
    pub phi_range: [f64; 2],
}

impl Default for DriftDistribution {
    fn default() -> Self {
        Self {
            varphi_range: [0.0, FRAC_PI_2],
            phi_range: [-PI, PI],
        }
    }
}

impl DriftDistribution {
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> DriftParams {
        let u = |r: [f64; 2], rng: &mut R| {
            if r[1] > r[0] {
                rng.random_range(r[0]..r[1])
            } else {
                r[0]
            }
        };
        let varphi = u(self.varphi_range, rng);
        let phi = u(self.phi_range, rng);
        DriftParams::new(varphi, phi).expect("drift ranges are validated finite")
    }

    fn validate(&self) -> Result<()> {
        let ok = |r: [f64; 2]| r[0].is_finite() && r[1].is_finite() && r[0] <= r[1];
        if !ok(self.varphi_range) || !ok(self.phi_range) {
            return Err(Error::domain("drift ranges must be finite with lo <= hi"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScramblerConfig {
    pub enabled: bool,
    pub min_interval_s: f64,
    pub max_interval_s: f64,
    #[serde(default)]
    pub distribution: DriftDistribution,
}

impl Default for ScramblerConfig {
    fn default() -> Self {
        Self {
            enabled: false,
            min_interval_s: 1200.0,
            max_interval_s: 1800.0,
            distribution: DriftDistribution::default(),
        }
    }
}

impl ScramblerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.min_interval_s > 0.0 && self.min_interval_s <= self.max_interval_s)
            || !self.max_interval_s.is_finite()
        {
            return Err(Error::domain("scrambler needs 0 < min_interval <= max_interval"));
        }
        self.distribution.validate()
    }
}

/// Next scrambler event after `now`: the time and the new drift.
/// `None` when the scrambler is disabled.
pub fn next_scramble<R: Rng + ?Sized>(cfg: &ScramblerConfig, now: f64, rng: &mut R) -> Option<(f64, DriftParams)> {
    if !cfg.enabled {
        return None;
    }
    let gap = if cfg.max_interval_s > cfg.min_interval_s {
        rng.random_range(cfg.min_interval_s..=cfg.max_interval_s)
    } else {
        cfg.min_interval_s
    };
    Some((now + gap, cfg.distribution.sample(rng)))
}

/// Piecewise-constant drift trajectory.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DriftSchedule {
    #[serde(default)]
    pub initial: DriftParams,
    /// `(time, drift)` change points, strictly increasing in time.
    #[serde(default)]
    pub events: Vec<DriftEvent>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DriftEvent {
    pub t: f64,
    pub drift: DriftParams,
}

impl DriftSchedule {
    pub fn constant(d: DriftParams) -> Self {
        Self {
            initial: d,
            events: Vec::new(),
        }
    }

    /// Initial drift followed by scrambler events up to `horizon`.
    pub fn scrambled<R: Rng + ?Sized>(initial: DriftParams, cfg: &ScramblerConfig, horizon: f64, rng: &mut R) -> Self {
        let mut events = Vec::new();
        let mut t = 0.0;
        while let Some((next, drift)) = next_scramble(cfg, t, rng) {
            if next >= horizon {
                break;
            }
            events.push(DriftEvent { t: next, drift });
            t = next;
        }
        Self { initial, events }
    }

    pub fn validate(&self) -> Result<()> {
        let mut last = f64::NEG_INFINITY;
        for e in &self.events {
            if !(e.t.is_finite() && e.t > last) {
                return Err(Error::domain("drift events must have increasing finite times"));
            }
            last = e.t;
        }
        Ok(())
    }

    pub fn at(&self, t: f64) -> DriftParams {
        self.events
            .iter()
            .take_while(|e| e.t <= t)
            .last()
            .map_or(self.initial, |e| e.drift)
    }

    /// Splits `[t0, t0 + duration)` into constant-drift pieces `(start, length, drift)`.
    pub fn segments(&self, t0: f64, duration: f64) -> Vec<(f64, f64, DriftParams)> {
        let t1 = t0 + duration;
        let mut out = Vec::new();
        let mut start = t0;
        let mut current = self.at(t0);
        for e in self.events.iter().filter(|e| e.t > t0 && e.t < t1) {
            out.push((start, e.t - start, current));
            start = e.t;
            current = e.drift;
        }
        out.push((start, t1 - start, current));
        out
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelConfig {
    pub length_km: f64,
    pub atten_db_per_km: f64,
    #[serde(default)]
    pub extra_loss_db: f64,
    /// Measured fiber loss; replaces `length_km · atten_db_per_km` when set.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fiber_loss_db: Option<f64>,
    #[serde(default)]
    pub drift: DriftSchedule,
    #[serde(default)]
    pub scrambler: ScramblerConfig,
}

/// Fiber attenuation, dB/km.
pub const DEFAULT_ATTENUATION: f64 = 0.1988;

impl ChannelConfig {
    pub fn fiber(length_km: f64) -> Self {
        Self {
            length_km,
            atten_db_per_km: DEFAULT_ATTENUATION,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.length_km >= 0.0 && self.length_km.is_finite()) {
            return Err(Error::domain("fiber length must be >= 0"));
        }
        if !(self.atten_db_per_km >= 0.0 && self.atten_db_per_km.is_finite()) {
            return Err(Error::domain("attenuation must be >= 0"));
        }
        if !(self.extra_loss_db >= 0.0 && self.extra_loss_db.is_finite()) {
            return Err(Error::domain("extra loss must be >= 0 dB"));
        }
        if let Some(l) = self.fiber_loss_db {
            if !(l >= 0.0 && l.is_finite()) {
                return Err(Error::domain("fiber loss must be >= 0 dB"));
            }
        }
        self.drift.validate()?;
        if self.scrambler.enabled {
            self.scrambler.validate()?;
        }
        Ok(())
    }

    pub fn loss_db(&self) -> f64 {
        self.fiber_loss_db.unwrap_or(self.length_km * self.atten_db_per_km) + self.extra_loss_db
    }
}

pub fn channel_transmittance(c: &ChannelConfig, det: &DetectorConfig) -> f64 {
    10f64.powf(-(c.loss_db() + det.chip_loss_db) / 10.0) * det.efficiency
}

/// `1 − (1 − dark)·exp(−mean_photons·eta)`.
pub fn click_probability(mean_photons: f64, eta: f64, dark_per_gate: f64) -> Result<f64> {
    if !(mean_photons >= 0.0) || !(0.0..=1.0).contains(&eta) || !(0.0..=1.0).contains(&dark_per_gate) {
        return Err(Error::domain(
            "click probability needs mean >= 0 and eta, dark in [0, 1]",
        ));
    }
    Ok(click(mean_photons * eta, dark_per_gate))
}

fn click(mean_detected: f64, dark: f64) -> f64 {
    (1.0 - (1.0 - dark) * (-mean_detected).exp()).clamp(0.0, 1.0)
}

/// Probability that Bob's squashed outcome is each port, given the mean
/// detected photon number at each port.
///
/// Double clicks are resolved hierarchically: a basis is picked uniformly
/// among the controllers that clicked, then a port uniformly among that
/// controller's clicked ports. Within one controller this is the uniform
/// random assignment among clicked ports; across controllers it keeps the
/// basis choice independent of which state was sent.
pub fn squashed_outcomes(mean_at_port: &PortProbabilities, dark: f64) -> PortProbabilities {
    let c = mean_at_port.as_array().map(|x| click(x, dark));
    let any_z = 1.0 - (1.0 - c[0]) * (1.0 - c[1]);
    let any_x = 1.0 - (1.0 - c[2]) * (1.0 - c[3]);
    let wz = 1.0 - 0.5 * any_x;
    let wx = 1.0 - 0.5 * any_z;
    let pick = |a: f64, b: f64| a * (1.0 - b) + 0.5 * a * b;
    PortProbabilities::from_array([
        wz * pick(c[0], c[1]),
        wz * pick(c[1], c[0]),
        wx * pick(c[2], c[3]),
        wx * pick(c[3], c[2]),
    ])
}

/// Per-slot probabilities of the sifted outcomes, indexed `[basis][intensity]`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SlotProbabilities {
    pub sifted: [[f64; 2]; 2],
    pub error: [[f64; 2]; 2],
}

impl SlotProbabilities {
    fn categories(&self) -> [f64; 8] {
        let mut out = [0.0; 8];
        for b in 0..2 {
            for k in 0..2 {
                out[4 * b + 2 * k] = self.sifted[b][k] - self.error[b][k];
                out[4 * b + 2 * k + 1] = self.error[b][k];
            }
        }
        out
    }
}

fn validate_all(src: &SourceConfig, chan: &ChannelConfig, det: &DetectorConfig, s: &DecoderSettings) -> Result<()> {
    src.validate()?;
    chan.validate()?;
    det.validate()?;
    if !s.phases.is_finite() {
        return Err(Error::domain("phase settings must be finite"));
    }
    if !s.voa_db.iter().all(|&d| d >= 0.0 && d.is_finite()) {
        return Err(Error::domain("VOA attenuation must be >= 0 dB"));
    }
    Ok(())
}

/// Outcome probabilities of one pulse slot under a fixed drift.
pub fn slot_probabilities(
    src: &SourceConfig,
    chan: &ChannelConfig,
    det: &DetectorConfig,
    settings: &DecoderSettings,
    drift: &DriftParams,
) -> SlotProbabilities {
    let eta = channel_transmittance(chan, det);
    let dark = det.dark_per_gate();
    let arm = settings.voa_db.map(|db| 10f64.powf(-db / 20.0));
    let mut out = SlotProbabilities::default();
    for k in Intensity::ALL {
        let scale = src.mean_photons(k) * eta;
        let outcomes = Bb84State::ALL.map(|s| {
            let [a, b] = drifted_bb84(s, drift).amplitudes();
            let amps: [Complex64; 2] = [a * arm[0], b * arm[1]];
            let p = port_intensities(amps, &settings.phases, det.bob_basis_prob_z).as_array();
            squashed_outcomes(&PortProbabilities::from_array(p.map(|x| x * scale)), dark)
        });
        for basis in Basis::ALL {
            let weight = src.intensity_prob(k) * src.basis_prob(basis) * 0.5;
            let (mut sifted, mut error) = (0.0, 0.0);
            for s in basis.states() {
                let p = src.intrinsic_error;
                let own = &outcomes[s.index()];
                let flipped = &outcomes[s.partner().index()];
                let right = (1.0 - p) * own.get(s) + p * flipped.get(s);
                let wrong = (1.0 - p) * own.get(s.partner()) + p * flipped.get(s.partner());
                sifted += right + wrong;
                error += wrong;
            }
            out.sifted[basis.index()][k.index()] = weight * sifted;
            out.error[basis.index()][k.index()] = weight * error;
        }
    }
    out
}

/// Detection and error counts over a window, indexed `[basis][intensity]`.
///
/// Counts are real so the same type carries expectations and samples.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct TallyBlock {
    pub duration_s: f64,
    pub n: [[f64; 2]; 2],
    pub m: [[f64; 2]; 2],
}

impl TallyBlock {
    pub fn empty(duration_s: f64) -> Self {
        Self {
            duration_s,
            ..Self::default()
        }
    }

    pub fn n_at(&self, b: Basis, k: Intensity) -> f64 {
        self.n[b.index()][k.index()]
    }

    pub fn m_at(&self, b: Basis, k: Intensity) -> f64 {
        self.m[b.index()][k.index()]
    }

    pub fn n_basis(&self, b: Basis) -> f64 {
        self.n[b.index()].iter().sum()
    }

    pub fn m_basis(&self, b: Basis) -> f64 {
        self.m[b.index()].iter().sum()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.duration_s >= 0.0 && self.duration_s.is_finite()) {
            return Err(Error::domain("tally duration must be >= 0"));
        }
        for b in 0..2 {
            for k in 0..2 {
                let (n, m) = (self.n[b][k], self.m[b][k]);
                if !(n.is_finite() && m.is_finite() && n >= 0.0 && m >= 0.0) {
                    return Err(Error::domain("tally counts must be finite and >= 0"));
                }
                if m > n {
                    return Err(Error::domain(format!("error count {m} exceeds detections {n}")));
                }
            }
        }
        Ok(())
    }

    /// Sum of two tallies covering consecutive windows.
    pub fn merge(&self, other: &TallyBlock) -> TallyBlock {
        let mut out = *self;
        out.duration_s += other.duration_s;
        for b in 0..2 {
            for k in 0..2 {
                out.n[b][k] += other.n[b][k];
                out.m[b][k] += other.m[b][k];
            }
        }
        out
    }

    pub fn scaled(&self, f: f64) -> TallyBlock {
        let mut out = *self;
        out.n.iter_mut().flatten().for_each(|x| *x *= f);
        out.m.iter_mut().flatten().for_each(|x| *x *= f);
        out
    }
}

/// `Σ_k m / Σ_k n` for one basis; `None` when no detections were sifted.
pub fn qber(t: &TallyBlock, basis: Basis) -> Option<f64> {
    let n = t.n_basis(basis);
    (n > 0.0).then(|| t.m_basis(basis) / n)
}

/// Error fraction over both bases.
pub fn total_qber(t: &TallyBlock) -> Option<f64> {
    let n = t.n_basis(Basis::Z) + t.n_basis(Basis::X);
    (n > 0.0).then(|| (t.m_basis(Basis::Z) + t.m_basis(Basis::X)) / n)
}

/// Expected tally over `[0, duration)`.
pub fn expected_tally(
    src: &SourceConfig,
    chan: &ChannelConfig,
    det: &DetectorConfig,
    settings: &DecoderSettings,
    duration: f64,
) -> Result<TallyBlock> {
    expected_tally_at(src, chan, det, settings, 0.0, duration)
}

/// Expected tally over `[t0, t0 + duration)`, following the drift schedule.
pub fn expected_tally_at(
    src: &SourceConfig,
    chan: &ChannelConfig,
    det: &DetectorConfig,
    settings: &DecoderSettings,
    t0: f64,
    duration: f64,
) -> Result<TallyBlock> {
    validate_all(src, chan, det, settings)?;
    if !(duration > 0.0 && duration.is_finite()) {
        return Err(Error::domain("window duration must be positive"));
    }
    let mut out = TallyBlock::empty(duration);
    for (_, len, drift) in chan.drift.segments(t0, duration) {
        let p = slot_probabilities(src, chan, det, settings, &drift);
        let slots = src.rep_rate * len;
        for b in 0..2 {
            for k in 0..2 {
                out.n[b][k] += slots * p.sifted[b][k];
                out.m[b][k] += slots * p.error[b][k];
            }
        }
    }
    Ok(out)
}

/// Seeded Monte Carlo tally over `[0, duration)`.
pub fn sample_tally(
    src: &SourceConfig,
    chan: &ChannelConfig,
    det: &DetectorConfig,
    settings: &DecoderSettings,
    duration: f64,
    seed: u64,
) -> Result<TallyBlock> {
    sample_tally_at(src, chan, det, settings, 0.0, duration, seed, Execution::Sequential)
}

/// Seeded Monte Carlo tally over `[t0, t0 + duration)`.
///
/// The window's slots are cut into batches of [`BATCH_SLOTS`]; batch `i` draws
/// from ChaCha8 stream `i` of `seed`, so the result depends only on the seed
/// and the configuration, never on `exec` or the thread count.
#[allow(clippy::too_many_arguments)]
pub fn sample_tally_at(
    src: &SourceConfig,
    chan: &ChannelConfig,
    det: &DetectorConfig,
    settings: &DecoderSettings,
    t0: f64,
    duration: f64,
    seed: u64,
    exec: Execution,
) -> Result<TallyBlock> {
    validate_all(src, chan, det, settings)?;
    if !(duration >= 0.0 && duration.is_finite()) {
        return Err(Error::domain("window duration must be >= 0"));
    }
    let total_slots = (src.rep_rate * duration).round() as u64;
    // Slot ranges of each constant-drift piece, and its outcome distribution.
    let mut pieces: Vec<(u64, u64, [f64; 8])> = Vec::new();
    let mut cursor = 0u64;
    let segs = chan.drift.segments(t0, duration);
    for (i, (start, len, drift)) in segs.iter().enumerate() {
        let end = if i + 1 == segs.len() {
            total_slots
        } else {
            (((start + len - t0) * src.rep_rate).round() as u64).min(total_slots)
        };
        if end > cursor {
            let p = slot_probabilities(src, chan, det, settings, drift).categories();
            pieces.push((cursor, end, p));
            cursor = end;
        }
    }

    let batches = total_slots.div_ceil(BATCH_SLOTS) as usize;
    let parts = exec.map_indexed(batches, |b| {
        let lo = b as u64 * BATCH_SLOTS;
        let hi = (lo + BATCH_SLOTS).min(total_slots);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(b as u64);
        let mut counts = [0u64; 8];
        for &(p_lo, p_hi, ref probs) in &pieces {
            let (a, z) = (lo.max(p_lo), hi.min(p_hi));
            if z > a {
                let c = multinomial(&mut rng, z - a, probs);
                counts.iter_mut().zip(c).for_each(|(t, x)| *t += x);
            }
        }
        counts
    });

    let mut out = TallyBlock::empty(duration);
    for counts in parts {
        for b in 0..2 {
            for k in 0..2 {
                let ok = counts[4 * b + 2 * k] as f64;
                let err = counts[4 * b + 2 * k + 1] as f64;
                out.n[b][k] += ok + err;
                out.m[b][k] += err;
            }
        }
    }
    Ok(out)
}

/// Multinomial draw by sequential conditional binomials; the mass not
/// covered by `probs` is the implicit last category.
fn multinomial<R: Rng + ?Sized, const K: usize>(rng: &mut R, trials: u64, probs: &[f64; K]) -> [u64; K] {
    let mut out = [0u64; K];
    let mut left = trials;
    let mut mass = 1.0;
    for (o, &p) in out.iter_mut().zip(probs) {
        if left == 0 || mass <= 0.0 {
            break;
        }
        let q = (p / mass).clamp(0.0, 1.0);
        let x = Binomial::new(left, q)
            .expect("probability clamped to [0, 1]")
            .sample(rng);
        *o = x;
        left -= x;
        mass -= p;
    }
    out
}
