//! Gradient-descent polarization compensation on measured QBER.
//!
//! One cycle: check both QBERs against their thresholds; pick the dither
//! step and gain for each basis from its QBER; central-difference gradient
//! on PS1 (Z) and PS3 (X), step both; re-check; gradient on PS2 and PS4, step
//! both; final check. The final check doubles as the next cycle's first one.

use serde::{Deserialize, Serialize};

use crate::chip::{phase_to_voltage, voltage_to_phase, working_point, PhaseSettings, ShifterCalibration, VoltageState};
use crate::polarization::Basis;
use crate::{Error, Result};

/// QBERs of both bases from one measurement window.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QberPair {
    pub e_z: f64,
    pub e_x: f64,
}

impl QberPair {
    pub fn get(&self, b: Basis) -> f64 {
        match b {
            Basis::Z => self.e_z,
            Basis::X => self.e_x,
        }
    }
}

/// Something that can measure both QBERs for a given actuator state.
///
/// `t` is the controller clock at the start of the window. Returning `None`
/// signals a window without sifted detections.
pub trait QberProbe {
    fn measure(&mut self, v: &VoltageState, t: f64, window: f64) -> Option<QberPair>;
}

impl<F> QberProbe for F
where
    F: FnMut(&VoltageState, f64, f64) -> Option<QberPair>,
{
    fn measure(&mut self, v: &VoltageState, t: f64, window: f64) -> Option<QberPair> {
        self(v, t, window)
    }
}

/// Dither step and gain used while a basis QBER is at or above `min_qber`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleLevel {
    pub min_qber: f64,
    /// Dither voltage Δv, volts.
    pub dv: f64,
    /// Gain α, volts² per unit QBER.
    pub alpha: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GradientMode {
    /// Z and X gradients take separate windows (4 per half-cycle).
    #[default]
    Sequential,
    /// Z and X shifters are dithered together (2 windows per half-cycle).
    Simultaneous,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeedbackConfig {
    pub e_z_th: f64,
    pub e_x_th: f64,
    /// Levels in any order; the highest `min_qber` not above the QBER wins.
    pub schedule: Vec<ScheduleLevel>,
    pub max_cycles: usize,
    /// Stop after this many QBER windows, if set.
    #[serde(default)]
    pub max_evaluations: Option<usize>,
    pub window_s: f64,
    /// Settling time charged for every voltage write.
    pub settle_delay_s: f64,
    pub v_max: f64,
    pub calibrations: [ShifterCalibration; 4],
    #[serde(default)]
    pub gradient_mode: GradientMode,
    /// Consecutive cycles at an actuator bound before shifting by one period.
    pub recenter_after: usize,
    /// Extra windows tried when a measurement comes back empty.
    pub no_data_retries: usize,
}

impl Default for FeedbackConfig {
    fn default() -> Self {
        let cal = ShifterCalibration::default();
        Self {
            e_z_th: 0.015,
            e_x_th: 0.015,
            schedule: default_schedule(cal.v_pi),
            max_cycles: 200,
            max_evaluations: None,
            window_s: 1.0,
            settle_delay_s: 1.0 / crate::chip::SHIFTER_BANDWIDTH_HZ,
            v_max: 3f64.sqrt() * cal.v_pi,
            calibrations: [cal; 4],
            gradient_mode: GradientMode::Sequential,
            recenter_after: 2,
            no_data_retries: 3,
        }
    }
}

/// Coarse-to-fine schedule. Gains scale with `(v_pi / 2π)²`, which turns a
/// QBER slope per radian into a sensible step in volts.
pub fn default_schedule(v_pi: f64) -> Vec<ScheduleLevel> {
    let g = (v_pi / (2.0 * std::f64::consts::PI)).powi(2);
    vec![
        ScheduleLevel {
            min_qber: 0.10,
            dv: 0.05 * v_pi,
            alpha: 2.0 * g,
        },
        ScheduleLevel {
            min_qber: 0.02,
            dv: 0.02 * v_pi,
            alpha: 1.0 * g,
        },
        ScheduleLevel {
            min_qber: 0.0,
            dv: 0.01 * v_pi,
            alpha: 0.5 * g,
        },
    ]
}

impl FeedbackConfig {
    pub fn validate(&self) -> Result<()> {
        let th = |x: f64| x > 0.0 && x < 0.5;
        if !th(self.e_z_th) || !th(self.e_x_th) {
            return Err(Error::config("QBER thresholds must lie in (0, 0.5)"));
        }
        if self.schedule.is_empty() {
            return Err(Error::config("feedback schedule is empty"));
        }
        if self
            .schedule
            .iter()
            .any(|l| !(l.dv > 0.0 && l.alpha > 0.0 && l.min_qber.is_finite()))
        {
            return Err(Error::config("schedule steps and gains must be positive"));
        }
        if self.max_cycles < 1 {
            return Err(Error::config("max_cycles must be >= 1"));
        }
        if !(self.window_s > 0.0 && self.settle_delay_s >= 0.0) {
            return Err(Error::config("window must be positive and settle delay >= 0"));
        }
        if !(self.v_max > 0.0 && self.v_max.is_finite()) {
            return Err(Error::config("v_max must be positive"));
        }
        for cal in &self.calibrations {
            cal.validate()?;
            let span = voltage_to_phase(cal, self.v_max)? - cal.theta0;
            if span < 2.0 * std::f64::consts::PI - 1e-9 {
                return Err(Error::config("actuator range must span at least 2π of phase"));
            }
        }
        Ok(())
    }

    /// Schedule entry for a basis QBER. Falls back to the lowest level.
    pub fn level(&self, e: f64) -> ScheduleLevel {
        self.schedule
            .iter()
            .filter(|l| e >= l.min_qber)
            .max_by(|a, b| a.min_qber.total_cmp(&b.min_qber))
            .or_else(|| self.schedule.iter().min_by(|a, b| a.min_qber.total_cmp(&b.min_qber)))
            .copied()
            .expect("schedule validated non-empty")
    }

    fn below(&self, q: &QberPair) -> bool {
        q.e_z <= self.e_z_th && q.e_x <= self.e_x_th
    }

    /// Voltages realizing `phases`, placed in the middle of the actuator range.
    pub fn voltages_for(&self, phases: &PhaseSettings) -> Result<VoltageState> {
        let t = phases.as_array();
        let mut v = [0.0; 4];
        for j in 0..4 {
            v[j] = working_point(&self.calibrations[j], t[j], self.v_max)?;
        }
        Ok(VoltageState::new(v))
    }
}

/// Where in the cycle a trace entry was taken.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Checkpoint {
    Start,
    Half,
    End,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub cycle: usize,
    pub t_seconds: f64,
    pub v: [f64; 4],
    pub e_z: f64,
    pub e_x: f64,
    pub converged: bool,
    pub checkpoint: Checkpoint,
    /// Gradients (QBER per volt) behind the voltages of this entry.
    pub gradients: [Option<f64>; 4],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControllerState {
    pub voltages: VoltageState,
    pub cycle: usize,
    pub last: Option<QberPair>,
    pub evaluations: usize,
    pub t_seconds: f64,
    pub clamp_events: usize,
    pub recenter_events: usize,
    /// Consecutive cycles each shifter ended at a bound (sign = which bound).
    stuck: [i32; 4],
    pub trace: Vec<TraceEntry>,
}

impl ControllerState {
    pub fn new(voltages: VoltageState) -> Self {
        Self {
            voltages,
            cycle: 0,
            last: None,
            evaluations: 0,
            t_seconds: 0.0,
            clamp_events: 0,
            recenter_events: 0,
            stuck: [0; 4],
            trace: Vec::new(),
        }
    }

    /// Starts the clock at `t` (e.g. the moment of a disturbance).
    pub fn starting_at(voltages: VoltageState, t: f64) -> Self {
        Self {
            t_seconds: t,
            ..Self::new(voltages)
        }
    }
}

/// Why a cycle stopped.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CycleStatus {
    Converged,
    Continue,
    BudgetExhausted,
    NoData,
}

struct Ctx<'a, P: QberProbe + ?Sized> {
    probe: &'a mut P,
    cfg: &'a FeedbackConfig,
}

impl<P: QberProbe + ?Sized> Ctx<'_, P> {
    fn budget_left(&self, st: &ControllerState) -> bool {
        self.cfg.max_evaluations.is_none_or(|m| st.evaluations < m)
    }

    /// One measurement window at the current voltages, with retries on empty
    /// windows. `Err` carries the reason the controller has to stop.
    fn evaluate(&mut self, st: &mut ControllerState) -> std::result::Result<QberPair, CycleStatus> {
        for _ in 0..=self.cfg.no_data_retries {
            if !self.budget_left(st) {
                return Err(CycleStatus::BudgetExhausted);
            }
            let q = self.probe.measure(&st.voltages, st.t_seconds, self.cfg.window_s);
            st.t_seconds += self.cfg.window_s;
            st.evaluations += 1;
            if let Some(q) = q {
                return Ok(q);
            }
        }
        Err(CycleStatus::NoData)
    }

    fn write(&self, st: &mut ControllerState, j: usize, v: f64) {
        st.voltages.v[j] = v;
        st.t_seconds += self.cfg.settle_delay_s;
    }

    fn log(&self, st: &mut ControllerState, q: QberPair, checkpoint: Checkpoint, gradients: [Option<f64>; 4]) {
        let entry = TraceEntry {
            cycle: st.cycle,
            t_seconds: st.t_seconds,
            v: st.voltages.v,
            e_z: q.e_z,
            e_x: q.e_x,
            converged: self.cfg.below(&q),
            checkpoint,
            gradients,
        };
        st.trace.push(entry);
    }

    /// Central differences for the given `(shifter, basis, dv)` dithers.
    fn gradients(
        &mut self,
        st: &mut ControllerState,
        dithers: &[(usize, Basis, f64)],
    ) -> std::result::Result<Vec<f64>, CycleStatus> {
        let groups: Vec<Vec<(usize, Basis, f64)>> = match self.cfg.gradient_mode {
            GradientMode::Sequential => dithers.iter().map(|d| vec![*d]).collect(),
            GradientMode::Simultaneous => vec![dithers.to_vec()],
        };
        let mut out = Vec::with_capacity(dithers.len());
        for group in groups {
            let base: Vec<f64> = group.iter().map(|&(j, _, _)| st.voltages.v[j]).collect();
            let mut sides = [Vec::new(), Vec::new()];
            let mut spans = Vec::new();
            for (side, sign) in [(0usize, 1.0), (1, -1.0)] {
                for (g, &(j, _, dv)) in group.iter().enumerate() {
                    self.write(st, j, (base[g] + sign * dv).clamp(0.0, self.cfg.v_max));
                }
                let q = self.evaluate(st);
                for (g, &(j, _, _)) in group.iter().enumerate() {
                    if side == 0 {
                        spans.push(st.voltages.v[j]);
                    } else {
                        spans[g] -= st.voltages.v[j];
                    }
                }
                match q {
                    Ok(q) => sides[side] = group.iter().map(|&(_, b, _)| q.get(b)).collect(),
                    Err(e) => {
                        for (g, &(j, _, _)) in group.iter().enumerate() {
                            self.write(st, j, base[g]);
                        }
                        return Err(e);
                    }
                }
            }
            for (g, &(j, _, _)) in group.iter().enumerate() {
                self.write(st, j, base[g]);
                out.push((sides[0][g] - sides[1][g]) / spans[g]);
            }
        }
        Ok(out)
    }

    /// `V ← V − α·G`, clamped to the actuator range, with re-centering of
    /// shifters that keep ending on a bound.
    fn step(&self, st: &mut ControllerState, j: usize, alpha: f64, g: f64) {
        let target = st.voltages.v[j] - alpha * g;
        let v_max = self.cfg.v_max;
        let clamped = target.clamp(0.0, v_max);
        if clamped != target {
            st.clamp_events += 1;
        }
        let side = if clamped <= 0.0 {
            -1
        } else if clamped >= v_max {
            1
        } else {
            0
        };
        st.stuck[j] = if side == 0 || side != st.stuck[j].signum() {
            side
        } else {
            st.stuck[j] + side
        };
        let mut v = clamped;
        if st.stuck[j].unsigned_abs() as usize >= self.cfg.recenter_after {
            let cal = &self.cfg.calibrations[j];
            let theta = voltage_to_phase(cal, clamped).expect("clamped voltage is valid");
            let shifted = theta - side as f64 * 2.0 * std::f64::consts::PI;
            if let Ok(r) = phase_to_voltage(cal, shifted) {
                if (0.0..=v_max).contains(&r) {
                    v = r;
                    st.recenter_events += 1;
                    st.stuck[j] = 0;
                }
            }
        }
        self.write(st, j, v);
    }
}

/// Central-difference gradient of one basis QBER with respect to one shifter
/// (0-based index). The dithered voltage is restored afterwards.
pub fn estimate_gradient<P: QberProbe + ?Sized>(
    probe: &mut P,
    state: &mut ControllerState,
    cfg: &FeedbackConfig,
    basis: Basis,
    shifter: usize,
    dv: f64,
) -> Result<Option<f64>> {
    let allowed = match basis {
        Basis::Z => [0, 1],
        Basis::X => [2, 3],
    };
    if !allowed.contains(&shifter) {
        return Err(Error::domain(format!(
            "shifter {} does not act on basis {basis}",
            shifter + 1
        )));
    }
    if !(dv > 0.0) {
        return Err(Error::domain("dither voltage must be positive"));
    }
    let mut ctx = Ctx { probe, cfg };
    let g = ctx.gradients(state, &[(shifter, basis, dv)]);
    Ok(g.ok().map(|g| g[0]))
}

/// Runs one controller cycle (or stops early on convergence).
pub fn feedback_cycle<P: QberProbe + ?Sized>(
    probe: &mut P,
    state: &mut ControllerState,
    cfg: &FeedbackConfig,
) -> Result<CycleStatus> {
    cfg.validate()?;
    let mut ctx = Ctx { probe, cfg };
    Ok(run_cycle(&mut ctx, state))
}

fn run_cycle<P: QberProbe + ?Sized>(ctx: &mut Ctx<'_, P>, st: &mut ControllerState) -> CycleStatus {
    let cfg = ctx.cfg;
    let q = match st.last {
        Some(q) => q,
        None => match ctx.evaluate(st) {
            Ok(q) => {
                st.last = Some(q);
                ctx.log(st, q, Checkpoint::Start, [None; 4]);
                q
            }
            Err(e) => return e,
        },
    };
    if cfg.below(&q) {
        return CycleStatus::Converged;
    }

    let lz = cfg.level(q.e_z);
    let lx = cfg.level(q.e_x);

    for (half, (jz, jx)) in [(0usize, 2usize), (1, 3)].into_iter().enumerate() {
        let g = match ctx.gradients(st, &[(jz, Basis::Z, lz.dv), (jx, Basis::X, lx.dv)]) {
            Ok(g) => g,
            Err(e) => return e,
        };
        ctx.step(st, jz, lz.alpha, g[0]);
        ctx.step(st, jx, lx.alpha, g[1]);
        let q = match ctx.evaluate(st) {
            Ok(q) => q,
            Err(e) => return e,
        };
        st.last = Some(q);
        let mut grads = [None; 4];
        grads[jz] = Some(g[0]);
        grads[jx] = Some(g[1]);
        let checkpoint = if half == 0 { Checkpoint::Half } else { Checkpoint::End };
        ctx.log(st, q, checkpoint, grads);
        if cfg.below(&q) {
            st.cycle += 1;
            return CycleStatus::Converged;
        }
    }
    st.cycle += 1;
    CycleStatus::Continue
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeedbackResult {
    pub converged: bool,
    pub cycles_used: usize,
    pub evaluations: usize,
    pub final_qber: Option<QberPair>,
    pub elapsed_s: f64,
    pub status: CycleStatus,
    pub state: ControllerState,
}

/// Cycles until both QBERs are under threshold, the cycle limit, or the
/// evaluation budget. Non-convergence is a normal result.
pub fn run_feedback<P: QberProbe + ?Sized>(
    probe: &mut P,
    state: ControllerState,
    cfg: &FeedbackConfig,
) -> Result<FeedbackResult> {
    cfg.validate()?;
    let mut st = state;
    let (t0, c0, e0) = (st.t_seconds, st.cycle, st.evaluations);
    let mut ctx = Ctx { probe, cfg };
    let mut status = CycleStatus::Continue;
    while st.cycle - c0 < cfg.max_cycles {
        status = run_cycle(&mut ctx, &mut st);
        if status != CycleStatus::Continue {
            break;
        }
    }
    let converged = status == CycleStatus::Converged && st.last.is_some_and(|q| cfg.below(&q));
    Ok(FeedbackResult {
        converged,
        cycles_used: st.cycle - c0,
        evaluations: st.evaluations - e0,
        final_qber: st.last,
        elapsed_s: st.t_seconds - t0,
        status,
        state: st,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chip::{detection_probabilities, misrouting, solve_compensation};
    use crate::polarization::{drifted_bb84, Bb84State, DriftParams};

    /// Noise-free chip QBER: mean misrouting of the two states of each basis.
    fn chip_probe(d: DriftParams, cfg: &FeedbackConfig) -> impl FnMut(&VoltageState, f64, f64) -> Option<QberPair> {
        let cals = cfg.calibrations;
        move |v: &VoltageState, _t, _w| {
            let s = v.decoder_settings(&cals).ok()?.phases;
            let e = |a: Bb84State, b: Bb84State| 0.5 * (misrouting(a, &d, &s) + misrouting(b, &d, &s));
            Some(QberPair {
                e_z: e(Bb84State::H, Bb84State::V),
                e_x: e(Bb84State::D, Bb84State::A),
            })
        }
    }

    fn ideal_voltages(cfg: &FeedbackConfig) -> VoltageState {
        cfg.voltages_for(&PhaseSettings::ideal()).unwrap()
    }

    #[test]
    fn default_config_is_valid() {
        let cfg = FeedbackConfig::default();
        cfg.validate().unwrap();
        assert_eq!(cfg.level(0.25).dv, 0.05 * 0.72);
        assert_eq!(cfg.level(0.05).dv, 0.02 * 0.72);
        assert_eq!(cfg.level(0.01).dv, 0.01 * 0.72);
        assert!(FeedbackConfig {
            v_max: 1.0,
            ..cfg.clone()
        }
        .validate()
        .is_err());
        assert!(FeedbackConfig { e_z_th: 0.6, ..cfg }.validate().is_err());
    }

    #[test]
    fn already_compensated_exits_immediately() {
        let cfg = FeedbackConfig::default();
        let mut probe = chip_probe(DriftParams::none(), &cfg);
        let v0 = ideal_voltages(&cfg);
        let r = run_feedback(&mut probe, ControllerState::new(v0), &cfg).unwrap();
        assert!(r.converged);
        assert_eq!(r.cycles_used, 0);
        assert_eq!(r.evaluations, 1);
        assert_eq!(r.state.voltages, v0);
    }

    #[test]
    fn gradient_vanishes_at_optimum() {
        let cfg = FeedbackConfig::default();
        let d = DriftParams::new(0.4, 1.0).unwrap();
        let mut probe = chip_probe(d, &cfg);
        let v0 = cfg.voltages_for(&solve_compensation(&d)).unwrap();
        let mut st = ControllerState::new(v0);
        // The voltage law is nonlinear, so the central difference carries an
        // O(dv²) bias; keep dv small.
        for (j, b) in [(0, Basis::Z), (1, Basis::Z), (2, Basis::X), (3, Basis::X)] {
            let g = estimate_gradient(&mut probe, &mut st, &cfg, b, j, 1e-4)
                .unwrap()
                .unwrap();
            assert!(g.abs() < 1e-6, "PS{} {g}", j + 1);
        }
        assert_eq!(st.voltages, v0);
        assert!(estimate_gradient(&mut probe, &mut st, &cfg, Basis::Z, 2, 0.01).is_err());
    }

    #[test]
    fn gradient_matches_analytic_derivative() {
        let cfg = FeedbackConfig::default();
        let d = DriftParams::new(0.7, -0.9).unwrap();
        let mut probe = chip_probe(d, &cfg);
        let v0 = VoltageState::new([0.8, 0.9, 0.95, 0.6]);
        let s = v0.decoder_settings(&cfg.calibrations).unwrap().phases;
        // E_Z = 2·p_V(drifted H); p_V = ¼[(1+cosθ2)|α|² + (1−cosθ2)|β|² − 2 sinθ2 Re(e^{iθ1}αβ*)].
        let h = drifted_bb84(Bb84State::H, &d);
        let cross = h.alpha() * h.beta().conj();
        let (t1, t2) = (s.theta1, s.theta2);
        let rot = crate::Complex64::from_polar(1.0, t1) * cross;
        let de_dt1 = 0.5 * (2.0 * t2.sin() * rot.im);
        let de_dt2 =
            0.5 * (-t2.sin() * h.alpha().norm_sqr() + t2.sin() * h.beta().norm_sqr() - 2.0 * t2.cos() * rot.re);
        let cal = &cfg.calibrations[0];
        for (j, want) in [(0, de_dt1 * cal.slope(v0.v[0])), (1, de_dt2 * cal.slope(v0.v[1]))] {
            let mut st = ControllerState::new(v0);
            let g = estimate_gradient(&mut probe, &mut st, &cfg, Basis::Z, j, 1e-4)
                .unwrap()
                .unwrap();
            assert!(
                (g - want).abs() < 1e-5 * want.abs().max(1.0),
                "PS{}: {g} vs {want}",
                j + 1
            );
        }
        // Sanity of the closed form itself.
        let p = detection_probabilities(&h, &s);
        assert!((2.0 * p.v - misrouting(Bb84State::H, &d, &s)).abs() < 1e-12);
    }

    #[test]
    fn gradient_sign_above_optimum() {
        let cfg = FeedbackConfig::default();
        let d = DriftParams::new(0.3, 0.5).unwrap();
        let mut probe = chip_probe(d, &cfg);
        let mut v = cfg.voltages_for(&solve_compensation(&d)).unwrap();
        v.v[1] += 0.03;
        let mut st = ControllerState::new(v);
        let g = estimate_gradient(&mut probe, &mut st, &cfg, Basis::Z, 1, 0.005)
            .unwrap()
            .unwrap();
        assert!(g > 0.0);
    }

    #[test]
    fn x_updates_leave_z_unchanged() {
        let cfg = FeedbackConfig::default();
        let d = DriftParams::new(1.1, 2.5).unwrap();
        let mut probe = chip_probe(d, &cfg);
        let v = VoltageState::new([0.8, 0.9, 0.95, 0.6]);
        let a = probe(&v, 0.0, 1.0).unwrap();
        let mut w = v;
        w.v[2] = 0.3;
        w.v[3] = 1.2;
        let b = probe(&w, 0.0, 1.0).unwrap();
        assert!((a.e_z - b.e_z).abs() <= 1e-12);
        let mut u = v;
        u.v[0] = 0.1;
        let c = probe(&u, 0.0, 1.0).unwrap();
        assert!((a.e_x - c.e_x).abs() <= 1e-12);
    }

    #[test]
    fn recovers_from_large_drift_and_qber_falls() {
        let cfg = FeedbackConfig::default();
        let d = DriftParams::new(0.9, 2.0).unwrap();
        let mut probe = chip_probe(d, &cfg);
        let r = run_feedback(&mut probe, ControllerState::new(ideal_voltages(&cfg)), &cfg).unwrap();
        assert!(r.converged, "{:?}", r.final_qber);
        let q = r.final_qber.unwrap();
        assert!(q.e_z <= 0.015 && q.e_x <= 0.015);
        let ends: Vec<f64> = r
            .state
            .trace
            .iter()
            .filter(|e| e.checkpoint != Checkpoint::Half)
            .map(|e| e.e_z + e.e_x)
            .collect();
        assert!(ends.windows(2).all(|w| w[1] < w[0] + 1e-12), "{ends:?}");
        for e in &r.state.trace {
            assert!(e.v.iter().all(|&v| (0.0..=cfg.v_max).contains(&v)));
        }
        assert!(r.elapsed_s >= r.evaluations as f64 * cfg.window_s);
    }

    #[test]
    fn budget_and_no_data_are_reported() {
        let cfg = FeedbackConfig {
            max_evaluations: Some(3),
            ..FeedbackConfig::default()
        };
        let mut probe = chip_probe(DriftParams::new(0.8, 1.0).unwrap(), &cfg);
        let r = run_feedback(&mut probe, ControllerState::new(ideal_voltages(&cfg)), &cfg).unwrap();
        assert!(!r.converged);
        assert_eq!(r.status, CycleStatus::BudgetExhausted);
        assert_eq!(r.evaluations, 3);

        let mut dead = |_: &VoltageState, _: f64, _: f64| None;
        let r = run_feedback(
            &mut dead,
            ControllerState::new(ideal_voltages(&cfg)),
            &FeedbackConfig::default(),
        )
        .unwrap();
        assert!(!r.converged);
        assert_eq!(r.status, CycleStatus::NoData);
    }

    #[test]
    fn simultaneous_mode_uses_fewer_windows() {
        let d = DriftParams::new(0.6, -1.0).unwrap();
        let seq = FeedbackConfig::default();
        let sim = FeedbackConfig {
            gradient_mode: GradientMode::Simultaneous,
            ..seq.clone()
        };
        let a = run_feedback(
            &mut chip_probe(d, &seq),
            ControllerState::new(ideal_voltages(&seq)),
            &seq,
        )
        .unwrap();
        let b = run_feedback(
            &mut chip_probe(d, &sim),
            ControllerState::new(ideal_voltages(&sim)),
            &sim,
        )
        .unwrap();
        assert!(a.converged && b.converged);
        // Separable surfaces: identical voltage path, half the dither windows.
        assert_eq!(a.cycles_used, b.cycles_used);
        assert!(b.evaluations < a.evaluations);
    }

    #[test]
    fn stuck_shifter_is_recentered() {
        let cfg = FeedbackConfig::default();
        // Surface that always pushes PS1 upward.
        let mut probe = |v: &VoltageState, _: f64, _: f64| {
            Some(QberPair {
                e_z: 0.3 - 0.1 * v.v[0],
                e_x: 0.0,
            })
        };
        let mut st = ControllerState::new(VoltageState::new([1.245, 0.72, 0.72, 0.72]));
        for _ in 0..6 {
            feedback_cycle(&mut probe, &mut st, &cfg).unwrap();
        }
        assert!(st.clamp_events > 0);
        assert!(st.recenter_events > 0);
        assert!(st
            .trace
            .iter()
            .all(|e| e.v.iter().all(|&v| (0.0..=cfg.v_max).contains(&v))));
    }
}
