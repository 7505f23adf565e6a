//! The decoder chip as a transfer-matrix network.
//!
//! Each TE path amplitude pair is split by the 1×2 couplers into two
//! polarization controllers. Controller Z applies `R(θ1)`, an MMI, `R(θ2)` and
//! a second MMI, ending on ports H and V; controller X does the same with
//! `θ3, θ4` and ends on ports D and A. Port probabilities are the squared
//! moduli of the propagated amplitudes, so no matrix square roots are needed.

use std::f64::consts::{FRAC_PI_2, PI};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::polarization::{
    drifted_bb84, mmi_2x2, phase_shifter, Basis, Bb84State, DriftParams, Operator2, OperatorKind, PathState,
};
use crate::{Error, Result};

/// Lumped chip insertion loss in dB.
pub const CHIP_INSERTION_LOSS_DB: f64 = 4.6;
/// Half-wave voltage of the thermal phase shifters.
pub const HALF_WAVE_VOLTAGE: f64 = 0.72;
/// Static extinction ratio of a single MZI.
pub const STATIC_EXTINCTION_DB: f64 = 28.0;
/// 3-dB bandwidth of the thermal phase shifters.
pub const SHIFTER_BANDWIDTH_HZ: f64 = 3.0e3;

/// Retardances of the four active phase shifters, in radians.
///
/// Values are stored as given (the controller may drive them past 2π); every
/// probability is 2π-periodic in each angle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhaseSettings {
    pub theta1: f64,
    pub theta2: f64,
    pub theta3: f64,
    pub theta4: f64,
}

impl Default for PhaseSettings {
    fn default() -> Self {
        Self::ideal()
    }
}

impl PhaseSettings {
    pub fn new(theta1: f64, theta2: f64, theta3: f64, theta4: f64) -> Self {
        Self {
            theta1,
            theta2,
            theta3,
            theta4,
        }
    }

    /// `(0, π, 0, π/2)`: Z and X POVMs for an undrifted channel.
    pub fn ideal() -> Self {
        Self::new(0.0, PI, 0.0, FRAC_PI_2)
    }

    pub fn from_array(t: [f64; 4]) -> Self {
        Self::new(t[0], t[1], t[2], t[3])
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.theta1, self.theta2, self.theta3, self.theta4]
    }

    /// The `(first, second)` shifter angles of one controller.
    pub fn pair(&self, basis: Basis) -> (f64, f64) {
        match basis {
            Basis::Z => (self.theta1, self.theta2),
            Basis::X => (self.theta3, self.theta4),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.as_array().iter().all(|t| t.is_finite())
    }
}

/// Everything on the chip that shapes the port intensities.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct DecoderSettings {
    pub phases: PhaseSettings,
    /// VOA attenuation on the H and V arms after the splitter-rotator, dB.
    pub voa_db: [f64; 2],
}

impl From<PhaseSettings> for DecoderSettings {
    fn from(phases: PhaseSettings) -> Self {
        Self {
            phases,
            voa_db: [0.0, 0.0],
        }
    }
}

/// Probabilities (or unnormalized intensities) at the four output ports.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PortProbabilities {
    pub h: f64,
    pub v: f64,
    pub d: f64,
    pub a: f64,
}

impl PortProbabilities {
    pub fn from_array(p: [f64; 4]) -> Self {
        Self {
            h: p[0],
            v: p[1],
            d: p[2],
            a: p[3],
        }
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.h, self.v, self.d, self.a]
    }

    pub fn get(&self, port: Bb84State) -> f64 {
        self.as_array()[port.index()]
    }

    pub fn sum(&self) -> f64 {
        self.h + self.v + self.d + self.a
    }
}

/// Amplitude operator from the chip input to the two ports of one controller,
/// for a splitter that sends power fraction `branch_power` into it.
pub fn branch_transfer(basis: Basis, s: &PhaseSettings, branch_power: f64) -> Operator2 {
    let (first, second) = s.pair(basis);
    let u = mmi_2x2();
    u * phase_shifter(second) * u * phase_shifter(first) * Operator2::scaled_identity(branch_power.sqrt())
}

fn port_row(port: Bb84State, s: &PhaseSettings) -> [Complex64; 2] {
    let t = branch_transfer(port.basis(), s, 0.5);
    let row = match port {
        Bb84State::H | Bb84State::D => 0,
        Bb84State::V | Bb84State::A => 1,
    };
    t.row(row)
}

/// POVM element `M†M` for one port of the balanced chip.
pub fn povm_element(port: Bb84State, s: &PhaseSettings) -> Operator2 {
    let r = port_row(port, s);
    let mut m = [[Complex64::new(0.0, 0.0); 2]; 2];
    for (i, row) in m.iter_mut().enumerate() {
        for (j, z) in row.iter_mut().enumerate() {
            *z = r[i].conj() * r[j];
        }
    }
    Operator2::tagged(m, OperatorKind::PovmElement)
}

/// Measurement operator `M_port`, the Hermitian square root of the POVM
/// element.
///
/// Each element is `r†r` for a transfer row `r` with `‖r‖² = 1/2`, so it is
/// half a rank-one projector and its square root is `√2 · r†r`.
pub fn measurement_operator(port: Bb84State, s: &PhaseSettings) -> Operator2 {
    let e = povm_element(port, s).entries();
    let k = std::f64::consts::SQRT_2;
    Operator2::tagged(
        [[e[0][0] * k, e[0][1] * k], [e[1][0] * k, e[1][1] * k]],
        OperatorKind::PovmElement,
    )
}

/// Port intensities for arbitrary (possibly attenuated) input amplitudes.
///
/// `bob_z_prob` is the power fraction the 1×2 splitter sends to the Z
/// controller (0.5 for the balanced coupler).
pub fn port_intensities(amps: [Complex64; 2], s: &PhaseSettings, bob_z_prob: f64) -> PortProbabilities {
    let z = branch_transfer(Basis::Z, s, bob_z_prob).apply(amps);
    let x = branch_transfer(Basis::X, s, 1.0 - bob_z_prob).apply(amps);
    PortProbabilities::from_array([z[0].norm_sqr(), z[1].norm_sqr(), x[0].norm_sqr(), x[1].norm_sqr()])
}

/// Detection probabilities at ports H, V, D, A for a unit-norm input.
///
/// Unit norm is guaranteed by [`PathState`]; raw amplitude pairs must go
/// through [`PathState::from_normalized`], which rejects non-normalized input.
pub fn detection_probabilities(state: &PathState, s: &PhaseSettings) -> PortProbabilities {
    port_intensities(state.amplitudes(), s, 0.5)
}

/// Phase settings that undo the drift `d` in both bases.
///
/// Z: `θ1 = ϕ`, `θ2 = π − 2φ`. X: the drifted |D⟩ amplitudes `(α, β)` are routed
/// entirely to port D by `θ3 = −arg(αβ*)` and
/// `θ4 = atan2(2|α||β|, |β|² − |α|²)`; `θ3 = 0` when `|α||β| = 0`.
pub fn solve_compensation(d: &DriftParams) -> PhaseSettings {
    let theta1 = d.phi();
    let theta2 = PI - 2.0 * d.varphi();

    let dd = drifted_bb84(Bb84State::D, d);
    let (alpha, beta) = (dd.alpha(), dd.beta());
    let (ma, mb) = (alpha.norm(), beta.norm());
    let cross = ma * mb;
    let theta3 = if cross < 1e-15 {
        0.0
    } else {
        // + 0.0 turns a -0.0 into 0.0
        -(alpha * beta.conj()).arg() + 0.0
    };
    let theta4 = (2.0 * cross).atan2(mb * mb - ma * ma);
    PhaseSettings::new(theta1, theta2, theta3, theta4)
}

/// Probability of a drifted BB84 state arriving at the wrong port of its own
/// basis, i.e. the misrouting contribution to the QBER of that state.
pub fn misrouting(state: Bb84State, d: &DriftParams, s: &PhaseSettings) -> f64 {
    let p = detection_probabilities(&drifted_bb84(state, d), s);
    // Each basis controller receives half the power.
    2.0 * p.get(state.partner())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PhaseLaw {
    /// Heater power ∝ V², so phase ∝ V².
    #[default]
    Quadratic,
    Linear,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShifterCalibration {
    pub v_pi: f64,
    #[serde(default)]
    pub law: PhaseLaw,
    /// Phase offset at 0 V.
    #[serde(default)]
    pub theta0: f64,
}

impl Default for ShifterCalibration {
    fn default() -> Self {
        Self {
            v_pi: HALF_WAVE_VOLTAGE,
            law: PhaseLaw::Quadratic,
            theta0: 0.0,
        }
    }
}

impl ShifterCalibration {
    pub fn validate(&self) -> Result<()> {
        if !(self.v_pi > 0.0 && self.v_pi.is_finite()) {
            return Err(Error::domain("half-wave voltage must be positive"));
        }
        if !self.theta0.is_finite() {
            return Err(Error::domain("phase offset must be finite"));
        }
        Ok(())
    }

    /// dθ/dV at `v`.
    pub fn slope(&self, v: f64) -> f64 {
        match self.law {
            PhaseLaw::Quadratic => 2.0 * PI * v / (self.v_pi * self.v_pi),
            PhaseLaw::Linear => PI / self.v_pi,
        }
    }
}

pub fn voltage_to_phase(cal: &ShifterCalibration, v: f64) -> Result<f64> {
    cal.validate()?;
    if !(v >= 0.0) || !v.is_finite() {
        return Err(Error::domain(format!("shifter voltage must be ≥ 0, got {v}")));
    }
    let x = v / cal.v_pi;
    Ok(match cal.law {
        PhaseLaw::Quadratic => cal.theta0 + PI * x * x,
        PhaseLaw::Linear => cal.theta0 + PI * x,
    })
}

/// Inverse of [`voltage_to_phase`]; phases below `theta0` are unreachable.
pub fn phase_to_voltage(cal: &ShifterCalibration, theta: f64) -> Result<f64> {
    cal.validate()?;
    let rel = (theta - cal.theta0) / PI;
    if !(rel >= 0.0) || !rel.is_finite() {
        return Err(Error::domain(format!(
            "phase {theta} is below the 0 V offset {}",
            cal.theta0
        )));
    }
    Ok(match cal.law {
        PhaseLaw::Quadratic => cal.v_pi * rel.sqrt(),
        PhaseLaw::Linear => cal.v_pi * rel,
    })
}

/// Voltage realizing `theta` (mod 2π), preferring the period in which the
/// relative phase lies in `[π/2, 5π/2)` so the shifter sits away from the
/// flat region near 0 V. Falls back to lower periods if that exceeds `v_max`.
pub fn working_point(cal: &ShifterCalibration, theta: f64, v_max: f64) -> Result<f64> {
    let rel = (theta - cal.theta0 - FRAC_PI_2).rem_euclid(2.0 * PI) + FRAC_PI_2;
    for shift in [0.0, -2.0 * PI] {
        let r = rel + shift;
        if r < 0.0 {
            continue;
        }
        let v = phase_to_voltage(cal, cal.theta0 + r)?;
        if v <= v_max {
            return Ok(v);
        }
    }
    Err(Error::domain(format!("phase {theta} is not reachable below {v_max} V")))
}

/// Actuator state: voltages on PS1..PS4 plus the two arm VOAs.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct VoltageState {
    pub v: [f64; 4],
    #[serde(default)]
    pub voa_h_db: f64,
    #[serde(default)]
    pub voa_v_db: f64,
}

impl VoltageState {
    pub fn new(v: [f64; 4]) -> Self {
        Self {
            v,
            voa_h_db: 0.0,
            voa_v_db: 0.0,
        }
    }

    pub fn validate(&self, v_max: f64) -> Result<()> {
        if self.v.iter().any(|&v| !(0.0..=v_max).contains(&v)) {
            return Err(Error::domain(format!(
                "shifter voltages {:?} outside [0, {v_max}]",
                self.v
            )));
        }
        if !(self.voa_h_db >= 0.0 && self.voa_v_db >= 0.0) {
            return Err(Error::domain("VOA attenuation must be ≥ 0 dB"));
        }
        Ok(())
    }

    /// Chip settings produced by these voltages.
    pub fn decoder_settings(&self, cals: &[ShifterCalibration; 4]) -> Result<DecoderSettings> {
        let mut t = [0.0; 4];
        for j in 0..4 {
            t[j] = voltage_to_phase(&cals[j], self.v[j])?;
        }
        Ok(DecoderSettings {
            phases: PhaseSettings::from_array(t),
            voa_db: [self.voa_h_db, self.voa_v_db],
        })
    }
}

/// Photon counts recorded while sweeping one shifter voltage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErSweep {
    samples: Vec<(f64, f64)>,
}

impl ErSweep {
    pub fn new(samples: Vec<(f64, f64)>) -> Result<Self> {
        if samples.len() < 2 {
            return Err(Error::domain("an extinction sweep needs at least 2 samples"));
        }
        if samples
            .iter()
            .any(|&(v, i)| !v.is_finite() || !i.is_finite() || i < 0.0)
        {
            return Err(Error::domain("sweep intensities must be finite and ≥ 0"));
        }
        Ok(Self { samples })
    }

    pub fn samples(&self) -> &[(f64, f64)] {
        &self.samples
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtinctionReport {
    pub er_max_db: f64,
    /// `10·log10(I / I_min)` per sample.
    pub curve_db: Vec<f64>,
    /// Set when `I_min = 0`: the maximum is reported as +∞.
    pub unbounded: bool,
}

pub fn extinction_ratio(sweep: &ErSweep) -> ExtinctionReport {
    let i_min = sweep.samples.iter().map(|&(_, i)| i).fold(f64::INFINITY, f64::min);
    if i_min == 0.0 {
        let curve_db: Vec<f64> = sweep
            .samples
            .iter()
            .map(|&(_, i)| if i > 0.0 { f64::INFINITY } else { 0.0 })
            .collect();
        let any_light = curve_db.iter().any(|x| x.is_infinite());
        return ExtinctionReport {
            er_max_db: if any_light { f64::INFINITY } else { 0.0 },
            curve_db,
            unbounded: any_light,
        };
    }
    let curve_db: Vec<f64> = sweep.samples.iter().map(|&(_, i)| 10.0 * (i / i_min).log10()).collect();
    let er_max_db = curve_db.iter().copied().fold(0.0, f64::max);
    ExtinctionReport {
        er_max_db,
        curve_db,
        unbounded: false,
    }
}

/// Output counts of a single MZI with finite static extinction while one
/// shifter is swept over `voltages`.
///
/// The transmission is `(1−κ)·sin²(θ/2) + κ·cos²(θ/2)` with
/// `κ = 1/(1 + 10^{ER/10})`, so the ideal max/min ratio is exactly the static
/// extinction.
pub fn simulate_mzi_sweep(
    cal: &ShifterCalibration,
    static_er_db: f64,
    peak_counts: f64,
    voltages: &[f64],
) -> Result<ErSweep> {
    let kappa = 1.0 / (1.0 + 10f64.powf(static_er_db / 10.0));
    let samples = voltages
        .iter()
        .map(|&v| {
            let half = 0.5 * voltage_to_phase(cal, v)?;
            let t = (1.0 - kappa) * half.sin().powi(2) + kappa * half.cos().powi(2);
            Ok((v, peak_counts * t))
        })
        .collect::<Result<Vec<_>>>()?;
    ErSweep::new(samples)
}

/// Attenuates a linear intensity by a VOA setting in dB.
pub fn apply_voa(intensity: f64, db: f64) -> Result<f64> {
    if !(db >= 0.0) {
        return Err(Error::domain(format!("VOA attenuation must be ≥ 0 dB, got {db}")));
    }
    Ok(intensity * 10f64.powf(-db / 10.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::polarization::{make_state, ALGEBRA_TOL};
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use std::f64::consts::SQRT_2;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    /// Closed-form measurement operator for ports H/V (or D/A with θ3, θ4).
    fn closed_form_operator(port: Bb84State, s: &PhaseSettings) -> Operator2 {
        let (a, b) = s.pair(port.basis());
        let sign = match port {
            Bb84State::H | Bb84State::D => 1.0,
            Bb84State::V | Bb84State::A => -1.0,
        };
        let k = SQRT_2 / 4.0;
        let (sb, cb) = b.sin_cos();
        Operator2::new([
            [c(k * (1.0 - sign * cb), 0.0), Complex64::from_polar(k * sign * sb, -a)],
            [Complex64::from_polar(k * sign * sb, a), c(k * (1.0 + sign * cb), 0.0)],
        ])
    }

    /// Closed-form port probability.
    fn closed_form_probability(port: Bb84State, psi: &PathState, s: &PhaseSettings) -> f64 {
        let (a, b) = s.pair(port.basis());
        let sign = match port {
            Bb84State::H | Bb84State::D => 1.0,
            Bb84State::V | Bb84State::A => -1.0,
        };
        let (al, be) = (psi.alpha(), psi.beta());
        let cross = Complex64::from_polar(1.0, a) * al * be.conj();
        0.25 * ((1.0 - sign * b.cos()) * al.norm_sqr()
            + sign * b.sin() * 2.0 * cross.re
            + (1.0 + sign * b.cos()) * be.norm_sqr())
    }

    fn random_settings(rng: &mut impl rand::Rng) -> PhaseSettings {
        PhaseSettings::from_array(std::array::from_fn(|_| rng.random_range(-10.0..10.0)))
    }

    #[test]
    fn measurement_operator_examples() {
        let s = PhaseSettings::new(0.0, PI, 0.0, 0.0);
        let mh = measurement_operator(Bb84State::H, &s);
        let want = Operator2::diag(c(SQRT_2 / 2.0, 0.0), c(0.0, 0.0));
        assert!(mh.max_abs_diff(&want) <= ALGEBRA_TOL);

        // θ2 = 0 routes |H⟩ to V, so M_V picks up the (1,1) entry.
        let s0 = PhaseSettings::new(0.0, 0.0, 0.0, 0.0);
        let mv = measurement_operator(Bb84State::V, &s0);
        assert!(mv.max_abs_diff(&want) <= ALGEBRA_TOL);
        let mh0 = measurement_operator(Bb84State::H, &s0);
        assert!(mh0.max_abs_diff(&Operator2::diag(c(0.0, 0.0), c(SQRT_2 / 2.0, 0.0))) <= ALGEBRA_TOL);
    }

    #[test]
    fn operators_match_closed_form() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let s = random_settings(&mut rng);
            for port in Bb84State::ALL {
                let got = measurement_operator(port, &s);
                let want = closed_form_operator(port, &s);
                assert!(got.max_abs_diff(&want) <= 1e-12, "{port} {s:?}");
            }
        }
    }

    #[test]
    fn table_of_ideal_probabilities() {
        let s = PhaseSettings::ideal();
        let expected = [
            (Bb84State::H, [0.5, 0.0, 0.25, 0.25]),
            (Bb84State::V, [0.0, 0.5, 0.25, 0.25]),
            (Bb84State::D, [0.25, 0.25, 0.5, 0.0]),
            (Bb84State::A, [0.25, 0.25, 0.0, 0.5]),
        ];
        for (state, want) in expected {
            let got = detection_probabilities(&PathState::bb84(state), &s).as_array();
            for k in 0..4 {
                assert_abs_diff_eq!(got[k], want[k], epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn probabilities_match_closed_form() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        for _ in 0..500 {
            let s = random_settings(&mut rng);
            let psi = make_state(
                c(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)),
                c(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)),
            )
            .unwrap();
            let p = detection_probabilities(&psi, &s);
            for port in Bb84State::ALL {
                assert_abs_diff_eq!(p.get(port), closed_form_probability(port, &psi, &s), epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn z_compensation_routes_drifted_h_and_v() {
        let d = DriftParams::new(0.9, -2.2).unwrap();
        let s = PhaseSettings::new(d.phi(), PI - 2.0 * d.varphi(), 1.234, -0.4);
        let h = detection_probabilities(&drifted_bb84(Bb84State::H, &d), &s);
        assert_abs_diff_eq!(h.h, 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(h.v, 0.0, epsilon = 1e-12);
        // Drifted D/A split evenly over the Z ports.
        let dd = detection_probabilities(&drifted_bb84(Bb84State::D, &d), &s);
        assert_abs_diff_eq!(dd.h, 0.25, epsilon = 1e-12);
        assert_abs_diff_eq!(dd.v, 0.25, epsilon = 1e-12);
    }

    #[test]
    fn compensation_of_zero_drift_is_ideal() {
        let s = solve_compensation(&DriftParams::none());
        let ideal = PhaseSettings::ideal().as_array();
        for (a, b) in s.as_array().iter().zip(ideal) {
            assert_abs_diff_eq!(*a, b, epsilon = 1e-15);
        }
        assert!(s.theta3.is_sign_positive());
    }

    #[test]
    fn compensation_clears_errors() {
        let d = DriftParams::new(0.3, 1.1).unwrap();
        let s = solve_compensation(&d);
        for state in Bb84State::ALL {
            assert!(misrouting(state, &d, &s) < 1e-9, "{state}");
        }
        let p = detection_probabilities(&drifted_bb84(Bb84State::D, &d), &s);
        assert_abs_diff_eq!(p.d, 0.5, epsilon = 1e-9);
        let p = detection_probabilities(&drifted_bb84(Bb84State::V, &d), &s);
        assert_abs_diff_eq!(p.v, 0.5, epsilon = 1e-9);
    }

    #[test]
    fn compensation_degenerate_x_routing() {
        // Drifted D lands on a path eigenstate: |α||β| = 0.
        let d = DriftParams::new(std::f64::consts::FRAC_PI_4, PI).unwrap();
        let dd = drifted_bb84(Bb84State::D, &d);
        assert!(dd.alpha().norm() * dd.beta().norm() < 1e-12);
        let s = solve_compensation(&d);
        assert_eq!(s.theta3, 0.0);
        for state in Bb84State::ALL {
            assert!(misrouting(state, &d, &s) < 1e-9, "{state}");
        }
    }

    /// Coarse grid over (θ3, θ4) maximizing P_D of the drifted |D⟩; the full
    /// 1e-3 rad search lives in the acceptance suite.
    #[test]
    fn x_closed_form_agrees_with_grid_search() {
        let d = DriftParams::new(1.0, 0.5).unwrap();
        let dd = drifted_bb84(Bb84State::D, &d);
        let n = 720;
        let step = 2.0 * PI / n as f64;
        let mut best = (f64::MIN, 0.0, 0.0);
        for i in 0..n {
            for j in 0..n {
                let s = PhaseSettings::new(0.0, 0.0, i as f64 * step, j as f64 * step);
                let p = closed_form_probability(Bb84State::D, &dd, &s);
                if p > best.0 {
                    best = (p, s.theta3, s.theta4);
                }
            }
        }
        let s = solve_compensation(&d);
        let wrap = |x: f64| (x + PI).rem_euclid(2.0 * PI) - PI;
        // Two equivalent optima: (θ3, θ4) and (θ3 + π, −θ4).
        let (b3, b4) = if best.2.sin() < 0.0 {
            (best.1 + PI, -best.2)
        } else {
            (best.1, best.2)
        };
        assert!(wrap(b3 - s.theta3).abs() < 2.0 * step);
        assert!(wrap(b4 - s.theta4).abs() < 2.0 * step);
    }

    #[test]
    fn voltage_phase_examples() {
        let cal = ShifterCalibration::default();
        assert_abs_diff_eq!(voltage_to_phase(&cal, 0.72).unwrap(), PI, epsilon = 1e-12);
        assert_eq!(voltage_to_phase(&cal, 0.0).unwrap(), 0.0);
        let lin = ShifterCalibration {
            law: PhaseLaw::Linear,
            ..cal
        };
        assert_eq!(voltage_to_phase(&lin, 0.0).unwrap(), 0.0);
        assert_abs_diff_eq!(voltage_to_phase(&lin, 0.36).unwrap(), PI / 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(
            voltage_to_phase(&cal, 0.72 / SQRT_2).unwrap(),
            PI / 2.0,
            epsilon = 1e-12
        );
        assert!(voltage_to_phase(&cal, -0.1).is_err());
        let bad = ShifterCalibration { v_pi: 0.0, ..cal };
        assert!(voltage_to_phase(&bad, 0.1).is_err());
    }

    #[test]
    fn phase_voltage_round_trip_and_monotone() {
        for law in [PhaseLaw::Quadratic, PhaseLaw::Linear] {
            let cal = ShifterCalibration {
                v_pi: 0.72,
                law,
                theta0: 0.3,
            };
            let mut last = f64::MIN;
            for k in 0..=200 {
                let v = 1.5 * k as f64 / 200.0;
                let th = voltage_to_phase(&cal, v).unwrap();
                assert!(th >= last);
                last = th;
                assert_abs_diff_eq!(phase_to_voltage(&cal, th).unwrap(), v, epsilon = 1e-12);
            }
            assert!(phase_to_voltage(&cal, 0.0).is_err());
        }
    }

    #[test]
    fn working_point_stays_in_band() {
        let cal = ShifterCalibration::default();
        let v_max = 1.25;
        for k in 0..100 {
            let theta = -7.0 + 0.15 * k as f64;
            let v = working_point(&cal, theta, v_max).unwrap();
            assert!((0.0..=v_max).contains(&v));
            let back = voltage_to_phase(&cal, v).unwrap();
            let diff = (back - theta).rem_euclid(2.0 * PI);
            assert!(diff < 1e-9 || 2.0 * PI - diff < 1e-9);
            assert!(back >= FRAC_PI_2 - 1e-12);
        }
    }

    #[test]
    fn extinction_examples() {
        let r = extinction_ratio(&ErSweep::new(vec![(0.0, 100.0), (1.0, 1.0)]).unwrap());
        assert_abs_diff_eq!(r.curve_db[0], 20.0, epsilon = 1e-12);
        assert_abs_diff_eq!(r.curve_db[1], 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(r.er_max_db, 20.0, epsilon = 1e-12);

        let r = extinction_ratio(&ErSweep::new(vec![(0.0, 5.0), (1.0, 5.0), (2.0, 5.0)]).unwrap());
        assert_eq!(r.er_max_db, 0.0);

        let r = extinction_ratio(&ErSweep::new(vec![(0.0, 0.0), (1.0, 3.0)]).unwrap());
        assert!(r.unbounded && r.er_max_db.is_infinite());

        assert!(ErSweep::new(vec![(0.0, 1.0)]).is_err());
        assert!(ErSweep::new(vec![(0.0, 1.0), (1.0, -1.0)]).is_err());
    }

    #[test]
    fn simulated_sweep_recovers_static_extinction() {
        let cal = ShifterCalibration::default();
        let volts: Vec<f64> = (0..=400).map(|k| 1.2 * k as f64 / 400.0).collect();
        let sweep = simulate_mzi_sweep(&cal, STATIC_EXTINCTION_DB, 1e6, &volts).unwrap();
        let r = extinction_ratio(&sweep);
        assert!((r.er_max_db - STATIC_EXTINCTION_DB).abs() <= 0.5, "{}", r.er_max_db);
    }

    #[test]
    fn voa_examples() {
        assert_abs_diff_eq!(apply_voa(1.0, 10.0 * 2f64.log10()).unwrap(), 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(apply_voa(1.0, 3.0103).unwrap(), 0.5, epsilon = 1e-5);
        assert_eq!(apply_voa(1.0, 0.0).unwrap(), 1.0);
        assert_abs_diff_eq!(apply_voa(0.2, 10.0).unwrap(), 0.02, epsilon = 1e-15);
        assert!(apply_voa(1.0, -1.0).is_err());
    }

    #[test]
    fn voltage_state_maps_to_settings() {
        let cals = [ShifterCalibration::default(); 4];
        let vs = VoltageState::new([0.72, 0.0, 0.72 / SQRT_2, 0.72]);
        let s = vs.decoder_settings(&cals).unwrap();
        assert_abs_diff_eq!(s.phases.theta1, PI, epsilon = 1e-12);
        assert_abs_diff_eq!(s.phases.theta3, PI / 2.0, epsilon = 1e-12);
        assert!(vs.validate(1.0).is_ok());
        assert!(VoltageState::new([1.1, 0.0, 0.0, 0.0]).validate(1.0).is_err());
    }

    proptest! {
        #[test]
        fn povm_is_complete_and_positive(t in proptest::array::uniform4(-50.0f64..50.0)) {
            let s = PhaseSettings::from_array(t);
            let mut sum = [[c(0.0, 0.0); 2]; 2];
            for port in Bb84State::ALL {
                let m = measurement_operator(port, &s);
                prop_assert!(m.is_psd(1e-12));
                let e = m.adjoint() * m;
                prop_assert!(e.max_abs_diff(&povm_element(port, &s)) <= 1e-12);
                prop_assert!(e.hermitian_eigenvalues()[0] >= -1e-12);
                for (i, row) in sum.iter_mut().enumerate() {
                    for (j, x) in row.iter_mut().enumerate() {
                        *x += e.get(i, j);
                    }
                }
            }
            prop_assert!(Operator2::new(sum).max_abs_diff(&Operator2::identity()) <= 1e-10);
        }

        #[test]
        fn probabilities_normalized_and_periodic(
            t in proptest::array::uniform4(-50.0f64..50.0),
            ar in -1.0f64..1.0, ai in -1.0f64..1.0, br in -1.0f64..1.0, bi in -1.0f64..1.0,
            k in 0usize..4, turns in -3i32..4,
        ) {
            prop_assume!(ar.abs() + ai.abs() + br.abs() + bi.abs() > 1e-3);
            let psi = make_state(c(ar, ai), c(br, bi)).unwrap();
            let s = PhaseSettings::from_array(t);
            let p = detection_probabilities(&psi, &s);
            prop_assert!((p.sum() - 1.0).abs() <= 1e-12);
            prop_assert!(p.as_array().iter().all(|&x| (-1e-15..=1.0).contains(&x)));

            let mut shifted = t;
            shifted[k] += 2.0 * PI * turns as f64;
            let q = detection_probabilities(&psi, &PhaseSettings::from_array(shifted));
            for (a, b) in p.as_array().iter().zip(q.as_array()) {
                prop_assert!((a - b).abs() <= 1e-12);
            }
        }

        #[test]
        fn trace_invariance(
            t in proptest::array::uniform4(-10.0f64..10.0),
            ar in -1.0f64..1.0, ai in -1.0f64..1.0, br in -1.0f64..1.0, bi in -1.0f64..1.0,
        ) {
            prop_assume!(ar.abs() + ai.abs() + br.abs() + bi.abs() > 1e-3);
            let psi = make_state(c(ar, ai), c(br, bi)).unwrap();
            let perp = make_state(-psi.beta().conj(), psi.alpha().conj()).unwrap();
            let s = PhaseSettings::from_array(t);
            for port in Bb84State::ALL {
                let e = povm_element(port, &s);
                let total = detection_probabilities(&psi, &s).get(port)
                    + detection_probabilities(&perp, &s).get(port);
                prop_assert!((total - e.trace().re).abs() <= 1e-12);
            }
        }

        #[test]
        fn compensation_exists_for_random_drift(vp in -10.0f64..10.0, p in -10.0f64..10.0) {
            let d = DriftParams::new(vp, p).unwrap();
            let s = solve_compensation(&d);
            for state in Bb84State::ALL {
                prop_assert!(misrouting(state, &d, &s) < 1e-9);
            }
        }
    }
}
