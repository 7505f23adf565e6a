//! One-decoy finite-key analysis.
//!
//! Bounds follow the one-decoy (signal + weak decoy) method with Hoeffding
//! concentration on the observed counts. Counts enter as
//! `n±_k = (e^k / p_k)(n_k ± δ)` with `δ = √(n_tot/2 · ln(a/ε_sec))`; the
//! constant `a` is the size of the ε budget split (21 by default).

use serde::{Deserialize, Serialize};

use crate::link::{Intensity, SourceConfig, TallyBlock};
use crate::polarization::Basis;
use crate::{Error, Result};

/// How ε_sec is apportioned between the concentration terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EpsilonSplit {
    /// Divisor of ε_sec inside each Hoeffding deviation.
    pub hoeffding_terms: f64,
    /// Divisor of ε_sec in the random-sampling (phase error) term.
    pub sampling_terms: f64,
    /// Number of ε terms charged in the key length, `k·log2(c/ε_sec)`.
    pub length_terms: f64,
    pub length_divisor: f64,
}

impl Default for EpsilonSplit {
    fn default() -> Self {
        Self {
            hoeffding_terms: 21.0,
            sampling_terms: 21.0,
            length_terms: 6.0,
            length_divisor: 19.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SecurityParams {
    pub eps_sec: f64,
    pub eps_cor: f64,
    pub f_ec: f64,
    pub n_pulses: f64,
    pub rep_rate: f64,
    #[serde(default)]
    pub split: EpsilonSplit,
}

impl Default for SecurityParams {
    fn default() -> Self {
        Self {
            eps_sec: 1e-9,
            eps_cor: 1e-9,
            f_ec: 1.16,
            n_pulses: 1e10,
            rep_rate: 50e6,
            split: EpsilonSplit::default(),
        }
    }
}

impl SecurityParams {
    pub fn validate(&self) -> Result<()> {
        let open = |x: f64| x > 0.0 && x < 1.0;
        if !open(self.eps_sec) || !open(self.eps_cor) {
            return Err(Error::domain("eps_sec and eps_cor must lie in (0, 1)"));
        }
        if !(self.f_ec >= 1.0 && self.f_ec.is_finite()) {
            return Err(Error::domain("f_ec must be >= 1"));
        }
        if !(self.n_pulses >= 1.0 && self.n_pulses.is_finite()) {
            return Err(Error::domain("n_pulses must be >= 1"));
        }
        if !(self.rep_rate > 0.0 && self.rep_rate.is_finite()) {
            return Err(Error::domain("rep_rate must be positive"));
        }
        let s = &self.split;
        if !(s.hoeffding_terms > 0.0 && s.sampling_terms > 0.0 && s.length_terms >= 0.0 && s.length_divisor > 0.0) {
            return Err(Error::domain("epsilon split terms must be positive"));
        }
        Ok(())
    }

    /// Acquisition time `N / rep_rate`, the denominator of every rate.
    pub fn duration_s(&self) -> f64 {
        self.n_pulses / self.rep_rate
    }
}

/// `h(x) = −x log2 x − (1−x) log2(1−x)`.
pub fn binary_entropy(x: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&x) {
        return Err(Error::domain(format!("entropy argument {x} outside [0, 1]")));
    }
    if x == 0.0 || x == 1.0 {
        return Ok(0.0);
    }
    Ok(-x * x.log2() - (1.0 - x) * (1.0 - x).log2())
}

fn h(x: f64) -> f64 {
    binary_entropy(x.clamp(0.0, 1.0)).expect("clamped")
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecoyBounds {
    pub s_z0_l: f64,
    pub s_z1_l: f64,
    pub phi_z_u: f64,
    /// X-basis single-photon detections (lower bound).
    pub s_x1_l: f64,
    /// X-basis single-photon errors (upper bound).
    pub v_x1_u: f64,
}

struct BasisBounds {
    s0_l: f64,
    s1_l: f64,
    v1_u: f64,
}

/// Photon-number bounds for one basis. `delta_scale = 0` disables the
/// concentration terms, giving the asymptotic estimates.
fn basis_bounds(t: &TallyBlock, b: Basis, src: &SourceConfig, ln_term: f64, delta_scale: f64) -> BasisBounds {
    let (m1, m2) = (src.mu, src.nu);
    let (p1, p2) = (src.p_mu, src.p_nu);
    let tau = |n: i32| {
        let f = (1..=n).map(f64::from).product::<f64>();
        (p1 * (-m1).exp() * m1.powi(n) + p2 * (-m2).exp() * m2.powi(n)) / f
    };
    let (n1, n2) = (t.n_at(b, Intensity::Mu), t.n_at(b, Intensity::Nu));
    let (e1, e2) = (t.m_at(b, Intensity::Mu), t.m_at(b, Intensity::Nu));
    let dn = delta_scale * ((n1 + n2) / 2.0 * ln_term).sqrt();
    let dm = delta_scale * ((e1 + e2) / 2.0 * ln_term).sqrt();
    let w1 = m1.exp() / p1;
    let w2 = m2.exp() / p2;
    let n1_plus = w1 * (n1 + dn);
    let n2_minus = w2 * (n2 - dn);
    let m1_plus = w1 * (e1 + dm);
    let m2_minus = w2 * (e2 - dm);

    let (tau0, tau1) = (tau(0), tau(1));
    let s0_l = (tau0 / (m1 - m2) * (m1 * n2_minus - m2 * n1_plus)).max(0.0);
    let s0_u = 2.0 * (tau0 * w2 * e2 + dn);
    let s1_l = m1 * tau1 / (m2 * (m1 - m2))
        * (n2_minus - (m2 * m2) / (m1 * m1) * n1_plus - (m1 * m1 - m2 * m2) / (m1 * m1) * s0_u / tau0);
    let v1_u = tau1 / (m1 - m2) * (m1_plus - m2_minus);
    BasisBounds {
        s0_l,
        s1_l: s1_l.max(0.0),
        v1_u: v1_u.max(0.0),
    }
}

fn check_inputs(t: &TallyBlock, src: &SourceConfig) -> Result<()> {
    t.validate()?;
    if !(src.mu > src.nu && src.nu > 0.0) {
        return Err(Error::domain("decoy bounds need mu > nu > 0"));
    }
    if !(src.p_mu > 0.0 && src.p_nu > 0.0) {
        return Err(Error::domain("decoy bounds need both intensities in use"));
    }
    for b in Basis::ALL {
        for k in Intensity::ALL {
            if t.n_at(b, k) <= 0.0 {
                return Err(Error::domain(format!(
                    "no detections in basis {b}, intensity {}",
                    k.label()
                )));
            }
        }
    }
    Ok(())
}

fn phase_error(z: &BasisBounds, x: &BasisBounds, gamma_ln: Option<f64>) -> f64 {
    if x.s1_l <= 0.0 {
        return 0.5;
    }
    let ratio = x.v1_u / x.s1_l;
    let gamma = match gamma_ln {
        Some(eps_term) if ratio > 0.0 && ratio < 1.0 && z.s1_l > 0.0 => {
            let (c, d) = (z.s1_l, x.s1_l);
            let spread = (c + d) * (1.0 - ratio) * ratio;
            let arg = (c + d) / (c * d * (1.0 - ratio) * ratio) * eps_term;
            if arg > 1.0 {
                (spread / (c * d * std::f64::consts::LN_2) * arg.log2()).sqrt()
            } else {
                0.0
            }
        }
        _ => 0.0,
    };
    (ratio + gamma).min(0.5)
}

/// Finite-key bounds on vacuum and single-photon Z detections and the Z
/// phase-error rate.
pub fn decoy_bounds(t: &TallyBlock, src: &SourceConfig, p: &SecurityParams) -> Result<DecoyBounds> {
    p.validate()?;
    check_inputs(t, src)?;
    let ln_term = (p.split.hoeffding_terms / p.eps_sec).ln();
    let z = basis_bounds(t, Basis::Z, src, ln_term, 1.0);
    let x = basis_bounds(t, Basis::X, src, ln_term, 1.0);
    let eps_term = (p.split.sampling_terms / p.eps_sec).powi(2);
    Ok(DecoyBounds {
        s_z0_l: z.s0_l,
        s_z1_l: z.s1_l,
        phi_z_u: phase_error(&z, &x, Some(eps_term)),
        s_x1_l: x.s1_l,
        v_x1_u: x.v1_u,
    })
}

/// The same estimates with every statistical fluctuation term removed.
pub fn asymptotic_bounds(t: &TallyBlock, src: &SourceConfig) -> Result<DecoyBounds> {
    check_inputs(t, src)?;
    let z = basis_bounds(t, Basis::Z, src, 0.0, 0.0);
    let x = basis_bounds(t, Basis::X, src, 0.0, 0.0);
    Ok(DecoyBounds {
        s_z0_l: z.s0_l,
        s_z1_l: z.s1_l,
        phi_z_u: phase_error(&z, &x, None),
        s_x1_l: x.s1_l,
        v_x1_u: x.v1_u,
    })
}

/// Bits disclosed during error correction, `f_ec · n_Z · h(E_Z)`.
pub fn lambda_ec(t: &TallyBlock, p: &SecurityParams) -> Result<f64> {
    let n = t.n_basis(Basis::Z);
    if !(n > 0.0) {
        return Err(Error::domain("no Z-basis detections"));
    }
    Ok(lambda_ec_from(n, t.m_basis(Basis::Z) / n, p.f_ec))
}

pub fn lambda_ec_from(n_z: f64, qber_z: f64, f_ec: f64) -> f64 {
    f_ec * n_z * h(qber_z)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KeyRateReport {
    pub s_z0_l: f64,
    pub s_z1_l: f64,
    pub phi_z_u: f64,
    pub lambda_ec: f64,
    /// Secret key length in bits.
    pub l: f64,
    /// Bits per second.
    pub skr: f64,
    /// True when the length was clamped at zero.
    pub floored: bool,
}

/// The inputs of the key-length formula.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LengthInputs {
    pub s_z0_l: f64,
    pub s_z1_l: f64,
    pub phi_z_u: f64,
}

impl From<DecoyBounds> for LengthInputs {
    fn from(b: DecoyBounds) -> Self {
        Self {
            s_z0_l: b.s_z0_l,
            s_z1_l: b.s_z1_l,
            phi_z_u: b.phi_z_u,
        }
    }
}

/// `l = ⌊s0 + s1(1 − h(φ)) − λ_EC − 6 log2(19/ε_sec) − log2(2/ε_cor)⌋₊`.
pub fn secret_key_length(b: &LengthInputs, lam: f64, p: &SecurityParams) -> Result<KeyRateReport> {
    p.validate()?;
    if !(b.s_z0_l >= 0.0 && b.s_z1_l >= 0.0 && lam >= 0.0) || !(0.0..=1.0).contains(&b.phi_z_u) {
        return Err(Error::domain("key length inputs out of range"));
    }
    let raw = b.s_z0_l + b.s_z1_l * (1.0 - h(b.phi_z_u))
        - lam
        - p.split.length_terms * (p.split.length_divisor / p.eps_sec).log2()
        - (2.0 / p.eps_cor).log2();
    let floored = !(raw > 0.0);
    let l = if floored { 0.0 } else { raw.floor() };
    Ok(KeyRateReport {
        s_z0_l: b.s_z0_l,
        s_z1_l: b.s_z1_l,
        phi_z_u: b.phi_z_u,
        lambda_ec: lam,
        l,
        skr: l * p.rep_rate / p.n_pulses,
        floored,
    })
}

/// Full analysis of a tally: bounds, error-correction leakage, key length.
pub fn analyze(t: &TallyBlock, src: &SourceConfig, p: &SecurityParams) -> Result<KeyRateReport> {
    let b = decoy_bounds(t, src, p)?;
    let lam = lambda_ec(t, p)?;
    secret_key_length(&b.into(), lam, p)
}
