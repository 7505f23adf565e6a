//! Complex 2×2 algebra for path-encoded polarization qubits.
//!
//! The polarization splitter-rotator maps `α|H⟩ + β|V⟩` onto the two on-chip
//! waveguides as the amplitude pair `(α, β)`; that map is the identity here,
//! so a [`PathState`] doubles as a Jones vector. Global phases are never
//! normalized away: every downstream quantity is a probability.

use std::f64::consts::{FRAC_1_SQRT_2, PI};
use std::fmt;
use std::ops::Mul;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Tolerance used for the algebraic invariants (norm, unitarity, hermiticity).
pub const ALGEBRA_TOL: f64 = 1e-12;

const ZERO: Complex64 = Complex64::new(0.0, 0.0);
const ONE: Complex64 = Complex64::new(1.0, 0.0);
const I: Complex64 = Complex64::new(0.0, 1.0);

/// The four BB84 states, also used to name the four decoder output ports.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Bb84State {
    H,
    V,
    D,
    A,
}

impl Bb84State {
    pub const ALL: [Bb84State; 4] = [Bb84State::H, Bb84State::V, Bb84State::D, Bb84State::A];

    pub fn basis(self) -> Basis {
        match self {
            Bb84State::H | Bb84State::V => Basis::Z,
            Bb84State::D | Bb84State::A => Basis::X,
        }
    }

    /// The orthogonal partner in the same basis.
    pub fn partner(self) -> Bb84State {
        match self {
            Bb84State::H => Bb84State::V,
            Bb84State::V => Bb84State::H,
            Bb84State::D => Bb84State::A,
            Bb84State::A => Bb84State::D,
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn label(self) -> &'static str {
        match self {
            Bb84State::H => "H",
            Bb84State::V => "V",
            Bb84State::D => "D",
            Bb84State::A => "A",
        }
    }
}

impl fmt::Display for Bb84State {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Basis {
    Z,
    X,
}

impl Basis {
    pub const ALL: [Basis; 2] = [Basis::Z, Basis::X];

    pub fn index(self) -> usize {
        self as usize
    }

    /// The two states of this basis, "bit 0" first.
    pub fn states(self) -> [Bb84State; 2] {
        match self {
            Basis::Z => [Bb84State::H, Bb84State::V],
            Basis::X => [Bb84State::D, Bb84State::A],
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Basis::Z => "Z",
            Basis::X => "X",
        }
    }
}

impl fmt::Display for Basis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// A unit-norm amplitude pair `(α, β)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawState")]
pub struct PathState {
    alpha: Complex64,
    beta: Complex64,
}

#[derive(Deserialize)]
struct RawState {
    alpha: Complex64,
    beta: Complex64,
}

impl TryFrom<RawState> for PathState {
    type Error = Error;

    fn try_from(r: RawState) -> Result<Self> {
        PathState::new(r.alpha, r.beta)
    }
}

impl PathState {
    /// Normalizes `(alpha, beta)`; the zero vector is rejected.
    pub fn new(alpha: Complex64, beta: Complex64) -> Result<Self> {
        let norm = (alpha.norm_sqr() + beta.norm_sqr()).sqrt();
        if !norm.is_finite() {
            return Err(Error::domain("path state amplitudes must be finite"));
        }
        if norm == 0.0 {
            return Err(Error::domain("path state cannot be the zero vector"));
        }
        Ok(Self {
            alpha: alpha / norm,
            beta: beta / norm,
        })
    }

    /// Accepts amplitudes that are already normalized to [`ALGEBRA_TOL`].
    pub fn from_normalized(alpha: Complex64, beta: Complex64) -> Result<Self> {
        let n = alpha.norm_sqr() + beta.norm_sqr();
        if !n.is_finite() || (n - 1.0).abs() > ALGEBRA_TOL {
            return Err(Error::domain(format!("path state is not normalized (|α|²+|β|² = {n})")));
        }
        Ok(Self { alpha, beta })
    }

    pub fn alpha(&self) -> Complex64 {
        self.alpha
    }

    pub fn beta(&self) -> Complex64 {
        self.beta
    }

    pub fn amplitudes(&self) -> [Complex64; 2] {
        [self.alpha, self.beta]
    }

    pub fn norm_sqr(&self) -> f64 {
        self.alpha.norm_sqr() + self.beta.norm_sqr()
    }

    /// `⟨self|other⟩`.
    pub fn inner(&self, other: &PathState) -> Complex64 {
        self.alpha.conj() * other.alpha + self.beta.conj() * other.beta
    }

    /// Applies a unitary operator. Non-unitary operators are rejected because
    /// they would break the unit-norm invariant.
    pub fn evolve(&self, op: &Operator2) -> Result<PathState> {
        if !op.is_unitary(ALGEBRA_TOL) {
            return Err(Error::domain("only unitary operators can evolve a path state"));
        }
        let [a, b] = op.apply(self.amplitudes());
        Ok(PathState { alpha: a, beta: b })
    }

    /// The ideal (undrifted) BB84 states.
    pub fn bb84(state: Bb84State) -> PathState {
        let s = Complex64::new(FRAC_1_SQRT_2, 0.0);
        let (alpha, beta) = match state {
            Bb84State::H => (ONE, ZERO),
            Bb84State::V => (ZERO, ONE),
            Bb84State::D => (s, s),
            Bb84State::A => (s, -s),
        };
        PathState { alpha, beta }
    }
}

/// Normalizing constructor.
pub fn make_state(alpha: Complex64, beta: Complex64) -> Result<PathState> {
    PathState::new(alpha, beta)
}

/// What a constructor guarantees about an [`Operator2`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum OperatorKind {
    General,
    Unitary,
    /// Hermitian positive semi-definite.
    PovmElement,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Operator2 {
    m: [[Complex64; 2]; 2],
    kind: OperatorKind,
}

impl Operator2 {
    pub fn new(m: [[Complex64; 2]; 2]) -> Self {
        Self {
            m,
            kind: OperatorKind::General,
        }
    }

    pub(crate) fn tagged(m: [[Complex64; 2]; 2], kind: OperatorKind) -> Self {
        let op = Self { m, kind };
        debug_assert!(match kind {
            OperatorKind::General => true,
            OperatorKind::Unitary => op.is_unitary(1e-9),
            OperatorKind::PovmElement => op.is_psd(1e-9),
        });
        op
    }

    pub fn identity() -> Self {
        Self {
            m: [[ONE, ZERO], [ZERO, ONE]],
            kind: OperatorKind::Unitary,
        }
    }

    pub fn diag(a: Complex64, b: Complex64) -> Self {
        Self::new([[a, ZERO], [ZERO, b]])
    }

    pub fn scaled_identity(s: f64) -> Self {
        let c = Complex64::new(s, 0.0);
        Self::new([[c, ZERO], [ZERO, c]])
    }

    pub fn kind(&self) -> OperatorKind {
        self.kind
    }

    pub fn entries(&self) -> [[Complex64; 2]; 2] {
        self.m
    }

    pub fn get(&self, row: usize, col: usize) -> Complex64 {
        self.m[row][col]
    }

    pub fn row(&self, row: usize) -> [Complex64; 2] {
        self.m[row]
    }

    pub fn apply(&self, v: [Complex64; 2]) -> [Complex64; 2] {
        [
            self.m[0][0] * v[0] + self.m[0][1] * v[1],
            self.m[1][0] * v[0] + self.m[1][1] * v[1],
        ]
    }

    pub fn adjoint(&self) -> Self {
        let m = self.m;
        Self {
            m: [[m[0][0].conj(), m[1][0].conj()], [m[0][1].conj(), m[1][1].conj()]],
            kind: self.kind,
        }
    }

    pub fn scale(&self, s: f64) -> Self {
        let mut m = self.m;
        m.iter_mut().flatten().for_each(|z| *z *= s);
        Self::new(m)
    }

    pub fn trace(&self) -> Complex64 {
        self.m[0][0] + self.m[1][1]
    }

    /// Largest entrywise modulus of `self - other`.
    pub fn max_abs_diff(&self, other: &Operator2) -> f64 {
        self.m
            .iter()
            .flatten()
            .zip(other.m.iter().flatten())
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max)
    }

    pub fn is_unitary(&self, tol: f64) -> bool {
        (self.adjoint() * *self).max_abs_diff(&Operator2::identity()) <= tol
    }

    pub fn is_hermitian(&self, tol: f64) -> bool {
        self.max_abs_diff(&self.adjoint()) <= tol
    }

    /// Eigenvalues of the Hermitian part, ascending.
    pub fn hermitian_eigenvalues(&self) -> [f64; 2] {
        let a = self.m[0][0].re;
        let d = self.m[1][1].re;
        let b = 0.5 * (self.m[0][1] + self.m[1][0].conj());
        let mean = 0.5 * (a + d);
        let r = (0.25 * (a - d) * (a - d) + b.norm_sqr()).sqrt();
        [mean - r, mean + r]
    }

    pub fn is_psd(&self, tol: f64) -> bool {
        self.is_hermitian(tol) && self.hermitian_eigenvalues()[0] >= -tol
    }
}

impl Mul for Operator2 {
    type Output = Operator2;

    fn mul(self, rhs: Operator2) -> Operator2 {
        let (a, b) = (self.m, rhs.m);
        let mut m = [[ZERO; 2]; 2];
        for (r, row) in m.iter_mut().enumerate() {
            for (c, z) in row.iter_mut().enumerate() {
                *z = a[r][0] * b[0][c] + a[r][1] * b[1][c];
            }
        }
        let kind = if self.kind == OperatorKind::Unitary && rhs.kind == OperatorKind::Unitary {
            OperatorKind::Unitary
        } else {
            OperatorKind::General
        };
        Operator2 { m, kind }
    }
}

/// Thermal phase shifter on the upper arm: `diag(e^{iθ}, 1)`.
pub fn phase_shifter(theta: f64) -> Operator2 {
    Operator2::tagged(
        [[Complex64::from_polar(1.0, theta), ZERO], [ZERO, ONE]],
        OperatorKind::Unitary,
    )
}

/// Balanced 2×2 multimode-interference coupler: `(√2/2)[[1, i], [i, 1]]`.
pub fn mmi_2x2() -> Operator2 {
    let s = FRAC_1_SQRT_2;
    Operator2::tagged([[ONE * s, I * s], [I * s, ONE * s]], OperatorKind::Unitary)
}

/// Amplitude factor of the 1×2 splitter feeding each polarization controller.
pub fn splitter_1x2() -> Operator2 {
    Operator2::scaled_identity(FRAC_1_SQRT_2)
}

/// Fiber drift as a unitary on the path amplitudes.
///
/// `varphi` rotates the polarization basis; `phi` is the retardation between
/// the H and V components. Canonical ranges are `varphi ∈ [0, π)` and
/// `phi ∈ [−π, π)`; canonicalization only changes the drifted states by a
/// global sign.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawDrift")]
pub struct DriftParams {
    varphi: f64,
    phi: f64,
}

#[derive(Deserialize)]
struct RawDrift {
    varphi: f64,
    phi: f64,
}

impl TryFrom<RawDrift> for DriftParams {
    type Error = Error;

    fn try_from(r: RawDrift) -> Result<Self> {
        DriftParams::new(r.varphi, r.phi)
    }
}

impl Default for DriftParams {
    fn default() -> Self {
        Self::none()
    }
}

impl DriftParams {
    pub fn new(varphi: f64, phi: f64) -> Result<Self> {
        if !varphi.is_finite() || !phi.is_finite() {
            return Err(Error::domain("drift angles must be finite"));
        }
        Ok(Self {
            varphi: canonical(varphi, 0.0, PI),
            phi: canonical(phi, -PI, 2.0 * PI),
        })
    }

    pub fn none() -> Self {
        Self { varphi: 0.0, phi: 0.0 }
    }

    pub fn varphi(&self) -> f64 {
        self.varphi
    }

    pub fn phi(&self) -> f64 {
        self.phi
    }

    /// `[[cos φ, −sin φ e^{−iϕ}], [sin φ e^{iϕ}, cos φ]]`; its columns are the
    /// drifted |H⟩ and |V⟩.
    pub fn operator(&self) -> Operator2 {
        let (s, c) = self.varphi.sin_cos();
        let e = Complex64::from_polar(1.0, self.phi);
        Operator2::tagged([[ONE * c, -(e.conj() * s)], [e * s, ONE * c]], OperatorKind::Unitary)
    }
}

fn canonical(x: f64, lo: f64, width: f64) -> f64 {
    let y = (x - lo).rem_euclid(width);
    // rem_euclid can round up to exactly `width` for tiny negative inputs.
    if y >= width {
        lo
    } else {
        lo + y
    }
}

/// The BB84 state `state` after the drift `d`.
pub fn drifted_bb84(state: Bb84State, d: &DriftParams) -> PathState {
    let [a, b] = d.operator().apply(PathState::bb84(state).amplitudes());
    PathState { alpha: a, beta: b }
}
