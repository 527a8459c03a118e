//! Gaussian Wigner-kernel filters for a monitored harmonic oscillator.
//!
//! The conditioned Wigner function is `W_t(q) ∝ ∫ W_0(q0) K_t(q, q0) dq0` with
//! a Gaussian kernel whose shape parameters evolve deterministically and
//! whose offsets are driven by the measurement record. Two families are
//! covered: fluorescence (homodyne of `a` and `i·a`, thermal bath) and
//! simultaneous weak measurement of `X` and `P`.
//!
//! Conventions: `X = (a+a†)/2`, `P = (a−a†)/(2i)`, vacuum variance 1/4.
//! The fluorescence records are `dy1 = 2√η⟨X⟩dt + dw1` (channel `a`) and
//! `dy2 = −2√η⟨P⟩dt + dw2` (channel `i·a`).

use std::f64::consts::PI;

use nalgebra::{Matrix2, Vector2};
use num_complex::Complex64;

use crate::error::{invalid, Error, Result};
use crate::ops::{self, c, r, Operator};
use crate::sme::{Drive, MeasurementChannel, ScenarioModel, Signal};

/// Closed-form solution of the scalar Riccati block
/// `ṡ = −2m s² − γ s + c`, `ȧ = −(γ/2 + 2m s) a`, `ż = −2m a²`,
/// from `(s, a, z)(0) = (0, 1, 0)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RiccatiBlock {
    pub m: f64,
    pub gamma: f64,
    pub c: f64,
}

impl RiccatiBlock {
    pub fn kappa(&self) -> f64 {
        (0.25 * self.gamma * self.gamma + 2.0 * self.m * self.c).sqrt()
    }

    fn denom(&self, t: f64) -> f64 {
        let k = self.kappa();
        (k + 0.5 * self.gamma) + (k - 0.5 * self.gamma) * (-2.0 * k * t).exp()
    }

    pub fn s(&self, t: f64) -> f64 {
        let k = self.kappa();
        if k == 0.0 {
            return self.c * t;
        }
        -self.c * (-2.0 * k * t).exp_m1() / self.denom(t)
    }

    pub fn a(&self, t: f64) -> f64 {
        let k = self.kappa();
        if k == 0.0 {
            return 1.0;
        }
        2.0 * k * (-k * t).exp() / self.denom(t)
    }

    pub fn z(&self, t: f64) -> f64 {
        let k = self.kappa();
        if k == 0.0 {
            return -2.0 * self.m * t;
        }
        2.0 * self.m * (-2.0 * k * t).exp_m1() / self.denom(t)
    }

    /// Right-hand sides `(ṡ, ȧ, ż)` at the given values.
    pub fn rhs(&self, s: f64, a: f64) -> (f64, f64, f64) {
        (-2.0 * self.m * s * s - self.gamma * s + self.c, -(0.5 * self.gamma + 2.0 * self.m * s) * a, -2.0 * self.m * a * a)
    }

    /// `lim_{t→∞} s`.
    pub fn s_limit(&self) -> f64 {
        let k = self.kappa();
        if k == 0.0 {
            return f64::INFINITY;
        }
        self.c / (k + 0.5 * self.gamma)
    }
}

// ------------------------------------------------------------ fluorescence

/// Fluorescence model: channels `a` and `i·a` with efficiency η (unit rates),
/// thermal occupation `n_th`, drive Hamiltonian `2u X + 2v P`.
#[derive(Clone, Debug)]
pub struct FluorescenceParams {
    pub eta: f64,
    pub n_th: f64,
    pub u: Signal,
    pub v: Signal,
}

impl FluorescenceParams {
    pub fn new(eta: f64, n_th: f64) -> Self {
        Self { eta, n_th, u: Signal::Constant(0.0), v: Signal::Constant(0.0) }
    }

    pub fn with_drives(mut self, u: Signal, v: Signal) -> Self {
        self.u = u;
        self.v = v;
        self
    }

    fn validate(&self) -> Result<()> {
        if !(self.eta > 0.0 && self.eta <= 1.0) {
            return invalid(format!("fluorescence filter needs eta in (0, 1], got {}", self.eta));
        }
        if !(self.n_th >= 0.0 && self.n_th.is_finite()) {
            return invalid("n_th must be finite and >= 0");
        }
        Ok(())
    }

    /// Riccati block of the kernel width: `m = η`, `γ = 2(1−η)`, `c = 1 + 2n_th − η/2`.
    pub fn block(&self) -> RiccatiBlock {
        block_unchecked(self.eta, self.n_th)
    }
}

fn block_unchecked(eta: f64, n_th: f64) -> RiccatiBlock {
    RiccatiBlock { m: eta, gamma: 2.0 * (1.0 - eta), c: 1.0 + 2.0 * n_th - 0.5 * eta }
}

/// `(a_t, s_t, d_t)` for the fluorescence kernel.
pub fn fluorescence_params(eta: f64, n_th: f64, t: f64) -> Result<(f64, f64, f64)> {
    FluorescenceParams::new(eta, n_th).validate()?;
    if !(t >= 0.0) || !t.is_finite() {
        return invalid("t must be finite and >= 0");
    }
    let b = block_unchecked(eta, n_th);
    Ok((b.a(t), b.s(t), b.z(t)))
}

/// The same closed forms written as in the original statement, with
/// `κ = √(1 + 4η n_th)`; kept as an independent cross-check.
pub fn fluorescence_params_reference(eta: f64, n_th: f64, t: f64) -> (f64, f64, f64) {
    let k = (1.0 + 4.0 * eta * n_th).sqrt();
    let e2 = (-2.0 * k * t).exp();
    let den = (k + 1.0 - eta) + (k - 1.0 + eta) * e2;
    let a = 2.0 * k * (-k * t).exp() / den;
    let q = (k - 1.0 + eta) / (k + 1.0 - eta);
    let s = -(1.0 - eta) / (2.0 * eta) + k / (2.0 * eta) * (1.0 - q * e2) / (1.0 + q * e2);
    let d = 2.0 * eta * (e2 - 1.0) / den;
    (a, s, d)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FluorescenceKernelState {
    pub t: f64,
    pub a: f64,
    pub s: f64,
    pub d: f64,
    pub xi: f64,
    pub theta: f64,
    pub pi: f64,
    pub phi: f64,
}

impl FluorescenceKernelState {
    pub fn initial() -> Self {
        Self { t: 0.0, a: 1.0, s: 0.0, d: 0.0, xi: 0.0, theta: 0.0, pi: 0.0, phi: 0.0 }
    }

    /// Deterministically evolving combinations `z = ξ + e^{−t}θ/4`, `h = π + e^{−t}φ/4`
    /// (record-independent when `n_th = 0`).
    pub fn reduced(&self) -> (f64, f64) {
        let e = (-self.t).exp() / 4.0;
        (self.xi + e * self.theta, self.pi + e * self.phi)
    }

    pub fn view(&self) -> KernelView {
        KernelView {
            b: Matrix2::identity() * self.a,
            offset: Vector2::new(self.xi, self.pi),
            cov: Matrix2::identity() * (0.5 * self.s),
            z: Matrix2::identity() * self.d,
            lin: Vector2::new(self.theta, self.phi),
        }
    }
}

/// One Euler–Maruyama step of the record-driven offsets; the shape
/// parameters are refreshed from the closed forms. Drives are sampled at the
/// step midpoint, as in the state integrator.
pub fn fluorescence_step(
    p: &FluorescenceParams,
    st: &FluorescenceKernelState,
    dy1: f64,
    dy2: f64,
    dt: f64,
) -> Result<FluorescenceKernelState> {
    p.validate()?;
    if !(dt > 0.0) {
        return invalid("dt must be > 0");
    }
    let eta = p.eta;
    let se = eta.sqrt();
    let tm = st.t + 0.5 * dt;
    let (u, v) = (p.u.at(tm), p.v.at(tm));
    let g = st.s - 0.5;
    let xi = st.xi + se * g * dy1 + (v - st.xi - 2.0 * eta * g * st.xi) * dt;
    let theta = st.theta + 2.0 * se * st.a * dy1 - 4.0 * eta * st.a * st.xi * dt;
    let pi = st.pi - se * g * dy2 + (-u - st.pi - 2.0 * eta * g * st.pi) * dt;
    let phi = st.phi - 2.0 * se * st.a * dy2 - 4.0 * eta * st.a * st.pi * dt;
    let t = st.t + dt;
    let b = p.block();
    let next = FluorescenceKernelState { t, a: b.a(t), s: b.s(t), d: b.z(t), xi, theta, pi, phi };
    if [xi, theta, pi, phi].iter().any(|x| !x.is_finite()) {
        return Err(Error::IntegrationFailure { step: 0, t, msg: "non-finite fluorescence kernel offsets".into() });
    }
    Ok(next)
}

/// Run the fluorescence filter over a step-major record `dy` (2 channels,
/// optionally followed by further channels that are ignored).
pub fn fluorescence_filter(p: &FluorescenceParams, dy: &[f64], n_channels: usize, dt: f64) -> Result<Vec<FluorescenceKernelState>> {
    if n_channels < 2 || dy.len() % n_channels != 0 {
        return invalid("record must hold at least two channels per step");
    }
    let mut out = Vec::with_capacity(dy.len() / n_channels + 1);
    let mut st = FluorescenceKernelState::initial();
    out.push(st);
    for (k, row) in dy.chunks(n_channels).enumerate() {
        st = fluorescence_step(p, &st, row[0], row[1], dt).map_err(|e| match e {
            Error::IntegrationFailure { t, msg, .. } => Error::IntegrationFailure { step: k, t, msg },
            e => e,
        })?;
        out.push(st);
    }
    Ok(out)
}

// ------------------------------------------------------------ X/P measurement

/// Simultaneous `√Γx X` (η_x) and `√Γp P` (η_p) measurement with loss `Γℓ`
/// to a bath with `n_th`, detuning Δ (rotating frame) and drives `2uX + 2vP`.
#[derive(Clone, Debug)]
pub struct XpParams {
    pub gamma_x: f64,
    pub gamma_p: f64,
    pub gamma_l: f64,
    pub eta_x: f64,
    pub eta_p: f64,
    pub delta: f64,
    pub n_th: f64,
    pub u: Signal,
    pub v: Signal,
}

impl XpParams {
    pub fn new(gamma_x: f64, gamma_p: f64, gamma_l: f64, eta_x: f64, eta_p: f64, n_th: f64) -> Self {
        Self { gamma_x, gamma_p, gamma_l, eta_x, eta_p, delta: 0.0, n_th, u: Signal::Constant(0.0), v: Signal::Constant(0.0) }
    }

    pub fn with_delta(mut self, delta: f64) -> Self {
        self.delta = delta;
        self
    }

    pub fn with_drives(mut self, u: Signal, v: Signal) -> Self {
        self.u = u;
        self.v = v;
        self
    }

    fn validate(&self) -> Result<()> {
        for (name, x) in [("gamma_x", self.gamma_x), ("gamma_p", self.gamma_p), ("gamma_l", self.gamma_l), ("n_th", self.n_th)] {
            if !(x >= 0.0 && x.is_finite()) {
                return invalid(format!("{name} must be finite and >= 0"));
            }
        }
        for (name, e) in [("eta_x", self.eta_x), ("eta_p", self.eta_p)] {
            if !(0.0..=1.0).contains(&e) {
                return invalid(format!("{name} outside [0, 1]"));
            }
        }
        if !self.delta.is_finite() {
            return invalid("delta must be finite");
        }
        Ok(())
    }

    fn rotation(&self, t: f64) -> Matrix2<f64> {
        let (s, c) = (self.delta * t).sin_cos();
        Matrix2::new(c, -s, s, c)
    }

    /// `M_t = R diag(η_xΓ_x, η_pΓ_p) Rᵀ`.
    pub fn m_matrix(&self, t: f64) -> Matrix2<f64> {
        let r = self.rotation(t);
        r * Matrix2::new(self.eta_x * self.gamma_x, 0.0, 0.0, self.eta_p * self.gamma_p) * r.transpose()
    }

    /// `N_t = R diag(Γ_p, Γ_x) Rᵀ`.
    pub fn n_matrix(&self, t: f64) -> Matrix2<f64> {
        let r = self.rotation(t);
        r * Matrix2::new(self.gamma_p, 0.0, 0.0, self.gamma_x) * r.transpose()
    }

    /// Riccati blocks of the decoupled (Δ = 0) case, for x and p.
    pub fn blocks(&self) -> (RiccatiBlock, RiccatiBlock) {
        let bath = self.gamma_l * (1.0 + 2.0 * self.n_th);
        (
            RiccatiBlock { m: self.eta_x * self.gamma_x, gamma: self.gamma_l, c: 0.5 * (bath + self.gamma_p) },
            RiccatiBlock { m: self.eta_p * self.gamma_p, gamma: self.gamma_l, c: 0.5 * (bath + self.gamma_x) },
        )
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct XpKernelState {
    pub t: f64,
    pub s: Matrix2<f64>,
    pub z: Matrix2<f64>,
    pub a: Vector2<f64>,
    pub r: Vector2<f64>,
    pub theta: Vector2<f64>,
    pub lambda: Vector2<f64>,
}

impl XpKernelState {
    pub fn initial() -> Self {
        Self {
            t: 0.0,
            s: Matrix2::zeros(),
            z: Matrix2::zeros(),
            a: Vector2::new(1.0, 0.0),
            r: Vector2::new(0.0, 1.0),
            theta: Vector2::zeros(),
            lambda: Vector2::zeros(),
        }
    }

    pub fn b(&self) -> Matrix2<f64> {
        Matrix2::from_columns(&[self.a, self.r])
    }

    pub fn view(&self) -> KernelView {
        let b = self.b();
        KernelView { b, offset: self.theta, cov: self.s * 0.5, z: self.z, lin: b.transpose() * self.lambda }
    }
}

type XpDet = (Matrix2<f64>, Matrix2<f64>, Vector2<f64>, Vector2<f64>);

fn xp_det_rhs(p: &XpParams, t: f64, (s, _z, a, r): &XpDet) -> XpDet {
    let m = p.m_matrix(t);
    let n = p.n_matrix(t);
    let bath = 0.5 * p.gamma_l * (1.0 + 2.0 * p.n_th);
    let ds = -p.gamma_l * s + Matrix2::identity() * bath - 2.0 * s * m * s + n * 0.5;
    let b = Matrix2::from_columns(&[*a, *r]);
    let dz = -2.0 * b.transpose() * m * b;
    let da = -0.5 * p.gamma_l * a - 2.0 * s * m * a;
    let dr = -0.5 * p.gamma_l * r - 2.0 * s * m * r;
    (ds, dz, da, dr)
}

fn xp_det_rk4(p: &XpParams, t: f64, y: &XpDet, dt: f64) -> XpDet {
    let add = |y: &XpDet, k: &XpDet, h: f64| -> XpDet { (y.0 + k.0 * h, y.1 + k.1 * h, y.2 + k.2 * h, y.3 + k.3 * h) };
    let k1 = xp_det_rhs(p, t, y);
    let k2 = xp_det_rhs(p, t + 0.5 * dt, &add(y, &k1, 0.5 * dt));
    let k3 = xp_det_rhs(p, t + 0.5 * dt, &add(y, &k2, 0.5 * dt));
    let k4 = xp_det_rhs(p, t + dt, &add(y, &k3, dt));
    let w = dt / 6.0;
    let s = y.0 + (k1.0 + k2.0 * 2.0 + k3.0 * 2.0 + k4.0) * w;
    let z = y.1 + (k1.1 + k2.1 * 2.0 + k3.1 * 2.0 + k4.1) * w;
    // Symmetrize to keep S, Z exactly symmetric under round-off.
    (
        (s + s.transpose()) * 0.5,
        (z + z.transpose()) * 0.5,
        y.2 + (k1.2 + k2.2 * 2.0 + k3.2 * 2.0 + k4.2) * w,
        y.3 + (k1.3 + k2.3 * 2.0 + k3.3 * 2.0 + k4.3) * w,
    )
}

/// RK4 on the deterministic block, Euler–Maruyama on `(Θ, Λ)`.
pub fn xp_step(p: &XpParams, st: &XpKernelState, dy1: f64, dy2: f64, dt: f64) -> Result<XpKernelState> {
    p.validate()?;
    if !(dt > 0.0) {
        return invalid("dt must be > 0");
    }
    let t = st.t;
    let m = p.m_matrix(t);
    let rot = p.rotation(t);
    let innov = rot * Vector2::new((p.eta_x * p.gamma_x).sqrt() * dy1, (p.eta_p * p.gamma_p).sqrt() * dy2);
    let tm = t + 0.5 * dt;
    let drive = Vector2::new(p.v.at(tm), -p.u.at(tm));
    let theta = st.theta + (-0.5 * p.gamma_l * st.theta + drive - 2.0 * st.s * m * st.theta) * dt + st.s * innov;
    let lambda = st.lambda + (0.5 * p.gamma_l * st.lambda + 2.0 * m * st.s * st.lambda - 4.0 * m * st.theta) * dt + innov * 2.0;
    let (s, z, a, r) = xp_det_rk4(p, t, &(st.s, st.z, st.a, st.r), dt);
    let next = XpKernelState { t: t + dt, s, z, a, r, theta, lambda };
    let finite = next.s.iter().chain(next.z.iter()).chain(next.a.iter()).chain(next.r.iter()).chain(next.theta.iter()).chain(next.lambda.iter()).all(|x| x.is_finite());
    if !finite {
        return Err(Error::IntegrationFailure { step: 0, t: t + dt, msg: "non-finite X/P kernel state".into() });
    }
    Ok(next)
}

pub fn xp_filter(p: &XpParams, dy: &[f64], n_channels: usize, dt: f64) -> Result<Vec<XpKernelState>> {
    if n_channels < 2 || dy.len() % n_channels != 0 {
        return invalid("record must hold at least two channels per step");
    }
    let mut st = XpKernelState::initial();
    let mut out = vec![st];
    for (k, row) in dy.chunks(n_channels).enumerate() {
        st = xp_step(p, &st, row[0], row[1], dt).map_err(|e| match e {
            Error::IntegrationFailure { t, msg, .. } => Error::IntegrationFailure { step: k, t, msg },
            e => e,
        })?;
        out.push(st);
    }
    Ok(out)
}

/// Deterministic X/P parameters when `Δ = 0` or the two channels are identical.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct XpClosedForm {
    pub s: Matrix2<f64>,
    pub z: Matrix2<f64>,
    pub a: Vector2<f64>,
    pub r: Vector2<f64>,
}

pub fn cor71(p: &XpParams, t: f64) -> Result<XpClosedForm> {
    p.validate()?;
    let symmetric = p.gamma_x == p.gamma_p && p.eta_x == p.eta_p;
    if p.delta != 0.0 && !symmetric {
        return invalid("closed form requires delta = 0 or identical X and P channels");
    }
    let (bx, bp) = p.blocks();
    Ok(XpClosedForm {
        s: Matrix2::new(bx.s(t), 0.0, 0.0, bp.s(t)),
        z: Matrix2::new(bx.z(t), 0.0, 0.0, bp.z(t)),
        a: Vector2::new(bx.a(t), 0.0),
        r: Vector2::new(0.0, bp.a(t)),
    })
}

/// P-quadrature parameters when P carries no information (`η_pΓ_p = 0`, Δ = 0).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Cor72 {
    pub s2: f64,
    pub r2: f64,
    pub z2: f64,
    pub theta2: f64,
    pub lambda2: f64,
}

pub fn cor72(p: &XpParams, t: f64) -> Result<Cor72> {
    p.validate()?;
    if p.eta_p * p.gamma_p != 0.0 || p.delta != 0.0 {
        return invalid("reduction requires eta_p * gamma_p = 0 and delta = 0");
    }
    let gl = p.gamma_l;
    let c2 = p.gamma_x + gl * (1.0 + 2.0 * p.n_th);
    let s2 = if gl > 0.0 { c2 / (2.0 * gl) * -(-gl * t).exp_m1() } else { 0.5 * c2 * t };
    let theta2 = match &p.u {
        Signal::Constant(u) => {
            if gl > 0.0 {
                -u * -(-0.5 * gl * t).exp_m1() / (0.5 * gl)
            } else {
                -u * t
            }
        }
        Signal::Function(f) => {
            // Composite Simpson rule.
            let n = 2000;
            let h = t / n as f64;
            let g = |s: f64| -f(s) * (-(t - s) * 0.5 * gl).exp();
            let mut acc = g(0.0) + g(t);
            for k in 1..n {
                acc += g(k as f64 * h) * if k % 2 == 1 { 4.0 } else { 2.0 };
            }
            acc * h / 3.0
        }
    };
    Ok(Cor72 { s2, r2: (-0.5 * gl * t).exp(), z2: 0.0, theta2, lambda2: 0.0 })
}

// ------------------------------------------------------------ initial Wigner functions

#[derive(Clone, Debug)]
pub enum InitialWigner {
    Coherent(Complex64),
    Thermal(f64),
    /// Even cat `|α⟩ + |−α⟩`.
    Cat(Complex64),
    Fock(usize),
    /// Tabulated values on a uniform grid (row index = x, column index = p).
    Grid { xs: Vec<f64>, ps: Vec<f64>, values: Vec<Vec<f64>> },
}

fn laguerre(n: usize, x: f64) -> f64 {
    let (mut l0, mut l1) = (1.0, 1.0 - x);
    if n == 0 {
        return l0;
    }
    for k in 1..n {
        let kf = k as f64;
        let l2 = ((2.0 * kf + 1.0 - x) * l1 - kf * l0) / (kf + 1.0);
        l0 = l1;
        l1 = l2;
    }
    l1
}

fn gauss2(x: f64, p: f64, x0: f64, p0: f64, var: f64) -> f64 {
    // Isotropic Gaussian with per-axis variance `var`, unit mass.
    (-((x - x0).powi(2) + (p - p0).powi(2)) / (2.0 * var)).exp() / (2.0 * PI * var)
}

impl InitialWigner {
    pub fn eval(&self, x: f64, p: f64) -> f64 {
        match self {
            Self::Coherent(a) => gauss2(x, p, a.re, a.im, 0.25),
            Self::Thermal(n) => gauss2(x, p, 0.0, 0.0, 0.25 * (1.0 + 2.0 * n)),
            Self::Cat(a) => {
                let norm = 2.0 * (1.0 + (-2.0 * a.norm_sqr()).exp());
                let fringe = 2.0 * gauss2(x, p, 0.0, 0.0, 0.25) * (4.0 * (x * a.im - p * a.re)).cos();
                (gauss2(x, p, a.re, a.im, 0.25) + gauss2(x, p, -a.re, -a.im, 0.25) + fringe) / norm
            }
            Self::Fock(n) => {
                let r2 = x * x + p * p;
                let sign = if n % 2 == 0 { 1.0 } else { -1.0 };
                2.0 / PI * sign * laguerre(*n, 4.0 * r2) * (-2.0 * r2).exp()
            }
            Self::Grid { xs, ps, values } => {
                let ix = nearest(xs, x);
                let ip = nearest(ps, p);
                match (ix, ip) {
                    (Some(i), Some(j)) => values[i][j],
                    _ => 0.0,
                }
            }
        }
    }

    /// `(mean_x, mean_p, std_x, std_p)` used to place the quadrature window.
    pub fn spread(&self) -> (f64, f64, f64, f64) {
        match self {
            Self::Coherent(a) => (a.re, a.im, 0.5, 0.5),
            Self::Thermal(n) => {
                let s = (0.25 * (1.0 + 2.0 * n)).sqrt();
                (0.0, 0.0, s, s)
            }
            Self::Cat(a) => {
                let n2 = a.norm_sqr();
                let a2 = (a * a).re;
                let vx = 0.25 * (2.0 * a2 + 2.0 * n2 * n2.tanh() + 1.0);
                let vp = 0.25 * (-2.0 * a2 + 2.0 * n2 * n2.tanh() + 1.0);
                (0.0, 0.0, vx.max(1e-3).sqrt(), vp.max(1e-3).sqrt())
            }
            Self::Fock(n) => {
                let s = (0.25 * (2.0 * *n as f64 + 1.0)).sqrt();
                (0.0, 0.0, s, s)
            }
            Self::Grid { xs, ps, values } => {
                let (mut w, mut mx, mut mp, mut sx, mut sp) = (0.0, 0.0, 0.0, 0.0, 0.0);
                for (i, x) in xs.iter().enumerate() {
                    for (j, p) in ps.iter().enumerate() {
                        let v = values[i][j];
                        w += v;
                        mx += v * x;
                        mp += v * p;
                        sx += v * x * x;
                        sp += v * p * p;
                    }
                }
                let (mx, mp) = (mx / w, mp / w);
                (mx, mp, (sx / w - mx * mx).max(0.0).sqrt(), (sp / w - mp * mp).max(0.0).sqrt())
            }
        }
    }

    /// Matching density operator in a truncated Fock space (not available for grids).
    pub fn density(&self, n_max: usize) -> Result<Operator> {
        Ok(match self {
            Self::Coherent(a) => ops::pure(&ops::coherent_ket(*a, n_max)),
            Self::Thermal(n) => ops::thermal(*n, n_max),
            Self::Cat(a) => ops::pure(&ops::cat_ket(*a, n_max)),
            Self::Fock(k) => {
                if *k > n_max {
                    return invalid(format!("Fock level {k} exceeds n_max = {n_max}"));
                }
                ops::fock(*k, n_max)
            }
            Self::Grid { .. } => return invalid("tabulated Wigner functions have no density operator"),
        })
    }

    /// Population in the top two levels of the untruncated state, estimated
    /// from its representation at a generous cutoff.
    pub fn top_population(&self, n_max: usize) -> Result<f64> {
        let big = self.density(n_max + 40)?;
        Ok((n_max - 1..=n_max).map(|k| big[(k, k)].re).sum::<f64>() + (n_max + 1..=n_max + 40).map(|k| big[(k, k)].re).sum::<f64>())
    }
}

fn nearest(grid: &[f64], v: f64) -> Option<usize> {
    if grid.len() < 2 {
        return None;
    }
    let h = grid[1] - grid[0];
    let k = ((v - grid[0]) / h).round();
    (k >= 0.0 && (k as usize) < grid.len()).then_some(k as usize)
}

/// Wigner function of a density operator via displaced parity,
/// `W(x,p) = (2/π) Tr(Π D(−β) ρ D(β))`, `β = x + ip`.
pub fn wigner_from_density(rho: &Operator, x: f64, p: f64) -> f64 {
    let n_max = rho.nrows() - 1;
    let a = ops::annihilation(n_max);
    let beta = c(x, p);
    let gen = a.adjoint() * (-beta) - &a * (-beta).conj();
    let d = ops::expm(&gen);
    let shifted = &d * rho * d.adjoint();
    2.0 / PI * ops::trace_prod(&ops::parity(n_max), &shifted).re
}

// ------------------------------------------------------------ moments

/// Kernel in the common form
/// `K(q, q0) ∝ N(q; B q0 + offset, cov) · exp(q0ᵀ Z q0 + linᵀ q0)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KernelView {
    pub b: Matrix2<f64>,
    pub offset: Vector2<f64>,
    pub cov: Matrix2<f64>,
    pub z: Matrix2<f64>,
    pub lin: Vector2<f64>,
}

#[derive(Clone, Copy, Debug)]
pub struct GridSpec {
    pub n: usize,
    /// Half-width of the window in units of the initial standard deviation.
    pub sigmas: f64,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self { n: 201, sigmas: 6.0 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Moments {
    pub mean_x: f64,
    pub mean_p: f64,
    pub var_x: f64,
    pub var_p: f64,
    pub cov_xp: f64,
    /// Log of the (unnormalized) reweighted mass; useful only for diagnostics.
    pub log_weight: f64,
}

impl Moments {
    /// Moments of the phase-space rotation `q ↦ R(−angle) q`, i.e. the
    /// coordinates `(x cos + p sin, p cos − x sin)`.
    pub fn rotated(&self, angle: f64) -> Moments {
        let (s, c) = angle.sin_cos();
        let r = Matrix2::new(c, s, -s, c);
        let m = r * Vector2::new(self.mean_x, self.mean_p);
        let cov = r * Matrix2::new(self.var_x, self.cov_xp, self.cov_xp, self.var_p) * r.transpose();
        Moments { mean_x: m.x, mean_p: m.y, var_x: cov[(0, 0)], var_p: cov[(1, 1)], cov_xp: cov[(0, 1)], log_weight: self.log_weight }
    }
}

/// Moments of an oscillator state.
pub fn state_moments(rho: &Operator) -> Result<Moments> {
    let n_max = rho.nrows() - 1;
    let (x, p) = (ops::quad_x(n_max), ops::quad_p(n_max));
    let mx = ops::expectation(rho, &x)?.re;
    let mp = ops::expectation(rho, &p)?.re;
    let xx = ops::expectation(rho, &(&x * &x))?.re;
    let pp = ops::expectation(rho, &(&p * &p))?.re;
    let xp = ops::expectation(rho, &((&x * &p + &p * &x) * r(0.5)))?.re;
    Ok(Moments { mean_x: mx, mean_p: mp, var_x: xx - mx * mx, var_p: pp - mp * mp, cov_xp: xp - mx * mp, log_weight: 0.0 })
}

/// Posterior moments: `E[q] = B E_w[q0] + offset`, `Cov = B Cov_w Bᵀ + cov`,
/// with `E_w` taken over `W0(q0)·exp(q0ᵀZq0 + linᵀq0)` by grid quadrature.
pub fn moments(view: &KernelView, w0: &InitialWigner, grid: &GridSpec) -> Result<Moments> {
    if grid.n < 3 {
        return invalid("quadrature grid needs at least 3 points per axis");
    }
    let mut widen = 1.0;
    for _ in 0..4 {
        match weighted_stats(view, w0, grid, widen)? {
            Some(m) => return Ok(m),
            None => widen *= 1.5,
        }
    }
    Err(Error::IntegrationFailure { step: 0, t: f64::NAN, msg: "reweighted initial distribution escapes the quadrature window".into() })
}

fn weighted_stats(view: &KernelView, w0: &InitialWigner, grid: &GridSpec, widen: f64) -> Result<Option<Moments>> {
    let (xs, ps) = match w0 {
        InitialWigner::Grid { xs, ps, .. } => (xs.clone(), ps.clone()),
        _ => {
            let (mx, mp, sx, sp) = w0.spread();
            let ax = (mx - grid.sigmas * sx * widen, mx + grid.sigmas * sx * widen);
            let ap = (mp - grid.sigmas * sp * widen, mp + grid.sigmas * sp * widen);
            let lin = |(lo, hi): (f64, f64)| -> Vec<f64> {
                (0..grid.n).map(|k| lo + (hi - lo) * k as f64 / (grid.n - 1) as f64).collect()
            };
            (lin(ax), lin(ap))
        }
    };
    let logw = |x: f64, p: f64| -> f64 {
        let q = Vector2::new(x, p);
        (q.transpose() * view.z * q)[(0, 0)] + view.lin.dot(&q)
    };
    let mut lmax = f64::NEG_INFINITY;
    for &x in &xs {
        for &p in &ps {
            let v = w0.eval(x, p);
            if v != 0.0 {
                lmax = lmax.max(logw(x, p));
            }
        }
    }
    if !lmax.is_finite() {
        return invalid("initial Wigner function vanishes on the quadrature grid");
    }
    let (mut w, mut sx, mut sp, mut sxx, mut spp, mut sxp, mut edge) = (0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0);
    let (nx, np) = (xs.len(), ps.len());
    for (i, &x) in xs.iter().enumerate() {
        for (j, &p) in ps.iter().enumerate() {
            let v = w0.eval(x, p) * (logw(x, p) - lmax).exp();
            w += v;
            sx += v * x;
            sp += v * p;
            sxx += v * x * x;
            spp += v * p * p;
            sxp += v * x * p;
            if i == 0 || j == 0 || i == nx - 1 || j == np - 1 {
                edge += v.abs();
            }
        }
    }
    if !(w > 0.0) || !w.is_finite() {
        return Ok(None);
    }
    let is_grid = matches!(w0, InitialWigner::Grid { .. });
    if !is_grid && edge > 1e-9 * w.abs() {
        return Ok(None);
    }
    let m0 = Vector2::new(sx / w, sp / w);
    let c0 = Matrix2::new(sxx / w - m0.x * m0.x, sxp / w - m0.x * m0.y, sxp / w - m0.x * m0.y, spp / w - m0.y * m0.y);
    let mean = view.b * m0 + view.offset;
    let cov = view.b * c0 * view.b.transpose() + view.cov;
    let cell = (xs[1] - xs[0]) * (ps[1] - ps[0]);
    Ok(Some(Moments {
        mean_x: mean.x,
        mean_p: mean.y,
        var_x: cov[(0, 0)],
        var_p: cov[(1, 1)],
        cov_xp: cov[(0, 1)],
        log_weight: (w * cell).ln() + lmax,
    }))
}

/// Grid quadrature of `W0` over the default window (should be 1).
pub fn initial_mass(w0: &InitialWigner, grid: &GridSpec) -> f64 {
    let (mx, mp, sx, sp) = w0.spread();
    let n = grid.n;
    let hx = 2.0 * grid.sigmas * sx / (n - 1) as f64;
    let hp = 2.0 * grid.sigmas * sp / (n - 1) as f64;
    let mut acc = 0.0;
    for i in 0..n {
        for j in 0..n {
            acc += w0.eval(mx - grid.sigmas * sx + i as f64 * hx, mp - grid.sigmas * sp + j as f64 * hp);
        }
    }
    acc * hx * hp
}

// ------------------------------------------------------------ full-state models

/// Oscillator model family matching one of the kernel filters.
#[derive(Clone, Debug)]
pub enum OscillatorModel {
    Fluorescence(FluorescenceParams),
    Xp(XpParams),
}

/// Reject Fock truncations that leave more than 1e−8 of the initial state in
/// the top two levels, suggesting an adequate `n_max`.
pub(crate) fn check_truncation(initial: &InitialWigner, n_max: usize) -> Result<()> {
    if n_max < 2 {
        return invalid("n_max must be at least 2");
    }
    let top = initial.top_population(n_max)?;
    if top > 1e-8 {
        let mut suggest = n_max + 1;
        while suggest < n_max + 400 && initial.top_population(suggest)? > 1e-8 {
            suggest += 1;
        }
        return invalid(format!("truncation n_max = {n_max} leaves {top:.2e} in the top levels; use n_max >= {suggest}"));
    }
    Ok(())
}

/// Truncated-Fock model equivalent to the kernel filter, with the initial state.
///
/// Fluorescence: channels `a`, `i·a` (η), plus `√(2n_th)·a`, `√(2n_th)·a†` (η = 0).
/// X/P: `√Γx X` (η_x), `√Γp P` (η_p), `√(Γℓ(1+n_th))·a`, `√(Γℓ n_th)·a†` (η = 0) and
/// `H = Δ a†a` in the lab frame. Drives enter as `2u X + 2v P`.
pub fn sme_oscillator_model(kind: &OscillatorModel, n_max: usize, initial: &InitialWigner) -> Result<(ScenarioModel, Operator)> {
    check_truncation(initial, n_max)?;
    let a = ops::annihilation(n_max);
    let ad = a.adjoint();
    let x = ops::quad_x(n_max);
    let p = ops::quad_p(n_max);
    let (h, mut channels, u, v) = match kind {
        OscillatorModel::Fluorescence(fp) => {
            fp.validate()?;
            let mut ch = vec![MeasurementChannel::new(a.clone(), fp.eta)?, MeasurementChannel::new(&a * ops::I, fp.eta)?];
            if fp.n_th > 0.0 {
                let g = (2.0 * fp.n_th).sqrt();
                ch.push(MeasurementChannel::new(&a * r(g), 0.0)?);
                ch.push(MeasurementChannel::new(&ad * r(g), 0.0)?);
            }
            (ops::zeros(n_max + 1), ch, fp.u.clone(), fp.v.clone())
        }
        OscillatorModel::Xp(xp) => {
            xp.validate()?;
            let mut ch = vec![
                MeasurementChannel::new(&x * r(xp.gamma_x.sqrt()), xp.eta_x)?,
                MeasurementChannel::new(&p * r(xp.gamma_p.sqrt()), xp.eta_p)?,
            ];
            if xp.gamma_l > 0.0 {
                ch.push(MeasurementChannel::new(&a * r((xp.gamma_l * (1.0 + xp.n_th)).sqrt()), 0.0)?);
                if xp.n_th > 0.0 {
                    ch.push(MeasurementChannel::new(&ad * r((xp.gamma_l * xp.n_th).sqrt()), 0.0)?);
                }
            }
            (ops::number(n_max) * r(xp.delta), ch, xp.u.clone(), xp.v.clone())
        }
    };
    channels.shrink_to_fit();
    let model = ScenarioModel::new(h, channels, vec![n_max + 1])?.with_drive(Drive {
        u,
        v,
        op_u: &x * r(2.0),
        op_v: &p * r(2.0),
    })?;
    Ok((model, initial.density(n_max)?))
}
