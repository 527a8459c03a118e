//! Bipartite scenarios.
//!
//! * Indistinguishable emission: two qubits whose decay channels interfere on
//!   a balanced beamsplitter, monitored in both output quadratures. With equal
//!   channel rates the state is confined to a two-dimensional manifold; the
//!   thirteen record-independent combinations of normalized Pauli coordinates
//!   have closed-form trajectories.
//! * Dispersive readout: a qudit shifting the frequency of a monitored
//!   oscillator. Without drives every block of the joint state is a Gaussian
//!   kernel fixed by the diagonal-block offsets.
//!
//! Qubit convention: `|0⟩` is the ground state (σz = +1), `σ− = |0⟩⟨1|`, and
//! qubit A is the most significant tensor factor.

use nalgebra::{Matrix2, Vector2};
use serde::Serialize;

use crate::error::{invalid, Error, Result};
use crate::gauss::{self, FluorescenceKernelState, FluorescenceParams, GridSpec, InitialWigner, KernelView};
use crate::ops::{self, c, r, Operator, C64};
use crate::qnd::QndModel;
use crate::sme::{Drive, MeasurementChannel, ScenarioModel, Signal};

// ------------------------------------------------------------ emission

/// Two-qubit emission model with equal channel rates:
/// `L1 = √(rate/2)(σ−A + σ−B)`, `L2 = −i√(rate/2)(σ−A − σ−B)`, no Hamiltonian.
///
/// The sign of `L2` makes its record `dy2 = √η2 (r(YI) − r(IY)) dt + dw2`
/// (with `rate = 2`); flipping it only flips the sign of that record.
pub fn emission_model(rate: f64, eta1: f64, eta2: f64) -> Result<ScenarioModel> {
    emission_model_rates(rate, rate, eta1, eta2)
}

/// Emission model with independent channel rates; unequal rates break the
/// two-dimensional confinement.
pub fn emission_model_rates(rate1: f64, rate2: f64, eta1: f64, eta2: f64) -> Result<ScenarioModel> {
    for (name, x) in [("rate1", rate1), ("rate2", rate2)] {
        if !(x > 0.0 && x.is_finite()) {
            return invalid(format!("{name} must be > 0"));
        }
    }
    let sm = ops::sigma_minus();
    let id = ops::identity(2);
    let sa = ops::kron(&sm, &id);
    let sb = ops::kron(&id, &sm);
    let l1 = (&sa + &sb) * r((rate1 / 2.0).sqrt());
    let l2 = (&sa - &sb) * c(0.0, -(rate2 / 2.0).sqrt());
    let channels = vec![MeasurementChannel::new(l1, eta1)?, MeasurementChannel::new(l2, eta2)?];
    ScenarioModel::new(ops::zeros(4), channels, vec![2, 2])
}

/// Grouped two-qubit Pauli coordinates with every `Z` factor displaced to
/// `Z − I` (so the ground state `|00⟩` has all displaced coordinates zero),
/// and the normalized variables
/// `B0..B8 = (1, YZ_d, XZ_s, YY, XX, XY_d, Z_s, X_s, Y_d) / ZZ*` and
/// `R1..R6 = (XZ_d, YZ_s, Z_d, XY_s, X_d, Y_s) / ZZ*`,
/// where `ZZ* = r(ZZ) − r(ZI) − r(IZ) + 1 = 4⟨11|ρ|11⟩`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EmissionCoords {
    pub x_s: f64,
    pub x_d: f64,
    pub y_s: f64,
    pub y_d: f64,
    pub z_s: f64,
    pub z_d: f64,
    pub xy_s: f64,
    pub xy_d: f64,
    pub xz_s: f64,
    pub xz_d: f64,
    pub yz_s: f64,
    pub yz_d: f64,
    pub xx: f64,
    pub yy: f64,
    pub zz_star: f64,
    /// `B0..B8`; absent when `|ZZ*| < 1e−12`.
    pub b: Option<[f64; 9]>,
    /// `R1..R6`; absent when `|ZZ*| < 1e−12`.
    pub r: Option<[f64; 6]>,
}

pub const EMISSION_DENOMINATOR_FLOOR: f64 = 1e-12;

pub fn emission_coords(rho: &Operator) -> Result<EmissionCoords> {
    let m = ops::pauli_coords(rho)?;
    let g = |a: char, b: char| m[ops::pauli_index(a)][ops::pauli_index(b)];
    // displaced coordinates r(σ⊗Z*) etc.
    let xz = g('X', 'Z') - g('X', 'I');
    let zx = g('Z', 'X') - g('I', 'X');
    let yz = g('Y', 'Z') - g('Y', 'I');
    let zy = g('Z', 'Y') - g('I', 'Y');
    let zi = g('Z', 'I') - 1.0;
    let iz = g('I', 'Z') - 1.0;
    let zz_star = g('Z', 'Z') - g('Z', 'I') - g('I', 'Z') + 1.0;
    let mut out = EmissionCoords {
        x_s: g('X', 'I') + g('I', 'X'),
        x_d: g('X', 'I') - g('I', 'X'),
        y_s: g('Y', 'I') + g('I', 'Y'),
        y_d: g('Y', 'I') - g('I', 'Y'),
        z_s: zi + iz,
        z_d: zi - iz,
        xy_s: g('X', 'Y') + g('Y', 'X'),
        xy_d: g('X', 'Y') - g('Y', 'X'),
        xz_s: xz + zx,
        xz_d: xz - zx,
        yz_s: yz + zy,
        yz_d: yz - zy,
        xx: g('X', 'X'),
        yy: g('Y', 'Y'),
        zz_star,
        b: None,
        r: None,
    };
    if zz_star.abs() >= EMISSION_DENOMINATOR_FLOOR {
        let o = &out;
        let b = [1.0, o.yz_d, o.xz_s, o.yy, o.xx, o.xy_d, o.z_s, o.x_s, o.y_d].map(|v| v / zz_star);
        let r = [o.xz_d, o.yz_s, o.z_d, o.xy_s, o.x_d, o.y_s].map(|v| v / zz_star);
        out.b = Some(b);
        out.r = Some(r);
    }
    Ok(out)
}

impl EmissionCoords {
    /// Rebuild the density matrix from the fifteen grouped coordinates.
    pub fn to_state(&self) -> Operator {
        let mut m = [[0.0; 4]; 4];
        let i = ops::pauli_index;
        let (zi, iz) = ((self.z_s + self.z_d) / 2.0 + 1.0, (self.z_s - self.z_d) / 2.0 + 1.0);
        let (xi, ix) = ((self.x_s + self.x_d) / 2.0, (self.x_s - self.x_d) / 2.0);
        let (yi, iy) = ((self.y_s + self.y_d) / 2.0, (self.y_s - self.y_d) / 2.0);
        m[i('I')][i('I')] = 1.0;
        m[i('Z')][i('I')] = zi;
        m[i('I')][i('Z')] = iz;
        m[i('X')][i('I')] = xi;
        m[i('I')][i('X')] = ix;
        m[i('Y')][i('I')] = yi;
        m[i('I')][i('Y')] = iy;
        m[i('X')][i('Y')] = (self.xy_s + self.xy_d) / 2.0;
        m[i('Y')][i('X')] = (self.xy_s - self.xy_d) / 2.0;
        m[i('X')][i('Z')] = (self.xz_s + self.xz_d) / 2.0 + xi;
        m[i('Z')][i('X')] = (self.xz_s - self.xz_d) / 2.0 + ix;
        m[i('Y')][i('Z')] = (self.yz_s + self.yz_d) / 2.0 + yi;
        m[i('Z')][i('Y')] = (self.yz_s - self.yz_d) / 2.0 + iy;
        m[i('X')][i('X')] = self.xx;
        m[i('Y')][i('Y')] = self.yy;
        m[i('Z')][i('Z')] = self.zz_star + zi + iz - 1.0;
        ops::from_pauli_coords(&m)
    }
}

/// Labels of the thirteen record-independent variables, in output order.
pub const EMISSION_VARS: [&str; 13] = ["B3~", "B4~", "B5~", "B6~", "B7~", "B8~", "B0~", "R1", "R2", "R3~", "R4~", "R5~", "R6~"];

/// The thirteen record-independent polynomials in the normalized variables.
///
/// `B̃0` carries cubic and quartic corrections in `B1, B2` beyond the three
/// leading groups; without them it retains a record-driven component.
pub fn emission_deterministic_vars(coords: &EmissionCoords) -> Option<[f64; 13]> {
    let (b, rr) = (coords.b?, coords.r?);
    let [b0, b1, b2, b3, b4, b5, b6, b7, b8] = b;
    let [r1, r2, r3, r4, r5, r6] = rr;
    let (b11, b22, b12) = (b1 * b1, b2 * b2, b1 * b2);
    let tb0 = b0
        + (b7 * b2 + b8 * b1) / 2.0
        + (b3 * b3 + b4 * b4 + b5 * b5 + b6 * b6) / 2.0
        + (b11 + b22) * b6 / 8.0
        + b12 * b5 / 4.0
        + (b11 * b11 + b22 * b22) / 64.0
        + 3.0 * b11 * b22 / 32.0;
    Some([
        b11 / 4.0 + b3,
        b22 / 4.0 - b4,
        b12 / 2.0 + b5,
        (b11 + b22) / 4.0 + b6,
        b4 * b2 - b6 * b2 / 2.0 - b5 * b1 / 2.0 - b11 * b2 / 4.0 - b22 * b2 / 4.0 + b7,
        -b3 * b1 - b5 * b2 / 2.0 - b6 * b1 / 2.0 - b22 * b1 / 4.0 - b11 * b1 / 4.0 + b8,
        tb0,
        r1,
        r2,
        -r1 * b2 / 2.0 - r2 * b1 / 2.0 + r3,
        r1 * b1 / 2.0 - r2 * b2 / 2.0 + r4,
        -r3 * b2 / 2.0 - r4 * b1 / 2.0 + r2 * b12 / 4.0 + r1 * b22 / 8.0 - r1 * b11 / 8.0 + r5,
        -r3 * b1 / 2.0 + r4 * b2 / 2.0 + r1 * b12 / 4.0 + r2 * b11 / 8.0 - r2 * b22 / 8.0 + r6,
    ])
}

/// Closed-form propagation of the thirteen variables over a duration `tau`
/// measured in units where `rate = 2` (i.e. `tau = rate·t/2`).
pub fn emission_closed_form(init: &[f64; 13], eta1: f64, eta2: f64, tau: f64) -> Result<[f64; 13]> {
    if !(tau >= 0.0 && tau.is_finite()) {
        return invalid("time must be >= 0");
    }
    let (e1, e2, e3, e4) = (tau.exp(), (2.0 * tau).exp(), (3.0 * tau).exp(), (4.0 * tau).exp());
    let (m2, m4) = ((2.0 * tau).exp_m1(), (4.0 * tau).exp_m1());
    let [tb3, tb4, tb5, tb6, tb7, tb8, tb0, r1, r2, tr3, tr4, tr5, tr6] = *init;
    // dB̃0/dt = 4B̃0 + 2η2 B̃3 + 2η1 B̃4 + c6 B̃6
    let c6 = 1.5 * (eta1 + eta2);
    let (k3, k4, k6) = (eta2 / 2.0, eta1 / 2.0, (eta1 + eta2) / 2.0);
    let s1 = 2.0 * eta2 * (tb3 + k3) + 2.0 * eta1 * (tb4 + k4) + c6 * (tb6 + k6);
    let s0 = 2.0 * eta2 * k3 + 2.0 * eta1 * k4 + c6 * k6;
    let m5 = (eta2 - eta1) / 4.0;
    Ok([
        tb3 * e2 + k3 * m2,
        tb4 * e2 + k4 * m2,
        tb5 * e2,
        tb6 * e2 + k6 * m2,
        tb7 * e3,
        tb8 * e3,
        tb0 * e4 + s1 * e2 * m2 / 2.0 - s0 * m4 / 4.0,
        r1 * e1,
        r2 * e1,
        tr3 * e2,
        tr4 * e2,
        tr5 * e3 + m5 * r1 * e1 * m2,
        tr6 * e3 - m5 * r2 * e1 * m2,
    ])
}

/// Record-driven pair `(B1, B2)` from `B(t) = e^t B(0) − 2√η ∫ e^{t−s} dy`,
/// evaluated on a step-major record (`rate = 2`); one entry per time point.
pub fn emission_record_driven(b1: f64, b2: f64, eta1: f64, eta2: f64, dy: &[f64], n_channels: usize, dt: f64) -> Result<Vec<[f64; 2]>> {
    if n_channels < 2 || dy.len() % n_channels != 0 {
        return invalid("record must hold two channels per step");
    }
    let g = dt.exp();
    let mut cur = [b1, b2];
    let mut out = vec![cur];
    for row in dy.chunks(n_channels) {
        cur = [g * (cur[0] - 2.0 * eta2.sqrt() * row[1]), g * (cur[1] - 2.0 * eta1.sqrt() * row[0])];
        out.push(cur);
    }
    Ok(out)
}

// ------------------------------------------------------------ dispersive readout

/// Qudit ⊗ oscillator with `H = Σ_k ω_k |k⟩⟨k| ⊗ b†b + 2u X + 2v P`, monitored
/// through the heterodyne pair `b`, `i·b` at efficiency η each.
#[derive(Clone, Debug)]
pub struct DispersiveParams {
    /// Level frequency shifts `ω_k = χ (Q_A)_kk`.
    pub shifts: Vec<f64>,
    pub eta: f64,
    pub u: Signal,
    pub v: Signal,
}

impl DispersiveParams {
    pub fn new(shifts: Vec<f64>, eta: f64) -> Self {
        Self { shifts, eta, u: Signal::Constant(0.0), v: Signal::Constant(0.0) }
    }

    pub fn with_drives(mut self, u: Signal, v: Signal) -> Self {
        self.u = u;
        self.v = v;
        self
    }

    pub fn d(&self) -> usize {
        self.shifts.len()
    }

    fn validate(&self) -> Result<()> {
        if self.shifts.len() < 2 {
            return invalid("dispersive model needs d >= 2 levels");
        }
        if self.shifts.iter().any(|w| !w.is_finite()) {
            return invalid("level shifts must be finite");
        }
        if !(self.eta > 0.0 && self.eta <= 1.0) {
            return invalid("eta must be in (0, 1]");
        }
        Ok(())
    }

    fn drive_free(&self) -> bool {
        let zero = |s: &Signal| matches!(s, Signal::Constant(x) if *x == 0.0);
        zero(&self.u) && zero(&self.v)
    }
}

/// Full joint model and initial state `c0 ⊗ σ0` (σ0 from its Wigner function).
pub fn dispersive_model(p: &DispersiveParams, n_max: usize, c0: &Operator, w0: &InitialWigner) -> Result<(ScenarioModel, Operator)> {
    p.validate()?;
    gauss::check_truncation(w0, n_max)?;
    let d = p.d();
    if c0.nrows() != d || c0.ncols() != d {
        return invalid(format!("qudit state must be {d}x{d}"));
    }
    ops::validate_density(c0)?;
    let id = ops::identity(d);
    let b = ops::kron(&id, &ops::annihilation(n_max));
    let h = ops::kron(&ops::diag(&p.shifts), &ops::number(n_max));
    let channels = vec![MeasurementChannel::new(b.clone(), p.eta)?, MeasurementChannel::new(&b * ops::I, p.eta)?];
    let model = ScenarioModel::new(h, channels, vec![d, n_max + 1])?.with_drive(Drive {
        u: p.u.clone(),
        v: p.v.clone(),
        op_u: ops::kron(&id, &ops::quad_x(n_max)) * r(2.0),
        op_v: ops::kron(&id, &ops::quad_p(n_max)) * r(2.0),
    })?;
    Ok((model, ops::kron(c0, &w0.density(n_max)?)))
}

/// Diagonal block `k` in the lab frame, oscillator coordinates `(x, P)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct LevelBlock {
    pub omega: f64,
    /// Kernel centre offset.
    pub xi: f64,
    pub pi: f64,
    /// Weight vector applied to the rotated initial point `R_k q0`.
    pub theta: f64,
    pub zeta: f64,
}

/// Off-diagonal block `(j, k)`, `j < k`, as a complex Gaussian weight on
/// the initial oscillator state. Written on the Glauber P function it is
/// `exp(p_quad |α|² + p_lin[0] α + p_lin[1] α*)`; on the Wigner function in
/// lab-frame `(x, P)` coordinates it is `exp(log_c + z |q0|² + linᵀ q0)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CoherenceBlock {
    pub j: usize,
    pub k: usize,
    pub p_quad: C64,
    pub p_lin: [C64; 2],
    pub z: C64,
    pub lin: [C64; 2],
    pub log_c: C64,
    /// `ln(c0_jk / √(c0_jj c0_kk))`; absent for a zero initial coherence.
    pub log_mu: Option<C64>,
}

#[derive(Clone, Debug)]
pub struct DispersiveState {
    pub t: f64,
    /// Shared diagonal shape parameters (identical to the fluorescence kernel at `n_th = 0`).
    pub a: f64,
    pub s: f64,
    pub d: f64,
    pub levels: Vec<LevelBlock>,
    /// `log μ_k` up to the common normalization; absent for unpopulated levels.
    pub log_mu: Vec<Option<f64>>,
    pub coherences: Vec<CoherenceBlock>,
    /// Set when some `s − 1/2` came within 1e−10 of zero.
    pub singular: bool,
    rotating: Vec<FluorescenceKernelState>,
    /// `√η ∫ e^{−(1+iω_k)s} (dy1 + i dy2)` per level.
    record_lin: Vec<C64>,
    eta: f64,
}

pub const SINGULAR_TOL: f64 = 1e-10;

/// Rotation `q ↦ R(−ωt) q` in `(x, P)` coordinates: free evolution under `ω b†b`.
fn free_rotation(angle: f64) -> Matrix2<f64> {
    let (s, c) = angle.sin_cos();
    Matrix2::new(c, s, -s, c)
}

/// Quadratic coefficient of the P-function weight of block `(j, k)` with
/// detuning `w = ω_j − ω_k`: `e^{−κt} − 1 + 2(1−η)(1 − e^{−κt})/κ`, `κ = 2 + iw`.
pub fn coherence_quad(w: f64, eta: f64, t: f64) -> C64 {
    let kappa = c(2.0, w);
    let em1 = (-kappa * t).exp() - 1.0;
    em1 - em1 * (2.0 * (1.0 - eta)) / kappa
}

/// Converts a P-function weight `exp(A|α|² + λα + λ'α*)` into the equivalent
/// Wigner-function weight `exp(log_c + z|β|² + linᵀ(x, P))`, `β = x + iP`.
pub fn p_to_wigner_weight(quad: C64, lam: C64, lam_c: C64) -> (C64, [C64; 2], C64) {
    let u = C64::new(4.0, 0.0) / (quad + 2.0);
    let (l, lc) = (lam * u * 0.5, lam_c * u * 0.5);
    let z = -u + 2.0;
    let log_c = -(C64::new(2.0, 0.0) / u).ln() - l * lc / u;
    (z, [l + lc, ops::I * (l - lc)], log_c)
}

impl DispersiveState {
    fn initial(p: &DispersiveParams, c0: &Operator) -> Self {
        let d = p.d();
        let log_mu = (0..d).map(|k| (c0[(k, k)].re > 0.0).then(|| c0[(k, k)].re.ln())).collect();
        let mut st = Self {
            t: 0.0,
            a: 1.0,
            s: 0.0,
            d: 0.0,
            levels: p.shifts.iter().map(|&omega| LevelBlock { omega, xi: 0.0, pi: 0.0, theta: 0.0, zeta: 0.0 }).collect(),
            log_mu,
            coherences: Vec::new(),
            singular: false,
            rotating: vec![FluorescenceKernelState::initial(); d],
            record_lin: vec![C64::new(0.0, 0.0); d],
            eta: p.eta,
        };
        st.coherences = st.build_coherences(p, c0);
        st
    }

    fn build_coherences(&self, p: &DispersiveParams, c0: &Operator) -> Vec<CoherenceBlock> {
        let d = p.d();
        let mut out = Vec::new();
        for j in 0..d {
            for k in j + 1..d {
                let p_quad = coherence_quad(p.shifts[j] - p.shifts[k], p.eta, self.t);
                let p_lin = [self.record_lin[j], self.record_lin[k].conj()];
                let (z, lin, log_c) = p_to_wigner_weight(p_quad, p_lin[0], p_lin[1]);
                let c_jk = c0[(j, k)];
                let log_mu = (c_jk.norm() > 0.0).then(|| c_jk.ln() - (c0[(j, j)].re * c0[(k, k)].re).ln() / 2.0);
                out.push(CoherenceBlock { j, k, p_quad, p_lin, z, lin, log_c, log_mu });
            }
        }
        out
    }

    /// Gaussian kernel of diagonal block `k` in lab-frame `(x, P)` coordinates.
    pub fn level_view(&self, k: usize) -> KernelView {
        let v = self.rotating[k].view();
        let rot = free_rotation(self.levels[k].omega * self.t);
        KernelView { b: rot * v.b, offset: rot * v.offset, ..v }
    }

    /// Reduced qudit state, normalized to unit trace.
    pub fn qudit_density(&self, w0: &InitialWigner, grid: &GridSpec) -> Result<Operator> {
        if self.singular {
            return Err(Error::IntegrationFailure { step: 0, t: self.t, msg: "kernel width s − 1/2 is singular".into() });
        }
        let d = self.levels.len();
        let mut logs: Vec<Option<C64>> = vec![None; d * d];
        for k in 0..d {
            if let Some(lm) = self.log_mu[k] {
                let lw = gauss::moments(&self.rotating[k].view(), w0, grid)?.log_weight;
                logs[k * d + k] = Some(r(lm + lw));
            }
        }
        // Coherences are taken relative to the same construction applied to
        // the diagonal, then scaled by the kernel populations.
        let quad = coherence_quad(0.0, self.eta, self.t);
        let mut own = vec![None; d];
        for cb in &self.coherences {
            let (Some(lm), Some(lj), Some(lk)) = (cb.log_mu, logs[cb.j * (d + 1)], logs[cb.k * (d + 1)]) else { continue };
            let mut own_log = |k: usize| -> Result<f64> {
                if let Some(v) = own[k] {
                    return Ok(v);
                }
                let l = self.record_lin[k];
                let (z, lin, log_c) = p_to_wigner_weight(quad, l, l.conj());
                let v = (log_c + complex_log_weight(w0, z, lin, grid)?).re;
                own[k] = Some(v);
                Ok(v)
            };
            let norm = (own_log(cb.j)? + own_log(cb.k)?) / 2.0;
            let lw = complex_log_weight(w0, cb.z, cb.lin, grid)?;
            logs[cb.j * d + cb.k] = Some(lm + cb.log_c + lw - norm + (lj + lk) / 2.0);
        }
        let lmax = logs.iter().flatten().map(|z| z.re).fold(f64::NEG_INFINITY, f64::max);
        if !lmax.is_finite() {
            return invalid("no populated level");
        }
        let mut rho = ops::zeros(d);
        for j in 0..d {
            for k in j..d {
                if let Some(z) = logs[j * d + k] {
                    let v = (z - lmax).exp();
                    rho[(j, k)] = v;
                    rho[(k, j)] = v.conj();
                }
            }
        }
        let tr = ops::trace(&rho).re;
        Ok(rho / r(tr))
    }

    pub fn populations(&self, w0: &InitialWigner, grid: &GridSpec) -> Result<Vec<f64>> {
        let rho = self.qudit_density(w0, grid)?;
        Ok((0..rho.nrows()).map(|k| rho[(k, k)].re).collect())
    }
}

/// `log ∫ W0(q0) exp(z|q0|² + linᵀq0) dq0` for complex `z`, `lin`, on a grid
/// centred on the real-part tilted distribution.
fn complex_log_weight(w0: &InitialWigner, z: C64, lin: [C64; 2], grid: &GridSpec) -> Result<C64> {
    let probe = KernelView {
        b: Matrix2::identity(),
        offset: Vector2::zeros(),
        cov: Matrix2::zeros(),
        z: Matrix2::identity() * z.re,
        lin: Vector2::new(lin[0].re, lin[1].re),
    };
    let m = gauss::moments(&probe, w0, grid)?;
    let (_, _, sx0, sp0) = w0.spread();
    let sx = m.var_x.max(0.0).sqrt().max(0.1 * sx0);
    let sp = m.var_p.max(0.0).sqrt().max(0.1 * sp0);
    let n = grid.n.max(3) + grid.n / 2;
    let half = grid.sigmas + 2.0;
    let axis = |mean: f64, sd: f64| -> Vec<f64> { (0..n).map(|k| mean + sd * half * (2.0 * k as f64 / (n - 1) as f64 - 1.0)).collect() };
    let (xs, ps) = (axis(m.mean_x, sx), axis(m.mean_p, sp));
    let expo = |x: f64, p: f64| z * (x * x + p * p) + lin[0] * x + lin[1] * p;
    let lmax = xs.iter().flat_map(|&x| ps.iter().map(move |&p| (x, p))).map(|(x, p)| expo(x, p).re).fold(f64::NEG_INFINITY, f64::max);
    let mut acc = C64::new(0.0, 0.0);
    for &x in &xs {
        for &p in &ps {
            let wv = w0.eval(x, p);
            if wv != 0.0 {
                acc += (expo(x, p) - lmax).exp() * wv;
            }
        }
    }
    let cell = (xs[1] - xs[0]) * (ps[1] - ps[0]);
    if acc.norm() == 0.0 {
        return invalid("complex kernel weight vanishes");
    }
    Ok((acc * cell).ln() + lmax)
}

/// Drive-free reduced filter: every diagonal block is a fluorescence kernel
/// in the frame rotating at its level shift, fed with the correspondingly
/// rotated record; off-diagonal blocks and all normalizations follow in
/// closed form from per-level record integrals. `c0` is the initial qudit state;
/// the oscillator starts in a state common to all levels.
pub fn dispersive_filter_nodrive(p: &DispersiveParams, c0: &Operator, dy: &[f64], n_channels: usize, dt: f64) -> Result<Vec<DispersiveState>> {
    p.validate()?;
    if !p.drive_free() {
        return invalid("the reduced filter requires u = v = 0");
    }
    let d = p.d();
    if c0.nrows() != d || c0.ncols() != d {
        return invalid(format!("qudit state must be {d}x{d}"));
    }
    if n_channels < 2 || dy.len() % n_channels != 0 {
        return invalid("record must hold two channels per step");
    }
    if !(dt > 0.0) {
        return invalid("dt must be > 0");
    }
    let fp = FluorescenceParams::new(p.eta, 0.0);
    let mut st = DispersiveState::initial(p, c0);
    let mut out = Vec::with_capacity(dy.len() / n_channels + 1);
    out.push(st.clone());
    for (step, row) in dy.chunks(n_channels).enumerate() {
        let tm = st.t + 0.5 * dt;
        let mut next = st.rotating.clone();
        let mut record_lin = st.record_lin.clone();
        for (k, &omega) in p.shifts.iter().enumerate() {
            let (sn, cs) = (omega * tm).sin_cos();
            let (d1, d2) = (cs * row[0] + sn * row[1], -sn * row[0] + cs * row[1]);
            next[k] = gauss::fluorescence_step(&fp, &st.rotating[k], d1, d2, dt).map_err(|e| match e {
                Error::IntegrationFailure { t, msg, .. } => Error::IntegrationFailure { step, t, msg },
                e => e,
            })?;
            record_lin[k] += (-c(1.0, omega) * tm).exp() * c(row[0], row[1]) * p.eta.sqrt();
        }
        let t = st.t + dt;
        let f0 = next[0];
        let g = f0.s - 0.5;
        let mut levels = Vec::with_capacity(d);
        let mut log_mu = Vec::with_capacity(d);
        for (k, &omega) in p.shifts.iter().enumerate() {
            let f = &next[k];
            let rot = free_rotation(omega * t);
            let off = rot * Vector2::new(f.xi, f.pi);
            levels.push(LevelBlock { omega, xi: off.x, pi: off.y, theta: f.theta, zeta: f.phi });
            log_mu.push(st.log_mu[k].map(|_| c0[(k, k)].re.ln() + f0.a.ln() + t + (f.xi * f.xi + f.pi * f.pi) / g));
        }
        st = DispersiveState { t, a: f0.a, s: f0.s, d: f0.d, levels, log_mu, coherences: Vec::new(), singular: st.singular || g.abs() < SINGULAR_TOL, rotating: next, record_lin, eta: p.eta };
        st.coherences = st.build_coherences(p, c0);
        out.push(st.clone());
    }
    Ok(out)
}

// ------------------------------------------------------------ effective QND

/// Right-hand side of the conditional coherent amplitude `β_k = ⟨b⟩_k`:
/// `β̇ = (v − iu) − (1 + iω_k) β`.
pub fn amplitude_rhs(beta: C64, omega: f64, u: f64, v: f64) -> C64 {
    c(v, -u) - c(1.0, omega) * beta
}

/// Exact amplitude for constant drives.
pub fn amplitude_at(beta0: C64, omega: f64, u: f64, v: f64, t: f64) -> C64 {
    let k = c(1.0, omega);
    let st = c(v, -u) / k;
    st + (beta0 - st) * (-k * t).exp()
}

/// Fixed point of [`amplitude_rhs`].
pub fn stationary_amplitude(omega: f64, u: f64, v: f64) -> C64 {
    c(v, -u) / c(1.0, omega)
}

/// Once every diagonal block is a coherent state `|β_k⟩`, the qudit sees a QND
/// measurement with channels `diag(Re β_k)` (record of `b`) and
/// `diag(−Im β_k)` (record of `i·b`), both at efficiency η.
pub fn effective_qnd(betas: &[C64], eta: f64) -> Result<QndModel> {
    if betas.iter().any(|b| !b.re.is_finite() || !b.im.is_finite()) {
        return invalid("amplitudes must be finite");
    }
    QndModel::diagonal(vec![betas.iter().map(|b| b.re).collect(), betas.iter().map(|b| -b.im).collect()], vec![eta, eta])
}
