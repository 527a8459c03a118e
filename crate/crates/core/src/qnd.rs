//! Reduced filters and deterministic invariants for commuting (QND) measurements.
//!
//! All channels are diagonal in a shared orthonormal eigenbasis:
//! `L_k = Σ_n λ_k(n) |d_n⟩⟨d_n|`, optionally paired with `i·L_k` quadrature
//! channels for heterodyne detection. In that basis populations are fully
//! determined by the integrated records, coherence phases are constant (or
//! shift by the heterodyne record), and the coherence ratios
//! `|ρ_ab|²/(ρ_aa ρ_bb)` decay deterministically.

use std::f64::consts::PI;

use nalgebra::DVector;

use crate::error::{invalid, Result};
use crate::ops::{self, c, Operator, I};
use crate::sme::{Compensated, MeasurementChannel, ScenarioModel};

/// Populations below this are treated as absent when forming invariants.
pub const POPULATION_FLOOR: f64 = 1e-12;

const NULL_TOL: f64 = 1e-10;

#[derive(Clone, Debug)]
pub struct QndModel {
    basis: Operator,
    lambda: Vec<Vec<f64>>,
    eta: Vec<f64>,
    imaginary: Vec<bool>,
}

impl QndModel {
    /// `basis` holds the eigenvectors as columns; `imaginary[k]` marks a
    /// channel `i·L_k` (heterodyne quadrature partner).
    pub fn new(basis: Operator, lambda: Vec<Vec<f64>>, eta: Vec<f64>, imaginary: Vec<bool>) -> Result<Self> {
        let n = basis.nrows();
        if n < 2 || !basis.is_square() {
            return invalid("QND basis must be square with N >= 2");
        }
        let defect = ops::max_abs(&(basis.adjoint() * &basis - ops::identity(n)));
        if defect > 1e-10 {
            return invalid(format!("QND basis is not orthonormal (defect {defect:.2e})"));
        }
        if lambda.len() != eta.len() || eta.len() != imaginary.len() {
            return invalid("lambda, eta and imaginary flags must have one entry per channel");
        }
        for (k, row) in lambda.iter().enumerate() {
            if row.len() != n {
                return invalid(format!("lambda row {k} has length {} != {n}", row.len()));
            }
            if row.iter().any(|x| !x.is_finite()) {
                return invalid(format!("lambda row {k} is not finite"));
            }
        }
        if let Some(e) = eta.iter().find(|e| !(0.0..=1.0).contains(*e)) {
            return invalid(format!("efficiency {e} outside [0, 1]"));
        }
        Ok(Self { basis, lambda, eta, imaginary })
    }

    /// Homodyne channels diagonal in the computational basis.
    pub fn diagonal(lambda: Vec<Vec<f64>>, eta: Vec<f64>) -> Result<Self> {
        let n = lambda.first().map_or(0, |r| r.len());
        let k = lambda.len();
        Self::new(ops::identity(n), lambda, eta, vec![false; k])
    }

    /// Heterodyne detection: channels `L_k` with `eta_re[k]` followed by `i·L_k` with `eta_im[k]`.
    pub fn heterodyne(lambda: Vec<Vec<f64>>, eta_re: Vec<f64>, eta_im: Vec<f64>) -> Result<Self> {
        if eta_re.len() != lambda.len() || eta_im.len() != lambda.len() {
            return invalid("heterodyne efficiencies must match the number of operators");
        }
        let n = lambda.first().map_or(0, |r| r.len());
        let k = lambda.len();
        let mut all = lambda.clone();
        all.extend(lambda);
        let mut eta = eta_re;
        eta.extend(eta_im);
        let mut imag = vec![false; k];
        imag.extend(vec![true; k]);
        Self::new(ops::identity(n), all, eta, imag)
    }

    pub fn n(&self) -> usize {
        self.basis.nrows()
    }

    pub fn n_channels(&self) -> usize {
        self.eta.len()
    }

    pub fn lambda(&self) -> &[Vec<f64>] {
        &self.lambda
    }

    pub fn eta(&self) -> &[f64] {
        &self.eta
    }

    pub fn imaginary(&self) -> &[bool] {
        &self.imaginary
    }

    pub fn basis(&self) -> &Operator {
        &self.basis
    }

    pub fn is_heterodyne(&self) -> bool {
        self.imaginary.iter().any(|&b| b)
    }

    /// Channel operators in the original (not eigen-) basis.
    pub fn operators(&self) -> Vec<Operator> {
        self.lambda
            .iter()
            .zip(&self.imaginary)
            .map(|(row, &im)| {
                let l = &self.basis * ops::diag(row) * self.basis.adjoint();
                if im {
                    l * I
                } else {
                    ops::hermitize(&l)
                }
            })
            .collect()
    }

    pub fn to_scenario(&self, h: Option<Operator>) -> Result<ScenarioModel> {
        let n = self.n();
        let channels = self
            .operators()
            .into_iter()
            .zip(&self.eta)
            .map(|(l, &e)| MeasurementChannel::new(l, e))
            .collect::<Result<Vec<_>>>()?;
        ScenarioModel::new(h.unwrap_or_else(|| ops::zeros(n)), channels, vec![n])
    }

    pub fn to_eigenbasis(&self, rho: &Operator) -> Operator {
        self.basis.adjoint() * rho * &self.basis
    }

    /// Deterministic decay rate of `c^(a,b)`: `Σ_k (1-η_k)(λ_k(a)-λ_k(b))²`.
    pub fn coherence_decay_rate(&self, a: usize, b: usize) -> f64 {
        self.lambda.iter().zip(&self.eta).map(|(l, e)| (1.0 - e) * (l[a] - l[b]).powi(2)).sum()
    }

    /// `σ²_α = Σ_b α_b Σ_k λ_k(b)² η_k` over population-informative channels.
    pub fn alpha_variance(&self, alpha: &[f64]) -> f64 {
        self.population_channels()
            .map(|k| (0..self.n()).map(|b| alpha[b] * self.lambda[k][b].powi(2) * self.eta[k]).sum::<f64>())
            .sum()
    }

    fn population_channels(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.n_channels()).filter(|&k| !self.imaginary[k] && self.eta[k] > 0.0)
    }
}

/// Orthonormal basis of `{x : rows·x = 0}`. Gaussian elimination pivots on
/// columns left to right (largest entry within the column), so the output is
/// deterministic for a given input.
pub fn null_space(rows: &[Vec<f64>], n: usize) -> Vec<DVector<f64>> {
    let mut m: Vec<Vec<f64>> = rows.to_vec();
    let scale = m.iter().flatten().fold(0.0f64, |a, x| a.max(x.abs())).max(1.0);
    let mut pivots = Vec::new();
    let mut r = 0;
    for col in 0..n {
        if r == m.len() {
            break;
        }
        let (best, val) = (r..m.len())
            .map(|i| (i, m[i][col].abs()))
            .fold((r, -1.0), |acc, x| if x.1 > acc.1 { x } else { acc });
        if val <= NULL_TOL * scale {
            continue;
        }
        m.swap(r, best);
        let p = m[r][col];
        for x in m[r].iter_mut() {
            *x /= p;
        }
        for i in 0..m.len() {
            if i != r {
                let f = m[i][col];
                if f != 0.0 {
                    for j in 0..n {
                        m[i][j] -= f * m[r][j];
                    }
                }
            }
        }
        pivots.push(col);
        r += 1;
    }
    let mut basis: Vec<DVector<f64>> = Vec::new();
    for free in (0..n).filter(|c| !pivots.contains(c)) {
        let mut v = DVector::zeros(n);
        v[free] = 1.0;
        for (i, &pc) in pivots.iter().enumerate() {
            v[pc] = -m[i][free];
        }
        // Modified Gram–Schmidt, applied twice for stability.
        for _ in 0..2 {
            for b in &basis {
                let d = b.dot(&v);
                v -= b * d;
            }
        }
        let norm = v.norm();
        if norm > NULL_TOL {
            basis.push(v / norm);
        }
    }
    basis
}

/// Population-exponent vectors `α` with their variances `σ²_α ≥ 0`.
pub fn z_alpha_basis(qnd: &QndModel) -> Vec<(DVector<f64>, f64)> {
    let n = qnd.n();
    let mut rows = vec![vec![1.0; n]];
    rows.extend(qnd.population_channels().map(|k| qnd.lambda[k].clone()));
    null_space(&rows, n)
        .into_iter()
        .map(|mut a| {
            let mut s = qnd.alpha_variance(a.as_slice());
            if s < 0.0 {
                a = -a;
                s = -s;
            }
            (a, s.max(0.0))
        })
        .collect()
}

/// `Σ_b α_b ln ρ_bb` for a state already in the eigenbasis; `None` if a
/// required population is below the floor.
pub fn log_z(rho_eig: &Operator, alpha: &[f64]) -> Option<f64> {
    let mut acc = Compensated::default();
    for (b, &a) in alpha.iter().enumerate() {
        if a.abs() < 1e-14 {
            continue;
        }
        let p = rho_eig[(b, b)].re;
        if p < POPULATION_FLOOR {
            return None;
        }
        acc.add(a * p.ln());
    }
    Some(acc.value())
}

#[derive(Clone, Debug)]
pub struct QndInvariantSet {
    /// Pairs `(a, b)` with `a < b`, in lexicographic order.
    pub pairs: Vec<(usize, usize)>,
    pub phases: Vec<Option<f64>>,
    pub coherence: Vec<Option<f64>>,
    pub alphas: Vec<(DVector<f64>, f64)>,
    pub log_z: Vec<Option<f64>>,
}

impl QndInvariantSet {
    pub fn pair_index(&self, a: usize, b: usize) -> Option<usize> {
        self.pairs.iter().position(|&p| p == (a.min(b), a.max(b)))
    }
}

/// Invariant coordinates of `rho` (given in the original basis).
pub fn invariants_of(qnd: &QndModel, rho: &Operator) -> QndInvariantSet {
    let r = qnd.to_eigenbasis(rho);
    let n = qnd.n();
    let mut pairs = Vec::new();
    let mut phases = Vec::new();
    let mut coherence = Vec::new();
    for a in 0..n {
        for b in a + 1..n {
            pairs.push((a, b));
            let (pa, pb) = (r[(a, a)].re, r[(b, b)].re);
            let z = r[(a, b)];
            let ok = pa >= POPULATION_FLOOR && pb >= POPULATION_FLOOR;
            coherence.push(ok.then(|| z.norm_sqr() / (pa * pb)));
            phases.push((ok && z.norm() >= POPULATION_FLOOR).then(|| z.arg()));
        }
    }
    let alphas = z_alpha_basis(qnd);
    let log_z = alphas.iter().map(|(a, _)| log_z(&r, a.as_slice())).collect();
    QndInvariantSet { pairs, phases, coherence, alphas, log_z }
}

/// Populations after integrated records `y` (one per channel) at time `t`.
/// Quadrature and zero-efficiency channels carry no population information.
pub fn populations_explicit(qnd: &QndModel, p0: &[f64], y: &[f64], t: f64) -> Result<Vec<f64>> {
    let n = qnd.n();
    if p0.len() != n || y.len() != qnd.n_channels() {
        return invalid("populations_explicit: length mismatch");
    }
    if t < 0.0 || !t.is_finite() {
        return invalid("populations_explicit: t must be finite and >= 0");
    }
    if p0.iter().any(|p| *p < 0.0 || !p.is_finite()) || p0.iter().all(|p| *p == 0.0) {
        return invalid("populations_explicit: initial populations must be nonnegative and not all zero");
    }
    let logs: Vec<f64> = (0..n)
        .map(|b| {
            if p0[b] == 0.0 {
                return f64::NEG_INFINITY;
            }
            let mut acc = Compensated::default();
            acc.add(p0[b].ln());
            for k in qnd.population_channels() {
                let (l, e) = (qnd.lambda[k][b], qnd.eta[k]);
                acc.add(2.0 * (l * e.sqrt() * y[k] - l * l * e * t));
            }
            acc.value()
        })
        .collect();
    Ok(normalize_logs(&logs))
}

fn normalize_logs(logs: &[f64]) -> Vec<f64> {
    let mx = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = logs.iter().map(|l| (l - mx).exp()).collect();
    let s: f64 = w.iter().sum();
    w.into_iter().map(|x| x / s).collect()
}

#[derive(Clone, Debug)]
pub struct HeterodynePhase {
    /// `γ_k = √η_k · y_k` for each quadrature channel, in channel order.
    pub gamma: Vec<f64>,
    /// Conserved phase combinations: coefficient vectors over `pairs`.
    pub beta_basis: Vec<DVector<f64>>,
    pub pairs: Vec<(usize, usize)>,
    channels: Vec<usize>,
    lambda: Vec<Vec<f64>>,
}

impl HeterodynePhase {
    /// Predicted shift of `arg ρ(a,b)` relative to t=0.
    pub fn phase_shift(&self, a: usize, b: usize) -> f64 {
        self.channels
            .iter()
            .zip(&self.gamma)
            .map(|(&k, g)| g * (self.lambda[k][a] - self.lambda[k][b]))
            .sum()
    }
}

pub fn heterodyne_phase_state(qnd: &QndModel, y: &[f64]) -> Result<HeterodynePhase> {
    if !qnd.is_heterodyne() {
        return invalid("heterodyne_phase_state requires quadrature (i·L) channels");
    }
    if y.len() != qnd.n_channels() {
        return invalid("heterodyne_phase_state: one integrated record per channel expected");
    }
    let n = qnd.n();
    let channels: Vec<usize> = (0..qnd.n_channels()).filter(|&k| qnd.imaginary[k]).collect();
    let gamma = channels.iter().map(|&k| qnd.eta[k].sqrt() * y[k]).collect();
    let pairs: Vec<(usize, usize)> = (0..n).flat_map(|a| (a + 1..n).map(move |b| (a, b))).collect();
    let rows: Vec<Vec<f64>> = channels
        .iter()
        .filter(|&&k| qnd.eta[k] > 0.0)
        .map(|&k| pairs.iter().map(|&(a, b)| qnd.lambda[k][a] - qnd.lambda[k][b]).collect())
        .collect();
    let beta_basis = null_space(&rows, pairs.len());
    Ok(HeterodynePhase { gamma, beta_basis, pairs, channels, lambda: qnd.lambda.clone() })
}

/// Continue a phase onto the branch nearest to the previous value.
pub fn unwrap_phase(prev: f64, raw: f64) -> f64 {
    raw + 2.0 * PI * ((prev - raw) / (2.0 * PI)).round()
}

/// Width `σ_t` and centre `γ_t` of the position likelihood after monitoring
/// `L = X` for time `t`: `p_t ∝ p_0 · exp(-(x-γ_t)²/(2σ_t²))`.
pub fn position_likelihood(y: f64, t: f64, eta: f64) -> (f64, f64) {
    let sigma = 1.0 / (2.0 * (eta * t).sqrt());
    let gamma = y / (2.0 * eta.sqrt() * t);
    (sigma, gamma)
}

/// Posterior of a sampled position distribution on a uniform grid.
pub fn position_posterior(xs: &[f64], p0: &[f64], y: f64, t: f64, eta: f64) -> Result<Vec<f64>> {
    if xs.len() != p0.len() || xs.len() < 2 {
        return invalid("position_posterior: grid and distribution must match and have >= 2 points");
    }
    let h = xs[1] - xs[0];
    if !(h > 0.0) || xs.windows(2).any(|w| ((w[1] - w[0]) - h).abs() > 1e-9 * h.abs().max(1.0)) {
        return invalid("position_posterior: grid must be uniform and increasing");
    }
    if !(0.0..=1.0).contains(&eta) || t < 0.0 {
        return invalid("position_posterior: need t >= 0 and eta in [0, 1]");
    }
    if p0.iter().any(|p| *p < 0.0 || !p.is_finite()) || p0.iter().all(|p| *p == 0.0) {
        return invalid("position_posterior: prior must be nonnegative and not all zero");
    }
    if t == 0.0 || eta == 0.0 {
        return Ok(p0.to_vec());
    }
    let (sigma, gamma) = position_likelihood(y, t, eta);
    let logs: Vec<f64> = xs
        .iter()
        .zip(p0)
        .map(|(x, p)| if *p == 0.0 { f64::NEG_INFINITY } else { p.ln() - (x - gamma).powi(2) / (2.0 * sigma * sigma) })
        .collect();
    Ok(normalize_logs(&logs))
}

/// Three-qubit repetition code with syndrome measurements and optional
/// unmonitored bit flips.
#[derive(Clone, Debug)]
pub struct RepetitionModel {
    pub model: ScenarioModel,
    pub syndromes: Vec<Operator>,
    /// Projectors onto V0..V3 (codespace and the three single-flip spaces).
    pub projectors: [Operator; 4],
    pub qnd: QndModel,
}

/// Basis indices spanning V0..V3 (qubit 1 is the most significant bit).
pub const REPETITION_SUBSPACES: [[usize; 2]; 4] = [[0b000, 0b111], [0b100, 0b011], [0b010, 0b101], [0b001, 0b110]];

/// `n_syndromes = 2` uses `σz2σz3` and `σz1σz2`; `3` adds `σz1σz3`.
/// Flip channels `√γ σx,q` (η = 0) are added for each qubit in `flip_qubits` (1-based).
pub fn repetition_model(eta: f64, gamma_flip: f64, n_syndromes: usize, flip_qubits: &[usize]) -> Result<RepetitionModel> {
    if !(0.0..=1.0).contains(&eta) {
        return invalid(format!("efficiency {eta} outside [0, 1]"));
    }
    if gamma_flip < 0.0 || !gamma_flip.is_finite() {
        return invalid("flip rate must be >= 0");
    }
    let labels: &[&str] = match n_syndromes {
        2 => &["IZZ", "ZZI"],
        3 => &["IZZ", "ZIZ", "ZZI"],
        _ => return invalid("repetition code supports 2 or 3 syndromes"),
    };
    let syndromes = labels.iter().map(|s| ops::pauli_string(s)).collect::<Result<Vec<_>>>()?;
    let lambda: Vec<Vec<f64>> = syndromes.iter().map(|l| (0..8).map(|i| l[(i, i)].re).collect()).collect();
    let qnd = QndModel::diagonal(lambda, vec![eta; syndromes.len()])?;
    let mut channels: Vec<MeasurementChannel> =
        syndromes.iter().map(|l| MeasurementChannel::new(l.clone(), eta)).collect::<Result<_>>()?;
    if gamma_flip > 0.0 {
        for &q in flip_qubits {
            if !(1..=3).contains(&q) {
                return invalid(format!("flip qubit {q} not in 1..=3"));
            }
            let mut spec = ['I'; 3];
            spec[q - 1] = 'X';
            let x = ops::pauli_string(&spec.iter().collect::<String>())?;
            channels.push(MeasurementChannel::new(x * c(gamma_flip.sqrt(), 0.0), 0.0)?);
        }
    }
    let model = ScenarioModel::new(ops::zeros(8), channels, vec![2, 2, 2])?;
    let projectors = REPETITION_SUBSPACES.map(|[a, b]| ops::ket_bra(8, a, a) + ops::ket_bra(8, b, b));
    Ok(RepetitionModel { model, syndromes, projectors, qnd })
}

/// `ρ(000)ρ(010) / (ρ(001)ρ(100))`, conserved with two syndromes.
pub fn repetition_conserved_z(rho: &Operator) -> Option<f64> {
    let p = |i: usize| rho[(i, i)].re;
    let den = p(0b001) * p(0b100);
    (den >= POPULATION_FLOOR * POPULATION_FLOOR).then(|| p(0b000) * p(0b010) / den)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn qutrit() -> QndModel {
        QndModel::diagonal(vec![vec![0.0, 1.0, 1.8]], vec![0.8]).unwrap()
    }

    #[test]
    fn qutrit_alpha() {
        let basis = z_alpha_basis(&qutrit());
        assert_eq!(basis.len(), 1);
        let (a, s) = &basis[0];
        let expect = DVector::from_vec(vec![0.8, -1.8, 1.0]);
        let scale = expect.norm();
        assert!((a - expect.unscale(scale)).norm() < 1e-12);
        // Rate for the unnormalized vector: 2η(λ2−λ1)(λ2−λ0)(λ1−λ0).
        assert!((2.0 * s * scale - 2.304).abs() < 1e-12);
    }

    #[test]
    fn degenerate_pair_has_zero_variance() {
        let q = QndModel::diagonal(vec![vec![1.0, 1.0, -1.0]], vec![0.5]).unwrap();
        let basis = z_alpha_basis(&q);
        assert_eq!(basis.len(), 1);
        let (a, s) = &basis[0];
        assert!((a[0] + a[1]).abs() < 1e-12 && a[2].abs() < 1e-12);
        assert!(s.abs() < 1e-14);
    }

    #[test]
    fn number_quadruple_in_span() {
        let n = 6;
        let q = QndModel::diagonal(vec![(0..n).map(|k| k as f64).collect()], vec![1.0]).unwrap();
        let basis = z_alpha_basis(&q);
        assert_eq!(basis.len(), n - 2);
        // (n1..n4) = (0, 2, 3, 5): exponents −(n3−n2) at n1, +(n4−n1) at n2, −(n4−n1) at n3, +(n3−n2) at n4.
        let mut v = DVector::zeros(n);
        v[0] = -1.0;
        v[2] = 5.0;
        v[3] = -5.0;
        v[5] = 1.0;
        let proj: DVector<f64> = basis.iter().map(|(a, _)| a * a.dot(&v)).fold(DVector::zeros(n), |s, x| s + x);
        assert!((proj - v).norm() < 1e-10);
    }

    #[test]
    fn empty_basis_for_generic_pair() {
        let q = QndModel::diagonal(vec![vec![0.0, 1.0]], vec![1.0]).unwrap();
        assert!(z_alpha_basis(&q).is_empty());
    }

    #[test]
    fn invariants_of_pure_state() {
        let psi = DVector::from_vec(vec![c(0.3f64.sqrt(), 0.0), c(0.55f64.sqrt(), 0.0), c(0.15f64.sqrt(), 0.0)]);
        let inv = invariants_of(&qutrit(), &ops::pure(&psi));
        for cval in &inv.coherence {
            assert!((cval.unwrap() - 1.0).abs() < 1e-12);
        }
        let eig = invariants_of(&qutrit(), &ops::fock(1, 2));
        assert!(eig.coherence.iter().all(|x| x.is_none()));
        assert!(eig.log_z.iter().all(|x| x.is_none()));
    }

    #[test]
    fn populations_trivial_and_favoured() {
        let q = qutrit();
        let p0 = [0.3, 0.55, 0.15];
        let p = populations_explicit(&q, &p0, &[0.0], 0.0).unwrap();
        for (a, b) in p.iter().zip(&p0) {
            assert!((a - b).abs() < 1e-15);
        }
        let t = 50.0;
        for star in 0..3 {
            let y = 2.0 * 0.8f64.sqrt() * q.lambda()[0][star] * t;
            let p = populations_explicit(&q, &p0, &[y], t).unwrap();
            let arg = (0..3).max_by(|&a, &b| p[a].total_cmp(&p[b])).unwrap();
            assert_eq!(arg, star);
        }
        assert!(populations_explicit(&q, &[0.0; 3], &[0.0], 1.0).is_err());
    }

    #[test]
    fn heterodyne_number_model() {
        let n = 4;
        let lam: Vec<f64> = (0..n).map(|k| k as f64).collect();
        let q = QndModel::heterodyne(vec![lam], vec![0.5], vec![0.5]).unwrap();
        let h = heterodyne_phase_state(&q, &[0.3, 0.7]).unwrap();
        let g = 0.5f64.sqrt() * 0.7;
        assert!((h.gamma[0] - g).abs() < 1e-15);
        assert!((h.phase_shift(3, 1) - 2.0 * g).abs() < 1e-15);
        assert_eq!(h.phase_shift(2, 2), 0.0);
        assert_eq!(h.beta_basis.len(), n * (n - 1) / 2 - 1);
        assert!(heterodyne_phase_state(&qutrit(), &[0.0]).is_err());
    }

    #[test]
    fn unwrap_nearest_branch() {
        assert!((unwrap_phase(3.1, -3.1) - (2.0 * PI - 3.1)).abs() < 1e-12);
        assert!((unwrap_phase(0.1, 0.2) - 0.2).abs() < 1e-15);
        assert!((unwrap_phase(13.0, 0.5) - (0.5 + 4.0 * PI)).abs() < 1e-12);
    }

    #[test]
    fn repetition_signatures() {
        let rep = repetition_model(0.7, 0.0, 3, &[]).unwrap();
        let sig = |idx: usize| -> Vec<f64> { rep.syndromes.iter().map(|l| l[(idx, idx)].re).collect() };
        assert_eq!(sig(0b100), vec![1.0, -1.0, -1.0]);
        assert_eq!(sig(0b011), vec![1.0, -1.0, -1.0]);
        assert_eq!(sig(0b010), vec![-1.0, 1.0, -1.0]);
        assert_eq!(sig(0b001), vec![-1.0, -1.0, 1.0]);
        assert_eq!(sig(0b111), vec![1.0, 1.0, 1.0]);
        let total: Operator = rep.projectors.iter().fold(ops::zeros(8), |s, p| s + p);
        assert!(ops::max_abs(&(total - ops::identity(8))) < 1e-15);
        // Cross-subspace coherences decay at 8(1−η).
        assert!((rep.qnd.coherence_decay_rate(0b000, 0b100) - 8.0 * 0.3).abs() < 1e-12);
        assert_eq!(rep.qnd.coherence_decay_rate(0b000, 0b111), 0.0);
        assert!(repetition_model(0.5, 0.1, 2, &[4]).is_err());
    }

    #[test]
    fn repetition_z_is_an_alpha_combination() {
        let rep = repetition_model(0.9, 0.0, 2, &[]).unwrap();
        let mut v = vec![0.0; 8];
        v[0b000] = 1.0;
        v[0b010] = 1.0;
        v[0b001] = -1.0;
        v[0b100] = -1.0;
        let record_weight = |q: &QndModel| -> Vec<f64> {
            q.lambda().iter().map(|l| l.iter().zip(&v).map(|(a, b)| a * b).sum()).collect()
        };
        assert!(record_weight(&rep.qnd).iter().all(|w| *w == 0.0));
        assert!(rep.qnd.alpha_variance(&v).abs() < 1e-15);
        // The extra syndrome couples z to its record, so z is no longer conserved.
        let rep3 = repetition_model(0.9, 0.0, 3, &[]).unwrap();
        assert_eq!(record_weight(&rep3.qnd), vec![0.0, 4.0, 0.0]);
        let sym = ops::maximally_mixed(8);
        assert!((repetition_conserved_z(&sym).unwrap() - 1.0).abs() < 1e-14);
    }
}
