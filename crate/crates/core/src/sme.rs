//! Itô stochastic master equation
//!
//! `dρ = −i[H,ρ]dt + Σ F_L(ρ)dt + Σ √η G_L(ρ)dw`, with outputs
//! `dy = √η Tr(Lρ + ρL†)dt + dw`.
//!
//! The Euler–Maruyama step is written in terms of the output increment `dy`
//! (the innovation `dy − √η Tr(..)dt` drives the diffusion). Simulation builds
//! `dy` from fresh noise and record replay reuses it, so both paths execute the
//! same arithmetic and replay is bit-identical.

use std::sync::Arc;

use nalgebra::{Cholesky, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::error::{invalid, Error, Result};
use crate::ops::{self, r, trace, Operator, C64};

/// Eigenvalues below this are clipped after each step.
pub const CLIP_FLOOR: f64 = -1e-10;

#[derive(Clone, Debug)]
pub struct MeasurementChannel {
    l: Operator,
    ldag: Operator,
    ldl: Operator,
    eta: f64,
}

impl MeasurementChannel {
    pub fn new(l: Operator, eta: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&eta) {
            return invalid(format!("efficiency {eta} outside [0,1]"));
        }
        if !l.is_square() || !ops::is_finite(&l) {
            return invalid("channel operator must be square and finite");
        }
        let ldag = l.adjoint();
        let ldl = &ldag * &l;
        Ok(Self { l, ldag, ldl, eta })
    }

    pub fn l(&self) -> &Operator {
        &self.l
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    pub fn dim(&self) -> usize {
        self.l.nrows()
    }

    /// `Tr(Lρ + ρL†)`.
    pub fn output_mean(&self, rho: &Operator) -> f64 {
        2.0 * ops::trace_prod(&self.l, rho).re
    }
}

/// Scalar control signal.
#[derive(Clone)]
pub enum Signal {
    Constant(f64),
    Function(Arc<dyn Fn(f64) -> f64 + Send + Sync>),
}

impl Signal {
    pub fn at(&self, t: f64) -> f64 {
        match self {
            Signal::Constant(c) => *c,
            Signal::Function(f) => f(t),
        }
    }
}

impl std::fmt::Debug for Signal {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Signal::Constant(c) => write!(f, "Constant({c})"),
            Signal::Function(_) => write!(f, "Function(..)"),
        }
    }
}

/// Time-dependent Hamiltonian contribution `u_t·A_u + v_t·A_v`.
#[derive(Clone, Debug)]
pub struct Drive {
    pub u: Signal,
    pub v: Signal,
    pub op_u: Operator,
    pub op_v: Operator,
}

#[derive(Clone, Debug)]
pub struct ScenarioModel {
    h: Operator,
    channels: Vec<MeasurementChannel>,
    drive: Option<Drive>,
    factor_dims: Vec<usize>,
}

impl ScenarioModel {
    pub fn new(h: Operator, channels: Vec<MeasurementChannel>, factor_dims: Vec<usize>) -> Result<Self> {
        let dim = h.nrows();
        if !h.is_square() || dim == 0 {
            return invalid("Hamiltonian must be a nonempty square matrix");
        }
        if ops::hermiticity_defect(&h) > 1e-12 {
            return invalid("Hamiltonian is not Hermitian");
        }
        if let Some(ch) = channels.iter().find(|c| c.dim() != dim) {
            return invalid(format!("channel dimension {} != {dim}", ch.dim()));
        }
        let prod: usize = factor_dims.iter().product();
        if prod != dim {
            return invalid(format!("factor dims {factor_dims:?} do not multiply to {dim}"));
        }
        Ok(Self { h, channels, drive: None, factor_dims })
    }

    pub fn with_drive(mut self, drive: Drive) -> Result<Self> {
        let dim = self.dim();
        for op in [&drive.op_u, &drive.op_v] {
            if op.nrows() != dim || ops::hermiticity_defect(op) > 1e-12 {
                return invalid("drive operators must be Hermitian with the model dimension");
            }
        }
        self.drive = Some(drive);
        Ok(self)
    }

    pub fn dim(&self) -> usize {
        self.h.nrows()
    }

    pub fn h(&self) -> &Operator {
        &self.h
    }

    pub fn channels(&self) -> &[MeasurementChannel] {
        &self.channels
    }

    pub fn drive(&self) -> Option<&Drive> {
        self.drive.as_ref()
    }

    pub fn factor_dims(&self) -> &[usize] {
        &self.factor_dims
    }

    /// Copy of the model with every efficiency replaced.
    pub fn with_efficiencies(&self, etas: &[f64]) -> Result<Self> {
        if etas.len() != self.channels.len() {
            return invalid("efficiency count mismatch");
        }
        let channels = self
            .channels
            .iter()
            .zip(etas)
            .map(|(c, &e)| MeasurementChannel::new(c.l.clone(), e))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { channels, ..self.clone() })
    }

    pub fn hamiltonian_at(&self, t: f64) -> Operator {
        match &self.drive {
            None => self.h.clone(),
            Some(d) => &self.h + &d.op_u * r(d.u.at(t)) + &d.op_v * r(d.v.at(t)),
        }
    }

    fn check_state(&self, rho: &Operator) -> Result<()> {
        if rho.nrows() != self.dim() || rho.ncols() != self.dim() {
            return invalid(format!("state dimension {:?} != model dimension {}", rho.shape(), self.dim()));
        }
        Ok(())
    }
}

/// `F_L(ρ) = LρL† − ½{L†L, ρ}`.
pub fn dissipator(ch: &MeasurementChannel, rho: &Operator) -> Operator {
    let lr = &ch.l * rho;
    let ldlr = &ch.ldl * rho;
    &lr * &ch.ldag - (&ldlr + ldlr.adjoint()) * r(0.5)
}

/// `G_L(ρ) = Lρ + ρL† − Tr(Lρ + ρL†)ρ` (without the √η factor).
pub fn diffusion(ch: &MeasurementChannel, rho: &Operator) -> Result<Operator> {
    if ch.dim() != rho.nrows() {
        return invalid("dimension mismatch between channel and state");
    }
    let lr = &ch.l * rho;
    let tr = 2.0 * trace(&lr).re;
    Ok(&lr + lr.adjoint() - rho * r(tr))
}

fn drift_with(h: &Operator, model: &ScenarioModel, rho: &Operator) -> Operator {
    let hr = h * rho;
    // −i(Hρ − ρH) with ρH = (Hρ)†
    let mut out = (&hr - hr.adjoint()) * C64::new(0.0, -1.0);
    for ch in &model.channels {
        out += dissipator(ch, rho);
    }
    out
}

/// Deterministic part `−i[H(t),ρ] + Σ F_L(ρ)`.
pub fn drift(model: &ScenarioModel, rho: &Operator, t: f64) -> Result<Operator> {
    model.check_state(rho)?;
    Ok(drift_with(&model.hamiltonian_at(t), model, rho))
}

/// Bookkeeping from the positivity repair.
#[derive(Clone, Copy, Debug, Default)]
pub struct RepairInfo {
    pub clipped: bool,
    /// Minimum eigenvalue before clipping (0 when no clip was needed).
    pub negativity: f64,
}

/// Hermitize, renormalize, clip eigenvalues below [`CLIP_FLOOR`], renormalize.
pub fn repair(rho: &Operator) -> Result<(Operator, RepairInfo)> {
    if !ops::is_finite(rho) {
        return invalid("non-finite state");
    }
    let n = rho.nrows();
    let mut h = ops::hermitize(rho);
    let tr = trace(&h).re;
    if !(tr > 0.0) {
        return invalid(format!("non-positive trace {tr}"));
    }
    h /= r(tr);
    let shifted = &h + ops::identity(n) * r(-CLIP_FLOOR);
    if Cholesky::new(shifted).is_some() {
        return Ok((h, RepairInfo::default()));
    }
    let eig = SymmetricEigen::new(h.clone());
    let min = eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
    if min >= CLIP_FLOOR {
        return Ok((h, RepairInfo::default()));
    }
    let vals: Vec<f64> = eig.eigenvalues.iter().map(|&e| if e < CLIP_FLOOR { 0.0 } else { e }).collect();
    let v = &eig.eigenvectors;
    let mut out = v * ops::diag(&vals) * v.adjoint();
    out = ops::hermitize(&out);
    let tr2 = trace(&out).re;
    out /= r(tr2);
    Ok((out, RepairInfo { clipped: true, negativity: min }))
}

/// Per-channel `Tr(Lρ + ρL†)`.
pub fn output_means(model: &ScenarioModel, rho: &Operator) -> Vec<f64> {
    model.channels.iter().map(|c| c.output_mean(rho)).collect()
}

/// One update driven by output increments `dy` (shared by simulation and replay).
fn step_core(
    model: &ScenarioModel,
    rho: &Operator,
    t: f64,
    dt: f64,
    means: &[f64],
    dy: &[f64],
) -> Result<(Operator, RepairInfo)> {
    let h = model.hamiltonian_at(t + 0.5 * dt);
    let mut next = rho + drift_with(&h, model, rho) * r(dt);
    for (k, ch) in model.channels.iter().enumerate() {
        if ch.eta == 0.0 {
            continue;
        }
        let se = ch.eta.sqrt();
        let innov = dy[k] - se * means[k] * dt;
        let lr = &ch.l * rho;
        let g = &lr + lr.adjoint() - rho * r(means[k]);
        next += g * r(se * innov);
    }
    repair(&next)
}

fn fail(step: usize, t: f64, e: Error) -> Error {
    match e {
        Error::IntegrationFailure { .. } => e,
        other => Error::IntegrationFailure { step, t, msg: other.to_string() },
    }
}

/// Single Euler–Maruyama step from explicit noise increments; returns `(ρ′, dy)`.
pub fn step_ito(model: &ScenarioModel, rho: &Operator, t: f64, dt: f64, dw: &[f64]) -> Result<(Operator, Vec<f64>)> {
    if !(dt > 0.0) {
        return invalid("dt must be positive");
    }
    model.check_state(rho)?;
    if dw.len() != model.channels.len() {
        return invalid("one noise increment per channel required");
    }
    let means = output_means(model, rho);
    let dy: Vec<f64> = model
        .channels
        .iter()
        .zip(&means)
        .zip(dw)
        .map(|((c, m), w)| c.eta.sqrt() * m * dt + w)
        .collect();
    let (next, _) = step_core(model, rho, t, dt, &means, &dy).map_err(|e| fail(0, t, e))?;
    Ok((next, dy))
}

/// Neumaier-compensated running sum.
#[derive(Clone, Copy, Debug, Default)]
pub struct Compensated {
    sum: f64,
    comp: f64,
}

impl Compensated {
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

/// One realization: noise, outputs and snapshots.
#[derive(Clone, Debug)]
pub struct TrajectoryRecord {
    pub seed: u64,
    pub index: usize,
    pub dt: f64,
    pub n_steps: usize,
    pub n_channels: usize,
    /// Step-major noise increments (`n_steps × n_channels`).
    pub dw: Vec<f64>,
    /// Step-major output increments.
    pub dy: Vec<f64>,
    pub snapshot_steps: Vec<usize>,
    pub times: Vec<f64>,
    pub snapshots: Vec<Operator>,
    /// Integrated outputs `y_t` at each snapshot.
    pub y: Vec<Vec<f64>>,
    pub clip_events: usize,
    /// Most negative pre-clip eigenvalue seen (0 if never clipped).
    pub worst_negativity: f64,
}

impl TrajectoryRecord {
    pub fn dy_at(&self, step: usize) -> &[f64] {
        &self.dy[step * self.n_channels..(step + 1) * self.n_channels]
    }

    pub fn dw_at(&self, step: usize) -> &[f64] {
        &self.dw[step * self.n_channels..(step + 1) * self.n_channels]
    }

    /// Compensated `y_t = Σ dy` over the first `steps` steps.
    pub fn integrated_y(&self, steps: usize) -> Vec<f64> {
        integrate_outputs(&self.dy, self.n_channels, steps)
    }
}

pub fn integrate_outputs(dy: &[f64], n_channels: usize, steps: usize) -> Vec<f64> {
    let mut acc = vec![Compensated::default(); n_channels];
    for s in 0..steps {
        for (k, a) in acc.iter_mut().enumerate() {
            a.add(dy[s * n_channels + k]);
        }
    }
    acc.iter().map(|a| a.value()).collect()
}

/// Map requested times onto the step grid.
pub fn snapshot_grid(times: &[f64], dt: f64) -> Result<Vec<usize>> {
    if !(dt > 0.0) {
        return invalid("dt must be positive");
    }
    times
        .iter()
        .map(|&t| {
            if t < 0.0 {
                return invalid(format!("negative snapshot time {t}"));
            }
            let k = (t / dt).round();
            if (k * dt - t).abs() > 1e-9 {
                return invalid(format!("snapshot time {t} not on the dt={dt} grid"));
            }
            Ok(k as usize)
        })
        .collect()
}

fn steps_for(t_final: f64, dt: f64) -> Result<usize> {
    if !(t_final >= 0.0) {
        return invalid("T must be nonnegative");
    }
    Ok(snapshot_grid(&[t_final], dt)?[0])
}

/// Noise source for one trajectory: ChaCha8 seeded by `seed`, stream = trajectory index.
pub fn trajectory_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

/// Draw `n_steps × n_channels` Wiener increments of variance `dt`.
pub fn draw_increments(seed: u64, index: usize, n_steps: usize, n_channels: usize, dt: f64) -> Vec<f64> {
    let mut rng = trajectory_rng(seed, index);
    let sd = dt.sqrt();
    (0..n_steps * n_channels)
        .map(|_| {
            let z: f64 = StandardNormal.sample(&mut rng);
            sd * z
        })
        .collect()
}

/// Integrate one trajectory from prescribed noise increments.
pub fn run_with_increments(
    model: &ScenarioModel,
    rho0: &Operator,
    dt: f64,
    dw: Vec<f64>,
    snapshot_steps: &[usize],
) -> Result<TrajectoryRecord> {
    model.check_state(rho0)?;
    let nc = model.channels.len();
    let n_steps = if nc == 0 { snapshot_steps.iter().copied().max().unwrap_or(0) } else { dw.len() / nc };
    if nc > 0 && dw.len() != n_steps * nc {
        return invalid("noise length is not a multiple of the channel count");
    }
    if snapshot_steps.iter().any(|&s| s > n_steps) {
        return invalid("snapshot beyond the simulated horizon");
    }
    let mut rec = TrajectoryRecord {
        seed: 0,
        index: 0,
        dt,
        n_steps,
        n_channels: nc,
        dy: Vec::with_capacity(dw.len()),
        dw,
        snapshot_steps: snapshot_steps.to_vec(),
        times: snapshot_steps.iter().map(|&s| s as f64 * dt).collect(),
        snapshots: vec![ops::zeros(0); snapshot_steps.len()],
        y: vec![Vec::new(); snapshot_steps.len()],
        clip_events: 0,
        worst_negativity: 0.0,
    };
    let mut rho = rho0.clone();
    let mut ysum = vec![Compensated::default(); nc];
    let snap = |step: usize, rho: &Operator, ysum: &[Compensated], rec: &mut TrajectoryRecord| {
        for (i, &s) in rec.snapshot_steps.iter().enumerate() {
            if s == step {
                rec.snapshots[i] = rho.clone();
                rec.y[i] = ysum.iter().map(|a| a.value()).collect();
            }
        }
    };
    snap(0, &rho, &ysum, &mut rec);
    let mut dy = vec![0.0; nc];
    for step in 0..n_steps {
        let t = step as f64 * dt;
        let means = output_means(model, &rho);
        for k in 0..nc {
            dy[k] = model.channels[k].eta.sqrt() * means[k] * dt + rec.dw[step * nc + k];
        }
        let (next, info) = step_core(model, &rho, t, dt, &means, &dy).map_err(|e| fail(step, t, e))?;
        if info.clipped {
            rec.clip_events += 1;
            rec.worst_negativity = rec.worst_negativity.min(info.negativity);
        }
        rho = next;
        rec.dy.extend_from_slice(&dy);
        for k in 0..nc {
            ysum[k].add(dy[k]);
        }
        snap(step + 1, &rho, &ysum, &mut rec);
    }
    Ok(rec)
}

/// Ensemble of independent trajectories, run in parallel.
pub fn simulate(
    model: &ScenarioModel,
    rho0: &Operator,
    t_final: f64,
    dt: f64,
    seed: u64,
    n_traj: usize,
    snapshot_times: &[f64],
) -> Result<Vec<TrajectoryRecord>> {
    ops::validate_density(rho0)?;
    model.check_state(rho0)?;
    let n_steps = steps_for(t_final, dt)?;
    let snaps = snapshot_grid(snapshot_times, dt)?;
    if snaps.iter().any(|&s| s > n_steps) {
        return invalid("snapshot time beyond T");
    }
    let nc = model.channels.len();
    (0..n_traj)
        .into_par_iter()
        .map(|i| {
            let dw = draw_increments(seed, i, n_steps, nc, dt);
            let mut rec = run_with_increments(model, rho0, dt, dw, &snaps).map_err(|e| match e {
                Error::IntegrationFailure { step, t, msg } => {
                    Error::IntegrationFailure { step, t, msg: format!("trajectory {i}: {msg}") }
                }
                other => other,
            })?;
            rec.n_steps = n_steps;
            rec.seed = seed;
            rec.index = i;
            Ok(rec)
        })
        .collect()
}

/// Replay a record: the filter's own state supplies the innovation.
pub fn filter_apply(model: &ScenarioModel, rho0: &Operator, record: &TrajectoryRecord) -> Result<Vec<Operator>> {
    filter_outputs(model, rho0, record.dt, &record.dy, &record.snapshot_steps)
}

/// Replay from raw step-major output increments.
pub fn filter_outputs(
    model: &ScenarioModel,
    rho0: &Operator,
    dt: f64,
    dy: &[f64],
    snapshot_steps: &[usize],
) -> Result<Vec<Operator>> {
    model.check_state(rho0)?;
    let nc = model.channels.len();
    if nc == 0 {
        return invalid("model has no channels to filter");
    }
    if dy.len() % nc != 0 {
        return invalid("record length is not a multiple of the channel count");
    }
    let n_steps = dy.len() / nc;
    if snapshot_steps.iter().any(|&s| s > n_steps) {
        return invalid("snapshot beyond the record length");
    }
    let mut out = vec![ops::zeros(0); snapshot_steps.len()];
    let mut rho = rho0.clone();
    let put = |step: usize, rho: &Operator, out: &mut Vec<Operator>| {
        for (i, &s) in snapshot_steps.iter().enumerate() {
            if s == step {
                out[i] = rho.clone();
            }
        }
    };
    put(0, &rho, &mut out);
    for step in 0..n_steps {
        let t = step as f64 * dt;
        let means = output_means(model, &rho);
        let (next, _) = step_core(model, &rho, t, dt, &means, &dy[step * nc..(step + 1) * nc])
            .map_err(|e| fail(step, t, e))?;
        rho = next;
        put(step + 1, &rho, &mut out);
    }
    Ok(out)
}

fn rk4_step(model: &ScenarioModel, rho: &Operator, t: f64, dt: f64) -> Operator {
    let h0 = model.hamiltonian_at(t);
    let hm = model.hamiltonian_at(t + 0.5 * dt);
    let h1 = model.hamiltonian_at(t + dt);
    let k1 = drift_with(&h0, model, rho);
    let k2 = drift_with(&hm, model, &(rho + &k1 * r(0.5 * dt)));
    let k3 = drift_with(&hm, model, &(rho + &k2 * r(0.5 * dt)));
    let k4 = drift_with(&h1, model, &(rho + &k3 * r(dt)));
    rho + (k1 + (k2 + k3) * r(2.0) + k4) * r(dt / 6.0)
}

/// Ensemble-averaged (Lindblad) evolution by RK4.
pub fn lindblad_propagate(model: &ScenarioModel, rho0: &Operator, t_final: f64, dt: f64) -> Result<Operator> {
    let out = lindblad_snapshots(model, rho0, dt, &[t_final])?;
    Ok(out.into_iter().next().unwrap())
}

pub fn lindblad_snapshots(model: &ScenarioModel, rho0: &Operator, dt: f64, times: &[f64]) -> Result<Vec<Operator>> {
    model.check_state(rho0)?;
    let snaps = snapshot_grid(times, dt)?;
    let n_steps = snaps.iter().copied().max().unwrap_or(0);
    let mut out = vec![ops::zeros(0); snaps.len()];
    let mut rho = rho0.clone();
    for step in 0..=n_steps {
        for (i, &s) in snaps.iter().enumerate() {
            if s == step {
                out[i] = rho.clone();
            }
        }
        if step == n_steps {
            break;
        }
        let t = step as f64 * dt;
        rho = rk4_step(model, &rho, t, dt);
        if !ops::is_finite(&rho) {
            return Err(Error::IntegrationFailure { step, t, msg: "non-finite Lindblad state".into() });
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ops::{diag, ket_bra, max_abs, pure};
    use nalgebra::DVector;

    fn qutrit(eta: f64) -> ScenarioModel {
        let l = diag(&[0.0, 1.0, 1.8]);
        ScenarioModel::new(ops::zeros(3), vec![MeasurementChannel::new(l, eta).unwrap()], vec![3]).unwrap()
    }

    fn fig1_state() -> Operator {
        pure(&DVector::from_vec(vec![r(0.3f64.sqrt()), r(0.55f64.sqrt()), r(0.15f64.sqrt())]))
    }

    #[test]
    fn diffusion_running_example() {
        let rho = ops::maximally_mixed(3);
        let ch1 = MeasurementChannel::new(diag(&[0.0, 1.0, 1.8]), 1.0).unwrap();
        let g1 = diffusion(&ch1, &rho).unwrap();
        let expect1 = diag(&[-5.6 / 9.0, 0.4 / 9.0, 5.2 / 9.0]);
        assert!(max_abs(&(g1 - expect1)) < 1e-15);
        let ch2 = MeasurementChannel::new(diag(&[0.0, 1.0, 0.2]), 1.0).unwrap();
        let g2 = diffusion(&ch2, &rho).unwrap();
        let expect2 = diag(&[-0.8 / 3.0, 1.2 / 3.0, -0.4 / 3.0]);
        assert!(max_abs(&(g2 - expect2)) < 1e-15);
    }

    #[test]
    fn identity_channel_has_no_diffusion() {
        let rho = fig1_state();
        let ch = MeasurementChannel::new(ops::identity(3) * c(0.3, -1.2), 1.0).unwrap();
        assert!(max_abs(&diffusion(&ch, &rho).unwrap()) < 1e-15);
    }

    use crate::ops::c;

    #[test]
    fn rabi_drift_oracle() {
        let om = 1.35;
        let h = (ket_bra(3, 0, 1) + ket_bra(3, 1, 0)) * r(om);
        let l = diag(&[0.0, 1.0, 1.8]);
        let m = ScenarioModel::new(h, vec![MeasurementChannel::new(l.clone(), 0.8).unwrap()], vec![3]).unwrap();
        let rho = ket_bra(3, 0, 0);
        let d = drift(&m, &rho, 0.0).unwrap();
        // −i(Hρ − ρH) = −iΩ(|1⟩⟨0| − |0⟩⟨1|); F_L vanishes on |0⟩⟨0| since λ0 = 0
        let expect = (ket_bra(3, 1, 0) - ket_bra(3, 0, 1)) * c(0.0, -om);
        assert!(max_abs(&(d - expect)) < 1e-15);
        assert!(max_abs(&drift(&qutrit(0.8), &ops::maximally_mixed(3), 0.0).unwrap()) < 1e-16);
    }

    #[test]
    fn single_step_direct_formula() {
        let m = qutrit(0.8);
        let rho = ops::maximally_mixed(3);
        let (dt, dw) = (1e-4, 0.01);
        let (next, dy) = step_ito(&m, &rho, 0.0, dt, &[dw]).unwrap();
        // independent arithmetic: diagonal state stays diagonal; ρ_bb += √η·2(λ_b − ⟨L⟩)ρ_bb·dw
        let lam = [0.0, 1.0, 1.8];
        let mean: f64 = lam.iter().sum::<f64>() / 3.0;
        for b in 0..3 {
            let expect = 1.0 / 3.0 + 0.8f64.sqrt() * 2.0 * (lam[b] - mean) / 3.0 * dw;
            assert!((next[(b, b)].re - expect).abs() < 1e-15);
        }
        assert!((dy[0] - (0.8f64.sqrt() * 2.0 * mean * dt + dw)).abs() < 1e-15);
    }

    #[test]
    fn eigenstate_is_fixed() {
        let m = qutrit(0.8);
        let rho = ket_bra(3, 2, 2);
        let (next, _) = step_ito(&m, &rho, 0.0, 1e-3, &[0.3]).unwrap();
        assert!(max_abs(&(next - rho)) < 1e-15);
    }

    #[test]
    fn zero_efficiency_is_lindblad_euler() {
        let m = qutrit(0.0);
        let rho = fig1_state();
        let (next, dy) = step_ito(&m, &rho, 0.0, 1e-3, &[0.7]).unwrap();
        let euler = &rho + drift(&m, &rho, 0.0).unwrap() * r(1e-3);
        assert!(max_abs(&(next - euler)) < 1e-15);
        assert_eq!(dy[0], 0.7);
    }

    #[test]
    fn replay_is_bit_identical() {
        let m = qutrit(0.8);
        let times: Vec<f64> = (0..=500).map(|k| k as f64 * 1e-4).collect();
        let recs = simulate(&m, &fig1_state(), 0.05, 1e-4, 11, 2, &times).unwrap();
        for rec in &recs {
            let again = filter_apply(&m, &fig1_state(), rec).unwrap();
            for (a, b) in again.iter().zip(&rec.snapshots) {
                assert_eq!(a, b);
            }
            for s in 0..rec.n_steps {
                let mean = output_means(&m, &rec.snapshots[s])[0];
                let d = rec.dy_at(s)[0] - (0.8f64.sqrt() * mean * rec.dt + rec.dw_at(s)[0]);
                assert!(d.abs() < 1e-12);
            }
        }
    }

    #[test]
    fn reproducible_and_independent_streams() {
        let m = qutrit(0.8);
        let a = simulate(&m, &fig1_state(), 0.01, 1e-4, 5, 3, &[0.01]).unwrap();
        let b = simulate(&m, &fig1_state(), 0.01, 1e-4, 5, 3, &[0.01]).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.dy, y.dy);
            assert_eq!(x.snapshots, y.snapshots);
        }
        assert_ne!(a[0].dw, a[1].dw);
    }

    #[test]
    fn zero_horizon_snapshots() {
        let m = qutrit(0.8);
        let recs = simulate(&m, &fig1_state(), 0.0, 1e-4, 1, 4, &[0.0]).unwrap();
        assert!(recs.iter().all(|r| r.snapshots[0] == fig1_state()));
    }

    #[test]
    fn off_grid_snapshot_rejected() {
        let m = qutrit(0.8);
        assert!(simulate(&m, &fig1_state(), 0.1, 1e-3, 1, 1, &[0.00051]).is_err());
    }

    #[test]
    fn lindblad_dephasing_rate() {
        let m = qutrit(0.8);
        let rho0 = fig1_state();
        let t = 0.7;
        let rho = lindblad_propagate(&m, &rho0, t, 1e-3).unwrap();
        let expect = rho0[(0, 1)] * r((-0.5 * t).exp());
        assert!((rho[(0, 1)] - expect).norm() < 1e-12);
        let empty = ScenarioModel::new(ops::zeros(3), vec![], vec![3]).unwrap();
        assert_eq!(lindblad_propagate(&empty, &rho0, 1.0, 1e-2).unwrap(), rho0);
    }

    #[test]
    fn replay_with_zero_efficiency_ignores_record() {
        let m = qutrit(0.8);
        let rec = &simulate(&m, &fig1_state(), 0.01, 1e-4, 2, 1, &[0.01]).unwrap()[0];
        let blind = m.with_efficiencies(&[0.0]).unwrap();
        let a = filter_apply(&blind, &fig1_state(), rec).unwrap();
        let zero = vec![0.0; rec.dy.len()];
        let b = filter_outputs(&blind, &fig1_state(), rec.dt, &zero, &rec.snapshot_steps).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn compensated_sum_beats_naive() {
        let mut acc = Compensated::default();
        acc.add(1.0);
        for _ in 0..10 {
            acc.add(1e-16);
        }
        assert!((acc.value() - (1.0 + 1e-15)).abs() < 1e-17);
    }
}
