//! Invariant check suites. Each returns a report with one row per invariant
//! (value, tolerance, pass) plus residual tables; a report passes iff every
//! row does.

use std::time::Instant;

use nalgebra::{Matrix2, Vector2};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::gauss::{self, FluorescenceParams, GridSpec, InitialWigner, Moments, OscillatorModel, XpParams};
use crate::multi::{self, DispersiveParams};
use crate::ops::{self, Operator};
use crate::qnd::{self, QndModel, REPETITION_SUBSPACES};
use crate::sme::{self, ScenarioModel, Signal, TrajectoryRecord};

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Relation {
    AtMost,
    AtLeast,
    /// Reported for context; never fails.
    Info,
}

#[derive(Clone, Debug, Serialize)]
pub struct CheckRow {
    /// Suite that produced the row.
    pub check: String,
    pub name: String,
    pub value: f64,
    pub bound: f64,
    pub relation: Relation,
    pub pass: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct Table {
    pub name: String,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

#[derive(Clone, Debug, Serialize)]
pub struct CheckReport {
    pub check: String,
    pub pass: bool,
    pub wall_time_s: f64,
    pub rows: Vec<CheckRow>,
    pub tables: Vec<Table>,
}

impl CheckReport {
    fn new(check: &str) -> Self {
        Self { check: check.into(), pass: true, wall_time_s: 0.0, rows: Vec::new(), tables: Vec::new() }
    }

    fn push(&mut self, name: impl Into<String>, value: f64, bound: f64, relation: Relation) {
        let pass = match relation {
            Relation::AtMost => value <= bound,
            Relation::AtLeast => value >= bound,
            Relation::Info => true,
        };
        self.pass &= pass;
        self.rows.push(CheckRow { check: self.check.clone(), name: name.into(), value, bound, relation, pass });
    }

    fn at_most(&mut self, name: impl Into<String>, value: f64, bound: f64) {
        self.push(name, value, bound, Relation::AtMost);
    }

    fn at_least(&mut self, name: impl Into<String>, value: f64, bound: f64) {
        self.push(name, value, bound, Relation::AtLeast);
    }

    fn info(&mut self, name: impl Into<String>, value: f64) {
        self.push(name, value, f64::NAN, Relation::Info);
    }

    fn finish(mut self, start: Instant) -> Self {
        self.wall_time_s = start.elapsed().as_secs_f64();
        self
    }

    /// Merge another report's rows and tables into this one.
    pub fn absorb(&mut self, other: CheckReport) {
        self.pass &= other.pass;
        self.wall_time_s += other.wall_time_s;
        self.rows.extend(other.rows);
        self.tables.extend(other.tables);
    }

    /// One human-readable line per row.
    pub fn lines(&self) -> Vec<String> {
        self.rows
            .iter()
            .map(|r| {
                let tag = match (r.relation, r.pass) {
                    (Relation::Info, _) => "INFO",
                    (_, true) => "PASS",
                    (_, false) => "FAIL",
                };
                let rel = match r.relation {
                    Relation::AtMost => format!(" (<= {:e})", r.bound),
                    Relation::AtLeast => format!(" (>= {:e})", r.bound),
                    Relation::Info => String::new(),
                };
                format!("{tag} [{}] {}: {:.6e}{rel}", r.check, r.name, r.value)
            })
            .collect()
    }
}

/// Ensemble parameters of a check.
#[derive(Clone, Copy, Debug)]
pub struct RunParams {
    pub t_final: f64,
    pub dt: f64,
    pub n_traj: usize,
    pub seed: u64,
}

fn n_steps(t: f64, dt: f64) -> Result<usize> {
    Ok(sme::snapshot_grid(&[t], dt)?[0])
}

fn rms(xs: &[f64]) -> f64 {
    (xs.iter().map(|x| x * x).sum::<f64>() / xs.len() as f64).sqrt()
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let v = if xs.len() > 1 { xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0) } else { 0.0 };
    (m, v.sqrt())
}

fn max_of(xs: impl IntoIterator<Item = f64>) -> f64 {
    xs.into_iter().fold(0.0f64, |m, x| if x.is_nan() || m.is_nan() { f64::NAN } else { m.max(x) })
}

/// Brownian increments on nested grids: `fine` has `factor` steps of
/// `dt / factor` per coarse step and sums exactly to `coarse`.
pub fn dyadic_increments(seed: u64, index: usize, n_coarse: usize, n_channels: usize, dt: f64, factor: usize) -> (Vec<f64>, Vec<f64>) {
    let fine = sme::draw_increments(seed, index, n_coarse * factor, n_channels, dt / factor as f64);
    let mut coarse = vec![0.0; n_coarse * n_channels];
    for s in 0..n_coarse {
        for k in 0..n_channels {
            coarse[s * n_channels + k] = (0..factor).map(|j| fine[(s * factor + j) * n_channels + k]).sum();
        }
    }
    (coarse, fine)
}

/// Runs of one model on shared paths at `4·dt` (coarse) and `dt` (fine),
/// sampled at `n_samples + 1` common times. Trajectory `i` uses stream `i` of `seed`.
fn refinement_pairs(
    model: &ScenarioModel,
    rho0: &Operator,
    t_final: f64,
    dt: f64,
    seed: u64,
    n_traj: usize,
    n_samples: usize,
) -> Result<Vec<(TrajectoryRecord, TrajectoryRecord)>> {
    let n_fine = n_steps(t_final, dt)?;
    if n_fine % 4 != 0 {
        return Err(Error::Config("refinement needs t_final / dt divisible by 4".into()));
    }
    let n_coarse = n_fine / 4;
    let snaps_c: Vec<usize> = (0..=n_samples).map(|k| k * n_coarse / n_samples).collect();
    let snaps_f: Vec<usize> = snaps_c.iter().map(|s| 4 * s).collect();
    let nc = model.channels().len();
    (0..n_traj)
        .into_par_iter()
        .map(|i| {
            let (coarse, fine) = dyadic_increments(seed, i, n_coarse, nc, 4.0 * dt, 4);
            let c = sme::run_with_increments(model, rho0, 4.0 * dt, coarse, &snaps_c)?;
            let f = sme::run_with_increments(model, rho0, dt, fine, &snaps_f)?;
            Ok((c, f))
        })
        .collect()
}

fn refinement_ratio(coarse: &[f64], fine: &[f64]) -> f64 {
    rms(coarse) / rms(fine)
}

// ------------------------------------------------------------ QND invariants

/// Per-trajectory maxima over time of the phase, coherence-law and z-law residuals.
fn qnd_residuals(qnd: &QndModel, rec: &TrajectoryRecord, pairs: &[(usize, usize)], alphas: &[(Vec<f64>, f64)]) -> (f64, Vec<f64>, Vec<f64>) {
    let eig: Vec<Operator> = rec.snapshots.iter().map(|r| qnd.to_eigenbasis(r)).collect();
    let pop = |r: &Operator, a: usize| r[(a, a)].re;
    let mut phase = 0.0f64;
    let mut coh = vec![0.0f64; pairs.len()];
    for (i, &(a, b)) in pairs.iter().enumerate() {
        let rate = qnd.coherence_decay_rate(a, b);
        let c0 = eig[0][(a, b)].norm_sqr() / (pop(&eig[0], a) * pop(&eig[0], b));
        let phi0 = eig[0][(a, b)].arg();
        let mut prev = phi0;
        for (r, &t) in eig.iter().zip(&rec.times) {
            let (pa, pb, z) = (pop(r, a), pop(r, b), r[(a, b)]);
            if pa < qnd::POPULATION_FLOOR || pb < qnd::POPULATION_FLOOR || z.norm() < qnd::POPULATION_FLOOR {
                break;
            }
            let c = z.norm_sqr() / (pa * pb);
            coh[i] = coh[i].max((c.ln() - c0.ln() + rate * t).abs());
            prev = qnd::unwrap_phase(prev, z.arg());
            phase = phase.max((prev - phi0).abs());
        }
    }
    let z: Vec<f64> = alphas
        .iter()
        .map(|(alpha, rate)| {
            let z0 = qnd::log_z(&eig[0], alpha).unwrap_or(f64::NAN);
            let mut worst = 0.0f64;
            for (r, &t) in eig.iter().zip(&rec.times) {
                match qnd::log_z(r, alpha) {
                    Some(lz) => worst = worst.max((lz - z0 + rate * t).abs()),
                    None => break,
                }
            }
            worst
        })
        .collect();
    (phase, coh, z)
}

/// Phase, log-coherence-ratio and log-z laws of a QND model without
/// Hamiltonian, with a refinement check on shared paths (`4·dt` vs `dt`).
/// `alphas` are the exponent vectors to test (empty: the model's basis).
pub fn qnd_invariant_suite(qnd: &QndModel, rho0: &Operator, alphas: &[Vec<f64>], run: &RunParams) -> Result<CheckReport> {
    let start = Instant::now();
    let mut rep = CheckReport::new("qnd-invariants");
    let model = qnd.to_scenario(None)?;
    let r0 = qnd.to_eigenbasis(rho0);
    let n = qnd.n();
    let pairs: Vec<(usize, usize)> = (0..n)
        .flat_map(|a| (a + 1..n).map(move |b| (a, b)))
        .filter(|&(a, b)| r0[(a, b)].norm() >= qnd::POPULATION_FLOOR)
        .collect();
    let alphas: Vec<(Vec<f64>, f64)> = if alphas.is_empty() {
        qnd::z_alpha_basis(qnd).into_iter().map(|(a, s)| (a.as_slice().to_vec(), 2.0 * s)).collect()
    } else {
        alphas.iter().map(|a| (a.clone(), 2.0 * qnd.alpha_variance(a))).collect()
    };
    let runs = refinement_pairs(&model, rho0, run.t_final, run.dt, run.seed, run.n_traj, 30)?;
    let coarse: Vec<_> = runs.iter().map(|(c, _)| qnd_residuals(qnd, c, &pairs, &alphas)).collect();
    let fine: Vec<_> = runs.iter().map(|(_, f)| qnd_residuals(qnd, f, &pairs, &alphas)).collect();

    rep.at_most("phase drift (max over trajectories)", max_of(fine.iter().map(|r| r.0)), 1e-2);
    for (i, &(a, b)) in pairs.iter().enumerate() {
        rep.info(format!("coherence decay rate ({a},{b})"), qnd.coherence_decay_rate(a, b));
        let res: Vec<f64> = fine.iter().map(|r| r.1[i]).collect();
        rep.info(format!("log-coherence law residual ({a},{b}), max over trajectories"), max_of(res.iter().copied()));
        rep.at_most(format!("log-coherence law residual ({a},{b}), RMS over trajectories"), rms(&res), 2e-2);
    }
    for (j, (alpha, rate)) in alphas.iter().enumerate() {
        rep.info(format!("log z rate, alpha_{j} = {alpha:?}"), *rate);
        let res: Vec<f64> = fine.iter().map(|r| r.2[j]).collect();
        rep.info(format!("log z law residual alpha_{j}, max over trajectories"), max_of(res.iter().copied()));
        rep.at_most(format!("log z law residual alpha_{j}, RMS over trajectories"), rms(&res), 2e-2);
    }
    // Refinement: residuals already at round-off level cannot shrink further.
    let mut refine = |name: String, c: Vec<f64>, f: Vec<f64>| {
        if rms(&c) < 1e-10 {
            rep.info(format!("{name}: exact to round-off (RMS at 4dt)"), rms(&c));
        } else {
            rep.at_least(format!("{name}: refinement ratio 4dt -> dt"), refinement_ratio(&c, &f), 1.8);
        }
    };
    refine("phase drift".into(), coarse.iter().map(|r| r.0).collect(), fine.iter().map(|r| r.0).collect());
    for (i, &(a, b)) in pairs.iter().enumerate() {
        refine(format!("log-coherence law ({a},{b})"), coarse.iter().map(|r| r.1[i]).collect(), fine.iter().map(|r| r.1[i]).collect());
    }
    for j in 0..alphas.len() {
        refine(format!("log z law alpha_{j}"), coarse.iter().map(|r| r.2[j]).collect(), fine.iter().map(|r| r.2[j]).collect());
    }
    let mut columns = vec!["traj".to_string(), "dt".into(), "phase".into()];
    columns.extend(pairs.iter().map(|(a, b)| format!("coh_{a}_{b}")));
    columns.extend((0..alphas.len()).map(|j| format!("log_z_{j}")));
    let mut rows = Vec::new();
    for (i, (c, f)) in coarse.iter().zip(&fine).enumerate() {
        for (dt, r) in [(4.0 * run.dt, c), (run.dt, f)] {
            let mut row = vec![i as f64, dt, r.0];
            row.extend(&r.1);
            row.extend(&r.2);
            rows.push(row);
        }
    }
    rep.tables.push(Table { name: "qnd_residuals".into(), columns, rows });
    Ok(rep.finish(start))
}

/// Explicit populations from the integrated record vs the integrator replaying
/// the same record; plus invariance under permutation of the increments.
pub fn prop5_suite(qnd: &QndModel, rho0: &Operator, run: &RunParams) -> Result<CheckReport> {
    let start = Instant::now();
    let mut rep = CheckReport::new("explicit-populations");
    let model = qnd.to_scenario(None)?;
    let p0: Vec<f64> = (0..qnd.n()).map(|b| qnd.to_eigenbasis(rho0)[(b, b)].re).collect();
    let recs = sme::simulate(&model, rho0, run.t_final, run.dt, run.seed, run.n_traj, &[run.t_final])?;
    let mut rows = Vec::new();
    let mut rels = Vec::new();
    let mut worst_perm = 0.0f64;
    for rec in &recs {
        let replay = sme::filter_apply(&model, rho0, rec)?;
        let eig = qnd.to_eigenbasis(&replay[0]);
        let p_sme: Vec<f64> = (0..qnd.n()).map(|b| eig[(b, b)].re).collect();
        let p_exp = qnd::populations_explicit(qnd, &p0, &rec.y[0], run.t_final)?;
        let rel = p_sme.iter().zip(&p_exp).map(|(s, e)| (s - e).powi(2)).sum::<f64>().sqrt() / p_sme.iter().map(|s| s * s).sum::<f64>().sqrt();
        // Shuffle the step order of the record; y_t is unchanged.
        let mut order: Vec<usize> = (0..rec.n_steps).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(run.seed ^ rec.index as u64));
        let shuffled: Vec<f64> = order.iter().flat_map(|&s| rec.dy_at(s).iter().copied()).collect();
        let y_perm = sme::integrate_outputs(&shuffled, rec.n_channels, rec.n_steps);
        let p_perm = qnd::populations_explicit(qnd, &p0, &y_perm, run.t_final)?;
        let perm = max_of(p_perm.iter().zip(&p_exp).map(|(a, b)| (a - b).abs()));
        rels.push(rel);
        worst_perm = worst_perm.max(perm);
        rows.push(vec![rec.index as f64, rel, perm]);
    }
    rep.info("explicit vs replayed populations, max relative 2-norm error over trajectories", max_of(rels.iter().copied()));
    rep.at_most("explicit vs replayed populations, RMS relative 2-norm error over trajectories", rms(&rels), 1e-2);
    rep.at_most("order insensitivity under increment permutation (max abs change)", worst_perm, 1e-12);
    rep.tables.push(Table { name: "explicit_populations".into(), columns: vec!["traj".into(), "rel_err".into(), "perm_change".into()], rows });
    Ok(rep.finish(start))
}

// ------------------------------------------------------------ repetition code

fn ln_pop_ratio(r: &Operator, a: usize, b: usize) -> Option<f64> {
    let (pa, pb) = (r[(a, a)].re, r[(b, b)].re);
    (pa > qnd::POPULATION_FLOOR && pb > qnd::POPULATION_FLOOR).then(|| (pa / pb).ln())
}

fn slope(ts: &[f64], ys: &[f64]) -> f64 {
    let n = ts.len() as f64;
    let (mt, my) = (ts.iter().sum::<f64>() / n, ys.iter().sum::<f64>() / n);
    let num: f64 = ts.iter().zip(ys).map(|(t, y)| (t - mt) * (y - my)).sum();
    let den: f64 = ts.iter().map(|t| (t - mt).powi(2)).sum();
    num / den
}

/// Per-trajectory maximum over time of |ln z(t) − ln z(0)|.
fn z_drift(rec: &TrajectoryRecord) -> f64 {
    let z0 = qnd::repetition_conserved_z(&rec.snapshots[0]).map(f64::ln).unwrap_or(f64::NAN);
    max_of(rec.snapshots.iter().map_while(|r| qnd::repetition_conserved_z(r).map(|z| (z.ln() - z0).abs())))
}

/// Laws of the 3-qubit repetition code under syndrome measurement at efficiency `eta`.
pub fn repetition_suite(eta: f64, rho0: &Operator, run: &RunParams) -> Result<CheckReport> {
    let start = Instant::now();
    let mut rep = CheckReport::new("repetition");
    let n = n_steps(run.t_final, run.dt)?;
    let times: Vec<f64> = (0..=30).map(|k| (k * n / 30) as f64 * run.dt).collect();
    let three = qnd::repetition_model(eta, 0.0, 3, &[])?;
    let two = qnd::repetition_model(eta, 0.0, 2, &[])?;
    let recs3 = sme::simulate(&three.model, rho0, run.t_final, run.dt, run.seed, run.n_traj, &times)?;
    let pairs2 = refinement_pairs(&two.model, rho0, run.t_final, run.dt, run.seed, run.n_traj, 30)?;

    let intra = max_of(recs3.iter().flat_map(|rec| {
        REPETITION_SUBSPACES.iter().filter_map(move |&[a, b]| {
            let r0 = ln_pop_ratio(&rec.snapshots[0], a, b)?;
            Some(max_of(rec.snapshots.iter().map_while(|r| ln_pop_ratio(r, a, b).map(|v| (v - r0).abs()))))
        })
    }));
    rep.at_most("intra-subspace population ratio drift (3 syndromes, max |d ln|)", intra, 2e-2);

    let expected = 8.0 * (1.0 - eta);
    let cross: Vec<(usize, usize)> = (0..4)
        .flat_map(|i| (i + 1..4).flat_map(move |j| REPETITION_SUBSPACES[i].into_iter().flat_map(move |a| REPETITION_SUBSPACES[j].into_iter().map(move |b| (a.min(b), a.max(b))))))
        .filter(|&(a, b)| rho0[(a, b)].norm() > 1e-8)
        .collect();
    let mut rows = Vec::new();
    let mut worst = 0.0f64;
    for &(a, b) in &cross {
        let rates: Vec<f64> = recs3
            .iter()
            .map(|rec| {
                let pts: Vec<(f64, f64)> = rec
                    .snapshots
                    .iter()
                    .zip(&rec.times)
                    .map_while(|(r, &t)| {
                        let den = r[(a, a)].re * r[(b, b)].re;
                        (den > 1e-24 && r[(a, b)].norm() > 1e-150).then(|| (t, (r[(a, b)].norm_sqr() / den).ln()))
                    })
                    .collect();
                let (ts, ys): (Vec<f64>, Vec<f64>) = pts.into_iter().unzip();
                -slope(&ts, &ys)
            })
            .filter(|r| r.is_finite())
            .collect();
        let (m, s) = mean_std(&rates);
        let rel = (m - expected).abs() / expected;
        worst = worst.max(rel);
        rows.push(vec![a as f64, b as f64, m, s, rel]);
    }
    rep.info("expected cross-subspace decay rate 8(1-eta)", expected);
    rep.at_most("cross-subspace coherence decay rate (max relative error over pairs)", worst, 0.05);
    rep.tables.push(Table { name: "cross_subspace_rates".into(), columns: ["a", "b", "mean_rate", "std_rate", "rel_err"].map(String::from).to_vec(), rows });

    let tol = 2e-2;
    let coarse: Vec<f64> = pairs2.iter().map(|(c, _)| z_drift(c)).collect();
    let fine: Vec<f64> = pairs2.iter().map(|(_, f)| z_drift(f)).collect();
    rep.info("conserved z drift (2 syndromes), max over trajectories", max_of(fine.iter().copied()));
    rep.at_most("conserved z drift (2 syndromes), RMS over trajectories", rms(&fine), tol);
    rep.at_least("conserved z drift (2 syndromes): refinement ratio 4dt -> dt", refinement_ratio(&coarse, &fine), 1.8);
    let control: Vec<f64> = recs3.iter().map(z_drift).collect();
    rep.at_least("z drift with 3 syndromes (negative control), RMS over trajectories", rms(&control), 10.0 * tol);
    Ok(rep.finish(start))
}

// ------------------------------------------------------------ martingale

/// Ensemble mean vs Lindblad evolution, componentwise.
pub fn martingale_suite(model: &ScenarioModel, rho0: &Operator, run: &RunParams, times: &[f64]) -> Result<CheckReport> {
    let start = Instant::now();
    let mut rep = CheckReport::new("martingale");
    let recs = sme::simulate(model, rho0, run.t_final, run.dt, run.seed, run.n_traj, times)?;
    let lind = sme::lindblad_snapshots(model, rho0, run.dt, times)?;
    let d = model.dim();
    let n = recs.len() as f64;
    let mut worst = f64::NEG_INFINITY;
    let mut rows = Vec::new();
    for (k, l) in lind.iter().enumerate() {
        for i in 0..d {
            for j in i..d {
                let parts: [(usize, fn(ops::C64) -> f64); 2] = [(0, |z| z.re), (1, |z| z.im)];
                for (part, f) in parts {
                    if part == 1 && i == j {
                        continue;
                    }
                    let xs: Vec<f64> = recs.iter().map(|r| f(r.snapshots[k][(i, j)])).collect();
                    let (m, s) = mean_std(&xs);
                    let sem = s / n.sqrt();
                    let excess = (m - f(l[(i, j)])).abs() - 3.0 * sem;
                    worst = worst.max(excess);
                    rows.push(vec![times[k], i as f64, j as f64, part as f64, m, f(l[(i, j)]), sem, excess]);
                }
            }
        }
    }
    let gap = max_of(rows.iter().map(|r| (r[4] - r[5]).abs()));
    let z = max_of(rows.iter().filter(|r| r[6] > 0.0).map(|r| (r[4] - r[5]).abs() / r[6]));
    rep.info("max over components of |mean - Lindblad|", gap);
    rep.info("max over components of |mean - Lindblad| / SEM", z);
    rep.at_most("max over components of |mean - Lindblad| - 3 SEM", worst, 5e-3);
    rep.tables.push(Table { name: "martingale".into(), columns: ["t", "i", "j", "imag", "mean", "lindblad", "sem", "excess"].map(String::from).to_vec(), rows });
    Ok(rep.finish(start))
}

// ------------------------------------------------------------ Gaussian kernels

/// Richardson-extrapolated central difference; a fifth-order one-sided
/// stencil at the left end of the domain.
fn derivative(f: &dyn Fn(f64) -> f64, t: f64, h: f64) -> f64 {
    if t < 2.0 * h {
        let g = |k: f64| f(t + k * h);
        return (-25.0 * g(0.0) + 48.0 * g(1.0) - 36.0 * g(2.0) + 16.0 * g(3.0) - 3.0 * g(4.0)) / (12.0 * h);
    }
    let c = |h: f64| (f(t + h) - f(t - h)) / (2.0 * h);
    (4.0 * c(0.5 * h) - c(h)) / 3.0
}

const RICCATI_H: f64 = 1e-3;

fn riccati_grid() -> impl Iterator<Item = f64> {
    (0..=300).map(|k| k as f64 * 0.01)
}

/// Width equations of the fluorescence kernel:
/// `ṡ = 1 + 2n − η/2 − 2(1−η)s − 2ηs²`, `ȧ = −(1 − η + 2ηs)a`, `ḋ = −2ηa²`.
fn fluorescence_riccati_residual(eta: f64, n_th: f64) -> Result<f64> {
    let f = |i: usize| move |t: f64| {
        let v = gauss::fluorescence_params(eta, n_th, t).expect("valid parameters");
        [v.0, v.1, v.2][i]
    };
    let mut worst = 0.0f64;
    for t in riccati_grid() {
        let (a, s, _) = gauss::fluorescence_params(eta, n_th, t)?;
        let rhs = [-(1.0 - eta + 2.0 * eta * s) * a, 1.0 + 2.0 * n_th - 0.5 * eta - 2.0 * (1.0 - eta) * s - 2.0 * eta * s * s, -2.0 * eta * a * a];
        for i in 0..3 {
            worst = worst.max((derivative(&f(i), t, RICCATI_H) - rhs[i]).abs());
        }
    }
    Ok(worst)
}

/// Matrix Riccati system of the X/P kernel at `Δ = 0`:
/// `Ṡ = −ΓℓS + Γℓ(1+2n)/2 + N/2 − 2SMS`, `Ȧ = −ΓℓA/2 − 2SMA` (same for R), `Ż = −2BᵀMB`.
fn cor71_residual(p: &XpParams) -> Result<f64> {
    let m = Matrix2::new(p.eta_x * p.gamma_x, 0.0, 0.0, p.eta_p * p.gamma_p);
    let nn = Matrix2::new(p.gamma_p, 0.0, 0.0, p.gamma_x);
    let bath = 0.5 * p.gamma_l * (1.0 + 2.0 * p.n_th);
    let flat = |t: f64| -> [f64; 12] {
        let c = gauss::cor71(p, t).expect("valid parameters");
        [c.s[(0, 0)], c.s[(0, 1)], c.s[(1, 1)], c.z[(0, 0)], c.z[(0, 1)], c.z[(1, 1)], c.a.x, c.a.y, c.r.x, c.r.y, 0.0, 0.0]
    };
    let mut worst = 0.0f64;
    for t in riccati_grid() {
        let c = gauss::cor71(p, t)?;
        let b = Matrix2::from_columns(&[c.a, c.r]);
        let ds = -p.gamma_l * c.s + Matrix2::identity() * bath + nn * 0.5 - 2.0 * c.s * m * c.s;
        let dz = -2.0 * b.transpose() * m * b;
        let da: Vector2<f64> = -0.5 * p.gamma_l * c.a - 2.0 * c.s * m * c.a;
        let dr: Vector2<f64> = -0.5 * p.gamma_l * c.r - 2.0 * c.s * m * c.r;
        let rhs = [ds[(0, 0)], ds[(0, 1)], ds[(1, 1)], dz[(0, 0)], dz[(0, 1)], dz[(1, 1)], da.x, da.y, dr.x, dr.y];
        for (i, r) in rhs.iter().enumerate() {
            let fi = |t: f64| flat(t)[i];
            worst = worst.max((derivative(&fi, t, RICCATI_H) - r).abs());
        }
    }
    Ok(worst)
}

/// Uninformative-P reduction: `ṡ2 = −Γℓ s2 + (Γℓ(1+2n) + Γx)/2`,
/// `ṙ2 = −Γℓ r2/2`, `θ̇2 = −u − Γℓ θ2/2`, `z2 = λ2 = 0`.
fn cor72_residual(p: &XpParams) -> Result<f64> {
    let u = match p.u {
        Signal::Constant(u) => u,
        Signal::Function(_) => return Err(Error::InvalidArgument("reduction check uses constant drives".into())),
    };
    let gl = p.gamma_l;
    let f = |i: usize| move |t: f64| {
        let c = gauss::cor72(p, t).expect("valid parameters");
        [c.s2, c.r2, c.theta2][i]
    };
    let mut worst = 0.0f64;
    for t in riccati_grid() {
        let c = gauss::cor72(p, t)?;
        let rhs = [-gl * c.s2 + 0.5 * (gl * (1.0 + 2.0 * p.n_th) + p.gamma_x), -0.5 * gl * c.r2, -u - 0.5 * gl * c.theta2];
        for i in 0..3 {
            worst = worst.max((derivative(&f(i), t, RICCATI_H) - rhs[i]).abs());
        }
        worst = worst.max(c.z2.abs()).max(c.lambda2.abs());
    }
    Ok(worst)
}

fn moment_gap(a: &Moments, b: &Moments) -> f64 {
    max_of([a.mean_x - b.mean_x, a.mean_p - b.mean_p, a.var_x - b.var_x, a.var_p - b.var_p, a.cov_xp - b.cov_xp].map(f64::abs))
}

/// Reference X/P parameter sets covering asymmetric, lossless, thermal and
/// symmetric-with-detuning cases.
fn cor71_cases() -> Vec<XpParams> {
    vec![
        XpParams::new(1.0, 0.5, 0.3, 0.8, 0.6, 0.5),
        XpParams::new(1.0, 1.0, 0.7, 0.9, 0.9, 0.0),
        XpParams::new(0.6, 0.2, 0.0, 1.0, 0.4, 0.0),
        XpParams::new(0.8, 0.8, 0.5, 0.7, 0.7, 1.0).with_delta(1.3),
    ]
}

fn cor72_cases() -> Vec<XpParams> {
    vec![
        XpParams::new(1.2, 0.4, 0.6, 0.8, 0.0, 0.5).with_drives(Signal::Constant(0.7), Signal::Constant(0.0)),
        XpParams::new(0.5, 0.0, 0.2, 1.0, 0.3, 0.0).with_drives(Signal::Constant(-0.4), Signal::Constant(0.2)),
    ]
}

/// Oscillator kernel checks. `params`/`w0` select the fluorescence family
/// (`Ok(fp)`) or the X/P family (`Err(xp)`).
pub struct GaussCase {
    pub family: std::result::Result<FluorescenceParams, XpParams>,
    pub w0: InitialWigner,
    pub n_max: usize,
    pub run: RunParams,
    /// Step used for the vacuum reduction check.
    pub reduction_dt: f64,
}

pub fn gauss_suite(case: &GaussCase) -> Result<CheckReport> {
    let start = Instant::now();
    let mut rep = CheckReport::new("gauss");
    let mut flu_cases = vec![(0.8, 0.0), (0.8, 2.3), (0.5, 1.0), (1.0, 0.0)];
    if let Ok(fp) = &case.family {
        if !flu_cases.contains(&(fp.eta, fp.n_th)) {
            flu_cases.insert(0, (fp.eta, fp.n_th));
        }
    }
    for (eta, n_th) in &flu_cases {
        rep.at_most(format!("fluorescence Riccati residual on [0,3] (eta={eta}, n_th={n_th})"), fluorescence_riccati_residual(*eta, *n_th)?, 1e-8);
    }
    let mut xp_cases = cor71_cases();
    if let Err(xp) = &case.family {
        if gauss::cor71(xp, 0.0).is_ok() {
            xp_cases.insert(0, xp.clone());
        }
    }
    for p in &xp_cases {
        rep.at_most(
            format!("X/P Riccati residual on [0,3] (Gx={}, Gp={}, Gl={}, ex={}, ep={}, n={}, delta={})", p.gamma_x, p.gamma_p, p.gamma_l, p.eta_x, p.eta_p, p.n_th, p.delta),
            cor71_residual(p)?,
            1e-8,
        );
    }
    for p in &cor72_cases() {
        rep.at_most(format!("uninformative-P reduction residual on [0,3] (Gx={}, Gl={}, n={})", p.gamma_x, p.gamma_l, p.n_th), cor72_residual(p)?, 1e-8);
    }
    let mut init_dev = 0.0f64;
    for (eta, n_th) in &flu_cases {
        let (a, s, d) = gauss::fluorescence_params(*eta, *n_th, 0.0)?;
        init_dev = init_dev.max((a - 1.0).abs()).max(s.abs()).max(d.abs());
    }
    let k0 = gauss::FluorescenceKernelState::initial();
    init_dev = init_dev.max((k0.a - 1.0).abs()).max(k0.s.abs()).max(k0.d.abs());
    rep.at_most("(a, s, d)(0) deviation from (1, 0, 0)", init_dev, 0.0);

    // Same-record agreement with the truncated-Fock SME.
    let run = &case.run;
    let kind = match &case.family {
        Ok(fp) => OscillatorModel::Fluorescence(fp.clone()),
        Err(xp) => OscillatorModel::Xp(xp.clone()),
    };
    let (model, rho0) = gauss::sme_oscillator_model(&kind, case.n_max, &case.w0)?;
    let times: Vec<f64> = (1..=4).map(|k| run.t_final * k as f64 / 4.0).collect();
    let grid = GridSpec::default();
    let recs = sme::simulate(&model, &rho0, run.t_final, run.dt, run.seed, run.n_traj, &times)?;
    let per_seed = recs
        .par_iter()
        .map(|rec| -> Result<(Vec<Vec<f64>>, Vec<[f64; 10]>)> {
            let views: Vec<(gauss::KernelView, [f64; 10])> = match &case.family {
                Ok(fp) => {
                    let states = gauss::fluorescence_filter(fp, &rec.dy, rec.n_channels, run.dt)?;
                    rec.snapshot_steps.iter().map(|&s| (states[s].view(), [states[s].a, states[s].s, states[s].d, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0])).collect()
                }
                Err(xp) => {
                    let states = gauss::xp_filter(xp, &rec.dy, rec.n_channels, run.dt)?;
                    rec.snapshot_steps
                        .iter()
                        .map(|&s| {
                            let st = &states[s];
                            (st.view(), [st.s[(0, 0)], st.s[(0, 1)], st.s[(1, 1)], st.z[(0, 0)], st.z[(0, 1)], st.z[(1, 1)], st.a.x, st.a.y, st.r.x, st.r.y])
                        })
                        .collect()
                }
            };
            let mut rows = Vec::new();
            let mut det = Vec::new();
            for (k, (view, d)) in views.into_iter().enumerate() {
                let t = rec.times[k];
                let kernel = gauss::moments(&view, &case.w0, &grid)?;
                let angle = match &case.family {
                    Ok(_) => 0.0,
                    Err(xp) => -xp.delta * t,
                };
                let full = gauss::state_moments(&rec.snapshots[k])?.rotated(angle);
                rows.push(vec![rec.index as f64, t, kernel.mean_x, full.mean_x, kernel.mean_p, full.mean_p, kernel.var_x, full.var_x, kernel.var_p, full.var_p, moment_gap(&kernel, &full)]);
                det.push(d);
            }
            Ok((rows, det))
        })
        .collect::<Result<Vec<_>>>()?;
    let gap = max_of(per_seed.iter().flat_map(|(rows, _)| rows.iter().map(|r| r[10])));
    rep.at_most(format!("same-record moment gap vs truncated-Fock SME (n_max={}, dt={})", case.n_max, run.dt), gap, 0.05);
    let mut det_std = 0.0f64;
    for k in 0..times.len() {
        for c in 0..10 {
            let xs: Vec<f64> = per_seed.iter().map(|(_, d)| d[k][c]).collect();
            det_std = det_std.max(mean_std(&xs).1);
        }
    }
    rep.at_most(format!("deterministic kernel parameters: cross-trajectory std ({} trajectories)", recs.len()), det_std, 0.0);
    let columns = ["traj", "t", "kernel_mean_x", "sme_mean_x", "kernel_mean_p", "sme_mean_p", "kernel_var_x", "sme_var_x", "kernel_var_p", "sme_var_p", "max_gap"];
    rep.tables.push(Table { name: "moments".into(), columns: columns.map(String::from).to_vec(), rows: per_seed.into_iter().flat_map(|(r, _)| r).collect() });

    // Vacuum reduction: with n_th = 0, z = ξ + e^{−t}θ/4 and h = π + e^{−t}φ/4
    // obey ż = v − z, ḣ = −u − h along every record.
    let eta = match &case.family {
        Ok(fp) => fp.eta,
        Err(_) => 0.8,
    };
    let (u, v) = match &case.family {
        Ok(FluorescenceParams { u: Signal::Constant(u), v: Signal::Constant(v), .. }) if (*u, *v) != (0.0, 0.0) => (*u, *v),
        _ => (0.2, -0.4),
    };
    let fp0 = FluorescenceParams::new(eta, 0.0).with_drives(Signal::Constant(u), Signal::Constant(v));
    let w_red = InitialWigner::Coherent(ops::c(0.5, 0.0));
    let (m0, r0) = gauss::sme_oscillator_model(&OscillatorModel::Fluorescence(fp0.clone()), 12, &w_red)?;
    let rec = sme::simulate(&m0, &r0, run.t_final, case.reduction_dt, run.seed, 1, &[])?.remove(0);
    let states = gauss::fluorescence_filter(&fp0, &rec.dy, rec.n_channels, case.reduction_dt)?;
    let red = max_of(states.iter().map(|st| {
        let e = 1.0 - (-st.t).exp();
        let (z, h) = st.reduced();
        (z - v * e).abs().max((h + u * e).abs())
    }));
    rep.at_most(format!("vacuum reduction residual (u={u}, v={v}, dt={})", case.reduction_dt), red, 2e-2);
    Ok(rep.finish(start))
}

// ------------------------------------------------------------ emission

fn rel_unit(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1.0)
}

fn emission_residual(rho: &Operator, cf: &[f64; 13]) -> f64 {
    match multi::emission_coords(rho).ok().as_ref().and_then(multi::emission_deterministic_vars) {
        Some(v) => max_of((0..13).map(|i| rel_unit(v[i], cf[i]))),
        None => f64::NAN,
    }
}

/// Offset separating the refinement paths from the ensemble paths.
const REFINE_SEED_OFFSET: u64 = 0x5eed_0ff5e7;

/// Thirteen record-independent variables of indistinguishable emission
/// (equal rates): closed form, cross-trajectory spread and refinement.
pub fn emission_suite(rate: f64, eta1: f64, eta2: f64, rho0: &Operator, run: &RunParams, refine_traj: usize) -> Result<CheckReport> {
    let start = Instant::now();
    let mut rep = CheckReport::new("emission");
    let model = multi::emission_model(rate, eta1, eta2)?;
    let coords0 = multi::emission_coords(rho0)?;
    let init = multi::emission_deterministic_vars(&coords0).ok_or_else(|| Error::InvalidArgument("initial state has a vanishing denominator".into()))?;
    let tau = rate * run.t_final / 2.0;
    let cf = multi::emission_closed_form(&init, eta1, eta2, tau)?;
    let finals: Vec<Operator> = sme::simulate(&model, rho0, run.t_final, run.dt, run.seed, run.n_traj, &[run.t_final])?
        .into_iter()
        .map(|mut rec| rec.snapshots.remove(0))
        .collect();
    let vars: Vec<[f64; 13]> = finals
        .iter()
        .map(|r| multi::emission_coords(r).ok().as_ref().and_then(multi::emission_deterministic_vars).ok_or_else(|| Error::InvalidArgument("vanishing denominator at T".into())))
        .collect::<Result<_>>()?;
    let mut rows = Vec::new();
    let (mut worst_rel, mut worst_std) = (0.0f64, 0.0f64);
    for i in 0..13 {
        let xs: Vec<f64> = vars.iter().map(|v| v[i]).collect();
        let (m, s) = mean_std(&xs);
        let rel = max_of(xs.iter().map(|x| rel_unit(*x, cf[i])));
        worst_rel = worst_rel.max(rel);
        worst_std = worst_std.max(s);
        rows.push(vec![i as f64, cf[i], m, s, rel]);
    }
    rep.at_most(format!("closed-form match, max relative error ({} trajectories, T={}, dt={})", run.n_traj, run.t_final, run.dt), worst_rel, 2e-2);
    rep.at_most("deterministic variables: max cross-trajectory std", worst_std, 1e-2);
    let b: Vec<[f64; 9]> = finals.iter().filter_map(|r| multi::emission_coords(r).ok().and_then(|c| c.b)).collect();
    let std_b1 = mean_std(&b.iter().map(|x| x[1]).collect::<Vec<_>>()).1;
    let std_b2 = mean_std(&b.iter().map(|x| x[2]).collect::<Vec<_>>()).1;
    rep.at_least("record-driven B1: cross-trajectory std", std_b1, 0.1);
    rep.at_least("record-driven B2: cross-trajectory std", std_b2, 0.1);
    let columns = ["var_index", "closed_form", "mean", "std", "max_rel_err"].map(String::from).to_vec();
    rep.tables.push(Table { name: "emission_variables".into(), columns, rows });

    let pairs = refinement_pairs(&model, rho0, run.t_final, run.dt, run.seed.wrapping_add(REFINE_SEED_OFFSET), refine_traj, 1)?;
    let coarse: Vec<f64> = pairs.iter().map(|(c, _)| emission_residual(c.snapshots.last().expect("snapshot"), &cf)).collect();
    let fine: Vec<f64> = pairs.iter().map(|(_, f)| emission_residual(f.snapshots.last().expect("snapshot"), &cf)).collect();
    rep.info(format!("closed-form residual RMS at dt={}", 4.0 * run.dt), rms(&coarse));
    rep.info(format!("closed-form residual RMS at dt={}", run.dt), rms(&fine));
    rep.at_least(format!("closed-form residual refinement ratio ({refine_traj} shared paths)"), refinement_ratio(&coarse, &fine), 1.8);
    Ok(rep.finish(start))
}

// ------------------------------------------------------------ dispersive

/// Drive-free dispersive filter vs the full qudit ⊗ oscillator SME on shared records.
pub fn dispersive_suite(params: &DispersiveParams, c0: &Operator, w0: &InitialWigner, n_max: usize, run: &RunParams) -> Result<CheckReport> {
    let start = Instant::now();
    let mut rep = CheckReport::new("dispersive");
    let (model, rho0) = multi::dispersive_model(params, n_max, c0, w0)?;
    let d = params.d();
    let times: Vec<f64> = (1..=4).map(|k| run.t_final * k as f64 / 4.0).collect();
    let grid = GridSpec::default();
    let recs = sme::simulate(&model, &rho0, run.t_final, run.dt, run.seed, run.n_traj, &times)?;
    let per_seed = recs
        .par_iter()
        .map(|rec| -> Result<(Vec<Vec<f64>>, f64)> {
            let states = multi::dispersive_filter_nodrive(params, c0, &rec.dy, rec.n_channels, run.dt)?;
            let mut shape = 0.0f64;
            for st in &states {
                let (a, s, z) = gauss::fluorescence_params(params.eta, 0.0, st.t)?;
                shape = shape.max((st.a - a).abs()).max((st.s - s).abs()).max((st.d - z).abs());
            }
            let mut rows = Vec::new();
            for (k, &step) in rec.snapshot_steps.iter().enumerate() {
                let q = states[step].qudit_density(w0, &grid)?;
                let full = ops::partial_trace(&rec.snapshots[k], d, n_max + 1, true);
                let pop = max_of((0..d).map(|j| (q[(j, j)].re - full[(j, j)].re).abs()));
                let coh = max_of((0..d).flat_map(|a| (a + 1..d).map(move |b| (a, b))).map(|(a, b)| (q[(a, b)] - full[(a, b)]).norm()));
                let sum = (0..d).map(|j| q[(j, j)].re).sum::<f64>();
                rows.push(vec![rec.index as f64, rec.times[k], pop, coh, (sum - 1.0).abs()]);
            }
            Ok((rows, shape))
        })
        .collect::<Result<Vec<_>>>()?;
    let rows: Vec<Vec<f64>> = per_seed.iter().flat_map(|(r, _)| r.clone()).collect();
    rep.at_most(format!("qudit populations vs full SME (n_max={n_max}, dt={})", run.dt), max_of(rows.iter().map(|r| r[2])), 0.05);
    rep.at_most("qudit coherences vs full SME", max_of(rows.iter().map(|r| r[3])), 0.05);
    rep.at_most("reduced populations sum to one", max_of(rows.iter().map(|r| r[4])), 1e-6);
    rep.at_most("diagonal kernel shape vs fluorescence closed forms (max abs difference)", max_of(per_seed.iter().map(|(_, s)| *s)), 0.0);
    rep.tables.push(Table { name: "dispersive".into(), columns: ["traj", "t", "pop_gap", "coh_gap", "sum_dev"].map(String::from).to_vec(), rows });
    Ok(rep.finish(start))
}

pub fn write_table_csv(path: &std::path::Path, table: &Table) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Io(std::io::Error::other(e.to_string())))?;
    let io = |e: csv::Error| Error::Io(std::io::Error::other(e.to_string()));
    w.write_record(&table.columns).map_err(io)?;
    for row in &table.rows {
        w.write_record(row.iter().map(|v| super::run::fmt_float(*v))).map_err(io)?;
    }
    w.flush()?;
    Ok(())
}
