//! Confining-manifold dimension from the Lie algebra generated by the
//! diffusion fields `G_{L_k}` (η_k > 0) under brackets with the Stratonovich
//! drift and with each other.
//!
//! The rank is estimated numerically at a handful of interior sample states:
//! columns are vectorized field evaluations, normalized, and ranked by SVD
//! with a relative threshold and a spectral-gap sanity check.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{invalid, Result};
use crate::fields::{eval, FieldExpr};
use crate::ops::{self, Operator};
use crate::sme::ScenarioModel;

#[derive(Clone, Debug)]
pub struct RankOptions {
    pub n_points: usize,
    pub max_depth: usize,
    /// Relative singular-value threshold.
    pub sv_threshold: f64,
    pub seed: u64,
    /// Required ratio between the smallest kept and largest dropped singular value.
    pub gap: f64,
    pub max_resample: usize,
    /// Restrict sample states to these basis indices (truncated oscillators).
    pub support: Option<Vec<usize>>,
}

impl Default for RankOptions {
    fn default() -> Self {
        Self { n_points: 5, max_depth: 6, sv_threshold: 1e-7, seed: 1, gap: 10.0, max_resample: 3, support: None }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct GeneratorInfo {
    pub lineage: String,
    pub depth: usize,
}

#[derive(Clone, Debug, Serialize)]
pub struct LieAlgebraReport {
    pub generators: Vec<GeneratorInfo>,
    /// The admitted fields, in the same order as `generators`.
    #[serde(skip)]
    pub fields: Vec<Arc<FieldExpr>>,
    #[serde(skip)]
    pub sample_points: Vec<Operator>,
    pub singular_values: Vec<Vec<f64>>,
    pub ranks: Vec<usize>,
    #[serde(rename = "M")]
    pub m: usize,
    pub converged: bool,
    pub depth_reached: usize,
    pub candidates_evaluated: usize,
    pub ambiguous_resamples: usize,
    /// True when sampling was restricted (oscillator truncation): rank is indicative only.
    pub heuristic: bool,
}

fn sample_state(n: usize, opts: &RankOptions, rng: &mut ChaCha8Rng) -> Operator {
    match &opts.support {
        None => {
            let eps = if n < 40 { 0.025 } else { 0.5 / n as f64 };
            ops::random_interior_state(n, eps, rng)
        }
        Some(idx) => {
            let k = idx.len();
            let eps = if k < 40 { 0.025 } else { 0.5 / k as f64 };
            let small = ops::random_interior_state(k, eps, rng);
            let mut rho = ops::zeros(n);
            for (a, &i) in idx.iter().enumerate() {
                for (b, &j) in idx.iter().enumerate() {
                    rho[(i, j)] = small[(a, b)];
                }
            }
            rho
        }
    }
}

/// Normalize columns, zeroing those negligible relative to the largest.
fn prepared(cols: &[DVector<f64>]) -> Vec<DVector<f64>> {
    let maxn = cols.iter().map(|c| c.norm()).fold(0.0, f64::max);
    cols.iter()
        .map(|c| {
            let nrm = c.norm();
            if maxn == 0.0 || nrm < 1e-9 * maxn {
                DVector::zeros(c.len())
            } else {
                c / nrm
            }
        })
        .collect()
}

fn svd_rank(cols: &[DVector<f64>], threshold: f64) -> (usize, Vec<f64>) {
    if cols.is_empty() {
        return (0, vec![]);
    }
    let m = DMatrix::from_columns(&prepared(cols));
    let mut sv: Vec<f64> = m.singular_values().iter().copied().collect();
    sv.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let top = sv.first().copied().unwrap_or(0.0);
    let rank = if top == 0.0 { 0 } else { sv.iter().filter(|&&s| s > threshold * top).count() };
    (rank, sv)
}

/// SVD rank of vectorized field evaluations at `ρ`.
pub fn rank_at(fields: &[FieldExpr], rho: &Operator, sv_threshold: f64) -> Result<(usize, Vec<f64>)> {
    if fields.is_empty() {
        return invalid("rank_at needs at least one field");
    }
    let cols = fields.iter().map(|f| eval(f, rho).map(|v| ops::vectorize(&v))).collect::<Result<Vec<_>>>()?;
    Ok(svd_rank(&cols, sv_threshold))
}

fn gap_ok(sv: &[f64], rank: usize, gap: f64) -> bool {
    if rank == 0 || rank >= sv.len() {
        return true;
    }
    let dropped = sv[rank];
    dropped == 0.0 || sv[rank - 1] / dropped >= gap
}

/// Stratonovich drift `−i[H,·] + Σ F_L + Σ D_L`.
pub fn stratonovich_drift(model: &ScenarioModel) -> FieldExpr {
    let mut terms: Vec<(f64, Arc<FieldExpr>)> = vec![(1.0, Arc::new(FieldExpr::ham(model.h().clone())))];
    for (k, ch) in model.channels().iter().enumerate() {
        let name = format!("L{}", k + 1);
        terms.push((1.0, Arc::new(FieldExpr::f(ch.l().clone()).named(&name))));
        if ch.eta() > 0.0 {
            terms.push((1.0, Arc::new(FieldExpr::d(ch.l().clone(), ch.eta()).named(&name))));
        }
    }
    FieldExpr::sum(terms)
}

struct Member {
    expr: Arc<FieldExpr>,
    lineage: String,
    depth: usize,
}

pub fn manifold_dimension(
    model: &ScenarioModel,
    n_points: usize,
    max_depth: usize,
    sv_threshold: f64,
    seed: u64,
) -> Result<LieAlgebraReport> {
    manifold_dimension_with(model, &RankOptions { n_points, max_depth, sv_threshold, seed, ..Default::default() })
}

pub fn manifold_dimension_with(model: &ScenarioModel, opts: &RankOptions) -> Result<LieAlgebraReport> {
    if opts.n_points < 3 {
        return invalid("at least 3 sample points required");
    }
    if opts.max_depth < 1 {
        return invalid("max_depth must be at least 1");
    }
    let n = model.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut points: Vec<Operator> = (0..opts.n_points).map(|_| sample_state(n, opts, &mut rng)).collect();

    // drift-like fields: Stratonovich drift plus control directions
    let mut drifts: Vec<(Arc<FieldExpr>, String)> = vec![(Arc::new(stratonovich_drift(model)), "X0".into())];
    if let Some(d) = model.drive() {
        drifts.push((Arc::new(FieldExpr::ham(d.op_u.clone()).named("Hu")), "Hu".into()));
        drifts.push((Arc::new(FieldExpr::ham(d.op_v.clone()).named("Hv")), "Hv".into()));
    }

    let mut cols: Vec<Vec<DVector<f64>>> = vec![Vec::new(); points.len()];
    let mut ranks = vec![0usize; points.len()];
    let mut members: Vec<Member> = Vec::new();
    let mut evaluated = 0usize;

    let evaluate = |expr: &FieldExpr, points: &[Operator]| -> Result<Vec<DVector<f64>>> {
        points.par_iter().map(|p| eval(expr, p).map(|v| ops::vectorize(&v))).collect()
    };

    // try to admit a candidate; returns whether it raised the rank somewhere
    let try_admit = |expr: Arc<FieldExpr>,
                         lineage: String,
                         depth: usize,
                         cols: &mut Vec<Vec<DVector<f64>>>,
                         ranks: &mut Vec<usize>,
                         members: &mut Vec<Member>,
                         points: &[Operator]|
     -> Result<bool> {
        let vals = evaluate(&expr, points)?;
        let scale = vals.iter().map(|v| v.norm()).fold(0.0, f64::max);
        if scale < 1e-13 {
            return Ok(false);
        }
        let mut new_ranks = ranks.clone();
        let mut raised = false;
        for (i, v) in vals.iter().enumerate() {
            let mut trial = cols[i].clone();
            trial.push(v.clone());
            let (rk, _) = svd_rank(&trial, opts.sv_threshold);
            if rk > ranks[i] {
                raised = true;
            }
            new_ranks[i] = rk.max(ranks[i]);
        }
        if raised {
            for (i, v) in vals.into_iter().enumerate() {
                cols[i].push(v);
            }
            *ranks = new_ranks;
            members.push(Member { expr, lineage, depth });
        }
        Ok(raised)
    };

    let mut frontier: Vec<usize> = Vec::new();
    for (k, ch) in model.channels().iter().enumerate() {
        if ch.eta() > 0.0 {
            let e = Arc::new(FieldExpr::g(ch.l().clone()).named(&format!("L{}", k + 1)));
            evaluated += 1;
            if try_admit(e, format!("G(L{})", k + 1), 0, &mut cols, &mut ranks, &mut members, &points)? {
                frontier.push(members.len() - 1);
            }
        }
    }

    let mut converged = frontier.is_empty();
    let mut depth_reached = 0;
    let mut tried: std::collections::HashSet<(usize, usize)> = Default::default();
    for depth in 1..=opts.max_depth {
        if frontier.is_empty() {
            converged = true;
            break;
        }
        depth_reached = depth;
        let n_before = members.len();
        let mut next = Vec::new();
        let current: Vec<usize> = (0..n_before).collect();
        for &g in &frontier {
            let mut left: Vec<(Arc<FieldExpr>, String)> = drifts.clone();
            for &m in &current {
                let key = (m.min(g), m.max(g));
                if m == g || tried.contains(&key) {
                    continue;
                }
                tried.insert(key);
                left.push((members[m].expr.clone(), members[m].lineage.clone()));
            }
            for (x, xname) in left {
                let gm = &members[g];
                let cand = Arc::new(FieldExpr::Bracket(x, gm.expr.clone()));
                let lineage = format!("[{xname}, {}]", gm.lineage);
                let d = cand.depth();
                let _ = depth;
                evaluated += 1;
                if try_admit(cand, lineage, d, &mut cols, &mut ranks, &mut members, &points)? {
                    next.push(members.len() - 1);
                }
                if ranks.iter().all(|&r| r == n * n - 1) {
                    break;
                }
            }
        }
        if next.is_empty() {
            converged = true;
            break;
        }
        frontier = next;
        if ranks.iter().all(|&r| r == n * n - 1) {
            converged = true;
            break;
        }
    }

    // final ranks with gap check; resample ambiguous points
    let exprs: Vec<Arc<FieldExpr>> = members.iter().map(|m| m.expr.clone()).collect();
    let mut singular_values = Vec::with_capacity(points.len());
    let mut final_ranks = Vec::with_capacity(points.len());
    let mut ambiguous = 0usize;
    for i in 0..points.len() {
        let mut attempt = 0;
        loop {
            let vals: Vec<DVector<f64>> = if attempt == 0 {
                cols[i].clone()
            } else {
                exprs.iter().map(|e| eval(e, &points[i]).map(|v| ops::vectorize(&v))).collect::<Result<_>>()?
            };
            let (rk, sv) = svd_rank(&vals, opts.sv_threshold);
            if gap_ok(&sv, rk, opts.gap) || attempt >= opts.max_resample {
                singular_values.push(sv);
                final_ranks.push(rk);
                break;
            }
            ambiguous += 1;
            attempt += 1;
            points[i] = sample_state(n, opts, &mut rng);
        }
    }
    let m = final_ranks.iter().copied().max().unwrap_or(0);
    Ok(LieAlgebraReport {
        generators: members.iter().map(|m| GeneratorInfo { lineage: m.lineage.clone(), depth: m.depth }).collect(),
        fields: exprs,
        sample_points: points,
        singular_values,
        ranks: final_ranks,
        m,
        converged,
        depth_reached,
        candidates_evaluated: evaluated,
        ambiguous_resamples: ambiguous,
        heuristic: opts.support.is_some(),
    })
}

/// Per-coordinate spread of an ensemble of coordinate vectors.
#[derive(Clone, Debug, Serialize)]
pub struct SpreadStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub n: usize,
}

/// Sample mean and standard deviation of each coordinate over the ensemble.
pub fn confinement_diagnostic(values: &[Vec<f64>]) -> Result<SpreadStats> {
    if values.len() < 50 {
        return invalid(format!("confinement diagnostic needs >= 50 samples, got {}", values.len()));
    }
    let d = values[0].len();
    if values.iter().any(|v| v.len() != d) {
        return invalid("ragged coordinate vectors");
    }
    let n = values.len() as f64;
    let mean: Vec<f64> = (0..d).map(|j| values.iter().map(|v| v[j]).sum::<f64>() / n).collect();
    let std: Vec<f64> = (0..d)
        .map(|j| (values.iter().map(|v| (v[j] - mean[j]).powi(2)).sum::<f64>() / (n - 1.0)).sqrt())
        .collect();
    Ok(SpreadStats { mean, std, n: values.len() })
}

/// Shape of a 3-D point cloud: principal standard deviations and the residual
/// spread left after fitting the minor principal coordinate by a quadratic
/// surface over the two major ones.
#[derive(Clone, Debug, Serialize)]
pub struct CloudShape {
    pub principal_std: [f64; 3],
    pub surface_residual_std: f64,
}

pub fn cloud_shape(points: &[[f64; 3]]) -> Result<CloudShape> {
    if points.len() < 50 {
        return invalid("cloud_shape needs >= 50 points");
    }
    let n = points.len();
    let mut mean = [0.0; 3];
    for p in points {
        for j in 0..3 {
            mean[j] += p[j] / n as f64;
        }
    }
    let centered = DMatrix::from_fn(n, 3, |i, j| points[i][j] - mean[j]);
    let cov = centered.transpose() * &centered / (n as f64 - 1.0);
    let eig = nalgebra::SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..3).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].partial_cmp(&eig.eigenvalues[a]).unwrap());
    let axes: Vec<DVector<f64>> = order.iter().map(|&k| eig.eigenvectors.column(k).into_owned()).collect();
    let proj = |i: usize, k: usize| centered.row(i).transpose().dot(&axes[k]);
    let principal_std = [
        eig.eigenvalues[order[0]].max(0.0).sqrt(),
        eig.eigenvalues[order[1]].max(0.0).sqrt(),
        eig.eigenvalues[order[2]].max(0.0).sqrt(),
    ];
    let design = DMatrix::from_fn(n, 6, |i, c| {
        let (u, v) = (proj(i, 0), proj(i, 1));
        [1.0, u, v, u * u, u * v, v * v][c]
    });
    let target = DVector::from_fn(n, |i, _| proj(i, 2));
    let svd = design.clone().svd(true, true);
    let coef = svd.solve(&target, 1e-12).map_err(|e| crate::Error::InvalidArgument(e.to_string()))?;
    let resid = target - design * coef;
    let surface_residual_std = (resid.norm_squared() / (n as f64 - 6.0)).sqrt();
    Ok(CloudShape { principal_std, surface_residual_std })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ops::{c, pauli};

    #[test]
    fn single_nonzero_field_rank_one() {
        let rho = ops::maximally_mixed(3);
        let (rk, _) = rank_at(&[FieldExpr::g(ops::diag(&[0.0, 1.0, 1.8]))], &rho, 1e-7).unwrap();
        assert_eq!(rk, 1);
    }

    #[test]
    fn commutator_fields_on_qubit_are_dependent() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let rho = ops::random_interior_state(2, 0.05, &mut rng);
        let fs: Vec<FieldExpr> =
            ['X', 'Y', 'Z'].iter().map(|&l| FieldExpr::g(pauli(l).unwrap() * c(0.0, 1.0))).collect();
        assert_eq!(rank_at(&fs, &rho, 1e-7).unwrap().0, 2);
    }

    #[test]
    fn threshold_monotone() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let rho = ops::random_interior_state(3, 0.05, &mut rng);
        let fs = vec![
            FieldExpr::g(ops::diag(&[0.0, 1.0, 1.8])),
            FieldExpr::g(ops::diag(&[0.0, 1.0, 0.2])),
            FieldExpr::g(ops::diag(&[0.0, 1.0, 1.8 + 1e-9])),
        ];
        let loose = rank_at(&fs, &rho, 1e-4).unwrap().0;
        let tight = rank_at(&fs, &rho, 1e-12).unwrap().0;
        assert!(loose <= tight);
    }

    #[test]
    fn diagnostic_requires_samples() {
        assert!(confinement_diagnostic(&vec![vec![0.0]; 10]).is_err());
        let s = confinement_diagnostic(&vec![vec![1.0, 2.0]; 60]).unwrap();
        assert_eq!(s.std, vec![0.0, 0.0]);
    }
}
