//! Ensemble execution, CSV/JSON emission and confinement certificates.

use std::io::Write;
use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::gauss;
use crate::lierank;
use crate::ops;
use crate::sme;

use super::config::{Built, DiagnosticSpec, Family, ScenarioConfig};
use super::observe::{default_observables, Observer};

/// Snapshot rows of one trajectory, or the reason it failed.
#[derive(Clone, Debug)]
pub struct TrajectoryOutput {
    pub index: usize,
    pub times: Vec<f64>,
    pub values: Vec<Vec<f64>>,
    pub clip_events: usize,
    pub error: Option<String>,
}

#[derive(Clone, Debug)]
pub struct Ensemble {
    pub labels: Vec<String>,
    pub times: Vec<f64>,
    pub trajectories: Vec<TrajectoryOutput>,
    pub wall_time_s: f64,
}

impl Ensemble {
    /// Values of `column` at snapshot `k` over successful trajectories (NaN dropped).
    pub fn column(&self, column: &str, k: usize) -> Result<Vec<f64>> {
        let j = self.labels.iter().position(|l| l == column).ok_or_else(|| Error::Config(format!("no column `{column}` in the output")))?;
        Ok(self.trajectories.iter().filter(|t| t.error.is_none()).map(|t| t.values[k][j]).filter(|v| v.is_finite()).collect())
    }

    pub fn time_index(&self, t: f64) -> Option<usize> {
        self.times.iter().position(|s| (s - t).abs() < 1e-9)
    }
}

pub fn observables_for(cfg: &ScenarioConfig, built: &Built) -> Vec<String> {
    if cfg.output.observables.is_empty() {
        default_observables(&built.family)
    } else {
        cfg.output.observables.clone()
    }
}

/// Run every trajectory of the scenario in parallel; results are ordered by
/// trajectory index, so the output is independent of the thread count.
pub fn run_ensemble(cfg: &ScenarioConfig, built: &Built) -> Result<Ensemble> {
    let start = Instant::now();
    let run = &cfg.run;
    let observer = Observer::new(built, &observables_for(cfg, built))?;
    ops::validate_density(&built.rho0)?;
    let n_steps = sme::snapshot_grid(&[run.t_final], run.dt)?[0];
    let times = run.snapshots();
    let steps = sme::snapshot_grid(&times, run.dt)?;
    let nc = built.model.channels().len();
    let kernel_params = match (&built.family, observer.needs_kernel()) {
        (Family::Fluorescence { params, .. }, true) => Some(params),
        _ => None,
    };
    let trajectories = (0..run.n_traj)
        .into_par_iter()
        .map(|i| {
            let attempt = || -> Result<(Vec<Vec<f64>>, usize)> {
                let dw = sme::draw_increments(run.seed, i, n_steps, nc, run.dt);
                let rec = sme::run_with_increments(&built.model, &built.rho0, run.dt, dw, &steps)?;
                let kernel = match kernel_params {
                    Some(p) => Some(gauss::fluorescence_filter(p, &rec.dy, nc, run.dt)?),
                    None => None,
                };
                let rows = rec
                    .snapshots
                    .iter()
                    .zip(&steps)
                    .map(|(rho, &s)| observer.eval(rho, kernel.as_ref().map(|k| &k[s])))
                    .collect::<Result<Vec<_>>>()?;
                Ok((rows, rec.clip_events))
            };
            match attempt() {
                Ok((values, clip_events)) => TrajectoryOutput { index: i, times: times.clone(), values, clip_events, error: None },
                Err(e) => TrajectoryOutput { index: i, times: Vec::new(), values: Vec::new(), clip_events: 0, error: Some(e.to_string()) },
            }
        })
        .collect();
    Ok(Ensemble { labels: observer.labels().to_vec(), times, trajectories, wall_time_s: start.elapsed().as_secs_f64() })
}

/// Float formatting shared by every CSV: 17 significant digits.
pub fn fmt_float(x: f64) -> String {
    if x.is_nan() {
        "NaN".into()
    } else {
        format!("{x:.16e}")
    }
}

pub fn write_csv<W: Write>(out: W, ens: &Ensemble) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["traj_id".to_string(), "t".to_string()];
    header.extend(ens.labels.iter().cloned());
    header.push("error".into());
    w.write_record(&header).map_err(csv_err)?;
    for tr in &ens.trajectories {
        match &tr.error {
            Some(msg) => {
                let mut row = vec![tr.index.to_string()];
                row.extend(std::iter::repeat(String::new()).take(ens.labels.len() + 1));
                row.push(msg.clone());
                w.write_record(&row).map_err(csv_err)?;
            }
            None => {
                for (t, vals) in tr.times.iter().zip(&tr.values) {
                    let mut row = vec![tr.index.to_string(), fmt_float(*t)];
                    row.extend(vals.iter().map(|v| fmt_float(*v)));
                    row.push(String::new());
                    w.write_record(&row).map_err(csv_err)?;
                }
            }
        }
    }
    w.flush()?;
    Ok(())
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e.to_string()))
}

#[derive(Clone, Debug, Serialize)]
pub struct ColumnStats {
    pub name: String,
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

#[derive(Clone, Debug, Serialize)]
pub struct TimeStats {
    pub t: f64,
    pub columns: Vec<ColumnStats>,
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let m = xs.iter().sum::<f64>() / n;
    let v = if xs.len() > 1 { xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0) } else { 0.0 };
    (m, v.sqrt())
}

pub fn spread_stats(ens: &Ensemble) -> Result<Vec<TimeStats>> {
    (0..ens.times.len())
        .map(|k| {
            let columns = ens
                .labels
                .iter()
                .map(|name| {
                    let xs = ens.column(name, k)?;
                    let (mean, std) = mean_std(&xs);
                    Ok(ColumnStats { name: name.clone(), mean, std, n: xs.len() })
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(TimeStats { t: ens.times[k], columns })
        })
        .collect()
}

#[derive(Clone, Debug, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CertificateKind {
    /// std ≤ bound
    Collapse,
    /// std ≥ bound
    Spread,
    /// smallest principal std of the 3-column cloud ≥ bound
    Spread3Minor,
    /// residual off the best quadratic surface ≥ bound
    Spread3Surface,
}

#[derive(Clone, Debug, Serialize)]
pub struct CertificateRow {
    pub t: f64,
    pub kind: CertificateKind,
    pub columns: Vec<String>,
    pub value: f64,
    pub bound: f64,
    pub pass: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct Certificate {
    pub rows: Vec<CertificateRow>,
    pub pass: bool,
}

/// Confinement certificate of a snapshot ensemble.
pub fn certify(spec: &DiagnosticSpec, ens: &Ensemble) -> Result<Certificate> {
    let times = if spec.times.is_empty() { ens.times.clone() } else { spec.times.clone() };
    let mut rows = Vec::new();
    for &t in &times {
        let k = ens.time_index(t).ok_or_else(|| Error::Config(format!("diagnostic time {t} is not a snapshot time")))?;
        let ok = |v: f64, b: f64, le: bool| v.is_finite() && if le { v <= b } else { v >= b };
        let stds = |cols: &[String]| -> Result<Vec<f64>> {
            let vals: Vec<Vec<f64>> = cols.iter().map(|c| ens.column(c, k)).collect::<Result<_>>()?;
            let n = vals.iter().map(Vec::len).min().unwrap_or(0);
            let samples: Vec<Vec<f64>> = (0..n).map(|i| vals.iter().map(|v| v[i]).collect()).collect();
            Ok(lierank::confinement_diagnostic(&samples)?.std)
        };
        if !spec.deterministic.is_empty() {
            for (col, s) in spec.deterministic.iter().zip(stds(&spec.deterministic)?) {
                rows.push(CertificateRow { t, kind: CertificateKind::Collapse, columns: vec![col.clone()], value: s, bound: spec.collapse_tol, pass: ok(s, spec.collapse_tol, true) });
            }
        }
        if !spec.stochastic.is_empty() {
            for (col, s) in spec.stochastic.iter().zip(stds(&spec.stochastic)?) {
                rows.push(CertificateRow { t, kind: CertificateKind::Spread, columns: vec![col.clone()], value: s, bound: spec.spread_min, pass: ok(s, spec.spread_min, false) });
            }
        }
        if !spec.spread3.is_empty() {
            if spec.spread3.len() != 3 {
                return Err(Error::Config("diagnostic.spread3 needs exactly three columns".into()));
            }
            let cols: Vec<Vec<f64>> = spec.spread3.iter().map(|c| ens.column(c, k)).collect::<Result<_>>()?;
            let n = cols.iter().map(Vec::len).min().unwrap_or(0);
            let pts: Vec<[f64; 3]> = (0..n).map(|i| [cols[0][i], cols[1][i], cols[2][i]]).collect();
            let shape = lierank::cloud_shape(&pts)?;
            let minor = shape.principal_std[2];
            let surf = shape.surface_residual_std;
            rows.push(CertificateRow { t, kind: CertificateKind::Spread3Minor, columns: spec.spread3.clone(), value: minor, bound: spec.surface_min, pass: ok(minor, spec.surface_min, false) });
            rows.push(CertificateRow { t, kind: CertificateKind::Spread3Surface, columns: spec.spread3.clone(), value: surf, bound: spec.surface_min, pass: ok(surf, spec.surface_min, false) });
        }
    }
    let pass = rows.iter().all(|r| r.pass);
    Ok(Certificate { rows, pass })
}

#[derive(Clone, Debug, Serialize)]
pub struct Summary {
    /// The effective configuration (after command-line overrides).
    pub config: ScenarioConfig,
    pub seed: u64,
    pub dt: f64,
    pub t_final: f64,
    pub n_traj: usize,
    pub n_failed: usize,
    pub clip_events: usize,
    pub wall_time_s: f64,
    pub columns: Vec<String>,
    pub spread: Vec<TimeStats>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub certificate: Option<Certificate>,
}

pub fn summarize(cfg: &ScenarioConfig, ens: &Ensemble) -> Result<Summary> {
    let certificate = cfg.diagnostic.as_ref().map(|d| certify(d, ens)).transpose()?;
    Ok(Summary {
        config: cfg.clone(),
        seed: cfg.run.seed,
        dt: cfg.run.dt,
        t_final: cfg.run.t_final,
        n_traj: cfg.run.n_traj,
        n_failed: ens.trajectories.iter().filter(|t| t.error.is_some()).count(),
        clip_events: ens.trajectories.iter().map(|t| t.clip_events).sum(),
        wall_time_s: ens.wall_time_s,
        columns: ens.labels.clone(),
        spread: spread_stats(ens)?,
        certificate,
    })
}

/// Run a scenario and write `<stem>_trajectories.csv` and `<stem>_summary.json`.
pub fn simulate_to(cfg: &ScenarioConfig, out_dir: &Path) -> Result<Summary> {
    cfg.validate()?;
    let built = cfg.build()?;
    let ens = run_ensemble(cfg, &built)?;
    let summary = summarize(cfg, &ens)?;
    std::fs::create_dir_all(out_dir)?;
    let stem = cfg.stem();
    write_csv(std::fs::File::create(out_dir.join(format!("{stem}_trajectories.csv")))?, &ens)?;
    write_json(&out_dir.join(format!("{stem}_summary.json")), &summary)?;
    Ok(summary)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::Io(std::io::Error::other(e)))?;
    std::fs::write(path, text + "\n")?;
    Ok(())
}
