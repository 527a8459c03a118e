//! Scenario configuration: a TOML document with a fixed schema. Unknown keys
//! are rejected and every physical constraint is checked before a run.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gauss::{FluorescenceParams, InitialWigner, OscillatorModel, XpParams};
use crate::lierank::RankOptions;
use crate::multi::{self, DispersiveParams};
use crate::ops::{self, c, r, Operator};
use crate::qnd::{self, QndModel};
use crate::sme::{MeasurementChannel, ScenarioModel, Signal};

fn cfg<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Config(msg.into()))
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub model: ModelSpec,
    #[serde(default)]
    pub initial: InitialSpec,
    #[serde(default)]
    pub run: RunSpec,
    #[serde(default)]
    pub output: OutputSpec,
    #[serde(default)]
    pub rank: RankSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub diagnostic: Option<DiagnosticSpec>,
}

/// Complex matrix as separate real and imaginary row lists.
#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct MatrixSpec {
    pub re: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub im: Option<Vec<Vec<f64>>>,
}

impl MatrixSpec {
    pub fn to_operator(&self) -> Result<Operator> {
        let n = self.re.len();
        if n == 0 || self.re.iter().any(|row| row.len() != n) {
            return cfg("matrix must be square and non-empty");
        }
        let im = match &self.im {
            Some(im) if im.len() != n || im.iter().any(|row| row.len() != n) => return cfg("imaginary part has the wrong shape"),
            Some(im) => im.clone(),
            None => vec![vec![0.0; n]; n],
        };
        Ok(Operator::from_fn(n, n, |i, j| c(self.re[i][j], im[i][j])))
    }
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelSpec {
    pub l: MatrixSpec,
    pub eta: f64,
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ModelSpec {
    /// Commuting diagonal measurements `L_k = diag(λ_k)`, optionally with a
    /// Rabi coupling between levels 0 and 1.
    QutritQnd {
        lambda: Vec<Vec<f64>>,
        eta: Vec<f64>,
        #[serde(default)]
        rabi: Option<f64>,
        /// Add the `i·L_k` quadrature partner of every channel.
        #[serde(default)]
        heterodyne: bool,
    },
    Repetition {
        eta: f64,
        syndromes: usize,
        #[serde(default)]
        gamma_flip: f64,
        #[serde(default = "all_qubits")]
        flip_qubits: Vec<usize>,
    },
    Fluorescence {
        eta: f64,
        #[serde(default)]
        n_th: f64,
        #[serde(default)]
        u: f64,
        #[serde(default)]
        v: f64,
        n_max: usize,
        /// Kerr term `kerr · (a a†)²`; leaves the Gaussian-kernel family.
        #[serde(default)]
        kerr: f64,
        /// Monitor only `a` (drop the `i·a` channel); leaves the kernel family.
        #[serde(default)]
        homodyne_only: bool,
    },
    Xp {
        gamma_x: f64,
        gamma_p: f64,
        gamma_l: f64,
        eta_x: f64,
        eta_p: f64,
        #[serde(default)]
        n_th: f64,
        #[serde(default)]
        delta: f64,
        #[serde(default)]
        u: f64,
        #[serde(default)]
        v: f64,
        n_max: usize,
    },
    Emission {
        rate1: f64,
        rate2: f64,
        eta1: f64,
        eta2: f64,
    },
    Dispersive {
        shifts: Vec<f64>,
        eta: f64,
        #[serde(default)]
        u: f64,
        #[serde(default)]
        v: f64,
        n_max: usize,
    },
    Custom {
        h: MatrixSpec,
        channels: Vec<ChannelSpec>,
        #[serde(default)]
        factor_dims: Option<Vec<usize>>,
    },
}

fn all_qubits() -> Vec<usize> {
    vec![1, 2, 3]
}

/// Oscillator initial state.
#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum WignerSpec {
    Coherent { alpha: [f64; 2] },
    Cat { alpha: [f64; 2] },
    Thermal { n: f64 },
    Fock { n: usize },
}

impl WignerSpec {
    pub fn to_wigner(&self) -> Result<InitialWigner> {
        Ok(match *self {
            Self::Coherent { alpha } => InitialWigner::Coherent(c(alpha[0], alpha[1])),
            Self::Cat { alpha } => InitialWigner::Cat(c(alpha[0], alpha[1])),
            Self::Thermal { n } if n >= 0.0 && n.is_finite() => InitialWigner::Thermal(n),
            Self::Thermal { .. } => return cfg("thermal occupation must be finite and >= 0"),
            Self::Fock { n } => InitialWigner::Fock(n),
        })
    }
}

/// Initial state. Finite-dimensional models (and the qudit of the
/// dispersive model) take exactly one of `state`, `amplitudes`, `density`;
/// oscillator models take `oscillator`.
#[derive(Clone, Debug, Default, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct InitialSpec {
    /// `ground`, `maximally-mixed` or `uniform` (equal-weight superposition).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub state: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub amplitudes: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub amplitudes_im: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub density: Option<MatrixSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub oscillator: Option<WignerSpec>,
}

impl InitialSpec {
    pub fn finite_state(&self, n: usize) -> Result<Operator> {
        let given = [self.state.is_some(), self.amplitudes.is_some(), self.density.is_some()].iter().filter(|x| **x).count();
        if given != 1 {
            return cfg("initial state: give exactly one of `state`, `amplitudes`, `density`");
        }
        if self.amplitudes_im.is_some() && self.amplitudes.is_none() {
            return cfg("`amplitudes_im` requires `amplitudes`");
        }
        if let Some(name) = &self.state {
            return match name.as_str() {
                "ground" => Ok(ops::pure(&ops::basis_ket(n, 0))),
                "maximally-mixed" => Ok(ops::maximally_mixed(n)),
                "uniform" => Ok(ops::pure(&DVector::from_element(n, r(1.0 / (n as f64).sqrt())))),
                other => cfg(format!("unknown named state `{other}`")),
            };
        }
        if let Some(re) = &self.amplitudes {
            let im = self.amplitudes_im.clone().unwrap_or_else(|| vec![0.0; re.len()]);
            if re.len() != n || im.len() != n {
                return cfg(format!("initial amplitudes must have length {n}"));
            }
            let psi = DVector::from_iterator(n, re.iter().zip(&im).map(|(a, b)| c(*a, *b)));
            let norm = psi.norm();
            if !(norm > 0.0) || !norm.is_finite() {
                return cfg("initial amplitudes must be finite and not all zero");
            }
            if (norm - 1.0).abs() > 1e-6 {
                return cfg(format!("initial amplitudes have norm {norm}, expected 1"));
            }
            return Ok(ops::pure(&(psi / r(norm))));
        }
        let rho = self.density.as_ref().expect("counted above").to_operator()?;
        if rho.nrows() != n {
            return cfg(format!("initial density must be {n}x{n}"));
        }
        ops::validate_density(&rho)?;
        Ok(rho)
    }

    pub fn wigner(&self) -> Result<InitialWigner> {
        match &self.oscillator {
            Some(w) => w.to_wigner(),
            None => cfg("oscillator models need `initial.oscillator`"),
        }
    }
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct RunSpec {
    #[serde(default = "default_t")]
    pub t_final: f64,
    #[serde(default = "default_dt")]
    pub dt: f64,
    #[serde(default = "default_traj")]
    pub n_traj: usize,
    #[serde(default = "default_seed")]
    pub seed: u64,
    /// Defaults to `[t_final]`.
    #[serde(default)]
    pub snapshot_times: Vec<f64>,
}

fn default_t() -> f64 {
    0.3
}
fn default_dt() -> f64 {
    1e-4
}
fn default_traj() -> usize {
    1
}
fn default_seed() -> u64 {
    1
}

impl Default for RunSpec {
    fn default() -> Self {
        Self { t_final: default_t(), dt: default_dt(), n_traj: default_traj(), seed: default_seed(), snapshot_times: Vec::new() }
    }
}

impl RunSpec {
    pub fn snapshots(&self) -> Vec<f64> {
        if self.snapshot_times.is_empty() {
            vec![self.t_final]
        } else {
            self.snapshot_times.clone()
        }
    }
}

#[derive(Clone, Debug, Default, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSpec {
    /// Coordinate maps written as CSV columns; empty selects a per-model default.
    #[serde(default)]
    pub observables: Vec<String>,
    /// File stem for outputs (defaults to the scenario name or `scenario`).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stem: Option<String>,
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct RankSpec {
    #[serde(default = "default_points")]
    pub n_points: usize,
    #[serde(default = "default_depth")]
    pub max_depth: usize,
    #[serde(default = "default_sv")]
    pub sv_threshold: f64,
    #[serde(default = "default_seed")]
    pub seed: u64,
}

fn default_points() -> usize {
    5
}
fn default_depth() -> usize {
    6
}
fn default_sv() -> f64 {
    1e-7
}

impl Default for RankSpec {
    fn default() -> Self {
        Self { n_points: default_points(), max_depth: default_depth(), sv_threshold: default_sv(), seed: default_seed() }
    }
}

impl RankSpec {
    pub fn options(&self) -> RankOptions {
        RankOptions { n_points: self.n_points, max_depth: self.max_depth, sv_threshold: self.sv_threshold, seed: self.seed, ..RankOptions::default() }
    }
}

/// Confinement certificate evaluated on the snapshot ensemble at each time.
#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct DiagnosticSpec {
    /// Columns that must collapse (std ≤ `collapse_tol`).
    #[serde(default)]
    pub deterministic: Vec<String>,
    /// Columns that must spread (std ≥ `spread_min`).
    #[serde(default)]
    pub stochastic: Vec<String>,
    /// Three columns whose cloud must spread in all three directions.
    #[serde(default)]
    pub spread3: Vec<String>,
    #[serde(default = "default_collapse")]
    pub collapse_tol: f64,
    #[serde(default = "default_spread")]
    pub spread_min: f64,
    /// Lower bound on the off-surface residual of the `spread3` cloud.
    #[serde(default = "default_surface")]
    pub surface_min: f64,
    /// Times at which the certificate is evaluated (defaults to all snapshots).
    #[serde(default)]
    pub times: Vec<f64>,
}

fn default_collapse() -> f64 {
    1e-2
}
fn default_spread() -> f64 {
    0.05
}
fn default_surface() -> f64 {
    1e-2
}

/// Fully built model with its initial state.
pub struct Built {
    pub model: ScenarioModel,
    pub rho0: Operator,
    /// Extra handles for the reduced-filter families.
    pub family: Family,
}

pub enum Family {
    Qnd(QndModel),
    Repetition(Box<qnd::RepetitionModel>),
    Fluorescence { params: FluorescenceParams, w0: InitialWigner, kernel: bool },
    Xp { params: XpParams, w0: InitialWigner },
    Emission,
    Dispersive { params: DispersiveParams, c0: Operator, w0: InitialWigner },
    Custom,
}

fn check_eta(name: &str, e: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&e) {
        return cfg(format!("{name} = {e} outside [0, 1]"));
    }
    Ok(())
}

impl ScenarioConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let c: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn stem(&self) -> String {
        self.output.stem.clone().or_else(|| self.name.clone()).unwrap_or_else(|| "scenario".into())
    }

    pub fn validate(&self) -> Result<()> {
        let run = &self.run;
        if !(run.dt > 0.0 && run.dt.is_finite()) {
            return cfg("run.dt must be positive");
        }
        if !(run.t_final >= 0.0 && run.t_final.is_finite()) {
            return cfg("run.t_final must be finite and >= 0");
        }
        if run.snapshots().iter().any(|&t| t < 0.0 || t > run.t_final + 1e-12) {
            return cfg("snapshot times must lie in [0, t_final]");
        }
        match &self.model {
            ModelSpec::QutritQnd { lambda, eta, .. } => {
                if lambda.is_empty() || lambda.iter().any(|l| l.len() != lambda[0].len() || l.len() < 2) {
                    return cfg("lambda must be a non-empty list of equal-length eigenvalue lists (dimension >= 2)");
                }
                if eta.len() != lambda.len() {
                    return cfg("eta needs one efficiency per lambda row");
                }
                for e in eta {
                    check_eta("eta", *e)?;
                }
            }
            ModelSpec::Repetition { eta, syndromes, gamma_flip, flip_qubits } => {
                check_eta("eta", *eta)?;
                if !(*syndromes == 2 || *syndromes == 3) {
                    return cfg("repetition code supports 2 or 3 syndromes");
                }
                if *gamma_flip < 0.0 || flip_qubits.iter().any(|q| !(1..=3).contains(q)) {
                    return cfg("gamma_flip must be >= 0 and flip qubits in 1..=3");
                }
            }
            ModelSpec::Fluorescence { eta, n_th, n_max, .. } => {
                check_eta("eta", *eta)?;
                if *n_th < 0.0 || *n_max < 2 {
                    return cfg("need n_th >= 0 and n_max >= 2");
                }
            }
            ModelSpec::Xp { eta_x, eta_p, n_max, .. } => {
                check_eta("eta_x", *eta_x)?;
                check_eta("eta_p", *eta_p)?;
                if *n_max < 2 {
                    return cfg("need n_max >= 2");
                }
            }
            ModelSpec::Emission { rate1, rate2, eta1, eta2 } => {
                check_eta("eta1", *eta1)?;
                check_eta("eta2", *eta2)?;
                if !(*rate1 > 0.0 && *rate2 > 0.0) {
                    return cfg("emission rates must be positive");
                }
            }
            ModelSpec::Dispersive { shifts, eta, n_max, .. } => {
                check_eta("eta", *eta)?;
                if shifts.len() < 2 || *n_max < 2 {
                    return cfg("dispersive model needs >= 2 levels and n_max >= 2");
                }
            }
            ModelSpec::Custom { channels, .. } => {
                for ch in channels {
                    check_eta("channel eta", ch.eta)?;
                }
            }
        }
        Ok(())
    }

    pub fn build(&self) -> Result<Built> {
        let init = &self.initial;
        Ok(match &self.model {
            ModelSpec::QutritQnd { lambda, eta, rabi, heterodyne } => {
                let n = lambda[0].len();
                let qnd = if *heterodyne {
                    QndModel::heterodyne(lambda.clone(), eta.clone(), eta.clone())?
                } else {
                    QndModel::diagonal(lambda.clone(), eta.clone())?
                };
                let h = rabi.map(|om| (ops::ket_bra(n, 0, 1) + ops::ket_bra(n, 1, 0)) * r(om));
                let model = qnd.to_scenario(h)?;
                Built { model, rho0: init.finite_state(n)?, family: Family::Qnd(qnd) }
            }
            ModelSpec::Repetition { eta, syndromes, gamma_flip, flip_qubits } => {
                let rep = qnd::repetition_model(*eta, *gamma_flip, *syndromes, flip_qubits)?;
                Built { model: rep.model.clone(), rho0: init.finite_state(8)?, family: Family::Repetition(Box::new(rep)) }
            }
            ModelSpec::Fluorescence { eta, n_th, u, v, n_max, kerr, homodyne_only } => {
                let params = FluorescenceParams::new(*eta, *n_th).with_drives(Signal::Constant(*u), Signal::Constant(*v));
                let w0 = init.wigner()?;
                let (model, rho0) = crate::gauss::sme_oscillator_model(&OscillatorModel::Fluorescence(params.clone()), *n_max, &w0)?;
                let kernel = *kerr == 0.0 && !*homodyne_only;
                let model = if kernel { model } else { modified_fluorescence(&model, *n_max, *kerr, *homodyne_only)? };
                Built { model, rho0, family: Family::Fluorescence { params, w0, kernel } }
            }
            ModelSpec::Xp { gamma_x, gamma_p, gamma_l, eta_x, eta_p, n_th, delta, u, v, n_max } => {
                let params = XpParams::new(*gamma_x, *gamma_p, *gamma_l, *eta_x, *eta_p, *n_th)
                    .with_delta(*delta)
                    .with_drives(Signal::Constant(*u), Signal::Constant(*v));
                let w0 = init.wigner()?;
                let (model, rho0) = crate::gauss::sme_oscillator_model(&OscillatorModel::Xp(params.clone()), *n_max, &w0)?;
                Built { model, rho0, family: Family::Xp { params, w0 } }
            }
            ModelSpec::Emission { rate1, rate2, eta1, eta2 } => {
                let model = multi::emission_model_rates(*rate1, *rate2, *eta1, *eta2)?;
                Built { model, rho0: init.finite_state(4)?, family: Family::Emission }
            }
            ModelSpec::Dispersive { shifts, eta, u, v, n_max } => {
                let params = DispersiveParams::new(shifts.clone(), *eta).with_drives(Signal::Constant(*u), Signal::Constant(*v));
                let c0 = init.finite_state(shifts.len())?;
                let w0 = init.wigner()?;
                let (model, rho0) = multi::dispersive_model(&params, *n_max, &c0, &w0)?;
                Built { model, rho0, family: Family::Dispersive { params, c0, w0 } }
            }
            ModelSpec::Custom { h, channels, factor_dims } => {
                let h = h.to_operator()?;
                let n = h.nrows();
                let chans = channels
                    .iter()
                    .map(|ch| {
                        let l = ch.l.to_operator()?;
                        if l.nrows() != n {
                            return cfg("channel operator dimension differs from H");
                        }
                        MeasurementChannel::new(l, ch.eta)
                    })
                    .collect::<Result<Vec<_>>>()?;
                let dims = factor_dims.clone().unwrap_or_else(|| vec![n]);
                let model = ScenarioModel::new(h, chans, dims)?;
                Built { model, rho0: init.finite_state(n)?, family: Family::Custom }
            }
        })
    }
}

/// Fluorescence variants outside the kernel family: Kerr term and/or `a`-only monitoring.
fn modified_fluorescence(base: &ScenarioModel, n_max: usize, kerr: f64, homodyne_only: bool) -> Result<ScenarioModel> {
    let a = ops::annihilation(n_max);
    let aad = &a * a.adjoint();
    let h = base.h() + &aad * &aad * r(kerr);
    let channels: Vec<MeasurementChannel> = base
        .channels()
        .iter()
        .enumerate()
        .filter(|(k, _)| !(homodyne_only && *k == 1))
        .map(|(_, ch)| ch.clone())
        .collect();
    let mut m = ScenarioModel::new(h, channels, base.factor_dims().to_vec())?;
    if let Some(d) = base.drive() {
        m = m.with_drive(d.clone())?;
    }
    Ok(m)
}
