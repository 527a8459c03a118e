//! Coordinate maps: named groups of real columns evaluated on each snapshot.

use crate::error::{Error, Result};
use crate::gauss::FluorescenceKernelState;
use crate::multi;
use crate::ops::{self, Operator};
use crate::qnd::{self, QndModel, REPETITION_SUBSPACES};

use super::config::{Built, Family};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Group {
    Populations,
    Coherences,
    CoherenceSums,
    CRatios,
    CSums,
    Phases,
    Pauli,
    Purity,
    X,
    P,
    N,
    Position,
    Parity,
    Qnd,
    Repetition,
    Emission,
    Qudit,
    Kernel,
}

const GROUPS: [(&str, Group); 18] = [
    ("populations", Group::Populations),
    ("coherences", Group::Coherences),
    ("coherence_sums", Group::CoherenceSums),
    ("c_ratios", Group::CRatios),
    ("c_sums", Group::CSums),
    ("phases", Group::Phases),
    ("pauli", Group::Pauli),
    ("purity", Group::Purity),
    ("x", Group::X),
    ("p", Group::P),
    ("n", Group::N),
    ("position", Group::Position),
    ("parity", Group::Parity),
    ("qnd", Group::Qnd),
    ("repetition", Group::Repetition),
    ("emission", Group::Emission),
    ("qudit", Group::Qudit),
    ("kernel", Group::Kernel),
];

pub fn known_observables() -> Vec<&'static str> {
    GROUPS.iter().map(|(n, _)| *n).collect()
}

/// Per-model default columns.
pub fn default_observables(family: &Family) -> Vec<String> {
    let names: &[&str] = match family {
        Family::Qnd(_) => &["populations", "coherence_sums", "c_sums", "c_ratios", "phases", "qnd"],
        Family::Repetition(_) => &["repetition"],
        Family::Fluorescence { kernel: true, .. } => &["position", "parity", "n", "kernel"],
        Family::Fluorescence { .. } | Family::Xp { .. } => &["position", "parity", "n", "x", "p"],
        Family::Emission => &["emission"],
        Family::Dispersive { .. } => &["qudit", "x", "p", "n"],
        Family::Custom => &["populations", "coherences"],
    };
    names.iter().map(|s| s.to_string()).collect()
}

/// Oscillator operators embedded in the full space.
struct OscOps {
    x: Operator,
    p: Operator,
    n: Operator,
    parity: Operator,
}

pub struct Observer {
    groups: Vec<Group>,
    labels: Vec<String>,
    dim: usize,
    osc: Option<OscOps>,
    qnd: Option<QndModel>,
    qudit: Option<(usize, usize)>,
    pauli: Vec<(String, Operator)>,
}

fn pairs(n: usize) -> impl Iterator<Item = (usize, usize)> {
    (0..n).flat_map(move |a| (a + 1..n).map(move |b| (a, b)))
}

impl Observer {
    pub fn new(built: &Built, names: &[String]) -> Result<Self> {
        let dim = built.model.dim();
        let mut groups = Vec::new();
        for name in names {
            let g = GROUPS
                .iter()
                .find(|(n, _)| n == name)
                .map(|(_, g)| *g)
                .ok_or_else(|| Error::Config(format!("unknown observable `{name}`; known: {}", known_observables().join(", "))))?;
            if !groups.contains(&g) {
                groups.push(g);
            }
        }
        let osc = match &built.family {
            Family::Fluorescence { .. } | Family::Xp { .. } => Some((1, dim - 1)),
            Family::Dispersive { params, .. } => Some((params.d(), dim / params.d() - 1)),
            _ => None,
        }
        .map(|(d, n_max)| {
            let id = ops::identity(d);
            OscOps {
                x: ops::kron(&id, &ops::quad_x(n_max)),
                p: ops::kron(&id, &ops::quad_p(n_max)),
                n: ops::kron(&id, &ops::number(n_max)),
                parity: ops::kron(&id, &ops::parity(n_max)),
            }
        });
        let qnd = match &built.family {
            Family::Qnd(q) => Some(q.clone()),
            _ => None,
        };
        let qudit = match &built.family {
            Family::Dispersive { params, .. } => Some((params.d(), dim / params.d())),
            _ => None,
        };
        let dims = built.model.factor_dims();
        let mut pauli = Vec::new();
        for g in &groups {
            let ok = match g {
                Group::X | Group::P | Group::N | Group::Position | Group::Parity => osc.is_some(),
                Group::Qnd => qnd.is_some(),
                Group::Repetition => matches!(built.family, Family::Repetition(_)),
                Group::Emission => matches!(built.family, Family::Emission),
                Group::Qudit => qudit.is_some(),
                Group::Kernel => matches!(built.family, Family::Fluorescence { kernel: true, .. }),
                Group::Pauli => dims.iter().all(|&d| d == 2),
                _ => true,
            };
            if !ok {
                let name = GROUPS.iter().find(|(_, x)| x == g).map(|(n, _)| *n).unwrap_or("?");
                return Err(Error::Config(format!("observable `{name}` is not defined for this model")));
            }
        }
        if groups.contains(&Group::Pauli) {
            let k = dims.len();
            for idx in 1..4usize.pow(k as u32) {
                let label: String = (0..k).map(|q| ['I', 'X', 'Y', 'Z'][(idx / 4usize.pow((k - 1 - q) as u32)) % 4]).collect();
                pauli.push((label.clone(), ops::pauli_string(&label)?));
            }
        }
        let mut obs = Self { groups, labels: Vec::new(), dim, osc, qnd, qudit, pauli };
        obs.labels = obs.make_labels();
        Ok(obs)
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn needs_kernel(&self) -> bool {
        self.groups.contains(&Group::Kernel)
    }

    fn make_labels(&self) -> Vec<String> {
        let n = self.dim;
        let mut out = Vec::new();
        for g in &self.groups {
            match g {
                Group::Populations => out.extend((0..n).map(|i| format!("p_{i}"))),
                Group::Coherences => {
                    for (a, b) in pairs(n) {
                        out.push(format!("re_{a}_{b}"));
                        out.push(format!("im_{a}_{b}"));
                    }
                }
                Group::CoherenceSums => out.extend(pairs(n).map(|(a, b)| format!("s_{a}_{b}"))),
                Group::CRatios => out.extend(pairs(n).map(|(a, b)| format!("c_{a}_{b}"))),
                Group::CSums => out.extend(pairs(n).map(|(a, b)| format!("csum_{a}_{b}"))),
                Group::Phases => out.extend(pairs(n).map(|(a, b)| format!("phase_{a}_{b}"))),
                Group::Pauli => out.extend(self.pauli.iter().map(|(l, _)| format!("r_{l}"))),
                Group::Purity => out.push("purity".into()),
                Group::X => out.push("x".into()),
                Group::P => out.push("p".into()),
                Group::N => out.push("n".into()),
                Group::Position => out.push("position".into()),
                Group::Parity => out.push("parity".into()),
                Group::Qnd => {
                    let q = self.qnd.as_ref().expect("checked");
                    out.extend((0..qnd::z_alpha_basis(q).len()).map(|k| format!("log_z_{k}")));
                }
                Group::Repetition => {
                    out.extend((0..4).map(|j| format!("p_V{j}")));
                    out.extend(["c1", "log_ratio_000_111", "log_z", "c_000_100", "c_000_111"].map(String::from));
                }
                Group::Emission => {
                    out.extend(["x_s", "x_d", "y_s", "y_d", "z_s", "z_d", "zz_star"].map(String::from));
                    out.extend((0..9).map(|k| format!("B{k}")));
                    out.extend((1..7).map(|k| format!("R{k}")));
                    out.extend(multi::EMISSION_VARS.iter().map(|v| v.replace('~', "t")));
                }
                Group::Qudit => {
                    let (d, _) = self.qudit.expect("checked");
                    out.extend((0..d).map(|k| format!("q_{k}")));
                    for (a, b) in pairs(d) {
                        out.push(format!("q_re_{a}_{b}"));
                        out.push(format!("q_im_{a}_{b}"));
                    }
                }
                Group::Kernel => out.extend(["k_a", "k_s", "k_d", "k_xi", "k_pi", "k_theta", "k_phi", "k_z", "k_h"].map(String::from)),
            }
        }
        out
    }

    /// Evaluate every column; coordinates undefined at `rho` (vanishing
    /// denominators) are NaN.
    pub fn eval(&self, rho: &Operator, kernel: Option<&FluorescenceKernelState>) -> Result<Vec<f64>> {
        let n = self.dim;
        let pop = |i: usize| rho[(i, i)].re;
        let ratio = |num: f64, a: usize, b: usize| {
            let den = pop(a) * pop(b);
            if den > 1e-300 {
                num / den
            } else {
                f64::NAN
            }
        };
        let expect = |op: &Operator| ops::trace_prod(rho, op).re;
        let mut out = Vec::with_capacity(self.labels.len());
        for g in &self.groups {
            match g {
                Group::Populations => out.extend((0..n).map(pop)),
                Group::Coherences => {
                    for (a, b) in pairs(n) {
                        out.push(rho[(a, b)].re);
                        out.push(rho[(a, b)].im);
                    }
                }
                Group::CoherenceSums => out.extend(pairs(n).map(|(a, b)| 2.0 * rho[(a, b)].re)),
                Group::CRatios => out.extend(pairs(n).map(|(a, b)| ratio(rho[(a, b)].norm_sqr(), a, b))),
                Group::CSums => out.extend(pairs(n).map(|(a, b)| ratio((2.0 * rho[(a, b)].re).powi(2), a, b))),
                Group::Phases => out.extend(pairs(n).map(|(a, b)| if rho[(a, b)].norm() > 1e-300 { rho[(a, b)].arg() } else { f64::NAN })),
                Group::Pauli => out.extend(self.pauli.iter().map(|(_, op)| expect(op))),
                Group::Purity => out.push(ops::trace_prod(rho, rho).re),
                Group::X => out.push(expect(&self.osc.as_ref().expect("checked").x)),
                Group::P => out.push(expect(&self.osc.as_ref().expect("checked").p)),
                Group::N => out.push(expect(&self.osc.as_ref().expect("checked").n)),
                Group::Position => out.push(2.0 * expect(&self.osc.as_ref().expect("checked").x)),
                Group::Parity => out.push(expect(&self.osc.as_ref().expect("checked").parity)),
                Group::Qnd => {
                    let q = self.qnd.as_ref().expect("checked");
                    let inv = qnd::invariants_of(q, rho);
                    out.extend(inv.log_z.iter().map(|v| v.unwrap_or(f64::NAN)));
                }
                Group::Repetition => {
                    let pv: Vec<f64> = REPETITION_SUBSPACES.iter().map(|[a, b]| pop(*a) + pop(*b)).collect();
                    let c_cross = ratio(rho[(0b000, 0b100)].norm_sqr(), 0b000, 0b100);
                    out.extend_from_slice(&pv);
                    out.push(pv[0] + c_cross);
                    out.push(if pop(0b000) > 0.0 && pop(0b111) > 0.0 { (pop(0b000) / pop(0b111)).ln() } else { f64::NAN });
                    out.push(qnd::repetition_conserved_z(rho).map(f64::ln).unwrap_or(f64::NAN));
                    out.push(c_cross);
                    out.push(ratio(rho[(0b000, 0b111)].norm_sqr(), 0b000, 0b111));
                }
                Group::Emission => {
                    let c = multi::emission_coords(rho)?;
                    out.extend([c.x_s, c.x_d, c.y_s, c.y_d, c.z_s, c.z_d, c.zz_star]);
                    out.extend(c.b.map(|b| b.to_vec()).unwrap_or_else(|| vec![f64::NAN; 9]));
                    out.extend(c.r.map(|r| r.to_vec()).unwrap_or_else(|| vec![f64::NAN; 6]));
                    out.extend(multi::emission_deterministic_vars(&c).map(|v| v.to_vec()).unwrap_or_else(|| vec![f64::NAN; 13]));
                }
                Group::Qudit => {
                    let (d, m) = self.qudit.expect("checked");
                    let q = ops::partial_trace(rho, d, m, true);
                    out.extend((0..d).map(|k| q[(k, k)].re));
                    for (a, b) in pairs(d) {
                        out.push(q[(a, b)].re);
                        out.push(q[(a, b)].im);
                    }
                }
                Group::Kernel => {
                    let k = kernel.ok_or_else(|| Error::InvalidArgument("kernel coordinates need the filter state".into()))?;
                    let (z, h) = k.reduced();
                    out.extend([k.a, k.s, k.d, k.xi, k.pi, k.theta, k.phi, z, h]);
                }
            }
        }
        debug_assert_eq!(out.len(), self.labels.len());
        Ok(out)
    }
}
