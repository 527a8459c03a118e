//! Vector fields on state space and their Lie brackets.
//!
//! Fields are symbolic trees evaluated exactly. Derivatives use nested
//! first-order infinitesimals: a [`Jet`] with `k` active bits stores the
//! `2^k` coefficients of `ρ(ε_0, …, ε_{k−1})`, multilinear in real
//! infinitesimals with `ε_i² = 0`. Each bracket level opens a fresh bit, so
//! nesting depth equals bracket depth and no finite differences enter.
//!
//! Convention: `[f, g](ρ) = Df(ρ)[g(ρ)] − Dg(ρ)[f(ρ)]`, which gives
//! `[G_{Lj}, G_{Lk}] = G_{[Lj, Lk]}`.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{invalid, Error, Result};
use crate::ops::{self, commutator, r, Operator, C64, ZERO};
use crate::sme::MeasurementChannel;

/// Maximum bracket nesting accepted by [`eval`].
pub const MAX_DEPTH: usize = 12;

#[derive(Clone, Debug)]
pub enum FieldExpr {
    /// `−i[H, ρ]`.
    Ham { h: Operator, name: String },
    /// `LρL† − ½{L†L, ρ}`.
    F { l: Operator, name: String },
    /// `Lρ + ρL† − Tr(Lρ + ρL†)ρ`.
    G { l: Operator, name: String },
    /// Itô→Stratonovich correction of channel `l` at efficiency `eta`.
    D { l: Operator, eta: f64, name: String },
    /// Non-`G` term of the drift/diffusion bracket identity:
    /// `(1−η)(CρLj† − Tr(CρLj†)ρ + h.c.)` with `C = [Lj, Lk]`.
    Residual { lj: Operator, lk: Operator, eta: f64, name: String },
    Bracket(Arc<FieldExpr>, Arc<FieldExpr>),
    Sum(Vec<(f64, Arc<FieldExpr>)>),
}

impl FieldExpr {
    pub fn ham(h: Operator) -> Self {
        Self::Ham { h, name: "H".into() }
    }
    pub fn f(l: Operator) -> Self {
        Self::F { l, name: "L".into() }
    }
    pub fn g(l: Operator) -> Self {
        Self::G { l, name: "L".into() }
    }
    pub fn d(l: Operator, eta: f64) -> Self {
        Self::D { l, eta, name: "L".into() }
    }
    pub fn bracket(a: impl Into<Arc<FieldExpr>>, b: impl Into<Arc<FieldExpr>>) -> Self {
        Self::Bracket(a.into(), b.into())
    }
    pub fn sum(terms: Vec<(f64, Arc<FieldExpr>)>) -> Self {
        Self::Sum(terms)
    }

    /// Attach a display name to a leaf (no effect on composite nodes).
    pub fn named(mut self, label: &str) -> Self {
        match &mut self {
            Self::Ham { name, .. }
            | Self::F { name, .. }
            | Self::G { name, .. }
            | Self::D { name, .. }
            | Self::Residual { name, .. } => *name = label.to_string(),
            _ => {}
        }
        self
    }

    /// Bracket nesting depth.
    pub fn depth(&self) -> usize {
        match self {
            Self::Bracket(a, b) => 1 + a.depth().max(b.depth()),
            Self::Sum(t) => t.iter().map(|(_, e)| e.depth()).max().unwrap_or(0),
            _ => 0,
        }
    }

    fn dim(&self) -> Option<usize> {
        match self {
            Self::Ham { h: m, .. } | Self::F { l: m, .. } | Self::G { l: m, .. } | Self::D { l: m, .. } => {
                Some(m.nrows())
            }
            Self::Residual { lj, .. } => Some(lj.nrows()),
            Self::Bracket(a, b) => a.dim().or_else(|| b.dim()),
            Self::Sum(t) => t.iter().find_map(|(_, e)| e.dim()),
        }
    }
}

impl fmt::Display for FieldExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Ham { name, .. } => write!(f, "Ham({name})"),
            Self::F { name, .. } => write!(f, "F({name})"),
            Self::G { name, .. } => write!(f, "G({name})"),
            Self::D { name, eta, .. } => write!(f, "D({name},{eta})"),
            Self::Residual { name, .. } => write!(f, "Res({name})"),
            Self::Bracket(a, b) => write!(f, "[{a}, {b}]"),
            Self::Sum(t) => {
                write!(f, "(")?;
                for (i, (w, e)) in t.iter().enumerate() {
                    if i > 0 {
                        write!(f, " + ")?;
                    }
                    if *w == 1.0 {
                        write!(f, "{e}")?;
                    } else {
                        write!(f, "{w}*{e}")?;
                    }
                }
                write!(f, ")")
            }
        }
    }
}

// ---------------------------------------------------------------- jets

/// Multilinear polynomial in `bits` real infinitesimals with matrix coefficients.
/// Coefficients are assumed Hermitian (true for every field evaluated here).
#[derive(Clone, Debug)]
struct Jet {
    bits: usize,
    m: Vec<Operator>,
}

impl Jet {
    fn constant(op: Operator) -> Self {
        Jet { bits: 0, m: vec![op] }
    }

    fn n(&self) -> usize {
        self.m[0].nrows()
    }

    fn zeros_like(&self) -> Self {
        Jet { bits: self.bits, m: vec![ops::zeros(self.n()); self.m.len()] }
    }

    /// `self + ε_bits · dir`, opening one new bit.
    fn extend(&self, dir: &Jet) -> Self {
        debug_assert_eq!(self.bits, dir.bits);
        let mut m = self.m.clone();
        m.extend(dir.m.iter().cloned());
        Jet { bits: self.bits + 1, m }
    }

    fn lower(&self) -> Self {
        let h = self.m.len() / 2;
        Jet { bits: self.bits - 1, m: self.m[..h].to_vec() }
    }

    fn upper(&self) -> Self {
        let h = self.m.len() / 2;
        Jet { bits: self.bits - 1, m: self.m[h..].to_vec() }
    }

    fn left(&self, a: &Operator) -> Self {
        Jet { bits: self.bits, m: self.m.iter().map(|x| a * x).collect() }
    }

    fn right(&self, a: &Operator) -> Self {
        Jet { bits: self.bits, m: self.m.iter().map(|x| x * a).collect() }
    }

    fn adjoint(&self) -> Self {
        Jet { bits: self.bits, m: self.m.iter().map(|x| x.adjoint()).collect() }
    }

    fn trace(&self) -> Vec<C64> {
        self.m.iter().map(ops::trace).collect()
    }

    fn scale(&self, s: C64) -> Self {
        Jet { bits: self.bits, m: self.m.iter().map(|x| x * s).collect() }
    }

    fn add_assign(&mut self, o: &Jet) {
        for (a, b) in self.m.iter_mut().zip(&o.m) {
            *a += b;
        }
    }

    fn sub_assign(&mut self, o: &Jet) {
        for (a, b) in self.m.iter_mut().zip(&o.m) {
            *a -= b;
        }
    }

    /// Product with a scalar jet: subset convolution over disjoint masks.
    fn times_scalar(&self, s: &[C64]) -> Self {
        let len = self.m.len();
        let mut out = self.zeros_like();
        for cmask in 0..len {
            let mut a = cmask;
            loop {
                let coef = s[a];
                if coef != ZERO {
                    let b = cmask ^ a;
                    out.m[cmask] += &self.m[b] * coef;
                }
                if a == 0 {
                    break;
                }
                a = (a - 1) & cmask;
            }
        }
        out
    }
}

/// `X + X†` coefficientwise.
fn plus_hc(x: &Jet) -> Jet {
    let mut out = x.clone();
    out.add_assign(&x.adjoint());
    out
}

/// `Tr(X) + conj Tr(X)` coefficientwise.
fn trace_plus_conj(x: &Jet) -> Vec<C64> {
    x.trace().into_iter().map(|t| r(2.0 * t.re)).collect()
}

fn g_jet(l: &Operator, rho: &Jet) -> Jet {
    let lr = rho.left(l);
    let tr = trace_plus_conj(&lr);
    let mut out = plus_hc(&lr);
    out.sub_assign(&rho.times_scalar(&tr));
    out
}

fn eval_jet(expr: &FieldExpr, rho: &Jet, depth: usize) -> Result<Jet> {
    if depth > MAX_DEPTH {
        return Err(Error::ResourceLimit(format!("bracket depth exceeds {MAX_DEPTH}")));
    }
    Ok(match expr {
        FieldExpr::Ham { h, .. } => {
            let hr = rho.left(h);
            let mut x = hr.clone();
            x.sub_assign(&hr.adjoint());
            x.scale(C64::new(0.0, -1.0))
        }
        FieldExpr::F { l, .. } => {
            let ldl = l.adjoint() * l;
            let mut out = rho.left(l).right(&l.adjoint());
            out.sub_assign(&plus_hc(&rho.left(&ldl)).scale(r(0.5)));
            out
        }
        FieldExpr::G { l, .. } => g_jet(l, rho),
        FieldExpr::D { l, eta, .. } => {
            let g = g_jet(l, rho);
            let lg = g.left(l);
            let mut inner = plus_hc(&lg);
            inner.sub_assign(&rho.times_scalar(&trace_plus_conj(&lg)));
            inner.sub_assign(&g.times_scalar(&trace_plus_conj(&rho.left(l))));
            inner.scale(r(-0.5 * eta))
        }
        FieldExpr::Residual { lj, lk, eta, .. } => {
            let cm = commutator(lj, lk);
            let x = rho.left(&cm).right(&lj.adjoint());
            let mut out = plus_hc(&x);
            out.sub_assign(&rho.times_scalar(&trace_plus_conj(&x)));
            out.scale(r(1.0 - eta))
        }
        FieldExpr::Sum(terms) => {
            let mut out = rho.zeros_like();
            for (w, e) in terms {
                out.add_assign(&eval_jet(e, rho, depth)?.scale(r(*w)));
            }
            out
        }
        FieldExpr::Bracket(f, g) => {
            let fv = eval_jet(f, rho, depth + 1)?;
            let gj = eval_jet(g, &rho.extend(&fv), depth + 1)?;
            let fj = eval_jet(f, &rho.extend(&gj.lower()), depth + 1)?;
            let mut out = fj.upper();
            out.sub_assign(&gj.upper());
            out
        }
    })
}

fn check_dim(expr: &FieldExpr, rho: &Operator) -> Result<()> {
    if let Some(n) = expr.dim() {
        if n != rho.nrows() || !rho.is_square() {
            return invalid(format!("field dimension {n} does not match state {:?}", rho.shape()));
        }
    }
    Ok(())
}

/// Evaluate a field at `ρ`.
pub fn eval(expr: &FieldExpr, rho: &Operator) -> Result<Operator> {
    check_dim(expr, rho)?;
    if expr.depth() > MAX_DEPTH {
        return Err(Error::ResourceLimit(format!("bracket depth {} exceeds {MAX_DEPTH}", expr.depth())));
    }
    Ok(eval_jet(expr, &Jet::constant(rho.clone()), 0)?.m.swap_remove(0))
}

/// Exact derivative of `expr` at `ρ` along `σ`.
pub fn directional_derivative(expr: &FieldExpr, rho: &Operator, sigma: &Operator) -> Result<Operator> {
    check_dim(expr, rho)?;
    if sigma.shape() != rho.shape() {
        return invalid("direction and state dimensions differ");
    }
    if expr.depth() + 1 > MAX_DEPTH {
        return Err(Error::ResourceLimit(format!("bracket depth {} exceeds {MAX_DEPTH}", expr.depth())));
    }
    let j = Jet::constant(rho.clone()).extend(&Jet::constant(sigma.clone()));
    Ok(eval_jet(expr, &j, 0)?.m.swap_remove(1))
}

/// Stratonovich correction `D_L(ρ)` of a channel.
pub fn strat_correction(ch: &MeasurementChannel, rho: &Operator) -> Result<Operator> {
    eval(&FieldExpr::d(ch.l().clone(), ch.eta()), rho)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BracketKind {
    /// `[G_{Lj}, G_{Lk}] = G_{[Lj,Lk]}`.
    GG,
    /// `[F_{Lj} + D_{Lj}, G_{Lj}]`, exact modulo `G_{Lj}`.
    DriftGSame,
    /// `[F_{Lj} + D_{Lj}, G_{Lk}]`, exact modulo `span{G_{[Lj,Lk]}, G_{Lj}}`.
    DriftGCross,
}

/// Closed-form right-hand side of the bracket identities.
///
/// For the drift kinds the returned field omits the `c1·G_{[Lj,Lk]} + c2·G_{Lj}`
/// part, whose coefficients are state-dependent; compare modulo those fields
/// (see [`closed_form_span`]).
pub fn bracket_closed_form(kind: BracketKind, lj: &Operator, lk: &Operator, eta_j: f64) -> Result<FieldExpr> {
    if lj.shape() != lk.shape() || !lj.is_square() {
        return invalid("operator shapes differ");
    }
    if !(0.0..=1.0).contains(&eta_j) {
        return invalid("efficiency outside [0,1]");
    }
    let half = r(0.5);
    Ok(match kind {
        BracketKind::GG => FieldExpr::g(commutator(lj, lk)).named("[Lj,Lk]"),
        BracketKind::DriftGSame => {
            let lp = commutator(lj, &(lj.adjoint() * lj)) * half;
            FieldExpr::g(lp).named("L'")
        }
        BracketKind::DriftGCross => {
            let ldl = lj.adjoint() * lj;
            let lp = commutator(lk, &ldl) * half;
            let lpp = commutator(lk, &((lj.adjoint() + lj) * lj)) * half;
            FieldExpr::sum(vec![
                (1.0, Arc::new(FieldExpr::Residual { lj: lj.clone(), lk: lk.clone(), eta: eta_j, name: "jk".into() })),
                (1.0 - eta_j, Arc::new(FieldExpr::g(lp).named("L'"))),
                (eta_j, Arc::new(FieldExpr::g(lpp).named("L''"))),
            ])
        }
    })
}

/// Fields whose span is left undetermined by the closed form of `kind`.
pub fn closed_form_span(kind: BracketKind, lj: &Operator, lk: &Operator) -> Vec<FieldExpr> {
    match kind {
        BracketKind::GG => vec![],
        BracketKind::DriftGSame => vec![FieldExpr::g(lj.clone())],
        BracketKind::DriftGCross => vec![FieldExpr::g(commutator(lj, lk)), FieldExpr::g(lj.clone())],
    }
}

/// The generic bracket `[F_{Lj} + D_{Lj}, G_{Lk}]` that the drift kinds reduce.
pub fn drift_g_bracket(lj: &Operator, lk: &Operator, eta_j: f64) -> FieldExpr {
    let drift = FieldExpr::sum(vec![
        (1.0, Arc::new(FieldExpr::f(lj.clone()))),
        (1.0, Arc::new(FieldExpr::d(lj.clone(), eta_j))),
    ]);
    FieldExpr::bracket(drift, FieldExpr::g(lk.clone()))
}

/// Norm of `a − b` after removing its least-squares component in `span`.
pub fn residual_modulo(a: &Operator, b: &Operator, span: &[Operator]) -> f64 {
    let diff = ops::vectorize(&ops::hermitize(&(a - b)));
    if span.is_empty() {
        return diff.norm();
    }
    let cols: Vec<DVector<f64>> = span.iter().map(|s| ops::vectorize(&ops::hermitize(s))).collect();
    let m = DMatrix::from_columns(&cols);
    let svd = m.clone().svd(true, true);
    let coef = svd.solve(&diff, 1e-12).unwrap_or_else(|_| DVector::zeros(cols.len()));
    (diff - m * coef).norm()
}
