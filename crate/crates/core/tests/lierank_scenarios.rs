use std::sync::Arc;

use qmanifold::fields::FieldExpr;
use qmanifold::lierank::*;
use qmanifold::ops::{self, diag, ket_bra, r};
use qmanifold::qnd::repetition_model;
use qmanifold::sme::{MeasurementChannel, ScenarioModel};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn qutrit(ls: &[[f64; 3]], rabi: Option<f64>, eta: f64) -> ScenarioModel {
    let h = match rabi {
        Some(om) => (ket_bra(3, 0, 1) + ket_bra(3, 1, 0)) * r(om),
        None => ops::zeros(3),
    };
    let ch = ls.iter().map(|l| MeasurementChannel::new(diag(l), eta).unwrap()).collect();
    ScenarioModel::new(h, ch, vec![3]).unwrap()
}

const L1: [f64; 3] = [0.0, 1.0, 1.8];
const L2: [f64; 3] = [0.0, 1.0, 0.2];

#[test]
fn qutrit_qnd_ranks() {
    let rep = manifold_dimension(&qutrit(&[L1], None, 0.8), 5, 6, 1e-7, 1).unwrap();
    assert_eq!(rep.m, 1);
    assert!(rep.converged);
    let rep = manifold_dimension(&qutrit(&[L1, L2], None, 0.8), 5, 6, 1e-7, 1).unwrap();
    assert_eq!(rep.m, 2);
    assert!(rep.converged);
}

#[test]
fn qutrit_rabi_rank_four_with_perfect_detection() {
    let rep = manifold_dimension(&qutrit(&[L1], Some(1.35), 1.0), 5, 6, 1e-7, 1).unwrap();
    assert_eq!(rep.m, 4);
    assert!(rep.converged);
}

#[test]
fn qutrit_rabi_inefficient_detection_fills_more_directions() {
    // With η < 1 the drift carries (1-η)-weighted terms whose brackets with
    // G_L are not G-type fields; the algebra grows past the pure-state count.
    let rep = manifold_dimension(&qutrit(&[L1], Some(1.35), 0.8), 5, 6, 1e-7, 1).unwrap();
    assert_eq!(rep.m, 7);
    assert!(rep.converged);
}

#[test]
fn rank_invariant_under_unitary_conjugation() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let u = ops::random_unitary(3, &mut rng);
    let conj = |a: &ops::Operator| &u * a * u.adjoint();
    for (eta, rabi) in [(1.0, Some(1.35)), (0.8, None)] {
        let base = qutrit(&[L1], rabi, eta);
        let h = ops::hermitize(&conj(base.h()));
        let ch = base.channels().iter().map(|c| MeasurementChannel::new(conj(c.l()), eta).unwrap()).collect();
        let rotated = ScenarioModel::new(h, ch, vec![3]).unwrap();
        let m0 = manifold_dimension(&base, 5, 6, 1e-7, 3).unwrap().m;
        let m1 = manifold_dimension(&rotated, 5, 6, 1e-7, 3).unwrap().m;
        assert_eq!(m0, m1);
    }
}

#[test]
fn repetition_code_ranks() {
    let two = repetition_model(0.8, 0.0, 2, &[]).unwrap();
    let rep = manifold_dimension(&two.model, 5, 6, 1e-7, 1).unwrap();
    assert_eq!((rep.m, rep.converged), (2, true));
    let three = repetition_model(0.8, 0.0, 3, &[]).unwrap();
    let rep = manifold_dimension(&three.model, 5, 6, 1e-7, 1).unwrap();
    assert_eq!((rep.m, rep.converged), (3, true));
}

#[test]
fn bit_flips_raise_rank_without_new_generators() {
    let flips = repetition_model(0.8, 0.3, 3, &[1, 2, 3]).unwrap();
    // Capped one level early the report is a lower bound.
    let capped = manifold_dimension(&flips.model, 5, 3, 1e-7, 1).unwrap();
    assert!(capped.m > 4 && !capped.converged);
    // Depth 4 admits nothing new: the algebra closes at rank 28 with a clean gap.
    let rep = manifold_dimension(&flips.model, 5, 4, 1e-7, 1).unwrap();
    assert_eq!((rep.m, rep.converged), (28, true));
    assert_eq!(rep.generators.iter().filter(|g| g.depth == 0).count(), 3);
    let x0 = Arc::new(stratonovich_drift(&flips.model));
    let mut all: Vec<FieldExpr> = rep.fields.iter().map(|f| (**f).clone()).collect();
    for (i, fi) in rep.fields.iter().enumerate() {
        all.push(FieldExpr::Bracket(x0.clone(), fi.clone()));
        for fj in &rep.fields[..i] {
            all.push(FieldExpr::Bracket(fi.clone(), fj.clone()));
        }
    }
    let (rk, sv) = rank_at(&all, &rep.sample_points[0], 1e-7).unwrap();
    assert_eq!(rk, 28);
    assert!(sv[27] > 1e-3 * sv[0] && sv[28] < 1e-12 * sv[0]);
}

#[test]
fn single_qubit_flip_toy_model() {
    let toy = repetition_model(0.8, 0.3, 2, &[1]).unwrap();
    let rep = manifold_dimension(&toy.model, 5, 6, 1e-7, 1).unwrap();
    assert_eq!((rep.m, rep.converged), (4, true));
}
