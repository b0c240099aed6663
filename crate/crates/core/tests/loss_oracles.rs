//! Loss values against direct double-loop references and closed forms.

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use robustlab::losses::{cross_entropy_value, nt_xent_value, supcon_value};
use robustlab::rng::{rng_for, Rng};
use robustlab::{Error, Tensor};

fn unit_rows(rng: &mut Rng, n: usize, d: usize) -> Vec<Vec<f64>> {
    (0..n)
        .map(|_| {
            let v: Vec<f64> = (0..d).map(|_| StandardNormal.sample(rng)).collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            v.iter().map(|x| x / norm).collect()
        })
        .collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `-log(exp(s_ip) / sum_{k != i} exp(s_ik))` averaged over all 2n anchors.
fn nt_xent_reference(a: &[Vec<f64>], b: &[Vec<f64>], tau: f64) -> f64 {
    let n = a.len();
    let z: Vec<&Vec<f64>> = a.iter().chain(b).collect();
    let mut total = 0.0;
    for i in 0..2 * n {
        let p = (i + n) % (2 * n);
        let mut denom = 0.0;
        for k in 0..2 * n {
            if k != i {
                denom += (dot(z[i], z[k]) / tau).exp();
            }
        }
        total += -((dot(z[i], z[p]) / tau).exp() / denom).ln();
    }
    total / (2 * n) as f64
}

/// Per-anchor mean over same-label partners, averaged over anchors that have
/// at least one partner.
fn supcon_reference(z: &[Vec<f64>], y: &[usize], tau: f64) -> Option<f64> {
    let m = z.len();
    let mut total = 0.0;
    let mut anchors = 0;
    for i in 0..m {
        let pos: Vec<usize> = (0..m).filter(|&p| p != i && y[p] == y[i]).collect();
        if pos.is_empty() {
            continue;
        }
        let denom: f64 = (0..m).filter(|&k| k != i).map(|k| (dot(&z[i], &z[k]) / tau).exp()).sum();
        let s: f64 = pos.iter().map(|&p| ((dot(&z[i], &z[p]) / tau).exp() / denom).ln()).sum();
        total += -s / pos.len() as f64;
        anchors += 1;
    }
    (anchors > 0).then(|| total / anchors as f64)
}

fn tensor(rows: &[Vec<f64>]) -> Tensor {
    Tensor::from_rows(rows).unwrap()
}

/// Largest deviation of `nt_xent` from the reference over 200 batches.
pub fn nt_xent_worst() -> f64 {
    let mut worst: f64 = 0.0;
    for trial in 0..200 {
        let mut rng = rng_for(7, "oracle/nt_xent", trial);
        let n = rng.random_range(1..=8);
        let d = rng.random_range(2..=6);
        let tau = rng.random_range(0.1..1.0);
        let a = unit_rows(&mut rng, n, d);
        let b = unit_rows(&mut rng, n, d);
        let got = nt_xent_value(&tensor(&a), &tensor(&b), tau).unwrap();
        worst = worst.max((got - nt_xent_reference(&a, &b, tau)).abs());
    }
    worst
}

/// Largest deviation of `supcon` from the reference over 200 batches.
pub fn supcon_worst() -> f64 {
    let mut worst: f64 = 0.0;
    for trial in 0..200 {
        let mut rng = rng_for(7, "oracle/supcon", trial);
        let n = rng.random_range(2..=8);
        let d = rng.random_range(2..=6);
        let classes = rng.random_range(1..=4);
        let tau = rng.random_range(0.1..1.0);
        let z = unit_rows(&mut rng, n, d);
        let mut y: Vec<usize> = (0..n).map(|_| rng.random_range(0..classes)).collect();
        // at least one anchor needs a partner
        y[1] = y[0];
        let got = supcon_value(&tensor(&z), &y, tau).unwrap();
        worst = worst.max((got - supcon_reference(&z, &y, tau).unwrap()).abs());
    }
    worst
}

/// Largest |NT-Xent| over single pairs.
pub fn single_pair_worst() -> f64 {
    let mut rng = rng_for(7, "oracle/single", 0);
    [0.05, 0.1, 0.5, 1.0]
        .into_iter()
        .map(|tau| {
            let a = unit_rows(&mut rng, 1, 5);
            let b = unit_rows(&mut rng, 1, 5);
            nt_xent_value(&tensor(&a), &tensor(&b), tau).unwrap().abs()
        })
        .fold(0.0, f64::max)
}

/// Largest distance from ln 3 of SupCon on four identical same-class rows.
pub fn identical_supcon_worst() -> f64 {
    let z = vec![vec![0.6, 0.8, 0.0]; 4];
    [0.07, 0.1, 0.5, 1.0]
        .into_iter()
        .map(|tau| (supcon_value(&tensor(&z), &[2, 2, 2, 2], tau).unwrap() - 3f64.ln()).abs())
        .fold(0.0, f64::max)
}

/// Largest distance from ln C of cross-entropy on constant logits.
pub fn uniform_ce_worst() -> f64 {
    let mut worst: f64 = 0.0;
    for c in [2, 3, 10, 100] {
        for value in [0.0, -3.5, 7.25] {
            let logits = Tensor::filled(&[5, c], value);
            let labels: Vec<usize> = (0..5).map(|i| (i * 7) % c).collect();
            let got = cross_entropy_value(&logits, &labels).unwrap();
            worst = worst.max((got - (c as f64).ln()).abs());
        }
    }
    worst
}

#[test]
fn nt_xent_matches_reference_on_200_batches() {
    let worst = nt_xent_worst();
    assert!(worst < 1e-10, "{worst:e}");
}

#[test]
fn supcon_matches_reference_on_200_batches() {
    let worst = supcon_worst();
    assert!(worst < 1e-10, "{worst:e}");
}

#[test]
fn supcon_without_partners_is_an_error() {
    let mut rng = rng_for(7, "oracle/no_partner", 0);
    let z = unit_rows(&mut rng, 4, 3);
    assert!(supcon_reference(&z, &[0, 1, 2, 3], 0.5).is_none());
    assert!(matches!(supcon_value(&tensor(&z), &[0, 1, 2, 3], 0.5), Err(Error::NoPositives)));
}

#[test]
fn single_pair_nt_xent_is_zero() {
    assert_eq!(single_pair_worst(), 0.0);
}

#[test]
fn four_identical_same_class_supcon_is_ln3() {
    assert!(identical_supcon_worst() < 1e-9);
}

#[test]
fn uniform_logits_cross_entropy_is_ln_c() {
    assert!(uniform_ce_worst() < 1e-12);
}
