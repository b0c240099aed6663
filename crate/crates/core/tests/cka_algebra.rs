//! Algebraic properties of linear CKA.

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use robustlab::analysis::linear_cka;
use robustlab::rng::{rng_for, Rng};
use robustlab::Tensor;

fn gaussian(rng: &mut Rng, n: usize, d: usize) -> Tensor {
    Tensor::new(vec![n, d], (0..n * d).map(|_| StandardNormal.sample(rng)).collect()).unwrap()
}

/// Gram-Schmidt on a gaussian matrix.
fn orthogonal(rng: &mut Rng, d: usize) -> Tensor {
    let mut cols: Vec<Vec<f64>> = Vec::new();
    while cols.len() < d {
        let mut v: Vec<f64> = (0..d).map(|_| StandardNormal.sample(rng)).collect();
        for c in &cols {
            let p: f64 = v.iter().zip(c).map(|(a, b)| a * b).sum();
            v.iter_mut().zip(c).for_each(|(a, b)| *a -= p * b);
        }
        let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        if norm > 1e-6 {
            cols.push(v.into_iter().map(|a| a / norm).collect());
        }
    }
    let data = (0..d * d).map(|k| cols[k % d][k / d]).collect();
    Tensor::new(vec![d, d], data).unwrap()
}

fn scaled(x: &Tensor, c: f64) -> Tensor {
    Tensor::new(x.shape().to_vec(), x.data().iter().map(|v| v * c).collect()).unwrap()
}

fn pair(trial: u64) -> (Rng, Tensor, Tensor) {
    let mut rng = rng_for(31, "cka", trial);
    let n = rng.random_range(8..=60);
    let (p, q) = (rng.random_range(1..=12), rng.random_range(1..=12));
    let x = gaussian(&mut rng, n, p);
    // y shares structure with x so values are not all near zero
    let mix = gaussian(&mut rng, p, q);
    let noise = gaussian(&mut rng, n, q);
    let xm = x.matmul(&mix).unwrap();
    let y = Tensor::new(vec![n, q], xm.data().iter().zip(noise.data()).map(|(a, b)| a + 0.5 * b).collect()).unwrap();
    (rng, x, y)
}

fn worst<F: Fn(u64) -> f64>(f: F) -> f64 {
    (0..100).map(f).fold(0.0, f64::max)
}

pub fn self_similarity_dev() -> f64 {
    worst(|trial| {
        let (_, x, y) = pair(trial);
        let a = (linear_cka(&x, &x).unwrap() - 1.0).abs();
        a.max((linear_cka(&y, &y).unwrap() - 1.0).abs())
    })
}

pub fn symmetry_dev() -> f64 {
    worst(|trial| {
        let (_, x, y) = pair(trial);
        (linear_cka(&x, &y).unwrap() - linear_cka(&y, &x).unwrap()).abs()
    })
}

pub fn orthogonal_dev() -> f64 {
    worst(|trial| {
        let (mut rng, x, y) = pair(trial);
        let q = orthogonal(&mut rng, x.cols());
        (linear_cka(&x.matmul(&q).unwrap(), &y).unwrap() - linear_cka(&x, &y).unwrap()).abs()
    })
}

pub fn scale_dev() -> f64 {
    worst(|trial| {
        let (mut rng, x, y) = pair(trial);
        let c = rng.random_range(1e-3..1e3);
        let s = linear_cka(&scaled(&x, c), &scaled(&y, 1.0 / c.sqrt())).unwrap();
        (s - linear_cka(&x, &y).unwrap()).abs()
    })
}

pub fn permutation_dev() -> f64 {
    worst(|trial| {
        let (mut rng, x, y) = pair(trial);
        let mut perm: Vec<usize> = (0..x.rows()).collect();
        perm.shuffle(&mut rng);
        let p = linear_cka(&x.select_rows(&perm), &y.select_rows(&perm)).unwrap();
        (p - linear_cka(&x, &y).unwrap()).abs()
    })
}

/// CKA of two independent 500 x 16 gaussian matrices.
pub fn independent_value() -> f64 {
    let mut rng = rng_for(31, "cka/independent", 0);
    let x = gaussian(&mut rng, 500, 16);
    let y = gaussian(&mut rng, 500, 16);
    linear_cka(&x, &y).unwrap()
}

#[test]
fn self_similarity_is_one() {
    assert!(self_similarity_dev() < 1e-9);
}

#[test]
fn symmetric() {
    assert!(symmetry_dev() < 1e-12);
}

#[test]
fn invariant_to_orthogonal_maps_and_isotropic_scale() {
    assert!(orthogonal_dev() < 1e-9);
    assert!(scale_dev() < 1e-9);
}

#[test]
fn invariant_to_joint_row_permutation() {
    assert!(permutation_dev() < 1e-12);
}

#[test]
fn independent_gaussians_are_dissimilar() {
    let v = independent_value();
    assert!(v < 0.2, "{v}");
}
