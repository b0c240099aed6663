//! Randomized invariants over generated inputs.

use proptest::collection::vec;
use proptest::prelude::*;
use robustlab::analysis::linear_cka;
use robustlab::attacks::project_linf;
use robustlab::data::{gen_synthetic, make_views, stratified_split, AugmentSpec, DataKind, SyntheticKind};
use robustlab::models::{init_model, EncoderConfig, ModelBundle};
use robustlab::Tensor;

fn matrix(rows: usize, cols: usize) -> impl Strategy<Value = Tensor> {
    vec(-10.0f64..10.0, rows * cols).prop_map(move |d| Tensor::new(vec![rows, cols], d).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn projection_lands_in_budget_and_box(
        (x0, x) in (1usize..6, 1usize..6).prop_flat_map(|(r, c)| (matrix(r, c), matrix(r, c))),
        eps in 0.0f64..3.0,
        clamp in proptest::option::of((-5.0f64..0.0, 0.0f64..5.0)),
    ) {
        // the box must contain the clean point for the budget to be reachable
        let x0 = match clamp {
            Some((lo, hi)) => Tensor::new(x0.shape().to_vec(), x0.data().iter().map(|v| v.clamp(lo, hi)).collect()).unwrap(),
            None => x0,
        };
        let p = project_linf(&x0, &x, eps, clamp).unwrap();
        prop_assert!(p.max_abs_diff(&x0) <= eps + 1e-9);
        if let Some((lo, hi)) = clamp {
            prop_assert!(p.data().iter().all(|&v| v >= lo && v <= hi));
        }
        let again = project_linf(&x0, &p, eps, clamp).unwrap();
        prop_assert!(again.bitwise_eq(&p));
    }

    #[test]
    fn cka_is_a_bounded_symmetric_similarity(
        (x, y) in (4usize..20, 1usize..6, 1usize..6).prop_flat_map(|(n, p, q)| (matrix(n, p), matrix(n, q))),
    ) {
        let degenerate = |m: &Tensor| {
            (0..m.cols()).all(|j| (0..m.rows()).all(|i| (m.at(i, j) - m.at(0, j)).abs() < 1e-9))
        };
        prop_assume!(!degenerate(&x) && !degenerate(&y));
        let a = linear_cka(&x, &y).unwrap();
        let b = linear_cka(&y, &x).unwrap();
        prop_assert!((-1e-12..=1.0 + 1e-12).contains(&a));
        prop_assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn checkpoints_round_trip_bitwise(
        widths in vec(1usize..8, 2..5),
        input in 1usize..10,
        classes in 2usize..5,
        head in 1usize..6,
        seed in any::<u64>(),
    ) {
        let model = init_model(EncoderConfig::dense(input, &widths), classes, head, seed).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        model.save_checkpoint(&path).unwrap();
        let back = ModelBundle::load_checkpoint(&path).unwrap();
        prop_assert_eq!(back, model);
    }

    #[test]
    fn image_views_keep_shape_and_pixel_range(
        n in 1usize..5,
        pixels in vec(0.0f64..=1.0, 5 * 36),
        seed in any::<u64>(),
    ) {
        let x = Tensor::new(vec![n, 36], pixels[..n * 36].to_vec()).unwrap();
        let (a, b) = make_views(&x, &[1, 6, 6], &AugmentSpec::default_for(DataKind::Image), seed).unwrap();
        for v in [&a, &b] {
            prop_assert_eq!(v.shape(), x.shape());
            prop_assert!(v.data().iter().all(|&p| (0.0..=1.0).contains(&p)));
        }
        let again = make_views(&x, &[1, 6, 6], &AugmentSpec::default_for(DataKind::Image), seed).unwrap();
        prop_assert!(again.0.bitwise_eq(&a) && again.1.bitwise_eq(&b));
    }

    #[test]
    fn stratified_split_partitions_every_class(
        n in 20usize..200,
        classes in 2usize..5,
        f in 0.1f64..0.9,
        seed in any::<u64>(),
    ) {
        let ds = gen_synthetic(SyntheticKind::BlobsK, n, 3, classes, seed, 4.0).unwrap();
        let parts = stratified_split(&ds, &[f, 1.0 - f], seed).unwrap();
        prop_assert_eq!(parts[0].len() + parts[1].len(), n);
        for c in 0..classes {
            let total = ds.class_counts()[c];
            prop_assert_eq!(parts[0].class_counts()[c] + parts[1].class_counts()[c], total);
        }
    }
}
