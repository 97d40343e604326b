#![allow(clippy::needless_range_loop)]

use debias_ate::simgen::{
    gen_ihdp_outcomes, gen_synthetic, ihdp_surfaces, load_covariates, synthetic_effect, synthetic_feature,
};
use debias_ate::{Generator, SimOptions};
use faer::Mat;

const QUIET: SimOptions = SimOptions { noise: false };

#[test]
fn same_seed_gives_identical_instances() {
    for mode in [Generator::Hom, Generator::Het] {
        let a = gen_synthetic(50, 8, mode, 99, SimOptions::default()).unwrap();
        let b = gen_synthetic(50, 8, mode, 99, SimOptions::default()).unwrap();
        assert!(a.data.x() == b.data.x());
        assert_eq!(a.data.treatment(), b.data.treatment());
        assert_eq!(a.data.outcome(), b.data.outcome());
        assert_eq!(a.true_cate.to_bits(), b.true_cate.to_bits());
        let c = gen_synthetic(50, 8, mode, 100, SimOptions::default()).unwrap();
        assert!(a.data.outcome() != c.data.outcome());
    }
}

#[test]
fn noise_features_do_not_enter_treatment_or_outcome() {
    // rebuild the instance with features 6..d permuted; R and the noise-free Y
    // are functions of the first five columns only
    let a = gen_synthetic(40, 12, Generator::Het, 5, QUIET).unwrap();
    let x = a.data.x();
    let perm: Vec<usize> = (0..12).map(|j| if j < 5 { j } else { 5 + (j - 5 + 3) % 7 }).collect();
    for i in 0..40 {
        let row: Vec<f64> = perm.iter().map(|&j| x[(i, j)]).collect();
        let r = debias_ate::simgen::synthetic_assignment(&row);
        let y =
            debias_ate::simgen::synthetic_baseline(&row) + if r { synthetic_effect(Generator::Het, &row) } else { 0.0 };
        assert_eq!(r, a.data.treatment()[i]);
        assert_eq!(y, a.data.outcome()[i]);
    }
    // features are keyed by (seed, unit, feature): a wider design shares its
    // leading columns and units
    let wide = gen_synthetic(60, 20, Generator::Het, 5, QUIET).unwrap();
    for i in 0..40 {
        for j in 0..12 {
            assert_eq!(wide.data.x()[(i, j)], x[(i, j)]);
            assert_eq!(synthetic_feature(5, i, j), x[(i, j)]);
        }
    }
    assert_eq!(&wide.data.outcome()[..40], a.data.outcome());
}

#[test]
fn het_effect_averages_to_one() {
    let n = 100_000;
    let inst = gen_synthetic(n, 5, Generator::Het, 2024, QUIET).unwrap();
    let mean: f64 = (0..n)
        .map(|i| synthetic_effect(Generator::Het, &inst.data.row(i)))
        .sum::<f64>()
        / n as f64;
    assert!((mean - 1.0).abs() < 0.02, "{mean}");
    assert!((inst.true_cate - mean).abs() < 1e-12);
    assert_eq!(inst.true_ate, 1.0);
}

#[test]
fn about_ninety_percent_are_treated() {
    let n = 100_000;
    for mode in [Generator::Hom, Generator::Het] {
        let inst = gen_synthetic(n, 5, mode, 77, SimOptions::default()).unwrap();
        let frac = inst.data.n_treated() as f64 / n as f64;
        assert!((frac - 0.9).abs() <= 0.05, "{mode:?}: {frac}");
    }
}

#[test]
fn hom_effect_is_exactly_one() {
    let inst = gen_synthetic(200, 6, Generator::Hom, 1, QUIET).unwrap();
    for i in 0..200 {
        assert!((inst.mu1[i] - inst.mu0[i] - 1.0).abs() < 1e-12);
    }
    assert_eq!(inst.true_cate, 1.0);
}

fn covariates(n: usize, d: usize, seed: u64) -> (Mat<f64>, Vec<bool>) {
    let x = Mat::from_fn(n, d, |i, j| synthetic_feature(seed, i, j) * 0.7);
    let r = (0..n).map(|i| x[(i, 0)] > 0.8).collect();
    (x, r)
}

#[test]
fn ihdp_realized_cate_is_four_for_every_seed() {
    let (x, r) = covariates(300, 25, 3);
    for seed in 0..50 {
        let inst = gen_ihdp_outcomes(&x, &r, seed, SimOptions::default()).unwrap();
        let cate: f64 = inst.mu1.iter().zip(&inst.mu0).map(|(a, b)| a - b).sum::<f64>() / 300.0;
        assert!((cate - 4.0).abs() < 1e-8, "seed {seed}: {cate}");
        assert_eq!(inst.true_cate, 4.0);
        assert!(inst.true_ate.is_nan());
    }
}

#[test]
fn ihdp_noise_free_outcomes_follow_the_surfaces() {
    let (x, r) = covariates(50, 6, 4);
    let inst = gen_ihdp_outcomes(&x, &r, 8, QUIET).unwrap();
    for i in 0..50 {
        let expected = if r[i] { inst.mu1[i] } else { inst.mu0[i] };
        assert_eq!(inst.data.outcome()[i], expected);
    }
    let beta = vec![0.2; 6];
    let (mu0, mu1, omega) = ihdp_surfaces(&x, &beta).unwrap();
    for i in 0..50 {
        let lin: f64 = (0..6).map(|j| x[(i, j)] * 0.2).sum();
        assert!((mu1[i] - (lin - omega)).abs() < 1e-12);
        assert!((mu0[i] - (lin + 0.5 * 1.2).exp()).abs() < 1e-12 * mu0[i]);
    }
}

#[test]
fn covariate_file_requires_treatment_column() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("cov.csv");
    std::fs::write(&path, "a,b,treatment,y\n1,2,1,5\n3,4,0,6\n").unwrap();
    let cov = load_covariates(&path).unwrap();
    assert_eq!(cov.names, vec!["a", "b"]);
    assert_eq!(cov.treatment, vec![true, false]);
    std::fs::write(&path, "a,b\n1,2\n").unwrap();
    assert!(load_covariates(&path).is_err());
}
