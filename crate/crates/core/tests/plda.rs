use nalgebra::{DMatrix, DVector};
use verifkit_core::plda::{
    adapt, adapt_from_stats, fit_plda, marginal_log_likelihood, AdaptConfig, EmConfig, PldaModel,
};
use verifkit_core::rng::SeededRng;
use verifkit_core::Error;

fn model(mu: &[f64], gamma: DMatrix<f64>, lambda: DMatrix<f64>) -> PldaModel {
    PldaModel::new(DVector::from_column_slice(mu), gamma, lambda).unwrap()
}

fn random_spd(d: usize, rng: &mut SeededRng, floor: f64) -> DMatrix<f64> {
    let a = DMatrix::from_fn(d, d, |_, _| rng.normal());
    &a * a.transpose() + DMatrix::identity(d, d) * floor
}

/// log N(x; 0, c) through LU determinant and inverse.
fn log_gauss(x: &DVector<f64>, c: &DMatrix<f64>) -> f64 {
    let n = x.len() as f64;
    let det = c.clone().lu().determinant();
    let inv = c.clone().try_inverse().unwrap();
    -0.5 * (n * (2.0 * std::f64::consts::PI).ln() + det.ln() + x.dot(&(inv * x)))
}

fn joint(gamma: &DMatrix<f64>, lambda: &DMatrix<f64>, same: bool) -> DMatrix<f64> {
    let d = gamma.nrows();
    let t = gamma + lambda;
    let mut c = DMatrix::zeros(2 * d, 2 * d);
    c.view_mut((0, 0), (d, d)).copy_from(&t);
    c.view_mut((d, d), (d, d)).copy_from(&t);
    if same {
        c.view_mut((0, d), (d, d)).copy_from(gamma);
        c.view_mut((d, 0), (d, d)).copy_from(gamma);
    }
    c
}

fn dense_llr(m: &PldaModel, a: &[f64], b: &[f64]) -> f64 {
    let d = m.dim();
    let x = DVector::from_iterator(2 * d, a.iter().chain(b).enumerate().map(|(i, v)| v - m.mu[i % d]));
    log_gauss(&x, &joint(&m.gamma, &m.lambda, true)) - log_gauss(&x, &joint(&m.gamma, &m.lambda, false))
}

/// Draws `per` embeddings for each of `speakers` speakers.
fn sample(m: &PldaModel, speakers: usize, per: usize, seed: u64) -> Vec<Vec<Vec<f64>>> {
    let d = m.dim();
    let mut rng = SeededRng::new(seed);
    let lg = m.gamma.clone().cholesky().map(|c| c.l()).unwrap_or_else(|| DMatrix::zeros(d, d));
    let ll = m.lambda.clone().cholesky().unwrap().l();
    (0..speakers)
        .map(|_| {
            let y = &lg * DVector::from_fn(d, |_, _| rng.normal());
            (0..per)
                .map(|_| {
                    let z = &ll * DVector::from_fn(d, |_, _| rng.normal());
                    (&m.mu + &y + z).as_slice().to_vec()
                })
                .collect()
        })
        .collect()
}

fn rel_frobenius(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).norm() / b.norm()
}

#[test]
fn score_at_mean_matches_determinant_ratio() {
    let mut rng = SeededRng::new(1);
    let g = random_spd(3, &mut rng, 0.1);
    let l = random_spd(3, &mut rng, 0.5);
    let m = model(&[0.3, -1.0, 2.0], g.clone(), l.clone());
    let mu = m.mu.as_slice().to_vec();
    let expected = 0.5 * joint(&g, &l, false).lu().determinant().ln() - 0.5 * joint(&g, &l, true).lu().determinant().ln();
    let got = m.score(&mu, &mu).unwrap();
    assert!((got - expected).abs() < 1e-10, "{got} vs {expected}");
}

#[test]
fn score_matches_dense_joint_gaussian() {
    let mut rng = SeededRng::new(2);
    for d in [1, 2, 5] {
        let g = random_spd(d, &mut rng, 0.0);
        let l = random_spd(d, &mut rng, 0.2);
        let mu: Vec<f64> = (0..d).map(|_| rng.normal()).collect();
        let m = model(&mu, g, l);
        let scorer = m.scorer().unwrap();
        for _ in 0..20 {
            let a: Vec<f64> = (0..d).map(|_| 2.0 * rng.normal()).collect();
            let b: Vec<f64> = (0..d).map(|_| 2.0 * rng.normal()).collect();
            let got = scorer.score(&a, &b).unwrap();
            let want = dense_llr(&m, &a, &b);
            assert!((got - want).abs() < 1e-8 * (1.0 + want.abs()), "d={d}: {got} vs {want}");
        }
    }
}

#[test]
fn zero_between_covariance_scores_zero() {
    let mut rng = SeededRng::new(3);
    let l = random_spd(4, &mut rng, 0.3);
    let m = model(&[0.0; 4], DMatrix::zeros(4, 4), l);
    for _ in 0..50 {
        let a: Vec<f64> = (0..4).map(|_| rng.normal()).collect();
        let b: Vec<f64> = (0..4).map(|_| rng.normal()).collect();
        assert!(m.score(&a, &b).unwrap().abs() < 1e-10);
    }
}

#[test]
fn score_matches_quadrature_in_one_dimension() {
    let m = model(&[0.0], DMatrix::from_element(1, 1, 1.0), DMatrix::from_element(1, 1, 1.0));
    let pdf = |x: f64, var: f64| (-0.5 * x * x / var).exp() / (2.0 * std::f64::consts::PI * var).sqrt();
    let h = 1e-3;
    for (a, b) in [(0.0, 0.0), (1.0, 1.2), (-2.0, 1.5), (3.0, -3.0), (0.5, 2.5)] {
        let mut same = 0.0;
        let mut y = -15.0;
        while y <= 15.0 {
            same += pdf(a - y, 1.0) * pdf(b - y, 1.0) * pdf(y, 1.0) * h;
            y += h;
        }
        let want = same.ln() - (pdf(a, 2.0) * pdf(b, 2.0)).ln();
        let got = m.score(&[a], &[b]).unwrap();
        assert!((got - want).abs() < 1e-6, "({a},{b}): {got} vs {want}");
    }
}

#[test]
fn score_matches_quadrature_in_two_dimensions() {
    let g = DMatrix::from_row_slice(2, 2, &[1.5, 0.4, 0.4, 0.8]);
    let l = DMatrix::from_row_slice(2, 2, &[0.7, -0.2, -0.2, 1.1]);
    let m = model(&[0.2, -0.1], g.clone(), l.clone());
    let gi = g.clone().try_inverse().unwrap();
    let li = l.clone().try_inverse().unwrap();
    let norm2 = |c: &DMatrix<f64>| 1.0 / (2.0 * std::f64::consts::PI * c.determinant().sqrt());
    let (ng, nl) = (norm2(&g), norm2(&l));
    let dens = |x: [f64; 2], inv: &DMatrix<f64>, k: f64| {
        let q = inv[(0, 0)] * x[0] * x[0] + 2.0 * inv[(0, 1)] * x[0] * x[1] + inv[(1, 1)] * x[1] * x[1];
        k * (-0.5 * q).exp()
    };
    let t = &g + &l;
    let (ti, nt) = (t.clone().try_inverse().unwrap(), norm2(&t));
    let h = 0.02;
    let steps = (16.0 / h) as i64;
    for (a, b) in [([0.2, -0.1], [0.2, -0.1]), ([1.0, 0.5], [0.7, 1.2]), ([-1.5, 2.0], [2.0, -1.0])] {
        let ac = [a[0] - 0.2, a[1] + 0.1];
        let bc = [b[0] - 0.2, b[1] + 0.1];
        let mut same = 0.0;
        for i in -steps / 2..=steps / 2 {
            for j in -steps / 2..=steps / 2 {
                let y = [i as f64 * h, j as f64 * h];
                same += dens([ac[0] - y[0], ac[1] - y[1]], &li, nl)
                    * dens([bc[0] - y[0], bc[1] - y[1]], &li, nl)
                    * dens(y, &gi, ng)
                    * h
                    * h;
            }
        }
        let want = same.ln() - (dens(ac, &ti, nt) * dens(bc, &ti, nt)).ln();
        let got = m.score(&a, &b).unwrap();
        assert!((got - want).abs() < 1e-6, "{got} vs {want}");
    }
}

#[test]
fn score_is_symmetric() {
    let mut rng = SeededRng::new(5);
    let m = model(&[1.0, 0.0, -1.0, 0.5, 0.0, 2.0], random_spd(6, &mut rng, 0.0), random_spd(6, &mut rng, 0.1));
    let s = m.scorer().unwrap();
    for _ in 0..500 {
        let a: Vec<f64> = (0..6).map(|_| 3.0 * rng.normal()).collect();
        let b: Vec<f64> = (0..6).map(|_| 3.0 * rng.normal()).collect();
        assert_eq!(s.score(&a, &b).unwrap(), s.score(&b, &a).unwrap());
    }
}

#[test]
fn score_rejects_dimension_mismatch() {
    let m = model(&[0.0, 0.0], DMatrix::identity(2, 2), DMatrix::identity(2, 2));
    assert!(matches!(m.score(&[0.0], &[0.0, 0.0]), Err(Error::DimensionMismatch { .. })));
}

#[test]
fn enrolment_reduces_to_pairwise() {
    let mut rng = SeededRng::new(6);
    let m = model(&[0.0; 3], random_spd(3, &mut rng, 0.1), random_spd(3, &mut rng, 0.1));
    let s = m.scorer().unwrap();
    let norm = Some(3f64.sqrt());
    let mut e: Vec<f64> = (0..3).map(|_| rng.normal()).collect();
    let k = 3f64.sqrt() / e.iter().map(|v| v * v).sum::<f64>().sqrt();
    e.iter_mut().for_each(|v| *v *= k);
    let t: Vec<f64> = (0..3).map(|_| rng.normal()).collect();
    let single = s.score_enrolment(&[&e], &t, norm).unwrap();
    assert_eq!(single, s.score(&e, &t).unwrap());
    let twice = s.score_enrolment(&[&e, &e], &t, norm).unwrap();
    assert!((twice - single).abs() < 1e-12 * (1.0 + single.abs()));
    assert!(matches!(s.score_enrolment(&[], &t, norm), Err(Error::Precondition(_))));
}

#[test]
fn enrolment_of_orthogonal_pair_is_renormalized_average() {
    let m = model(&[0.0, 0.0], DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0]), DMatrix::identity(2, 2));
    let s = m.scorer().unwrap();
    let r2 = 2f64.sqrt();
    let t = [0.4, -1.3];
    // average is (r2/2, r2/2) with norm 1; rescaled to sqrt(2) it is (1, 1)
    let got = s.score_enrolment(&[&[r2, 0.0], &[0.0, r2]], &t, Some(r2)).unwrap();
    let want = s.score(&[1.0, 1.0], &t).unwrap();
    assert!((got - want).abs() < 1e-12);
    let raw = s.score_enrolment(&[&[r2, 0.0], &[0.0, r2]], &t, None).unwrap();
    assert!((raw - s.score(&[r2 / 2.0, r2 / 2.0], &t).unwrap()).abs() < 1e-12);
}

#[test]
fn em_recovers_generating_covariances() {
    let truth = model(&[0.0; 4], DMatrix::identity(4, 4) * 2.0, DMatrix::identity(4, 4));
    let data = sample(&truth, 500, 10, 11);
    let fit = fit_plda(&data, &EmConfig::default()).unwrap();
    let eg = rel_frobenius(&fit.model.gamma, &truth.gamma);
    let el = rel_frobenius(&fit.model.lambda, &truth.lambda);
    assert!(eg < 0.1 && el < 0.1, "gamma {eg}, lambda {el}");
}

#[test]
fn em_log_likelihood_never_decreases() {
    let mut rng = SeededRng::new(12);
    for trial in 0..5u64 {
        let d = 2 + trial as usize;
        // uneven group sizes and non-Gaussian data
        let groups: Vec<Vec<Vec<f64>>> = (0..30)
            .map(|s| {
                let centre: Vec<f64> = (0..d).map(|_| rng.uniform_range(-2.0, 2.0)).collect();
                (0..1 + (s % 6))
                    .map(|_| centre.iter().map(|c| c + rng.uniform_range(-1.0, 1.0).powi(3)).collect())
                    .collect()
            })
            .collect();
        let fit = fit_plda(
            &groups,
            &EmConfig {
                iterations: 40,
                tolerance: 0.0,
            },
        )
        .unwrap();
        for w in fit.log_likelihoods.windows(2) {
            assert!(w[1] >= w[0] - 1e-8, "trial {trial}: {} -> {}", w[0], w[1]);
        }
        let last = *fit.log_likelihoods.last().unwrap();
        let recomputed = marginal_log_likelihood(&fit.model, &groups).unwrap();
        assert!((last - recomputed).abs() < 1e-9 * last.abs());
    }
}

#[test]
fn log_likelihood_matches_dense_marginal() {
    let mut rng = SeededRng::new(13);
    let m = model(&[0.5, -0.5], random_spd(2, &mut rng, 0.1), random_spd(2, &mut rng, 0.2));
    let groups = sample(&m, 3, 3, 4);
    let mut want = 0.0;
    for g in &groups {
        let n = g.len();
        let mut c = DMatrix::zeros(2 * n, 2 * n);
        for i in 0..n {
            for j in 0..n {
                let block = if i == j { &m.gamma + &m.lambda } else { m.gamma.clone() };
                c.view_mut((2 * i, 2 * j), (2, 2)).copy_from(&block);
            }
        }
        let x = DVector::from_iterator(2 * n, g.iter().flat_map(|e| [e[0] - 0.5, e[1] + 0.5]));
        want += log_gauss(&x, &c);
    }
    let got = marginal_log_likelihood(&m, &groups).unwrap();
    assert!((got - want).abs() < 1e-9 * want.abs(), "{got} vs {want}");
}

#[test]
fn em_rejects_unidentifiable_input() {
    let one = vec![vec![vec![0.0, 1.0], vec![1.0, 0.0], vec![0.5, 0.5]]];
    assert!(matches!(fit_plda(&one, &EmConfig::default()), Err(Error::Precondition(_))));
    let singletons = vec![vec![vec![0.0, 1.0]], vec![vec![1.0, 0.0]], vec![vec![2.0, 0.0]]];
    assert!(matches!(fit_plda(&singletons, &EmConfig::default()), Err(Error::Precondition(_))));
    let data = sample(&model(&[0.0], DMatrix::identity(1, 1), DMatrix::identity(1, 1)), 5, 3, 1);
    let bad = EmConfig {
        iterations: 0,
        tolerance: 1e-6,
    };
    assert!(matches!(fit_plda(&data, &bad), Err(Error::InvalidArgument(_))));
}

#[test]
fn scalar_adaptation_splits_excess() {
    let m = model(&[0.0], DMatrix::from_element(1, 1, 1.0), DMatrix::from_element(1, 1, 1.0));
    let out = adapt_from_stats(
        &m,
        &DVector::from_element(1, 0.7),
        &DMatrix::from_element(1, 1, 3.0),
        &AdaptConfig::default(),
    )
    .unwrap();
    assert!((out.gamma[(0, 0)] - 1.25).abs() < 1e-12);
    assert!((out.lambda[(0, 0)] - 1.75).abs() < 1e-12);
    assert_eq!(out.mu[0], 0.7);
    // smaller variance leaves the covariances alone
    let shrink = adapt_from_stats(
        &m,
        &DVector::zeros(1),
        &DMatrix::from_element(1, 1, 0.5),
        &AdaptConfig::default(),
    )
    .unwrap();
    assert_eq!(shrink.gamma, m.gamma);
    assert_eq!(shrink.lambda, m.lambda);
}

#[test]
fn adaptation_fixed_point() {
    let mut rng = SeededRng::new(21);
    for d in [1, 3, 8] {
        let m = model(
            &(0..d).map(|i| i as f64).collect::<Vec<_>>(),
            random_spd(d, &mut rng, 0.0),
            random_spd(d, &mut rng, 0.5),
        );
        let out = adapt_from_stats(&m, &m.mu, &m.total_covariance(), &AdaptConfig::default()).unwrap();
        assert!((&out.gamma - &m.gamma).abs().max() < 1e-10);
        assert!((&out.lambda - &m.lambda).abs().max() < 1e-10);
        assert_eq!(out.mu, m.mu);
    }
}

#[test]
fn adaptation_to_scaled_total_matches_it() {
    let mut rng = SeededRng::new(22);
    let m = model(&[0.0; 5], random_spd(5, &mut rng, 0.0), random_spd(5, &mut rng, 0.5));
    let target = m.total_covariance() * 4.0;
    let out = adapt_from_stats(&m, &m.mu, &target, &AdaptConfig::default()).unwrap();
    assert!((out.total_covariance() - &target).abs().max() < 1e-8 * target.abs().max());
    // excess 3 T split a quarter / three quarters
    let want_gamma = &m.gamma + m.total_covariance() * 0.75;
    let want_lambda = &m.lambda + m.total_covariance() * 2.25;
    assert!((&out.gamma - want_gamma).abs().max() < 1e-8 * target.abs().max());
    assert!((&out.lambda - want_lambda).abs().max() < 1e-8 * target.abs().max());
}

#[test]
fn all_within_leaves_between_untouched() {
    let mut rng = SeededRng::new(23);
    let m = model(&[0.0; 3], random_spd(3, &mut rng, 0.0), random_spd(3, &mut rng, 0.5));
    let cfg = AdaptConfig {
        alpha_within: 1.0,
        alpha_between: 0.0,
    };
    let out = adapt_from_stats(&m, &m.mu, &(m.total_covariance() * 3.0), &cfg).unwrap();
    assert_eq!(out.gamma, m.gamma);
    assert!(out.lambda != m.lambda);
}

#[test]
fn adaptation_preserves_definiteness_and_never_shrinks() {
    let mut rng = SeededRng::new(24);
    for trial in 0..1000 {
        let d = 1 + trial % 5;
        let m = model(&vec![0.0; d], random_spd(d, &mut rng, 0.0), random_spd(d, &mut rng, 0.05));
        // random PSD, sometimes rank deficient
        let rank = 1 + rng.below(d + 1);
        let a = DMatrix::from_fn(d, rank, |_, _| rng.normal());
        let s = &a * a.transpose();
        let out = adapt_from_stats(&m, &m.mu, &s, &AdaptConfig::default()).unwrap();
        assert!(out.lambda.clone().cholesky().is_some());
        assert!(out.gamma.symmetric_eigenvalues().min() > -1e-9);
        let diff = out.total_covariance() - m.total_covariance();
        assert!(diff.symmetric_eigenvalues().min() >= -1e-10, "trial {trial}");
    }
}

#[test]
fn adaptation_from_embeddings() {
    let m = model(&[0.0, 0.0], DMatrix::identity(2, 2), DMatrix::identity(2, 2));
    let shifted = model(&[3.0, -1.0], DMatrix::identity(2, 2) * 4.0, DMatrix::identity(2, 2) * 4.0);
    let data: Vec<Vec<f64>> = sample(&shifted, 400, 5, 31).into_iter().flatten().collect();
    let out = adapt(&m, &data, &AdaptConfig::default()).unwrap();
    assert!((out.mu[0] - 3.0).abs() < 0.3 && (out.mu[1] + 1.0).abs() < 0.3);
    let ratio = out.total_covariance().trace() / m.total_covariance().trace();
    assert!((ratio - 4.0).abs() < 0.4, "ratio {ratio}");

    assert!(matches!(adapt(&m, &data[..2], &AdaptConfig::default()), Err(Error::Precondition(_))));
    let bad = AdaptConfig {
        alpha_within: 0.5,
        alpha_between: 0.6,
    };
    assert!(matches!(adapt(&m, &data, &bad), Err(Error::InvalidArgument(_))));
    let negative = AdaptConfig {
        alpha_within: 1.5,
        alpha_between: -0.5,
    };
    assert!(matches!(adapt(&m, &data, &negative), Err(Error::InvalidArgument(_))));
}

#[test]
fn model_file_round_trip_and_validation() {
    let mut rng = SeededRng::new(40);
    let m = model(&[1.0, 2.0, 3.0], random_spd(3, &mut rng, 0.0), random_spd(3, &mut rng, 0.1));
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("plda.svp");
    m.save(&path).unwrap();
    assert_eq!(PldaModel::load(&path).unwrap(), m);

    let mut bytes = m.to_bytes();
    bytes[0] = b'X';
    assert!(matches!(PldaModel::from_bytes(&bytes, "mem"), Err(Error::BadMagic(_))));
    let bytes = m.to_bytes();
    assert!(matches!(PldaModel::from_bytes(&bytes[..bytes.len() - 3], "mem"), Err(Error::Truncated(_))));

    let not_pd = PldaModel::new(DVector::zeros(2), DMatrix::identity(2, 2), DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]));
    assert!(matches!(not_pd, Err(Error::Numerical(_))));
    let asym = PldaModel::new(DVector::zeros(2), DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]), DMatrix::identity(2, 2));
    assert!(matches!(asym, Err(Error::Numerical(_))));
}

#[test]
fn em_survives_a_degenerate_within_subspace() {
    // the third coordinate is a fixed function of the speaker, so the
    // within-speaker scatter has a null direction
    let mut rng = SeededRng::new(21);
    let groups: Vec<Vec<Vec<f64>>> = (0..30)
        .map(|s| {
            let y = [rng.normal() * 2.0, rng.normal() * 2.0];
            (0..5)
                .map(|_| vec![y[0] + rng.normal(), y[1] + rng.normal(), s as f64 * 0.1])
                .collect()
        })
        .collect();
    let fit = fit_plda(&groups, &EmConfig { iterations: 20, tolerance: 0.0 }).unwrap();
    let scorer = fit.model.scorer().unwrap();
    let s = scorer.score(&groups[0][0], &groups[0][1]).unwrap();
    assert!(s.is_finite());
    assert!(fit.model.lambda[(2, 2)] > 0.0);
}
