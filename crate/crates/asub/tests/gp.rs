mod common;

use asub::benchfns::{gp_sample, lhs, testfun_2d, SampleKernel};
use asub::gp::{
    build_gram, cov_from_neg_hessian, fd_hessian, fit, fit_with, laplace_cov, log_likelihood, log_likelihood_grad,
    Bounds, Dataset, FitOptions, GpModel, NuggetMode, ParamLayout,
};

use asub::kernels::{KernelFamily, KernelSpec};
use common::{corr_d, Fam, SplitMix};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

fn fam(f: KernelFamily) -> Fam {
    match f {
        KernelFamily::Gaussian => Fam::Gauss,
        KernelFamily::Matern32 => Fam::M32,
        KernelFamily::Matern52 => Fam::M52,
    }
}

fn k_oracle(f: KernelFamily, ls: &[f64], s2: f64, a: &[f64], b: &[f64]) -> f64 {
    s2 * (0..a.len()).map(|d| corr_d(fam(f), ls[d], 0, a[d] - b[d])).product::<f64>()
}

/// ∂k(a, b)/∂a_i
fn dk_oracle(f: KernelFamily, ls: &[f64], s2: f64, a: &[f64], b: &[f64], i: usize) -> f64 {
    s2 * (0..a.len()).map(|d| corr_d(fam(f), ls[d], usize::from(d == i), a[d] - b[d])).product::<f64>()
}

fn random_data(rng: &mut SplitMix, n: usize, m: usize) -> Dataset<f64> {
    let rows: Vec<Vec<f64>> = (0..n).map(|_| (0..m).map(|_| rng.uniform()).collect()).collect();
    let y: Vec<f64> =
        rows.iter().map(|r| r.iter().enumerate().map(|(d, v)| ((d + 2) as f64 * v).sin()).sum()).collect();
    Dataset::from_rows(&rows, &y).unwrap()
}

fn rows(d: &Dataset<f64>) -> Vec<Vec<f64>> {
    (0..d.n()).map(|i| d.point(i).to_vec()).collect()
}

#[test]
fn gram_matches_double_loop() {
    let mut rng = SplitMix(11);
    for f in KernelFamily::ALL {
        let d = random_data(&mut rng, 50, 3);
        let ls = vec![0.2, 0.45, 0.9];
        let spec = KernelSpec::new(f, ls.clone(), 1.7, 0.03).unwrap();
        let k = build_gram(&spec, &d).unwrap();
        let x = rows(&d);
        for i in 0..50 {
            for j in 0..50 {
                let want = k_oracle(f, &ls, 1.7, &x[i], &x[j]) + if i == j { 0.03 } else { 0.0 };
                assert!((k[(i, j)] - want).abs() < 1e-13, "{f:?} ({i},{j})");
            }
        }
    }
}

#[test]
fn log_likelihood_two_points_by_hand() {
    let spec = KernelSpec::new(KernelFamily::Gaussian, vec![0.3], 1.5, 0.2).unwrap();
    let d = Dataset::from_rows(&[vec![0.1], vec![0.4]], &[0.7, -0.2]).unwrap();
    let a = 1.7;
    let b = 1.5 * (-0.09f64 / 0.18).exp();
    let det = a * a - b * b;
    let quad = (a * 0.49 - 2.0 * b * 0.7 * -0.2 + a * 0.04) / det;
    let want = -0.5 * quad - 0.5 * det.ln() - (2.0 * std::f64::consts::PI).ln();
    assert!((log_likelihood(&spec, &d).unwrap() - want).abs() < 1e-13);
}

#[test]
fn predict_matches_dense_solve() {
    let mut rng = SplitMix(5);
    let f = KernelFamily::Matern52;
    let ls = vec![0.35, 0.6];
    let d = random_data(&mut rng, 30, 2);
    let spec = KernelSpec::new(f, ls.clone(), 0.8, 1e-6).unwrap();
    let model = GpModel::new(spec, d.clone()).unwrap();
    let x = rows(&d);
    let kmat = DMatrix::from_fn(30, 30, |i, j| k_oracle(f, &ls, 0.8, &x[i], &x[j]) + if i == j { 1e-6 } else { 0.0 });
    let lu = kmat.lu();
    for _ in 0..40 {
        let p = vec![rng.uniform(), rng.uniform()];
        let kv = DVector::from_fn(30, |i, _| k_oracle(f, &ls, 0.8, &p, &x[i]));
        let sol = lu.solve(&kv).unwrap();
        let mean = sol.dot(d.y());
        let var = 0.8 - kv.dot(&sol);
        let (m, v) = model.predict(&p).unwrap();
        assert!((m - mean).abs() < 1e-8 * mean.abs().max(1.0));
        assert!((v - var.max(0.0)).abs() < 1e-8);
    }
}

#[test]
fn predict_interpolates_and_reverts() {
    let d = Dataset::from_rows(&[vec![0.2, 0.3], vec![0.7, 0.6], vec![0.5, 0.9]], &[1.0, -2.0, 0.5]).unwrap();
    let spec = KernelSpec::new(KernelFamily::Gaussian, vec![0.3, 0.3], 2.0, 0.0).unwrap();
    let model: GpModel<f64> = GpModel::new(spec, d.clone()).unwrap();
    for i in 0..3 {
        let (m, v) = model.predict(d.point(i)).unwrap();
        assert!((m - d.y()[i]).abs() < 1e-6);
        assert!(v <= 1e-8 * 2.0);
    }
    let spec = KernelSpec::new(KernelFamily::Gaussian, vec![0.01, 0.01], 2.0, 0.0).unwrap();
    let model: GpModel<f64> = GpModel::new(spec, d).unwrap();
    let (m, v) = model.predict(&[0.0, 1.0]).unwrap();
    assert!(m.abs() < 1e-10);
    assert!((v - 2.0).abs() < 1e-10);
}

#[test]
fn gradient_mean_matches_fd_of_predictive_mean() {
    let mut rng = SplitMix(77);
    for f in KernelFamily::ALL {
        let d = random_data(&mut rng, 25, 3);
        let spec = KernelSpec::new(f, vec![0.3, 0.5, 0.8], 1.2, 1e-6).unwrap();
        let model = GpModel::new(spec, d).unwrap();
        for _ in 0..50 {
            let x: Vec<f64> = (0..3).map(|_| rng.range(0.05, 0.95)).collect();
            let (mu, _) = model.grad_posterior(&x).unwrap();
            for i in 0..3 {
                let h = 1e-5;
                let mut xp = x.clone();
                let mut xm = x.clone();
                xp[i] += h;
                xm[i] -= h;
                let fd = (model.predict(&xp).unwrap().0 - model.predict(&xm).unwrap().0) / (2.0 * h);
                assert!((mu[i] - fd).abs() <= 1e-4 * fd.abs().max(1e-2), "{f:?} {i}: {} vs {fd}", mu[i]);
            }
        }
    }
}

#[test]
fn gradient_covariance_matches_joint_conditioning() {
    let mut rng = SplitMix(3);
    for f in KernelFamily::ALL {
        let ls = vec![0.4, 0.7];
        let s2 = 1.3;
        let d = random_data(&mut rng, 15, 2);
        let x = rows(&d);
        let spec = KernelSpec::new(f, ls.clone(), s2, 1e-4).unwrap();
        let model = GpModel::new(spec, d).unwrap();
        let kmat =
            DMatrix::from_fn(15, 15, |i, j| k_oracle(f, &ls, s2, &x[i], &x[j]) + if i == j { 1e-4 } else { 0.0 });
        let kinv = kmat.try_inverse().unwrap();
        for _ in 0..5 {
            let p = vec![rng.uniform(), rng.uniform()];
            let kap = DMatrix::from_fn(2, 15, |i, q| dk_oracle(f, &ls, s2, &p, &x[q], i));
            let prior = DMatrix::from_fn(2, 2, |i, j| if i == j { -s2 * corr_d(fam(f), ls[i], 2, 0.0) } else { 0.0 });
            let want = prior - &kap * &kinv * kap.transpose();
            let (_, cov) = model.grad_posterior(&p).unwrap();
            assert!((&cov - &want).norm() <= 1e-8 * want.norm().max(1e-12) + 1e-12, "{f:?}");
        }
    }
}

#[test]
fn long_lengthscale_gradient_is_ols_slope() {
    let mut rng = SplitMix(21);
    let rws: Vec<Vec<f64>> = (0..40).map(|_| vec![rng.uniform(), rng.uniform()]).collect();
    let y: Vec<f64> = rws.iter().map(|r| 0.3 + 1.5 * r[0] - 0.7 * r[1] + 0.01 * rng.normal()).collect();
    let d = Dataset::from_rows(&rws, &y).unwrap();
    let spec = KernelSpec::new(KernelFamily::Gaussian, vec![2.0, 2.0], 10.0, 1e-4).unwrap();
    let model = GpModel::new(spec, d).unwrap();
    let (mu, _) = model.grad_posterior(&[0.5, 0.5]).unwrap();
    let xm = DMatrix::from_fn(40, 3, |i, j| if j == 0 { 1.0 } else { rws[i][j - 1] });
    let beta = (xm.transpose() * &xm).lu().solve(&(xm.transpose() * DVector::from_vec(y))).unwrap();
    for i in 0..2 {
        assert!((mu[i] - beta[i + 1]).abs() < 0.1 * beta[i + 1].abs(), "{} vs {}", mu[i], beta[i + 1]);
    }
}

#[test]
fn variance_bounded_by_prior_and_shrinks_with_data() {
    let mut rng = SplitMix(8);
    let d = random_data(&mut rng, 12, 2);
    let spec = KernelSpec::new(KernelFamily::Matern32, vec![0.3, 0.3], 1.1, 0.05).unwrap();
    let model = GpModel::new(spec.clone(), d.clone()).unwrap();
    for _ in 0..200 {
        let x = [rng.uniform(), rng.uniform()];
        assert!(model.predict(&x).unwrap().1 <= 1.1 + 0.05);
    }
    let spec = spec.with_nugget(0.0).unwrap();
    let mut model = GpModel::new(spec, d).unwrap();
    let probe = [0.37, 0.61];
    for _ in 0..50 {
        let before = model.predict(&probe).unwrap().1;
        let x = [rng.uniform(), rng.uniform()];
        match model.with_point(&x, 0.0) {
            Ok(next) => model = next,
            Err(_) => continue,
        }
        assert!(model.predict(&probe).unwrap().1 <= before + 1e-10);
    }
}

#[test]
fn likelihood_gradient_matches_fd() {
    let mut rng = SplitMix(99);
    for f in KernelFamily::ALL {
        let d = random_data(&mut rng, 20, 2);
        let bounds = Bounds::for_data(&d);
        let layout = ParamLayout::new(2, f, &bounds);
        let theta = vec![(0.3f64).ln(), (0.6f64).ln(), (0.9f64).ln(), (1e-3f64).ln()];
        let (_, g) = log_likelihood_grad(&d, &layout, &theta, true).unwrap();
        for i in 0..theta.len() {
            let h = 1e-5;
            let mut tp = theta.clone();
            let mut tm = theta.clone();
            tp[i] += h;
            tm[i] -= h;
            let fd = (log_likelihood_grad(&d, &layout, &tp, false).unwrap().0
                - log_likelihood_grad(&d, &layout, &tm, false).unwrap().0)
                / (2.0 * h);
            assert!((g[i] - fd).abs() < 1e-5 * fd.abs().max(1.0), "{f:?} {i}: {} vs {fd}", g[i]);
        }
    }
}

#[test]
fn fit_recovers_sampled_lengthscales() {
    let x: DMatrix<f64> = lhs(400, 2, 4);
    let truth = KernelSpec::new(KernelFamily::Matern52, vec![0.2, 0.8], 1.0, 0.0).unwrap();
    let y = gp_sample(&SampleKernel::Separable(truth), &x, 17).unwrap();
    let d = Dataset::new(&x, &y).unwrap();
    let model = fit(&d, KernelFamily::Matern52, &Bounds::for_data(&d), 5, 1).unwrap();
    let ls = model.spec().lengthscales();
    assert!((ls[0].ln() - 0.2f64.ln()).abs() < 0.3, "{ls:?}");
    assert!((ls[1].ln() - 0.8f64.ln()).abs() < 0.3, "{ls:?}");
}

#[test]
fn fit_is_deterministic_and_handles_constant_data() {
    let mut rng = SplitMix(2);
    let d = random_data(&mut rng, 15, 2);
    let b = Bounds::for_data(&d);
    let a1 = fit(&d, KernelFamily::Gaussian, &b, 3, 9).unwrap();
    let a2 = fit(&d, KernelFamily::Gaussian, &b, 3, 9).unwrap();
    assert_eq!(a1.spec(), a2.spec());

    let c = Dataset::from_rows(&rows(&d), &[1.0; 15]).unwrap();
    let b = Bounds::for_data(&c);
    let r = fit_with(&c, KernelFamily::Matern32, &b, &FitOptions { n_restarts: 3, ..FitOptions::default() }).unwrap();
    let hi = b.variance.1;
    assert!(r.model.spec().variance() <= hi * (1.0 + 1e-9));
    assert!(r.model.spec().variance() >= b.variance.0 * (1.0 - 1e-9));
}

#[test]
fn fit_warns_when_underdetermined() {
    let d = Dataset::from_rows(&[vec![0.1, 0.2, 0.3], vec![0.9, 0.5, 0.4]], &[1.0, 2.0]).unwrap();
    let r = fit_with(&d, KernelFamily::Gaussian, &Bounds::for_data(&d), &FitOptions::default()).unwrap();
    assert!(!r.warnings.is_empty());
}

#[test]
fn hessian_of_closed_form_quadratic() {
    // Log-likelihood −½ (θ−μ)ᵀ P (θ−μ): covariance is P⁻¹.
    let p = DMatrix::from_row_slice(2, 2, &[4.0, 1.0, 1.0, 3.0]);
    let mu = [0.3, -0.2];
    let grad = |t: &[f64]| {
        let d = DVector::from_vec(vec![t[0] - mu[0], t[1] - mu[1]]);
        Some((-(&p * d)).as_slice().to_vec())
    };
    let h = fd_hessian(grad, &mu, 1e-4).unwrap();
    let (cov, clipped, pseudo) = cov_from_neg_hessian(&(-h));
    let want = p.try_inverse().unwrap();
    assert!((cov - want).norm() < 1e-3 * 1e-3);
    assert!(!clipped && !pseudo);

    let (cov, clipped, _) = cov_from_neg_hessian(&DMatrix::<f64>::from_row_slice(2, 2, &[2.0, 0.0, 0.0, -1.0]));
    assert!(clipped);
    assert!((cov[(0, 0)] - 0.5).abs() < 1e-15 && cov[(1, 1)] == 0.0);
    let (_, _, pseudo) = cov_from_neg_hessian(&DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]));
    assert!(pseudo);
}

#[test]
fn laplace_variance_curvature_is_half_n() {
    // With shape fixed, ll(s) = −½ q e^{−s} − (n/2) s + c, so −∂²ll/∂s² = n/2
    // at the maximum over s = log σ².
    let mut rng = SplitMix(31);
    let d = random_data(&mut rng, 30, 2);
    let mut b = Bounds::for_data(&d);
    b.nugget = NuggetMode::Fixed(0.0);
    let model = fit(&d, KernelFamily::Matern52, &b, 4, 2).unwrap();
    let post = laplace_cov(&model, &b).unwrap();
    assert!(post.grad_norm < 1e-3, "{}", post.grad_norm);
    assert!((post.neg_hessian[(2, 2)] - 15.0).abs() < 1e-3 * 15.0, "{}", post.neg_hessian[(2, 2)]);
    assert!(post.cov.symmetric_eigenvalues().iter().all(|&v| v >= 0.0));
}

#[test]
fn more_data_shrinks_laplace_covariance() {
    for design in 0..3u64 {
        let mut traces = Vec::new();
        for n in [20, 40] {
            let x: DMatrix<f64> = lhs(n, 2, design * 1000 + n as u64);
            let y = DVector::from_fn(n, |i, _| testfun_2d(&[x[(i, 0)], x[(i, 1)]]));
            let d = Dataset::new(&x, &y).unwrap();
            let b = Bounds::noiseless(&d);
            let model = fit(&d, KernelFamily::Gaussian, &b, 10, 5).unwrap();
            traces.push(laplace_cov(&model, &b).unwrap().cov.trace());
        }
        assert!(traces[1] < traces[0], "design {design}: {traces:?}");
    }
}

#[test]
fn bound_parameters_are_held_fixed() {
    let x: DMatrix<f64> = lhs(40, 2, 40);
    let y = DVector::from_fn(40, |i, _| testfun_2d(&[x[(i, 0)], x[(i, 1)]]));
    let d = Dataset::new(&x, &y).unwrap();
    let b = Bounds::noiseless(&d);
    let model = fit(&d, KernelFamily::Gaussian, &b, 10, 5).unwrap();
    let post = laplace_cov(&model, &b).unwrap();
    assert!(post.pinned.iter().any(|&p| p));
    for k in 0..post.pinned.len() {
        if post.pinned[k] {
            assert!(post.cov.row(k).iter().all(|&v| v == 0.0));
            assert!(!post.warnings.is_empty());
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn log_likelihood_permutation_invariant(seed in 0u64..1000, shift in 1usize..9) {
        let mut rng = SplitMix(seed);
        let d = random_data(&mut rng, 10, 2);
        let perm: Vec<usize> = (0..10).map(|i| (i * 3 + shift) % 10).collect();
        let spec = KernelSpec::new(KernelFamily::Matern32, vec![0.3, 0.5], 1.0, 1e-3).unwrap();
        let a = log_likelihood(&spec, &d).unwrap();
        let b = log_likelihood(&spec, &d.permuted(&perm)).unwrap();
        prop_assert!((a - b).abs() < 1e-10 * a.abs().max(1.0));
    }

    #[test]
    fn predictive_variance_nonnegative(seed in 0u64..1000, l in 0.05f64..2.0) {
        let mut rng = SplitMix(seed);
        let d = random_data(&mut rng, 8, 2);
        let spec = KernelSpec::new(KernelFamily::Gaussian, vec![l, l], 1.0, 1e-8).unwrap();
        let model = GpModel::new(spec, d.clone()).unwrap();
        for i in 0..d.n() {
            prop_assert!(model.predict(d.point(i)).unwrap().1 >= 0.0);
        }
    }
}
