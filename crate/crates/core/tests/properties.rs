use lowsnr::design::{spectral_norm, DesignBundle, EntryDist};
use lowsnr::meanfield::{solve_fixed_point, SolverOptions};
use lowsnr::prior::{make_site, make_sites, PriorMeasure, TiltedSite};
use lowsnr::seeds::rng_for;
use ndarray::{Array1, Array2};
use proptest::prelude::*;
use rand::Rng;

fn preset() -> impl Strategy<Value = PriorMeasure> {
    prop_oneof![
        Just(PriorMeasure::uniform()),
        Just(PriorMeasure::rademacher()),
        Just(PriorMeasure::three_point()),
        Just(PriorMeasure::spike_slab_base()),
        // asymmetric atoms plus a bit of uniform mass
        (-0.9..0.9f64, 0.05..0.9f64, prop::bool::ANY).prop_map(|(x, w, dens)| {
            let atoms = vec![(x, w), (1.0, 1.0 - w)];
            let f = |_: f64| 0.3;
            PriorMeasure::new(atoms, if dens { Some(&f as &dyn Fn(f64) -> f64) } else { None }, 201).unwrap()
        }),
    ]
}

fn random_coupling(p: usize, rho: f64, seed: u64) -> Array2<f64> {
    let mut rng = rng_for(seed, 99, p as u64);
    let mut a = Array2::zeros((p, p));
    for i in 0..p {
        for j in 0..i {
            let v: f64 = rng.random_range(-1.0..1.0);
            a[[i, j]] = v;
            a[[j, i]] = v;
        }
    }
    let (norm, _, _) = spectral_norm(&a, 2000, 1e-14);
    a * (rho / norm)
}

fn random_field(p: usize, seed: u64) -> Vec<f64> {
    let mut rng = rng_for(seed, 98, p as u64);
    (0..p).map(|_| rng.random_range(-2.0..2.0)).collect()
}

fn residual(sites: &[TiltedSite], a: &Array2<f64>, c: &[f64], u: &[f64]) -> f64 {
    let au = a.dot(&Array1::from(u.to_vec()));
    (0..u.len()).map(|i| (u[i] - sites[i].moments(au[i] + c[i]).mean).abs()).fold(0.0, f64::max)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn tilt_moments_stay_in_range(prior in preset(), d in 0.0..2.0f64, theta in -20.0..20.0f64) {
        let s = make_site(&prior, d).unwrap();
        let m = s.moments(theta);
        prop_assert!(m.mean.abs() <= 1.0);
        // tanh(theta) rounds to 1.0 in f64 beyond |theta| ~ 19
        if theta.abs() <= 15.0 {
            prop_assert!(m.mean.abs() < 1.0);
        }
        prop_assert!(m.var > 0.0 && m.var <= 1.0);
        prop_assert!(m.psi.is_finite());
    }

    #[test]
    fn finite_differences(prior in preset(), d in 0.0..2.0f64) {
        let s = make_site(&prior, d).unwrap();
        let h = 1e-4;
        for theta in [-3.0, -1.0, 0.0, 1.0, 3.0] {
            let m = s.moments(theta);
            let (lo, hi) = (s.moments(theta - h), s.moments(theta + h));
            prop_assert!(((hi.psi - lo.psi) / (2.0 * h) - m.mean).abs() <= 1e-6);
            prop_assert!(((hi.mean - lo.mean) / (2.0 * h) - m.var).abs() <= 1e-6);
        }
    }

    #[test]
    fn symmetric_sites_are_even(d in 0.0..2.0f64, theta in 0.0..15.0f64, k in 0usize..4) {
        let prior = [PriorMeasure::uniform(), PriorMeasure::rademacher(), PriorMeasure::three_point(), PriorMeasure::spike_slab_base()][k].clone();
        let s = make_site(&prior, d).unwrap();
        prop_assert!(s.is_symmetric());
        let (a, b) = (s.moments(theta), s.moments(-theta));
        prop_assert!((a.psi - b.psi).abs() <= 1e-10);
        prop_assert!((a.mean + b.mean).abs() <= 1e-10);
        prop_assert!((a.var - b.var).abs() <= 1e-10);
    }

    #[test]
    fn tilt_mean_is_increasing(prior in preset(), d in 0.0..2.0f64) {
        let s = make_site(&prior, d).unwrap();
        let grid: Vec<f64> = (0..81).map(|k| -8.0 + 0.2 * k as f64).collect();
        for w in grid.windows(2) {
            prop_assert!(s.moments(w[1]).mean > s.moments(w[0]).mean);
        }
    }

    #[test]
    fn reconstruction_and_norm_ordering(n in 3usize..40, p in 2usize..12, sigma2 in 0.3..3.0f64, gamma in 0.2..1.5f64, seed in any::<u64>(), k in 0usize..3) {
        let dist = [EntryDist::Gaussian, EntryDist::Rademacher, EntryDist::UniformScaled][k];
        let mut rng = rng_for(seed, 1, 0);
        let b = DesignBundle::white_noise(n, p, dist, sigma2, gamma, &mut rng).unwrap();
        let x = b.dense_x();
        let g = x.t().dot(&x) * (gamma / sigma2);
        for i in 0..p {
            for j in 0..p {
                let sigma = if i == j { b.d()[i] } else { 0.0 } - b.a()[[i, j]];
                prop_assert!((sigma - g[[i, j]]).abs() <= 1e-12 * (1.0 + g[[i, j]].abs()));
            }
        }
        let m = b.diagnostics(1000, 1e-12);
        prop_assert!(m.norm2 <= m.norm4_upper * (1.0 + 1e-9) + 1e-12);
        prop_assert!(m.norm4_upper <= m.norm_inf * (1.0 + 1e-9) + 1e-12);
        prop_assert!(m.norm4_lower <= m.norm4_upper * (1.0 + 1e-9) + 1e-12);
    }

    #[test]
    fn fixed_point_is_unique(p in 2usize..10, seed in any::<u64>(), rho in 0.1..0.9f64, k in 0usize..4) {
        let prior = [PriorMeasure::uniform(), PriorMeasure::rademacher(), PriorMeasure::three_point(), PriorMeasure::spike_slab_base()][k].clone();
        let a = random_coupling(p, rho, seed);
        let c = random_field(p, seed);
        let sites = make_sites(&prior, &vec![1.0; p]).unwrap();
        let mut rng = rng_for(seed, 97, 0);
        let mut sols = Vec::new();
        for _ in 0..10 {
            let init: Vec<f64> = (0..p).map(|_| rng.random_range(-0.99..0.99)).collect();
            let opts = SolverOptions { tol: 1e-12, init: Some(init), ..Default::default() };
            sols.push(solve_fixed_point(&sites, &a, &c, &opts).unwrap().u);
        }
        for s in &sols[1..] {
            let d = s.iter().zip(&sols[0]).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
            prop_assert!(d <= 1e-8);
        }
    }

    #[test]
    fn sign_equivariance(p in 2usize..10, seed in any::<u64>(), rho in 0.1..0.9f64, k in 0usize..4) {
        let prior = [PriorMeasure::uniform(), PriorMeasure::rademacher(), PriorMeasure::three_point(), PriorMeasure::spike_slab_base()][k].clone();
        let a = random_coupling(p, rho, seed);
        let c = random_field(p, seed);
        let neg: Vec<f64> = c.iter().map(|x| -x).collect();
        let sites = make_sites(&prior, &vec![0.8; p]).unwrap();
        let s1 = solve_fixed_point(&sites, &a, &c, &SolverOptions::default()).unwrap();
        let s2 = solve_fixed_point(&sites, &a, &neg, &SolverOptions::default()).unwrap();
        prop_assert_eq!(s1.iterations, s2.iterations);
        for (x, y) in s1.u.iter().zip(&s2.u) {
            prop_assert_eq!(*x, -*y);
        }
    }

    #[test]
    fn residual_and_contraction(p in 2usize..12, seed in any::<u64>(), rho in 0.3..0.9f64, prior in preset()) {
        let a = random_coupling(p, rho, seed);
        let c = random_field(p, seed);
        let sites = make_sites(&prior, &vec![0.5; p]).unwrap();
        let opts = SolverOptions::default();
        let sol = solve_fixed_point(&sites, &a, &c, &opts).unwrap();
        prop_assert!(residual(&sites, &a, &c, &sol.u) <= 2.0 * opts.tol);
        let steps = &sol.step_history;
        for k in 10..steps.len().saturating_sub(1) {
            if steps[k] > 1e-12 {
                prop_assert!(steps[k + 1] / steps[k] <= rho + 0.05, "step ratio {} at {}", steps[k + 1] / steps[k], k);
            }
        }
    }
}
