//! Limiting constants of the projected posterior and of the mean-field centering.
//!
//! Everything is an expectation over beta* ~ mu* and W0 ~ N(0, d0) of functions of
//! psi0'(d0 beta* + W0) and psi0''(d0 beta* + W0), where psi0 is the log-MGF of the model
//! prior tilted by d0. Both layers are evaluated by quadrature: Hermite for Gaussian
//! parts, the atom/grid representation for bounded parts.

use crate::error::{Error, Result};
use crate::model::{Component, TruthLaw};
use crate::normal::{sf, two_sided_critical};
use crate::prior::{PriorMeasure, TiltedSite};
use crate::quadrature::{gauss_hermite, hermite_default, normal_nodes, Rule, HERMITE_NODES};
use serde::Serialize;

/// lambda-free integrals for one (mu, mu*, d0) triple.
#[derive(Debug, Clone, PartialEq)]
pub struct LimitIntegrals {
    pub d0: f64,
    /// E psi0''(d0 B + W0)
    pub upsilon: f64,
    /// E Var(psi0'(d0 B + W0) | B)
    pub mean_cond_var: f64,
    /// Var(phi1(d0 B) - B), phi1(m) = E psi0'(m + W0)
    pub var_phi_minus_b: f64,
    /// Var(B - psi0'(d0 B + W0)), computed directly over the joint law
    pub var_b_minus_psi: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AsymptoticConstants {
    pub d0: f64,
    pub lambda: f64,
    pub upsilon: f64,
    pub varsigma2: f64,
    pub vartheta2: f64,
    pub tau2: f64,
    pub alpha: f64,
    pub coverage_limit: f64,
    pub nmf_coverage_limit: f64,
}

fn outer_nodes(law: &TruthLaw, rule: &Rule) -> Vec<(f64, f64)> {
    let mut out = Vec::new();
    for (w, comp) in &law.components {
        match comp {
            Component::Atom(x) => out.push((*x, *w)),
            Component::Gaussian { mean, var } => {
                out.extend(normal_nodes(rule, *mean, *var).into_iter().map(|(x, v)| (x, v * w)))
            }
            Component::Bounded(p) => out.extend(p.support().map(|(x, v)| (x, v * w))),
        }
    }
    out
}

/// The model-side site psi0: prior `mu` tilted by d0.
pub fn psi0_site(mu: &PriorMeasure, d0: f64) -> Result<TiltedSite> {
    if !(d0 > 0.0) {
        return Err(Error::Domain(format!("d0 = {d0} must be positive")));
    }
    TiltedSite::new(mu, d0)
}

/// Integrals with the default 64-node Hermite rule.
pub fn limit_integrals(psi0: &TiltedSite, mu_star: &TruthLaw, d0: f64) -> Result<LimitIntegrals> {
    limit_integrals_with(psi0, mu_star, d0, hermite_default())
}

pub fn limit_integrals_with(psi0: &TiltedSite, mu_star: &TruthLaw, d0: f64, rule: &Rule) -> Result<LimitIntegrals> {
    if !(d0 > 0.0) || !d0.is_finite() {
        return Err(Error::Domain(format!("d0 = {d0} must be positive")));
    }
    let outer = outer_nodes(mu_star, rule);
    let inner = normal_nodes(rule, 0.0, d0);
    let k = inner.len();
    let mut mean1 = vec![0.0; outer.len()];
    let mut means = vec![0.0; outer.len() * k];
    let mut upsilon = 0.0;
    let mut mean_cond_var = 0.0;
    for (o, &(b, wb)) in outer.iter().enumerate() {
        let mut phi = 0.0;
        let mut e2 = 0.0;
        for (j, &(w, ww)) in inner.iter().enumerate() {
            let m = psi0.moments(d0 * b + w);
            means[o * k + j] = m.mean;
            phi += ww * m.mean;
            e2 += ww * m.var;
        }
        let cv: f64 = inner
            .iter()
            .enumerate()
            .map(|(j, &(_, ww))| ww * (means[o * k + j] - phi).powi(2))
            .sum();
        mean1[o] = phi;
        upsilon += wb * e2;
        mean_cond_var += wb * cv;
    }
    let e_diff: f64 = outer.iter().zip(&mean1).map(|(&(b, wb), phi)| wb * (phi - b)).sum();
    let var_phi_minus_b: f64 = outer
        .iter()
        .zip(&mean1)
        .map(|(&(b, wb), phi)| wb * (phi - b - e_diff).powi(2))
        .sum();
    let mut var_b_minus_psi = 0.0;
    for (o, &(b, wb)) in outer.iter().enumerate() {
        let s: f64 = inner
            .iter()
            .enumerate()
            .map(|(j, &(_, ww))| ww * (b - means[o * k + j] + e_diff).powi(2))
            .sum();
        var_b_minus_psi += wb * s;
    }
    Ok(LimitIntegrals { d0, upsilon, mean_cond_var, var_phi_minus_b, var_b_minus_psi })
}

fn check_lambda(lambda: f64, upsilon: f64) -> Result<f64> {
    let lu = lambda * upsilon;
    if !(lu < 1.0) || !lambda.is_finite() {
        return Err(Error::NonContractive(lu));
    }
    Ok(1.0 - lu)
}

impl LimitIntegrals {
    /// varsigma^2 = (E Var(psi0'|B) - lambda upsilon^2) / (1 - lambda upsilon)^2.
    pub fn varsigma2(&self, lambda: f64) -> Result<f64> {
        let g = check_lambda(lambda, self.upsilon)?;
        Ok((self.mean_cond_var - lambda * self.upsilon * self.upsilon) / (g * g))
    }

    /// (tau^2, vartheta^2).
    pub fn tau2(&self, lambda: f64) -> Result<(f64, f64)> {
        let g = check_lambda(lambda, self.upsilon)?;
        let tau2 = (self.var_b_minus_psi - lambda * self.upsilon * self.upsilon) / (g * g);
        Ok((tau2, self.var_phi_minus_b / (g * g)))
    }

    pub fn constants(&self, lambda: f64, alpha: f64) -> Result<AsymptoticConstants> {
        let varsigma2 = self.varsigma2(lambda)?;
        let (tau2, vartheta2) = self.tau2(lambda)?;
        Ok(AsymptoticConstants {
            d0: self.d0,
            lambda,
            upsilon: self.upsilon,
            varsigma2,
            vartheta2,
            tau2,
            alpha,
            coverage_limit: coverage_limit(self.upsilon, lambda, tau2, alpha)?,
            nmf_coverage_limit: nmf_coverage_limit(self.upsilon, tau2, alpha)?,
        })
    }

    /// d0 upsilon^2 < E Var(psi0' | B): the margin (right side minus left side).
    pub fn positivity_margin(&self) -> f64 {
        self.mean_cond_var - self.d0 * self.upsilon * self.upsilon
    }
}

pub fn limit_upsilon(psi0: &TiltedSite, mu_star: &TruthLaw, d0: f64) -> Result<f64> {
    Ok(limit_integrals(psi0, mu_star, d0)?.upsilon)
}

pub fn limit_varsigma2(psi0: &TiltedSite, mu_star: &TruthLaw, d0: f64, lambda: f64) -> Result<f64> {
    limit_integrals(psi0, mu_star, d0)?.varsigma2(lambda)
}

/// Returns (tau^2, vartheta^2).
pub fn limit_tau2(psi0: &TiltedSite, mu_star: &TruthLaw, d0: f64, lambda: f64) -> Result<(f64, f64)> {
    limit_integrals(psi0, mu_star, d0)?.tau2(lambda)
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Domain(format!("alpha = {alpha}")));
    }
    Ok(())
}

/// 1 - 2 P(N > c_{alpha/2} sqrt(upsilon / ((1 - lambda upsilon) tau^2))).
pub fn coverage_limit(upsilon: f64, lambda: f64, tau2: f64, alpha: f64) -> Result<f64> {
    check_alpha(alpha)?;
    let g = check_lambda(lambda, upsilon)?;
    if !(tau2 > 0.0) || !(upsilon > 0.0) {
        return Err(Error::Domain(format!("upsilon = {upsilon}, tau2 = {tau2}")));
    }
    Ok(1.0 - 2.0 * sf(two_sided_critical(alpha) * (upsilon / (g * tau2)).sqrt()))
}

/// Limit for the naive mean-field interval (half-width c_{alpha/2} sqrt(upsilon_p)).
pub fn nmf_coverage_limit(upsilon: f64, tau2: f64, alpha: f64) -> Result<f64> {
    check_alpha(alpha)?;
    if !(tau2 > 0.0) || !(upsilon > 0.0) {
        return Err(Error::Domain(format!("upsilon = {upsilon}, tau2 = {tau2}")));
    }
    Ok(1.0 - 2.0 * sf(two_sided_critical(alpha) * (upsilon / tau2).sqrt()))
}

/// phi1(m) = E psi0'(m + W0), W0 ~ N(0, d0).
pub fn phi1(psi0: &TiltedSite, m: f64, d0: f64) -> f64 {
    normal_nodes(hermite_default(), 0.0, d0)
        .iter()
        .map(|&(w, ww)| ww * psi0.moments(m + w).mean)
        .sum()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Centering {
    /// (1/(1-lambda upsilon)) sum q_i (phi1(d0 b_i) - lambda upsilon b_i)
    pub centering: f64,
    /// (1/(1-lambda upsilon)) sum q_i (phi1(d0 b_i) - b_i)
    pub bias: f64,
}

pub fn clt_centering(
    psi0: &TiltedSite,
    beta_star: &[f64],
    q: &[f64],
    d0: f64,
    lambda: f64,
    upsilon: f64,
) -> Result<Centering> {
    if beta_star.len() != q.len() {
        return Err(Error::Dimension("beta* and q differ in length".into()));
    }
    let g = check_lambda(lambda, upsilon)?;
    let inner = normal_nodes(hermite_default(), 0.0, d0);
    let mut centering = 0.0;
    let mut bias = 0.0;
    for (b, qi) in beta_star.iter().zip(q) {
        if *qi == 0.0 {
            continue;
        }
        let phi: f64 = inner.iter().map(|&(w, ww)| ww * psi0.moments(d0 * b + w).mean).sum();
        centering += qi * (phi - lambda * upsilon * b);
        bias += qi * (phi - b);
    }
    Ok(Centering { centering: centering / g, bias: bias / g })
}

/// Limit law N(mean, var) of the Bayes estimator under a spike-and-slab truth:
/// mean = zeta E psi0'(X/sigma^2 + W), X ~ mu_tilde, W ~ N(0, 1/sigma^2); var = Var psi0'(W).
pub fn sparse_limit(psi0: &TiltedSite, mu_tilde: &PriorMeasure, sigma2: f64, zeta: f64) -> Result<(f64, f64)> {
    if !(sigma2 > 0.0) {
        return Err(Error::Domain(format!("sigma2 = {sigma2}")));
    }
    let inner = normal_nodes(hermite_default(), 0.0, 1.0 / sigma2);
    let null: Vec<f64> = inner.iter().map(|&(w, _)| psi0.moments(w).mean).collect();
    let m0: f64 = inner.iter().zip(&null).map(|(&(_, ww), v)| ww * v).sum();
    let var: f64 = inner.iter().zip(&null).map(|(&(_, ww), v)| ww * (v - m0).powi(2)).sum();
    if zeta == 0.0 {
        return Ok((0.0, var));
    }
    let shift: f64 = mu_tilde
        .support()
        .map(|(x, wx)| {
            wx * inner
                .iter()
                .map(|&(w, ww)| ww * psi0.moments(x / sigma2 + w).mean)
                .sum::<f64>()
        })
        .sum();
    Ok((zeta * shift, var))
}

/// Constants recomputed with a larger Hermite rule, for convergence checks.
pub fn limit_integrals_refined(psi0: &TiltedSite, mu_star: &TruthLaw, d0: f64) -> Result<LimitIntegrals> {
    limit_integrals_with(psi0, mu_star, d0, &gauss_hermite(2 * HERMITE_NODES))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    const MC_DRAWS: usize = 1_000_000;

    fn site(name: &str, d0: f64) -> TiltedSite {
        psi0_site(&PriorMeasure::preset(name).unwrap(), d0).unwrap()
    }

    #[test]
    fn point_mass_truth_collapses_to_single_integral() {
        let s = site("uniform", 1.0);
        let ups = limit_upsilon(&s, &TruthLaw::point(0.0), 1.0).unwrap();
        let direct: f64 = normal_nodes(hermite_default(), 0.0, 1.0)
            .iter()
            .map(|&(w, ww)| ww * s.moments(w).var)
            .sum();
        assert!((ups - direct).abs() < 1e-15);
    }

    #[test]
    fn rademacher_upsilon_matches_monte_carlo() {
        let s = site("rademacher", 1.0);
        let ups = limit_upsilon(&s, &TruthLaw::preset("rademacher").unwrap(), 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let mut acc = 0.0;
        for k in 0..MC_DRAWS {
            let b = if k % 2 == 0 { 1.0 } else { -1.0 };
            let w: f64 = StandardNormal.sample(&mut rng);
            acc += 1.0 / (b + w).cosh().powi(2);
        }
        assert!((ups - acc / MC_DRAWS as f64).abs() < 1e-3);
    }

    #[test]
    fn reflected_truth_gives_same_upsilon() {
        let s = site("uniform", 1.0);
        let a = TruthLaw::bounded(PriorMeasure::from_atoms(vec![(0.7, 0.3), (-0.2, 0.7)]).unwrap());
        let b = TruthLaw::bounded(PriorMeasure::from_atoms(vec![(-0.7, 0.3), (0.2, 0.7)]).unwrap());
        let ua = limit_upsilon(&s, &a, 1.0).unwrap();
        let ub = limit_upsilon(&s, &b, 1.0).unwrap();
        assert!((ua - ub).abs() < 1e-12);
    }

    #[test]
    fn varsigma_uniform_matches_monte_carlo() {
        let s = site("uniform", 1.0);
        let law = TruthLaw::preset("uniform").unwrap();
        let li = limit_integrals(&s, &law, 1.0).unwrap();
        let v = li.varsigma2(0.5).unwrap();
        assert!(v > 0.0);
        // Monte Carlo of E Var(psi'|B): two independent W per B
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let mut acc_cv = 0.0;
        let mut acc_v = 0.0;
        for _ in 0..MC_DRAWS {
            let b = 2.0 * rand::Rng::random::<f64>(&mut rng) - 1.0;
            let w1: f64 = StandardNormal.sample(&mut rng);
            let w2: f64 = StandardNormal.sample(&mut rng);
            let m1 = s.moments(b + w1);
            let m2 = s.moments(b + w2);
            acc_cv += 0.5 * (m1.mean - m2.mean).powi(2);
            acc_v += m1.var;
        }
        let cv = acc_cv / MC_DRAWS as f64;
        let ups = acc_v / MC_DRAWS as f64;
        let g = 1.0 - 0.5 * ups;
        let mc = (cv - 0.5 * ups * ups) / (g * g);
        assert!((v - mc).abs() < 1e-3, "{v} vs {mc}");
        // lambda = 0 reduces to the conditional variance itself
        assert!((li.varsigma2(0.0).unwrap() - li.mean_cond_var).abs() < 1e-15);
    }

    #[test]
    fn tau2_point_mass_truth_matches_monte_carlo() {
        let s = site("uniform", 1.0);
        let (tau2, theta2) = limit_tau2(&s, &TruthLaw::point(0.0), 1.0, 0.0).unwrap();
        assert!(theta2.abs() < 1e-15);
        let mut rng = ChaCha8Rng::seed_from_u64(29);
        let xs: Vec<f64> = (0..MC_DRAWS)
            .map(|_| s.moments(StandardNormal.sample(&mut rng)).mean)
            .collect();
        let m = xs.iter().sum::<f64>() / MC_DRAWS as f64;
        let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / MC_DRAWS as f64;
        assert!((tau2 - v).abs() < 1e-3);
    }

    #[test]
    fn identities_hold() {
        for prior in ["uniform", "rademacher", "three_point", "spike_slab_base"] {
            let s = site(prior, 0.5);
            let law = TruthLaw::preset(prior).unwrap();
            let li = limit_integrals(&s, &law, 0.5).unwrap();
            for lambda in [-0.75, -0.5, 0.0, 0.5, 0.75] {
                let c = li.constants(lambda, 0.05).unwrap();
                assert!((c.tau2 - c.vartheta2 - c.varsigma2).abs() < 1e-8);
                let target = c.upsilon / (1.0 - lambda * c.upsilon);
                assert!((c.tau2 - target).abs() < 1e-8, "{prior} {lambda}: {} vs {target}", c.tau2);
                assert!((c.coverage_limit - 0.95).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn coverage_limit_examples() {
        assert!((coverage_limit(0.4, 0.0, 0.4, 0.05).unwrap() - 0.95).abs() < 1e-12);
        let lam = 0.5;
        let ups = 0.3;
        let well = ups / (1.0 - lam * ups);
        assert!((coverage_limit(ups, lam, well, 0.05).unwrap() - 0.95).abs() < 1e-12);
        // ratio 4: 1 - 2 sf(2 c)
        let v = coverage_limit(1.0, 0.0, 0.25, 0.05).unwrap();
        let oracle = 1.0 - libm::erfc(2.0 * 1.959963984540054 / std::f64::consts::SQRT_2);
        assert!((v - oracle).abs() < 1e-10);
        assert!(v > 0.9999);
        assert!((nmf_coverage_limit(ups, ups, 0.05).unwrap() - 0.95).abs() < 1e-12);
        assert!(nmf_coverage_limit(ups, ups / (1.0 + 0.5 * ups), 0.05).unwrap() > 0.95);
        assert!(nmf_coverage_limit(ups, ups / (1.0 - 0.5 * ups), 0.05).unwrap() < 0.95);
        assert!(coverage_limit(0.5, 2.5, 1.0, 0.05).is_err());
        assert!(coverage_limit(0.5, 0.0, 0.0, 0.05).is_err());
    }

    #[test]
    fn centering_examples() {
        let s = site("uniform", 1.0);
        let c = clt_centering(&s, &[0.0; 4], &[0.5; 4], 1.0, 0.3, 0.3).unwrap();
        assert!(c.centering.abs() < 1e-15 && c.bias.abs() < 1e-15);
        let c0 = clt_centering(&s, &[0.5], &[1.0], 1.0, 0.0, 0.3).unwrap();
        assert!((c0.centering - phi1(&s, 0.5, 1.0)).abs() < 1e-15);
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let mc = (0..MC_DRAWS)
            .map(|_| s.moments(0.5 + { let z: f64 = StandardNormal.sample(&mut rng); z }).mean)
            .sum::<f64>()
            / MC_DRAWS as f64;
        assert!((c0.centering - mc).abs() < 1e-3);
        assert!((c0.bias - (mc - 0.5)).abs() < 1e-3);
    }

    #[test]
    fn sparse_limit_examples() {
        let s = site("uniform", 1.0);
        let (m, v) = sparse_limit(&s, &PriorMeasure::rademacher(), 1.0, 3.0).unwrap();
        assert!(m.abs() < 1e-12);
        let (m0, v0) = sparse_limit(&s, &PriorMeasure::rademacher(), 1.0, 0.0).unwrap();
        assert_eq!(m0, 0.0);
        assert_eq!(v, v0);
        let (m1, _) = sparse_limit(&s, &PriorMeasure::point_mass(1.0).unwrap(), 1.0, 2.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(37);
        let mc = (0..MC_DRAWS)
            .map(|_| s.moments(1.0 + { let z: f64 = StandardNormal.sample(&mut rng); z }).mean)
            .sum::<f64>()
            / MC_DRAWS as f64;
        assert!((m1 - 2.0 * mc).abs() < 1e-3);
    }

    #[test]
    fn hermite_refinement_is_stable() {
        for truth in ["uniform", "half_spike_gaussian", "three_point", "gaussian"] {
            let s = site("uniform", 1.0);
            let law = TruthLaw::preset(truth).unwrap();
            let a = limit_integrals(&s, &law, 1.0).unwrap();
            let b = limit_integrals_refined(&s, &law, 1.0).unwrap();
            assert!((a.upsilon - b.upsilon).abs() < 1e-9, "{truth}");
            assert!((a.mean_cond_var - b.mean_cond_var).abs() < 1e-9, "{truth}");
            assert!((a.var_phi_minus_b - b.var_phi_minus_b).abs() < 1e-9, "{truth}");
            assert!((a.var_b_minus_psi - b.var_b_minus_psi).abs() < 1e-9, "{truth}");
        }
    }

    #[test]
    fn positivity_for_non_gaussian_presets() {
        for prior in ["uniform", "rademacher", "three_point"] {
            for truth in ["uniform", "half_spike_gaussian", "three_point", "rademacher"] {
                let s = site(prior, 1.0);
                let li = limit_integrals(&s, &TruthLaw::preset(truth).unwrap(), 1.0).unwrap();
                assert!(li.positivity_margin() > 0.0, "{prior}/{truth}");
            }
        }
    }
}
