//! Gaussian-approximation error terms, KS distances, exact small-p oracles and the
//! coverage Monte Carlo harness.

use crate::asymptotics::{limit_integrals, psi0_site};
use crate::design::{check_unit, DesignBundle};
use crate::error::{Error, Result};
use crate::meanfield::{
    exact_interval_at, mf_point_estimate, nmf_interval_at, solve_fixed_point, upsilon_p, MeanFieldSolution,
    SolverOptions,
};
use crate::model::{field, generate_y, Truth, TruthLaw};
use crate::normal::{cdf, two_sided_critical};
use crate::prior::{make_sites, PriorMeasure, TiltedSite};
use crate::seeds::{rng_for, stream};
use ndarray::{Array2, ArrayView1};
use rayon::prelude::*;
use serde::Serialize;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BerryEsseenReport {
    pub r1: f64,
    pub r2: f64,
    pub r3: f64,
    pub r4: f64,
    pub eps_norm: f64,
    #[serde(skip)]
    pub t: Vec<f64>,
    pub upsilon_p: f64,
    pub q_inf: f64,
    pub alpha_p: f64,
    /// Unit-constant sum of the error terms; a relative diagnostic, not a certified bound.
    pub bound_rhs: f64,
}

pub fn berry_esseen_terms(
    sites: &[TiltedSite],
    a: &Array2<f64>,
    c: &[f64],
    q: &[f64],
    lambda_p: f64,
) -> Result<BerryEsseenReport> {
    check_unit(q)?;
    let p = sites.len();
    if q.len() != p || c.len() != p || a.dim() != (p, p) {
        return Err(Error::Dimension("sites, A, c and q disagree in size".into()));
    }
    let ups = upsilon_p(q, sites, c)?;
    let moms: Vec<_> = sites.iter().zip(c).map(|(s, ci)| s.moments(*ci)).collect();
    let dpsi: Vec<f64> = moms.iter().map(|m| m.mean).collect();
    // v_j = q_j (psi_j''(c_j) - upsilon_p)
    let v: Vec<f64> = q.iter().zip(&moms).map(|(qj, m)| qj * (m.var - ups)).collect();
    let av = a.dot(&ArrayView1::from(&v[..]));
    let t = a.dot(&ArrayView1::from(&dpsi[..])).to_vec();
    let r1 = av.iter().map(|x| x * x).sum::<f64>();
    let r2 = t.iter().map(|x| x * x).sum::<f64>();
    let r3 = t.iter().map(|x| x.powi(4)).sum::<f64>();
    // sum_ij A_ij v_i psi_j' = v . t (A symmetric)
    let r4 = v.iter().zip(&t).map(|(vi, ti)| vi * ti).sum::<f64>().abs();
    let aq = a.dot(&ArrayView1::from(q));
    let eps_norm = aq
        .iter()
        .zip(q)
        .map(|(x, qi)| (x - lambda_p * qi).powi(2))
        .sum::<f64>()
        .sqrt();
    let q_inf = q.iter().fold(0.0_f64, |m, x| m.max(x.abs()));
    let alpha_p = a
        .rows()
        .into_iter()
        .map(|r| r.iter().map(|x| x * x).sum::<f64>())
        .fold(0.0, f64::max);
    let bound_rhs = r1.sqrt()
        + (alpha_p * r2).sqrt()
        + (r3.sqrt() + (p as f64).sqrt() * alpha_p + q_inf) / ups
        + eps_norm;
    Ok(BerryEsseenReport { r1, r2, r3, r4, eps_norm, t, upsilon_p: ups, q_inf, alpha_p, bound_rhs })
}

/// sup_t |F_n(t) - Phi((t - mean)/sd)|.
pub fn ks_distance(samples: &[f64], mean: f64, var: f64) -> Result<f64> {
    if samples.len() < 100 {
        return Err(Error::Domain(format!("KS needs >= 100 samples, got {}", samples.len())));
    }
    if !(var > 0.0) || !var.is_finite() || !mean.is_finite() {
        return Err(Error::Domain(format!("degenerate reference N({mean}, {var})")));
    }
    let mut s = samples.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len() as f64;
    let sd = var.sqrt();
    let mut d = 0.0_f64;
    let mut i = 0;
    while i < s.len() {
        // ties: jump over the whole block
        let mut j = i;
        while j + 1 < s.len() && s[j + 1] == s[i] {
            j += 1;
        }
        let f = cdf((s[i] - mean) / sd);
        d = d.max(f - i as f64 / n).max((j + 1) as f64 / n - f);
        i = j + 1;
    }
    Ok(d)
}

#[derive(Debug, Clone)]
pub struct SmallPOracle {
    pub log_z: f64,
    pub mean: Vec<f64>,
    pub cov: Array2<f64>,
    pub kl_qprod: f64,
    pub meanfield: MeanFieldSolution,
}

/// Exact posterior summaries for p <= 3 by tensor quadrature over each site's support.
/// log_z is the log normaliser of exp(b'Ab/2 + c'b) against prod mu_i.
pub fn small_p_oracle(sites: &[TiltedSite], a: &Array2<f64>, c: &[f64]) -> Result<SmallPOracle> {
    let p = sites.len();
    if p == 0 || p > 3 {
        return Err(Error::Dimension(format!("small-p oracle needs 1 <= p <= 3, got {p}")));
    }
    if c.len() != p || a.dim() != (p, p) {
        return Err(Error::Dimension("sites, A and c disagree in size".into()));
    }
    let supports: Vec<(&[f64], &[f64])> = sites.iter().map(|s| s.support()).collect();
    let dims: Vec<usize> = supports.iter().map(|s| s.0.len()).collect();
    let total: usize = dims.iter().product();
    let energy = |idx: &[usize]| -> (f64, [f64; 3]) {
        let mut b = [0.0; 3];
        let mut lw = 0.0;
        for k in 0..p {
            b[k] = supports[k].0[idx[k]];
            lw += supports[k].1[idx[k]];
        }
        let mut e = 0.0;
        for i in 0..p {
            e += c[i] * b[i];
            for j in 0..i {
                e += a[[i, j]] * b[i] * b[j];
            }
        }
        (lw + e, b)
    };
    let unravel = |mut flat: usize| -> [usize; 3] {
        let mut idx = [0usize; 3];
        for k in (0..p).rev() {
            idx[k] = flat % dims[k];
            flat /= dims[k];
        }
        idx
    };
    let mut mx = f64::NEG_INFINITY;
    for f in 0..total {
        mx = mx.max(energy(&unravel(f)[..p]).0);
    }
    let mut z = 0.0;
    let mut m1 = [0.0; 3];
    let mut m2 = [[0.0; 3]; 3];
    for f in 0..total {
        let (e, b) = energy(&unravel(f)[..p]);
        let w = (e - mx).exp();
        z += w;
        for i in 0..p {
            m1[i] += w * b[i];
            for j in 0..p {
                m2[i][j] += w * b[i] * b[j];
            }
        }
    }
    let log_z = mx + z.ln();
    let mean: Vec<f64> = (0..p).map(|i| m1[i] / z).collect();
    let cov = Array2::from_shape_fn((p, p), |(i, j)| m2[i][j] / z - mean[i] * mean[j]);

    let mf = solve_fixed_point(sites, a, c, &SolverOptions::default())?;
    // E_Q log dQ/dnu = sum_i (theta_i u_i - psi_i(theta_i)) - (u'Au/2 + c'u) + log Z
    let mut kl = log_z;
    for i in 0..p {
        let m = sites[i].moments(mf.theta[i]);
        kl += mf.theta[i] * mf.u[i] - m.psi - c[i] * mf.u[i];
        for j in 0..i {
            kl -= a[[i, j]] * mf.u[i] * mf.u[j];
        }
    }
    Ok(SmallPOracle { log_z, mean, cov, kl_qprod: kl.max(0.0), meanfield: mf })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CoverageReport {
    pub n_reps: usize,
    pub hits: usize,
    pub failures: usize,
    pub estimate: f64,
    pub wilson_lo: f64,
    pub wilson_hi: f64,
    pub theory: f64,
}

/// 95% Wilson score interval for `hits` out of `n`.
pub fn wilson_interval(hits: usize, n: usize) -> (f64, f64) {
    if n == 0 {
        return (0.0, 1.0);
    }
    let z = two_sided_critical(0.05);
    let nf = n as f64;
    let ph = hits as f64 / nf;
    let denom = 1.0 + z * z / nf;
    let center = (ph + z * z / (2.0 * nf)) / denom;
    let half = z / denom * (ph * (1.0 - ph) / nf + z * z / (4.0 * nf * nf)).sqrt();
    ((center - half).max(0.0), (center + half).min(1.0))
}

impl CoverageReport {
    fn new(n_reps: usize, hits: usize, failures: usize, theory: f64) -> Self {
        let ok = n_reps - failures;
        let (lo, hi) = wilson_interval(hits, ok);
        CoverageReport {
            n_reps,
            hits,
            failures,
            estimate: if ok > 0 { hits as f64 / ok as f64 } else { f64::NAN },
            wilson_lo: lo,
            wilson_hi: hi,
            theory,
        }
    }
}

/// Everything a coverage study needs; the design is held fixed across replications.
#[derive(Debug, Clone)]
pub struct CoverageSetup {
    pub design: DesignBundle,
    pub prior: PriorMeasure,
    pub truth: Truth,
    pub q: Vec<f64>,
    /// Defaults to the Rayleigh quotient q'Aq.
    pub lambda_p: Option<f64>,
    pub alpha: f64,
    /// Defaults to the design's sigma^2.
    pub sigma2_true: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CoverageOutcome {
    pub lambda_p: f64,
    pub exact: CoverageReport,
    pub nmf: CoverageReport,
}

/// Per-replication record, exposed for tests and CSV export.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Replication {
    pub target: f64,
    pub center: f64,
    pub upsilon_p: f64,
    pub hit_exact: bool,
    pub hit_nmf: bool,
}

pub fn coverage_replication(setup: &CoverageSetup, sites: &[TiltedSite], lambda_p: f64, seed: u64, rep: u64) -> Result<Replication> {
    let mut rng = rng_for(seed, stream::REPLICATION, rep);
    let b = &setup.design;
    let beta = setup.truth.draw(b.p(), &mut rng)?;
    let y = generate_y(b, &beta, setup.sigma2_true.unwrap_or(b.sigma2()), &mut rng)?;
    let c = field(b, &y)?;
    let sol = solve_fixed_point(sites, b.a(), &c, &SolverOptions::default())?;
    let ups = upsilon_p(&setup.q, sites, &c)?;
    let center = mf_point_estimate(&sol, &setup.q);
    let target: f64 = beta.iter().zip(&setup.q).map(|(x, y)| x * y).sum();
    let ex = exact_interval_at(center, ups, lambda_p, setup.alpha)?;
    let nm = nmf_interval_at(center, ups, setup.alpha)?;
    Ok(Replication { target, center, upsilon_p: ups, hit_exact: ex.contains(target), hit_nmf: nm.contains(target) })
}

/// Limiting coverage (exact, nmf) for an iid truth; NaN when no limit applies.
pub fn coverage_theory(setup: &CoverageSetup, lambda: f64) -> (f64, f64) {
    let law: TruthLaw = match &setup.truth {
        Truth::Iid(l) => l.clone(),
        _ => return (f64::NAN, f64::NAN),
    };
    let d0 = setup.design.d0();
    let result = psi0_site(&setup.prior, d0)
        .and_then(|s| limit_integrals(&s, &law, d0))
        .and_then(|li| li.constants(lambda, setup.alpha));
    match result {
        Ok(c) => (c.coverage_limit, c.nmf_coverage_limit),
        Err(_) => (f64::NAN, f64::NAN),
    }
}

/// Runs `n_reps` replications in parallel; each replication owns a derived seed.
pub fn coverage_mc(setup: &CoverageSetup, n_reps: usize, seed: u64) -> Result<CoverageOutcome> {
    check_unit(&setup.q)?;
    let sites = make_sites(&setup.prior, setup.design.d())?;
    let lambda_p = setup.lambda_p.unwrap_or_else(|| setup.design.rayleigh(&setup.q));
    let results: Vec<Option<Replication>> = (0..n_reps as u64)
        .into_par_iter()
        .map(|r| coverage_replication(setup, &sites, lambda_p, seed, r).ok())
        .collect();
    let failures = results.iter().filter(|r| r.is_none()).count();
    let hits_exact = results.iter().flatten().filter(|r| r.hit_exact).count();
    let hits_nmf = results.iter().flatten().filter(|r| r.hit_nmf).count();
    let (th_exact, th_nmf) = coverage_theory(setup, lambda_p);
    Ok(CoverageOutcome {
        lambda_p,
        exact: CoverageReport::new(n_reps, hits_exact, failures, th_exact),
        nmf: CoverageReport::new(n_reps, hits_nmf, failures, th_nmf),
    })
}
