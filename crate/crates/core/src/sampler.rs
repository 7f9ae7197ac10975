//! Single-site Gibbs sampler for nu(beta) ∝ exp(beta'A beta / 2 + c'beta) prod mu_i(beta_i).
//!
//! Each conditional is the tilt mu_{i, m_i + c_i} with local field m = A beta, so every
//! update is an exact draw and the chain needs no tuning.

use crate::error::{Error, Result};
use crate::prior::TiltedSite;
use ndarray::{Array2, ArrayView1};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Sweep {
    #[default]
    Sequential,
    RandomScan,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ChainConfig {
    pub burn_in: usize,
    pub n_samples: usize,
    pub thin: usize,
    pub sweep: Sweep,
    pub seed: u64,
    /// Also record the conditional means psi_i'(m_i + c_i) at every kept draw.
    pub rao_blackwell: bool,
}

impl Default for ChainConfig {
    fn default() -> Self {
        ChainConfig {
            burn_in: 500,
            n_samples: 10_000,
            thin: 5,
            sweep: Sweep::Sequential,
            seed: 0,
            rao_blackwell: false,
        }
    }
}

impl ChainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_samples == 0 {
            return Err(Error::Config("n_samples must be >= 1".into()));
        }
        if self.thin == 0 {
            return Err(Error::Config("thin must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct PosteriorSampleSet {
    /// n_samples x p
    pub draws: Array2<f64>,
    /// Conditional means at each kept draw, when requested.
    pub cond_means: Option<Array2<f64>>,
    pub config: ChainConfig,
    /// Always one: conditionals are sampled exactly.
    pub acceptance: f64,
}

const REFRESH_EVERY: usize = 100;

/// Gibbs state: beta plus its local fields m = A beta.
pub struct GibbsState {
    pub beta: Vec<f64>,
    pub m: Vec<f64>,
    buf: Vec<f64>,
}

impl GibbsState {
    pub fn new(a: &Array2<f64>, beta: Vec<f64>) -> Self {
        let m = a.dot(&ArrayView1::from(&beta[..])).to_vec();
        GibbsState { beta, m, buf: Vec::new() }
    }

    /// Recomputes m from scratch.
    pub fn refresh(&mut self, a: &Array2<f64>) {
        self.m = a.dot(&ArrayView1::from(&self.beta[..])).to_vec();
    }

    fn update_site<R: Rng + ?Sized>(
        &mut self,
        i: usize,
        sites: &[TiltedSite],
        a: &Array2<f64>,
        c: &[f64],
        rng: &mut R,
    ) {
        let theta = self.m[i] + c[i];
        let new = sites[i].sample_with(theta, rng, &mut self.buf);
        let delta = new - self.beta[i];
        if delta != 0.0 {
            self.beta[i] = new;
            let col = a.column(i);
            for (mj, aji) in self.m.iter_mut().zip(col.iter()) {
                *mj += aji * delta;
            }
        }
    }
}

/// One sweep over all coordinates.
pub fn gibbs_sweep<R: Rng + ?Sized>(
    state: &mut GibbsState,
    sites: &[TiltedSite],
    a: &Array2<f64>,
    c: &[f64],
    sweep: Sweep,
    rng: &mut R,
) {
    let p = sites.len();
    match sweep {
        Sweep::Sequential => {
            for i in 0..p {
                state.update_site(i, sites, a, c, rng);
            }
        }
        Sweep::RandomScan => {
            for _ in 0..p {
                let i = rng.random_range(0..p);
                state.update_site(i, sites, a, c, rng);
            }
        }
    }
}

pub fn run_chain(sites: &[TiltedSite], a: &Array2<f64>, c: &[f64], cfg: &ChainConfig) -> Result<PosteriorSampleSet> {
    run_chain_from(sites, a, c, cfg, vec![0.0; sites.len()])
}

/// Runs a chain started at `init`.
pub fn run_chain_from(
    sites: &[TiltedSite],
    a: &Array2<f64>,
    c: &[f64],
    cfg: &ChainConfig,
    init: Vec<f64>,
) -> Result<PosteriorSampleSet> {
    cfg.validate()?;
    let p = sites.len();
    if c.len() != p || a.dim() != (p, p) || init.len() != p {
        return Err(Error::Dimension("sites, A, c and init disagree in size".into()));
    }
    if init.iter().any(|v| !(v.abs() <= 1.0)) {
        return Err(Error::Domain("initial state outside [-1,1]".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut state = GibbsState::new(a, init);
    let mut draws = Array2::zeros((cfg.n_samples, p));
    let mut cond = cfg.rao_blackwell.then(|| Array2::zeros((cfg.n_samples, p)));
    let total = cfg.burn_in + cfg.n_samples * cfg.thin;
    let mut kept = 0;
    for sweep_no in 1..=total {
        gibbs_sweep(&mut state, sites, a, c, cfg.sweep, &mut rng);
        if sweep_no % REFRESH_EVERY == 0 {
            state.refresh(a);
        }
        if sweep_no > cfg.burn_in && (sweep_no - cfg.burn_in).is_multiple_of(cfg.thin) {
            draws.row_mut(kept).assign(&ArrayView1::from(&state.beta[..]));
            if let Some(cm) = cond.as_mut() {
                for i in 0..p {
                    cm[[kept, i]] = sites[i].moments(state.m[i] + c[i]).mean;
                }
            }
            kept += 1;
        }
    }
    Ok(PosteriorSampleSet { draws, cond_means: cond, config: cfg.clone(), acceptance: 1.0 })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionEstimate {
    /// Posterior mean of q'beta (Rao-Blackwellised when conditional means were stored).
    pub mean: f64,
    /// Posterior variance of q'beta from the raw draws.
    pub var: f64,
    pub draws: Vec<f64>,
    /// Batch-means effective sample size of the raw projections.
    pub ess: f64,
    /// Monte Carlo standard error of `mean`.
    pub mc_se: f64,
    /// Monte Carlo standard error of `var`.
    pub var_mc_se: f64,
}

/// Batch-means standard error of the mean of a series.
pub fn batch_means_se(x: &[f64]) -> f64 {
    let n = x.len();
    if n < 4 {
        return f64::NAN;
    }
    let b = (n as f64).sqrt().floor() as usize;
    let size = n / b;
    let means: Vec<f64> = (0..b)
        .map(|k| x[k * size..(k + 1) * size].iter().sum::<f64>() / size as f64)
        .collect();
    let grand = means.iter().sum::<f64>() / b as f64;
    let var_bm = means.iter().map(|m| (m - grand).powi(2)).sum::<f64>() / (b - 1) as f64;
    (var_bm / b as f64).sqrt()
}

pub fn estimate_projection(samples: &PosteriorSampleSet, q: &[f64]) -> Result<ProjectionEstimate> {
    crate::design::check_unit(q)?;
    let q = ArrayView1::from(q);
    if q.len() != samples.draws.ncols() {
        return Err(Error::Dimension("q length differs from p".into()));
    }
    let draws = samples.draws.dot(&q).to_vec();
    let n = draws.len() as f64;
    let raw_mean = draws.iter().sum::<f64>() / n;
    let var = draws.iter().map(|t| (t - raw_mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    let raw_se = batch_means_se(&draws);
    let ess = if raw_se > 0.0 { var / (raw_se * raw_se) } else { n };
    let sq: Vec<f64> = draws.iter().map(|t| (t - raw_mean).powi(2)).collect();
    let var_mc_se = batch_means_se(&sq);
    let (mean, mc_se) = match &samples.cond_means {
        Some(cm) => {
            let rb = cm.dot(&q).to_vec();
            (rb.iter().sum::<f64>() / n, batch_means_se(&rb))
        }
        None => (raw_mean, raw_se),
    };
    Ok(ProjectionEstimate { mean, var, draws, ess, mc_se, var_mc_se })
}
