//! Mean-field fixed point u_i = psi_i'((Au)_i + c_i) and the credible intervals built on it.

use crate::design::check_unit;
use crate::error::{Error, Result};
use crate::normal::two_sided_critical;
use crate::prior::TiltedSite;
use ndarray::{Array2, ArrayView1};
use serde::Serialize;

#[derive(Debug, Clone)]
pub struct SolverOptions {
    pub tol: f64,
    pub max_iter: usize,
    /// Weight on the previous iterate: u <- damping * u + (1 - damping) * psi'(Au + c).
    /// Zero is plain Picard iteration.
    pub damping: f64,
    /// Starting point; defaults to psi'(c).
    pub init: Option<Vec<f64>>,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions { tol: 1e-10, max_iter: 10_000, damping: 0.0, init: None }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MeanFieldSolution {
    pub u: Vec<f64>,
    pub s: Vec<f64>,
    pub theta: Vec<f64>,
    pub iterations: usize,
    pub residual: f64,
    /// l2 norm of each successive difference.
    pub step_history: Vec<f64>,
}

fn tilt_means(sites: &[TiltedSite], theta: &[f64]) -> Vec<f64> {
    sites.iter().zip(theta).map(|(s, t)| s.moments(*t).mean).collect()
}

fn matvec(a: &Array2<f64>, v: &[f64]) -> Vec<f64> {
    a.dot(&ArrayView1::from(v)).to_vec()
}

pub fn solve_fixed_point(
    sites: &[TiltedSite],
    a: &Array2<f64>,
    c: &[f64],
    opts: &SolverOptions,
) -> Result<MeanFieldSolution> {
    let p = sites.len();
    if c.len() != p || a.dim() != (p, p) {
        return Err(Error::Dimension(format!(
            "{} sites, field of length {}, A of shape {:?}",
            p,
            c.len(),
            a.dim()
        )));
    }
    if !(0.0..1.0).contains(&opts.damping) {
        return Err(Error::Config(format!("damping {} must lie in [0,1)", opts.damping)));
    }
    if let Some(t) = c.iter().find(|t| !t.is_finite()) {
        return Err(Error::Domain(format!("field entry {t}")));
    }
    let mut u = match &opts.init {
        Some(init) => {
            if init.len() != p {
                return Err(Error::Dimension("initial vector has wrong length".into()));
            }
            init.clone()
        }
        None => tilt_means(sites, c),
    };
    let w = opts.damping;
    let mut history = Vec::new();
    let mut residual = f64::INFINITY;
    for it in 1..=opts.max_iter {
        let s = matvec(a, &u);
        let theta: Vec<f64> = s.iter().zip(c).map(|(si, ci)| si + ci).collect();
        let fresh = tilt_means(sites, &theta);
        let mut sup = 0.0_f64;
        let mut l2 = 0.0;
        for i in 0..p {
            let next = if w == 0.0 { fresh[i] } else { w * u[i] + (1.0 - w) * fresh[i] };
            let diff = next - u[i];
            sup = sup.max(diff.abs());
            l2 += diff * diff;
            u[i] = next;
        }
        history.push(l2.sqrt());
        if sup < opts.tol {
            let s = matvec(a, &u);
            let theta: Vec<f64> = s.iter().zip(c).map(|(si, ci)| si + ci).collect();
            let check = tilt_means(sites, &theta);
            residual = u.iter().zip(&check).fold(0.0_f64, |m, (x, y)| m.max((x - y).abs()));
            if residual <= opts.tol {
                return Ok(MeanFieldSolution {
                    u,
                    s,
                    theta,
                    iterations: it,
                    residual,
                    step_history: history,
                });
            }
        }
    }
    if residual.is_infinite() {
        let s = matvec(a, &u);
        let theta: Vec<f64> = s.iter().zip(c).map(|(si, ci)| si + ci).collect();
        let check = tilt_means(sites, &theta);
        residual = u.iter().zip(&check).fold(0.0_f64, |m, (x, y)| m.max((x - y).abs()));
    }
    Err(Error::NotConverged { iterations: opts.max_iter, residual, last: u })
}

/// sum_i q_i^2 psi_i''(c_i).
pub fn upsilon_p(q: &[f64], sites: &[TiltedSite], c: &[f64]) -> Result<f64> {
    check_unit(q)?;
    if q.len() != sites.len() || c.len() != sites.len() {
        return Err(Error::Dimension("q, sites and c must have equal length".into()));
    }
    Ok(q.iter()
        .zip(sites)
        .zip(c)
        .map(|((qi, s), ci)| qi * qi * s.moments(*ci).var)
        .sum())
}

/// q'u.
pub fn mf_point_estimate(sol: &MeanFieldSolution, q: &[f64]) -> f64 {
    sol.u.iter().zip(q).map(|(a, b)| a * b).sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum IntervalKind {
    Exact,
    Nmf,
}

impl IntervalKind {
    pub fn as_str(self) -> &'static str {
        match self {
            IntervalKind::Exact => "exact",
            IntervalKind::Nmf => "nmf",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CredibleInterval {
    pub center: f64,
    pub half_width: f64,
    pub kind: IntervalKind,
    pub alpha: f64,
    pub lambda_p: Option<f64>,
}

impl CredibleInterval {
    pub fn lo(&self) -> f64 {
        self.center - self.half_width
    }
    pub fn hi(&self) -> f64 {
        self.center + self.half_width
    }
    pub fn contains(&self, x: f64) -> bool {
        (x - self.center).abs() <= self.half_width
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Domain(format!("alpha = {alpha}")));
    }
    Ok(())
}

/// center +- c_{alpha/2} sqrt(upsilon / (1 - lambda upsilon)).
pub fn exact_interval_at(center: f64, upsilon: f64, lambda_p: f64, alpha: f64) -> Result<CredibleInterval> {
    check_alpha(alpha)?;
    let lu = lambda_p * upsilon;
    if !(lu < 1.0) {
        return Err(Error::NonContractive(lu));
    }
    if !(upsilon > 0.0) {
        return Err(Error::Domain(format!("upsilon = {upsilon}")));
    }
    Ok(CredibleInterval {
        center,
        half_width: two_sided_critical(alpha) * (upsilon / (1.0 - lu)).sqrt(),
        kind: IntervalKind::Exact,
        alpha,
        lambda_p: Some(lambda_p),
    })
}

/// center +- c_{alpha/2} sqrt(upsilon).
pub fn nmf_interval_at(center: f64, upsilon: f64, alpha: f64) -> Result<CredibleInterval> {
    check_alpha(alpha)?;
    if !(upsilon > 0.0) {
        return Err(Error::Domain(format!("upsilon = {upsilon}")));
    }
    Ok(CredibleInterval {
        center,
        half_width: two_sided_critical(alpha) * upsilon.sqrt(),
        kind: IntervalKind::Nmf,
        alpha,
        lambda_p: None,
    })
}

pub fn exact_interval(
    sol: &MeanFieldSolution,
    q: &[f64],
    upsilon: f64,
    lambda_p: f64,
    alpha: f64,
) -> Result<CredibleInterval> {
    exact_interval_at(mf_point_estimate(sol, q), upsilon, lambda_p, alpha)
}

pub fn nmf_interval(sol: &MeanFieldSolution, q: &[f64], upsilon: f64, alpha: f64) -> Result<CredibleInterval> {
    nmf_interval_at(mf_point_estimate(sol, q), upsilon, alpha)
}
