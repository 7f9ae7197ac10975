//! Design matrices and the split gamma X'X / sigma^2 = Diag(d) - A.

use crate::error::{Error, Result};
use ndarray::{Array1, Array2, ArrayView1};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

/// Entry law for white-noise designs; every choice has mean 0 and variance 1 before the
/// 1/sqrt(n) scaling.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EntryDist {
    Gaussian,
    Rademacher,
    UniformScaled,
}

impl EntryDist {
    fn draw<R: Rng + ?Sized>(self, rng: &mut R) -> f64 {
        match self {
            EntryDist::Gaussian => StandardNormal.sample(rng),
            EntryDist::Rademacher => {
                if rng.random::<bool>() {
                    1.0
                } else {
                    -1.0
                }
            }
            EntryDist::UniformScaled => (2.0 * rng.random::<f64>() - 1.0) * 3f64.sqrt(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum XMatrix {
    /// n = p identity (Gaussian sequence model).
    Identity,
    /// Two-way layout with (p/2)^2 cells, entries 1/sqrt(p).
    Anova,
    Dense(Array2<f64>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DesignFamily {
    GaussianSequence,
    Anova,
    WhiteNoise,
    Matrix,
}

#[derive(Debug, Clone)]
pub struct DesignBundle {
    family: DesignFamily,
    x: XMatrix,
    n: usize,
    p: usize,
    sigma2: f64,
    gamma: f64,
    // sigma2 / gamma; every formula goes through this one number
    s_eff: f64,
    d: Vec<f64>,
    a: Array2<f64>,
}

impl DesignBundle {
    fn check_scale(sigma2: f64, gamma: f64) -> Result<f64> {
        if !(sigma2 > 0.0 && sigma2.is_finite()) {
            return Err(Error::InvalidDesign(format!("sigma2 = {sigma2}")));
        }
        if !(gamma > 0.0 && gamma.is_finite()) {
            return Err(Error::InvalidDesign(format!("gamma = {gamma}")));
        }
        Ok(sigma2 / gamma)
    }

    /// X = I_p.
    pub fn gaussian_sequence(p: usize, sigma2: f64, gamma: f64) -> Result<Self> {
        if p == 0 {
            return Err(Error::InvalidDesign("p must be >= 1".into()));
        }
        let s_eff = Self::check_scale(sigma2, gamma)?;
        Ok(DesignBundle {
            family: DesignFamily::GaussianSequence,
            x: XMatrix::Identity,
            n: p,
            p,
            sigma2,
            gamma,
            s_eff,
            d: vec![1.0 / s_eff; p],
            a: Array2::zeros((p, p)),
        })
    }

    /// Two-way ANOVA layout: row (j,k) has 1/sqrt(p) in column j and in column p/2 + k.
    pub fn anova(p: usize, sigma2: f64, gamma: f64) -> Result<Self> {
        if p < 2 || p % 2 == 1 {
            return Err(Error::InvalidDesign(format!("ANOVA needs even p >= 2, got {p}")));
        }
        let s_eff = Self::check_scale(sigma2, gamma)?;
        let h = p / 2;
        let off = -1.0 / (p as f64 * s_eff);
        let mut a = Array2::zeros((p, p));
        for i in 0..h {
            for j in h..p {
                a[[i, j]] = off;
                a[[j, i]] = off;
            }
        }
        Ok(DesignBundle {
            family: DesignFamily::Anova,
            x: XMatrix::Anova,
            n: h * h,
            p,
            sigma2,
            gamma,
            s_eff,
            d: vec![0.5 / s_eff; p],
            a,
        })
    }

    /// iid entries F / sqrt(n).
    pub fn white_noise<R: Rng + ?Sized>(
        n: usize,
        p: usize,
        dist: EntryDist,
        sigma2: f64,
        gamma: f64,
        rng: &mut R,
    ) -> Result<Self> {
        if n == 0 || p == 0 {
            return Err(Error::InvalidDesign("white-noise design needs n, p >= 1".into()));
        }
        let scale = 1.0 / (n as f64).sqrt();
        let x = Array2::from_shape_fn((n, p), |_| dist.draw(rng) * scale);
        let mut b = Self::from_matrix(x, sigma2, gamma)?;
        b.family = DesignFamily::WhiteNoise;
        Ok(b)
    }

    /// Arbitrary dense design.
    pub fn from_matrix(x: Array2<f64>, sigma2: f64, gamma: f64) -> Result<Self> {
        let s_eff = Self::check_scale(sigma2, gamma)?;
        let (n, p) = x.dim();
        if n == 0 || p == 0 {
            return Err(Error::InvalidDesign("empty matrix".into()));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidDesign("non-finite entry".into()));
        }
        let gram = x.t().dot(&x);
        let d: Vec<f64> = (0..p).map(|i| gram[[i, i]] / s_eff).collect();
        let mut a = gram.mapv(|g| -g / s_eff);
        for i in 0..p {
            a[[i, i]] = 0.0;
        }
        // exact symmetry regardless of summation order
        for i in 0..p {
            for j in 0..i {
                let v = a[[i, j]];
                a[[j, i]] = v;
            }
        }
        Ok(DesignBundle {
            family: DesignFamily::Matrix,
            x: XMatrix::Dense(x),
            n,
            p,
            sigma2,
            gamma,
            s_eff,
            d,
            a,
        })
    }

    pub fn family(&self) -> DesignFamily {
        self.family
    }
    pub fn x(&self) -> &XMatrix {
        &self.x
    }
    pub fn n(&self) -> usize {
        self.n
    }
    pub fn p(&self) -> usize {
        self.p
    }
    pub fn sigma2(&self) -> f64 {
        self.sigma2
    }
    pub fn gamma(&self) -> f64 {
        self.gamma
    }
    /// sigma^2 / gamma.
    pub fn effective_sigma2(&self) -> f64 {
        self.s_eff
    }
    pub fn d(&self) -> &[f64] {
        &self.d
    }
    pub fn a(&self) -> &Array2<f64> {
        &self.a
    }

    /// Returns a copy with A multiplied by `factor` (d and X untouched).
    pub fn with_scaled_coupling(&self, factor: f64) -> Self {
        let mut b = self.clone();
        b.a.mapv_inplace(|v| v * factor);
        b
    }

    /// Reference diagonal: gamma/sigma^2 for identity and white-noise designs,
    /// 1/(2 sigma^2/gamma) for ANOVA, median(d) otherwise.
    pub fn d0(&self) -> f64 {
        match self.family {
            DesignFamily::GaussianSequence | DesignFamily::WhiteNoise => 1.0 / self.s_eff,
            DesignFamily::Anova => 0.5 / self.s_eff,
            DesignFamily::Matrix => median(&self.d),
        }
    }

    /// X beta.
    pub fn x_mul(&self, beta: &[f64]) -> Result<Vec<f64>> {
        if beta.len() != self.p {
            return Err(Error::Dimension(format!("beta has {} entries, p = {}", beta.len(), self.p)));
        }
        Ok(match &self.x {
            XMatrix::Identity => beta.to_vec(),
            XMatrix::Anova => {
                let h = self.p / 2;
                let s = 1.0 / (self.p as f64).sqrt();
                let mut y = Vec::with_capacity(h * h);
                for j in 0..h {
                    for k in 0..h {
                        y.push((beta[j] + beta[h + k]) * s);
                    }
                }
                y
            }
            XMatrix::Dense(x) => x.dot(&ArrayView1::from(beta)).to_vec(),
        })
    }

    /// X' y.
    pub fn xt_mul(&self, y: &[f64]) -> Result<Vec<f64>> {
        if y.len() != self.n {
            return Err(Error::Dimension(format!("y has {} entries, n = {}", y.len(), self.n)));
        }
        Ok(match &self.x {
            XMatrix::Identity => y.to_vec(),
            XMatrix::Anova => {
                let h = self.p / 2;
                let s = 1.0 / (self.p as f64).sqrt();
                let mut out = vec![0.0; self.p];
                for j in 0..h {
                    for k in 0..h {
                        let v = y[j * h + k];
                        out[j] += v;
                        out[h + k] += v;
                    }
                }
                out.iter_mut().for_each(|v| *v *= s);
                out
            }
            XMatrix::Dense(x) => x.t().dot(&ArrayView1::from(y)).to_vec(),
        })
    }

    /// A v.
    pub fn a_mul(&self, v: &[f64]) -> Vec<f64> {
        self.a.dot(&ArrayView1::from(v)).to_vec()
    }

    /// Dense copy of X (materialises structured designs).
    pub fn dense_x(&self) -> Array2<f64> {
        match &self.x {
            XMatrix::Dense(x) => x.clone(),
            XMatrix::Identity => Array2::eye(self.p),
            XMatrix::Anova => {
                let h = self.p / 2;
                let s = 1.0 / (self.p as f64).sqrt();
                let mut x = Array2::zeros((h * h, self.p));
                for j in 0..h {
                    for k in 0..h {
                        x[[j * h + k, j]] = s;
                        x[[j * h + k, h + k]] = s;
                    }
                }
                x
            }
        }
    }

    /// ||A q - lambda q||_2 and ||q||_inf.
    pub fn eigenpair_residual(&self, q: &[f64], lambda_p: f64) -> Result<(f64, f64)> {
        check_unit(q)?;
        if q.len() != self.p {
            return Err(Error::Dimension(format!("q has {} entries, p = {}", q.len(), self.p)));
        }
        let aq = self.a_mul(q);
        let res = aq
            .iter()
            .zip(q)
            .map(|(a, qi)| (a - lambda_p * qi).powi(2))
            .sum::<f64>()
            .sqrt();
        let qinf = q.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        Ok((res, qinf))
    }

    /// Rayleigh quotient q'Aq.
    pub fn rayleigh(&self, q: &[f64]) -> f64 {
        let aq = self.a_mul(q);
        aq.iter().zip(q).map(|(a, b)| a * b).sum::<f64>() / q.iter().map(|v| v * v).sum::<f64>()
    }

    pub fn diagnostics(&self, power_iters: usize, tol: f64) -> DesignDiagnostics {
        diagnostics(self, power_iters, tol)
    }
}

pub(crate) fn check_unit(q: &[f64]) -> Result<()> {
    let norm = q.iter().map(|v| v * v).sum::<f64>().sqrt();
    if (norm - 1.0).abs() > 1e-10 {
        return Err(Error::NotUnit(norm));
    }
    Ok(())
}

fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let m = s.len() / 2;
    if s.len() % 2 == 1 {
        s[m]
    } else {
        0.5 * (s[m - 1] + s[m])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DesignDiagnostics {
    pub alpha_p: f64,
    pub norm2: f64,
    pub norm_inf: f64,
    pub norm4_lower: f64,
    pub norm4_upper: f64,
    pub d0: f64,
    pub homogeneity: f64,
    pub d_min_observed: f64,
    pub power_converged: bool,
    pub warning: Option<String>,
}

impl DesignDiagnostics {
    /// Flat key-value listing for reports.
    pub fn to_kv(&self) -> Vec<(&'static str, String)> {
        vec![
            ("alpha_p", format!("{:.12e}", self.alpha_p)),
            ("norm2", format!("{:.12e}", self.norm2)),
            ("norm_inf", format!("{:.12e}", self.norm_inf)),
            ("norm4_lower", format!("{:.12e}", self.norm4_lower)),
            ("norm4_upper", format!("{:.12e}", self.norm4_upper)),
            ("d0", format!("{:.12e}", self.d0)),
            ("homogeneity", format!("{:.12e}", self.homogeneity)),
            ("d_min_observed", format!("{:.12e}", self.d_min_observed)),
            ("power_converged", self.power_converged.to_string()),
            ("warning", self.warning.clone().unwrap_or_default()),
        ]
    }
}

const POWER_SEED: u64 = 0x5eed_a11ce;

fn diagnostics(b: &DesignBundle, power_iters: usize, tol: f64) -> DesignDiagnostics {
    let a = &b.a;
    let p = b.p;
    let mut alpha_p = 0.0_f64;
    let mut norm_inf = 0.0_f64;
    for row in a.rows() {
        alpha_p = alpha_p.max(row.iter().map(|v| v * v).sum());
        norm_inf = norm_inf.max(row.iter().map(|v| v.abs()).sum());
    }
    let (norm2, v2, power_converged) = spectral_norm(a, power_iters, tol);

    // Boyd's l4 power method from several starts; every iterate is a lower bound.
    let mut boyd = 0.0_f64;
    let mut starts = vec![vec![1.0; p], v2];
    let mut rng = ChaCha8Rng::seed_from_u64(POWER_SEED ^ 0x4);
    starts.push((0..p).map(|_| StandardNormal.sample(&mut rng)).collect());
    for s in starts {
        boyd = boyd.max(boyd_l4(a, s, power_iters, tol));
    }
    let norm4_lower = boyd.max(norm2);
    let norm4_upper = norm_inf.min((norm2 * norm_inf).sqrt()).max(norm4_lower.min(norm_inf));

    let d0 = b.d0();
    let homogeneity = b.d.iter().map(|di| (di - d0).powi(2)).sum();
    let d_min_observed = b.d.iter().cloned().fold(f64::INFINITY, f64::min);
    DesignDiagnostics {
        alpha_p,
        norm2,
        norm_inf,
        norm4_lower,
        norm4_upper,
        d0,
        homogeneity,
        d_min_observed,
        power_converged,
        warning: (!power_converged)
            .then(|| format!("power iteration not converged after {power_iters} iterations")),
    }
}

/// Largest |eigenvalue| of a symmetric matrix by power iteration on A^2 (so that
/// eigenvalues +r and -r do not make the iterate oscillate). Returns the estimate, the
/// final unit vector and a convergence flag.
pub fn spectral_norm(a: &Array2<f64>, iters: usize, tol: f64) -> (f64, Vec<f64>, bool) {
    let p = a.nrows();
    let mut rng = ChaCha8Rng::seed_from_u64(POWER_SEED);
    let mut v: Array1<f64> = (0..p).map(|_| StandardNormal.sample(&mut rng)).collect();
    let nv = v.dot(&v).sqrt();
    v /= nv;
    let mut est = 0.0;
    for _ in 0..iters {
        let w = a.dot(&v);
        let lam2 = w.dot(&w);
        if lam2 == 0.0 {
            return (0.0, v.to_vec(), true);
        }
        let next = a.dot(&w);
        let nn = next.dot(&next).sqrt();
        let new_est = lam2.sqrt();
        if nn == 0.0 {
            return (new_est, v.to_vec(), true);
        }
        v = next / nn;
        if (new_est - est).abs() <= tol * new_est.max(1e-300) {
            let w = a.dot(&v);
            return (w.dot(&w).sqrt().max(new_est), v.to_vec(), true);
        }
        est = new_est;
    }
    (est, v.to_vec(), false)
}

fn l4(v: &Array1<f64>) -> f64 {
    v.iter().map(|x| x.powi(4)).sum::<f64>().powf(0.25)
}

fn boyd_l4(a: &Array2<f64>, start: Vec<f64>, iters: usize, tol: f64) -> f64 {
    let mut x = Array1::from(start);
    let nx = l4(&x);
    if nx == 0.0 {
        return 0.0;
    }
    x /= nx;
    let mut best = 0.0_f64;
    let mut last = 0.0;
    for _ in 0..iters {
        let y = a.dot(&x);
        let est = l4(&y);
        best = best.max(est);
        if est == 0.0 {
            break;
        }
        let phi = y.mapv(|v| v.signum() * v.abs().powi(3));
        let z = a.t().dot(&phi);
        let nx = z.mapv(|v| v.signum() * v.abs().cbrt());
        let n4 = l4(&nx);
        if n4 == 0.0 {
            break;
        }
        x = nx / n4;
        if (est - last).abs() <= tol * est {
            break;
        }
        last = est;
    }
    best
}

/// Projection directions used throughout the experiments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
#[derive(Default)]
pub enum QSpec {
    /// 1_p / sqrt(p)
    #[default]
    Uniform,
    /// (1,...,1,-1,...,-1)/sqrt(p) (a zero in the middle when p is odd)
    Contrast,
    /// alternating signs inside each half, orthogonal to both the uniform and contrast vectors
    Alternating,
    /// e_i
    Coordinate { index: usize },
    /// read from a file with one number per line, normalised on load
    Custom { path: String },
}


impl QSpec {
    pub fn build(&self, p: usize) -> Result<Vec<f64>> {
        let mut q = match self {
            QSpec::Uniform => vec![1.0; p],
            QSpec::Contrast => {
                let h = p / 2;
                (0..p)
                    .map(|i| {
                        if i < h {
                            1.0
                        } else if i >= p - h {
                            -1.0
                        } else {
                            0.0
                        }
                    })
                    .collect()
            }
            QSpec::Alternating => {
                let h = p / 2;
                let mut q = vec![0.0; p];
                let m = h - h % 2;
                for i in 0..m {
                    let s = if i % 2 == 0 { 1.0 } else { -1.0 };
                    q[i] = s;
                    q[h + i] = s;
                }
                q
            }
            QSpec::Coordinate { index } => {
                if *index >= p {
                    return Err(Error::Config(format!("coordinate {index} >= p = {p}")));
                }
                let mut q = vec![0.0; p];
                q[*index] = 1.0;
                q
            }
            QSpec::Custom { path } => {
                let text = std::fs::read_to_string(path)?;
                let q: std::result::Result<Vec<f64>, _> = text
                    .split(|c: char| c == ',' || c.is_whitespace())
                    .filter(|s| !s.is_empty())
                    .map(|s| s.parse::<f64>())
                    .collect();
                let q = q.map_err(|e| Error::Config(format!("q file {path}: {e}")))?;
                if q.len() != p {
                    return Err(Error::Dimension(format!("q file has {} entries, p = {p}", q.len())));
                }
                q
            }
        };
        let norm = q.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Err(Error::Config(format!("projection {self:?} is zero for p = {p}")));
        }
        q.iter_mut().for_each(|v| *v /= norm);
        Ok(q)
    }

    pub fn label(&self) -> String {
        match self {
            QSpec::Uniform => "uniform".into(),
            QSpec::Contrast => "contrast".into(),
            QSpec::Alternating => "alternating".into(),
            QSpec::Coordinate { index } => format!("e{index}"),
            QSpec::Custom { .. } => "custom".into(),
        }
    }
}

/// Reads a dense matrix: first line `n,p`, then n rows of p comma-separated values.
pub fn read_matrix_csv(path: &Path) -> Result<Array2<f64>> {
    let f = std::fs::File::open(path)?;
    let mut lines = BufReader::new(f)
        .lines()
        .filter(|l| l.as_ref().map_or(true, |s| !s.trim().is_empty() && !s.starts_with('#')));
    let header = lines.next().ok_or_else(|| Error::Csv("empty file".into()))??;
    let dims: Vec<usize> = header
        .split(',')
        .map(|s| s.trim().parse::<usize>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| Error::Csv(format!("header `{header}`: {e}")))?;
    if dims.len() != 2 {
        return Err(Error::Csv(format!("header `{header}` must be `n,p`")));
    }
    let (n, p) = (dims[0], dims[1]);
    let mut data = Vec::with_capacity(n * p);
    for (r, line) in lines.enumerate() {
        let line = line?;
        let row: Vec<f64> = line
            .split(',')
            .map(|s| s.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Csv(format!("row {}: {e}", r + 1)))?;
        if row.len() != p {
            return Err(Error::Csv(format!("row {} has {} entries, expected {p}", r + 1, row.len())));
        }
        data.extend(row);
    }
    if data.len() != n * p {
        return Err(Error::Csv(format!("expected {n} rows, found {}", data.len() / p.max(1))));
    }
    Array2::from_shape_vec((n, p), data).map_err(|e| Error::Csv(e.to_string()))
}

pub fn write_matrix_csv(path: &Path, x: &Array2<f64>) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    let (n, p) = x.dim();
    writeln!(f, "{n},{p}")?;
    for row in x.rows() {
        let s: Vec<String> = row.iter().map(|v| format!("{v:e}")).collect();
        writeln!(f, "{}", s.join(","))?;
    }
    Ok(())
}
