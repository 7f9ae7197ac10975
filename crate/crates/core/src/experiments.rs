//! Config-driven experiment runners. Every runner returns typed results plus CSV tables;
//! `execute` writes the tables and a `run.json` echo of the resolved config.

use crate::asymptotics::{limit_integrals, psi0_site, sparse_limit};
use crate::design::{read_matrix_csv, DesignBundle, DesignDiagnostics, EntryDist, QSpec};
use crate::diagnostics::{
    berry_esseen_terms, coverage_mc, ks_distance, BerryEsseenReport, CoverageOutcome, CoverageSetup,
};
use crate::error::{Error, Result};
use crate::meanfield::{mf_point_estimate, solve_fixed_point, upsilon_p, SolverOptions};
use crate::model::{field, generate_y, Truth, TruthConfig, TruthKind, TruthLaw};
use crate::prior::{make_sites, PriorSpec};
use crate::sampler::{estimate_projection, run_chain_from, ChainConfig};
use crate::seeds::{derive_seed, rng_for, stream};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

/// Largest p accepted from a config.
pub const MAX_P: usize = 1000;
/// Largest n accepted from a config.
pub const MAX_N: usize = 200_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    Figure1,
    CltWhitenoise,
    CltGeneral,
    CoverageMc,
    VarianceOrder,
    SparseThreshold,
    Diagnose,
}

impl ExperimentKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ExperimentKind::Figure1 => "figure1",
            ExperimentKind::CltWhitenoise => "clt_whitenoise",
            ExperimentKind::CltGeneral => "clt_general",
            ExperimentKind::CoverageMc => "coverage_mc",
            ExperimentKind::VarianceOrder => "variance_order",
            ExperimentKind::SparseThreshold => "sparse_threshold",
            ExperimentKind::Diagnose => "diagnose",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DesignKind {
    GaussianSequence,
    Anova,
    WhiteNoise,
    Matrix,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DesignSpec {
    pub kind: DesignKind,
    pub n: Option<usize>,
    pub p: usize,
    pub sigma2: f64,
    pub gamma: f64,
    pub dist: EntryDist,
    /// CSV matrix for `matrix` designs.
    pub path: Option<String>,
}

impl Default for DesignSpec {
    fn default() -> Self {
        DesignSpec {
            kind: DesignKind::GaussianSequence,
            n: None,
            p: 100,
            sigma2: 1.0,
            gamma: 1.0,
            dist: EntryDist::Gaussian,
            path: None,
        }
    }
}

impl DesignKind {
    pub fn as_str(self) -> &'static str {
        match self {
            DesignKind::GaussianSequence => "gaussian_sequence",
            DesignKind::Anova => "anova",
            DesignKind::WhiteNoise => "white_noise",
            DesignKind::Matrix => "matrix",
        }
    }
}

impl DesignSpec {
    pub fn build(&self, seed: u64) -> Result<DesignBundle> {
        match self.kind {
            DesignKind::GaussianSequence => DesignBundle::gaussian_sequence(self.p, self.sigma2, self.gamma),
            DesignKind::Anova => DesignBundle::anova(self.p, self.sigma2, self.gamma),
            DesignKind::WhiteNoise => {
                let n = self.n.ok_or_else(|| Error::Config("white_noise design needs n".into()))?;
                let mut rng = rng_for(seed, stream::DESIGN, 0);
                DesignBundle::white_noise(n, self.p, self.dist, self.sigma2, self.gamma, &mut rng)
            }
            DesignKind::Matrix => {
                let path = self.path.as_ref().ok_or_else(|| Error::Config("matrix design needs path".into()))?;
                let x = read_matrix_csv(Path::new(path))?;
                DesignBundle::from_matrix(x, self.sigma2, self.gamma)
            }
        }
    }

    fn validate(&self) -> Result<()> {
        if self.kind != DesignKind::Matrix && (self.p == 0 || self.p > MAX_P) {
            return Err(Error::Config(format!("p = {} outside 1..={MAX_P}", self.p)));
        }
        if let Some(n) = self.n {
            if n == 0 || n > MAX_N {
                return Err(Error::Config(format!("n = {n} outside 1..={MAX_N}")));
            }
        }
        if let Some(path) = &self.path {
            if !Path::new(path).exists() {
                return Err(Error::Config(format!("design file {path} does not exist")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SeedConfig {
    pub base: u64,
    /// Monte Carlo replications (coverage, sparse threshold, figure-1 overlay).
    pub replications: usize,
}

impl Default for SeedConfig {
    fn default() -> Self {
        SeedConfig { base: 0, replications: 2000 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Figure1Options {
    pub truths: Vec<String>,
    /// Dimension of the Gaussian-sequence Monte Carlo overlay; 0 disables it.
    pub mc_p: usize,
}

impl Default for Figure1Options {
    fn default() -> Self {
        Figure1Options {
            truths: vec!["uniform".into(), "half_spike_gaussian".into(), "three_point".into()],
            mc_p: 200,
        }
    }
}

fn default_truth() -> TruthConfig {
    TruthConfig::iid("uniform")
}
fn default_alpha() -> f64 {
    0.05
}
fn default_rho() -> f64 {
    0.99
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub experiment: Option<ExperimentKind>,
    #[serde(default)]
    pub prior: PriorSpec,
    #[serde(default = "default_truth")]
    pub truth: TruthConfig,
    #[serde(default)]
    pub design: DesignSpec,
    #[serde(default)]
    pub q: QSpec,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    /// Explicit lambda grid for figure1.
    #[serde(default)]
    pub lambda_grid: Option<Vec<f64>>,
    /// Override for lambda_p (otherwise q'Aq, or 0 for clt_whitenoise).
    #[serde(default)]
    pub lambda_p: Option<f64>,
    #[serde(default)]
    pub seeds: SeedConfig,
    #[serde(default)]
    pub chain: ChainConfig,
    #[serde(default)]
    pub output_dir: Option<String>,
    #[serde(default)]
    pub figure1: Figure1Options,
    /// High-temperature threshold for diagnose.
    #[serde(default = "default_rho")]
    pub rho: f64,
    /// Response vector for diagnose (one value per line); generated from `truth` if absent.
    #[serde(default)]
    pub y_path: Option<String>,
}

impl ExperimentConfig {
    pub fn new(kind: ExperimentKind) -> Self {
        ExperimentConfig {
            experiment: Some(kind),
            prior: PriorSpec::default(),
            truth: default_truth(),
            design: DesignSpec::default(),
            q: QSpec::default(),
            alpha: 0.05,
            lambda_grid: None,
            lambda_p: None,
            seeds: SeedConfig::default(),
            chain: ChainConfig::default(),
            output_dir: None,
            figure1: Figure1Options::default(),
            rho: 0.99,
            y_path: None,
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn kind(&self) -> Result<ExperimentKind> {
        self.experiment.ok_or_else(|| Error::Config("no experiment given".into()))
    }

    /// Fills in the experiment name, seed and output directory, then validates.
    pub fn resolve(mut self, kind: ExperimentKind, seed: Option<u64>, out: Option<String>) -> Result<Self> {
        if let Some(k) = self.experiment {
            if k != kind {
                return Err(Error::Config(format!(
                    "config is for `{}` but `{}` was requested",
                    k.as_str(),
                    kind.as_str()
                )));
            }
        }
        self.experiment = Some(kind);
        if let Some(s) = seed {
            self.seeds.base = s;
        }
        self.chain.seed = self.seeds.base;
        if out.is_some() {
            self.output_dir = out;
        }
        if self.output_dir.is_none() {
            self.output_dir = Some("out".into());
        }
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        self.design.validate()?;
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::Config(format!("alpha = {} outside (0,1)", self.alpha)));
        }
        if let QSpec::Custom { path } = &self.q {
            if !Path::new(path).exists() {
                return Err(Error::Config(format!("q file {path} does not exist")));
            }
        }
        if let Some(path) = &self.y_path {
            if !Path::new(path).exists() {
                return Err(Error::Config(format!("y file {path} does not exist")));
            }
        }
        self.chain.validate()?;
        Ok(())
    }

    /// Hex SHA-256 of the canonical JSON form. The output directory is left out so the
    /// same run written to two places gives identical files.
    pub fn hash(&self) -> String {
        let bare = ExperimentConfig { output_dir: None, ..self.clone() };
        let text = serde_json::to_string(&bare).expect("config serialises");
        hex::encode(Sha256::digest(text.as_bytes()))
    }

    fn sigma2_true(&self) -> Option<f64> {
        self.truth.sigma2_true
    }
}

/// A named CSV table.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub name: String,
    pub header: Vec<&'static str>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    fn new(name: &str, header: Vec<&'static str>) -> Self {
        Table { name: name.into(), header, rows: Vec::new() }
    }

    fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn render(&self, config_hash: &str, seed: u64) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "# config_hash={config_hash},seed={seed}");
        let _ = writeln!(s, "{}", self.header.join(","));
        for r in &self.rows {
            let _ = writeln!(s, "{}", r.join(","));
        }
        s
    }

    pub fn column(&self, name: &str) -> Option<Vec<&str>> {
        let k = self.header.iter().position(|h| *h == name)?;
        Some(self.rows.iter().map(|r| r[k].as_str()).collect())
    }
}

fn f(x: f64) -> String {
    format!("{x}")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Pass,
    Warn,
    Fail,
}

impl Status {
    pub fn as_str(self) -> &'static str {
        match self {
            Status::Pass => "PASS",
            Status::Warn => "WARN",
            Status::Fail => "FAIL",
        }
    }
}

#[derive(Debug, Clone)]
pub struct Outcome {
    pub tables: Vec<Table>,
    pub warnings: Vec<String>,
    pub assumption_failure: bool,
}

// ---------------------------------------------------------------- figure 1

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Figure1Row {
    pub prior: String,
    pub truth: String,
    pub lambda: f64,
    pub exact_coverage: f64,
    pub nmf_coverage: f64,
    pub upsilon: f64,
    pub tau2: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Figure1Mc {
    pub truth: String,
    pub lambda: f64,
    pub p: usize,
    pub estimate: f64,
    pub wilson_lo: f64,
    pub wilson_hi: f64,
    pub theory: f64,
    pub n_reps: usize,
}

/// 97 points on [-0.95, 0.95].
pub fn default_lambda_grid() -> Vec<f64> {
    (0..97i32).map(|k| 0.95 * (2 * k - 96) as f64 / 96.0).collect()
}

pub fn figure1_curves(cfg: &ExperimentConfig) -> Result<(Vec<Figure1Row>, Vec<String>)> {
    let prior = cfg.prior.build()?;
    let d0 = cfg.design.build(cfg.seeds.base)?.d0();
    let psi0 = psi0_site(&prior, d0)?;
    let grid = cfg.lambda_grid.clone().unwrap_or_else(default_lambda_grid);
    let mut warnings = Vec::new();
    let per_truth: Vec<Result<(Vec<Figure1Row>, Option<String>)>> = cfg
        .figure1
        .truths
        .par_iter()
        .map(|name| {
            let law = TruthLaw::preset(name)?;
            let li = limit_integrals(&psi0, &law, d0)?;
            // lambda must satisfy lambda * upsilon < 1
            let cap = 1.0 / li.upsilon - 1e-9;
            let mut rows = Vec::new();
            let mut dropped = 0;
            for &lambda in &grid {
                if lambda >= cap || lambda <= -1.0 {
                    dropped += 1;
                    continue;
                }
                let c = li.constants(lambda, cfg.alpha)?;
                rows.push(Figure1Row {
                    prior: cfg.prior.label(),
                    truth: name.clone(),
                    lambda,
                    exact_coverage: c.coverage_limit,
                    nmf_coverage: c.nmf_coverage_limit,
                    upsilon: c.upsilon,
                    tau2: c.tau2,
                });
            }
            let warn = (dropped > 0).then(|| format!("{name}: {dropped} grid points outside (-1, 1/upsilon) dropped"));
            Ok((rows, warn))
        })
        .collect();
    let mut all = Vec::new();
    for r in per_truth {
        let (rows, w) = r?;
        all.extend(rows);
        warnings.extend(w);
    }
    Ok((all, warnings))
}

/// lambda = 0 Monte Carlo overlay on the Gaussian sequence model.
pub fn figure1_mc(cfg: &ExperimentConfig) -> Result<Vec<Figure1Mc>> {
    let p = cfg.figure1.mc_p;
    if p == 0 {
        return Ok(Vec::new());
    }
    let sigma2 = 1.0 / cfg.design.build(cfg.seeds.base)?.d0();
    let design = DesignBundle::gaussian_sequence(p, sigma2, 1.0)?;
    let prior = cfg.prior.build()?;
    let mut out = Vec::new();
    for (k, name) in cfg.figure1.truths.iter().enumerate() {
        let setup = CoverageSetup {
            design: design.clone(),
            prior: prior.clone(),
            truth: Truth::Iid(TruthLaw::preset(name)?),
            q: QSpec::Uniform.build(p)?,
            lambda_p: Some(0.0),
            alpha: cfg.alpha,
            sigma2_true: None,
        };
        let o = coverage_mc(&setup, cfg.seeds.replications, derive_seed(cfg.seeds.base, stream::INSTANCE, k as u64))?;
        out.push(Figure1Mc {
            truth: name.clone(),
            lambda: 0.0,
            p,
            estimate: o.exact.estimate,
            wilson_lo: o.exact.wilson_lo,
            wilson_hi: o.exact.wilson_hi,
            theory: o.exact.theory,
            n_reps: o.exact.n_reps,
        });
    }
    Ok(out)
}

fn run_figure1(cfg: &ExperimentConfig) -> Result<Outcome> {
    let (rows, warnings) = figure1_curves(cfg)?;
    let mut t = Table::new("figure1", vec!["lambda", "exact_coverage", "nmf_coverage", "prior", "truth", "upsilon", "tau2"]);
    for r in &rows {
        t.push(vec![f(r.lambda), f(r.exact_coverage), f(r.nmf_coverage), r.prior.clone(), r.truth.clone(), f(r.upsilon), f(r.tau2)]);
    }
    let mut tables = vec![t];
    let mc = figure1_mc(cfg)?;
    if !mc.is_empty() {
        let mut m = Table::new("figure1_mc", vec!["truth", "lambda", "p", "n_reps", "estimate", "wilson_lo", "wilson_hi", "theory"]);
        for r in &mc {
            m.push(vec![r.truth.clone(), f(r.lambda), r.p.to_string(), r.n_reps.to_string(), f(r.estimate), f(r.wilson_lo), f(r.wilson_hi), f(r.theory)]);
        }
        tables.push(m);
    }
    Ok(Outcome { tables, warnings, assumption_failure: false })
}

// ---------------------------------------------------------------- shared instance

/// One data set: design, truth, response, field, sites and mean-field solution.
pub struct Instance {
    pub design: DesignBundle,
    pub beta: Vec<f64>,
    pub y: Vec<f64>,
    pub c: Vec<f64>,
    pub sites: Vec<crate::prior::TiltedSite>,
    pub mf: crate::meanfield::MeanFieldSolution,
}

/// Builds the `index`-th independent instance for a config (fresh design draw for
/// random designs, fresh truth and noise).
pub fn build_instance(cfg: &ExperimentConfig, index: u64) -> Result<Instance> {
    let design_seed = derive_seed(cfg.seeds.base, stream::DESIGN, index);
    let design = cfg.design.build(design_seed)?;
    let mut rng = rng_for(cfg.seeds.base, stream::INSTANCE, index);
    let truth = Truth::from_config(&cfg.truth)?;
    let beta = truth.draw(design.p(), &mut rng)?;
    let y = generate_y(&design, &beta, cfg.sigma2_true().unwrap_or(design.sigma2()), &mut rng)?;
    let c = field(&design, &y)?;
    let prior = cfg.prior.build()?;
    let sites = make_sites(&prior, design.d())?;
    let mf = solve_fixed_point(&sites, design.a(), &c, &SolverOptions::default())?;
    Ok(Instance { design, beta, y, c, sites, mf })
}

fn chain_for(cfg: &ExperimentConfig, index: u64) -> ChainConfig {
    ChainConfig { seed: derive_seed(cfg.seeds.base, stream::CHAIN, index), ..cfg.chain.clone() }
}

// ---------------------------------------------------------------- CLT

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CltResult {
    pub design: String,
    pub q: String,
    pub lambda_p: f64,
    pub upsilon_p: f64,
    pub variance: f64,
    pub center_mf: f64,
    pub center_plain: f64,
    pub center_scaled: f64,
    pub ks_mf: f64,
    pub ks_plain: f64,
    pub ks_scaled: f64,
    pub n_draws: usize,
    pub ess: f64,
    pub gibbs_mean: f64,
    pub gibbs_mean_se: f64,
    pub gibbs_var: f64,
    #[serde(skip)]
    pub draws: Vec<f64>,
}

pub fn clt(cfg: &ExperimentConfig, whitenoise: bool) -> Result<(CltResult, Vec<String>)> {
    let mut warnings = Vec::new();
    if whitenoise {
        if cfg.design.kind != DesignKind::WhiteNoise {
            return Err(Error::Config("clt_whitenoise needs a white_noise design".into()));
        }
        let n = cfg.design.n.unwrap_or(0) as f64;
        if cfg.design.p as f64 >= n.powf(2.0 / 3.0) {
            warnings.push(format!("p = {} >= n^(2/3) = {:.1}: outside the white-noise CLT regime", cfg.design.p, n.powf(2.0 / 3.0)));
        }
    }
    let inst = build_instance(cfg, 0)?;
    let q = cfg.q.build(inst.design.p())?;
    let lambda_p = match cfg.lambda_p {
        Some(l) => l,
        None if whitenoise => 0.0,
        None => inst.design.rayleigh(&q),
    };
    let ups = upsilon_p(&q, &inst.sites, &inst.c)?;
    let g = 1.0 - lambda_p * ups;
    if !(g > 0.0) {
        return Err(Error::NonContractive(lambda_p * ups));
    }
    let variance = ups / g;
    let center_mf = mf_point_estimate(&inst.mf, &q);
    let center_plain: f64 = q
        .iter()
        .zip(&inst.sites)
        .zip(&inst.c)
        .map(|((qi, s), ci)| qi * s.moments(*ci).mean)
        .sum();
    let center_scaled = center_plain / g;
    let samples = run_chain_from(&inst.sites, inst.design.a(), &inst.c, &chain_for(cfg, 0), inst.mf.u.clone())?;
    let est = estimate_projection(&samples, &q)?;
    let ks = |center: f64| ks_distance(&est.draws, center, variance);
    Ok((
        CltResult {
            design: cfg.design.kind.as_str().into(),
            q: cfg.q.label(),
            lambda_p,
            upsilon_p: ups,
            variance,
            center_mf,
            center_plain,
            center_scaled,
            ks_mf: ks(center_mf)?,
            ks_plain: ks(center_plain)?,
            ks_scaled: ks(center_scaled)?,
            n_draws: est.draws.len(),
            ess: est.ess,
            gibbs_mean: est.mean,
            gibbs_mean_se: est.mc_se,
            gibbs_var: est.var,
            draws: est.draws,
        },
        warnings,
    ))
}

fn run_clt(cfg: &ExperimentConfig, whitenoise: bool) -> Result<Outcome> {
    let (r, warnings) = clt(cfg, whitenoise)?;
    let mut t = Table::new("clt", vec!["design", "q", "centering", "center", "lambda_p", "upsilon_p", "variance", "ks", "n_draws", "ess"]);
    for (name, center, ks) in [("mf", r.center_mf, r.ks_mf), ("plain", r.center_plain, r.ks_plain), ("scaled", r.center_scaled, r.ks_scaled)] {
        t.push(vec![
            r.design.clone(),
            r.q.clone(),
            name.into(),
            f(center),
            f(r.lambda_p),
            f(r.upsilon_p),
            f(r.variance),
            f(ks),
            r.n_draws.to_string(),
            f(r.ess),
        ]);
    }
    let mut d = Table::new("clt_draws", vec!["draw", "t"]);
    for (k, v) in r.draws.iter().enumerate() {
        d.push(vec![k.to_string(), f(*v)]);
    }
    Ok(Outcome { tables: vec![t, d], warnings, assumption_failure: false })
}

// ---------------------------------------------------------------- coverage

pub fn coverage(cfg: &ExperimentConfig) -> Result<CoverageOutcome> {
    let design = cfg.design.build(derive_seed(cfg.seeds.base, stream::DESIGN, 0))?;
    let q = cfg.q.build(design.p())?;
    let setup = CoverageSetup {
        design,
        prior: cfg.prior.build()?,
        truth: Truth::from_config(&cfg.truth)?,
        q,
        lambda_p: cfg.lambda_p,
        alpha: cfg.alpha,
        sigma2_true: cfg.sigma2_true(),
    };
    coverage_mc(&setup, cfg.seeds.replications, cfg.seeds.base)
}

fn run_coverage(cfg: &ExperimentConfig) -> Result<Outcome> {
    let o = coverage(cfg)?;
    let mut t = Table::new(
        "coverage",
        vec!["interval", "alpha", "lambda_p", "n_reps", "hits", "failures", "estimate", "wilson_lo", "wilson_hi", "theory"],
    );
    for (name, r) in [("exact", &o.exact), ("nmf", &o.nmf)] {
        t.push(vec![
            name.into(),
            f(cfg.alpha),
            f(o.lambda_p),
            r.n_reps.to_string(),
            r.hits.to_string(),
            r.failures.to_string(),
            f(r.estimate),
            f(r.wilson_lo),
            f(r.wilson_hi),
            f(r.theory),
        ]);
    }
    let mut warnings = Vec::new();
    if o.exact.failures > 0 {
        warnings.push(format!("{} replications failed", o.exact.failures));
    }
    Ok(Outcome { tables: vec![t], warnings, assumption_failure: false })
}

// ---------------------------------------------------------------- variance order

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VarianceRow {
    pub q_label: String,
    pub lambda: f64,
    pub gibbs_var: f64,
    pub gibbs_var_se: f64,
    pub upsilon_p: f64,
    pub ratio: f64,
    pub ratio_se: f64,
    pub theory_ratio: f64,
}

/// One chain on an ANOVA data set, projected on the three eigen-directions.
pub fn variance_order(cfg: &ExperimentConfig) -> Result<Vec<VarianceRow>> {
    if cfg.design.kind != DesignKind::Anova {
        return Err(Error::Config("variance_order needs an anova design".into()));
    }
    let inst = build_instance(cfg, 0)?;
    let p = inst.design.p();
    let samples = run_chain_from(&inst.sites, inst.design.a(), &inst.c, &chain_for(cfg, 0), inst.mf.u.clone())?;
    let mut rows = Vec::new();
    for qs in [QSpec::Uniform, QSpec::Alternating, QSpec::Contrast] {
        let q = qs.build(p)?;
        let lambda = inst.design.rayleigh(&q);
        let ups = upsilon_p(&q, &inst.sites, &inst.c)?;
        let est = estimate_projection(&samples, &q)?;
        rows.push(VarianceRow {
            q_label: qs.label(),
            lambda,
            gibbs_var: est.var,
            gibbs_var_se: est.var_mc_se,
            upsilon_p: ups,
            ratio: est.var / ups,
            ratio_se: est.var_mc_se / ups,
            theory_ratio: 1.0 / (1.0 - lambda * ups),
        });
    }
    Ok(rows)
}

fn run_variance_order(cfg: &ExperimentConfig) -> Result<Outcome> {
    let rows = variance_order(cfg)?;
    let mut t = Table::new(
        "variance_order",
        vec!["q_label", "lambda", "gibbs_var", "gibbs_var_se", "upsilon_p", "ratio", "ratio_se", "theory_ratio"],
    );
    for r in &rows {
        t.push(vec![
            r.q_label.clone(),
            f(r.lambda),
            f(r.gibbs_var),
            f(r.gibbs_var_se),
            f(r.upsilon_p),
            f(r.ratio),
            f(r.ratio_se),
            f(r.theory_ratio),
        ]);
    }
    Ok(Outcome { tables: vec![t], warnings: Vec::new(), assumption_failure: false })
}

// ---------------------------------------------------------------- sparse threshold

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum SparseCase {
    /// limit N(0, Var psi0'(W))
    A,
    /// limit N(zeta E psi0'(X/sigma^2 + W), Var psi0'(W))
    B,
    /// divergent centering
    C,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SparseResult {
    pub case: SparseCase,
    pub u: f64,
    pub q_tot: f64,
    pub zeta: f64,
    /// growth exponent of p^{-u} q_tot
    pub exponent: f64,
    pub shift: f64,
    pub limit_mean: f64,
    pub limit_var: f64,
    pub sample_mean: f64,
    pub sample_var: f64,
    pub ks: Option<f64>,
    pub divergent: bool,
    #[serde(skip)]
    pub estimates: Vec<f64>,
}

pub fn sparse_threshold(cfg: &ExperimentConfig) -> Result<SparseResult> {
    if cfg.design.kind != DesignKind::WhiteNoise {
        return Err(Error::Config("sparse_threshold needs a white_noise design".into()));
    }
    let (u, slab_spec) = match &cfg.truth.kind {
        TruthKind::SpikeSlab { u, slab } => (*u, slab.clone()),
        _ => return Err(Error::Config("sparse_threshold needs a spike_slab truth".into())),
    };
    let design = cfg.design.build(derive_seed(cfg.seeds.base, stream::DESIGN, 0))?;
    let p = design.p();
    let q = cfg.q.build(p)?;
    let prior = cfg.prior.build()?;
    let sites = make_sites(&prior, design.d())?;
    let slab = slab_spec.build()?;
    let truth = Truth::from_config(&cfg.truth)?;
    let s_eff = design.effective_sigma2();
    let psi0 = psi0_site(&prior, 1.0 / s_eff)?;
    let q_tot: f64 = q.iter().sum();
    let zeta = (p as f64).powf(-u) * q_tot;
    let exponent = if q_tot.abs() < 1e-12 { f64::NEG_INFINITY } else { q_tot.abs().ln() / (p as f64).ln() - u };
    let (shift_unit, limit_var) = sparse_limit(&psi0, &slab, s_eff, 1.0)?;
    let symmetric_shift = shift_unit.abs() < 1e-12;
    let case = if symmetric_shift || exponent < -1e-9 {
        SparseCase::A
    } else if exponent.abs() <= 1e-9 {
        SparseCase::B
    } else {
        SparseCase::C
    };
    let limit_mean = if case == SparseCase::B { zeta * shift_unit } else { 0.0 };
    let sigma2_true = cfg.sigma2_true().unwrap_or(design.sigma2());
    let estimates: Vec<f64> = (0..cfg.seeds.replications as u64)
        .into_par_iter()
        .map(|r| -> Result<f64> {
            let mut rng = rng_for(cfg.seeds.base, stream::REPLICATION, r);
            let beta = truth.draw(p, &mut rng)?;
            let y = generate_y(&design, &beta, sigma2_true, &mut rng)?;
            let c = field(&design, &y)?;
            let sol = solve_fixed_point(&sites, design.a(), &c, &SolverOptions::default())?;
            Ok(mf_point_estimate(&sol, &q))
        })
        .collect::<Result<_>>()?;
    let n = estimates.len() as f64;
    let sample_mean = estimates.iter().sum::<f64>() / n;
    let sample_var = estimates.iter().map(|x| (x - sample_mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    let ks = if case == SparseCase::C { None } else { Some(ks_distance(&estimates, limit_mean, limit_var)?) };
    let divergent = case == SparseCase::C && sample_mean.abs() > 5.0 * limit_var.sqrt();
    Ok(SparseResult {
        case,
        u,
        q_tot,
        zeta,
        exponent,
        shift: shift_unit,
        limit_mean,
        limit_var,
        sample_mean,
        sample_var,
        ks,
        divergent,
        estimates,
    })
}

fn run_sparse(cfg: &ExperimentConfig) -> Result<Outcome> {
    let r = sparse_threshold(cfg)?;
    let mut s = Table::new(
        "sparse_summary",
        vec!["case", "u", "q_tot", "zeta", "exponent", "shift", "limit_mean", "limit_var", "sample_mean", "sample_var", "ks", "divergent"],
    );
    s.push(vec![
        format!("{:?}", r.case).to_lowercase(),
        f(r.u),
        f(r.q_tot),
        f(r.zeta),
        f(r.exponent),
        f(r.shift),
        f(r.limit_mean),
        f(r.limit_var),
        f(r.sample_mean),
        f(r.sample_var),
        r.ks.map(f).unwrap_or_else(|| "NA".into()),
        r.divergent.to_string(),
    ]);
    let mut e = Table::new("sparse_estimates", vec!["replication", "estimate"]);
    for (k, v) in r.estimates.iter().enumerate() {
        e.push(vec![k.to_string(), f(*v)]);
    }
    let warnings = if r.case == SparseCase::C {
        vec![format!("divergent regime (exponent {:.3}); KS not computed", r.exponent)]
    } else {
        Vec::new()
    };
    Ok(Outcome { tables: vec![s, e], warnings, assumption_failure: false })
}

// ---------------------------------------------------------------- diagnose

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AssumptionCheck {
    pub name: &'static str,
    pub status: Status,
    pub statistic: f64,
    pub threshold: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DiagnoseResult {
    pub design: DesignDiagnostics,
    pub berry_esseen: BerryEsseenReport,
    pub lambda_p: f64,
    pub checks: Vec<AssumptionCheck>,
}

impl DiagnoseResult {
    pub fn failed(&self) -> bool {
        self.checks.iter().any(|c| c.status == Status::Fail)
    }
}

/// Pass/warn/fail per assumption.
///
/// high_temperature: PASS if the upper bracket of ||A||_4 is <= rho, WARN if only the lower
/// bracket is, FAIL otherwise. strong_mean_field: statistic sqrt(p) alpha_p; PASS <= 1,
/// WARN <= 3, FAIL above. homogeneity: PASS if sum (d_i - d0)^2 <= 1, WARN above, FAIL
/// when some d_i <= 0.
pub fn assumption_checks(diag: &DesignDiagnostics, p: usize, rho: f64) -> Vec<AssumptionCheck> {
    let ht = if diag.norm4_upper <= rho {
        Status::Pass
    } else if diag.norm4_lower <= rho {
        Status::Warn
    } else {
        Status::Fail
    };
    let smf_stat = (p as f64).sqrt() * diag.alpha_p;
    let smf = if smf_stat <= 1.0 {
        Status::Pass
    } else if smf_stat <= 3.0 {
        Status::Warn
    } else {
        Status::Fail
    };
    let hom = if diag.d_min_observed <= 0.0 {
        Status::Fail
    } else if diag.homogeneity <= 1.0 {
        Status::Pass
    } else {
        Status::Warn
    };
    vec![
        AssumptionCheck { name: "high_temperature", status: ht, statistic: diag.norm4_upper, threshold: rho },
        AssumptionCheck { name: "strong_mean_field", status: smf, statistic: smf_stat, threshold: 1.0 },
        AssumptionCheck { name: "homogeneity", status: hom, statistic: diag.homogeneity, threshold: 1.0 },
        AssumptionCheck {
            name: "positive_diagonal",
            status: if diag.d_min_observed > 0.0 { Status::Pass } else { Status::Fail },
            statistic: diag.d_min_observed,
            threshold: 0.0,
        },
    ]
}

fn read_vector(path: &str) -> Result<Vec<f64>> {
    let text = std::fs::read_to_string(path)?;
    text.split(|c: char| c == ',' || c.is_whitespace())
        .filter(|s| !s.is_empty() && !s.starts_with('#'))
        .map(|s| s.parse::<f64>().map_err(|e| Error::Csv(format!("{path}: {e}"))))
        .collect()
}

pub fn diagnose(cfg: &ExperimentConfig) -> Result<DiagnoseResult> {
    let design = cfg.design.build(derive_seed(cfg.seeds.base, stream::DESIGN, 0))?;
    let diag = design.diagnostics(500, 1e-10);
    let y = match &cfg.y_path {
        Some(path) => read_vector(path)?,
        None => {
            let mut rng = rng_for(cfg.seeds.base, stream::INSTANCE, 0);
            let beta = Truth::from_config(&cfg.truth)?.draw(design.p(), &mut rng)?;
            generate_y(&design, &beta, cfg.sigma2_true().unwrap_or(design.sigma2()), &mut rng)?
        }
    };
    let c = field(&design, &y)?;
    let sites = make_sites(&cfg.prior.build()?, design.d())?;
    let q = cfg.q.build(design.p())?;
    let lambda_p = cfg.lambda_p.unwrap_or_else(|| design.rayleigh(&q));
    let be = berry_esseen_terms(&sites, design.a(), &c, &q, lambda_p)?;
    let checks = assumption_checks(&diag, design.p(), cfg.rho);
    Ok(DiagnoseResult { design: diag, berry_esseen: be, lambda_p, checks })
}

fn run_diagnose(cfg: &ExperimentConfig) -> Result<Outcome> {
    let r = diagnose(cfg)?;
    let mut kv = Table::new("diagnostics", vec!["key", "value"]);
    for (k, v) in r.design.to_kv() {
        kv.push(vec![k.into(), v]);
    }
    let be = &r.berry_esseen;
    for (k, v) in [
        ("lambda_p", r.lambda_p),
        ("R1", be.r1),
        ("R2", be.r2),
        ("R3", be.r3),
        ("R4", be.r4),
        ("eps_norm", be.eps_norm),
        ("upsilon_p", be.upsilon_p),
        ("q_inf", be.q_inf),
        ("bound_rhs", be.bound_rhs),
    ] {
        kv.push(vec![k.into(), format!("{v:.12e}")]);
    }
    let mut a = Table::new("assumptions", vec!["assumption", "status", "statistic", "threshold"]);
    let mut warnings = Vec::new();
    for c in &r.checks {
        a.push(vec![c.name.into(), c.status.as_str().into(), f(c.statistic), f(c.threshold)]);
        if c.status != Status::Pass {
            warnings.push(format!("{}: {} ({} vs {})", c.name, c.status.as_str(), c.statistic, c.threshold));
        }
    }
    if let Some(w) = &r.design.warning {
        warnings.push(w.clone());
    }
    Ok(Outcome { tables: vec![kv, a], warnings, assumption_failure: r.failed() })
}

// ---------------------------------------------------------------- driver

/// Runs the configured experiment without touching the file system.
pub fn run(cfg: &ExperimentConfig) -> Result<Outcome> {
    match cfg.kind()? {
        ExperimentKind::Figure1 => run_figure1(cfg),
        ExperimentKind::CltWhitenoise => run_clt(cfg, true),
        ExperimentKind::CltGeneral => run_clt(cfg, false),
        ExperimentKind::CoverageMc => run_coverage(cfg),
        ExperimentKind::VarianceOrder => run_variance_order(cfg),
        ExperimentKind::SparseThreshold => run_sparse(cfg),
        ExperimentKind::Diagnose => run_diagnose(cfg),
    }
}

/// Runs and writes `<name>.csv` files plus `run.json` into the resolved output directory.
pub fn execute(cfg: &ExperimentConfig) -> Result<(Outcome, Vec<PathBuf>)> {
    let outcome = run(cfg)?;
    let dir = PathBuf::from(cfg.output_dir.clone().unwrap_or_else(|| "out".into()));
    std::fs::create_dir_all(&dir)?;
    let hash = cfg.hash();
    let mut written = Vec::new();
    for t in &outcome.tables {
        let path = dir.join(format!("{}.csv", t.name));
        std::fs::write(&path, t.render(&hash, cfg.seeds.base))?;
        written.push(path);
    }
    let run_json = dir.join("run.json");
    let echo = serde_json::json!({
        "config": cfg,
        "config_hash": hash,
        "outputs": outcome.tables.iter().map(|t| format!("{}.csv", t.name)).collect::<Vec<_>>(),
        "warnings": outcome.warnings,
        "assumption_failure": outcome.assumption_failure,
    });
    std::fs::write(&run_json, serde_json::to_string_pretty(&echo).expect("json") + "\n")?;
    written.push(run_json);
    Ok((outcome, written))
}
