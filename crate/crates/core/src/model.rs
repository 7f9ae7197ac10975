//! Data-generating process: truths, responses and the posterior field c.

use crate::design::DesignBundle;
use crate::error::{Error, Result};
use crate::prior::{PriorMeasure, PriorSpec, TiltedSite};
use rand::Rng;
use rand_distr::{Beta, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

/// One mixture component of a (possibly unbounded) truth law.
#[derive(Debug, Clone)]
pub enum Component {
    Atom(f64),
    Gaussian { mean: f64, var: f64 },
    Bounded(PriorMeasure),
}

/// A finite mixture law for the iid truth mu*.
#[derive(Debug, Clone)]
pub struct TruthLaw {
    pub components: Vec<(f64, Component)>,
}

impl TruthLaw {
    pub fn new(components: Vec<(f64, Component)>) -> Result<Self> {
        let total: f64 = components.iter().map(|c| c.0).sum();
        if components.is_empty() || !(total > 0.0) || components.iter().any(|c| !(c.0 >= 0.0)) {
            return Err(Error::InvalidPrior("truth law needs positive mixture weights".into()));
        }
        Ok(TruthLaw { components: components.into_iter().map(|(w, c)| (w / total, c)).collect() })
    }

    pub fn bounded(p: PriorMeasure) -> Self {
        TruthLaw { components: vec![(1.0, Component::Bounded(p))] }
    }

    pub fn point(x: f64) -> Self {
        TruthLaw { components: vec![(1.0, Component::Atom(x))] }
    }

    /// Named laws: "gaussian", "half_spike_gaussian" (0.5 delta_0 + 0.5 N(0,1)), any prior
    /// preset, or "zero".
    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "gaussian" => Ok(TruthLaw {
                components: vec![(1.0, Component::Gaussian { mean: 0.0, var: 1.0 })],
            }),
            "half_spike_gaussian" => TruthLaw::new(vec![
                (0.5, Component::Atom(0.0)),
                (0.5, Component::Gaussian { mean: 0.0, var: 1.0 }),
            ]),
            "zero" => Ok(TruthLaw::point(0.0)),
            other => Ok(TruthLaw::bounded(PriorMeasure::preset(other)?)),
        }
    }

    pub fn mean(&self) -> f64 {
        self.components
            .iter()
            .map(|(w, c)| {
                w * match c {
                    Component::Atom(x) => *x,
                    Component::Gaussian { mean, .. } => *mean,
                    Component::Bounded(p) => p.moment(1),
                }
            })
            .sum()
    }

    pub fn fourth_moment(&self) -> f64 {
        self.components
            .iter()
            .map(|(w, c)| {
                w * match c {
                    Component::Atom(x) => x.powi(4),
                    Component::Gaussian { mean, var } => {
                        mean.powi(4) + 6.0 * mean * mean * var + 3.0 * var * var
                    }
                    Component::Bounded(p) => p.moment(4),
                }
            })
            .sum()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut chosen = &self.components[self.components.len() - 1].1;
        for (w, c) in &self.components {
            acc += w;
            if u < acc {
                chosen = c;
                break;
            }
        }
        match chosen {
            Component::Atom(x) => *x,
            Component::Gaussian { mean, var } => {
                let z: f64 = StandardNormal.sample(rng);
                mean + var.sqrt() * z
            }
            Component::Bounded(p) => {
                let site = TiltedSite::new(p, 0.0).expect("bounded component");
                site.sample_tilted(0.0, rng)
            }
        }
    }
}

/// Config-level truth description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum TruthKind {
    Fixed { beta: Vec<f64> },
    Iid { law: String },
    SpikeSlab {
        u: f64,
        #[serde(default = "default_slab")]
        slab: PriorSpec,
    },
}

fn default_slab() -> PriorSpec {
    PriorSpec::Preset("rademacher".into())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthConfig {
    #[serde(flatten)]
    pub kind: TruthKind,
    /// Noise variance of the data-generating process; defaults to the model's sigma^2.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma2_true: Option<f64>,
}

impl TruthConfig {
    pub fn iid(law: &str) -> Self {
        TruthConfig { kind: TruthKind::Iid { law: law.into() }, sigma2_true: None }
    }

    pub fn label(&self) -> String {
        match &self.kind {
            TruthKind::Fixed { .. } => "fixed".into(),
            TruthKind::Iid { law } => law.clone(),
            TruthKind::SpikeSlab { u, slab } => format!("spike_slab_u{u}_{}", slab.label()),
        }
    }
}

/// A truth configuration resolved into samplable form.
#[derive(Debug, Clone)]
pub enum Truth {
    Fixed(Vec<f64>),
    Iid(TruthLaw),
    SpikeSlab { u: f64, slab: PriorMeasure },
}

impl Truth {
    pub fn from_config(cfg: &TruthConfig) -> Result<Self> {
        Ok(match &cfg.kind {
            TruthKind::Fixed { beta } => {
                if beta.iter().any(|b| !b.is_finite()) {
                    return Err(Error::Config("fixed beta must be finite".into()));
                }
                Truth::Fixed(beta.clone())
            }
            TruthKind::Iid { law } => Truth::Iid(TruthLaw::preset(law)?),
            TruthKind::SpikeSlab { u, slab } => {
                if !(*u > 0.0) {
                    return Err(Error::Config(format!("spike-slab exponent u = {u} must be > 0")));
                }
                Truth::SpikeSlab { u: *u, slab: slab.build()? }
            }
        })
    }

    /// Draws beta* of length p.
    pub fn draw<R: Rng + ?Sized>(&self, p: usize, rng: &mut R) -> Result<Vec<f64>> {
        if p == 0 {
            return Err(Error::Dimension("p must be >= 1".into()));
        }
        match self {
            Truth::Fixed(b) => {
                if b.len() != p {
                    return Err(Error::Dimension(format!("fixed beta has {} entries, p = {p}", b.len())));
                }
                Ok(b.clone())
            }
            Truth::Iid(law) => Ok((0..p).map(|_| law.sample(rng)).collect()),
            Truth::SpikeSlab { u, slab } => {
                let r = spike_slab_rate(*u, p, rng);
                let site = TiltedSite::new(slab, 0.0)?;
                Ok((0..p)
                    .map(|_| {
                        let on = rng.random::<f64>() < r;
                        let z = site.sample_tilted(0.0, rng);
                        if on {
                            z
                        } else {
                            0.0
                        }
                    })
                    .collect())
            }
        }
    }
}

/// r_p ~ Beta(1, p^u).
pub fn spike_slab_rate<R: Rng + ?Sized>(u: f64, p: usize, rng: &mut R) -> f64 {
    let b = (p as f64).powf(u);
    Beta::new(1.0, b).expect("beta parameters").sample(rng)
}

/// y = X beta* + eps, eps iid N(0, sigma2_true). `sigma2_true = 0` gives noiseless data.
pub fn generate_y<R: Rng + ?Sized>(
    bundle: &DesignBundle,
    beta: &[f64],
    sigma2_true: f64,
    rng: &mut R,
) -> Result<Vec<f64>> {
    if !(sigma2_true >= 0.0) {
        return Err(Error::Domain(format!("sigma2_true = {sigma2_true}")));
    }
    let mut y = bundle.x_mul(beta)?;
    let sd = sigma2_true.sqrt();
    for v in &mut y {
        let z: f64 = StandardNormal.sample(rng);
        *v += sd * z;
    }
    Ok(y)
}

/// c = gamma X'y / sigma^2.
pub fn field(bundle: &DesignBundle, y: &[f64]) -> Result<Vec<f64>> {
    let s = bundle.effective_sigma2();
    let c: Vec<f64> = bundle.xt_mul(y)?.into_iter().map(|v| v / s).collect();
    if c.iter().any(|v| !v.is_finite()) {
        return Err(Error::Domain("non-finite field".into()));
    }
    Ok(c)
}
