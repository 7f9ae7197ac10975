//! Priors on [-1, 1] and their quadratic/exponential tilts.
//!
//! A prior is a finite set of atoms plus density values on a Gauss-Legendre
//! grid. Every tilt is a reweighting of the same merged support, so the log-MGF
//! and its derivatives are finite log-sum-exp sums.

use crate::error::{Error, Result};
use crate::quadrature::{gauss_legendre, legendre_default, Rule, LEGENDRE_NODES};
use rand::Rng;
use serde::{Deserialize, Serialize};

const SYMMETRY_TOL: f64 = 1e-12;
/// Largest |theta| accepted by the checked evaluators.
pub const THETA_MAX: f64 = 1e6;

#[derive(Debug, Clone, PartialEq)]
pub struct PriorMeasure {
    atoms: Vec<(f64, f64)>,
    density: Option<Vec<f64>>,
    rule: Rule,
    symmetric: bool,
}

impl PriorMeasure {
    /// Builds and normalises a measure from atoms and an optional density evaluated on an
    /// `n_nodes` Gauss-Legendre grid. The density need not integrate to one; the total
    /// mass (atoms + density) is rescaled to one.
    pub fn new(
        atoms: Vec<(f64, f64)>,
        density: Option<&dyn Fn(f64) -> f64>,
        n_nodes: usize,
    ) -> Result<Self> {
        let rule = if n_nodes == LEGENDRE_NODES {
            legendre_default().clone()
        } else {
            gauss_legendre(n_nodes)
        };
        for &(x, w) in &atoms {
            if !(-1.0..=1.0).contains(&x) || !x.is_finite() {
                return Err(Error::InvalidPrior(format!("atom at {x} outside [-1,1]")));
            }
            if !(w > 0.0) || !w.is_finite() {
                return Err(Error::InvalidPrior(format!("atom weight {w} must be positive")));
            }
        }
        let density = match density {
            Some(f) => {
                let vals: Vec<f64> = rule.nodes.iter().map(|&z| f(z)).collect();
                if vals.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
                    return Err(Error::InvalidPrior("density must be finite and >= 0".into()));
                }
                Some(vals)
            }
            None => None,
        };
        let atom_mass: f64 = atoms.iter().map(|a| a.1).sum();
        let dens_mass: f64 = density
            .as_ref()
            .map(|v| v.iter().zip(&rule.weights).map(|(f, w)| f * w).sum())
            .unwrap_or(0.0);
        let total = atom_mass + dens_mass;
        if !(total > 0.0) {
            return Err(Error::EmptyMeasure);
        }
        let atoms: Vec<(f64, f64)> = atoms.into_iter().map(|(x, w)| (x, w / total)).collect();
        let density = density.map(|v| v.into_iter().map(|f| f / total).collect::<Vec<_>>());
        let symmetric = check_symmetric(&atoms, density.as_deref());
        Ok(PriorMeasure { atoms, density, rule, symmetric })
    }

    pub fn from_atoms(atoms: Vec<(f64, f64)>) -> Result<Self> {
        Self::new(atoms, None, LEGENDRE_NODES)
    }

    pub fn point_mass(x: f64) -> Result<Self> {
        Self::from_atoms(vec![(x, 1.0)])
    }

    /// Unif[-1,1].
    pub fn uniform() -> Self {
        Self::uniform_with_nodes(LEGENDRE_NODES)
    }

    pub fn uniform_with_nodes(n_nodes: usize) -> Self {
        Self::new(Vec::new(), Some(&|_| 0.5), n_nodes).expect("uniform prior")
    }

    /// Equal-weight atoms at -1 and +1.
    pub fn rademacher() -> Self {
        Self::from_atoms(vec![(-1.0, 0.5), (1.0, 0.5)]).expect("rademacher prior")
    }

    /// Equal-weight atoms at -1, 0, 1.
    pub fn three_point() -> Self {
        Self::from_atoms(vec![(-1.0, 1.0 / 3.0), (0.0, 1.0 / 3.0), (1.0, 1.0 / 3.0)])
            .expect("three-point prior")
    }

    /// 0.5 delta_0 + 0.5 Unif[-1,1].
    pub fn spike_slab_base() -> Self {
        Self::new(vec![(0.0, 0.5)], Some(&|_| 0.25), LEGENDRE_NODES).expect("spike-slab prior")
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "uniform" => Ok(Self::uniform()),
            "rademacher" => Ok(Self::rademacher()),
            "three_point" => Ok(Self::three_point()),
            "spike_slab_base" => Ok(Self::spike_slab_base()),
            other => Err(Error::InvalidPrior(format!("unknown preset `{other}`"))),
        }
    }

    pub fn atoms(&self) -> &[(f64, f64)] {
        &self.atoms
    }

    /// Density values at the grid nodes (already normalised with the atoms).
    pub fn density(&self) -> Option<&[f64]> {
        self.density.as_deref()
    }

    pub fn rule(&self) -> &Rule {
        &self.rule
    }

    pub fn is_symmetric(&self) -> bool {
        self.symmetric
    }

    /// Total mass; equals one up to rounding.
    pub fn total_mass(&self) -> f64 {
        self.support().map(|(_, w)| w).sum()
    }

    /// (location, mass) pairs of the merged atom + grid representation.
    pub fn support(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        let grid = self.density.iter().flat_map(move |dens| {
            self.rule
                .nodes
                .iter()
                .zip(&self.rule.weights)
                .zip(dens)
                .map(|((z, w), f)| (*z, w * f))
        });
        self.atoms.iter().copied().chain(grid)
    }

    /// E Z^k under the measure.
    pub fn moment(&self, k: i32) -> f64 {
        self.support().map(|(z, w)| w * z.powi(k)).sum()
    }

    /// True when the measure is a single atom.
    pub fn is_degenerate(&self) -> bool {
        self.density.as_ref().is_none_or(|d| d.iter().all(|v| *v == 0.0)) && self.atoms.len() <= 1
    }
}

fn check_symmetric(atoms: &[(f64, f64)], density: Option<&[f64]>) -> bool {
    for &(x, w) in atoms {
        let mirrored: f64 = atoms
            .iter()
            .filter(|(y, _)| (y + x).abs() <= SYMMETRY_TOL)
            .map(|a| a.1)
            .sum();
        let here: f64 = atoms
            .iter()
            .filter(|(y, _)| (y - x).abs() <= SYMMETRY_TOL)
            .map(|a| a.1)
            .sum();
        if (mirrored - here).abs() > SYMMETRY_TOL || (w > 0.0 && mirrored == 0.0) {
            return false;
        }
    }
    if let Some(d) = density {
        let n = d.len();
        // Gauss-Legendre nodes are mirrored exactly: node k <-> node n-1-k.
        for k in 0..n / 2 {
            if (d[k] - d[n - 1 - k]).abs() > SYMMETRY_TOL {
                return false;
            }
        }
    }
    true
}

/// Config-level prior description: a preset name or explicit atoms plus an optional
/// uniform component.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PriorSpec {
    Preset(String),
    Custom {
        #[serde(default)]
        atoms: Vec<[f64; 2]>,
        #[serde(default)]
        uniform_weight: f64,
    },
}

impl Default for PriorSpec {
    fn default() -> Self {
        PriorSpec::Preset("uniform".into())
    }
}

impl PriorSpec {
    pub fn build(&self) -> Result<PriorMeasure> {
        match self {
            PriorSpec::Preset(name) => PriorMeasure::preset(name),
            PriorSpec::Custom { atoms, uniform_weight } => {
                let atoms: Vec<(f64, f64)> = atoms.iter().map(|a| (a[0], a[1])).collect();
                if *uniform_weight > 0.0 {
                    let h = uniform_weight / 2.0;
                    PriorMeasure::new(atoms, Some(&move |_| h), LEGENDRE_NODES)
                } else {
                    PriorMeasure::from_atoms(atoms)
                }
            }
        }
    }

    pub fn label(&self) -> String {
        match self {
            PriorSpec::Preset(name) => name.clone(),
            PriorSpec::Custom { atoms, uniform_weight } => {
                let mut s = String::from("custom");
                for a in atoms {
                    s.push_str(&format!("_{}@{}", a[1], a[0]));
                }
                if *uniform_weight > 0.0 {
                    s.push_str(&format!("_{uniform_weight}u"));
                }
                s
            }
        }
    }
}

/// psi, psi' and psi'' at one natural parameter.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Moments {
    pub psi: f64,
    pub mean: f64,
    pub var: f64,
}

/// A prior reweighted by exp(-d z^2 / 2), with normalised log-weights on the merged support.
#[derive(Debug, Clone)]
pub struct TiltedSite {
    d: f64,
    symmetric: bool,
    // sorted by location
    z: Vec<f64>,
    logw: Vec<f64>,
    // sampling cell per component: atoms have zero width
    cell_lo: Vec<f64>,
    cell_width: Vec<f64>,
}

impl TiltedSite {
    pub fn new(base: &PriorMeasure, d: f64) -> Result<Self> {
        if !d.is_finite() || d < 0.0 {
            return Err(Error::Domain(format!("tilt coefficient d = {d}")));
        }
        // (location, log-mass, cell lo, cell width)
        let mut comps: Vec<(f64, f64, f64, f64)> = Vec::new();
        for &(x, w) in base.atoms() {
            comps.push((x, w.ln(), x, 0.0));
        }
        if let Some(dens) = base.density() {
            let nodes = &base.rule().nodes;
            let n = nodes.len();
            for k in 0..n {
                let mass = base.rule().weights[k] * dens[k];
                if mass <= 0.0 {
                    continue;
                }
                let lo = if k == 0 { -1.0 } else { 0.5 * (nodes[k - 1] + nodes[k]) };
                let hi = if k + 1 == n { 1.0 } else { 0.5 * (nodes[k] + nodes[k + 1]) };
                comps.push((nodes[k], mass.ln(), lo, hi - lo));
            }
        }
        if comps.is_empty() {
            return Err(Error::EmptyMeasure);
        }
        comps.sort_by(|a, b| a.0.total_cmp(&b.0));
        let z: Vec<f64> = comps.iter().map(|c| c.0).collect();
        let mut logw: Vec<f64> = comps.iter().map(|c| c.1 - 0.5 * d * c.0 * c.0).collect();
        let lse = log_sum_exp(&logw);
        for v in &mut logw {
            *v -= lse;
        }
        Ok(TiltedSite {
            d,
            symmetric: base.is_symmetric(),
            z,
            logw,
            cell_lo: comps.iter().map(|c| c.2).collect(),
            cell_width: comps.iter().map(|c| c.3).collect(),
        })
    }

    pub fn d(&self) -> f64 {
        self.d
    }

    pub fn is_symmetric(&self) -> bool {
        self.symmetric
    }

    /// Merged support locations and normalised log-weights of the tilted measure.
    pub fn support(&self) -> (&[f64], &[f64]) {
        (&self.z, &self.logw)
    }

    /// psi, psi', psi'' at theta without argument checks.
    pub fn moments(&self, theta: f64) -> Moments {
        if self.symmetric && theta < 0.0 {
            let m = self.raw_moments(-theta);
            return Moments { psi: m.psi, mean: -m.mean, var: m.var };
        }
        if self.symmetric && theta == 0.0 {
            let m = self.raw_moments(0.0);
            return Moments { mean: 0.0, ..m };
        }
        self.raw_moments(theta)
    }

    fn raw_moments(&self, theta: f64) -> Moments {
        let mut mx = f64::NEG_INFINITY;
        let mut pivot = 0.0;
        for (z, lw) in self.z.iter().zip(&self.logw) {
            let v = lw + theta * z;
            if v > mx {
                mx = v;
                pivot = *z;
            }
        }
        // accumulate around the heaviest point to limit cancellation in the variance
        let (mut s0, mut s1, mut s2) = (0.0, 0.0, 0.0);
        for (z, lw) in self.z.iter().zip(&self.logw) {
            let e = (lw + theta * z - mx).exp();
            let dz = z - pivot;
            s0 += e;
            s1 += e * dz;
            s2 += e * dz * dz;
        }
        let m1 = s1 / s0;
        Moments {
            psi: mx + s0.ln(),
            mean: pivot + m1,
            var: (s2 / s0 - m1 * m1).max(0.0),
        }
    }

    fn check(theta: f64) -> Result<()> {
        if !theta.is_finite() || theta.abs() >= THETA_MAX {
            return Err(Error::Domain(format!("theta = {theta}")));
        }
        Ok(())
    }

    /// psi(theta), the log-MGF of the tilted site.
    pub fn log_mgf(&self, theta: f64) -> Result<f64> {
        Self::check(theta)?;
        Ok(self.moments(theta).psi)
    }

    /// psi'(theta), the mean of the exponential tilt.
    pub fn tilt_mean(&self, theta: f64) -> Result<f64> {
        Self::check(theta)?;
        Ok(self.moments(theta).mean)
    }

    /// psi''(theta), the variance of the exponential tilt.
    pub fn tilt_var(&self, theta: f64) -> Result<f64> {
        Self::check(theta)?;
        Ok(self.moments(theta).var)
    }

    /// Inverse-CDF draw from the exponential tilt at theta.
    pub fn sample_tilted<R: Rng + ?Sized>(&self, theta: f64, rng: &mut R) -> f64 {
        let mut scratch = Vec::with_capacity(self.z.len());
        self.sample_with(theta, rng, &mut scratch)
    }

    /// As `sample_tilted` with a caller-owned buffer, avoiding an allocation per draw.
    pub fn sample_with<R: Rng + ?Sized>(&self, theta: f64, rng: &mut R, buf: &mut Vec<f64>) -> f64 {
        if self.z.len() == 1 {
            // consume the uniform anyway so streams stay aligned across sites
            let _: f64 = rng.random();
            return self.z[0];
        }
        let mut mx = f64::NEG_INFINITY;
        for (z, lw) in self.z.iter().zip(&self.logw) {
            mx = mx.max(lw + theta * z);
        }
        buf.clear();
        let mut total = 0.0;
        for (z, lw) in self.z.iter().zip(&self.logw) {
            total += (lw + theta * z - mx).exp();
            buf.push(total);
        }
        let u: f64 = rng.random::<f64>() * total;
        let k = buf.partition_point(|c| *c <= u).min(self.z.len() - 1);
        let width = self.cell_width[k];
        if width == 0.0 {
            return self.z[k];
        }
        let before = if k == 0 { 0.0 } else { buf[k - 1] };
        let mass = buf[k] - before;
        let frac = if mass > 0.0 { ((u - before) / mass).clamp(0.0, 1.0) } else { 0.5 };
        (self.cell_lo[k] + frac * width).clamp(-1.0, 1.0)
    }
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let mx = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    mx + v.iter().map(|x| (x - mx).exp()).sum::<f64>().ln()
}

/// Sites sharing one base measure, one per diagonal entry d_i.
pub fn make_sites(base: &PriorMeasure, d: &[f64]) -> Result<Vec<TiltedSite>> {
    // designs usually have few distinct diagonals, so reuse equal ones
    let mut out: Vec<TiltedSite> = Vec::with_capacity(d.len());
    for (i, &di) in d.iter().enumerate() {
        if let Some(j) = (0..i).rev().take(8).find(|&j| d[j].to_bits() == di.to_bits()) {
            let s = out[j].clone();
            out.push(s);
        } else {
            out.push(TiltedSite::new(base, di)?);
        }
    }
    Ok(out)
}

/// Convenience alias matching the operation name.
pub fn make_site(base: &PriorMeasure, d: f64) -> Result<TiltedSite> {
    TiltedSite::new(base, d)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn presets_are_normalised_and_symmetric() {
        for name in ["uniform", "rademacher", "three_point", "spike_slab_base"] {
            let p = PriorMeasure::preset(name).unwrap();
            assert!((p.total_mass() - 1.0).abs() < 1e-12, "{name}");
            assert!(p.is_symmetric(), "{name}");
        }
        let skew = PriorMeasure::from_atoms(vec![(0.2, 1.0), (-0.5, 1.0)]).unwrap();
        assert!(!skew.is_symmetric());
        let skew_density = PriorMeasure::new(vec![], Some(&|z| 1.0 + z), 201).unwrap();
        assert!(!skew_density.is_symmetric());
        assert!(PriorMeasure::preset("cauchy").is_err());
    }

    #[test]
    fn empty_and_invalid_measures_are_rejected() {
        assert!(matches!(PriorMeasure::new(vec![], None, 201), Err(Error::EmptyMeasure)));
        assert!(PriorMeasure::from_atoms(vec![(1.5, 1.0)]).is_err());
        assert!(PriorMeasure::from_atoms(vec![(0.5, -1.0)]).is_err());
        assert!(matches!(PriorMeasure::new(vec![], Some(&|_| 0.0), 201), Err(Error::EmptyMeasure)));
    }

    #[test]
    fn site_examples() {
        let rad = PriorMeasure::rademacher();
        let s1 = TiltedSite::new(&rad, 1.0).unwrap();
        let s0 = TiltedSite::new(&rad, 0.0).unwrap();
        for t in [-2.0, 0.0, 0.4, 3.0] {
            assert!((s1.moments(t).psi - s0.moments(t).psi).abs() < 1e-15);
        }
        let unif = PriorMeasure::uniform();
        let u1 = TiltedSite::new(&unif, 1.0).unwrap();
        assert_eq!(u1.tilt_mean(0.0).unwrap(), 0.0);
        assert!(TiltedSite::new(&unif, -1.0).is_err());
        assert!(TiltedSite::new(&unif, f64::NAN).is_err());
    }

    #[test]
    fn closed_forms() {
        let rad = TiltedSite::new(&PriorMeasure::rademacher(), 0.0).unwrap();
        assert_eq!(rad.log_mgf(0.0).unwrap(), 0.0);
        assert!((rad.log_mgf(1.0).unwrap() - 1f64.cosh().ln()).abs() < 1e-15);
        assert!((rad.tilt_mean(0.7).unwrap() - 0.7f64.tanh()).abs() < 1e-15);
        assert!((rad.tilt_var(0.0).unwrap() - 1.0).abs() < 1e-15);
        let rad2 = TiltedSite::new(&PriorMeasure::rademacher(), 2.5).unwrap();
        assert!((rad2.tilt_mean(0.7).unwrap() - 0.7f64.tanh()).abs() < 1e-15);

        let unif = TiltedSite::new(&PriorMeasure::uniform(), 0.0).unwrap();
        assert!((unif.log_mgf(2.0).unwrap() - (2f64.sinh() / 2.0).ln()).abs() < 1e-12);
        assert!((unif.tilt_mean(1.0).unwrap() - (1.0 / 1f64.tanh() - 1.0)).abs() < 1e-12);
        assert!((unif.tilt_var(0.0).unwrap() - 1.0 / 3.0).abs() < 1e-12);

        let two = TiltedSite::new(&PriorMeasure::from_atoms(vec![(0.3, 0.5), (-0.3, 0.5)]).unwrap(), 0.0)
            .unwrap();
        assert!((two.tilt_var(0.0).unwrap() - 0.09).abs() < 1e-15);
    }

    #[test]
    fn domain_errors() {
        let s = TiltedSite::new(&PriorMeasure::uniform(), 0.0).unwrap();
        assert!(s.log_mgf(f64::INFINITY).is_err());
        assert!(s.tilt_mean(f64::NAN).is_err());
        assert!(s.tilt_var(2e6).is_err());
        // large but admissible fields stay finite and inside the support
        let m = s.moments(1e3);
        assert!(m.psi.is_finite() && m.mean < 1.0 && m.mean > 0.99 && m.var > 0.0);
    }

    #[test]
    fn grid_refinement_is_negligible() {
        let a = TiltedSite::new(&PriorMeasure::uniform_with_nodes(200), 1.0).unwrap();
        let b = TiltedSite::new(&PriorMeasure::uniform_with_nodes(400), 1.0).unwrap();
        for t in [-5.0, -1.0, 0.0, 0.5, 3.0, 8.0] {
            assert!((a.moments(t).psi - b.moments(t).psi).abs() < 1e-10, "theta {t}");
        }
    }

    #[test]
    fn sampling() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let delta = TiltedSite::new(&PriorMeasure::point_mass(0.0).unwrap(), 0.3).unwrap();
        for _ in 0..100 {
            assert_eq!(delta.sample_tilted(5.0, &mut rng), 0.0);
        }
        let n = 100_000;
        let rad = TiltedSite::new(&PriorMeasure::rademacher(), 0.0).unwrap();
        let mean: f64 = (0..n).map(|_| rad.sample_tilted(0.0, &mut rng)).sum::<f64>() / n as f64;
        assert!(mean.abs() < 3.0 / (n as f64).sqrt());

        let unif = TiltedSite::new(&PriorMeasure::uniform(), 1.0).unwrap();
        let m = unif.moments(2.0);
        let draws: Vec<f64> = (0..n).map(|_| unif.sample_tilted(2.0, &mut rng)).collect();
        let mean = draws.iter().sum::<f64>() / n as f64;
        assert!(draws.iter().all(|z| z.abs() <= 1.0));
        assert!((mean - m.mean).abs() < 3.0 * (m.var / n as f64).sqrt());

        // atoms are returned exactly in a mixture
        let ss = TiltedSite::new(&PriorMeasure::spike_slab_base(), 0.5).unwrap();
        let zeros = (0..10_000).filter(|_| ss.sample_tilted(0.0, &mut rng) == 0.0).count();
        assert!(zeros > 4000 && zeros < 6500);
    }

    #[test]
    fn make_sites_reuses_equal_diagonals() {
        let sites = make_sites(&PriorMeasure::uniform(), &[0.5, 0.5, 1.0]).unwrap();
        assert_eq!(sites.len(), 3);
        assert_eq!(sites[1].d(), 0.5);
        assert_eq!(sites[2].d(), 1.0);
    }

    #[test]
    fn spec_parsing() {
        let s: PriorSpec = serde_json::from_str("\"rademacher\"").unwrap();
        assert_eq!(s.build().unwrap(), PriorMeasure::rademacher());
        let c: PriorSpec =
            serde_json::from_str(r#"{"atoms": [[0.0, 0.5]], "uniform_weight": 0.5}"#).unwrap();
        let built = c.build().unwrap();
        assert!((built.total_mass() - 1.0).abs() < 1e-12);
        assert!(built.is_symmetric());
    }
}
