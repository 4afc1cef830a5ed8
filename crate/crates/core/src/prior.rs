//! Gaussian-mixture angle prior and the weighted quadrature used for every
//! prior expectation.
//!
//! Integrals run over the fixed angular domain `[-pi/2, pi/2]`. The mixture is
//! not renormalized to that interval; for priors concentrated well inside the
//! domain the discarded tail mass is negligible.

use std::f64::consts::{FRAC_PI_2, PI};

use gauss_quad::GaussLegendre;
use nalgebra::Complex;
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::Normal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::CMat;

/// Density below which the log-derivative is considered numerically undefined.
pub const PDF_FLOOR: f64 = 1e-300;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MixtureComponent {
    pub weight: f64,
    /// Mean angle in radians.
    pub mean: f64,
    /// Variance in radians squared.
    pub variance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<MixtureComponent>", into = "Vec<MixtureComponent>")]
pub struct GaussianMixturePrior {
    components: Vec<MixtureComponent>,
}

impl TryFrom<Vec<MixtureComponent>> for GaussianMixturePrior {
    type Error = Error;
    fn try_from(components: Vec<MixtureComponent>) -> Result<Self> {
        Self::new(components)
    }
}

impl From<GaussianMixturePrior> for Vec<MixtureComponent> {
    fn from(p: GaussianMixturePrior) -> Self {
        p.components
    }
}

impl GaussianMixturePrior {
    pub fn new(components: Vec<MixtureComponent>) -> Result<Self> {
        if components.is_empty() {
            return Err(Error::InvalidPrior("mixture needs at least one component".into()));
        }
        let mut total = 0.0;
        for (k, c) in components.iter().enumerate() {
            if !(c.weight > 0.0) || !c.weight.is_finite() {
                return Err(Error::InvalidPrior(format!("component {k}: weight must be positive")));
            }
            if !(c.variance > 0.0) || !c.variance.is_finite() {
                return Err(Error::InvalidPrior(format!("component {k}: variance must be positive")));
            }
            if !(-FRAC_PI_2..FRAC_PI_2).contains(&c.mean) {
                return Err(Error::InvalidPrior(format!(
                    "component {k}: mean {} outside [-pi/2, pi/2)",
                    c.mean
                )));
            }
            total += c.weight;
        }
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidPrior(format!("weights sum to {total}, expected 1")));
        }
        Ok(Self { components })
    }

    /// A single Gaussian with the given mean and variance.
    pub fn single(mean: f64, variance: f64) -> Result<Self> {
        Self::new(vec![MixtureComponent { weight: 1.0, mean, variance }])
    }

    /// The five-mode mixture used by the reference scenario.
    pub fn reference() -> Self {
        let v3 = 1e-3;
        let v25 = 10f64.powf(-2.5);
        Self::new(vec![
            MixtureComponent { weight: 0.30, mean: -0.81, variance: v3 },
            MixtureComponent { weight: 0.20, mean: -0.72, variance: v25 },
            MixtureComponent { weight: 0.11, mean: -0.18, variance: v3 },
            MixtureComponent { weight: 0.18, mean: 0.75, variance: v25 },
            MixtureComponent { weight: 0.21, mean: 0.93, variance: v3 },
        ])
        .expect("reference prior is valid")
    }

    pub fn components(&self) -> &[MixtureComponent] {
        &self.components
    }

    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }

    pub fn means(&self) -> Vec<f64> {
        self.components.iter().map(|c| c.mean).collect()
    }

    pub fn pdf(&self, theta: f64) -> f64 {
        self.components
            .iter()
            .map(|c| c.weight * normal_pdf(theta, c.mean, c.variance))
            .sum()
    }

    /// Closed-form derivative of the density.
    pub fn pdf_deriv(&self, theta: f64) -> f64 {
        self.components
            .iter()
            .map(|c| -c.weight * (theta - c.mean) / c.variance * normal_pdf(theta, c.mean, c.variance))
            .sum()
    }

    /// `d/dtheta ln p(theta)`.
    pub fn log_pdf_deriv(&self, theta: f64) -> Result<f64> {
        let p = self.pdf(theta);
        if !(p > PDF_FLOOR) {
            return Err(Error::Underflow { theta });
        }
        Ok(self.pdf_deriv(theta) / p)
    }

    pub fn ln_pdf(&self, theta: f64) -> f64 {
        self.pdf(theta).ln()
    }

    /// Prior Fisher information `E[(d ln p / dtheta)^2]` by quadrature.
    ///
    /// Nodes where the density underflows contribute nothing.
    pub fn fisher_info(&self, quad: &QuadratureRule) -> f64 {
        quad.iter()
            .map(|(theta, w)| {
                let p = self.pdf(theta);
                if p > PDF_FLOOR {
                    let d = self.pdf_deriv(theta);
                    w * d * d / p
                } else {
                    0.0
                }
            })
            .sum()
    }

    /// `sum_i w_i f(theta_i) p(theta_i)` over the quadrature nodes.
    pub fn integrate_weighted<T, F>(&self, quad: &QuadratureRule, f: F) -> T
    where
        T: Weighted,
        F: Fn(f64) -> T,
    {
        let mut iter = quad.iter();
        let (t0, w0) = iter.next().expect("quadrature rule has nodes");
        let mut acc = f(t0).scaled(w0 * self.pdf(t0));
        for (theta, w) in iter {
            acc.accumulate(&f(theta), w * self.pdf(theta));
        }
        acc
    }

    /// i.i.d. draws from the mixture; deterministic in `seed`.
    pub fn sample(&self, seed: u64, n: usize) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        self.sample_with(&mut rng, n)
    }

    pub fn sample_with<R: rand::Rng + ?Sized>(&self, rng: &mut R, n: usize) -> Vec<f64> {
        let picker = WeightedIndex::new(self.components.iter().map(|c| c.weight))
            .expect("weights validated at construction");
        let normals: Vec<Normal<f64>> = self
            .components
            .iter()
            .map(|c| Normal::new(c.mean, c.variance.sqrt()).expect("positive variance"))
            .collect();
        (0..n)
            .map(|_| normals[picker.sample(rng)].sample(rng))
            .collect()
    }

    /// Component index by descending weight; ties keep the lower index first.
    pub fn weight_order(&self) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.len()).collect();
        idx.sort_by(|&a, &b| {
            self.components[b]
                .weight
                .total_cmp(&self.components[a].weight)
                .then(a.cmp(&b))
        });
        idx
    }

    pub fn highest_weight_mean(&self) -> f64 {
        self.components[self.weight_order()[0]].mean
    }

    /// Grid argmax of the density over `[-pi/2, pi/2]`.
    pub fn mode_on_grid(&self, points: usize) -> f64 {
        let points = points.max(2);
        let step = PI / (points - 1) as f64;
        (0..points)
            .map(|i| -FRAC_PI_2 + step * i as f64)
            .map(|t| (t, self.pdf(t)))
            .fold((0.0, f64::NEG_INFINITY), |best, cur| if cur.1 > best.1 { cur } else { best })
            .0
    }
}

fn normal_pdf(x: f64, mean: f64, variance: f64) -> f64 {
    let d = x - mean;
    (-(d * d) / (2.0 * variance)).exp() / (2.0 * PI * variance).sqrt()
}

/// Values that can be accumulated with real weights by [`GaussianMixturePrior::integrate_weighted`].
pub trait Weighted: Sized {
    fn scaled(self, w: f64) -> Self;
    fn accumulate(&mut self, other: &Self, w: f64);
}

impl Weighted for f64 {
    fn scaled(self, w: f64) -> Self {
        self * w
    }
    fn accumulate(&mut self, other: &Self, w: f64) {
        *self += other * w;
    }
}

impl Weighted for Complex<f64> {
    fn scaled(self, w: f64) -> Self {
        self * w
    }
    fn accumulate(&mut self, other: &Self, w: f64) {
        *self += other * w;
    }
}

impl Weighted for CMat {
    fn scaled(self, w: f64) -> Self {
        self.map(|z| z * w)
    }
    fn accumulate(&mut self, other: &Self, w: f64) {
        self.zip_apply(other, |a, b| *a += b * w);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureRule {
    nodes: Vec<f64>,
    weights: Vec<f64>,
    lo: f64,
    hi: f64,
}

impl QuadratureRule {
    pub const DEFAULT_PANELS: usize = 64;
    pub const DEFAULT_ORDER: usize = 16;

    pub fn new(nodes: Vec<f64>, weights: Vec<f64>, lo: f64, hi: f64) -> Result<Self> {
        if nodes.is_empty() || nodes.len() != weights.len() {
            return Err(Error::InvalidQuadrature("nodes and weights must be non-empty and equal length".into()));
        }
        if !(hi > lo) {
            return Err(Error::InvalidQuadrature(format!("empty domain [{lo}, {hi}]")));
        }
        if nodes.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidQuadrature("nodes must be strictly increasing".into()));
        }
        if nodes[0] < lo || *nodes.last().unwrap() > hi {
            return Err(Error::InvalidQuadrature("nodes must lie inside the domain".into()));
        }
        if weights.iter().any(|&w| !(w > 0.0)) {
            return Err(Error::InvalidQuadrature("weights must be positive".into()));
        }
        let total: f64 = weights.iter().sum();
        if (total - (hi - lo)).abs() > 1e-10 * (hi - lo).max(1.0) {
            return Err(Error::InvalidQuadrature(format!(
                "weights sum to {total}, domain length is {}",
                hi - lo
            )));
        }
        Ok(Self { nodes, weights, lo, hi })
    }

    /// Composite Gauss-Legendre rule: `panels` equal sub-intervals with
    /// `order` nodes each.
    pub fn composite_gauss_legendre(lo: f64, hi: f64, panels: usize, order: usize) -> Result<Self> {
        if panels == 0 {
            return Err(Error::InvalidQuadrature("need at least one panel".into()));
        }
        let base = GaussLegendre::new(order)
            .map_err(|e| Error::InvalidQuadrature(format!("Gauss-Legendre order {order}: {e}")))?;
        let mut pairs: Vec<(f64, f64)> = base.as_node_weight_pairs().to_vec();
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        let width = (hi - lo) / panels as f64;
        let mut nodes = Vec::with_capacity(panels * order);
        let mut weights = Vec::with_capacity(panels * order);
        for p in 0..panels {
            let a = lo + width * p as f64;
            for &(x, w) in &pairs {
                nodes.push(a + 0.5 * width * (x + 1.0));
                weights.push(0.5 * width * w);
            }
        }
        Self::new(nodes, weights, lo, hi)
    }

    /// Composite rule over consecutive segments `[breaks[i], breaks[i+1]]`,
    /// each split into `panels` panels. Used to resolve very narrow priors.
    pub fn piecewise_gauss_legendre(breaks: &[f64], panels: usize, order: usize) -> Result<Self> {
        if breaks.len() < 2 {
            return Err(Error::InvalidQuadrature("need at least two breakpoints".into()));
        }
        let mut nodes = Vec::new();
        let mut weights = Vec::new();
        for seg in breaks.windows(2) {
            let part = Self::composite_gauss_legendre(seg[0], seg[1], panels, order)?;
            nodes.extend_from_slice(&part.nodes);
            weights.extend_from_slice(&part.weights);
        }
        Self::new(nodes, weights, breaks[0], *breaks.last().unwrap())
    }

    /// Angle-domain rule with an extra dense segment of half-width
    /// `halfwidth` around `center`.
    pub fn refined_around(center: f64, halfwidth: f64) -> Result<Self> {
        Self::piecewise_gauss_legendre(
            &[-FRAC_PI_2, center - halfwidth, center + halfwidth, FRAC_PI_2],
            32,
            16,
        )
    }

    /// Composite rule over `[-pi/2, pi/2]`.
    pub fn over_angle_domain(panels: usize, order: usize) -> Result<Self> {
        Self::composite_gauss_legendre(-FRAC_PI_2, FRAC_PI_2, panels, order)
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn domain(&self) -> (f64, f64) {
        (self.lo, self.hi)
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.nodes.iter().copied().zip(self.weights.iter().copied())
    }

    pub fn covers_angle_domain(&self) -> bool {
        self.lo <= -FRAC_PI_2 + 1e-12 && self.hi >= FRAC_PI_2 - 1e-12
    }

    pub fn integrate(&self, f: impl Fn(f64) -> f64) -> f64 {
        self.iter().map(|(x, w)| w * f(x)).sum()
    }
}

impl Default for QuadratureRule {
    fn default() -> Self {
        Self::over_angle_domain(Self::DEFAULT_PANELS, Self::DEFAULT_ORDER).expect("default rule is valid")
    }
}
