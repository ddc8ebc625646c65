//! Driving noise laws: zero mean, identity covariance, verified moment and
//! exponential-moment conditions, exact quadrature where the law is discrete
//! and Gauss-Hermite where it is normal, plus reproducible sampling.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::SymMatrix;
use crate::quadrature::gauss_hermite;
use crate::rng::substream;

/// One atom of a finitely supported law.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Atom {
    pub point: Vec<f64>,
    pub prob: f64,
}

/// The i.i.d. step distribution. Normal and Rademacher are the canonical
/// instances; FiniteSupport admits arbitrary discrete laws, including ones
/// that deliberately violate the moment conditions (the validator reports,
/// it does not reject).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum NoiseDistribution {
    StandardNormal { d: usize },
    Rademacher { d: usize },
    FiniteSupport { atoms: Vec<Atom> },
}

/// Nodes and probability weights realizing the integral against the law.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QuadratureRule {
    pub nodes: Vec<Vec<f64>>,
    pub weights: Vec<f64>,
    /// Polynomial degree integrated exactly; None when the rule is the law
    /// itself (discrete support), hence exact for every integrand.
    pub exactness_degree: Option<u32>,
}

/// Outcome of the mean/covariance/third-moment check.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MomentReport {
    pub mean: Vec<f64>,
    pub covariance: SymMatrix,
    pub third_abs_moment: f64,
    pub tolerance: f64,
    pub mean_ok: bool,
    pub cov_ok: bool,
    pub pass: bool,
}

/// Outcome of the scaled moment-generating-function boundedness probe.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MgfReport {
    pub radius: f64,
    pub n_max: u32,
    pub max_value: f64,
    pub bound: f64,
    pub pass: bool,
    /// The probe covers a finite radius and finitely many n only.
    pub note: String,
}

impl NoiseDistribution {
    pub fn dim(&self) -> usize {
        match self {
            NoiseDistribution::StandardNormal { d } | NoiseDistribution::Rademacher { d } => *d,
            NoiseDistribution::FiniteSupport { atoms } => {
                atoms.first().map_or(0, |a| a.point.len())
            }
        }
    }

    /// Structural validation: dimensions positive and consistent,
    /// probabilities positive and summing to one.
    pub fn validate(&self) -> Result<()> {
        match self {
            NoiseDistribution::StandardNormal { d } | NoiseDistribution::Rademacher { d } => {
                if *d == 0 {
                    return Err(Error::InvalidArgument("dimension must be >= 1".into()));
                }
                Ok(())
            }
            NoiseDistribution::FiniteSupport { atoms } => {
                if atoms.is_empty() {
                    return Err(Error::InvalidArgument("finite support needs atoms".into()));
                }
                let d = atoms[0].point.len();
                if d == 0 {
                    return Err(Error::InvalidArgument("atoms must have dimension >= 1".into()));
                }
                let mut total = 0.0;
                for (i, a) in atoms.iter().enumerate() {
                    if a.point.len() != d {
                        return Err(Error::DimensionMismatch { expected: d, got: a.point.len() });
                    }
                    if a.prob.is_nan() || a.prob <= 0.0 {
                        return Err(Error::InvalidArgument(format!(
                            "atom {i} has non-positive probability {}",
                            a.prob
                        )));
                    }
                    total += a.prob;
                }
                if (total - 1.0).abs() > 1e-12 {
                    return Err(Error::InvalidArgument(format!(
                        "atom probabilities sum to {total}, expected 1"
                    )));
                }
                Ok(())
            }
        }
    }

    pub fn is_finite_support(&self) -> bool {
        !matches!(self, NoiseDistribution::StandardNormal { .. })
    }

    /// Quadrature rule realizing integrals against the law. Discrete laws
    /// get their own atoms (exact); the normal law gets a tensorized
    /// Gauss-Hermite rule with `order` nodes per axis.
    pub fn quadrature(&self, order: usize) -> Result<QuadratureRule> {
        if order < 2 {
            return Err(Error::InvalidArgument("quadrature order must be >= 2".into()));
        }
        match self {
            NoiseDistribution::Rademacher { d } => {
                let mut nodes = Vec::with_capacity(1 << d);
                for mask in 0u64..(1u64 << d) {
                    let pt: Vec<f64> = (0..*d)
                        .map(|i| if mask >> i & 1 == 1 { 1.0 } else { -1.0 })
                        .collect();
                    nodes.push(pt);
                }
                let w = 1.0 / nodes.len() as f64;
                let weights = vec![w; nodes.len()];
                Ok(QuadratureRule { nodes, weights, exactness_degree: None })
            }
            NoiseDistribution::FiniteSupport { atoms } => Ok(QuadratureRule {
                nodes: atoms.iter().map(|a| a.point.clone()).collect(),
                weights: atoms.iter().map(|a| a.prob).collect(),
                exactness_degree: None,
            }),
            NoiseDistribution::StandardNormal { d } => {
                let (x1, w1) = gauss_hermite(order)?;
                let mut nodes = Vec::with_capacity(order.pow(*d as u32));
                let mut weights = Vec::with_capacity(nodes.capacity());
                let mut idx = vec![0usize; *d];
                loop {
                    nodes.push(idx.iter().map(|&i| x1[i]).collect());
                    weights.push(idx.iter().map(|&i| w1[i]).product());
                    if !crate::domain::advance(&mut idx, order) {
                        break;
                    }
                }
                Ok(QuadratureRule {
                    nodes,
                    weights,
                    exactness_degree: Some(2 * order as u32 - 1),
                })
            }
        }
    }

    /// Atoms and probabilities when the law is discrete.
    pub fn finite_atoms(&self) -> Option<QuadratureRule> {
        match self {
            NoiseDistribution::StandardNormal { .. } => None,
            _ => self.quadrature(2).ok(),
        }
    }

    /// Mean, covariance and third absolute moment (sup norm), with pass/fail
    /// against zero mean and identity covariance. Discrete laws are summed
    /// exactly; the normal law is integrated by high-order quadrature, which
    /// is exact for the polynomial moments. Failures are reported, never
    /// thrown.
    pub fn validate_moments(&self) -> Result<MomentReport> {
        self.validate()?;
        let d = self.dim();
        let rule = match self {
            NoiseDistribution::StandardNormal { .. } => self.quadrature(13)?,
            _ => self.finite_atoms().expect("discrete law has atoms"),
        };
        let mut mean = vec![0.0; d];
        let mut cov = SymMatrix::zeros(d);
        let mut third = 0.0;
        for (x, &w) in rule.nodes.iter().zip(&rule.weights) {
            for i in 0..d {
                mean[i] += w * x[i];
            }
            for i in 0..d {
                for j in i..d {
                    cov.set(i, j, cov.get(i, j) + w * x[i] * x[j]);
                }
            }
            let nrm = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            third += w * nrm.powi(3);
        }
        let tolerance = 1e-10;
        let mean_ok = mean.iter().all(|m| m.abs() <= tolerance);
        let cov_ok = cov.sub(&SymMatrix::identity(d)).max_abs_entry() <= tolerance;
        Ok(MomentReport {
            mean,
            covariance: cov,
            third_abs_moment: third,
            tolerance,
            mean_ok,
            cov_ok,
            pass: mean_ok && cov_ok && third.is_finite(),
        })
    }

    /// Moment generating function at y.
    pub fn mgf(&self, y: &[f64]) -> Result<f64> {
        if y.len() != self.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), got: y.len() });
        }
        Ok(match self {
            NoiseDistribution::StandardNormal { .. } => {
                (0.5 * y.iter().map(|v| v * v).sum::<f64>()).exp()
            }
            NoiseDistribution::Rademacher { .. } => y.iter().map(|v| v.cosh()).product(),
            NoiseDistribution::FiniteSupport { atoms } => atoms
                .iter()
                .map(|a| {
                    a.prob * a.point.iter().zip(y).map(|(x, v)| x * v).sum::<f64>().exp()
                })
                .sum(),
        })
    }

    /// Empirical check that psi(y / sqrt(n))^n stays bounded over
    /// n in {1, 2, 4, ..., n_max} and y in a grid of the sup-norm ball of
    /// the given radius. The reference bound is exp(radius^2 d) times a
    /// safety factor of 10, a generous ceiling for laws with unit
    /// covariance.
    pub fn validate_mgf_bound(&self, radius: f64, n_max: u32) -> Result<MgfReport> {
        if radius.is_nan() || radius <= 0.0 {
            return Err(Error::InvalidArgument("radius must be positive".into()));
        }
        if n_max < 1 {
            return Err(Error::InvalidArgument("n_max must be >= 1".into()));
        }
        self.validate()?;
        let d = self.dim();
        let mut ns: Vec<u32> = Vec::new();
        let mut n = 1u32;
        while n <= n_max {
            ns.push(n);
            if n > n_max / 2 {
                break;
            }
            n *= 2;
        }
        if *ns.last().unwrap() != n_max {
            ns.push(n_max);
        }
        // 5 points per axis covering [-radius, radius], corners included.
        let per_axis: Vec<f64> = (0..5).map(|k| -radius + radius * k as f64 / 2.0).collect();
        let mut max_value = 0.0f64;
        let mut idx = vec![0usize; d];
        loop {
            let y: Vec<f64> = idx.iter().map(|&i| per_axis[i]).collect();
            for &n in &ns {
                let scaled: Vec<f64> = y.iter().map(|v| v / (n as f64).sqrt()).collect();
                let val = self.mgf(&scaled)?.powi(n as i32);
                if !val.is_finite() {
                    return Ok(MgfReport {
                        radius,
                        n_max,
                        max_value: f64::INFINITY,
                        bound: (radius * radius * d as f64).exp() * 10.0,
                        pass: false,
                        note: scope_note(),
                    });
                }
                max_value = max_value.max(val);
            }
            if !crate::domain::advance(&mut idx, per_axis.len()) {
                break;
            }
        }
        let bound = (radius * radius * d as f64).exp() * 10.0;
        Ok(MgfReport {
            radius,
            n_max,
            max_value,
            bound,
            pass: max_value <= bound,
            note: scope_note(),
        })
    }

    /// Draws one point using the caller's RNG.
    pub fn draw(&self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        match self {
            NoiseDistribution::StandardNormal { d } => {
                (0..*d).map(|_| rng.sample(rand_distr::StandardNormal)).collect()
            }
            NoiseDistribution::Rademacher { d } => (0..*d)
                .map(|_| if rng.gen::<f64>() < 0.5 { -1.0 } else { 1.0 })
                .collect(),
            NoiseDistribution::FiniteSupport { atoms } => {
                atoms[self.draw_index(rng)].point.clone()
            }
        }
    }

    /// Draws an atom index for discrete laws (Rademacher included: the index
    /// enumerates sign patterns as in `quadrature`).
    pub fn draw_index(&self, rng: &mut ChaCha8Rng) -> usize {
        match self {
            NoiseDistribution::StandardNormal { .. } => {
                unreachable!("index sampling requires finite support")
            }
            NoiseDistribution::Rademacher { d } => {
                let mut mask = 0usize;
                for i in 0..*d {
                    if rng.gen::<f64>() >= 0.5 {
                        mask |= 1 << i;
                    }
                }
                mask
            }
            NoiseDistribution::FiniteSupport { atoms } => {
                let u: f64 = rng.gen();
                let mut acc = 0.0;
                for (i, a) in atoms.iter().enumerate() {
                    acc += a.prob;
                    if u < acc {
                        return i;
                    }
                }
                atoms.len() - 1
            }
        }
    }

    /// `count` i.i.d. draws, one counter-indexed substream per draw, so the
    /// result is independent of how callers partition the work.
    pub fn sample(&self, seed: u64, count: usize) -> Vec<Vec<f64>> {
        (0..count)
            .map(|i| {
                let mut rng = substream(seed, i as u64);
                self.draw(&mut rng)
            })
            .collect()
    }
}

fn scope_note() -> String {
    "checked on a finite (n, y) grid for the given radius only; the analytic \
     condition quantifies over every compact set"
        .to_string()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn rademacher(d: usize) -> NoiseDistribution {
        NoiseDistribution::Rademacher { d }
    }

    fn normal(d: usize) -> NoiseDistribution {
        NoiseDistribution::StandardNormal { d }
    }

    fn skewed() -> NoiseDistribution {
        NoiseDistribution::FiniteSupport {
            atoms: vec![
                Atom { point: vec![1.0], prob: 0.5 },
                Atom { point: vec![-0.5], prob: 0.5 },
            ],
        }
    }

    #[test]
    fn rademacher_quadrature_is_two_point() {
        let q = rademacher(1).quadrature(5).unwrap();
        assert_eq!(q.nodes, vec![vec![-1.0], vec![1.0]]);
        assert_eq!(q.weights, vec![0.5, 0.5]);
        assert!(q.exactness_degree.is_none());
    }

    #[test]
    fn normal_quadrature_matches_gaussian_moments() {
        let q = normal(1).quadrature(5).unwrap();
        let m2: f64 = q.nodes.iter().zip(&q.weights).map(|(x, w)| w * x[0] * x[0]).sum();
        let m4: f64 = q.nodes.iter().zip(&q.weights).map(|(x, w)| w * x[0].powi(4)).sum();
        assert_abs_diff_eq!(m2, 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(m4, 3.0, epsilon = 1e-12);
        assert_eq!(q.exactness_degree, Some(9));
    }

    #[test]
    fn normal_tensor_rule_has_order_pow_d_nodes() {
        let q = normal(2).quadrature(3).unwrap();
        assert_eq!(q.nodes.len(), 9);
        assert_abs_diff_eq!(q.weights.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
        // Cross moment E x y = 0 and marginals have unit variance.
        let mxy: f64 = q.nodes.iter().zip(&q.weights).map(|(x, w)| w * x[0] * x[1]).sum();
        assert_abs_diff_eq!(mxy, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn quadrature_rejects_tiny_order() {
        assert!(normal(1).quadrature(1).is_err());
        assert!(rademacher(1).quadrature(0).is_err());
    }

    #[test]
    fn moments_pass_for_canonical_laws() {
        for d in 1..=3 {
            for nu in [normal(d), rademacher(d)] {
                let rep = nu.validate_moments().unwrap();
                assert!(rep.pass, "law {nu:?} failed: {rep:?}");
            }
        }
        let r = rademacher(1).validate_moments().unwrap();
        assert_abs_diff_eq!(r.third_abs_moment, 1.0, epsilon = 1e-14);
    }

    #[test]
    fn moments_fail_for_skewed_law() {
        let rep = skewed().validate_moments().unwrap();
        assert!(!rep.pass);
        assert_abs_diff_eq!(rep.mean[0], 0.25, epsilon = 1e-14);
    }

    #[test]
    fn mgf_probe_normal_hits_gaussian_value() {
        let rep = normal(1).validate_mgf_bound(2.0, 64).unwrap();
        assert_abs_diff_eq!(rep.max_value, 2.0f64.exp(), epsilon = 1e-9);
        assert!(rep.pass);
    }

    #[test]
    fn mgf_probe_rademacher_below_gaussian_value() {
        let rep = rademacher(1).validate_mgf_bound(2.0, 64).unwrap();
        assert!(rep.max_value <= 2.0f64.exp() + 1e-12);
        // cosh(t)^n increases toward exp(2) along n = t^2 -> 0.
        assert!(rep.max_value > 7.2);
        assert!(rep.pass);
    }

    #[test]
    fn mgf_probe_bounded_support_passes() {
        let sym = NoiseDistribution::FiniteSupport {
            atoms: vec![
                Atom { point: vec![2.0], prob: 0.2 },
                Atom { point: vec![-0.5], prob: 0.8 },
            ],
        };
        assert!(sym.validate_mgf_bound(2.0, 128).unwrap().pass);
    }

    #[test]
    fn sampling_is_reproducible_and_sized() {
        let nu = rademacher(2);
        assert!(nu.sample(9, 0).is_empty());
        let a = nu.sample(9, 32);
        let b = nu.sample(9, 32);
        assert_eq!(a, b);
        assert!(a.iter().all(|p| p.iter().all(|x| x.abs() == 1.0)));
    }

    #[test]
    fn sample_mean_within_clt_band() {
        let nu = rademacher(1);
        let n = 1_000_000;
        let mean: f64 =
            nu.sample(1234, n).iter().map(|p| p[0]).sum::<f64>() / n as f64;
        assert!(mean.abs() <= 4.0 / (n as f64).sqrt(), "mean {mean}");
    }

    #[test]
    fn sampling_agrees_with_quadrature_on_bounded_function() {
        // f bounded by 1; MC stderr <= 1/sqrt(N).
        let f = |x: &[f64]| (1.7 * x[0]).cos();
        let nu = normal(1);
        let q = nu.quadrature(21).unwrap();
        let quad: f64 = q.nodes.iter().zip(&q.weights).map(|(x, w)| w * f(x)).sum();
        let n = 200_000;
        let mc: f64 = nu.sample(77, n).iter().map(|p| f(p)).sum::<f64>() / n as f64;
        assert!((mc - quad).abs() <= 4.0 / (n as f64).sqrt());
    }

    #[test]
    fn finite_support_structural_validation() {
        let bad = NoiseDistribution::FiniteSupport {
            atoms: vec![Atom { point: vec![1.0], prob: 0.6 }],
        };
        assert!(bad.validate().is_err());
        assert!(skewed().validate().is_ok());
    }
}
