//! Path functionals with growth certificates.
//!
//! Every payoff carries constants (h1, h2) certifying
//!
//!   |F(p) - F(q)| <= h1 * exp(h2 * (||u_p|| + ||u_q|| + ||v_p|| + ||v_q||))
//!                       * (||u_p - u_q|| + ||v_p - v_q||)
//!
//! in the path sup norms. The constants are declared, not inferred; a
//! randomized checker hunts for violations.

use std::fmt;
use std::sync::Arc;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::SymMatrix;
use crate::path::{DiscretePathPair, InterpolatedPath};
use crate::rng::substream;

/// How much state a payoff actually needs at the terminal time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MarkovDescriptor {
    /// Depends on (u(1), v(1)) only.
    Terminal,
    /// Depends on (u(1), v(1)) and the running maximum of the first
    /// martingale component.
    TerminalPlusRunningMax,
    /// Depends on (u(1), v(1)) and the time average of the first
    /// martingale component.
    PathAverage,
    /// Needs the full history; only the tree solver applies.
    None,
}

/// Collapsed state handed to reduced evaluators by grid solvers.
#[derive(Debug, Clone, PartialEq)]
pub struct ReducedState {
    pub u: Vec<f64>,
    pub v: SymMatrix,
    /// Auxiliary scalar: running max or running average, 0.0 when unused.
    pub aux: f64,
}

type PathEval = Arc<dyn Fn(&InterpolatedPath) -> f64 + Send + Sync>;
type ReducedEval = Arc<dyn Fn(&ReducedState) -> f64 + Send + Sync>;

#[derive(Clone)]
pub struct PayoffFunctional {
    pub name: String,
    pub d: usize,
    pub h1: f64,
    pub h2: f64,
    /// Uniform bound on |F| when one exists; enables bounded-payoff
    /// shortcuts in diagnostics.
    pub bound: Option<f64>,
    pub markov: MarkovDescriptor,
    eval: PathEval,
    reduced: Option<ReducedEval>,
}

impl fmt::Debug for PayoffFunctional {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("PayoffFunctional")
            .field("name", &self.name)
            .field("d", &self.d)
            .field("h1", &self.h1)
            .field("h2", &self.h2)
            .field("bound", &self.bound)
            .field("markov", &self.markov)
            .finish()
    }
}

impl PayoffFunctional {
    pub fn new_full(
        name: &str,
        d: usize,
        h1: f64,
        h2: f64,
        eval: impl Fn(&InterpolatedPath) -> f64 + Send + Sync + 'static,
    ) -> Result<Self> {
        if h1.is_nan() || h1 <= 0.0 || h2.is_nan() || h2 < 0.0 || d == 0 {
            return Err(Error::InvalidArgument(
                "payoff needs h1 > 0, h2 >= 0 and d >= 1".into(),
            ));
        }
        Ok(PayoffFunctional {
            name: name.to_string(),
            d,
            h1,
            h2,
            bound: None,
            markov: MarkovDescriptor::None,
            eval: Arc::new(eval),
            reduced: None,
        })
    }

    pub fn new_markov(
        name: &str,
        d: usize,
        h1: f64,
        h2: f64,
        markov: MarkovDescriptor,
        eval: impl Fn(&InterpolatedPath) -> f64 + Send + Sync + 'static,
        reduced: impl Fn(&ReducedState) -> f64 + Send + Sync + 'static,
    ) -> Result<Self> {
        let mut p = Self::new_full(name, d, h1, h2, eval)?;
        p.markov = markov;
        p.reduced = Some(Arc::new(reduced));
        Ok(p)
    }

    pub fn with_bound(mut self, bound: f64) -> Self {
        self.bound = Some(bound);
        self
    }

    pub fn has_reduced(&self) -> bool {
        self.reduced.is_some()
    }

    pub fn evaluate(&self, path: &InterpolatedPath) -> Result<f64> {
        if path.dim() != self.d {
            return Err(Error::DimensionMismatch { expected: self.d, got: path.dim() });
        }
        let value = (self.eval)(path);
        if !value.is_finite() {
            return Err(Error::NonFinitePayoff { value });
        }
        Ok(value)
    }

    pub fn evaluate_reduced(&self, state: &ReducedState) -> Result<f64> {
        let f = self.reduced.as_ref().ok_or_else(|| {
            Error::InvalidArgument(format!(
                "payoff '{}' has no reduced-state evaluator",
                self.name
            ))
        })?;
        if state.u.len() != self.d || state.v.dim() != self.d {
            return Err(Error::DimensionMismatch { expected: self.d, got: state.u.len() });
        }
        let value = f(state);
        if !value.is_finite() {
            return Err(Error::NonFinitePayoff { value });
        }
        Ok(value)
    }

    /// Certified right-hand side of the growth inequality for a path pair.
    pub fn growth_bound(&self, p: &InterpolatedPath, q: &InterpolatedPath) -> f64 {
        let (up, vp) = p.sup_norm();
        let (uq, vq) = q.sup_norm();
        let (du, dv) = p.sup_distance(q);
        self.h1 * (self.h2 * (up + uq + vp + vq)).exp() * (du + dv)
    }
}

/// Serializable recipe for the built-in payoff families.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum PayoffSpec {
    /// F = value, any path.
    Constant {
        value: f64,
        #[serde(default = "default_dim")]
        d: usize,
    },
    /// (u1(1) - strike)^+.
    TerminalCall {
        #[serde(default)]
        strike: f64,
    },
    /// (strike - u1(1))^+.
    TerminalPut {
        #[serde(default)]
        strike: f64,
    },
    /// slope * u1(1) + intercept.
    TerminalLinear {
        #[serde(default = "default_slope")]
        slope: f64,
        #[serde(default)]
        intercept: f64,
    },
    /// u1(1)^2.
    TerminalSquare,
    /// -|u1(1)|; concave, handy for lower-envelope checks.
    TerminalNegAbs,
    /// trace v(1).
    QvTrace {
        #[serde(default = "default_dim")]
        d: usize,
    },
    /// max_t u1(t).
    LookbackMax,
    /// integral of u1 over [0, 1].
    PathAverage,
    /// (S(1) - strike)^+ for S = s0 * exp(u1 - v11) (or v11/2 when
    /// half_convention is set).
    StockCall {
        s0: f64,
        strike: f64,
        #[serde(default)]
        half_convention: bool,
    },
}

fn default_dim() -> usize {
    1
}

fn default_slope() -> f64 {
    1.0
}

impl PayoffSpec {
    pub fn name(&self) -> &'static str {
        match self {
            PayoffSpec::Constant { .. } => "constant",
            PayoffSpec::TerminalCall { .. } => "terminal_call",
            PayoffSpec::TerminalPut { .. } => "terminal_put",
            PayoffSpec::TerminalLinear { .. } => "terminal_linear",
            PayoffSpec::TerminalSquare => "terminal_square",
            PayoffSpec::TerminalNegAbs => "terminal_neg_abs",
            PayoffSpec::QvTrace { .. } => "qv_trace",
            PayoffSpec::LookbackMax => "lookback_max",
            PayoffSpec::PathAverage => "path_average",
            PayoffSpec::StockCall { .. } => "stock_call",
        }
    }

    pub fn build(&self) -> Result<PayoffFunctional> {
        use MarkovDescriptor::*;
        match *self {
            PayoffSpec::Constant { value, d } => {
                let p = PayoffFunctional::new_markov(
                    "constant",
                    d,
                    1.0,
                    0.0,
                    Terminal,
                    move |_| value,
                    move |_| value,
                )?;
                Ok(p.with_bound(value.abs()))
            }
            PayoffSpec::TerminalCall { strike } => PayoffFunctional::new_markov(
                "terminal_call",
                1,
                1.0,
                0.0,
                Terminal,
                move |p| (p.eval_u(1.0).unwrap()[0] - strike).max(0.0),
                move |s| (s.u[0] - strike).max(0.0),
            ),
            PayoffSpec::TerminalPut { strike } => PayoffFunctional::new_markov(
                "terminal_put",
                1,
                1.0,
                0.0,
                Terminal,
                move |p| (strike - p.eval_u(1.0).unwrap()[0]).max(0.0),
                move |s| (strike - s.u[0]).max(0.0),
            ),
            PayoffSpec::TerminalLinear { slope, intercept } => {
                let h1 = if slope == 0.0 { 1.0 } else { slope.abs() };
                PayoffFunctional::new_markov(
                    "terminal_linear",
                    1,
                    h1,
                    0.0,
                    Terminal,
                    move |p| slope * p.eval_u(1.0).unwrap()[0] + intercept,
                    move |s| slope * s.u[0] + intercept,
                )
            }
            // |x^2 - y^2| = |x + y| |x - y| <= exp(|x| + |y|) |x - y|.
            PayoffSpec::TerminalSquare => PayoffFunctional::new_markov(
                "terminal_square",
                1,
                1.0,
                1.0,
                Terminal,
                |p| p.eval_u(1.0).unwrap()[0].powi(2),
                |s| s.u[0] * s.u[0],
            ),
            PayoffSpec::TerminalNegAbs => PayoffFunctional::new_markov(
                "terminal_neg_abs",
                1,
                1.0,
                0.0,
                Terminal,
                |p| -p.eval_u(1.0).unwrap()[0].abs(),
                |s| -s.u[0].abs(),
            ),
            PayoffSpec::QvTrace { d } => PayoffFunctional::new_markov(
                "qv_trace",
                d,
                d as f64,
                0.0,
                Terminal,
                |p| p.eval_v(1.0).unwrap().trace(),
                |s| s.v.trace(),
            ),
            PayoffSpec::LookbackMax => PayoffFunctional::new_markov(
                "lookback_max",
                1,
                1.0,
                0.0,
                TerminalPlusRunningMax,
                |p| p.knots().u.iter().map(|x| x[0]).fold(f64::NEG_INFINITY, f64::max),
                |s| s.aux,
            ),
            PayoffSpec::PathAverage => PayoffFunctional::new_markov(
                "path_average",
                1,
                1.0,
                0.0,
                MarkovDescriptor::PathAverage,
                |p| trapezoid_average(p.knots()),
                |s| s.aux,
            ),
            PayoffSpec::StockCall { s0, strike, half_convention } => {
                if s0.is_nan() || s0 <= 0.0 {
                    return Err(Error::InvalidArgument("stock_call needs s0 > 0".into()));
                }
                let scale = if half_convention { 0.5 } else { 1.0 };
                PayoffFunctional::new_markov(
                    "stock_call",
                    1,
                    s0,
                    1.0,
                    Terminal,
                    move |p| {
                        let u = p.eval_u(1.0).unwrap()[0];
                        let v = p.eval_v(1.0).unwrap().get(0, 0);
                        (s0 * (u - scale * v).exp() - strike).max(0.0)
                    },
                    move |s| {
                        (s0 * (s.u[0] - scale * s.v.get(0, 0)).exp() - strike).max(0.0)
                    },
                )
            }
        }
    }
}

/// Time average of the first martingale component under the piecewise-linear
/// embedding: a trapezoid rule over the knots is exact.
pub fn trapezoid_average(p: &DiscretePathPair) -> f64 {
    let n = p.n as f64;
    let mut acc = 0.0;
    for k in 0..p.n {
        acc += 0.5 * (p.u[k][0] + p.u[k + 1][0]) / n;
    }
    acc
}

/// Component-wise exponential stock trajectory S^i_k = s0_i exp(u^i_k - v^ii_k)
/// at the knots (exponent u - v/2 under the half convention). Values between
/// knots interpolate linearly, matching the path embedding.
pub fn stock_path(
    path: &DiscretePathPair,
    s0: &[f64],
    half_convention: bool,
) -> Result<Vec<Vec<f64>>> {
    if s0.len() != path.d {
        return Err(Error::DimensionMismatch { expected: path.d, got: s0.len() });
    }
    if s0.iter().any(|&s| s.is_nan() || s <= 0.0) {
        return Err(Error::InvalidArgument("initial stock levels must be > 0".into()));
    }
    let scale = if half_convention { 0.5 } else { 1.0 };
    Ok((0..=path.n)
        .map(|k| {
            (0..path.d)
                .map(|i| s0[i] * (path.u[k][i] - scale * path.v[k].get(i, i)).exp())
                .collect()
        })
        .collect())
}

/// Outcome of the randomized growth-inequality search.
#[derive(Debug, Clone, Serialize)]
pub struct GrowthCheckReport {
    pub trials: usize,
    pub max_ratio: f64,
    pub pass: bool,
    /// Step count of the worst pair, for reproducing a failure.
    pub worst_n: usize,
}

/// Samples random path pairs with increments scaled like 1/sqrt(n) and
/// consistent quadratic variation, then compares |F(p) - F(q)| against the
/// certified bound. Deterministic in (trials, seed).
pub fn lipschitz_bound_check(
    payoff: &PayoffFunctional,
    trials: usize,
    seed: u64,
) -> GrowthCheckReport {
    let mut max_ratio: f64 = 0.0;
    let mut worst_n = 0;
    for trial in 0..trials {
        let mut rng = substream(seed, trial as u64);
        let n = 2 + (rng.gen::<u64>() % 31) as usize;
        let p = random_path(&mut rng, n, payoff.d);
        // Alternate far-apart and nearby pairs; nearby ones probe the local
        // Lipschitz constant where the exponential factor is least helpful.
        let q = if trial % 2 == 0 {
            random_path(&mut rng, n, payoff.d)
        } else {
            perturb_path(&mut rng, &p)
        };
        let lhs = match (payoff.evaluate(&p.interpolate()), payoff.evaluate(&q.interpolate()))
        {
            (Ok(a), Ok(b)) => (a - b).abs(),
            _ => continue,
        };
        let rhs = payoff.growth_bound(&p.interpolate(), &q.interpolate());
        if rhs == 0.0 {
            continue;
        }
        let ratio = lhs / rhs;
        if ratio > max_ratio {
            max_ratio = ratio;
            worst_n = n;
        }
    }
    GrowthCheckReport { trials, max_ratio, pass: max_ratio <= 1.0 + 1e-9, worst_n }
}

fn random_path<R: Rng>(rng: &mut R, n: usize, d: usize) -> DiscretePathPair {
    let mut path = DiscretePathPair::new(n, d);
    let sqrt_n = (n as f64).sqrt();
    for k in 0..n {
        let mut gammas = vec![0.0; d];
        for g in gammas.iter_mut() {
            *g = 0.2 + 1.0 * rng.gen::<f64>();
        }
        for (i, g) in gammas.iter().enumerate() {
            let y: f64 = StandardNormal.sample(rng);
            path.u[k + 1][i] = path.u[k][i] + g * y / sqrt_n;
        }
        let mut vk = path.v[k].clone();
        for (i, g) in gammas.iter().enumerate() {
            vk.set(i, i, vk.get(i, i) + g * g / n as f64);
        }
        path.v[k + 1] = vk;
    }
    path
}

fn perturb_path<R: Rng>(rng: &mut R, base: &DiscretePathPair) -> DiscretePathPair {
    let mut out = base.clone();
    let eps = 1e-4 * rng.gen::<f64>();
    for k in 1..=base.n {
        let s = k as f64 / base.n as f64;
        for i in 0..base.d {
            out.u[k][i] += eps * s;
            let vii = out.v[k].get(i, i);
            out.v[k].set(i, i, vii + 0.5 * eps * s);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use crate::path::predictable_variation;

    fn random_pair(seed: u64, n: usize) -> DiscretePathPair {
        let mut rng = substream(seed, 0);
        random_path(&mut rng, n, 1)
    }

    #[test]
    fn builtin_certificates_survive_random_search() {
        let specs = [
            PayoffSpec::Constant { value: 3.0, d: 1 },
            PayoffSpec::TerminalCall { strike: 0.5 },
            PayoffSpec::TerminalPut { strike: -0.2 },
            PayoffSpec::TerminalLinear { slope: -2.0, intercept: 1.0 },
            PayoffSpec::TerminalSquare,
            PayoffSpec::TerminalNegAbs,
            PayoffSpec::QvTrace { d: 2 },
            PayoffSpec::LookbackMax,
            PayoffSpec::PathAverage,
            PayoffSpec::StockCall { s0: 1.0, strike: 1.0, half_convention: false },
            PayoffSpec::StockCall { s0: 2.0, strike: 1.5, half_convention: true },
        ];
        for spec in specs {
            let payoff = spec.build().unwrap();
            let report = lipschitz_bound_check(&payoff, 10_000, 42);
            assert!(
                report.pass,
                "{} violated its certificate: max ratio {}",
                payoff.name, report.max_ratio
            );
        }
    }

    #[test]
    fn square_with_flat_certificate_is_caught() {
        // x^2 is not Lipschitz; dropping the exponential factor must fail.
        let bogus = PayoffFunctional::new_full("bogus_square", 1, 1.0, 0.0, |p| {
            p.eval_u(1.0).unwrap()[0].powi(2)
        })
        .unwrap();
        let report = lipschitz_bound_check(&bogus, 10_000, 42);
        assert!(!report.pass, "expected a violation, max ratio {}", report.max_ratio);
    }

    #[test]
    fn reduced_evaluators_agree_with_path_evaluators() {
        let specs = [
            PayoffSpec::TerminalCall { strike: 0.1 },
            PayoffSpec::TerminalSquare,
            PayoffSpec::QvTrace { d: 1 },
            PayoffSpec::LookbackMax,
            PayoffSpec::PathAverage,
            PayoffSpec::StockCall { s0: 1.0, strike: 0.9, half_convention: false },
        ];
        for seed in 0..20u64 {
            let path = random_pair(seed, 8);
            let it = path.interpolate();
            let run_max =
                path.u.iter().map(|x| x[0]).fold(f64::NEG_INFINITY, f64::max);
            let avg = trapezoid_average(&path);
            for spec in &specs {
                let payoff = spec.build().unwrap();
                let aux = match payoff.markov {
                    MarkovDescriptor::TerminalPlusRunningMax => run_max,
                    MarkovDescriptor::PathAverage => avg,
                    _ => 0.0,
                };
                let state = ReducedState {
                    u: path.u[8].clone(),
                    v: path.v[8].clone(),
                    aux,
                };
                assert_abs_diff_eq!(
                    payoff.evaluate(&it).unwrap(),
                    payoff.evaluate_reduced(&state).unwrap(),
                    epsilon = 1e-12
                );
            }
        }
    }

    #[test]
    fn stock_path_matches_exponential_formula() {
        let controls =
            vec![SymMatrix::diag(&[0.8]), SymMatrix::diag(&[1.2]), SymMatrix::diag(&[1.0])];
        let mut path = DiscretePathPair::new(3, 1);
        path.v = predictable_variation(3, &controls).unwrap();
        path.u = vec![vec![0.0], vec![0.3], vec![-0.1], vec![0.4]];
        let s = stock_path(&path, &[2.0], false).unwrap();
        for (k, sk) in s.iter().enumerate() {
            let expect = 2.0 * (path.u[k][0] - path.v[k].get(0, 0)).exp();
            assert_abs_diff_eq!(sk[0], expect, epsilon = 1e-15);
        }
        let sh = stock_path(&path, &[2.0], true).unwrap();
        assert_abs_diff_eq!(
            sh[3][0],
            2.0 * (0.4 - 0.5 * path.v[3].get(0, 0)).exp(),
            epsilon = 1e-15
        );
    }

    #[test]
    fn non_finite_values_are_reported() {
        let nasty =
            PayoffFunctional::new_full("nan", 1, 1.0, 0.0, |_| f64::NAN).unwrap();
        let path = DiscretePathPair::new(2, 1);
        assert!(matches!(
            nasty.evaluate(&path.interpolate()),
            Err(Error::NonFinitePayoff { .. })
        ));
    }

    #[test]
    fn spec_round_trips_through_json() {
        let spec = PayoffSpec::StockCall { s0: 1.0, strike: 0.95, half_convention: true };
        let text = serde_json::to_string(&spec).unwrap();
        let back: PayoffSpec = serde_json::from_str(&text).unwrap();
        assert_eq!(spec, back);
        // Field names are part of the on-disk format.
        assert!(text.contains("\"family\":\"stock_call\""));
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let payoff = PayoffSpec::TerminalCall { strike: 0.0 }.build().unwrap();
        let path = DiscretePathPair::new(2, 2);
        assert!(payoff.evaluate(&path.interpolate()).is_err());
    }
}
