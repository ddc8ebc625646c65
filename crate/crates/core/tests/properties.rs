//! Algebraic laws of the backward-recursion value: it is a sublinear
//! expectation on payoff functionals, monotone in both the payoff and the
//! admissible control set, and consistent with forward simulation. Checked
//! exactly (1e-12 scale) on randomized payoff pairs over small exact trees.

use proptest::prelude::*;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use gexp_core::domain::ControlGrid;
use gexp_core::payoff::PayoffFunctional;
use gexp_core::rng::substream;
use gexp_core::solver::{solve_tree, tree_forward_expectation};
use gexp_core::{DiscretePathPair, NoiseDistribution, UncertaintyDomain};

const PAIRS: usize = 20;
const TOL: f64 = 1e-12;

fn band(a_low: f64, a_high: f64) -> UncertaintyDomain {
    UncertaintyDomain::ScalarInterval { a_low, a_high }
}

fn rademacher() -> NoiseDistribution {
    NoiseDistribution::Rademacher { d: 1 }
}

/// A random payoff from a five-term family mixing terminal, intermediate,
/// kinked, quadratic and variation-reading pieces. Every member satisfies an
/// exponential-Lipschitz certificate with h1 = 10, h2 = 1.
fn random_payoff(rng: &mut ChaCha8Rng, tag: usize) -> PayoffFunctional {
    let c: Vec<f64> = (0..5).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let t1 = rng.gen_range(0.2..0.9);
    let t2 = rng.gen_range(0.1..1.0);
    let strike = rng.gen_range(-0.5..0.5);
    PayoffFunctional::new_full(&format!("random-{tag}"), 1, 10.0, 1.0, move |p| {
        let u1 = p.eval_u(1.0).unwrap()[0];
        let ut1 = p.eval_u(t1).unwrap()[0];
        let ut2 = p.eval_u(t2).unwrap()[0];
        let v1 = p.eval_v(1.0).unwrap().get(0, 0);
        c[0] * u1 + c[1] * ut1.abs() + c[2] * (ut2 - strike).max(0.0)
            + c[3] * u1 * u1
            + c[4] * v1
    })
    .unwrap()
}

fn add(f: &PayoffFunctional, g: &PayoffFunctional) -> PayoffFunctional {
    let (f, g) = (f.clone(), g.clone());
    PayoffFunctional::new_full("sum", 1, 20.0, 1.0, move |p| {
        f.evaluate(p).unwrap() + g.evaluate(p).unwrap()
    })
    .unwrap()
}

fn scale(f: &PayoffFunctional, lambda: f64) -> PayoffFunctional {
    let f = f.clone();
    PayoffFunctional::new_full("scaled", 1, 10.0 * lambda.abs().max(1.0), 1.0, move |p| {
        lambda * f.evaluate(p).unwrap()
    })
    .unwrap()
}

fn value(f: &PayoffFunctional, grid: &ControlGrid, n: usize) -> f64 {
    solve_tree(f, grid, &rademacher(), n).unwrap().value
}

#[test]
fn constants_are_preserved_exactly() {
    let grid = band(0.04, 0.25).sqrt_grid(2).unwrap();
    for (i, c) in [-3.0, 0.0, 0.7, 42.0].iter().enumerate() {
        let c = *c;
        let f = PayoffFunctional::new_full(&format!("const-{i}"), 1, 1.0, 0.0, move |_| c)
            .unwrap();
        for n in [1, 3, 6] {
            assert!((value(&f, &grid, n) - c).abs() <= TOL);
        }
    }
}

#[test]
fn value_is_monotone_in_the_payoff() {
    let grid = band(0.04, 0.25).sqrt_grid(2).unwrap();
    for pair in 0..PAIRS {
        let mut rng = substream(101, pair as u64);
        let f = random_payoff(&mut rng, pair);
        let lift = rng.gen_range(0.0..1.0);
        // g = f + a nonnegative kinked bump dominates f pointwise.
        let fc = f.clone();
        let g = PayoffFunctional::new_full("dominating", 1, 12.0, 1.0, move |p| {
            let u1 = p.eval_u(1.0).unwrap()[0];
            fc.evaluate(p).unwrap() + lift * u1.abs()
        })
        .unwrap();
        let n = 2 + pair % 5;
        let (vf, vg) = (value(&f, &grid, n), value(&g, &grid, n));
        let s = 1.0 + vf.abs().max(vg.abs());
        assert!(vf <= vg + TOL * s, "pair {pair}: {vf} > {vg}");
    }
}

#[test]
fn value_is_subadditive() {
    let grid = band(0.04, 0.25).sqrt_grid(2).unwrap();
    for pair in 0..PAIRS {
        let mut rng = substream(202, pair as u64);
        let f = random_payoff(&mut rng, pair);
        let g = random_payoff(&mut rng, pair + 1000);
        let n = 2 + pair % 5;
        let (vf, vg) = (value(&f, &grid, n), value(&g, &grid, n));
        let vfg = value(&add(&f, &g), &grid, n);
        let s = 1.0 + vf.abs() + vg.abs();
        assert!(vfg <= vf + vg + TOL * s, "pair {pair}: {vfg} > {vf} + {vg}");
    }
}

#[test]
fn value_is_positively_homogeneous() {
    let grid = band(0.04, 0.25).sqrt_grid(2).unwrap();
    for pair in 0..PAIRS {
        let mut rng = substream(303, pair as u64);
        let f = random_payoff(&mut rng, pair);
        let lambda = rng.gen_range(0.0..3.0);
        let n = 2 + pair % 5;
        let vf = value(&f, &grid, n);
        let vl = value(&scale(&f, lambda), &grid, n);
        let s = 1.0 + vf.abs() * lambda;
        assert!((vl - lambda * vf).abs() <= TOL * s, "pair {pair}: {vl} vs {}", lambda * vf);
    }
}

/// Enlarging the admissible control set can only raise the supremum. The
/// wider domain's grid is built as a superset of the narrower one (evenly
/// spaced grids of nested intervals do not nest by themselves).
#[test]
fn value_is_monotone_in_the_domain() {
    for pair in 0..PAIRS {
        let mut rng = substream(404, pair as u64);
        let f = random_payoff(&mut rng, pair);
        let a_low = rng.gen_range(0.02..0.1);
        let a_high = rng.gen_range(0.15..0.4);
        let inner = band(a_low, a_high).sqrt_grid(2).unwrap();
        let outer_domain = band(a_low / 2.0, a_high * 1.5);
        let mut controls = inner.controls.clone();
        controls.extend(outer_domain.sqrt_grid(2).unwrap().controls);
        let outer = ControlGrid {
            controls,
            resolution: inner.resolution,
            domain: outer_domain,
        };
        let n = 2 + pair % 5;
        let (vi, vo) = (value(&f, &inner, n), value(&f, &outer, n));
        assert!(vi <= vo + TOL * (1.0 + vi.abs()), "pair {pair}: {vi} > {vo}");
    }
}

/// Refining the control grid inside a fixed domain can only raise the value.
#[test]
fn value_is_monotone_in_the_control_grid() {
    let domain = band(0.04, 0.25);
    let coarse = domain.sqrt_grid(1).unwrap();
    // Doubling the resolution keeps every coarse control (even spacing in
    // volatility: resolutions 1, 2, 4 share endpoints and midpoints).
    let fine = domain.sqrt_grid(2).unwrap();
    let finest = domain.sqrt_grid(4).unwrap();
    for c in &coarse.controls {
        assert!(fine.controls.iter().any(|x| (x.get(0, 0) - c.get(0, 0)).abs() < 1e-15));
    }
    for pair in 0..PAIRS {
        let mut rng = substream(505, pair as u64);
        let f = random_payoff(&mut rng, pair);
        let n = 2 + pair % 4;
        let (v1, v2, v4) = (
            value(&f, &coarse, n),
            value(&f, &fine, n),
            value(&f, &finest, n),
        );
        let s = 1.0 + v4.abs();
        assert!(v1 <= v2 + TOL * s && v2 <= v4 + TOL * s, "pair {pair}: {v1} {v2} {v4}");
    }
}

/// Forward expectation under the extracted optimal policy recovers the
/// backward value: the dynamic-programming principle, checked exactly.
#[test]
fn forward_replay_recovers_the_value() {
    let grid = band(0.04, 0.25).sqrt_grid(2).unwrap();
    for pair in 0..8 {
        let mut rng = substream(606, pair as u64);
        let f = random_payoff(&mut rng, pair as usize);
        let n = 2 + pair as usize % 4;
        let vp = solve_tree(&f, &grid, &rademacher(), n).unwrap();
        let replay = tree_forward_expectation(&vp, &f).unwrap();
        assert!(
            (replay - vp.value).abs() <= TOL * (1.0 + vp.value.abs()),
            "pair {pair}: {replay} vs {}",
            vp.value
        );
    }
}

fn arb_controls(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.05f64..1.0, n)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    /// Piecewise-linear interpolation reproduces its knots and clamps at 1.
    #[test]
    fn interpolation_is_exact_at_knots(controls in arb_controls(6)) {
        let n = controls.len();
        let mut u = vec![vec![0.0]];
        let mut v = vec![vec![0.0]];
        for (k, g) in controls.iter().enumerate() {
            let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
            u.push(vec![u[k][0] + sign * g / (n as f64).sqrt()]);
            v.push(vec![v[k][0] + g * g / n as f64]);
        }
        let pair = DiscretePathPair::from_parts(
            u.clone(),
            v.iter().map(|row| gexp_core::SymMatrix::diag(row)).collect(),
        ).unwrap();
        let path = pair.interpolate();
        for k in 0..=n {
            let t = k as f64 / n as f64;
            prop_assert!((path.eval_u(t).unwrap()[0] - u[k][0]).abs() <= 1e-14);
            prop_assert!((path.eval_v(t).unwrap().get(0, 0) - v[k][0]).abs() <= 1e-14);
        }
        prop_assert_eq!(path.eval_u(1.0).unwrap()[0], u[n][0]);
    }

    /// The sup distance is a symmetric pseudometric dominated by the sum of
    /// sup norms, and zero against itself.
    #[test]
    fn sup_distance_behaves_like_a_metric(
        a in arb_controls(4),
        b in arb_controls(4),
    ) {
        let build = |controls: &[f64]| -> DiscretePathPair {
            let n = controls.len();
            let mut u = vec![vec![0.0]];
            let mut v = vec![vec![0.0]];
            for (k, g) in controls.iter().enumerate() {
                u.push(vec![u[k][0] + g / (n as f64).sqrt()]);
                v.push(vec![v[k][0] + g * g / n as f64]);
            }
            DiscretePathPair::from_parts(
                u,
                v.iter().map(|row| gexp_core::SymMatrix::diag(row)).collect(),
            ).unwrap()
        };
        let (qa, qb) = (build(&a), build(&b));
        let (pa, pb) = (qa.interpolate(), qb.interpolate());
        let (du_ab, dv_ab) = pa.sup_distance(&pb);
        let (du_ba, dv_ba) = pb.sup_distance(&pa);
        prop_assert!((du_ab - du_ba).abs() <= 1e-15);
        prop_assert!((dv_ab - dv_ba).abs() <= 1e-15);
        let (zu, zv) = pa.sup_distance(&pa);
        prop_assert_eq!(zu, 0.0);
        prop_assert_eq!(zv, 0.0);
        let (na, nva) = pa.sup_norm();
        let (nb, nvb) = pb.sup_norm();
        prop_assert!(du_ab <= na + nb + 1e-14);
        prop_assert!(dv_ab <= nva + nvb + 1e-14);
    }

    /// Homogeneity of the tree value in the payoff, over random scales.
    #[test]
    fn homogeneity_holds_for_random_scales(lambda in 0.0f64..4.0, seed in 0u64..50) {
        let grid = band(0.04, 0.25).sqrt_grid(1).unwrap();
        let mut rng = substream(707, seed);
        let f = random_payoff(&mut rng, seed as usize);
        let vf = value(&f, &grid, 3);
        let vl = value(&scale(&f, lambda), &grid, 3);
        prop_assert!((vl - lambda * vf).abs() <= 1e-12 * (1.0 + lambda * vf.abs()));
    }
}
