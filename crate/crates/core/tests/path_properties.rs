use cbi_core::batch::{estimate, map_indexed};
use cbi_core::cumulant::{mean, transition_laplace, transition_laplace_time_rate};
use cbi_core::mechanism::{BranchingMechanism, ImmigrationMechanism};
use cbi_core::paths::*;
use cbi_core::rngkit::RandomStream;
use cbi_core::verify::{generator_apply, TestFn};

fn feller() -> BranchingMechanism {
    BranchingMechanism::feller(0.0, 1.0).unwrap()
}

#[test]
fn positivity_and_extinction_trap() {
    let scheme = CbiScheme::new(
        &feller(),
        &ImmigrationMechanism::none(),
        PathOptions::new(3.0, 1e-2, 1e-2),
    )
    .unwrap();
    let root = RandomStream::new(5);
    let mut extinct = 0;
    for i in 0..500 {
        let p = scheme
            .simulate(&RateSpec::Unit, 0.5, &mut root.split(i))
            .unwrap();
        assert!(p.values.iter().all(|&v| v >= 0.0));
        assert!(p.cum_integral.windows(2).all(|w| w[1] >= w[0]));
        if let Some(te) = p.extinct_at {
            extinct += 1;
            for (t, v) in p.t_grid.iter().zip(&p.values) {
                if *t >= te {
                    assert_eq!(*v, 0.0);
                }
            }
        }
    }
    assert!(extinct > 100);
}

#[test]
fn euler_bias_shrinks_with_refinement() {
    for phi in [feller(), BranchingMechanism::stable(0.0, 1.0, 1.5).unwrap()] {
        let exact = transition_laplace(&phi, None, 1.0, 1.0, 1.0).unwrap();
        let biases: Vec<f64> = [0.2, 0.1, 0.05]
            .iter()
            .map(|&dt| {
                let scheme = CbiScheme::new(
                    &phi,
                    &ImmigrationMechanism::none(),
                    PathOptions::new(1.0, dt, dt).endpoints_only(),
                )
                .unwrap();
                let e = estimate(&RandomStream::new(8), 100_000, |_, s| {
                    Ok((-scheme.simulate(&RateSpec::Unit, 1.0, s)?.final_value()).exp())
                })
                .unwrap();
                (e.mean - exact).abs()
            })
            .collect();
        assert!(biases[0] > biases[1] && biases[1] > biases[2], "{biases:?}");
    }
}

#[test]
fn exact_and_euler_agree() {
    let n = 20_000;
    let dt = 1e-3;
    let scheme = CbiScheme::new(
        &BranchingMechanism::feller(1.0, 1.0).unwrap(),
        &ImmigrationMechanism::linear(1.0).unwrap(),
        PathOptions::new(1.0, dt, dt).endpoints_only(),
    )
    .unwrap();
    let euler = estimate(&RandomStream::new(1), n, |_, s| {
        Ok((-scheme.simulate(&RateSpec::Unit, 0.5, s)?.final_value()).exp())
    })
    .unwrap();
    let exact = estimate(&RandomStream::new(2), n, |_, s| {
        Ok((-feller_transition_sample(1.0, 1.0, 1.0, 0.5, 1.0, s)?).exp())
    })
    .unwrap();
    let se = euler.stderr.hypot(exact.stderr);
    assert!((euler.mean - exact.mean).abs() <= 4.0 * se + 3.0 * dt);
}

#[test]
fn time_dependent_immigration_rate() {
    let phi = BranchingMechanism::feller(1.0, 1.0).unwrap();
    let psi = ImmigrationMechanism::linear(1.0).unwrap();
    let rho = |t: f64| 1.0 + t.sin();
    let rate = RateSpec::time_fn(rho);
    let dt = 1e-2;
    let scheme =
        CbiScheme::new(&phi, &psi, PathOptions::new(2.0, dt, dt).endpoints_only()).unwrap();
    let finals = map_indexed(&RandomStream::new(4), 50_000, |_, s| {
        Ok(scheme.simulate(&rate, 0.5, s)?.final_value())
    })
    .unwrap();
    let m = cbi_core::verify::MCEstimate::from_values(finals.iter().copied());
    let l = cbi_core::verify::MCEstimate::from_values(finals.iter().map(|y| (-y).exp()));
    let exact_mean = mean(&phi, Some(&psi), Some(&rho), 0.5, 2.0).unwrap();
    let exact_laplace = transition_laplace_time_rate(&phi, &psi, rho, 0.5, 2.0, 1.0).unwrap();
    assert!(
        (m.mean - exact_mean).abs() <= 4.0 * m.stderr + 3.0 * dt,
        "{} {exact_mean}",
        m.mean
    );
    assert!(
        (l.mean - exact_laplace).abs() <= 4.0 * l.stderr + 3.0 * dt,
        "{} {exact_laplace}",
        l.mean
    );
}

#[test]
fn constant_state_rates_reduce_to_unit() {
    let psi = ImmigrationMechanism::linear(0.7).unwrap();
    let scheme = CbiScheme::new(&feller(), &psi, PathOptions::new(1.0, 1e-2, 1e-2)).unwrap();
    let unit = scheme
        .simulate(&RateSpec::Unit, 1.0, &mut RandomStream::new(3))
        .unwrap();
    let state = scheme
        .simulate(
            &RateSpec::state_fn(|_| 1.0, 1.0).unwrap(),
            1.0,
            &mut RandomStream::new(3),
        )
        .unwrap();
    let two = scheme
        .simulate(
            &RateSpec::two_state_fns(|_| 1.0, |_| 1.0, 1.0).unwrap(),
            1.0,
            &mut RandomStream::new(3),
        )
        .unwrap();
    assert_eq!(unit, state);
    assert_eq!(unit, two);
}

#[test]
fn interactive_rate_dynkin_formula() {
    // E f(Y_t) - f(x) = E ∫_0^t L f(Y_s) ds with the rate evaluated at the current state
    let phi = BranchingMechanism::feller(0.5, 1.0).unwrap();
    let psi = ImmigrationMechanism::linear(1.0).unwrap();
    let q = |y: f64| 1.0 + 0.5 * y.sin();
    let rate = RateSpec::state_fn(q, 0.5).unwrap();
    let (dt, x0, lambda) = (1e-2, 1.0, 1.0);
    let scheme = CbiScheme::new(&phi, &psi, PathOptions::new(1.0, dt, dt)).unwrap();
    let f = TestFn::exponential(lambda);
    let gaps = map_indexed(&RandomStream::new(6), 40_000, |_, s| {
        let p = scheme.simulate(&rate, x0, s)?;
        let lf: Vec<f64> = p
            .values
            .iter()
            .map(|&y| generator_apply(&phi, &psi, q(y), &f, y))
            .collect::<cbi_core::Result<_>>()?;
        let integral: f64 = lf
            .windows(2)
            .zip(p.t_grid.windows(2))
            .map(|(v, t)| 0.5 * (t[1] - t[0]) * (v[0] + v[1]))
            .sum();
        Ok((f.f)(p.final_value()) - (f.f)(x0) - integral)
    })
    .unwrap();
    let e = cbi_core::verify::MCEstimate::from_values(gaps);
    assert!(e.mean.abs() <= 4.0 * e.stderr + 3.0 * dt, "{e:?}");
}

#[test]
fn zero_stable_part_is_a_feller_scheme() {
    let opts = PathOptions::new(1.0, 1e-2, 1e-2).endpoints_only();
    let stable =
        StableScheme::new(1.0, 0.0, 1.5, 0.0, &ImmigrationMechanism::none(), opts).unwrap();
    let euler = CbiScheme::new(&feller(), &ImmigrationMechanism::none(), opts).unwrap();
    let a = stable.simulate(1.0, &mut RandomStream::new(9)).unwrap();
    let b = euler
        .simulate(&RateSpec::Unit, 1.0, &mut RandomStream::new(9))
        .unwrap();
    assert_eq!(a.final_value(), b.final_value());
}

#[test]
fn compound_poisson_immigration_counts() {
    let psi = ImmigrationMechanism::new(
        0.0,
        cbi_core::measures::LevyMeasure::atoms(vec![(1.0, 0.5)]),
    )
    .unwrap();
    let scheme = CbiScheme::new(&feller(), &psi, PathOptions::new(4.0, 1e-2, 1e-2)).unwrap();
    let counts = map_indexed(&RandomStream::new(10), 20_000, |_, s| {
        let p = scheme.simulate(&RateSpec::Unit, 0.0, s)?;
        Ok(p.jumps.iter().filter(|j| j.1 == 1.0).count() as f64)
    })
    .unwrap();
    let e = cbi_core::verify::MCEstimate::from_values(counts);
    assert!((e.mean - 2.0).abs() <= 4.0 * e.stderr, "{e:?}");
}
