mod support;

use std::path::PathBuf;

use h2ph::analysis::{steady_state, SteadyOptions};
use h2ph::assembly::{Network, StateKind};
use h2ph::components::weymouth_mean_pressure;
use h2ph::netio::{nominal_state, parse_network, parse_network_str, serialize_network};
use h2ph::sim::{integrate_implicit_midpoint, integrate_rk4, InputSignal, Interpolation, Scenario};
use nalgebra::DVector;
use proptest::prelude::*;
use support::oracle;

fn network(name: &str) -> Network {
    let path: PathBuf = [env!("CARGO_MANIFEST_DIR"), "..", "..", "networks", name]
        .iter()
        .collect();
    parse_network(&path).unwrap()
}

/// The reference network with every pipe and storage parameter scaled by the given
/// factors, cycling through them.
fn perturbed_fig1(factors: &[f64]) -> Network {
    let mut net = network("fig1.net");
    let mut f = factors.iter().cycle();
    for g in net.pipes.values_mut() {
        g.length *= f.next().unwrap();
        g.diameter *= f.next().unwrap();
        g.area = std::f64::consts::PI * g.diameter * g.diameter / 4.0;
        g.darcy_lambda *= f.next().unwrap();
    }
    for s in net.storages.values_mut() {
        s.volume *= f.next().unwrap();
        s.leak_coeff *= f.next().unwrap();
    }
    net
}

fn random_costate(net: &Network, layout: &h2ph::assembly::SystemLayout, e: &[f64]) -> DVector<f64> {
    DVector::from_fn(layout.states.len(), |i, _| {
        let v = e[i % e.len()];
        let physical = match layout.states[i].kind {
            StateKind::Node => 1.0e6 + 7.0e6 * v.abs(),
            StateKind::Edge => 30.0 * v,
            StateKind::Device => 2.0 * v,
        };
        physical * oracle::state_scale(net, layout, i)
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn structure_holds_for_random_parameters(
        factors in prop::collection::vec(0.2f64..5.0, 8),
        e in prop::collection::vec(-1.0f64..1.0, 15),
    ) {
        let net = perturbed_fig1(&factors);
        let sys = net.coupled_system().unwrap();
        let x = random_costate(&net, &sys.layout, &e);
        let j = sys.block.interconnection().eval(&x);
        prop_assert!((&j + j.transpose()).iter().all(|&v| v == 0.0));
        let report = sys.block.validate_structure(&[x]);
        prop_assert!(report.passed(), "{}", report);
    }

    #[test]
    fn assembled_rhs_matches_oracle_for_random_parameters(
        factors in prop::collection::vec(0.2f64..5.0, 8),
        e in prop::collection::vec(-1.0f64..1.0, 15),
        u in prop::collection::vec(-1.0f64..1.0, 7),
    ) {
        let net = perturbed_fig1(&factors);
        let sys = net.coupled_system().unwrap();
        let x = random_costate(&net, &sys.layout, &e);
        let u = DVector::from_iterator(7, u.iter().enumerate().map(|(i, v)| if i == 6 { 1e5 * v } else { 0.1 * v }));
        let got = sys.block.rhs(&x, &u).unwrap();
        let want = oracle::direct(&net, &sys.layout, x.as_slice(), u.as_slice());
        prop_assert!(oracle::relative_error(got.as_slice(), &want.rhs, &want.rhs_scale) <= 1e-12);
    }

    #[test]
    fn serialization_round_trips_random_parameters(factors in prop::collection::vec(0.2f64..5.0, 8)) {
        let net = perturbed_fig1(&factors);
        let text = serialize_network(&net);
        let again = parse_network_str(&text, "random.net").unwrap();
        prop_assert_eq!(&again, &net);
        prop_assert_eq!(serialize_network(&again), text);
    }

    #[test]
    fn midpoint_ledger_is_exact_on_two_storages(
        q in -3.0f64..3.0,
        flow in -5.0f64..5.0,
        h in 0.01f64..0.2,
    ) {
        let net = network("two_storage.net");
        let sys = net.grid_system().unwrap();
        let mut x0 = nominal_state(&net, &sys);
        x0[2] = flow * oracle::state_scale(&net, &sys.layout, 2);
        let scenario = Scenario {
            duration: 1.0,
            initial_state: x0,
            inputs: vec![InputSignal::constant(q), InputSignal::constant(-q)],
        };
        let traj = integrate_implicit_midpoint(&sys.block, &scenario, h, 1e-12, 25).unwrap();
        for s in &traj.steps {
            prop_assert!(s.balance_residual().abs() <= 1e-10 * s.h0.abs().max(s.h1.abs()));
        }
    }

    #[test]
    fn recorded_outputs_match_reevaluation(q in -1.0f64..1.0, h in 0.01f64..0.1) {
        let net = network("two_storage.net");
        let sys = net.grid_system().unwrap();
        let scenario = Scenario {
            duration: 0.3,
            initial_state: nominal_state(&net, &sys),
            inputs: vec![InputSignal::constant(q), InputSignal::constant(0.5 * q)],
        };
        let traj = integrate_rk4(&sys.block, &scenario, h).unwrap();
        for s in &traj.samples {
            prop_assert_eq!(&s.output, &sys.block.output(&s.state, &s.input).unwrap());
            prop_assert_eq!(s.hamiltonian, sys.block.energy(&s.state).unwrap());
        }
    }

    #[test]
    fn steady_state_residual_is_small(q in 0.05f64..4.0, ratio in -1.0f64..1.0) {
        let net = network("two_storage.net");
        let sys = net.grid_system().unwrap();
        let u = DVector::from_vec(vec![q, ratio * q]);
        let st = steady_state(&sys.block, &u, &nominal_state(&net, &sys), &SteadyOptions::default()).unwrap();
        prop_assert!(st.converged);
        prop_assert!(st.scaled_residual <= 1e-10);
        let rhs = sys.block.rhs(&st.state, &u).unwrap();
        prop_assert_eq!(rhs.amax(), st.residual_norm);
    }

    #[test]
    fn signals_stay_within_their_knots(
        values in prop::collection::vec(-10.0f64..10.0, 2..8),
        t in -1.0f64..10.0,
        linear in any::<bool>(),
    ) {
        let times: Vec<f64> = (0..values.len()).map(|k| k as f64).collect();
        let interp = if linear { Interpolation::Linear } else { Interpolation::Hold };
        let s = InputSignal::new(times, values.clone(), interp).unwrap();
        let v = s.value_at(t);
        let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(lo <= v && v <= hi);
        if !linear {
            prop_assert!(values.contains(&v));
        }
    }

    #[test]
    fn weymouth_lies_between_end_pressures(pl in 1.0e4f64..1.0e7, pr in 1.0e4f64..1.0e7) {
        let pm = weymouth_mean_pressure(pl, pr).unwrap();
        prop_assert!(pl.min(pr) * (1.0 - 1e-15) <= pm && pm <= pl.max(pr) * (1.0 + 1e-15));
        prop_assert_eq!(pm, weymouth_mean_pressure(pr, pl).unwrap());
        if pl != pr {
            let rational = oracle::weymouth_rational(pl, pr);
            prop_assert!((pm - rational).abs() <= 1e-12 * pm);
        }
    }
}
