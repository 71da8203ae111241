mod common;

use std::sync::Arc;

use gridvolt::bbus::build_bbus;
use gridvolt::feeder::FeederModel;
use gridvolt::flow::OperatingCondition;
use gridvolt::ppd::{reference_qp_solve, solve_static_observed, ControlConfig, HvcProblem};
use gridvolt::scenario::{parse_scenario, FeederRef, ProfileSource, Scenario, ScenarioConfig};
use gridvolt::sim::{
    simulate, simulate_strategy, AsyncController, CommModel, DelayModel, Feedback, LinearPlant,
    OutageScope, OutageWindow, PlantKind, Strategy,
};
use proptest::prelude::*;

use common::{fixture, inf_dist, random_instance};

fn controller(
    problem: &HvcProblem,
    comm: CommModel,
    strategy: Strategy,
    feedback: Feedback,
) -> (AsyncController, LinearPlant) {
    let mut plant = LinearPlant::new(problem.bbus_arc().clone(), problem.w().clone());
    let control = ControlConfig::certified(problem).unwrap();
    let ctl = AsyncController::new(
        problem,
        control,
        comm,
        strategy,
        feedback,
        0.0,
        &vec![0.0; problem.n()],
        &mut plant,
    )
    .unwrap();
    (ctl, plant)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn inactive_buses_freeze(
        seed in any::<u64>(),
        prob in 0.0f64..1.0,
        distributed in any::<bool>(),
        delayed in any::<bool>(),
        queue in any::<bool>(),
    ) {
        let inst = random_instance(seed, 12, true);
        let p = &inst.problem;
        let mut comm = CommModel::perfect(seed).with_activation(prob);
        if delayed {
            comm.delay = Some(DelayModel { prob: 0.3, max_rounds: 3, queue });
        }
        let strategy = if distributed { Strategy::DistributedOnly } else { Strategy::Hvc };
        let (mut ctl, mut plant) = controller(p, comm, strategy, Feedback::Measured);
        for _ in 0..60 {
            let before = ctl.agents().to_vec();
            let out = ctl.agent_round(&mut plant).unwrap();
            let after = ctl.agents();
            prop_assert_eq!(out.n_active, after.iter().filter(|a| a.active).count());
            for (j, (a, b)) in before.iter().zip(after).enumerate() {
                prop_assert!(p.q_lo()[j] <= b.q && b.q <= p.q_hi()[j]);
                if !b.active {
                    prop_assert_eq!(a.v, b.v);
                    prop_assert_eq!(a.w, b.w);
                    prop_assert_eq!(a.lambda, b.lambda);
                    if distributed {
                        prop_assert_eq!(a.q, b.q);
                    }
                }
            }
        }
    }

    #[test]
    fn synchronous_controller_replays_static_iterates(seed in any::<u64>(), binding in any::<bool>()) {
        let inst = random_instance(seed, 20, binding);
        let p = &inst.problem;
        let cfg = ControlConfig::certified(p)
            .unwrap()
            .with_tol(f64::MIN_POSITIVE)
            .unwrap()
            .with_max_iters(200);
        let mut iterates = Vec::new();
        solve_static_observed(p, &cfg, &vec![0.0; p.n()], |s| iterates.push(s.clone())).unwrap();
        let (mut ctl, mut plant) = controller(p, CommModel::perfect(seed), Strategy::Hvc, Feedback::Model);
        prop_assert_eq!(ctl.state().q, iterates[0].q.clone());
        for expected in &iterates[1..] {
            ctl.agent_round(&mut plant).unwrap();
            let s = ctl.state();
            prop_assert_eq!(&s.v, &expected.v);
            prop_assert_eq!(&s.q, &expected.q);
            prop_assert_eq!(&s.lambda, &expected.lambda);
        }
    }
}

#[test]
fn total_outage_reduces_to_local_control() {
    let feeder = FeederModel::chain(1, 0.02, 0.1, 1.0).unwrap();
    let bbus = Arc::new(build_bbus(&feeder).unwrap());
    let b = bbus.entry(0, 0);
    let w = 9.5;
    let (mu, gamma) = (1.0, 0.5);
    let problem = HvcProblem::new(
        bbus,
        OperatingCondition(vec![w]),
        vec![mu],
        gamma,
        vec![f64::NEG_INFINITY],
        vec![f64::INFINITY],
    )
    .unwrap();
    let mut comm = CommModel::perfect(1);
    comm.outages.push(OutageWindow {
        start_round: 0,
        end_round: u64::MAX,
        buses: OutageScope::all(),
    });
    let (mut ctl, mut plant) = controller(&problem, comm, Strategy::Hvc, Feedback::Measured);
    let alpha = ControlConfig::certified(&problem).unwrap().alpha;
    let target = b * mu - w;

    let mut q = 0.0;
    for _ in 0..200 {
        let out = ctl.agent_round(&mut plant).unwrap();
        assert_eq!(out.n_active, 0);
        q = q * (1.0 - alpha * gamma / b) + alpha * gamma * (mu - w / b);
        let a = &ctl.agents()[0];
        assert!((a.q - q).abs() <= 1e-12, "{} vs {q}", a.q);
        assert_eq!(a.lambda, 0.0);
    }
    assert!((q - target).abs() < 1e-6 * target.abs().max(1.0));
    assert!(ctl.agent_round(&mut plant).unwrap().v.mismatch_norm(&[mu]) < 1e-6);
}

fn inline_chain(n: usize) -> ScenarioConfig {
    let mut cfg = ScenarioConfig::with_feeder_path("unused.json");
    cfg.feeder = FeederRef {
        path: None,
        inline: Some(FeederModel::chain(n, 0.01, 0.02, 1.0).unwrap().to_spec()),
    };
    cfg
}

#[test]
fn no_control_with_zero_load_is_flat() {
    let mut cfg = inline_chain(4);
    cfg.simulation.strategy = Strategy::NoControl;
    let sc = Scenario::resolve(cfg, std::path::Path::new(".")).unwrap();
    let r = simulate(&sc).unwrap();
    assert_eq!(r.rounds.len(), 30);
    assert!(r.rounds.iter().all(|x| x.mismatch_norm == 0.0));
    assert!(r.final_state.q.iter().all(|&q| q == 0.0));
}

#[test]
fn static_loads_reach_the_optimal_mismatch() {
    let sc = parse_scenario(&fixture("chain21_static.toml")).unwrap();
    let optimum = {
        let r = reference_qp_solve(&sc.problem_at(0).unwrap()).unwrap();
        r.v.iter().map(|v| (v - 1.0).powi(2)).sum::<f64>().sqrt()
    };
    for (plant, feedback) in [
        (PlantKind::Linear, gridvolt::sim::Feedback::Model),
        (PlantKind::Ac, gridvolt::sim::Feedback::Measured),
    ] {
        let mut cfg = sc.config.clone();
        cfg.simulation.plant = plant;
        cfg.simulation.feedback = feedback;
        cfg.simulation.rounds_per_timestep = 5000;
        let run = Scenario::resolve(cfg, &fixture("")).unwrap();
        let r = simulate(&run).unwrap();
        let last = r.rounds.last().unwrap().mismatch_norm;
        // the AC plant adds the linearization gap on top
        let band = match plant {
            PlantKind::Linear => 1e-5,
            PlantKind::Ac => 1e-5 + r.timesteps[0].lin_ac_gap.unwrap() * (run.n() as f64).sqrt(),
        };
        assert!((last - optimum).abs() <= band, "{plant:?}: {last:e} vs {optimum:e}");
    }
}

#[test]
fn runs_repeat_exactly() {
    let mut sc = parse_scenario(&fixture("chain21_daily.toml")).unwrap();
    sc.comm = sc.comm.clone().with_activation(0.4);
    sc.comm.delay = Some(DelayModel {
        prob: 0.2,
        max_rounds: 2,
        queue: true,
    });
    let a = simulate(&sc).unwrap();
    let b = simulate(&sc).unwrap();
    assert_eq!(a.rounds, b.rounds);
    assert_eq!(a.timesteps, b.timesteps);
    assert_eq!(a.final_state.q, b.final_state.q);

    sc.comm.seed += 1;
    let c = simulate(&sc).unwrap();
    assert_ne!(a.rounds, c.rounds);
}

#[test]
fn hvc_beats_frozen_control_during_outage() {
    let sc = parse_scenario(&fixture("chain21_daily.toml")).unwrap();
    let mean = |s| {
        simulate_strategy(&sc, s)
            .unwrap()
            .average_mismatch(|t| t.outage && t.headroom_kvar > 0.0)
            .unwrap()
    };
    assert!(mean(Strategy::Hvc) <= mean(Strategy::DistributedOnly));
}

#[test]
fn constant_profile_reuses_one_timestep() {
    let mut cfg = inline_chain(3);
    cfg.profiles = ProfileSource::Constant {
        p_load_kw: 50.0,
        q_load_kvar: 10.0,
        p_gen_kw: 0.0,
        timesteps: 3,
    };
    cfg.simulation.rounds_per_timestep = 4;
    let sc = Scenario::resolve(cfg, std::path::Path::new(".")).unwrap();
    let r = simulate(&sc).unwrap();
    assert_eq!(r.timesteps.len(), 3);
    assert_eq!(r.rounds.len(), 12);
    assert_eq!(r.rounds[11].round, 11);
    assert_eq!(r.rounds[11].time_s, 2.0 * 60.0 + 4.0 * 2.0);
    assert!(inf_dist(&r.final_state.w, &sc.loading_at(2).unwrap().w.0) > 0.0);
}
