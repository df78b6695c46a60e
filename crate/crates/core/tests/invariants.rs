use proptest::prelude::*;

use vlcuav::channel::{
    demand_coefficient, illumination_deficit, illumination_power, optimal_ambient, rate_demand, required_power,
};
use vlcuav::illum::{parse_grid_sequence, synth_sequence};
use vlcuav::optimizer::{association_exhaustive, association_solve, optimize, DualState};
use vlcuav::predictor::{parse_checkpoint, predict_next, train, write_checkpoint};
use vlcuav::{OptimizerOptions, PredictorConfig, Scenario, SynthConfig, UavPose, User, VlcParams};

fn scenario(users: Vec<User>, fleet: usize, seed: u64) -> Scenario {
    let grid = synth_sequence(seed, &SynthConfig { frames: 1, ..Default::default() }).unwrap().frames()[0]
        .scaled(2e-4);
    let extent = grid.extent();
    Scenario::new(users, fleet, (extent, extent), VlcParams::default(), grid).unwrap()
}

fn users_strategy(max: usize) -> impl Strategy<Value = Vec<User>> {
    prop::collection::vec((0.0..80.0f64, 0.0..80.0f64, 0.1..2.0f64), 1..=max)
        .prop_map(|v| v.into_iter().map(|(a, b, r)| User::new(a, b, r)).collect())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn demand_coefficient_bounds_both_requirements(
        v in 0.0..100.0f64, w in 0.0..100.0f64, x in 0.0..100.0f64, y in 0.0..100.0f64,
        h in 5.0..150.0f64, rate in 0.0..4.0f64, ambient in 0.0..2e-3f64,
    ) {
        let params = VlcParams { altitude: h, ..Default::default() };
        let user = User::new(v, w, rate);
        let uav = UavPose::new(x, y, h);
        let need = required_power(&user, &uav, ambient, &params).unwrap()
            .max(illumination_power(&user, &uav, ambient, &params).unwrap());
        let law = demand_coefficient(&user, ambient, &params) * uav.distance(&user).powf(params.distance_exponent());
        prop_assert!((need - law).abs() <= 1e-9 * need.max(f64::MIN_POSITIVE));
    }

    #[test]
    fn optimal_ambient_is_a_minimiser(rate in 0.0..4.0f64, eta in 1e-6..5e-3f64, probe in 0.0..1.0f64) {
        let params = VlcParams { eta_r: eta, ..Default::default() };
        let f = |i: f64| illumination_deficit(i, &params).max(rate_demand(rate, i, &params));
        let star = optimal_ambient(rate, &params);
        prop_assert!(star >= 0.0);
        prop_assert!(f(star) <= f(probe * 2.0 * eta) * (1.0 + 1e-12));
    }

    #[test]
    fn association_matches_enumeration(
        users in users_strategy(6),
        poses in prop::collection::vec((0.0..80.0f64, 0.0..80.0f64), 1..=3),
        seed in 0u64..50,
    ) {
        let s = scenario(users.clone(), poses.len(), seed);
        let poses: Vec<UavPose> = poses.iter().map(|&(x, y)| UavPose::new(x, y, s.params.altitude)).collect();
        let opts = OptimizerOptions::default();
        let mut dual = DualState::new(poses.len(), users.len(), opts.gamma, opts.delta);
        let got = association_solve(&s, &poses, &mut dual, &opts).unwrap();
        let (_, best) = association_exhaustive(&s, &poses).unwrap();
        prop_assert!((got.total_power - best).abs() <= 1e-9 * best);
        prop_assert!(dual.is_valid());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn deployments_are_feasible(users in users_strategy(8), fleet in 1usize..=3, seed in 0u64..50) {
        let s = scenario(users, fleet, seed);
        let sol = optimize(&s, &OptimizerOptions::default()).unwrap();
        let (shortfall, min_sep) = sol.feasibility(&s);
        prop_assert!(shortfall <= 1e-9);
        prop_assert!(fleet == 1 || min_sep >= s.params.d_min * (1.0 - 1e-9));
        prop_assert!(sol.poses.iter().all(|p| p.power >= 0.0 && p.altitude == s.params.altitude));
        let sum: f64 = sol.poses.iter().map(|p| p.power).sum();
        prop_assert!((sum - sol.total_power).abs() <= 1e-12 * sum.max(1.0));
    }
}

#[test]
fn small_steps_never_increase_training_loss() {
    let cfg = PredictorConfig {
        grid_side: 12,
        layers: 1,
        kernel: 5,
        feature_maps: vec![2],
        hidden: 6,
        seq_len: 2,
        learn_rate: 1e-3,
        epochs: 40,
        init_range: 0.3,
        seed: 8,
        ..Default::default()
    };
    let data: Vec<_> = (0..3)
        .map(|k| synth_sequence(k, &SynthConfig { side: 12, frames: 5, cell_size: 5.0, ..Default::default() }).unwrap())
        .collect();
    let trained = train(&data, &cfg).unwrap();
    let mut trace = trained.loss_trace.clone();
    trace.push(trained.final_loss);
    for w in trace.windows(2) {
        assert!(w[1] <= w[0] + 1e-12 * w[0], "loss rose from {} to {}", w[0], w[1]);
    }
    assert!(trained.final_loss < trace[0]);
}

#[test]
fn checkpoint_round_trip_preserves_predictions() {
    let cfg = PredictorConfig { epochs: 3, learn_rate: 0.1, ..Default::default() };
    let seq = synth_sequence(4, &SynthConfig::default()).unwrap();
    let trained = train(std::slice::from_ref(&seq), &cfg).unwrap();
    let (back_cfg, back) = parse_checkpoint(&write_checkpoint(&cfg, &trained.weights)).unwrap();
    assert_eq!(back_cfg.feature_maps, cfg.feature_maps);
    let inputs = &seq.frames()[..cfg.seq_len];
    let a = predict_next(inputs, &trained.weights, &cfg).unwrap();
    let b = predict_next(inputs, &back, &back_cfg).unwrap();
    assert_eq!(a.values(), b.values());
}

#[test]
fn grid_text_round_trip_is_exact() {
    let seq = synth_sequence(12, &SynthConfig { frames: 3, ..Default::default() }).unwrap();
    let back = parse_grid_sequence(&seq.to_text()).unwrap();
    assert_eq!(back, seq);
}
