mod common;

use common::toy;
use evflex::experience::exhaustive_experience_set;
use evflex::fqi::{encode, fit_fqi};
use evflex::mdp::{CostMode, StateMatrix};
use evflex::nn::NetSpec;
use evflex::policy::simulate_day;
use evflex::{FqiOutcome32, FqiOutcome64, GreedyPolicy32, QNetwork32, QNetwork64};

fn spec() -> NetSpec {
    NetSpec {
        hidden: vec![16],
        learning_rate: 1e-2,
        epochs: 300,
        batch_size: 8,
        seed: 11,
        ..NetSpec::default()
    }
}

#[test]
fn single_and_double_precision_learn_the_same_toy_policy() {
    let (cfg, day) = toy();
    let set = exhaustive_experience_set(&day, CostMode::Updated, &cfg, 1000).unwrap();
    let q32: FqiOutcome32 = fit_fqi(&set, &cfg, &spec()).unwrap();
    let q64: FqiOutcome64 = fit_fqi(&set, &cfg, &spec()).unwrap();
    assert_eq!(q32.iterations.len(), cfg.s_max);

    let p32 = GreedyPolicy32 {
        q: q32.network,
        mode: CostMode::Updated,
        cfg,
    };
    let r32 = simulate_day(&p32, &day, &cfg).unwrap();
    let r64 = simulate_day(
        &|s: &StateMatrix| evflex::fqi::greedy_action(&q64.network, s, CostMode::Updated, &cfg),
        &day,
        &cfg,
    )
    .unwrap();
    assert_eq!(r32.loads, r64.loads);
    assert_eq!(r32.loads, vec![1, 1, 1]);
}

#[test]
fn checkpoints_cross_precision() {
    let (cfg, day) = toy();
    let set = exhaustive_experience_set(&day, CostMode::Old, &cfg, 1000).unwrap();
    let q: QNetwork64 = fit_fqi(&set, &cfg, &spec()).unwrap().network;
    let mut buf = Vec::new();
    q.write_checkpoint(&mut buf).unwrap();
    let q32 = QNetwork32::read_checkpoint(buf.as_slice(), &spec()).unwrap();
    for x in &set.tuples {
        let a = q
            .predict(&encode::<f64>(&x.s, &x.u, &cfg).unwrap())
            .unwrap();
        let b = q32
            .predict(&encode::<f32>(&x.s, &x.u, &cfg).unwrap())
            .unwrap();
        assert!((a - b as f64).abs() < 1e-4 * (1.0 + a.abs()), "{a} vs {b}");
    }
}
