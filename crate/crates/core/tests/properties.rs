mod common;

use common::{session, subset_action_count, valid_day};
use evflex::baselines::{
    bau_schedule, brute_force_schedule, heuristic_pattern, heuristic_schedule, optimal_schedule,
    BRUTE_FORCE_LIMIT,
};
use evflex::eval::day_cost;
use evflex::experience::build_experience_set;
use evflex::mdp::{
    action_space_size, cost_demand, diagonal_totals, enumerate_actions, sample_action,
    state_from_sessions, transition, Action, Car, CostMode, MdpConfig, StateMatrix,
};
use evflex::policy::simulate_day;
use evflex::seeds;
use evflex::sessions::{DayArrivals, EvSession};
use proptest::prelude::*;

fn fleet() -> impl Strategy<Value = (MdpConfig, Vec<Car>)> {
    (1usize..=6, 1usize..=6).prop_flat_map(|(s_max, n_max)| {
        let car = (1..=s_max)
            .prop_flat_map(|d| (Just(d), 1..=d))
            .prop_map(|(d, c)| Car::new(d, c));
        (
            Just(MdpConfig::new(s_max, n_max).unwrap()),
            proptest::collection::vec(car, 0..=n_max),
        )
    })
}

fn tiny_day() -> impl Strategy<Value = (MdpConfig, DayArrivals)> {
    (1usize..=6, 1usize..=4).prop_flat_map(|(s_max, n_max)| {
        let s = (1..=s_max)
            .prop_flat_map(move |a| (Just(a), 1..=s_max - a + 1))
            .prop_flat_map(|(a, d)| (Just(a), Just(d), 1..=d))
            .prop_map(|(a, d, c)| session(a, d, c, 0));
        proptest::collection::vec(s, 0..=4).prop_map(move |v: Vec<EvSession>| {
            let cfg = MdpConfig::new(s_max, n_max).unwrap();
            let day = valid_day(v, &cfg);
            (cfg, day)
        })
    })
}

fn mode() -> impl Strategy<Value = CostMode> {
    prop_oneof![Just(CostMode::Old), Just(CostMode::Updated)]
}

proptest! {
    #[test]
    fn enumeration_matches_formula_and_oracle((cfg, cars) in fleet(), mode in mode()) {
        let totals = diagonal_totals(&state_from_sessions(&cars, 1, &cfg).unwrap());
        let actions = enumerate_actions(&totals, mode, usize::MAX).unwrap();
        prop_assert_eq!(actions.len() as u128, action_space_size(&totals, mode));
        prop_assert_eq!(actions.len(), subset_action_count(&cars, cfg.s_max, mode));
        prop_assert!(actions.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn transition_conserves_cars((cfg, cars) in fleet(), arrivals in proptest::collection::vec((1usize..=6, 1usize..=6), 0..3), seed in any::<u64>()) {
        let s = state_from_sessions(&cars, 1, &cfg).unwrap();
        let totals = diagonal_totals(&s);
        let room = cfg.n_max - cars.len();
        let arrivals: Vec<Car> = arrivals
            .into_iter()
            .take(room)
            .filter(|&(d, c)| d < cfg.s_max && c <= d)
            .map(|(d, c)| Car::new(d, c))
            .collect();
        for mode in CostMode::ALL {
            let u = sample_action(&totals, mode, &mut seeds::rng(seed, &[]));
            let out = transition(&s, &u, &arrivals, &cfg).unwrap();
            let after = out.next_state.cars().len();
            prop_assert_eq!(cars.len() + arrivals.len(), after + out.departed + out.completed);
            prop_assert_eq!(out.charged_count, u.charged_count());
            prop_assert_eq!(out.next_state.t(), 2);
            if mode == CostMode::Updated {
                prop_assert_eq!(out.shortfall_slots, 0);
            }
        }
    }

    #[test]
    fn optimal_equals_brute_force((cfg, day) in tiny_day()) {
        let opt = optimal_schedule(&day, &cfg).unwrap();
        let brute = brute_force_schedule(&day, &cfg, BRUTE_FORCE_LIMIT).unwrap();
        opt.check(&day, &cfg).unwrap();
        brute.check(&day, &cfg).unwrap();
        prop_assert_eq!(opt.objective(), brute.objective());
    }

    #[test]
    fn optimum_bounds_every_full_charge_schedule((cfg, day) in tiny_day(), seed in any::<u64>()) {
        let opt = day_cost::<f64>(&optimal_schedule(&day, &cfg).unwrap().loads, &cfg);
        let bau = bau_schedule(&day, &cfg);
        let heur = heuristic_schedule(&day, &cfg);
        bau.check(&day, &cfg).unwrap();
        heur.check(&day, &cfg).unwrap();
        prop_assert!(opt <= day_cost::<f64>(&bau.loads, &cfg));
        prop_assert!(opt <= day_cost::<f64>(&heur.loads, &cfg));
        let mut permuted = heur.loads.clone();
        permuted.reverse();
        prop_assert_eq!(day_cost::<f64>(&permuted, &cfg), day_cost::<f64>(&heur.loads, &cfg));
        // Updated-mode actions always charge cars without slack, so a random
        // such policy delivers every session in full.
        let random = |s: &StateMatrix| Ok(sample_action(&diagonal_totals(s), CostMode::Updated, &mut seeds::rng(seed, &[s.t() as u64])));
        let r = simulate_day(&random, &day, &cfg).unwrap();
        prop_assert_eq!(r.shortfall_slots, 0);
        prop_assert!(opt <= day_cost::<f64>(&r.loads, &cfg));
    }

    #[test]
    fn bau_matches_charge_everything_rollout((cfg, day) in tiny_day()) {
        let all = |s: &StateMatrix| Ok(Action::all(&diagonal_totals(s)));
        let r = simulate_day(&all, &day, &cfg).unwrap();
        prop_assert_eq!(&r.loads, &bau_schedule(&day, &cfg).loads);
        let summed: f64 = r.actions.iter().map(|u| cost_demand::<f64>(u, &cfg)).sum();
        prop_assert!((summed - day_cost::<f64>(&r.loads, &cfg)).abs() < 1e-12);
    }

    #[test]
    fn heuristic_pattern_has_exactly_c_charges(d in 1usize..=24, c_frac in 0.0f64..1.0) {
        let c = 1 + ((d - 1) as f64 * c_frac) as usize;
        let p = heuristic_pattern(d, c);
        prop_assert_eq!(p.len(), d);
        prop_assert_eq!(p.iter().filter(|&&x| x).count(), c);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn stored_costs_recompute_exactly((cfg, day) in tiny_day(), seed in any::<u64>()) {
        let days = [day];
        let f1 = build_experience_set(&days, 6, CostMode::Old, &cfg, seed).unwrap();
        let f2 = build_experience_set(&days, 6, CostMode::Updated, &cfg, seed).unwrap();
        for (set, mode) in [(&f1, CostMode::Old), (&f2, CostMode::Updated)] {
            prop_assert_eq!(set.len(), set.trajectories() * cfg.s_max);
            for x in &set.tuples {
                prop_assert_eq!(x.recompute_cost(mode, &cfg).unwrap(), x.cost);
                prop_assert!(x.cost >= 0.0);
            }
        }
        for x in &f2.tuples {
            let totals = diagonal_totals(&x.s);
            prop_assert_eq!(x.u.counts()[0], totals.get(0));
            let out = transition(&x.s, &x.u, &[], &cfg).unwrap();
            prop_assert_eq!(out.shortfall_slots, 0);
        }
    }
}
