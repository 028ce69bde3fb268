use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use riskdyn::bsde::{solve_bsde, Driver};
use riskdyn::measures::{entropic, hq_entropic_losses, q_entropic_losses, LossSpec};
use riskdyn::qcalculus::{exp_q, ln_q, lower_bound};
use riskdyn::schedule::HorizonSchedule;
use riskdyn::shortfall::{dynamic_shortfall, static_shortfall, AggregatorFn, ShortfallSpec, TargetSchedule};
use riskdyn::utility::UtilityFn;
use riskdyn::{BrownianLattice, RandomVariable, ScenarioTree};

fn random_tree(seed: u64) -> ScenarioTree {
    ScenarioTree::random(&mut ChaCha8Rng::seed_from_u64(seed), 3, 3)
}

fn payoff(model: &ScenarioTree, depth: usize, raw: &[f64]) -> RandomVariable {
    let n = model.level_len(depth);
    RandomVariable::new(depth, (0..n).map(|i| raw[i % raw.len()]).collect())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn tsallis_round_trip(q in 0.05f64..0.95, x in -5.0f64..5.0) {
        let x = x.max(lower_bound(q) + 1e-6);
        let back = ln_q(exp_q(x, q).unwrap(), q).unwrap();
        prop_assert!((back - x).abs() < 1e-10 * (1.0 + x.abs()));
    }

    #[test]
    fn tower_property(seed in 0u64..1000, raw in prop::collection::vec(-3.0f64..3.0, 1..12)) {
        let model = random_tree(seed);
        let x = payoff(&model, 3, &raw);
        let direct = model.conditional_expectation(&x, 0).unwrap();
        let nested = model.conditional_expectation(&model.conditional_expectation(&x, 2).unwrap(), 0).unwrap();
        prop_assert!(direct.max_abs_diff(&nested) < 1e-12);
    }

    #[test]
    fn entropic_is_time_consistent(seed in 0u64..1000, raw in prop::collection::vec(-3.0f64..3.0, 1..12), b in 0.2f64..2.0) {
        let model = random_tree(seed);
        let x = payoff(&model, 3, &raw);
        let direct = entropic(&model, &x, 0, b).unwrap();
        let inner = entropic(&model, &x, 1, b).unwrap();
        let nested = entropic(&model, &inner.scale(-1.0), 0, b).unwrap();
        prop_assert!(direct.max_abs_diff(&nested) < 1e-10);
    }

    #[test]
    fn q_entropic_monotone_in_payoff(seed in 0u64..500, raw in prop::collection::vec(-3.0f64..3.0, 1..12), bump in 0.0f64..2.0, q in 0.2f64..1.0) {
        let model = random_tree(seed);
        let x = payoff(&model, 3, &raw);
        let spec = LossSpec::new(q, 0.05, 0.1).unwrap();
        let low = q_entropic_losses(&model, &x, 0, &spec).unwrap().scalar();
        let high = q_entropic_losses(&model, &x.add_scalar(bump), 0, &spec).unwrap().scalar();
        prop_assert!(high <= low + 1e-12);
    }

    #[test]
    fn hq_shortfall_reproduces_closed_form(seed in 0u64..200, raw in prop::collection::vec(-3.0f64..3.0, 1..12), q in 0.3f64..1.0) {
        let model = random_tree(seed);
        let x = payoff(&model, 3, &raw);
        let schedule = HorizonSchedule::constant(0.05).unwrap();
        let spec = LossSpec::new(q, 0.1, 0.2).unwrap();
        let closed = hq_entropic_losses(&model, &x, 1, 3, &spec, &schedule).unwrap();
        let sf = riskdyn::shortfall::hq_shortfall_spec(q, 0.1, 0.2, schedule, TargetSchedule::Constant { value: 0.0 }).unwrap();
        let via = dynamic_shortfall(&model, &x, 1, 3, &sf).unwrap().to_finite().unwrap();
        prop_assert!(closed.max_abs_diff(&via) < 1e-7);
    }

    #[test]
    fn exponential_shortfall_is_entropic(probs in prop::collection::vec(0.1f64..1.0, 2..5), raw in prop::collection::vec(-3.0f64..3.0, 5)) {
        let s: f64 = probs.iter().sum();
        let p: Vec<f64> = probs.iter().map(|v| v / s).collect();
        let model = ScenarioTree::atoms(&p).unwrap();
        let x = payoff(&model, 1, &raw);
        let spec = ShortfallSpec::simple(UtilityFn::OneMinusExp { b: 1.0, shift: 0.0 }, AggregatorFn::Additive, 0.0);
        let sf = static_shortfall(&model, &x, 1, &spec).unwrap().finite().unwrap();
        prop_assert!((sf - entropic(&model, &x, 0, 1.0).unwrap().scalar()).abs() < 1e-8);
    }

    #[test]
    fn bsde_comparison(raw in prop::collection::vec(-2.0f64..2.0, 9), bump in prop::collection::vec(0.0f64..1.0, 9)) {
        let lattice = BrownianLattice::new(8, 1.0).unwrap();
        let low = RandomVariable::new(8, raw.clone());
        let high = RandomVariable::new(8, raw.iter().zip(&bump).map(|(a, b)| a + b).collect());
        for driver in [Driver::entropic(), Driver::constant(0.3)] {
            let a = solve_bsde(&lattice, &driver, &low).unwrap();
            let b = solve_bsde(&lattice, &driver, &high).unwrap();
            prop_assert!(a.y.at(0).scalar() <= b.y.at(0).scalar() + 1e-12);
        }
    }
}
