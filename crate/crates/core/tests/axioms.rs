use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use riskdyn::axioms::{
    check, check_all, check_cash_additive, check_cash_subadditive, check_h_longevity, check_normalized,
    check_quasi_convex, check_restriction, non_quasi_convex, reproduce, Axiom, SampleSettings,
};
use riskdyn::measures::{CertaintyEquivalent, Discounted, Entropic, ExpectedLoss, HEntropic, HqEntropicLosses, LossSpec, QEntropicLosses};
use riskdyn::schedule::HorizonSchedule;
use riskdyn::shortfall::{h_var, HVar};
use riskdyn::utility::UtilityFn;
use riskdyn::{AdaptedProcess, BrownianLattice, RandomVariable, ScenarioTree};

fn tree(seed: u64) -> ScenarioTree {
    ScenarioTree::random(&mut ChaCha8Rng::seed_from_u64(seed), 3, 3)
}

fn hq() -> HqEntropicLosses {
    HqEntropicLosses {
        spec: LossSpec::new(0.5, 0.1, 0.2).unwrap(),
        schedule: HorizonSchedule::constant(0.1).unwrap(),
    }
}

#[test]
fn entropic_on_lattice() {
    let lattice = BrownianLattice::new(6, 1.0).unwrap();
    let s = SampleSettings::for_model(&lattice, 1, 8);
    for a in [Axiom::CashAdditive, Axiom::Convex, Axiom::Monotone, Axiom::Restriction] {
        let r = check(&Entropic { b: 1.0 }, &lattice, a, &s).unwrap();
        assert!(r.passed, "{a}: {r:?}");
    }
}

#[test]
fn hq_entropic_profile() {
    let model = tree(4);
    let s = SampleSettings::for_model(&model, 2, 12);
    let rho = hq();
    let ca = check_cash_additive(&rho, &model, &s).unwrap();
    assert!(!ca.passed);
    let w = ca.witness.as_ref().unwrap();
    assert_eq!(reproduce(&rho, &model, &ca).unwrap(), Some(w.slack));
    assert!(check_cash_subadditive(&rho, &model, &s).unwrap().passed);
    assert!(check_h_longevity(&rho, &model, &s).unwrap().passed);
    let norm = check_normalized(&rho, &model, &s).unwrap();
    assert!(!norm.passed);
    let a = 0.1 * (model.time(s.u) - model.time(s.t));
    let alpha_q = 0.1_f64;
    assert!((norm.worst_slack + alpha_q + a).abs() < 1e-12, "{}", norm.worst_slack);
}

#[test]
fn q_entropic_normalized_without_alpha() {
    let model = tree(5);
    let s = SampleSettings::for_model(&model, 3, 4);
    let rho = QEntropicLosses {
        spec: LossSpec::new(0.4, 0.0, 0.5).unwrap(),
    };
    assert!(check_normalized(&rho, &model, &s).unwrap().passed);
}

#[test]
fn h_entropic_breaks_restriction_by_the_horizon_integral() {
    let model = tree(6);
    let s = SampleSettings::for_model(&model, 4, 6);
    let rho = HEntropic {
        b: 1.0,
        schedule: HorizonSchedule::constant(0.1).unwrap(),
    };
    let r = check_restriction(&rho, &model, &s).unwrap();
    assert!(!r.passed);
    let gap = 0.1 * (model.time(s.v) - model.time(s.u));
    assert!((r.worst_slack + gap).abs() < 1e-10);
    assert!(check_h_longevity(&rho, &model, &s).unwrap().passed);
    assert!(check_restriction(&Entropic { b: 1.0 }, &model, &s).unwrap().passed);
}

#[test]
fn h_var_is_cash_additive_and_matches_example() {
    let model = tree(7);
    let s = SampleSettings::for_model(&model, 5, 8);
    assert!(check_cash_additive(&HVar::constant(0.1).unwrap(), &model, &s).unwrap().passed);
    let atoms = ScenarioTree::atoms(&[0.05, 0.95]).unwrap();
    let x = RandomVariable::new(1, vec![-10.0, 1.0]);
    assert_eq!(h_var(&atoms, &x, 0, 0.1).unwrap().scalar(), -1.0);
}

#[test]
fn certainty_equivalent_is_quasi_convex() {
    let model = tree(8);
    let s = SampleSettings::for_model(&model, 6, 10);
    for utility in [UtilityFn::Log { shift: 5.0 }, UtilityFn::NegExp { b: 0.7 }, UtilityFn::QExp { q: 0.8 }] {
        let r = check_quasi_convex(&CertaintyEquivalent { utility: utility.clone() }, &model, &s).unwrap();
        assert!(r.passed, "{utility:?}: {r:?}");
    }
    assert!(!check_quasi_convex(&non_quasi_convex(), &model, &s).unwrap().passed);
}

#[test]
fn discounted_expectation_is_cash_subadditive_with_positive_slack() {
    let model = tree(9);
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let levels: Vec<Vec<f64>> = (0..=model.horizon_depth())
        .map(|k| (0..model.level_len(k)).map(|_| rng.gen_range(0.5..=1.0)).collect())
        .collect();
    let rho = Discounted::new(ExpectedLoss, AdaptedProcess { levels }).unwrap();
    let s = SampleSettings::for_model(&model, 7, 10);
    assert!(check_cash_subadditive(&rho, &model, &s).unwrap().passed);
    let flat = Discounted::new(
        ExpectedLoss,
        AdaptedProcess {
            levels: (0..=model.horizon_depth()).map(|k| vec![0.9; model.level_len(k)]).collect(),
        },
    )
    .unwrap();
    let x = RandomVariable::constant(&model, s.u, 0.3);
    let base = flat.evaluate_scalar(&model, &x, s.u);
    let shifted = flat.evaluate_scalar(&model, &x.add_scalar(1.0), s.u);
    assert!(shifted - base + 1.0 > 0.09);
}

trait Scalar {
    fn evaluate_scalar(&self, model: &ScenarioTree, x: &RandomVariable, u: usize) -> f64;
}

impl<M: riskdyn::measures::FullyDynamic> Scalar for M {
    fn evaluate_scalar(&self, model: &ScenarioTree, x: &RandomVariable, u: usize) -> f64 {
        self.evaluate(model, x, 0, u).unwrap().scalar()
    }
}

#[test]
fn full_suite_is_deterministic_and_witnesses_reproduce() {
    let model = tree(11);
    let s = SampleSettings::for_model(&model, 12, 6);
    let rho = hq();
    let first = check_all(&rho, &model, &s).unwrap();
    let second = check_all(&rho, &model, &s).unwrap();
    assert_eq!(first, second);
    for r in &first {
        match &r.witness {
            Some(w) => {
                assert!(!r.passed);
                assert_eq!(reproduce(&rho, &model, r).unwrap(), Some(w.slack));
            }
            None => assert!(r.passed),
        }
    }
}
