mod support;

use std::collections::BTreeSet;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use smartrescue_core::predicate::{match_all, Predicate, SubscriptionPredicate};

use support::{naive_matches, random_constraint, random_event, random_predicate};

#[test]
fn matches_agrees_with_naive_evaluator_on_random_pairs() {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let mut agreements = 0usize;
    let mut positives = 0usize;
    for i in 0..20_000u64 {
        let pred = random_predicate(&mut rng);
        let event = random_event(&mut rng, i + 1);
        let expected = naive_matches(&pred.to_string(), &event);
        assert_eq!(pred.matches(&event), expected, "pred {pred} event {event:?}");
        agreements += 1;
        positives += expected as usize;
    }
    assert_eq!(agreements, 20_000);
    // both outcomes must be well represented for the comparison to mean anything
    assert!(positives > 2_000 && positives < 18_000, "positives {positives}");
}

#[test]
fn match_all_equals_per_predicate_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for round in 0..500u64 {
        let registry: Vec<SubscriptionPredicate> = (0..rng.random_range(0..20))
            .map(|i| SubscriptionPredicate::new(format!("s{i}"), random_predicate(&mut rng)))
            .collect();
        let event = random_event(&mut rng, round + 1);
        let expected: BTreeSet<String> = registry
            .iter()
            .filter(|p| naive_matches(&p.predicate.to_string(), &event))
            .map(|p| p.subscription_id.clone())
            .collect();
        assert_eq!(match_all(&registry, &event), expected);
    }
}

#[test]
fn three_predicates_two_match() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let event = random_event(&mut rng, 1);
    let kind = event.kind.as_str();
    let registry = vec![
        SubscriptionPredicate::new("yes-1", Predicate::parse(&format!("kind={kind}")).unwrap()),
        SubscriptionPredicate::new("no", Predicate::parse("publisher=nobody").unwrap()),
        SubscriptionPredicate::new("yes-2", Predicate::match_all()),
    ];
    let ids = match_all(&registry, &event);
    assert_eq!(ids.len(), 2);
    assert!(ids.contains("yes-1") && ids.contains("yes-2"));

    let all_empty: Vec<_> = (0..5)
        .map(|i| SubscriptionPredicate::new(format!("e{i}"), Predicate::match_all()))
        .collect();
    assert_eq!(match_all(&all_empty, &event).len(), 5);
}

use rand::Rng;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn adding_a_constraint_never_grows_the_match_set(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let base = random_predicate(&mut rng);
        let narrowed = base.clone().and(random_constraint(&mut rng)).unwrap();
        for i in 0..50 {
            let event = random_event(&mut rng, i + 1);
            if narrowed.matches(&event) {
                prop_assert!(base.matches(&event));
            }
        }
    }

    #[test]
    fn printed_predicates_parse_back(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = random_predicate(&mut rng);
        prop_assert_eq!(Predicate::parse(&p.to_string()).unwrap(), p);
    }

    #[test]
    fn arbitrary_thresholds_round_trip(threshold in proptest::num::f64::NORMAL | proptest::num::f64::SUBNORMAL | proptest::num::f64::ZERO) {
        let text = format!("value<={threshold}");
        let p = Predicate::parse(&text).unwrap();
        prop_assert_eq!(Predicate::parse(&p.to_string()).unwrap(), p);
    }

    #[test]
    fn matching_is_deterministic(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = random_predicate(&mut rng);
        let e = random_event(&mut rng, 1);
        prop_assert_eq!(p.matches(&e), p.matches(&e.clone()));
    }
}
