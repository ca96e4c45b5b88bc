use proptest::prelude::*;
use qtune_core::gamma::oracle::brute_force_min_gamma;
use qtune_core::gamma::{candidate_gammas, check_atomic};
use qtune_core::sim::INITIAL_TOKEN;
use qtune_core::{gamma_score, per_key_gamma, IntervalOp};

/// Single-key trace of up to `max` ops with unique write tokens; reads return a
/// written token or the initial one.
fn single_key(max: usize) -> impl Strategy<Value = Vec<IntervalOp>> {
    prop::collection::vec((any::<bool>(), 0i64..80, 1i64..30, any::<prop::sample::Index>()), 1..=max).prop_map(
        |specs| {
            let writes = specs.iter().filter(|s| s.0).count() as u64;
            let mut next = 1;
            specs
                .into_iter()
                .map(|(is_write, start, len, pick)| {
                    if is_write {
                        next += 1;
                        IntervalOp::write("k", start, start + len, next - 1)
                    } else {
                        let v = pick.index(writes as usize + 1) as u64;
                        IntervalOp::read("k", start, start + len, if v == 0 { INITIAL_TOKEN } else { v })
                    }
                })
                .collect()
        },
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn fast_gamma_matches_enumeration(ops in single_key(6)) {
        prop_assert_eq!(per_key_gamma(&ops).unwrap(), brute_force_min_gamma(&ops).unwrap());
    }

    #[test]
    fn atomicity_is_monotone_in_gamma(ops in single_key(7), g in 0u64..60, dg in 0u64..60) {
        if check_atomic(&ops, g).unwrap() {
            prop_assert!(check_atomic(&ops, g + dg).unwrap());
        }
    }

    #[test]
    fn gamma_is_zero_exactly_when_atomic(ops in single_key(7)) {
        prop_assert_eq!(per_key_gamma(&ops).unwrap() == 0, check_atomic(&ops, 0).unwrap());
    }

    #[test]
    fn minimal_gamma_is_a_candidate_and_tight(ops in single_key(7)) {
        let g = per_key_gamma(&ops).unwrap();
        prop_assert!(check_atomic(&ops, g).unwrap());
        prop_assert!(g == 0 || candidate_gammas(&ops).contains(&g));
        if g > 0 {
            prop_assert!(!check_atomic(&ops, g - 1).unwrap());
        }
    }

    #[test]
    fn scores_are_translation_invariant(a in single_key(6), b in single_key(6), shift in -1_000_000i64..1_000_000) {
        let trace: Vec<IntervalOp> = a
            .into_iter()
            .chain(b.into_iter().map(|mut op| { op.key = "j".into(); op }))
            .collect();
        let moved: Vec<IntervalOp> = trace
            .iter()
            .cloned()
            .map(|mut op| { op.start += shift; op.finish += shift; op })
            .collect();
        prop_assert_eq!(gamma_score(&trace, 95.0).unwrap(), gamma_score(&moved, 95.0).unwrap());
    }
}

#[test]
fn worked_examples() {
    let stale = vec![
        IntervalOp::write("a", 0, 10_000, 1),
        IntervalOp::write("a", 20_000, 30_000, 2),
        IntervalOp::read("a", 40_000, 50_000, 1),
    ];
    assert!(!check_atomic(&stale, 0).unwrap());
    assert!(check_atomic(&stale, 10_000).unwrap());
    assert_eq!(per_key_gamma(&stale).unwrap(), 10_000);
    assert_eq!(brute_force_min_gamma(&[]).unwrap(), 0);
    assert_eq!(brute_force_min_gamma(&[IntervalOp::read("a", 0, 5, INITIAL_TOKEN)]).unwrap(), 0);

    let mut trace = stale.clone();
    for key in ["b", "c", "d"] {
        trace.push(IntervalOp::write(key, 0, 10, 1));
    }
    let report = gamma_score(&trace, 95.0).unwrap();
    assert_eq!(report.score_us, 10_000);
    assert_eq!(report.per_key_gamma.len(), 4);
}

#[test]
fn unknown_read_token_is_malformed() {
    let ops = vec![IntervalOp::write("a", 0, 10, 1), IntervalOp::read("a", 20, 30, 9)];
    assert!(per_key_gamma(&ops).is_err());
}
