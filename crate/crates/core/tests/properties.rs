mod common;

use common::*;
use proptest::prelude::*;

fn alpha_terms(depth: u32) -> BoxedStrategy<Term> {
    let a = alphabet();
    term_strategy(a.atom_terms(), a.keys(), depth)
}

use mi_checker::terms::Term;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn derivation_matches_closure_oracle(
        kb in proptest::collection::vec(alpha_terms(3), 0..5),
        goal in alpha_terms(3),
    ) {
        check_closure_oracle(&kb, &goal)?;
    }

    #[test]
    fn derivation_is_monotone(
        kb in proptest::collection::vec(alpha_terms(3), 0..5),
        goal in alpha_terms(3),
        extra in alpha_terms(2),
    ) {
        check_monotone(&kb, &goal, &extra)?;
    }

    #[test]
    fn decrypt_inverts_encrypt(t in alpha_terms(2), i in 0usize..3, j in 0usize..3) {
        let keys = alphabet().keys();
        check_decrypt_encrypt(&t, keys[i], keys[j])?;
    }

    #[test]
    fn secrets_stay_under_unknown_keys(
        kb in public_strategy(&alphabet()),
        wrapped in alpha_terms(2),
    ) {
        check_perfect_encryption(&kb, &wrapped)?;
    }

    #[test]
    fn metadata_comparison_is_reflexive_and_symmetric(a in entry_strategy(), b in entry_strategy()) {
        check_compare(&a, &b)?;
    }

    #[test]
    fn ikt_keeps_zero_suffix(
        sessions in proptest::collection::vec(0usize..PAIRS.len(), 1..4),
        stops in proptest::collection::vec(proptest::option::of(1usize..4), 0..4),
    ) {
        check_zero_suffix(&sessions, &stops)?;
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn transitions_equal_stored_plus_matched(
        n in 1usize..3,
        fake_depth in 0usize..3,
        active in tag_subset(),
        bfs in any::<bool>(),
        exhaustive in any::<bool>(),
        max_states in 1usize..400,
    ) {
        check_transitions_identity(n, fake_depth, active, bfs, exhaustive, max_states)?;
    }

    #[test]
    fn fewer_tags_give_fewer_actions(
        choices in proptest::collection::vec(any::<usize>(), 0..8),
        small in tag_subset(),
        extra in tag_subset(),
    ) {
        check_anti_monotone(&choices, small, extra)?;
    }

    #[test]
    fn stopped_processes_stay_stopped(
        injections in proptest::collection::vec(
            (any::<usize>(), nspk_term_strategy(&nspk_world(2, 2))),
            1..10,
        ),
        sends in proptest::collection::vec(any::<usize>(), 0..10),
    ) {
        check_fail_stop(&injections, &sends)?;
    }
}

#[test]
fn comparison_is_not_transitive() {
    let (a, b, c) = compare_counterexample();
    assert!(mi_checker::mi::compare(&a, &b));
    assert!(mi_checker::mi::compare(&b, &c));
    assert!(!mi_checker::mi::compare(&a, &c));
}

#[test]
fn responder_nonce_is_not_initially_derivable() {
    let w = nspk_world(2, 2);
    let kb = mi_checker::intruder::Knowledge::new(w.intruder_knowledge.clone());
    for name in ["Na#1", "Nb#1", "Na#2", "Nb#2"] {
        let id = w.atoms.lookup(name).unwrap();
        assert!(!kb.can_derive(&Term::Atom(id), 3), "{name}");
    }
}
