mod support;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rvv_core::schedule::*;
use support::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn format_then_parse_is_identity(seed in any::<u64>()) {
        let h = notation_history(&mut ChaCha8Rng::seed_from_u64(seed), 5, 12);
        let text = format_history(&h);
        prop_assert_eq!(parse_history(&text).map_err(|e| e.to_string()), Ok(h), "{}", text);
    }

    #[test]
    fn parser_is_total_and_positions_errors(bytes in proptest::collection::vec(any::<u8>(), 0..64), seed in any::<u64>()) {
        let biased = fuzz_bytes(&mut ChaCha8Rng::seed_from_u64(seed), 48);
        for input in [&bytes, &biased] {
            if let Err(e) = parse_history_bytes(input) {
                let (line, column) = e.position();
                let lines = input.iter().filter(|b| **b == b'\n').count() + 1;
                prop_assert!(line >= 1 && line <= lines && column >= 1, "{e} on {input:?}");
            }
        }
    }

    #[test]
    fn graph_verdict_matches_brute_force(seed in any::<u64>(), config in 0usize..16) {
        let h = executable_history(&mut ChaCha8Rng::seed_from_u64(seed), 4, 8);
        let (config, iso) = config_for(config);
        let executed = run_history(&h, config, iso).map_err(|e| TestCaseError::fail(format!("{h}: {e}")))?;
        for trace in [literal_trace(&h), executed] {
            prop_assert_eq!(check_serializability(&trace).serializable, brute_force_serializable(&trace), "{}", h);
        }
    }

    #[test]
    fn execution_is_deterministic(seed in any::<u64>(), config in 0usize..16) {
        let h = executable_history(&mut ChaCha8Rng::seed_from_u64(seed), 4, 8);
        let (config, iso) = config_for(config);
        let first = run_history(&h, config, iso).map(|t| t.serialize()).map_err(|e| e.to_string());
        let second = run_history(&h, config, iso).map(|t| t.serialize()).map_err(|e| e.to_string());
        prop_assert_eq!(first, second);
    }
}

#[test]
fn brute_force_agrees_on_select_update_race() {
    let h = parse_history("txn A delta=-100\ntxn B delta=-200\nrA(x) rB(x) wB(x) cB wA(x) cA").unwrap();
    let (config, iso) = config_for(0);
    let trace = run_history(&h, config, iso).unwrap();
    assert!(!brute_force_serializable(&trace));
    assert!(!check_serializability(&trace).serializable);
}
