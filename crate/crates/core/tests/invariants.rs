mod common;

use std::collections::BTreeSet;

use obfubench_core::corpus::{build_split, review_count, sample_human_review, split_violations};
use obfubench_core::docs::Substituter;
use obfubench_core::grade::{compose, pass_at_k};
use obfubench_core::rng::SeededRng;
use obfubench_core::sandbox::values_match;
use obfubench_core::{build_map, map_violations, MapOptions, PseudowordPolicy};
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn maps_are_bijective_and_clean(fns in 1usize..60, seed in any::<u64>()) {
        let surface = common::synthetic_surface(fns);
        let policy = PseudowordPolicy::default();
        let map = build_map(&surface, seed, &policy, &MapOptions::new()).unwrap();
        prop_assert!(map_violations(&map, &surface, &policy).is_empty());
        let images: BTreeSet<_> = map.name_map.values().collect();
        prop_assert_eq!(images.len(), fns);
        prop_assert_eq!(map.inverse().len(), fns);
        prop_assert_eq!(build_map(&surface, seed, &policy, &MapOptions::new()).unwrap(), map);
    }

    #[test]
    fn pass_at_k_is_a_monotone_probability(n in 1usize..40, c_frac in 0.0f64..=1.0, k_frac in 0.0f64..=1.0) {
        let c = (c_frac * n as f64).floor() as usize;
        let k = 1 + ((n - 1) as f64 * k_frac).floor() as usize;
        let p = pass_at_k(n, c, k).unwrap();
        prop_assert!((0.0..=1.0).contains(&p));
        if k < n {
            prop_assert!(pass_at_k(n, c, k + 1).unwrap() >= p - 1e-15);
        }
        if c < n {
            prop_assert!(pass_at_k(n, c + 1, k).unwrap() >= p - 1e-15);
        }
    }

    #[test]
    fn success_needs_every_condition(t: bool, r: bool, f: bool) {
        prop_assert_eq!(compose(t, r, f) == 1, t && r && f);
    }

    #[test]
    fn splits_hold_for_any_seed(fns in 1usize..25, corpus_seed in any::<u64>(), seed in any::<u64>()) {
        let surface = common::synthetic_surface(fns);
        let tasks = common::synthetic_corpus(&surface, &mut SeededRng::new(corpus_seed));
        let s = build_split(&tasks, &surface, seed).unwrap();
        prop_assert!(split_violations(&s, &tasks, &surface).is_empty());
    }

    #[test]
    fn review_sample_has_the_ceiling_size(fns in 1usize..20, corpus_seed in any::<u64>(), pct in 1u32..=100) {
        let surface = common::synthetic_surface(fns);
        let tasks = common::synthetic_corpus(&surface, &mut SeededRng::new(corpus_seed));
        let fraction = f64::from(pct) / 100.0;
        let sample = sample_human_review(&tasks, fraction, 3).unwrap();
        prop_assert_eq!(sample.len(), review_count(tasks.len(), fraction));
        let ids: BTreeSet<&str> = sample.iter().map(|t| t.id.as_str()).collect();
        prop_assert_eq!(ids.len(), sample.len());
    }

    #[test]
    fn substitution_is_idempotent_and_leak_free(words in prop::collection::vec("[a-z_]{1,8}|f[0-9]{1,2}|numpy|linalg\\.f1", 0..30)) {
        let surface = common::synthetic_surface(12);
        let map = build_map(&surface, 9, &PseudowordPolicy::default(), &MapOptions::new()).unwrap();
        let sub = Substituter::new(&map);
        let text = words.join(" ");
        let once = sub.substitute_text(&text, None);
        prop_assert!(sub.find_leaks(&once).is_empty(), "{:?}", once);
        prop_assert_eq!(sub.substitute_text(&once, None), once);
    }

    #[test]
    fn comparator_is_reflexive_and_symmetric(a in -1e6f64..1e6, b in -1e6f64..1e6) {
        let (x, y) = (serde_json::json!([a]), serde_json::json!([b]));
        prop_assert!(values_match(&x, &x));
        prop_assert_eq!(values_match(&x, &y), values_match(&y, &x));
    }
}
