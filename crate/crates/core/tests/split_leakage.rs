use std::collections::BTreeMap;

use proptest::prelude::*;
use trendrec::ingest::{
    build_series, check_leakage, make_samples, window_index, CountMode, DatasetSplit,
    InteractionRecord, ItemMetadata, WindowConfig, WindowRange, SECONDS_PER_DAY,
};
use trendrec::Exec;

const ORIGIN: i64 = 1_262_304_000;

fn records() -> impl Strategy<Value = Vec<InteractionRecord>> {
    prop::collection::vec((0u8..6, 0u8..8, 0i64..(10 * 30 * SECONDS_PER_DAY)), 1..120).prop_map(
        |v| {
            let mut out: Vec<InteractionRecord> = v
                .into_iter()
                .map(|(u, i, dt)| InteractionRecord {
                    user_id: format!("u{u}"),
                    item_id: format!("i{i}"),
                    timestamp: ORIGIN + dt,
                })
                .collect();
            out[0].timestamp = ORIGIN;
            out
        },
    )
}

/// Three contiguous non-empty ranges covering `1..=n`.
fn split(n: u32) -> impl Strategy<Value = DatasetSplit> {
    (1..n - 1)
        .prop_flat_map(move |a| (Just(a), a + 1..n))
        .prop_map(move |(a, b)| {
            DatasetSplit::new(
                WindowRange::new(1, a),
                WindowRange::new(a + 1, b),
                WindowRange::new(b + 1, n),
            )
            .unwrap()
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn splits_are_leakage_free(recs in records(), mode in prop::sample::select(vec![CountMode::Users, CountMode::Events]), seed_split in any::<prop::sample::Index>()) {
        let cfg = WindowConfig::new(30, ORIGIN).unwrap();
        let n = recs.iter().map(|r| window_index(r.timestamp, &cfg).unwrap()).max().unwrap();
        prop_assume!(n >= 3);
        let series = build_series(&recs, &cfg, mode, Exec::default()).unwrap();
        let meta: BTreeMap<String, ItemMetadata> = BTreeMap::new();

        let default = DatasetSplit::default_for(n).unwrap();
        let mut splits = vec![default];
        // pick a random contiguous split as well
        let cut = 1 + seed_split.index((n - 2) as usize) as u32;
        splits.push(DatasetSplit::new(WindowRange::new(1, cut), WindowRange::new(cut + 1, cut + 1), WindowRange::new(cut + 2, n)).unwrap_or(default));

        for sp in splits {
            let samples = make_samples(&series, &meta, &sp).unwrap();
            check_leakage(&samples).unwrap();
            let max_train = samples.train.iter().map(|s| s.target_window).max();
            let min_val = samples.val.iter().map(|s| s.target_window).min();
            let max_val = samples.val.iter().map(|s| s.target_window).max();
            let min_test = samples.test.iter().map(|s| s.target_window).min();
            if let (Some(a), Some(b)) = (max_train, min_val) { prop_assert!(a < b); }
            if let (Some(a), Some(b)) = (max_val, min_test) { prop_assert!(a < b); }

            for s in samples.all() {
                prop_assert_eq!(s.first_window as usize + s.history.len(), s.target_window as usize);
                // the history is unchanged when every record at or after the target is removed
                let past: Vec<InteractionRecord> = recs
                    .iter()
                    .filter(|r| window_index(r.timestamp, &cfg).unwrap() < s.target_window)
                    .cloned()
                    .collect();
                let past_series = build_series(&past, &cfg, mode, Exec::Sequential).unwrap();
                let expect = past_series
                    .get(&s.item_id)
                    .map(|p| p.history_before(s.target_window))
                    .unwrap_or_default();
                if s.is_cold_start() {
                    prop_assert!(expect.is_empty());
                } else {
                    prop_assert_eq!(&s.history, &expect);
                }
            }
        }
    }

    #[test]
    fn any_generated_split_is_ordered(sp in (3u32..20).prop_flat_map(split)) {
        sp.validate().unwrap();
        prop_assert!(sp.train.end < sp.val.start && sp.val.end < sp.test.start);
    }
}
