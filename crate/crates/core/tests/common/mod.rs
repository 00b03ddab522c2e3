#![allow(dead_code)]

use proptest::prelude::*;
use trendrec::ingest::{ItemMetadata, Sample};

pub const WORDS: &[&str] = &[
    "Comedy", "drama", "Philips", "bottle", "Rack", "silk", "scarf", "winter", "Jazz", "vinyl",
    "organic", "tea", "AVENT", "drying", "leather", "wallet",
];

pub fn sample(
    item: &str,
    target: u32,
    history: Vec<u64>,
    text: &str,
    label: Option<u64>,
) -> Sample {
    Sample {
        sample_id: Sample::make_id(item, target),
        item_id: item.to_string(),
        target_window: target,
        first_window: target - history.len() as u32,
        history,
        metadata: ItemMetadata {
            item_id: item.to_string(),
            description_text: text.to_string(),
            attributes: None,
        },
        label,
    }
}

pub fn text_strategy() -> impl Strategy<Value = String> {
    prop::collection::vec(prop::sample::select(WORDS), 0..6).prop_map(|w| w.join(" "))
}

/// A sample with a random history, description and label; `idx` keeps ids
/// distinct within a pool.
pub fn sample_strategy(idx: usize) -> impl Strategy<Value = Sample> {
    (
        prop::collection::vec(0u64..12, 0..7),
        text_strategy(),
        prop::option::of(0u64..12),
        1u32..4,
    )
        .prop_map(move |(h, text, label, gap)| {
            let target = h.len() as u32 + gap;
            sample(&format!("item{idx:02}"), target, h, &text, label)
        })
}

pub fn pool_strategy(max: usize) -> impl Strategy<Value = Vec<Sample>> {
    (1..=max).prop_flat_map(|n| (0..n).map(sample_strategy).collect::<Vec<_>>())
}
