mod common;

use std::collections::BTreeSet;

use common::{sample, sample_strategy};
use proptest::prelude::*;
use trendrec::scoring::{
    predict, rank_window, score, Explainer, ExplanationRecord, PredictionRecord, ScorerSpec,
    NO_HISTORY_PHRASE,
};
use trendrec::similarity::tokenize;
use trendrec::synthetic::{generate, SyntheticConfig};
use trendrec::Exec;

fn quoted(section: &str) -> Vec<&str> {
    section.split('"').skip(1).step_by(2).collect()
}

fn specs() -> [ScorerSpec; 3] {
    [
        ScorerSpec::LastValue,
        ScorerSpec::MovingAverage { window: 3 },
        ScorerSpec::LinearTrend,
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn explanation_contract(s in sample_strategy(0), spec in prop::sample::select(specs().to_vec())) {
        let sc = score(&spec, &s);
        prop_assert!(sc >= 0.0);
        let preds = predict(std::slice::from_ref(&s), &[sc], &Explainer::default(), Exec::Sequential).unwrap();
        let e = &preds[0].explanation;
        for section in [&e.trend_section, &e.feature_section, &e.integration_section] {
            prop_assert!(!section.trim().is_empty());
        }
        if s.is_cold_start() {
            prop_assert!(e.trend_section.contains(NO_HISTORY_PHRASE));
        } else {
            prop_assert!(!e.trend_section.contains(NO_HISTORY_PHRASE));
        }
        let text = &s.metadata.description_text;
        let distinct: BTreeSet<String> = tokenize(text).map(str::to_lowercase).collect();
        let cited = quoted(&e.feature_section);
        prop_assert_eq!(cited.len(), distinct.len().min(2));
        for tok in cited {
            prop_assert!(text.contains(tok), "{} not in {}", tok, text);
        }

        let rendered = e.render();
        let t = rendered.find("[Trend]: ").unwrap();
        let f = rendered.find(" [Feature]: ").unwrap();
        let i = rendered.find(" [Integration]: ").unwrap();
        prop_assert!(t < f && f < i);
        prop_assert_eq!(&ExplanationRecord::parse(&rendered).unwrap(), e);

        let json = serde_json::to_value(PredictionRecord::from(&preds[0])).unwrap();
        let keys: BTreeSet<&str> = json.as_object().unwrap().keys().map(String::as_str).collect();
        prop_assert_eq!(keys, BTreeSet::from(["sample_id", "predict_popularity_score", "explanation_of_score"]));
    }

    #[test]
    fn linear_trend_extends_increasing_arithmetic_history(start in 0u64..20, step in 1u64..10, len in 2usize..10) {
        let h: Vec<u64> = (0..len as u64).map(|k| start + k * step).collect();
        let s = sample("x", len as u32 + 1, h.clone(), "", None);
        let p = score(&ScorerSpec::LinearTrend, &s);
        prop_assert!(p > *h.last().unwrap() as f64);
        prop_assert!((p - (start + len as u64 * step) as f64).abs() < 1e-9);
    }

    #[test]
    fn ranking_ignores_input_order(scores in prop::collection::vec(0u8..5, 1..12), rot in 0usize..12) {
        let samples: Vec<_> = (0..scores.len()).map(|i| sample(&format!("it{i:02}"), 9, vec![1], "", None)).collect();
        let sc: Vec<f64> = scores.iter().map(|&s| f64::from(s)).collect();
        let preds = predict(&samples, &sc, &Explainer::default(), Exec::Sequential).unwrap();
        let mut rotated = preds.clone();
        rotated.rotate_left(rot % preds.len());
        let a = rank_window(&preds, preds.len()).unwrap();
        prop_assert_eq!(&a, &rank_window(&rotated, preds.len()).unwrap());
        prop_assert!(a.windows(2).all(|w| w[0].score > w[1].score || (w[0].score == w[1].score && w[0].item_id < w[1].item_id)));
        prop_assert_eq!(a.iter().map(|r| r.rank).collect::<Vec<_>>(), (1..=preds.len()).collect::<Vec<_>>());
    }
}

#[test]
fn dominant_item_ranks_first_for_every_scorer() {
    let cfg = SyntheticConfig {
        planted: 1,
        ..Default::default()
    };
    let corpus = generate(&cfg).unwrap();
    let target = cfg.windows + 1;
    let samples: Vec<_> = corpus
        .counts
        .iter()
        .filter(|(_, c)| c.iter().any(|&x| x > 0))
        .map(|(id, c)| {
            let first = c.iter().position(|&x| x > 0).unwrap();
            let h: Vec<u64> = c[first..].iter().map(|&x| x as u64).collect();
            sample(id, target, h, "", None)
        })
        .collect();
    for spec in specs() {
        let sc: Vec<f64> = samples.iter().map(|s| score(&spec, s)).collect();
        let preds = predict(&samples, &sc, &Explainer::default(), Exec::Sequential).unwrap();
        assert_eq!(
            rank_window(&preds, 1).unwrap()[0].item_id,
            corpus.planted[0],
            "{spec:?}"
        );
    }
}
