use psychoforge_core::classical::{cronbach_alpha, distractor_analysis, item_analysis};
use psychoforge_core::dataset::{ItemInfo, ItemType, ResponseDataset};

#[path = "support/classical_oracle.rs"]
mod oracle;

const TOL: f64 = 1e-12;

fn dataset(h: &oracle::Hand) -> ResponseDataset {
    let rows = h.raw.iter().map(|r| r.iter().map(|s| Some(s.clone())).collect()).collect();
    let mut ds = ResponseDataset::new(h.names.clone(), rows).unwrap();
    let mut i4 = ItemInfo::new("i4", ItemType::Nominal);
    i4.key = Some("B".into());
    i4.options = Some(vec!["A".into(), "B".into(), "C".into()]);
    ds.set_item_info(3, i4).unwrap();
    let mut i5 = ItemInfo::new("i5", ItemType::Ordinal);
    i5.max_score = Some(2);
    ds.set_item_info(4, i5).unwrap();
    ds
}

#[test]
fn hand_dataset_matches_brute_force() {
    let h = oracle::hand();
    let ds = dataset(&h);
    let scored = ds.score().unwrap();
    let totals = scored.total_scores();
    let stats = item_analysis(&scored, &totals, oracle::GROUPS).unwrap();
    for (i, s) in stats.iter().enumerate() {
        assert!((s.difficulty.unwrap() - h.difficulty(i)).abs() < TOL, "difficulty {i}");
        assert!((s.rit.unwrap() - h.rit(i)).abs() < TOL, "rit {i}");
        assert!((s.rir.unwrap() - h.rir(i)).abs() < TOL, "rir {i}");
        assert!((s.uli.unwrap() - h.uli(i)).abs() < TOL, "uli {i}");
    }
    let d = distractor_analysis(&ds, &totals, "i4", oracle::GROUPS).unwrap();
    assert_eq!(d.options, oracle::I4_OPTIONS);
    for (got, want) in d.proportions.iter().flatten().zip(h.distractors().iter().flatten()) {
        assert!((got - want).abs() < TOL);
    }
    let alpha = cronbach_alpha(&scored).unwrap().unwrap();
    assert!((alpha - h.alpha()).abs() < TOL, "{alpha} vs {}", h.alpha());
}
