use proptest::prelude::*;
use slidenet::localize::{greedy_merge, match_score, MergeConfig, Provenance, ScoredBox};
use slidenet::BBox;
use slidenet_oracle::merge_simulator;
use slidenet_oracle::suite::random_merge_instance;

fn scored(i: usize, class_id: usize, (x, y, w, h): (f32, f32, f32, f32), confidence: f64) -> ScoredBox {
    ScoredBox {
        bbox: BBox::new(x, y, x + w, y + h),
        class_id,
        confidence,
        support: 1,
        provenance: vec![Provenance {
            scale: i % 3,
            dx: i % 2,
            dy: 0,
            row: i,
            col: 0,
        }],
    }
}

fn boxes() -> impl Strategy<Value = Vec<ScoredBox>> {
    prop::collection::vec((0usize..3, (0f32..80.0, 0f32..80.0, 1f32..40.0, 1f32..40.0), 0.0f64..1.0), 0..30)
        .prop_map(|v| v.into_iter().enumerate().map(|(i, (c, b, p))| scored(i, c, b, p)).collect())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn greedy_merge_matches_the_simulator(input in boxes(), t in 0.01f64..1.5) {
        let cfg = MergeConfig::new(t, 1, 120.0 * 2f64.sqrt()).unwrap();
        let fast = greedy_merge(input.clone(), &cfg).unwrap();
        let slow = merge_simulator(input.clone(), &cfg);
        prop_assert_eq!(&fast.boxes, &slow);
        prop_assert_eq!(fast.merges, input.len() - fast.boxes.len());
    }

    #[test]
    fn merging_conserves_and_terminates(input in boxes(), t in 0.01f64..1.5) {
        let cfg = MergeConfig::new(t, 1, 120.0 * 2f64.sqrt()).unwrap();
        let out = greedy_merge(input.clone(), &cfg).unwrap();
        prop_assert!(out.merges <= input.len().saturating_sub(1));
        let mass_in: f64 = input.iter().map(|b| b.confidence).sum();
        let mass_out: f64 = out.boxes.iter().map(|b| b.confidence).sum();
        prop_assert!((mass_in - mass_out).abs() <= 1e-12 * mass_in.max(1.0));
        prop_assert_eq!(out.boxes.iter().map(|b| b.support).sum::<usize>(), input.len());
        let mut prov: Vec<Provenance> = out.boxes.iter().flat_map(|b| b.provenance.clone()).collect();
        prov.sort();
        let mut want: Vec<Provenance> = input.iter().flat_map(|b| b.provenance.clone()).collect();
        want.sort();
        prop_assert_eq!(prov, want);
        for (i, a) in out.boxes.iter().enumerate() {
            for b in &out.boxes[i + 1..] {
                prop_assert!(match_score(a, b, cfg.image_diagonal) > t);
            }
        }
    }

    #[test]
    fn merge_is_order_independent(input in boxes(), t in 0.01f64..1.5, rotate in 0usize..30) {
        let cfg = MergeConfig::new(t, 1, 120.0 * 2f64.sqrt()).unwrap();
        let mut shuffled = input.clone();
        if !shuffled.is_empty() {
            let k = rotate % shuffled.len();
            shuffled.rotate_left(k);
            shuffled.reverse();
        }
        prop_assert_eq!(greedy_merge(input, &cfg).unwrap().boxes, greedy_merge(shuffled, &cfg).unwrap().boxes);
    }
}

#[test]
fn dyadic_instances_conserve_mass_exactly() {
    for seed in 0..200 {
        let (input, cfg) = random_merge_instance(seed);
        let out = greedy_merge(input.clone(), &cfg).unwrap();
        assert_eq!(out.boxes, merge_simulator(input.clone(), &cfg), "seed {seed}");
        let mass_in: f64 = input.iter().map(|b| b.confidence).sum();
        let mass_out: f64 = out.boxes.iter().map(|b| b.confidence).sum();
        assert_eq!(mass_in.to_bits(), mass_out.to_bits(), "seed {seed}");
    }
}
