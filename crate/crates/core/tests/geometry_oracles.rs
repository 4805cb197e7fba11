//! Box geometry, target encoding and suppression against independent
//! references.

mod common;

use proptest::prelude::*;
use rdiv::geometry::{decode_predictions, encode_targets, iou, nms, Detection, GridSpec};

use common::{arb_box, brute_force_nms, det, one_per_cell_boxes, raster_iou};

fn arb_detection() -> impl Strategy<Value = Detection> {
    // Coarse confidences make ties common.
    (arb_box(), 0u32..8, 0usize..3).prop_map(|(b, c, cat)| det(b, c as f64 / 8.0, cat))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn iou_matches_rasterization(a in arb_box(), b in arb_box()) {
        let exact = iou(&a, &b);
        let approx = raster_iou(&a, &b, 800);
        prop_assert!((exact - approx).abs() < 1e-2, "{exact} vs {approx}");
    }

    #[test]
    fn iou_is_symmetric_and_bounded(a in arb_box(), b in arb_box()) {
        let v = iou(&a, &b);
        prop_assert!((0.0..=1.0).contains(&v));
        prop_assert_eq!(v, iou(&b, &a));
        prop_assert_eq!(iou(&a, &a), 1.0);
    }

    #[test]
    fn nms_matches_brute_force(dets in prop::collection::vec(arb_detection(), 0..=10), t in 0.05f64..0.95) {
        prop_assert_eq!(nms(&dets, t), brute_force_nms(&dets, t));
    }

    #[test]
    fn encode_then_decode_reproduces_boxes(gts in one_per_cell_boxes(7)) {
        let grid = GridSpec::new(7, 2, 3).unwrap();
        let encoded = encode_targets(&gts, grid).unwrap();
        prop_assert_eq!(encoded.collisions, 0);
        let dets = decode_predictions(&encoded.values, grid, 0.5).unwrap();
        prop_assert_eq!(dets.len(), gts.len());
        for (bbox, category) in &gts {
            let hit = dets.iter().find(|d| iou(&d.bbox, bbox) == 1.0);
            prop_assert!(hit.is_some(), "{:?} lost", bbox);
            prop_assert_eq!(hit.unwrap().category, *category);
        }
    }

    #[test]
    fn encoding_ignores_annotation_order(gts in prop::collection::vec((arb_box(), 0usize..3), 0..8), seed in any::<u64>()) {
        use rand::seq::SliceRandom;
        use rand::SeedableRng;
        let grid = GridSpec::new(7, 2, 3).unwrap();
        let mut shuffled = gts.clone();
        shuffled.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
        prop_assert_eq!(encode_targets(&gts, grid).unwrap(), encode_targets(&shuffled, grid).unwrap());
    }
}

#[test]
fn paper_grid_output_length() {
    assert_eq!(GridSpec::new(7, 2, 3).unwrap().output_len(), 637);
}
