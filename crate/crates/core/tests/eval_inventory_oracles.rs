//! Evaluation metric properties, geolocation linearity and segment
//! assignment against an exhaustive nearest-polyline scan.

mod common;

use proptest::prelude::*;
use rdiv::eval::{mean_test_iou, severity_distribution};
use rdiv::geo::{geolocate, CameraModel, GeoDetection};
use rdiv::geometry::{BBox, Detection};
use rdiv::inventory::{aggregate_segments, report_geojson, Segment, DEFAULT_SEVERITY_WEIGHTS};
use serde_json::Value;

use common::{arb_box, brute_force_nearest};

fn detection(bbox: BBox, category: usize) -> Detection {
    Detection {
        bbox,
        confidence: 0.9,
        category,
        category_probs: vec![0.0; 3],
    }
}

fn geo_at(lat: f64, lon: f64, category: usize) -> GeoDetection {
    GeoDetection {
        detection: detection(BBox { cx: 0.5, cy: 0.5, w: 0.1, h: 0.1 }, category),
        lat,
        lon,
        ground_size_m: (1.0, 1.0),
        image: "x".into(),
    }
}

fn arb_segments() -> impl Strategy<Value = Vec<Segment>> {
    let vertex = (4.6150f64..4.6170, -74.1020f64..-74.1000);
    prop::collection::vec(prop::collection::vec(vertex, 2..5), 1..6).prop_map(|lines| {
        lines
            .into_iter()
            .enumerate()
            .filter_map(|(i, pts)| Segment::new(format!("s{i}"), pts).ok())
            .collect()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn perfect_predictions_score_one(boxes in prop::collection::vec(prop::collection::vec(arb_box(), 0..5), 1..5)) {
        prop_assume!(boxes.iter().any(|b| !b.is_empty()));
        let v = mean_test_iou(&boxes, &boxes).unwrap();
        prop_assert!((v - 1.0).abs() < 1e-12, "{v}");
    }

    #[test]
    fn metric_lies_in_unit_interval(preds in prop::collection::vec(arb_box(), 0..6), gts in prop::collection::vec(arb_box(), 1..6)) {
        let v = mean_test_iou(&[preds], &[gts]).unwrap();
        prop_assert!((0.0..=1.0).contains(&v));
    }

    #[test]
    fn adding_a_prediction_never_lowers_the_metric(
        preds in prop::collection::vec(arb_box(), 0..6),
        extra in arb_box(),
        gts in prop::collection::vec(arb_box(), 1..6),
    ) {
        let before = mean_test_iou(&[preds.clone()], &[gts.clone()]).unwrap();
        let mut more = preds;
        more.push(extra);
        let after = mean_test_iou(&[more], &[gts]).unwrap();
        prop_assert!(after >= before - 1e-12, "{before} -> {after}");
    }

    #[test]
    fn histogram_densities_sum_to_one(cats in prop::collection::vec(0usize..3, 1..200)) {
        let h = severity_distribution(cats.iter().copied());
        prop_assert_eq!(h.counts.iter().sum::<usize>(), cats.len());
        prop_assert!((h.densities.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
    }

    #[test]
    fn geolocation_offsets_are_linear(cx in 0.05f64..0.95, cy in 0.05f64..0.95, alt in 10.0f64..15.0) {
        let cam = CameraModel::new(77.0, 112, 112).unwrap();
        let tag = rdiv::data::Geotag { lat: 4.616, lon: -74.10096, alt_m: alt };
        let at = |x: f64, y: f64| geolocate(&detection(BBox { cx: x, cy: y, w: 0.05, h: 0.05 }, 0), Some(tag), &cam, "i").unwrap();
        let centre = at(0.5, 0.5);
        prop_assert_eq!((centre.lat, centre.lon), (tag.lat, tag.lon));
        let p = at(cx, cy);
        // Offsets scale with the displacement from the image centre.
        let q = at(0.5 + (cx - 0.5) / 2.0, 0.5 + (cy - 0.5) / 2.0);
        prop_assert!(((p.lon - tag.lon) - 2.0 * (q.lon - tag.lon)).abs() < 1e-12);
        prop_assert!(((p.lat - tag.lat) - 2.0 * (q.lat - tag.lat)).abs() < 1e-12);
        prop_assert!(p.ground_size_m.0 > 0.0 && p.ground_size_m.1 > 0.0);
    }

    #[test]
    fn assignment_matches_exhaustive_scan(
        segments in arb_segments(),
        points in prop::collection::vec((4.6145f64..4.6175, -74.1025f64..-74.0995, 0usize..3), 0..=50),
    ) {
        prop_assume!(!segments.is_empty());
        let dets: Vec<_> = points.iter().map(|&(lat, lon, c)| geo_at(lat, lon, c)).collect();
        let inv = aggregate_segments(&dets, &segments, DEFAULT_SEVERITY_WEIGHTS, 30.0).unwrap();
        for (det, got) in dets.iter().zip(&inv.assignment) {
            let want = brute_force_nearest(&segments, (det.lat, det.lon), 30.0).map(|i| segments[i].id.clone());
            prop_assert_eq!(got, &want);
        }
        prop_assert_eq!(inv.unassigned, inv.assignment.iter().filter(|a| a.is_none()).count());
        for w in inv.reports.windows(2) {
            prop_assert!(w[0].score >= w[1].score);
        }
    }

    #[test]
    fn score_grows_with_every_count(level in 0usize..3, base in prop::collection::vec(0usize..3, 0..10)) {
        let seg = vec![Segment::new("r", vec![(4.616, -74.101), (4.616, -74.100)]).unwrap()];
        let on_road = |c: usize| geo_at(4.616, -74.1005, c);
        let mut dets: Vec<_> = base.iter().map(|&c| on_road(c)).collect();
        let before = aggregate_segments(&dets, &seg, DEFAULT_SEVERITY_WEIGHTS, 30.0).unwrap().reports[0].score;
        dets.push(on_road(level));
        let after = aggregate_segments(&dets, &seg, DEFAULT_SEVERITY_WEIGHTS, 30.0).unwrap().reports[0].score;
        prop_assert!(after > before);
    }

    #[test]
    fn geojson_points_reparse_exactly(points in prop::collection::vec((4.6145f64..4.6175, -74.1025f64..-74.0995, 0usize..3), 0..20)) {
        let seg = vec![Segment::new("r", vec![(4.616, -74.101), (4.616, -74.100)]).unwrap()];
        let dets: Vec<_> = points.iter().map(|&(lat, lon, c)| geo_at(lat, lon, c)).collect();
        let inv = aggregate_segments(&dets, &seg, DEFAULT_SEVERITY_WEIGHTS, 30.0).unwrap();
        let v: Value = serde_json::from_str(&report_geojson(&inv, &dets)).unwrap();
        let pts: Vec<&Value> = v["features"].as_array().unwrap().iter().filter(|f| f["geometry"]["type"] == "Point").collect();
        prop_assert_eq!(pts.len(), dets.len());
        for (f, d) in pts.iter().zip(&dets) {
            let c = f["geometry"]["coordinates"].as_array().unwrap();
            prop_assert_eq!(c[0].as_f64().unwrap(), d.lon);
            prop_assert_eq!(c[1].as_f64().unwrap(), d.lat);
            prop_assert_eq!(f["properties"]["severity"].as_u64().unwrap() as usize, d.detection.category);
        }
    }
}
