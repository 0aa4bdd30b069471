use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vlpipe_core::mask::Mask;
use vlpipe_core::point_eval::{
    aggregate, counting_accuracy, evaluate_dataset, extract_count, score_example, score_no_target, score_pointing,
    CountStrategy, GroundTruthRecord, PredictionRecord,
};
use vlpipe_core::points::Point;

// 101 px wide so that percent coordinates land on whole pixels.
const SIDE: u32 = 101;

fn scene() -> (Vec<Point>, Vec<Mask>) {
    let masks = vec![
        Mask::rect(SIDE, SIDE, 10, 10, 20, 20),
        Mask::rect(SIDE, SIDE, 50, 50, 60, 60),
        Mask::rect(SIDE, SIDE, 80, 10, 90, 20),
    ];
    let points = vec![Point::new(15.0, 15.0), Point::new(55.0, 55.0), Point::new(85.0, 15.0)];
    (points, masks)
}

#[test]
fn three_mask_scene() {
    let (gt, masks) = scene();
    // Two hits, one matched miss, one unmatched extra.
    let preds = [
        Point::new(12.0, 12.0),
        Point::new(58.0, 58.0),
        Point::new(40.0, 40.0),
        Point::new(95.0, 95.0),
    ];
    let s = score_pointing(&preds, &gt, &masks, SIDE, SIDE).unwrap();
    assert_eq!((s.precision, s.recall), (2.0 / 4.0, 2.0 / 3.0));
    assert_eq!(s.f1, 2.0 * 0.5 * (2.0 / 3.0) / (0.5 + 2.0 / 3.0));

    // Exact hits everywhere.
    let s = score_pointing(&gt, &gt, &masks, SIDE, SIDE).unwrap();
    assert_eq!((s.precision, s.recall, s.f1), (1.0, 1.0, 1.0));

    // Both predictions fall in mask 0, but only one may claim it.
    let crowded = [Point::new(12.0, 12.0), Point::new(18.0, 18.0)];
    let s = score_pointing(&crowded, &gt[..2], &masks[..2], SIDE, SIDE).unwrap();
    assert_eq!((s.precision, s.recall), (0.5, 0.5));

    // Nothing predicted.
    let s = score_pointing(&[], &gt, &masks, SIDE, SIDE).unwrap();
    assert_eq!((s.precision, s.recall, s.f1), (0.0, 0.0, 0.0));
}

#[test]
fn mask_edge_uses_pixel_rounding() {
    let mask = vec![Mask::rect(SIDE, SIDE, 10, 10, 20, 20)];
    let gt = [Point::new(15.0, 15.0)];
    let inside = score_pointing(&[Point::new(19.4, 15.0)], &gt, &mask, SIDE, SIDE).unwrap();
    let outside = score_pointing(&[Point::new(19.6, 15.0)], &gt, &mask, SIDE, SIDE).unwrap();
    assert_eq!(inside.precision, 1.0);
    assert_eq!(outside.precision, 0.0);
}

#[test]
fn no_target_rule() {
    assert_eq!(score_no_target("There are no cars in this image.").f1, 1.0);
    let s = score_no_target(r#"<point x="10.0" y="10.0" alt="car">car</point>"#);
    assert_eq!((s.precision, s.recall, s.f1), (0.0, 0.0, 0.0));
    let empty = GroundTruthRecord { id: "n".into(), image_w: 10, image_h: 10, points: vec![], masks: vec![] };
    assert_eq!(score_example(&empty, "").unwrap().recall, 1.0);
}

#[test]
fn gt_order_does_not_matter() {
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    for _ in 0..100 {
        let n = rng.random_range(1..6);
        let mut gt = Vec::new();
        let mut masks = Vec::new();
        for _ in 0..n {
            let (x, y) = (rng.random_range(0..90u32), rng.random_range(0..90u32));
            let (w, h) = (rng.random_range(1..12u32), rng.random_range(1..12u32));
            masks.push(Mask::rect(SIDE, SIDE, x, y, x + w, y + h));
            gt.push(Point::new(x as f64 + w as f64 / 2.0, y as f64 + h as f64 / 2.0));
        }
        let preds: Vec<Point> = (0..rng.random_range(1..7))
            .map(|_| Point::new(rng.random_range(0.0..100.0), rng.random_range(0.0..100.0)))
            .collect();
        let base = score_pointing(&preds, &gt, &masks, SIDE, SIDE).unwrap();
        let mut order: Vec<usize> = (0..n).collect();
        order.reverse();
        let gt2: Vec<Point> = order.iter().map(|&i| gt[i]).collect();
        let masks2: Vec<Mask> = order.iter().map(|&i| masks[i].clone()).collect();
        let flipped = score_pointing(&preds, &gt2, &masks2, SIDE, SIDE).unwrap();
        assert_eq!(base, flipped, "{gt:?} {preds:?}");
    }
}

#[test]
fn dataset_aggregation() {
    let (gt, masks) = scene();
    let records = vec![
        GroundTruthRecord {
            id: "b".into(),
            image_w: SIDE,
            image_h: SIDE,
            points: gt.iter().map(|p| [p.x, p.y]).collect(),
            masks,
        },
        GroundTruthRecord { id: "a".into(), image_w: SIDE, image_h: SIDE, points: vec![], masks: vec![] },
    ];
    let preds = vec![
        PredictionRecord { id: "a".into(), response_text: "None here.".into() },
        PredictionRecord {
            id: "b".into(),
            response_text: r#"<points x1="12.0" y1="12.0" x2="58.0" y2="58.0" alt="x">x</points>"#.into(),
        },
    ];
    let scores = evaluate_dataset(&records, &preds).unwrap();
    assert_eq!(scores.iter().map(|s| s.id.as_str()).collect::<Vec<_>>(), vec!["a", "b"]);
    assert_eq!((scores[1].precision, scores[1].recall), (1.0, 2.0 / 3.0));
    let agg = aggregate(&scores).unwrap();
    assert_eq!(agg.precision, 1.0);
    assert_eq!(agg.recall, (1.0 + 2.0 / 3.0) / 2.0);
}

#[test]
fn counting_fixture() {
    let mut items = Vec::new();
    for i in 0..100u64 {
        let truth = i % 9 + 1;
        let said = if i < 17 { truth + 1 } else { truth };
        let pts: Vec<String> = (1..=truth).map(|k| format!(r#"x{k}="{}.0" y{k}="5.0""#, k)).collect();
        let text = if truth == 1 {
            format!(r#"<point x="1.0" y="5.0" alt="apple">apple</point> Counting the apples shows a total of {said}."#)
        } else {
            format!(r#"<points {} alt="apple">apple</points> Counting the apples shows a total of {said}."#, pts.join(" "))
        };
        items.push((text, truth));
    }
    assert_eq!(counting_accuracy(&items, CountStrategy::PointThenCount).unwrap(), 0.83);
    assert_eq!(counting_accuracy(&items, CountStrategy::PointRegex).unwrap(), 1.0);
    assert_eq!(extract_count("There are 3.5 or 4 dogs", CountStrategy::Count), Some(4));
}
