use proptest::prelude::*;
use regex::Regex;
use vlpipe_core::points::{order_points, parse, parse_point_sets, render, Fragment, ParseMode, Point, PointSet};

fn point() -> impl Strategy<Value = Point> {
    (0.0f64..=100.0, 0.0f64..=100.0).prop_map(|(x, y)| Point::new(x, y))
}

fn text() -> impl Strategy<Value = String> {
    proptest::string::string_regex(r#"[a-zA-Z0-9 <>&"'=/é猫]{0,16}"#).unwrap()
}

fn point_set() -> impl Strategy<Value = PointSet> {
    (prop::collection::vec(point(), 1..12), text(), text()).prop_map(|(p, a, i)| PointSet::new(p, a, i))
}

fn last_index(rendered: &str) -> usize {
    let re = Regex::new(r#" x(\d+)=""#).unwrap();
    re.captures_iter(rendered).map(|c| c[1].parse().unwrap()).max().unwrap_or(1)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn render_parse_render_is_stable(set in point_set()) {
        let first = render(&set).unwrap();
        let parsed = parse_point_sets(&first, ParseMode::Strict).unwrap();
        prop_assert_eq!(parsed.len(), 1);
        let second = render(&parsed[0]).unwrap();
        prop_assert_eq!(&first, &second);
        prop_assert_eq!(last_index(&first), set.points.len());
        prop_assert_eq!(&parsed[0].alt, &set.alt);
        prop_assert_eq!(&parsed[0].inline, &set.inline);
    }

    #[test]
    fn ordering_is_idempotent(points in prop::collection::vec(point(), 0..20)) {
        let once = order_points(&points);
        prop_assert_eq!(order_points(&once), once.clone());
        for w in once.windows(2) {
            prop_assert!(w[0].y < w[1].y || (w[0].y == w[1].y && w[0].x <= w[1].x));
        }
    }

    #[test]
    fn surrounding_text_survives(before in "[a-z ]{0,10}", after in "[a-z ]{0,10}", set in point_set()) {
        let tag = render(&set).unwrap();
        let doc = format!("{before}{tag}{after}");
        let frags = parse(&doc, ParseMode::Strict).unwrap();
        let mut rebuilt = String::new();
        for f in &frags {
            match f {
                Fragment::Text(t) => rebuilt.push_str(t),
                Fragment::Points { set, .. } => rebuilt.push_str(&render(set).unwrap()),
            }
        }
        prop_assert_eq!(rebuilt, doc);
    }
}

#[test]
fn lenient_keeps_bad_tags_as_text() {
    let doc = r#"see <point x="10.0" alt="a">cat</point> and <point x="5" y="6" alt="b">dog</point>"#;
    assert!(parse(doc, ParseMode::Strict).is_err());
    let sets = parse_point_sets(doc, ParseMode::Lenient).unwrap();
    assert_eq!(sets.len(), 1);
    assert_eq!(sets[0].points, vec![Point::new(5.0, 6.0)]);
}
