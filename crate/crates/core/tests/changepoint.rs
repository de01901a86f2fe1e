mod common;

use proptest::prelude::*;
use shapespline::changepoint::best_by_k;
use shapespline::*;

use common::uniform;

fn bump_data() -> (Observations, ProblemSpec) {
    let t = uniform(25);
    let y: Vec<f64> = t
        .iter()
        .map(|&x| (-30.0 * (x - 0.4).powi(2)).exp() + 0.02 * (17.0 * x).sin())
        .collect();
    let obs = Observations::new(t, y, None).unwrap();
    let spec = ProblemSpec::quadratic(SobolevParams::new(1, 2.0).unwrap(), 1e-3, &obs).unwrap();
    (obs, spec)
}

fn coarse(k: usize) -> SearchSpec {
    SearchSpec {
        grid_points: 9,
        refine: 0,
        cells: 512,
        ..SearchSpec::new(k)
    }
}

#[test]
fn best_value_is_monotone_in_k() {
    let (obs, spec) = bump_data();
    let results = best_by_k(&obs, &spec, &coarse(0), 2).unwrap();
    for w in results.windows(2) {
        assert!(w[1].value <= w[0].value + 1e-8, "{} vs {}", w[1].value, w[0].value);
    }
    // A single bump needs one change point; a second one buys nothing.
    assert!(results[1].value < 0.5 * results[0].value);
    assert_eq!(results[1].orientation, Orientation::Positive);
}

#[test]
fn k_zero_is_orientation_choice() {
    let (obs, spec) = bump_data();
    let opts = DualOptions::default();
    let r = search(&obs, &spec, &coarse(0)).unwrap();
    let direct = Orientation::both()
        .map(|o| profile_objective(&obs, &spec, &[], o, 512, &opts).unwrap());
    assert_eq!(r.value, direct[0].min(direct[1]));
    assert!(r.points.is_empty());
    assert_eq!(r.table.len(), 2);
}

#[test]
fn duplicated_incumbent_is_not_better_than_collapsed() {
    let (obs, spec) = bump_data();
    let r = search(&obs, &spec, &coarse(2)).unwrap();
    let opts = DualOptions::default();
    for c in r.table.iter().filter(|c| c.points[0] == c.points[1]) {
        let collapsed = profile_objective(&obs, &spec, &[], c.orientation, 512, &opts).unwrap();
        let v = c.value.unwrap();
        assert!((v - collapsed).abs() <= 1e-8 * (1.0 + collapsed.abs()));
    }
}

#[test]
fn refinement_never_worsens_incumbent() {
    let (obs, spec) = bump_data();
    let plain = search(&obs, &spec, &coarse(1)).unwrap();
    let refined = search(
        &obs,
        &spec,
        &SearchSpec {
            refine: 3,
            ..coarse(1)
        },
    )
    .unwrap();
    assert!(refined.value <= plain.value);
    assert!((refined.points[0] - 0.4).abs() <= 0.05, "{:?}", refined.points);
}

#[test]
fn rejects_empty_orientation_list() {
    let (obs, spec) = bump_data();
    let s = SearchSpec {
        orientations: vec![],
        ..coarse(1)
    };
    assert!(matches!(search(&obs, &spec, &s), Err(Error::Invalid(_))));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn point_order_does_not_matter(
        a in 0.0f64..=1.0,
        b in 0.0f64..=1.0,
        c in 0.0f64..=1.0,
        positive in any::<bool>(),
    ) {
        let (obs, spec) = bump_data();
        let o = if positive { Orientation::Positive } else { Orientation::Negative };
        let opts = DualOptions::default();
        let mut sorted = vec![a, b, c];
        sorted.sort_by(f64::total_cmp);
        let v1 = profile_objective(&obs, &spec, &[c, a, b], o, 256, &opts).unwrap();
        let v2 = profile_objective(&obs, &spec, &sorted, o, 256, &opts).unwrap();
        prop_assert_eq!(v1, v2);
    }
}
