mod support;

use webtask_core::report::{aggregate, render_text, RunReport};
use webtask_core::task::Site;

#[test]
fn reproduces_reference_overall_rates() {
    // (per-site successes, expected per-site rates, expected overall)
    let rows = [
        ([23, 36, 90], ["9.83%", "17.14%", "19.31%"], 16.37),
        ([19, 26, 92], ["8.12%", "12.38%", "19.74%"], 15.05),
    ];
    for (successes, site_rates, overall) in rows {
        let a = aggregate(&support::synthetic_rows(successes));
        for ((site, _), printed) in support::SITE_TOTALS.iter().zip(site_rates) {
            assert_eq!(a.by_site[site].percent(), printed);
        }
        let got = a.overall.value().unwrap() * 100.0;
        assert!((got - overall).abs() < 0.05, "{got} vs {overall}");
        assert_eq!(a.overall.percent(), format!("{overall:.2}%"));
    }
}

#[test]
fn breakdowns_partition_the_evaluated_set() {
    let a = aggregate(&support::synthetic_rows([23, 36, 90]));
    let sum = |it: &mut dyn Iterator<Item = (usize, usize)>| it.fold((0, 0), |(s, t), (x, y)| (s + x, t + y));
    let whole = (a.overall.successes, a.overall.total);
    assert_eq!(sum(&mut a.by_site.values().map(|r| (r.successes, r.total))), whole);
    assert_eq!(sum(&mut a.difficulty_matrix.values().map(|r| (r.successes, r.total))), whole);
    assert_eq!(sum(&mut a.by_overall_difficulty.values().map(|r| (r.successes, r.total))), whole);
    assert_eq!(a.difficulty_matrix.len(), 9);
    assert_eq!(a.step_histogram.values().sum::<usize>(), a.tasks);
    assert!(!a.by_site.contains_key(&Site::Multi));
    for r in a.by_subset.values() {
        assert!(r.total <= whole.1 && r.successes <= r.total);
    }
}

#[test]
fn rendering_is_byte_stable() {
    let rows = support::synthetic_rows([23, 36, 90]);
    let mut reversed = rows.clone();
    reversed.reverse();
    let a = RunReport::from_rows(rows);
    let b = RunReport::from_rows(reversed);
    assert_eq!(render_text(&a), render_text(&b));
    assert_eq!(a.to_json(), b.to_json());
    assert!(render_text(&a).contains("16.37%"));
}
