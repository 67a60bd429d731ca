mod support;

use webtask_core::eval::{ssim, SsimParams};
use webtask_core::raster::Raster;

#[test]
fn matches_brute_force_on_random_pairs() {
    let params = SsimParams::<f64>::default();
    for (i, (a, b)) in support::random_pairs(0x55, 20).iter().enumerate() {
        let fast = ssim(a, b, &params);
        let slow = support::brute_force_ssim(a, b);
        assert!((fast - slow).abs() < 1e-6, "pair {i}: {fast} vs {slow}");
    }
}

#[test]
fn symmetric_and_identity() {
    let params = SsimParams::<f64>::default();
    for (a, b) in support::random_pairs(7, 20) {
        assert!((ssim(&a, &b, &params) - ssim(&b, &a, &params)).abs() < 1e-9);
        assert!((ssim(&a, &a, &params) - 1.0).abs() < 1e-9);
    }
}

#[test]
fn single_precision_tracks_double() {
    for (a, b) in support::random_pairs(3, 5) {
        let d = ssim(&a, &b, &SsimParams::<f64>::default());
        let s = ssim(&a, &b, &SsimParams::<f32>::default());
        assert!((d - s as f64).abs() < 1e-3, "{d} vs {s}");
    }
}

#[test]
fn resized_query_compares_against_reference_size() {
    let mut big = Raster::filled(40, 40, [200, 200, 200]);
    big.fill_rect(10, 10, 20, 20, [20, 20, 20]);
    let small = big.resize_nearest(20, 20);
    let v = ssim(&small, &big, &SsimParams::<f64>::default());
    assert!(v > 0.5 && v <= 1.0, "{v}");
}
