use berrysmith_core::imgcore::{gaussian_blur, sigma_for_kernel, ImageGray};
use berrysmith_oracles::canny;
use proptest::prelude::*;

fn image() -> impl Strategy<Value = ImageGray> {
    (3usize..14, 3usize..14).prop_flat_map(|(w, h)| {
        prop::collection::vec(0.0f64..=255.0, w * h).prop_map(move |p| ImageGray::new(w, h, p).unwrap())
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn blur_stays_in_range_and_smooths(img in image(), k in prop::sample::select(vec![3usize, 5, 7, 9])) {
        let out = gaussian_blur(&img, k, sigma_for_kernel(k)).unwrap();
        let lo = img.as_slice().iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = img.as_slice().iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(out.as_slice().iter().all(|&v| v >= lo && v <= hi));
        prop_assert!(out.total_variation() <= img.total_variation() + 1e-9);
        let (w, h) = img.dims();
        let dense = canny::blur(w, h, img.as_slice(), k);
        for (a, b) in out.as_slice().iter().zip(&dense) {
            prop_assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn blur_commutes_with_transpose(img in image(), k in prop::sample::select(vec![3usize, 5, 9])) {
        let s = sigma_for_kernel(k);
        let a = gaussian_blur(&img.transpose(), k, s).unwrap();
        let b = gaussian_blur(&img, k, s).unwrap().transpose();
        for (x, y) in a.as_slice().iter().zip(b.as_slice()) {
            prop_assert!((x - y).abs() < 1e-9);
        }
    }
}
