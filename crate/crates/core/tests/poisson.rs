use berrysmith_core::blend::{poisson_blend, poisson_solve, PoissonSystem, RESIDUAL_TOLERANCE};
use berrysmith_core::imgcore::ImageRgb;
use berrysmith_core::masks::SegMask;
use berrysmith_oracles::raster;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_rgb(rng: &mut ChaCha8Rng, w: usize, h: usize, max: u8) -> ImageRgb {
    ImageRgb::new(w, h, (0..w * h * 3).map(|_| rng.random_range(0..=max)).collect()).unwrap()
}

/// A random region inside an `(s+2)`-square canvas, at most `s x s`.
fn random_region(rng: &mut ChaCha8Rng, s: usize) -> Option<SegMask> {
    let p = rng.random_range(0.3..1.0);
    let bits: Vec<bool> = (0..(s + 2) * (s + 2))
        .map(|i| {
            let (x, y) = (i % (s + 2), i / (s + 2));
            x > 0 && y > 0 && x <= s && y <= s && rng.random_bool(p)
        })
        .collect();
    SegMask::from_bitmap(s + 2, s + 2, &bits, "r", "t").unwrap()
}

fn channel(img: &ImageRgb, c: usize) -> Vec<f64> {
    img.as_raw().chunks_exact(3).map(|p| f64::from(p[c])).collect()
}

#[test]
fn sor_matches_dense_solve() {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let mut worst: f64 = 0.0;
    let mut solved = 0;
    while solved < 100 {
        let s = rng.random_range(1..=8);
        let Some(region) = random_region(&mut rng, s) else { continue };
        let (w, h) = region.dims();
        let src = random_rgb(&mut rng, w, h, 255);
        let dst = random_rgb(&mut rng, w, h, 255);
        let (values, residuals, _, pixels) = poisson_solve(&dst, &src, &region).unwrap();
        assert!(residuals.iter().all(|&r| r <= RESIDUAL_TOLERANCE));
        let bits = region.to_bitmap();
        for c in 0..3 {
            let want = raster::poisson(w, &bits, &channel(&src, c), &channel(&dst, c));
            for (v, &p) in values.iter().zip(&pixels) {
                worst = worst.max((v[c] - want[p]).abs());
            }
        }
        solved += 1;
    }
    assert!(worst <= 1e-4, "max deviation {worst:e}");
}

#[test]
fn identical_source_returns_destination() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..20 {
        let Some(region) = random_region(&mut rng, 10) else { continue };
        let img = random_rgb(&mut rng, 12, 12, 255);
        let out = poisson_blend(&img, &img, &region).unwrap();
        assert_eq!(out.image, img);
        assert_eq!(out.sweeps, [0, 0, 0]);
    }
}

#[test]
fn constant_guidance_fills_with_boundary_constant() {
    let region = SegMask::from_fn(10, 10, "r", "t", |x, y| (2..8).contains(&x) && (2..8).contains(&y)).unwrap();
    let src = ImageRgb::filled(10, 10, [3, 200, 90]).unwrap();
    let dst = ImageRgb::filled(10, 10, [120, 10, 250]).unwrap();
    let out = poisson_blend(&dst, &src, &region).unwrap();
    assert_eq!(out.image, dst);
}

#[test]
fn shifted_source_blends_identically() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..20 {
        let Some(region) = random_region(&mut rng, 8) else { continue };
        let src = random_rgb(&mut rng, 10, 10, 200);
        let dst = random_rgb(&mut rng, 10, 10, 255);
        let c: [u8; 3] = [rng.random_range(0..=55), rng.random_range(0..=55), rng.random_range(0..=55)];
        let shifted = ImageRgb::new(
            10,
            10,
            src.as_raw().iter().enumerate().map(|(i, v)| v + c[i % 3]).collect(),
        )
        .unwrap();
        let a = poisson_solve(&dst, &src, &region).unwrap();
        let b = poisson_solve(&dst, &shifted, &region).unwrap();
        assert_eq!(a.0, b.0);
        assert_eq!(
            poisson_blend(&dst, &src, &region).unwrap().image,
            poisson_blend(&dst, &shifted, &region).unwrap().image
        );
    }
}

#[test]
fn zero_guidance_obeys_maximum_principle() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..30 {
        let Some(region) = random_region(&mut rng, 8) else { continue };
        let w = region.width();
        let dst = random_rgb(&mut rng, w, w, 255);
        let flat = vec![0.0; w * w];
        let bits = region.to_bitmap();
        for c in 0..3 {
            let boundary = channel(&dst, c);
            let system = PoissonSystem::build(&region, &flat, &boundary);
            let mut f: Vec<f64> = system.pixels.iter().map(|&p| boundary[p]).collect();
            system.solve_sor(&mut f).unwrap();
            // Extremes over the region's outer boundary ring.
            let ring: Vec<f64> = (0..w * w)
                .filter(|&p| {
                    !bits[p]
                        && [p.wrapping_sub(1), p + 1, p.wrapping_sub(w), p + w]
                            .iter()
                            .any(|&q| q < w * w && bits[q])
                })
                .map(|p| boundary[p])
                .collect();
            let lo = ring.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = ring.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            assert!(f.iter().all(|&v| v >= lo - 1e-6 && v <= hi + 1e-6));
        }
    }
}

#[test]
fn outside_region_is_untouched() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let region = random_region(&mut rng, 14).unwrap();
    let src = random_rgb(&mut rng, 16, 16, 255);
    let dst = random_rgb(&mut rng, 16, 16, 255);
    let out = poisson_blend(&dst, &src, &region).unwrap().image;
    for y in 0..16 {
        for x in 0..16 {
            if !region.contains(x, y) {
                assert_eq!(out.get(x, y), dst.get(x, y));
            }
        }
    }
}
