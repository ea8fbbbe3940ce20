use berrysmith_core::masks::{decode_maskset, encode_maskset, erode, filter_masks, intersect, Generator, MaskSet, SegMask};
use berrysmith_oracles::raster;
use proptest::prelude::*;

fn bitmap(w: usize, h: usize) -> impl Strategy<Value = Vec<bool>> {
    prop::collection::vec(prop::bool::weighted(0.6), w * h)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn bitmap_roundtrip(bits in bitmap(9, 7)) {
        match SegMask::from_bitmap(9, 7, &bits, "m", "s").unwrap() {
            None => prop_assert!(bits.iter().all(|b| !b)),
            Some(m) => {
                prop_assert_eq!(m.to_bitmap(), bits.clone());
                prop_assert_eq!(m.area(), bits.iter().filter(|&&b| b).count());
                prop_assert!(m.runs().windows(2).all(|r| r[0].end() < r[1].start));
            }
        }
    }

    #[test]
    fn intersection_is_pixelwise_and(a in bitmap(8, 8), b in bitmap(8, 8)) {
        let (Some(ma), Some(mb)) = (
            SegMask::from_bitmap(8, 8, &a, "a", "s").unwrap(),
            SegMask::from_bitmap(8, 8, &b, "b", "s").unwrap(),
        ) else {
            return Ok(());
        };
        let want: Vec<bool> = a.iter().zip(&b).map(|(x, y)| *x && *y).collect();
        match intersect(&ma, &mb).unwrap() {
            None => prop_assert!(want.iter().all(|b| !b)),
            Some(m) => prop_assert_eq!(m.to_bitmap(), want),
        }
    }

    #[test]
    fn erosion_matches_window_scan(bits in bitmap(12, 10), r in 0usize..4) {
        let Some(m) = SegMask::from_bitmap(12, 10, &bits, "m", "s").unwrap() else {
            return Ok(());
        };
        let want = raster::erode(12, 10, &bits, r);
        let want = if r == 0 { bits.clone() } else { want };
        match erode(&m, r) {
            None => prop_assert!(want.iter().all(|b| !b)),
            Some(e) => prop_assert_eq!(e.to_bitmap(), want),
        }
    }
}

fn mask_set() -> impl Strategy<Value = MaskSet> {
    (1usize..20, 1usize..20, 0usize..5, 0u8..3).prop_flat_map(|(w, h, n, g)| {
        prop::collection::vec(prop::collection::vec(any::<bool>(), w * h), n).prop_map(move |maps| {
            let generator = [Generator::ExternalModel, Generator::Fallback, Generator::Fixture][g as usize];
            let masks = maps
                .iter()
                .enumerate()
                .filter_map(|(i, bits)| SegMask::from_bitmap(w, h, bits, format!("m{i}"), "img.png").unwrap())
                .collect();
            MaskSet::new("img.png", w, h, generator, masks).unwrap()
        })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn codec_roundtrips_canonically(set in mask_set()) {
        let bytes = encode_maskset(&set);
        let back = decode_maskset(&bytes).unwrap();
        prop_assert_eq!(&back, &set);
        prop_assert_eq!(encode_maskset(&back), bytes);
    }

    #[test]
    fn decoder_never_panics(bytes in prop::collection::vec(any::<u8>(), 0..200)) {
        if let Err(e) = decode_maskset(&bytes) {
            prop_assert!(e.offset <= bytes.len());
        }
    }
}

#[test]
fn pretty_printed_input_decodes_to_the_same_set() {
    let m = SegMask::from_fn(6, 4, "z", "p.png", |x, y| x > y).unwrap();
    let set = MaskSet::new("p.png", 6, 4, Generator::Fallback, vec![m]).unwrap();
    let value: serde_json::Value = serde_json::from_slice(&encode_maskset(&set)).unwrap();
    let pretty = serde_json::to_vec_pretty(&value).unwrap();
    assert_eq!(decode_maskset(&pretty).unwrap(), set);
}

fn bits_of(m: Option<SegMask>, n: usize) -> Vec<bool> {
    m.map_or_else(|| vec![false; n], |m| m.to_bitmap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn erosions_compose(bits in bitmap(14, 12), r in 1usize..3, s in 1usize..3) {
        let Some(m) = SegMask::from_bitmap(14, 12, &bits, "m", "s").unwrap() else {
            return Ok(());
        };
        let twice = erode(&m, r).and_then(|e| erode(&e, s));
        prop_assert_eq!(bits_of(twice, 14 * 12), bits_of(erode(&m, r + s), 14 * 12));
    }

    #[test]
    fn intersection_commutes_and_associates(
        a in bitmap(8, 8),
        b in bitmap(8, 8),
        c in bitmap(8, 8),
    ) {
        let mk = |bits: &[bool], id: &str| SegMask::from_bitmap(8, 8, bits, id, "s").unwrap();
        let (Some(ma), Some(mb), Some(mc)) = (mk(&a, "a"), mk(&b, "b"), mk(&c, "c")) else {
            return Ok(());
        };
        let ab = intersect(&ma, &mb).unwrap();
        let ba = intersect(&mb, &ma).unwrap();
        if let Some(m) = &ab {
            prop_assert!(m.area() <= ma.area().min(mb.area()));
        }
        prop_assert_eq!(bits_of(ab.clone(), 64), bits_of(ba, 64));
        let left = ab.and_then(|m| intersect(&m, &mc).unwrap());
        let right = intersect(&mb, &mc).unwrap().and_then(|m| intersect(&ma, &m).unwrap());
        prop_assert_eq!(bits_of(left, 64), bits_of(right, 64));
    }

    #[test]
    fn filtered_masks_are_a_large_subset(set in mask_set()) {
        let kept = filter_masks(&set);
        let n = set.len();
        prop_assert!(kept.len() <= n.div_ceil(2));
        let mean = set.masks().iter().map(|m| m.area() as f64).sum::<f64>() / n.max(1) as f64;
        for m in kept.masks() {
            prop_assert_eq!(set.get(m.mask_id()), Some(m));
            prop_assert!(m.area() as f64 > mean);
        }
    }
}
