use facesketch_core::image::Image;
use facesketch_core::regions::{split_parts, stitch_parts, FaceRegions, Part, RegionBox, RegionConfig};
use proptest::prelude::*;

fn arb_case() -> impl Strategy<Value = (Image<u8>, FaceRegions, RegionConfig)> {
    (
        prop_oneof![Just(1usize), Just(3usize)],
        64usize..=160,
        64usize..=160,
        64usize..=256,
    )
        .prop_flat_map(|(c, h, w, res)| {
            let pixels = proptest::collection::vec(any::<u8>(), c * h * w);
            let boxes = proptest::collection::vec((0.0..1.0f64, 0.0..1.0f64, 1.0..40.0f64, 1.0..40.0f64), 4);
            (Just((c, h, w, res)), pixels, boxes)
        })
        .prop_filter_map("windows must fit", |((c, h, w, res), pixels, boxes)| {
            let config = RegionConfig::for_resolution(res, 8);
            let fits = [config.eye, config.nose, config.mouth]
                .iter()
                .all(|&(ww, wh)| ww <= w && wh <= h);
            if !fits {
                return None;
            }
            let img = Image::from_planar(c, h, w, pixels).ok()?;
            // Valid boxes lie wholly inside the image.
            let b: Vec<RegionBox> = boxes
                .iter()
                .map(|&(fx, fy, bw, bh)| {
                    let cx = bw / 2.0 + fx * (w as f64 - bw);
                    let cy = bh / 2.0 + fy * (h as f64 - bh);
                    RegionBox::new(cx, cy, bw, bh)
                })
                .collect();
            let regions = FaceRegions::new([b[0], b[1], b[2], b[3]], (h, w));
            Some((img, regions, config))
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn stitch_inverts_split((img, regions, config) in arb_case()) {
        let parts = split_parts(&img, &regions, &config).unwrap();
        let back = stitch_parts(&parts, &regions, &config).unwrap();
        prop_assert_eq!(back, img);
    }

    #[test]
    fn windows_keep_their_size_and_stay_inside((img, regions, config) in arb_case()) {
        for part in Part::KEY {
            let r = regions.window(part, &config).unwrap();
            prop_assert_eq!((r.width, r.height), config.window_size(part));
            prop_assert!(r.fits_in(img.height(), img.width()));
        }
    }

    #[test]
    fn float_images_roundtrip_too((img, regions, config) in arb_case()) {
        let f = img.normalized();
        let parts = split_parts(&f, &regions, &config).unwrap();
        let back = stitch_parts(&parts, &regions, &config).unwrap();
        prop_assert!(back.data().iter().zip(f.data()).all(|(a, b)| a.to_bits() == b.to_bits()));
    }
}
