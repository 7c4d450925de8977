use facesketch::imageio::Letterbox;
use facesketch::train::epoch_order;
use facesketch_core::image::Image;
use facesketch_core::regions::{FaceRegions, RegionBox};
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn content_fits_and_is_centred(h in 1usize..400, w in 1usize..400, size in 16usize..300) {
        let lb = Letterbox::fit((h, w), size);
        let (ch, cw) = lb.content;
        prop_assert!(ch <= size && cw <= size);
        prop_assert!(ch == size || cw == size);
        prop_assert!(lb.offset.0 + cw <= size && lb.offset.1 + ch <= size);
        prop_assert!(lb.offset.0.abs_diff(size - cw - lb.offset.0) <= 1);
        prop_assert!(lb.offset.1.abs_diff(size - ch - lb.offset.1) <= 1);
    }

    #[test]
    fn apply_then_invert_restores_the_size(h in 8usize..120, w in 8usize..120, size in 16usize..128, fill: u8) {
        let img = Image::filled(3, h, w, 7u8);
        let lb = Letterbox::fit((h, w), size);
        let boxed = lb.apply(&img, fill);
        prop_assert_eq!(boxed.dims(), (size, size));
        let back = lb.invert(&boxed).unwrap();
        prop_assert_eq!(back.dims(), (h, w));
        prop_assert!(back.data().iter().all(|&v| v == 7));
    }

    #[test]
    fn mapped_regions_stay_in_the_canvas(
        h in 64usize..300,
        w in 64usize..300,
        size in 64usize..256,
        f in proptest::collection::vec((0.0..1.0f64, 0.0..1.0f64), 4),
    ) {
        let boxes: Vec<RegionBox> = f
            .iter()
            .map(|&(fx, fy)| RegionBox::new(8.0 + fx * (w as f64 - 16.0), 8.0 + fy * (h as f64 - 16.0), 16.0, 16.0))
            .collect();
        let native = FaceRegions::new([boxes[0], boxes[1], boxes[2], boxes[3]], (h, w));
        let lb = Letterbox::fit((h, w), size);
        let mapped = lb.regions(&native);
        prop_assert_eq!(mapped.image_dims, (size, size));
        prop_assert!(mapped.validate().is_ok());
    }

    #[test]
    fn epoch_order_is_a_permutation(n in 0usize..200, seed: u64, epoch in 0usize..1000) {
        let mut order = epoch_order(n, seed, epoch);
        prop_assert_eq!(&order, &epoch_order(n, seed, epoch));
        order.sort_unstable();
        prop_assert_eq!(order, (0..n).collect::<Vec<_>>());
    }
}
