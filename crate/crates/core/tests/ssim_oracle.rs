//! Windowed SSIM against a direct per-window evaluation of the formula.

#[path = "support/ssim_brute.rs"]
mod brute;

use brute::{brute_plane, random_image};
use facesketch_core::image::Image;
use facesketch_core::ssim::ssim;
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

#[test]
fn matches_brute_force_on_random_pairs() {
    let mut rng = StdRng::seed_from_u64(2024);
    let mut worst: f64 = 0.0;
    for _ in 0..200 {
        let a = random_image(&mut rng, 1, 64, 64);
        let b = if rng.random_bool(0.5) {
            random_image(&mut rng, 1, 64, 64)
        } else {
            // A perturbed copy keeps scores near 1 as well.
            let noise: Vec<u8> = (0..a.data().len()).map(|_| rng.random_range(0..20)).collect();
            let data = a.data().iter().zip(&noise).map(|(v, n)| v.saturating_add(*n)).collect();
            Image::from_planar(1, 64, 64, data).unwrap()
        };
        let fast = ssim(&a, &b).unwrap();
        let slow = brute_plane(a.data(), b.data(), 64, 64);
        worst = worst.max((fast - slow).abs());
        assert!((-1.0..=1.0).contains(&fast));
    }
    assert!(worst <= 1e-6, "worst deviation {worst}");
}

#[test]
fn colour_is_the_channel_mean() {
    let mut rng = StdRng::seed_from_u64(7);
    let a = random_image(&mut rng, 3, 32, 40);
    let b = random_image(&mut rng, 3, 32, 40);
    let plane = 32 * 40;
    let expected: f64 = (0..3)
        .map(|c| {
            let s = c * plane..(c + 1) * plane;
            brute_plane(&a.data()[s.clone()], &b.data()[s], 32, 40)
        })
        .sum::<f64>()
        / 3.0;
    assert!((ssim(&a, &b).unwrap() - expected).abs() <= 1e-6);
}

#[test]
fn identity_and_symmetry() {
    let mut rng = StdRng::seed_from_u64(8);
    for _ in 0..20 {
        let a = random_image(&mut rng, 1, 48, 48);
        let b = random_image(&mut rng, 1, 48, 48);
        assert_eq!(ssim(&a, &a).unwrap(), 1.0);
        assert_eq!(ssim(&a, &b).unwrap(), ssim(&b, &a).unwrap());
        assert!(ssim(&a, &b).unwrap() < 1.0 - 1e-12);
    }
}
