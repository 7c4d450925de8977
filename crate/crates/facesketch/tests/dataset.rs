use std::path::Path;

use facesketch::dataset::{
    annotation_file, iterate_split, load_manifest, load_pair, load_skin_patch, split_order, SKETCH_DIR,
};
use facesketch::detect::{DetectQuery, FixtureRegions, RegionProvider};
use facesketch::imageio::{read_rgb, write_png};
use facesketch::synthetic::{write_dataset, SyntheticSpec};
use facesketch::Error;
use facesketch_core::attributes::Split;
use facesketch_core::image::Image;

fn six_pairs(dir: &Path) {
    write_dataset(
        dir,
        &SyntheticSpec {
            train: 4,
            test: 2,
            ..Default::default()
        },
    )
    .unwrap();
}

#[test]
fn six_pair_fixture_loads() {
    let dir = tempfile::tempdir().unwrap();
    six_pairs(dir.path());
    let m = load_manifest(dir.path()).unwrap();
    assert_eq!(m.entries.len(), 6);
    assert_eq!(m.split(Split::Train).count(), 4);
    let stats = m.split_stats(Split::Test);
    assert_eq!(stats.total, 2);
    stats.check_consistency().unwrap();

    let pairs: Vec<_> = iterate_split(&m, Split::Train, None, None)
        .collect::<Result<_, _>>()
        .unwrap();
    assert_eq!(pairs.len(), 4);
    for p in &pairs {
        assert_eq!(p.photo.channels(), 3);
        assert_eq!(p.sketch.channels(), 1);
        assert_eq!(p.photo.dims(), p.sketch.dims());
        let patch = load_skin_patch(p).unwrap();
        assert_eq!(patch.channels(), 3);
    }
}

#[test]
fn shuffled_order_is_seeded() {
    let dir = tempfile::tempdir().unwrap();
    write_dataset(dir.path(), &SyntheticSpec::default()).unwrap();
    let m = load_manifest(dir.path()).unwrap();
    let ids = |seed| -> Vec<String> {
        split_order(&m, Split::Train, seed)
            .iter()
            .map(|e| e.pair_id.clone())
            .collect()
    };
    assert_eq!(ids(Some(1)), ids(Some(1)));
    assert_ne!(ids(Some(1)), ids(Some(2)));
    let mut sorted = ids(Some(1));
    sorted.sort();
    assert_eq!(sorted, ids(None));
}

#[test]
fn missing_sketch_names_the_pair() {
    let dir = tempfile::tempdir().unwrap();
    six_pairs(dir.path());
    std::fs::remove_file(dir.path().join(SKETCH_DIR).join("train_0002.png")).unwrap();
    let err = load_manifest(dir.path()).unwrap_err();
    assert!(
        matches!(&err, Error::Pair { pair_id, .. } if pair_id == "train_0002"),
        "{err}"
    );
}

#[test]
fn bad_hair_colour_reports_the_field() {
    let dir = tempfile::tempdir().unwrap();
    six_pairs(dir.path());
    let path = dir.path().join(annotation_file(Split::Test));
    let mut doc: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
    doc[1]["has_hair"] = true.into();
    doc[1]["hair_color"] = "purple".into();
    std::fs::write(&path, doc.to_string()).unwrap();
    let err = load_manifest(dir.path()).unwrap_err();
    assert!(
        matches!(&err, Error::Schema { field, .. } if field == "anno_test.json[1].hair_color"),
        "{err}"
    );
}

#[test]
fn mismatched_dimensions_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    six_pairs(dir.path());
    let sketch = dir.path().join(SKETCH_DIR).join("test_0000.png");
    write_png(&sketch, &Image::filled(1, 32, 64, 255u8)).unwrap();
    let m = load_manifest(dir.path()).unwrap();
    let entry = m.get("test_0000").unwrap();
    let err = load_pair(entry, None).unwrap_err();
    assert!(
        matches!(&err, Error::Pair { pair_id, .. } if pair_id == "test_0000"),
        "{err}"
    );
}

#[test]
fn letterboxed_pairs_carry_their_regions() {
    let dir = tempfile::tempdir().unwrap();
    write_dataset(
        dir.path(),
        &SyntheticSpec {
            train: 1,
            test: 1,
            height: 48,
            width: 96,
            seed: 3,
        },
    )
    .unwrap();
    let m = load_manifest(dir.path()).unwrap();
    let entry = m.split(Split::Train).next().unwrap();
    let pair = load_pair(entry, Some(64)).unwrap();
    assert_eq!(pair.photo.dims(), (64, 64));
    assert_eq!(pair.sketch.dims(), (64, 64));
    // Padding: black above the photo, white above the sketch.
    assert_eq!(pair.photo.get(0, 0, 10), 0);
    assert_eq!(pair.sketch.get(0, 0, 10), 255);

    let fixture = FixtureRegions::load(&dir.path().join(FixtureRegions::DEFAULT_FILE)).unwrap();
    let native = fixture
        .detect(&DetectQuery {
            pair_id: &entry.pair_id,
            image_path: &entry.photo,
            dims: read_rgb(&entry.photo).unwrap().dims(),
        })
        .unwrap();
    let lb = pair.letterbox.unwrap();
    let mapped = lb.regions(&native);
    assert_eq!(mapped.image_dims, (64, 64));
    assert!((mapped.left_eye.cx - native.left_eye.cx * lb.scale() - lb.offset.0 as f64).abs() < 1e-9);
    mapped.validate().unwrap();
}
