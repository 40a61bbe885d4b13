use std::fs;
use std::path::Path;

use depth_halluc::datasets::*;
use depth_halluc::Error;
use image::{DynamicImage, ImageBuffer, Luma, Rgb};
use proptest::prelude::*;

fn write_rgb(root: &Path, name: &str, v: u8) {
    let img: ImageBuffer<Rgb<u8>, Vec<u8>> = ImageBuffer::from_pixel(8, 8, Rgb([v, v / 2, 255 - v]));
    let path = root.join(RGB_DIR).join(name);
    fs::create_dir_all(path.parent().unwrap()).unwrap();
    img.save(path).unwrap();
}

fn write_depth(root: &Path, name: &str, v: u8) {
    let img: ImageBuffer<Luma<u8>, Vec<u8>> = ImageBuffer::from_pixel(8, 8, Luma([v]));
    let path = root.join(DEPTH_DIR).join(name);
    fs::create_dir_all(path.parent().unwrap()).unwrap();
    img.save(path).unwrap();
}

fn byte_to_unit(b: u8) -> f32 {
    2.0 * (b as f32 / 255.0) - 1.0
}

#[test]
fn synthetic_set_round_trips_bit_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = SyntheticConfig {
        samples: 200,
        size: 16,
        identities: 10,
        seed: 7,
    };
    let manifest = make_synthetic_dataset(dir.path(), &cfg).unwrap();
    let loaded = load_paired_dataset(&manifest).unwrap();
    let rendered = cfg.synthesize().unwrap();
    assert_eq!(loaded.len(), 200);
    for (sample, (name, r)) in loaded.iter().zip(&rendered) {
        assert_eq!(&sample.name, name);
        assert_eq!(sample.identity, identity_of(name));
        // Bytes survive the write / read / re-quantize cycle exactly.
        assert_eq!(tensor_to_rgb8(&sample.rgb).unwrap(), r.rgb_image(), "{name}");
        assert_eq!(tensor_to_gray8(&sample.depth), r.depth_image(), "{name}");
        let depth = r.depth_image();
        for (i, p) in depth.pixels().enumerate() {
            for c in 0..3 {
                let v = sample.depth.plane(c)[i];
                assert!((v - byte_to_unit(p[0])).abs() < 1e-6, "{name} depth {c} {i}");
            }
        }
    }
    // Reopening from the written listing gives the same manifest.
    let reopened = DatasetManifest::open(dir.path(), 16).unwrap();
    assert_eq!(reopened, manifest);
}

#[test]
fn orphan_rgb_is_named() {
    let dir = tempfile::tempdir().unwrap();
    write_rgb(dir.path(), "001.png", 10);
    write_rgb(dir.path(), "002.png", 20);
    write_depth(dir.path(), "002.png", 20);
    let manifest = DatasetManifest::open(dir.path(), 8).unwrap();
    match load_paired_dataset(&manifest) {
        Err(Error::Manifest(msg)) => assert!(msg.contains("orphan rgb/001.png"), "{msg}"),
        other => panic!("expected manifest error, got {other:?}"),
    }
}

#[test]
fn orphan_depth_is_named() {
    let dir = tempfile::tempdir().unwrap();
    write_rgb(dir.path(), "a_1.png", 10);
    write_depth(dir.path(), "a_1.png", 10);
    write_depth(dir.path(), "a_2.png", 10);
    let manifest = DatasetManifest::open(dir.path(), 8).unwrap();
    let err = load_paired_dataset(&manifest).unwrap_err();
    assert!(err.to_string().contains("orphan depth/a_2.png"), "{err}");
}

#[test]
fn sixty_two_identities_of_twenty_images() {
    let dir = tempfile::tempdir().unwrap();
    let mut entries = Vec::new();
    for id in 0..62 {
        for k in 0..20 {
            let name = format!("s{id:02}_{k:02}.png");
            write_rgb(dir.path(), &name, (id * 4) as u8);
            entries.push(format!("{RGB_DIR}/{name}"));
        }
    }
    let manifest = DatasetManifest::from_entries(dir.path(), 8, entries).unwrap();
    manifest.write().unwrap();
    let samples = load_rgb_dataset(&DatasetManifest::open(dir.path(), 8).unwrap()).unwrap();
    assert_eq!(samples.len(), 1240);
    let mut ids: Vec<&str> = samples.iter().map(|s| s.identity.as_str()).collect();
    ids.dedup();
    assert_eq!(ids.len(), 62);
}

#[test]
fn empty_manifest_is_an_empty_set() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join(MANIFEST_FILE), "# nothing yet\n").unwrap();
    let manifest = DatasetManifest::open(dir.path(), 8).unwrap();
    assert!(load_paired_dataset(&manifest).unwrap().is_empty());
    assert!(load_rgb_dataset(&manifest).unwrap().is_empty());
}

#[test]
fn duplicate_and_foreign_entries_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    write_rgb(dir.path(), "x.png", 1);
    fs::write(dir.path().join(MANIFEST_FILE), "rgb/x.png\nrgb/x.png\n").unwrap();
    assert!(matches!(DatasetManifest::open(dir.path(), 8), Err(Error::Manifest(_))));
    fs::write(dir.path().join(MANIFEST_FILE), "other/x.png\n").unwrap();
    assert!(matches!(DatasetManifest::open(dir.path(), 8), Err(Error::Manifest(_))));
    fs::write(dir.path().join(MANIFEST_FILE), "rgb/missing.png\n").unwrap();
    assert!(matches!(DatasetManifest::open(dir.path(), 8), Err(Error::Manifest(_))));
}

#[test]
fn missing_root_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let err = DatasetManifest::open(dir.path().join("nope"), 8).unwrap_err();
    assert!(matches!(err, Error::MissingPath(_)));
}

#[test]
fn fold_split_restricts_the_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = SyntheticConfig {
        samples: 40,
        size: 8,
        identities: 4,
        seed: 1,
    };
    let manifest = make_synthetic_dataset(dir.path(), &cfg).unwrap();
    let mut seen = Vec::new();
    for index in 0..4 {
        let split = |test| SplitSpec::Fold {
            k: 4,
            index,
            seed: 3,
            test,
        };
        let test = manifest.clone().with_split(split(true)).rgb_names().unwrap();
        let train = manifest.clone().with_split(split(false)).rgb_names().unwrap();
        assert_eq!(test.len(), 10);
        assert_eq!(train.len(), 30);
        assert!(test.iter().all(|t| !train.contains(t)));
        seen.extend(test);
    }
    seen.sort();
    assert_eq!(seen, manifest.rgb_names().unwrap());
}

proptest! {
    #[test]
    fn preprocess_is_idempotent_on_normalized_input(
        side in 8u32..20,
        seed in any::<u64>(),
    ) {
        let img = DynamicImage::ImageRgb8(ImageBuffer::from_fn(side, side, |x, y| {
            let h = seed.wrapping_mul(31).wrapping_add((x * 131 + y * 7919) as u64);
            Rgb([(h % 251) as u8, (h / 7 % 253) as u8, (h / 13 % 255) as u8])
        }));
        let once = preprocess(&img, side as usize).unwrap();
        let back = DynamicImage::ImageRgb8(tensor_to_rgb8(&once).unwrap());
        let twice = preprocess(&back, side as usize).unwrap();
        for (a, b) in once.data().iter().zip(twice.data()) {
            prop_assert!((a - b).abs() <= 2.0 / 255.0 + 1e-6);
        }
    }

    #[test]
    fn folds_partition_every_identity(
        per_id in prop::collection::vec(1usize..12, 1..6),
        k in 2usize..6,
        seed in any::<u64>(),
    ) {
        let names: Vec<String> = per_id
            .iter()
            .enumerate()
            .flat_map(|(id, &n)| (0..n).map(move |j| format!("id{id}_{j}.png")))
            .collect();
        prop_assume!(names.len() >= k);
        let folds = split_folds(&names, k, seed).unwrap();
        prop_assert_eq!(folds.len(), k);
        let mut counts = vec![0usize; names.len()];
        for f in &folds {
            for &i in &f.test {
                counts[i] += 1;
            }
            prop_assert_eq!(f.train.len() + f.test.len(), names.len());
            prop_assert!(f.test.iter().all(|i| !f.train.contains(i)));
        }
        prop_assert!(counts.iter().all(|&c| c == 1));
        let sizes: Vec<usize> = folds.iter().map(|f| f.test.len()).collect();
        prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
        prop_assert_eq!(folds, split_folds(&names, k, seed).unwrap());
    }
}
