//! Loading paired dataset trees from disk.

use std::fs;
use std::path::Path;

use sgdn::dataset::{load_paired_dataset, GT_DIR, HAZY_DIR, MANIFEST_FILE};
use sgdn::io::{write_png, BitDepth};
use sgdn_core::colorspace::{ColorSpace, Image};
use sgdn_core::data::{Split, SplitManifest};
use sgdn_core::Tensor;

fn flat(value: f32, h: usize, w: usize) -> Image {
    Image::new(Tensor::full(&[3, h, w], value), ColorSpace::Rgb).unwrap()
}

/// Writes one pair per stem and a manifest with the first `train` stems for training.
fn tree(root: &Path, stems: &[String], train: usize) {
    for dir in [HAZY_DIR, GT_DIR] {
        fs::create_dir_all(root.join(dir)).unwrap();
    }
    for (i, stem) in stems.iter().enumerate() {
        let v = (i % 200) as f32 / 255.0;
        write_png(&root.join(HAZY_DIR).join(format!("{stem}.png")), &flat(v + 0.2, 8, 8), BitDepth::Eight).unwrap();
        write_png(&root.join(GT_DIR).join(format!("{stem}.png")), &flat(v, 8, 8), BitDepth::Eight).unwrap();
    }
    let manifest = SplitManifest::from_stems(stems, train).unwrap();
    fs::write(root.join(MANIFEST_FILE), manifest.render()).unwrap();
}

#[test]
fn pairs_load_in_lexicographic_order() {
    let dir = tempfile::tempdir().unwrap();
    let stems: Vec<String> = ["delta", "alpha", "charlie"].map(String::from).to_vec();
    tree(dir.path(), &stems, 3);
    let pairs = load_paired_dataset(dir.path(), Split::Train).unwrap();
    let ids: Vec<&str> = pairs.iter().map(|p| p.id.as_str()).collect();
    assert_eq!(ids, ["alpha", "charlie", "delta"]);
    assert!(pairs.iter().all(|p| p.hazy.pixels().data()[0] > p.clean.pixels().data()[0]));
}

#[test]
fn orphan_images_are_named() {
    let dir = tempfile::tempdir().unwrap();
    let stems: Vec<String> = ["a", "b"].map(String::from).to_vec();
    tree(dir.path(), &stems, 2);
    write_png(&dir.path().join(HAZY_DIR).join("lonely.png"), &flat(0.5, 8, 8), BitDepth::Eight).unwrap();
    let err = load_paired_dataset(dir.path(), Split::Train).unwrap_err().to_string();
    assert!(err.contains("lonely"), "{err}");

    fs::remove_file(dir.path().join(HAZY_DIR).join("lonely.png")).unwrap();
    fs::remove_file(dir.path().join(HAZY_DIR).join("b.png")).unwrap();
    let err = load_paired_dataset(dir.path(), Split::Train).unwrap_err().to_string();
    assert!(err.contains("`b`"), "{err}");
}

#[test]
fn mismatched_sizes_and_empty_splits_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let stems: Vec<String> = ["a", "b"].map(String::from).to_vec();
    tree(dir.path(), &stems, 2);
    let err = load_paired_dataset(dir.path(), Split::Val).unwrap_err().to_string();
    assert!(err.contains("empty"), "{err}");

    write_png(&dir.path().join(GT_DIR).join("b.png"), &flat(0.1, 8, 10), BitDepth::Eight).unwrap();
    let err = load_paired_dataset(dir.path(), Split::Train).unwrap_err().to_string();
    assert!(err.contains("b:") && err.contains("8x10"), "{err}");
}

#[test]
fn missing_root_is_named() {
    let err = load_paired_dataset(Path::new("/no/such/root"), Split::Train).unwrap_err().to_string();
    assert!(err.contains("/no/such/root"), "{err}");
}

#[test]
fn benchmark_sized_split_is_respected() {
    let dir = tempfile::tempdir().unwrap();
    let stems: Vec<String> = (0..1758).map(|i| format!("scene_{i:04}")).collect();
    tree(dir.path(), &stems, 1406);
    let train = load_paired_dataset(dir.path(), Split::Train).unwrap();
    let val = load_paired_dataset(dir.path(), Split::Val).unwrap();
    assert_eq!((train.len(), val.len()), (1406, 352));
    assert_eq!(train[0].id, "scene_0000");
    assert_eq!(val[0].id, "scene_1406");
    assert!(train.iter().all(|p| p.id < val[0].id));
}
