use std::io::Write;
use std::path::PathBuf;

use curvglyph::idx::{encode_idx_images, encode_idx_labels, load_dataset, DatasetKind, GlyphImage};
use curvglyph::pipeline::dataset_dir;
use curvglyph::split::stratified_split;
use flate2::write::GzEncoder;
use flate2::Compression;

fn data_root() -> PathBuf {
    std::env::var_os("CURVGLYPH_DATA_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data"))
}

fn gz(bytes: &[u8]) -> Vec<u8> {
    let mut enc = GzEncoder::new(Vec::new(), Compression::fast());
    enc.write_all(bytes).unwrap();
    enc.finish().unwrap()
}

#[test]
fn synthetic_emnist_directory_loads_upright_and_zero_based() {
    let dir = tempfile::tempdir().unwrap();
    let glyph = |k: u8| GlyphImage::from_fn(0, move |r, c| if r == usize::from(k) && c == 0 { 1.0 } else { 0.0 });
    let train: Vec<GlyphImage> = (0..26).map(glyph).collect();
    let test: Vec<GlyphImage> = (0..4).map(glyph).collect();
    let train_labels: Vec<u8> = (1..=26).collect();
    let test_labels = vec![26, 1, 2, 3];
    let files = [
        ("emnist-letters-train-images-idx3-ubyte.gz", gz(&encode_idx_images(&train))),
        ("emnist-letters-train-labels-idx1-ubyte.gz", gz(&encode_idx_labels(&train_labels))),
        ("emnist-letters-test-images-idx3-ubyte", encode_idx_images(&test)),
        ("emnist-letters-test-labels-idx1-ubyte", encode_idx_labels(&test_labels)),
    ];
    for (name, bytes) in files {
        std::fs::write(dir.path().join(name), bytes).unwrap();
    }
    let ds = load_dataset(DatasetKind::EmnistLetters, dir.path()).unwrap();
    assert_eq!(ds.len(), 30);
    assert_eq!(ds.num_classes(), 26);
    assert_eq!(&ds.labels()[..3], &[0, 1, 2]);
    assert_eq!(&ds.labels()[26..], &[25, 0, 1, 2]);
    // the stored column-major glyph is transposed to row-major
    assert_eq!(ds.images()[5].get(0, 5), 1.0);
    assert_eq!(ds.images()[29].source_index(), 29);
}

#[test]
fn missing_files_are_reported() {
    let dir = tempfile::tempdir().unwrap();
    let err = load_dataset(DatasetKind::Mnist, dir.path()).unwrap_err();
    assert!(err.to_string().contains("train-images-idx3-ubyte"), "{err}");
}

#[test]
fn real_mnist_when_available() {
    let dir = dataset_dir(&data_root(), DatasetKind::Mnist);
    let ds = match load_dataset(DatasetKind::Mnist, &dir) {
        Ok(ds) => ds,
        Err(e) => {
            eprintln!("skipping: {e}");
            return;
        }
    };
    assert_eq!(ds.len(), 70_000);
    assert_eq!(
        ds.class_counts(),
        vec![6903, 7877, 6990, 7141, 6824, 6313, 6876, 7293, 6825, 6958]
    );
    let plan = stratified_split(ds.labels(), 10, 0.2, 0.1, 42).unwrap();
    assert_eq!(
        (plan.fit_indices.len(), plan.val_indices.len(), plan.test_indices.len()),
        (50_400, 5_600, 14_000)
    );
}
