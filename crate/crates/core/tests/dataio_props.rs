use std::path::PathBuf;

use dfl_core::dataio::{
    parse_idx_images, parse_idx_labels, partition_iid, partition_indices, read_idx_images, read_idx_labels,
    synthetic_blobs, write_idx_images, write_idx_labels, RawImageSet,
};
use proptest::prelude::*;

fn mnist_dir() -> PathBuf {
    std::env::var_os("DFL_MNIST_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist"))
}

proptest! {
    #[test]
    fn idx_bytes_roundtrip(count in 0usize..5, rows in 1usize..5, cols in 1usize..5, fill in any::<u8>()) {
        let pixels: Vec<u8> = (0..count * rows * cols).map(|i| fill.wrapping_add(i as u8)).collect();
        let set = RawImageSet { count, rows, cols, pixels };
        let bytes = write_idx_images(&set);
        prop_assert_eq!(bytes.len(), 16 + count * rows * cols);
        let parsed = parse_idx_images(&bytes).unwrap();
        prop_assert_eq!(write_idx_images(&parsed), bytes);
    }

    #[test]
    fn label_bytes_roundtrip(labels in prop::collection::vec(0u8..10, 0..50)) {
        let bytes = write_idx_labels(&labels);
        prop_assert_eq!(parse_idx_labels(&bytes).unwrap(), labels);
    }

    #[test]
    fn partitions_are_disjoint_and_exhaustive(len in 1usize..300, parts in 1usize..20, seed in any::<u64>()) {
        prop_assume!(parts <= len);
        let p = partition_indices(len, parts, seed).unwrap();
        let mut all: Vec<usize> = p.iter().flatten().copied().collect();
        all.sort_unstable();
        prop_assert_eq!(all, (0..len).collect::<Vec<_>>());
        let sizes: Vec<usize> = p.iter().map(Vec::len).collect();
        prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
    }
}

#[test]
fn mnist_sized_partition() {
    let parts = partition_indices(60_000, 10, 7).unwrap();
    assert!(parts.iter().all(|p| p.len() == 6000));
    let mut seen = vec![false; 60_000];
    for &i in parts.iter().flatten() {
        assert!(!seen[i], "index {i} in two parts");
        seen[i] = true;
    }
    assert!(seen.iter().all(|&s| s));
}

#[test]
fn partition_preserves_samples() {
    let data = synthetic_blobs(4, 3, 25, 0.2, 1).unwrap();
    let parts = partition_iid(&data, 7, 3).unwrap();
    let mut rows: Vec<(Vec<u64>, usize)> = parts
        .iter()
        .flat_map(|p| {
            (0..p.len()).map(move |i| (p.features().row(i).iter().map(|v| v.to_bits()).collect(), p.labels()[i]))
        })
        .collect();
    let mut expected: Vec<(Vec<u64>, usize)> = (0..data.len())
        .map(|i| (data.features().row(i).iter().map(|v| v.to_bits()).collect(), data.labels()[i]))
        .collect();
    rows.sort();
    expected.sort();
    assert_eq!(rows, expected);
    assert_eq!(partition_iid(&data, 7, 3).unwrap(), parts);
}

#[test]
fn mnist_headers() {
    let dir = mnist_dir();
    let train = read_idx_images(dir.join("train-images-idx3-ubyte"))
        .unwrap_or_else(|e| panic!("MNIST not found ({e}); run scripts/fetch_mnist.sh"));
    assert_eq!((train.count, train.rows, train.cols), (60_000, 28, 28));
    let labels = read_idx_labels(dir.join("t10k-labels-idx1-ubyte")).unwrap();
    assert_eq!(labels.len(), 10_000);
}
