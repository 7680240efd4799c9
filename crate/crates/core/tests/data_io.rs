use std::fs;
use std::path::Path;

use natspace::data::cifar::{self, load_cifar10, read_records, write_records, RECORDS_PER_FILE};
use natspace::data::{Dims, Provenance};
use natspace::noise::{generate, NoiseKind, NoiseSpec};
use natspace::Error;

/// Writes a CIFAR-10 layout directory whose record `i` of file `f` has label
/// `(i + f) % 10` and pixels derived from the same indices.
fn fake_cifar(dir: &Path) {
    let rec = cifar::record_len(cifar::DIMS);
    for (f, path) in cifar::batch_paths(dir).iter().enumerate() {
        let mut bytes = Vec::with_capacity(RECORDS_PER_FILE * rec);
        for i in 0..RECORDS_PER_FILE {
            bytes.push(((i + f) % 10) as u8);
            bytes.extend((0..rec - 1).map(|p| ((i * 7 + p + f) % 256) as u8));
        }
        fs::write(path, bytes).unwrap();
    }
}

#[test]
fn loads_full_layout() {
    let dir = tempfile::tempdir().unwrap();
    fake_cifar(dir.path());
    assert!(cifar::is_cifar10_dir(dir.path()));
    let (train, test) = load_cifar10(dir.path()).unwrap();
    assert_eq!(train.len(), 50_000);
    assert_eq!(test.len(), 10_000);
    assert_eq!(train.category_count(), 10);
    assert_eq!(train.category_names()[0], "airplane");
    assert!(train.labels().iter().chain(test.labels()).all(|&l| l <= 9));
    assert_eq!(train.provenance(), Provenance::Train);
    assert_eq!(test.provenance(), Provenance::Test);
    // record 3 of the second training file
    let img = &train.images()[10_003];
    assert_eq!(train.labels()[10_003], 4);
    assert_eq!(img.get(0, 0, 0), ((3 * 7 + 1) % 256) as u8);
    assert_eq!(img.get(1, 0, 0), ((3 * 7 + 1024 + 1) % 256) as u8);
    assert_eq!(train.ids()[10_003], 10_003);
}

#[test]
fn truncated_file_is_named() {
    let dir = tempfile::tempdir().unwrap();
    fake_cifar(dir.path());
    let victim = dir.path().join("data_batch_3.bin");
    let bytes = fs::read(&victim).unwrap();
    fs::write(&victim, &bytes[..bytes.len() - 100]).unwrap();
    match load_cifar10(dir.path()) {
        Err(Error::Ingestion { path, message }) => {
            assert_eq!(path, victim);
            assert!(message.contains("30730000"), "{message}");
        }
        other => panic!("expected ingestion error, got {other:?}"),
    }
    fs::remove_file(dir.path().join("test_batch.bin")).unwrap();
    assert!(!cifar::is_cifar10_dir(dir.path()));
}

#[test]
fn bad_label_and_export_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let dims = Dims::new(4, 4, 3);
    let spec = NoiseSpec { kind: NoiseKind::Uniform, rate: 1.0, seed: 3 };
    let ds = generate(&spec, 25, dims).unwrap();
    let path = dir.path().join("noise.bin");
    write_records(&ds, &path).unwrap();
    assert_eq!(fs::metadata(&path).unwrap().len(), 25 * 49);
    let (images, labels) = read_records(&path, dims, Some(25), 1).unwrap();
    assert_eq!(images, ds.images());
    assert_eq!(labels, vec![0; 25]);

    let mut bytes = fs::read(&path).unwrap();
    bytes[49] = 12;
    fs::write(&path, &bytes).unwrap();
    assert!(matches!(read_records(&path, dims, None, 10), Err(Error::Ingestion { .. })));
}
