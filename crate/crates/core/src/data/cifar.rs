//! CIFAR-10 binary format.
//!
//! Each record is one label byte followed by the red, green and blue planes
//! of a 32x32 image (3,073 bytes). Every batch file holds 10,000 records.
//! The same record layout, with other image sizes, is used to export
//! generated sets for inspection.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use super::{Dims, Image, LabeledDataset, Provenance};
use crate::error::{Error, Result};

pub const DIMS: Dims = Dims {
    width: 32,
    height: 32,
    channels: 3,
};
pub const RECORDS_PER_FILE: usize = 10_000;
pub const TRAIN_FILES: [&str; 5] = [
    "data_batch_1.bin",
    "data_batch_2.bin",
    "data_batch_3.bin",
    "data_batch_4.bin",
    "data_batch_5.bin",
];
pub const TEST_FILE: &str = "test_batch.bin";
const META_FILE: &str = "batches.meta.txt";

pub const DEFAULT_NAMES: [&str; 10] = [
    "airplane",
    "automobile",
    "bird",
    "cat",
    "deer",
    "dog",
    "frog",
    "horse",
    "ship",
    "truck",
];

pub fn record_len(dims: Dims) -> usize {
    1 + dims.pixel_count()
}

/// Parses a file of records. With `expected_records` set, the file size
/// must match exactly.
pub fn read_records(
    path: &Path,
    dims: Dims,
    expected_records: Option<usize>,
    categories: usize,
) -> Result<(Vec<Image>, Vec<usize>)> {
    let ingest = |message: String| Error::Ingestion {
        path: path.to_path_buf(),
        message,
    };
    let bytes = fs::read(path).map_err(|e| ingest(e.to_string()))?;
    let rec = record_len(dims);
    if let Some(n) = expected_records {
        if bytes.len() != n * rec {
            return Err(ingest(format!(
                "expected {} bytes ({n} records of {rec}), found {}",
                n * rec,
                bytes.len()
            )));
        }
    } else if bytes.len() % rec != 0 {
        return Err(ingest(format!(
            "size {} is not a multiple of the {rec}-byte record",
            bytes.len()
        )));
    }
    let mut images = Vec::with_capacity(bytes.len() / rec);
    let mut labels = Vec::with_capacity(bytes.len() / rec);
    for (i, chunk) in bytes.chunks_exact(rec).enumerate() {
        let label = usize::from(chunk[0]);
        if label >= categories {
            return Err(ingest(format!(
                "record {i} has label {label}, expected < {categories}"
            )));
        }
        labels.push(label);
        images.push(Image::new(
            dims.width,
            dims.height,
            dims.channels,
            chunk[1..].to_vec(),
        )?);
    }
    Ok((images, labels))
}

/// Writes every sample of `ds` as a record. Labels must fit in a byte.
pub fn write_records(ds: &LabeledDataset, path: &Path) -> Result<()> {
    let mut out = std::io::BufWriter::new(fs::File::create(path)?);
    for (img, &label) in ds.images().iter().zip(ds.labels()) {
        let byte = u8::try_from(label)
            .map_err(|_| Error::config(format!("label {label} does not fit the record format")))?;
        out.write_all(&[byte])?;
        out.write_all(img.pixels())?;
    }
    out.flush()?;
    Ok(())
}

fn category_names(dir: &Path) -> Vec<String> {
    fs::read_to_string(dir.join(META_FILE))
        .ok()
        .map(|s| {
            s.lines()
                .map(str::trim)
                .filter(|l| !l.is_empty())
                .map(String::from)
                .collect::<Vec<_>>()
        })
        .filter(|names| names.len() == DEFAULT_NAMES.len())
        .unwrap_or_else(|| DEFAULT_NAMES.iter().map(|s| s.to_string()).collect())
}

/// Loads the five training batches and the test batch from `dir`.
/// Train ids are 0..50,000 and test ids 0..10,000, in file order.
pub fn load_cifar10(dir: &Path) -> Result<(LabeledDataset, LabeledDataset)> {
    let names = category_names(dir);
    let mut train_images = Vec::with_capacity(TRAIN_FILES.len() * RECORDS_PER_FILE);
    let mut train_labels = Vec::with_capacity(TRAIN_FILES.len() * RECORDS_PER_FILE);
    for file in TRAIN_FILES {
        let (imgs, labels) = read_records(&dir.join(file), DIMS, Some(RECORDS_PER_FILE), names.len())?;
        train_images.extend(imgs);
        train_labels.extend(labels);
    }
    let (test_images, test_labels) =
        read_records(&dir.join(TEST_FILE), DIMS, Some(RECORDS_PER_FILE), names.len())?;
    let n_train = train_images.len() as u64;
    let n_test = test_images.len() as u64;
    let train = LabeledDataset::new(
        DIMS,
        train_images,
        train_labels,
        (0..n_train).collect(),
        names.clone(),
        Provenance::Train,
    )?;
    let test = LabeledDataset::new(
        DIMS,
        test_images,
        test_labels,
        (0..n_test).collect(),
        names,
        Provenance::Test,
    )?;
    Ok((train, test))
}

/// True when all six batch files are present in `dir`.
pub fn is_cifar10_dir(dir: &Path) -> bool {
    TRAIN_FILES
        .iter()
        .chain(std::iter::once(&TEST_FILE))
        .all(|f| dir.join(f).is_file())
}

pub fn batch_paths(dir: &Path) -> Vec<PathBuf> {
    TRAIN_FILES
        .iter()
        .chain(std::iter::once(&TEST_FILE))
        .map(|f| dir.join(f))
        .collect()
}
