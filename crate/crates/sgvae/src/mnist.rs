//! IDX loading and the MNIST train / validation / test layout.

use std::path::{Path, PathBuf};

use sgvae_core::data::{dataset_from_idx, parse_idx, Dataset};

use crate::error::{Error, Result};

pub const TRAIN_IMAGES: &str = "train-images-idx3-ubyte";
pub const TRAIN_LABELS: &str = "train-labels-idx1-ubyte";
pub const TEST_IMAGES: &str = "t10k-images-idx3-ubyte";
pub const TEST_LABELS: &str = "t10k-labels-idx1-ubyte";

/// Training images kept for learning; the rest of the training file is
/// held out for validation.
pub const TRAIN_SIZE: usize = 50_000;

pub const DATA_DIR_ENV: &str = "SGVAE_DATA_DIR";

/// The data directory from a flag, falling back to `SGVAE_DATA_DIR`.
pub fn data_dir(flag: Option<&Path>) -> Result<PathBuf> {
    match flag {
        Some(p) => Ok(p.to_path_buf()),
        None => std::env::var_os(DATA_DIR_ENV)
            .map(PathBuf::from)
            .ok_or_else(|| Error::Data(format!("no data directory given and {DATA_DIR_ENV} is unset"))),
    }
}

fn read(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(Error::io(path))
}

/// Reads an image file and a label file into a dataset with pixels in `[0, 1]`.
pub fn load_idx(images: &Path, labels: &Path) -> Result<Dataset> {
    let parse = |p: &Path| parse_idx(&read(p)?).map_err(|e| Error::Data(format!("{}: {e}", p.display())));
    Ok(dataset_from_idx(&parse(images)?, &parse(labels)?)?)
}

pub struct Mnist {
    pub train: Dataset,
    pub validation: Dataset,
    pub test: Dataset,
}

/// Loads the four canonical files from `dir`.
pub fn load(dir: &Path) -> Result<Mnist> {
    if !dir.is_dir() {
        return Err(Error::Data(format!("data directory {} does not exist", dir.display())));
    }
    let full = load_idx(&dir.join(TRAIN_IMAGES), &dir.join(TRAIN_LABELS))?;
    let test = load_idx(&dir.join(TEST_IMAGES), &dir.join(TEST_LABELS))?;
    if full.width() != test.width() {
        return Err(Error::Data(format!(
            "train images have {} pixels but test images have {}",
            full.width(),
            test.width()
        )));
    }
    let (train, validation) = full.split_at(TRAIN_SIZE);
    log::info!(
        "loaded {} train, {} validation, {} test images from {}",
        train.len(),
        validation.len(),
        test.len(),
        dir.display()
    );
    Ok(Mnist {
        train,
        validation,
        test,
    })
}
