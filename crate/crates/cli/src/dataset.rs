//! Dataset directories: one image and one label `SGSE` file per phantom plus
//! an `index.txt` listing them with their file CRCs.

use std::fs;
use std::path::{Path, PathBuf};

use segse_core::augment::Sample;
use segse_core::phantom::PhantomSpec;
use segse_core::train::Dataset;
use segse_core::Tensor;

use crate::error::{CliError, CliResult, FormatError};
use crate::tensorfile::{file_crc, read_tensor, write_tensor, TensorData};

pub const INDEX_FILE: &str = "index.txt";
const HEADER: &str = "# segse dataset\n# index image labels image_crc32 labels_crc32\n";

/// One line of the index.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IndexEntry {
    pub index: u64,
    pub image: String,
    pub labels: String,
    pub image_crc: u32,
    pub labels_crc: u32,
}

fn file_names(index: u64) -> (String, String) {
    (format!("sample_{index:06}.image.sgse"), format!("sample_{index:06}.labels.sgse"))
}

/// Writes phantoms `start..start + count` into `dir` and returns the index.
pub fn write_dataset(dir: &Path, spec: &PhantomSpec, start: u64, count: u64) -> CliResult<Vec<IndexEntry>> {
    fs::create_dir_all(dir).map_err(|e| FormatError::io(dir, e))?;
    let mut entries = Vec::with_capacity(count as usize);
    for index in start..start + count {
        let sample = spec.generate(index)?;
        let (image, labels) = file_names(index);
        let (ip, lp) = (dir.join(&image), dir.join(&labels));
        write_tensor(&ip, &TensorData::F32(sample.image.clone()))?;
        write_tensor(
            &lp,
            &TensorData::U8 {
                shape: vec![sample.height(), sample.width()],
                data: sample.labels.clone(),
            },
        )?;
        entries.push(IndexEntry {
            index,
            image,
            labels,
            image_crc: file_crc(&ip)?,
            labels_crc: file_crc(&lp)?,
        });
    }
    let mut text = HEADER.to_string();
    for e in &entries {
        text.push_str(&format!(
            "{} {} {} {:08x} {:08x}\n",
            e.index, e.image, e.labels, e.image_crc, e.labels_crc
        ));
    }
    let path = dir.join(INDEX_FILE);
    fs::write(&path, text).map_err(|e| FormatError::io(&path, e))?;
    Ok(entries)
}

pub fn read_index(dir: &Path) -> CliResult<Vec<IndexEntry>> {
    let path = dir.join(INDEX_FILE);
    let text = fs::read_to_string(&path).map_err(|e| FormatError::io(&path, e))?;
    let mut entries = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let bad = || CliError::validation(format!("{}:{}: malformed index line", path.display(), lineno + 1));
        let f: Vec<&str> = line.split_whitespace().collect();
        let [index, image, labels, ic, lc] = f[..] else {
            return Err(bad());
        };
        entries.push(IndexEntry {
            index: index.parse().map_err(|_| bad())?,
            image: image.to_string(),
            labels: labels.to_string(),
            image_crc: u32::from_str_radix(ic, 16).map_err(|_| bad())?,
            labels_crc: u32::from_str_radix(lc, 16).map_err(|_| bad())?,
        });
    }
    Ok(entries)
}

fn load_entry(dir: &Path, e: &IndexEntry) -> CliResult<Sample<f32>> {
    let (ip, lp): (PathBuf, PathBuf) = (dir.join(&e.image), dir.join(&e.labels));
    for (path, want) in [(&ip, e.image_crc), (&lp, e.labels_crc)] {
        let got = file_crc(path)?;
        if got != want {
            return Err(CliError::validation(format!(
                "{}: file CRC {got:08x} differs from index {want:08x}",
                path.display()
            )));
        }
    }
    let image: Tensor<f32> = read_tensor(&ip)?.into_f32()?;
    let (shape, labels) = read_tensor(&lp)?.into_u8()?;
    if image.shape().len() != 3 || shape[..] != image.shape()[1..] {
        return Err(CliError::validation(format!(
            "sample {}: image shape {:?} does not match label shape {shape:?}",
            e.index,
            image.shape()
        )));
    }
    Ok(Sample::new(image, labels)?)
}

/// Loads every sample listed in `dir`'s index, verifying CRCs and shapes.
pub fn load_dataset(dir: &Path) -> CliResult<(Dataset, Vec<IndexEntry>)> {
    let entries = read_index(dir)?;
    let samples = entries.iter().map(|e| load_entry(dir, e)).collect::<CliResult<Vec<_>>>()?;
    if let Some(first) = samples.first() {
        let shape = first.image.shape().to_vec();
        if let Some(bad) = samples.iter().position(|s| s.image.shape() != shape) {
            return Err(CliError::validation(format!(
                "sample {} has shape {:?}, expected {shape:?}",
                entries[bad].index,
                samples[bad].image.shape()
            )));
        }
    }
    Ok((Dataset { samples }, entries))
}
