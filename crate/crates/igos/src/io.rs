//! On-disk formats: the TCNW weight binary, IDX image/label datasets, and
//! PNG helpers including a directory-of-PNGs dataset loader.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use image::{ExtendedColorType, ImageEncoder};

use crate::error::{Error, FormatError, Result};
use crate::imageops::ImageTensor;
use crate::scorer::{Dataset, TinyCnnWeights};

const WEIGHTS_MAGIC: &[u8; 4] = b"TCNW";
const WEIGHTS_VERSION: u32 = 1;
const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path.display().to_string(), e))
}

/// Write via a temporary sibling file and rename, so readers never observe a
/// partially written artifact.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let display = path.display().to_string();
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    let mut file = fs::File::create(&tmp).map_err(|e| Error::io(display.clone(), e))?;
    file.write_all(bytes)
        .and_then(|_| file.sync_all())
        .map_err(|e| Error::io(display.clone(), e))?;
    drop(file);
    fs::rename(&tmp, path).map_err(|e| Error::io(display, e))
}

// ---------------------------------------------------------------------------
// TCNW weight binary: magic, u32 version, shape header, f32 LE payload.
// ---------------------------------------------------------------------------

pub fn save_weights(weights: &TinyCnnWeights, path: &Path) -> Result<()> {
    weights.validate()?;
    let (h, w, c) = weights.input_shape();
    let header: [u32; 8] = [
        h as u32,
        w as u32,
        c as u32,
        weights.num_classes() as u32,
        super::scorer::CONV1_OUT as u32,
        super::scorer::CONV2_OUT as u32,
        super::scorer::KERNEL as u32,
        super::scorer::HIDDEN as u32,
    ];
    let payload: usize = weights.buffers().iter().map(|b| b.len()).sum();
    let mut bytes = Vec::with_capacity(4 + 4 + 32 + payload * 4);
    bytes.extend_from_slice(WEIGHTS_MAGIC);
    bytes.extend_from_slice(&WEIGHTS_VERSION.to_le_bytes());
    for v in header {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    for buffer in weights.buffers() {
        for v in buffer {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    atomic_write(path, &bytes)
}

pub fn load_weights(path: &Path) -> Result<TinyCnnWeights> {
    let display = path.display().to_string();
    let bytes = read_file(path)?;
    let need = |n: usize| -> Result<()> {
        if bytes.len() < n {
            Err(FormatError::Truncated {
                path: display.clone(),
                needed: n,
                got: bytes.len(),
            }
            .into())
        } else {
            Ok(())
        }
    };
    need(4)?;
    if &bytes[0..4] != WEIGHTS_MAGIC {
        return Err(FormatError::BadMagic {
            path: display,
            expected: String::from_utf8_lossy(WEIGHTS_MAGIC).into_owned(),
            found: format!("{:02x?}", &bytes[0..4]),
        }
        .into());
    }
    need(8)?;
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != WEIGHTS_VERSION {
        return Err(FormatError::UnsupportedVersion {
            path: display,
            found: version,
            supported: WEIGHTS_VERSION,
        }
        .into());
    }
    need(8 + 32)?;
    let mut header = [0u32; 8];
    for (i, v) in header.iter_mut().enumerate() {
        let at = 8 + i * 4;
        *v = u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap());
    }
    let [h, w, c, classes, conv1, conv2, kernel, hidden] = header.map(|v| v as usize);
    if conv1 != super::scorer::CONV1_OUT
        || conv2 != super::scorer::CONV2_OUT
        || kernel != super::scorer::KERNEL
        || hidden != super::scorer::HIDDEN
    {
        return Err(FormatError::Other(format!(
            "{display}: layer header ({conv1},{conv2},{kernel},{hidden}) does not match the fixed architecture"
        ))
        .into());
    }
    let mut weights = TinyCnnWeights::init(h, w, c, classes, 0).map_err(|e| {
        FormatError::Other(format!("{display}: inconsistent shape header: {e}"))
    })?;
    let payload: usize = weights.buffers().iter().map(|b| b.len()).sum();
    let total = 8 + 32 + payload * 4;
    need(total)?;
    if bytes.len() > total {
        return Err(FormatError::Other(format!(
            "{display}: {} trailing bytes after payload",
            bytes.len() - total
        ))
        .into());
    }
    let mut at = 8 + 32;
    for buffer in weights.buffers_mut() {
        for v in buffer.iter_mut() {
            *v = f32::from_le_bytes(bytes[at..at + 4].try_into().unwrap());
            at += 4;
        }
    }
    weights.validate()?;
    Ok(weights)
}

// ---------------------------------------------------------------------------
// IDX datasets: big-endian headers, u8 payloads scaled to [0,1].
// ---------------------------------------------------------------------------

fn idx_u32(bytes: &[u8], at: usize, path: &str) -> Result<u32> {
    if bytes.len() < at + 4 {
        return Err(FormatError::Truncated {
            path: path.to_string(),
            needed: at + 4,
            got: bytes.len(),
        }
        .into());
    }
    Ok(u32::from_be_bytes(bytes[at..at + 4].try_into().unwrap()))
}

fn load_idx_images(path: &Path) -> Result<(usize, usize, usize, Vec<u8>)> {
    let display = path.display().to_string();
    let bytes = read_file(path)?;
    let magic = idx_u32(&bytes, 0, &display)?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(FormatError::BadMagic {
            path: display,
            expected: format!("{IDX_IMAGES_MAGIC:#010x}"),
            found: format!("{magic:#010x}"),
        }
        .into());
    }
    let count = idx_u32(&bytes, 4, &display)? as usize;
    let rows = idx_u32(&bytes, 8, &display)? as usize;
    let cols = idx_u32(&bytes, 12, &display)? as usize;
    let needed = 16 + count * rows * cols;
    if bytes.len() < needed {
        return Err(FormatError::Truncated {
            path: display,
            needed,
            got: bytes.len(),
        }
        .into());
    }
    Ok((count, rows, cols, bytes[16..needed].to_vec()))
}

fn load_idx_labels(path: &Path) -> Result<Vec<u8>> {
    let display = path.display().to_string();
    let bytes = read_file(path)?;
    let magic = idx_u32(&bytes, 0, &display)?;
    if magic != IDX_LABELS_MAGIC {
        return Err(FormatError::BadMagic {
            path: display,
            expected: format!("{IDX_LABELS_MAGIC:#010x}"),
            found: format!("{magic:#010x}"),
        }
        .into());
    }
    let count = idx_u32(&bytes, 4, &display)? as usize;
    let needed = 8 + count;
    if bytes.len() < needed {
        return Err(FormatError::Truncated {
            path: display,
            needed,
            got: bytes.len(),
        }
        .into());
    }
    Ok(bytes[8..needed].to_vec())
}

/// Load an IDX image/label file pair. The class count is the largest label
/// plus one.
pub fn load_idx_dataset(images_path: &Path, labels_path: &Path) -> Result<Dataset> {
    let (count, rows, cols, pixels) = load_idx_images(images_path)?;
    let labels = load_idx_labels(labels_path)?;
    if labels.len() != count {
        return Err(FormatError::CountMismatch(format!(
            "{} has {count} images but {} has {} labels",
            images_path.display(),
            labels_path.display(),
            labels.len()
        ))
        .into());
    }
    let per = rows * cols;
    let images: Vec<ImageTensor> = (0..count)
        .map(|i| {
            let data = pixels[i * per..(i + 1) * per]
                .iter()
                .map(|b| *b as f64 / 255.0)
                .collect();
            ImageTensor::new(rows, cols, 1, data)
        })
        .collect::<Result<_>>()?;
    let num_classes = labels.iter().copied().max().map_or(1, |m| m as usize + 1);
    Dataset::new(
        images,
        labels.into_iter().map(|l| l as usize).collect(),
        num_classes,
    )
}

pub fn write_idx_images(path: &Path, rows: usize, cols: usize, images: &[Vec<u8>]) -> Result<()> {
    let mut bytes = Vec::with_capacity(16 + images.len() * rows * cols);
    bytes.extend_from_slice(&IDX_IMAGES_MAGIC.to_be_bytes());
    bytes.extend_from_slice(&(images.len() as u32).to_be_bytes());
    bytes.extend_from_slice(&(rows as u32).to_be_bytes());
    bytes.extend_from_slice(&(cols as u32).to_be_bytes());
    for img in images {
        if img.len() != rows * cols {
            return Err(Error::Shape(format!(
                "image has {} pixels, expected {}",
                img.len(),
                rows * cols
            )));
        }
        bytes.extend_from_slice(img);
    }
    atomic_write(path, &bytes)
}

pub fn write_idx_labels(path: &Path, labels: &[u8]) -> Result<()> {
    let mut bytes = Vec::with_capacity(8 + labels.len());
    bytes.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
    bytes.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    bytes.extend_from_slice(labels);
    atomic_write(path, &bytes)
}

// ---------------------------------------------------------------------------
// PNG helpers.
// ---------------------------------------------------------------------------

/// Load a PNG as a single-channel [0,1] image (non-gray inputs are
/// luma-converted).
pub fn load_png_gray(path: &Path) -> Result<ImageTensor> {
    let display = path.display().to_string();
    let bytes = read_file(path)?;
    let decoded = image::load_from_memory(&bytes)
        .map_err(|e| FormatError::Other(format!("{display}: {e}")))?;
    let gray = decoded.to_luma8();
    let (w, h) = gray.dimensions();
    let data = gray.as_raw().iter().map(|b| *b as f64 / 255.0).collect();
    ImageTensor::new(h as usize, w as usize, 1, data)
}

/// Save [0,1] grayscale values as an 8-bit PNG.
pub fn save_png_gray(path: &Path, height: usize, width: usize, values: &[f64]) -> Result<()> {
    if values.len() != height * width {
        return Err(Error::Shape(format!(
            "{} values for a {}x{} image",
            values.len(),
            height,
            width
        )));
    }
    let pixels: Vec<u8> = values
        .iter()
        .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect();
    let mut bytes = Vec::new();
    image::codecs::png::PngEncoder::new(&mut bytes)
        .write_image(
            &pixels,
            width as u32,
            height as u32,
            ExtendedColorType::L8,
        )
        .map_err(|e| FormatError::Other(format!("{}: {e}", path.display())))?;
    atomic_write(path, &bytes)
}

/// Load a dataset from `root/<class>/*.png`; class labels follow the
/// lexicographic order of the subdirectory names.
pub fn load_png_dir(root: &Path) -> Result<(Dataset, Vec<String>)> {
    let display = root.display().to_string();
    let entries = fs::read_dir(root).map_err(|e| Error::io(display.clone(), e))?;
    let mut class_dirs: Vec<(String, PathBuf)> = entries
        .filter_map(|e| e.ok())
        .filter(|e| e.path().is_dir())
        .map(|e| (e.file_name().to_string_lossy().into_owned(), e.path()))
        .collect();
    class_dirs.sort();
    if class_dirs.is_empty() {
        return Err(FormatError::Other(format!(
            "{display}: no class subdirectories"
        ))
        .into());
    }
    let mut images = Vec::new();
    let mut labels = Vec::new();
    for (label, (_, dir)) in class_dirs.iter().enumerate() {
        let mut files: Vec<PathBuf> = fs::read_dir(dir)
            .map_err(|e| Error::io(dir.display().to_string(), e))?
            .filter_map(|e| e.ok())
            .map(|e| e.path())
            .filter(|p| p.extension().is_some_and(|ext| ext == "png"))
            .collect();
        files.sort();
        for file in files {
            images.push(load_png_gray(&file)?);
            labels.push(label);
        }
    }
    if images.is_empty() {
        return Err(FormatError::Other(format!("{display}: no png files")).into());
    }
    let names = class_dirs.into_iter().map(|(name, _)| name).collect();
    let classes = labels.iter().copied().max().unwrap() + 1;
    Ok((Dataset::new(images, labels, classes)?, names))
}
