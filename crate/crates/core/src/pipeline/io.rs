//! PGM images and the dataset manifest.

use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use image::codecs::pnm::{GraymapHeader, PnmEncoder, PnmHeader, SampleEncoding};
use image::{ExtendedColorType, ImageEncoder, ImageReader};
use serde::{Deserialize, Serialize};

use super::LabeledImage;
use crate::error::{Error, Result};
use crate::grid::{Image, Mask};

pub const MANIFEST_FILE: &str = "manifest.csv";

fn encode_pgm(path: &Path, bytes: &[u8], width: usize, height: usize, color: ExtendedColorType) -> Result<()> {
    let (width, height) = (width as u32, height as u32);
    let maxwhite = if color == ExtendedColorType::L16 { 65535 } else { 255 };
    let header = PnmHeader::from(GraymapHeader { encoding: SampleEncoding::Binary, height, width, maxwhite });
    let w = BufWriter::new(File::create(path)?);
    PnmEncoder::new(w).with_header(header).write_image(bytes, width, height, color)?;
    Ok(())
}

/// 16-bit binary PGM; intensities are clamped to `[0, 1]`.
pub fn write_image(path: impl AsRef<Path>, img: &Image) -> Result<()> {
    let bytes: Vec<u8> = img
        .data()
        .iter()
        .flat_map(|v| ((v.clamp(0.0, 1.0) * 65535.0).round() as u16).to_ne_bytes())
        .collect();
    encode_pgm(path.as_ref(), &bytes, img.width(), img.height(), ExtendedColorType::L16)
}

/// 8-bit binary PGM with values 0 and 255.
pub fn write_mask(path: impl AsRef<Path>, mask: &Mask) -> Result<()> {
    let bytes: Vec<u8> = mask.data().iter().map(|&b| if b { 255 } else { 0 }).collect();
    encode_pgm(path.as_ref(), &bytes, mask.width(), mask.height(), ExtendedColorType::L8)
}

fn decode_luma16(path: &Path) -> Result<(usize, usize, Vec<u16>)> {
    let img = ImageReader::open(path)?.with_guessed_format()?.decode()?.into_luma16();
    let (w, h) = img.dimensions();
    Ok((h as usize, w as usize, img.into_raw()))
}

/// Any grayscale image the `image` crate reads, scaled to `[0, 1]`.
pub fn read_image(path: impl AsRef<Path>) -> Result<Image> {
    let (h, w, raw) = decode_luma16(path.as_ref())?;
    Image::from_vec(h, w, raw.into_iter().map(|v| v as f64 / 65535.0).collect())
}

/// Nonzero pixels are set.
pub fn read_mask(path: impl AsRef<Path>) -> Result<Mask> {
    let (h, w, raw) = decode_luma16(path.as_ref())?;
    Mask::from_vec(h, w, raw.into_iter().map(|v| v > 0).collect())
}

#[derive(Debug, Serialize, Deserialize)]
struct ManifestRow {
    image_id: String,
    subject_id: String,
    label: String,
    image: String,
    tissue_mask: String,
    anomaly_mask: String,
}

/// Writes images, masks and `manifest.csv` under `dir`. Returns the manifest path.
pub fn write_dataset(dir: impl AsRef<Path>, images: &[LabeledImage]) -> Result<PathBuf> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir.join("images"))?;
    std::fs::create_dir_all(dir.join("masks"))?;
    let manifest = dir.join(MANIFEST_FILE);
    let mut out = csv::Writer::from_path(&manifest)?;
    for img in images {
        img.check()?;
        let row = ManifestRow {
            image_id: img.image_id.clone(),
            subject_id: img.subject_id.clone(),
            label: img.label.to_string(),
            image: format!("images/{}.pgm", img.image_id),
            tissue_mask: format!("masks/{}_tissue.pgm", img.image_id),
            anomaly_mask: format!("masks/{}_anomaly.pgm", img.image_id),
        };
        write_image(dir.join(&row.image), &img.image)?;
        write_mask(dir.join(&row.tissue_mask), &img.tissue_mask)?;
        write_mask(dir.join(&row.anomaly_mask), &img.anomaly_mask)?;
        out.serialize(&row)?;
    }
    out.flush()?;
    Ok(manifest)
}

/// Loads every row of a manifest; paths are relative to the manifest's directory.
pub fn read_dataset(manifest: impl AsRef<Path>) -> Result<Vec<LabeledImage>> {
    let manifest = manifest.as_ref();
    let base = manifest.parent().unwrap_or(Path::new("."));
    let mut rd = csv::Reader::from_path(manifest)?;
    let mut images = Vec::new();
    for row in rd.deserialize() {
        let row: ManifestRow = row?;
        let img = LabeledImage {
            image: read_image(base.join(&row.image))?,
            tissue_mask: read_mask(base.join(&row.tissue_mask))?,
            anomaly_mask: read_mask(base.join(&row.anomaly_mask))?,
            subject_id: row.subject_id,
            image_id: row.image_id,
            label: row.label.parse()?,
        };
        img.check().map_err(|e| Error::InvalidData(format!("{}: {e}", img.image_id)))?;
        images.push(img);
    }
    if images.is_empty() {
        return Err(Error::InvalidData(format!("{} lists no images", manifest.display())));
    }
    Ok(images)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pipeline::make_synthetic_dataset;

    #[test]
    fn dataset_roundtrip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let images = make_synthetic_dataset(2, 1, 1, 128, 3).unwrap();
        let manifest = write_dataset(dir.path(), &images).unwrap();
        assert_eq!(read_dataset(&manifest).unwrap(), images);
    }

    #[test]
    fn eight_bit_images_scale_to_unit_range() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.pgm");
        let mask = Mask::from_fn(3, 4, |y, x| (y + x) % 2 == 0);
        write_mask(&p, &mask).unwrap();
        let img = read_image(&p).unwrap();
        assert_eq!(img.data()[0], 1.0);
        assert_eq!(img.data()[1], 0.0);
        assert_eq!(read_mask(&p).unwrap(), mask);
    }
}
