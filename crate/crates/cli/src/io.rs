//! Dataset file readers and PNG emission.
//!
//! Disk formats:
//! - image folder: one subdirectory per class under the root, holding .png
//!   files; class order and sample order follow byte-wise name sorting so a
//!   directory always loads the same way.
//! - packed binary: fixed 32x32 RGB records of 3073 bytes each, a label
//!   byte followed by 1024 red, 1024 green and 1024 blue pixel bytes.
//!
//! Pixels map linearly between bytes and the model range: 0 -> -1, 255 -> 1.
//! Rows are channel-major, matching the in-memory dataset layout.

use std::fs;
use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use image::{GrayImage, RgbImage};
use kd_dlgan_core::data::Dataset;
use kd_dlgan_core::Mat;

/// Record length of the packed binary format: label byte plus 32*32*3 pixels.
pub const PACKED_RECORD_LEN: usize = 1 + 3072;
pub const PACKED_IMAGE_SIZE: usize = 32;
pub const PACKED_CHANNELS: usize = 3;

fn byte_to_unit(b: u8) -> f64 {
    f64::from(b) / 127.5 - 1.0
}

fn unit_to_byte(v: f64) -> u8 {
    ((v.clamp(-1.0, 1.0) + 1.0) * 127.5).round() as u8
}

/// Loads `root/<class>/*.png` into a dataset. Every image must be square
/// and share one size; `channels` selects grayscale (1) or RGB (3) decoding.
pub fn read_image_folder(root: &Path, channels: usize) -> Result<Dataset> {
    if channels != 1 && channels != 3 {
        bail!("image folders decode to 1 or 3 channels, not {}", channels);
    }
    let mut class_dirs: Vec<_> = fs::read_dir(root)
        .with_context(|| format!("cannot read dataset root {}", root.display()))?
        .collect::<std::io::Result<Vec<_>>>()
        .with_context(|| format!("cannot list dataset root {}", root.display()))?
        .into_iter()
        .filter(|e| e.path().is_dir())
        .map(|e| e.path())
        .collect();
    class_dirs.sort();
    if class_dirs.is_empty() {
        bail!(
            "dataset root {} has no class subdirectories",
            root.display()
        );
    }

    let mut class_names = Vec::new();
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut labels = Vec::new();
    let mut image_size = 0usize;
    for (label, dir) in class_dirs.iter().enumerate() {
        let name = dir
            .file_name()
            .and_then(|n| n.to_str())
            .ok_or_else(|| anyhow!("class directory {} has a non-UTF-8 name", dir.display()))?
            .to_string();
        let mut files: Vec<_> = fs::read_dir(dir)
            .with_context(|| format!("cannot read class directory {}", dir.display()))?
            .collect::<std::io::Result<Vec<_>>>()
            .with_context(|| format!("cannot list class directory {}", dir.display()))?
            .into_iter()
            .map(|e| e.path())
            .filter(|p| p.extension().and_then(|e| e.to_str()) == Some("png"))
            .collect();
        files.sort();
        if files.is_empty() {
            bail!("class directory {} contains no .png files", dir.display());
        }
        for file in files {
            let img = image::open(&file)
                .with_context(|| format!("cannot decode image {}", file.display()))?;
            if img.width() != img.height() {
                bail!(
                    "image {} is {}x{}; images must be square",
                    file.display(),
                    img.width(),
                    img.height()
                );
            }
            let size = img.width() as usize;
            if image_size == 0 {
                image_size = size;
            } else if size != image_size {
                bail!(
                    "image {} is {}x{} but the first image was {}x{}",
                    file.display(),
                    size,
                    size,
                    image_size,
                    image_size
                );
            }
            rows.push(decode_to_row(&img, channels, size));
            labels.push(label);
        }
        class_names.push(name);
    }

    let images = Mat::from_rows(&rows).map_err(|e| anyhow!("{}", e))?;
    Ok(Dataset {
        images,
        labels,
        class_names,
        channels,
        image_size,
    })
}

/// Channel-major pixel row of a square image.
fn decode_to_row(img: &image::DynamicImage, channels: usize, size: usize) -> Vec<f64> {
    let mut row = vec![0.0; channels * size * size];
    if channels == 1 {
        let g = img.to_luma8();
        for y in 0..size {
            for x in 0..size {
                row[y * size + x] = byte_to_unit(g.get_pixel(x as u32, y as u32)[0]);
            }
        }
    } else {
        let c = img.to_rgb8();
        let plane = size * size;
        for y in 0..size {
            for x in 0..size {
                let p = c.get_pixel(x as u32, y as u32);
                for ch in 0..3 {
                    row[ch * plane + y * size + x] = byte_to_unit(p[ch]);
                }
            }
        }
    }
    row
}

/// Loads a packed binary file of labeled 32x32 RGB records. Class names
/// default to `class_<label>`; the config can override them.
pub fn read_packed_binary(path: &Path) -> Result<Dataset> {
    let bytes =
        fs::read(path).with_context(|| format!("cannot read dataset file {}", path.display()))?;
    if bytes.is_empty() || bytes.len() % PACKED_RECORD_LEN != 0 {
        bail!(
            "dataset file {} holds {} bytes, not a multiple of the {}-byte record",
            path.display(),
            bytes.len(),
            PACKED_RECORD_LEN
        );
    }
    let n = bytes.len() / PACKED_RECORD_LEN;
    let pixels = PACKED_RECORD_LEN - 1;
    let mut labels = Vec::with_capacity(n);
    let mut data = Vec::with_capacity(n * pixels);
    let mut max_label = 0usize;
    for rec in bytes.chunks_exact(PACKED_RECORD_LEN) {
        let label = rec[0] as usize;
        max_label = max_label.max(label);
        labels.push(label);
        data.extend(rec[1..].iter().map(|&b| byte_to_unit(b)));
    }
    let class_names: Vec<String> = (0..=max_label).map(|i| format!("class_{}", i)).collect();
    let images = Mat::from_vec(n, pixels, data).map_err(|e| anyhow!("{}", e))?;
    Ok(Dataset {
        images,
        labels,
        class_names,
        channels: PACKED_CHANNELS,
        image_size: PACKED_IMAGE_SIZE,
    })
}

/// Tiles image rows into a `grid_cols`-wide sheet and writes it as a PNG,
/// mapping [-1, 1] to [0, 255] with clamping.
pub fn write_png_grid(
    path: &Path,
    images: &Mat,
    channels: usize,
    image_size: usize,
    grid_cols: usize,
) -> Result<()> {
    let n = images.rows();
    if n == 0 || grid_cols == 0 {
        bail!("empty sample grid");
    }
    if images.cols() != channels * image_size * image_size {
        bail!(
            "grid rows hold {} values, expected {}x{}x{}",
            images.cols(),
            channels,
            image_size,
            image_size
        );
    }
    let grid_rows = n.div_ceil(grid_cols);
    let (w, h) = (
        (grid_cols * image_size) as u32,
        (grid_rows * image_size) as u32,
    );
    let plane = image_size * image_size;
    let pixel = |idx: usize, ch: usize, y: usize, x: usize| {
        unit_to_byte(images.get(idx, ch * plane + y * image_size + x))
    };
    if channels == 1 {
        let mut sheet = GrayImage::new(w, h);
        for idx in 0..n {
            let (ty, tx) = (idx / grid_cols * image_size, idx % grid_cols * image_size);
            for y in 0..image_size {
                for x in 0..image_size {
                    sheet.put_pixel(
                        (tx + x) as u32,
                        (ty + y) as u32,
                        image::Luma([pixel(idx, 0, y, x)]),
                    );
                }
            }
        }
        sheet
            .save(path)
            .with_context(|| format!("cannot write {}", path.display()))?;
    } else if channels == 3 {
        let mut sheet = RgbImage::new(w, h);
        for idx in 0..n {
            let (ty, tx) = (idx / grid_cols * image_size, idx % grid_cols * image_size);
            for y in 0..image_size {
                for x in 0..image_size {
                    let px = [
                        pixel(idx, 0, y, x),
                        pixel(idx, 1, y, x),
                        pixel(idx, 2, y, x),
                    ];
                    sheet.put_pixel((tx + x) as u32, (ty + y) as u32, image::Rgb(px));
                }
            }
        }
        sheet
            .save(path)
            .with_context(|| format!("cannot write {}", path.display()))?;
    } else {
        bail!("sample grids support 1 or 3 channels, not {}", channels);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_png(path: &Path, size: u32, value: u8) {
        let img = GrayImage::from_pixel(size, size, image::Luma([value]));
        img.save(path).unwrap();
    }

    #[test]
    fn image_folder_loads_sorted_classes_and_pixels() {
        let dir = tempfile::tempdir().unwrap();
        for (class, value) in [("b_dogs", 255u8), ("a_cats", 0u8)] {
            let sub = dir.path().join(class);
            fs::create_dir(&sub).unwrap();
            write_png(&sub.join("img1.png"), 4, value);
            write_png(&sub.join("img0.png"), 4, value);
        }
        let ds = read_image_folder(dir.path(), 1).unwrap();
        assert_eq!(ds.class_names, vec!["a_cats", "b_dogs"]);
        assert_eq!(ds.len(), 4);
        assert_eq!(ds.labels, vec![0, 0, 1, 1]);
        assert_eq!(ds.image_size, 4);
        assert!((ds.images.get(0, 0) - -1.0).abs() < 1e-12);
        assert!((ds.images.get(2, 0) - 1.0).abs() < 1e-12);
        ds.validate().unwrap();
    }

    #[test]
    fn image_folder_rejects_mixed_sizes_and_empty_roots() {
        let dir = tempfile::tempdir().unwrap();
        assert!(read_image_folder(dir.path(), 1).is_err(), "no class dirs");

        let sub = dir.path().join("only");
        fs::create_dir(&sub).unwrap();
        write_png(&sub.join("a.png"), 4, 10);
        write_png(&sub.join("b.png"), 6, 10);
        let err = read_image_folder(dir.path(), 1).unwrap_err();
        assert!(err.to_string().contains("first image"), "{}", err);
    }

    #[test]
    fn packed_binary_round_trips_labels_and_channel_planes() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("data.bin");
        let mut bytes = Vec::new();
        for label in [2u8, 0u8] {
            bytes.push(label);
            bytes.extend(std::iter::repeat(0u8).take(1024));
            bytes.extend(std::iter::repeat(255u8).take(1024));
            bytes.extend(std::iter::repeat(128u8).take(1024));
        }
        fs::write(&path, &bytes).unwrap();
        let ds = read_packed_binary(&path).unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!(ds.labels, vec![2, 0]);
        assert_eq!(ds.class_names.len(), 3);
        assert_eq!(ds.image_size, 32);
        assert!((ds.images.get(0, 0) - -1.0).abs() < 1e-12, "red plane");
        assert!((ds.images.get(0, 1024) - 1.0).abs() < 1e-12, "green plane");
        assert!(
            (ds.images.get(0, 2048) - (128.0 / 127.5 - 1.0)).abs() < 1e-12,
            "blue plane"
        );
    }

    #[test]
    fn packed_binary_rejects_truncated_files() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("data.bin");
        fs::write(&path, vec![0u8; PACKED_RECORD_LEN + 5]).unwrap();
        assert!(read_packed_binary(&path).is_err());
    }

    #[test]
    fn png_grid_writes_expected_geometry() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("grid.png");
        let images = Mat::from_vec(
            3,
            4,
            vec![
                -1.0, 1.0, 0.0, 0.5, 1.0, 1.0, 1.0, 1.0, -1.0, -1.0, -1.0, -1.0,
            ],
        )
        .unwrap();
        write_png_grid(&path, &images, 1, 2, 2).unwrap();
        let img = image::open(&path).unwrap().to_luma8();
        assert_eq!(
            (img.width(), img.height()),
            (4, 4),
            "2 cols x 2 rows of 2x2 tiles"
        );
        assert_eq!(img.get_pixel(0, 0)[0], 0);
        assert_eq!(img.get_pixel(1, 0)[0], 255);
        assert_eq!(
            img.get_pixel(0, 2)[0],
            0,
            "third tile starts the second band"
        );
    }
}
