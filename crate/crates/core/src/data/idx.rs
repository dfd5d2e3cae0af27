//! Reader and writer for the IDX files MNIST is distributed in.
//!
//! Layout (all integers big-endian `u32`):
//! images: magic `0x00000803`, count, rows, cols, then `count·rows·cols` bytes;
//! labels: magic `0x00000801`, count, then `count` bytes.

use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{shuffle, GroupedDataset};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdxImages {
    pub count: u32,
    pub rows: u32,
    pub cols: u32,
    pub pixels: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdxLabels {
    pub labels: Vec<u8>,
}

fn read_u32(bytes: &[u8], offset: usize, what: &str) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::Parse {
            offset: bytes.len(),
            message: format!("file truncated while reading {what}"),
        })
}

fn check_magic(bytes: &[u8], expected: u32) -> Result<()> {
    let magic = read_u32(bytes, 0, "magic number")?;
    if magic != expected {
        return Err(Error::Parse {
            offset: 0,
            message: format!("bad magic number {magic:#010x}, expected {expected:#010x}"),
        });
    }
    Ok(())
}

fn payload(bytes: &[u8], start: usize, len: usize) -> Result<&[u8]> {
    let end = start + len;
    if bytes.len() < end {
        return Err(Error::Parse {
            offset: bytes.len(),
            message: format!("payload truncated: expected {end} bytes in total"),
        });
    }
    if bytes.len() > end {
        return Err(Error::Parse {
            offset: end,
            message: format!("{} trailing bytes after payload", bytes.len() - end),
        });
    }
    Ok(&bytes[start..end])
}

pub fn parse_idx_images(bytes: &[u8]) -> Result<IdxImages> {
    check_magic(bytes, IMAGES_MAGIC)?;
    let count = read_u32(bytes, 4, "image count")?;
    let rows = read_u32(bytes, 8, "row count")?;
    let cols = read_u32(bytes, 12, "column count")?;
    let len = count as usize * rows as usize * cols as usize;
    let pixels = payload(bytes, 16, len)?.to_vec();
    Ok(IdxImages {
        count,
        rows,
        cols,
        pixels,
    })
}

pub fn parse_idx_labels(bytes: &[u8]) -> Result<IdxLabels> {
    check_magic(bytes, LABELS_MAGIC)?;
    let count = read_u32(bytes, 4, "label count")?;
    let labels = payload(bytes, 8, count as usize)?.to_vec();
    Ok(IdxLabels { labels })
}

impl IdxImages {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 + self.pixels.len());
        for v in [IMAGES_MAGIC, self.count, self.rows, self.cols] {
            out.extend_from_slice(&v.to_be_bytes());
        }
        out.extend_from_slice(&self.pixels);
        out
    }

    pub fn image_len(&self) -> usize {
        self.rows as usize * self.cols as usize
    }
}

impl IdxLabels {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(8 + self.labels.len());
        out.extend_from_slice(&LABELS_MAGIC.to_be_bytes());
        out.extend_from_slice(&(self.labels.len() as u32).to_be_bytes());
        out.extend_from_slice(&self.labels);
        out
    }
}

/// Loads an MNIST image/label pair. A seeded `invert_fraction` of images
/// has its intensities inverted (`v → 1 − v` on the `[0, 1]` scale) and
/// forms group 1; the untouched images form group 0. Pixels end up in
/// `[-1, 1]`.
pub fn load_mnist_idx(path_images: &Path, path_labels: &Path, invert_fraction: f64, seed: u64) -> Result<GroupedDataset> {
    if !(0.0..=1.0).contains(&invert_fraction) {
        return Err(Error::Config(format!("invert fraction {invert_fraction} outside [0,1]")));
    }
    let images = parse_idx_images(&fs::read(path_images).map_err(|e| Error::io(path_images, e))?)?;
    let labels = parse_idx_labels(&fs::read(path_labels).map_err(|e| Error::io(path_labels, e))?)?;
    if images.count as usize != labels.labels.len() {
        return Err(Error::Data(format!(
            "{} images but {} labels",
            images.count,
            labels.labels.len()
        )));
    }
    let n = images.count as usize;
    if n == 0 {
        return Err(Error::Data("IDX file holds no images".into()));
    }
    let n1 = (invert_fraction * n as f64).round() as usize;
    let mut sensitive = vec![1u8; n1];
    sensitive.extend(std::iter::repeat_n(0u8, n - n1));
    shuffle(&mut sensitive, &mut ChaCha8Rng::seed_from_u64(seed));

    let d = images.image_len();
    let mut data = Vec::with_capacity(n * d);
    for (img, &s) in images.pixels.chunks_exact(d).zip(&sensitive) {
        data.extend(img.iter().map(|&b| {
            let v = b as f64 / 255.0;
            let v = if s == 1 { 1.0 - v } else { v };
            2.0 * v - 1.0
        }));
    }
    let labels: Vec<usize> = labels.labels.iter().map(|&l| l as usize).collect();
    let k = labels.iter().max().map_or(1, |m| m + 1).max(10);
    GroupedDataset::new(Tensor::new(&[n, d], data)?, sensitive, Some(labels), Some(k))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fixture(count: u32, rows: u32, cols: u32) -> (IdxImages, IdxLabels) {
        let len = (count * rows * cols) as usize;
        let images = IdxImages {
            count,
            rows,
            cols,
            pixels: (0..len).map(|i| (i * 37 % 256) as u8).collect(),
        };
        let labels = IdxLabels {
            labels: (0..count).map(|i| (i % 10) as u8).collect(),
        };
        (images, labels)
    }

    #[test]
    fn header_layout_is_big_endian() {
        let (img, lab) = fixture(2, 3, 4);
        let b = img.to_bytes();
        assert_eq!(&b[..16], &[0, 0, 8, 3, 0, 0, 0, 2, 0, 0, 0, 3, 0, 0, 0, 4]);
        assert_eq!(parse_idx_images(&b).unwrap(), img);
        let b = lab.to_bytes();
        assert_eq!(&b[..8], &[0, 0, 8, 1, 0, 0, 0, 2]);
        assert_eq!(parse_idx_labels(&b).unwrap(), lab);
    }

    #[test]
    fn bad_magic_reports_offset_zero() {
        let (img, _) = fixture(1, 2, 2);
        let mut b = img.to_bytes();
        b[3] = 0x01;
        match parse_idx_images(&b) {
            Err(Error::Parse { offset: 0, .. }) => {}
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn truncation_reports_offset() {
        let (img, _) = fixture(2, 2, 2);
        let b = img.to_bytes();
        match parse_idx_images(&b[..b.len() - 1]) {
            Err(Error::Parse { offset, .. }) => assert_eq!(offset, b.len() - 1),
            other => panic!("{other:?}"),
        }
        match parse_idx_images(&b[..10]) {
            Err(Error::Parse { offset: 10, .. }) => {}
            other => panic!("{other:?}"),
        }
        let mut long = b.clone();
        long.push(0);
        match parse_idx_images(&long) {
            Err(Error::Parse { offset, .. }) => assert_eq!(offset, b.len()),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn load_with_and_without_inversion() {
        let dir = tempfile::tempdir().unwrap();
        let (img, lab) = fixture(20, 4, 4);
        let pi = dir.path().join("img.idx");
        let pl = dir.path().join("lab.idx");
        fs::write(&pi, img.to_bytes()).unwrap();
        fs::write(&pl, lab.to_bytes()).unwrap();

        let plain = load_mnist_idx(&pi, &pl, 0.0, 1).unwrap();
        assert!(plain.sensitive().iter().all(|&s| s == 0));
        assert_eq!(plain.dim(), 16);

        let mixed = load_mnist_idx(&pi, &pl, 0.5, 1).unwrap();
        assert_eq!(mixed.group_count(1), 10);
        for i in 0..20 {
            let orig = (plain.samples().row(i)[0] + 1.0) / 2.0;
            let now = (mixed.samples().row(i)[0] + 1.0) / 2.0;
            if mixed.sensitive()[i] == 1 {
                assert!((now - (1.0 - orig)).abs() < 1e-12);
            } else {
                assert_eq!(now, orig);
            }
        }
    }
}
