use std::path::Path;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

fn read_u32(bytes: &[u8], at: usize) -> Option<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
}

/// Load an IDX image/label file pair (MNIST layout). Images become
/// `[N, 1, rows, cols]` scaled to `[0, 1]`; the class count is
/// `max(label) + 1`, at least 10.
pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<Dataset> {
    let images = std::fs::read(images_path).map_err(|e| Error::load(images_path, e.to_string()))?;
    let labels = std::fs::read(labels_path).map_err(|e| Error::load(labels_path, e.to_string()))?;

    let header = |bytes: &[u8], words: usize, path: &Path| -> Result<Vec<u32>> {
        (0..words)
            .map(|w| read_u32(bytes, 4 * w).ok_or_else(|| Error::load(path, "truncated header")))
            .collect()
    };

    let ih = header(&images, 4, images_path)?;
    if ih[0] != IDX_IMAGES_MAGIC {
        return Err(Error::load(
            images_path,
            format!("bad magic {:#010x}, expected {IDX_IMAGES_MAGIC:#010x}", ih[0]),
        ));
    }
    let lh = header(&labels, 2, labels_path)?;
    if lh[0] != IDX_LABELS_MAGIC {
        return Err(Error::load(
            labels_path,
            format!("bad magic {:#010x}, expected {IDX_LABELS_MAGIC:#010x}", lh[0]),
        ));
    }
    let (n, rows, cols) = (ih[1] as usize, ih[2] as usize, ih[3] as usize);
    if lh[1] as usize != n {
        return Err(Error::load(labels_path, format!("{} labels for {n} images", lh[1])));
    }
    if n == 0 || rows == 0 || cols == 0 {
        return Err(Error::load(images_path, "empty image set"));
    }
    let pixels = n * rows * cols;
    let body = &images[16..];
    if body.len() != pixels {
        return Err(Error::load(
            images_path,
            format!("expected {pixels} pixel bytes, found {}", body.len()),
        ));
    }
    let label_body = &labels[8..];
    if label_body.len() != n {
        return Err(Error::load(
            labels_path,
            format!("expected {n} label bytes, found {}", label_body.len()),
        ));
    }
    let data = body.iter().map(|&b| b as f64 / 255.0).collect();
    let labels: Vec<usize> = label_body.iter().map(|&b| b as usize).collect();
    let classes = labels.iter().max().map_or(0, |m| m + 1).max(10);
    Dataset::new(Tensor::new(vec![n, 1, rows, cols], data)?, labels, classes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::fs;

    fn write_fixture(dir: &Path, n: u32, pixels: &[u8], labels: &[u8]) -> (std::path::PathBuf, std::path::PathBuf) {
        let mut img = Vec::new();
        for w in [IDX_IMAGES_MAGIC, n, 28, 28] {
            img.extend_from_slice(&w.to_be_bytes());
        }
        img.extend_from_slice(pixels);
        let mut lab = Vec::new();
        for w in [IDX_LABELS_MAGIC, labels.len() as u32] {
            lab.extend_from_slice(&w.to_be_bytes());
        }
        lab.extend_from_slice(labels);
        let (ip, lp) = (dir.join("images"), dir.join("labels"));
        fs::write(&ip, img).unwrap();
        fs::write(&lp, lab).unwrap();
        (ip, lp)
    }

    fn pixels(n: usize) -> Vec<u8> {
        (0..n * 784).map(|i| (i * 7 % 256) as u8).collect()
    }

    #[test]
    fn four_image_fixture() {
        let dir = tempfile::tempdir().unwrap();
        let px = pixels(4);
        let (ip, lp) = write_fixture(dir.path(), 4, &px, &[3, 1, 4, 1]);
        let ds = load_idx(&ip, &lp).unwrap();
        assert_eq!(ds.inputs().shape(), &[4, 1, 28, 28]);
        assert_eq!(ds.labels(), &[3, 1, 4, 1]);
        assert_eq!(ds.classes(), 10);
        for (v, b) in ds.inputs().data().iter().zip(&px) {
            assert_eq!(*v, *b as f64 / 255.0);
        }
    }

    #[test]
    fn byte_255_maps_to_one() {
        let dir = tempfile::tempdir().unwrap();
        let (ip, lp) = write_fixture(dir.path(), 1, &[255; 784], &[0]);
        let ds = load_idx(&ip, &lp).unwrap();
        assert!(ds.inputs().data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn truncated_and_bad_magic_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let px = pixels(4);
        let (ip, lp) = write_fixture(dir.path(), 4, &px[..px.len() - 1], &[0, 1, 2, 3]);
        assert!(matches!(load_idx(&ip, &lp), Err(Error::Load { .. })));

        let (ip, lp) = write_fixture(dir.path(), 4, &px, &[0, 1, 2]);
        assert!(load_idx(&ip, &lp).is_err());

        let (ip, lp) = write_fixture(dir.path(), 4, &px, &[0, 1, 2, 3]);
        assert!(load_idx(&lp, &ip).is_err(), "swapped files must fail on magic");

        fs::write(&ip, [0u8, 0, 8]).unwrap();
        assert!(load_idx(&ip, &lp).is_err());
    }
}
