//! Big-endian IDX containers as distributed for MNIST.

use std::fs;
use std::io::Write;
use std::path::Path;

use byteorder::{BigEndian, ByteOrder, WriteBytesExt};

use crate::error::{Error, IdxErrorKind, Result};

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;

/// Raw image bytes with their `(count, rows, cols)` header.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdxImages {
    pub count: usize,
    pub rows: usize,
    pub cols: usize,
    pub pixels: Vec<u8>,
}

fn idx_err(path: &Path, kind: IdxErrorKind) -> Error {
    Error::Idx {
        path: path.to_path_buf(),
        kind,
    }
}

fn header(path: &Path, bytes: &[u8], expected_magic: u32, dims: usize) -> Result<Vec<usize>> {
    let need = 4 + 4 * dims;
    if bytes.len() < need {
        return Err(idx_err(
            path,
            IdxErrorKind::Truncated {
                expected: need,
                found: bytes.len(),
            },
        ));
    }
    let magic = BigEndian::read_u32(&bytes[..4]);
    if magic != expected_magic {
        return Err(idx_err(
            path,
            IdxErrorKind::BadMagic {
                found: magic,
                expected: expected_magic,
            },
        ));
    }
    Ok((0..dims)
        .map(|i| BigEndian::read_u32(&bytes[4 + 4 * i..8 + 4 * i]) as usize)
        .collect())
}

pub fn parse_images(path: &Path, bytes: &[u8]) -> Result<IdxImages> {
    let dims = header(path, bytes, IMAGES_MAGIC, 3)?;
    let (count, rows, cols) = (dims[0], dims[1], dims[2]);
    let body = &bytes[16..];
    let expected = count * rows * cols;
    if body.len() < expected {
        return Err(idx_err(
            path,
            IdxErrorKind::Truncated {
                expected: 16 + expected,
                found: bytes.len(),
            },
        ));
    }
    Ok(IdxImages {
        count,
        rows,
        cols,
        pixels: body[..expected].to_vec(),
    })
}

pub fn parse_labels(path: &Path, bytes: &[u8]) -> Result<Vec<u8>> {
    let count = header(path, bytes, LABELS_MAGIC, 1)?[0];
    let body = &bytes[8..];
    if body.len() < count {
        return Err(idx_err(
            path,
            IdxErrorKind::Truncated {
                expected: 8 + count,
                found: bytes.len(),
            },
        ));
    }
    Ok(body[..count].to_vec())
}

pub fn read_images(path: &Path) -> Result<IdxImages> {
    parse_images(path, &fs::read(path)?)
}

pub fn read_labels(path: &Path) -> Result<Vec<u8>> {
    parse_labels(path, &fs::read(path)?)
}

pub fn encode_images(images: &IdxImages) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + images.pixels.len());
    out.write_u32::<BigEndian>(IMAGES_MAGIC).unwrap();
    for d in [images.count, images.rows, images.cols] {
        out.write_u32::<BigEndian>(d as u32).unwrap();
    }
    out.extend_from_slice(&images.pixels);
    out
}

pub fn encode_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.write_u32::<BigEndian>(LABELS_MAGIC).unwrap();
    out.write_u32::<BigEndian>(labels.len() as u32).unwrap();
    out.extend_from_slice(labels);
    out
}

pub fn write_images(path: &Path, images: &IdxImages) -> Result<()> {
    fs::File::create(path)?.write_all(&encode_images(images))?;
    Ok(())
}

pub fn write_labels(path: &Path, labels: &[u8]) -> Result<()> {
    fs::File::create(path)?.write_all(&encode_labels(labels))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn labels_with_image_magic_is_rejected() {
        let mut bytes = encode_labels(&[1, 2]);
        bytes[3] = 0x03;
        let err = parse_labels(Path::new("l"), &bytes).unwrap_err();
        assert!(matches!(
            err,
            Error::Idx {
                kind: IdxErrorKind::BadMagic { found: 0x803, .. },
                ..
            }
        ));
    }

    #[test]
    fn truncated_body() {
        let imgs = IdxImages {
            count: 2,
            rows: 2,
            cols: 2,
            pixels: vec![0; 8],
        };
        let bytes = encode_images(&imgs);
        let err = parse_images(Path::new("i"), &bytes[..bytes.len() - 1]).unwrap_err();
        assert!(matches!(
            err,
            Error::Idx {
                kind: IdxErrorKind::Truncated { .. },
                ..
            }
        ));
        let err = parse_images(Path::new("i"), &bytes[..6]).unwrap_err();
        assert!(matches!(
            err,
            Error::Idx {
                kind: IdxErrorKind::Truncated { .. },
                ..
            }
        ));
    }

    #[test]
    fn header_is_big_endian() {
        let bytes = encode_labels(&[7; 258]);
        assert_eq!(&bytes[..8], &[0, 0, 8, 1, 0, 0, 1, 2]);
        assert_eq!(parse_labels(Path::new("l"), &bytes).unwrap().len(), 258);
    }
}
