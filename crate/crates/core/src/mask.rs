//! Scalar masks with their camera, PNG export and the lossless `BFMK` sidecar.
//!
//! `BFMK` layout (little-endian): magic `b"BFMK"`, `u32` width, `u32` height,
//! `u32` reserved (0), then `width * height` `f32` values, row-major.

use std::path::Path;

use crate::camera::Camera;
use crate::error::{Error, Result};

pub const BFMK_MAGIC: &[u8; 4] = b"BFMK";
pub const BFMK_HEADER_LEN: usize = 16;

#[derive(Clone, Debug, PartialEq)]
pub struct MaskImage {
    pub width: u32,
    pub height: u32,
    /// Row-major, each in `[0, 1]`.
    pub values: Vec<f64>,
    pub camera: Camera,
}

impl MaskImage {
    /// Builds a mask for `camera`, clamping values into `[0, 1]`.
    pub fn new(camera: Camera, values: Vec<f64>) -> Result<MaskImage> {
        let n = camera.width as usize * camera.height as usize;
        if values.len() != n {
            return Err(Error::Dimension(format!("mask has {} values, camera needs {n}", values.len())));
        }
        if values.iter().any(|v| v.is_nan()) {
            return Err(Error::Malformed("mask contains NaN".into()));
        }
        Ok(MaskImage {
            width: camera.width,
            height: camera.height,
            values: values.into_iter().map(|v| v.clamp(0.0, 1.0)).collect(),
            camera,
        })
    }

    pub fn zeros(camera: Camera) -> MaskImage {
        MaskImage {
            width: camera.width,
            height: camera.height,
            values: vec![0.0; camera.width as usize * camera.height as usize],
            camera,
        }
    }

    pub fn get(&self, x: u32, y: u32) -> f64 {
        self.values[y as usize * self.width as usize + x as usize]
    }

    pub fn same_dimensions(&self, other: &MaskImage) -> Result<()> {
        if self.width != other.width || self.height != other.height {
            return Err(Error::Dimension(format!(
                "{}x{} vs {}x{}",
                self.width, self.height, other.width, other.height
            )));
        }
        Ok(())
    }

    /// Intersection over union after thresholding both masks at 0.5.
    pub fn iou(&self, other: &MaskImage) -> Result<f64> {
        self.same_dimensions(other)?;
        let (mut inter, mut union) = (0usize, 0usize);
        for (a, b) in self.values.iter().zip(&other.values) {
            let (a, b) = (*a >= 0.5, *b >= 0.5);
            inter += (a && b) as usize;
            union += (a || b) as usize;
        }
        Ok(if union == 0 { 1.0 } else { inter as f64 / union as f64 })
    }

    pub fn to_gray8(&self) -> Vec<u8> {
        self.values.iter().map(|v| (v * 255.0).round() as u8).collect()
    }

    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<()> {
        image::save_buffer(
            path,
            &self.to_gray8(),
            self.width,
            self.height,
            image::ExtendedColorType::L8,
        )?;
        Ok(())
    }

    pub fn encode_bfmk(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(BFMK_HEADER_LEN + 4 * self.values.len());
        out.extend_from_slice(BFMK_MAGIC);
        out.extend_from_slice(&self.width.to_le_bytes());
        out.extend_from_slice(&self.height.to_le_bytes());
        out.extend_from_slice(&0u32.to_le_bytes());
        for v in &self.values {
            out.extend_from_slice(&(*v as f32).to_le_bytes());
        }
        out
    }

    pub fn decode_bfmk(bytes: &[u8], camera: Camera) -> Result<MaskImage> {
        let (w, h, values) = decode_bfmk_raw(bytes)?;
        if w != camera.width || h != camera.height {
            return Err(Error::Dimension(format!(
                "sidecar is {w}x{h}, camera is {}x{}",
                camera.width, camera.height
            )));
        }
        MaskImage::new(camera, values)
    }

    pub fn save_bfmk(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.encode_bfmk())?;
        Ok(())
    }

    pub fn load_bfmk(path: impl AsRef<Path>, camera: Camera) -> Result<MaskImage> {
        MaskImage::decode_bfmk(&std::fs::read(path)?, camera)
    }
}

/// Decodes a sidecar into `(width, height, values)`; values must be finite and are clamped to `[0, 1]`.
pub fn decode_bfmk_raw(bytes: &[u8]) -> Result<(u32, u32, Vec<f64>)> {
    if bytes.len() < BFMK_HEADER_LEN {
        return Err(Error::parse("byte 0", "sidecar shorter than its header"));
    }
    if &bytes[..4] != BFMK_MAGIC {
        return Err(Error::parse("byte 0", "bad magic, expected BFMK"));
    }
    let word = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
    let (w, h, reserved) = (word(4), word(8), word(12));
    if reserved != 0 {
        return Err(Error::parse("byte 12", "reserved header word must be zero"));
    }
    let n = (w as u64) * (h as u64);
    let expected = BFMK_HEADER_LEN as u64 + 4 * n;
    if bytes.len() as u64 != expected {
        return Err(Error::parse(
            format!("byte {}", bytes.len().min(expected as usize)),
            format!("sidecar length {} does not match {w}x{h} ({expected} bytes)", bytes.len()),
        ));
    }
    let mut values = Vec::with_capacity(n as usize);
    for (i, chunk) in bytes[BFMK_HEADER_LEN..].chunks_exact(4).enumerate() {
        let v = f32::from_le_bytes(chunk.try_into().unwrap());
        if !v.is_finite() {
            return Err(Error::parse(
                format!("byte {}", BFMK_HEADER_LEN + 4 * i),
                "non-finite mask value",
            ));
        }
        values.push((v as f64).clamp(0.0, 1.0));
    }
    Ok((w, h, values))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::transform::Vec3;

    fn cam(w: u32, h: u32) -> Camera {
        Camera::look_at(Vec3::new(0.0, 0.0, -3.0), Vec3::zeros(), Vec3::y(), 0.7, w, h).unwrap()
    }

    #[test]
    fn sidecar_roundtrip_and_layout() {
        let m = MaskImage::new(cam(3, 2), vec![0.0, 0.25, 0.5, 0.75, 1.0, 0.125]).unwrap();
        let bytes = m.encode_bfmk();
        assert_eq!(&bytes[..4], b"BFMK");
        assert_eq!(bytes.len(), 16 + 6 * 4);
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 3);
        let back = MaskImage::decode_bfmk(&bytes, m.camera).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn sidecar_rejects_truncation_and_bad_magic() {
        let m = MaskImage::zeros(cam(4, 4));
        let bytes = m.encode_bfmk();
        assert!(decode_bfmk_raw(&bytes[..bytes.len() - 1]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(decode_bfmk_raw(&bad).is_err());
        assert!(MaskImage::decode_bfmk(&bytes, cam(5, 4)).is_err());
    }

    #[test]
    fn values_clamped_and_png_written() {
        let m = MaskImage::new(cam(2, 1), vec![-0.5, 2.0]).unwrap();
        assert_eq!(m.values, vec![0.0, 1.0]);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.png");
        m.save_png(&p).unwrap();
        let img = image::open(&p).unwrap().to_luma8();
        assert_eq!(img.as_raw(), &vec![0u8, 255]);
    }

    #[test]
    fn iou_of_identical_masks() {
        let m = MaskImage::new(cam(2, 2), vec![1.0, 0.0, 0.7, 0.2]).unwrap();
        assert_eq!(m.iou(&m).unwrap(), 1.0);
    }
}
