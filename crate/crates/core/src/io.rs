//! On-disk formats: Gaussian frame files (GSFR), raw float images (GSIM) and
//! 8-bit PNG.

use std::fs;
use std::path::Path;

use crate::codec::container::{read_f32s, Reader, Writer};
use crate::codec::DecodeError;
use crate::error::{Error, Result};
use crate::geom::{basis_count, Quaternion, SHCoefficients, Vec3};
use crate::kernel::{FrameState, GaussianKernel};
use crate::render::Image;
use crate::scalar::Real;

pub const FRAME_MAGIC: [u8; 4] = *b"GSFR";
pub const FRAME_VERSION: u32 = 1;
pub const IMAGE_MAGIC: [u8; 4] = *b"GSIM";
pub const IMAGE_VERSION: u32 = 1;
const FRAME_HEADER: usize = 13;
const IMAGE_HEADER: usize = 16;

fn header(r: &mut Reader<'_>, magic: [u8; 4], version: u32) -> std::result::Result<(), DecodeError> {
    let found: [u8; 4] = r.take(4)?.try_into().unwrap();
    if found != magic {
        return Err(DecodeError::BadMagic { found });
    }
    let v = r.u32()?;
    if v != version {
        return Err(DecodeError::UnsupportedVersion {
            found: v,
            supported: version,
        });
    }
    Ok(())
}

fn exact_len(bytes: &[u8], want: usize) -> std::result::Result<(), DecodeError> {
    match bytes.len().cmp(&want) {
        std::cmp::Ordering::Less => Err(DecodeError::Truncated {
            offset: bytes.len(),
            needed: want - bytes.len(),
            available: 0,
        }),
        std::cmp::Ordering::Greater => Err(DecodeError::TrailingBytes {
            count: bytes.len() - want,
        }),
        std::cmp::Ordering::Equal => Ok(()),
    }
}

/// Byte length of a frame file for `n` kernels at SH degree `degree`.
pub fn frame_file_len(n: usize, degree: u8) -> usize {
    FRAME_HEADER + 4 * n * (11 + 3 * basis_count(degree))
}

/// Attribute-major layout: all positions, then rotations (w,x,y,z), log
/// scales, opacity logits and SH coefficients.
pub fn encode_frame_file<T: Real>(frame: &FrameState<T>) -> Result<Vec<u8>> {
    let n = u32::try_from(frame.len()).map_err(|_| Error::InvalidParameter("frame too large".into()))?;
    let degree = frame.sh_degree();
    if let Some(i) = frame.kernels.iter().position(|k| k.sh.degree() != degree) {
        return Err(Error::InvalidParameter(format!("kernel {i} has a different SH degree")));
    }
    let mut w = Writer::default();
    w.bytes(&FRAME_MAGIC);
    w.u32(FRAME_VERSION);
    w.u32(n);
    w.u8(degree);
    let ks = &frame.kernels;
    let mut put = |v: T| w.f32(v.to_f32_lossy());
    ks.iter().flat_map(|k| k.position.to_array()).for_each(&mut put);
    ks.iter().flat_map(|k| k.rotation.to_array()).for_each(&mut put);
    ks.iter().flat_map(|k| k.log_scale.to_array()).for_each(&mut put);
    ks.iter().map(|k| k.opacity_logit).for_each(&mut put);
    ks.iter().flat_map(|k| k.sh.flat().collect::<Vec<_>>()).for_each(&mut put);
    debug_assert_eq!(w.len(), frame_file_len(ks.len(), degree));
    Ok(w.buf)
}

pub fn decode_frame_file<T: Real>(bytes: &[u8], frame: usize) -> Result<FrameState<T>> {
    let mut r = Reader::new(bytes);
    header(&mut r, FRAME_MAGIC, FRAME_VERSION)?;
    let n = r.u32()? as usize;
    let degree = r.u8()?;
    if degree > 3 {
        return Err(DecodeError::InvalidHeader {
            offset: 12,
            reason: format!("SH degree {degree} exceeds 3"),
        }
        .into());
    }
    exact_len(bytes, frame_file_len(n, degree))?;
    let v: Vec<T> = read_f32s(&bytes[FRAME_HEADER..]).into_iter().map(T::from_f32_exact).collect();
    let nb3 = 3 * basis_count(degree);
    let (p, rest) = v.split_at(3 * n);
    let (q, rest) = rest.split_at(4 * n);
    let (s, rest) = rest.split_at(3 * n);
    let (o, c) = rest.split_at(n);
    let kernels: Result<Vec<_>> = (0..n)
        .map(|i| {
            Ok(GaussianKernel {
                position: Vec3::new(p[3 * i], p[3 * i + 1], p[3 * i + 2]),
                rotation: Quaternion::from_array([q[4 * i], q[4 * i + 1], q[4 * i + 2], q[4 * i + 3]]),
                log_scale: Vec3::new(s[3 * i], s[3 * i + 1], s[3 * i + 2]),
                opacity_logit: o[i],
                sh: SHCoefficients::from_flat(degree, &c[nb3 * i..nb3 * (i + 1)])?,
            })
        })
        .collect();
    Ok(FrameState::new(frame, kernels?))
}

/// Raw little-endian image: magic, version, width, height, then RGB `f32`.
pub fn encode_raw_image<T: Real>(img: &Image<T>) -> Result<Vec<u8>> {
    let (w32, h32) = match (u32::try_from(img.width), u32::try_from(img.height)) {
        (Ok(w), Ok(h)) => (w, h),
        _ => return Err(Error::InvalidParameter("image too large".into())),
    };
    let mut w = Writer::default();
    w.bytes(&IMAGE_MAGIC);
    w.u32(IMAGE_VERSION);
    w.u32(w32);
    w.u32(h32);
    img.data.iter().for_each(|v| w.f32(v.to_f32_lossy()));
    Ok(w.buf)
}

pub fn decode_raw_image<T: Real>(bytes: &[u8]) -> Result<Image<T>> {
    let mut r = Reader::new(bytes);
    header(&mut r, IMAGE_MAGIC, IMAGE_VERSION)?;
    let width = r.u32()? as usize;
    let height = r.u32()? as usize;
    exact_len(bytes, IMAGE_HEADER + 12 * width * height)?;
    Ok(Image {
        width,
        height,
        data: read_f32s(&bytes[IMAGE_HEADER..]).into_iter().map(T::from_f32_exact).collect(),
    })
}

/// 8-bit sRGB-agnostic PNG: values clamped to [0, 1] and rounded.
pub fn encode_png<T: Real>(img: &Image<T>) -> Result<Vec<u8>> {
    let pixels: Vec<u8> = img
        .data
        .iter()
        .map(|v| (v.to_f64_lossy().clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect();
    let buf = image::RgbImage::from_raw(img.width as u32, img.height as u32, pixels)
        .ok_or_else(|| Error::Image("pixel buffer does not match size".into()))?;
    let mut out = std::io::Cursor::new(Vec::new());
    buf.write_to(&mut out, image::ImageFormat::Png)
        .map_err(|e| Error::Image(e.to_string()))?;
    Ok(out.into_inner())
}

pub fn decode_png<T: Real>(bytes: &[u8]) -> Result<Image<T>> {
    let img = image::load_from_memory_with_format(bytes, image::ImageFormat::Png)
        .map_err(|e| Error::Image(e.to_string()))?
        .to_rgb8();
    Ok(Image {
        width: img.width() as usize,
        height: img.height() as usize,
        data: img.as_raw().iter().map(|&b| T::c(b as f64 / 255.0)).collect(),
    })
}

pub fn read_bytes(path: impl AsRef<Path>) -> Result<Vec<u8>> {
    fs::read(path.as_ref()).map_err(|e| Error::io(path, e))
}

/// Writes `bytes`, creating parent directories.
pub fn write_bytes(path: impl AsRef<Path>, bytes: &[u8]) -> Result<()> {
    let path = path.as_ref();
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn write_frame(path: impl AsRef<Path>, frame: &FrameState<impl Real>) -> Result<()> {
    write_bytes(path, &encode_frame_file(frame)?)
}

pub fn read_frame<T: Real>(path: impl AsRef<Path>, frame: usize) -> Result<FrameState<T>> {
    decode_frame_file(&read_bytes(path)?, frame)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::energy::tests::random_frame;

    #[test]
    fn frame_file_roundtrips_f32_values() {
        let f = random_frame(37, 5).rounded_f32();
        let bytes = encode_frame_file(&f).unwrap();
        assert_eq!(bytes.len(), frame_file_len(37, 3));
        assert_eq!(&bytes[..4], b"GSFR");
        let back: FrameState<f64> = decode_frame_file(&bytes, 0).unwrap();
        assert_eq!(back, f);
    }

    #[test]
    fn frame_file_length_is_checked() {
        let bytes = encode_frame_file(&random_frame(5, 1)).unwrap();
        let short = decode_frame_file::<f64>(&bytes[..bytes.len() - 1], 0);
        assert!(matches!(short, Err(Error::Decode(DecodeError::Truncated { .. }))));
        let mut long = bytes.clone();
        long.push(0);
        assert!(matches!(
            decode_frame_file::<f64>(&long, 0),
            Err(Error::Decode(DecodeError::TrailingBytes { count: 1 }))
        ));
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(decode_frame_file::<f64>(&bad, 0), Err(Error::Decode(DecodeError::BadMagic { .. }))));
        let mut version = bytes;
        version[4] = 9;
        assert!(matches!(
            decode_frame_file::<f64>(&version, 0),
            Err(Error::Decode(DecodeError::UnsupportedVersion { found: 9, .. }))
        ));
    }

    #[test]
    fn empty_frame_is_a_header() {
        let f = FrameState::<f32>::new(0, vec![]);
        assert_eq!(encode_frame_file(&f).unwrap().len(), FRAME_HEADER);
    }

    #[test]
    fn raw_image_roundtrip() {
        let mut img = Image::<f32>::new(3, 2);
        for (i, v) in img.data.iter_mut().enumerate() {
            *v = i as f32 * 0.1 - 0.2;
        }
        let back: Image<f32> = decode_raw_image(&encode_raw_image(&img).unwrap()).unwrap();
        assert_eq!(back, img);
        assert!(decode_raw_image::<f32>(&encode_raw_image(&img).unwrap()[..20]).is_err());
    }

    #[test]
    fn png_roundtrip_within_quantisation() {
        let mut img = Image::<f64>::new(5, 4);
        for (i, v) in img.data.iter_mut().enumerate() {
            *v = (i as f64 * 0.037) % 1.2;
        }
        let back: Image<f64> = decode_png(&encode_png(&img).unwrap()).unwrap();
        for (a, b) in img.data.iter().zip(&back.data) {
            assert!((a.clamp(0.0, 1.0) - b).abs() <= 0.5 / 255.0 + 1e-12);
        }
    }
}
