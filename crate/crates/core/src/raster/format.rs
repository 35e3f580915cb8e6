//! The R4B container: a 5-byte magic, a little-endian u32 JSON header
//! length, the UTF-8 JSON header, then band-sequential row-major samples
//! (R, G, B, NIR) with u16 values stored little-endian. Writes are
//! byte-deterministic, and read(write(r)) is bit-identical to r.

use std::fs;
use std::io::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Dtype, GeoTransform, Raster4B, RasterError, BANDS};

/// File magic: format name plus a newline so accidental text prints stay tidy.
pub const R4B_MAGIC: &[u8; 5] = b"R4B1\n";

/// JSON header. Field order here fixes the serialized key order, which is
/// what makes writes byte-deterministic.
#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    width: u64,
    height: u64,
    bands: u8,
    dtype: String,
    origin_x: f64,
    origin_y: f64,
    pixel_size_x: f64,
    pixel_size_y: f64,
    crs: String,
    nodata: Option<u16>,
}

/// Serializes `raster` to `path` in R4B format. Identical rasters always
/// produce byte-identical files.
pub fn write_r4b(raster: &Raster4B, path: &Path) -> Result<(), RasterError> {
    let header = Header {
        width: raster.width() as u64,
        height: raster.height() as u64,
        bands: BANDS as u8,
        dtype: raster.dtype().name().to_string(),
        origin_x: raster.geo.origin_x,
        origin_y: raster.geo.origin_y,
        pixel_size_x: raster.geo.pixel_size_x,
        pixel_size_y: raster.geo.pixel_size_y,
        crs: raster.crs.clone(),
        nodata: raster.nodata,
    };
    let header_bytes = serde_json::to_vec(&header).map_err(|e| RasterError::BadHeader {
        detail: format!("header serialization failed: {e}"),
    })?;
    let mut out = Vec::with_capacity(
        R4B_MAGIC.len()
            + 4
            + header_bytes.len()
            + raster.data().len() * raster.dtype().bytes_per_sample(),
    );
    out.extend_from_slice(R4B_MAGIC);
    out.extend_from_slice(&(header_bytes.len() as u32).to_le_bytes());
    out.extend_from_slice(&header_bytes);
    match raster.dtype() {
        Dtype::U8 => out.extend(raster.data().iter().map(|&v| v as u8)),
        Dtype::U16le => {
            for &v in raster.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    let mut file = fs::File::create(path)?;
    file.write_all(&out)?;
    Ok(())
}

/// Reads an R4B file back into a raster. Fails with [`RasterError::BadMagic`]
/// when the file does not start with [`R4B_MAGIC`], and with
/// [`RasterError::HeaderMismatch`] when the payload length disagrees with the
/// declared dimensions (including trailing bytes).
pub fn read_r4b(path: &Path) -> Result<Raster4B, RasterError> {
    let bytes = fs::read(path)?;
    if bytes.len() < R4B_MAGIC.len() || &bytes[..R4B_MAGIC.len()] != R4B_MAGIC {
        return Err(RasterError::BadMagic { expected: "R4B1\\n" });
    }
    let rest = &bytes[R4B_MAGIC.len()..];
    if rest.len() < 4 {
        return Err(RasterError::BadHeader {
            detail: "file truncated before header length".to_string(),
        });
    }
    let header_len = u32::from_le_bytes([rest[0], rest[1], rest[2], rest[3]]) as usize;
    let rest = &rest[4..];
    if rest.len() < header_len {
        return Err(RasterError::BadHeader {
            detail: format!(
                "declared header length {header_len} exceeds remaining {} bytes",
                rest.len()
            ),
        });
    }
    let header: Header =
        serde_json::from_slice(&rest[..header_len]).map_err(|e| RasterError::BadHeader {
            detail: format!("header is not the expected JSON object: {e}"),
        })?;
    if header.bands != BANDS as u8 {
        return Err(RasterError::BadHeader {
            detail: format!("bands must be 4, got {}", header.bands),
        });
    }
    let dtype = Dtype::from_name(&header.dtype).ok_or(RasterError::UnsupportedDtype {
        dtype: header.dtype.clone(),
    })?;
    let width = header.width as usize;
    let height = header.height as usize;
    let n_samples = width
        .checked_mul(height)
        .and_then(|n| n.checked_mul(BANDS))
        .ok_or_else(|| RasterError::BadHeader {
            detail: format!("dimensions {width}x{height} overflow"),
        })?;
    let payload = &rest[header_len..];
    let expected_bytes = n_samples * dtype.bytes_per_sample();
    if payload.len() != expected_bytes {
        return Err(RasterError::HeaderMismatch {
            detail: format!(
                "header declares {width}x{height}x4 {} = {expected_bytes} payload bytes, found {}",
                dtype.name(),
                payload.len()
            ),
        });
    }
    let data: Vec<u16> = match dtype {
        Dtype::U8 => payload.iter().map(|&b| b as u16).collect(),
        Dtype::U16le => payload
            .chunks_exact(2)
            .map(|p| u16::from_le_bytes([p[0], p[1]]))
            .collect(),
    };
    Raster4B::new(
        width,
        height,
        dtype,
        data,
        GeoTransform {
            origin_x: header.origin_x,
            origin_y: header.origin_y,
            pixel_size_x: header.pixel_size_x,
            pixel_size_y: header.pixel_size_y,
        },
        header.nodata,
        header.crs,
    )
    .map_err(|e| match e {
        RasterError::InvalidRaster { detail } => RasterError::BadHeader { detail },
        other => other,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn geo() -> GeoTransform {
        GeoTransform {
            origin_x: 500_000.0,
            origin_y: 4_200_000.0,
            pixel_size_x: 0.6,
            pixel_size_y: 0.6,
        }
    }

    fn random_raster(seed: u64, w: usize, h: usize, dtype: Dtype) -> Raster4B {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let max = dtype.max_value();
        let data: Vec<u16> = (0..w * h * BANDS).map(|_| rng.random_range(0..=max)).collect();
        Raster4B::new(w, h, dtype, data, geo(), Some(0), "EPSG:26911".to_string()).unwrap()
    }

    #[test]
    fn round_trip_is_bit_identical_for_both_dtypes() {
        let dir = tempfile::tempdir().unwrap();
        for (seed, dtype) in [(7, Dtype::U8), (8, Dtype::U16le)] {
            let r = random_raster(seed, 13, 9, dtype);
            let path = dir.path().join(format!("{}.r4b", dtype.name()));
            write_r4b(&r, &path).unwrap();
            let back = read_r4b(&path).unwrap();
            assert_eq!(back, r);
            // Re-writing the read raster reproduces the file byte for byte.
            let path2 = dir.path().join("again.r4b");
            write_r4b(&back, &path2).unwrap();
            assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&path2).unwrap());
        }
    }

    #[test]
    fn u16_samples_are_little_endian() {
        let dir = tempfile::tempdir().unwrap();
        let r = Raster4B::new(
            1,
            1,
            Dtype::U16le,
            vec![0x0102, 0, 0, 0],
            geo(),
            None,
            String::new(),
        )
        .unwrap();
        let path = dir.path().join("le.r4b");
        write_r4b(&r, &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        let payload = &bytes[bytes.len() - 8..];
        assert_eq!(&payload[..2], &[0x02, 0x01]);
    }

    #[test]
    fn one_by_one_u8_file_length_is_magic_len_header_payload() {
        let dir = tempfile::tempdir().unwrap();
        let r = Raster4B::new(1, 1, Dtype::U8, vec![1, 2, 3, 4], geo(), None, "x".to_string())
            .unwrap();
        let path = dir.path().join("tiny.r4b");
        write_r4b(&r, &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        let header_len =
            u32::from_le_bytes([bytes[5], bytes[6], bytes[7], bytes[8]]) as usize;
        assert_eq!(bytes.len(), 5 + 4 + header_len + 4);
    }

    #[test]
    fn wrong_magic_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.r4b");
        std::fs::write(&path, b"R4B0\n rest doesn't matter").unwrap();
        assert!(matches!(read_r4b(&path), Err(RasterError::BadMagic { .. })));
        // A file shorter than the magic is also not an R4B file.
        std::fs::write(&path, b"R4").unwrap();
        assert!(matches!(read_r4b(&path), Err(RasterError::BadMagic { .. })));
    }

    #[test]
    fn payload_length_mismatch_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let r = random_raster(9, 10, 10, Dtype::U8);
        let path = dir.path().join("short.r4b");
        write_r4b(&r, &path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        // Chop one payload byte: 400 declared, 399 present.
        bytes.pop();
        std::fs::write(&path, &bytes).unwrap();
        match read_r4b(&path) {
            Err(RasterError::HeaderMismatch { detail }) => {
                assert!(detail.contains("400"), "detail: {detail}");
                assert!(detail.contains("399"), "detail: {detail}");
            }
            other => panic!("expected HeaderMismatch, got {other:?}"),
        }
        // Trailing garbage after the payload is a mismatch too.
        let mut bytes = std::fs::read(&path).unwrap();
        bytes.extend_from_slice(&[0, 0]);
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(read_r4b(&path), Err(RasterError::HeaderMismatch { .. })));
    }

    #[test]
    fn unknown_dtype_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f32.r4b");
        let header = concat!(
            "{\"width\":1,\"height\":1,\"bands\":4,\"dtype\":\"f32\",",
            "\"origin_x\":0.0,\"origin_y\":0.0,\"pixel_size_x\":1.0,",
            "\"pixel_size_y\":1.0,\"crs\":\"\",\"nodata\":null}"
        );
        let mut out = R4B_MAGIC.to_vec();
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(header.as_bytes());
        std::fs::write(&path, &out).unwrap();
        assert!(matches!(
            read_r4b(&path),
            Err(RasterError::UnsupportedDtype { dtype }) if dtype == "f32"
        ));
    }

    #[test]
    fn u8_dtype_with_oversized_nodata_is_rejected_at_construction() {
        let err = Raster4B::new(1, 1, Dtype::U8, vec![0; 4], geo(), Some(300), String::new())
            .unwrap_err();
        assert!(matches!(err, RasterError::InvalidRaster { .. }));
    }
}
