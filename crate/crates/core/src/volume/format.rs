//! MVV1 volume files.
//!
//! Layout: `b"MVV1"`, a little-endian `u32` header length, a UTF-8 JSON
//! header `{"dims":[nx,ny,nz],"spacing_mm":[sx,sy,sz],"dtype":"i16le"}`,
//! then `nx*ny*nz` little-endian `i16` voxels, x-fastest.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{validate_geometry, Volume};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"MVV1";
const DTYPE: &str = "i16le";

#[derive(Serialize, Deserialize)]
struct Header {
    dims: [usize; 3],
    spacing_mm: [f64; 3],
    dtype: String,
}

pub fn volume_to_bytes(volume: &Volume) -> Vec<u8> {
    let header = Header {
        dims: volume.dims(),
        spacing_mm: volume.spacing_mm(),
        dtype: DTYPE.to_string(),
    };
    let json = serde_json::to_vec(&header).expect("header serializes");
    let mut out = Vec::with_capacity(8 + json.len() + 2 * volume.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    for v in volume.voxels() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn volume_from_bytes(bytes: &[u8]) -> Result<Volume> {
    if bytes.len() < 8 || &bytes[..4] != MAGIC {
        return Err(Error::BadMagic {
            expected: "MVV1",
            found: bytes[..bytes.len().min(4)].to_vec(),
        });
    }
    let header_len = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let header_end = 8usize
        .checked_add(header_len)
        .filter(|&end| end <= bytes.len())
        .ok_or_else(|| Error::Header(format!("header length {header_len} exceeds file")))?;
    let header: Header = serde_json::from_slice(&bytes[8..header_end])
        .map_err(|e| Error::Header(e.to_string()))?;
    if header.dtype != DTYPE {
        return Err(Error::Header(format!("unsupported dtype {:?}", header.dtype)));
    }
    validate_geometry(header.dims, header.spacing_mm)?;

    let count = header.dims.iter().product::<usize>();
    let payload = &bytes[header_end..];
    if payload.len() != 2 * count {
        return Err(Error::LengthMismatch {
            expected: 2 * count,
            found: payload.len(),
        });
    }
    let voxels = payload
        .chunks_exact(2)
        .map(|c| i16::from_le_bytes([c[0], c[1]]))
        .collect();
    Volume::new(header.dims, header.spacing_mm, voxels)
}

pub fn read_volume(path: impl AsRef<Path>) -> Result<Volume> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    volume_from_bytes(&bytes)
}

pub fn write_volume(volume: &Volume, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, volume_to_bytes(volume)).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::AIR_HU;
    use proptest::prelude::*;

    fn header_len(v: &Volume) -> usize {
        let json = serde_json::to_vec(&Header {
            dims: v.dims(),
            spacing_mm: v.spacing_mm(),
            dtype: DTYPE.into(),
        })
        .unwrap();
        8 + json.len()
    }

    #[test]
    fn zero_volume_round_trips() {
        let v = Volume::filled([2, 2, 2], [1.0, 1.0, 1.0], 0).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("zero.mvv");
        write_volume(&v, &path).unwrap();
        assert_eq!(read_volume(&path).unwrap(), v);
    }

    #[test]
    fn header_is_the_documented_json() {
        let v = Volume::filled([3, 2, 1], [0.6, 0.6, 4.2], 0).unwrap();
        let bytes = volume_to_bytes(&v);
        let len = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
        assert_eq!(
            std::str::from_utf8(&bytes[8..8 + len]).unwrap(),
            r#"{"dims":[3,2,1],"spacing_mm":[0.6,0.6,4.2],"dtype":"i16le"}"#
        );
    }

    #[test]
    fn short_payload_is_a_length_mismatch() {
        let v = Volume::filled([3, 3, 3], [1.0; 3], 5).unwrap();
        let mut bytes = volume_to_bytes(&v);
        bytes.truncate(bytes.len() - 2);
        assert!(matches!(
            volume_from_bytes(&bytes),
            Err(Error::LengthMismatch { expected: 54, found: 52 })
        ));
    }

    #[test]
    fn rejects_bad_magic_and_geometry() {
        let v = Volume::filled([1, 1, 1], [1.0; 3], 0).unwrap();
        let mut bytes = volume_to_bytes(&v);
        bytes[0] = b'X';
        assert!(matches!(volume_from_bytes(&bytes), Err(Error::BadMagic { .. })));
        assert!(matches!(volume_from_bytes(b"MV"), Err(Error::BadMagic { .. })));

        let json = br#"{"dims":[0,1,1],"spacing_mm":[1,1,1],"dtype":"i16le"}"#;
        let mut bad = MAGIC.to_vec();
        bad.extend_from_slice(&(json.len() as u32).to_le_bytes());
        bad.extend_from_slice(json);
        assert!(matches!(volume_from_bytes(&bad), Err(Error::Geometry(_))));

        let json = br#"{"dims":[1,1,1],"spacing_mm":[1,-1,1],"dtype":"i16le"}"#;
        let mut bad = MAGIC.to_vec();
        bad.extend_from_slice(&(json.len() as u32).to_le_bytes());
        bad.extend_from_slice(json);
        bad.extend_from_slice(&[0, 0]);
        assert!(matches!(volume_from_bytes(&bad), Err(Error::Geometry(_))));
    }

    #[test]
    fn full_pipeline_grid_file_size() {
        let v = Volume::filled([280, 280, 30], [0.6, 0.6, 4.2], AIR_HU).unwrap();
        let bytes = volume_to_bytes(&v);
        assert_eq!(bytes.len(), header_len(&v) + 2 * 280 * 280 * 30);
        assert_eq!(2 * 280 * 280 * 30, 4_704_000);
    }

    fn arb_volume() -> impl Strategy<Value = Volume> {
        (1usize..5, 1usize..5, 1usize..4, 0.1f64..10.0, 0.1f64..10.0, 0.1f64..10.0)
            .prop_flat_map(|(nx, ny, nz, sx, sy, sz)| {
                proptest::collection::vec(-1024i16..=3071, nx * ny * nz).prop_map(move |vox| {
                    Volume::new([nx, ny, nz], [sx, sy, sz], vox).unwrap()
                })
            })
    }

    proptest! {
        #[test]
        fn write_read_is_byte_identical(v in arb_volume()) {
            let bytes = volume_to_bytes(&v);
            let back = volume_from_bytes(&bytes).unwrap();
            prop_assert_eq!(&back, &v);
            prop_assert_eq!(volume_to_bytes(&back), bytes);
        }
    }
}
