//! Voxel volumes in Hounsfield units and the preprocessing chain applied
//! to every scan: resampling to a common voxel size, axial rotation,
//! intensity-based skull stripping and center crop/pad.

mod crop;
mod format;
mod prep;
mod resample;
mod rotate;
mod skull;

pub use crop::crop_or_pad;
pub use format::{read_volume, volume_from_bytes, volume_to_bytes, write_volume, MAGIC};
pub use prep::{preprocess, PrepConfig};
pub use resample::resample;
pub use rotate::{augment_rotations, rotate_axial, ROTATION_COUNT, ROTATION_STEP_DEGREES};
pub use skull::{skull_strip, BONE_MIN_HU, BRAIN_MAX_HU, BRAIN_MIN_HU};

use crate::error::{Error, Result};

pub const HU_MIN: i16 = -1024;
pub const HU_MAX: i16 = 3071;
/// Fill value for everything a geometric operation samples outside the grid.
pub const AIR_HU: i16 = -1000;

/// Voxel spacing the preprocessing chain resamples to, in millimeters.
pub const PIPELINE_SPACING_MM: [f64; 3] = [0.6, 0.6, 4.2];
/// Grid every preprocessed volume is cropped or padded to.
pub const PIPELINE_DIMS: [usize; 3] = [280, 280, 30];

/// A 3D grid of signed 16-bit HU values stored x-fastest, then y, then z.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume {
    dims: [usize; 3],
    spacing_mm: [f64; 3],
    voxels: Vec<i16>,
}

impl Volume {
    pub fn new(dims: [usize; 3], spacing_mm: [f64; 3], voxels: Vec<i16>) -> Result<Self> {
        validate_geometry(dims, spacing_mm)?;
        let expected = dims[0] * dims[1] * dims[2];
        if voxels.len() != expected {
            return Err(Error::LengthMismatch {
                expected,
                found: voxels.len(),
            });
        }
        if let Some(&v) = voxels.iter().find(|&&v| !(HU_MIN..=HU_MAX).contains(&v)) {
            return Err(Error::HuOutOfRange(v as i32));
        }
        Ok(Volume {
            dims,
            spacing_mm,
            voxels,
        })
    }

    pub fn filled(dims: [usize; 3], spacing_mm: [f64; 3], value: i16) -> Result<Self> {
        validate_geometry(dims, spacing_mm)?;
        Self::new(dims, spacing_mm, vec![value; dims[0] * dims[1] * dims[2]])
    }

    /// Builds a volume by evaluating `f(x, y, z)` at every voxel index.
    pub fn from_fn(
        dims: [usize; 3],
        spacing_mm: [f64; 3],
        mut f: impl FnMut(usize, usize, usize) -> i16,
    ) -> Result<Self> {
        validate_geometry(dims, spacing_mm)?;
        let mut voxels = Vec::with_capacity(dims[0] * dims[1] * dims[2]);
        for z in 0..dims[2] {
            for y in 0..dims[1] {
                for x in 0..dims[0] {
                    voxels.push(f(x, y, z));
                }
            }
        }
        Self::new(dims, spacing_mm, voxels)
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn spacing_mm(&self) -> [f64; 3] {
        self.spacing_mm
    }

    pub fn voxels(&self) -> &[i16] {
        &self.voxels
    }

    pub fn len(&self) -> usize {
        self.voxels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.voxels.is_empty()
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        (z * self.dims[1] + y) * self.dims[0] + x
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, z: usize) -> i16 {
        self.voxels[self.index(x, y, z)]
    }

    /// Returns a copy of one axial slice, x-fastest.
    pub fn axial_slice(&self, z: usize) -> &[i16] {
        let plane = self.dims[0] * self.dims[1];
        &self.voxels[z * plane..(z + 1) * plane]
    }

    pub(crate) fn from_parts_unchecked(
        dims: [usize; 3],
        spacing_mm: [f64; 3],
        voxels: Vec<i16>,
    ) -> Self {
        debug_assert_eq!(voxels.len(), dims[0] * dims[1] * dims[2]);
        Volume {
            dims,
            spacing_mm,
            voxels,
        }
    }
}

pub(crate) fn validate_geometry(dims: [usize; 3], spacing_mm: [f64; 3]) -> Result<()> {
    if dims.iter().any(|&d| d == 0) {
        return Err(Error::Geometry(format!("dims must be positive, got {dims:?}")));
    }
    if spacing_mm.iter().any(|&s| !(s.is_finite() && s > 0.0)) {
        return Err(Error::Geometry(format!(
            "spacing must be positive, got {spacing_mm:?}"
        )));
    }
    Ok(())
}

/// Rounds an interpolated intensity to the nearest HU and clamps it into
/// the representable range.
#[inline]
pub(crate) fn to_hu(value: f64) -> i16 {
    value.round().clamp(HU_MIN as f64, HU_MAX as f64) as i16
}

/// Binary brain mask, one flag per voxel of the volume it was derived from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BrainMask {
    dims: [usize; 3],
    bits: Vec<bool>,
}

impl BrainMask {
    pub fn new(dims: [usize; 3], bits: Vec<bool>) -> Result<Self> {
        let expected = dims[0] * dims[1] * dims[2];
        if bits.len() != expected {
            return Err(Error::LengthMismatch {
                expected,
                found: bits.len(),
            });
        }
        Ok(BrainMask { dims, bits })
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        self.count() == 0
    }

    /// Sørensen–Dice overlap with another mask of the same geometry.
    pub fn dice(&self, other: &BrainMask) -> Result<f64> {
        if self.dims != other.dims {
            return Err(Error::ShapeMismatch(format!(
                "mask dims {:?} vs {:?}",
                self.dims, other.dims
            )));
        }
        let both = self
            .bits
            .iter()
            .zip(&other.bits)
            .filter(|(a, b)| **a && **b)
            .count();
        let total = self.count() + other.count();
        Ok(if total == 0 {
            1.0
        } else {
            2.0 * both as f64 / total as f64
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_geometry_and_values() {
        assert!(matches!(
            Volume::new([2, 2, 2], [1.0; 3], vec![0; 7]),
            Err(Error::LengthMismatch { expected: 8, found: 7 })
        ));
        assert!(Volume::new([0, 2, 2], [1.0; 3], vec![]).is_err());
        assert!(Volume::new([1, 1, 1], [1.0, 0.0, 1.0], vec![0]).is_err());
        assert!(matches!(
            Volume::new([1, 1, 1], [1.0; 3], vec![-2000]),
            Err(Error::HuOutOfRange(-2000))
        ));
    }

    #[test]
    fn indexing_is_x_fastest() {
        let v = Volume::from_fn([3, 2, 2], [1.0; 3], |x, y, z| (x + 10 * y + 100 * z) as i16)
            .unwrap();
        assert_eq!(&v.voxels()[..4], &[0, 1, 2, 10]);
        assert_eq!(v.get(2, 1, 1), 112);
        assert_eq!(v.axial_slice(1)[0], 100);
    }

    #[test]
    fn dice_of_identical_masks_is_one() {
        let m = BrainMask::new([2, 1, 1], vec![true, false]).unwrap();
        assert_eq!(m.dice(&m).unwrap(), 1.0);
        let n = BrainMask::new([2, 1, 1], vec![true, true]).unwrap();
        assert!((m.dice(&n).unwrap() - 2.0 / 3.0).abs() < 1e-12);
    }
}
