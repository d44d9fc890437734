//! Intensity-based skull stripping.
//!
//! Recipe: threshold brain-range voxels, keep the largest 6-connected
//! component enclosed by the skull (not touching the in-plane border, with a
//! fallback to the largest component overall), then apply one radius-1
//! morphological closing.

use std::collections::VecDeque;

use super::{BrainMask, Volume, AIR_HU};
use crate::error::{Error, Result};

pub const BRAIN_MIN_HU: i16 = -20;
pub const BRAIN_MAX_HU: i16 = 100;
pub const BONE_MIN_HU: i16 = 300;

pub fn skull_strip(volume: &Volume) -> Result<(Volume, BrainMask)> {
    let dims = volume.dims();
    if !volume.voxels().iter().any(|v| (0..=BRAIN_MAX_HU).contains(v)) {
        return Err(Error::EmptyMask);
    }
    let candidate: Vec<bool> = volume
        .voxels()
        .iter()
        .map(|v| (BRAIN_MIN_HU..=BRAIN_MAX_HU).contains(v))
        .collect();

    let component = largest_enclosed_component(&candidate, dims).ok_or(Error::EmptyMask)?;
    let closed = erode(&dilate(&component, dims), dims);
    if !closed.iter().any(|&b| b) {
        return Err(Error::EmptyMask);
    }

    let voxels = volume
        .voxels()
        .iter()
        .zip(&closed)
        .map(|(&v, &keep)| if keep { v } else { AIR_HU })
        .collect();
    let stripped = Volume::from_parts_unchecked(dims, volume.spacing_mm(), voxels);
    Ok((stripped, BrainMask::new(dims, closed)?))
}

/// Calls `f` with the linear index of each in-bounds 6-neighbor, and
/// returns how many neighbors fell outside the grid.
#[inline]
fn for_each_neighbor(idx: usize, dims: [usize; 3], mut f: impl FnMut(usize)) -> usize {
    let [nx, ny, nz] = dims;
    let x = idx % nx;
    let y = (idx / nx) % ny;
    let z = idx / (nx * ny);
    let plane = nx * ny;
    let mut outside = 0;
    let mut visit = |ok: bool, j: usize| if ok { f(j) } else { outside += 1 };
    visit(x > 0, idx.wrapping_sub(1));
    visit(x + 1 < nx, idx + 1);
    visit(y > 0, idx.wrapping_sub(nx));
    visit(y + 1 < ny, idx + nx);
    visit(z > 0, idx.wrapping_sub(plane));
    visit(z + 1 < nz, idx + plane);
    outside
}

fn largest_enclosed_component(candidate: &[bool], dims: [usize; 3]) -> Option<Vec<bool>> {
    let [nx, ny, _] = dims;
    let mut label = vec![0u32; candidate.len()];
    // (label, size, touches in-plane border)
    let mut components: Vec<(u32, usize, bool)> = Vec::new();
    let mut queue = VecDeque::new();

    for seed in 0..candidate.len() {
        if !candidate[seed] || label[seed] != 0 {
            continue;
        }
        let id = components.len() as u32 + 1;
        label[seed] = id;
        queue.push_back(seed);
        let mut size = 0;
        let mut touches = false;
        while let Some(i) = queue.pop_front() {
            size += 1;
            let x = i % nx;
            let y = (i / nx) % ny;
            touches |= x == 0 || y == 0 || x + 1 == nx || y + 1 == ny;
            for_each_neighbor(i, dims, |j| {
                if candidate[j] && label[j] == 0 {
                    label[j] = id;
                    queue.push_back(j);
                }
            });
        }
        components.push((id, size, touches));
    }

    let pick = |enclosed_only: bool| {
        components
            .iter()
            .filter(|c| !enclosed_only || !c.2)
            .fold(None::<&(u32, usize, bool)>, |best, c| match best {
                Some(b) if b.1 >= c.1 => Some(b),
                _ => Some(c),
            })
    };
    let chosen = pick(true).or_else(|| pick(false))?.0;
    Some(label.iter().map(|&l| l == chosen).collect())
}

fn dilate(mask: &[bool], dims: [usize; 3]) -> Vec<bool> {
    (0..mask.len())
        .map(|i| {
            let mut any = mask[i];
            for_each_neighbor(i, dims, |j| any |= mask[j]);
            any
        })
        .collect()
}

/// Erosion treating voxels beyond the grid as set, so a mask that fills the
/// grid survives closing unchanged.
fn erode(mask: &[bool], dims: [usize; 3]) -> Vec<bool> {
    (0..mask.len())
        .map(|i| {
            let mut all = mask[i];
            for_each_neighbor(i, dims, |j| all &= mask[j]);
            all
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Ellipsoidal head: air outside, bone shell, 30 HU parenchyma.
    fn head(dims: [usize; 3]) -> (Volume, Vec<bool>) {
        let c = dims.map(|d| (d as f64 - 1.0) / 2.0);
        let outer = [dims[0] as f64 * 0.45, dims[1] as f64 * 0.45, dims[2] as f64 * 0.45];
        let inner = [outer[0] - 2.0, outer[1] - 2.0, outer[2] - 1.5];
        let r = |p: [usize; 3], ax: [f64; 3]| {
            (0..3).map(|k| ((p[k] as f64 - c[k]) / ax[k]).powi(2)).sum::<f64>()
        };
        let mut truth = Vec::new();
        let v = Volume::from_fn(dims, [1.0; 3], |x, y, z| {
            let p = [x, y, z];
            let brain = r(p, inner) <= 1.0;
            truth.push(brain);
            if brain {
                30
            } else if r(p, outer) <= 1.0 {
                1000
            } else {
                -1000
            }
        })
        .unwrap();
        (v, truth)
    }

    #[test]
    fn phantom_head_mask_matches_parenchyma() {
        let (v, truth) = head([32, 32, 16]);
        let (stripped, mask) = skull_strip(&v).unwrap();
        let truth = BrainMask::new(v.dims(), truth).unwrap();
        assert!(mask.dice(&truth).unwrap() >= 0.9);
        for (i, &m) in mask.bits().iter().enumerate() {
            let expected = if m { v.voxels()[i] } else { AIR_HU };
            assert_eq!(stripped.voxels()[i], expected);
        }
        assert!(stripped.voxels().iter().all(|&x| x < BONE_MIN_HU));
    }

    #[test]
    fn all_air_is_an_empty_mask() {
        let v = Volume::filled([8, 8, 4], [1.0; 3], -1000).unwrap();
        assert!(matches!(skull_strip(&v), Err(Error::EmptyMask)));
    }

    #[test]
    fn uniform_tissue_without_shell_keeps_everything() {
        let v = Volume::filled([6, 5, 4], [1.0; 3], 30).unwrap();
        let (stripped, mask) = skull_strip(&v).unwrap();
        assert_eq!(mask.count(), 6 * 5 * 4);
        assert_eq!(stripped, v);
    }

    #[test]
    fn scalp_outside_the_skull_is_dropped() {
        // A larger tissue rim touching the border loses to the enclosed brain.
        let dims = [24, 24, 6];
        let (v, truth) = head(dims);
        let v = Volume::from_fn(dims, [1.0; 3], |x, y, z| {
            let val = v.get(x, y, z);
            if val == -1000 {
                40
            } else {
                val
            }
        })
        .unwrap();
        let (_, mask) = skull_strip(&v).unwrap();
        let truth = BrainMask::new(dims, truth).unwrap();
        assert!(mask.dice(&truth).unwrap() >= 0.9);
    }
}
