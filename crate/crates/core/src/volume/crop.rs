use super::{Volume, AIR_HU};

/// Offset of the output grid's origin within the input along one axis,
/// centering the crop or pad (the extra voxel of an odd difference goes to
/// the high side).
fn center_offset(n: usize, target: usize) -> isize {
    if n >= target {
        ((n - target) / 2) as isize
    } else {
        -(((target - n) / 2) as isize)
    }
}

/// Center-aligned crop and/or pad (with air) to exactly `target_dims`.
/// Spacing is unchanged. Zero target extents are treated as one.
pub fn crop_or_pad(volume: &Volume, target_dims: [usize; 3]) -> Volume {
    let dims = volume.dims();
    let target = target_dims.map(|d| d.max(1));
    if target == dims {
        return volume.clone();
    }
    let off = [0, 1, 2].map(|a| center_offset(dims[a], target[a]));
    let mut out = vec![AIR_HU; target.iter().product()];
    let mut i = 0;
    for z in 0..target[2] {
        let sz = z as isize + off[2];
        for y in 0..target[1] {
            let sy = y as isize + off[1];
            let row_ok = (0..dims[2] as isize).contains(&sz) && (0..dims[1] as isize).contains(&sy);
            for x in 0..target[0] {
                let sx = x as isize + off[0];
                if row_ok && (0..dims[0] as isize).contains(&sx) {
                    out[i] = volume.get(sx as usize, sy as usize, sz as usize);
                }
                i += 1;
            }
        }
    }
    Volume::from_parts_unchecked(target, volume.spacing_mm(), out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn numbered(dims: [usize; 3]) -> Volume {
        Volume::from_fn(dims, [0.6, 0.6, 4.2], |x, y, z| (x + 10 * y + 100 * z) as i16).unwrap()
    }

    #[test]
    fn same_dims_is_identity() {
        let v = numbered([4, 3, 2]);
        assert_eq!(crop_or_pad(&v, [4, 3, 2]), v);
    }

    #[test]
    fn pad_four_to_six_centers_the_block() {
        let v = numbered([4, 4, 4]);
        let p = crop_or_pad(&v, [6, 6, 6]);
        for z in 0..6 {
            for y in 0..6 {
                for x in 0..6 {
                    let inside = [x, y, z].iter().all(|&c| (1..5).contains(&c));
                    let expected = if inside { v.get(x - 1, y - 1, z - 1) } else { AIR_HU };
                    assert_eq!(p.get(x, y, z), expected);
                }
            }
        }
        assert_eq!(p.spacing_mm(), v.spacing_mm());
    }

    #[test]
    fn mixed_crop_and_pad() {
        let v = numbered([7, 2, 3]);
        let r = crop_or_pad(&v, [4, 5, 3]);
        assert_eq!(r.dims(), [4, 5, 3]);
        // x cropped by 3 (offset 1), y padded by 3 (offset -1).
        assert_eq!(r.get(0, 1, 0), v.get(1, 0, 0));
        assert_eq!(r.get(3, 2, 2), v.get(4, 1, 2));
        assert_eq!(r.get(0, 0, 0), AIR_HU);
        assert_eq!(r.get(0, 3, 0), AIR_HU);
    }

    #[test]
    fn pipeline_target_from_any_grid() {
        let v = Volume::filled([300, 260, 33], [0.6, 0.6, 4.2], 30).unwrap();
        assert_eq!(crop_or_pad(&v, crate::volume::PIPELINE_DIMS).dims(), [280, 280, 30]);
    }

    proptest! {
        #[test]
        fn crop_then_restore_keeps_retained_voxels(
            nx in 1usize..9, ny in 1usize..9, nz in 1usize..6,
            tx in 1usize..9, ty in 1usize..9, tz in 1usize..6,
        ) {
            let v = numbered([nx, ny, nz]);
            let there = crop_or_pad(&v, [tx, ty, tz]);
            let back = crop_or_pad(&there, [nx, ny, nz]);
            let off = [center_offset(nx, tx), center_offset(ny, ty), center_offset(nz, tz)];
            for z in 0..nz { for y in 0..ny { for x in 0..nx {
                let t = [x as isize - off[0], y as isize - off[1], z as isize - off[2]];
                let kept = t[0] >= 0 && t[1] >= 0 && t[2] >= 0
                    && (t[0] as usize) < tx && (t[1] as usize) < ty && (t[2] as usize) < tz;
                if kept {
                    prop_assert_eq!(back.get(x, y, z), v.get(x, y, z));
                }
            }}}
        }
    }
}
