use super::{to_hu, validate_geometry, Volume, AIR_HU};
use crate::error::{Error, Result};

/// Sample positions closer than this to the grid extent count as inside.
const EDGE_EPS: f64 = 1e-9;

/// Output extent along one axis: round-half-up of the physical length over
/// the new spacing, at least one voxel.
fn resampled_extent(n: usize, spacing: f64, target: f64) -> usize {
    let exact = n as f64 * spacing / target;
    ((exact + 0.5 + EDGE_EPS).floor() as usize).max(1)
}

/// Resamples to `target_spacing` (mm) by trilinear interpolation.
///
/// Voxel centers are aligned so that both grids cover the same physical
/// box; output voxel `j` sits at input index `(j + 0.5) * t / s - 0.5`.
/// Positions outside the input box read as air.
pub fn resample(volume: &Volume, target_spacing: [f64; 3]) -> Result<Volume> {
    if target_spacing.iter().any(|&s| !(s.is_finite() && s > 0.0)) {
        return Err(Error::Geometry(format!(
            "target spacing must be positive, got {target_spacing:?}"
        )));
    }
    let src_dims = volume.dims();
    let src_spacing = volume.spacing_mm();
    let dims = [0, 1, 2].map(|a| resampled_extent(src_dims[a], src_spacing[a], target_spacing[a]));
    validate_geometry(dims, target_spacing)?;

    let ratio = [0, 1, 2].map(|a| target_spacing[a] / src_spacing[a]);
    let coord = |axis: usize, j: usize| (j as f64 + 0.5) * ratio[axis] - 0.5;

    let xs: Vec<f64> = (0..dims[0]).map(|j| coord(0, j)).collect();
    let mut voxels = Vec::with_capacity(dims.iter().product());
    for k in 0..dims[2] {
        let cz = coord(2, k);
        for j in 0..dims[1] {
            let cy = coord(1, j);
            for &cx in &xs {
                voxels.push(match trilinear_at(volume, [cx, cy, cz]) {
                    Some(v) => to_hu(v),
                    None => AIR_HU,
                });
            }
        }
    }
    Ok(Volume::from_parts_unchecked(dims, target_spacing, voxels))
}

/// Linear interpolation stencil along one axis: lower index, upper index and
/// the weight of the upper sample. `None` outside the voxel box.
#[inline]
fn stencil(c: f64, n: usize) -> Option<(usize, usize, f64)> {
    if c < -0.5 - EDGE_EPS || c > n as f64 - 0.5 + EDGE_EPS {
        return None;
    }
    let c = c.clamp(0.0, (n - 1) as f64);
    let i0 = c.floor() as usize;
    let i1 = (i0 + 1).min(n - 1);
    Some((i0, i1, c - i0 as f64))
}

/// Trilinear interpolation at fractional voxel coordinates. Positions within
/// half a voxel of the border replicate the edge voxel.
pub(crate) fn trilinear_at(volume: &Volume, c: [f64; 3]) -> Option<f64> {
    let d = volume.dims();
    let (x0, x1, tx) = stencil(c[0], d[0])?;
    let (y0, y1, ty) = stencil(c[1], d[1])?;
    let (z0, z1, tz) = stencil(c[2], d[2])?;
    let v = |x, y, z| volume.get(x, y, z) as f64;
    let lerp = |a: f64, b: f64, t: f64| a + (b - a) * t;
    let c00 = lerp(v(x0, y0, z0), v(x1, y0, z0), tx);
    let c10 = lerp(v(x0, y1, z0), v(x1, y1, z0), tx);
    let c01 = lerp(v(x0, y0, z1), v(x1, y0, z1), tx);
    let c11 = lerp(v(x0, y1, z1), v(x1, y1, z1), tx);
    Some(lerp(lerp(c00, c10, ty), lerp(c01, c11, ty), tz))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Brute force: sum every input voxel against separable hat weights.
    fn hat_oracle(v: &Volume, c: [f64; 3]) -> f64 {
        let d = v.dims();
        let cc = [0, 1, 2].map(|a| c[a].clamp(0.0, (d[a] - 1) as f64));
        let hat = |t: f64| (1.0 - t.abs()).max(0.0);
        let mut acc = 0.0;
        for z in 0..d[2] {
            for y in 0..d[1] {
                for x in 0..d[0] {
                    let w = hat(cc[0] - x as f64) * hat(cc[1] - y as f64) * hat(cc[2] - z as f64);
                    acc += w * v.get(x, y, z) as f64;
                }
            }
        }
        acc
    }

    #[test]
    fn identity_at_same_spacing() {
        let v = Volume::from_fn([5, 4, 3], [0.6, 0.6, 4.2], |x, y, z| (x * 7 + y * 3 + z * 11) as i16 - 40)
            .unwrap();
        assert_eq!(resample(&v, [0.6, 0.6, 4.2]).unwrap(), v);
    }

    #[test]
    fn constant_stays_constant() {
        let v = Volume::filled([4, 5, 3], [0.9, 0.7, 5.0], 37).unwrap();
        for target in [[0.6, 0.6, 4.2], [1.3, 0.25, 2.0], [3.0, 3.0, 9.0]] {
            let r = resample(&v, target).unwrap();
            assert!(r.voxels().iter().all(|&x| x == 37), "target {target:?}");
        }
    }

    #[test]
    fn halved_spacing_ramp_matches_hat_oracle() {
        let v = Volume::from_fn([2, 2, 2], [2.0, 2.0, 2.0], |x, y, z| (10 * x + 20 * y + 40 * z) as i16)
            .unwrap();
        let r = resample(&v, [1.0, 1.0, 1.0]).unwrap();
        assert_eq!(r.dims(), [4, 4, 4]);
        for z in 0..4 {
            for y in 0..4 {
                for x in 0..4 {
                    let c = [x, y, z].map(|j| (j as f64 + 0.5) * 0.5 - 0.5);
                    let expected = hat_oracle(&v, c).round() as i16;
                    assert_eq!(r.get(x, y, z), expected, "at {x},{y},{z}");
                }
            }
        }
        // Interior midpoint between the two planes of the ramp.
        assert_eq!(r.get(1, 1, 1), 18);
    }

    #[test]
    fn dims_round_half_up_with_minimum_one() {
        let v = Volume::filled([64, 64, 16], [2.625, 2.625, 7.875], 0).unwrap();
        let r = resample(&v, [0.6, 0.6, 4.2]).unwrap();
        assert_eq!(r.dims(), [280, 280, 30]);
        let tiny = Volume::filled([3, 5, 1], [1.0; 3], 0).unwrap();
        assert_eq!(resample(&tiny, [10.0, 2.0, 1.0]).unwrap().dims(), [1, 3, 1]);
        assert_eq!(resampled_extent(5, 1.0, 2.0), 3);
    }

    #[test]
    fn rejects_nonpositive_target() {
        let v = Volume::filled([2, 2, 2], [1.0; 3], 0).unwrap();
        assert!(matches!(resample(&v, [1.0, 0.0, 1.0]), Err(Error::Geometry(_))));
        assert!(resample(&v, [1.0, -1.0, 1.0]).is_err());
    }

    #[test]
    fn integer_affine_field_is_exact_on_interior() {
        // Ratio 0.5 puts samples at quarter offsets; slope 4 keeps them integral.
        let src = Volume::from_fn([6, 6, 4], [2.0, 2.0, 2.0], |x, y, z| (4 * x as i32 + 8 * y as i32 - 12 * z as i32 + 100) as i16)
            .unwrap();
        let r = resample(&src, [1.0, 1.0, 1.0]).unwrap();
        for z in 1..7 {
            for y in 1..11 {
                for x in 1..11 {
                    let c = [x, y, z].map(|j| (j as f64 + 0.5) * 0.5 - 0.5);
                    let f = 4.0 * c[0] + 8.0 * c[1] - 12.0 * c[2] + 100.0;
                    assert_eq!(r.get(x, y, z) as f64, f);
                }
            }
        }
    }

    proptest! {
        #[test]
        fn affine_fields_reproduced_on_interior(
            a in -20i32..20, b in -20i32..20, c in -20i32..20,
            sx in 0.3f64..3.0, sy in 0.3f64..3.0, sz in 0.5f64..5.0,
        ) {
            // Integer slopes keep the stored source exactly affine; the
            // sample positions themselves are arbitrary.
            let spacing = [1.0, 1.2, 2.5];
            let src = Volume::from_fn([8, 8, 6], spacing, |x, y, z| {
                (a * x as i32 + b * y as i32 + c * z as i32) as i16
            }).unwrap();
            let target = [sx, sy, sz];
            let ratio = [0, 1, 2].map(|k| target[k] / spacing[k]);
            let dims = [0, 1, 2].map(|k| resampled_extent(src.dims()[k], spacing[k], target[k]));
            for k in 0..dims[2] { for j in 0..dims[1] { for i in 0..dims[0] {
                let pos = [i, j, k];
                let p = [0, 1, 2].map(|ax| (pos[ax] as f64 + 0.5) * ratio[ax] - 0.5);
                let inside = (0..3).all(|ax| p[ax] >= 0.0 && p[ax] <= (src.dims()[ax] - 1) as f64);
                if inside {
                    let got = trilinear_at(&src, p).unwrap();
                    let want = a as f64 * p[0] + b as f64 * p[1] + c as f64 * p[2];
                    prop_assert!((got - want).abs() < 1e-3, "{} vs {}", got, want);
                }
            }}}
        }
    }
}
