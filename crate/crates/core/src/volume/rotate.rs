use super::{to_hu, Volume, AIR_HU};

pub const ROTATION_STEP_DEGREES: f64 = 20.0;
/// Number of axial rotation copies per scan (0°, 20°, ..., 340°).
pub const ROTATION_COUNT: usize = 18;

const EDGE_EPS: f64 = 1e-6;

/// cos/sin with exact values at multiples of 90°, so quarter turns are
/// pure index permutations.
fn exact_cos_sin(degrees: f64) -> (f64, f64) {
    let d = degrees.rem_euclid(360.0);
    if d == 0.0 {
        (1.0, 0.0)
    } else if d == 90.0 {
        (0.0, 1.0)
    } else if d == 180.0 {
        (-1.0, 0.0)
    } else if d == 270.0 {
        (0.0, -1.0)
    } else {
        let r = d.to_radians();
        (r.cos(), r.sin())
    }
}

/// Rotates every axial slice by `degrees` about the slice center
/// `((nx-1)/2, (ny-1)/2)` with bilinear interpolation. Pixels whose source
/// falls outside the slice are set to air; the z axis is untouched.
pub fn rotate_axial(volume: &Volume, degrees: f64) -> Volume {
    let [nx, ny, nz] = volume.dims();
    let (cos, sin) = exact_cos_sin(degrees);
    let cx = (nx as f64 - 1.0) / 2.0;
    let cy = (ny as f64 - 1.0) / 2.0;
    let plane = nx * ny;

    // Inverse map: output pixel -> source position, shared by all slices.
    let mut stencils = Vec::with_capacity(plane);
    for y in 0..ny {
        for x in 0..nx {
            let dx = x as f64 - cx;
            let dy = y as f64 - cy;
            let sx = cx + cos * dx + sin * dy;
            let sy = cy - sin * dx + cos * dy;
            stencils.push(bilinear_stencil(sx, sy, nx, ny));
        }
    }

    let src = volume.voxels();
    let mut out = vec![AIR_HU; volume.len()];
    for z in 0..nz {
        let slice = &src[z * plane..(z + 1) * plane];
        let dst = &mut out[z * plane..(z + 1) * plane];
        for (o, st) in dst.iter_mut().zip(&stencils) {
            if let Some(s) = st {
                let v = |i: usize| slice[i] as f64;
                let top = v(s.i00) + (v(s.i10) - v(s.i00)) * s.tx;
                let bottom = v(s.i01) + (v(s.i11) - v(s.i01)) * s.tx;
                *o = to_hu(top + (bottom - top) * s.ty);
            }
        }
    }
    Volume::from_parts_unchecked(volume.dims(), volume.spacing_mm(), out)
}

struct Stencil {
    i00: usize,
    i10: usize,
    i01: usize,
    i11: usize,
    tx: f64,
    ty: f64,
}

fn bilinear_stencil(sx: f64, sy: f64, nx: usize, ny: usize) -> Option<Stencil> {
    let max_x = (nx - 1) as f64;
    let max_y = (ny - 1) as f64;
    if sx < -EDGE_EPS || sy < -EDGE_EPS || sx > max_x + EDGE_EPS || sy > max_y + EDGE_EPS {
        return None;
    }
    let sx = sx.clamp(0.0, max_x);
    let sy = sy.clamp(0.0, max_y);
    let x0 = sx.floor() as usize;
    let y0 = sy.floor() as usize;
    let x1 = (x0 + 1).min(nx - 1);
    let y1 = (y0 + 1).min(ny - 1);
    Some(Stencil {
        i00: y0 * nx + x0,
        i10: y0 * nx + x1,
        i01: y1 * nx + x0,
        i11: y1 * nx + x1,
        tx: sx - x0 as f64,
        ty: sy - y0 as f64,
    })
}

/// The 18 axial rotation copies at 0°, 20°, ..., 340°. Element 0 is the
/// input itself.
pub fn augment_rotations(volume: &Volume) -> Vec<Volume> {
    (0..ROTATION_COUNT)
        .map(|k| {
            if k == 0 {
                volume.clone()
            } else {
                rotate_axial(volume, k as f64 * ROTATION_STEP_DEGREES)
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn textured(dims: [usize; 3]) -> Volume {
        Volume::from_fn(dims, [0.6, 0.6, 4.2], |x, y, z| ((x * 37 + y * 11 + z * 5) % 200) as i16 - 50)
            .unwrap()
    }

    #[test]
    fn zero_degrees_is_identity() {
        let v = textured([9, 7, 3]);
        assert_eq!(rotate_axial(&v, 0.0), v);
        assert_eq!(rotate_axial(&v, 360.0), v);
    }

    #[test]
    fn center_voxel_is_fixed() {
        let mut vox = vec![0i16; 9 * 9 * 2];
        vox[4 * 9 + 4] = 1000;
        vox[81 + 4 * 9 + 4] = 1000;
        let v = Volume::new([9, 9, 2], [1.0; 3], vox).unwrap();
        for k in 0..36 {
            let r = rotate_axial(&v, k as f64 * 10.0);
            assert_eq!(r.get(4, 4, 0), 1000, "angle {}", k * 10);
            assert_eq!(r.get(4, 4, 1), 1000);
        }
    }

    #[test]
    fn half_turn_matches_index_flip() {
        let v = textured([10, 8, 3]);
        let r = rotate_axial(&v, 180.0);
        for z in 0..3 {
            for y in 0..8 {
                for x in 0..10 {
                    let flipped = v.get(9 - x, 7 - y, z);
                    assert!((r.get(x, y, z) - flipped).abs() <= 1);
                }
            }
        }
        // Computed trig must agree with the exact quarter-turn path.
        let near = rotate_axial(&v, 180.0 + 1e-12);
        for (a, b) in near.voxels().iter().zip(r.voxels()) {
            assert!((a - b).abs() <= 1);
        }
    }

    #[test]
    fn out_of_frame_is_air() {
        let v = Volume::filled([8, 8, 1], [1.0; 3], 40).unwrap();
        let r = rotate_axial(&v, 45.0);
        assert_eq!(r.get(0, 0, 0), AIR_HU);
        assert_eq!(r.get(4, 4, 0), 40);
    }

    #[test]
    fn forward_then_back_recovers_smooth_interior() {
        // A smooth radial bump; interior voxels should come back within 2 HU.
        let n = 32;
        let c = (n as f64 - 1.0) / 2.0;
        let v = Volume::from_fn([n, n, 2], [1.0; 3], |x, y, _| {
            let r2 = (x as f64 - c).powi(2) + (y as f64 - c).powi(2);
            (60.0 * (-r2 / 120.0).exp() + 20.0).round() as i16
        })
        .unwrap();
        for angle in [20.0, 37.5, 100.0, 340.0] {
            let back = rotate_axial(&rotate_axial(&v, angle), -angle);
            for y in 0..n {
                for x in 0..n {
                    let r = ((x as f64 - c).powi(2) + (y as f64 - c).powi(2)).sqrt();
                    if r < c - 2.0 {
                        assert!((back.get(x, y, 1) - v.get(x, y, 1)).abs() <= 2, "angle {angle}");
                    }
                }
            }
        }
    }

    #[test]
    fn eighteen_copies() {
        let v = textured([12, 12, 2]);
        let copies = augment_rotations(&v);
        assert_eq!(copies.len(), 18);
        assert_eq!(copies[0], v);
        assert_eq!(copies[9], rotate_axial(&v, 180.0));
        for c in &copies {
            assert_eq!(c.dims(), v.dims());
            assert_eq!(c.spacing_mm(), v.spacing_mm());
        }
    }
}
