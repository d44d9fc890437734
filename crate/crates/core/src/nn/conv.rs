//! 3D convolution by im2col + GEMM on `[C, Z, Y, X]` items.

use super::tensor::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeom {
    pub in_channels: usize,
    pub out_channels: usize,
    /// (z, y, x)
    pub kernel: [usize; 3],
    pub stride: [usize; 3],
    pub padding: [usize; 3],
}

impl ConvGeom {
    pub fn cube3(in_channels: usize, out_channels: usize, stride: [usize; 3]) -> Self {
        ConvGeom {
            in_channels,
            out_channels,
            kernel: [3, 3, 3],
            stride,
            padding: [1, 1, 1],
        }
    }

    pub fn fan_in(&self) -> usize {
        self.in_channels * self.kernel.iter().product::<usize>()
    }

    pub fn weight_shape(&self) -> Vec<usize> {
        vec![
            self.out_channels,
            self.in_channels,
            self.kernel[0],
            self.kernel[1],
            self.kernel[2],
        ]
    }

    pub fn out_dims(&self, input: [usize; 3]) -> Option<[usize; 3]> {
        let mut out = [0; 3];
        for a in 0..3 {
            let padded = input[a] + 2 * self.padding[a];
            if padded < self.kernel[a] {
                return None;
            }
            out[a] = (padded - self.kernel[a]) / self.stride[a] + 1;
        }
        Some(out)
    }
}

/// Output positions `lo..hi` whose tap `k` lands inside `0..n_in`.
fn valid_range(n_out: usize, n_in: usize, stride: usize, k: usize, pad: usize) -> (usize, usize) {
    let lo = if pad > k { (pad - k).div_ceil(stride) } else { 0 };
    let hi = if n_in + pad > k {
        ((n_in + pad - k - 1) / stride + 1).min(n_out)
    } else {
        0
    };
    (lo.min(hi), hi)
}

/// Unfolds one item into a `[C*kz*ky*kx, Z'*Y'*X']` row-major matrix.
pub fn im2col<T: Real>(input: &[T], dims: [usize; 3], g: &ConvGeom, cols: &mut [T]) {
    let out = g.out_dims(dims).expect("validated geometry");
    let [zi, yi, xi] = dims;
    let n_out = out[0] * out[1] * out[2];
    let mut row = 0;
    for c in 0..g.in_channels {
        let chan = &input[c * zi * yi * xi..(c + 1) * zi * yi * xi];
        for kz in 0..g.kernel[0] {
            for ky in 0..g.kernel[1] {
                for kx in 0..g.kernel[2] {
                    let (lo, hi) = valid_range(out[2], xi, g.stride[2], kx, g.padding[2]);
                    let dst = &mut cols[row * n_out..(row + 1) * n_out];
                    let mut o = 0;
                    for oz in 0..out[0] {
                        let iz = (oz * g.stride[0] + kz) as isize - g.padding[0] as isize;
                        for oy in 0..out[1] {
                            let iy = (oy * g.stride[1] + ky) as isize - g.padding[1] as isize;
                            let seg = &mut dst[o..o + out[2]];
                            o += out[2];
                            if iz < 0 || iz >= zi as isize || iy < 0 || iy >= yi as isize {
                                seg.iter_mut().for_each(|v| *v = T::ZERO);
                                continue;
                            }
                            let src = &chan[(iz as usize * yi + iy as usize) * xi..][..xi];
                            seg[..lo].iter_mut().for_each(|v| *v = T::ZERO);
                            seg[hi..].iter_mut().for_each(|v| *v = T::ZERO);
                            let sx = g.stride[2];
                            let first = lo * sx + kx - g.padding[2];
                            for (i, v) in seg[lo..hi].iter_mut().enumerate() {
                                *v = src[first + i * sx];
                            }
                        }
                    }
                    row += 1;
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters column gradients back onto the input.
pub fn col2im_add<T: Real>(cols: &[T], dims: [usize; 3], g: &ConvGeom, input_grad: &mut [T]) {
    let out = g.out_dims(dims).expect("validated geometry");
    let [zi, yi, xi] = dims;
    let n_out = out[0] * out[1] * out[2];
    let mut row = 0;
    for c in 0..g.in_channels {
        let chan = &mut input_grad[c * zi * yi * xi..(c + 1) * zi * yi * xi];
        for kz in 0..g.kernel[0] {
            for ky in 0..g.kernel[1] {
                for kx in 0..g.kernel[2] {
                    let (lo, hi) = valid_range(out[2], xi, g.stride[2], kx, g.padding[2]);
                    let src = &cols[row * n_out..(row + 1) * n_out];
                    let mut o = 0;
                    for oz in 0..out[0] {
                        let iz = (oz * g.stride[0] + kz) as isize - g.padding[0] as isize;
                        for oy in 0..out[1] {
                            let iy = (oy * g.stride[1] + ky) as isize - g.padding[1] as isize;
                            let seg = &src[o..o + out[2]];
                            o += out[2];
                            if iz < 0 || iz >= zi as isize || iy < 0 || iy >= yi as isize {
                                continue;
                            }
                            let dst = &mut chan[(iz as usize * yi + iy as usize) * xi..][..xi];
                            let sx = g.stride[2];
                            let first = lo * sx + kx - g.padding[2];
                            for (i, &v) in seg[lo..hi].iter().enumerate() {
                                dst[first + i * sx] += v;
                            }
                        }
                    }
                    row += 1;
                }
            }
        }
    }
}

/// Forward for one item. Returns the unfolded input for reuse in backward.
pub fn conv_forward<T: Real>(
    input: &[T],
    dims: [usize; 3],
    g: &ConvGeom,
    weight: &[T],
    bias: &[T],
    out: &mut [T],
) -> Vec<T> {
    let od = g.out_dims(dims).expect("validated geometry");
    let n = od[0] * od[1] * od[2];
    let k = g.fan_in();
    let mut cols = vec![T::ZERO; k * n];
    im2col(input, dims, g, &mut cols);
    for (o, b) in bias.iter().enumerate() {
        out[o * n..(o + 1) * n].iter_mut().for_each(|v| *v = *b);
    }
    T::gemm(
        g.out_channels,
        k,
        n,
        T::ONE,
        weight,
        k as isize,
        1,
        &cols,
        n as isize,
        1,
        T::ONE,
        out,
        n as isize,
        1,
    );
    cols
}

/// Backward for one item; accumulates into all three gradient buffers.
#[allow(clippy::too_many_arguments)]
pub fn conv_backward<T: Real>(
    out_grad: &[T],
    cols: &[T],
    dims: [usize; 3],
    g: &ConvGeom,
    weight: &[T],
    weight_grad: &mut [T],
    bias_grad: &mut [T],
    input_grad: Option<&mut [T]>,
) {
    let od = g.out_dims(dims).expect("validated geometry");
    let n = od[0] * od[1] * od[2];
    let k = g.fan_in();
    // dW[O,K] += dOut[O,N] * cols^T[N,K]
    T::gemm(
        g.out_channels,
        n,
        k,
        T::ONE,
        out_grad,
        n as isize,
        1,
        cols,
        1,
        n as isize,
        T::ONE,
        weight_grad,
        k as isize,
        1,
    );
    for (o, bg) in bias_grad.iter_mut().enumerate() {
        let mut s = T::ZERO;
        for &v in &out_grad[o * n..(o + 1) * n] {
            s += v;
        }
        *bg += s;
    }
    if let Some(input_grad) = input_grad {
        // dCols[K,N] = W^T[K,O] * dOut[O,N]
        let mut dcols = vec![T::ZERO; k * n];
        T::gemm(
            k,
            g.out_channels,
            n,
            T::ONE,
            weight,
            1,
            k as isize,
            out_grad,
            n as isize,
            1,
            T::ZERO,
            &mut dcols,
            n as isize,
            1,
        );
        col2im_add(&dcols, dims, g, input_grad);
    }
}
