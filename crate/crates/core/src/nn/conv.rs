//! Same-padded cross-correlation via patch matrices (im2col) and gemm,
//! with the matching scatter-add transpose for backpropagation.

use super::scalar::Scalar;
use super::tensor::{gemm_nn, gemm_nt, gemm_tn, Tensor};
use super::NnError;

/// Write the patch matrix of one sample into rows
/// [row0, row0 + channels·k^d) and columns [col0, col0 + n^d) of `p`
/// (row-major with `p_cols` columns). Channel `ch` of the sample is read
/// from `x[ch·x_row_stride + x_off ..][.. n^d]`. Out-of-border taps are 0.
#[allow(clippy::too_many_arguments)]
pub(crate) fn im2col_into<S: Scalar>(
    p: &mut [S],
    p_cols: usize,
    row0: usize,
    col0: usize,
    x: &[S],
    x_row_stride: usize,
    x_off: usize,
    channels: usize,
    side: usize,
    dim: usize,
    kernel: usize,
) {
    let n = side;
    let k = kernel;
    let pad = (k / 2) as i32;
    let m = n.pow(dim as u32);
    let ni = n as i32;
    if dim == 2 {
        for ch in 0..channels {
            let field = &x[ch * x_row_stride + x_off..][..m];
            for (ti, (dr, dc)) in taps_2d(pad) {
                let row = row0 + ch * k * k + ti;
                let dst = &mut p[row * p_cols + col0..][..m];
                dst.fill(S::ZERO);
                let c_start = (-dc).max(0) as usize;
                let c_end = (ni - dc.max(0)) as usize;
                for r in 0..n {
                    let sr = r as i32 + dr;
                    if sr < 0 || sr >= ni {
                        continue;
                    }
                    let src_base = sr as usize * n;
                    dst[r * n + c_start..r * n + c_end].copy_from_slice(
                        &field[src_base + (c_start as i32 + dc) as usize
                            ..src_base + (c_end as i32 + dc) as usize],
                    );
                }
            }
        }
    } else {
        for ch in 0..channels {
            let field = &x[ch * x_row_stride + x_off..][..m];
            for (ti, (dr, dc, dl)) in taps_3d(pad) {
                let row = row0 + ch * k * k * k + ti;
                let dst = &mut p[row * p_cols + col0..][..m];
                dst.fill(S::ZERO);
                let l_start = (-dl).max(0) as usize;
                let l_end = (ni - dl.max(0)) as usize;
                for r in 0..n {
                    let sr = r as i32 + dr;
                    if sr < 0 || sr >= ni {
                        continue;
                    }
                    for c in 0..n {
                        let sc = c as i32 + dc;
                        if sc < 0 || sc >= ni {
                            continue;
                        }
                        let src_base = (sr as usize * n + sc as usize) * n;
                        let dst_base = (r * n + c) * n;
                        dst[dst_base + l_start..dst_base + l_end].copy_from_slice(
                            &field[(src_base as i32 + l_start as i32 + dl) as usize
                                ..(src_base as i32 + l_end as i32 + dl) as usize],
                        );
                    }
                }
            }
        }
    }
}

/// Transpose of `im2col_into`: scatter-add patch-matrix gradients back onto
/// the sample's channel fields.
#[allow(clippy::too_many_arguments)]
pub(crate) fn col2im_add<S: Scalar>(
    p: &[S],
    p_cols: usize,
    row0: usize,
    col0: usize,
    x: &mut [S],
    x_row_stride: usize,
    x_off: usize,
    channels: usize,
    side: usize,
    dim: usize,
    kernel: usize,
) {
    let n = side;
    let k = kernel;
    let pad = (k / 2) as i32;
    let m = n.pow(dim as u32);
    let ni = n as i32;
    if dim == 2 {
        for ch in 0..channels {
            let field = &mut x[ch * x_row_stride + x_off..][..m];
            for (ti, (dr, dc)) in taps_2d(pad) {
                let row = row0 + ch * k * k + ti;
                let src = &p[row * p_cols + col0..][..m];
                let c_start = (-dc).max(0) as usize;
                let c_end = (ni - dc.max(0)) as usize;
                for r in 0..n {
                    let sr = r as i32 + dr;
                    if sr < 0 || sr >= ni {
                        continue;
                    }
                    let src_row = &src[r * n + c_start..r * n + c_end];
                    let dst_base = sr as usize * n;
                    let dst = &mut field[dst_base + (c_start as i32 + dc) as usize
                        ..dst_base + (c_end as i32 + dc) as usize];
                    for (d, s) in dst.iter_mut().zip(src_row) {
                        *d += *s;
                    }
                }
            }
        }
    } else {
        for ch in 0..channels {
            let field = &mut x[ch * x_row_stride + x_off..][..m];
            for (ti, (dr, dc, dl)) in taps_3d(pad) {
                let row = row0 + ch * k * k * k + ti;
                let src = &p[row * p_cols + col0..][..m];
                let l_start = (-dl).max(0) as usize;
                let l_end = (ni - dl.max(0)) as usize;
                for r in 0..n {
                    let sr = r as i32 + dr;
                    if sr < 0 || sr >= ni {
                        continue;
                    }
                    for c in 0..n {
                        let sc = c as i32 + dc;
                        if sc < 0 || sc >= ni {
                            continue;
                        }
                        let src_base = (r * n + c) * n;
                        let dst_base = ((sr as usize * n + sc as usize) * n) as i32 + dl;
                        let src_row = &src[src_base + l_start..src_base + l_end];
                        let dst = &mut field
                            [(dst_base + l_start as i32) as usize..(dst_base + l_end as i32) as usize];
                        for (d, s) in dst.iter_mut().zip(src_row) {
                            *d += *s;
                        }
                    }
                }
            }
        }
    }
}

fn taps_2d(pad: i32) -> impl Iterator<Item = (usize, (i32, i32))> {
    let k = (2 * pad + 1) as usize;
    (0..k * k).map(move |ti| {
        let dr = (ti / k) as i32 - pad;
        let dc = (ti % k) as i32 - pad;
        (ti, (dr, dc))
    })
}

fn taps_3d(pad: i32) -> impl Iterator<Item = (usize, (i32, i32, i32))> {
    let k = (2 * pad + 1) as usize;
    (0..k * k * k).map(move |ti| {
        let dr = (ti / (k * k)) as i32 - pad;
        let dc = ((ti / k) % k) as i32 - pad;
        let dl = (ti % k) as i32 - pad;
        (ti, (dr, dc, dl))
    })
}

fn check_conv_shapes<S: Scalar>(
    input: &Tensor<S>,
    kernel: &Tensor<S>,
    bias: Option<&Tensor<S>>,
) -> Result<(usize, usize, usize, usize, usize), NnError> {
    let ir = input.shape().len();
    if ir != 3 && ir != 4 {
        return Err(NnError::Shape(format!("conv input must be rank 3 or 4, got {ir}")));
    }
    let dim = ir - 1;
    let c_in = input.shape()[0];
    let n = input.shape()[1];
    if input.shape()[1..].iter().any(|&s| s != n) {
        return Err(NnError::Shape(format!("conv input spatial sides differ: {:?}", input.shape())));
    }
    if kernel.shape().len() != dim + 2 {
        return Err(NnError::Shape(format!(
            "kernel rank {} does not match input dimensionality {dim}",
            kernel.shape().len()
        )));
    }
    let c_out = kernel.shape()[0];
    let k = kernel.shape()[2];
    if kernel.shape()[1] != c_in {
        return Err(NnError::Shape(format!(
            "kernel expects {} input channels, input has {c_in}",
            kernel.shape()[1]
        )));
    }
    if kernel.shape()[2..].iter().any(|&s| s != k) || k % 2 == 0 {
        return Err(NnError::Shape(format!("kernel spatial sides must be odd and equal: {:?}", kernel.shape())));
    }
    if let Some(b) = bias {
        if b.shape() != [c_out] {
            return Err(NnError::Shape(format!(
                "bias shape {:?} does not match {c_out} output channels",
                b.shape()
            )));
        }
    }
    Ok((dim, c_in, c_out, n, k))
}

/// Cross-correlation with zero same-padding: output spatial shape equals
/// input spatial shape. Input [C_in, n, ...], kernel [C_out, C_in, k, ...].
pub fn conv_same<S: Scalar>(
    input: &Tensor<S>,
    kernel: &Tensor<S>,
    bias: Option<&Tensor<S>>,
) -> Result<Tensor<S>, NnError> {
    let (dim, c_in, c_out, n, k) = check_conv_shapes(input, kernel, bias)?;
    let m = n.pow(dim as u32);
    let rows = c_in * k.pow(dim as u32);
    let mut p = vec![S::ZERO; rows * m];
    im2col_into(&mut p, m, 0, 0, input.data(), m, 0, c_in, n, dim, k);
    let mut out_shape = input.shape().to_vec();
    out_shape[0] = c_out;
    let mut out = Tensor::zeros(&out_shape);
    gemm_nn(c_out, rows, m, kernel.data(), &p, S::ZERO, out.data_mut());
    if let Some(b) = bias {
        for c in 0..c_out {
            let bv = b.data()[c];
            for v in &mut out.data_mut()[c * m..(c + 1) * m] {
                *v += bv;
            }
        }
    }
    debug_assert!(out.all_finite());
    Ok(out)
}

/// Gradients of `conv_same` with respect to kernel, bias, and input.
pub fn conv_same_backward<S: Scalar>(
    input: &Tensor<S>,
    kernel: &Tensor<S>,
    dout: &Tensor<S>,
) -> Result<(Tensor<S>, Tensor<S>, Tensor<S>), NnError> {
    let (dim, c_in, c_out, n, k) = check_conv_shapes(input, kernel, None)?;
    let m = n.pow(dim as u32);
    let rows = c_in * k.pow(dim as u32);
    let mut p = vec![S::ZERO; rows * m];
    im2col_into(&mut p, m, 0, 0, input.data(), m, 0, c_in, n, dim, k);

    let mut dkernel = kernel.zeros_like();
    gemm_nt(c_out, m, rows, dout.data(), &p, S::ZERO, dkernel.data_mut());

    let mut dbias = Tensor::zeros(&[c_out]);
    for c in 0..c_out {
        let mut s = S::ZERO;
        for &v in &dout.data()[c * m..(c + 1) * m] {
            s += v;
        }
        dbias.data_mut()[c] = s;
    }

    let mut dp = vec![S::ZERO; rows * m];
    gemm_tn(rows, c_out, m, kernel.data(), dout.data(), S::ZERO, &mut dp);
    let mut dinput = input.zeros_like();
    col2im_add(&dp, m, 0, 0, dinput.data_mut(), m, 0, c_in, n, dim, k);
    Ok((dkernel, dbias, dinput))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::util::RngSeed;

    /// Direct nested-loop evaluation of same-padded cross-correlation.
    fn conv_reference(input: &Tensor<f64>, kernel: &Tensor<f64>, bias: Option<&Tensor<f64>>) -> Vec<f64> {
        let dim = input.shape().len() - 1;
        let c_in = input.shape()[0];
        let n = input.shape()[1] as i32;
        let c_out = kernel.shape()[0];
        let k = kernel.shape()[2] as i32;
        let pad = k / 2;
        let m = (n as usize).pow(dim as u32);
        let mut out = vec![0.0; c_out * m];
        let spatial: Vec<Vec<i32>> = if dim == 2 {
            (0..n).flat_map(|r| (0..n).map(move |c| vec![r, c])).collect()
        } else {
            (0..n)
                .flat_map(|r| {
                    (0..n).flat_map(move |c| (0..n).map(move |l| vec![r, c, l]))
                })
                .collect()
        };
        for co in 0..c_out {
            for (j, pos) in spatial.iter().enumerate() {
                let mut acc = bias.map_or(0.0, |b| b.data()[co]);
                for ci in 0..c_in {
                    let taps: Vec<Vec<i32>> = if dim == 2 {
                        (0..k).flat_map(|a| (0..k).map(move |b| vec![a, b])).collect()
                    } else {
                        (0..k)
                            .flat_map(|a| (0..k).flat_map(move |b| (0..k).map(move |c| vec![a, b, c])))
                            .collect()
                    };
                    for (ti, tap) in taps.iter().enumerate() {
                        let src: Vec<i32> =
                            pos.iter().zip(tap).map(|(p, t)| p + t - pad).collect();
                        if src.iter().any(|&s| s < 0 || s >= n) {
                            continue;
                        }
                        let src_idx = src.iter().fold(0usize, |acc, &s| acc * n as usize + s as usize);
                        let kidx = (co * c_in + ci) * (k as usize).pow(dim as u32) + ti;
                        acc += input.data()[ci * m + src_idx] * kernel.data()[kidx];
                    }
                }
                out[co * m + j] = acc;
            }
        }
        out
    }

    #[test]
    fn identity_kernel_copies_input() {
        let mut rng = RngSeed(1).rng();
        let x = Tensor::<f32>::uniform(&[1, 4, 4], 1.0, &mut rng);
        let k = Tensor::from_vec(&[1, 1, 1, 1], vec![1.0f32]).unwrap();
        let y = conv_same(&x, &k, None).unwrap();
        assert_eq!(y.data(), x.data());
        assert_eq!(y.shape(), x.shape());
    }

    #[test]
    fn ones_kernel_counts_taps() {
        let x = Tensor::<f32>::filled(&[1, 5, 5], 1.0);
        let k = Tensor::<f32>::filled(&[1, 1, 3, 3], 1.0);
        let y = conv_same(&x, &k, None).unwrap();
        let at = |r: usize, c: usize| y.data()[r * 5 + c];
        assert_eq!(at(2, 2), 9.0);
        assert_eq!(at(0, 0), 4.0);
        assert_eq!(at(0, 4), 4.0);
        assert_eq!(at(4, 0), 4.0);
        assert_eq!(at(4, 4), 4.0);
        assert_eq!(at(0, 2), 6.0);
        assert_eq!(at(2, 0), 6.0);
    }

    #[test]
    fn matches_reference_2d() {
        let mut rng = RngSeed(2).rng();
        let x = Tensor::<f64>::uniform(&[2, 6, 6], 1.0, &mut rng);
        let k = Tensor::<f64>::uniform(&[3, 2, 5, 5], 1.0, &mut rng);
        let b = Tensor::<f64>::uniform(&[3], 1.0, &mut rng);
        let y = conv_same(&x, &k, Some(&b)).unwrap();
        let want = conv_reference(&x, &k, Some(&b));
        for (a, w) in y.data().iter().zip(&want) {
            assert!((a - w).abs() < 1e-12);
        }
    }

    #[test]
    fn matches_reference_3d() {
        let mut rng = RngSeed(3).rng();
        let x = Tensor::<f64>::uniform(&[2, 4, 4, 4], 1.0, &mut rng);
        let k = Tensor::<f64>::uniform(&[2, 2, 3, 3, 3], 1.0, &mut rng);
        let y = conv_same(&x, &k, None).unwrap();
        let want = conv_reference(&x, &k, None);
        for (a, w) in y.data().iter().zip(&want) {
            assert!((a - w).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_bad_shapes() {
        let x = Tensor::<f32>::zeros(&[2, 4, 4]);
        let even = Tensor::<f32>::zeros(&[1, 2, 2, 2]);
        assert!(conv_same(&x, &even, None).is_err());
        let wrong_cin = Tensor::<f32>::zeros(&[1, 3, 3, 3]);
        assert!(conv_same(&x, &wrong_cin, None).is_err());
        let bad_bias = Tensor::<f32>::zeros(&[2]);
        let k = Tensor::<f32>::zeros(&[1, 2, 3, 3]);
        assert!(conv_same(&x, &k, Some(&bad_bias)).is_err());
    }

    /// Central finite differences against the analytic backward pass.
    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = RngSeed(4).rng();
        let x = Tensor::<f64>::uniform(&[2, 5, 5], 1.0, &mut rng);
        let k = Tensor::<f64>::uniform(&[2, 2, 3, 3], 1.0, &mut rng);
        let b = Tensor::<f64>::uniform(&[2], 1.0, &mut rng);
        // Scalar objective: weighted sum of outputs with fixed coefficients.
        let w = Tensor::<f64>::uniform(&[2 * 25], 1.0, &mut rng);
        let objective = |x: &Tensor<f64>, k: &Tensor<f64>, b: &Tensor<f64>| -> f64 {
            let y = conv_same(x, k, Some(b)).unwrap();
            y.data().iter().zip(w.data()).map(|(a, c)| a * c).sum()
        };
        let dout = Tensor::from_vec(&[2, 5, 5], w.data().to_vec()).unwrap();
        let (dk, db, dx) = conv_same_backward(&x, &k, &dout).unwrap();

        let h = 1e-6;
        let check = |analytic: &Tensor<f64>, param: &Tensor<f64>, which: usize| {
            for idx in [0usize, param.len() / 2, param.len() - 1] {
                let mut plus = param.clone();
                plus.data_mut()[idx] += h;
                let mut minus = param.clone();
                minus.data_mut()[idx] -= h;
                let (fp, fm) = match which {
                    0 => (objective(&plus, &k, &b), objective(&minus, &k, &b)),
                    1 => (objective(&x, &plus, &b), objective(&x, &minus, &b)),
                    _ => (objective(&x, &k, &plus), objective(&x, &k, &minus)),
                };
                let fd = (fp - fm) / (2.0 * h);
                let got = analytic.data()[idx];
                assert!(
                    (fd - got).abs() <= 1e-6 * (1.0 + fd.abs()),
                    "param group {which} idx {idx}: fd {fd} vs analytic {got}"
                );
            }
        };
        check(&dx, &x, 0);
        check(&dk, &k, 1);
        check(&db, &b, 2);
    }
}
