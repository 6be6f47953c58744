//! Channel-major 1-D layer kernels with hand-written backward passes.
//!
//! Activations are `[channels][len]` flattened row-major.

pub const INSTANCE_NORM_EPS: f64 = 1e-5;

#[inline]
pub fn axpy(y: &mut [f64], a: f64, x: &[f64]) {
    for (yv, xv) in y.iter_mut().zip(x) {
        *yv += a * xv;
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [0.0f64; 4];
    let chunks = n / 4;
    for c in 0..chunks {
        let i = 4 * c;
        acc[0] += a[i] * b[i];
        acc[1] += a[i + 1] * b[i + 1];
        acc[2] += a[i + 2] * b[i + 2];
        acc[3] += a[i + 3] * b[i + 3];
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for i in 4 * chunks..n {
        s += a[i] * b[i];
    }
    s
}

/// Geometry of a same-padded dilated convolution.
#[derive(Clone, Copy, Debug)]
pub struct ConvGeom {
    pub cin: usize,
    pub cout: usize,
    pub kernel: usize,
    pub dilation: usize,
    pub len: usize,
}

impl ConvGeom {
    fn pad_left(&self) -> isize {
        (self.dilation * (self.kernel - 1) / 2) as isize
    }

    /// For tap `j`: input offset and the output range `[t0, t1)` it touches.
    #[inline]
    fn tap(&self, j: usize) -> Option<(isize, usize, usize)> {
        let off = (j * self.dilation) as isize - self.pad_left();
        let len = self.len as isize;
        let t0 = (-off).max(0);
        let t1 = (len - off).min(len);
        (t1 > t0).then_some((off, t0 as usize, t1 as usize))
    }
}

/// `y[o][t] = b[o] + Σ_i Σ_j w[o][i][j] · x[i][t + j·dil − pad]`, optional ReLU.
pub fn conv1d_forward(g: &ConvGeom, x: &[f64], w: &[f64], b: &[f64], relu: bool) -> Vec<f64> {
    let len = g.len;
    let mut y = vec![0.0; g.cout * len];
    for o in 0..g.cout {
        let yo = &mut y[o * len..(o + 1) * len];
        yo.fill(b[o]);
        for i in 0..g.cin {
            let xi = &x[i * len..(i + 1) * len];
            for j in 0..g.kernel {
                let wv = w[(o * g.cin + i) * g.kernel + j];
                if let Some((off, t0, t1)) = g.tap(j) {
                    let s0 = (t0 as isize + off) as usize;
                    axpy(&mut yo[t0..t1], wv, &xi[s0..s0 + (t1 - t0)]);
                }
            }
        }
        if relu {
            yo.iter_mut().for_each(|v| *v = v.max(0.0));
        }
    }
    y
}

/// Backward of [`conv1d_forward`]. `dy` is the gradient w.r.t. the
/// (post-activation) output and is masked in place when `relu` is set.
/// Returns `dx` when `need_dx`.
#[allow(clippy::too_many_arguments)]
pub fn conv1d_backward(
    g: &ConvGeom,
    x: &[f64],
    w: &[f64],
    y: &[f64],
    dy: &mut [f64],
    relu: bool,
    dw: &mut [f64],
    db: &mut [f64],
    need_dx: bool,
) -> Option<Vec<f64>> {
    let len = g.len;
    if relu {
        for (d, v) in dy.iter_mut().zip(y) {
            if *v <= 0.0 {
                *d = 0.0;
            }
        }
    }
    let mut dx = need_dx.then(|| vec![0.0; g.cin * len]);
    for o in 0..g.cout {
        let dyo = &dy[o * len..(o + 1) * len];
        db[o] += dyo.iter().sum::<f64>();
        for i in 0..g.cin {
            let xi = &x[i * len..(i + 1) * len];
            for j in 0..g.kernel {
                let widx = (o * g.cin + i) * g.kernel + j;
                if let Some((off, t0, t1)) = g.tap(j) {
                    let s0 = (t0 as isize + off) as usize;
                    let n = t1 - t0;
                    dw[widx] += dot(&dyo[t0..t1], &xi[s0..s0 + n]);
                    if let Some(dx) = dx.as_mut() {
                        axpy(&mut dx[i * len + s0..i * len + s0 + n], w[widx], &dyo[t0..t1]);
                    }
                }
            }
        }
    }
    dx
}

/// Per-channel normalization to zero mean and unit variance along time.
/// Returns the output and the per-channel inverse standard deviations.
pub fn instance_norm_forward(x: &[f64], channels: usize, len: usize) -> (Vec<f64>, Vec<f64>) {
    let mut y = vec![0.0; channels * len];
    let mut inv = Vec::with_capacity(channels);
    for c in 0..channels {
        let xc = &x[c * len..(c + 1) * len];
        let m = xc.iter().sum::<f64>() / len as f64;
        let var = xc.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / len as f64;
        let s = 1.0 / (var + INSTANCE_NORM_EPS).sqrt();
        for (yv, xv) in y[c * len..(c + 1) * len].iter_mut().zip(xc) {
            *yv = (xv - m) * s;
        }
        inv.push(s);
    }
    (y, inv)
}

pub fn instance_norm_backward(y: &[f64], inv_std: &[f64], dy: &[f64], channels: usize, len: usize) -> Vec<f64> {
    let mut dx = vec![0.0; channels * len];
    let n = len as f64;
    for c in 0..channels {
        let yc = &y[c * len..(c + 1) * len];
        let dyc = &dy[c * len..(c + 1) * len];
        let mean_dy = dyc.iter().sum::<f64>() / n;
        let mean_dyy = dot(dyc, yc) / n;
        for t in 0..len {
            dx[c * len + t] = inv_std[c] * (dyc[t] - mean_dy - yc[t] * mean_dyy);
        }
    }
    dx
}

/// Max pooling with window and stride 2; `arg[t]` is true when the right
/// element won.
pub fn maxpool2_forward(x: &[f64], channels: usize, len: usize) -> (Vec<f64>, Vec<bool>) {
    let out = len / 2;
    let mut y = Vec::with_capacity(channels * out);
    let mut arg = Vec::with_capacity(channels * out);
    for c in 0..channels {
        let xc = &x[c * len..(c + 1) * len];
        for t in 0..out {
            let (a, b) = (xc[2 * t], xc[2 * t + 1]);
            let right = b > a;
            y.push(if right { b } else { a });
            arg.push(right);
        }
    }
    (y, arg)
}

pub fn maxpool2_backward(arg: &[bool], dy: &[f64], channels: usize, len: usize) -> Vec<f64> {
    let out = len / 2;
    let mut dx = vec![0.0; channels * len];
    for c in 0..channels {
        for t in 0..out {
            let k = c * out + t;
            let src = 2 * t + usize::from(arg[k]);
            dx[c * len + src] = dy[k];
        }
    }
    dx
}

/// Row-wise dense layer: `y[r] = W x[r] + b`, `W` is `[out][in]`.
pub fn dense_forward(x: &[f64], rows: usize, din: usize, w: &[f64], b: &[f64], dout: usize, relu: bool) -> Vec<f64> {
    let mut y = vec![0.0; rows * dout];
    for r in 0..rows {
        let xr = &x[r * din..(r + 1) * din];
        for o in 0..dout {
            let mut v = b[o] + dot(&w[o * din..(o + 1) * din], xr);
            if relu && v < 0.0 {
                v = 0.0;
            }
            y[r * dout + o] = v;
        }
    }
    y
}

/// Backward of [`dense_forward`]; `dy` is masked in place for ReLU.
#[allow(clippy::too_many_arguments)]
pub fn dense_backward(
    x: &[f64],
    rows: usize,
    din: usize,
    w: &[f64],
    dout: usize,
    y: &[f64],
    dy: &mut [f64],
    relu: bool,
    dw: &mut [f64],
    db: &mut [f64],
    need_dx: bool,
) -> Option<Vec<f64>> {
    if relu {
        for (d, v) in dy.iter_mut().zip(y) {
            if *v <= 0.0 {
                *d = 0.0;
            }
        }
    }
    let mut dx = need_dx.then(|| vec![0.0; rows * din]);
    for r in 0..rows {
        let xr = &x[r * din..(r + 1) * din];
        for o in 0..dout {
            let d = dy[r * dout + o];
            if d == 0.0 {
                continue;
            }
            db[o] += d;
            axpy(&mut dw[o * din..(o + 1) * din], d, xr);
            if let Some(dx) = dx.as_mut() {
                axpy(&mut dx[r * din..(r + 1) * din], d, &w[o * din..(o + 1) * din]);
            }
        }
    }
    dx
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn conv_same_padding_identity_kernel() {
        let g = ConvGeom {
            cin: 1,
            cout: 1,
            kernel: 3,
            dilation: 2,
            len: 6,
        };
        let x = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let y = conv1d_forward(&g, &x, &[0.0, 1.0, 0.0], &[0.0], false);
        assert_eq!(y, x.to_vec());
        // left tap with dilation 2 reads t - 2 (zero padded)
        let y = conv1d_forward(&g, &x, &[1.0, 0.0, 0.0], &[0.5], false);
        assert_eq!(y, vec![0.5, 0.5, 1.5, 2.5, 3.5, 4.5]);
    }

    #[test]
    fn instance_norm_moments() {
        let x: Vec<f64> = (0..200).map(|i| ((i * 37 % 11) as f64) * 0.3 + (i / 100) as f64 * 5.0).collect();
        let (y, _) = instance_norm_forward(&x, 2, 100);
        for c in 0..2 {
            let yc = &y[c * 100..(c + 1) * 100];
            let m = yc.iter().sum::<f64>() / 100.0;
            let v = yc.iter().map(|a| (a - m).powi(2)).sum::<f64>() / 100.0;
            assert!(m.abs() < 1e-4 && (v - 1.0).abs() < 1e-4, "{m} {v}");
        }
    }

    #[test]
    fn maxpool_routes_gradient() {
        let (y, arg) = maxpool2_forward(&[1.0, 3.0, 5.0, 2.0, 0.0], 1, 5);
        assert_eq!(y, vec![3.0, 5.0]);
        let dx = maxpool2_backward(&arg, &[10.0, 20.0], 1, 5);
        assert_eq!(dx, vec![0.0, 10.0, 20.0, 0.0, 0.0]);
    }

    #[test]
    fn dot_matches_naive() {
        let a: Vec<f64> = (0..13).map(|i| i as f64 * 0.5).collect();
        let b: Vec<f64> = (0..13).map(|i| 1.0 - i as f64).collect();
        let naive: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
        assert!((dot(&a, &b) - naive).abs() < 1e-12);
    }
}
