//! Forward and backward kernels on row-major slices.
//!
//! Backward functions accumulate (`+=`) into their gradient outputs unless
//! stated otherwise.

use crate::scalar::Scalar;

#[inline]
fn rm(cols: usize) -> (isize, isize) {
    (cols as isize, 1)
}

/// `y = x·w + b` with `x` rows×inp, `w` inp×out.
pub fn linear<T: Scalar>(x: &[T], rows: usize, inp: usize, w: &[T], b: &[T], out: usize, y: &mut [T]) {
    for r in 0..rows {
        y[r * out..(r + 1) * out].copy_from_slice(b);
    }
    T::gemm(rows, inp, out, T::one(), x, rm(inp), w, rm(out), T::one(), y, rm(out));
}

/// Gradients of [`linear`]. `dx`, when given, is accumulated.
#[allow(clippy::too_many_arguments)]
pub fn linear_backward<T: Scalar>(
    x: &[T],
    dy: &[T],
    rows: usize,
    inp: usize,
    out: usize,
    w: &[T],
    dw: Option<(&mut [T], &mut [T])>,
    dx: Option<&mut [T]>,
) {
    if let Some((dw, db)) = dw {
        // dw += xᵀ·dy
        T::gemm(inp, rows, out, T::one(), x, (1, inp as isize), dy, rm(out), T::one(), dw, rm(out));
        for r in 0..rows {
            for (g, &v) in db.iter_mut().zip(&dy[r * out..(r + 1) * out]) {
                *g += v;
            }
        }
    }
    if let Some(dx) = dx {
        // dx += dy·wᵀ
        T::gemm(rows, out, inp, T::one(), dy, rm(out), w, (1, out as isize), T::one(), dx, rm(inp));
    }
}

pub const LN_EPS: f64 = 1e-5;

pub fn layer_norm<T: Scalar>(
    x: &[T],
    rows: usize,
    d: usize,
    g: &[T],
    b: &[T],
    y: &mut [T],
    mean: &mut [T],
    rstd: &mut [T],
) {
    let n = T::from_usize(d).unwrap();
    let eps = T::from_f64_lossy(LN_EPS);
    for r in 0..rows {
        let xr = &x[r * d..(r + 1) * d];
        let m = xr.iter().copied().sum::<T>() / n;
        let var = xr.iter().map(|&v| (v - m) * (v - m)).sum::<T>() / n;
        let s = T::one() / (var + eps).sqrt();
        mean[r] = m;
        rstd[r] = s;
        for (i, yv) in y[r * d..(r + 1) * d].iter_mut().enumerate() {
            *yv = (xr[i] - m) * s * g[i] + b[i];
        }
    }
}

#[allow(clippy::too_many_arguments)]
pub fn layer_norm_backward<T: Scalar>(
    dy: &[T],
    x: &[T],
    mean: &[T],
    rstd: &[T],
    rows: usize,
    d: usize,
    g: &[T],
    dgb: Option<(&mut [T], &mut [T])>,
    dx: Option<&mut [T]>,
) {
    let n = T::from_usize(d).unwrap();
    if let Some((dg, db)) = dgb {
        for r in 0..rows {
            for i in 0..d {
                let xhat = (x[r * d + i] - mean[r]) * rstd[r];
                dg[i] += dy[r * d + i] * xhat;
                db[i] += dy[r * d + i];
            }
        }
    }
    if let Some(dx) = dx {
        for r in 0..rows {
            let (m, s) = (mean[r], rstd[r]);
            let mut sum_dxhat = T::zero();
            let mut sum_dxhat_xhat = T::zero();
            for i in 0..d {
                let dxhat = dy[r * d + i] * g[i];
                let xhat = (x[r * d + i] - m) * s;
                sum_dxhat += dxhat;
                sum_dxhat_xhat += dxhat * xhat;
            }
            let (a, c) = (sum_dxhat / n, sum_dxhat_xhat / n);
            for i in 0..d {
                let dxhat = dy[r * d + i] * g[i];
                let xhat = (x[r * d + i] - m) * s;
                dx[r * d + i] += s * (dxhat - a - xhat * c);
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Gelu,
    Relu,
}

impl Activation {
    pub fn apply<T: Scalar>(self, x: T) -> T {
        match self {
            Activation::Relu => x.max(T::zero()),
            Activation::Gelu => {
                let (c, k) = gelu_consts::<T>();
                let half = T::from_f64_lossy(0.5);
                half * x * (T::one() + (c * (x + k * x * x * x)).tanh())
            }
        }
    }

    pub fn derivative<T: Scalar>(self, x: T) -> T {
        match self {
            Activation::Relu => {
                if x > T::zero() {
                    T::one()
                } else {
                    T::zero()
                }
            }
            Activation::Gelu => {
                let (c, k) = gelu_consts::<T>();
                let half = T::from_f64_lossy(0.5);
                let three = T::from_f64_lossy(3.0);
                let t = (c * (x + k * x * x * x)).tanh();
                half * (T::one() + t) + half * x * (T::one() - t * t) * c * (T::one() + three * k * x * x)
            }
        }
    }
}

fn gelu_consts<T: Scalar>() -> (T, T) {
    (T::from_f64_lossy((2.0 / std::f64::consts::PI).sqrt()), T::from_f64_lossy(0.044715))
}

/// In-place numerically stable softmax of one row.
pub fn softmax_row<T: Scalar>(row: &mut [T]) {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    let mut sum = T::zero();
    for v in row.iter_mut() {
        *v = if *v == T::neg_infinity() { T::zero() } else { (*v - max).exp() };
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

/// Attention visibility: every row sees the first `prefix` positions, and
/// positions at or after the prefix also see earlier-or-equal positions.
#[inline]
pub fn visible(i: usize, j: usize, prefix: usize) -> bool {
    j < prefix || j <= i
}

/// Multi-head self-attention over packed `qkv` (S × 3d, q|k|v). Writes the
/// concatenated head outputs to `att` (S × d) and the attention weights
/// to `probs` (heads × S × S).
pub fn attention<T: Scalar>(qkv: &[T], s: usize, d: usize, heads: usize, prefix: usize, att: &mut [T], probs: &mut [T]) {
    let hd = d / heads;
    let scale = T::one() / T::from_usize(hd).unwrap().sqrt();
    let qs = (3 * d) as isize;
    for h in 0..heads {
        let p = &mut probs[h * s * s..(h + 1) * s * s];
        // scores = Q·Kᵀ
        T::gemm(s, hd, s, scale, &qkv[h * hd..], (qs, 1), &qkv[d + h * hd..], (1, qs), T::zero(), p, rm(s));
        for i in 0..s {
            let row = &mut p[i * s..(i + 1) * s];
            for (j, v) in row.iter_mut().enumerate() {
                if !visible(i, j, prefix) {
                    *v = T::neg_infinity();
                }
            }
            softmax_row(row);
        }
        T::gemm(s, s, hd, T::one(), p, rm(s), &qkv[2 * d + h * hd..], (qs, 1), T::zero(), &mut att[h * hd..], (d as isize, 1));
    }
}

/// Backward of [`attention`]; overwrites `dqkv`. `scratch` needs S×S entries.
#[allow(clippy::too_many_arguments)]
pub fn attention_backward<T: Scalar>(
    datt: &[T],
    qkv: &[T],
    probs: &[T],
    s: usize,
    d: usize,
    heads: usize,
    dqkv: &mut [T],
    scratch: &mut [T],
) {
    let hd = d / heads;
    let scale = T::one() / T::from_usize(hd).unwrap().sqrt();
    let qs = (3 * d) as isize;
    let ds = d as isize;
    dqkv.iter_mut().for_each(|v| *v = T::zero());
    for h in 0..heads {
        let p = &probs[h * s * s..(h + 1) * s * s];
        let dp = &mut scratch[..s * s];
        // dP = dO·Vᵀ
        T::gemm(s, hd, s, T::one(), &datt[h * hd..], (ds, 1), &qkv[2 * d + h * hd..], (1, qs), T::zero(), dp, rm(s));
        // dV = Pᵀ·dO
        T::gemm(s, s, hd, T::one(), p, (1, s as isize), &datt[h * hd..], (ds, 1), T::zero(), &mut dqkv[2 * d + h * hd..], (qs, 1));
        // dS = P ⊙ (dP − rowsum(dP ⊙ P)), folded with the score scale
        for i in 0..s {
            let pr = &p[i * s..(i + 1) * s];
            let dr = &mut dp[i * s..(i + 1) * s];
            let dot: T = pr.iter().zip(dr.iter()).map(|(&a, &b)| a * b).sum();
            for (dv, &pv) in dr.iter_mut().zip(pr) {
                *dv = pv * (*dv - dot) * scale;
            }
        }
        let dp = &scratch[..s * s];
        // dQ = dS·K, dK = dSᵀ·Q
        T::gemm(s, s, hd, T::one(), dp, rm(s), &qkv[d + h * hd..], (qs, 1), T::zero(), &mut dqkv[h * hd..], (qs, 1));
        T::gemm(s, s, hd, T::one(), dp, (1, s as isize), &qkv[h * hd..], (qs, 1), T::zero(), &mut dqkv[d + h * hd..], (qs, 1));
    }
}
