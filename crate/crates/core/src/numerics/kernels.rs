//! Forward and backward kernels over row-major slices.
//!
//! Every reduction runs sequentially in ascending index order, so a given
//! input always produces the same bits.

/// `c[m,n] = a[m,k] · b[k,n]`
pub fn matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    let mut c = vec![0.0; m * n];
    for i in 0..m {
        let ci = &mut c[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            let bp = &b[p * n..(p + 1) * n];
            for (cij, &bpj) in ci.iter_mut().zip(bp) {
                *cij += aip * bpj;
            }
        }
    }
    c
}

/// `[r,c] -> [c,r]`
pub fn transpose(a: &[f64], r: usize, c: usize) -> Vec<f64> {
    let mut out = vec![0.0; r * c];
    for i in 0..r {
        for j in 0..c {
            out[j * r + i] = a[i * c + j];
        }
    }
    out
}

/// `c[m,n] = a[m,k] · b[n,k]ᵀ`
pub fn matmul_bt(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    matmul(a, &transpose(b, n, k), m, k, n)
}

/// `c[m,n] = a[k,m]ᵀ · b[k,n]`
pub fn matmul_at(a: &[f64], b: &[f64], k: usize, m: usize, n: usize) -> Vec<f64> {
    matmul(&transpose(a, k, m), b, m, k, n)
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for (x, y) in a.iter().zip(b) {
        s += x * y;
    }
    s
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

/// Tanh-approximated GELU.
pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

pub fn gelu_grad(x: f64) -> f64 {
    let u = GELU_C * (x + GELU_A * x * x * x);
    let t = u.tanh();
    let du = GELU_C * (1.0 + 3.0 * GELU_A * x * x);
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du
}

/// `elu(x) + 1`, the positive feature map used by linear attention.
pub fn elu_plus_one(x: f64) -> f64 {
    if x > 0.0 {
        x + 1.0
    } else {
        x.exp()
    }
}

pub fn elu_plus_one_grad(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else {
        x.exp()
    }
}

/// Row-wise RMSNorm with a learned gain. Returns the output and the per-row
/// inverse RMS factors needed by the backward pass.
pub fn rmsnorm(x: &[f64], gain: &[f64], rows: usize, cols: usize, eps: f64) -> (Vec<f64>, Vec<f64>) {
    let mut out = vec![0.0; rows * cols];
    let mut inv = vec![0.0; rows];
    for i in 0..rows {
        let xi = &x[i * cols..(i + 1) * cols];
        let ms = dot(xi, xi) / cols as f64;
        let r = 1.0 / (ms + eps).sqrt();
        inv[i] = r;
        for j in 0..cols {
            out[i * cols + j] = xi[j] * r * gain[j];
        }
    }
    (out, inv)
}

/// Gradients of [`rmsnorm`] with respect to its input and gain.
pub fn rmsnorm_backward(
    x: &[f64],
    gain: &[f64],
    inv: &[f64],
    dy: &[f64],
    rows: usize,
    cols: usize,
) -> (Vec<f64>, Vec<f64>) {
    let mut dx = vec![0.0; rows * cols];
    let mut dgain = vec![0.0; cols];
    let mut dxhat = vec![0.0; cols];
    for i in 0..rows {
        let r = inv[i];
        let xi = &x[i * cols..(i + 1) * cols];
        let dyi = &dy[i * cols..(i + 1) * cols];
        let mut proj = 0.0;
        for j in 0..cols {
            let xhat = xi[j] * r;
            dgain[j] += dyi[j] * xhat;
            dxhat[j] = dyi[j] * gain[j];
            proj += dxhat[j] * xhat;
        }
        proj /= cols as f64;
        for j in 0..cols {
            dx[i * cols + j] = r * (dxhat[j] - xi[j] * r * proj);
        }
    }
    (dx, dgain)
}

/// Causal multi-head scaled dot-product attention.
///
/// `q`, `k`, `v` are `[t, d]` with heads laid out as contiguous column blocks.
/// Returns the `[t, d]` output and the per-head `[t, t]` attention weights
/// (zero above the diagonal).
pub fn causal_attention(q: &[f64], k: &[f64], v: &[f64], t: usize, d: usize, heads: usize) -> (Vec<f64>, Vec<Vec<f64>>) {
    let dh = d / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut out = vec![0.0; t * d];
    let mut probs = Vec::with_capacity(heads);
    let mut scores = vec![0.0; t];
    for h in 0..heads {
        let off = h * dh;
        let mut p = vec![0.0; t * t];
        for i in 0..t {
            let qi = &q[i * d + off..i * d + off + dh];
            for j in 0..=i {
                scores[j] = dot(qi, &k[j * d + off..j * d + off + dh]) * scale;
            }
            super::dist::softmax_into(&scores[..=i], &mut p[i * t..i * t + i + 1]);
            let oi = &mut out[i * d + off..i * d + off + dh];
            for j in 0..=i {
                let w = p[i * t + j];
                let vj = &v[j * d + off..j * d + off + dh];
                for (o, &x) in oi.iter_mut().zip(vj) {
                    *o += w * x;
                }
            }
        }
        probs.push(p);
    }
    (out, probs)
}

/// Gradients of [`causal_attention`] with respect to `q`, `k`, `v`.
#[allow(clippy::too_many_arguments)]
pub fn causal_attention_backward(
    q: &[f64],
    k: &[f64],
    v: &[f64],
    probs: &[Vec<f64>],
    dout: &[f64],
    t: usize,
    d: usize,
    heads: usize,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let dh = d / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut dq = vec![0.0; t * d];
    let mut dk = vec![0.0; t * d];
    let mut dv = vec![0.0; t * d];
    let mut dp = vec![0.0; t];
    for (h, p) in probs.iter().enumerate().take(heads) {
        let off = h * dh;
        for i in 0..t {
            let doi = &dout[i * d + off..i * d + off + dh];
            for j in 0..=i {
                dp[j] = dot(doi, &v[j * d + off..j * d + off + dh]);
                let w = p[i * t + j];
                let dvj = &mut dv[j * d + off..j * d + off + dh];
                for (g, &x) in dvj.iter_mut().zip(doi) {
                    *g += w * x;
                }
            }
            let mut inner = 0.0;
            for j in 0..=i {
                inner += dp[j] * p[i * t + j];
            }
            for j in 0..=i {
                let ds = p[i * t + j] * (dp[j] - inner) * scale;
                if ds == 0.0 {
                    continue;
                }
                for c in 0..dh {
                    dq[i * d + off + c] += ds * k[j * d + off + c];
                    dk[j * d + off + c] += ds * q[i * d + off + c];
                }
            }
        }
    }
    (dq, dk, dv)
}

/// Single-head causal linear attention with the `elu + 1` feature map:
/// `o_i = Σ_{j≤i} (φq_i·φk_j) v_j / Σ_{j≤i} φq_i·φk_j`.
///
/// Returns the output plus the feature maps and row normalizers for backward.
pub fn linear_attention(q: &[f64], k: &[f64], v: &[f64], t: usize, d: usize) -> LinearAttentionCache {
    let fq: Vec<f64> = q.iter().map(|&x| elu_plus_one(x)).collect();
    let fk: Vec<f64> = k.iter().map(|&x| elu_plus_one(x)).collect();
    let mut weights = vec![0.0; t * t];
    let mut norm = vec![0.0; t];
    let mut out = vec![0.0; t * d];
    for i in 0..t {
        let fqi = &fq[i * d..(i + 1) * d];
        let mut s = 0.0;
        for j in 0..=i {
            let a = dot(fqi, &fk[j * d..(j + 1) * d]);
            weights[i * t + j] = a;
            s += a;
        }
        norm[i] = s;
        let oi = &mut out[i * d..(i + 1) * d];
        for j in 0..=i {
            let w = weights[i * t + j] / s;
            for (o, &x) in oi.iter_mut().zip(&v[j * d..(j + 1) * d]) {
                *o += w * x;
            }
        }
    }
    LinearAttentionCache {
        out,
        fq,
        fk,
        weights,
        norm,
    }
}

#[derive(Debug, Clone)]
pub struct LinearAttentionCache {
    pub out: Vec<f64>,
    pub fq: Vec<f64>,
    pub fk: Vec<f64>,
    pub weights: Vec<f64>,
    pub norm: Vec<f64>,
}

pub fn linear_attention_backward(
    q: &[f64],
    k: &[f64],
    v: &[f64],
    cache: &LinearAttentionCache,
    dout: &[f64],
    t: usize,
    d: usize,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let mut dfq = vec![0.0; t * d];
    let mut dfk = vec![0.0; t * d];
    let mut dv = vec![0.0; t * d];
    for i in 0..t {
        let s = cache.norm[i];
        let doi = &dout[i * d..(i + 1) * d];
        let oi = &cache.out[i * d..(i + 1) * d];
        let do_o = dot(doi, oi);
        for j in 0..=i {
            let a = cache.weights[i * t + j];
            let vj = &v[j * d..(j + 1) * d];
            let dvj = &mut dv[j * d..(j + 1) * d];
            for (g, &x) in dvj.iter_mut().zip(doi) {
                *g += a / s * x;
            }
            let da = (dot(doi, vj) - do_o) / s;
            if da == 0.0 {
                continue;
            }
            for c in 0..d {
                dfq[i * d + c] += da * cache.fk[j * d + c];
                dfk[j * d + c] += da * cache.fq[i * d + c];
            }
        }
    }
    let dq = dfq.iter().zip(q).map(|(g, &x)| g * elu_plus_one_grad(x)).collect();
    let dk = dfk.iter().zip(k).map(|(g, &x)| g * elu_plus_one_grad(x)).collect();
    (dq, dk, dv)
}
