use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{glorot_uniform, Param, SeqBatch};
use crate::{par, Error, Result};

/// 1-D cross-correlation with symmetric zero padding.
///
/// `kernel` is laid out `[out_channel][in_channel][tap]`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Conv1d {
    in_channels: usize,
    out_channels: usize,
    kernel_size: usize,
    stride: usize,
    padding: usize,
    pub kernel: Param,
    pub bias: Param,
    #[serde(skip)]
    cache: Option<SeqBatch>,
}

#[derive(Clone, Debug)]
pub struct Conv1dGrads {
    pub input: SeqBatch,
    pub kernel: Vec<f64>,
    pub bias: Vec<f64>,
}

/// Output length of a padded, strided window sweep, or `None` if the window
/// does not fit.
pub(crate) fn conv_out_len(len: usize, kernel: usize, stride: usize, padding: usize) -> Option<usize> {
    let padded = len + 2 * padding;
    (padded >= kernel && stride > 0).then(|| (padded - kernel) / stride + 1)
}

/// Range of output positions `t` for which `t * stride + k - padding` lands
/// inside `0..len`.
#[inline]
fn valid_range(len: usize, out_len: usize, k: usize, stride: usize, padding: usize) -> (usize, usize) {
    let lo = if padding > k { (padding - k).div_ceil(stride) } else { 0 };
    let hi = if len + padding > k {
        ((len + padding - k - 1) / stride + 1).min(out_len)
    } else {
        0
    };
    (lo, hi.max(lo))
}

/// Copies `channels` rows of `len` into rows of `lp` with `pad` zeros in front.
fn pad_rows(x: &[f64], channels: usize, len: usize, pad: usize, lp: usize) -> Vec<f64> {
    let mut out = vec![0.0; channels * lp];
    for (c, row) in x.chunks_exact(len).take(channels).enumerate() {
        out[c * lp + pad..c * lp + pad + len].copy_from_slice(row);
    }
    out
}

const TILE_OUT: usize = 4;
const TILE_T: usize = 8;

/// `out[o][t] = bias[o] + sum_c sum_k w[o][c][k] * x[c][t + k]` over
/// pre-padded rows of length `lp`, for `t < out_len`.
///
/// Every element accumulates bias, then channels in order, then taps in
/// order, as the plain triple loop would; blocks of outputs by positions
/// stay in registers.
#[allow(clippy::too_many_arguments)]
fn correlate_s1(
    x: &[f64],
    lp: usize,
    w: &[f64],
    c_in: usize,
    k_size: usize,
    bias: &[f64],
    out: &mut [f64],
    out_len: usize,
) {
    #[cfg(target_arch = "x86_64")]
    if std::arch::is_x86_feature_detected!("avx2") {
        // SAFETY: the CPU supports AVX2.
        unsafe { correlate_s1_avx2(x, lp, w, c_in, k_size, bias, out, out_len) };
        return;
    }
    correlate_s1_body(x, lp, w, c_in, k_size, bias, out, out_len);
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2")]
#[allow(clippy::too_many_arguments)]
unsafe fn correlate_s1_avx2(
    x: &[f64],
    lp: usize,
    w: &[f64],
    c_in: usize,
    k_size: usize,
    bias: &[f64],
    out: &mut [f64],
    out_len: usize,
) {
    correlate_s1_body(x, lp, w, c_in, k_size, bias, out, out_len);
}

#[inline(always)]
#[allow(clippy::too_many_arguments)]
fn correlate_s1_body(
    x: &[f64],
    lp: usize,
    w: &[f64],
    c_in: usize,
    k_size: usize,
    bias: &[f64],
    out: &mut [f64],
    out_len: usize,
) {
    let c_out = bias.len();
    let scalar = |o: usize, t: usize| {
        let mut acc = bias[o];
        for c in 0..c_in {
            for k in 0..k_size {
                acc += w[(o * c_in + c) * k_size + k] * x[c * lp + t + k];
            }
        }
        acc
    };
    let full = c_out - c_out % TILE_OUT;
    let t_full = out_len - out_len % TILE_T;
    // Weights regrouped as [block][c][k][TILE_OUT].
    let mut wt = vec![0.0; full * c_in * k_size];
    for o in 0..full {
        for c in 0..c_in {
            for k in 0..k_size {
                wt[(((o / TILE_OUT) * c_in + c) * k_size + k) * TILE_OUT + o % TILE_OUT] = w[(o * c_in + c) * k_size + k];
            }
        }
    }
    for (blk, wb) in wt.chunks_exact(c_in * k_size * TILE_OUT).enumerate() {
        let o = blk * TILE_OUT;
        for t in (0..t_full).step_by(TILE_T) {
            let mut acc = [[0.0; TILE_T]; TILE_OUT];
            for (r, a) in acc.iter_mut().enumerate() {
                *a = [bias[o + r]; TILE_T];
            }
            for (c, wc) in wb.chunks_exact(k_size * TILE_OUT).enumerate() {
                let xc = &x[c * lp + t..c * lp + t + k_size - 1 + TILE_T];
                for (k, wk) in wc.chunks_exact(TILE_OUT).enumerate() {
                    let xs: &[f64; TILE_T] = xc[k..k + TILE_T].try_into().expect("tile width");
                    let wk: &[f64; TILE_OUT] = wk.try_into().expect("tile height");
                    for r in 0..TILE_OUT {
                        for i in 0..TILE_T {
                            acc[r][i] += wk[r] * xs[i];
                        }
                    }
                }
            }
            for (r, a) in acc.iter().enumerate() {
                out[(o + r) * out_len + t..(o + r) * out_len + t + TILE_T].copy_from_slice(a);
            }
        }
        for r in 0..TILE_OUT {
            for t in t_full..out_len {
                out[(o + r) * out_len + t] = scalar(o + r, t);
            }
        }
    }
    for o in full..c_out {
        for t in 0..out_len {
            out[o * out_len + t] = scalar(o, t);
        }
    }
}

/// Adds one example's kernel gradient, `g[o][c][k] += sum_t up[o][t] * x[c][t + k]`,
/// over pre-padded input rows of length `lp`. Each entry sums over `t` in order.
fn kernel_grad_s1(x: &[f64], lp: usize, up: &[f64], out_len: usize, c_in: usize, k_size: usize, g: &mut [f64]) {
    let cols = c_in * k_size;
    let c_out = up.len() / out_len;
    // Window matrix [t][c * k_size + k] and transposed upstream [t][o].
    let mut win = vec![0.0; out_len * cols];
    for (t, row) in win.chunks_exact_mut(cols).enumerate() {
        for c in 0..c_in {
            row[c * k_size..(c + 1) * k_size].copy_from_slice(&x[c * lp + t..c * lp + t + k_size]);
        }
    }
    let mut up_t = vec![0.0; out_len * c_out];
    for o in 0..c_out {
        for t in 0..out_len {
            up_t[t * c_out + o] = up[o * out_len + t];
        }
    }
    par::for_each_chunk_mut(g, TILE_OUT * cols, |blk, gb| {
        #[cfg(target_arch = "x86_64")]
        if std::arch::is_x86_feature_detected!("avx2") {
            // SAFETY: the CPU supports AVX2.
            unsafe { kernel_grad_block_avx2(&win, &up_t, c_out, out_len, cols, blk, gb) };
            return;
        }
        kernel_grad_block(&win, &up_t, c_out, out_len, cols, blk, gb);
    });
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2")]
unsafe fn kernel_grad_block_avx2(
    win: &[f64],
    up_t: &[f64],
    c_out: usize,
    out_len: usize,
    cols: usize,
    blk: usize,
    gb: &mut [f64],
) {
    kernel_grad_block(win, up_t, c_out, out_len, cols, blk, gb);
}

/// Rows `blk * TILE_OUT..` of the kernel gradient.
#[inline(always)]
fn kernel_grad_block(win: &[f64], up_t: &[f64], c_out: usize, out_len: usize, cols: usize, blk: usize, gb: &mut [f64]) {
    let col_full = cols - cols % TILE_T;
    let o0 = blk * TILE_OUT;
    let rows = gb.len() / cols;
    for j in (0..col_full).step_by(TILE_T) {
        let mut acc = [[0.0; TILE_T]; TILE_OUT];
        for (r, a) in acc.iter_mut().enumerate().take(rows) {
            a.copy_from_slice(&gb[r * cols + j..r * cols + j + TILE_T]);
        }
        for t in 0..out_len {
            let xs: &[f64; TILE_T] = win[t * cols + j..t * cols + j + TILE_T].try_into().expect("tile width");
            let us = &up_t[t * c_out + o0..t * c_out + o0 + rows];
            for (a, &u) in acc.iter_mut().zip(us) {
                for i in 0..TILE_T {
                    a[i] += u * xs[i];
                }
            }
        }
        for (r, a) in acc.iter().enumerate().take(rows) {
            gb[r * cols + j..r * cols + j + TILE_T].copy_from_slice(a);
        }
    }
    for r in 0..rows {
        for j in col_full..cols {
            let mut acc = gb[r * cols + j];
            for t in 0..out_len {
                acc += up_t[t * c_out + o0 + r] * win[t * cols + j];
            }
            gb[r * cols + j] = acc;
        }
    }
}

impl Conv1d {
    pub fn new<R: Rng + ?Sized>(
        in_channels: usize,
        out_channels: usize,
        kernel_size: usize,
        stride: usize,
        padding: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if in_channels == 0 || out_channels == 0 || kernel_size == 0 || stride == 0 {
            return Err(Error::invalid("conv channels, kernel size and stride must be positive"));
        }
        let n = out_channels * in_channels * kernel_size;
        let kernel = glorot_uniform(n, in_channels * kernel_size, out_channels * kernel_size, rng);
        Ok(Self {
            in_channels,
            out_channels,
            kernel_size,
            stride,
            padding,
            kernel: Param::new(kernel),
            bias: Param::new(vec![0.0; out_channels]),
            cache: None,
        })
    }

    pub fn from_kernel(
        in_channels: usize,
        out_channels: usize,
        kernel_size: usize,
        stride: usize,
        padding: usize,
        kernel: Vec<f64>,
        bias: Vec<f64>,
    ) -> Result<Self> {
        if kernel.len() != out_channels * in_channels * kernel_size || bias.len() != out_channels {
            return Err(Error::dim("conv kernel or bias has the wrong length"));
        }
        if kernel_size == 0 || stride == 0 {
            return Err(Error::invalid("conv kernel size and stride must be positive"));
        }
        Ok(Self {
            in_channels,
            out_channels,
            kernel_size,
            stride,
            padding,
            kernel: Param::new(kernel),
            bias: Param::new(bias),
            cache: None,
        })
    }

    pub fn in_channels(&self) -> usize {
        self.in_channels
    }

    pub fn out_channels(&self) -> usize {
        self.out_channels
    }

    pub fn param_count(&self) -> usize {
        self.kernel.len() + self.bias.len()
    }

    /// `(kernel_size, stride, padding)`
    pub fn geometry(&self) -> (usize, usize, usize) {
        (self.kernel_size, self.stride, self.padding)
    }

    pub fn output_len(&self, len: usize) -> Option<usize> {
        conv_out_len(len, self.kernel_size, self.stride, self.padding)
    }

    pub fn forward(&mut self, input: &SeqBatch) -> Result<SeqBatch> {
        let out = self.infer(input)?;
        self.cache = Some(input.clone());
        Ok(out)
    }

    pub fn infer(&self, input: &SeqBatch) -> Result<SeqBatch> {
        if input.channels() != self.in_channels {
            return Err(Error::dim(format!(
                "conv expects {} input channels, got {}",
                self.in_channels,
                input.channels()
            )));
        }
        let len = input.len();
        let out_len = self.output_len(len).ok_or_else(|| {
            Error::dim(format!(
                "kernel of {} taps does not fit a length-{len} input padded by {}",
                self.kernel_size, self.padding
            ))
        })?;
        let (c_in, c_out, k_size, s, p) =
            (self.in_channels, self.out_channels, self.kernel_size, self.stride, self.padding);
        let w = &self.kernel.value;
        let bias = &self.bias.value;
        let mut out = vec![0.0; input.batch() * c_out * out_len];
        if s == 1 {
            let lp = len + 2 * p;
            par::for_each_chunk_mut(&mut out, c_out * out_len, |b, block| {
                let x = pad_rows(input.example(b), c_in, len, p, lp);
                correlate_s1(&x, lp, w, c_in, k_size, bias, block, out_len);
            });
            return Ok(SeqBatch::from_parts(input.batch(), c_out, out_len, out));
        }
        // Each output element accumulates bias, then channels in order, then taps in order.
        par::for_each_chunk_mut(&mut out, c_out * out_len, |b, block| {
            let x = input.example(b);
            for o in 0..c_out {
                let row = &mut block[o * out_len..(o + 1) * out_len];
                row.fill(bias[o]);
                for c in 0..c_in {
                    let xc = &x[c * len..(c + 1) * len];
                    for k in 0..k_size {
                        let wk = w[(o * c_in + c) * k_size + k];
                        let (lo, hi) = valid_range(len, out_len, k, s, p);
                        for t in lo..hi {
                            row[t] += wk * xc[t * s + k - p];
                        }
                    }
                }
            }
        });
        Ok(SeqBatch::from_parts(input.batch(), c_out, out_len, out))
    }

    pub fn backward(&self, upstream: &SeqBatch) -> Result<Conv1dGrads> {
        let input = self
            .cache
            .as_ref()
            .ok_or_else(|| Error::State("conv backward called before forward".into()))?;
        let len = input.len();
        let out_len = self.output_len(len).expect("cached input passed forward");
        if upstream.batch() != input.batch()
            || upstream.channels() != self.out_channels
            || upstream.len() != out_len
        {
            return Err(Error::dim(format!(
                "conv upstream is {}x{}x{}, expected {}x{}x{out_len}",
                upstream.batch(),
                upstream.channels(),
                upstream.len(),
                input.batch(),
                self.out_channels
            )));
        }
        let (c_in, c_out, k_size, s, p) =
            (self.in_channels, self.out_channels, self.kernel_size, self.stride, self.padding);
        let batch = input.batch();
        let w = &self.kernel.value;

        let mut kernel_grad = vec![0.0; c_out * c_in * k_size];
        if s == 1 {
            let lp = len + 2 * p;
            for b in 0..batch {
                let xp = pad_rows(input.example(b), c_in, len, p, lp);
                kernel_grad_s1(&xp, lp, upstream.example(b), out_len, c_in, k_size, &mut kernel_grad);
            }
        } else {
            par::for_each_chunk_mut(&mut kernel_grad, c_in * k_size, |o, gk| {
                for b in 0..batch {
                    let x = input.example(b);
                    let up = &upstream.example(b)[o * out_len..(o + 1) * out_len];
                    for c in 0..c_in {
                        let xc = &x[c * len..(c + 1) * len];
                        for k in 0..k_size {
                            let (lo, hi) = valid_range(len, out_len, k, s, p);
                            gk[c * k_size + k] += (lo..hi).map(|t| up[t] * xc[t * s + k - p]).sum::<f64>();
                        }
                    }
                }
            });
        }

        let bias_grad = (0..c_out)
            .map(|o| {
                (0..batch)
                    .map(|b| upstream.example(b)[o * out_len..(o + 1) * out_len].iter().sum::<f64>())
                    .sum()
            })
            .collect();

        let mut input_grad = vec![0.0; batch * c_in * len];
        if s == 1 && p < k_size {
            // Full correlation of the upstream gradient with the flipped,
            // transposed kernel.
            let q = k_size - 1 - p;
            let lp = len + k_size - 1;
            let mut flipped = vec![0.0; c_in * c_out * k_size];
            for o in 0..c_out {
                for c in 0..c_in {
                    for k in 0..k_size {
                        flipped[(c * c_out + o) * k_size + (k_size - 1 - k)] = w[(o * c_in + c) * k_size + k];
                    }
                }
            }
            let zero_bias = vec![0.0; c_in];
            par::for_each_chunk_mut(&mut input_grad, c_in * len, |b, gx| {
                let mut up = vec![0.0; c_out * lp];
                for (o, src) in upstream.example(b).chunks_exact(out_len).enumerate() {
                    up[o * lp + q..o * lp + q + out_len].copy_from_slice(src);
                }
                correlate_s1(&up, lp, &flipped, c_out, k_size, &zero_bias, gx, len);
            });
        } else {
            par::for_each_chunk_mut(&mut input_grad, c_in * len, |b, gx| {
                let up = upstream.example(b);
                for o in 0..c_out {
                    let upo = &up[o * out_len..(o + 1) * out_len];
                    for c in 0..c_in {
                        let gxc = &mut gx[c * len..(c + 1) * len];
                        for k in 0..k_size {
                            let wk = w[(o * c_in + c) * k_size + k];
                            let (lo, hi) = valid_range(len, out_len, k, s, p);
                            for t in lo..hi {
                                gxc[t * s + k - p] += wk * upo[t];
                            }
                        }
                    }
                }
            });
        }

        Ok(Conv1dGrads {
            input: SeqBatch::from_parts(batch, c_in, len, input_grad),
            kernel: kernel_grad,
            bias: bias_grad,
        })
    }

    pub(crate) fn clear_cache(&mut self) {
        self.cache = None;
    }
}

/// Window maximum over each channel; backward routes to the first argmax.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MaxPool1d {
    kernel_size: usize,
    stride: usize,
    #[serde(skip)]
    cache: Option<PoolCache>,
}

#[derive(Clone, Debug)]
struct PoolCache {
    argmax: Vec<usize>,
    batch: usize,
    channels: usize,
    len: usize,
}

impl MaxPool1d {
    pub fn new(kernel_size: usize, stride: usize) -> Result<Self> {
        if kernel_size == 0 || stride == 0 {
            return Err(Error::invalid("pool kernel size and stride must be positive"));
        }
        Ok(Self {
            kernel_size,
            stride,
            cache: None,
        })
    }

    pub fn output_len(&self, len: usize) -> Option<usize> {
        conv_out_len(len, self.kernel_size, self.stride, 0)
    }

    /// `(kernel_size, stride)`
    pub fn geometry(&self) -> (usize, usize) {
        (self.kernel_size, self.stride)
    }

    pub fn forward(&mut self, input: &SeqBatch) -> Result<SeqBatch> {
        let (out, argmax) = self.pool(input)?;
        self.cache = Some(PoolCache {
            argmax,
            batch: input.batch(),
            channels: input.channels(),
            len: input.len(),
        });
        Ok(out)
    }

    pub fn infer(&self, input: &SeqBatch) -> Result<SeqBatch> {
        self.pool(input).map(|(out, _)| out)
    }

    fn pool(&self, input: &SeqBatch) -> Result<(SeqBatch, Vec<usize>)> {
        let len = input.len();
        let out_len = self.output_len(len).ok_or_else(|| {
            Error::dim(format!("pool window {} exceeds length {len}", self.kernel_size))
        })?;
        let rows = input.batch() * input.channels();
        let mut out = Vec::with_capacity(rows * out_len);
        let mut argmax = Vec::with_capacity(rows * out_len);
        for seq in input.data().chunks(len) {
            for t in 0..out_len {
                let start = t * self.stride;
                let mut best = start;
                for i in start + 1..start + self.kernel_size {
                    if seq[i] > seq[best] {
                        best = i;
                    }
                }
                out.push(seq[best]);
                argmax.push(best);
            }
        }
        Ok((
            SeqBatch::from_parts(input.batch(), input.channels(), out_len, out),
            argmax,
        ))
    }

    pub fn backward(&self, upstream: &SeqBatch) -> Result<SeqBatch> {
        let cache = self
            .cache
            .as_ref()
            .ok_or_else(|| Error::State("pool backward called before forward".into()))?;
        let out_len = upstream.len();
        if upstream.batch() * upstream.channels() * out_len != cache.argmax.len() {
            return Err(Error::dim("pool upstream does not match cached forward"));
        }
        let mut grad = vec![0.0; cache.batch * cache.channels * cache.len];
        for (row, ups) in upstream.data().chunks(out_len).enumerate() {
            let base = row * cache.len;
            for (t, &g) in ups.iter().enumerate() {
                grad[base + cache.argmax[row * out_len + t]] += g;
            }
        }
        Ok(SeqBatch::from_parts(cache.batch, cache.channels, cache.len, grad))
    }

    pub(crate) fn clear_cache(&mut self) {
        self.cache = None;
    }
}
