//! 3x3 convolution, stride 1, zero padding 1.
//!
//! Internally every sample is converted to a padded channels-last buffer and
//! the inner loops run over output channels. Each output value accumulates
//! its terms in a fixed `(tap, input channel)` order. An input channel of
//! exact zeros contributes exact-zero terms, so removing it leaves every
//! output bit-identical (sums are normalized to +0 on write-out).

use rand::Rng;
use rayon::prelude::*;

use super::{parallel_enabled, Tensor4};
use crate::error::{Error, Result};
use crate::scalar::Real;

const TAPS: usize = 9;

#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d<T> {
    pub in_channels: usize,
    pub out_channels: usize,
    /// Layout `[out][in][ky][kx]`.
    pub weight: Vec<T>,
    pub bias: Option<Vec<T>>,
}

#[derive(Debug, Clone)]
pub struct ConvGrads<T> {
    /// `None` when the input gradient was not requested.
    pub grad_x: Option<Tensor4<T>>,
    pub grad_weight: Vec<T>,
    pub grad_bias: Option<Vec<T>>,
}

impl<T: Real> Conv2d<T> {
    pub fn zeros(in_channels: usize, out_channels: usize, has_bias: bool) -> Self {
        Self {
            in_channels,
            out_channels,
            weight: vec![T::zero(); out_channels * in_channels * TAPS],
            bias: has_bias.then(|| vec![T::zero(); out_channels]),
        }
    }

    /// He-uniform initialization over fan-in `in_channels * 9`.
    pub fn he_uniform<R: Rng + ?Sized>(in_channels: usize, out_channels: usize, has_bias: bool, rng: &mut R) -> Self {
        let bound = (6.0 / (in_channels * TAPS) as f64).sqrt();
        let mut layer = Self::zeros(in_channels, out_channels, has_bias);
        for w in &mut layer.weight {
            *w = T::lit(rng.random_range(-bound..bound));
        }
        layer
    }

    pub fn weight_at(&self, o: usize, c: usize, ky: usize, kx: usize) -> T {
        self.weight[((o * self.in_channels + c) * 3 + ky) * 3 + kx]
    }

    pub fn weight_at_mut(&mut self, o: usize, c: usize, ky: usize, kx: usize) -> &mut T {
        &mut self.weight[((o * self.in_channels + c) * 3 + ky) * 3 + kx]
    }

    pub fn param_count(&self) -> usize {
        self.weight.len() + self.bias.as_ref().map_or(0, Vec::len)
    }

    /// Weights as `[tap][in][out]`.
    fn pack_forward(&self) -> Vec<T> {
        let (ci, co) = (self.in_channels, self.out_channels);
        let mut packed = vec![T::zero(); TAPS * ci * co];
        for o in 0..co {
            for c in 0..ci {
                for tap in 0..TAPS {
                    packed[(tap * ci + c) * co + o] = self.weight[(o * ci + c) * TAPS + tap];
                }
            }
        }
        packed
    }

    /// Flipped, transposed weights `[tap][out][in]` for the input gradient.
    fn pack_backward(&self) -> Vec<T> {
        let (ci, co) = (self.in_channels, self.out_channels);
        let mut packed = vec![T::zero(); TAPS * co * ci];
        for o in 0..co {
            for c in 0..ci {
                for tap in 0..TAPS {
                    packed[((TAPS - 1 - tap) * co + o) * ci + c] = self.weight[(o * ci + c) * TAPS + tap];
                }
            }
        }
        packed
    }

    fn check_input(&self, x: &Tensor4<T>) -> Result<()> {
        if x.channels() != self.in_channels {
            return Err(Error::Dimension(format!(
                "conv expects {} input channels, got {}",
                self.in_channels,
                x.channels()
            )));
        }
        Ok(())
    }

    pub fn forward(&self, x: &Tensor4<T>) -> Result<Tensor4<T>> {
        self.check_input(x)?;
        let [n, _, h, w] = x.dims();
        let packed = self.pack_forward();
        let (ci, co) = (self.in_channels, self.out_channels);
        let mut out = Tensor4::zeros([n, co, h, w]);
        let item_out = co * h * w;
        let run = |(i, dst): (usize, &mut [T])| {
            let padded = pad_hwc(x.item(i), ci, h, w);
            let mut hwc = vec![T::zero(); h * w * co];
            conv_hwc(&padded, h, w, ci, &packed, co, &mut hwc);
            hwc_to_chw(&hwc, co, h * w, dst);
            if let Some(b) = &self.bias {
                for (plane, &bv) in dst.chunks_mut(h * w).zip(b) {
                    for v in plane {
                        *v += bv;
                    }
                }
            }
        };
        if parallel_enabled() {
            out.as_mut_slice().par_chunks_mut(item_out).enumerate().for_each(run);
        } else {
            out.as_mut_slice().chunks_mut(item_out).enumerate().for_each(run);
        }
        Ok(out)
    }

    pub fn backward(&self, x: &Tensor4<T>, grad_out: &Tensor4<T>, need_grad_x: bool) -> Result<ConvGrads<T>> {
        self.check_input(x)?;
        let [n, _, h, w] = x.dims();
        if grad_out.dims() != [n, self.out_channels, h, w] {
            return Err(Error::Dimension(format!(
                "conv grad_out dims {:?}, expected {:?}",
                grad_out.dims(),
                [n, self.out_channels, h, w]
            )));
        }
        let (ci, co) = (self.in_channels, self.out_channels);
        let hw = h * w;

        // per-sample channels-last copies
        let prep = |i: usize| {
            let xin = pad_hwc(x.item(i), ci, h, w);
            let mut g = vec![T::zero(); hw * co];
            chw_to_hwc(grad_out.item(i), co, hw, &mut g);
            (xin, g)
        };
        let samples: Vec<(Vec<T>, Vec<T>)> = if parallel_enabled() {
            (0..n).into_par_iter().map(prep).collect()
        } else {
            (0..n).map(prep).collect()
        };

        let grad_x = if need_grad_x {
            let packed = self.pack_backward();
            let mut gx = Tensor4::zeros([n, ci, h, w]);
            let run = |(i, dst): (usize, &mut [T])| {
                let gpad = pad_hwc_from_hwc(&samples[i].1, co, h, w);
                let mut hwc = vec![T::zero(); hw * ci];
                conv_hwc(&gpad, h, w, co, &packed, ci, &mut hwc);
                hwc_to_chw(&hwc, ci, hw, dst);
            };
            if parallel_enabled() {
                gx.as_mut_slice().par_chunks_mut(ci * hw).enumerate().for_each(run);
            } else {
                gx.as_mut_slice().chunks_mut(ci * hw).enumerate().for_each(run);
            }
            Some(gx)
        } else {
            None
        };

        // weight gradient, accumulated over samples in batch order
        let rows: Vec<(usize, usize)> = (0..TAPS).flat_map(|t| (0..ci).map(move |c| (t, c))).collect();
        let compute_row = |&(tap, c): &(usize, usize)| {
            let mut acc = vec![T::zero(); co];
            for (xin, g) in &samples {
                weight_grad_row(xin, g, h, w, ci, co, tap, c, &mut acc);
            }
            acc
        };
        let grad_rows: Vec<Vec<T>> = if parallel_enabled() {
            rows.par_iter().map(compute_row).collect()
        } else {
            rows.iter().map(compute_row).collect()
        };
        let mut grad_weight = vec![T::zero(); co * ci * TAPS];
        for (&(tap, c), row) in rows.iter().zip(&grad_rows) {
            for (o, &v) in row.iter().enumerate() {
                grad_weight[(o * ci + c) * TAPS + tap] = v;
            }
        }

        let grad_bias = self.bias.as_ref().map(|_| {
            let mut gb = vec![T::zero(); co];
            for i in 0..n {
                for (o, plane) in grad_out.item(i).chunks(hw).enumerate() {
                    gb[o] += plane.iter().copied().sum::<T>();
                }
            }
            gb
        });

        Ok(ConvGrads {
            grad_x,
            grad_weight,
            grad_bias,
        })
    }
}

fn pad_hwc<T: Real>(chw: &[T], c: usize, h: usize, w: usize) -> Vec<T> {
    let wp = w + 2;
    let mut out = vec![T::zero(); (h + 2) * wp * c];
    for ch in 0..c {
        let plane = &chw[ch * h * w..(ch + 1) * h * w];
        for y in 0..h {
            for x in 0..w {
                out[((y + 1) * wp + x + 1) * c + ch] = plane[y * w + x];
            }
        }
    }
    out
}

fn pad_hwc_from_hwc<T: Real>(hwc: &[T], c: usize, h: usize, w: usize) -> Vec<T> {
    let wp = w + 2;
    let mut out = vec![T::zero(); (h + 2) * wp * c];
    for y in 0..h {
        let src = &hwc[y * w * c..(y + 1) * w * c];
        out[((y + 1) * wp + 1) * c..((y + 1) * wp + 1 + w) * c].copy_from_slice(src);
    }
    out
}

fn hwc_to_chw<T: Real>(hwc: &[T], c: usize, hw: usize, chw: &mut [T]) {
    for p in 0..hw {
        for ch in 0..c {
            chw[ch * hw + p] = hwc[p * c + ch];
        }
    }
}

fn chw_to_hwc<T: Real>(chw: &[T], c: usize, hw: usize, hwc: &mut [T]) {
    for ch in 0..c {
        for p in 0..hw {
            hwc[p * c + ch] = chw[ch * hw + p];
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Shape {
    h: usize,
    w: usize,
    cin: usize,
    cout: usize,
}

/// Register block of output channels: 256 bytes of accumulators.
macro_rules! with_block {
    ($t:ty, $f:ident, $($arg:expr),*) => {
        if <$t as Real>::BYTES == 4 {
            $f::<$t, 64>($($arg),*)
        } else {
            $f::<$t, 32>($($arg),*)
        }
    };
}

/// Picks the widest available instruction set. All paths use fused
/// multiply-add, which is exactly rounded, so they produce the same bits.
macro_rules! dispatch {
    ($body:ident, $avx512:ident, $avx2:ident, $($arg:expr),*) => {{
        #[cfg(target_arch = "x86_64")]
        {
            if std::arch::is_x86_feature_detected!("avx512f") && std::arch::is_x86_feature_detected!("fma") {
                // SAFETY: feature presence checked at runtime.
                return unsafe { $avx512::<T, N>($($arg),*) };
            }
            if std::arch::is_x86_feature_detected!("avx2") && std::arch::is_x86_feature_detected!("fma") {
                // SAFETY: feature presence checked at runtime.
                return unsafe { $avx2::<T, N>($($arg),*) };
            }
        }
        $body::<T, N>($($arg),*)
    }};
}

fn conv_hwc<T: Real>(inp: &[T], h: usize, w: usize, cin: usize, packed: &[T], cout: usize, out: &mut [T]) {
    let s = Shape { h, w, cin, cout };
    with_block!(T, conv_dispatch, inp, s, packed, out)
}

fn conv_dispatch<T: Real, const N: usize>(inp: &[T], s: Shape, packed: &[T], out: &mut [T]) {
    dispatch!(conv_body, conv_avx512, conv_avx2, inp, s, packed, out)
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx512f,fma")]
unsafe fn conv_avx512<T: Real, const N: usize>(inp: &[T], s: Shape, packed: &[T], out: &mut [T]) {
    conv_body::<T, N>(inp, s, packed, out)
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2,fma")]
unsafe fn conv_avx2<T: Real, const N: usize>(inp: &[T], s: Shape, packed: &[T], out: &mut [T]) {
    conv_body::<T, N>(inp, s, packed, out)
}

#[inline(always)]
fn conv_body<T: Real, const N: usize>(inp: &[T], s: Shape, packed: &[T], out: &mut [T]) {
    for y in 0..s.h {
        let mut x = 0;
        while x + 2 <= s.w {
            conv_pixels::<T, N, 2>(inp, s, packed, out, y, x);
            x += 2;
        }
        if x < s.w {
            conv_pixels::<T, N, 1>(inp, s, packed, out, y, x);
        }
    }
}

/// `P` horizontally adjacent output pixels starting at `(y, x0)`.
#[inline(always)]
fn conv_pixels<T: Real, const N: usize, const P: usize>(
    inp: &[T],
    s: Shape,
    packed: &[T],
    out: &mut [T],
    y: usize,
    x0: usize,
) {
    let Shape { w, cin, cout, .. } = s;
    let wp = w + 2;
    let mut o0 = 0;
    while o0 < cout {
        let len = N.min(cout - o0);
        let mut acc = [[T::zero(); N]; P];
        for ky in 0..3 {
            for kx in 0..3 {
                let tap = ky * 3 + kx;
                let base = ((y + ky) * wp + x0 + kx) * cin;
                let rows = &inp[base..base + P * cin];
                let wt = &packed[tap * cin * cout..(tap + 1) * cin * cout];
                if len == N {
                    for c in 0..cin {
                        let wr: &[T; N] = wt[c * cout + o0..c * cout + o0 + N].try_into().unwrap();
                        for p in 0..P {
                            let v = rows[p * cin + c];
                            for l in 0..N {
                                acc[p][l] = v.mul_add(wr[l], acc[p][l]);
                            }
                        }
                    }
                } else {
                    for c in 0..cin {
                        let wr = &wt[c * cout + o0..c * cout + o0 + len];
                        for p in 0..P {
                            let v = rows[p * cin + c];
                            for (a, &wv) in acc[p].iter_mut().zip(wr) {
                                *a = v.mul_add(wv, *a);
                            }
                        }
                    }
                }
            }
        }
        for (p, a) in acc.iter().enumerate() {
            let px = (y * w + x0 + p) * cout;
            // `+ 0` turns a -0 sum into +0, so exact-zero terms never show up in the bits
            for (d, &v) in out[px + o0..px + o0 + len].iter_mut().zip(&a[..len]) {
                *d = v + T::zero();
            }
        }
        o0 += N;
    }
}

/// `acc[o] += Σ_p xin[p + tap, c] · g[p, o]` over all pixels of one sample.
#[allow(clippy::too_many_arguments)]
fn weight_grad_row<T: Real>(
    xin: &[T],
    g: &[T],
    h: usize,
    w: usize,
    cin: usize,
    cout: usize,
    tap: usize,
    c: usize,
    acc: &mut [T],
) {
    let s = Shape { h, w, cin, cout };
    with_block!(T, wgrad_dispatch, xin, g, s, tap, c, acc)
}

fn wgrad_dispatch<T: Real, const N: usize>(xin: &[T], g: &[T], s: Shape, tap: usize, c: usize, acc: &mut [T]) {
    dispatch!(wgrad_body, wgrad_avx512, wgrad_avx2, xin, g, s, tap, c, acc)
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx512f,fma")]
unsafe fn wgrad_avx512<T: Real, const N: usize>(xin: &[T], g: &[T], s: Shape, tap: usize, c: usize, acc: &mut [T]) {
    wgrad_body::<T, N>(xin, g, s, tap, c, acc)
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2,fma")]
unsafe fn wgrad_avx2<T: Real, const N: usize>(xin: &[T], g: &[T], s: Shape, tap: usize, c: usize, acc: &mut [T]) {
    wgrad_body::<T, N>(xin, g, s, tap, c, acc)
}

#[inline(always)]
fn wgrad_body<T: Real, const N: usize>(xin: &[T], g: &[T], s: Shape, tap: usize, c: usize, acc: &mut [T]) {
    let Shape { h, w, cin, cout } = s;
    let (ky, kx) = (tap / 3, tap % 3);
    let wp = w + 2;
    let mut o0 = 0;
    while o0 < cout {
        let len = N.min(cout - o0);
        let mut reg = [T::zero(); N];
        reg[..len].copy_from_slice(&acc[o0..o0 + len]);
        for y in 0..h {
            for x in 0..w {
                let v = xin[((y + ky) * wp + x + kx) * cin + c];
                let p = y * w + x;
                if len == N {
                    let gr: &[T; N] = g[p * cout + o0..p * cout + o0 + N].try_into().unwrap();
                    for l in 0..N {
                        reg[l] = v.mul_add(gr[l], reg[l]);
                    }
                } else {
                    for (r, &gv) in reg.iter_mut().zip(&g[p * cout + o0..p * cout + o0 + len]) {
                        *r = v.mul_add(gv, *r);
                    }
                }
            }
        }
        acc[o0..o0 + len].copy_from_slice(&reg[..len]);
        o0 += N;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Direct six-loop convolution.
    fn naive(x: &Tensor4<f64>, layer: &Conv2d<f64>) -> Tensor4<f64> {
        let [n, ci, h, w] = x.dims();
        let co = layer.out_channels;
        Tensor4::from_fn([n, co, h, w], |[b, o, y, xx]| {
            let mut s = layer.bias.as_ref().map_or(0.0, |bv| bv[o]);
            for c in 0..ci {
                for ky in 0..3 {
                    for kx in 0..3 {
                        let (iy, ix) = (y as isize + ky as isize - 1, xx as isize + kx as isize - 1);
                        if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                            continue;
                        }
                        s += x[[b, c, iy as usize, ix as usize]] * layer.weight_at(o, c, ky, kx);
                    }
                }
            }
            s
        })
    }

    #[test]
    fn ones_kernel_counts_taps() {
        let x = Tensor4::from_vec([1, 1, 3, 3], vec![1.0f32; 9]).unwrap();
        let mut layer = Conv2d::<f32>::zeros(1, 1, false);
        layer.weight.fill(1.0);
        let y = layer.forward(&x).unwrap();
        assert_eq!(y.as_slice(), &[4.0, 6.0, 4.0, 6.0, 9.0, 6.0, 4.0, 6.0, 4.0]);
    }

    #[test]
    fn zero_weights_zero_output() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let x = Tensor4::from_fn([2, 3, 4, 4], |_| rng.random_range(-1.0..1.0f32));
        let y = Conv2d::<f32>::zeros(3, 5, false).forward(&x).unwrap();
        assert!(y.as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn matches_direct_convolution() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        // 20 output channels exercises both the full-lane and remainder paths
        let mut layer = Conv2d::<f64>::he_uniform(2, 20, true, &mut rng);
        for b in layer.bias.as_mut().unwrap() {
            *b = rng.random_range(-1.0..1.0);
        }
        let x = Tensor4::from_fn([2, 2, 5, 5], |_| rng.random_range(-1.0..1.0));
        let fast = layer.forward(&x).unwrap();
        assert!(fast.max_abs_diff(&naive(&x, &layer)) < 1e-12);

        let layer32 = Conv2d::<f32> {
            in_channels: 2,
            out_channels: 20,
            weight: layer.weight.iter().map(|&v| v as f32).collect(),
            bias: layer.bias.as_ref().map(|b| b.iter().map(|&v| v as f32).collect()),
        };
        let fast32 = layer32.forward(&x.cast::<f32>()).unwrap();
        assert!(fast32.cast::<f64>().max_abs_diff(&naive(&x, &layer)) < 1e-6);
    }

    #[test]
    fn single_pixel_gradient_picks_input_window() {
        let x = Tensor4::from_fn([1, 1, 3, 3], |[_, _, h, w]| (h * 3 + w + 1) as f64);
        let layer = Conv2d::<f64>::zeros(1, 1, false);
        let mut g = Tensor4::zeros([1, 1, 3, 3]);
        g[[0, 0, 1, 1]] = 1.0;
        let grads = layer.backward(&x, &g, true).unwrap();
        assert_eq!(grads.grad_weight, x.as_slice().to_vec());
    }

    #[test]
    fn zero_upstream_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let layer = Conv2d::<f64>::he_uniform(3, 4, true, &mut rng);
        let x = Tensor4::from_fn([2, 3, 4, 4], |_| rng.random_range(-1.0..1.0));
        let grads = layer.backward(&x, &Tensor4::zeros([2, 4, 4, 4]), true).unwrap();
        assert!(grads.grad_weight.iter().all(|&v| v == 0.0));
        assert!(grads.grad_bias.unwrap().iter().all(|&v| v == 0.0));
        assert!(grads.grad_x.unwrap().as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn channel_mismatch_is_rejected() {
        let layer = Conv2d::<f32>::zeros(2, 2, false);
        assert!(layer.forward(&Tensor4::zeros([1, 3, 2, 2])).is_err());
    }
}
