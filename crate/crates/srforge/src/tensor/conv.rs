//! Grouped 2-D convolution, forward and backward.
//!
//! The kernels copy each batch item into a zero-padded f64 staging buffer and
//! accumulate in f64 throughout, so results are identical whatever the element
//! type's precision allows. Work is split over disjoint output regions with a
//! fixed reduction order per element, which keeps results bitwise identical
//! for any thread count.

use super::{Scalar, Shape, Tensor};
use crate::{Error, Result};
use rayon::prelude::*;

/// Geometry of a grouped convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    /// (kh, kw)
    pub kernel: (usize, usize),
    pub stride: usize,
    pub padding: usize,
    pub groups: usize,
}

impl ConvSpec {
    pub fn new(in_channels: usize, out_channels: usize, kernel: usize) -> Self {
        ConvSpec {
            in_channels,
            out_channels,
            kernel: (kernel, kernel),
            stride: 1,
            padding: kernel / 2,
            groups: 1,
        }
    }

    pub fn with_stride(mut self, stride: usize) -> Self {
        self.stride = stride;
        self
    }

    pub fn with_padding(mut self, padding: usize) -> Self {
        self.padding = padding;
        self
    }

    pub fn with_groups(mut self, groups: usize) -> Self {
        self.groups = groups;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.in_channels == 0 || self.out_channels == 0 {
            return Err(Error::InvalidConfig("conv: zero channel count".into()));
        }
        if self.kernel.0 == 0 || self.kernel.1 == 0 || self.stride == 0 || self.groups == 0 {
            return Err(Error::InvalidConfig("conv: kernel, stride and groups must be positive".into()));
        }
        if self.in_channels % self.groups != 0 || self.out_channels % self.groups != 0 {
            return Err(Error::InvalidConfig(format!(
                "conv: groups {} must divide in_channels {} and out_channels {}",
                self.groups, self.in_channels, self.out_channels
            )));
        }
        Ok(())
    }

    /// Weight layout: (out_channels, in_channels/groups, kh, kw).
    pub fn weight_shape(&self) -> Shape {
        Shape::new(
            self.out_channels,
            self.in_channels / self.groups,
            self.kernel.0,
            self.kernel.1,
        )
    }

    pub fn output_shape(&self, input: Shape) -> Result<Shape> {
        self.validate()?;
        if input.c != self.in_channels {
            return Err(Error::ShapeMismatch {
                op: "conv2d",
                detail: format!("input has {} channels, spec expects {}", input.c, self.in_channels),
            });
        }
        let (kh, kw) = self.kernel;
        let ph = input.h + 2 * self.padding;
        let pw = input.w + 2 * self.padding;
        if ph < kh || pw < kw {
            return Err(Error::ShapeMismatch {
                op: "conv2d",
                detail: format!("padded input {}x{} smaller than kernel {}x{}", ph, pw, kh, kw),
            });
        }
        Ok(Shape::new(
            input.n,
            self.out_channels,
            (ph - kh) / self.stride + 1,
            (pw - kw) / self.stride + 1,
        ))
    }
}

/// Zero-padded f64 copy of all channels of one batch item.
struct Padded {
    pw: usize,
    per_c: usize,
    data: Vec<f64>,
}

impl Padded {
    fn build<S: Scalar>(src: &Tensor<S>, n: usize, pad_h: usize, pad_w: usize) -> Padded {
        let s = src.shape();
        let ph = s.h + 2 * pad_h;
        // Row stride rounded up to eight values so vector loads at row starts
        // stay within a cache line; the extra columns hold zeros.
        let pw = (s.w + 2 * pad_w).next_multiple_of(8);
        let per_c = ph * pw;
        let mut data = vec![0.0f64; s.c * per_c];
        for c in 0..s.c {
            let plane = src.plane(n, c);
            for y in 0..s.h {
                let dst = &mut data[c * per_c + (y + pad_h) * pw + pad_w..][..s.w];
                let srow = &plane[y * s.w..][..s.w];
                for (d, &v) in dst.iter_mut().zip(srow) {
                    *d = v.to_f64();
                }
            }
        }
        Padded { pw, per_c, data }
    }

    #[inline(always)]
    fn row(&self, c: usize, y: usize) -> &[f64] {
        &self.data[c * self.per_c + y * self.pw..][..self.pw]
    }

    #[inline(always)]
    fn plane(&self, c: usize) -> &[f64] {
        &self.data[c * self.per_c..(c + 1) * self.per_c]
    }
}

/// AVX-512 variants of the two fused 3x3 kernels. Eight-lane f64 vectors with
/// masked tails; the accumulation order is fixed, so results do not depend on
/// the thread count or the mask shape.
#[cfg(all(target_arch = "x86_64", target_feature = "avx512f"))]
mod avx512 {
    #[cfg(target_arch = "x86_64")]
    use std::arch::x86_64::*;

    #[inline(always)]
    unsafe fn tail_mask(valid: usize) -> __mmask8 {
        if valid >= 8 {
            0xff
        } else {
            ((1u16 << valid) - 1) as __mmask8
        }
    }

    /// One eight-lane strip of two adjacent output rows for FOUR output
    /// channels of the same group. Each source load feeds eight FMAs, so the
    /// kernel stays FMA-bound even when unaligned loads split cache lines.
    ///
    /// # Safety
    /// As for [`conv3x3_rows2`]; additionally `wq` must hold four kernel
    /// pointers each covering `icg * 9` values, and when `FULL` is set all
    /// eight lanes at `ox` must be valid output columns.
    #[target_feature(enable = "avx512f")]
    #[allow(clippy::too_many_arguments)]
    unsafe fn quad_strip<const FULL: bool>(
        out: [*mut f64; 4],
        row_off: usize,
        bias: [f64; 4],
        pin_group: &[f64],
        per_c: usize,
        pw: usize,
        icg: usize,
        oy: usize,
        ox: usize,
        m: __mmask8,
        wq: [*const f64; 4],
    ) {
        let mut a0 = _mm512_set1_pd(bias[0]);
        let mut a1 = _mm512_set1_pd(bias[1]);
        let mut a2 = _mm512_set1_pd(bias[2]);
        let mut a3 = _mm512_set1_pd(bias[3]);
        let mut b0 = a0;
        let mut b1 = a1;
        let mut b2 = a2;
        let mut b3 = a3;
        for i in 0..icg {
            let plane = pin_group.as_ptr().add(i * per_c);
            let wof = i * 9;
            for ky in 0..3 {
                let row0 = plane.add((oy + ky) * pw + ox);
                let row1 = row0.add(pw);
                for kx in 0..3 {
                    let (s0, s1) = if FULL {
                        (_mm512_loadu_pd(row0.add(kx)), _mm512_loadu_pd(row1.add(kx)))
                    } else {
                        (
                            _mm512_maskz_loadu_pd(m, row0.add(kx)),
                            _mm512_maskz_loadu_pd(m, row1.add(kx)),
                        )
                    };
                    let t = wof + ky * 3 + kx;
                    let w0 = _mm512_set1_pd(*wq[0].add(t));
                    a0 = _mm512_fmadd_pd(s0, w0, a0);
                    b0 = _mm512_fmadd_pd(s1, w0, b0);
                    let w1 = _mm512_set1_pd(*wq[1].add(t));
                    a1 = _mm512_fmadd_pd(s0, w1, a1);
                    b1 = _mm512_fmadd_pd(s1, w1, b1);
                    let w2 = _mm512_set1_pd(*wq[2].add(t));
                    a2 = _mm512_fmadd_pd(s0, w2, a2);
                    b2 = _mm512_fmadd_pd(s1, w2, b2);
                    let w3 = _mm512_set1_pd(*wq[3].add(t));
                    a3 = _mm512_fmadd_pd(s0, w3, a3);
                    b3 = _mm512_fmadd_pd(s1, w3, b3);
                }
            }
        }
        for (j, (ra, rb)) in [(a0, b0), (a1, b1), (a2, b2), (a3, b3)].into_iter().enumerate() {
            let pa = out[j].add(ox);
            let pb = out[j].add(row_off + ox);
            if FULL {
                _mm512_storeu_pd(pa, ra);
                _mm512_storeu_pd(pb, rb);
            } else {
                _mm512_mask_storeu_pd(pa, m, ra);
                _mm512_mask_storeu_pd(pb, m, rb);
            }
        }
    }

    /// Two adjacent output rows of a 3x3 stride-1 convolution for four output
    /// channels at once, written straight into per-channel f64 row buffers
    /// (`row_off` apart per channel).
    ///
    /// # Safety
    /// As for [`conv3x3_rows2`], with each `out` buffer holding `row_off + ow`
    /// writable values and the four kernels in `wq` covering `icg * 9` values.
    #[target_feature(enable = "avx512f")]
    #[allow(clippy::too_many_arguments)]
    pub unsafe fn conv3x3_rows2_x4(
        out: [*mut f64; 4],
        row_off: usize,
        ow: usize,
        bias: [f64; 4],
        pin_group: &[f64],
        per_c: usize,
        pw: usize,
        icg: usize,
        oy: usize,
        wq: [*const f64; 4],
    ) {
        let mut ox = 0;
        while ox + 8 <= ow {
            quad_strip::<true>(out, row_off, bias, pin_group, per_c, pw, icg, oy, ox, 0xff, wq);
            ox += 8;
        }
        if ox < ow {
            let m = tail_mask(ow - ox);
            quad_strip::<false>(out, row_off, bias, pin_group, per_c, pw, icg, oy, ox, m, wq);
        }
    }

    /// Two adjacent output rows of a 3x3 stride-1 convolution for one output
    /// channel. Eight accumulator registers (four per row, sixteen lanes per
    /// step) keep enough independent FMA chains in flight to cover the FMA
    /// latency.
    ///
    /// # Safety
    /// `pin_group` must hold `icg` planes of `(oh + 2) * pw` f64 values with
    /// `pw >= ow + 2` and `oy + 1 < oh`; `w` must hold `icg * 9` values.
    #[target_feature(enable = "avx512f")]
    #[allow(clippy::too_many_arguments)]
    pub unsafe fn conv3x3_rows2(
        row_a: &mut [f64],
        row_b: &mut [f64],
        bias: f64,
        pin_group: &[f64],
        per_c: usize,
        pw: usize,
        icg: usize,
        oy: usize,
        w: &[f64],
    ) {
        let ow = row_a.len();
        let mut ox = 0;
        while ox < ow {
            let valid = ow - ox;
            let m0 = tail_mask(valid);
            let m1 = tail_mask(valid.saturating_sub(8));
            let binit = _mm512_set1_pd(bias);
            let mut a0 = binit;
            let mut a1 = binit;
            let mut b0 = binit;
            let mut b1 = binit;
            let wide = valid > 8;
            for i in 0..icg {
                let plane = pin_group.as_ptr().add(i * per_c);
                let wt = w.as_ptr().add(i * 9);
                for ky in 0..3 {
                    let row0 = plane.add((oy + ky) * pw + ox);
                    let row1 = row0.add(pw);
                    for kx in 0..3 {
                        let wv = _mm512_set1_pd(*wt.add(ky * 3 + kx));
                        let s0 = row0.add(kx);
                        let s1 = row1.add(kx);
                        a0 = _mm512_fmadd_pd(_mm512_maskz_loadu_pd(m0, s0), wv, a0);
                        b0 = _mm512_fmadd_pd(_mm512_maskz_loadu_pd(m0, s1), wv, b0);
                        if wide {
                            a1 = _mm512_fmadd_pd(_mm512_maskz_loadu_pd(m1, s0.add(8)), wv, a1);
                            b1 = _mm512_fmadd_pd(_mm512_maskz_loadu_pd(m1, s1.add(8)), wv, b1);
                        }
                    }
                }
            }
            let da = row_a.as_mut_ptr().add(ox);
            let db = row_b.as_mut_ptr().add(ox);
            _mm512_mask_storeu_pd(da, m0, a0);
            _mm512_mask_storeu_pd(db, m0, b0);
            if wide {
                _mm512_mask_storeu_pd(da.add(8), m1, a1);
                _mm512_mask_storeu_pd(db.add(8), m1, b1);
            }
            ox += 16;
        }
    }

    /// Single-row variant used when the output height is odd; accumulator
    /// pairs alternate taps so the chains stay short.
    ///
    /// # Safety
    /// As for [`conv3x3_rows2`], with `oy < oh`.
    #[target_feature(enable = "avx512f")]
    pub unsafe fn conv3x3_row(
        out_row: &mut [f64],
        bias: f64,
        pin_group: &[f64],
        per_c: usize,
        pw: usize,
        icg: usize,
        oy: usize,
        w: &[f64],
    ) {
        let ow = out_row.len();
        let mut ox = 0;
        while ox < ow {
            let valid = ow - ox;
            let m0 = tail_mask(valid);
            let m1 = tail_mask(valid.saturating_sub(8));
            let binit = _mm512_set1_pd(bias);
            let mut a0 = binit;
            let mut a1 = binit;
            let mut a0b = _mm512_setzero_pd();
            let mut a1b = _mm512_setzero_pd();
            let wide = valid > 8;
            for i in 0..icg {
                let plane = pin_group.as_ptr().add(i * per_c);
                let wt = w.as_ptr().add(i * 9);
                for ky in 0..3 {
                    let row = plane.add((oy + ky) * pw + ox);
                    for kx in 0..3 {
                        let wv = _mm512_set1_pd(*wt.add(ky * 3 + kx));
                        let src = row.add(kx);
                        if (ky * 3 + kx) & 1 == 0 {
                            a0 = _mm512_fmadd_pd(_mm512_maskz_loadu_pd(m0, src), wv, a0);
                            if wide {
                                a1 = _mm512_fmadd_pd(_mm512_maskz_loadu_pd(m1, src.add(8)), wv, a1);
                            }
                        } else {
                            a0b = _mm512_fmadd_pd(_mm512_maskz_loadu_pd(m0, src), wv, a0b);
                            if wide {
                                a1b = _mm512_fmadd_pd(_mm512_maskz_loadu_pd(m1, src.add(8)), wv, a1b);
                            }
                        }
                    }
                }
            }
            let dst = out_row.as_mut_ptr().add(ox);
            _mm512_mask_storeu_pd(dst, m0, _mm512_add_pd(a0, a0b));
            if wide {
                _mm512_mask_storeu_pd(dst.add(8), m1, _mm512_add_pd(a1, a1b));
            }
            ox += 16;
        }
    }

    /// Nine weight-gradient taps in one pass over the plane-long dot described
    /// at [`super::grad_weight_taps_3x3`]: nine zmm accumulators, one masked
    /// tail step.
    ///
    /// # Safety
    /// `g` and `s0`/`s1`/`s2` must each hold at least `span` (+2 for the
    /// shifted rows) f64 values.
    #[target_feature(enable = "avx512f")]
    pub unsafe fn grad_weight_taps(
        g: &[f64],
        s0: &[f64],
        s1: &[f64],
        s2: &[f64],
        span: usize,
        wacc: &mut [f64],
    ) {
        let mut acc = [_mm512_setzero_pd(); 9];
        let mut i = 0;
        while i < span {
            let m = tail_mask(span - i);
            let gv = _mm512_maskz_loadu_pd(m, g.as_ptr().add(i));
            for (r, base) in [(0usize, s0), (1, s1), (2, s2)] {
                let p = base.as_ptr().add(i);
                acc[r * 3] = _mm512_fmadd_pd(gv, _mm512_maskz_loadu_pd(m, p), acc[r * 3]);
                acc[r * 3 + 1] =
                    _mm512_fmadd_pd(gv, _mm512_maskz_loadu_pd(m, p.add(1)), acc[r * 3 + 1]);
                acc[r * 3 + 2] =
                    _mm512_fmadd_pd(gv, _mm512_maskz_loadu_pd(m, p.add(2)), acc[r * 3 + 2]);
            }
            i += 8;
        }
        for (t, a) in acc.iter().enumerate() {
            wacc[t] += _mm512_reduce_add_pd(*a);
        }
    }
}

#[cfg(not(all(target_arch = "x86_64", target_feature = "avx512f")))]
/// Fused 3x3 stride-1 row update: acc[ox] += sum of the nine taps.
///
/// `mul_add` keeps the accumulation in fused multiply-adds; plain `a*b + c`
/// never contracts to FMA and runs at half throughput.
#[inline(always)]
fn acc_row_3x3(acc: &mut [f64], r0: &[f64], r1: &[f64], r2: &[f64], w: &[f64; 9]) {
    let ow = acc.len();
    let r0 = &r0[..ow + 2];
    let r1 = &r1[..ow + 2];
    let r2 = &r2[..ow + 2];
    for ox in 0..ow {
        let mut a = w[0].mul_add(r0[ox], acc[ox]);
        a = w[1].mul_add(r0[ox + 1], a);
        a = w[2].mul_add(r0[ox + 2], a);
        a = w[3].mul_add(r1[ox], a);
        a = w[4].mul_add(r1[ox + 1], a);
        a = w[5].mul_add(r1[ox + 2], a);
        a = w[6].mul_add(r2[ox], a);
        a = w[7].mul_add(r2[ox + 1], a);
        a = w[8].mul_add(r2[ox + 2], a);
        acc[ox] = a;
    }
}

#[cfg(not(all(target_arch = "x86_64", target_feature = "avx512f")))]
/// Same as `acc_row_3x3` for four output channels at once, sharing the three
/// input-row loads across the channel accumulators.
#[inline(always)]
fn acc_row_3x3_x4(
    acc: &mut [f64],
    ow: usize,
    r0: &[f64],
    r1: &[f64],
    r2: &[f64],
    w: &[[f64; 9]; 4],
) {
    let r0 = &r0[..ow + 2];
    let r1 = &r1[..ow + 2];
    let r2 = &r2[..ow + 2];
    let (a0, rest) = acc.split_at_mut(ow);
    let (a1, rest) = rest.split_at_mut(ow);
    let (a2, a3) = rest.split_at_mut(ow);
    for ox in 0..ow {
        let x00 = r0[ox];
        let x01 = r0[ox + 1];
        let x02 = r0[ox + 2];
        let x10 = r1[ox];
        let x11 = r1[ox + 1];
        let x12 = r1[ox + 2];
        let x20 = r2[ox];
        let x21 = r2[ox + 1];
        let x22 = r2[ox + 2];
        let mut a = w[0][0].mul_add(x00, a0[ox]);
        a = w[0][1].mul_add(x01, a);
        a = w[0][2].mul_add(x02, a);
        a = w[0][3].mul_add(x10, a);
        a = w[0][4].mul_add(x11, a);
        a = w[0][5].mul_add(x12, a);
        a = w[0][6].mul_add(x20, a);
        a = w[0][7].mul_add(x21, a);
        a = w[0][8].mul_add(x22, a);
        a0[ox] = a;
        let mut a = w[1][0].mul_add(x00, a1[ox]);
        a = w[1][1].mul_add(x01, a);
        a = w[1][2].mul_add(x02, a);
        a = w[1][3].mul_add(x10, a);
        a = w[1][4].mul_add(x11, a);
        a = w[1][5].mul_add(x12, a);
        a = w[1][6].mul_add(x20, a);
        a = w[1][7].mul_add(x21, a);
        a = w[1][8].mul_add(x22, a);
        a1[ox] = a;
        let mut a = w[2][0].mul_add(x00, a2[ox]);
        a = w[2][1].mul_add(x01, a);
        a = w[2][2].mul_add(x02, a);
        a = w[2][3].mul_add(x10, a);
        a = w[2][4].mul_add(x11, a);
        a = w[2][5].mul_add(x12, a);
        a = w[2][6].mul_add(x20, a);
        a = w[2][7].mul_add(x21, a);
        a = w[2][8].mul_add(x22, a);
        a2[ox] = a;
        let mut a = w[3][0].mul_add(x00, a3[ox]);
        a = w[3][1].mul_add(x01, a);
        a = w[3][2].mul_add(x02, a);
        a = w[3][3].mul_add(x10, a);
        a = w[3][4].mul_add(x11, a);
        a = w[3][5].mul_add(x12, a);
        a = w[3][6].mul_add(x20, a);
        a = w[3][7].mul_add(x21, a);
        a = w[3][8].mul_add(x22, a);
        a3[ox] = a;
    }
}

#[inline(always)]
fn acc_row_generic(acc: &mut [f64], row: &[f64], kw: usize, stride: usize, wrow: &[f64]) {
    let ow = acc.len();
    for kx in 0..kw {
        let wv = wrow[kx];
        if wv == 0.0 {
            continue;
        }
        if stride == 1 {
            let src = &row[kx..kx + ow];
            for (a, &s) in acc.iter_mut().zip(src) {
                *a = wv.mul_add(s, *a);
            }
        } else {
            for (ox, a) in acc.iter_mut().enumerate() {
                *a = wv.mul_add(row[ox * stride + kx], *a);
            }
        }
    }
}

/// Convolve one batch item's padded input into `out_item` for out channels
/// `[oc_lo, oc_hi)`. `out_item` starts at channel `oc_lo` of the item.
///
/// The 3x3 stride-1 case walks four output channels of the same group at a
/// time so each input row load feeds 36 multiply-adds.
#[allow(clippy::too_many_arguments)]
fn conv_item<S: Scalar>(
    padded: &Padded,
    weight: &Tensor<S>,
    bias: Option<&[S]>,
    spec: &ConvSpec,
    oh: usize,
    ow: usize,
    oc_lo: usize,
    oc_hi: usize,
    out_item: &mut [S],
) {
    let (kh, kw) = spec.kernel;
    let icg = spec.in_channels / spec.groups;
    let ocg = spec.out_channels / spec.groups;
    let wlen = icg * kh * kw;
    #[cfg(all(target_arch = "x86_64", target_feature = "avx512f"))]
    if kh == 3 && kw == 3 && spec.stride == 1 {
        // f64 staging for four channels x two rows; converted to S per pair.
        let mut stage = vec![0.0f64; 8 * ow];
        let mut w64 = vec![0.0f64; 4 * wlen];
        let mut oc = oc_lo;
        // SAFETY throughout: pin_group holds icg planes of (oh + 2) * pw
        // values with pw >= ow + 2; masked lanes never fault.
        while oc < oc_hi {
            let group = oc / ocg;
            let group_end = (group + 1) * ocg;
            let block = 4.min(oc_hi.min(group_end) - oc);
            let ic0 = group * icg;
            let pin_group = &padded.data[ic0 * padded.per_c..(ic0 + icg) * padded.per_c];
            for (dst, &src) in w64
                .iter_mut()
                .zip(&weight.data()[oc * wlen..(oc + block) * wlen])
            {
                *dst = src.to_f64();
            }
            if block == 4 {
                let bias4 = std::array::from_fn(|j| bias.map(|bs| bs[oc + j].to_f64()).unwrap_or(0.0));
                let (q0, rest) = stage.split_at_mut(2 * ow);
                let (q1, rest) = rest.split_at_mut(2 * ow);
                let (q2, q3) = rest.split_at_mut(2 * ow);
                let outp = [q0.as_mut_ptr(), q1.as_mut_ptr(), q2.as_mut_ptr(), q3.as_mut_ptr()];
                let wq = std::array::from_fn(|j| unsafe { w64.as_ptr().add(j * wlen) });
                let mut oy = 0;
                while oy + 2 <= oh {
                    unsafe {
                        avx512::conv3x3_rows2_x4(
                            outp,
                            ow,
                            ow,
                            bias4,
                            pin_group,
                            padded.per_c,
                            padded.pw,
                            icg,
                            oy,
                            wq,
                        );
                    }
                    for j in 0..4 {
                        let src = &stage[j * 2 * ow..][..2 * ow];
                        let dst = &mut out_item[((oc + j - oc_lo) * oh + oy) * ow..][..2 * ow];
                        for (d, &a) in dst.iter_mut().zip(src) {
                            *d = S::from_f64(a);
                        }
                    }
                    oy += 2;
                }
                if oy < oh {
                    for j in 0..4 {
                        let (head, _) = stage.split_at_mut(ow);
                        unsafe {
                            avx512::conv3x3_row(
                                head,
                                bias4[j],
                                pin_group,
                                padded.per_c,
                                padded.pw,
                                icg,
                                oy,
                                &w64[j * wlen..(j + 1) * wlen],
                            );
                        }
                        let dst = &mut out_item[((oc + j - oc_lo) * oh + oy) * ow..][..ow];
                        for (d, &a) in dst.iter_mut().zip(stage.iter()) {
                            *d = S::from_f64(a);
                        }
                    }
                }
            } else {
                for j in 0..block {
                    let b = bias.map(|bs| bs[oc + j].to_f64()).unwrap_or(0.0);
                    let wj = &w64[j * wlen..(j + 1) * wlen];
                    let mut oy = 0;
                    while oy + 2 <= oh {
                        let (ra, rest) = stage.split_at_mut(ow);
                        let rb = &mut rest[..ow];
                        unsafe {
                            avx512::conv3x3_rows2(
                                ra,
                                rb,
                                b,
                                pin_group,
                                padded.per_c,
                                padded.pw,
                                icg,
                                oy,
                                wj,
                            );
                        }
                        let dst = &mut out_item[((oc + j - oc_lo) * oh + oy) * ow..][..2 * ow];
                        for (d, &a) in dst.iter_mut().zip(stage.iter()) {
                            *d = S::from_f64(a);
                        }
                        oy += 2;
                    }
                    if oy < oh {
                        let (ra, _) = stage.split_at_mut(ow);
                        unsafe {
                            avx512::conv3x3_row(ra, b, pin_group, padded.per_c, padded.pw, icg, oy, wj);
                        }
                        let dst = &mut out_item[((oc + j - oc_lo) * oh + oy) * ow..][..ow];
                        for (d, &a) in dst.iter_mut().zip(stage.iter()) {
                            *d = S::from_f64(a);
                        }
                    }
                }
            }
            oc += block;
        }
        return;
    }
    #[cfg(not(all(target_arch = "x86_64", target_feature = "avx512f")))]
    if kh == 3 && kw == 3 && spec.stride == 1 {
        let mut acc4 = vec![0.0f64; 4 * ow];
        let mut wblock: Vec<[[f64; 9]; 4]> = vec![[[0.0; 9]; 4]; icg];
        let mut oc = oc_lo;
        while oc < oc_hi {
            let group = oc / ocg;
            let group_end = (group + 1) * ocg;
            let block = 4.min(oc_hi.min(group_end) - oc);
            let ic0 = group * icg;
            for i in 0..icg {
                for b in 0..block {
                    let src = &weight.data()[(oc + b) * wlen + i * 9..][..9];
                    for (t, &v) in src.iter().enumerate() {
                        wblock[i][b][t] = v.to_f64();
                    }
                }
                for b in block..4 {
                    wblock[i][b] = [0.0; 9];
                }
            }
            for oy in 0..oh {
                for b in 0..block {
                    let bv = bias.map(|bs| bs[oc + b].to_f64()).unwrap_or(0.0);
                    acc4[b * ow..(b + 1) * ow].fill(bv);
                }
                if block == 4 {
                    for (i, w4) in wblock.iter().enumerate() {
                        acc_row_3x3_x4(
                            &mut acc4,
                            ow,
                            padded.row(ic0 + i, oy),
                            padded.row(ic0 + i, oy + 1),
                            padded.row(ic0 + i, oy + 2),
                            w4,
                        );
                    }
                } else {
                    for (i, w4) in wblock.iter().enumerate() {
                        for b in 0..block {
                            acc_row_3x3(
                                &mut acc4[b * ow..(b + 1) * ow],
                                padded.row(ic0 + i, oy),
                                padded.row(ic0 + i, oy + 1),
                                padded.row(ic0 + i, oy + 2),
                                &w4[b],
                            );
                        }
                    }
                }
                for b in 0..block {
                    let dst = &mut out_item[((oc + b - oc_lo) * oh + oy) * ow..][..ow];
                    for (d, &a) in dst.iter_mut().zip(&acc4[b * ow..(b + 1) * ow]) {
                        *d = S::from_f64(a);
                    }
                }
            }
            oc += block;
        }
        return;
    }
    let mut w64 = vec![0.0f64; wlen];
    let mut acc = vec![0.0f64; ow];
    for oc in oc_lo..oc_hi {
        let group = oc / ocg;
        let ic0 = group * icg;
        let wslice = &weight.data()[oc * wlen..(oc + 1) * wlen];
        for (dst, &src) in w64.iter_mut().zip(wslice) {
            *dst = src.to_f64();
        }
        let b = bias.map(|bs| bs[oc].to_f64()).unwrap_or(0.0);
        for oy in 0..oh {
            acc.fill(b);
            let iy0 = oy * spec.stride;
            for i in 0..icg {
                for ky in 0..kh {
                    let row = padded.row(ic0 + i, iy0 + ky);
                    let wrow = &w64[(i * kh + ky) * kw..][..kw];
                    acc_row_generic(&mut acc, row, kw, spec.stride, wrow);
                }
            }
            let dst = &mut out_item[((oc - oc_lo) * oh + oy) * ow..][..ow];
            for (d, &a) in dst.iter_mut().zip(acc.iter()) {
                *d = S::from_f64(a);
            }
        }
    }
}

/// Split `out_channels` into per-task blocks so that `n * blocks` roughly
/// covers the thread pool.
fn oc_block(n: usize, out_c: usize) -> usize {
    let threads = rayon::current_num_threads().max(1);
    if n == 0 {
        return out_c;
    }
    let tasks_per_item = (2 * threads).div_ceil(n).min(out_c).max(1);
    out_c.div_ceil(tasks_per_item)
}

fn conv_forward_raw<S: Scalar>(
    input: &Tensor<S>,
    weight: &Tensor<S>,
    bias: Option<&[S]>,
    spec: &ConvSpec,
) -> Result<Tensor<S>> {
    let out_shape = spec.output_shape(input.shape())?;
    if weight.shape() != spec.weight_shape() {
        return Err(Error::ShapeMismatch {
            op: "conv2d_forward",
            detail: format!("weight {} vs spec {}", weight.shape(), spec.weight_shape()),
        });
    }
    if let Some(b) = bias {
        if b.len() != spec.out_channels {
            return Err(Error::ShapeMismatch {
                op: "conv2d_forward",
                detail: format!("bias length {} vs out_channels {}", b.len(), spec.out_channels),
            });
        }
    }
    let (n, oh, ow) = (out_shape.n, out_shape.h, out_shape.w);
    let mut out = Tensor::zeros(out_shape);
    let block = oc_block(n, spec.out_channels);
    let blocks_per_item = spec.out_channels.div_ceil(block);
    let chunk_len = block * oh * ow;
    let item_len = spec.out_channels * oh * ow;
    if blocks_per_item == 1 {
        // One task per batch item; each pads its own input.
        out.data_mut()
            .par_chunks_mut(item_len)
            .enumerate()
            .for_each(|(i, out_item)| {
                let padded = Padded::build(input, i, spec.padding, spec.padding);
                conv_item(&padded, weight, bias, spec, oh, ow, 0, spec.out_channels, out_item);
            });
    } else {
        // Few batch items: share one padded buffer per item across channel blocks.
        let padded: Vec<Padded> = (0..n)
            .map(|i| Padded::build(input, i, spec.padding, spec.padding))
            .collect();
        out.data_mut()
            .par_chunks_mut(chunk_len)
            .enumerate()
            .for_each(|(t, out_chunk)| {
                let item = t / blocks_per_item;
                let oc_lo = (t % blocks_per_item) * block;
                let oc_hi = (oc_lo + block).min(spec.out_channels);
                conv_item(&padded[item], weight, bias, spec, oh, ow, oc_lo, oc_hi, out_chunk);
            });
    }
    Ok(out)
}

#[cfg(all(target_arch = "x86_64", target_feature = "avx512f"))]
#[doc(hidden)]
#[allow(clippy::too_many_arguments)]
/// Exposed for the kernel microbenchmark example only.
pub unsafe fn bench_conv3x3_rows2(
    row_a: &mut [f64],
    row_b: &mut [f64],
    bias: f64,
    pin_group: &[f64],
    per_c: usize,
    pw: usize,
    icg: usize,
    oy: usize,
    w: &[f64],
) {
    unsafe { avx512::conv3x3_rows2(row_a, row_b, bias, pin_group, per_c, pw, icg, oy, w) }
}

/// Grouped convolution forward pass.
pub fn conv2d_forward<S: Scalar>(
    input: &Tensor<S>,
    weight: &Tensor<S>,
    bias: Option<&[S]>,
    spec: &ConvSpec,
) -> Result<Tensor<S>> {
    conv_forward_raw(input, weight, bias, spec)?.check_finite("conv2d_forward")
}

/// Gradients produced by [`conv2d_backward`].
pub struct ConvGrads<S: Scalar> {
    pub grad_input: Tensor<S>,
    pub grad_weight: Tensor<S>,
    pub grad_bias: Option<Vec<S>>,
}

/// Backward pass: gradients of a scalar loss with respect to the convolution
/// input, weight and (when `with_bias`) bias, given the gradient at the output.
pub fn conv2d_backward<S: Scalar>(
    grad_out: &Tensor<S>,
    cached_input: &Tensor<S>,
    weight: &Tensor<S>,
    with_bias: bool,
    spec: &ConvSpec,
) -> Result<ConvGrads<S>> {
    let out_shape = spec.output_shape(cached_input.shape())?;
    if grad_out.shape() != out_shape {
        return Err(Error::ShapeMismatch {
            op: "conv2d_backward",
            detail: format!("grad_out {} vs expected {}", grad_out.shape(), out_shape),
        });
    }
    if weight.shape() != spec.weight_shape() {
        return Err(Error::ShapeMismatch {
            op: "conv2d_backward",
            detail: format!("weight {} vs spec {}", weight.shape(), spec.weight_shape()),
        });
    }
    let t0 = std::time::Instant::now();
    let grad_input = grad_input_pass(grad_out, cached_input.shape(), weight, spec)?
        .check_finite("conv2d_backward")?;
    let t1 = std::time::Instant::now();
    let grad_weight = grad_weight_pass(grad_out, cached_input, spec)?.check_finite("conv2d_backward")?;
    if std::env::var("SRFORGE_CONV_TIMING").is_ok() {
        eprintln!("gi {:.1}ms gw {:.1}ms", t1.duration_since(t0).as_secs_f64()*1e3, t1.elapsed().as_secs_f64()*1e3);
    }
    let grad_bias = if with_bias {
        Some(grad_bias_pass(grad_out))
    } else {
        None
    };
    Ok(ConvGrads {
        grad_input,
        grad_weight,
        grad_bias,
    })
}

/// grad_input. For stride 1 this is a convolution of the padded output
/// gradient with the spatially flipped, channel-transposed weights, so the
/// forward kernel is reused; other strides fall back to a direct scatter.
fn grad_input_pass<S: Scalar>(
    grad_out: &Tensor<S>,
    input_shape: Shape,
    weight: &Tensor<S>,
    spec: &ConvSpec,
) -> Result<Tensor<S>> {
    let (kh, kw) = spec.kernel;
    let icg = spec.in_channels / spec.groups;
    let ocg = spec.out_channels / spec.groups;
    if spec.stride == 1 && spec.padding < kh.min(kw) {
        // Transposed weights: wt[ic][ocg][ky][kx] = w[oc][icg][kh-1-ky][kw-1-kx]
        let mut wt = Tensor::<S>::zeros(Shape::new(spec.in_channels, ocg, kh, kw));
        for oc in 0..spec.out_channels {
            let group = oc / ocg;
            for i in 0..icg {
                let ic = group * icg + i;
                for ky in 0..kh {
                    for kx in 0..kw {
                        let v = weight.at(oc, i, kh - 1 - ky, kw - 1 - kx);
                        wt.set(ic, oc % ocg, ky, kx, v);
                    }
                }
            }
        }
        let spec_t = ConvSpec {
            in_channels: spec.out_channels,
            out_channels: spec.in_channels,
            kernel: (kh, kw),
            stride: 1,
            padding: 0, // handled by the asymmetric pad below
            groups: spec.groups,
        };
        return conv_transposed_raw(grad_out, &wt, &spec_t, kh - 1 - spec.padding, kw - 1 - spec.padding, input_shape);
    }
    // Direct scatter, deterministic per (n, ic).
    let n = input_shape.n;
    let (gh, gw_) = (grad_out.shape().h, grad_out.shape().w);
    let mut grad_input = Tensor::zeros(input_shape);
    let plane_len = input_shape.h * input_shape.w;
    grad_input
        .data_mut()
        .par_chunks_mut(plane_len)
        .enumerate()
        .for_each(|(t, gi_plane)| {
            let item = t / spec.in_channels;
            let ic = t % spec.in_channels;
            if item >= n {
                return;
            }
            let group = ic / icg;
            let i = ic % icg;
            let mut acc = vec![0.0f64; plane_len];
            for og in 0..ocg {
                let oc = group * ocg + og;
                let go_plane = grad_out.plane(item, oc);
                for oy in 0..gh {
                    for ox in 0..gw_ {
                        let g = go_plane[oy * gw_ + ox].to_f64();
                        if g == 0.0 {
                            continue;
                        }
                        for ky in 0..kh {
                            let iy = oy * spec.stride + ky;
                            if iy < spec.padding || iy - spec.padding >= input_shape.h {
                                continue;
                            }
                            let iy = iy - spec.padding;
                            for kx in 0..kw {
                                let ix = ox * spec.stride + kx;
                                if ix < spec.padding || ix - spec.padding >= input_shape.w {
                                    continue;
                                }
                                let ix = ix - spec.padding;
                                acc[iy * input_shape.w + ix] +=
                                    g * weight.at(oc, i, ky, kx).to_f64();
                            }
                        }
                    }
                }
            }
            for (d, &a) in gi_plane.iter_mut().zip(acc.iter()) {
                *d = S::from_f64(a);
            }
        });
    Ok(grad_input)
}

/// Forward convolution with independent vertical/horizontal padding; used by
/// the stride-1 grad_input path.
fn conv_transposed_raw<S: Scalar>(
    input: &Tensor<S>,
    weight: &Tensor<S>,
    spec: &ConvSpec,
    pad_h: usize,
    pad_w: usize,
    out_shape: Shape,
) -> Result<Tensor<S>> {
    let n = input.shape().n;
    let (oh, ow) = (out_shape.h, out_shape.w);
    let mut out = Tensor::zeros(out_shape);
    let block = oc_block(n, spec.out_channels);
    let blocks_per_item = spec.out_channels.div_ceil(block);
    let chunk_len = block * oh * ow;
    if blocks_per_item == 1 {
        out.data_mut()
            .par_chunks_mut(spec.out_channels * oh * ow)
            .enumerate()
            .for_each(|(i, out_item)| {
                let padded = Padded::build(input, i, pad_h, pad_w);
                conv_item(&padded, weight, None, spec, oh, ow, 0, spec.out_channels, out_item);
            });
    } else {
        let padded: Vec<Padded> = (0..n).map(|i| Padded::build(input, i, pad_h, pad_w)).collect();
        out.data_mut()
            .par_chunks_mut(chunk_len)
            .enumerate()
            .for_each(|(t, out_chunk)| {
                let item = t / blocks_per_item;
                let oc_lo = (t % blocks_per_item) * block;
                let oc_hi = (oc_lo + block).min(spec.out_channels);
                conv_item(&padded[item], weight, None, spec, oh, ow, oc_lo, oc_hi, out_chunk);
            });
    }
    Ok(out)
}

/// grad_weight: accumulate over the batch in fixed chunks of eight items so
/// the reduction order never depends on the thread count.
fn grad_weight_pass<S: Scalar>(
    grad_out: &Tensor<S>,
    input: &Tensor<S>,
    spec: &ConvSpec,
) -> Result<Tensor<S>> {
    let (kh, kw) = spec.kernel;
    let icg = spec.in_channels / spec.groups;
    let ocg = spec.out_channels / spec.groups;
    let wlen = icg * kh * kw;
    let go = grad_out.shape();
    let (n, oh, ow) = (go.n, go.h, go.w);
    let mut acc = vec![0.0f64; spec.out_channels * wlen];

    let fused_3x3 = kh == 3 && kw == 3 && spec.stride == 1;
    // Row stride of the fused layout matches the padded input buffer; the
    // trailing columns stay zero so the plane-long dots skip them exactly.
    let go_stride = if fused_3x3 { (ow + 2).next_multiple_of(8) } else { ow };
    let go_plane_len = oh * go_stride;

    const CHUNK: usize = 8;
    let mut chunk_start = 0;
    while chunk_start < n {
        let chunk_end = (chunk_start + CHUNK).min(n);
        let padded: Vec<Padded> = (chunk_start..chunk_end)
            .map(|i| Padded::build(input, i, spec.padding, spec.padding))
            .collect();
        let go64: Vec<Vec<f64>> = (chunk_start..chunk_end)
            .map(|i| {
                let mut buf = vec![0.0f64; go.c * go_plane_len];
                for c in 0..go.c {
                    let src = grad_out.plane(i, c);
                    for oy in 0..oh {
                        let dst = &mut buf[c * go_plane_len + oy * go_stride..][..ow];
                        for (d, v) in dst.iter_mut().zip(&src[oy * ow..][..ow]) {
                            *d = v.to_f64();
                        }
                    }
                }
                buf
            })
            .collect();
        // Tasks own contiguous out-channel ranges; inside a task the input
        // channel loop is outermost so one input plane stays cache-hot while
        // the output-gradient planes stream past it.
        let range = spec
            .out_channels
            .div_ceil(2 * rayon::current_num_threads().max(1))
            .max(1);
        acc.par_chunks_mut(range * wlen).enumerate().for_each(|(ridx, chunk)| {
            let oc0 = ridx * range;
            let n_oc = chunk.len() / wlen;
            for (pi, pad) in padded.iter().enumerate() {
                for i in 0..icg {
                    for j in 0..n_oc {
                        let oc = oc0 + j;
                        let group = oc / ocg;
                        let ic = group * icg + i;
                        let go_plane = &go64[pi][oc * go_plane_len..(oc + 1) * go_plane_len];
                        let wacc = &mut chunk[j * wlen..(j + 1) * wlen];
                        if fused_3x3 {
                            let plane = pad.plane(ic);
                            #[cfg(all(target_arch = "x86_64", target_feature = "avx512f"))]
                            {
                                let span = (oh - 1) * pad.pw + ow;
                                // SAFETY: each ky-row slice has span + 2
                                // readable values and masked lanes never fault.
                                unsafe {
                                    avx512::grad_weight_taps(
                                        &go_plane[..span],
                                        plane,
                                        &plane[pad.pw..],
                                        &plane[2 * pad.pw..],
                                        span,
                                        &mut wacc[i * 9..i * 9 + 9],
                                    );
                                }
                            }
                            #[cfg(not(all(target_arch = "x86_64", target_feature = "avx512f")))]
                            grad_weight_taps_3x3(
                                plane,
                                pad.pw,
                                go_plane,
                                oh,
                                ow,
                                &mut wacc[i * 9..i * 9 + 9],
                            );
                            continue;
                        }
                        for ky in 0..kh {
                            for kx in 0..kw {
                                let mut lanes = [0.0f64; 4];
                                for oy in 0..oh {
                                    let prow = pad.row(ic, oy * spec.stride + ky);
                                    let grow = &go_plane[oy * ow..][..ow];
                                    if spec.stride == 1 {
                                        let src = &prow[kx..kx + ow];
                                        let mut ox = 0;
                                        while ox + 4 <= ow {
                                            lanes[0] = grow[ox].mul_add(src[ox], lanes[0]);
                                            lanes[1] = grow[ox + 1].mul_add(src[ox + 1], lanes[1]);
                                            lanes[2] = grow[ox + 2].mul_add(src[ox + 2], lanes[2]);
                                            lanes[3] = grow[ox + 3].mul_add(src[ox + 3], lanes[3]);
                                            ox += 4;
                                        }
                                        while ox < ow {
                                            lanes[0] = grow[ox].mul_add(src[ox], lanes[0]);
                                            ox += 1;
                                        }
                                    } else {
                                        for (ox, g) in grow.iter().enumerate() {
                                            lanes[0] =
                                                g.mul_add(prow[ox * spec.stride + kx], lanes[0]);
                                        }
                                    }
                                }
                                wacc[(i * kh + ky) * kw + kx] +=
                                    lanes[0] + lanes[1] + lanes[2] + lanes[3];
                            }
                        }
                    }
                }
            }
        });
        chunk_start = chunk_end;
    }
    let data = acc.iter().map(|&v| S::from_f64(v)).collect();
    Tensor::from_vec(spec.weight_shape(), data)
}

#[cfg(not(all(target_arch = "x86_64", target_feature = "avx512f")))]
/// All nine 3x3 weight-gradient taps for one (out, in) channel pair.
///
/// `gop` is the output gradient re-laid with the padded input's row stride
/// (two trailing zeros per row), so each tap is a single long dot over the
/// whole plane: the zero columns contribute exactly nothing. Three taps of a
/// kernel row share the gradient loads; the lane layout is fixed, so the
/// summation order is independent of anything but the input.
fn grad_weight_taps_3x3(
    pin_plane: &[f64],
    pw: usize,
    gop: &[f64],
    oh: usize,
    ow: usize,
    wacc: &mut [f64],
) {
    let span = (oh - 1) * pw + ow;
    let g = &gop[..span];
    for ky in 0..3 {
        let base = ky * pw;
        let s0 = &pin_plane[base..base + span];
        let s1 = &pin_plane[base + 1..base + 1 + span];
        let s2 = &pin_plane[base + 2..base + 2 + span];
        let mut a0 = [0.0f64; 8];
        let mut a1 = [0.0f64; 8];
        let mut a2 = [0.0f64; 8];
        let cg = g.chunks_exact(8);
        let rem = cg.remainder().len();
        for (((xg, x0), x1), x2) in cg
            .zip(s0.chunks_exact(8))
            .zip(s1.chunks_exact(8))
            .zip(s2.chunks_exact(8))
        {
            for j in 0..8 {
                let gv = xg[j];
                a0[j] = gv.mul_add(x0[j], a0[j]);
                a1[j] = gv.mul_add(x1[j], a1[j]);
                a2[j] = gv.mul_add(x2[j], a2[j]);
            }
        }
        let tail = span - rem;
        for i in tail..span {
            let gv = g[i];
            a0[0] = gv.mul_add(s0[i], a0[0]);
            a1[0] = gv.mul_add(s1[i], a1[0]);
            a2[0] = gv.mul_add(s2[i], a2[0]);
        }
        let hsum = |a: &[f64; 8]| ((a[0] + a[1]) + (a[2] + a[3])) + ((a[4] + a[5]) + (a[6] + a[7]));
        wacc[ky * 3] += hsum(&a0);
        wacc[ky * 3 + 1] += hsum(&a1);
        wacc[ky * 3 + 2] += hsum(&a2);
    }
}

fn grad_bias_pass<S: Scalar>(grad_out: &Tensor<S>) -> Vec<S> {
    let s = grad_out.shape();
    (0..s.c)
        .map(|c| {
            let mut acc = 0.0f64;
            for item in 0..s.n {
                for &g in grad_out.plane(item, c) {
                    acc += g.to_f64();
                }
            }
            S::from_f64(acc)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn shape(n: usize, c: usize, h: usize, w: usize) -> Shape {
        Shape::new(n, c, h, w)
    }

    #[test]
    fn ones_kernel_counts_taps_under_padding() {
        let input = Tensor::filled(shape(1, 1, 3, 3), 1.0f32);
        let weight = Tensor::filled(shape(1, 1, 3, 3), 1.0f32);
        let spec = ConvSpec::new(1, 1, 3);
        let out = conv2d_forward(&input, &weight, None, &spec).unwrap();
        assert_eq!(out.shape(), shape(1, 1, 3, 3));
        assert_eq!(out.at(0, 0, 1, 1), 9.0);
        for &(y, x) in &[(0, 0), (0, 2), (2, 0), (2, 2)] {
            assert_eq!(out.at(0, 0, y, x), 4.0);
        }
    }

    #[test]
    fn depthwise_identity_kernel_preserves_input() {
        let c = 3;
        let mut data = Vec::new();
        for i in 0..c * 16 {
            data.push(i as f32 * 0.25 - 2.0);
        }
        let input = Tensor::from_vec(shape(1, c, 4, 4), data).unwrap();
        let mut weight = Tensor::zeros(shape(c, 1, 3, 3));
        for oc in 0..c {
            weight.set(oc, 0, 1, 1, 1.0);
        }
        let spec = ConvSpec::new(c, c, 3).with_groups(c);
        let out = conv2d_forward(&input, &weight, None, &spec).unwrap();
        assert_eq!(out, input);
    }

    #[test]
    fn scalar_kernel_backward_is_pointwise() {
        // 1x1x2x2 input, 1x1x1x1 kernel, loss = sum(output)
        let input = Tensor::from_vec(shape(1, 1, 2, 2), vec![1.0f32, 2.0, 3.0, 4.0]).unwrap();
        let weight = Tensor::from_vec(shape(1, 1, 1, 1), vec![0.5f32]).unwrap();
        let spec = ConvSpec::new(1, 1, 1).with_padding(0);
        let grad_out = Tensor::filled(shape(1, 1, 2, 2), 1.0f32);
        let grads = conv2d_backward(&grad_out, &input, &weight, true, &spec).unwrap();
        assert_eq!(grads.grad_weight.data(), &[10.0]);
        assert!(grads.grad_input.data().iter().all(|&g| g == 0.5));
        assert_eq!(grads.grad_bias.unwrap(), vec![4.0]);
    }

    #[test]
    fn zero_grad_out_gives_zero_grads() {
        let input = Tensor::filled(shape(2, 2, 4, 4), 0.7f32);
        let weight = Tensor::filled(shape(4, 1, 3, 3), 0.3f32);
        let spec = ConvSpec::new(2, 4, 3).with_groups(2);
        let grad_out = Tensor::zeros(shape(2, 4, 4, 4));
        let grads = conv2d_backward(&grad_out, &input, &weight, true, &spec).unwrap();
        assert!(grads.grad_input.data().iter().all(|&g| g == 0.0));
        assert!(grads.grad_weight.data().iter().all(|&g| g == 0.0));
        assert!(grads.grad_bias.unwrap().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn groups_must_divide_channels() {
        let spec = ConvSpec::new(6, 4, 3).with_groups(4);
        assert!(spec.validate().is_err());
    }

    #[test]
    fn rejects_wrong_input_channels() {
        let input = Tensor::<f32>::zeros(shape(1, 3, 5, 5));
        let weight = Tensor::<f32>::zeros(shape(4, 2, 3, 3));
        let spec = ConvSpec::new(2, 4, 3);
        assert!(conv2d_forward(&input, &weight, None, &spec).is_err());
    }
}
