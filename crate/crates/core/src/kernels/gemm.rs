//! Packed, cache-blocked single-precision GEMM.
//!
//! Loop nest follows the usual five-loop layout: `NC` column blocks, `KC`
//! depth slabs (packed B shared by all workers), `MC` row blocks distributed
//! over the rayon pool, then `MR x NR` register tiles. Every output element
//! is produced by one worker with a fixed summation order, so results do not
//! depend on the thread count.

use rayon::prelude::*;

const MR: usize = 6;
const NR: usize = 16;
const KC: usize = 256;
const MC: usize = 96;
const NC: usize = 2048;

/// Strided read-only matrix view: element `(i, j)` is `data[i * rs + j * cs]`.
#[derive(Clone, Copy)]
pub struct MatRef<'a> {
    pub data: &'a [f32],
    pub rs: usize,
    pub cs: usize,
}

impl<'a> MatRef<'a> {
    pub fn row_major(data: &'a [f32], cols: usize) -> Self {
        Self { data, rs: cols, cs: 1 }
    }

    /// Transposed view of a row-major `[rows, cols]` buffer.
    pub fn transposed(data: &'a [f32], cols: usize) -> Self {
        Self { data, rs: 1, cs: cols }
    }

    #[inline(always)]
    fn at(&self, i: usize, j: usize) -> f32 {
        self.data[i * self.rs + j * self.cs]
    }
}

/// `c[m, n] += a[m, k] * b[k, n]`, with `c` row-major and contiguous.
pub fn gemm_acc(m: usize, n: usize, k: usize, a: MatRef<'_>, b: MatRef<'_>, c: &mut [f32]) {
    assert!(c.len() >= m * n, "gemm: output buffer too small");
    if m == 0 || n == 0 || k == 0 {
        return;
    }
    let kernel = select_kernel();
    let mut packed_b = vec![0.0f32; KC * NC.min(n).div_ceil(NR) * NR];

    for jc in (0..n).step_by(NC) {
        let nc = NC.min(n - jc);
        for pc in (0..k).step_by(KC) {
            let kc = KC.min(k - pc);
            pack_b(b, pc, kc, jc, nc, &mut packed_b);
            let packed_b = &packed_b[..];
            c[..m * n]
                .par_chunks_mut(MC * n)
                .enumerate()
                .for_each_init(
                    || vec![0.0f32; MC.div_ceil(MR) * MR * KC],
                    |packed_a, (blk, c_rows)| {
                        let ic = blk * MC;
                        let mc = MC.min(m - ic);
                        pack_a(a, ic, mc, pc, kc, packed_a);
                        macro_block(kernel, mc, nc, kc, packed_a, packed_b, c_rows, jc, n);
                    },
                );
        }
    }
}

type Kernel = unsafe fn(usize, *const f32, *const f32, &mut [f32; MR * NR]);

fn select_kernel() -> Kernel {
    #[cfg(target_arch = "x86_64")]
    {
        if std::is_x86_feature_detected!("avx2") && std::is_x86_feature_detected!("fma") {
            return avx2::kernel;
        }
    }
    kernel_generic
}

fn pack_a(a: MatRef<'_>, ic: usize, mc: usize, pc: usize, kc: usize, out: &mut [f32]) {
    let mut idx = 0;
    for ir in (0..mc).step_by(MR) {
        let rows = MR.min(mc - ir);
        for p in 0..kc {
            for r in 0..MR {
                out[idx] = if r < rows { a.at(ic + ir + r, pc + p) } else { 0.0 };
                idx += 1;
            }
        }
    }
}

fn pack_b(b: MatRef<'_>, pc: usize, kc: usize, jc: usize, nc: usize, out: &mut [f32]) {
    let mut idx = 0;
    for jr in (0..nc).step_by(NR) {
        let cols = NR.min(nc - jr);
        for p in 0..kc {
            if b.cs == 1 && cols == NR {
                let start = (pc + p) * b.rs + jc + jr;
                out[idx..idx + NR].copy_from_slice(&b.data[start..start + NR]);
            } else {
                for j in 0..NR {
                    out[idx + j] = if j < cols { b.at(pc + p, jc + jr + j) } else { 0.0 };
                }
            }
            idx += NR;
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn macro_block(
    kernel: Kernel,
    mc: usize,
    nc: usize,
    kc: usize,
    packed_a: &[f32],
    packed_b: &[f32],
    c_rows: &mut [f32],
    jc: usize,
    ldc: usize,
) {
    let mut tile = [0.0f32; MR * NR];
    for (jb, jr) in (0..nc).step_by(NR).enumerate() {
        let cols = NR.min(nc - jr);
        let b_panel = &packed_b[jb * kc * NR..(jb + 1) * kc * NR];
        for (ib, ir) in (0..mc).step_by(MR).enumerate() {
            let rows = MR.min(mc - ir);
            let a_panel = &packed_a[ib * kc * MR..(ib + 1) * kc * MR];
            // SAFETY: panels hold kc*MR and kc*NR values, which is what the kernel reads.
            unsafe { kernel(kc, a_panel.as_ptr(), b_panel.as_ptr(), &mut tile) };
            for r in 0..rows {
                let dst = &mut c_rows[(ir + r) * ldc + jc + jr..][..cols];
                for (d, t) in dst.iter_mut().zip(&tile[r * NR..r * NR + cols]) {
                    *d += *t;
                }
            }
        }
    }
}

unsafe fn kernel_generic(kc: usize, a: *const f32, b: *const f32, tile: &mut [f32; MR * NR]) {
    let a = std::slice::from_raw_parts(a, kc * MR);
    let b = std::slice::from_raw_parts(b, kc * NR);
    let mut acc = [[0.0f32; NR]; MR];
    for p in 0..kc {
        let bp = &b[p * NR..(p + 1) * NR];
        for r in 0..MR {
            let av = a[p * MR + r];
            for j in 0..NR {
                acc[r][j] += av * bp[j];
            }
        }
    }
    for r in 0..MR {
        tile[r * NR..(r + 1) * NR].copy_from_slice(&acc[r]);
    }
}

#[cfg(target_arch = "x86_64")]
mod avx2 {
    use super::{MR, NR};
    use std::arch::x86_64::*;

    #[target_feature(enable = "avx2,fma")]
    pub(super) unsafe fn kernel(kc: usize, a: *const f32, b: *const f32, tile: &mut [f32; MR * NR]) {
        let mut c00 = _mm256_setzero_ps();
        let mut c01 = _mm256_setzero_ps();
        let mut c10 = _mm256_setzero_ps();
        let mut c11 = _mm256_setzero_ps();
        let mut c20 = _mm256_setzero_ps();
        let mut c21 = _mm256_setzero_ps();
        let mut c30 = _mm256_setzero_ps();
        let mut c31 = _mm256_setzero_ps();
        let mut c40 = _mm256_setzero_ps();
        let mut c41 = _mm256_setzero_ps();
        let mut c50 = _mm256_setzero_ps();
        let mut c51 = _mm256_setzero_ps();
        let mut ap = a;
        let mut bp = b;
        for _ in 0..kc {
            let b0 = _mm256_loadu_ps(bp);
            let b1 = _mm256_loadu_ps(bp.add(8));
            let a0 = _mm256_broadcast_ss(&*ap);
            c00 = _mm256_fmadd_ps(a0, b0, c00);
            c01 = _mm256_fmadd_ps(a0, b1, c01);
            let a1 = _mm256_broadcast_ss(&*ap.add(1));
            c10 = _mm256_fmadd_ps(a1, b0, c10);
            c11 = _mm256_fmadd_ps(a1, b1, c11);
            let a2 = _mm256_broadcast_ss(&*ap.add(2));
            c20 = _mm256_fmadd_ps(a2, b0, c20);
            c21 = _mm256_fmadd_ps(a2, b1, c21);
            let a3 = _mm256_broadcast_ss(&*ap.add(3));
            c30 = _mm256_fmadd_ps(a3, b0, c30);
            c31 = _mm256_fmadd_ps(a3, b1, c31);
            let a4 = _mm256_broadcast_ss(&*ap.add(4));
            c40 = _mm256_fmadd_ps(a4, b0, c40);
            c41 = _mm256_fmadd_ps(a4, b1, c41);
            let a5 = _mm256_broadcast_ss(&*ap.add(5));
            c50 = _mm256_fmadd_ps(a5, b0, c50);
            c51 = _mm256_fmadd_ps(a5, b1, c51);
            ap = ap.add(MR);
            bp = bp.add(NR);
        }
        let t = tile.as_mut_ptr();
        _mm256_storeu_ps(t, c00);
        _mm256_storeu_ps(t.add(8), c01);
        _mm256_storeu_ps(t.add(16), c10);
        _mm256_storeu_ps(t.add(24), c11);
        _mm256_storeu_ps(t.add(32), c20);
        _mm256_storeu_ps(t.add(40), c21);
        _mm256_storeu_ps(t.add(48), c30);
        _mm256_storeu_ps(t.add(56), c31);
        _mm256_storeu_ps(t.add(64), c40);
        _mm256_storeu_ps(t.add(72), c41);
        _mm256_storeu_ps(t.add(80), c50);
        _mm256_storeu_ps(t.add(88), c51);
    }
}
