//! Window partitioning, bottom-right padding, cyclic shifts and shifted-window masks.

use rayon::prelude::*;

use crate::error::{config_err, Result};
use crate::tensor::Tensor;

/// Logit added to attention pairs that straddle regions.
pub const MASK_VALUE: f32 = -100.0;

/// Original extents of a tensor before [`pad_to_window`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PadSpec {
    pub height: usize,
    pub width: usize,
}

/// Zero-pads bottom and right so both spatial extents become multiples of `m`.
pub fn pad_to_window(x: &Tensor, m: usize) -> Result<(Tensor, PadSpec)> {
    if m == 0 {
        return Err(config_err!("window size must be positive"));
    }
    let (_, h, w, _) = x.dims4()?;
    let spec = PadSpec { height: h, width: w };
    Ok((pad_to(x, h.div_ceil(m) * m, w.div_ceil(m) * m)?, spec))
}

/// Zero-pads bottom and right up to `(hp, wp)`.
pub fn pad_to(x: &Tensor, hp: usize, wp: usize) -> Result<Tensor> {
    let (b, h, w, c) = x.dims4()?;
    if hp < h || wp < w {
        return Err(config_err!("pad_to: target {hp}x{wp} smaller than {h}x{w}"));
    }
    if hp == h && wp == w {
        return Ok(x.clone());
    }
    let mut out = vec![0.0f32; b * hp * wp * c];
    for n in 0..b {
        for y in 0..h {
            let src = ((n * h + y) * w) * c;
            let dst = ((n * hp + y) * wp) * c;
            out[dst..dst + w * c].copy_from_slice(&x.data()[src..src + w * c]);
        }
    }
    Tensor::new(&[b, hp, wp, c], out)
}

/// Drops the padding added by [`pad_to_window`].
pub fn crop(x: &Tensor, spec: PadSpec) -> Result<Tensor> {
    let (b, hp, wp, c) = x.dims4()?;
    let (h, w) = (spec.height, spec.width);
    if h > hp || w > wp || h == 0 || w == 0 {
        return Err(config_err!("crop: {h}x{w} does not fit in {hp}x{wp}"));
    }
    if h == hp && w == wp {
        return Ok(x.clone());
    }
    let mut out = Vec::with_capacity(b * h * w * c);
    for n in 0..b {
        for y in 0..h {
            let src = ((n * hp + y) * wp) * c;
            out.extend_from_slice(&x.data()[src..src + w * c]);
        }
    }
    Tensor::new(&[b, h, w, c], out)
}

/// Cyclic roll: `out[y][x] = in[(y + dy) mod H][(x + dx) mod W]`.
///
/// `roll(x, s, s)` moves content up-left by `s`; `roll(x, H - s, W - s)` undoes it.
pub fn roll(x: &Tensor, dy: usize, dx: usize) -> Result<Tensor> {
    let (_, h, w, c) = x.dims4()?;
    let (dy, dx) = (dy % h, dx % w);
    if dy == 0 && dx == 0 {
        return Ok(x.clone());
    }
    let src = x.data();
    let mut out = vec![0.0f32; x.len()];
    out.par_chunks_mut(w * c).enumerate().for_each(|(row, dst)| {
        let (n, y) = (row / h, row % h);
        let sy = (y + dy) % h;
        let base = (n * h + sy) * w * c;
        // Row content rotated left by dx pixels.
        let split = dx * c;
        dst[..w * c - split].copy_from_slice(&src[base + split..base + w * c]);
        dst[w * c - split..].copy_from_slice(&src[base..base + split]);
    });
    Tensor::new(x.shape(), out)
}

/// `[B, H, W, C]` to `[B * (H/m) * (W/m), m, m, C]`, windows in row-major order per image.
pub fn window_partition(x: &Tensor, m: usize) -> Result<Tensor> {
    let (b, h, w, c) = x.dims4()?;
    if m == 0 || h % m != 0 || w % m != 0 {
        return Err(config_err!("window_partition: {h}x{w} is not a multiple of window {m}"));
    }
    let (nh, nw) = (h / m, w / m);
    let src = x.data();
    let mut out = vec![0.0f32; x.len()];
    out.par_chunks_mut(m * m * c).enumerate().for_each(|(win, dst)| {
        let n = win / (nh * nw);
        let (wy, wx) = ((win / nw) % nh, win % nw);
        for r in 0..m {
            let s = ((n * h + wy * m + r) * w + wx * m) * c;
            dst[r * m * c..(r + 1) * m * c].copy_from_slice(&src[s..s + m * c]);
        }
    });
    Tensor::new(&[b * nh * nw, m, m, c], out)
}

/// Inverse of [`window_partition`].
pub fn window_reverse(windows: &Tensor, m: usize, h: usize, w: usize) -> Result<Tensor> {
    let c = windows.channels();
    if m == 0 || h % m != 0 || w % m != 0 {
        return Err(config_err!("window_reverse: {h}x{w} is not a multiple of window {m}"));
    }
    let per_image = (h / m) * (w / m);
    let n_windows = windows.len() / (m * m * c);
    if n_windows % per_image != 0 || windows.len() != n_windows * m * m * c {
        return Err(config_err!("window_reverse: {n_windows} windows do not tile {h}x{w}"));
    }
    let b = n_windows / per_image;
    let nw = w / m;
    let src = windows.data();
    let mut out = vec![0.0f32; windows.len()];
    out.par_chunks_mut(w * c).enumerate().for_each(|(row, dst)| {
        let (n, y) = (row / h, row % h);
        let (wy, r) = (y / m, y % m);
        for wx in 0..nw {
            let win = (n * (h / m) + wy) * nw + wx;
            let s = (win * m * m + r * m) * c;
            dst[wx * m * c..(wx + 1) * m * c].copy_from_slice(&src[s..s + m * c]);
        }
    });
    Tensor::new(&[b, h, w, c], out)
}

/// Region label of every position of the (padded, possibly rolled) attention frame.
///
/// Positions only attend to positions with the same label. Labels separate the
/// wrapped-around strips of a cyclic shift and mark padding as its own region,
/// so real pixels never attend to padding.
pub fn region_labels(hp: usize, wp: usize, h: usize, w: usize, m: usize, shift: usize) -> Vec<u8> {
    let strip = |r: usize, ext: usize| -> u8 {
        if shift == 0 || r < ext - m {
            0
        } else if r < ext - shift {
            1
        } else {
            2
        }
    };
    let mut labels = Vec::with_capacity(hp * wp);
    for r in 0..hp {
        let y = (r + shift) % hp;
        for c in 0..wp {
            let x = (c + shift) % wp;
            let pad = (y >= h || x >= w) as u8;
            labels.push(strip(r, hp) * 3 + strip(c, wp) + 9 * pad);
        }
    }
    labels
}

/// Additive attention mask `[nW, m*m, m*m]` from region labels, or `None` when
/// every window is a single region.
pub fn attention_mask(labels: &[u8], hp: usize, wp: usize, m: usize) -> Option<Tensor> {
    let (nh, nw) = (hp / m, wp / m);
    let t = m * m;
    let window_labels = |win: usize| -> Vec<u8> {
        let (wy, wx) = (win / nw, win % nw);
        (0..t)
            .map(|i| labels[(wy * m + i / m) * wp + wx * m + i % m])
            .collect()
    };
    let uniform = (0..nh * nw).all(|win| {
        let l = window_labels(win);
        l.iter().all(|&v| v == l[0])
    });
    if uniform {
        return None;
    }
    let mut mask = vec![0.0f32; nh * nw * t * t];
    for (win, dst) in mask.chunks_exact_mut(t * t).enumerate() {
        let l = window_labels(win);
        for i in 0..t {
            for j in 0..t {
                if l[i] != l[j] {
                    dst[i * t + j] = MASK_VALUE;
                }
            }
        }
    }
    Some(Tensor::new(&[nh * nw, t, t], mask).expect("mask shape"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::rand_tensor;

    #[test]
    fn partition_counts_windows() {
        let x = rand_tensor(&[1, 16, 16, 3], 0, 1.0);
        assert_eq!(window_partition(&x, 8).unwrap().shape(), &[4, 8, 8, 3]);
        assert!(window_partition(&rand_tensor(&[1, 12, 16, 3], 0, 1.0), 8).is_err());
    }

    #[test]
    fn partition_roundtrip() {
        let x = rand_tensor(&[2, 24, 16, 96], 1, 1.0);
        let w = window_partition(&x, 8).unwrap();
        assert_eq!(window_reverse(&w, 8, 24, 16).unwrap(), x);
    }

    #[test]
    fn window_equals_slice() {
        let (h, w, c, m) = (24, 16, 5, 8);
        let x = rand_tensor(&[1, h, w, c], 2, 1.0);
        let wins = window_partition(&x, m).unwrap();
        for i in 0..h / m {
            for j in 0..w / m {
                let win = i * (w / m) + j;
                for r in 0..m {
                    for s in 0..m {
                        for ch in 0..c {
                            let got = wins.data()[((win * m + r) * m + s) * c + ch];
                            let want = x.data()[((i * m + r) * w + j * m + s) * c + ch];
                            assert_eq!(got, want);
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn pad_extents_and_roundtrip() {
        let x = rand_tensor(&[1, 20, 15, 4], 3, 1.0);
        let (p, spec) = pad_to_window(&x, 8).unwrap();
        assert_eq!(p.shape(), &[1, 24, 16, 4]);
        assert_eq!(spec, PadSpec { height: 20, width: 15 });
        // Padding is zeros, appended bottom/right only.
        for y in 0..24 {
            for xx in 0..16 {
                let v = &p.data()[(y * 16 + xx) * 4..][..4];
                if y >= 20 || xx >= 15 {
                    assert!(v.iter().all(|&z| z == 0.0));
                } else {
                    assert_eq!(v, &x.data()[(y * 15 + xx) * 4..][..4]);
                }
            }
        }
        assert_eq!(crop(&p, spec).unwrap(), x);

        let aligned = rand_tensor(&[1, 16, 16, 2], 4, 1.0);
        let (same, spec) = pad_to_window(&aligned, 8).unwrap();
        assert_eq!(same, aligned);
        assert_eq!(spec, PadSpec { height: 16, width: 16 });
    }

    #[test]
    fn roll_inverts() {
        let x = rand_tensor(&[2, 8, 12, 3], 5, 1.0);
        let r = roll(&x, 4, 4).unwrap();
        assert_eq!(r.data()[..3], x.data()[(4 * 12 + 4) * 3..][..3]);
        assert_eq!(roll(&r, 8 - 4, 12 - 4).unwrap(), x);
    }

    #[test]
    fn unshifted_aligned_frame_needs_no_mask() {
        let labels = region_labels(16, 16, 16, 16, 8, 0);
        assert!(attention_mask(&labels, 16, 16, 8).is_none());
    }

    #[test]
    fn padding_gets_its_own_region() {
        let labels = region_labels(16, 16, 15, 16, 8, 0);
        let mask = attention_mask(&labels, 16, 16, 8).unwrap();
        // Window (1, 0): row 7 of the window is image row 15, which is padding.
        let t = 64;
        let m = &mask.data()[2 * t * t..3 * t * t];
        assert_eq!(m[1], 0.0);
        assert_eq!(m[56], MASK_VALUE);
        assert_eq!(m[56 * t + 57], 0.0);
    }

    #[test]
    fn shifted_mask_matches_reference_slices() {
        // Same three-by-three slicing as the reference shifted-window mask.
        let (hp, m, s) = (16, 8, 4);
        let labels = region_labels(hp, hp, hp, hp, m, s);
        let mask = attention_mask(&labels, hp, hp, m).unwrap();
        assert_eq!(mask.shape(), &[4, 64, 64]);
        // First window lies entirely in region (0, 0).
        assert!(mask.data()[..64 * 64].iter().all(|&v| v == 0.0));
        // Last window has four regions with 16 tokens each.
        let last = &mask.data()[3 * 64 * 64..];
        let open = last.iter().filter(|&&v| v == 0.0).count();
        assert_eq!(open, 4 * 16 * 16);
    }
}
