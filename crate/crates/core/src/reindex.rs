//! Pure index maps for reindexing ops (pixel shuffle, window partition, padding).
//!
//! Each builder returns the output shape plus a source index per output element,
//! so forward is a gather and backward is the matching scatter-add.

use crate::error::{arg_err, shape_err, Result};
use crate::tensor::{Float, Tensor};

/// Output shape and the flat source offset of every output element.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IndexMap {
    pub shape: Vec<usize>,
    pub src: Vec<usize>,
}

impl IndexMap {
    pub fn apply<T: Float>(&self, input: &Tensor<T>) -> Tensor<T> {
        let data = input.data();
        let out: Vec<T> = self.src.iter().map(|&i| data[i]).collect();
        Tensor::new(&self.shape, out).expect("index map shape is consistent")
    }
}

/// Reflect an index into `0..len` without repeating the edge sample.
/// Falls back to clamping for `len == 1` or when the overshoot exceeds `len - 1`.
pub fn reflect(i: usize, len: usize) -> usize {
    if i < len {
        return i;
    }
    let over = i - (len - 1);
    if len > 1 && over < len {
        len - 1 - over
    } else {
        len - 1
    }
}

/// `[N, C·r², H, W] → [N, C, rH, rW]` with `out[n,c,y·r+i,x·r+j] = in[n, c·r²+i·r+j, y, x]`.
pub fn pixel_shuffle(shape: &[usize], r: usize) -> Result<IndexMap> {
    let [n, cin, h, w] = dims4(shape)?;
    if r == 0 || cin % (r * r) != 0 {
        return Err(shape_err!("pixel_shuffle: {cin} channels not divisible by {r}²"));
    }
    let c = cin / (r * r);
    let (oh, ow) = (h * r, w * r);
    let mut src = Vec::with_capacity(n * c * oh * ow);
    for b in 0..n {
        for ch in 0..c {
            for oy in 0..oh {
                for ox in 0..ow {
                    let (y, i) = (oy / r, oy % r);
                    let (x, j) = (ox / r, ox % r);
                    let ci = ch * r * r + i * r + j;
                    src.push(((b * cin + ci) * h + y) * w + x);
                }
            }
        }
    }
    Ok(IndexMap { shape: vec![n, c, oh, ow], src })
}

/// Inverse of [`pixel_shuffle`]: `[N, C, rH, rW] → [N, C·r², H, W]`.
pub fn pixel_unshuffle(shape: &[usize], r: usize) -> Result<IndexMap> {
    let [n, c, oh, ow] = dims4(shape)?;
    if r == 0 || oh % r != 0 || ow % r != 0 {
        return Err(shape_err!("pixel_unshuffle: {oh}x{ow} not divisible by {r}"));
    }
    let (h, w) = (oh / r, ow / r);
    let cin = c * r * r;
    let mut src = Vec::with_capacity(n * cin * h * w);
    for b in 0..n {
        for ci in 0..cin {
            let (ch, i, j) = (ci / (r * r), (ci / r) % r, ci % r);
            for y in 0..h {
                for x in 0..w {
                    src.push(((b * c + ch) * oh + y * r + i) * ow + x * r + j);
                }
            }
        }
    }
    Ok(IndexMap { shape: vec![n, cin, h, w], src })
}

/// Geometry of a window partition of an `[N, D, H, W]` map.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct WindowLayout {
    pub batch: usize,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub window: usize,
}

impl WindowLayout {
    pub fn new(shape: &[usize], window: usize) -> Result<Self> {
        if window == 0 {
            return Err(arg_err!("window size must be positive"));
        }
        let [batch, channels, height, width] = dims4(shape)?;
        Ok(Self { batch, channels, height, width, window })
    }

    pub fn padded(&self) -> (usize, usize) {
        let up = |v: usize| v.div_ceil(self.window) * self.window;
        (up(self.height), up(self.width))
    }

    pub fn blocks_per_image(&self) -> (usize, usize) {
        let (ph, pw) = self.padded();
        (ph / self.window, pw / self.window)
    }

    pub fn num_blocks(&self) -> usize {
        let (bh, bw) = self.blocks_per_image();
        self.batch * bh * bw
    }

    /// Shape of the partitioned tensor: `[N·nb, window², D]`.
    pub fn blocks_shape(&self) -> Vec<usize> {
        vec![self.num_blocks(), self.window * self.window, self.channels]
    }

    pub fn map_shape(&self) -> Vec<usize> {
        vec![self.batch, self.channels, self.height, self.width]
    }
}

/// `[N, D, H, W] → [N·nb, ws², D]`, reflect-padding H and W up to multiples of the window.
pub fn window_partition(layout: &WindowLayout) -> IndexMap {
    let WindowLayout { batch, channels, height, width, window: ws } = *layout;
    let (bh, bw) = layout.blocks_per_image();
    let mut src = Vec::with_capacity(layout.num_blocks() * ws * ws * channels);
    for b in 0..batch {
        for by in 0..bh {
            for bx in 0..bw {
                for iy in 0..ws {
                    let y = reflect(by * ws + iy, height);
                    for ix in 0..ws {
                        let x = reflect(bx * ws + ix, width);
                        for ch in 0..channels {
                            src.push(((b * channels + ch) * height + y) * width + x);
                        }
                    }
                }
            }
        }
    }
    IndexMap { shape: layout.blocks_shape(), src }
}

/// `[N·nb, ws², D] → [N, D, H, W]`, dropping padded positions.
pub fn window_merge(layout: &WindowLayout) -> IndexMap {
    let WindowLayout { batch, channels, height, width, window: ws } = *layout;
    let (bh, bw) = layout.blocks_per_image();
    let mut src = Vec::with_capacity(batch * channels * height * width);
    for b in 0..batch {
        for ch in 0..channels {
            for y in 0..height {
                for x in 0..width {
                    let block = (b * bh + y / ws) * bw + x / ws;
                    let pos = (y % ws) * ws + x % ws;
                    src.push((block * ws * ws + pos) * channels + ch);
                }
            }
        }
    }
    IndexMap { shape: layout.map_shape(), src }
}

/// Channel range `[start, start+len)` of an `[N, C, H, W]` map.
pub fn channel_slice(shape: &[usize], start: usize, len: usize) -> Result<IndexMap> {
    let [n, c, h, w] = dims4(shape)?;
    if start + len > c {
        return Err(shape_err!("channel slice {start}+{len} exceeds {c}"));
    }
    let plane = h * w;
    let mut src = Vec::with_capacity(n * len * plane);
    for b in 0..n {
        let base = (b * c + start) * plane;
        src.extend(base..base + len * plane);
    }
    Ok(IndexMap { shape: vec![n, len, h, w], src })
}

fn dims4(shape: &[usize]) -> Result<[usize; 4]> {
    shape
        .try_into()
        .map_err(|_| shape_err!("expected NCHW shape, got {:?}", shape))
}
