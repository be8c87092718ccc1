//! Pixel container and the patch/resampling operations the episode is built on.
//!
//! Images are row-major `(y, x, channel)` grids of `f64` in `[0, 1]`.
//! Patch locations are 1-based `(x, y)` patch *centers*. For a patch of
//! size `ph x pw` centered at 0-based `(cx, cy)`, patch pixel `(i, j)` reads
//! source pixel `(cy - ph/2 + i, cx - pw/2 + j)` (integer division), so the
//! center sits at patch index `(ph/2, pw/2)`:
//!
//! | patch dim | center index | pixels before | pixels after |
//! |-----------|--------------|---------------|--------------|
//! | odd `2k+1`| `k`          | `k`           | `k`          |
//! | even `2k` | `k`          | `k`           | `k - 1`      |
//!
//! Source pixels outside the image read as the geometry's pad value, and
//! are discarded on write-back.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{dim_err, AfhError, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f64>,
}

impl Image {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(dim_err(format!("image must be non-empty, got {height}x{width}")));
        }
        if channels == 0 {
            return Err(AfhError::Channels(channels));
        }
        if data.len() != height * width * channels {
            return Err(dim_err(format!(
                "data length {} does not match {height}x{width}x{channels}",
                data.len()
            )));
        }
        if let Some(v) = data.iter().find(|v| !v.is_finite()) {
            return Err(dim_err(format!("non-finite pixel value {v}")));
        }
        let mut img = Self {
            height,
            width,
            channels,
            data,
        };
        img.clamp_in_place();
        Ok(img)
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: f64) -> Self {
        assert!(height > 0 && width > 0 && channels > 0, "empty image");
        Self {
            height,
            width,
            channels,
            data: vec![value.clamp(0.0, 1.0); height * width * channels],
        }
    }

    pub fn from_fn(
        height: usize,
        width: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Self {
        assert!(height > 0 && width > 0 && channels > 0, "empty image");
        let mut data = Vec::with_capacity(height * width * channels);
        for y in 0..height {
            for x in 0..width {
                for c in 0..channels {
                    let v = f(y, x, c);
                    data.push(if v.is_finite() { v.clamp(0.0, 1.0) } else { 0.0 });
                }
            }
        }
        Self {
            height,
            width,
            channels,
            data,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.channels)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn index(&self, y: usize, x: usize, c: usize) -> usize {
        (y * self.width + x) * self.channels + c
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, c: usize) -> f64 {
        self.data[self.index(y, x, c)]
    }

    /// Writes a value, clamped to `[0, 1]`.
    #[inline]
    pub fn set(&mut self, y: usize, x: usize, c: usize, v: f64) {
        let i = self.index(y, x, c);
        self.data[i] = v.clamp(0.0, 1.0);
    }

    pub fn same_dims(&self, other: &Image) -> bool {
        self.dims() == other.dims()
    }

    fn clamp_in_place(&mut self) {
        for v in &mut self.data {
            *v = v.clamp(0.0, 1.0);
        }
    }

    /// Channel-planar copy (`c, y, x`), the layout the networks consume.
    pub fn to_planar(&self) -> Vec<f64> {
        let plane = self.height * self.width;
        let mut out = vec![0.0; plane * self.channels];
        for (p, px) in self.data.chunks_exact(self.channels).enumerate() {
            for (c, &v) in px.iter().enumerate() {
                out[c * plane + p] = v;
            }
        }
        out
    }

    pub fn flip_horizontal(&self) -> Image {
        Image::from_fn(self.height, self.width, self.channels, |y, x, c| {
            self.get(y, self.width - 1 - x, c)
        })
    }

    /// Mean over all pixels and channels of the squared difference.
    pub fn mse(&self, other: &Image) -> Result<f64> {
        if !self.same_dims(other) {
            return Err(dim_err(format!(
                "mse of {:?} vs {:?}",
                self.dims(),
                other.dims()
            )));
        }
        let sum: f64 = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        Ok(sum / self.data.len() as f64)
    }

    /// Replicates a single channel into `channels` channels.
    pub fn expand_channels(&self, channels: usize) -> Result<Image> {
        if self.channels == channels {
            return Ok(self.clone());
        }
        if self.channels != 1 {
            return Err(AfhError::Channels(self.channels));
        }
        Ok(Image::from_fn(self.height, self.width, channels, |y, x, _| {
            self.get(y, x, 0)
        }))
    }

    /// Center crop to `height x width`.
    pub fn center_crop(&self, height: usize, width: usize) -> Result<Image> {
        if height > self.height || width > self.width || height == 0 || width == 0 {
            return Err(dim_err(format!(
                "cannot center-crop {}x{} image to {height}x{width}",
                self.height, self.width
            )));
        }
        let y0 = (self.height - height) / 2;
        let x0 = (self.width - width) / 2;
        Ok(Image::from_fn(height, width, self.channels, |y, x, c| {
            self.get(y0 + y, x0 + x, c)
        }))
    }
}

/// Patch center, 1-based: `1 <= x <= W`, `1 <= y <= H`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PatchLocation {
    pub x: usize,
    pub y: usize,
}

impl PatchLocation {
    pub fn new(x: usize, y: usize) -> Self {
        Self { x, y }
    }

    /// Location of the `index`-th cell of a row-major `height x width` grid.
    pub fn from_flat(index: usize, width: usize) -> Self {
        Self {
            x: index % width + 1,
            y: index / width + 1,
        }
    }

    pub fn flat_index(&self, width: usize) -> usize {
        (self.y - 1) * width + (self.x - 1)
    }

    pub fn validate(&self, height: usize, width: usize) -> Result<()> {
        if self.x < 1 || self.x > width || self.y < 1 || self.y > height {
            return Err(AfhError::Location {
                x: self.x as i64,
                y: self.y as i64,
                width,
                height,
            });
        }
        Ok(())
    }

    /// Image center under the patch centering rule: a full-image patch at
    /// this location reads the image without offset.
    pub fn image_center(height: usize, width: usize) -> Self {
        Self {
            x: width / 2 + 1,
            y: height / 2 + 1,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PatchGeometry {
    pub patch_height: usize,
    pub patch_width: usize,
    #[serde(default = "default_pad")]
    pub pad_value: f64,
}

fn default_pad() -> f64 {
    0.5
}

impl PatchGeometry {
    pub fn new(patch_height: usize, patch_width: usize) -> Self {
        Self {
            patch_height,
            patch_width,
            pad_value: default_pad(),
        }
    }

    pub fn area(&self) -> usize {
        self.patch_height * self.patch_width
    }

    pub fn validate_for(&self, height: usize, width: usize) -> Result<()> {
        if self.patch_height == 0 || self.patch_width == 0 {
            return Err(AfhError::Geometry(format!(
                "zero-size patch {}x{}",
                self.patch_height, self.patch_width
            )));
        }
        if !(0.0..=1.0).contains(&self.pad_value) {
            return Err(AfhError::Geometry(format!(
                "pad value {} outside [0, 1]",
                self.pad_value
            )));
        }
        if self.patch_height > 2 * height || self.patch_width > 2 * width {
            return Err(AfhError::Geometry(format!(
                "patch {}x{} exceeds twice the {height}x{width} image",
                self.patch_height, self.patch_width
            )));
        }
        Ok(())
    }

    /// Source coordinate of patch pixel `(0, 0)` for a patch centered at `loc`.
    pub fn origin(&self, loc: PatchLocation) -> (i64, i64) {
        (
            loc.y as i64 - 1 - (self.patch_height / 2) as i64,
            loc.x as i64 - 1 - (self.patch_width / 2) as i64,
        )
    }

    /// In-bounds part of the footprint as half-open source ranges
    /// `(y0..y1, x0..x1)`; empty ranges when nothing overlaps.
    pub fn footprint(
        &self,
        loc: PatchLocation,
        height: usize,
        width: usize,
    ) -> (std::ops::Range<usize>, std::ops::Range<usize>) {
        let (oy, ox) = self.origin(loc);
        let clip = |o: i64, len: usize, bound: usize| {
            let lo = o.clamp(0, bound as i64) as usize;
            let hi = (o + len as i64).clamp(0, bound as i64) as usize;
            lo..hi.max(lo)
        };
        (
            clip(oy, self.patch_height, height),
            clip(ox, self.patch_width, width),
        )
    }

    /// Per patch-pixel flag: does it map inside a `height x width` image?
    pub fn in_bounds_mask(&self, loc: PatchLocation, height: usize, width: usize) -> Vec<bool> {
        let (oy, ox) = self.origin(loc);
        let mut mask = Vec::with_capacity(self.area());
        for i in 0..self.patch_height as i64 {
            for j in 0..self.patch_width as i64 {
                let (sy, sx) = (oy + i, ox + j);
                mask.push(sy >= 0 && sx >= 0 && sy < height as i64 && sx < width as i64);
            }
        }
        mask
    }
}

impl Default for PatchGeometry {
    fn default() -> Self {
        Self::new(60, 45)
    }
}

/// Crops a `patch_height x patch_width` patch centered at `loc`.
pub fn crop_patch(img: &Image, loc: PatchLocation, geom: &PatchGeometry) -> Result<Image> {
    loc.validate(img.height, img.width)?;
    geom.validate_for(img.height, img.width)?;
    let (oy, ox) = geom.origin(loc);
    let ch = img.channels;
    let mut data = vec![geom.pad_value; geom.area() * ch];
    let (ys, xs) = geom.footprint(loc, img.height, img.width);
    for sy in ys {
        let py = (sy as i64 - oy) as usize;
        let px0 = (xs.start as i64 - ox) as usize;
        let src = &img.data[img.index(sy, xs.start, 0)..img.index(sy, xs.start, 0) + xs.len() * ch];
        let dst_start = (py * geom.patch_width + px0) * ch;
        data[dst_start..dst_start + src.len()].copy_from_slice(src);
    }
    Ok(Image {
        height: geom.patch_height,
        width: geom.patch_width,
        channels: ch,
        data,
    })
}

/// Returns a copy of `img` with the in-bounds part of the footprint at `loc`
/// overwritten by `patch` (clamped to `[0, 1]`).
pub fn replace_patch(
    img: &Image,
    loc: PatchLocation,
    patch: &Image,
    geom: &PatchGeometry,
) -> Result<Image> {
    let mut out = img.clone();
    replace_patch_in_place(&mut out, loc, patch, geom)?;
    Ok(out)
}

pub fn replace_patch_in_place(
    img: &mut Image,
    loc: PatchLocation,
    patch: &Image,
    geom: &PatchGeometry,
) -> Result<()> {
    if patch.height != geom.patch_height
        || patch.width != geom.patch_width
        || patch.channels != img.channels
    {
        return Err(AfhError::Geometry(format!(
            "patch {:?} does not match geometry {}x{} with {} channels",
            patch.dims(),
            geom.patch_height,
            geom.patch_width,
            img.channels
        )));
    }
    loc.validate(img.height, img.width)?;
    geom.validate_for(img.height, img.width)?;
    let (oy, ox) = geom.origin(loc);
    let ch = img.channels;
    let (ys, xs) = geom.footprint(loc, img.height, img.width);
    for sy in ys {
        let py = (sy as i64 - oy) as usize;
        let px0 = (xs.start as i64 - ox) as usize;
        let src_start = (py * geom.patch_width + px0) * ch;
        let src = &patch.data[src_start..src_start + xs.len() * ch];
        let dst_start = img.index(sy, xs.start, 0);
        for (d, &s) in img.data[dst_start..dst_start + src.len()].iter_mut().zip(src) {
            *d = s.clamp(0.0, 1.0);
        }
    }
    Ok(())
}

const CUBIC_A: f64 = -0.5;

fn cubic_weight(t: f64) -> f64 {
    let t = t.abs();
    if t <= 1.0 {
        ((CUBIC_A + 2.0) * t - (CUBIC_A + 3.0)) * t * t + 1.0
    } else if t < 2.0 {
        ((CUBIC_A * t - 5.0 * CUBIC_A) * t + 8.0 * CUBIC_A) * t - 4.0 * CUBIC_A
    } else {
        0.0
    }
}

/// Four-tap sampling table for one axis: source indices (edge-replicated)
/// and normalized weights per output coordinate.
fn axis_taps(in_len: usize, out_len: usize) -> Vec<([usize; 4], [f64; 4])> {
    let scale = in_len as f64 / out_len as f64;
    (0..out_len)
        .map(|o| {
            let src = (o as f64 + 0.5) * scale - 0.5;
            let base = src.floor();
            let frac = src - base;
            let mut idx = [0usize; 4];
            let mut w = [0.0; 4];
            for k in 0..4 {
                let off = k as i64 - 1;
                idx[k] = (base as i64 + off).clamp(0, in_len as i64 - 1) as usize;
                w[k] = cubic_weight(frac - off as f64);
            }
            let sum: f64 = w.iter().sum();
            for wk in &mut w {
                *wk /= sum;
            }
            (idx, w)
        })
        .collect()
}

/// Separable Catmull-Rom bicubic resampling with edge replication. The
/// kernel is not widened when shrinking, so downsampling is plain
/// interpolation at the target sample positions.
pub fn resize_bicubic(img: &Image, out_height: usize, out_width: usize) -> Result<Image> {
    if out_height == 0 || out_width == 0 {
        return Err(dim_err(format!(
            "resize target must be non-empty, got {out_height}x{out_width}"
        )));
    }
    let ch = img.channels;
    let xt = axis_taps(img.width, out_width);
    let yt = axis_taps(img.height, out_height);

    // Horizontal pass into an unclamped buffer.
    let mut tmp = vec![0.0; img.height * out_width * ch];
    for y in 0..img.height {
        for (ox, (idx, w)) in xt.iter().enumerate() {
            for c in 0..ch {
                let mut acc = 0.0;
                for k in 0..4 {
                    acc += w[k] * img.data[img.index(y, idx[k], c)];
                }
                tmp[(y * out_width + ox) * ch + c] = acc;
            }
        }
    }
    let mut data = vec![0.0; out_height * out_width * ch];
    for (oy, (idx, w)) in yt.iter().enumerate() {
        for ox in 0..out_width {
            for c in 0..ch {
                let mut acc = 0.0;
                for k in 0..4 {
                    acc += w[k] * tmp[(idx[k] * out_width + ox) * ch + c];
                }
                data[(oy * out_width + ox) * ch + c] = acc.clamp(0.0, 1.0);
            }
        }
    }
    Ok(Image {
        height: out_height,
        width: out_width,
        channels: ch,
        data,
    })
}

pub const BT601: [f64; 3] = [0.299, 0.587, 0.114];

/// BT.601 luma for 3-channel input; identity for 1-channel input.
pub fn to_luminance(img: &Image) -> Result<Image> {
    match img.channels {
        1 => Ok(img.clone()),
        3 => {
            let data = img
                .data
                .chunks_exact(3)
                .map(|p| (BT601[0] * p[0] + BT601[1] * p[1] + BT601[2] * p[2]).clamp(0.0, 1.0))
                .collect();
            Ok(Image {
                height: img.height,
                width: img.width,
                channels: 1,
                data,
            })
        }
        n => Err(AfhError::Channels(n)),
    }
}

pub fn read_png(path: impl AsRef<Path>) -> Result<Image> {
    let path = path.as_ref();
    let decoded = image::open(path).map_err(|e| AfhError::Decode {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    let (channels, raw, w, h) = if decoded.color().has_color() {
        let rgb = decoded.to_rgb8();
        let (w, h) = rgb.dimensions();
        (3, rgb.into_raw(), w, h)
    } else {
        let l = decoded.to_luma8();
        let (w, h) = l.dimensions();
        (1, l.into_raw(), w, h)
    };
    let data = raw.iter().map(|&v| v as f64 / 255.0).collect();
    Image::new(h as usize, w as usize, channels, data)
}

pub fn to_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn write_png(img: &Image, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes: Vec<u8> = img.data.iter().map(|&v| to_u8(v)).collect();
    let color = match img.channels {
        1 => image::ColorType::L8,
        3 => image::ColorType::Rgb8,
        n => return Err(AfhError::Channels(n)),
    };
    image::save_buffer(path, &bytes, img.width as u32, img.height as u32, color).map_err(|e| {
        AfhError::Io(std::io::Error::new(std::io::ErrorKind::Other, e.to_string()))
    })
}
