//! Paired datasets: loading aligned images from disk, bicubic degradation,
//! and a procedural toy face generator.

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{config_err, AfhError, Result};
use crate::image::{read_png, resize_bicubic, write_png, Image};

/// A high-resolution image with its degraded versions.
#[derive(Clone, Debug, PartialEq)]
pub struct SamplePair {
    pub id: String,
    pub hr: Image,
    /// `hr` downsampled then upsampled back to `hr` size.
    pub lr_up: Image,
    pub lr: Image,
}

impl SamplePair {
    pub fn from_hr(id: impl Into<String>, hr: Image, scale: usize) -> Result<Self> {
        let (h, w) = (hr.height(), hr.width());
        if scale == 0 || h % scale != 0 || w % scale != 0 {
            return Err(config_err(
                "dataset.scale",
                format!("{h}x{w} is not divisible by scale {scale}"),
            ));
        }
        let lr = resize_bicubic(&hr, h / scale, w / scale)?;
        let lr_up = resize_bicubic(&lr, h, w)?;
        Ok(Self {
            id: id.into(),
            hr,
            lr_up,
            lr,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn file_name(self) -> &'static str {
        match self {
            Split::Train => "train.txt",
            Split::Test => "test.txt",
        }
    }
}

/// Directory layout: `root/images/<id>.png`, `root/splits/{train,test}.txt`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub root_dir: PathBuf,
    pub crop_height: usize,
    pub crop_width: usize,
    pub scale: usize,
}

impl DatasetSpec {
    pub fn validate(&self) -> Result<()> {
        if self.crop_height == 0 || self.crop_width == 0 {
            return Err(config_err("dataset.crop_height", "crop must be non-empty"));
        }
        if self.scale == 0 {
            return Err(config_err("dataset.scale", "must be at least 1"));
        }
        if self.crop_height % self.scale != 0 {
            return Err(config_err(
                "dataset.crop_height",
                format!("{} is not divisible by scale {}", self.crop_height, self.scale),
            ));
        }
        if self.crop_width % self.scale != 0 {
            return Err(config_err(
                "dataset.crop_width",
                format!("{} is not divisible by scale {}", self.crop_width, self.scale),
            ));
        }
        Ok(())
    }

    pub fn split_path(&self, split: Split) -> PathBuf {
        self.root_dir.join("splits").join(split.file_name())
    }

    pub fn image_path(&self, id: &str) -> PathBuf {
        self.root_dir.join("images").join(format!("{id}.png"))
    }
}

fn read_ids(path: &Path) -> Result<Vec<String>> {
    let text = fs::read_to_string(path)
        .map_err(|e| AfhError::Dataset(format!("cannot read split {}: {e}", path.display())))?;
    Ok(text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(str::to_owned)
        .collect())
}

/// Loads one split in file order. When both split files exist their id sets
/// must be disjoint.
pub fn load_dataset(spec: &DatasetSpec, split: Split) -> Result<Vec<SamplePair>> {
    spec.validate()?;
    let ids = read_ids(&spec.split_path(split))?;
    let other = match split {
        Split::Train => Split::Test,
        Split::Test => Split::Train,
    };
    let other_path = spec.split_path(other);
    if other_path.exists() {
        let other_ids: HashSet<String> = read_ids(&other_path)?.into_iter().collect();
        if let Some(id) = ids.iter().find(|id| other_ids.contains(*id)) {
            return Err(AfhError::Dataset(format!(
                "id `{id}` appears in both train and test splits"
            )));
        }
    }
    ids.iter()
        .map(|id| {
            let img = read_png(spec.image_path(id))?;
            let hr = img
                .center_crop(spec.crop_height, spec.crop_width)
                .map_err(|e| AfhError::Dataset(format!("{id}: {e}")))?
                .expand_channels(3)?;
            SamplePair::from_hr(id.clone(), hr, spec.scale)
        })
        .collect()
}

/// Writes the HR images of `pairs` and the split file for `split`.
pub fn write_split(root: impl AsRef<Path>, split: Split, pairs: &[SamplePair]) -> Result<()> {
    let root = root.as_ref();
    fs::create_dir_all(root.join("images"))?;
    fs::create_dir_all(root.join("splits"))?;
    let mut list = String::new();
    for p in pairs {
        write_png(&p.hr, root.join("images").join(format!("{}.png", p.id)))?;
        list.push_str(&p.id);
        list.push('\n');
    }
    fs::write(root.join("splits").join(split.file_name()), list)?;
    Ok(())
}

/// Axis-aligned region `[y0, y1) x [x0, x1)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Region {
    pub y0: usize,
    pub y1: usize,
    pub x0: usize,
    pub x1: usize,
}

impl Region {
    pub fn contains(&self, y: usize, x: usize) -> bool {
        (self.y0..self.y1).contains(&y) && (self.x0..self.x1).contains(&x)
    }
}

/// A generated face-like image and the regions holding its sharp features.
#[derive(Clone, Debug)]
pub struct ToyImage {
    pub image: Image,
    pub regions: Vec<Region>,
}

struct Canvas {
    h: usize,
    w: usize,
    data: Vec<[f64; 3]>,
}

impl Canvas {
    /// Paints pixels whose centers fall inside the ellipse.
    fn ellipse(&mut self, cy: f64, cx: f64, ry: f64, rx: f64, color: [f64; 3]) {
        for y in 0..self.h {
            for x in 0..self.w {
                let dy = (y as f64 + 0.5 - cy) / ry;
                let dx = (x as f64 + 0.5 - cx) / rx;
                if dy * dy + dx * dx <= 1.0 {
                    self.data[y * self.w + x] = color;
                }
            }
        }
    }

    /// Paints a bar of half-thickness `t` along the segment with slope `k`.
    fn bar(&mut self, cy: f64, cx: f64, half_len: f64, t: f64, k: f64, color: [f64; 3]) {
        for y in 0..self.h {
            for x in 0..self.w {
                let dx = x as f64 + 0.5 - cx;
                let dy = y as f64 + 0.5 - (cy + k * dx);
                if dx.abs() <= half_len && dy.abs() <= t {
                    self.data[y * self.w + x] = color;
                }
            }
        }
    }
}

fn region_around(cy: f64, cx: f64, ry: f64, rx: f64, h: usize, w: usize) -> Region {
    let lo = |c: f64, r: f64| (c - r - 1.0).floor().max(0.0) as usize;
    let hi = |c: f64, r: f64, n: usize| ((c + r + 1.0).ceil() as usize).min(n);
    Region {
        y0: lo(cy, ry),
        y1: hi(cy, ry, h),
        x0: lo(cx, rx),
        x1: hi(cx, rx, w),
    }
}

/// Smooth shaded background with hair curls, two eyes (sclera, iris, brow),
/// a nose, cheek moles and a mouth at jittered canonical positions. Feature
/// geometry scales with the image.
pub fn render_toy_image<R: Rng + ?Sized>(height: usize, width: usize, rng: &mut R) -> ToyImage {
    let (h, w) = (height as f64, width as f64);
    let s = (h.min(w) / 48.0).max(0.25);
    let tone = rng.gen_range(0.45..0.75);
    let skin = [tone, tone * 0.82, tone * 0.7];
    let (gy, gx) = (rng.gen_range(-0.12..0.12), rng.gen_range(-0.12..0.12));
    let phase = rng.gen_range(0.0..std::f64::consts::TAU);
    let mut canvas = Canvas {
        h: height,
        w: width,
        data: (0..height * width)
            .map(|i| {
                let (y, x) = ((i / width) as f64 / h - 0.5, (i % width) as f64 / w - 0.5);
                let shade = gy * y + gx * x + 0.04 * (3.0 * x + 2.0 * y + phase).sin();
                skin.map(|c| (c + shade).clamp(0.0, 1.0))
            })
            .collect(),
    };
    let cy = h * 0.5 + rng.gen_range(-2.5..2.5) * s;
    let cx = w * 0.5 + rng.gen_range(-2.5..2.5) * s;
    let mut regions = Vec::new();
    let eye_y = cy - 7.0 * s;
    let gaze = rng.gen_range(-1.5..1.5) * s;
    let iris_tone = rng.gen_range(0.05..0.3);
    let brow_tilt = rng.gen_range(-0.15..0.15);
    for side in [-1.0, 1.0] {
        let ex = cx + side * 9.0 * s + rng.gen_range(-1.0..1.0) * s;
        let ey = eye_y + rng.gen_range(-1.0..1.0) * s;
        let (ry, rx) = (rng.gen_range(2.5..3.5) * s, rng.gen_range(4.5..6.0) * s);
        canvas.ellipse(ey, ex, ry, rx, [0.95, 0.95, 0.92]);
        let ir = rng.gen_range(1.8..2.6) * s;
        canvas.ellipse(ey, ex + gaze, ir, ir, [iris_tone, iris_tone * 0.8, iris_tone * 0.6]);
        let by = ey - rng.gen_range(5.0..6.5) * s;
        canvas.bar(by, ex, 5.5 * s, 0.9 * s, side * brow_tilt, [0.15, 0.1, 0.08]);
        regions.push(region_around((ey + by) / 2.0, ex, (ey - by) / 2.0 + ry.max(1.6 * s), rx.max(5.5 * s), height, width));
    }
    let hair_tone = rng.gen_range(0.08..0.3);
    let hair = [hair_tone, hair_tone * 0.75, hair_tone * 0.55];
    for side in [-1.0, 1.0] {
        let hy = cy - rng.gen_range(17.5..19.5) * s;
        let hx = cx + side * rng.gen_range(10.0..13.0) * s;
        for k in [-1.0, 0.0, 1.0] {
            let r = rng.gen_range(1.8..2.6) * s;
            canvas.ellipse(hy + rng.gen_range(-0.8..0.8) * s, hx + k * 3.6 * s, r, r * 1.2, hair);
        }
        regions.push(region_around(hy, hx, 3.6 * s, 7.2 * s, height, width));
    }
    let (ny, nx) = (cy + rng.gen_range(1.0..3.0) * s, cx + rng.gen_range(-1.0..1.0) * s);
    canvas.ellipse(ny - 2.5 * s, nx, 3.5 * s, 1.4 * s, skin.map(|c| c * 0.8));
    let nostril = rng.gen_range(1.0..1.5) * s;
    for side in [-1.0, 1.0] {
        canvas.ellipse(ny + 1.0 * s, nx + side * 2.2 * s, nostril, nostril * 1.3, [0.2, 0.1, 0.08]);
    }
    regions.push(region_around(ny - 1.0 * s, nx, 5.0 * s, 4.0 * s, height, width));
    let mole = [0.3, 0.18, 0.12];
    for side in [-1.0, 1.0] {
        let (ky, kx) = (cy + rng.gen_range(4.0..7.0) * s, cx + side * rng.gen_range(13.5..16.5) * s);
        for _ in 0..3 {
            let r = rng.gen_range(1.0..1.8) * s;
            canvas.ellipse(ky + rng.gen_range(-2.0..2.0) * s, kx + rng.gen_range(-2.0..2.0) * s, r, r, mole);
        }
        regions.push(region_around(ky, kx, 3.8 * s, 3.8 * s, height, width));
    }
    let my = cy + rng.gen_range(9.0..12.0) * s;
    let mx = cx + rng.gen_range(-1.0..1.0) * s;
    let (mry, mrx) = (rng.gen_range(1.2..2.2) * s, rng.gen_range(5.0..8.0) * s);
    let lip = rng.gen_range(0.35..0.6);
    canvas.ellipse(my, mx, mry, mrx, [lip, lip * 0.3, lip * 0.3]);
    canvas.bar(my, mx, mrx, 0.5 * s, 0.0, [0.1, 0.03, 0.03]);
    regions.push(region_around(my, mx, mry, mrx, height, width));
    let image = Image::new(
        height,
        width,
        3,
        canvas.data.into_iter().flatten().collect(),
    )
    .expect("canvas values are clamped");
    ToyImage { image, regions }
}

/// `n` procedurally generated pairs, deterministic in `seed`. Ids are
/// `toy<seed>-<index>`.
pub fn make_toy_dataset(
    n: usize,
    height: usize,
    width: usize,
    scale: usize,
    seed: u64,
) -> Result<Vec<SamplePair>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let toy = render_toy_image(height, width, &mut rng);
            SamplePair::from_hr(format!("toy{seed}-{i:05}"), toy.image, scale)
        })
        .collect()
}

/// Shuffled mini-batches over one epoch; the last batch may be short.
pub fn batch_iterator<T>(
    items: &[T],
    batch_size: usize,
    shuffle_seed: u64,
) -> Result<impl Iterator<Item = Vec<&T>>> {
    if batch_size == 0 {
        return Err(config_err("optimizer.batch_size", "must be at least 1"));
    }
    let mut order: Vec<usize> = (0..items.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(shuffle_seed));
    let batches: Vec<Vec<&T>> = order
        .chunks(batch_size)
        .map(|c| c.iter().map(|&i| &items[i]).collect())
        .collect();
    Ok(batches.into_iter())
}
