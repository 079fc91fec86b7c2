//! Procedural fine-grained dataset. Classes come in groups sharing a body
//! shape and colour; siblings within a group differ only in a small coloured
//! detail patch.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::backbone::Image;
use crate::diffcore::stream_rng;
use crate::error::{Result, SacError};

const NOUNS: [&str; 25] = [
    "finch", "warbler", "sparrow", "heron", "wren", "tern", "gull", "swift", "robin", "thrush",
    "owl", "crane", "plover", "lark", "jay", "kite", "egret", "grebe", "petrel", "vireo", "pipit",
    "dove", "hawk", "ibis", "shrike",
];
const SHAPES: [&str; 20] = [
    "round", "slender", "stout", "tall", "squat", "broad", "narrow", "plump", "lean", "compact",
    "long", "short", "wide", "thin", "heavy", "light", "deep", "flat", "curved", "straight",
];
const COLORS: [(&str, [u8; 3]); 25] = [
    ("red", [220, 30, 30]),
    ("blue", [30, 60, 220]),
    ("yellow", [240, 220, 20]),
    ("green", [30, 170, 50]),
    ("white", [250, 250, 250]),
    ("black", [10, 10, 10]),
    ("orange", [250, 140, 10]),
    ("purple", [140, 40, 190]),
    ("cyan", [20, 210, 220]),
    ("magenta", [220, 30, 190]),
    ("brown", [120, 70, 30]),
    ("pink", [250, 160, 190]),
    ("lime", [160, 240, 40]),
    ("teal", [20, 120, 120]),
    ("navy", [20, 30, 110]),
    ("maroon", [120, 20, 40]),
    ("olive", [120, 120, 20]),
    ("gold", [210, 170, 40]),
    ("silver", [190, 190, 200]),
    ("crimson", [180, 10, 60]),
    ("violet", [190, 120, 240]),
    ("amber", [250, 190, 0]),
    ("indigo", [70, 20, 140]),
    ("coral", [250, 120, 90]),
    ("ivory", [240, 235, 200]),
];
const MARKINGS: [&str; 20] = [
    "tipped", "capped", "banded", "spotted", "barred", "streaked", "crested", "masked", "collared",
    "winged", "tailed", "throated", "bellied", "backed", "crowned", "naped", "eyed", "billed",
    "rumped", "flanked",
];

/// Half side of the detail patch as a fraction of the image side.
pub const PATCH_HALF: f64 = 0.05;

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetSpec {
    pub groups: usize,
    pub siblings: usize,
    pub images_per_class: usize,
    pub image_size: usize,
    pub seed: u64,
    /// Translation, rotation, background texture and brightness jitter.
    pub nuisance: bool,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        Self {
            groups: 10,
            siblings: 4,
            images_per_class: 50,
            image_size: 64,
            seed: 0,
            nuisance: true,
        }
    }
}

impl DatasetSpec {
    pub fn num_classes(&self) -> usize {
        self.groups * self.siblings
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(SacError::InvalidArgument(msg));
        if self.groups < 2 || self.siblings < 2 {
            return bad(format!(
                "need at least 2 groups and 2 siblings, got {}x{}",
                self.groups, self.siblings
            ));
        }
        if self.num_classes() > 1000 {
            return bad(format!("{} classes exceeds 1000", self.num_classes()));
        }
        if self.groups > 250 {
            return bad(format!(
                "at most 250 distinct groups can be named, got {}",
                self.groups
            ));
        }
        if self.images_per_class < 2 {
            return bad("images_per_class must be at least 2 for a train/test split".into());
        }
        if self.image_size < crate::backbone::MIN_IMAGE_SIDE {
            return bad(format!(
                "image_size {} below {}",
                self.image_size,
                crate::backbone::MIN_IMAGE_SIDE
            ));
        }
        Ok(())
    }

    /// Train images per class under the 70/30 split.
    pub fn train_per_class(&self) -> usize {
        train_count(self.images_per_class)
    }

    pub fn class_name(&self, class: usize) -> String {
        let (g, s) = (class / self.siblings, class % self.siblings);
        let noun = NOUNS[g % 25];
        let shape = SHAPES[(g / 25 + g) % 20];
        let color = COLORS[s % 25].0;
        let marking = MARKINGS[(s / 25 + s % 25) % 20];
        format!("{color} {marking} {shape} {noun}")
    }
}

fn train_count(n: usize) -> usize {
    ((0.7 * n as f64).round() as usize).clamp(1, n - 1)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub path: String,
    pub class_id: usize,
    pub class_name: String,
    pub split: Split,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Manifest {
    pub path: PathBuf,
    pub records: Vec<ManifestRecord>,
}

fn hsv(h: f64, s: f64, v: f64) -> [f64; 3] {
    let i = (h * 6.0).floor();
    let f = h * 6.0 - i;
    let (p, q, t) = (v * (1.0 - s), v * (1.0 - f * s), v * (1.0 - (1.0 - f) * s));
    match i as i64 % 6 {
        0 => [v, t, p],
        1 => [q, v, p],
        2 => [p, v, t],
        3 => [p, q, v],
        4 => [t, p, v],
        _ => [v, p, q],
    }
}

struct Body {
    color: [f64; 3],
    a: f64,
    b: f64,
    power: f64,
}

fn body_for(group: usize) -> Body {
    let shape = (group / 25 + group) % 20;
    let hue = (group as f64 * 0.618_033_988_75).fract();
    Body {
        color: hsv(hue, 0.55, 0.7),
        a: 0.22 + 0.03 * (shape % 5) as f64,
        b: 0.30 - 0.03 * (shape % 4) as f64,
        power: [1.4, 2.0, 2.8, 4.0][shape / 5],
    }
}

/// Patch centre in body-local coordinates (fractions of the image side).
fn patch_offset(sibling: usize, body: &Body) -> (f64, f64) {
    let marking = (sibling / 25 + sibling % 25) % 20;
    let angle = (marking * 7 % 20) as f64 * std::f64::consts::TAU / 20.0;
    (0.55 * body.a * angle.cos(), 0.55 * body.b * angle.sin())
}

struct Pose {
    dx: f64,
    dy: f64,
    rot: f64,
    brightness: f64,
    bg: [f64; 5],
}

/// Pixel bounds `(row0, col0, row1, col1)` (inclusive) of the detail patch of
/// `class` when nuisance is disabled.
pub fn detail_patch_bounds(spec: &DatasetSpec, class: usize) -> (usize, usize, usize, usize) {
    let body = body_for(class / spec.siblings);
    let (px, py) = patch_offset(class % spec.siblings, &body);
    let size = spec.image_size as f64;
    let lo = |c: f64| (((0.5 + c - PATCH_HALF) * size - 0.5).floor().max(0.0)) as usize;
    let hi =
        |c: f64| ((((0.5 + c + PATCH_HALF) * size - 0.5).ceil()) as usize).min(spec.image_size - 1);
    (lo(py), lo(px), hi(py), hi(px))
}

/// Renders one image as CHW bytes.
fn render(spec: &DatasetSpec, class: usize, index: usize) -> Vec<u8> {
    let size = spec.image_size;
    let body = body_for(class / spec.siblings);
    let (px, py) = patch_offset(class % spec.siblings, &body);
    let patch = COLORS[(class % spec.siblings) % 25]
        .1
        .map(|c| f64::from(c) / 255.0);
    let pose = if spec.nuisance {
        let mut rng = stream_rng(spec.seed, &format!("synth/{class}/{index}"));
        Pose {
            dx: rng.gen_range(-0.1..=0.1),
            dy: rng.gen_range(-0.1..=0.1),
            rot: rng.gen_range(-15f64..=15.0).to_radians(),
            brightness: rng.gen_range(0.9..=1.1),
            bg: [
                rng.gen_range(0.35..0.65),
                rng.gen_range(2.0..8.0),
                rng.gen_range(2.0..8.0),
                rng.gen_range(0.0..std::f64::consts::TAU),
                rng.gen_range(0.05..0.15),
            ],
        }
    } else {
        Pose {
            dx: 0.0,
            dy: 0.0,
            rot: 0.0,
            brightness: 1.0,
            bg: [0.5, 0.0, 0.0, 0.0, 0.0],
        }
    };
    let (sin, cos) = pose.rot.sin_cos();
    let mut out = vec![0u8; 3 * size * size];
    for r in 0..size {
        for c in 0..size {
            let u = (c as f64 + 0.5) / size as f64 - 0.5 - pose.dx;
            let v = (r as f64 + 0.5) / size as f64 - 0.5 - pose.dy;
            let x = cos * u + sin * v;
            let y = -sin * u + cos * v;
            let [base, fx, fy, phase, amp] = pose.bg;
            let bgv = base
                + amp
                    * ((fx * std::f64::consts::TAU * (c as f64 / size as f64) + phase).sin()
                        * (fy * std::f64::consts::TAU * (r as f64 / size as f64)).cos());
            let mut rgb = [bgv; 3];
            if (x.abs() / body.a).powf(body.power) + (y.abs() / body.b).powf(body.power) <= 1.0 {
                let shade = 1.0 - 0.25 * (y / body.b);
                rgb = body.color.map(|ch| ch * shade.clamp(0.6, 1.3));
            }
            if (x - px).abs() <= PATCH_HALF && (y - py).abs() <= PATCH_HALF {
                rgb = patch;
            }
            for (ch, val) in rgb.iter().enumerate() {
                out[(ch * size + r) * size + c] =
                    ((val * pose.brightness).clamp(0.0, 1.0) * 255.0).round() as u8;
            }
        }
    }
    out
}

fn chw_to_rgb(data: &[u8], plane: usize) -> Vec<u8> {
    (0..plane)
        .flat_map(|i| [data[i], data[plane + i], data[2 * plane + i]])
        .collect()
}

fn rgb_to_chw(data: &[u8], plane: usize) -> Vec<u8> {
    let mut out = vec![0u8; 3 * plane];
    for (i, px) in data.chunks_exact(3).enumerate() {
        for ch in 0..3 {
            out[ch * plane + i] = px[ch];
        }
    }
    out
}

fn write_png(
    path: &Path,
    width: usize,
    height: usize,
    rgb: &[u8],
    color: image::ColorType,
) -> Result<()> {
    image::save_buffer(path, rgb, width as u32, height as u32, color).map_err(|e| SacError::Image {
        path: path.to_path_buf(),
        msg: e.to_string(),
    })
}

/// Writes an RGB image (CHW reals in `[0, 1]`) as PNG.
pub fn save_image(path: &Path, img: &Image) -> Result<()> {
    let bytes: Vec<u8> = img
        .data()
        .iter()
        .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect();
    write_png(
        path,
        img.width(),
        img.height(),
        &chw_to_rgb(&bytes, img.height() * img.width()),
        image::ColorType::Rgb8,
    )
}

/// Writes an 8-bit grayscale PNG.
pub fn save_gray(path: &Path, rows: usize, cols: usize, values: &[u8]) -> Result<()> {
    write_png(path, cols, rows, values, image::ColorType::L8)
}

/// Renders every image to `out_dir/images/` and writes `out_dir/manifest.jsonl`.
pub fn generate_dataset(spec: &DatasetSpec, out_dir: &Path) -> Result<Manifest> {
    spec.validate()?;
    let img_dir = out_dir.join("images");
    fs::create_dir_all(&img_dir)?;
    let per_class: Vec<Vec<ManifestRecord>> = (0..spec.num_classes())
        .into_par_iter()
        .map(|class| -> Result<Vec<ManifestRecord>> {
            let name = spec.class_name(class);
            let mut order: Vec<usize> = (0..spec.images_per_class).collect();
            order.shuffle(&mut stream_rng(spec.seed, &format!("split/{class}")));
            let n_train = spec.train_per_class();
            let mut split = vec![Split::Test; spec.images_per_class];
            order[..n_train]
                .iter()
                .for_each(|&i| split[i] = Split::Train);
            (0..spec.images_per_class)
                .map(|i| {
                    let rel = format!("images/c{class:04}_{i:04}.png");
                    let data = render(spec, class, i);
                    write_png(
                        &out_dir.join(&rel),
                        spec.image_size,
                        spec.image_size,
                        &chw_to_rgb(&data, spec.image_size * spec.image_size),
                        image::ColorType::Rgb8,
                    )?;
                    Ok(ManifestRecord {
                        path: rel,
                        class_id: class,
                        class_name: name.clone(),
                        split: split[i],
                    })
                })
                .collect()
        })
        .collect::<Result<_>>()?;
    let records: Vec<ManifestRecord> = per_class.into_iter().flatten().collect();
    let path = out_dir.join("manifest.jsonl");
    let mut text = String::new();
    for r in &records {
        text.push_str(&serde_json::to_string(r).expect("record serializes"));
        text.push('\n');
    }
    let tmp = out_dir.join("manifest.jsonl.tmp");
    fs::File::create(&tmp)?.write_all(text.as_bytes())?;
    fs::rename(&tmp, &path)?;
    Ok(Manifest { path, records })
}

/// One decoded image stored as CHW bytes.
#[derive(Clone, Debug)]
pub struct Sample {
    pub path: PathBuf,
    pub class_id: usize,
    pub split: Split,
    pub height: usize,
    pub width: usize,
    pub pixels: Vec<u8>,
}

impl Sample {
    pub fn image(&self) -> Image {
        let data = self.pixels.iter().map(|&p| f64::from(p) / 255.0).collect();
        Image::new_unchecked_size(self.height, self.width, data)
            .expect("decoded sizes are consistent")
    }
}

#[derive(Clone, Debug)]
pub struct Dataset {
    pub manifest: Manifest,
    pub class_names: Vec<String>,
    pub samples: Vec<Sample>,
}

impl Dataset {
    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn split(&self, split: Split) -> Vec<&Sample> {
        self.samples.iter().filter(|s| s.split == split).collect()
    }

    pub fn image_size(&self) -> (usize, usize) {
        self.samples.first().map_or((0, 0), |s| (s.height, s.width))
    }
}

/// Reads an image file into CHW bytes.
pub fn read_image(path: &Path) -> Result<(usize, usize, Vec<u8>)> {
    if !path.exists() {
        return Err(SacError::MissingFile(path.to_path_buf()));
    }
    let img = image::open(path).map_err(|e| SacError::Image {
        path: path.to_path_buf(),
        msg: e.to_string(),
    })?;
    let rgb = img.to_rgb8();
    let (w, h) = (rgb.width() as usize, rgb.height() as usize);
    Ok((h, w, rgb_to_chw(rgb.as_raw(), h * w)))
}

/// Loads an image file as reals in `[0, 1]`.
pub fn load_image(path: &Path) -> Result<Image> {
    let (h, w, px) = read_image(path)?;
    Image::new_unchecked_size(h, w, px.iter().map(|&p| f64::from(p) / 255.0).collect())
}

fn parse_manifest(path: &Path) -> Result<Vec<ManifestRecord>> {
    if !path.exists() {
        return Err(SacError::MissingFile(path.to_path_buf()));
    }
    let err = |line: usize, msg: String| SacError::Manifest {
        path: path.to_path_buf(),
        line,
        msg,
    };
    let mut records = Vec::new();
    for (i, line) in BufReader::new(fs::File::open(path)?).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: ManifestRecord =
            serde_json::from_str(&line).map_err(|e| err(i + 1, e.to_string()))?;
        let words = rec.class_name.split_whitespace().count();
        if !(1..=4).contains(&words) {
            return Err(err(
                i + 1,
                format!("class name {:?} must have 1 to 4 words", rec.class_name),
            ));
        }
        records.push(rec);
    }
    if records.is_empty() {
        return Err(err(0, "manifest has no records".into()));
    }
    Ok(records)
}

/// Parses a JSON-lines manifest and decodes every image it lists.
pub fn load_manifest(path: &Path) -> Result<Dataset> {
    let records = parse_manifest(path)?;
    let n = records.iter().map(|r| r.class_id).max().expect("non-empty") + 1;
    let mut class_names: Vec<Option<String>> = vec![None; n];
    for (i, r) in records.iter().enumerate() {
        match &class_names[r.class_id] {
            Some(existing) if existing != &r.class_name => {
                return Err(SacError::Manifest {
                    path: path.to_path_buf(),
                    line: i + 1,
                    msg: format!(
                        "class {} named both {existing:?} and {:?}",
                        r.class_id, r.class_name
                    ),
                });
            }
            _ => class_names[r.class_id] = Some(r.class_name.clone()),
        }
    }
    let class_names: Vec<String> = class_names
        .into_iter()
        .enumerate()
        .map(|(c, n)| {
            n.ok_or_else(|| SacError::Manifest {
                path: path.to_path_buf(),
                line: 0,
                msg: format!("class ids are not contiguous: {c} has no records"),
            })
        })
        .collect::<Result<_>>()?;
    let base = path.parent().unwrap_or(Path::new("."));
    let samples: Vec<Sample> = records
        .par_iter()
        .map(|r| {
            let p = base.join(&r.path);
            let (height, width, pixels) = read_image(&p)?;
            Ok(Sample {
                path: p,
                class_id: r.class_id,
                split: r.split,
                height,
                width,
                pixels,
            })
        })
        .collect::<Result<_>>()?;
    let (h, w) = (samples[0].height, samples[0].width);
    if let Some(s) = samples.iter().find(|s| (s.height, s.width) != (h, w)) {
        return Err(SacError::Image {
            path: s.path.clone(),
            msg: format!("size {}x{} differs from {h}x{w}", s.height, s.width),
        });
    }
    Ok(Dataset {
        manifest: Manifest {
            path: path.to_path_buf(),
            records,
        },
        class_names,
        samples,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> DatasetSpec {
        DatasetSpec {
            groups: 2,
            siblings: 2,
            images_per_class: 3,
            image_size: 32,
            seed: 0,
            nuisance: true,
        }
    }

    #[test]
    fn names_are_unique_multiword() {
        let spec = DatasetSpec {
            groups: 250,
            siblings: 4,
            ..Default::default()
        };
        let names: std::collections::HashSet<String> = (0..spec.num_classes())
            .map(|c| spec.class_name(c))
            .collect();
        assert_eq!(names.len(), 1000);
        assert!(names.iter().all(|n| n.split(' ').count() == 4));
        let spec = DatasetSpec {
            groups: 2,
            siblings: 500,
            ..Default::default()
        };
        let names: std::collections::HashSet<String> = (0..spec.num_classes())
            .map(|c| spec.class_name(c))
            .collect();
        assert_eq!(names.len(), 1000);
    }

    #[test]
    fn validation() {
        assert!(tiny().validate().is_ok());
        assert!(DatasetSpec {
            groups: 1,
            ..tiny()
        }
        .validate()
        .is_err());
        assert!(DatasetSpec {
            siblings: 1,
            ..tiny()
        }
        .validate()
        .is_err());
        assert!(DatasetSpec {
            groups: 40,
            siblings: 26,
            ..tiny()
        }
        .validate()
        .is_err());
        assert!(DatasetSpec {
            images_per_class: 1,
            ..tiny()
        }
        .validate()
        .is_err());
    }

    #[test]
    fn split_counts() {
        assert_eq!(train_count(3), 2);
        assert_eq!(train_count(2), 1);
        assert_eq!(train_count(50), 35);
        assert_eq!(train_count(10), 7);
    }

    #[test]
    fn patch_area_is_small() {
        assert!((2.0 * PATCH_HALF).powi(2) <= 0.04);
    }

    #[test]
    fn siblings_differ_only_in_patches() {
        let spec = DatasetSpec {
            nuisance: false,
            image_size: 64,
            ..tiny()
        };
        let (a, b) = (render(&spec, 2, 0), render(&spec, 3, 0));
        let boxes = [detail_patch_bounds(&spec, 2), detail_patch_bounds(&spec, 3)];
        let mut differing = 0;
        for r in 0..64 {
            for c in 0..64 {
                let inside = boxes
                    .iter()
                    .any(|&(r0, c0, r1, c1)| (r0..=r1).contains(&r) && (c0..=c1).contains(&c));
                for ch in 0..3 {
                    let i = (ch * 64 + r) * 64 + c;
                    if a[i] != b[i] {
                        differing += 1;
                        assert!(
                            inside,
                            "pixel ({r}, {c}) differs outside the detail patches"
                        );
                    }
                }
            }
        }
        assert!(differing > 0);
    }

    #[test]
    fn nuisance_off_is_pose_free() {
        let spec = DatasetSpec {
            nuisance: false,
            ..tiny()
        };
        assert_eq!(render(&spec, 1, 0), render(&spec, 1, 2));
        let spec = tiny();
        assert_ne!(render(&spec, 1, 0), render(&spec, 1, 2));
    }
}
