//! Labeled image sets: the synthetic desk-scale benchmark and a PNG
//! directory loader.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{quantize, ImageTensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone)]
pub struct LabeledDataset {
    images: Vec<ImageTensor>,
    labels: Vec<usize>,
    num_classes: usize,
    split: Split,
}

impl LabeledDataset {
    pub fn new(images: Vec<ImageTensor>, labels: Vec<usize>, num_classes: usize, split: Split) -> Result<Self> {
        if images.len() != labels.len() {
            return Err(Error::InvalidInput(format!(
                "{} images but {} labels",
                images.len(),
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(Error::OutOfRange {
                what: "class id",
                detail: format!("{bad} >= K = {num_classes}"),
            });
        }
        if let Some(first) = images.first() {
            if let Some(img) = images.iter().find(|i| i.shape() != first.shape()) {
                return Err(Error::shape("LabeledDataset::new", first.shape(), img.shape()));
            }
        }
        Ok(Self {
            images,
            labels,
            num_classes,
            split,
        })
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn split(&self) -> Split {
        self.split
    }

    pub fn images(&self) -> &[ImageTensor] {
        &self.images
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn image_shape(&self) -> Option<(usize, usize)> {
        self.images.first().map(ImageTensor::shape)
    }

    /// Image indices grouped by class, in dataset order.
    pub fn indices_by_class(&self) -> Vec<Vec<usize>> {
        let mut by_class = vec![Vec::new(); self.num_classes];
        for (i, &l) in self.labels.iter().enumerate() {
            by_class[l].push(i);
        }
        by_class
    }

    /// The first `per_class` images of every class.
    pub fn take_per_class(&self, per_class: usize) -> Self {
        let mut keep: Vec<usize> = self
            .indices_by_class()
            .into_iter()
            .flat_map(|idx| idx.into_iter().take(per_class))
            .collect();
        keep.sort_unstable();
        Self {
            images: keep.iter().map(|&i| self.images[i].clone()).collect(),
            labels: keep.iter().map(|&i| self.labels[i]).collect(),
            num_classes: self.num_classes,
            split: self.split,
        }
    }
}

/// Parameters of the synthetic shapes-and-colours benchmark.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub classes: usize,
    pub image_size: usize,
    pub train_per_class: usize,
    pub test_per_class: usize,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            classes: 10,
            image_size: 32,
            train_per_class: 500,
            test_per_class: 200,
            seed: 2024,
        }
    }
}

const PALETTE: [([f32; 3], [f32; 3]); 10] = [
    ([0.85, 0.20, 0.15], [0.15, 0.20, 0.35]),
    ([0.20, 0.75, 0.25], [0.55, 0.30, 0.20]),
    ([0.20, 0.35, 0.85], [0.85, 0.80, 0.55]),
    ([0.90, 0.80, 0.20], [0.30, 0.15, 0.45]),
    ([0.75, 0.25, 0.75], [0.25, 0.55, 0.30]),
    ([0.20, 0.80, 0.80], [0.50, 0.15, 0.15]),
    ([0.95, 0.55, 0.15], [0.10, 0.30, 0.50]),
    ([0.90, 0.90, 0.90], [0.35, 0.35, 0.35]),
    ([0.45, 0.25, 0.10], [0.70, 0.85, 0.95]),
    ([0.10, 0.10, 0.10], [0.85, 0.60, 0.70]),
];

#[derive(Debug, Clone, Copy)]
enum Motif {
    Disk,
    Square,
    HStripes,
    VStripes,
    Diagonal,
    Ring,
    Cross,
    Checker,
    Triangle,
    Dots,
}

const MOTIFS: [Motif; 10] = [
    Motif::Disk,
    Motif::Square,
    Motif::HStripes,
    Motif::VStripes,
    Motif::Diagonal,
    Motif::Ring,
    Motif::Cross,
    Motif::Checker,
    Motif::Triangle,
    Motif::Dots,
];

impl Motif {
    /// Foreground coverage in `[0, 1]` at normalised coordinates `(u, v)`
    /// relative to a shape centred at `(cu, cv)` with radius `s`.
    fn coverage(self, u: f64, v: f64, cu: f64, cv: f64, s: f64, period: f64) -> f64 {
        let (du, dv) = (u - cu, v - cv);
        let soft = |d: f64| (0.5 - d / 0.04).clamp(0.0, 1.0);
        let stripe = |x: f64| if (x / period).rem_euclid(1.0) < 0.5 { 1.0 } else { 0.0 };
        match self {
            Motif::Disk => soft((du * du + dv * dv).sqrt() - s),
            Motif::Square => soft(du.abs().max(dv.abs()) - s * 0.85),
            Motif::HStripes => stripe(v),
            Motif::VStripes => stripe(u),
            Motif::Diagonal => stripe((u + v) / std::f64::consts::SQRT_2),
            Motif::Ring => {
                let r = (du * du + dv * dv).sqrt();
                soft((r - s).abs() - s * 0.3)
            }
            Motif::Cross => soft(du.abs().min(dv.abs()) - s * 0.3).min(soft(du.abs().max(dv.abs()) - s)),
            Motif::Checker => stripe(u) * (1.0 - stripe(v)) + (1.0 - stripe(u)) * stripe(v),
            Motif::Triangle => {
                let inside = dv > -s && dv < s && du.abs() < (dv + s) * 0.6;
                if inside {
                    1.0
                } else {
                    0.0
                }
            }
            Motif::Dots => {
                let fu = (u / period).rem_euclid(1.0) - 0.5;
                let fv = (v / period).rem_euclid(1.0) - 0.5;
                if (fu * fu + fv * fv).sqrt() < 0.3 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

fn render(class: usize, size: usize, rng: &mut ChaCha8Rng) -> ImageTensor {
    let (fg, bg) = PALETTE[class % PALETTE.len()];
    let motif = MOTIFS[class % MOTIFS.len()];
    let jitter = Normal::new(0.0, 0.05).expect("valid normal");
    let noise = Normal::new(0.0, 0.02).expect("valid normal");
    let fg: Vec<f64> = fg.iter().map(|&c| f64::from(c) + jitter.sample(rng)).collect();
    let bg: Vec<f64> = bg.iter().map(|&c| f64::from(c) + jitter.sample(rng)).collect();
    let cu = rng.random_range(0.35..0.65);
    let cv = rng.random_range(0.35..0.65);
    let s = rng.random_range(0.22..0.34);
    let period = rng.random_range(0.22..0.34);
    // brightness gradient across the image
    let gx = rng.random_range(-0.08..0.08);
    let gy = rng.random_range(-0.08..0.08);

    let mut values = Vec::with_capacity(size * size * 3);
    for y in 0..size {
        for x in 0..size {
            let u = (x as f64 + 0.5) / size as f64;
            let v = (y as f64 + 0.5) / size as f64;
            let a = motif.coverage(u, v, cu, cv, s, period);
            let shade = gx * (u - 0.5) + gy * (v - 0.5);
            for c in 0..3 {
                values.push(a * fg[c] + (1.0 - a) * bg[c] + shade + noise.sample(rng));
            }
        }
    }
    ImageTensor::from_clamped(size, size, values).expect("finite synthetic pixels")
}

/// Generate the `(train, test)` pair of the synthetic benchmark.
///
/// Every class pairs a foreground/background palette with a motif (disk,
/// stripes, ring, ...) placed with random position, scale and period, plus a
/// brightness gradient and mild pixel noise. Pixels are snapped to the 8-bit
/// grid so the set round-trips through PNG exactly.
pub fn synthetic(spec: &SyntheticSpec) -> Result<(LabeledDataset, LabeledDataset)> {
    if spec.classes < 2 || spec.classes > PALETTE.len() {
        return Err(Error::config(
            "classes",
            format!("must be in 2..=10, got {}", spec.classes),
        ));
    }
    if spec.image_size < 4 {
        return Err(Error::config("image_size", "must be at least 4"));
    }
    let build = |split: Split, per_class: usize, salt: u64| {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ salt);
        let mut images = Vec::with_capacity(per_class * spec.classes);
        let mut labels = Vec::with_capacity(per_class * spec.classes);
        // interleave classes so prefixes stay balanced
        for _ in 0..per_class {
            for class in 0..spec.classes {
                images.push(render(class, spec.image_size, &mut rng).quantized());
                labels.push(class);
            }
        }
        LabeledDataset::new(images, labels, spec.classes, split)
    };
    Ok((
        build(Split::Train, spec.train_per_class, 0x7472_6169_6e00_0000)?,
        build(Split::Test, spec.test_per_class, 0x7465_7374_0000_0000)?,
    ))
}

/// Load `root/<class_id>/*.png` into a dataset. Class directories must be
/// named by their integer id; every image must share one size.
pub fn load_png_dir(root: &Path, split: Split) -> Result<LabeledDataset> {
    let mut entries: Vec<(usize, std::path::PathBuf)> = Vec::new();
    for entry in fs::read_dir(root)? {
        let entry = entry?;
        if !entry.file_type()?.is_dir() {
            continue;
        }
        let name = entry.file_name().to_string_lossy().into_owned();
        let class: usize = name
            .parse()
            .map_err(|_| Error::InvalidInput(format!("class directory {name:?} is not an integer id")))?;
        let mut files: Vec<_> = fs::read_dir(entry.path())?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|e| e.eq_ignore_ascii_case("png")))
            .collect();
        files.sort();
        entries.extend(files.into_iter().map(|p| (class, p)));
    }
    entries.sort();
    let num_classes = entries.iter().map(|(c, _)| c + 1).max().unwrap_or(0);
    let mut images = Vec::with_capacity(entries.len());
    let mut labels = Vec::with_capacity(entries.len());
    for (class, path) in entries {
        images.push(read_png(&path)?);
        labels.push(class);
    }
    LabeledDataset::new(images, labels, num_classes, split)
}

/// Write every image to `root/<class_id>/<index>.png`.
pub fn save_png_dir(data: &LabeledDataset, root: &Path) -> Result<()> {
    for (i, (img, &label)) in data.images().iter().zip(data.labels()).enumerate() {
        let dir = root.join(label.to_string());
        fs::create_dir_all(&dir)?;
        write_png(img, &dir.join(format!("{i:06}.png")))?;
    }
    Ok(())
}

pub fn read_png(path: &Path) -> Result<ImageTensor> {
    let decoder = png::Decoder::new(std::io::BufReader::new(fs::File::open(path)?));
    let mut reader = decoder
        .read_info()
        .map_err(|e| Error::InvalidInput(format!("{}: {e}", path.display())))?;
    let mut buf = vec![0; reader.output_buffer_size().unwrap_or(0)];
    let info = reader
        .next_frame(&mut buf)
        .map_err(|e| Error::InvalidInput(format!("{}: {e}", path.display())))?;
    if info.bit_depth != png::BitDepth::Eight {
        return Err(Error::InvalidInput(format!(
            "{}: only 8-bit PNGs are supported",
            path.display()
        )));
    }
    let (h, w) = (info.height as usize, info.width as usize);
    let bytes = &buf[..info.buffer_size()];
    let rgb: Vec<u8> = match info.color_type {
        png::ColorType::Rgb => bytes.to_vec(),
        png::ColorType::Rgba => bytes.chunks_exact(4).flat_map(|p| [p[0], p[1], p[2]]).collect(),
        png::ColorType::Grayscale => bytes.iter().flat_map(|&g| [g, g, g]).collect(),
        other => {
            return Err(Error::InvalidInput(format!(
                "{}: unsupported colour type {other:?}",
                path.display()
            )))
        }
    };
    ImageTensor::from_u8(h, w, &rgb)
}

pub fn write_png(img: &ImageTensor, path: &Path) -> Result<()> {
    let file = std::io::BufWriter::new(fs::File::create(path)?);
    let mut encoder = png::Encoder::new(file, img.width() as u32, img.height() as u32);
    encoder.set_color(png::ColorType::Rgb);
    encoder.set_depth(png::BitDepth::Eight);
    let mut writer = encoder
        .write_header()
        .map_err(|e| Error::InvalidInput(format!("{}: {e}", path.display())))?;
    let bytes: Vec<u8> = img.pixels().iter().map(|&v| quantize(v)).collect();
    writer
        .write_image_data(&bytes)
        .map_err(|e| Error::InvalidInput(format!("{}: {e}", path.display())))?;
    Ok(())
}
