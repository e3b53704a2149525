//! Images on disk, HR/LR pairing, synthetic corpora and manifests.

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use crate::error::{NcsrError, Result};
use crate::numerics::{downscale, Rng, Tensor};

fn image_err(path: &Path, reason: impl Into<String>) -> NcsrError {
    NcsrError::Image {
        path: path.to_path_buf(),
        reason: reason.into(),
    }
}

/// Read an 8-bit RGB or grayscale PNG as `(1, 3, H, W)` in `[0, 1]`.
/// Gray is replicated to three channels.
pub fn load_png(path: &Path) -> Result<Tensor> {
    let file = File::open(path).map_err(|e| image_err(path, e.to_string()))?;
    let mut reader = png::Decoder::new(file)
        .read_info()
        .map_err(|e| image_err(path, e.to_string()))?;
    let (w, h, interlaced, color, depth) = {
        let info = reader.info();
        (info.width as usize, info.height as usize, info.interlaced, info.color_type, info.bit_depth)
    };
    if interlaced {
        return Err(image_err(path, "interlaced PNG is not supported"));
    }
    if depth != png::BitDepth::Eight {
        return Err(image_err(path, format!("bit depth {depth:?} is not supported, expected 8")));
    }
    let channels = match color {
        png::ColorType::Rgb => 3,
        png::ColorType::Grayscale => 1,
        other => return Err(image_err(path, format!("color type {other:?} is not supported, expected RGB or grayscale"))),
    };
    let mut buf = vec![0u8; reader.output_buffer_size()];
    let frame = reader.next_frame(&mut buf).map_err(|e| image_err(path, e.to_string()))?;
    let stride = frame.line_size;
    Ok(Tensor::from_fn([1, 3, h, w], |_, c, y, x| {
        let k = if channels == 3 { c } else { 0 };
        buf[y * stride + x * channels + k] as f64 / 255.0
    }))
}

/// Write one image as 8-bit RGB, rounding to the nearest level and clamping.
pub fn save_png(path: &Path, image: &Tensor) -> Result<()> {
    let [n, c, h, w] = image.shape();
    if n != 1 || c != 3 {
        return Err(image_err(path, format!("expected a (1, 3, H, W) image, got {:?}", image.shape())));
    }
    let mut bytes = Vec::with_capacity(h * w * 3);
    for y in 0..h {
        for x in 0..w {
            for ch in 0..3 {
                bytes.push((image.at(0, ch, y, x).clamp(0.0, 1.0) * 255.0).round() as u8);
            }
        }
    }
    let file = File::create(path).map_err(|e| image_err(path, e.to_string()))?;
    let mut enc = png::Encoder::new(BufWriter::new(file), w as u32, h as u32);
    enc.set_color(png::ColorType::Rgb);
    enc.set_depth(png::BitDepth::Eight);
    let mut writer = enc.write_header().map_err(|e| image_err(path, e.to_string()))?;
    writer.write_image_data(&bytes).map_err(|e| image_err(path, e.to_string()))?;
    writer.finish().map_err(|e| image_err(path, e.to_string()))?;
    Ok(())
}

/// Round every value onto the 8-bit grid.
pub fn quantize(t: &Tensor) -> Tensor {
    t.map(|v| (v.clamp(0.0, 1.0) * 255.0).round() / 255.0)
}

/// Largest centered window whose sides are multiples of `multiple`.
pub fn center_crop(hr: &Tensor, multiple: usize) -> Result<Tensor> {
    let [n, c, h, w] = hr.shape();
    let (ch, cw) = (h / multiple * multiple, w / multiple * multiple);
    if ch == 0 || cw == 0 {
        return Err(NcsrError::InvalidArgument(format!(
            "image {h}x{w} is smaller than the minimum size {multiple}x{multiple}"
        )));
    }
    let (oy, ox) = ((h - ch) / 2, (w - cw) / 2);
    Ok(Tensor::from_fn([n, c, ch, cw], |ni, ci, y, x| hr.at(ni, ci, y + oy, x + ox)))
}

/// Center-crop to a multiple of `multiple` (itself a multiple of `scale`)
/// and derive the LR image by bicubic downsampling.
pub fn make_pair(hr: &Tensor, scale: usize, multiple: usize) -> Result<(Tensor, Tensor)> {
    if ![2, 4, 8].contains(&scale) {
        return Err(NcsrError::InvalidArgument(format!("scale must be 2, 4 or 8, got {scale}")));
    }
    if multiple == 0 || multiple % scale != 0 {
        return Err(NcsrError::InvalidArgument(format!("crop multiple {multiple} is not a multiple of scale {scale}")));
    }
    let hr = center_crop(hr, multiple)?;
    let lr = downscale(&hr, scale)?;
    Ok((hr, lr))
}

#[derive(Clone, Debug, PartialEq)]
pub struct ImageRecord {
    pub id: String,
    pub hr_path: Option<PathBuf>,
    pub hr: Tensor,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Pattern {
    Gradient,
    Blobs,
    Stripes,
    Checker,
}

impl Pattern {
    pub const ALL: [Pattern; 4] = [Pattern::Gradient, Pattern::Blobs, Pattern::Stripes, Pattern::Checker];

    pub fn name(self) -> &'static str {
        match self {
            Pattern::Gradient => "gradient",
            Pattern::Blobs => "blobs",
            Pattern::Stripes => "stripes",
            Pattern::Checker => "checker",
        }
    }
}

impl std::str::FromStr for Pattern {
    type Err = NcsrError;

    fn from_str(s: &str) -> Result<Self> {
        Pattern::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| NcsrError::Config(format!("unknown pattern `{s}` (gradient, blobs, stripes, checker)")))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticCorpusSpec {
    pub n_images: usize,
    pub size: usize,
    pub seed: u64,
    /// Image `i` uses `patterns[i % patterns.len()]`.
    pub patterns: Vec<Pattern>,
}

impl Default for SyntheticCorpusSpec {
    fn default() -> Self {
        SyntheticCorpusSpec {
            n_images: 16,
            size: 64,
            seed: 0,
            patterns: Pattern::ALL.to_vec(),
        }
    }
}

const MIN_STD: f64 = 0.05;

fn color(rng: &mut Rng) -> [f64; 3] {
    [rng.uniform(0.0, 1.0), rng.uniform(0.0, 1.0), rng.uniform(0.0, 1.0)]
}

fn mix(a: [f64; 3], b: [f64; 3], t: f64) -> [f64; 3] {
    [a[0] + (b[0] - a[0]) * t, a[1] + (b[1] - a[1]) * t, a[2] + (b[2] - a[2]) * t]
}

fn pattern_image(pattern: Pattern, size: usize, rng: &mut Rng) -> Tensor {
    let s = size as f64;
    let (c0, c1) = (color(rng), color(rng));
    let theta = rng.uniform(0.0, std::f64::consts::TAU);
    let (dx, dy) = (theta.cos(), theta.sin());
    let pixels: Vec<[f64; 3]> = match pattern {
        Pattern::Gradient => {
            let c2 = color(rng);
            let bend = rng.uniform(0.5, 2.0);
            (0..size * size)
                .map(|i| {
                    let (y, x) = ((i / size) as f64 / s, (i % size) as f64 / s);
                    let t = ((x * dx + y * dy) * 0.5 + 0.5).clamp(0.0, 1.0).powf(bend);
                    mix(mix(c0, c1, t), c2, y * x)
                })
                .collect()
        }
        Pattern::Blobs => {
            let blobs: Vec<(f64, f64, f64, [f64; 3])> = (0..3 + rng.below(5))
                .map(|_| (rng.uniform(0.0, s), rng.uniform(0.0, s), rng.uniform(s / 16.0, s / 4.0), color(rng)))
                .collect();
            (0..size * size)
                .map(|i| {
                    let (y, x) = ((i / size) as f64, (i % size) as f64);
                    blobs.iter().fold(c0, |acc, &(by, bx, r, col)| {
                        let d2 = (y - by).powi(2) + (x - bx).powi(2);
                        mix(acc, col, (-d2 / (2.0 * r * r)).exp())
                    })
                })
                .collect()
        }
        Pattern::Stripes => {
            let period = rng.uniform(3.0, 16.0);
            let phase = rng.uniform(0.0, std::f64::consts::TAU);
            (0..size * size)
                .map(|i| {
                    let (y, x) = ((i / size) as f64, (i % size) as f64);
                    let t = 0.5 + 0.5 * ((x * dx + y * dy) * std::f64::consts::TAU / period + phase).sin();
                    mix(c0, c1, t)
                })
                .collect()
        }
        Pattern::Checker => {
            let cell = 2 + rng.below(9);
            let (oy, ox) = (rng.below(cell), rng.below(cell));
            (0..size * size)
                .map(|i| {
                    let (y, x) = (i / size + oy, i % size + ox);
                    if (y / cell + x / cell) % 2 == 0 {
                        c0
                    } else {
                        c1
                    }
                })
                .collect()
        }
    };
    let img = Tensor::from_fn([1, 3, size, size], |_, c, y, x| pixels[y * size + x][c]);
    quantize(&img)
}

fn pixel_std(t: &Tensor) -> f64 {
    let m = t.mean();
    (t.data().iter().map(|v| (v - m).powi(2)).sum::<f64>() / t.numel() as f64).sqrt()
}

/// Deterministic textured images on the 8-bit grid. Draws whose pixel std
/// is at most 0.05 are redrawn.
pub fn synth_corpus(spec: &SyntheticCorpusSpec) -> Result<Vec<ImageRecord>> {
    if spec.patterns.is_empty() || spec.size == 0 {
        return Err(NcsrError::Config("synthetic corpus needs a size and at least one pattern".into()));
    }
    (0..spec.n_images)
        .map(|i| {
            let mut rng = Rng::derive(spec.seed, i as u64);
            let pattern = spec.patterns[i % spec.patterns.len()];
            let mut img = pattern_image(pattern, spec.size, &mut rng);
            let mut tries = 1;
            while pixel_std(&img) <= MIN_STD {
                if tries == 1000 {
                    return Err(NcsrError::Config(format!("could not draw a textured {pattern:?} image")));
                }
                img = pattern_image(pattern, spec.size, &mut rng);
                tries += 1;
            }
            Ok(ImageRecord {
                id: format!("synth{i:04}"),
                hr_path: None,
                hr: img,
            })
        })
        .collect()
}

/// Write every record as `<dir>/<id>.png` plus `<dir>/manifest.tsv`.
pub fn write_corpus(dir: &Path, records: &mut [ImageRecord]) -> Result<PathBuf> {
    fs::create_dir_all(dir)?;
    let mut manifest = String::new();
    for r in records.iter_mut() {
        let file = format!("{}.png", r.id);
        save_png(&dir.join(&file), &r.hr)?;
        manifest.push_str(&format!("{}\t{}\n", r.id, file));
        r.hr_path = Some(dir.join(file));
    }
    let path = dir.join("manifest.tsv");
    fs::write(&path, manifest)?;
    Ok(path)
}

/// Parse `id<TAB>hr_path` lines. Relative paths resolve against the
/// manifest's directory; blank lines and `#` comments are skipped.
pub fn read_manifest(path: &Path) -> Result<Vec<(String, PathBuf)>> {
    let text = fs::read_to_string(path).map_err(|e| NcsrError::Config(format!("manifest {}: {e}", path.display())))?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() || line.trim_start().starts_with('#') {
            continue;
        }
        let (id, p) = line.split_once('\t').ok_or_else(|| {
            NcsrError::Config(format!("manifest {} line {}: expected `id<TAB>hr_path`", path.display(), i + 1))
        })?;
        let p = PathBuf::from(p.trim());
        out.push((id.trim().to_string(), if p.is_absolute() { p } else { base.join(p) }));
    }
    Ok(out)
}

/// Load every image in a manifest.
pub fn load_manifest(path: &Path) -> Result<Vec<ImageRecord>> {
    read_manifest(path)?
        .into_iter()
        .map(|(id, p)| {
            Ok(ImageRecord {
                hr: load_png(&p)?,
                id,
                hr_path: Some(p),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_gray(path: &Path, w: u32, h: u32, px: &[u8]) {
        let file = File::create(path).unwrap();
        let mut enc = png::Encoder::new(BufWriter::new(file), w, h);
        enc.set_color(png::ColorType::Grayscale);
        enc.set_depth(png::BitDepth::Eight);
        enc.write_header().unwrap().write_image_data(px).unwrap();
    }

    #[test]
    fn grayscale_is_replicated() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("g.png");
        write_gray(&p, 2, 2, &[0, 128, 255, 64]);
        let t = load_png(&p).unwrap();
        assert_eq!(t.shape(), [1, 3, 2, 2]);
        for c in 0..3 {
            assert_eq!(t.at(0, c, 0, 1), 128.0 / 255.0);
            assert_eq!(t.at(0, c, 1, 0), 1.0);
            assert_eq!(t.at(0, c, 1, 1), 64.0 / 255.0);
        }
    }

    #[test]
    fn rgb_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.png");
        let img = quantize(&Rng::seed_from_u64(1).uniform_tensor([1, 3, 5, 7], 0.0, 1.0));
        save_png(&p, &img).unwrap();
        assert_eq!(load_png(&p).unwrap(), img);
    }

    #[test]
    fn truncated_and_unsupported_files_fail() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.png");
        save_png(&p, &Tensor::full([1, 3, 16, 16], 0.5)).unwrap();
        let bytes = fs::read(&p).unwrap();
        let q = dir.path().join("t.png");
        fs::write(&q, &bytes[..bytes.len() - 20]).unwrap();
        assert!(load_png(&q).is_err());
        let r = dir.path().join("rgba.png");
        let mut enc = png::Encoder::new(BufWriter::new(File::create(&r).unwrap()), 1, 1);
        enc.set_color(png::ColorType::Rgba);
        enc.set_depth(png::BitDepth::Eight);
        enc.write_header().unwrap().write_image_data(&[1, 2, 3, 4]).unwrap();
        let err = load_png(&r).unwrap_err().to_string();
        assert!(err.contains("color type"), "{err}");
    }

    #[test]
    fn pairing_crops_and_downsamples() {
        let hr = Tensor::full([1, 3, 65, 65], 0.3);
        let (c, lr) = make_pair(&hr, 4, 32).unwrap();
        assert_eq!(c.shape(), [1, 3, 64, 64]);
        assert_eq!(lr.shape(), [1, 3, 16, 16]);
        assert!(lr.data().iter().all(|v| (v - 0.3).abs() < 1e-12));
        assert!(make_pair(&Tensor::zeros([1, 3, 20, 20]), 4, 32).is_err());
        let ramp = Tensor::from_fn([1, 3, 70, 66], |_, c, y, x| (c + y * x) as f64 / 5000.0);
        assert_eq!(make_pair(&ramp, 2, 16).unwrap(), make_pair(&ramp, 2, 16).unwrap());
        let (c, _) = make_pair(&ramp, 2, 16).unwrap();
        assert_eq!(c.at(0, 0, 0, 0), ramp.at(0, 0, 3, 1));
    }

    #[test]
    fn synthetic_corpus_contract() {
        let spec = SyntheticCorpusSpec::default();
        let a = synth_corpus(&spec).unwrap();
        assert_eq!(a, synth_corpus(&spec).unwrap());
        assert_eq!(a.len(), 16);
        for r in &a {
            assert_eq!(r.hr.shape(), [1, 3, 64, 64]);
            assert!(pixel_std(&r.hr) > 0.05);
            assert_eq!(quantize(&r.hr), r.hr);
        }
        let other = synth_corpus(&SyntheticCorpusSpec { seed: 1, ..spec }).unwrap();
        assert_ne!(a, other);
    }

    #[test]
    fn manifest_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut recs = synth_corpus(&SyntheticCorpusSpec {
            n_images: 3,
            size: 16,
            ..SyntheticCorpusSpec::default()
        })
        .unwrap();
        let m = write_corpus(dir.path(), &mut recs).unwrap();
        let loaded = load_manifest(&m).unwrap();
        assert_eq!(loaded, recs);
        fs::write(dir.path().join("bad.tsv"), "no tab here\n").unwrap();
        let err = read_manifest(&dir.path().join("bad.tsv")).unwrap_err().to_string();
        assert!(err.contains("line 1"), "{err}");
    }
}
