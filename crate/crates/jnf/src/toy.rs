//! Paired squares-and-circles dataset.
//!
//! Two 32×32 black-and-white modalities per sample: a centered square and a
//! centered circle. Each sample is either *full* (interior filled) or
//! *empty* (outline only); the class is shared between the two images while
//! the widths are drawn independently. The class balance is exactly one
//! half, which is why sample counts must be even.

use std::fmt;
use std::io::{BufRead, Write};
use std::path::Path;

use rand::Rng;
use thiserror::Error;

use crate::rng::stream_rng;
use crate::tensor::Tensor;

pub const IMAGE_SIDE: usize = 32;
pub const IMAGE_PIXELS: usize = IMAGE_SIDE * IMAGE_SIDE;
pub const MIN_WIDTH: usize = 10;
pub const MAX_WIDTH: usize = 28;

/// Names of the two modalities, in storage order.
pub const MODALITIES: [&str; 2] = ["square", "circle"];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ShapeClass {
    Full,
    Empty,
}

impl ShapeClass {
    pub fn code(self) -> char {
        match self {
            ShapeClass::Full => 'F',
            ShapeClass::Empty => 'E',
        }
    }

    pub fn label(self) -> usize {
        match self {
            ShapeClass::Full => 0,
            ShapeClass::Empty => 1,
        }
    }
}

impl fmt::Display for ShapeClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.code())
    }
}

/// One paired observation.
#[derive(Clone, Debug)]
pub struct ShapeSample {
    pub square_image: Vec<f64>,
    pub circle_image: Vec<f64>,
    pub shape_class: ShapeClass,
    pub square_width: usize,
    pub circle_width: usize,
}

impl ShapeSample {
    pub fn image(&self, modality: usize) -> &[f64] {
        match modality {
            0 => &self.square_image,
            1 => &self.circle_image,
            m => panic!("modality index {m} out of range"),
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct ToyDatasetConfig {
    pub n_samples: usize,
    pub seed: u64,
}

#[derive(Debug, Error)]
pub enum ToyDataError {
    #[error("sample count {0} is odd; classes are balanced half/half")]
    OddSampleCount(usize),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed dataset at line {line}: {reason}")]
    Malformed { line: usize, reason: String },
}

/// Rasterizes a centered axis-aligned square of side `width`; empty squares
/// keep a one-pixel border.
pub fn rasterize_square(width: usize, filled: bool) -> Vec<f64> {
    assert!(
        (MIN_WIDTH..=MAX_WIDTH).contains(&width),
        "square width {width} outside [{MIN_WIDTH}, {MAX_WIDTH}]"
    );
    // Center the width×width window; ties go toward lower indices.
    let start = (IMAGE_SIDE - width) / 2;
    let end = start + width;
    let mut img = vec![0.0; IMAGE_PIXELS];
    for r in start..end {
        for c in start..end {
            let on_border = r == start || r == end - 1 || c == start || c == end - 1;
            if filled || on_border {
                img[r * IMAGE_SIDE + c] = 1.0;
            }
        }
    }
    img
}

/// Rasterizes a centered circle of diameter `width` around (15.5, 15.5);
/// empty circles keep a one-pixel annulus.
pub fn rasterize_circle(width: usize, filled: bool) -> Vec<f64> {
    assert!(
        (MIN_WIDTH..=MAX_WIDTH).contains(&width),
        "circle width {width} outside [{MIN_WIDTH}, {MAX_WIDTH}]"
    );
    let center = (IMAGE_SIDE as f64 - 1.0) / 2.0;
    let radius = width as f64 / 2.0;
    let mut img = vec![0.0; IMAGE_PIXELS];
    for r in 0..IMAGE_SIDE {
        for c in 0..IMAGE_SIDE {
            let dr = r as f64 - center;
            let dc = c as f64 - center;
            let dist = (dr * dr + dc * dc).sqrt();
            let on = if filled {
                dist <= radius
            } else {
                dist <= radius && dist >= radius - 1.0
            };
            if on {
                img[r * IMAGE_SIDE + c] = 1.0;
            }
        }
    }
    img
}

/// Deterministic per `(seed, index)`: sample `index` is identical no matter
/// how many others are generated. Classes alternate full/empty so every
/// even prefix is exactly balanced.
pub fn generate_sample(seed: u64, index: usize) -> ShapeSample {
    let mut rng = stream_rng(seed, index as u64);
    let shape_class = if index % 2 == 0 { ShapeClass::Full } else { ShapeClass::Empty };
    let square_width = rng.random_range(MIN_WIDTH..=MAX_WIDTH);
    let circle_width = rng.random_range(MIN_WIDTH..=MAX_WIDTH);
    let filled = shape_class == ShapeClass::Full;
    ShapeSample {
        square_image: rasterize_square(square_width, filled),
        circle_image: rasterize_circle(circle_width, filled),
        shape_class,
        square_width,
        circle_width,
    }
}

pub fn generate_dataset(cfg: &ToyDatasetConfig) -> Result<Vec<ShapeSample>, ToyDataError> {
    if cfg.n_samples % 2 != 0 {
        return Err(ToyDataError::OddSampleCount(cfg.n_samples));
    }
    Ok((0..cfg.n_samples).map(|i| generate_sample(cfg.seed, i)).collect())
}

/// Writes the line-oriented dataset format: a header
/// `JNF-TOY v1 n=<n> seed=<s>`, then per sample the square row, the circle
/// row (1024 characters of `0`/`1` each) and the class character.
pub fn write_dataset(
    samples: &[ShapeSample],
    seed: u64,
    path: &Path,
) -> Result<(), ToyDataError> {
    let file = std::fs::File::create(path)?;
    let mut w = std::io::BufWriter::new(file);
    writeln!(w, "JNF-TOY v1 n={} seed={}", samples.len(), seed)?;
    let mut row = String::with_capacity(IMAGE_PIXELS);
    for s in samples {
        for img in [&s.square_image, &s.circle_image] {
            row.clear();
            for &p in img.iter() {
                row.push(if p > 0.5 { '1' } else { '0' });
            }
            writeln!(w, "{row}")?;
        }
        writeln!(w, "{}", s.shape_class)?;
    }
    Ok(())
}

/// Reads the format produced by [`write_dataset`]. Widths are recovered by
/// exact raster lookup — every (width, class) pair rasterizes uniquely.
pub fn read_dataset(path: &Path) -> Result<Vec<ShapeSample>, ToyDataError> {
    let mut square_lut = std::collections::BTreeMap::new();
    let mut circle_lut = std::collections::BTreeMap::new();
    for width in MIN_WIDTH..=MAX_WIDTH {
        for filled in [true, false] {
            square_lut.insert(raster_key(&rasterize_square(width, filled)), width);
            circle_lut.insert(raster_key(&rasterize_circle(width, filled)), width);
        }
    }
    let file = std::fs::File::open(path)?;
    let mut lines = std::io::BufReader::new(file).lines();
    let header = lines
        .next()
        .ok_or(ToyDataError::Malformed { line: 1, reason: "empty file".into() })??;
    let mut n: Option<usize> = None;
    if !header.starts_with("JNF-TOY v1 ") {
        return Err(ToyDataError::Malformed {
            line: 1,
            reason: format!("bad header `{header}`"),
        });
    }
    for tok in header.split_whitespace() {
        if let Some(v) = tok.strip_prefix("n=") {
            n = v.parse().ok();
        }
    }
    let n = n.ok_or(ToyDataError::Malformed { line: 1, reason: "missing n=".into() })?;

    let mut samples = Vec::with_capacity(n);
    let mut line_no = 1;
    let next_line = |lines: &mut std::io::Lines<std::io::BufReader<std::fs::File>>,
                         line_no: &mut usize|
     -> Result<String, ToyDataError> {
        *line_no += 1;
        lines
            .next()
            .ok_or(ToyDataError::Malformed { line: *line_no, reason: "truncated".into() })?
            .map_err(ToyDataError::from)
    };
    for _ in 0..n {
        let sq = parse_image_row(&next_line(&mut lines, &mut line_no)?, line_no)?;
        let ci = parse_image_row(&next_line(&mut lines, &mut line_no)?, line_no)?;
        let cls_line = next_line(&mut lines, &mut line_no)?;
        let shape_class = match cls_line.as_str() {
            "F" => ShapeClass::Full,
            "E" => ShapeClass::Empty,
            other => {
                return Err(ToyDataError::Malformed {
                    line: line_no,
                    reason: format!("bad class `{other}`"),
                })
            }
        };
        let square_width = *square_lut.get(&raster_key(&sq)).ok_or(ToyDataError::Malformed {
            line: line_no,
            reason: "square raster matches no known width".into(),
        })?;
        let circle_width = *circle_lut.get(&raster_key(&ci)).ok_or(ToyDataError::Malformed {
            line: line_no,
            reason: "circle raster matches no known width".into(),
        })?;
        samples.push(ShapeSample {
            square_image: sq,
            circle_image: ci,
            shape_class,
            square_width,
            circle_width,
        });
    }
    Ok(samples)
}

fn raster_key(img: &[f64]) -> Vec<u8> {
    img.iter().map(|&p| if p > 0.5 { 1u8 } else { 0u8 }).collect()
}

fn parse_image_row(line: &str, line_no: usize) -> Result<Vec<f64>, ToyDataError> {
    if line.len() != IMAGE_PIXELS || !line.bytes().all(|b| b == b'0' || b == b'1') {
        return Err(ToyDataError::Malformed {
            line: line_no,
            reason: format!("expected {IMAGE_PIXELS} binary characters"),
        });
    }
    Ok(line.bytes().map(|b| (b - b'0') as f64).collect())
}

/// Stacks one modality of a sample slice into a `batch × 1024` tensor.
pub fn batch_images(samples: &[ShapeSample], modality: usize) -> Tensor {
    let mut data = Vec::with_capacity(samples.len() * IMAGE_PIXELS);
    for s in samples {
        data.extend_from_slice(s.image(modality));
    }
    Tensor::new(vec![samples.len(), IMAGE_PIXELS], data)
}

/// Class labels (0 = full, 1 = empty) for a sample slice.
pub fn batch_labels(samples: &[ShapeSample]) -> Vec<usize> {
    samples.iter().map(|s| s.shape_class.label()).collect()
}

/// The interior-pixel rule: a shape is *full* iff the center pixel is on.
/// Ground truth for both modalities by construction.
pub fn interior_pixel_class(img: &[f64]) -> ShapeClass {
    let center = (IMAGE_SIDE / 2) * IMAGE_SIDE + IMAGE_SIDE / 2;
    if img[center] > 0.5 {
        ShapeClass::Full
    } else {
        ShapeClass::Empty
    }
}
