//! Procedural binary sprites: shape x scale x orientation x position grids
//! rasterized onto a square canvas, with a bit-packed cache format and PGM
//! export for eyeballing.
//!
//! Positions are expressed relative to the safe band for the sprite's own
//! rotated bounding radius, so every grid combination renders fully inside
//! the canvas by construction; an explicit spec can still fail if the shape
//! cannot fit at all.

use std::path::Path;

use crate::error::{EvaeError, Result};
use crate::nn::Cursor;
use crate::rng::Rng;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SpriteShape {
    Square,
    Ellipse,
    Heart,
}

pub const ALL_SHAPES: [SpriteShape; 3] = [
    SpriteShape::Square,
    SpriteShape::Ellipse,
    SpriteShape::Heart,
];

impl SpriteShape {
    pub fn name(self) -> &'static str {
        match self {
            SpriteShape::Square => "square",
            SpriteShape::Ellipse => "ellipse",
            SpriteShape::Heart => "heart",
        }
    }

    /// Radius of the smallest circle containing the shape in local units.
    fn bounding_radius(self) -> f64 {
        match self {
            // Square spans [-1, 1]^2.
            SpriteShape::Square => std::f64::consts::SQRT_2,
            // Ellipse has semi-axes (1, 0.5).
            SpriteShape::Ellipse => 1.0,
            // Numerical bound on the implicit heart region (lobes reach
            // radius ~1.4245).
            SpriteShape::Heart => 1.43,
        }
    }

    /// Inclusion test in the sprite's local frame (+y up).
    fn contains(self, x: f64, y: f64) -> bool {
        match self {
            SpriteShape::Square => x.abs() <= 1.0 && y.abs() <= 1.0,
            SpriteShape::Ellipse => x * x + 4.0 * y * y <= 1.0,
            SpriteShape::Heart => heart_inside(x, y),
        }
    }
}

/// The classic implicit heart region `(x^2 + y^2 - 1)^3 - x^2 y^3 <= 0`.
pub fn heart_inside(x: f64, y: f64) -> bool {
    let s = x * x + y * y - 1.0;
    s * s * s - x * x * y * y * y <= 0.0
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SpriteSpec {
    pub shape: SpriteShape,
    /// Sprite extent as a fraction of the canvas side, in (0, 1].
    pub scale: f64,
    /// Radians in [0, 2*pi).
    pub orientation: f64,
    /// Relative position of the sprite center within its safe band, in [0, 1].
    pub pos_x: f64,
    pub pos_y: f64,
}

/// Rasterize one sprite to 0/1 pixels (row-major, `canvas * canvas`).
///
/// Pixel centers are tested against the analytic inclusion region after
/// translating to the sprite center, rotating by `-orientation` and dividing
/// by the scale radius. Errors if the sprite cannot fit inside the canvas.
pub fn render_sprite(spec: &SpriteSpec, canvas: usize) -> Result<Vec<u8>> {
    if !(spec.scale > 0.0 && spec.scale <= 1.0) {
        return Err(EvaeError::Config(format!(
            "sprite scale must lie in (0, 1], got {}",
            spec.scale
        )));
    }
    if !(0.0..=1.0).contains(&spec.pos_x) || !(0.0..=1.0).contains(&spec.pos_y) {
        return Err(EvaeError::Config(
            "sprite position must lie in [0, 1]".into(),
        ));
    }
    let side = canvas as f64;
    let unit = spec.scale * side / 2.0;
    let margin = unit * spec.shape.bounding_radius() + 0.5;
    let band = side - 2.0 * margin;
    if band < 0.0 {
        return Err(EvaeError::Config(format!(
            "sprite would clip the canvas: {} at scale {} needs margin {margin:.2} on a {canvas} canvas",
            spec.shape.name(),
            spec.scale
        )));
    }
    let cx = margin + spec.pos_x * band;
    let cy = margin + spec.pos_y * band;
    let (sin_t, cos_t) = spec.orientation.sin_cos();

    let mut out = vec![0u8; canvas * canvas];
    for py in 0..canvas {
        for px in 0..canvas {
            let dx = (px as f64 + 0.5 - cx) / unit;
            // +y up in the local frame; pixel rows grow downward.
            let dy = (cy - (py as f64 + 0.5)) / unit;
            let lx = cos_t * dx + sin_t * dy;
            let ly = -sin_t * dx + cos_t * dy;
            if spec.shape.contains(lx, ly) {
                out[py * canvas + px] = 1;
            }
        }
    }
    Ok(out)
}

/// Factor grid configuration. Total images = shapes * scales * orientations
/// * positions^2.
#[derive(Clone, Debug, PartialEq)]
pub struct DatasetConfig {
    pub canvas: usize,
    pub shapes: usize,
    pub scales: usize,
    pub orientations: usize,
    /// Grid points per position axis.
    pub positions: usize,
    pub seed: u64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        // 3 * 4 * 8 * 8 * 8 = 6144 images on a 32x32 canvas.
        DatasetConfig {
            canvas: 32,
            shapes: 3,
            scales: 4,
            orientations: 8,
            positions: 8,
            seed: 1,
        }
    }
}

impl DatasetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.canvas < 4 {
            return Err(EvaeError::Config("canvas must be at least 4 pixels".into()));
        }
        if self.shapes == 0 || self.shapes > ALL_SHAPES.len() {
            return Err(EvaeError::Config(format!(
                "shapes must lie in 1..=3, got {}",
                self.shapes
            )));
        }
        if self.scales == 0 || self.orientations == 0 || self.positions == 0 {
            return Err(EvaeError::Config("factor grids must be non-empty".into()));
        }
        Ok(())
    }

    pub fn total_images(&self) -> usize {
        self.shapes * self.scales * self.orientations * self.positions * self.positions
    }

    pub fn scale_values(&self) -> Vec<f64> {
        grid_values(self.scales, 0.25, 0.55)
    }

    pub fn orientation_values(&self) -> Vec<f64> {
        (0..self.orientations)
            .map(|i| 2.0 * std::f64::consts::PI * i as f64 / self.orientations as f64)
            .collect()
    }

    pub fn position_values(&self) -> Vec<f64> {
        grid_values(self.positions, 0.0, 1.0)
    }
}

fn grid_values(n: usize, lo: f64, hi: f64) -> Vec<f64> {
    if n == 1 {
        vec![(lo + hi) / 2.0]
    } else {
        (0..n)
            .map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
            .collect()
    }
}

/// Ground-truth factor indices for one image, in generation order.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FactorLabel {
    pub shape: u16,
    pub scale: u16,
    pub orientation: u16,
    pub pos_x: u16,
    pub pos_y: u16,
}

/// The generated dataset: bit-packed binary images plus aligned labels.
#[derive(Clone, Debug, PartialEq)]
pub struct SpritesDataset {
    pub config: DatasetConfig,
    pub labels: Vec<FactorLabel>,
    bits: Vec<u64>,
    pixels_per_image: usize,
}

const CACHE_MAGIC: &[u8; 8] = b"EVAESPR1";

impl SpritesDataset {
    /// Generate the full Cartesian product of factor grids in lexicographic
    /// order (shape, scale, orientation, pos_x, pos_y).
    pub fn generate(config: &DatasetConfig) -> Result<Self> {
        config.validate()?;
        let pixels = config.canvas * config.canvas;
        let count = config.total_images();
        let mut bits = vec![0u64; (count * pixels).div_ceil(64)];
        let mut labels = Vec::with_capacity(count);
        let scales = config.scale_values();
        let orientations = config.orientation_values();
        let positions = config.position_values();

        let mut idx = 0usize;
        for (si, shape) in ALL_SHAPES.iter().take(config.shapes).enumerate() {
            for (sci, &scale) in scales.iter().enumerate() {
                for (oi, &orientation) in orientations.iter().enumerate() {
                    for (xi, &pos_x) in positions.iter().enumerate() {
                        for (yi, &pos_y) in positions.iter().enumerate() {
                            let spec = SpriteSpec {
                                shape: *shape,
                                scale,
                                orientation,
                                pos_x,
                                pos_y,
                            };
                            let img = render_sprite(&spec, config.canvas)?;
                            let base = idx * pixels;
                            for (p, &v) in img.iter().enumerate() {
                                if v != 0 {
                                    bits[(base + p) / 64] |= 1u64 << ((base + p) % 64);
                                }
                            }
                            labels.push(FactorLabel {
                                shape: si as u16,
                                scale: sci as u16,
                                orientation: oi as u16,
                                pos_x: xi as u16,
                                pos_y: yi as u16,
                            });
                            idx += 1;
                        }
                    }
                }
            }
        }
        Ok(SpritesDataset {
            config: config.clone(),
            labels,
            bits,
            pixels_per_image: pixels,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn canvas(&self) -> usize {
        self.config.canvas
    }

    pub fn pixels_per_image(&self) -> usize {
        self.pixels_per_image
    }

    pub fn pixel(&self, image: usize, p: usize) -> f64 {
        let bit = image * self.pixels_per_image + p;
        ((self.bits[bit / 64] >> (bit % 64)) & 1) as f64
    }

    /// One image as a flat f64 row.
    pub fn row(&self, image: usize) -> Vec<f64> {
        (0..self.pixels_per_image)
            .map(|p| self.pixel(image, p))
            .collect()
    }

    /// Assemble a batch tensor from image indices.
    pub fn batch(&self, indices: &[u32]) -> Result<Tensor> {
        let mut data = Vec::with_capacity(indices.len() * self.pixels_per_image);
        for &i in indices {
            if i as usize >= self.len() {
                return Err(EvaeError::Usage(format!("image index {i} out of range")));
            }
            data.extend((0..self.pixels_per_image).map(|p| self.pixel(i as usize, p)));
        }
        Tensor::matrix(indices.len(), self.pixels_per_image, data)
    }

    pub fn foreground_count(&self, image: usize) -> usize {
        (0..self.pixels_per_image)
            .filter(|&p| self.pixel(image, p) != 0.0)
            .count()
    }

    /// Serialized cache image (header + labels + packed bits).
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(CACHE_MAGIC);
        out.extend_from_slice(&1u32.to_le_bytes());
        for v in [
            self.config.canvas,
            self.config.shapes,
            self.config.scales,
            self.config.orientations,
            self.config.positions,
        ] {
            out.extend_from_slice(&(v as u32).to_le_bytes());
        }
        out.extend_from_slice(&self.config.seed.to_le_bytes());
        out.extend_from_slice(&(self.labels.len() as u64).to_le_bytes());
        for l in &self.labels {
            for v in [l.shape, l.scale, l.orientation, l.pos_x, l.pos_y] {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out.extend_from_slice(&(self.bits.len() as u64).to_le_bytes());
        for w in &self.bits {
            out.extend_from_slice(&w.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut cur = Cursor::new(bytes);
        if cur.take(8)? != CACHE_MAGIC {
            return Err(EvaeError::Integrity("not a sprites cache file".into()));
        }
        let version = cur.u32()?;
        if version != 1 {
            return Err(EvaeError::Integrity(format!(
                "unsupported sprites cache version {version}"
            )));
        }
        let canvas = cur.u32()? as usize;
        let shapes = cur.u32()? as usize;
        let scales = cur.u32()? as usize;
        let orientations = cur.u32()? as usize;
        let positions = cur.u32()? as usize;
        let seed = cur.u64()?;
        let config = DatasetConfig {
            canvas,
            shapes,
            scales,
            orientations,
            positions,
            seed,
        };
        config
            .validate()
            .map_err(|e| EvaeError::Integrity(e.to_string()))?;
        let count = cur.u64()? as usize;
        if count != config.total_images() {
            return Err(EvaeError::Integrity(
                "sprites cache image count mismatch".into(),
            ));
        }
        let mut labels = Vec::with_capacity(count);
        for _ in 0..count {
            let raw = cur.take(10)?;
            labels.push(FactorLabel {
                shape: u16::from_le_bytes([raw[0], raw[1]]),
                scale: u16::from_le_bytes([raw[2], raw[3]]),
                orientation: u16::from_le_bytes([raw[4], raw[5]]),
                pos_x: u16::from_le_bytes([raw[6], raw[7]]),
                pos_y: u16::from_le_bytes([raw[8], raw[9]]),
            });
        }
        let words = cur.u64()? as usize;
        let pixels = canvas * canvas;
        if words != (count * pixels).div_ceil(64) {
            return Err(EvaeError::Integrity(
                "sprites cache bit payload size mismatch".into(),
            ));
        }
        let mut bits = Vec::with_capacity(words);
        for _ in 0..words {
            bits.push(cur.u64()?);
        }
        Ok(SpritesDataset {
            config,
            labels,
            bits,
            pixels_per_image: pixels,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path)?;
        SpritesDataset::from_bytes(&bytes)
    }

    /// Git-style content hash of the serialized cache image.
    pub fn content_hash(&self) -> String {
        crate::hash::git_blob_hex(&self.to_bytes())
    }
}

/// Epoch-cycling batch iterator with seeded shuffling. The last short batch
/// of an epoch is emitted, then a fresh permutation starts.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchStream {
    pub batch_size: usize,
    pub shuffle: bool,
    pub order: Vec<u32>,
    pub pos: usize,
    pub epoch: u64,
    pub rng: Rng,
}

impl BatchStream {
    pub fn new(n: usize, batch_size: usize, shuffle: bool, mut rng: Rng) -> Result<Self> {
        if batch_size == 0 {
            return Err(EvaeError::Config("batch size must be at least 1".into()));
        }
        if n == 0 {
            return Err(EvaeError::Config("dataset is empty".into()));
        }
        let mut order: Vec<u32> = (0..n as u32).collect();
        if shuffle {
            rng.shuffle(&mut order);
        }
        Ok(BatchStream {
            batch_size,
            shuffle,
            order,
            pos: 0,
            epoch: 0,
            rng,
        })
    }

    /// Indices of the next batch, advancing the stream (cycling epochs).
    pub fn next_indices(&mut self) -> Vec<u32> {
        if self.pos >= self.order.len() {
            self.epoch += 1;
            self.pos = 0;
            if self.shuffle {
                let mut order: Vec<u32> = (0..self.order.len() as u32).collect();
                self.rng.shuffle(&mut order);
                self.order = order;
            }
        }
        let end = (self.pos + self.batch_size).min(self.order.len());
        let out = self.order[self.pos..end].to_vec();
        self.pos = end;
        out
    }
}

/// Write an 8-bit binary PGM (P5).
pub fn write_pgm(path: &Path, width: usize, height: usize, gray: &[u8]) -> Result<()> {
    if gray.len() != width * height {
        return Err(EvaeError::Config(
            "pgm buffer does not match dimensions".into(),
        ));
    }
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(gray);
    std::fs::write(path, out)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn centered(shape: SpriteShape, scale: f64, orientation: f64) -> SpriteSpec {
        SpriteSpec {
            shape,
            scale,
            orientation,
            pos_x: 0.5,
            pos_y: 0.5,
        }
    }

    #[test]
    fn heart_polynomial_reference_points() {
        assert!(heart_inside(0.0, -1.0));
        assert!(!heart_inside(1.4, 0.0));
        assert!(heart_inside(0.0, 0.5));
        assert!(!heart_inside(0.0, 1.45));
    }

    #[test]
    fn centered_ellipse_is_mirror_symmetric() {
        let canvas = 32;
        let img = render_sprite(&centered(SpriteShape::Ellipse, 0.5, 0.0), canvas).unwrap();
        for y in 0..canvas {
            for x in 0..canvas {
                assert_eq!(
                    img[y * canvas + x],
                    img[y * canvas + (canvas - 1 - x)],
                    "h mirror at {x},{y}"
                );
                assert_eq!(
                    img[y * canvas + x],
                    img[(canvas - 1 - y) * canvas + x],
                    "v mirror at {x},{y}"
                );
            }
        }
    }

    #[test]
    fn axis_aligned_square_area_oracle() {
        let canvas = 32;
        for scale in [0.3, 0.4, 0.5] {
            let img = render_sprite(&centered(SpriteShape::Square, scale, 0.0), canvas).unwrap();
            let filled = img.iter().filter(|&&v| v == 1).count() as f64;
            let side = scale * canvas as f64;
            let expected = side * side;
            let tolerance = 2.0 * 4.0 * side;
            assert!(
                (filled - expected).abs() <= tolerance,
                "scale {scale}: filled {filled}, expected {expected} +- {tolerance}"
            );
        }
    }

    #[test]
    fn rotated_square_keeps_area_roughly() {
        let canvas = 64;
        let scale = 0.4;
        let img = render_sprite(&centered(SpriteShape::Square, scale, 0.7), canvas).unwrap();
        let filled = img.iter().filter(|&&v| v == 1).count() as f64;
        let side = scale * canvas as f64;
        assert!((filled - side * side).abs() <= 2.0 * 4.0 * side);
    }

    #[test]
    fn oversized_sprite_is_rejected() {
        let err = render_sprite(&centered(SpriteShape::Square, 1.0, 0.0), 16);
        assert!(matches!(err, Err(EvaeError::Config(_))));
    }

    #[test]
    fn rendering_is_pure() {
        let spec = SpriteSpec {
            shape: SpriteShape::Heart,
            scale: 0.45,
            orientation: 1.2,
            pos_x: 0.3,
            pos_y: 0.8,
        };
        assert_eq!(
            render_sprite(&spec, 32).unwrap(),
            render_sprite(&spec, 32).unwrap()
        );
    }

    #[test]
    fn dataset_grid_product_count() {
        let cfg = DatasetConfig::default();
        assert_eq!(cfg.total_images(), 6144);
        let small = DatasetConfig {
            shapes: 2,
            scales: 2,
            orientations: 3,
            positions: 2,
            ..cfg
        };
        assert_eq!(small.total_images(), 2 * 2 * 3 * 4);
        let ds = SpritesDataset::generate(&small).unwrap();
        assert_eq!(ds.len(), 48);
        assert_eq!(ds.labels.len(), 48);
    }

    #[test]
    fn dataset_generation_is_deterministic() {
        let cfg = DatasetConfig {
            shapes: 2,
            scales: 2,
            orientations: 2,
            positions: 2,
            ..DatasetConfig::default()
        };
        let a = SpritesDataset::generate(&cfg).unwrap();
        let b = SpritesDataset::generate(&cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.content_hash(), b.content_hash());
    }

    #[test]
    fn every_image_binary_with_foreground_and_background() {
        let cfg = DatasetConfig {
            shapes: 3,
            scales: 2,
            orientations: 4,
            positions: 3,
            ..DatasetConfig::default()
        };
        let ds = SpritesDataset::generate(&cfg).unwrap();
        for i in 0..ds.len() {
            let row = ds.row(i);
            assert!(row.iter().all(|&v| v == 0.0 || v == 1.0));
            let fg = ds.foreground_count(i);
            assert!(fg >= 1, "image {i} has no foreground");
            assert!(fg < ds.pixels_per_image(), "image {i} is all foreground");
        }
    }

    #[test]
    fn cache_round_trip_is_exact() {
        let cfg = DatasetConfig {
            shapes: 2,
            scales: 2,
            orientations: 2,
            positions: 2,
            ..DatasetConfig::default()
        };
        let ds = SpritesDataset::generate(&cfg).unwrap();
        let bytes = ds.to_bytes();
        let back = SpritesDataset::from_bytes(&bytes).unwrap();
        assert_eq!(ds, back);
        assert_eq!(back.to_bytes(), bytes);
    }

    #[test]
    fn batch_stream_whole_dataset_single_batch() {
        let mut s = BatchStream::new(10, 10, false, Rng::seeded(0)).unwrap();
        assert_eq!(s.next_indices(), (0..10u32).collect::<Vec<_>>());
    }

    #[test]
    fn batch_stream_unshuffled_preserves_order() {
        let mut s = BatchStream::new(7, 3, false, Rng::seeded(0)).unwrap();
        assert_eq!(s.next_indices(), vec![0, 1, 2]);
        assert_eq!(s.next_indices(), vec![3, 4, 5]);
        // Short final batch, then the next epoch restarts.
        assert_eq!(s.next_indices(), vec![6]);
        assert_eq!(s.next_indices(), vec![0, 1, 2]);
        assert_eq!(s.epoch, 1);
    }

    #[test]
    fn batch_stream_same_seed_same_permutations() {
        let mut a = BatchStream::new(32, 5, true, Rng::seeded(9)).unwrap();
        let mut b = BatchStream::new(32, 5, true, Rng::seeded(9)).unwrap();
        for _ in 0..20 {
            assert_eq!(a.next_indices(), b.next_indices());
        }
    }
}
