//! Latent traversal rendering: encode a seed image, sweep one latent
//! dimension across a range while holding the others at their posterior
//! means, and decode each point into a grid of grayscale tiles.

use crate::error::{EvaeError, Result};
use crate::nn::ParamStore;
use crate::tensor::Tensor;
use crate::vae::VaeModel;

#[derive(Clone, Debug, PartialEq)]
pub struct TraverseSpec {
    /// Latent dimensions to sweep, one grid row each; `None` sweeps all.
    pub dims: Option<Vec<usize>>,
    pub min: f64,
    pub max: f64,
    pub steps: usize,
}

impl Default for TraverseSpec {
    fn default() -> Self {
        TraverseSpec {
            dims: None,
            min: -3.0,
            max: 3.0,
            steps: 11,
        }
    }
}

/// A rendered traversal grid: `rows = dims`, `cols = steps`, each tile
/// `canvas x canvas` grayscale bytes.
pub struct TraversalGrid {
    pub width: usize,
    pub height: usize,
    pub gray: Vec<u8>,
    pub dims: Vec<usize>,
}

/// Sweep the chosen dimensions of the seed image's posterior mean. With
/// `steps == 1` the sweep point is the seed's own mean value, so the single
/// tile is the plain reconstruction.
pub fn traverse(
    model: &VaeModel,
    store: &ParamStore,
    seed_image: &[f64],
    canvas: usize,
    spec: &TraverseSpec,
) -> Result<TraversalGrid> {
    if canvas * canvas != model.input_dim {
        return Err(EvaeError::Config(format!(
            "canvas {canvas} does not match model input {}",
            model.input_dim
        )));
    }
    if spec.steps == 0 {
        return Err(EvaeError::Usage("traversal needs at least one step".into()));
    }
    if !(spec.min <= spec.max) {
        return Err(EvaeError::Usage(
            "traversal range must satisfy min <= max".into(),
        ));
    }
    let k = model.latent_dim;
    let dims: Vec<usize> = match &spec.dims {
        Some(ds) => ds.clone(),
        None => (0..k).collect(),
    };
    for &d in &dims {
        if d >= k {
            return Err(EvaeError::Usage(format!(
                "latent dim {d} out of range (latent_dim {k})"
            )));
        }
    }

    let x = Tensor::matrix(1, model.input_dim, seed_image.to_vec())?;
    let stats = model.encode(store, &x)?;
    let mu = stats.mu.values().to_vec();

    let width = spec.steps * canvas;
    let height = dims.len() * canvas;
    let mut gray = vec![0u8; width * height];
    for (row, &dim) in dims.iter().enumerate() {
        for step in 0..spec.steps {
            let value = if spec.steps == 1 {
                mu[dim]
            } else {
                spec.min + (spec.max - spec.min) * step as f64 / (spec.steps - 1) as f64
            };
            let mut z = mu.clone();
            z[dim] = value;
            let zt = Tensor::matrix(1, k, z)?;
            let mean = model.decode_mean(store, &zt)?;
            let tile = mean.values();
            for py in 0..canvas {
                let dst_row = row * canvas + py;
                let dst_base = dst_row * width + step * canvas;
                for px in 0..canvas {
                    let v = (tile[py * canvas + px].clamp(0.0, 1.0) * 255.0).round() as u8;
                    gray[dst_base + px] = v;
                }
            }
        }
    }
    Ok(TraversalGrid {
        width,
        height,
        gray,
        dims,
    })
}
