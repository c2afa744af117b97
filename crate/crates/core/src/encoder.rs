//! Fully-connected encoder with explicit forward and backward passes.
//!
//! The backbone is a stack of linear layers with ReLU between them (none
//! after the last); an optional two-layer projection head (linear, ReLU,
//! linear) can sit on top during contrastive pretraining and is dropped for
//! downstream use. The final output is always L2-normalized, and the backward
//! pass chains through the normalization Jacobian `(I - z zᵀ) / ||u||`.
//!
//! Parameters flatten to a single `Vec<f64>` in a frozen order (layers in
//! forward order, weights row-major then bias), which is what the optimizers
//! and the checkpoint format operate on.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::mat::{dot, l2_norm, Mat};
use crate::seed::fingerprint_f64s;

/// Norms below this are clamped before the normalizing division.
const NORM_FLOOR: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum EncoderError {
    #[error("{what}: expected {expected}, got {got}")]
    ShapeMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("cache does not match this model's architecture")]
    StaleCache,
    #[error("bad architecture: {0}")]
    BadArchitecture(String),
}

/// One linear layer, `out x in` weights plus bias.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    w: Mat,
    b: Vec<f64>,
}

impl Layer {
    fn new_seeded(fan_out: usize, fan_in: usize, rng: &mut ChaCha8Rng) -> Self {
        let bound = 1.0 / (fan_in as f64).sqrt();
        let mut w = Mat::zeros(fan_out, fan_in);
        for v in w.data_mut() {
            *v = rng.random_range(-bound..=bound);
        }
        let b = (0..fan_out)
            .map(|_| rng.random_range(-bound..=bound))
            .collect();
        Self { w, b }
    }

    pub fn from_parts(w: Mat, b: Vec<f64>) -> Self {
        assert_eq!(w.rows(), b.len(), "bias length must match output dim");
        Self { w, b }
    }

    pub fn fan_in(&self) -> usize {
        self.w.cols()
    }

    pub fn fan_out(&self) -> usize {
        self.w.rows()
    }

    fn apply(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        for r in 0..self.w.rows() {
            out.push(dot(self.w.row(r), x) + self.b[r]);
        }
    }

    fn num_params(&self) -> usize {
        self.w.rows() * self.w.cols() + self.b.len()
    }
}

/// Architecture description: backbone `layer_dims` (input dim first) and the
/// optional projection head as (hidden, output) dims on top of the backbone.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncoderConfig {
    pub layer_dims: Vec<usize>,
    pub head_dims: Option<(usize, usize)>,
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<(), EncoderError> {
        if self.layer_dims.len() < 2 {
            return Err(EncoderError::BadArchitecture(
                "need at least an input and an output dimension".into(),
            ));
        }
        if self.layer_dims.contains(&0) {
            return Err(EncoderError::BadArchitecture(
                "layer dimensions must be positive".into(),
            ));
        }
        if let Some((h, o)) = self.head_dims {
            if h == 0 || o == 0 {
                return Err(EncoderError::BadArchitecture(
                    "projection head dimensions must be positive".into(),
                ));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderModel {
    backbone: Vec<Layer>,
    head: Option<(Layer, Layer)>,
}

/// Activations recorded by `forward`, sufficient for an exact backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// Input to each linear layer, in forward order (first entry is x).
    inputs: Vec<Vec<f64>>,
    /// Pre-activation output of each linear layer.
    pre: Vec<Vec<f64>>,
    /// Norm of the final pre-normalization output (after clamping).
    norm: f64,
    /// Normalized output.
    z: Vec<f64>,
    /// Layer shape signature used to detect mismatched caches.
    shape_sig: Vec<(usize, usize)>,
}

impl ForwardCache {
    pub fn embedding(&self) -> &[f64] {
        &self.z
    }
}

/// Parameter gradients (flattened in parameter order) plus the input
/// gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderGrads {
    pub params: Vec<f64>,
    pub input: Vec<f64>,
}

impl EncoderModel {
    /// Seeded initialization, uniform in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`
    /// per layer, drawn in flatten order from a single stream.
    pub fn new(cfg: &EncoderConfig, seed: u64) -> Result<Self, EncoderError> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut backbone = Vec::new();
        for win in cfg.layer_dims.windows(2) {
            backbone.push(Layer::new_seeded(win[1], win[0], &mut rng));
        }
        let head = cfg.head_dims.map(|(h, o)| {
            let d = *cfg.layer_dims.last().unwrap();
            (
                Layer::new_seeded(h, d, &mut rng),
                Layer::new_seeded(o, h, &mut rng),
            )
        });
        Ok(Self { backbone, head })
    }

    pub fn input_dim(&self) -> usize {
        self.backbone[0].fan_in()
    }

    /// Output dimension of the backbone (what downstream heads consume).
    pub fn backbone_dim(&self) -> usize {
        self.backbone.last().unwrap().fan_out()
    }

    /// Output dimension of the full stack, head included when present.
    pub fn output_dim(&self) -> usize {
        match &self.head {
            Some((_, l2)) => l2.fan_out(),
            None => self.backbone_dim(),
        }
    }

    pub fn has_head(&self) -> bool {
        self.head.is_some()
    }

    /// Copy of the model with the projection head removed.
    pub fn without_head(&self) -> Self {
        Self {
            backbone: self.backbone.clone(),
            head: None,
        }
    }

    pub fn layer_dims(&self) -> Vec<usize> {
        let mut dims = vec![self.input_dim()];
        dims.extend(self.backbone.iter().map(Layer::fan_out));
        dims
    }

    pub fn head_dims(&self) -> Option<(usize, usize)> {
        self.head
            .as_ref()
            .map(|(l1, l2)| (l1.fan_out(), l2.fan_out()))
    }

    /// All layers in forward order with their post-layer ReLU flags.
    fn layers(&self) -> Vec<(&Layer, bool)> {
        let n = self.backbone.len();
        let mut out: Vec<(&Layer, bool)> = self
            .backbone
            .iter()
            .enumerate()
            .map(|(i, l)| (l, i + 1 < n))
            .collect();
        if let Some((l1, l2)) = &self.head {
            out.push((l1, true));
            out.push((l2, false));
        }
        out
    }

    fn shape_sig(&self) -> Vec<(usize, usize)> {
        self.layers()
            .iter()
            .map(|(l, _)| (l.fan_in(), l.fan_out()))
            .collect()
    }

    /// Unit-norm embedding and the cache needed for `backward`.
    pub fn forward(&self, x: &[f64]) -> Result<(Vec<f64>, ForwardCache), EncoderError> {
        if x.len() != self.input_dim() {
            return Err(EncoderError::ShapeMismatch {
                what: "input dimension",
                expected: self.input_dim(),
                got: x.len(),
            });
        }
        let layers = self.layers();
        let mut inputs = Vec::with_capacity(layers.len());
        let mut pre = Vec::with_capacity(layers.len());
        let mut h = x.to_vec();
        let mut u = Vec::new();
        for (layer, relu_after) in &layers {
            layer.apply(&h, &mut u);
            inputs.push(std::mem::take(&mut h));
            pre.push(u.clone());
            h = if *relu_after {
                u.iter().map(|&v| v.max(0.0)).collect()
            } else {
                u.clone()
            };
        }
        let norm = l2_norm(&h).max(NORM_FLOOR);
        let z: Vec<f64> = h.iter().map(|&v| v / norm).collect();
        let cache = ForwardCache {
            inputs,
            pre,
            norm,
            z: z.clone(),
            shape_sig: self.shape_sig(),
        };
        Ok((z, cache))
    }

    /// Convenience forward that discards the cache.
    pub fn embed(&self, x: &[f64]) -> Result<Vec<f64>, EncoderError> {
        Ok(self.forward(x)?.0)
    }

    /// Exact gradients of a scalar loss w.r.t. all parameters and the input,
    /// given the loss gradient w.r.t. the normalized output.
    pub fn backward(
        &self,
        cache: &ForwardCache,
        grad_z: &[f64],
    ) -> Result<EncoderGrads, EncoderError> {
        if cache.shape_sig != self.shape_sig() {
            return Err(EncoderError::StaleCache);
        }
        if grad_z.len() != self.output_dim() {
            return Err(EncoderError::ShapeMismatch {
                what: "output gradient dimension",
                expected: self.output_dim(),
                got: grad_z.len(),
            });
        }
        // Through z = u / ||u||: g_u = (g - z (z . g)) / ||u||.
        let zg = dot(&cache.z, grad_z);
        let mut g: Vec<f64> = grad_z
            .iter()
            .zip(&cache.z)
            .map(|(&gi, &zi)| (gi - zi * zg) / cache.norm)
            .collect();

        let layers = self.layers();
        let mut layer_grads: Vec<Vec<f64>> = vec![Vec::new(); layers.len()];
        for i in (0..layers.len()).rev() {
            let (layer, _) = layers[i];
            let input = &cache.inputs[i];
            // dW = g ⊗ input, db = g, in flatten order.
            let mut lg = Vec::with_capacity(layer.num_params());
            for &gr in &g {
                for &xi in input {
                    lg.push(gr * xi);
                }
            }
            lg.extend_from_slice(&g);
            layer_grads[i] = lg;

            // g_input = Wᵀ g, then through the preceding ReLU if any.
            let mut gi = vec![0.0; layer.fan_in()];
            for (r, &gr) in g.iter().enumerate() {
                crate::mat::axpy(&mut gi, gr, layer.w.row(r));
            }
            if i > 0 && layers[i - 1].1 {
                for (v, &p) in gi.iter_mut().zip(&cache.pre[i - 1]) {
                    if p <= 0.0 {
                        *v = 0.0;
                    }
                }
            }
            g = gi;
        }
        let params = layer_grads.concat();
        Ok(EncoderGrads { params, input: g })
    }

    pub fn num_params(&self) -> usize {
        self.layers().iter().map(|(l, _)| l.num_params()).sum()
    }

    /// Parameters flattened in the frozen order: layers forward, each layer's
    /// weights row-major then its bias.
    pub fn flat_params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for (layer, _) in self.layers() {
            out.extend_from_slice(layer.w.data());
            out.extend_from_slice(&layer.b);
        }
        out
    }

    pub fn set_flat_params(&mut self, flat: &[f64]) -> Result<(), EncoderError> {
        if flat.len() != self.num_params() {
            return Err(EncoderError::ShapeMismatch {
                what: "flat parameter length",
                expected: self.num_params(),
                got: flat.len(),
            });
        }
        let mut offset = 0;
        let mut layers: Vec<&mut Layer> = self.backbone.iter_mut().collect();
        if let Some((l1, l2)) = &mut self.head {
            layers.push(l1);
            layers.push(l2);
        }
        for layer in layers {
            let nw = layer.w.rows() * layer.w.cols();
            layer.w.data_mut().copy_from_slice(&flat[offset..offset + nw]);
            offset += nw;
            let nb = layer.b.len();
            layer.b.copy_from_slice(&flat[offset..offset + nb]);
            offset += nb;
        }
        Ok(())
    }

    /// Stable fingerprint of the parameter bit patterns.
    pub fn param_fingerprint(&self) -> u64 {
        fingerprint_f64s(&self.flat_params())
    }
}
