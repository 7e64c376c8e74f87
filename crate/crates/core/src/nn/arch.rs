use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Head {
    /// Two logits per input point.
    PerPointBinary,
    /// One vector per input set.
    Vector { output_dim: usize },
}

/// Shape of a point-set network.
///
/// A shared per-point stack lifts every point, a channel-wise max-pool over
/// points yields the global feature, and a global stack maps it to the head.
/// For the per-point head, each point's first-layer feature is concatenated
/// with the global feature and the global stack runs per point.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArchDescriptor {
    pub input_dim: usize,
    pub per_point_layer_widths: Vec<usize>,
    pub global_layer_widths: Vec<usize>,
    pub head: Head,
    /// Keep probability of the dropout on the last global hidden layer.
    pub dropout_keep: f64,
}

impl ArchDescriptor {
    pub fn segmentation(per_point: &[usize], global: &[usize]) -> Self {
        Self {
            input_dim: 3,
            per_point_layer_widths: per_point.to_vec(),
            global_layer_widths: global.to_vec(),
            head: Head::PerPointBinary,
            dropout_keep: 0.7,
        }
    }

    pub fn vector(per_point: &[usize], global: &[usize], output_dim: usize) -> Self {
        Self {
            input_dim: 3,
            per_point_layer_widths: per_point.to_vec(),
            global_layer_widths: global.to_vec(),
            head: Head::Vector { output_dim },
            dropout_keep: 0.7,
        }
    }

    /// Desk-scale segmentation widths: per-point (32, 64, 128), global (128, 64).
    pub fn desk_segmentation() -> Self {
        Self::segmentation(&[32, 64, 128], &[128, 64])
    }

    pub fn desk_vector(output_dim: usize) -> Self {
        Self::vector(&[32, 64, 128], &[128, 64], output_dim)
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 {
            return Err(Error::Parameter("input_dim must be positive".into()));
        }
        if self.per_point_layer_widths.is_empty() {
            return Err(Error::Parameter("at least one per-point layer is required".into()));
        }
        let widths = self
            .per_point_layer_widths
            .iter()
            .chain(&self.global_layer_widths);
        if widths.into_iter().any(|w| *w == 0) {
            return Err(Error::Parameter("layer widths must be positive".into()));
        }
        if let Head::Vector { output_dim: 0 } = self.head {
            return Err(Error::Parameter("vector head needs output_dim >= 1".into()));
        }
        if !(self.dropout_keep > 0.0 && self.dropout_keep <= 1.0) {
            return Err(Error::Parameter("dropout_keep must lie in (0, 1]".into()));
        }
        Ok(())
    }

    pub fn output_dim(&self) -> usize {
        match self.head {
            Head::PerPointBinary => 2,
            Head::Vector { output_dim } => output_dim,
        }
    }

    /// Width of the input to the first global layer.
    pub(crate) fn global_input_dim(&self) -> usize {
        let last = *self.per_point_layer_widths.last().expect("validated");
        match self.head {
            Head::PerPointBinary => self.per_point_layer_widths[0] + last,
            Head::Vector { .. } => last,
        }
    }

    /// `(fan_in, fan_out)` of every affine layer: per-point, global, output.
    pub fn layer_shapes(&self) -> Vec<(usize, usize)> {
        let mut shapes = Vec::new();
        let mut fan_in = self.input_dim;
        for &w in &self.per_point_layer_widths {
            shapes.push((fan_in, w));
            fan_in = w;
        }
        fan_in = self.global_input_dim();
        for &w in &self.global_layer_widths {
            shapes.push((fan_in, w));
            fan_in = w;
        }
        shapes.push((fan_in, self.output_dim()));
        shapes
    }

    pub fn param_count(&self) -> usize {
        self.layer_shapes().iter().map(|(i, o)| i * o + o).sum()
    }
}

/// Location of one affine layer inside the flat parameter vector. Weights are
/// stored input-major (`fan_in` rows of `fan_out`), followed by the bias.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSlice {
    pub name: String,
    pub fan_in: usize,
    pub fan_out: usize,
    pub weight_offset: usize,
    pub bias_offset: usize,
}

pub(crate) fn build_layout(arch: &ArchDescriptor) -> Vec<LayerSlice> {
    let n_point = arch.per_point_layer_widths.len();
    let n_global = arch.global_layer_widths.len();
    let mut offset = 0;
    arch.layer_shapes()
        .into_iter()
        .enumerate()
        .map(|(i, (fan_in, fan_out))| {
            let name = if i < n_point {
                format!("point{i}")
            } else if i < n_point + n_global {
                format!("global{}", i - n_point)
            } else {
                "output".to_string()
            };
            let slice = LayerSlice {
                name,
                fan_in,
                fan_out,
                weight_offset: offset,
                bias_offset: offset + fan_in * fan_out,
            };
            offset += fan_in * fan_out + fan_out;
            slice
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams<T> {
    pub values: Vec<T>,
    pub arch: ArchDescriptor,
    pub layout: Vec<LayerSlice>,
}

/// Borrowed parameters; lets several networks share one flat buffer.
#[derive(Clone, Copy, Debug)]
pub struct ParamsView<'a, T> {
    pub values: &'a [T],
    pub arch: &'a ArchDescriptor,
    pub layout: &'a [LayerSlice],
}

impl<T: Real> ModelParams<T> {
    pub fn zeros(arch: ArchDescriptor) -> Result<Self> {
        arch.validate()?;
        let layout = build_layout(&arch);
        Ok(Self {
            values: vec![T::zero(); arch.param_count()],
            arch,
            layout,
        })
    }

    /// Glorot-uniform weights, zero biases.
    pub fn init(arch: ArchDescriptor, seed: u64) -> Result<Self> {
        let mut params = Self::zeros(arch)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for layer in &params.layout {
            let limit = (6.0 / (layer.fan_in + layer.fan_out) as f64).sqrt();
            let n = layer.fan_in * layer.fan_out;
            for v in &mut params.values[layer.weight_offset..layer.weight_offset + n] {
                *v = T::lit(rng.random_range(-limit..=limit));
            }
        }
        Ok(params)
    }

    pub fn from_values(arch: ArchDescriptor, values: Vec<T>) -> Result<Self> {
        arch.validate()?;
        if values.len() != arch.param_count() {
            return Err(Error::Dimension(format!(
                "{} parameters supplied, architecture needs {}",
                values.len(),
                arch.param_count()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NumericOverflow("model parameters".into()));
        }
        let layout = build_layout(&arch);
        Ok(Self {
            values,
            arch,
            layout,
        })
    }

    pub fn view(&self) -> ParamsView<'_, T> {
        ParamsView {
            values: &self.values,
            arch: &self.arch,
            layout: &self.layout,
        }
    }

    pub fn with_values<'a>(&'a self, values: &'a [T]) -> ParamsView<'a, T> {
        debug_assert_eq!(values.len(), self.values.len());
        ParamsView {
            values,
            arch: &self.arch,
            layout: &self.layout,
        }
    }

    pub fn layer(&self, name: &str) -> Option<&LayerSlice> {
        self.layout.iter().find(|l| l.name == name)
    }

    /// Zeroes the output layer's weights and bias.
    pub fn zero_output_layer(&mut self) {
        let out = self.layout.last().expect("at least one layer").clone();
        let end = out.bias_offset + out.fan_out;
        for v in &mut self.values[out.weight_offset..end] {
            *v = T::zero();
        }
    }

    pub fn cast<U: Real>(&self) -> ModelParams<U> {
        ModelParams {
            values: self.values.iter().map(|v| U::lit(v.as_f64())).collect(),
            arch: self.arch.clone(),
            layout: self.layout.clone(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout_covers_every_parameter() {
        let arch = ArchDescriptor::desk_segmentation();
        let layout = build_layout(&arch);
        let shapes = arch.layer_shapes();
        assert_eq!(shapes[3], (32 + 128, 128));
        assert_eq!(shapes.last(), Some(&(64, 2)));
        let last = layout.last().unwrap();
        assert_eq!(last.bias_offset + last.fan_out, arch.param_count());
        assert_eq!(layout[0].name, "point0");
        assert_eq!(layout[3].name, "global0");
        assert_eq!(last.name, "output");
    }

    #[test]
    fn vector_head_shapes() {
        let arch = ArchDescriptor::desk_vector(3);
        let shapes = arch.layer_shapes();
        assert_eq!(shapes[3], (128, 128));
        assert_eq!(shapes.last(), Some(&(64, 3)));
    }

    #[test]
    fn invalid_arch_rejected() {
        let mut arch = ArchDescriptor::desk_vector(0);
        assert!(arch.validate().is_err());
        arch.head = Head::Vector { output_dim: 2 };
        arch.dropout_keep = 0.0;
        assert!(arch.validate().is_err());
        arch.dropout_keep = 1.0;
        arch.per_point_layer_widths.clear();
        assert!(ModelParams::<f64>::zeros(arch).is_err());
    }

    #[test]
    fn init_is_seeded_and_bounded() {
        let a = ModelParams::<f64>::init(ArchDescriptor::desk_vector(3), 4).unwrap();
        let b = ModelParams::<f64>::init(ArchDescriptor::desk_vector(3), 4).unwrap();
        assert_eq!(a, b);
        let first = &a.layout[0];
        let limit = (6.0f64 / (3 + 32) as f64).sqrt();
        let weights = &a.values[first.weight_offset..first.bias_offset];
        assert!(weights.iter().all(|w| w.abs() <= limit));
        assert!(a.values[first.bias_offset..first.bias_offset + 32].iter().all(|b| *b == 0.0));
    }

    #[test]
    fn from_values_checks_length() {
        let arch = ArchDescriptor::vector(&[4], &[], 2);
        assert!(ModelParams::<f64>::from_values(arch.clone(), vec![0.0; 3]).is_err());
        assert!(ModelParams::<f64>::from_values(arch.clone(), vec![0.0; arch.param_count()]).is_ok());
    }
}
