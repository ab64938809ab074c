//! Layer descriptors and shape inference.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Activation shape of one sample, channel-major (`channels × height × width`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Shape {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl Shape {
    pub fn flat(n: usize) -> Self {
        Self {
            channels: n,
            height: 1,
            width: 1,
        }
    }

    pub fn image(channels: usize, height: usize, width: usize) -> Self {
        Self {
            channels,
            height,
            width,
        }
    }

    pub fn size(&self) -> usize {
        self.channels * self.height * self.width
    }
}

impl std::fmt::Display for Shape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}×{}×{}", self.channels, self.height, self.width)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LayerSpec {
    /// Fully connected layer; flattens its input.
    Dense { units: usize },
    /// Square convolution, stride 1, same padding.
    Conv { features: usize, kernel: usize },
    /// Non-overlapping 2×2 max pooling; odd trailing rows/columns are dropped.
    MaxPool,
    Relu,
    /// Inverted dropout, active only in training.
    Dropout { rate: f64 },
    Softmax,
}

impl LayerSpec {
    pub fn name(&self) -> &'static str {
        match self {
            LayerSpec::Dense { .. } => "dense",
            LayerSpec::Conv { .. } => "conv",
            LayerSpec::MaxPool => "maxpool",
            LayerSpec::Relu => "relu",
            LayerSpec::Dropout { .. } => "dropout",
            LayerSpec::Softmax => "softmax",
        }
    }

    /// Output shape for `input`, validating the layer parameters.
    pub fn output_shape(&self, input: Shape) -> Result<Shape> {
        match *self {
            LayerSpec::Dense { units } => {
                if units == 0 {
                    return Err(Error::InvalidSpec("dense layer with zero units".into()));
                }
                Ok(Shape::flat(units))
            }
            LayerSpec::Conv { features, kernel } => {
                if features == 0 || kernel == 0 || kernel % 2 == 0 {
                    return Err(Error::InvalidSpec(format!(
                        "convolution needs features > 0 and an odd kernel, got {features} and {kernel}"
                    )));
                }
                Ok(Shape::image(features, input.height, input.width))
            }
            LayerSpec::MaxPool => {
                if input.height < 2 || input.width < 2 {
                    return Err(Error::InvalidSpec(format!("cannot pool a {input} input")));
                }
                Ok(Shape::image(input.channels, input.height / 2, input.width / 2))
            }
            LayerSpec::Dropout { rate } => {
                if !(0.0..1.0).contains(&rate) {
                    return Err(Error::InvalidSpec(format!("dropout rate {rate} outside [0, 1)")));
                }
                Ok(input)
            }
            LayerSpec::Relu | LayerSpec::Softmax => Ok(input),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub input: Shape,
    pub layers: Vec<LayerSpec>,
}

impl NetworkSpec {
    pub fn new(input: Shape, layers: Vec<LayerSpec>) -> Result<Self> {
        let spec = Self { input, layers };
        spec.shapes()?;
        Ok(spec)
    }

    /// Activation shapes: the input followed by every layer's output.
    pub fn shapes(&self) -> Result<Vec<Shape>> {
        if self.input.size() == 0 {
            return Err(Error::InvalidSpec("empty input shape".into()));
        }
        let mut shapes = vec![self.input];
        for (i, layer) in self.layers.iter().enumerate() {
            let next = layer
                .output_shape(shapes[i])
                .map_err(|e| Error::InvalidSpec(format!("layer {i} ({}): {e}", layer.name())))?;
            shapes.push(next);
        }
        Ok(shapes)
    }

    pub fn output(&self) -> Result<Shape> {
        Ok(*self.shapes()?.last().expect("input shape present"))
    }

    /// Dense regressor `input → hidden… → output` with ReLU between layers and a linear head.
    pub fn mlp(input: usize, hidden: &[usize], output: usize) -> Self {
        let mut layers = Vec::new();
        for &h in hidden {
            layers.push(LayerSpec::Dense { units: h });
            layers.push(LayerSpec::Relu);
        }
        layers.push(LayerSpec::Dense { units: output });
        Self {
            input: Shape::flat(input),
            layers,
        }
    }

    /// Sweep-to-charge regressor: 1024, 256 and 12 hidden units.
    pub fn charge_id(points: usize) -> Self {
        Self::mlp(points, &[1024, 256, 12], points)
    }

    /// Map-to-state regressor over `pixels` flattened values.
    pub fn state_map(pixels: usize) -> Self {
        Self::mlp(pixels, &[1024, 256, 64], pixels)
    }

    /// Sub-map classifier: two 5×5/16 convolutions with pooling, then 1024 and 256 dense units.
    pub fn state_cnn(size: usize, classes: usize, dropout: f64) -> Self {
        use LayerSpec::*;
        Self {
            input: Shape::image(1, size, size),
            layers: vec![
                Conv {
                    features: 16,
                    kernel: 5,
                },
                Relu,
                MaxPool,
                Conv {
                    features: 16,
                    kernel: 5,
                },
                Relu,
                MaxPool,
                Dense { units: 1024 },
                Relu,
                Dropout { rate: dropout },
                Dense { units: 256 },
                Relu,
                Dropout { rate: dropout },
                Dense { units: classes },
                Softmax,
            ],
        }
    }
}
