//! Layer stacks of the localization, pose branch and face reconstruction
//! networks. The `*Arch` structs expose the sizes so toy variants can be
//! built for gradient checks.

use depthpose_tensor::{LayerKind, NetworkSpec, Result};
use serde::{Deserialize, Serialize};

fn conv_tanh(layers: &mut Vec<LayerKind>, filters: usize, kernel: usize, padding: usize) {
    layers.push(LayerKind::conv(filters, kernel, padding));
    layers.push(LayerKind::Tanh);
}

/// Head localization: conv+pool stages on the downscaled frame, then a small
/// dense regressor of the normalized head center.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LocnetArch {
    pub rows: usize,
    pub cols: usize,
    pub filters: Vec<usize>,
    pub kernels: Vec<usize>,
    pub hidden: Vec<usize>,
    pub dropout: f64,
}

impl Default for LocnetArch {
    fn default() -> Self {
        Self {
            rows: 132,
            cols: 160,
            filters: vec![16, 32, 32, 64],
            kernels: vec![5, 3, 3, 3],
            hidden: vec![128, 64],
            dropout: 0.5,
        }
    }
}

impl LocnetArch {
    pub fn toy() -> Self {
        Self {
            rows: 10,
            cols: 12,
            filters: vec![2, 3],
            kernels: vec![3, 3],
            hidden: vec![5, 4],
            dropout: 0.5,
        }
    }

    pub fn spec(&self) -> Result<NetworkSpec> {
        let mut layers = Vec::new();
        for (&f, &k) in self.filters.iter().zip(&self.kernels) {
            conv_tanh(&mut layers, f, k, k / 2);
            layers.push(LayerKind::MaxPool2x2);
        }
        layers.extend(dropout_fc_layers(&self.hidden, self.dropout, 2));
        NetworkSpec::new("locnet", &[1, self.rows, self.cols], layers)
    }
}

pub fn build_locnet() -> NetworkSpec {
    LocnetArch::default().spec().expect("default locnet composes")
}

/// Pose branch: five convolutions (pooling after the first three), then
/// dense 128-84-3. The 4x4 layer is padded by 2 so every stage keeps its
/// spatial size before pooling (32 -> 33 -> 16).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BranchArch {
    pub in_channels: usize,
    pub size: usize,
    pub filters: Vec<usize>,
    pub kernels: Vec<usize>,
    pub pooled: usize,
    pub hidden: Vec<usize>,
}

impl BranchArch {
    pub fn new(in_channels: usize) -> Self {
        Self {
            in_channels,
            size: 64,
            filters: vec![32, 32, 32, 32, 128],
            kernels: vec![5, 4, 3, 3, 3],
            pooled: 3,
            hidden: vec![128, 84],
        }
    }

    pub fn toy(in_channels: usize) -> Self {
        Self {
            in_channels,
            size: 8,
            filters: vec![2, 2, 2],
            kernels: vec![3, 2, 3],
            pooled: 1,
            hidden: vec![4],
        }
    }

    pub fn spec(&self) -> Result<NetworkSpec> {
        let mut layers = Vec::new();
        for (i, (&f, &k)) in self.filters.iter().zip(&self.kernels).enumerate() {
            conv_tanh(&mut layers, f, k, k / 2);
            if i < self.pooled {
                layers.push(LayerKind::MaxPool2x2);
            }
        }
        layers.push(LayerKind::Flatten);
        for &h in &self.hidden {
            layers.push(LayerKind::dense(h));
            layers.push(LayerKind::Tanh);
        }
        layers.push(LayerKind::dense(3));
        layers.push(LayerKind::Tanh);
        NetworkSpec::new(format!("branch{}", self.in_channels), &[self.in_channels, self.size, self.size], layers)
    }
}

pub fn build_branch_net(in_channels: usize) -> NetworkSpec {
    BranchArch::new(in_channels).spec().expect("default branch composes")
}

/// Layers of a branch up to and including its last convolution's activation;
/// this is the feature extractor kept inside the fused model.
pub fn branch_feature_layers(spec: &NetworkSpec) -> usize {
    spec.layers
        .iter()
        .position(|l| matches!(l, LayerKind::Flatten))
        .unwrap_or(spec.layers.len())
}

/// Encoder-decoder from a depth crop to a gray face. Seven unpadded 3x3
/// convolutions encode (zero padding after the first two, pooling after the
/// second), six decode, a 2x upsampling follows the thirteenth, the
/// fourteenth maps to one channel and a dense layer emits the full image.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FfdArch {
    pub size: usize,
    pub filters: usize,
    pub kernel: usize,
    pub encoder: usize,
    pub decoder: usize,
}

impl Default for FfdArch {
    fn default() -> Self {
        Self {
            size: 64,
            filters: 32,
            kernel: 3,
            encoder: 7,
            decoder: 7,
        }
    }
}

impl FfdArch {
    pub fn toy() -> Self {
        Self {
            size: 16,
            filters: 2,
            kernel: 3,
            encoder: 3,
            decoder: 3,
        }
    }

    pub fn spec(&self) -> Result<NetworkSpec> {
        let k = self.kernel;
        let mut layers = Vec::new();
        for i in 0..self.encoder {
            conv_tanh(&mut layers, self.filters, k, 0);
            if i < 2 {
                layers.push(LayerKind::ZeroPad {
                    rows: k / 2,
                    cols: k / 2,
                });
            }
            if i == 1 {
                layers.push(LayerKind::MaxPool2x2);
            }
        }
        for i in 0..self.decoder {
            let last = i + 1 == self.decoder;
            conv_tanh(&mut layers, if last { 1 } else { self.filters }, k, 0);
            if i + 2 == self.decoder {
                layers.push(LayerKind::UpSample2x2);
            }
        }
        layers.push(LayerKind::Flatten);
        layers.push(LayerKind::dense(self.size * self.size));
        layers.push(LayerKind::Tanh);
        NetworkSpec::new("ffd", &[1, self.size, self.size], layers)
    }
}

pub fn build_ffd_net() -> NetworkSpec {
    FfdArch::default().spec().expect("default face network composes")
}

/// Flatten, then tanh dense layers whose inputs are dropped out, then a tanh
/// output layer. The output layer's input is left intact.
fn dropout_fc_layers(hidden: &[usize], dropout: f64, outputs: usize) -> Vec<LayerKind> {
    let mut layers = vec![LayerKind::Flatten];
    for &h in hidden {
        layers.push(LayerKind::Dropout { rate: dropout });
        layers.push(LayerKind::dense(h));
        layers.push(LayerKind::Tanh);
    }
    layers.push(LayerKind::dense(outputs));
    layers.push(LayerKind::Tanh);
    layers
}

/// Two dropout-regularized hidden layers and the three angle outputs.
pub fn head_layers(hidden: &[usize], dropout: f64) -> Vec<LayerKind> {
    dropout_fc_layers(hidden, dropout, 3)
}
