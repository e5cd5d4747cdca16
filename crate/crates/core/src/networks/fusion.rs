//! Feature-map fusion for the trident: pairwise operators plus the
//! three-stream plans used by the assembled model. Three-stream ordering is
//! always (depth, face, motion).

use std::fmt;
use std::str::FromStr;

use depthpose_tensor::{Gradients, LayerKind, Mode, Network, NetworkSpec, Tape, Tensor};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FusionKind {
    Multiplication,
    Concatenation,
    Convolution,
    ConvThenConcat,
    MulThenConcat,
}

impl FusionKind {
    pub const ALL: [FusionKind; 5] = [
        FusionKind::Multiplication,
        FusionKind::Concatenation,
        FusionKind::Convolution,
        FusionKind::ConvThenConcat,
        FusionKind::MulThenConcat,
    ];

    pub fn name(self) -> &'static str {
        match self {
            FusionKind::Multiplication => "mul",
            FusionKind::Concatenation => "concat",
            FusionKind::Convolution => "conv",
            FusionKind::ConvThenConcat => "conv-concat",
            FusionKind::MulThenConcat => "mul-concat",
        }
    }
}

impl fmt::Display for FusionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for FusionKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        FusionKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown fusion kind `{s}`")))
    }
}

fn chw(t: &Tensor) -> Result<(usize, usize, usize)> {
    Ok(t.chw("fuse")?)
}

fn same_spatial(a: &Tensor, b: &Tensor) -> Result<()> {
    let (_, ra, ca) = chw(a)?;
    let (_, rb, cb) = chw(b)?;
    if (ra, ca) != (rb, cb) {
        return Err(Error::ShapeMismatch {
            what: "fusion spatial size",
            expected: format!("{ra}x{ca}"),
            found: format!("{rb}x{cb}"),
        });
    }
    Ok(())
}

fn same_shape(a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::ShapeMismatch {
            what: "multiplicative fusion operands",
            expected: format!("{:?}", a.shape()),
            found: format!("{:?}", b.shape()),
        });
    }
    Ok(())
}

fn hadamard(a: &Tensor, b: &Tensor) -> Tensor {
    let data = a.data().iter().zip(b.data()).map(|(x, y)| x * y).collect();
    Tensor::new(a.shape(), data).expect("operands share a shape")
}

/// A 1x1 convolution from `in_channels` to `out_channels`, no activation.
pub fn fusion_conv_spec(in_channels: usize, out_channels: usize, rows: usize, cols: usize) -> Result<NetworkSpec> {
    Ok(NetworkSpec::new(
        format!("fusion{in_channels}to{out_channels}"),
        &[in_channels, rows, cols],
        vec![LayerKind::conv(out_channels, 1, 0)],
    )?)
}

/// Fuses two feature maps. `conv` must be given for [`FusionKind::Convolution`]
/// and map `da + db` channels to `(da + db) / 2`.
pub fn fuse(a: &Tensor, b: &Tensor, kind: FusionKind, conv: Option<&Network>) -> Result<Tensor> {
    same_spatial(a, b)?;
    match kind {
        FusionKind::Multiplication => {
            same_shape(a, b)?;
            Ok(hadamard(a, b))
        }
        FusionKind::Concatenation => Ok(Tensor::concat_channels(&[a, b])?),
        FusionKind::Convolution => {
            let net = conv.ok_or_else(|| Error::InvalidArgument("convolutional fusion needs its 1x1 filter".into()))?;
            let stacked = Tensor::concat_channels(&[a, b])?;
            let expect = stacked.shape()[0] / 2;
            if stacked.shape()[0] % 2 != 0 || net.spec.output_shape()?[0] != expect {
                return Err(Error::ShapeMismatch {
                    what: "convolutional fusion channels",
                    expected: format!("(da+db)/2 = {}", stacked.shape()[0] as f64 / 2.0),
                    found: format!("{:?}", net.spec.output_shape()?),
                });
            }
            Ok(net.infer(&stacked)?)
        }
        FusionKind::ConvThenConcat | FusionKind::MulThenConcat => Err(Error::InvalidArgument(format!(
            "`{kind}` combines three streams; use FusionPlan"
        ))),
    }
}

/// Shapes and learned 1x1 filters of a three-stream fusion.
#[derive(Clone, Debug, PartialEq)]
pub struct FusionPlan {
    pub kind: FusionKind,
    /// Channels of (depth, face, motion) feature maps.
    pub channels: [usize; 3],
    pub rows: usize,
    pub cols: usize,
}

pub struct FusionTape {
    inputs: [Tensor; 3],
    convs: Vec<(Tape, usize)>,
}

pub struct FusionBackward {
    pub convs: Vec<Gradients>,
    pub inputs: [Tensor; 3],
}

impl FusionPlan {
    pub fn new(kind: FusionKind, shapes: [&[usize]; 3]) -> Result<Self> {
        for s in shapes {
            if s.len() != 3 || s[1..] != shapes[0][1..] {
                return Err(Error::ShapeMismatch {
                    what: "branch feature maps",
                    expected: format!("Cx{}x{}", shapes[0].get(1).unwrap_or(&0), shapes[0].get(2).unwrap_or(&0)),
                    found: format!("{s:?}"),
                });
            }
        }
        let channels = [shapes[0][0], shapes[1][0], shapes[2][0]];
        let needs_equal = matches!(kind, FusionKind::Multiplication | FusionKind::MulThenConcat);
        if needs_equal && (channels[0] != channels[1] || channels[0] != channels[2]) {
            return Err(Error::ShapeMismatch {
                what: "multiplicative fusion channels",
                expected: format!("{} everywhere", channels[0]),
                found: format!("{channels:?}"),
            });
        }
        let plan = Self {
            kind,
            channels,
            rows: shapes[0][1],
            cols: shapes[0][2],
        };
        for (cin, _) in plan.conv_channels() {
            if cin % 2 != 0 {
                return Err(Error::ShapeMismatch {
                    what: "convolutional fusion input channels",
                    expected: "an even count".into(),
                    found: cin.to_string(),
                });
            }
        }
        Ok(plan)
    }

    /// `(in, out)` channels of each learned 1x1 filter.
    pub fn conv_channels(&self) -> Vec<(usize, usize)> {
        let [d, f, m] = self.channels;
        match self.kind {
            FusionKind::Convolution => vec![(d + f + m, (d + f + m) / 2)],
            FusionKind::ConvThenConcat => vec![(d + f, (d + f) / 2), (d + m, (d + m) / 2)],
            _ => vec![],
        }
    }

    pub fn conv_specs(&self) -> Result<Vec<NetworkSpec>> {
        self.conv_channels()
            .into_iter()
            .map(|(i, o)| fusion_conv_spec(i, o, self.rows, self.cols))
            .collect()
    }

    pub fn output_shape(&self) -> [usize; 3] {
        let [d, f, m] = self.channels;
        let c = match self.kind {
            FusionKind::Multiplication => d,
            FusionKind::Concatenation => d + f + m,
            FusionKind::Convolution => (d + f + m) / 2,
            FusionKind::ConvThenConcat => (d + f) / 2 + (d + m) / 2,
            FusionKind::MulThenConcat => 2 * d,
        };
        [c, self.rows, self.cols]
    }

    fn check(&self, inputs: &[Tensor; 3], convs: &[Network]) -> Result<()> {
        for (t, &c) in inputs.iter().zip(&self.channels) {
            if t.shape() != [c, self.rows, self.cols] {
                return Err(Error::ShapeMismatch {
                    what: "fusion input",
                    expected: format!("{:?}", [c, self.rows, self.cols]),
                    found: format!("{:?}", t.shape()),
                });
            }
        }
        if convs.len() != self.conv_channels().len() {
            return Err(Error::InvalidArgument(format!(
                "`{}` fusion needs {} filter(s), got {}",
                self.kind,
                self.conv_channels().len(),
                convs.len()
            )));
        }
        Ok(())
    }

    pub fn infer(&self, inputs: &[Tensor; 3], convs: &[Network]) -> Result<Tensor> {
        self.forward(inputs, convs).map(|(y, _)| y)
    }

    pub fn forward(&self, inputs: &[Tensor; 3], convs: &[Network]) -> Result<(Tensor, FusionTape)> {
        self.check(inputs, convs)?;
        let [d, f, m] = inputs;
        let mut tapes = Vec::new();
        let mut run = |net: &Network, parts: &[&Tensor]| -> Result<Tensor> {
            let x = Tensor::concat_channels(parts)?;
            let (y, tape) = net.forward(&x, Mode::Infer)?;
            tapes.push((tape, parts.len()));
            Ok(y)
        };
        let out = match self.kind {
            FusionKind::Multiplication => hadamard(&hadamard(d, f), m),
            FusionKind::Concatenation => Tensor::concat_channels(&[d, f, m])?,
            FusionKind::Convolution => run(&convs[0], &[d, f, m])?,
            FusionKind::ConvThenConcat => {
                let a = run(&convs[0], &[d, f])?;
                let b = run(&convs[1], &[d, m])?;
                Tensor::concat_channels(&[&a, &b])?
            }
            FusionKind::MulThenConcat => Tensor::concat_channels(&[&hadamard(d, f), &hadamard(d, m)])?,
        };
        Ok((
            out,
            FusionTape {
                inputs: inputs.clone(),
                convs: tapes,
            },
        ))
    }

    pub fn backward(&self, tape: FusionTape, grad: &Tensor, convs: &[Network]) -> Result<FusionBackward> {
        let [d, f, m] = &tape.inputs;
        let [cd, cf, cm] = self.channels;
        let mut conv_tapes = tape.convs.into_iter();
        let mut conv_back = |net: &Network, g: &Tensor, counts: &[usize]| -> Result<(Gradients, Vec<Tensor>)> {
            let (t, _) = conv_tapes.next().expect("one tape per filter");
            let b = net.backward(t, g, true)?;
            let gin = b.input.expect("input gradient requested");
            Ok((b.params, gin.split_channels(counts)?))
        };
        let (conv_grads, inputs) = match self.kind {
            FusionKind::Multiplication => (
                vec![],
                [
                    hadamard(grad, &hadamard(f, m)),
                    hadamard(grad, &hadamard(d, m)),
                    hadamard(grad, &hadamard(d, f)),
                ],
            ),
            FusionKind::Concatenation => {
                let mut g = grad.split_channels(&[cd, cf, cm])?.into_iter();
                (vec![], [g.next().unwrap(), g.next().unwrap(), g.next().unwrap()])
            }
            FusionKind::Convolution => {
                let (p, g) = conv_back(&convs[0], grad, &[cd, cf, cm])?;
                let mut g = g.into_iter();
                (vec![p], [g.next().unwrap(), g.next().unwrap(), g.next().unwrap()])
            }
            FusionKind::ConvThenConcat => {
                let (o1, o2) = ((cd + cf) / 2, (cd + cm) / 2);
                let halves = grad.split_channels(&[o1, o2])?;
                let (p1, g1) = conv_back(&convs[0], &halves[0], &[cd, cf])?;
                let (p2, g2) = conv_back(&convs[1], &halves[1], &[cd, cm])?;
                let mut gd = g1[0].clone();
                gd.add_scaled(&g2[0], 1.0)?;
                (vec![p1, p2], [gd, g1[1].clone(), g2[1].clone()])
            }
            FusionKind::MulThenConcat => {
                let halves = grad.split_channels(&[cd, cd])?;
                let mut gd = hadamard(&halves[0], f);
                gd.add_scaled(&hadamard(&halves[1], m), 1.0)?;
                (vec![], [gd, hadamard(&halves[0], d), hadamard(&halves[1], d)])
            }
        };
        Ok(FusionBackward {
            convs: conv_grads,
            inputs,
        })
    }
}
