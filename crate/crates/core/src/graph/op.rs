use std::fmt;

use num_rational::Ratio;
use serde::{Deserialize, Serialize};

use super::TensorShape;

/// Operator families understood by the search space, the tensor engine and the device models.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum OpKind {
    Conv,
    DWConv,
    PointwiseConv,
    MBConv,
    AvgPool,
    MaxPool,
    Identity,
    ReLU,
    LeakyReLU,
    UpsampleNearest,
    UpsampleBilinear,
    DepthToSpace,
    Linear,
}

impl OpKind {
    pub const ALL: [OpKind; 13] = [
        OpKind::Conv,
        OpKind::DWConv,
        OpKind::PointwiseConv,
        OpKind::MBConv,
        OpKind::AvgPool,
        OpKind::MaxPool,
        OpKind::Identity,
        OpKind::ReLU,
        OpKind::LeakyReLU,
        OpKind::UpsampleNearest,
        OpKind::UpsampleBilinear,
        OpKind::DepthToSpace,
        OpKind::Linear,
    ];

    pub fn name(self) -> &'static str {
        match self {
            OpKind::Conv => "Conv",
            OpKind::DWConv => "DWConv",
            OpKind::PointwiseConv => "PointwiseConv",
            OpKind::MBConv => "MBConv",
            OpKind::AvgPool => "AvgPool",
            OpKind::MaxPool => "MaxPool",
            OpKind::Identity => "Identity",
            OpKind::ReLU => "ReLU",
            OpKind::LeakyReLU => "LeakyReLU",
            OpKind::UpsampleNearest => "UpsampleNearest",
            OpKind::UpsampleBilinear => "UpsampleBilinear",
            OpKind::DepthToSpace => "DepthToSpace",
            OpKind::Linear => "Linear",
        }
    }

    /// Position in [`OpKind::ALL`]; used for one-hot encodings.
    pub fn index(self) -> usize {
        OpKind::ALL.iter().position(|k| *k == self).unwrap()
    }

    /// Kinds whose kernel is fixed to 1.
    pub fn is_non_spatial(self) -> bool {
        matches!(
            self,
            OpKind::Identity
                | OpKind::ReLU
                | OpKind::LeakyReLU
                | OpKind::PointwiseConv
                | OpKind::Linear
                | OpKind::UpsampleNearest
                | OpKind::UpsampleBilinear
                | OpKind::DepthToSpace
        )
    }

    pub fn uses_scale_factor(self) -> bool {
        matches!(self, OpKind::UpsampleNearest | OpKind::UpsampleBilinear | OpKind::DepthToSpace)
    }

    /// Convolution family: the kinds whose output channel count maps onto compute lanes.
    pub fn is_conv_family(self) -> bool {
        matches!(self, OpKind::Conv | OpKind::DWConv | OpKind::PointwiseConv | OpKind::MBConv)
    }

    fn allows_stride(self) -> bool {
        matches!(
            self,
            OpKind::Conv | OpKind::DWConv | OpKind::PointwiseConv | OpKind::MBConv | OpKind::AvgPool | OpKind::MaxPool
        )
    }
}

impl fmt::Display for OpKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// One candidate operator: kind plus every attribute that affects its shape or cost.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "OpWire", into = "OpWire")]
pub struct OperatorSpec {
    pub kind: OpKind,
    pub kernel: u32,
    pub stride: u32,
    pub in_channels: u32,
    pub out_channels: u32,
    /// MBConv hidden width multiplier.
    pub expand_ratio: Ratio<u32>,
    /// LeakyReLU negative slope.
    pub activation_slope: f64,
    /// Upsample and DepthToSpace factor.
    pub scale_factor: u32,
    /// LeakyReLU with one learnable slope per channel.
    pub per_channel: bool,
    /// Bilinear upsampling with align-corners coordinate mapping.
    pub align_corners: bool,
}

impl OperatorSpec {
    fn base(kind: OpKind, in_channels: u32, out_channels: u32) -> Self {
        OperatorSpec {
            kind,
            kernel: 1,
            stride: 1,
            in_channels,
            out_channels,
            expand_ratio: Ratio::from_integer(1),
            activation_slope: 0.0,
            scale_factor: 1,
            per_channel: false,
            align_corners: false,
        }
    }

    pub fn conv(kernel: u32, stride: u32, in_channels: u32, out_channels: u32) -> Self {
        OperatorSpec { kernel, stride, ..Self::base(OpKind::Conv, in_channels, out_channels) }
    }

    pub fn dwconv(kernel: u32, stride: u32, channels: u32) -> Self {
        OperatorSpec { kernel, stride, ..Self::base(OpKind::DWConv, channels, channels) }
    }

    pub fn pointwise(stride: u32, in_channels: u32, out_channels: u32) -> Self {
        OperatorSpec { stride, ..Self::base(OpKind::PointwiseConv, in_channels, out_channels) }
    }

    pub fn mbconv(kernel: u32, stride: u32, expand: u32, in_channels: u32, out_channels: u32) -> Self {
        OperatorSpec {
            kernel,
            stride,
            expand_ratio: Ratio::from_integer(expand),
            ..Self::base(OpKind::MBConv, in_channels, out_channels)
        }
    }

    pub fn avg_pool(kernel: u32, stride: u32, channels: u32) -> Self {
        OperatorSpec { kernel, stride, ..Self::base(OpKind::AvgPool, channels, channels) }
    }

    pub fn max_pool(kernel: u32, stride: u32, channels: u32) -> Self {
        OperatorSpec { kernel, stride, ..Self::base(OpKind::MaxPool, channels, channels) }
    }

    pub fn identity(channels: u32) -> Self {
        Self::base(OpKind::Identity, channels, channels)
    }

    pub fn relu(channels: u32) -> Self {
        Self::base(OpKind::ReLU, channels, channels)
    }

    pub fn leaky_relu(channels: u32, slope: f64) -> Self {
        OperatorSpec { activation_slope: slope, ..Self::base(OpKind::LeakyReLU, channels, channels) }
    }

    pub fn leaky_relu_per_channel(channels: u32, slope: f64) -> Self {
        OperatorSpec { per_channel: true, ..Self::leaky_relu(channels, slope) }
    }

    pub fn upsample_nearest(channels: u32, scale: u32) -> Self {
        OperatorSpec { scale_factor: scale, ..Self::base(OpKind::UpsampleNearest, channels, channels) }
    }

    pub fn upsample_bilinear(channels: u32, scale: u32, align_corners: bool) -> Self {
        OperatorSpec {
            scale_factor: scale,
            align_corners,
            ..Self::base(OpKind::UpsampleBilinear, channels, channels)
        }
    }

    pub fn depth_to_space(in_channels: u32, scale: u32) -> Self {
        OperatorSpec {
            scale_factor: scale,
            ..Self::base(OpKind::DepthToSpace, in_channels, in_channels / (scale * scale).max(1))
        }
    }

    pub fn linear(in_features: u32, out_features: u32) -> Self {
        Self::base(OpKind::Linear, in_features, out_features)
    }

    /// Hidden width of an MBConv block, if the expand ratio yields a whole channel count.
    pub fn hidden_channels(&self) -> Option<u32> {
        let h = self.expand_ratio * Ratio::from_integer(self.in_channels);
        h.is_integer().then(|| h.to_integer())
    }

    /// Symmetric zero padding on each spatial border.
    pub fn padding(&self) -> u32 {
        (self.kernel.saturating_sub(1)) / 2
    }

    /// Violations of the attribute invariants that do not depend on the input shape.
    pub fn invariant_violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        let k = self.kind;
        if self.kernel == 0 || self.kernel.is_multiple_of(2) {
            out.push(format!("{k}: kernel must be an odd positive integer, got {}", self.kernel));
        }
        if k.is_non_spatial() && self.kernel != 1 {
            out.push(format!("{k}: kernel must be 1, got {}", self.kernel));
        }
        if self.stride == 0 {
            out.push(format!("{k}: stride must be positive"));
        } else if !k.allows_stride() && self.stride != 1 {
            out.push(format!("{k}: stride must be 1, got {}", self.stride));
        }
        if self.in_channels == 0 || self.out_channels == 0 {
            out.push(format!("{k}: channel counts must be positive"));
        }
        if *self.expand_ratio.numer() == 0 || *self.expand_ratio.denom() == 0 {
            out.push(format!("{k}: expand_ratio must be positive"));
        } else if k != OpKind::MBConv && self.expand_ratio != Ratio::from_integer(1) {
            out.push(format!("{k}: expand_ratio must be 1 outside MBConv"));
        } else if k == OpKind::MBConv && self.hidden_channels().is_none() {
            out.push(format!("{k}: expand_ratio {} does not give a whole hidden width", self.expand_ratio));
        }
        if !self.activation_slope.is_finite() || self.activation_slope < 0.0 {
            out.push(format!("{k}: activation_slope must be finite and non-negative"));
        } else if k != OpKind::LeakyReLU && self.activation_slope != 0.0 {
            out.push(format!("{k}: activation_slope must be 0 outside LeakyReLU"));
        }
        if self.per_channel && k != OpKind::LeakyReLU {
            out.push(format!("{k}: per_channel applies to LeakyReLU only"));
        }
        if self.align_corners && k != OpKind::UpsampleBilinear {
            out.push(format!("{k}: align_corners applies to UpsampleBilinear only"));
        }
        if self.scale_factor == 0 {
            out.push(format!("{k}: scale_factor must be positive"));
        } else if !k.uses_scale_factor() && self.scale_factor != 1 {
            out.push(format!("{k}: scale_factor must be 1, got {}", self.scale_factor));
        }
        let same_channels = matches!(
            k,
            OpKind::Identity
                | OpKind::ReLU
                | OpKind::LeakyReLU
                | OpKind::DWConv
                | OpKind::AvgPool
                | OpKind::MaxPool
                | OpKind::UpsampleNearest
                | OpKind::UpsampleBilinear
        );
        if same_channels && self.in_channels != self.out_channels {
            out.push(format!(
                "{k}: requires in_channels == out_channels, got {} / {}",
                self.in_channels, self.out_channels
            ));
        }
        if k == OpKind::DepthToSpace && self.scale_factor > 0 {
            let s2 = self.scale_factor * self.scale_factor;
            if !self.in_channels.is_multiple_of(s2) {
                out.push(format!(
                    "DepthToSpace: in_channels {} not divisible by scale_factor^2 = {s2}",
                    self.in_channels
                ));
            } else if self.out_channels != self.in_channels / s2 {
                out.push(format!(
                    "DepthToSpace: out_channels must be {} for in_channels {} and scale {}",
                    self.in_channels / s2,
                    self.in_channels,
                    self.scale_factor
                ));
            }
        }
        out
    }

    /// Output shape for `input`, or a description of why the pair is invalid.
    pub fn output_shape(&self, input: TensorShape) -> Result<TensorShape, String> {
        if let Some(v) = self.invariant_violations().into_iter().next() {
            return Err(v);
        }
        let expected_in = match self.kind {
            OpKind::Linear => input.numel() as u64,
            _ => input.channels as u64,
        };
        if self.in_channels as u64 != expected_in {
            return Err(format!(
                "{}: in_channels {} does not match input {}",
                self.kind, self.in_channels, input
            ));
        }
        let spatial = |n: u32| -> Result<u32, String> {
            let padded = n + 2 * self.padding();
            if padded < self.kernel {
                return Err(format!("{}: kernel {} larger than padded input {}", self.kind, self.kernel, padded));
            }
            Ok((padded - self.kernel) / self.stride + 1)
        };
        let out = match self.kind {
            OpKind::Conv
            | OpKind::DWConv
            | OpKind::PointwiseConv
            | OpKind::MBConv
            | OpKind::AvgPool
            | OpKind::MaxPool => TensorShape::new(self.out_channels, spatial(input.height)?, spatial(input.width)?),
            OpKind::Identity | OpKind::ReLU | OpKind::LeakyReLU => input,
            OpKind::UpsampleNearest | OpKind::UpsampleBilinear | OpKind::DepthToSpace => TensorShape::new(
                self.out_channels,
                input.height * self.scale_factor,
                input.width * self.scale_factor,
            ),
            OpKind::Linear => TensorShape::new(self.out_channels, 1, 1),
        };
        Ok(out)
    }

    /// Number of learnable scalars the tensor engine allocates for this operator.
    pub fn parameter_count(&self) -> usize {
        let (ci, co, k) = (self.in_channels as usize, self.out_channels as usize, self.kernel as usize);
        match self.kind {
            OpKind::Conv => co * ci * k * k + co,
            OpKind::DWConv => ci * k * k + ci,
            OpKind::PointwiseConv | OpKind::Linear => co * ci + co,
            OpKind::MBConv => {
                let h = self.hidden_channels().unwrap_or(0) as usize;
                // expand + depthwise + project, each with bias, plus the output scale
                (h * ci + h) + (h * k * k + h) + (co * h + co) + co
            }
            OpKind::LeakyReLU if self.per_channel => ci,
            _ => 0,
        }
    }
}

impl fmt::Display for OperatorSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}(k{} s{} {}->{}", self.kind, self.kernel, self.stride, self.in_channels, self.out_channels)?;
        if self.kind == OpKind::MBConv {
            write!(f, " e{}", self.expand_ratio)?;
        }
        if self.kind.uses_scale_factor() {
            write!(f, " x{}", self.scale_factor)?;
        }
        if self.kind == OpKind::LeakyReLU {
            write!(f, " a{}{}", self.activation_slope, if self.per_channel { " per-channel" } else { "" })?;
        }
        if self.align_corners {
            f.write_str(" align-corners")?;
        }
        f.write_str(")")
    }
}

/// Expand ratios are written as a bare integer or as `"n/d"`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
enum RatioWire {
    Int(u32),
    Text(String),
}

fn default_one() -> u32 {
    1
}

fn is_false(b: &bool) -> bool {
    !*b
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct OpWire {
    kind: OpKind,
    #[serde(default = "default_one")]
    kernel: u32,
    #[serde(default = "default_one")]
    stride: u32,
    in_channels: u32,
    out_channels: u32,
    #[serde(default)]
    expand_ratio: Option<RatioWire>,
    #[serde(default)]
    activation_slope: f64,
    #[serde(default = "default_one")]
    scale_factor: u32,
    #[serde(default, skip_serializing_if = "is_false")]
    per_channel: bool,
    #[serde(default, skip_serializing_if = "is_false")]
    align_corners: bool,
}

fn parse_ratio(w: &RatioWire) -> Result<Ratio<u32>, String> {
    match w {
        RatioWire::Int(n) => Ok(Ratio::from_integer(*n)),
        RatioWire::Text(s) => {
            let (n, d) = match s.split_once('/') {
                Some((n, d)) => (n.trim(), d.trim()),
                None => (s.trim(), "1"),
            };
            let n: u32 = n.parse().map_err(|_| format!("invalid expand_ratio {s:?}"))?;
            let d: u32 = d.parse().map_err(|_| format!("invalid expand_ratio {s:?}"))?;
            if d == 0 {
                return Err(format!("invalid expand_ratio {s:?}: zero denominator"));
            }
            Ok(Ratio::new(n, d))
        }
    }
}

impl TryFrom<OpWire> for OperatorSpec {
    type Error = String;

    fn try_from(w: OpWire) -> Result<Self, String> {
        let expand_ratio = match &w.expand_ratio {
            Some(r) => parse_ratio(r)?,
            None => Ratio::from_integer(1),
        };
        for (name, v) in [
            ("kernel", w.kernel),
            ("stride", w.stride),
            ("in_channels", w.in_channels),
            ("out_channels", w.out_channels),
            ("scale_factor", w.scale_factor),
        ] {
            if v == 0 {
                return Err(format!("{name} must be a positive integer"));
            }
        }
        if *expand_ratio.numer() == 0 {
            return Err("expand_ratio must be positive".into());
        }
        if !w.activation_slope.is_finite() || w.activation_slope < 0.0 {
            return Err("activation_slope must be finite and non-negative".into());
        }
        Ok(OperatorSpec {
            kind: w.kind,
            kernel: w.kernel,
            stride: w.stride,
            in_channels: w.in_channels,
            out_channels: w.out_channels,
            expand_ratio,
            activation_slope: w.activation_slope,
            scale_factor: w.scale_factor,
            per_channel: w.per_channel,
            align_corners: w.align_corners,
        })
    }
}

impl From<OperatorSpec> for OpWire {
    fn from(op: OperatorSpec) -> Self {
        let e = op.expand_ratio;
        let expand_ratio = if e.is_integer() {
            RatioWire::Int(e.to_integer())
        } else {
            RatioWire::Text(format!("{}/{}", e.numer(), e.denom()))
        };
        OpWire {
            kind: op.kind,
            kernel: op.kernel,
            stride: op.stride,
            in_channels: op.in_channels,
            out_channels: op.out_channels,
            expand_ratio: Some(expand_ratio),
            activation_slope: op.activation_slope,
            scale_factor: op.scale_factor,
            per_channel: op.per_channel,
            align_corners: op.align_corners,
        }
    }
}
