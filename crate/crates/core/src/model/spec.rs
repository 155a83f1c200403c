//! Declarative network description and its canonical text form.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::layers::Conv2d;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Default,
    W,
    Wf,
    Wfm,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::Default, Variant::W, Variant::Wf, Variant::Wfm];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Default => "default",
            Variant::W => "w",
            Variant::Wf => "wf",
            Variant::Wfm => "wfm",
        }
    }

    /// Takes an injected feature vector at the concatenation layer.
    pub fn injects_features(self) -> bool {
        matches!(self, Variant::Wf | Variant::Wfm)
    }

    /// Separate sigmoid attribute head and softmax shape head.
    pub fn split_heads(self) -> bool {
        self == Variant::Wfm
    }

    /// Autoencoder pretrained with the center-weighted loss.
    pub fn center_weighted(self) -> bool {
        self != Variant::Default
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown variant '{s}' (expected default, w, wf or wfm)")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvSpec {
    pub filters: usize,
    pub kernel: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub variant: Variant,
    pub input_shape: [usize; 3],
    /// Sigmoid outputs. For flat variants this covers every label.
    pub n_attr: usize,
    /// Softmax outputs (split-head variant only).
    pub n_shape: usize,
    pub injected_dim: usize,
    pub feedback_dim: usize,
    pub input_dropout: f64,
    pub convs: Vec<ConvSpec>,
    /// Indices of conv layers followed by a 2x2 max pool.
    pub pools_after: Vec<usize>,
    pub trunk: Vec<usize>,
    /// Width of the layer between the concatenation and the post-concat
    /// layer; 0 when absent.
    pub inject_width: usize,
    pub post_concat: usize,
    /// Hidden width of each separate head; 0 for flat variants.
    pub head_hidden: usize,
}

/// Labels in the flat (single sigmoid block) layout.
pub const FLAT_LABELS: usize = 15;
pub const SPLIT_ATTRS: usize = 10;
pub const SPLIT_SHAPES: usize = 6;

impl ModelSpec {
    /// The full-size network on 3x32x32 crops, with the label arity of the
    /// fixed 10-attribute / 6-shape universe.
    pub fn full(variant: Variant, injected_dim: usize) -> Self {
        let (n_attr, n_shape) = if variant.split_heads() {
            (SPLIT_ATTRS, SPLIT_SHAPES)
        } else {
            (FLAT_LABELS, 0)
        };
        let injects = variant.injects_features();
        ModelSpec {
            variant,
            input_shape: [3, 32, 32],
            n_attr,
            n_shape,
            injected_dim: if injects { injected_dim } else { 0 },
            feedback_dim: n_attr + n_shape,
            input_dropout: 0.05,
            convs: [80, 80, 120, 100, 140, 140]
                .into_iter()
                .map(|filters| ConvSpec { filters, kernel: 3 })
                .collect(),
            pools_after: vec![2, 5],
            trunk: vec![400, 100],
            inject_width: if injects { 1000 } else { 0 },
            post_concat: 100,
            head_hidden: if variant.split_heads() { 100 } else { 0 },
        }
    }

    /// Divides every filter count and hidden width by `divisor` (floor, at
    /// least 1).
    pub fn with_width_divisor(mut self, divisor: usize) -> Self {
        let div = |w: usize| if w == 0 { 0 } else { (w / divisor.max(1)).max(1) };
        for c in &mut self.convs {
            c.filters = div(c.filters);
        }
        for t in &mut self.trunk {
            *t = div(*t);
        }
        self.inject_width = div(self.inject_width);
        self.post_concat = div(self.post_concat);
        self.head_hidden = div(self.head_hidden);
        self
    }

    /// Scaled-down network on 3x8x8 inputs, widths divided by 10. The last
    /// four convolutions use 1x1 kernels so the stack still fits the input.
    pub fn compact(variant: Variant, injected_dim: usize) -> Self {
        let mut spec = Self::full(variant, injected_dim).with_width_divisor(10);
        spec.input_shape = [3, 8, 8];
        for (c, k) in spec.convs.iter_mut().zip([3, 3, 1, 1, 1, 1]) {
            c.kernel = k;
        }
        spec
    }

    pub fn output_arity(&self) -> usize {
        self.n_attr + self.n_shape
    }

    pub fn trunk_width(&self) -> usize {
        *self.trunk.last().expect("validated trunk")
    }

    pub fn concat_width(&self) -> usize {
        self.trunk_width() + self.feedback_dim + self.injected_dim
    }

    pub fn conv_layers(&self) -> Vec<Conv2d> {
        let mut in_ch = self.input_shape[0];
        self.convs
            .iter()
            .map(|c| {
                let layer = Conv2d::valid(in_ch, c.filters, c.kernel);
                in_ch = c.filters;
                layer
            })
            .collect()
    }

    /// Named activation shapes through the network, in order.
    pub fn trace(&self) -> Result<Vec<(String, Vec<usize>)>> {
        let [c, h, w] = self.input_shape;
        let mut out = vec![
            ("input".to_string(), vec![c, h, w]),
            ("dropout".to_string(), vec![c, h, w]),
        ];
        let (mut h, mut w) = (h, w);
        for (i, layer) in self.conv_layers().iter().enumerate() {
            let (oh, ow) = layer
                .output_hw(h, w)
                .map_err(|e| Error::Config(format!("conv{}: {e}", i + 1)))?;
            (h, w) = (oh, ow);
            out.push((format!("conv{}", i + 1), vec![layer.out_channels, h, w]));
            if self.pools_after.contains(&i) {
                ensure!(
                    h >= 2 && w >= 2,
                    Error::Config(format!("pool after conv{} sees {h}x{w}", i + 1))
                );
                (h, w) = (h / 2, w / 2);
                out.push((format!("pool{}", i + 1), vec![layer.out_channels, h, w]));
            }
        }
        for (i, &t) in self.trunk.iter().enumerate() {
            out.push((format!("fc{}", i + 1), vec![t]));
        }
        out.push(("concat".to_string(), vec![self.concat_width()]));
        if self.inject_width > 0 {
            out.push(("fc_inject".to_string(), vec![self.inject_width]));
        }
        out.push(("fc_post".to_string(), vec![self.post_concat]));
        if self.variant.split_heads() {
            out.push(("attr_hidden".to_string(), vec![self.head_hidden]));
            out.push(("attr_sigmoid".to_string(), vec![self.n_attr]));
            out.push(("shape_hidden".to_string(), vec![self.head_hidden]));
            out.push(("shape_softmax".to_string(), vec![self.n_shape]));
        } else {
            out.push(("sigmoid".to_string(), vec![self.n_attr]));
        }
        Ok(out)
    }

    /// Shape `[C, H, W]` of the last conv-stack activation.
    pub fn conv_output_shape(&self) -> Result<[usize; 3]> {
        let trace = self.trace()?;
        let last = trace
            .iter()
            .rev()
            .find(|(n, _)| n.starts_with("conv") || n.starts_with("pool"))
            .expect("at least one conv");
        Ok([last.1[0], last.1[1], last.1[2]])
    }

    /// Checks every invariant; the error names the first one violated.
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(format!("invalid model spec: {msg}")));
        if self.input_shape.iter().any(|&d| d == 0) {
            return bad(format!("input shape {:?} has a zero extent", self.input_shape));
        }
        if self.convs.is_empty() || self.convs.iter().any(|c| c.filters == 0 || c.kernel == 0) {
            return bad("conv layers must be non-empty with positive filters and kernels".into());
        }
        if self.pools_after.windows(2).any(|w| w[0] >= w[1])
            || self.pools_after.iter().any(|&p| p >= self.convs.len())
        {
            return bad(format!("pool positions {:?} are not increasing conv indices", self.pools_after));
        }
        if self.trunk.is_empty() || self.trunk.iter().any(|&t| t == 0) || self.post_concat == 0 {
            return bad("fully-connected widths must be positive".into());
        }
        if self.n_attr == 0 {
            return bad("n_attr must be positive".into());
        }
        if !(0.0..1.0).contains(&self.input_dropout) {
            return bad(format!("input dropout {} outside [0, 1)", self.input_dropout));
        }
        if self.variant.injects_features() {
            if self.injected_dim == 0 {
                return bad(format!("variant {} requires injected_dim > 0", self.variant));
            }
            if self.inject_width == 0 {
                return bad(format!("variant {} requires the injection layer", self.variant));
            }
        } else if self.injected_dim != 0 || self.inject_width != 0 {
            return bad(format!("variant {} takes no injected features", self.variant));
        }
        if self.variant.split_heads() {
            if self.n_shape < 2 {
                return bad(format!("variant wfm requires n_shape >= 2, got {}", self.n_shape));
            }
            if self.head_hidden == 0 {
                return bad("variant wfm requires separate head hidden layers".into());
            }
        } else if self.n_shape != 0 || self.head_hidden != 0 {
            return bad(format!("flat variant {} has no softmax head", self.variant));
        }
        if self.feedback_dim != self.output_arity() {
            return bad(format!(
                "feedback_dim {} must equal the output arity {}",
                self.feedback_dim,
                self.output_arity()
            ));
        }
        self.trace().map(|_| ())
    }

    /// One `key=value` line per field in fixed order.
    pub fn to_canonical_text(&self) -> String {
        let list = |v: &[usize]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",");
        let convs = self
            .convs
            .iter()
            .map(|c| format!("{}x{}", c.filters, c.kernel))
            .collect::<Vec<_>>()
            .join(",");
        format!(
            "variant={}\ninput={}\nn_attr={}\nn_shape={}\ninjected_dim={}\nfeedback_dim={}\n\
             input_dropout={:?}\nconvs={}\npools_after={}\ntrunk={}\ninject_width={}\n\
             post_concat={}\nhead_hidden={}\n",
            self.variant,
            list(&self.input_shape),
            self.n_attr,
            self.n_shape,
            self.injected_dim,
            self.feedback_dim,
            self.input_dropout,
            convs,
            list(&self.pools_after),
            list(&self.trunk),
            self.inject_width,
            self.post_concat,
            self.head_hidden,
        )
    }

    pub fn from_canonical_text(text: &str) -> Result<Self> {
        let mut fields = std::collections::BTreeMap::new();
        for line in text.lines().filter(|l| !l.is_empty()) {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Data(format!("malformed model spec line '{line}'")))?;
            fields.insert(k.to_string(), v.to_string());
        }
        let get = |k: &str| -> Result<&str> {
            fields
                .get(k)
                .map(String::as_str)
                .ok_or_else(|| Error::Data(format!("model spec missing '{k}'")))
        };
        let num = |k: &str| -> Result<usize> {
            get(k)?
                .parse()
                .map_err(|_| Error::Data(format!("model spec field '{k}' is not an integer")))
        };
        let list = |k: &str| -> Result<Vec<usize>> {
            let v = get(k)?;
            if v.is_empty() {
                return Ok(vec![]);
            }
            v.split(',')
                .map(|x| {
                    x.parse()
                        .map_err(|_| Error::Data(format!("model spec field '{k}' has bad entry '{x}'")))
                })
                .collect()
        };
        let input = list("input")?;
        let input_shape: [usize; 3] = input
            .try_into()
            .map_err(|_| Error::Data("model spec input must have three extents".into()))?;
        let convs = get("convs")?
            .split(',')
            .map(|c| {
                let (f, k) = c
                    .split_once('x')
                    .ok_or_else(|| Error::Data(format!("bad conv entry '{c}'")))?;
                Ok(ConvSpec {
                    filters: f.parse().map_err(|_| Error::Data(format!("bad conv entry '{c}'")))?,
                    kernel: k.parse().map_err(|_| Error::Data(format!("bad conv entry '{c}'")))?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let spec = ModelSpec {
            variant: get("variant")?.parse()?,
            input_shape,
            n_attr: num("n_attr")?,
            n_shape: num("n_shape")?,
            injected_dim: num("injected_dim")?,
            feedback_dim: num("feedback_dim")?,
            input_dropout: get("input_dropout")?
                .parse()
                .map_err(|_| Error::Data("model spec input_dropout is not a number".into()))?,
            convs,
            pools_after: list("pools_after")?,
            trunk: list("trunk")?,
            inject_width: num("inject_width")?,
            post_concat: num("post_concat")?,
            head_hidden: num("head_hidden")?,
        };
        Ok(spec)
    }
}
