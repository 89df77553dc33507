//! The transformer Q-network: a fully connected input projection replacing the
//! token embedding, sinusoidal positional encoding, a stack of encoder layers
//! of one [`LayerKind`], and a fully connected Q-value head read from the final
//! sequence position.

mod attention;
mod layer;

use serde::{Deserialize, Serialize};

use crate::error::{Result, TbqnError};
use crate::rng::RngState;
use crate::tensor::{init_tensor, Graph, Init, ParamSet, Parameter, Scalar, Tensor, Var};

pub use attention::multi_head_attention;
pub use layer::{gru_gate, output_gate, EncoderLayer, GateParams};

/// Encoder layer variant. All layers of one network share the same kind.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum LayerKind {
    /// Post-norm residual layer with dropout after each sub-layer.
    Type1Baseline,
    /// `Type1Baseline` without intra-layer dropout.
    Type2NoDropout,
    /// Identity map reordering: pre-norm, ReLU after each sub-layer.
    Type3Imr,
    /// Pre-norm without the extra ReLU.
    Type4PreNorm,
    /// IMR with the residual replaced by a sigmoid output gate.
    Type5OutputGate,
    /// IMR with the residual replaced by a GRU-style gate.
    Type6GruGate,
}

impl LayerKind {
    pub const ALL: [LayerKind; 6] = [
        LayerKind::Type1Baseline,
        LayerKind::Type2NoDropout,
        LayerKind::Type3Imr,
        LayerKind::Type4PreNorm,
        LayerKind::Type5OutputGate,
        LayerKind::Type6GruGate,
    ];

    pub fn number(self) -> u8 {
        self as u8 + 1
    }
}

impl TryFrom<u8> for LayerKind {
    type Error = String;

    fn try_from(v: u8) -> std::result::Result<Self, String> {
        match v {
            1..=6 => Ok(LayerKind::ALL[v as usize - 1]),
            _ => Err(format!("layer kind must be 1..=6, got {v}")),
        }
    }
}

impl From<LayerKind> for u8 {
    fn from(k: LayerKind) -> u8 {
        k.number()
    }
}

/// Dimensions and variant selection for a Q-network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QNetworkSpec {
    pub history_horizon: usize,
    pub state_dim: usize,
    pub model_dim: usize,
    pub num_heads: usize,
    pub num_layers: usize,
    pub ff_dim: usize,
    pub num_actions: usize,
    pub layer_kind: LayerKind,
    pub dropout_rate: f64,
    /// Dropout after the positional encoding, outside the encoder layers.
    pub outer_dropout: bool,
    pub depth_scaled_init: bool,
    /// Depth-scale the Q-head as if it were layer `num_layers + 1`.
    pub depth_scaled_last_layer: bool,
}

impl QNetworkSpec {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(TbqnError::config(m));
        if self.history_horizon == 0 {
            return fail("net.history_horizon must be >= 1".into());
        }
        if self.num_layers == 0 {
            return fail("net.num_layers must be >= 1".into());
        }
        if self.state_dim == 0 || self.num_actions == 0 || self.ff_dim == 0 {
            return fail("net.state_dim, net.num_actions and net.ff_dim must be >= 1".into());
        }
        if self.num_heads == 0 || self.model_dim % self.num_heads != 0 {
            return fail(format!(
                "net.model_dim {} is not divisible by net.num_heads {}",
                self.model_dim, self.num_heads
            ));
        }
        if self.model_dim == 0 || self.model_dim % 2 != 0 {
            return fail(format!("net.model_dim must be even, got {}", self.model_dim));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return fail(format!("net.dropout_rate {} outside [0, 1)", self.dropout_rate));
        }
        Ok(())
    }
}

/// Forward-pass mode. Dropout is only active in `Train`.
pub enum Mode<'a> {
    Eval,
    Train(&'a mut RngState),
}

impl Mode<'_> {
    pub fn is_training(&self) -> bool {
        matches!(self, Mode::Train(_))
    }

    pub(crate) fn dropout<T: Scalar>(&mut self, g: &mut Graph<T>, x: Var, rate: f64) -> Result<Var> {
        match self {
            Mode::Eval => Ok(x),
            Mode::Train(rng) => g.dropout(x, rate, true, rng),
        }
    }
}

/// Sinusoidal position table of shape `[horizon, d]`.
pub fn positional_encoding<T: Scalar>(horizon: usize, d: usize) -> Result<Tensor<T>> {
    if d == 0 || d % 2 != 0 || horizon == 0 {
        return Err(TbqnError::config(format!(
            "positional encoding needs even d and horizon >= 1, got horizon={horizon}, d={d}"
        )));
    }
    let mut data = vec![T::zero(); horizon * d];
    for pos in 0..horizon {
        for i in 0..d / 2 {
            let angle = pos as f64 / 10000f64.powf(2.0 * i as f64 / d as f64);
            data[pos * d + 2 * i] = T::of(angle.sin());
            data[pos * d + 2 * i + 1] = T::of(angle.cos());
        }
    }
    Tensor::new(&[horizon, d], data)
}

#[derive(Debug, Clone, PartialEq)]
struct Layout {
    input_w: usize,
    input_b: usize,
    layers: Vec<EncoderLayer>,
    head_w: usize,
    head_b: usize,
}

/// A transformer Q-network with its parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct QNetwork<T> {
    spec: QNetworkSpec,
    params: ParamSet<T>,
    layout: Layout,
    pe: Tensor<T>,
}

impl<T: Scalar> QNetwork<T> {
    pub fn new(spec: QNetworkSpec, rng: &mut RngState) -> Result<Self> {
        spec.validate()?;
        let mut params = ParamSet::new();
        let d = spec.model_dim;
        let input_w = params.push(Parameter::new(
            "input.w",
            init_tensor(&[spec.state_dim, d], Init::XavierUniform, rng)?,
        ));
        let input_b = params.push(Parameter::new("input.b", Tensor::zeros(&[d])));
        let layers = (1..=spec.num_layers)
            .map(|depth| {
                let scheme = if spec.depth_scaled_init {
                    Init::DepthScaled(depth)
                } else {
                    Init::XavierUniform
                };
                EncoderLayer::new(&mut params, &spec, depth, scheme, rng)
            })
            .collect::<Result<Vec<_>>>()?;
        let head_scheme = if spec.depth_scaled_last_layer {
            Init::DepthScaled(spec.num_layers + 1)
        } else {
            Init::XavierUniform
        };
        let head_w = params.push(Parameter::new(
            "head.w",
            init_tensor(&[d, spec.num_actions], head_scheme, rng)?,
        ));
        let head_b = params.push(Parameter::new("head.b", Tensor::zeros(&[spec.num_actions])));
        let pe = positional_encoding(spec.history_horizon, d)?;
        Ok(Self {
            spec,
            params,
            layout: Layout {
                input_w,
                input_b,
                layers,
                head_w,
                head_b,
            },
            pe,
        })
    }

    /// Rebuilds a network around existing weights (e.g. from a checkpoint).
    pub fn from_params(spec: QNetworkSpec, params: ParamSet<T>) -> Result<Self> {
        let mut net = Self::new(spec, &mut RngState::new(0))?;
        net.params.copy_values_from(&params).map_err(|_| {
            TbqnError::config("checkpoint weights do not match the network specification")
        })?;
        Ok(net)
    }

    pub fn spec(&self) -> &QNetworkSpec {
        &self.spec
    }

    pub fn params(&self) -> &ParamSet<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet<T> {
        &mut self.params
    }

    pub fn num_weights(&self) -> usize {
        self.params.numel()
    }

    pub fn layers(&self) -> &[EncoderLayer] {
        &self.layout.layers
    }

    /// Embeds `history` (`[B, H, state_dim]`) into `[B, H, d]`: projection, positions, optional outer dropout.
    pub fn embed(&self, g: &mut Graph<T>, vars: &[Var], history: Var, mode: &mut Mode) -> Result<Var> {
        let s = g.shape(history).to_vec();
        if s.len() != 3 || s[1] != self.spec.history_horizon || s[2] != self.spec.state_dim {
            return Err(TbqnError::config(format!(
                "history of shape {s:?} does not match horizon {} and state_dim {}",
                self.spec.history_horizon, self.spec.state_dim
            )));
        }
        let h = g.matmul(history, vars[self.layout.input_w])?;
        let h = g.add(h, vars[self.layout.input_b])?;
        let pe = g.constant(self.pe.clone());
        let h = g.add(h, pe)?;
        if self.spec.outer_dropout {
            mode.dropout(g, h, self.spec.dropout_rate)
        } else {
            Ok(h)
        }
    }

    /// Runs the encoder stack on an embedded sequence.
    pub fn encode(&self, g: &mut Graph<T>, vars: &[Var], x: Var, mode: &mut Mode) -> Result<Var> {
        self.layout
            .layers
            .iter()
            .try_fold(x, |h, layer| layer.forward(g, vars, h, &self.spec, mode))
    }

    /// Q-values `[B, num_actions]` for histories `[B, H, state_dim]`.
    ///
    /// `vars` must come from `self.params().bind(g)`.
    pub fn forward(&self, g: &mut Graph<T>, vars: &[Var], history: Var, mode: &mut Mode) -> Result<Var> {
        let h = self.embed(g, vars, history, mode)?;
        let h = self.encode(g, vars, h, mode)?;
        let last = g.last_position(h)?;
        let q = g.matmul(last, vars[self.layout.head_w])?;
        g.add(q, vars[self.layout.head_b])
    }

    /// Eval-mode Q-values for a flat batch of histories; no gradients are tracked.
    pub fn q_values(&self, histories: &[T], batch: usize) -> Result<Vec<T>> {
        let mut g = Graph::inference();
        let vars = self.params.bind(&mut g);
        let shape = [batch, self.spec.history_horizon, self.spec.state_dim];
        let x = g.constant(Tensor::new(&shape, histories.to_vec())?);
        let q = self.forward(&mut g, &vars, x, &mut Mode::Eval)?;
        Ok(g.value(q).data().to_vec())
    }
}
