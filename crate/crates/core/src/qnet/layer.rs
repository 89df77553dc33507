use super::attention::multi_head_attention;
use super::{LayerKind, Mode, QNetworkSpec};
use crate::error::Result;
use crate::rng::RngState;
use crate::tensor::{init_tensor, Graph, Init, ParamSet, Parameter, Scalar, Var};

const LN_EPS: f64 = 1e-5;
/// Initial GRU gate bias; `Z = sigmoid(.. - b)` starts near 0.12, favouring the skip path.
const GRU_GATE_BIAS: f64 = 2.0;

/// Parameter indices of the gate that replaces a residual connection.
#[derive(Debug, Clone, PartialEq)]
pub enum GateParams {
    /// Plain residual addition.
    Residual,
    /// `g(x, y) = x + sigmoid(x Wg - bg) * y`.
    Output { wg: usize, bg: usize },
    /// GRU-style gate.
    Gru {
        wr: usize,
        ur: usize,
        wz: usize,
        uz: usize,
        wh: usize,
        uh: usize,
        bg: usize,
    },
}

/// Parameter indices for one encoder layer.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderLayer {
    pub depth: usize,
    pub attn: [usize; 4],
    pub ff_w1: usize,
    pub ff_b1: usize,
    pub ff_w2: usize,
    pub ff_b2: usize,
    pub ln1: [usize; 2],
    pub ln2: [usize; 2],
    pub gates: [GateParams; 2],
}

impl EncoderLayer {
    pub(crate) fn new<T: Scalar>(
        params: &mut ParamSet<T>,
        spec: &QNetworkSpec,
        depth: usize,
        scheme: Init,
        rng: &mut RngState,
    ) -> Result<Self> {
        let d = spec.model_dim;
        let ff = spec.ff_dim;
        let prefix = format!("layer{depth}");
        let mut add = |name: &str, shape: &[usize], init: Init, rng: &mut RngState| -> Result<usize> {
            let t = init_tensor(shape, init, rng)?;
            Ok(params.push(Parameter::new(format!("{prefix}.{name}"), t)))
        };
        let attn = [
            add("attn.wq", &[d, d], scheme, rng)?,
            add("attn.wk", &[d, d], scheme, rng)?,
            add("attn.wv", &[d, d], scheme, rng)?,
            add("attn.wo", &[d, d], scheme, rng)?,
        ];
        let ff_w1 = add("ff.w1", &[d, ff], scheme, rng)?;
        let ff_b1 = add("ff.b1", &[ff], Init::Zeros, rng)?;
        let ff_w2 = add("ff.w2", &[ff, d], scheme, rng)?;
        let ff_b2 = add("ff.b2", &[d], Init::Zeros, rng)?;
        let ln1 = [
            add("ln1.gain", &[d], Init::Constant(1.0), rng)?,
            add("ln1.bias", &[d], Init::Zeros, rng)?,
        ];
        let ln2 = [
            add("ln2.gain", &[d], Init::Constant(1.0), rng)?,
            add("ln2.bias", &[d], Init::Zeros, rng)?,
        ];
        let mut gate = |i: usize, rng: &mut RngState| -> Result<GateParams> {
            Ok(match spec.layer_kind {
                LayerKind::Type5OutputGate => GateParams::Output {
                    wg: add(&format!("gate{i}.wg"), &[d, d], scheme, rng)?,
                    bg: add(&format!("gate{i}.bg"), &[d], Init::Zeros, rng)?,
                },
                LayerKind::Type6GruGate => GateParams::Gru {
                    wr: add(&format!("gate{i}.wr"), &[d, d], scheme, rng)?,
                    ur: add(&format!("gate{i}.ur"), &[d, d], scheme, rng)?,
                    wz: add(&format!("gate{i}.wz"), &[d, d], scheme, rng)?,
                    uz: add(&format!("gate{i}.uz"), &[d, d], scheme, rng)?,
                    wh: add(&format!("gate{i}.wh"), &[d, d], scheme, rng)?,
                    uh: add(&format!("gate{i}.uh"), &[d, d], scheme, rng)?,
                    bg: add(&format!("gate{i}.bg"), &[d], Init::Constant(GRU_GATE_BIAS), rng)?,
                },
                _ => GateParams::Residual,
            })
        };
        let gates = [gate(1, rng)?, gate(2, rng)?];
        Ok(Self {
            depth,
            attn,
            ff_w1,
            ff_b1,
            ff_w2,
            ff_b2,
            ln1,
            ln2,
            gates,
        })
    }

    fn attention<T: Scalar>(&self, g: &mut Graph<T>, vars: &[Var], x: Var, heads: usize) -> Result<Var> {
        multi_head_attention(g, x, self.attn.map(|i| vars[i]), heads)
    }

    fn feed_forward<T: Scalar>(&self, g: &mut Graph<T>, vars: &[Var], x: Var) -> Result<Var> {
        let h = g.matmul(x, vars[self.ff_w1])?;
        let h = g.add(h, vars[self.ff_b1])?;
        let h = g.relu(h);
        let h = g.matmul(h, vars[self.ff_w2])?;
        g.add(h, vars[self.ff_b2])
    }

    fn norm<T: Scalar>(&self, g: &mut Graph<T>, vars: &[Var], x: Var, which: [usize; 2]) -> Result<Var> {
        g.layer_norm(x, vars[which[0]], vars[which[1]], T::of(LN_EPS))
    }

    fn combine<T: Scalar>(&self, g: &mut Graph<T>, vars: &[Var], gate: &GateParams, x: Var, y: Var) -> Result<Var> {
        match gate {
            GateParams::Residual => g.add(x, y),
            GateParams::Output { wg, bg } => output_gate(g, x, y, vars[*wg], vars[*bg]),
            GateParams::Gru {
                wr,
                ur,
                wz,
                uz,
                wh,
                uh,
                bg,
            } => gru_gate(
                g,
                x,
                y,
                [wr, ur, wz, uz, wh, uh].map(|i| vars[*i]),
                vars[*bg],
            ),
        }
    }

    /// One encoder layer; the output has the input's shape.
    pub fn forward<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        vars: &[Var],
        x: Var,
        spec: &QNetworkSpec,
        mode: &mut Mode,
    ) -> Result<Var> {
        let heads = spec.num_heads;
        match spec.layer_kind {
            LayerKind::Type1Baseline | LayerKind::Type2NoDropout => {
                let rate = if spec.layer_kind == LayerKind::Type1Baseline {
                    spec.dropout_rate
                } else {
                    0.0
                };
                let a = self.attention(g, vars, x, heads)?;
                let a = mode.dropout(g, a, rate)?;
                let s = g.add(a, x)?;
                let out1 = self.norm(g, vars, s, self.ln1)?;
                let f = self.feed_forward(g, vars, out1)?;
                let f = mode.dropout(g, f, rate)?;
                let s = g.add(f, out1)?;
                self.norm(g, vars, s, self.ln2)
            }
            LayerKind::Type3Imr
            | LayerKind::Type4PreNorm
            | LayerKind::Type5OutputGate
            | LayerKind::Type6GruGate => {
                let activate = spec.layer_kind != LayerKind::Type4PreNorm;
                let n = self.norm(g, vars, x, self.ln1)?;
                let mut a = self.attention(g, vars, n, heads)?;
                if activate {
                    a = g.relu(a);
                }
                let out1 = self.combine(g, vars, &self.gates[0], x, a)?;
                let n = self.norm(g, vars, out1, self.ln2)?;
                let mut f = self.feed_forward(g, vars, n)?;
                if activate {
                    f = g.relu(f);
                }
                self.combine(g, vars, &self.gates[1], out1, f)
            }
        }
    }
}

/// `x + sigmoid(x Wg - bg) * y`.
pub fn output_gate<T: Scalar>(g: &mut Graph<T>, x: Var, y: Var, wg: Var, bg: Var) -> Result<Var> {
    let pre = g.matmul(x, wg)?;
    let pre = g.sub(pre, bg)?;
    let gate = g.sigmoid(pre);
    let gy = g.mul(gate, y)?;
    g.add(x, gy)
}

/// GRU-style gate on sub-layer input `x` and activated sub-layer output `y`:
///
/// ```text
/// R = sigmoid(y Wr + x Ur)
/// Z = sigmoid(y Wz + x Uz - bg)
/// H = tanh(y Wh + (R * x) Uh)
/// g = (1 - Z) * x + Z * H
/// ```
///
/// Weights are passed as `[Wr, Ur, Wz, Uz, Wh, Uh]`.
pub fn gru_gate<T: Scalar>(g: &mut Graph<T>, x: Var, y: Var, w: [Var; 6], bg: Var) -> Result<Var> {
    let [wr, ur, wz, uz, wh, uh] = w;
    let a = g.matmul(y, wr)?;
    let b = g.matmul(x, ur)?;
    let r = g.add(a, b)?;
    let r = g.sigmoid(r);

    let a = g.matmul(y, wz)?;
    let b = g.matmul(x, uz)?;
    let z = g.add(a, b)?;
    let z = g.sub(z, bg)?;
    let z = g.sigmoid(z);

    let rx = g.mul(r, x)?;
    let a = g.matmul(y, wh)?;
    let b = g.matmul(rx, uh)?;
    let h = g.add(a, b)?;
    let h = g.tanh(h);

    // (1 - Z) x + Z H == x + Z (H - x)
    let diff = g.sub(h, x)?;
    let zd = g.mul(z, diff)?;
    g.add(x, zd)
}
