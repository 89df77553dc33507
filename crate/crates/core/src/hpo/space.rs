use std::collections::BTreeMap;
use std::fmt;

use crate::error::{Result, TbqnError};

#[derive(Debug, Clone, PartialEq)]
pub enum ParamKind {
    Categorical(Vec<String>),
    Uniform { lo: f64, hi: f64 },
    LogUniform { lo: f64, hi: f64 },
    IntUniform { lo: i64, hi: i64 },
}

/// One searchable parameter, named by its dotted config key.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub kind: ParamKind,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ParamValue {
    Categorical(String),
    Real(f64),
    Int(i64),
}

impl ParamValue {
    /// Numeric view used by samplers and trees; `None` for categories.
    pub fn as_f64(&self) -> Option<f64> {
        match self {
            ParamValue::Categorical(_) => None,
            ParamValue::Real(v) => Some(*v),
            ParamValue::Int(v) => Some(*v as f64),
        }
    }
}

impl fmt::Display for ParamValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ParamValue::Categorical(s) => f.write_str(s),
            ParamValue::Real(v) => write!(f, "{v}"),
            ParamValue::Int(v) => write!(f, "{v}"),
        }
    }
}

pub type Sample = BTreeMap<String, ParamValue>;

impl ParamSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(TbqnError::config(format!("search parameter `{}`: {m}", self.name)));
        match &self.kind {
            ParamKind::Categorical(values) if values.len() < 2 => bad("categorical needs at least 2 values"),
            ParamKind::Uniform { lo, hi } if !(lo < hi) => bad("needs lo < hi"),
            ParamKind::LogUniform { lo, hi } if !(*lo > 0.0 && lo < hi) => bad("needs 0 < lo < hi"),
            ParamKind::IntUniform { lo, hi } if lo > hi => bad("needs lo <= hi"),
            _ => Ok(()),
        }
    }

    /// Maps a numeric value to the space samplers work in (log for log-uniform).
    pub(crate) fn to_internal(&self, v: f64) -> f64 {
        match self.kind {
            ParamKind::LogUniform { .. } => v.ln(),
            _ => v,
        }
    }

    /// Internal-space bounds of a numeric parameter.
    pub(crate) fn internal_range(&self) -> Option<(f64, f64)> {
        match self.kind {
            ParamKind::Categorical(_) => None,
            ParamKind::Uniform { lo, hi } => Some((lo, hi)),
            ParamKind::LogUniform { lo, hi } => Some((lo.ln(), hi.ln())),
            // half-unit padding gives each integer an equal share after rounding
            ParamKind::IntUniform { lo, hi } => Some((lo as f64 - 0.5, hi as f64 + 0.5)),
        }
    }

    /// Converts an internal-space number back to a value of this parameter.
    pub(crate) fn from_internal(&self, x: f64) -> ParamValue {
        match self.kind {
            ParamKind::Categorical(_) => unreachable!("categorical parameters have no internal number"),
            ParamKind::Uniform { lo, hi } => ParamValue::Real(x.clamp(lo, hi)),
            ParamKind::LogUniform { lo, hi } => ParamValue::Real(x.exp().clamp(lo, hi)),
            ParamKind::IntUniform { lo, hi } => ParamValue::Int((x.round() as i64).clamp(lo, hi)),
        }
    }
}

/// An ordered list of parameters.
///
/// Text form, one parameter per line (`#` starts a comment):
///
/// ```text
/// agent.lr            log_uniform  1e-5 1e-3
/// agent.gamma         uniform      0.9 0.999
/// agent.batch_size    int_uniform  16 64
/// net.layer_kind      categorical  1 2 3 4 5 6
/// ```
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SearchSpace {
    pub params: Vec<ParamSpec>,
}

impl SearchSpace {
    pub fn new(params: Vec<ParamSpec>) -> Result<Self> {
        for (i, p) in params.iter().enumerate() {
            p.validate()?;
            if params[..i].iter().any(|q| q.name == p.name) {
                return Err(TbqnError::config(format!("search parameter `{}` declared twice", p.name)));
            }
        }
        Ok(Self { params })
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut params = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |m: String| TbqnError::Parse(format!("search space line {}: {m}", lineno + 1));
            let fields: Vec<&str> = line.split_whitespace().collect();
            let (name, kind, args) = match fields.as_slice() {
                [name, kind, args @ ..] => (*name, *kind, args),
                _ => return Err(err(format!("expected `<name> <kind> <args..>`, got `{line}`"))),
            };
            let reals = || -> Result<(f64, f64)> {
                match args {
                    [lo, hi] => Ok((
                        lo.parse().map_err(|_| err(format!("bad number `{lo}`")))?,
                        hi.parse().map_err(|_| err(format!("bad number `{hi}`")))?,
                    )),
                    _ => Err(err(format!("`{kind}` takes two bounds"))),
                }
            };
            let kind = match kind {
                "categorical" => ParamKind::Categorical(args.iter().map(|s| s.to_string()).collect()),
                "uniform" => {
                    let (lo, hi) = reals()?;
                    ParamKind::Uniform { lo, hi }
                }
                "log_uniform" => {
                    let (lo, hi) = reals()?;
                    ParamKind::LogUniform { lo, hi }
                }
                "int_uniform" => match args {
                    [lo, hi] => ParamKind::IntUniform {
                        lo: lo.parse().map_err(|_| err(format!("bad integer `{lo}`")))?,
                        hi: hi.parse().map_err(|_| err(format!("bad integer `{hi}`")))?,
                    },
                    _ => return Err(err("`int_uniform` takes two bounds".into())),
                },
                other => return Err(err(format!("unknown kind `{other}`"))),
            };
            params.push(ParamSpec {
                name: name.to_string(),
                kind,
            });
        }
        Self::new(params)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.iter().map(|p| p.name.as_str())
    }
}
