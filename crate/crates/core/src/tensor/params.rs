use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use rand::Rng;

use super::{Graph, Result, Tensor, TensorError, Var};

const CHECKPOINT_MAGIC: &str = "pvkit-params v1";

/// Named learnable tensors. Iteration order is lexicographic by name, which
/// keeps optimizer updates and checkpoints deterministic.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    params: BTreeMap<String, Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) {
        self.params.insert(name.into(), value);
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.params
            .get(name)
            .ok_or_else(|| TensorError::UnknownParam(name.to_string()))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor> {
        self.params
            .get_mut(name)
            .ok_or_else(|| TensorError::UnknownParam(name.to_string()))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.params.contains_key(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.params.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor)> {
        self.params.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> Vec<String> {
        self.params.keys().cloned().collect()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn numel(&self) -> usize {
        self.params.values().map(Tensor::len).sum()
    }

    /// Uniform initialization in `±sqrt(1/fan_in)`.
    pub fn init_uniform<R: Rng>(
        &mut self,
        name: &str,
        shape: &[usize],
        fan_in: usize,
        rng: &mut R,
    ) {
        let bound = (1.0 / fan_in.max(1) as f64).sqrt();
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| rng.random_range(-bound..=bound)).collect();
        self.insert(
            name,
            Tensor::new(shape.to_vec(), data).expect("shape product"),
        );
    }

    /// Plain-text checkpoint: a magic line, then one line per parameter of
    /// the form `name<TAB>d0,d1,...<TAB>v0 v1 ...`. Values use the shortest
    /// decimal form that parses back to the same `f64`.
    pub fn to_text(&self) -> String {
        let mut out = String::from(CHECKPOINT_MAGIC);
        out.push('\n');
        for (name, t) in &self.params {
            let shape: Vec<String> = t.shape().iter().map(usize::to_string).collect();
            let _ = write!(out, "{name}\t{}\t", shape.join(","));
            for (i, v) in t.data().iter().enumerate() {
                if i > 0 {
                    out.push(' ');
                }
                let _ = write!(out, "{v:?}");
            }
            out.push('\n');
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let bad = |line: usize, msg: &str| TensorError::Checkpoint(format!("line {line}: {msg}"));
        let mut lines = text.lines();
        if lines.next() != Some(CHECKPOINT_MAGIC) {
            return Err(TensorError::Checkpoint("missing header".into()));
        }
        let mut store = Self::new();
        for (i, line) in lines.enumerate() {
            let lineno = i + 2;
            if line.is_empty() {
                continue;
            }
            let mut fields = line.split('\t');
            let (Some(name), Some(shape), Some(values)) =
                (fields.next(), fields.next(), fields.next())
            else {
                return Err(bad(lineno, "expected three tab-separated fields"));
            };
            let shape: Vec<usize> = if shape.is_empty() {
                Vec::new()
            } else {
                shape
                    .split(',')
                    .map(|d| d.parse().map_err(|_| bad(lineno, "bad dimension")))
                    .collect::<Result<_>>()?
            };
            let data: Vec<f64> = values
                .split_whitespace()
                .map(|v| v.parse().map_err(|_| bad(lineno, "bad value")))
                .collect::<Result<_>>()?;
            let t = Tensor::new(shape, data).map_err(|e| bad(lineno, &e.to_string()))?;
            store.insert(name, t);
        }
        Ok(store)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> std::io::Result<()> {
        std::fs::write(path, self.to_text())
    }

    pub fn load(
        path: impl AsRef<Path>,
    ) -> std::result::Result<Self, Box<dyn std::error::Error + Send + Sync>> {
        let text = std::fs::read_to_string(path)?;
        Ok(Self::from_text(&text)?)
    }
}

/// A graph paired with the parameter store its forward pass reads from.
#[derive(Clone, Copy)]
pub struct Scope<'a> {
    pub graph: &'a Graph,
    pub params: &'a ParamStore,
}

impl<'a> Scope<'a> {
    pub fn new(graph: &'a Graph, params: &'a ParamStore) -> Self {
        Self { graph, params }
    }

    pub fn param(&self, name: &str) -> Result<Var<'a>> {
        Ok(self.graph.bind_param(name, self.params.get(name)?))
    }

    pub fn constant(&self, t: Tensor) -> Var<'a> {
        self.graph.constant(t)
    }
}

/// Affine map over the last (column) dimension: `y = x W + b`, with
/// `W` stored as `{prefix}.w` (in × out) and `b` as `{prefix}.b` (1 × out).
#[derive(Debug, Clone)]
pub struct Linear {
    prefix: String,
}

impl Linear {
    pub fn new(prefix: impl Into<String>) -> Self {
        Self {
            prefix: prefix.into(),
        }
    }

    pub fn init<R: Rng>(
        prefix: impl Into<String>,
        store: &mut ParamStore,
        fan_in: usize,
        fan_out: usize,
        rng: &mut R,
    ) -> Self {
        let lin = Self::new(prefix);
        store.init_uniform(&lin.weight_name(), &[fan_in, fan_out], fan_in, rng);
        store.init_uniform(&lin.bias_name(), &[1, fan_out], fan_in, rng);
        lin
    }

    pub fn weight_name(&self) -> String {
        format!("{}.w", self.prefix)
    }

    pub fn bias_name(&self) -> String {
        format!("{}.b", self.prefix)
    }

    pub fn prefix(&self) -> &str {
        &self.prefix
    }

    pub fn forward<'a>(&self, scope: Scope<'a>, x: &Var<'a>) -> Result<Var<'a>> {
        let w = scope.param(&self.weight_name())?;
        let b = scope.param(&self.bias_name())?;
        x.matmul(&w)
            .map_err(|e| match e {
                TensorError::ShapeMismatch { lhs, rhs, .. } => TensorError::ShapeMismatch {
                    op: "linear",
                    lhs,
                    rhs,
                },
                other => other,
            })?
            .add_row(&b)
    }

    pub fn out_dim(&self, store: &ParamStore) -> Result<usize> {
        Ok(store.get(&self.bias_name())?.cols())
    }
}

/// Row-wise layer normalization followed by a learned per-channel affine,
/// stored as `{prefix}.gamma` and `{prefix}.beta` (both 1 × dim).
#[derive(Debug, Clone)]
pub struct LayerNorm {
    prefix: String,
    eps: f64,
}

impl LayerNorm {
    pub const DEFAULT_EPS: f64 = 1e-5;

    pub fn new(prefix: impl Into<String>) -> Self {
        Self {
            prefix: prefix.into(),
            eps: Self::DEFAULT_EPS,
        }
    }

    pub fn init(prefix: impl Into<String>, store: &mut ParamStore, dim: usize) -> Self {
        let ln = Self::new(prefix);
        store.insert(ln.gamma_name(), Tensor::full(&[1, dim], 1.0));
        store.insert(ln.beta_name(), Tensor::zeros(&[1, dim]));
        ln
    }

    pub fn gamma_name(&self) -> String {
        format!("{}.gamma", self.prefix)
    }

    pub fn beta_name(&self) -> String {
        format!("{}.beta", self.prefix)
    }

    pub fn forward<'a>(&self, scope: Scope<'a>, x: &Var<'a>) -> Result<Var<'a>> {
        let gamma = scope.param(&self.gamma_name())?;
        let beta = scope.param(&self.beta_name())?;
        x.layer_norm_rows(self.eps)?.mul_row(&gamma)?.add_row(&beta)
    }
}
