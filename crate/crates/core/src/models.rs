//! Dense classifiers with hand-written backpropagation.
//!
//! Every architecture is a stack of dense layers `z = a·W + b` ending in a
//! row softmax. Hidden layers (MLP only) use ReLU. The dropout variant of
//! logistic regression applies inverted dropout to the input features in
//! train mode.
//!
//! Parameters live in one flat buffer; each named tensor is a contiguous
//! row-major slice of it, so the flat and shaped views always agree.

use std::fs;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{gemm, gemm_nt, gemm_tn, softmax_rows_in_place, Matrix, Rng};

/// Probabilities below this are clamped before taking the log.
pub const PROB_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Architecture {
    Logreg,
    Mlp,
    LogregDropout,
}

impl std::str::FromStr for Architecture {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "logreg" => Ok(Architecture::Logreg),
            "mlp" => Ok(Architecture::Mlp),
            "logreg_dropout" => Ok(Architecture::LogregDropout),
            other => Err(Error::Config(format!("unknown model '{other}'"))),
        }
    }
}

impl std::fmt::Display for Architecture {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Architecture::Logreg => "logreg",
            Architecture::Mlp => "mlp",
            Architecture::LogregDropout => "logreg_dropout",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub arch: Architecture,
    pub input_dim: usize,
    /// Exactly two entries for `Mlp`, empty otherwise.
    pub hidden_dims: Vec<usize>,
    pub num_classes: usize,
    /// Only used by `LogregDropout`.
    pub dropout_rate: f64,
}

impl ModelSpec {
    pub fn logreg(input_dim: usize, num_classes: usize) -> Self {
        ModelSpec {
            arch: Architecture::Logreg,
            input_dim,
            hidden_dims: Vec::new(),
            num_classes,
            dropout_rate: 0.0,
        }
    }

    pub fn mlp(input_dim: usize, hidden: [usize; 2], num_classes: usize) -> Self {
        ModelSpec {
            arch: Architecture::Mlp,
            input_dim,
            hidden_dims: hidden.to_vec(),
            num_classes,
            dropout_rate: 0.0,
        }
    }

    pub fn logreg_dropout(input_dim: usize, num_classes: usize, dropout_rate: f64) -> Self {
        ModelSpec {
            arch: Architecture::LogregDropout,
            input_dim,
            hidden_dims: Vec::new(),
            num_classes,
            dropout_rate,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.num_classes < 2 {
            return Err(Error::Config(format!(
                "model needs input_dim >= 1 and num_classes >= 2 (got {} and {})",
                self.input_dim, self.num_classes
            )));
        }
        match self.arch {
            Architecture::Mlp => {
                if self.hidden_dims.len() != 2 || self.hidden_dims.contains(&0) {
                    return Err(Error::Config(format!(
                        "mlp needs exactly two non-zero hidden widths, got {:?}",
                        self.hidden_dims
                    )));
                }
            }
            Architecture::Logreg | Architecture::LogregDropout => {
                if !self.hidden_dims.is_empty() {
                    return Err(Error::Config("logistic regression has no hidden layers".into()));
                }
            }
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::Config(format!(
                "dropout_rate must lie in [0, 1), got {}",
                self.dropout_rate
            )));
        }
        Ok(())
    }

    /// `(fan_in, fan_out)` of each dense layer, input to output.
    pub fn layer_dims(&self) -> Vec<(usize, usize)> {
        let mut widths = vec![self.input_dim];
        widths.extend_from_slice(&self.hidden_dims);
        widths.push(self.num_classes);
        widths.windows(2).map(|w| (w[0], w[1])).collect()
    }

    fn layout(&self) -> Arc<[TensorSpec]> {
        let mut specs = Vec::new();
        let mut offset = 0;
        for (l, (fan_in, fan_out)) in self.layer_dims().into_iter().enumerate() {
            specs.push(TensorSpec {
                name: format!("w{l}"),
                rows: fan_in,
                cols: fan_out,
                offset,
            });
            offset += fan_in * fan_out;
            specs.push(TensorSpec {
                name: format!("b{l}"),
                rows: 1,
                cols: fan_out,
                offset,
            });
            offset += fan_out;
        }
        specs.into()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorSpec {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub offset: usize,
}

impl TensorSpec {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

fn layout_len(layout: &[TensorSpec]) -> usize {
    layout.last().map_or(0, |t| t.offset + t.len())
}

/// Model parameters θ.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSet {
    layout: Arc<[TensorSpec]>,
    values: Vec<f64>,
}

/// ∇θL, laid out exactly like the [`ParamSet`] it was computed for.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradient {
    layout: Arc<[TensorSpec]>,
    values: Vec<f64>,
}

macro_rules! tensor_views {
    ($ty:ty) => {
        impl $ty {
            pub fn layout(&self) -> &[TensorSpec] {
                &self.layout
            }

            /// Total number of scalars.
            pub fn len(&self) -> usize {
                self.values.len()
            }

            pub fn is_empty(&self) -> bool {
                self.values.is_empty()
            }

            pub fn values(&self) -> &[f64] {
                &self.values
            }

            pub fn values_mut(&mut self) -> &mut [f64] {
                &mut self.values
            }

            pub fn tensor(&self, index: usize) -> &[f64] {
                &self.values[self.layout[index].range()]
            }

            pub fn tensor_mut(&mut self, index: usize) -> &mut [f64] {
                let range = self.layout[index].range();
                &mut self.values[range]
            }

            pub fn by_name(&self, name: &str) -> Option<Matrix> {
                let spec = self.layout.iter().find(|t| t.name == name)?;
                Matrix::from_vec(spec.rows, spec.cols, self.values[spec.range()].to_vec()).ok()
            }

            pub fn is_finite(&self) -> bool {
                self.values.iter().all(|v| v.is_finite())
            }
        }
    };
}

tensor_views!(ParamSet);
tensor_views!(Gradient);

impl ParamSet {
    pub fn zeros(spec: &ModelSpec) -> Self {
        let layout = spec.layout();
        let n = layout_len(&layout);
        ParamSet {
            layout,
            values: vec![0.0; n],
        }
    }

    /// Builds a parameter set from named tensors in order.
    pub fn from_tensors(tensors: Vec<(String, Matrix)>) -> Self {
        let mut layout = Vec::with_capacity(tensors.len());
        let mut values = Vec::new();
        for (name, m) in tensors {
            layout.push(TensorSpec {
                name,
                rows: m.rows(),
                cols: m.cols(),
                offset: values.len(),
            });
            values.extend_from_slice(m.data());
        }
        ParamSet {
            layout: layout.into(),
            values,
        }
    }

    pub fn same_layout(&self, other: &ParamSet) -> bool {
        Arc::ptr_eq(&self.layout, &other.layout) || self.layout == other.layout
    }

    pub fn check_congruent(&self, grad: &Gradient, op: &'static str) -> Result<()> {
        if Arc::ptr_eq(&self.layout, &grad.layout) || self.layout == grad.layout {
            Ok(())
        } else {
            Err(Error::Shape {
                op,
                left: (self.layout.len(), self.len()),
                right: (grad.layout.len(), grad.len()),
            })
        }
    }

    fn check_spec(&self, spec: &ModelSpec) -> Result<()> {
        let expected = spec.layout();
        if self.layout[..] != expected[..] {
            return Err(Error::Shape {
                op: "params vs model spec",
                left: (self.layout.len(), self.len()),
                right: (expected.len(), layout_len(&expected)),
            });
        }
        Ok(())
    }
}

impl Gradient {
    pub fn zeros_like(params: &ParamSet) -> Self {
        Gradient {
            layout: Arc::clone(&params.layout),
            values: vec![0.0; params.len()],
        }
    }

    pub fn from_values(params: &ParamSet, values: Vec<f64>) -> Result<Self> {
        if values.len() != params.len() {
            return Err(Error::Shape {
                op: "Gradient::from_values",
                left: (params.len(), 1),
                right: (values.len(), 1),
            });
        }
        Ok(Gradient {
            layout: Arc::clone(&params.layout),
            values,
        })
    }
}

/// Fan-in scaled uniform weights `U(-1/√fan_in, 1/√fan_in)`, zero biases.
pub fn init_params(spec: &ModelSpec, rng: &mut Rng) -> Result<ParamSet> {
    spec.validate()?;
    let mut params = ParamSet::zeros(spec);
    for (l, (fan_in, _)) in spec.layer_dims().into_iter().enumerate() {
        let bound = 1.0 / (fan_in as f64).sqrt();
        for w in params.tensor_mut(2 * l) {
            *w = rng.uniform(-bound, bound)?;
        }
    }
    Ok(params)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

struct ForwardCache {
    /// Input to each dense layer (after dropout / ReLU).
    inputs: Vec<Matrix>,
    /// Pre-activations of the hidden layers.
    hidden_pre: Vec<Matrix>,
    probs: Matrix,
}

fn forward_cached(
    spec: &ModelSpec,
    params: &ParamSet,
    x: &Matrix,
    mode: Mode,
    rng: &mut Rng,
) -> Result<ForwardCache> {
    spec.validate()?;
    params.check_spec(spec)?;
    if x.cols() != spec.input_dim {
        return Err(Error::Shape {
            op: "forward",
            left: x.shape(),
            right: (spec.input_dim, spec.num_classes),
        });
    }
    let n = x.rows();
    let mut input = x.clone();
    if spec.arch == Architecture::LogregDropout && mode == Mode::Train && spec.dropout_rate > 0.0 {
        let keep_scale = 1.0 / (1.0 - spec.dropout_rate);
        for v in input.data_mut() {
            // mask drawn for every entry, row-major, so forward and backward
            // consume the rng identically
            let keep = rng.next_f64() >= spec.dropout_rate;
            *v = if keep { *v * keep_scale } else { 0.0 };
        }
    }

    let dims = spec.layer_dims();
    let last = dims.len() - 1;
    let mut inputs = Vec::with_capacity(dims.len());
    let mut hidden_pre = Vec::with_capacity(last);
    for (l, &(fan_in, fan_out)) in dims.iter().enumerate() {
        let mut z = Matrix::zeros(n, fan_out);
        gemm(input.data(), params.tensor(2 * l), n, fan_in, fan_out, z.data_mut());
        let bias = params.tensor(2 * l + 1);
        for row in z.data_mut().chunks_mut(fan_out) {
            for (v, b) in row.iter_mut().zip(bias) {
                *v += b;
            }
        }
        inputs.push(input);
        if l == last {
            softmax_rows_in_place(&mut z);
            return Ok(ForwardCache {
                inputs,
                hidden_pre,
                probs: z,
            });
        }
        input = z.map(|v| v.max(0.0));
        hidden_pre.push(z);
    }
    unreachable!("layer_dims is never empty")
}

/// Class probabilities ŷ, one row per sample.
///
/// `rng` is only consumed in train mode by the dropout variant.
pub fn forward(
    spec: &ModelSpec,
    params: &ParamSet,
    x: &Matrix,
    mode: Mode,
    rng: &mut Rng,
) -> Result<Matrix> {
    Ok(forward_cached(spec, params, x, mode, rng)?.probs)
}

/// Mean categorical cross-entropy `−(1/N) Σᵢ Σ_c y_ic ln(max(ŷ_ic, 1e-12))`.
/// With two classes this is exactly binary cross-entropy.
pub fn cross_entropy_loss(probs: &Matrix, targets: &Matrix) -> Result<f64> {
    let per_sample = per_sample_losses(probs, targets)?;
    if per_sample.is_empty() {
        return Ok(0.0);
    }
    Ok(per_sample.iter().sum::<f64>() / per_sample.len() as f64)
}

pub fn per_sample_losses(probs: &Matrix, targets: &Matrix) -> Result<Vec<f64>> {
    if probs.shape() != targets.shape() {
        return Err(Error::Shape {
            op: "cross_entropy_loss",
            left: probs.shape(),
            right: targets.shape(),
        });
    }
    Ok((0..probs.rows())
        .map(|i| {
            -probs
                .row(i)
                .iter()
                .zip(targets.row(i))
                .filter(|(_, &y)| y != 0.0)
                .map(|(&p, &y)| y * p.clamp(PROB_FLOOR, 1.0).ln())
                .sum::<f64>()
        })
        .collect())
}

/// Loss and exact gradient of `cross_entropy_loss ∘ forward`.
///
/// The dropout mask is drawn from `rng` exactly as [`forward`] would draw
/// it, so a forward call with a clone of `rng` sees the same mask.
pub fn backward(
    spec: &ModelSpec,
    params: &ParamSet,
    x: &Matrix,
    targets: &Matrix,
    mode: Mode,
    rng: &mut Rng,
) -> Result<(f64, Gradient)> {
    let cache = forward_cached(spec, params, x, mode, rng)?;
    let loss = cross_entropy_loss(&cache.probs, targets)?;
    let n = x.rows();
    let mut grad = Gradient::zeros_like(params);
    if n == 0 {
        return Ok((loss, grad));
    }

    let dims = spec.layer_dims();
    let inv_n = 1.0 / n as f64;
    let mut delta = cache.probs;
    for (d, y) in delta.data_mut().iter_mut().zip(targets.data()) {
        *d = (*d - y) * inv_n;
    }
    for l in (0..dims.len()).rev() {
        let (fan_in, fan_out) = dims[l];
        gemm_tn(
            cache.inputs[l].data(),
            delta.data(),
            n,
            fan_in,
            fan_out,
            grad.tensor_mut(2 * l),
        );
        let db = grad.tensor_mut(2 * l + 1);
        for row in delta.data().chunks(fan_out) {
            for (g, v) in db.iter_mut().zip(row) {
                *g += v;
            }
        }
        if l == 0 {
            break;
        }
        let mut upstream = Matrix::zeros(n, fan_in);
        gemm_nt(delta.data(), params.tensor(2 * l), n, fan_out, fan_in, upstream.data_mut());
        for (u, &z) in upstream.data_mut().iter_mut().zip(cache.hidden_pre[l - 1].data()) {
            if z <= 0.0 {
                *u = 0.0;
            }
        }
        delta = upstream;
    }
    Ok((loss, grad))
}

/// Row-wise argmax; ties go to the lowest class index.
pub fn predict_labels(probs: &Matrix) -> Vec<usize> {
    probs.argmax_rows()
}

/// Eval-mode loss and predictions over a whole dataset, in chunks.
pub fn evaluate(
    spec: &ModelSpec,
    params: &ParamSet,
    x: &Matrix,
    targets: &Matrix,
) -> Result<(f64, Vec<usize>)> {
    const CHUNK: usize = 4096;
    let mut rng = Rng::new(0);
    let mut total = 0.0;
    let mut preds = Vec::with_capacity(x.rows());
    let rows: Vec<usize> = (0..x.rows()).collect();
    for chunk in rows.chunks(CHUNK) {
        let xb = x.gather_rows(chunk);
        let yb = targets.gather_rows(chunk);
        let probs = forward(spec, params, &xb, Mode::Eval, &mut rng)?;
        total += per_sample_losses(&probs, &yb)?.iter().sum::<f64>();
        preds.extend(predict_labels(&probs));
    }
    let loss = if x.rows() == 0 { 0.0 } else { total / x.rows() as f64 };
    Ok((loss, preds))
}

const CHECKPOINT_MAGIC: &[u8; 8] = b"FXTSCKPT";
const CHECKPOINT_VERSION: u32 = 1;

/// Checkpoint layout (all integers little-endian u32):
/// magic `FXTSCKPT`, version, tensor count, then per tensor
/// `name_len, name (UTF-8), rows, cols`, then every payload in order as
/// little-endian f64.
pub fn checkpoint_bytes(params: &ParamSet) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + params.len() * 8);
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(params.layout.len() as u32).to_le_bytes());
    for t in params.layout.iter() {
        out.extend_from_slice(&(t.name.len() as u32).to_le_bytes());
        out.extend_from_slice(t.name.as_bytes());
        out.extend_from_slice(&(t.rows as u32).to_le_bytes());
        out.extend_from_slice(&(t.cols as u32).to_le_bytes());
    }
    for v in &params.values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn params_from_checkpoint(bytes: &[u8]) -> Result<ParamSet> {
    let mut pos = 0usize;
    let mut take = |n: usize| -> Result<&[u8]> {
        let s = bytes.get(pos..pos + n).ok_or(Error::Format {
            offset: pos,
            message: "checkpoint truncated".into(),
        })?;
        pos += n;
        Ok(s)
    };
    if take(8)? != CHECKPOINT_MAGIC {
        return Err(Error::Format {
            offset: 0,
            message: "not a parameter checkpoint".into(),
        });
    }
    let u32_at = |b: &[u8]| u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as usize;
    let version = u32_at(take(4)?);
    if version != CHECKPOINT_VERSION as usize {
        return Err(Error::Format {
            offset: 8,
            message: format!("unsupported checkpoint version {version}"),
        });
    }
    let count = u32_at(take(4)?);
    let mut headers = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = u32_at(take(4)?);
        let name = String::from_utf8(take(name_len)?.to_vec()).map_err(|e| Error::Format {
            offset: 0,
            message: format!("tensor name is not UTF-8: {e}"),
        })?;
        let rows = u32_at(take(4)?);
        let cols = u32_at(take(4)?);
        headers.push((name, rows, cols));
    }
    let mut tensors = Vec::with_capacity(count);
    for (name, rows, cols) in headers {
        let raw = take(rows * cols * 8)?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
            .collect();
        tensors.push((name, Matrix::from_vec(rows, cols, data)?));
    }
    Ok(ParamSet::from_tensors(tensors))
}

pub fn save_checkpoint(params: &ParamSet, path: &Path) -> Result<()> {
    fs::write(path, checkpoint_bytes(params)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<ParamSet> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    params_from_checkpoint(&bytes)
}
