//! The two hypothesis classes: binary logit (no hidden layers, linear score)
//! and deep ReLU feedforward networks. Both end in a single logit passed
//! through the sigmoid.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{logit, softplus, stable_sigmoid, Matrix, Rng};

/// Anything that maps inputs to a choice probability through a logit.
pub trait ChoiceModel: Sync {
    fn input_dim(&self) -> usize;

    /// Raw scores `Phi(x_i)`, one per row.
    fn logits(&self, x: &Matrix) -> Result<Vec<f64>>;

    fn probs(&self, x: &Matrix) -> Result<Vec<f64>> {
        Ok(self.logits(x)?.into_iter().map(stable_sigmoid).collect())
    }

    fn prob_at(&self, x: &[f64]) -> Result<f64> {
        Ok(self.probs(&Matrix::row_vector(x))?[0])
    }

    fn logit_at(&self, x: &[f64]) -> Result<f64> {
        Ok(self.logits(&Matrix::row_vector(x))?[0])
    }
}

/// Predicts the same probability everywhere.
#[derive(Debug, Clone, Copy)]
pub struct ConstantModel {
    pub dim: usize,
    pub logit: f64,
}

impl ConstantModel {
    pub fn with_prob(dim: usize, p: f64) -> Result<Self> {
        Ok(Self { dim, logit: logit(p)? })
    }
}

impl ChoiceModel for ConstantModel {
    fn input_dim(&self) -> usize {
        self.dim
    }

    fn logits(&self, x: &Matrix) -> Result<Vec<f64>> {
        check_input(x, self.dim)?;
        Ok(vec![self.logit; x.rows()])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum Activation {
    #[default]
    Relu,
}

/// Layer layout of a network. No hidden widths means binary logit.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpArch {
    pub input_dim: usize,
    pub hidden_widths: Vec<usize>,
    #[serde(default)]
    pub activation: Activation,
}

impl MlpArch {
    pub fn new(input_dim: usize, hidden_widths: Vec<usize>) -> Result<Self> {
        if input_dim == 0 {
            return Err(Error::Config("input dimension must be >= 1".into()));
        }
        if hidden_widths.contains(&0) {
            return Err(Error::Config(format!("zero-width hidden layer in {hidden_widths:?}")));
        }
        Ok(Self {
            input_dim,
            hidden_widths,
            activation: Activation::Relu,
        })
    }

    pub fn bnl(input_dim: usize) -> Result<Self> {
        Self::new(input_dim, Vec::new())
    }

    /// `depth` hidden layers of `width` units.
    pub fn dnn(input_dim: usize, depth: usize, width: usize) -> Result<Self> {
        Self::new(input_dim, vec![width; depth])
    }

    /// Number of weight matrices.
    pub fn depth(&self) -> usize {
        self.hidden_widths.len() + 1
    }

    pub fn is_linear(&self) -> bool {
        self.hidden_widths.is_empty()
    }

    /// `(fan_out, fan_in)` of every layer, input to output.
    pub fn layer_shapes(&self) -> Vec<(usize, usize)> {
        let mut shapes = Vec::with_capacity(self.depth());
        let mut fan_in = self.input_dim;
        for &w in &self.hidden_widths {
            shapes.push((w, fan_in));
            fan_in = w;
        }
        shapes.push((1, fan_in));
        shapes
    }

    /// Total coefficients, biases included.
    pub fn param_count(&self) -> usize {
        self.layer_shapes().iter().map(|(o, i)| o * i + o).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    /// `fan_out x fan_in`.
    pub weights: Matrix,
    pub bias: Vec<f64>,
}

/// Weights and biases of every layer. Also used for gradients and optimizer
/// moments, which share the shape.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpParams {
    pub arch: MlpArch,
    pub layers: Vec<Layer>,
}

pub type Gradients = MlpParams;

impl MlpParams {
    pub fn zeros(arch: &MlpArch) -> Self {
        let layers = arch
            .layer_shapes()
            .into_iter()
            .map(|(o, i)| Layer {
                weights: Matrix::zeros(o, i),
                bias: vec![0.0; o],
            })
            .collect();
        Self {
            arch: arch.clone(),
            layers,
        }
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.as_slice().len() + l.bias.len())
            .sum()
    }

    /// Every coefficient, layer by layer, weights before bias.
    pub fn values(&self) -> impl Iterator<Item = &f64> {
        self.layers
            .iter()
            .flat_map(|l| l.weights.as_slice().iter().chain(l.bias.iter()))
    }

    pub fn values_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.layers
            .iter_mut()
            .flat_map(|l| l.weights.as_mut_slice().iter_mut().chain(l.bias.iter_mut()))
    }

    pub fn is_finite(&self) -> bool {
        self.values().all(|v| v.is_finite())
    }

    /// Coefficients of a linear model: `(w, b)`. Only meaningful for D = 1.
    pub fn linear_coefficients(&self) -> Option<(&[f64], f64)> {
        match self.layers.as_slice() {
            [only] => Some((only.weights.row(0), only.bias[0])),
            _ => None,
        }
    }

    /// Sum of `|w|` and of `w^2` over weights (biases excluded).
    pub fn weight_penalty_terms(&self) -> (f64, f64) {
        let mut l1 = 0.0;
        let mut l2 = 0.0;
        for l in &self.layers {
            for w in l.weights.as_slice() {
                l1 += w.abs();
                l2 += w * w;
            }
        }
        (l1, l2)
    }

    fn check_shapes(&self) -> Result<()> {
        let shapes = self.arch.layer_shapes();
        if shapes.len() != self.layers.len() {
            return Err(Error::Shape(format!(
                "{} layers for an architecture of depth {}",
                self.layers.len(),
                shapes.len()
            )));
        }
        for (j, ((o, i), l)) in shapes.iter().zip(&self.layers).enumerate() {
            if l.weights.rows() != *o || l.weights.cols() != *i || l.bias.len() != *o {
                return Err(Error::Shape(format!(
                    "layer {j} is {}x{} with {} biases, expected {o}x{i}",
                    l.weights.rows(),
                    l.weights.cols(),
                    l.bias.len()
                )));
            }
        }
        Ok(())
    }
}

/// He initialization: weights `N(0, 2 / fan_in)`, biases zero.
pub fn init_he(arch: &MlpArch, rng: &mut Rng) -> MlpParams {
    let mut params = MlpParams::zeros(arch);
    for layer in &mut params.layers {
        let sd = (2.0 / layer.weights.cols() as f64).sqrt();
        for w in layer.weights.as_mut_slice() {
            *w = sd * rng.standard_normal();
        }
    }
    params
}

fn check_input(x: &Matrix, dim: usize) -> Result<()> {
    if x.cols() != dim {
        return Err(Error::Shape(format!(
            "input has {} columns, model expects {dim}",
            x.cols()
        )));
    }
    Ok(())
}

fn affine(a: &Matrix, layer: &Layer) -> Matrix {
    let mut z = a
        .matmul_transb(&layer.weights)
        .expect("layer shapes checked before evaluation");
    for i in 0..z.rows() {
        for (v, b) in z.row_mut(i).iter_mut().zip(&layer.bias) {
            *v += b;
        }
    }
    z
}

/// Post-activation outputs of every hidden layer, kept for backprop.
struct ForwardTrace {
    hidden: Vec<Matrix>,
    logits: Vec<f64>,
}

fn forward_trace(params: &MlpParams, x: &Matrix) -> ForwardTrace {
    let (last, hidden_layers) = params.layers.split_last().expect("depth >= 1");
    let mut hidden = Vec::with_capacity(hidden_layers.len());
    for layer in hidden_layers {
        let input = hidden.last().unwrap_or(x);
        let mut a = affine(input, layer);
        a.as_mut_slice().iter_mut().for_each(|v| *v = v.max(0.0));
        hidden.push(a);
    }
    let out = affine(hidden.last().unwrap_or(x), last);
    ForwardTrace {
        hidden,
        logits: out.into_vec(),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForwardOutput {
    pub logits: Vec<f64>,
    pub probs: Vec<f64>,
}

pub fn forward(params: &MlpParams, x: &Matrix) -> Result<ForwardOutput> {
    params.check_shapes()?;
    check_input(x, params.arch.input_dim)?;
    let logits = forward_trace(params, x).logits;
    let probs = logits.iter().map(|&z| stable_sigmoid(z)).collect();
    Ok(ForwardOutput { logits, probs })
}

impl ChoiceModel for MlpParams {
    fn input_dim(&self) -> usize {
        self.arch.input_dim
    }

    fn logits(&self, x: &Matrix) -> Result<Vec<f64>> {
        self.check_shapes()?;
        check_input(x, self.arch.input_dim)?;
        Ok(forward_trace(self, x).logits)
    }
}

/// Reverse-mode gradient of `sum_i upstream_i * Phi(x_i)` with respect to
/// every coefficient. `ReLU'(0)` is taken as 0.
pub fn backprop_logits(params: &MlpParams, x: &Matrix, upstream: &[f64]) -> Result<Gradients> {
    params.check_shapes()?;
    check_input(x, params.arch.input_dim)?;
    if upstream.len() != x.rows() {
        return Err(Error::Shape(format!(
            "{} upstream values for {} rows",
            upstream.len(),
            x.rows()
        )));
    }
    let trace = forward_trace(params, x);
    Ok(backward(params, x, &trace, upstream))
}

fn backward(params: &MlpParams, x: &Matrix, trace: &ForwardTrace, upstream: &[f64]) -> Gradients {
    let mut grads = MlpParams::zeros(&params.arch);
    let mut delta = Matrix::from_vec(upstream.len(), 1, upstream.to_vec()).expect("n x 1");
    for j in (0..params.layers.len()).rev() {
        let input = if j == 0 { x } else { &trace.hidden[j - 1] };
        grads.layers[j].weights = delta.matmul_transa(input).expect("shapes chained");
        grads.layers[j].bias = delta.col_sums();
        if j > 0 {
            let mut next = delta
                .matmul(&params.layers[j].weights)
                .expect("shapes chained");
            for (g, a) in next.as_mut_slice().iter_mut().zip(input.as_slice()) {
                if *a <= 0.0 {
                    *g = 0.0;
                }
            }
            delta = next;
        }
    }
    grads
}

fn clipped(p: f64) -> f64 {
    p.clamp(1e-12, 1.0 - 1e-12)
}

/// Mean log-loss of `probs` against 0/1 labels, on probabilities clipped 1e-12 from the ends.
pub(crate) fn mean_log_loss(probs: &[f64], y: &[u8]) -> f64 {
    let sum: f64 = probs
        .iter()
        .zip(y)
        .map(|(&p, &t)| {
            let p = clipped(p);
            if t == 1 {
                -p.ln()
            } else {
                -(1.0 - p).ln()
            }
        })
        .sum();
    sum / probs.len() as f64
}

/// Penalized empirical risk: mean log-loss + `l1 * sum|w| + (l2 / 2) * sum w^2`.
/// Penalties cover weights only.
pub fn penalized_objective(params: &MlpParams, x: &Matrix, y: &[u8], l1: f64, l2: f64) -> Result<f64> {
    let logits = forward(params, x)?.logits;
    if y.len() != logits.len() {
        return Err(Error::Shape(format!("{} labels for {} rows", y.len(), logits.len())));
    }
    let loss: f64 = logits.iter().zip(y).map(|(&z, &t)| logit_loss(z, t)).sum();
    let (a, s) = params.weight_penalty_terms();
    Ok(loss / logits.len() as f64 + l1 * a + 0.5 * l2 * s)
}

/// Log-loss of one logit, computed on the logit scale so saturated
/// probabilities keep full precision.
fn logit_loss(z: f64, t: u8) -> f64 {
    if t == 1 {
        softplus(-z)
    } else {
        softplus(z)
    }
}

/// Objective value and exact gradient of [`penalized_objective`].
pub fn loss_and_gradients(
    params: &MlpParams,
    x: &Matrix,
    y: &[u8],
    l1: f64,
    l2: f64,
) -> Result<(f64, Gradients)> {
    params.check_shapes()?;
    check_input(x, params.arch.input_dim)?;
    if y.len() != x.rows() {
        return Err(Error::Shape(format!("{} labels for {} rows", y.len(), x.rows())));
    }
    if l1 < 0.0 || l2 < 0.0 {
        return Err(Error::Config("penalties must be nonnegative".into()));
    }
    let trace = forward_trace(params, x);
    let n = x.rows() as f64;
    let mut loss = 0.0;
    let upstream: Vec<f64> = trace
        .logits
        .iter()
        .zip(y)
        .map(|(&z, &t)| {
            loss += logit_loss(z, t);
            (stable_sigmoid(z) - f64::from(t)) / n
        })
        .collect();
    let mut grads = backward(params, x, &trace, &upstream);
    let (a, s) = params.weight_penalty_terms();
    loss = loss / n + l1 * a + 0.5 * l2 * s;
    if l1 > 0.0 || l2 > 0.0 {
        for (g, p) in grads.layers.iter_mut().zip(&params.layers) {
            for (gw, &w) in g.weights.as_mut_slice().iter_mut().zip(p.weights.as_slice()) {
                let sign = if w > 0.0 {
                    1.0
                } else if w < 0.0 {
                    -1.0
                } else {
                    0.0
                };
                *gw += l1 * sign + l2 * w;
            }
        }
    }
    Ok((loss, grads))
}

pub fn gradients(params: &MlpParams, x: &Matrix, y: &[u8], l1: f64, l2: f64) -> Result<Gradients> {
    Ok(loss_and_gradients(params, x, y, l1, l2)?.1)
}

/// Writes the linear model `<w, x> + b` into `arch`.
///
/// The first hidden layer carries `[ReLU(x), ReLU(-x)]`, later hidden layers
/// pass both halves through unchanged, and the output layer recombines them
/// as `<w, ReLU(x) - ReLU(-x)> + b`. Requires every hidden width >= `2 * len(w)`.
pub fn embed_linear_as_mlp(w: &[f64], b: f64, arch: &MlpArch) -> Result<MlpParams> {
    let d = w.len();
    if arch.input_dim != d {
        return Err(Error::Shape(format!(
            "{d} coefficients for an architecture with {} inputs",
            arch.input_dim
        )));
    }
    if let Some(&narrow) = arch.hidden_widths.iter().find(|&&h| h < 2 * d) {
        return Err(Error::Config(format!(
            "hidden width {narrow} is too small to embed {d} inputs (needs {})",
            2 * d
        )));
    }
    let mut params = MlpParams::zeros(arch);
    let depth = params.layers.len();
    for (j, layer) in params.layers.iter_mut().enumerate() {
        let wm = &mut layer.weights;
        if j + 1 == depth {
            if depth == 1 {
                wm.row_mut(0).copy_from_slice(w);
            } else {
                for (k, &wk) in w.iter().enumerate() {
                    wm.set(0, k, wk);
                    wm.set(0, d + k, -wk);
                }
            }
            layer.bias[0] = b;
        } else if j == 0 {
            for k in 0..d {
                wm.set(k, k, 1.0);
                wm.set(d + k, k, -1.0);
            }
        } else {
            for k in 0..2 * d {
                wm.set(k, k, 1.0);
            }
        }
    }
    Ok(params)
}

/// Per-layer weight norms used by the capacity bounds. Biases excluded.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerNorms {
    pub frobenius: Vec<f64>,
    /// Max over rows of the row l1 norm.
    pub one_inf: Vec<f64>,
}

impl LayerNorms {
    pub fn depth(&self) -> usize {
        self.frobenius.len()
    }
}

pub fn layer_norms(params: &MlpParams) -> LayerNorms {
    LayerNorms {
        frobenius: params.layers.iter().map(|l| l.weights.frobenius_norm()).collect(),
        one_inf: params.layers.iter().map(|l| l.weights.max_row_l1()).collect(),
    }
}

const MAGIC: &[u8; 4] = b"CLMP";
const FORMAT_VERSION: u32 = 1;

impl MlpParams {
    /// Binary layout, little endian: magic `CLMP`, version `u32`, input dim
    /// `u32`, hidden count `u32`, hidden widths `u32` each, then per layer the
    /// row-major weights followed by the biases as `f64`.
    pub fn write_to(&self, mut out: impl Write) -> std::io::Result<()> {
        out.write_all(MAGIC)?;
        out.write_all(&FORMAT_VERSION.to_le_bytes())?;
        out.write_all(&(self.arch.input_dim as u32).to_le_bytes())?;
        out.write_all(&(self.arch.hidden_widths.len() as u32).to_le_bytes())?;
        for &w in &self.arch.hidden_widths {
            out.write_all(&(w as u32).to_le_bytes())?;
        }
        for v in self.values() {
            out.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_from(mut input: impl Read) -> Result<Self> {
        fn u32_field(r: &mut impl Read) -> Result<u32> {
            let mut b = [0u8; 4];
            r.read_exact(&mut b)
                .map_err(|e| Error::Format(format!("truncated header: {e}")))?;
            Ok(u32::from_le_bytes(b))
        }
        let mut magic = [0u8; 4];
        input
            .read_exact(&mut magic)
            .map_err(|e| Error::Format(format!("truncated header: {e}")))?;
        if &magic != MAGIC {
            return Err(Error::Format("bad magic".into()));
        }
        let version = u32_field(&mut input)?;
        if version != FORMAT_VERSION {
            return Err(Error::Format(format!("unsupported version {version}")));
        }
        let input_dim = u32_field(&mut input)? as usize;
        let n_hidden = u32_field(&mut input)? as usize;
        if n_hidden > 1024 {
            return Err(Error::Format(format!("implausible depth {n_hidden}")));
        }
        let widths = (0..n_hidden)
            .map(|_| u32_field(&mut input).map(|w| w as usize))
            .collect::<Result<Vec<_>>>()?;
        let arch = MlpArch::new(input_dim, widths)?;
        let mut params = MlpParams::zeros(&arch);
        let mut b = [0u8; 8];
        for v in params.values_mut() {
            input
                .read_exact(&mut b)
                .map_err(|e| Error::Format(format!("truncated coefficients: {e}")))?;
            *v = f64::from_le_bytes(b);
        }
        if input.read(&mut b).map_err(|e| Error::Format(e.to_string()))? != 0 {
            return Err(Error::Format("trailing bytes after coefficients".into()));
        }
        Ok(params)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        self.write_to(&mut w).map_err(|e| Error::io(path, e))?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_from(BufReader::new(file))
    }
}
