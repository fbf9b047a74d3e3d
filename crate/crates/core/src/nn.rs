//! Minimal feed-forward network machinery shared by the velocity field and
//! the terminal-cost classifier: batched forward evaluation, exact
//! reverse-mode gradients with respect to parameters *and* inputs, and a
//! bias-corrected Adam optimizer.
//!
//! Only the fixed MLP topology is supported — affine layers with a hidden
//! activation (ReLU or Swish) and an identity output layer. Batches are
//! row-major `batch × width` matrices so the hot path is a handful of GEMMs.

use std::io::{Read, Write};

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::{Error, Result};

/// Hidden-layer activation. The output layer is always the identity.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Swish,
}

impl Activation {
    fn value(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Swish => z * sigmoid(z),
        }
    }

    fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Swish => {
                let s = sigmoid(z);
                s * (1.0 + z * (1.0 - s))
            }
        }
    }
}

pub(crate) fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Fully connected network. `widths` lists every layer width including input
/// and output; weights are stored `out × in`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    widths: Vec<usize>,
    activation: Activation,
    time_input: bool,
    weights: Vec<Array2<f64>>,
    biases: Vec<Array1<f64>>,
}

/// Cached pre-activations and activations from a traced forward pass.
pub struct ForwardTrace {
    /// `acts[0]` is the input batch; `acts[l+1]` the output of layer `l`.
    acts: Vec<Array2<f64>>,
    /// Pre-activations of the hidden layers (output layer has none cached).
    zs: Vec<Array2<f64>>,
}

/// Parameter cotangents congruent to [`Mlp`] weights and biases.
#[derive(Debug, Clone)]
pub struct ParamGrads {
    pub weights: Vec<Array2<f64>>,
    pub biases: Vec<Array1<f64>>,
}

impl ParamGrads {
    pub fn is_finite(&self) -> bool {
        self.weights.iter().all(|w| w.iter().all(|v| v.is_finite()))
            && self.biases.iter().all(|b| b.iter().all(|v| v.is_finite()))
    }
}

impl Mlp {
    fn validate_widths(widths: &[usize]) -> Result<()> {
        if widths.len() < 2 {
            return Err(Error::Config(
                "an MLP needs at least an input and an output layer".into(),
            ));
        }
        if widths.contains(&0) {
            return Err(Error::Config("layer widths must be positive".into()));
        }
        Ok(())
    }

    /// Seeded initialization: weights uniform in ±√(6/(w_in+w_out)), zero
    /// biases.
    pub fn new(
        widths: Vec<usize>,
        activation: Activation,
        time_input: bool,
        seed: u64,
    ) -> Result<Self> {
        Self::validate_widths(&widths)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for pair in widths.windows(2) {
            let (w_in, w_out) = (pair[0], pair[1]);
            let lim = (6.0 / (w_in + w_out) as f64).sqrt();
            let mut w = Array2::zeros((w_out, w_in));
            for v in w.iter_mut() {
                *v = rng.random_range(-lim..lim);
            }
            weights.push(w);
            biases.push(Array1::zeros(w_out));
        }
        Ok(Mlp {
            widths,
            activation,
            time_input,
            weights,
            biases,
        })
    }

    /// All-zero parameters (useful as the "do nothing" velocity field).
    pub fn zeros(widths: Vec<usize>, activation: Activation, time_input: bool) -> Result<Self> {
        Self::validate_widths(&widths)?;
        let weights = widths
            .windows(2)
            .map(|p| Array2::zeros((p[1], p[0])))
            .collect();
        let biases = widths.windows(2).map(|p| Array1::zeros(p[1])).collect();
        Ok(Mlp {
            widths,
            activation,
            time_input,
            weights,
            biases,
        })
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    /// Whether inputs are `[x; t]` (time concatenated as the last coordinate).
    pub fn time_input(&self) -> bool {
        self.time_input
    }

    pub fn input_dim(&self) -> usize {
        self.widths[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.widths.last().unwrap()
    }

    pub fn layer_count(&self) -> usize {
        self.weights.len()
    }

    pub fn weight(&self, layer: usize) -> &Array2<f64> {
        &self.weights[layer]
    }

    pub fn weight_mut(&mut self, layer: usize) -> &mut Array2<f64> {
        &mut self.weights[layer]
    }

    pub fn bias(&self, layer: usize) -> &Array1<f64> {
        &self.biases[layer]
    }

    /// Total parameter count Σ (w_in + 1)·w_out.
    pub fn param_count(&self) -> usize {
        self.widths.windows(2).map(|p| (p[0] + 1) * p[1]).sum()
    }

    /// Flat parameter access in serialization order (per layer: weights
    /// row-major, then bias). Used by finite-difference checks.
    pub fn get_param(&self, idx: usize) -> f64 {
        let (layer, offset) = self.locate(idx);
        let w = &self.weights[layer];
        if offset < w.len() {
            w.as_slice().unwrap()[offset]
        } else {
            self.biases[layer][offset - w.len()]
        }
    }

    pub fn set_param(&mut self, idx: usize, value: f64) {
        let (layer, offset) = self.locate(idx);
        let w = &mut self.weights[layer];
        if offset < w.len() {
            w.as_slice_mut().unwrap()[offset] = value;
        } else {
            let off = offset - w.len();
            self.biases[layer][off] = value;
        }
    }

    fn locate(&self, mut idx: usize) -> (usize, usize) {
        for (layer, pair) in self.widths.windows(2).enumerate() {
            let span = (pair[0] + 1) * pair[1];
            if idx < span {
                return (layer, idx);
            }
            idx -= span;
        }
        panic!("parameter index out of range");
    }

    fn check_input(&self, width: usize) -> Result<()> {
        if width != self.input_dim() {
            return Err(Error::Config(format!(
                "input width {width} does not match first layer width {}",
                self.input_dim()
            )));
        }
        Ok(())
    }

    /// Evaluate one input vector.
    pub fn forward(&self, x: ArrayView1<'_, f64>) -> Result<Array1<f64>> {
        let batch = x.insert_axis(Axis(0));
        Ok(self.forward_batch(batch)?.index_axis_move(Axis(0), 0))
    }

    /// Evaluate a `batch × input_dim` matrix of inputs.
    pub fn forward_batch(&self, x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        self.check_input(x.ncols())?;
        let mut a = x.to_owned();
        let last = self.layer_count() - 1;
        for (l, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let mut z = a.dot(&w.t());
            z += b;
            if l < last {
                z.mapv_inplace(|v| self.activation.value(v));
            }
            a = z;
        }
        Ok(a)
    }

    /// Forward pass that caches everything [`Mlp::backward`] needs.
    pub fn forward_traced(&self, x: ArrayView2<'_, f64>) -> Result<(Array2<f64>, ForwardTrace)> {
        self.check_input(x.ncols())?;
        let last = self.layer_count() - 1;
        let mut acts = Vec::with_capacity(self.layer_count() + 1);
        let mut zs = Vec::with_capacity(last);
        acts.push(x.to_owned());
        for (l, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let mut z = acts[l].dot(&w.t());
            z += b;
            if l < last {
                zs.push(z.clone());
                z.mapv_inplace(|v| self.activation.value(v));
            }
            acts.push(z);
        }
        let out = acts.last().unwrap().clone();
        Ok((out, ForwardTrace { acts, zs }))
    }

    /// Exact reverse accumulation through a traced forward pass. `upstream`
    /// holds ∂loss/∂output rows; returns parameter gradients (summed over the
    /// batch) and per-row input gradients.
    pub fn backward(
        &self,
        trace: &ForwardTrace,
        upstream: ArrayView2<'_, f64>,
    ) -> (ParamGrads, Array2<f64>) {
        debug_assert_eq!(upstream.ncols(), self.output_dim());
        debug_assert_eq!(upstream.nrows(), trace.acts[0].nrows());
        let layers = self.layer_count();
        let mut g_weights: Vec<Array2<f64>> = Vec::with_capacity(layers);
        let mut g_biases: Vec<Array1<f64>> = Vec::with_capacity(layers);
        let mut delta = upstream.to_owned();
        for l in (0..layers).rev() {
            g_weights.push(delta.t().dot(&trace.acts[l]));
            g_biases.push(delta.sum_axis(Axis(0)));
            let to_prev = delta.dot(&self.weights[l]);
            delta = if l > 0 {
                let mut masked = to_prev;
                masked.zip_mut_with(&trace.zs[l - 1], |d, &z| {
                    *d *= self.activation.derivative(z)
                });
                masked
            } else {
                to_prev
            };
        }
        g_weights.reverse();
        g_biases.reverse();
        (
            ParamGrads {
                weights: g_weights,
                biases: g_biases,
            },
            delta,
        )
    }

    /// Gradient of the scalar output with respect to each input row; only
    /// valid for single-output networks (the classifier logit).
    pub fn input_grad_batch(&self, x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        if self.output_dim() != 1 {
            return Err(Error::Config(
                "input_grad_batch expects a scalar-output network".into(),
            ));
        }
        let (_, trace) = self.forward_traced(x)?;
        let ones = Array2::ones((x.nrows(), 1));
        let (_, din) = self.backward(&trace, ones.view());
        Ok(din)
    }

    /// Serialize to the flat binary format: magic, header, then per layer the
    /// row-major weights followed by the bias, all values little-endian f64.
    pub fn save<W: Write>(&self, mut out: W) -> Result<()> {
        out.write_all(MAGIC)?;
        out.write_all(&[
            match self.activation {
                Activation::Relu => 0u8,
                Activation::Swish => 1u8,
            },
            self.time_input as u8,
        ])?;
        out.write_all(&(self.widths.len() as u32).to_le_bytes())?;
        for &w in &self.widths {
            out.write_all(&(w as u32).to_le_bytes())?;
        }
        for (w, b) in self.weights.iter().zip(&self.biases) {
            for v in w.iter() {
                out.write_all(&v.to_le_bytes())?;
            }
            for v in b.iter() {
                out.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn load<R: Read>(mut input: R) -> Result<Self> {
        let mut magic = [0u8; 8];
        input.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Config("not a network file (bad magic)".into()));
        }
        let mut tags = [0u8; 2];
        input.read_exact(&mut tags)?;
        let activation = match tags[0] {
            0 => Activation::Relu,
            1 => Activation::Swish,
            t => return Err(Error::Config(format!("unknown activation tag {t}"))),
        };
        let time_input = match tags[1] {
            0 => false,
            1 => true,
            t => return Err(Error::Config(format!("bad time-input flag {t}"))),
        };
        let mut u32buf = [0u8; 4];
        input.read_exact(&mut u32buf)?;
        let k = u32::from_le_bytes(u32buf) as usize;
        if !(2..=64).contains(&k) {
            return Err(Error::Config(format!("implausible layer count {k}")));
        }
        let mut widths = Vec::with_capacity(k);
        for _ in 0..k {
            input.read_exact(&mut u32buf)?;
            widths.push(u32::from_le_bytes(u32buf) as usize);
        }
        Self::validate_widths(&widths)?;
        let mut f64buf = [0u8; 8];
        let mut read_f64 = |input: &mut R| -> Result<f64> {
            input.read_exact(&mut f64buf)?;
            Ok(f64::from_le_bytes(f64buf))
        };
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for pair in widths.windows(2) {
            let (w_in, w_out) = (pair[0], pair[1]);
            let mut w = Array2::zeros((w_out, w_in));
            for v in w.iter_mut() {
                *v = read_f64(&mut input)?;
            }
            let mut b = Array1::zeros(w_out);
            for v in b.iter_mut() {
                *v = read_f64(&mut input)?;
            }
            weights.push(w);
            biases.push(b);
        }
        Ok(Mlp {
            widths,
            activation,
            time_input,
            weights,
            biases,
        })
    }
}

const MAGIC: &[u8; 8] = b"NFMLP\x00\x00\x01";

/// Bias-corrected Adam with the standard (0.9, 0.999, 1e-8) defaults.
#[derive(Debug, Clone)]
pub struct AdamState {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    step: u64,
    m_w: Vec<Array2<f64>>,
    v_w: Vec<Array2<f64>>,
    m_b: Vec<Array1<f64>>,
    v_b: Vec<Array1<f64>>,
}

impl AdamState {
    pub fn new(net: &Mlp, lr: f64) -> Result<Self> {
        if lr < 0.0 || !lr.is_finite() {
            return Err(Error::Config(format!(
                "learning rate must be finite and >= 0, got {lr}"
            )));
        }
        Ok(AdamState {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m_w: net
                .weights
                .iter()
                .map(|w| Array2::zeros(w.raw_dim()))
                .collect(),
            v_w: net
                .weights
                .iter()
                .map(|w| Array2::zeros(w.raw_dim()))
                .collect(),
            m_b: net
                .biases
                .iter()
                .map(|b| Array1::zeros(b.raw_dim()))
                .collect(),
            v_b: net
                .biases
                .iter()
                .map(|b| Array1::zeros(b.raw_dim()))
                .collect(),
        })
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn learning_rate(&self) -> f64 {
        self.lr
    }

    /// One Adam update of `net` along `grads`.
    pub fn adam_step(&mut self, net: &mut Mlp, grads: &ParamGrads) -> Result<()> {
        if !grads.is_finite() {
            return Err(Error::Training {
                step: (self.step + 1) as usize,
                reason: "non-finite gradient".into(),
            });
        }
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step as i32);
        let c2 = 1.0 - self.beta2.powi(self.step as i32);
        let (b1, b2, eps, lr) = (self.beta1, self.beta2, self.eps, self.lr);
        for l in 0..net.weights.len() {
            azip_update(
                net.weights[l].as_slice_mut().unwrap(),
                self.m_w[l].as_slice_mut().unwrap(),
                self.v_w[l].as_slice_mut().unwrap(),
                grads.weights[l].as_slice().unwrap(),
                b1,
                b2,
                eps,
                lr,
                c1,
                c2,
            );
            azip_update(
                net.biases[l].as_slice_mut().unwrap(),
                self.m_b[l].as_slice_mut().unwrap(),
                self.v_b[l].as_slice_mut().unwrap(),
                grads.biases[l].as_slice().unwrap(),
                b1,
                b2,
                eps,
                lr,
                c1,
                c2,
            );
        }
        Ok(())
    }
}

#[allow(clippy::too_many_arguments)]
fn azip_update(
    params: &mut [f64],
    m: &mut [f64],
    v: &mut [f64],
    g: &[f64],
    b1: f64,
    b2: f64,
    eps: f64,
    lr: f64,
    c1: f64,
    c2: f64,
) {
    for i in 0..params.len() {
        m[i] = b1 * m[i] + (1.0 - b1) * g[i];
        v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
        let m_hat = m[i] / c1;
        let v_hat = v[i] / c2;
        params[i] -= lr * m_hat / (v_hat.sqrt() + eps);
    }
}
