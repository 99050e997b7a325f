//! Fully-connected networks with explicit record-and-replay gradients.
//!
//! Parameters live in a shared flat `f32` buffer (see [`crate::fields::params`]);
//! arithmetic is done in `f64`. The forward pass optionally records every
//! pre-activation so the backward pass can replay the computation and
//! accumulate exact gradients for both parameters and inputs.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    /// softplus(k*x)/k, numerically stable for large |x|.
    Softplus { sharpness: f64 },
    Relu,
    Sigmoid,
    Identity,
}

impl Activation {
    pub fn apply(&self, x: f64) -> f64 {
        match *self {
            Activation::Softplus { sharpness } => {
                let s = sharpness * x;
                if s > 30.0 {
                    x
                } else {
                    s.exp().ln_1p() / sharpness
                }
            }
            Activation::Relu => x.max(0.0),
            Activation::Sigmoid => sigmoid(x),
            Activation::Identity => x,
        }
    }

    /// Derivative as a function of the pre-activation value.
    pub fn derivative(&self, x: f64) -> f64 {
        match *self {
            Activation::Softplus { sharpness } => sigmoid(sharpness * x),
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Sigmoid => {
                let s = sigmoid(x);
                s * (1.0 - s)
            }
            Activation::Identity => 1.0,
        }
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Architecture of one network. `depth` counts hidden layers; the output
/// layer is separate and uses `output_activation`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub input_dim: usize,
    pub width: usize,
    pub depth: usize,
    pub output_dim: usize,
    pub hidden_activation: Activation,
    pub output_activation: Activation,
    /// Hidden layer whose input is concatenated with the network input.
    pub skip_layer: Option<usize>,
}

impl MlpSpec {
    pub fn n_layers(&self) -> usize {
        self.depth + 1
    }

    /// (in, out) dims of layer `i`; layer `depth` is the output layer.
    pub fn layer_dims(&self, i: usize) -> (usize, usize) {
        let base_in = if i == 0 { self.input_dim } else { self.width };
        let extra = if self.skip_layer == Some(i) && i > 0 {
            self.input_dim
        } else {
            0
        };
        let out = if i == self.depth {
            self.output_dim
        } else {
            self.width
        };
        (base_in + extra, out)
    }

    pub fn param_count(&self) -> usize {
        (0..self.n_layers())
            .map(|i| {
                let (fin, fout) = self.layer_dims(i);
                fin * fout + fout
            })
            .sum()
    }
}

/// View of one network's weights, widened once from the flat `f32` parameter
/// buffer to `f64` (an exact conversion), with the offsets needed to scatter
/// gradients back.
pub struct MlpView<'a> {
    pub spec: &'a MlpSpec,
    /// Per layer: (weights row-major [out][in], biases, weight offset, bias offset).
    pub layers: Vec<(Vec<f64>, Vec<f64>, usize, usize)>,
}

/// Recorded intermediate state of one forward pass.
#[derive(Debug, Clone, Default)]
pub struct MlpTrace {
    pub input: Vec<f64>,
    /// Pre-activation values of every layer, including the output layer.
    pub pre: Vec<Vec<f64>>,
    /// Post-activation values of every hidden layer.
    pub post: Vec<Vec<f64>>,
}

impl<'a> MlpView<'a> {
    pub fn forward(&self, input: &[f64], mut trace: Option<&mut MlpTrace>) -> Vec<f64> {
        debug_assert_eq!(input.len(), self.spec.input_dim);
        if let Some(t) = trace.as_deref_mut() {
            t.input = input.to_vec();
            t.pre.clear();
            t.post.clear();
        }
        let mut act: Vec<f64> = input.to_vec();
        for (i, (w, b, _, _)) in self.layers.iter().enumerate() {
            if self.spec.skip_layer == Some(i) && i > 0 {
                act.extend_from_slice(input);
            }
            let (fin, fout) = self.spec.layer_dims(i);
            debug_assert_eq!(act.len(), fin);
            let mut pre = vec![0.0f64; fout];
            for o in 0..fout {
                let row = &w[o * fin..(o + 1) * fin];
                // Four running sums break the serial FP dependency chain;
                // the combination order below is part of the definition of
                // this dot product and must stay fixed for reproducibility.
                let mut accs = [0.0f64; 4];
                let xc = act.chunks_exact(4);
                let rc = row.chunks_exact(4);
                let (xr, rr) = (xc.remainder(), rc.remainder());
                for (xs, rs) in xc.zip(rc) {
                    accs[0] += xs[0] * rs[0];
                    accs[1] += xs[1] * rs[1];
                    accs[2] += xs[2] * rs[2];
                    accs[3] += xs[3] * rs[3];
                }
                let mut acc = b[o] + ((accs[0] + accs[1]) + (accs[2] + accs[3]));
                for (x, r) in xr.iter().zip(rr.iter()) {
                    acc += x * r;
                }
                pre[o] = acc;
            }
            let activation = if i == self.spec.depth {
                self.spec.output_activation
            } else {
                self.spec.hidden_activation
            };
            act = pre.iter().map(|&p| activation.apply(p)).collect();
            if let Some(t) = trace.as_deref_mut() {
                t.pre.push(pre);
                if i < self.spec.depth {
                    t.post.push(act.clone());
                }
            }
        }
        act
    }

    /// Replays the recorded forward pass, accumulating parameter gradients
    /// into `param_grad` (full-buffer layout) and returning the gradient with
    /// respect to the network input.
    pub fn backward(&self, trace: &MlpTrace, out_grad: &[f64], param_grad: &mut [f64]) -> Vec<f64> {
        let depth = self.spec.depth;
        debug_assert_eq!(out_grad.len(), self.spec.output_dim);
        let mut input_grad = vec![0.0f64; self.spec.input_dim];
        // Gradient on the post-activation output of the current layer.
        let mut g: Vec<f64> = out_grad.to_vec();
        for i in (0..self.spec.n_layers()).rev() {
            let (fin, fout) = self.spec.layer_dims(i);
            let (w, _, w_off, b_off) = &self.layers[i];
            let (w_off, b_off) = (*w_off, *b_off);
            let activation = if i == depth {
                self.spec.output_activation
            } else {
                self.spec.hidden_activation
            };
            let pre = &trace.pre[i];
            // Through the activation.
            let mut gp = vec![0.0f64; fout];
            for o in 0..fout {
                gp[o] = g[o] * activation.derivative(pre[o]);
            }
            // Layer input as seen in the forward pass.
            let layer_in = layer_input(self.spec, trace, i);
            for o in 0..fout {
                param_grad[b_off + o] += gp[o];
                let row = w_off + o * fin;
                let pg = &mut param_grad[row..row + fin];
                let go = gp[o];
                for (g, x) in pg.iter_mut().zip(layer_in.iter()) {
                    *g += go * x;
                }
            }
            // Gradient on the layer input.
            let mut gin = vec![0.0f64; fin];
            for o in 0..fout {
                let row = &w[o * fin..(o + 1) * fin];
                let go = gp[o];
                for (g, wv) in gin.iter_mut().zip(row.iter()) {
                    *g += go * wv;
                }
            }
            if self.spec.skip_layer == Some(i) && i > 0 {
                let base = fin - self.spec.input_dim;
                for (k, gi) in gin[base..].iter().enumerate() {
                    input_grad[k] += gi;
                }
                gin.truncate(base);
            }
            if i == 0 {
                for (k, gi) in gin.iter().enumerate() {
                    input_grad[k] += gi;
                }
            } else {
                g = gin;
            }
        }
        input_grad
    }
}

/// The exact input vector layer `i` consumed during the recorded forward.
fn layer_input(spec: &MlpSpec, trace: &MlpTrace, i: usize) -> Vec<f64> {
    let mut v = if i == 0 {
        trace.input.clone()
    } else {
        trace.post[i - 1].clone()
    };
    if spec.skip_layer == Some(i) && i > 0 {
        v.extend_from_slice(&trace.input);
    }
    v
}
