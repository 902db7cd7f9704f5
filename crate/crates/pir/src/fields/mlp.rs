//! Fully-connected network with hand-rolled reverse-mode gradients.
//!
//! Forward evaluation optionally carries three spatial tangent vectors so the
//! input Jacobian comes out of the same pass. A second backward variant
//! differentiates a contraction of that Jacobian with respect to the
//! parameters (reverse over forward-tangent), which is what Eikonal
//! regularization and normal-dependent radiance need.
//!
//! Hidden activation is a scaled softplus `(1/beta) ln(1 + e^(beta x))`;
//! smooth second derivatives keep every finite-difference check meaningful.

use serde::{Deserialize, Serialize};

use crate::core::math::sigmoid;

/// Shape of one network: `layers` linear maps with `layers - 1` hidden
/// activations in between.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpShape {
    pub input_dim: usize,
    pub layers: usize,
    pub width: usize,
    pub output_dim: usize,
    /// Softplus sharpness of the hidden activation.
    pub hidden_beta: f64,
}

impl MlpShape {
    pub fn param_count(&self) -> usize {
        let mut n = 0;
        for l in 0..self.layers {
            let (inp, out) = self.layer_dims(l);
            n += out * (inp + 1);
        }
        n
    }

    pub fn layer_dims(&self, l: usize) -> (usize, usize) {
        let inp = if l == 0 { self.input_dim } else { self.width };
        let out = if l + 1 == self.layers {
            self.output_dim
        } else {
            self.width
        };
        (inp, out)
    }

    /// Offset of layer `l`'s weights in the flat parameter vector; biases
    /// follow the `out x in` weight block.
    pub fn layer_offset(&self, l: usize) -> usize {
        let mut off = 0;
        for q in 0..l {
            let (inp, out) = self.layer_dims(q);
            off += out * (inp + 1);
        }
        off
    }
}

fn hidden_act(beta: f64, x: f64) -> f64 {
    // (1/beta) softplus(beta x), stable at both tails
    let bx = beta * x;
    if bx > 30.0 {
        x
    } else if bx < -30.0 {
        bx.exp() / beta
    } else {
        bx.exp().ln_1p() / beta
    }
}

fn hidden_act_d1(beta: f64, x: f64) -> f64 {
    sigmoid(beta * x)
}

fn hidden_act_d2(beta: f64, x: f64) -> f64 {
    let s = sigmoid(beta * x);
    beta * s * (1.0 - s)
}

/// Cached intermediate state from a forward pass.
#[derive(Debug, Clone)]
pub struct MlpCache {
    /// Layer inputs z_0 .. z_{L-1} (z_0 is the network input).
    pub inputs: Vec<Vec<f64>>,
    /// Preactivations a_0 .. a_{L-1}.
    pub preacts: Vec<Vec<f64>>,
    /// Raw (pre output-activation) output = a_{L-1}.
    pub output: Vec<f64>,
    /// Tangent states per spatial direction: s_l = W_l t_l and t_{l+1}.
    /// Empty unless the pass carried tangents.
    pub tangents: Vec<TangentCache>,
}

#[derive(Debug, Clone)]
pub struct TangentCache {
    /// t_0 .. t_{L-1}: tangent of each layer input.
    pub t: Vec<Vec<f64>>,
    /// s_l = W_l t_l for each layer.
    pub s: Vec<Vec<f64>>,
    /// Tangent of the raw output.
    pub out: Vec<f64>,
}

pub struct Mlp;

impl Mlp {
    /// Plain forward pass. Returns the raw output and cache.
    pub fn forward(shape: &MlpShape, params: &[f64], input: &[f64]) -> MlpCache {
        debug_assert_eq!(input.len(), shape.input_dim);
        let mut inputs = Vec::with_capacity(shape.layers);
        let mut preacts = Vec::with_capacity(shape.layers);
        let mut z = input.to_vec();
        for l in 0..shape.layers {
            let (inp, out) = shape.layer_dims(l);
            let off = shape.layer_offset(l);
            let w = &params[off..off + out * inp];
            let b = &params[off + out * inp..off + out * (inp + 1)];
            let mut a = vec![0.0; out];
            for (i, ai) in a.iter_mut().enumerate() {
                let row = &w[i * inp..(i + 1) * inp];
                let mut acc = b[i];
                for (rw, zv) in row.iter().zip(z.iter()) {
                    acc += rw * zv;
                }
                *ai = acc;
            }
            inputs.push(std::mem::take(&mut z));
            if l + 1 < shape.layers {
                z = a.iter().map(|&v| hidden_act(shape.hidden_beta, v)).collect();
            } else {
                z = a.clone();
            }
            preacts.push(a);
        }
        MlpCache {
            inputs,
            preacts,
            output: z,
            tangents: Vec::new(),
        }
    }

    /// Forward pass carrying tangent vectors (one per spatial direction).
    /// `input_tangents[k]` is d input / d x_k.
    pub fn forward_with_tangents(
        shape: &MlpShape,
        params: &[f64],
        input: &[f64],
        input_tangents: &[Vec<f64>],
    ) -> MlpCache {
        let mut cache = Mlp::forward(shape, params, input);
        for t0 in input_tangents {
            debug_assert_eq!(t0.len(), shape.input_dim);
            let mut ts = Vec::with_capacity(shape.layers);
            let mut ss = Vec::with_capacity(shape.layers);
            let mut t = t0.clone();
            for l in 0..shape.layers {
                let (inp, out) = shape.layer_dims(l);
                let off = shape.layer_offset(l);
                let w = &params[off..off + out * inp];
                let mut s = vec![0.0; out];
                for (i, si) in s.iter_mut().enumerate() {
                    let row = &w[i * inp..(i + 1) * inp];
                    let mut acc = 0.0;
                    for (rw, tv) in row.iter().zip(t.iter()) {
                        acc += rw * tv;
                    }
                    *si = acc;
                }
                ts.push(std::mem::take(&mut t));
                if l + 1 < shape.layers {
                    let a = &cache.preacts[l];
                    t = s
                        .iter()
                        .zip(a.iter())
                        .map(|(&sv, &av)| hidden_act_d1(shape.hidden_beta, av) * sv)
                        .collect();
                } else {
                    t = s.clone();
                }
                ss.push(s);
            }
            cache.tangents.push(TangentCache {
                t: ts,
                s: ss,
                out: t,
            });
        }
        cache
    }

    /// Reverse pass for `G = sum_j up[j] * output[j]`.
    ///
    /// Accumulates dG/dparams into `grad_buf` and returns dG/dinput.
    pub fn backward(
        shape: &MlpShape,
        params: &[f64],
        cache: &MlpCache,
        up: &[f64],
        grad_buf: &mut [f64],
    ) -> Vec<f64> {
        debug_assert_eq!(grad_buf.len(), shape.param_count());
        let mut a_hat = up.to_vec();
        for l in (0..shape.layers).rev() {
            let (inp, out) = shape.layer_dims(l);
            let off = shape.layer_offset(l);
            let w = &params[off..off + out * inp];
            let z = &cache.inputs[l];
            // weight and bias adjoints
            for i in 0..out {
                let g = a_hat[i];
                if g != 0.0 {
                    let wrow = &mut grad_buf[off + i * inp..off + (i + 1) * inp];
                    for (gw, zv) in wrow.iter_mut().zip(z.iter()) {
                        *gw += g * zv;
                    }
                }
                grad_buf[off + out * inp + i] += g;
            }
            // input adjoint
            let mut z_hat = vec![0.0; inp];
            for i in 0..out {
                let g = a_hat[i];
                if g != 0.0 {
                    let row = &w[i * inp..(i + 1) * inp];
                    for (zh, rw) in z_hat.iter_mut().zip(row.iter()) {
                        *zh += g * rw;
                    }
                }
            }
            if l > 0 {
                let a_prev = &cache.preacts[l - 1];
                a_hat = z_hat
                    .iter()
                    .zip(a_prev.iter())
                    .map(|(&zh, &av)| hidden_act_d1(shape.hidden_beta, av) * zh)
                    .collect();
            } else {
                return z_hat;
            }
        }
        unreachable!()
    }

    /// Reverse pass for
    /// `G = sum_j up[j] * output[j] + sum_k sum_j up_tan[k][j] * tangent_out[k][j]`,
    /// i.e. a contraction of the raw output and its input Jacobian.
    ///
    /// The cache must have been produced by [`Mlp::forward_with_tangents`].
    /// Only parameter gradients are produced; the evaluation point is treated
    /// as parameter-independent.
    pub fn backward_with_tangents(
        shape: &MlpShape,
        params: &[f64],
        cache: &MlpCache,
        up: &[f64],
        up_tan: &[Vec<f64>],
        grad_buf: &mut [f64],
    ) {
        debug_assert_eq!(up_tan.len(), cache.tangents.len());
        let nk = cache.tangents.len();
        let beta = shape.hidden_beta;

        // Complete adjoints of a_l and s_l for the layer being processed.
        // The raw output is a_{L-1}, its tangent is s_{L-1}.
        let mut a_hat = up.to_vec();
        let mut s_hat: Vec<Vec<f64>> = up_tan.to_vec();

        for l in (0..shape.layers).rev() {
            let (inp, out) = shape.layer_dims(l);
            let off = shape.layer_offset(l);
            let w = &params[off..off + out * inp];
            let z = &cache.inputs[l];

            // parameter adjoints: a_l = W z_l + b, s_l^k = W t_l^k
            for i in 0..out {
                let g = a_hat[i];
                let wrow = &mut grad_buf[off + i * inp..off + (i + 1) * inp];
                if g != 0.0 {
                    for (gw, zv) in wrow.iter_mut().zip(z.iter()) {
                        *gw += g * zv;
                    }
                }
                for k in 0..nk {
                    let sh = s_hat[k][i];
                    if sh != 0.0 {
                        let t = &cache.tangents[k].t[l];
                        for (gw, tv) in wrow.iter_mut().zip(t.iter()) {
                            *gw += sh * tv;
                        }
                    }
                }
                grad_buf[off + out * inp + i] += g;
            }

            if l == 0 {
                break;
            }

            // input adjoints z_hat = W^T a_hat, t_hat^k = W^T s_hat^k
            let mut z_hat = vec![0.0; inp];
            let mut t_hat: Vec<Vec<f64>> = vec![vec![0.0; inp]; nk];
            for i in 0..out {
                let row = &w[i * inp..(i + 1) * inp];
                let g = a_hat[i];
                if g != 0.0 {
                    for (zh, rw) in z_hat.iter_mut().zip(row.iter()) {
                        *zh += g * rw;
                    }
                }
                for k in 0..nk {
                    let sh = s_hat[k][i];
                    if sh != 0.0 {
                        for (th, rw) in t_hat[k].iter_mut().zip(row.iter()) {
                            *th += sh * rw;
                        }
                    }
                }
            }

            // through the activation of layer l-1:
            //   z_l = phi(a_{l-1})            => a_hat += phi' z_hat
            //   t_l = phi'(a_{l-1}) . s_{l-1} => s_hat = phi' t_hat,
            //                                    a_hat += phi'' s_{l-1} t_hat
            let a_prev = &cache.preacts[l - 1];
            let mut new_a_hat = vec![0.0; inp];
            let mut new_s_hat: Vec<Vec<f64>> = vec![vec![0.0; inp]; nk];
            for i in 0..inp {
                let d1 = hidden_act_d1(beta, a_prev[i]);
                let d2 = hidden_act_d2(beta, a_prev[i]);
                new_a_hat[i] = d1 * z_hat[i];
                for k in 0..nk {
                    let s_prev = &cache.tangents[k].s[l - 1];
                    new_a_hat[i] += d2 * s_prev[i] * t_hat[k][i];
                    new_s_hat[k][i] = d1 * t_hat[k][i];
                }
            }
            a_hat = new_a_hat;
            s_hat = new_s_hat;
        }
    }
}
