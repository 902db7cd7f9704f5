//! Parametric spatial functions with value, spatial-gradient, and
//! parameter-gradient evaluation.
//!
//! A [`Field`] maps a 3D point (plus optional extra inputs) to a vector,
//! backed either by a trilinear grid or by a positional-encoded MLP. All
//! gradients are hand-rolled: `backward` accumulates parameter gradients into
//! an external buffer so parallel workers can keep private buffers that are
//! merged in a fixed order.

pub mod encoding;
pub mod grid;
pub mod mlp;

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::core::error::{Error, Result};
use crate::core::math::{sigmoid, softplus, Vec3};
use crate::core::rng::Rng;
use crate::core::tensor::{tensor_read, tensor_write};
use grid::{Grid, GridShape, GridStencil};
use mlp::{Mlp, MlpCache, MlpShape};

/// A named block of optimizable parameters with its gradient accumulator.
#[derive(Debug, Clone)]
pub struct ParamBlock {
    pub name: String,
    pub values: Vec<f64>,
    pub grads: Vec<f64>,
}

impl ParamBlock {
    pub fn zeros(name: impl Into<String>, len: usize) -> ParamBlock {
        ParamBlock {
            name: name.into(),
            values: vec![0.0; len],
            grads: vec![0.0; len],
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn zero_grads(&mut self) {
        self.grads.fill(0.0);
    }

    pub fn values_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn grads_finite(&self) -> bool {
        self.grads.iter().all(|v| v.is_finite())
    }

    /// Round values to f32 precision (the checkpoint storage precision), so a
    /// saved-then-resumed run is bit-identical to one that kept going.
    pub fn snap_to_f32(&mut self) {
        for v in self.values.iter_mut() {
            *v = *v as f32 as f64;
        }
    }
}

/// Output activation applied componentwise after the backend.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    None,
    Sigmoid,
    Softplus,
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::None => x,
            Activation::Sigmoid => sigmoid(x),
            Activation::Softplus => softplus(x),
        }
    }

    fn d1(self, x: f64) -> f64 {
        match self {
            Activation::None => 1.0,
            Activation::Sigmoid => {
                let s = sigmoid(x);
                s * (1.0 - s)
            }
            Activation::Softplus => sigmoid(x),
        }
    }

    fn d2(self, x: f64) -> f64 {
        match self {
            Activation::None => 0.0,
            Activation::Sigmoid => {
                let s = sigmoid(x);
                s * (1.0 - s) * (1.0 - 2.0 * s)
            }
            Activation::Softplus => {
                let s = sigmoid(x);
                s * (1.0 - s)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendSpec {
    Grid {
        resolution: usize,
    },
    Mlp {
        layers: usize,
        width: usize,
        #[serde(default = "default_hidden_beta")]
        hidden_beta: f64,
    },
}

fn default_hidden_beta() -> f64 {
    100.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldSpec {
    pub backend: BackendSpec,
    pub output_dim: usize,
    #[serde(default)]
    pub encoding_freqs: usize,
    #[serde(default)]
    pub extra_input_dim: usize,
    #[serde(default)]
    pub activation: Activation,
}

impl FieldSpec {
    pub fn validate(&self) -> Result<()> {
        if self.output_dim == 0 {
            return Err(Error::FieldSpec {
                reason: "output_dim must be >= 1".into(),
            });
        }
        match &self.backend {
            BackendSpec::Grid { resolution } => {
                if *resolution < 2 {
                    return Err(Error::FieldSpec {
                        reason: format!("grid resolution must be >= 2, got {resolution}"),
                    });
                }
                if self.extra_input_dim != 0 {
                    return Err(Error::FieldSpec {
                        reason: "grid backend does not take extra inputs".into(),
                    });
                }
            }
            BackendSpec::Mlp { layers, width, .. } => {
                if *layers == 0 {
                    return Err(Error::FieldSpec {
                        reason: "mlp needs at least one layer".into(),
                    });
                }
                if *layers > 1 && *width == 0 {
                    return Err(Error::FieldSpec {
                        reason: "mlp width must be >= 1".into(),
                    });
                }
            }
        }
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        match &self.backend {
            BackendSpec::Grid { resolution } => GridShape {
                resolution: *resolution,
                channels: self.output_dim,
            }
            .param_count(),
            BackendSpec::Mlp { .. } => self.mlp_shape().param_count(),
        }
    }

    fn mlp_shape(&self) -> MlpShape {
        match &self.backend {
            BackendSpec::Mlp {
                layers,
                width,
                hidden_beta,
            } => MlpShape {
                input_dim: encoding::encoded_dim(3, self.encoding_freqs) + self.extra_input_dim,
                layers: *layers,
                width: *width,
                output_dim: self.output_dim,
                hidden_beta: *hidden_beta,
            },
            BackendSpec::Grid { .. } => unreachable!("grid spec has no mlp shape"),
        }
    }

    fn grid_shape(&self) -> GridShape {
        match &self.backend {
            BackendSpec::Grid { resolution } => GridShape {
                resolution: *resolution,
                channels: self.output_dim,
            },
            BackendSpec::Mlp { .. } => unreachable!("mlp spec has no grid shape"),
        }
    }
}

/// A parametric spatial function: spec + parameters.
#[derive(Debug, Clone)]
pub struct Field {
    pub spec: FieldSpec,
    pub params: ParamBlock,
}

/// Saved forward state consumed by the backward passes.
pub enum FieldCache {
    Grid {
        stencil: GridStencil,
        raw: Vec<f64>,
    },
    Mlp {
        cache: MlpCache,
        enc_deriv: Vec<f64>,
        enc_dim: usize,
    },
}

impl Field {
    pub fn new(spec: FieldSpec, name: impl Into<String>) -> Result<Field> {
        spec.validate()?;
        let n = spec.param_count();
        Ok(Field {
            params: ParamBlock::zeros(name, n),
            spec,
        })
    }

    /// Standard random init: He-style weights for MLPs, zeros for grids.
    pub fn init_random(&mut self, rng: &mut Rng) {
        match &self.spec.backend {
            BackendSpec::Grid { .. } => {
                self.params.values.fill(0.0);
            }
            BackendSpec::Mlp { .. } => {
                let shape = self.spec.mlp_shape();
                for l in 0..shape.layers {
                    let (inp, out) = shape.layer_dims(l);
                    let off = shape.layer_offset(l);
                    let std = (2.0 / inp as f64).sqrt();
                    for i in 0..out * inp {
                        self.params.values[off + i] = rng.normal() * std;
                    }
                    for i in 0..out {
                        self.params.values[off + out * inp + i] = 0.0;
                    }
                }
            }
        }
    }

    /// Geometric initialization: make channel 0 approximate `|x| - radius`.
    ///
    /// Grids are written analytically. MLPs use the sphere-init weight
    /// scheme: zero weights on the non-identity encoded inputs, mean-positive
    /// last-layer weights, bias `-radius`.
    pub fn init_sphere(&mut self, radius: f64, rng: &mut Rng) {
        match &self.spec.backend {
            BackendSpec::Grid { .. } => {
                let shape = self.spec.grid_shape();
                Grid::fill(&shape, &mut self.params.values, |p| {
                    let mut v = vec![0.0; shape.channels];
                    v[0] = p.norm() - radius;
                    v
                });
            }
            BackendSpec::Mlp { .. } => {
                let shape = self.spec.mlp_shape();
                for l in 0..shape.layers {
                    let (inp, out) = shape.layer_dims(l);
                    let off = shape.layer_offset(l);
                    let last = l + 1 == shape.layers;
                    if last {
                        let mean = std::f64::consts::PI.sqrt() / (inp as f64).sqrt();
                        for c in 0..out {
                            for i in 0..inp {
                                self.params.values[off + c * inp + i] = if c == 0 {
                                    mean + rng.normal() * 1e-4
                                } else {
                                    rng.normal() * 1e-2
                                };
                            }
                            self.params.values[off + out * inp + c] =
                                if c == 0 { -radius } else { 0.0 };
                        }
                    } else {
                        let std = (2.0 / out as f64).sqrt();
                        for i in 0..out * inp {
                            self.params.values[off + i] = rng.normal() * std;
                        }
                        if l == 0 {
                            // keep only the raw-coordinate inputs active
                            for c in 0..out {
                                for i in 3..inp {
                                    self.params.values[off + c * inp + i] = 0.0;
                                }
                            }
                        }
                        for i in 0..out {
                            self.params.values[off + out * inp + i] = 0.0;
                        }
                    }
                }
                self.calibrate_radial(radius, rng);
                self.polish_sphere(radius, rng);
            }
        }
    }

    /// Short least-squares fit of channel 0 to `|x| - radius`. The weight
    /// scheme plus linear calibration still carries O(1/sqrt(width))
    /// directional noise at desk widths; a few Adam steps remove most of it.
    fn polish_sphere(&mut self, radius: f64, rng: &mut Rng) {
        let pts: Vec<Vec3> = (0..512)
            .map(|_| {
                Vec3 {
                    x: rng.normal(),
                    y: rng.normal(),
                    z: rng.normal(),
                }
                .normalized()
                    * rng.uniform_in(0.02, 1.3)
            })
            .collect();
        let extra = vec![0.0; self.spec.extra_input_dim];
        let n = self.params.len();
        let mut m = vec![0.0; n];
        let mut v = vec![0.0; n];
        let (b1, b2, eps, lr) = (0.9, 0.999, 1e-8, 3e-3);
        let mut grad = vec![0.0; n];
        let mut up = vec![0.0; self.spec.output_dim];
        for step in 1..=300 {
            grad.fill(0.0);
            for x in &pts {
                let (out, cache) = self.eval_cached(*x, &extra).expect("polish eval");
                let target = x.norm() - radius;
                up[0] = 2.0 * (out[0] - target) / pts.len() as f64;
                self.backward(&cache, &up, &mut grad);
            }
            let bc1 = 1.0 - f64::powi(b1, step);
            let bc2 = 1.0 - f64::powi(b2, step);
            for i in 0..n {
                m[i] = b1 * m[i] + (1.0 - b1) * grad[i];
                v[i] = b2 * v[i] + (1.0 - b2) * grad[i] * grad[i];
                self.params.values[i] -= lr * (m[i] / bc1) / ((v[i] / bc2).sqrt() + eps);
            }
        }
    }

    /// Fit the empirical radial response `s ~ a |x| + d` of channel 0 and
    /// rescale the last linear layer so the init lands on `|x| - radius`.
    /// The weight-scheme init is only asymptotically exact; at desk widths
    /// the slope is off by a constant factor.
    fn calibrate_radial(&mut self, radius: f64, rng: &mut Rng) {
        let shape = self.spec.mlp_shape();
        let mut sum_r = 0.0;
        let mut sum_s = 0.0;
        let mut sum_rr = 0.0;
        let mut sum_rs = 0.0;
        let mut n = 0.0;
        for _ in 0..64 {
            let dir = Vec3 {
                x: rng.normal(),
                y: rng.normal(),
                z: rng.normal(),
            }
            .normalized();
            for step in 1..=6 {
                let r = 0.2 * step as f64;
                let s = self
                    .eval(dir * r, &vec![0.0; self.spec.extra_input_dim])
                    .expect("calibration eval");
                sum_r += r;
                sum_s += s[0];
                sum_rr += r * r;
                sum_rs += r * s[0];
                n += 1.0;
            }
        }
        let slope = (n * sum_rs - sum_r * sum_s) / (n * sum_rr - sum_r * sum_r);
        let intercept = (sum_s - slope * sum_r) / n;
        if !(slope.is_finite() && slope > 0.1) {
            return;
        }
        let l = shape.layers - 1;
        let (inp, out) = shape.layer_dims(l);
        let off = shape.layer_offset(l);
        for i in 0..inp {
            self.params.values[off + i] /= slope;
        }
        // s'(x) = (s(x) - b)/slope + b' with b the old bias; choosing
        // b' = -radius - (intercept - b)/slope lands on |x| - radius.
        let b = self.params.values[off + out * inp];
        self.params.values[off + out * inp] = -radius - (intercept - b) / slope;
    }

    fn check_extra(&self, extra: &[f64]) -> Result<()> {
        if extra.len() != self.spec.extra_input_dim {
            return Err(Error::ShapeMismatch {
                expected: format!("{} extra inputs", self.spec.extra_input_dim),
                got: format!("{}", extra.len()),
                context: format!("field `{}`", self.params.name),
            });
        }
        Ok(())
    }

    fn raw_forward(&self, x: Vec3, extra: &[f64], with_tangents: bool) -> (Vec<f64>, FieldCache) {
        match &self.spec.backend {
            BackendSpec::Grid { .. } => {
                let shape = self.spec.grid_shape();
                let stencil = Grid::stencil(&shape, x);
                let mut raw = vec![0.0; shape.channels];
                Grid::eval(&shape, &self.params.values, &stencil, &mut raw);
                (raw.clone(), FieldCache::Grid { stencil, raw })
            }
            BackendSpec::Mlp { .. } => {
                let shape = self.spec.mlp_shape();
                let xs = x.to_array();
                let mut input = encoding::encode(&xs, self.spec.encoding_freqs);
                let enc_dim = input.len();
                input.extend_from_slice(extra);
                let enc_deriv = encoding::encode_derivative(&xs, self.spec.encoding_freqs);
                let cache = if with_tangents {
                    let tangents: Vec<Vec<f64>> = (0..3)
                        .map(|k| {
                            let mut t = vec![0.0; shape.input_dim];
                            for (i, &d) in enc_deriv.iter().enumerate() {
                                if encoding::source_component(i, 3) == k {
                                    t[i] = d;
                                }
                            }
                            t
                        })
                        .collect();
                    Mlp::forward_with_tangents(&shape, &self.params.values, &input, &tangents)
                } else {
                    Mlp::forward(&shape, &self.params.values, &input)
                };
                (
                    cache.output.clone(),
                    FieldCache::Mlp {
                        cache,
                        enc_deriv,
                        enc_dim,
                    },
                )
            }
        }
    }

    /// Activated output.
    pub fn eval(&self, x: Vec3, extra: &[f64]) -> Result<Vec<f64>> {
        Ok(self.eval_cached(x, extra)?.0)
    }

    pub fn eval_cached(&self, x: Vec3, extra: &[f64]) -> Result<(Vec<f64>, FieldCache)> {
        self.check_extra(extra)?;
        let (raw, cache) = self.raw_forward(x, extra, false);
        let act = self.spec.activation;
        Ok((raw.iter().map(|&v| act.apply(v)).collect(), cache))
    }

    /// Activated output plus its spatial Jacobian `jac[c][k] = d out_c / d x_k`.
    pub fn eval_with_jacobian(
        &self,
        x: Vec3,
        extra: &[f64],
    ) -> Result<(Vec<f64>, Vec<[f64; 3]>, FieldCache)> {
        self.check_extra(extra)?;
        let (raw, cache) = self.raw_forward(x, extra, true);
        let act = self.spec.activation;
        let out: Vec<f64> = raw.iter().map(|&v| act.apply(v)).collect();
        let mut jac = vec![[0.0; 3]; self.spec.output_dim];
        match &cache {
            FieldCache::Grid { stencil, .. } => {
                let shape = self.spec.grid_shape();
                Grid::jacobian(&shape, &self.params.values, stencil, &mut jac);
            }
            FieldCache::Mlp { cache, .. } => {
                for (k, tc) in cache.tangents.iter().enumerate() {
                    for (c, row) in jac.iter_mut().enumerate() {
                        row[k] = tc.out[c];
                    }
                }
            }
        }
        for (c, row) in jac.iter_mut().enumerate() {
            let d = act.d1(raw[c]);
            for v in row.iter_mut() {
                *v *= d;
            }
        }
        Ok((out, jac, cache))
    }

    pub fn grad_input(&self, x: Vec3, extra: &[f64]) -> Result<Vec<[f64; 3]>> {
        Ok(self.eval_with_jacobian(x, extra)?.1)
    }

    /// Accumulate d(sum_c up[c] * out_c)/dparams into `grad_buf`; returns the
    /// same scalar's gradient with respect to x and the extra inputs.
    pub fn backward(
        &self,
        cache: &FieldCache,
        up: &[f64],
        grad_buf: &mut [f64],
    ) -> (Vec3, Vec<f64>) {
        let act = self.spec.activation;
        match cache {
            FieldCache::Grid { stencil, raw } => {
                let shape = self.spec.grid_shape();
                let up_raw: Vec<f64> = up
                    .iter()
                    .zip(raw.iter())
                    .map(|(&u, &y)| u * act.d1(y))
                    .collect();
                let dx = Grid::backward(&shape, &self.params.values, stencil, &up_raw, grad_buf);
                (dx, Vec::new())
            }
            FieldCache::Mlp {
                cache,
                enc_deriv,
                enc_dim,
            } => {
                let shape = self.spec.mlp_shape();
                let up_raw: Vec<f64> = up
                    .iter()
                    .zip(cache.output.iter())
                    .map(|(&u, &y)| u * act.d1(y))
                    .collect();
                let dinput = Mlp::backward(&shape, &self.params.values, cache, &up_raw, grad_buf);
                let mut dx = Vec3::ZERO;
                for i in 0..*enc_dim {
                    let k = encoding::source_component(i, 3);
                    let v = dinput[i] * enc_deriv[i];
                    match k {
                        0 => dx.x += v,
                        1 => dx.y += v,
                        _ => dx.z += v,
                    }
                }
                (dx, dinput[*enc_dim..].to_vec())
            }
        }
    }

    /// Accumulate parameter gradients of
    /// `sum_c up[c] out_c + sum_ck up_jac[c][k] jac[c][k]`.
    ///
    /// The evaluation point is treated as parameter-independent; use this for
    /// Eikonal terms and normal-dependent radiance at fixed sample points.
    /// The cache must come from [`Field::eval_with_jacobian`].
    pub fn backward_with_jacobian(
        &self,
        cache: &FieldCache,
        up: &[f64],
        up_jac: &[[f64; 3]],
        grad_buf: &mut [f64],
    ) {
        let act = self.spec.activation;
        match cache {
            FieldCache::Grid { stencil, raw } => {
                let shape = self.spec.grid_shape();
                // out = act(y), jac = act'(y) * Jy
                // d/dy: act'(y) up + act''(y) (sum_k Jy[c][k] up_jac[c][k])
                let mut jy = vec![[0.0; 3]; shape.channels];
                Grid::jacobian(&shape, &self.params.values, stencil, &mut jy);
                let mut up_y = vec![0.0; shape.channels];
                let mut up_jy = vec![[0.0; 3]; shape.channels];
                for c in 0..shape.channels {
                    let d1 = act.d1(raw[c]);
                    let d2 = act.d2(raw[c]);
                    let mut acc = up[c] * d1;
                    for k in 0..3 {
                        acc += d2 * jy[c][k] * up_jac[c][k];
                        up_jy[c][k] = d1 * up_jac[c][k];
                    }
                    up_y[c] = acc;
                }
                Grid::backward(&shape, &self.params.values, stencil, &up_y, grad_buf);
                Grid::backward_jacobian(&shape, stencil, &up_jy, grad_buf);
            }
            FieldCache::Mlp { cache, .. } => {
                let shape = self.spec.mlp_shape();
                debug_assert!(
                    !cache.tangents.is_empty(),
                    "backward_with_jacobian needs a jacobian-carrying cache"
                );
                let nk = cache.tangents.len();
                let mut up_y = vec![0.0; shape.output_dim];
                let mut up_tan = vec![vec![0.0; shape.output_dim]; nk];
                for c in 0..shape.output_dim {
                    let y = cache.output[c];
                    let d1 = act.d1(y);
                    let d2 = act.d2(y);
                    let mut acc = up[c] * d1;
                    for k in 0..nk {
                        let ty = cache.tangents[k].out[c];
                        acc += d2 * ty * up_jac[c][k];
                        up_tan[k][c] = d1 * up_jac[c][k];
                    }
                    up_y[c] = acc;
                }
                Mlp::backward_with_tangents(
                    &shape,
                    &self.params.values,
                    cache,
                    &up_y,
                    &up_tan,
                    grad_buf,
                );
            }
        }
    }

    /// Serialize parameters (TNSR) plus a JSON spec sidecar.
    pub fn save(&self, dir: &Path, base: &str) -> Result<()> {
        let data: Vec<f32> = self.params.values.iter().map(|&v| v as f32).collect();
        tensor_write(dir.join(format!("{base}.tnsr")), &[data.len() as u32], &data)?;
        let json = serde_json::to_string_pretty(&self.spec)?;
        std::fs::write(dir.join(format!("{base}.json")), json)
            .map_err(|e| Error::io(format!("writing {base}.json"), e))?;
        Ok(())
    }

    /// Load parameters saved by [`Field::save`]; the stored spec must match.
    pub fn load_into(&mut self, dir: &Path, base: &str) -> Result<()> {
        let json = std::fs::read_to_string(dir.join(format!("{base}.json")))
            .map_err(|e| Error::io(format!("reading {base}.json"), e))?;
        let spec: FieldSpec = serde_json::from_str(&json)?;
        if spec != self.spec {
            return Err(Error::Checkpoint {
                reason: format!("field spec mismatch for `{base}`"),
            });
        }
        let t = tensor_read(dir.join(format!("{base}.tnsr")))?;
        if t.data.len() != self.params.len() {
            return Err(Error::Checkpoint {
                reason: format!(
                    "parameter count mismatch for `{base}`: {} vs {}",
                    t.data.len(),
                    self.params.len()
                ),
            });
        }
        for (v, &f) in self.params.values.iter_mut().zip(t.data.iter()) {
            *v = f as f64;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::core::math::vec3;
    use crate::numcheck::{central_diff_vec, grads_match, FD_FLOOR, FD_REL, FD_STEP};

    fn mlp_spec(freqs: usize, extra: usize, act: Activation) -> FieldSpec {
        FieldSpec {
            backend: BackendSpec::Mlp {
                layers: 3,
                width: 8,
                hidden_beta: 10.0,
            },
            output_dim: 2,
            encoding_freqs: freqs,
            extra_input_dim: extra,
            activation: act,
        }
    }

    #[test]
    fn zero_weight_sigmoid_mlp_is_half_everywhere() {
        let mut field = Field::new(mlp_spec(2, 0, Activation::Sigmoid), "t").unwrap();
        field.params.values.fill(0.0);
        let out = field.eval(vec3(0.3, -0.7, 0.2), &[]).unwrap();
        assert!(out.iter().all(|&v| (v - 0.5).abs() < 1e-12));
    }

    #[test]
    fn grid_rejects_extra_inputs() {
        let spec = FieldSpec {
            backend: BackendSpec::Grid { resolution: 4 },
            output_dim: 1,
            encoding_freqs: 0,
            extra_input_dim: 2,
            activation: Activation::None,
        };
        assert!(Field::new(spec, "g").is_err());
    }

    #[test]
    fn constant_field_zero_jacobian() {
        let spec = FieldSpec {
            backend: BackendSpec::Grid { resolution: 4 },
            output_dim: 1,
            encoding_freqs: 0,
            extra_input_dim: 0,
            activation: Activation::None,
        };
        let mut field = Field::new(spec, "g").unwrap();
        field.params.values.fill(3.0);
        let jac = field.grad_input(vec3(0.2, 0.4, -0.1), &[]).unwrap();
        assert!(jac[0].iter().all(|v| v.abs() < 1e-12));
    }

    fn fd_harness(field: &Field, x: Vec3, extra: &[f64], up: &[f64]) {
        let (_, cache) = field.eval_cached(x, extra).unwrap();
        let mut grads = vec![0.0; field.params.len()];
        let (dx, dextra) = field.backward(&cache, up, &mut grads);

        let mut clone = field.clone();
        let mut f = |p: &[f64]| {
            clone.params.values.copy_from_slice(p);
            let out = clone.eval(x, extra).unwrap();
            out.iter().zip(up.iter()).map(|(o, u)| o * u).sum()
        };
        let fd = central_diff_vec(&mut f, &field.params.values, FD_STEP);
        grads_match(&grads, &fd, FD_REL, FD_FLOOR).unwrap();

        // spatial gradient of the same contraction
        let xs = x.to_array();
        let mut g = |q: &[f64]| {
            let out = field.eval(vec3(q[0], q[1], q[2]), extra).unwrap();
            out.iter().zip(up.iter()).map(|(o, u)| o * u).sum()
        };
        let fd_x = central_diff_vec(&mut g, &xs, FD_STEP);
        grads_match(&dx.to_array(), &fd_x, FD_REL, FD_FLOOR).unwrap();

        if !extra.is_empty() {
            let mut h = |e: &[f64]| {
                let out = field.eval(x, e).unwrap();
                out.iter().zip(up.iter()).map(|(o, u)| o * u).sum()
            };
            let fd_e = central_diff_vec(&mut h, extra, FD_STEP);
            grads_match(&dextra, &fd_e, FD_REL, FD_FLOOR).unwrap();
        }
    }

    #[test]
    fn gradients_match_fd_over_backends_and_activations() {
        let mut rng = Rng::new(77);
        let mut configs: Vec<Field> = Vec::new();
        for act in [Activation::None, Activation::Sigmoid, Activation::Softplus] {
            for freqs in [0usize, 2, 4] {
                let mut f = Field::new(mlp_spec(freqs, 0, act), "m").unwrap();
                f.init_random(&mut rng);
                configs.push(f);
            }
            let spec = FieldSpec {
                backend: BackendSpec::Grid { resolution: 5 },
                output_dim: 2,
                encoding_freqs: 0,
                extra_input_dim: 0,
                activation: act,
            };
            let mut f = Field::new(spec, "g").unwrap();
            for v in f.params.values.iter_mut() {
                *v = rng.normal() * 0.5;
            }
            configs.push(f);
        }
        // extra-input config
        let mut f = Field::new(mlp_spec(2, 3, Activation::Sigmoid), "me").unwrap();
        f.init_random(&mut rng);
        configs.push(f);

        assert!(configs.len() >= 13);
        for (i, field) in configs.iter().enumerate() {
            let x = vec3(
                rng.uniform_in(-0.8, 0.8),
                rng.uniform_in(-0.8, 0.8),
                rng.uniform_in(-0.8, 0.8),
            );
            let extra: Vec<f64> = (0..field.spec.extra_input_dim)
                .map(|_| rng.uniform_in(-1.0, 1.0))
                .collect();
            let up: Vec<f64> = (0..field.spec.output_dim).map(|_| rng.normal()).collect();
            fd_harness(field, x, &extra, &up);
            let _ = i;
        }
    }

    #[test]
    fn spatial_jacobian_matches_fd_for_random_mlp() {
        let mut rng = Rng::new(5);
        for seed in 0..4 {
            let mut field = Field::new(mlp_spec(3, 0, Activation::None), "m").unwrap();
            field.init_random(&mut rng);
            let x = vec3(
                rng.uniform_in(-0.8, 0.8),
                rng.uniform_in(-0.8, 0.8),
                rng.uniform_in(-0.8, 0.8),
            );
            let (_, jac, _) = field.eval_with_jacobian(x, &[]).unwrap();
            for c in 0..2 {
                let xs = x.to_array();
                let mut f = |q: &[f64]| field.eval(vec3(q[0], q[1], q[2]), &[]).unwrap()[c];
                let fd = central_diff_vec(&mut f, &xs, FD_STEP);
                grads_match(&jac[c], &fd, FD_REL, FD_FLOOR).unwrap();
            }
            let _ = seed;
        }
    }

    #[test]
    fn jacobian_contraction_grads_match_fd_both_backends() {
        let mut rng = Rng::new(31);
        for which in 0..2 {
            let field = if which == 0 {
                let mut f = Field::new(mlp_spec(2, 0, Activation::Sigmoid), "m").unwrap();
                f.init_random(&mut rng);
                f
            } else {
                let spec = FieldSpec {
                    backend: BackendSpec::Grid { resolution: 4 },
                    output_dim: 2,
                    encoding_freqs: 0,
                    extra_input_dim: 0,
                    activation: Activation::Sigmoid,
                };
                let mut f = Field::new(spec, "g").unwrap();
                for v in f.params.values.iter_mut() {
                    *v = rng.normal() * 0.5;
                }
                f
            };
            let x = vec3(0.31, -0.22, 0.57);
            let up: Vec<f64> = (0..2).map(|_| rng.normal()).collect();
            let up_jac: Vec<[f64; 3]> = (0..2)
                .map(|_| [rng.normal(), rng.normal(), rng.normal()])
                .collect();
            let (_, _, cache) = field.eval_with_jacobian(x, &[]).unwrap();
            let mut grads = vec![0.0; field.params.len()];
            field.backward_with_jacobian(&cache, &up, &up_jac, &mut grads);

            let mut clone = field.clone();
            let mut f = |p: &[f64]| {
                clone.params.values.copy_from_slice(p);
                let (out, jac, _) = clone.eval_with_jacobian(x, &[]).unwrap();
                let mut acc = 0.0;
                for c in 0..2 {
                    acc += out[c] * up[c];
                    for k in 0..3 {
                        acc += jac[c][k] * up_jac[c][k];
                    }
                }
                acc
            };
            let fd = central_diff_vec(&mut f, &field.params.values, FD_STEP);
            grads_match(&grads, &fd, FD_REL, FD_FLOOR).unwrap();
        }
    }

    #[test]
    fn sphere_init_approximates_distance_function() {
        let mut rng = Rng::new(2);
        let spec = FieldSpec {
            backend: BackendSpec::Mlp {
                layers: 4,
                width: 64,
                hidden_beta: 100.0,
            },
            output_dim: 1,
            encoding_freqs: 6,
            extra_input_dim: 0,
            activation: Activation::None,
        };
        let mut field = Field::new(spec, "sdf").unwrap();
        field.init_sphere(0.5, &mut rng);
        let mut max_err: f64 = 0.0;
        for _ in 0..100 {
            let x = vec3(
                rng.uniform_in(-0.9, 0.9),
                rng.uniform_in(-0.9, 0.9),
                rng.uniform_in(-0.9, 0.9),
            );
            let s = field.eval(x, &[]).unwrap()[0];
            max_err = max_err.max((s - (x.norm() - 0.5)).abs());
        }
        assert!(max_err < 0.25, "sphere init error {max_err}");
    }

    #[test]
    fn save_load_roundtrip_and_spec_mismatch() {
        let dir = std::env::temp_dir().join(format!("pir-field-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let mut rng = Rng::new(3);
        let mut field = Field::new(mlp_spec(2, 0, Activation::None), "m").unwrap();
        field.init_random(&mut rng);
        field.params.snap_to_f32();
        field.save(&dir, "m").unwrap();
        let mut loaded = Field::new(mlp_spec(2, 0, Activation::None), "m").unwrap();
        loaded.load_into(&dir, "m").unwrap();
        assert_eq!(loaded.params.values, field.params.values);

        let mut wrong = Field::new(mlp_spec(3, 0, Activation::None), "m").unwrap();
        assert!(wrong.load_into(&dir, "m").is_err());
    }
}
