//! NeRF-style positional encoding with identity passthrough.
//!
//! `encode(x, F)` maps each input component `x_c` to
//! `[x_c, sin(2^k pi x_c), cos(2^k pi x_c)]` for `k = 0..F-1`, giving
//! `n (1 + 2 F)` outputs for an n-dimensional input. `freqs = 0` is the
//! identity.

use std::f64::consts::PI;

/// Output dimension of the encoding for `input_dim` components.
pub fn encoded_dim(input_dim: usize, freqs: usize) -> usize {
    input_dim * (1 + 2 * freqs)
}

/// Layout: the `input_dim` raw components first, then per frequency k a
/// sin-block and a cos-block of `input_dim` components each.
pub fn encode_into(input: &[f64], freqs: usize, out: &mut Vec<f64>) {
    out.extend_from_slice(input);
    for k in 0..freqs {
        let f = (1u64 << k) as f64 * PI;
        for &v in input {
            out.push((f * v).sin());
        }
        for &v in input {
            out.push((f * v).cos());
        }
    }
}

pub fn encode(input: &[f64], freqs: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(encoded_dim(input.len(), freqs));
    encode_into(input, freqs, &mut out);
    out
}

/// Derivative of each encoded output with respect to its source component.
/// Entry `i` pairs with output `i`: `d enc_i / d x_{src(i)}`.
/// (The encoding is componentwise, so the Jacobian is sparse: output `i`
/// depends only on component `source_component(i, input_dim)`.)
pub fn encode_derivative(input: &[f64], freqs: usize) -> Vec<f64> {
    let n = input.len();
    let mut out = Vec::with_capacity(encoded_dim(n, freqs));
    out.extend(std::iter::repeat(1.0).take(n));
    for k in 0..freqs {
        let f = (1u64 << k) as f64 * PI;
        for &v in input {
            out.push(f * (f * v).cos());
        }
        for &v in input {
            out.push(-f * (f * v).sin());
        }
    }
    out
}

/// Which input component the encoded output at `index` derives from.
pub fn source_component(index: usize, input_dim: usize) -> usize {
    index % input_dim
}
