//! Dense trilinear grid over the unit box [-1, 1]^3.
//!
//! Values are exactly linear in the node parameters, which makes the grid a
//! fast, well-conditioned backend for geometry initialization. Queries
//! outside the box clamp to the boundary; spatial gradients there are zero.
//! On a cell face the gradient uses the cell on the upper side (one-sided
//! convention), except at the top boundary where the last cell applies.

use crate::core::math::Vec3;

#[derive(Debug, Clone, Copy)]
pub struct GridShape {
    pub resolution: usize,
    pub channels: usize,
}

impl GridShape {
    pub fn param_count(&self) -> usize {
        self.resolution * self.resolution * self.resolution * self.channels
    }

    fn node_index(&self, ix: usize, iy: usize, iz: usize, c: usize) -> usize {
        (((ix * self.resolution) + iy) * self.resolution + iz) * self.channels + c
    }
}

/// A resolved query: the 8 corner nodes with interpolation weights and the
/// weight gradients with respect to x.
pub struct GridStencil {
    /// (flat node base index (channel 0), weight, dweight/dx)
    pub corners: [(usize, f64, [f64; 3]); 8],
    /// True when the query point was clamped to the box (gradient is zero).
    pub clamped: [bool; 3],
}

pub struct Grid;

impl Grid {
    pub fn stencil(shape: &GridShape, x: Vec3) -> GridStencil {
        let res = shape.resolution;
        let scale = (res - 1) as f64 / 2.0;
        let mut idx = [0usize; 3];
        let mut frac = [0.0f64; 3];
        let mut clamped = [false; 3];
        for (a, &v) in x.to_array().iter().enumerate() {
            let mut u = (v + 1.0) * scale;
            if u <= 0.0 {
                u = 0.0;
                clamped[a] = v < -1.0;
            } else if u >= (res - 1) as f64 {
                u = (res - 1) as f64;
                clamped[a] = v > 1.0;
            }
            let mut i = u.floor() as usize;
            if i >= res - 1 {
                i = res - 2;
            }
            idx[a] = i;
            frac[a] = u - i as f64;
        }
        let w = |f: f64, hi: bool| if hi { f } else { 1.0 - f };
        let dw = |hi: bool| if hi { 1.0 } else { -1.0 };
        let mut corners = [(0usize, 0.0, [0.0; 3]); 8];
        for (ci, corner) in corners.iter_mut().enumerate() {
            let hx = ci & 1 != 0;
            let hy = ci & 2 != 0;
            let hz = ci & 4 != 0;
            let node = shape.node_index(
                idx[0] + hx as usize,
                idx[1] + hy as usize,
                idx[2] + hz as usize,
                0,
            );
            let weight = w(frac[0], hx) * w(frac[1], hy) * w(frac[2], hz);
            let mut grad = [
                dw(hx) * w(frac[1], hy) * w(frac[2], hz) * scale,
                w(frac[0], hx) * dw(hy) * w(frac[2], hz) * scale,
                w(frac[0], hx) * w(frac[1], hy) * dw(hz) * scale,
            ];
            for a in 0..3 {
                if clamped[a] {
                    grad[a] = 0.0;
                }
            }
            *corner = (node, weight, grad);
        }
        GridStencil { corners, clamped }
    }

    pub fn eval(shape: &GridShape, params: &[f64], stencil: &GridStencil, out: &mut [f64]) {
        debug_assert_eq!(out.len(), shape.channels);
        out.fill(0.0);
        for &(node, weight, _) in &stencil.corners {
            for (c, o) in out.iter_mut().enumerate() {
                *o += weight * params[node + c];
            }
        }
    }

    /// Spatial Jacobian: `jac[c][k] = d out_c / d x_k`.
    pub fn jacobian(
        shape: &GridShape,
        params: &[f64],
        stencil: &GridStencil,
        jac: &mut [[f64; 3]],
    ) {
        debug_assert_eq!(jac.len(), shape.channels);
        for row in jac.iter_mut() {
            *row = [0.0; 3];
        }
        for &(node, _, dw) in &stencil.corners {
            for (c, row) in jac.iter_mut().enumerate() {
                let p = params[node + c];
                for (rk, d) in row.iter_mut().zip(dw.iter()) {
                    *rk += d * p;
                }
            }
        }
    }

    /// Accumulate d(sum_c up[c] out_c)/dparams; returns the same scalar's
    /// gradient with respect to x.
    pub fn backward(
        shape: &GridShape,
        params: &[f64],
        stencil: &GridStencil,
        up: &[f64],
        grad_buf: &mut [f64],
    ) -> Vec3 {
        let mut dx = [0.0; 3];
        for &(node, weight, dw) in &stencil.corners {
            for (c, &u) in up.iter().enumerate() {
                if u != 0.0 {
                    grad_buf[node + c] += u * weight;
                    let p = params[node + c];
                    for (d, g) in dx.iter_mut().zip(dw.iter()) {
                        *d += u * g * p;
                    }
                }
            }
        }
        let _ = shape;
        Vec3::from_array(dx)
    }

    /// Accumulate d(sum_ck up_jac[c][k] * J[c][k])/dparams. The Jacobian of a
    /// trilinear grid is linear in the parameters, so this is exact.
    pub fn backward_jacobian(
        shape: &GridShape,
        stencil: &GridStencil,
        up_jac: &[[f64; 3]],
        grad_buf: &mut [f64],
    ) {
        debug_assert_eq!(up_jac.len(), shape.channels);
        for &(node, _, dw) in &stencil.corners {
            for (c, uj) in up_jac.iter().enumerate() {
                let mut acc = 0.0;
                for (u, d) in uj.iter().zip(dw.iter()) {
                    acc += u * d;
                }
                grad_buf[node + c] += acc;
            }
        }
    }

    /// Write an analytic function of position into every node.
    pub fn fill(shape: &GridShape, params: &mut [f64], mut f: impl FnMut(Vec3) -> Vec<f64>) {
        let res = shape.resolution;
        let step = 2.0 / (res - 1) as f64;
        for ix in 0..res {
            for iy in 0..res {
                for iz in 0..res {
                    let p = Vec3 {
                        x: -1.0 + ix as f64 * step,
                        y: -1.0 + iy as f64 * step,
                        z: -1.0 + iz as f64 * step,
                    };
                    let vals = f(p);
                    debug_assert_eq!(vals.len(), shape.channels);
                    let base = shape.node_index(ix, iy, iz, 0);
                    params[base..base + shape.channels].copy_from_slice(&vals);
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::core::math::vec3;

    #[test]
    fn constant_grid_everywhere_constant() {
        let shape = GridShape {
            resolution: 4,
            channels: 1,
        };
        let params = vec![2.5; shape.param_count()];
        let mut out = [0.0];
        for &p in &[
            vec3(0.0, 0.0, 0.0),
            vec3(-1.0, 1.0, 0.3),
            vec3(5.0, -5.0, 0.0), // clamped
        ] {
            let st = Grid::stencil(&shape, p);
            Grid::eval(&shape, &params, &st, &mut out);
            assert!((out[0] - 2.5).abs() < 1e-12);
        }
    }

    #[test]
    fn two_cube_interpolates_center() {
        // corner values 0 at x=-1, 1 at x=+1: center must be 0.5
        let shape = GridShape {
            resolution: 2,
            channels: 1,
        };
        let mut params = vec![0.0; shape.param_count()];
        Grid::fill(&shape, &mut params, |p| vec![if p.x > 0.0 { 1.0 } else { 0.0 }]);
        let st = Grid::stencil(&shape, vec3(0.0, 0.0, 0.0));
        let mut out = [0.0];
        Grid::eval(&shape, &params, &st, &mut out);
        assert!((out[0] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn linear_ramp_has_unit_gradient() {
        let shape = GridShape {
            resolution: 5,
            channels: 1,
        };
        let mut params = vec![0.0; shape.param_count()];
        Grid::fill(&shape, &mut params, |p| vec![p.x]);
        let st = Grid::stencil(&shape, vec3(0.13, -0.4, 0.8));
        let mut jac = [[0.0; 3]];
        Grid::jacobian(&shape, &params, &st, &mut jac);
        assert!((jac[0][0] - 1.0).abs() < 1e-12);
        assert!(jac[0][1].abs() < 1e-12);
        assert!(jac[0][2].abs() < 1e-12);
    }

    #[test]
    fn eval_is_linear_in_params() {
        let shape = GridShape {
            resolution: 3,
            channels: 2,
        };
        let mut rng = crate::core::rng::Rng::new(9);
        let p1: Vec<f64> = (0..shape.param_count()).map(|_| rng.normal()).collect();
        let p2: Vec<f64> = (0..shape.param_count()).map(|_| rng.normal()).collect();
        let (a, b) = (0.7, -1.3);
        let combo: Vec<f64> = p1.iter().zip(p2.iter()).map(|(x, y)| a * x + b * y).collect();
        let x = vec3(0.21, 0.77, -0.35);
        let st = Grid::stencil(&shape, x);
        let mut o1 = [0.0; 2];
        let mut o2 = [0.0; 2];
        let mut oc = [0.0; 2];
        Grid::eval(&shape, &p1, &st, &mut o1);
        Grid::eval(&shape, &p2, &st, &mut o2);
        Grid::eval(&shape, &combo, &st, &mut oc);
        for c in 0..2 {
            assert!((oc[c] - (a * o1[c] + b * o2[c])).abs() < 1e-12);
        }
    }
}
