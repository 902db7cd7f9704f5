//! SDF queries, surface localization, the differentiable surface-point
//! reparameterization, and mesh export.
//!
//! Geometry is either a learned [`Field`] (channel 0 = signed distance,
//! remaining channels = local geometric feature) or an exact closed-form SDF
//! used by oracle scenes and ground-truth configurations.

use std::collections::HashMap;
use std::io::Write as _;
use std::path::Path;

use crate::core::error::{Error, Result};
use crate::core::math::{vec3, Ray, Vec3};
use crate::fields::{Field, FieldCache};

/// Closed-form signed distance functions for oracle scenes.
#[derive(Debug, Clone)]
pub enum AnalyticSdf {
    Sphere { center: Vec3, radius: f64 },
    /// Half-space: `s = n . x - offset`, negative behind the plane.
    Plane { normal: Vec3, offset: f64 },
    Box { center: Vec3, half: Vec3 },
    Union(Vec<AnalyticSdf>),
    Intersection(Vec<AnalyticSdf>),
    Complement(Box<AnalyticSdf>),
}

impl AnalyticSdf {
    pub fn value(&self, x: Vec3) -> f64 {
        self.value_grad(x).0
    }

    /// Signed distance and its spatial gradient (subgradient at CSG ties).
    pub fn value_grad(&self, x: Vec3) -> (f64, Vec3) {
        match self {
            AnalyticSdf::Sphere { center, radius } => {
                let d = x - *center;
                let n = d.norm();
                if n < 1e-12 {
                    (-radius, vec3(1.0, 0.0, 0.0))
                } else {
                    (n - radius, d / n)
                }
            }
            AnalyticSdf::Plane { normal, offset } => (x.dot(*normal) - offset, *normal),
            AnalyticSdf::Box { center, half } => {
                let p = x - *center;
                let q = p.abs() - *half;
                let outside = q.max_comp(Vec3::ZERO);
                let out_norm = outside.norm();
                let inside = q.max_element().min(0.0);
                let value = out_norm + inside;
                let grad = if out_norm > 1e-12 {
                    let g = outside / out_norm;
                    vec3(g.x * p.x.signum(), g.y * p.y.signum(), g.z * p.z.signum())
                } else {
                    // inside: gradient along the closest face axis
                    let mut axis = 0;
                    let mut best = q.x;
                    if q.y > best {
                        axis = 1;
                        best = q.y;
                    }
                    if q.z > best {
                        axis = 2;
                    }
                    match axis {
                        0 => vec3(p.x.signum(), 0.0, 0.0),
                        1 => vec3(0.0, p.y.signum(), 0.0),
                        _ => vec3(0.0, 0.0, p.z.signum()),
                    }
                };
                (value, grad)
            }
            AnalyticSdf::Union(parts) => {
                let mut best = (f64::INFINITY, Vec3::ZERO);
                for p in parts {
                    let vg = p.value_grad(x);
                    if vg.0 < best.0 {
                        best = vg;
                    }
                }
                best
            }
            AnalyticSdf::Intersection(parts) => {
                let mut best = (f64::NEG_INFINITY, Vec3::ZERO);
                for p in parts {
                    let vg = p.value_grad(x);
                    if vg.0 > best.0 {
                        best = vg;
                    }
                }
                best
            }
            AnalyticSdf::Complement(inner) => {
                let (v, g) = inner.value_grad(x);
                (-v, -g)
            }
        }
    }
}

/// Scene geometry: learned field or exact closed form.
#[derive(Debug, Clone)]
pub enum SdfScene {
    Analytic(AnalyticSdf),
    Learned(Field),
}

/// Backward state of a single SDF evaluation.
pub enum SdfCache {
    Analytic { grad: Vec3 },
    Learned(FieldCache),
}

impl SdfScene {
    pub fn f_geo_dim(&self) -> usize {
        match self {
            SdfScene::Analytic(_) => 0,
            SdfScene::Learned(f) => f.spec.output_dim - 1,
        }
    }

    pub fn param_len(&self) -> usize {
        match self {
            SdfScene::Analytic(_) => 0,
            SdfScene::Learned(f) => f.params.len(),
        }
    }

    pub fn field(&self) -> Option<&Field> {
        match self {
            SdfScene::Analytic(_) => None,
            SdfScene::Learned(f) => Some(f),
        }
    }

    pub fn field_mut(&mut self) -> Option<&mut Field> {
        match self {
            SdfScene::Analytic(_) => None,
            SdfScene::Learned(f) => Some(f),
        }
    }

    /// Signed distance only (fast path for tracing).
    pub fn value(&self, x: Vec3) -> f64 {
        match self {
            SdfScene::Analytic(a) => a.value(x),
            SdfScene::Learned(f) => f.eval(x, &[]).expect("sdf field eval")[0],
        }
    }

    /// Signed distance and local geometric feature.
    pub fn eval(&self, x: Vec3) -> (f64, Vec<f64>) {
        match self {
            SdfScene::Analytic(a) => (a.value(x), Vec::new()),
            SdfScene::Learned(f) => {
                let out = f.eval(x, &[]).expect("sdf field eval");
                (out[0], out[1..].to_vec())
            }
        }
    }

    /// Spatial gradient of the signed distance.
    pub fn grad(&self, x: Vec3) -> Vec3 {
        match self {
            SdfScene::Analytic(a) => a.value_grad(x).1,
            SdfScene::Learned(f) => {
                let jac = f.grad_input(x, &[]).expect("sdf field grad");
                Vec3::from_array(jac[0])
            }
        }
    }

    /// Value plus a cache for [`SdfScene::backward_value`].
    pub fn value_cached(&self, x: Vec3) -> (f64, SdfCache) {
        match self {
            SdfScene::Analytic(a) => {
                let (v, g) = a.value_grad(x);
                (v, SdfCache::Analytic { grad: g })
            }
            SdfScene::Learned(f) => {
                let (out, cache) = f.eval_cached(x, &[]).expect("sdf field eval");
                (out[0], SdfCache::Learned(cache))
            }
        }
    }

    /// Accumulate `d(up_s * s)/dparams` into `grad_buf` (no-op for analytic
    /// geometry) and return `d(up_s * s)/dx`.
    pub fn backward_value(&self, cache: &SdfCache, up_s: f64, grad_buf: &mut [f64]) -> Vec3 {
        match (self, cache) {
            (SdfScene::Analytic(_), SdfCache::Analytic { grad }) => *grad * up_s,
            (SdfScene::Learned(f), SdfCache::Learned(c)) => {
                let mut up = vec![0.0; f.spec.output_dim];
                up[0] = up_s;
                f.backward(c, &up, grad_buf).0
            }
            _ => unreachable!("cache/scene mismatch"),
        }
    }

    /// Value, feature, and spatial gradient with a jacobian-carrying cache
    /// for [`SdfScene::backward_full`].
    pub fn eval_jacobian(&self, x: Vec3) -> (f64, Vec<f64>, Vec3, SdfCache) {
        match self {
            SdfScene::Analytic(a) => {
                let (v, g) = a.value_grad(x);
                (v, Vec::new(), g, SdfCache::Analytic { grad: g })
            }
            SdfScene::Learned(f) => {
                let (out, jac, cache) = f.eval_with_jacobian(x, &[]).expect("sdf field eval");
                (
                    out[0],
                    out[1..].to_vec(),
                    Vec3::from_array(jac[0]),
                    SdfCache::Learned(cache),
                )
            }
        }
    }

    /// Accumulate gradients of
    /// `up_s * s + up_fgeo . f_geo + up_grad . grad s`
    /// into `grad_buf`. The evaluation point is parameter-independent.
    /// No-op for analytic geometry.
    pub fn backward_full(
        &self,
        cache: &SdfCache,
        up_s: f64,
        up_fgeo: &[f64],
        up_grad: Vec3,
        grad_buf: &mut [f64],
    ) {
        match (self, cache) {
            (SdfScene::Analytic(_), _) => {}
            (SdfScene::Learned(f), SdfCache::Learned(c)) => {
                let dim = f.spec.output_dim;
                let mut up = vec![0.0; dim];
                up[0] = up_s;
                for (u, v) in up[1..].iter_mut().zip(up_fgeo.iter()) {
                    *u = *v;
                }
                let mut up_jac = vec![[0.0; 3]; dim];
                up_jac[0] = up_grad.to_array();
                f.backward_with_jacobian(c, &up, &up_jac, grad_buf);
            }
            _ => unreachable!("cache/scene mismatch"),
        }
    }

    /// Unit surface normal `grad s / |grad s|`.
    pub fn normal_at(&self, x: Vec3) -> Result<Vec3> {
        let g = self.grad(x);
        let n = g.norm();
        if n <= 1e-8 {
            return Err(Error::DegenerateGradient {
                x: x.x,
                y: x.y,
                z: x.z,
                norm: n,
            });
        }
        Ok(g / n)
    }
}

/// A converged ray-surface intersection.
#[derive(Debug, Clone, Copy)]
pub struct SurfaceHit {
    pub x: Vec3,
    /// Unit normal `normalize(grad s)` at `x`.
    pub n: Vec3,
    pub t: f64,
    pub converged: bool,
    pub steps: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct TraceOptions {
    pub max_steps: usize,
    pub tolerance: f64,
    /// Under-relaxation of the SDF step, tolerating learned fields whose
    /// gradient norm is near but not exactly 1.
    pub step_scale: f64,
}

impl Default for TraceOptions {
    fn default() -> Self {
        TraceOptions {
            max_steps: 128,
            tolerance: 1e-5,
            step_scale: 0.9,
        }
    }
}

/// Offset applied along the normal when casting secondary/shadow rays.
pub const SURFACE_EPS: f64 = 1e-3;

/// Sphere tracing. Returns a converged hit (`|s| <= tolerance`) or `None`;
/// a non-converged state is always reported as a miss.
pub fn sphere_trace(
    scene: &SdfScene,
    ray: &Ray,
    t_min: f64,
    t_max: f64,
    opts: &TraceOptions,
) -> Option<SurfaceHit> {
    debug_assert!(t_min < t_max);
    let mut t = t_min;
    let mut s = scene.value(ray.at(t));
    if s < -opts.tolerance {
        return None; // starting inside geometry
    }
    let mut steps = 1;
    let mut t_outside = t;
    while steps < opts.max_steps {
        if s.abs() <= opts.tolerance {
            return finish_hit(scene, ray, t, steps);
        }
        if s < 0.0 {
            // overshot: bisect between the last outside point and here
            let mut lo = t_outside;
            let mut hi = t;
            while steps < opts.max_steps {
                let mid = 0.5 * (lo + hi);
                let sm = scene.value(ray.at(mid));
                steps += 1;
                if sm.abs() <= opts.tolerance {
                    return finish_hit(scene, ray, mid, steps);
                }
                if sm > 0.0 {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            return None;
        }
        t_outside = t;
        t += opts.step_scale * s;
        if t > t_max {
            return None;
        }
        s = scene.value(ray.at(t));
        steps += 1;
    }
    None
}

fn finish_hit(scene: &SdfScene, ray: &Ray, t: f64, steps: usize) -> Option<SurfaceHit> {
    let x = ray.at(t);
    let n = scene.normal_at(x).ok()?;
    Some(SurfaceHit {
        x,
        n,
        t,
        converged: true,
        steps,
    })
}

/// Differentiable surface point.
///
/// `x_theta = x - n * s(x)` with `x` and `n` held constant for the pass, so
/// the parameter gradient is exactly `-n * d s(x)/d theta`.
pub struct ReparamPoint {
    pub value: Vec3,
    pub n: Vec3,
    cache: SdfCache,
}

pub fn reparam_surface_point(scene: &SdfScene, hit: &SurfaceHit) -> ReparamPoint {
    debug_assert!(hit.converged);
    let (s, cache) = scene.value_cached(hit.x);
    ReparamPoint {
        value: hit.x - hit.n * s,
        n: hit.n,
        cache,
    }
}

impl ReparamPoint {
    /// Accumulate `d(up . x_theta)/dparams` into `grad_buf`.
    pub fn backward(&self, scene: &SdfScene, up: Vec3, grad_buf: &mut [f64]) {
        let up_s = -up.dot(self.n);
        if up_s != 0.0 {
            scene.backward_value(&self.cache, up_s, grad_buf);
        }
    }
}

/// Triangle mesh with per-vertex normals.
#[derive(Debug, Clone, Default)]
pub struct Mesh {
    pub positions: Vec<Vec3>,
    pub normals: Vec<Vec3>,
    pub triangles: Vec<[u32; 3]>,
}

impl Mesh {
    pub fn write_obj(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        if let Some(parent) = path.parent() {
            if !parent.as_os_str().is_empty() {
                std::fs::create_dir_all(parent)
                    .map_err(|e| Error::io(format!("creating {}", parent.display()), e))?;
            }
        }
        let mut out = std::io::BufWriter::new(
            std::fs::File::create(path)
                .map_err(|e| Error::io(format!("creating {}", path.display()), e))?,
        );
        let werr = |e| Error::io(format!("writing {}", path.display()), e);
        for p in &self.positions {
            writeln!(out, "v {} {} {}", p.x, p.y, p.z).map_err(werr)?;
        }
        for n in &self.normals {
            writeln!(out, "vn {} {} {}", n.x, n.y, n.z).map_err(werr)?;
        }
        for t in &self.triangles {
            writeln!(
                out,
                "f {}//{} {}//{} {}//{}",
                t[0] + 1,
                t[0] + 1,
                t[1] + 1,
                t[1] + 1,
                t[2] + 1,
                t[2] + 1
            )
            .map_err(werr)?;
        }
        Ok(())
    }
}

// The six tetrahedra of a cube around the 0-6 diagonal, by corner index.
const CUBE_TETS: [[usize; 4]; 6] = [
    [0, 5, 1, 6],
    [0, 1, 2, 6],
    [0, 2, 3, 6],
    [0, 3, 7, 6],
    [0, 7, 4, 6],
    [0, 4, 5, 6],
];

/// Extract the zero level set over the unit box `[-1, 1]^3` by marching
/// tetrahedra on a `resolution^3` sample grid. Vertices on shared edges are
/// deduplicated, so the mesh is watertight.
pub fn extract_mesh(scene: &SdfScene, resolution: usize) -> Result<Mesh> {
    assert!(resolution >= 8, "mesh resolution must be >= 8");
    let res = resolution;
    let step = 2.0 / (res - 1) as f64;
    let coord = |i: usize| -1.0 + i as f64 * step;

    // sample the SDF once per grid node
    let mut values = vec![0.0f64; res * res * res];
    let node = |ix: usize, iy: usize, iz: usize| (ix * res + iy) * res + iz;
    for ix in 0..res {
        for iy in 0..res {
            for iz in 0..res {
                values[node(ix, iy, iz)] = scene.value(vec3(coord(ix), coord(iy), coord(iz)));
            }
        }
    }

    let mut mesh = Mesh::default();
    let mut edge_vertex: HashMap<(usize, usize), u32> = HashMap::new();

    let corner_offsets = [
        (0, 0, 0),
        (1, 0, 0),
        (1, 1, 0),
        (0, 1, 0),
        (0, 0, 1),
        (1, 0, 1),
        (1, 1, 1),
        (0, 1, 1),
    ];

    let mut vertex_on_edge = |mesh: &mut Mesh, a: usize, b: usize, va: f64, vb: f64| -> u32 {
        let key = if a < b { (a, b) } else { (b, a) };
        if let Some(&idx) = edge_vertex.get(&key) {
            return idx;
        }
        let point_of = |i: usize| {
            let ix = i / (res * res);
            let iy = (i / res) % res;
            let iz = i % res;
            vec3(coord(ix), coord(iy), coord(iz))
        };
        let pa = point_of(a);
        let pb = point_of(b);
        let t = if (vb - va).abs() < 1e-30 {
            0.5
        } else {
            (-va / (vb - va)).clamp(0.0, 1.0)
        };
        let p = pa + (pb - pa) * t;
        let n = scene.normal_at(p).unwrap_or_else(|_| vec3(0.0, 0.0, 1.0));
        let idx = mesh.positions.len() as u32;
        mesh.positions.push(p);
        mesh.normals.push(n);
        edge_vertex.insert(key, idx);
        idx
    };

    let emit = |mesh: &mut Mesh, tri: [u32; 3]| {
        if tri[0] == tri[1] || tri[1] == tri[2] || tri[0] == tri[2] {
            return;
        }
        // orient with the outward gradient
        let p0 = mesh.positions[tri[0] as usize];
        let p1 = mesh.positions[tri[1] as usize];
        let p2 = mesh.positions[tri[2] as usize];
        let face = (p1 - p0).cross(p2 - p0);
        let g = mesh.normals[tri[0] as usize]
            + mesh.normals[tri[1] as usize]
            + mesh.normals[tri[2] as usize];
        if face.dot(g) < 0.0 {
            mesh.triangles.push([tri[0], tri[2], tri[1]]);
        } else {
            mesh.triangles.push(tri);
        }
    };

    for ix in 0..res - 1 {
        for iy in 0..res - 1 {
            for iz in 0..res - 1 {
                let corners: Vec<usize> = corner_offsets
                    .iter()
                    .map(|&(dx, dy, dz)| node(ix + dx, iy + dy, iz + dz))
                    .collect();
                for tet in &CUBE_TETS {
                    let idx = [
                        corners[tet[0]],
                        corners[tet[1]],
                        corners[tet[2]],
                        corners[tet[3]],
                    ];
                    let v = [
                        values[idx[0]],
                        values[idx[1]],
                        values[idx[2]],
                        values[idx[3]],
                    ];
                    let inside: Vec<usize> = (0..4).filter(|&i| v[i] < 0.0).collect();
                    let outs: Vec<usize> = (0..4).filter(|&i| v[i] >= 0.0).collect();
                    match inside.len() {
                        0 | 4 => {}
                        1 => {
                            let a = inside[0];
                            let tri = [
                                vertex_on_edge(&mut mesh, idx[a], idx[outs[0]], v[a], v[outs[0]]),
                                vertex_on_edge(&mut mesh, idx[a], idx[outs[1]], v[a], v[outs[1]]),
                                vertex_on_edge(&mut mesh, idx[a], idx[outs[2]], v[a], v[outs[2]]),
                            ];
                            emit(&mut mesh, tri);
                        }
                        3 => {
                            let a = outs[0];
                            let tri = [
                                vertex_on_edge(&mut mesh, idx[a], idx[inside[0]], v[a], v[inside[0]]),
                                vertex_on_edge(&mut mesh, idx[a], idx[inside[1]], v[a], v[inside[1]]),
                                vertex_on_edge(&mut mesh, idx[a], idx[inside[2]], v[a], v[inside[2]]),
                            ];
                            emit(&mut mesh, tri);
                        }
                        2 => {
                            let (a, b) = (inside[0], inside[1]);
                            let (c, d) = (outs[0], outs[1]);
                            let vac = vertex_on_edge(&mut mesh, idx[a], idx[c], v[a], v[c]);
                            let vad = vertex_on_edge(&mut mesh, idx[a], idx[d], v[a], v[d]);
                            let vbc = vertex_on_edge(&mut mesh, idx[b], idx[c], v[b], v[c]);
                            let vbd = vertex_on_edge(&mut mesh, idx[b], idx[d], v[b], v[d]);
                            emit(&mut mesh, [vac, vad, vbd]);
                            emit(&mut mesh, [vac, vbd, vbc]);
                        }
                        _ => unreachable!(),
                    }
                }
            }
        }
    }

    if mesh.triangles.is_empty() {
        return Err(Error::EmptyLevelSet);
    }
    Ok(mesh)
}
