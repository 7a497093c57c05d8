//! Parameter registry, forward pass, loss and analytic backward pass.

use nalgebra::Vector2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::net::{self, Conv, Tensor};
use super::synth::{canonical_camera, TrainSample};
use super::{EstimatorConfig, Real};
use crate::error::{Error, Result};
use crate::landmarks::LandmarkSet2D;
use crate::mesh::shapes::mean_face;
use crate::mesh::{visibility, FaceMesh, VisibilityMask, VisibilityOptions};
use crate::projection::{grad_wrt_camera, grad_wrt_points, project, CameraParams, Point2, Point3H};
use crate::sampler::{Grid2D, SampleCoord};
use crate::tps::{self, TpsWarp3D};
use crate::Point3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Group {
    Backbone,
    CameraHead,
    TpsHead,
    LandmarkBranch,
    OffsetHeads,
}

impl Group {
    pub const ALL: [Group; 5] = [
        Group::Backbone,
        Group::CameraHead,
        Group::TpsHead,
        Group::LandmarkBranch,
        Group::OffsetHeads,
    ];

    /// Groups trained in the first phase; the rest form the refinement stage.
    pub fn is_upstream(self) -> bool {
        matches!(self, Group::Backbone | Group::CameraHead | Group::TpsHead)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
    pub group: Group,
}

impl ParamSpec {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

/// Which parameter gradients a backward pass produces.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GradScope {
    All,
    /// Landmark branch and offset heads only; upstream entries stay zero.
    Refinement,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Losses {
    pub total: f64,
    pub l3d: f64,
    pub proj: f64,
    pub reg: f64,
}

impl std::ops::AddAssign for Losses {
    fn add_assign(&mut self, o: Losses) {
        self.total += o.total;
        self.l3d += o.l3d;
        self.proj += o.proj;
        self.reg += o.reg;
    }
}

impl Losses {
    pub fn scaled(self, k: f64) -> Losses {
        Losses {
            total: self.total * k,
            l3d: self.l3d * k,
            proj: self.proj * k,
            reg: self.reg * k,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Forward {
    pub camera: CameraParams,
    pub warp: TpsWarp3D,
    /// Projected landmark vertices; visibility flags set when computed.
    pub lm_init: LandmarkSet2D,
    pub lm_refined: LandmarkSet2D,
    pub vertices: Vec<Point3>,
    pub visibility: Option<VisibilityMask>,
}

/// Spec indices of the fixed parameter layout.
#[derive(Debug, Clone)]
struct Ix {
    conv: Vec<(usize, usize)>,
    fc: (usize, usize),
    cam: (usize, usize),
    tps: (usize, usize),
    lm_conv: (usize, usize),
    lm_proj: (usize, usize),
    offset: (usize, usize),
}

/// Quantities derived from the config, rebuilt rather than stored.
#[derive(Debug, Clone)]
struct Aux {
    mesh: FaceMesh,
    /// Row-major `(n + 4) × n` map from control displacements to TPS
    /// parameters.
    interp: Vec<f64>,
    /// Row-major `V × n` vertex displacement per unit control displacement.
    disp_basis: Vec<f64>,
    m: usize,
    nc: usize,
    lm_idx: Vec<usize>,
    /// Canonical camera in the centered image frame, see [`uncenter`].
    cam0c: [f64; 11],
    center: f64,
    cam_scale: [f64; 11],
    convs: Vec<Conv>,
    lm_conv: Conv,
    lm_proj: Conv,
    feat_stride: f64,
    flat: usize,
    ix: Ix,
}

#[derive(Debug, Clone)]
pub struct Model {
    pub config: EstimatorConfig,
    pub specs: Vec<ParamSpec>,
    pub params: Vec<Real>,
    aux: Aux,
}

struct Cache {
    blocks: Vec<Tensor>,
    input: Tensor,
    h: Vec<Real>,
    cam: CameraParams,
    theta: [Vec<f64>; 3],
    vertices: Vec<Point3>,
    lm_pts: Vec<Point3H>,
    lm_init: Vec<Point2>,
    g1: Tensor,
    dmap: Grid2D,
    coords: Vec<SampleCoord>,
    feats: Vec<Vec<Real>>,
    lm_refined: Vec<Point2>,
}

fn to_real(v: &[f64]) -> Vec<Real> {
    v.iter().map(|&x| x as Real).collect()
}

impl Model {
    /// Random backbone and landmark branch; zero camera, TPS and offset
    /// heads, so the untrained model outputs the canonical camera and the
    /// identity warp.
    pub fn new(config: EstimatorConfig) -> Result<Model> {
        config.validate()?;
        let (specs, aux) = layout(&config)?;
        let n = specs.last().map(|s| s.offset + s.len()).unwrap_or(0);
        let mut params = vec![0.0 as Real; n];
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        for s in &specs {
            let zero_init = matches!(s.group, Group::CameraHead | Group::TpsHead | Group::OffsetHeads)
                || s.name.ends_with(".bias");
            if zero_init {
                continue;
            }
            let fan_in: usize = s.shape[1..].iter().product();
            let a = (3.0 / fan_in as f64).sqrt();
            for p in &mut params[s.range()] {
                *p = rng.random_range(-a..a) as Real;
            }
        }
        Ok(Model {
            config,
            specs,
            params,
            aux,
        })
    }

    /// Rebuilds a model from a config and a parameter vector in layout order.
    pub fn from_params(config: EstimatorConfig, params: Vec<Real>) -> Result<Model> {
        let mut m = Model::new(config)?;
        crate::error::check_len("parameters", m.params.len(), params.len())?;
        m.params = params;
        Ok(m)
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    pub fn mesh(&self) -> &FaceMesh {
        &self.aux.mesh
    }

    pub fn initial_camera(&self) -> CameraParams {
        uncenter(&self.aux.cam0c, self.aux.center)
    }

    pub fn spec(&self, name: &str) -> Option<&ParamSpec> {
        self.specs.iter().find(|s| s.name == name)
    }

    /// Parameter-vector indices belonging to `group`.
    pub fn group_indices(&self, group: Group) -> Vec<usize> {
        self.specs
            .iter()
            .filter(|s| s.group == group)
            .flat_map(|s| s.range())
            .collect()
    }

    fn p(&self, k: usize) -> &[Real] {
        &self.params[self.specs[k].range()]
    }

    fn check_image(&self, image: &Grid2D) -> Result<()> {
        let s = self.config.input_size;
        if image.width() != s || image.height() != s || image.channels() != 1 {
            return Err(Error::InvalidArgument(format!(
                "expected a {s}x{s} single-channel image, got {}x{}x{}",
                image.width(),
                image.height(),
                image.channels()
            )));
        }
        Ok(())
    }

    fn run(&self, image: &Grid2D) -> Result<Cache> {
        self.check_image(image)?;
        let a = &self.aux;
        let ix = &a.ix;
        let s = self.config.input_size;
        let input = Tensor {
            h: s,
            w: s,
            c: 1,
            data: to_real(image.data()),
        };
        let mut blocks: Vec<Tensor> = Vec::with_capacity(a.convs.len());
        for (b, conv) in a.convs.iter().enumerate() {
            let x = if b == 0 { &input } else { &blocks[b - 1] };
            let mut y = conv.forward(x, self.p(ix.conv[b].0), self.p(ix.conv[b].1));
            net::tanh_inplace(&mut y.data);
            blocks.push(y);
        }
        let mut h = vec![0.0; self.config.hidden];
        net::dense_forward(self.p(ix.fc.0), self.p(ix.fc.1), &blocks.last().unwrap().data, &mut h);
        net::tanh_inplace(&mut h);

        let mut cam_out = [0.0 as Real; 11];
        net::dense_forward(self.p(ix.cam.0), self.p(ix.cam.1), &h, &mut cam_out);
        let mut ac = a.cam0c;
        for k in 0..11 {
            ac[k] += a.cam_scale[k] * cam_out[k];
        }
        let cam = uncenter(&ac, a.center);
        let mut tps_out = vec![0.0 as Real; 3 * a.nc];
        net::dense_forward(self.p(ix.tps.0), self.p(ix.tps.1), &h, &mut tps_out);
        let disp: [Vec<f64>; 3] =
            std::array::from_fn(|c| tps_out[c * a.nc..(c + 1) * a.nc].iter().map(|&v| v).collect());
        let theta: [Vec<f64>; 3] = std::array::from_fn(|c| {
            (0..a.m)
                .map(|k| {
                    let row = &a.interp[k * a.nc..(k + 1) * a.nc];
                    row.iter().zip(&disp[c]).map(|(x, y)| x * y).sum()
                })
                .collect()
        });

        let vertices: Vec<Point3> = a
            .mesh
            .vertices
            .iter()
            .enumerate()
            .map(|(i, p)| {
                let row = &a.disp_basis[i * a.nc..(i + 1) * a.nc];
                let mut d = Point3::zeros();
                for k in 0..a.nc {
                    d.x += row[k] * disp[0][k];
                    d.y += row[k] * disp[1][k];
                    d.z += row[k] * disp[2][k];
                }
                p + d
            })
            .collect();
        let lm_pts: Vec<Point3H> = a.lm_idx.iter().map(|&i| Point3H(vertices[i])).collect();
        let lm_init = project(&cam, &lm_pts)?;

        let fb = &blocks[self.config.feature_block];
        let mut g1 = a.lm_conv.forward(fb, self.p(ix.lm_conv.0), self.p(ix.lm_conv.1));
        net::tanh_inplace(&mut g1.data);
        let d = a.lm_proj.forward(&g1, self.p(ix.lm_proj.0), self.p(ix.lm_proj.1));
        let dmap = Grid2D::new(d.w, d.h, d.c, d.data.iter().map(|&v| v).collect())?;

        let dim = self.config.feature_dim;
        let ow = self.p(ix.offset.0);
        let ob = self.p(ix.offset.1);
        let mut coords = Vec::with_capacity(lm_init.len());
        let mut feats = Vec::with_capacity(lm_init.len());
        let mut lm_refined = Vec::with_capacity(lm_init.len());
        let mut buf = vec![0.0; dim];
        for (l, p) in lm_init.iter().enumerate() {
            let c = SampleCoord::new(p.x / a.feat_stride, p.y / a.feat_stride);
            dmap.sample_into(c, &mut buf);
            let f = to_real(&buf);
            let w = &ow[l * 2 * dim..(l + 1) * 2 * dim];
            let dx: Real = ob[2 * l] + w[..dim].iter().zip(&f).map(|(a, b)| a * b).sum::<Real>();
            let dy: Real = ob[2 * l + 1] + w[dim..].iter().zip(&f).map(|(a, b)| a * b).sum::<Real>();
            lm_refined.push(Point2::new(p.x + dx as f64, p.y + dy as f64));
            coords.push(c);
            feats.push(f);
        }
        Ok(Cache {
            blocks,
            input,
            h,
            cam,
            theta,
            vertices,
            lm_pts,
            lm_init,
            g1,
            dmap,
            coords,
            feats,
            lm_refined,
        })
    }

    /// Full forward pass including per-vertex visibility.
    pub fn forward(&self, image: &Grid2D) -> Result<Forward> {
        self.forward_opts(image, true)
    }

    pub fn forward_opts(&self, image: &Grid2D, with_visibility: bool) -> Result<Forward> {
        let c = self.run(image)?;
        let scheme = self.config.scheme;
        let vis = if with_visibility {
            Some(visibility(&self.aux.mesh, &c.vertices, &c.cam, VisibilityOptions::default())?)
        } else {
            None
        };
        let flags = match &vis {
            Some(v) => v.select(&self.aux.lm_idx),
            None => vec![true; c.lm_init.len()],
        };
        let [tx, ty, tz] = c.theta;
        Ok(Forward {
            camera: c.cam,
            warp: TpsWarp3D {
                controls: self.aux.mesh.control_points(),
                theta_dx: tx,
                theta_dy: ty,
                theta_dz: tz,
            },
            lm_init: LandmarkSet2D::from_points(scheme, &c.lm_init, &flags)?,
            lm_refined: LandmarkSet2D::from_points(scheme, &c.lm_refined, &flags)?,
            vertices: c.vertices,
            visibility: vis,
        })
    }

    fn check_sample(&self, s: &TrainSample) -> Result<()> {
        let t = &s.true_lm2d;
        if t.scheme != self.config.scheme {
            return Err(Error::SchemeMismatch {
                expected: self.config.scheme.to_string(),
                got: t.scheme.to_string(),
            });
        }
        crate::error::check_len("true landmarks", self.aux.lm_idx.len(), t.len())?;
        if t.points.iter().enumerate().any(|(i, p)| p.id as usize != i) {
            return Err(Error::InvalidArgument("true landmark ids must be 0..n in order".into()));
        }
        crate::error::check_len("true vertices", self.aux.mesh.n_vertices(), s.true_vertices.len())
    }

    /// Landmark supervision weights and their normalizer.
    fn mask(&self, s: &TrainSample) -> (Vec<f64>, f64) {
        let m: Vec<f64> = s
            .true_lm2d
            .points
            .iter()
            .map(|p| if !self.config.visibility_gated || p.visible { 1.0 } else { 0.0 })
            .collect();
        let cnt = m.iter().sum::<f64>();
        (m, cnt)
    }

    fn losses(&self, c: &Cache, s: &TrainSample) -> Losses {
        let cfg = &self.config;
        let v = c.vertices.len() as f64;
        let l3d = cfg.w_3d / v
            * c.vertices
                .iter()
                .zip(&s.true_vertices)
                .map(|(a, b)| (a - b).norm_squared())
                .sum::<f64>();
        let (mask, cnt) = self.mask(s);
        let s2 = (cfg.input_size as f64).powi(2);
        let sq = |pts: &[Point2]| -> f64 {
            if cnt == 0.0 {
                return 0.0;
            }
            pts.iter()
                .zip(&s.true_lm2d.points)
                .zip(&mask)
                .map(|((p, t), m)| m * ((p.x - t.x).powi(2) + (p.y - t.y).powi(2)))
                .sum::<f64>()
                / (cnt * s2)
        };
        let proj = cfg.w_proj * sq(&c.lm_init);
        let reg = cfg.w_reg * sq(&c.lm_refined);
        Losses {
            total: l3d + proj + reg,
            l3d,
            proj,
            reg,
        }
    }

    pub fn loss(&self, s: &TrainSample) -> Result<Losses> {
        self.check_sample(s)?;
        let c = self.run(&s.image)?;
        Ok(self.losses(&c, s))
    }

    /// Loss and its gradient w.r.t. every parameter (layout order).
    pub fn loss_and_grad(&self, s: &TrainSample, scope: GradScope) -> Result<(Losses, Vec<Real>)> {
        self.check_sample(s)?;
        let c = self.run(&s.image)?;
        let losses = self.losses(&c, s);
        let cfg = &self.config;
        let a = &self.aux;
        let ix = &a.ix;
        let mut grad = vec![0.0 as Real; self.params.len()];
        let range = |k: usize| self.specs[k].range();

        let (mask, cnt) = self.mask(s);
        let s2 = (cfg.input_size as f64).powi(2);
        let n_lm = c.lm_init.len();
        let mut g_init = vec![Vector2::<f64>::zeros(); n_lm];
        let mut g_ref = vec![Vector2::<f64>::zeros(); n_lm];
        if cnt > 0.0 {
            for l in 0..n_lm {
                let t = &s.true_lm2d.points[l];
                let k = 2.0 * mask[l] / (cnt * s2);
                g_ref[l] = Vector2::new(c.lm_refined[l].x - t.x, c.lm_refined[l].y - t.y) * (k * cfg.w_reg);
                g_init[l] = Vector2::new(c.lm_init[l].x - t.x, c.lm_init[l].y - t.y) * (k * cfg.w_proj)
                    + g_ref[l];
            }
        }

        // offset heads and sampled features
        let dim = cfg.feature_dim;
        let ow = self.p(ix.offset.0);
        let mut ddmap = vec![0.0f64; a.dmap_len(&c)];
        {
            let (wr, br) = (range(ix.offset.0), range(ix.offset.1));
            for l in 0..n_lm {
                let g = [g_ref[l].x as Real, g_ref[l].y as Real];
                let f = &c.feats[l];
                let w = &ow[l * 2 * dim..(l + 1) * 2 * dim];
                for r in 0..2 {
                    grad[br.start + 2 * l + r] += g[r];
                    let dw = &mut grad[wr.start + (2 * l + r) * dim..][..dim];
                    for (d, fv) in dw.iter_mut().zip(f) {
                        *d += g[r] * fv;
                    }
                }
                let df: Vec<f64> = (0..dim).map(|k| (g[0] * w[k] + g[1] * w[dim + k]) as f64).collect();
                if cfg.feature_position_grad {
                    g_init[l] += c.dmap.coord_grad(c.coords[l], &df) / a.feat_stride;
                }
                c.dmap.accumulate_grid_grad(c.coords[l], &df, &mut ddmap);
            }
        }

        // landmark branch convolutions
        let dd = Tensor {
            h: c.dmap.height(),
            w: c.dmap.width(),
            c: c.dmap.channels(),
            data: to_real(&ddmap),
        };
        let mut dg1 = Tensor::zeros(c.g1.h, c.g1.w, c.g1.c);
        {
            let (w_r, b_r) = (range(ix.lm_proj.0), range(ix.lm_proj.1));
            let (dw, db) = split2(&mut grad, w_r, b_r);
            a.lm_proj.backward(&c.g1, self.p(ix.lm_proj.0), &dd, dw, db, Some(&mut dg1));
        }
        net::tanh_backward(&c.g1.data, &mut dg1.data);
        let fbi = cfg.feature_block;
        let fb = &c.blocks[fbi];
        let mut d_fb = (scope == GradScope::All).then(|| Tensor::zeros(fb.h, fb.w, fb.c));
        {
            let (w_r, b_r) = (range(ix.lm_conv.0), range(ix.lm_conv.1));
            let (dw, db) = split2(&mut grad, w_r, b_r);
            a.lm_conv.backward(fb, self.p(ix.lm_conv.0), &dg1, dw, db, d_fb.as_mut());
        }
        if scope == GradScope::Refinement {
            return Ok((losses, grad));
        }

        // geometry: camera and points
        let dcam = grad_wrt_camera(&c.cam, &c.lm_pts, &g_init)?;
        let dlm = grad_wrt_points(&c.cam, &c.lm_pts, &g_init)?;
        let k3 = 2.0 * cfg.w_3d / c.vertices.len() as f64;
        let mut dv: Vec<Point3> = c
            .vertices
            .iter()
            .zip(&s.true_vertices)
            .map(|(v, t)| (v - t) * k3)
            .collect();
        for (&i, g) in a.lm_idx.iter().zip(&dlm) {
            dv[i] += g;
        }
        let mut dtheta = vec![0.0 as Real; 3 * a.nc];
        {
            let mut acc = vec![0.0f64; 3 * a.nc];
            for (i, g) in dv.iter().enumerate() {
                let row = &a.disp_basis[i * a.nc..(i + 1) * a.nc];
                for k in 0..a.nc {
                    acc[k] += row[k] * g.x;
                    acc[a.nc + k] += row[k] * g.y;
                    acc[2 * a.nc + k] += row[k] * g.z;
                }
            }
            for (d, v) in dtheta.iter_mut().zip(acc) {
                *d = v as Real;
            }
        }
        let dac = center_grad(&dcam, a.center);
        let dcam_out: Vec<Real> = (0..11).map(|k| (dac[k] * a.cam_scale[k]) as Real).collect();

        // heads
        let mut dh = vec![0.0 as Real; cfg.hidden];
        let mut dh2 = vec![0.0 as Real; cfg.hidden];
        {
            let (dw, db) = split2(&mut grad, range(ix.cam.0), range(ix.cam.1));
            net::dense_backward(self.p(ix.cam.0), &c.h, &dcam_out, dw, db, Some(&mut dh));
        }
        {
            let (dw, db) = split2(&mut grad, range(ix.tps.0), range(ix.tps.1));
            net::dense_backward(self.p(ix.tps.0), &c.h, &dtheta, dw, db, Some(&mut dh2));
        }
        dh.iter_mut().zip(&dh2).for_each(|(a, b)| *a += b);
        net::tanh_backward(&c.h, &mut dh);
        let last = c.blocks.last().unwrap();
        let mut dy = Tensor::zeros(last.h, last.w, last.c);
        {
            let (dw, db) = split2(&mut grad, range(ix.fc.0), range(ix.fc.1));
            net::dense_backward(self.p(ix.fc.0), &last.data, &dh, dw, db, Some(&mut dy.data));
        }

        // backbone
        for b in (0..c.blocks.len()).rev() {
            if b == fbi {
                let d = d_fb.take().unwrap();
                dy.data.iter_mut().zip(&d.data).for_each(|(a, b)| *a += b);
            }
            net::tanh_backward(&c.blocks[b].data, &mut dy.data);
            let x = if b == 0 { &c.input } else { &c.blocks[b - 1] };
            let mut dx = (b > 0).then(|| Tensor::zeros(x.h, x.w, x.c));
            let (dw, db) = split2(&mut grad, range(ix.conv[b].0), range(ix.conv[b].1));
            a.convs[b].backward(x, self.p(ix.conv[b].0), &dy, dw, db, dx.as_mut());
            if let Some(dx) = dx {
                dy = dx;
            }
        }
        debug_assert_eq!(a.flat, last.data.len());
        Ok((losses, grad))
    }
}

impl Aux {
    fn dmap_len(&self, c: &Cache) -> usize {
        c.dmap.data().len()
    }
}

// The camera head predicts `M' = T⁻¹ M` with `T = [[1, 0, c], [0, 1, c],
// [0, 0, 1]]`, i.e. with the principal point moved to the origin. Rotations
// then act on separate rows instead of coupling rows 1-2 with row 3.

fn center(cam: &CameraParams, c: f64) -> [f64; 11] {
    let a = &cam.a;
    let r3 = [a[8], a[9], a[10], 1.0];
    let mut out = a.to_owned();
    for k in 0..4 {
        out[k] = a[k] - c * r3[k];
        out[4 + k] = a[4 + k] - c * r3[k];
    }
    out
}

fn uncenter(ac: &[f64; 11], c: f64) -> CameraParams {
    let r3 = [ac[8], ac[9], ac[10], 1.0];
    let mut a = *ac;
    for k in 0..4 {
        a[k] = ac[k] + c * r3[k];
        a[4 + k] = ac[4 + k] + c * r3[k];
    }
    CameraParams::new(a)
}

/// Pulls a gradient w.r.t. `M` back to the centered parameters.
fn center_grad(da: &[f64; 11], c: f64) -> [f64; 11] {
    let mut out = *da;
    for k in 0..3 {
        out[8 + k] += c * (da[k] + da[4 + k]);
    }
    out
}

/// Disjoint mutable views of two non-overlapping ranges.
fn split2(
    v: &mut [Real],
    a: std::ops::Range<usize>,
    b: std::ops::Range<usize>,
) -> (&mut [Real], &mut [Real]) {
    assert!(a.end <= b.start, "ranges must be ordered and disjoint");
    let (lo, hi) = v.split_at_mut(b.start);
    (&mut lo[a], &mut hi[..b.end - b.start])
}

fn layout(cfg: &EstimatorConfig) -> Result<(Vec<ParamSpec>, Aux)> {
    let mesh = mean_face(&cfg.mesh_config());
    if mesh.scheme() != Some(cfg.scheme) {
        return Err(Error::InvalidMesh("mean face lacks the configured landmark scheme".into()));
    }
    let controls = mesh.control_points();
    let nc = controls.len();
    let m = nc + 4;
    let l = tps::interpolation_matrix(&controls)?;
    let interp: Vec<f64> = (0..m).flat_map(|k| (0..nc).map(move |j| (k, j))).map(|(k, j)| l[(k, j)]).collect();
    let mut disp_basis = vec![0.0; mesh.n_vertices() * nc];
    let mut phi = vec![0.0; m];
    for (i, p) in mesh.vertices.iter().enumerate() {
        tps::basis_row(&controls, p, &mut phi);
        for j in 0..nc {
            disp_basis[i * nc + j] = (0..m).map(|k| phi[k] * interp[k * nc + j]).sum();
        }
    }
    let lm_idx = mesh.landmark_indices();
    let n_lm = lm_idx.len();

    let mut specs = Vec::new();
    let mut offset = 0;
    let mut push = |name: String, shape: Vec<usize>, group: Group| -> usize {
        let s = ParamSpec {
            name,
            shape,
            offset,
            group,
        };
        offset += s.len();
        specs.push(s);
        specs.len() - 1
    };

    let mut convs = Vec::new();
    let mut conv_ix = Vec::new();
    let (mut cin, mut side) = (1, cfg.input_size);
    let mut sides = Vec::new();
    for (b, (&cout, &stride)) in cfg.channels.iter().zip(&cfg.strides).enumerate() {
        let conv = Conv {
            cin,
            cout,
            k: 3,
            stride,
        };
        let w = push(format!("conv{b}.weight"), vec![cout, 3, 3, cin], Group::Backbone);
        let bb = push(format!("conv{b}.bias"), vec![cout], Group::Backbone);
        conv_ix.push((w, bb));
        side = conv.out_size(side);
        sides.push((side, cout));
        convs.push(conv);
        cin = cout;
    }
    let flat = side * side * cin;
    let fc = (
        push("fc.weight".into(), vec![cfg.hidden, flat], Group::Backbone),
        push("fc.bias".into(), vec![cfg.hidden], Group::Backbone),
    );
    let cam = (
        push("camera.weight".into(), vec![11, cfg.hidden], Group::CameraHead),
        push("camera.bias".into(), vec![11], Group::CameraHead),
    );
    let tps_ix = (
        push("tps.weight".into(), vec![3 * nc, cfg.hidden], Group::TpsHead),
        push("tps.bias".into(), vec![3 * nc], Group::TpsHead),
    );
    let fb_ch = sides[cfg.feature_block].1;
    let lm_conv = Conv {
        cin: fb_ch,
        cout: cfg.lm_hidden,
        k: 3,
        stride: 1,
    };
    let lm_proj = Conv {
        cin: cfg.lm_hidden,
        cout: cfg.feature_dim,
        k: 1,
        stride: 1,
    };
    let lm_conv_ix = (
        push("lm_conv.weight".into(), vec![cfg.lm_hidden, 3, 3, fb_ch], Group::LandmarkBranch),
        push("lm_conv.bias".into(), vec![cfg.lm_hidden], Group::LandmarkBranch),
    );
    let lm_proj_ix = (
        push(
            "lm_proj.weight".into(),
            vec![cfg.feature_dim, 1, 1, cfg.lm_hidden],
            Group::LandmarkBranch,
        ),
        push("lm_proj.bias".into(), vec![cfg.feature_dim], Group::LandmarkBranch),
    );
    let offset_ix = (
        push("offset.weight".into(), vec![n_lm, 2, cfg.feature_dim], Group::OffsetHeads),
        push("offset.bias".into(), vec![n_lm, 2], Group::OffsetHeads),
    );

    let fd = cfg.init_focal / cfg.init_distance;
    let shift = cfg.input_size as f64 / 16.0;
    let r3 = 1.0 / cfg.init_distance;
    let cam_scale = [fd, fd, fd, shift, fd, fd, fd, shift, r3, r3, r3];
    let c = (cfg.input_size as f64 - 1.0) / 2.0;
    let aux = Aux {
        mesh,
        interp,
        disp_basis,
        m,
        nc,
        lm_idx,
        cam0c: center(&canonical_camera(cfg), c),
        center: c,
        cam_scale,
        convs,
        lm_conv,
        lm_proj,
        feat_stride: cfg.stride_upto(cfg.feature_block) as f64,
        flat,
        ix: Ix {
            conv: conv_ix,
            fc,
            cam,
            tps: tps_ix,
            lm_conv: lm_conv_ix,
            lm_proj: lm_proj_ix,
            offset: offset_ix,
        },
    };
    Ok((specs, aux))
}
