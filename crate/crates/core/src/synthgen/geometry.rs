//! Spatial augmentations and the record that replays them.
//!
//! Every geometric stage is captured as a [`GeoStep`]; the same step is
//! applied to the image (trilinear), the posterior stack (trilinear, then
//! renormalised) and label maps (nearest neighbour).

use std::sync::Arc;

use nalgebra::{Matrix4, Vector4};
use serde::Serialize;

use crate::error::Result;
use crate::morphology::BinaryMask;
use crate::rngkit::RngStream;
use crate::synthgen::config::{AffineConfig, ElasticConfig};
use crate::synthgen::fields::ControlLattice;
use crate::volgrid::{
    warp, warp_labels, AffineTransform, Grid, Interp, LabelVolume, PosteriorStack, Volume,
};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AffineParams {
    pub rotation_deg: [f64; 3],
    /// `[xy, xz, yx, yz, zx, zy]`.
    pub shear: [f64; 6],
    pub zoom: [f64; 3],
}

impl AffineParams {
    pub fn identity() -> Self {
        Self {
            rotation_deg: [0.0; 3],
            shear: [0.0; 6],
            zoom: [1.0; 3],
        }
    }

    pub fn draw(cfg: &AffineConfig, s: &mut RngStream) -> Result<Self> {
        let mut p = Self::identity();
        for r in &mut p.rotation_deg {
            *r = cfg.rotation_deg.draw(s)?;
        }
        for v in &mut p.shear {
            *v = cfg.shear.draw(s)?;
        }
        for z in &mut p.zoom {
            *z = cfg.zoom.draw(s)?;
        }
        Ok(p)
    }

    /// World-space transform about the centre of `grid`.
    pub fn transform(&self, grid: &Grid) -> AffineTransform {
        AffineTransform::from_params(self.rotation_deg, self.shear, self.zoom, grid.center_world())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ElasticParams {
    /// Fraction of the largest grid extent.
    pub max_displacement: f64,
    pub control_points: usize,
}

impl ElasticParams {
    pub fn draw(cfg: &ElasticConfig, s: &mut RngStream) -> Result<Self> {
        let max_displacement = cfg.max_displacement.draw(s)?;
        let control_points = cfg.control_points.draw(s).max(2) as usize;
        Ok(Self {
            max_displacement,
            control_points,
        })
    }
}

/// Dense displacement in voxel units, one component per axis.
#[derive(Debug, Clone, PartialEq)]
pub struct DisplacementField {
    shape: [usize; 3],
    d: [Vec<f32>; 3],
}

impl DisplacementField {
    /// Smooth random field whose largest vector norm equals
    /// `max_displacement * max(shape)` voxels. `None` when that is zero.
    pub fn random(grid: &Grid, p: &ElasticParams, s: &mut RngStream) -> Result<Option<Self>> {
        let extent = *grid.shape.iter().max().unwrap_or(&0) as f64;
        let target = p.max_displacement * extent;
        if !(target > 0.0) {
            return Ok(None);
        }
        let cp = p.control_points.max(2);
        let mut comps = Vec::with_capacity(3);
        for _ in 0..3 {
            comps.push(ControlLattice::random([cp; 3], -1.0, 1.0, s)?.evaluate(grid).into_data());
        }
        let max_norm = (0..grid.len())
            .map(|i| (comps[0][i].powi(2) + comps[1][i].powi(2) + comps[2][i].powi(2)).sqrt())
            .fold(0.0, f64::max);
        if !(max_norm > 0.0) {
            return Ok(None);
        }
        let scale = target / max_norm;
        let d = [0, 1, 2].map(|a| comps[a].iter().map(|v| (v * scale) as f32).collect());
        Ok(Some(Self {
            shape: grid.shape,
            d,
        }))
    }

    pub fn shape(&self) -> [usize; 3] {
        self.shape
    }

    pub fn at(&self, idx: usize) -> [f64; 3] {
        [0, 1, 2].map(|a| self.d[a][idx] as f64)
    }

    pub fn max_norm(&self) -> f64 {
        (0..self.d[0].len())
            .map(|i| {
                let [a, b, c] = self.at(i);
                (a * a + b * b + c * c).sqrt()
            })
            .fold(0.0, f64::max)
    }
}

/// One recorded geometric operation.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GeoStep {
    Affine {
        params: AffineParams,
        /// Source world to output world.
        matrix: [[f64; 4]; 4],
    },
    Elastic {
        params: ElasticParams,
        #[serde(skip)]
        field: Option<Arc<DisplacementField>>,
    },
    Flip {
        axes: [bool; 3],
    },
    Crop {
        offset: [isize; 3],
        size: [usize; 3],
    },
}

enum Pull<'a> {
    Matrix(Matrix4<f64>),
    Disp(&'a DisplacementField),
}

impl Pull<'_> {
    #[inline]
    fn coord(&self, shape: [usize; 3], [x, y, z]: [usize; 3]) -> [f64; 3] {
        match self {
            Pull::Matrix(m) => {
                let p = m * Vector4::new(x as f64, y as f64, z as f64, 1.0);
                [p[0], p[1], p[2]]
            }
            Pull::Disp(d) => {
                let [dx, dy, dz] = d.at(x + shape[0] * (y + shape[1] * z));
                [x as f64 + dx, y as f64 + dy, z as f64 + dz]
            }
        }
    }
}

impl GeoStep {
    pub fn affine(grid: &Grid, params: AffineParams) -> Self {
        let matrix = params.transform(grid).to_rows();
        GeoStep::Affine { params, matrix }
    }

    pub fn elastic(grid: &Grid, params: ElasticParams, s: &mut RngStream) -> Result<Self> {
        let field = DisplacementField::random(grid, &params, s)?.map(Arc::new);
        Ok(GeoStep::Elastic { params, field })
    }

    /// `None` for steps that are exact identities.
    fn pull(&self, grid: &Grid) -> Result<Option<Pull<'_>>> {
        match self {
            GeoStep::Affine { matrix, .. } => {
                let t = AffineTransform::from_matrix(Matrix4::from_fn(|r, c| matrix[r][c]))?;
                if *t.matrix() == Matrix4::identity() {
                    return Ok(None);
                }
                let inv = t.inverse()?;
                Ok(Some(Pull::Matrix(grid.world_to_voxel() * inv.matrix() * grid.voxel_to_world())))
            }
            GeoStep::Elastic { field, .. } => match field {
                Some(f) => {
                    if f.shape != grid.shape {
                        return Err(crate::error::Error::GridMismatch(format!(
                            "displacement field {:?} vs grid {:?}",
                            f.shape, grid.shape
                        )));
                    }
                    Ok(Some(Pull::Disp(f)))
                }
                None => Ok(None),
            },
            _ => Ok(None),
        }
    }

    pub fn apply_volume(&self, vol: &Volume, interp: Interp, fill: f64) -> Result<Volume> {
        match self {
            GeoStep::Flip { axes } => Ok(vol.flip(*axes)),
            GeoStep::Crop { offset, size } => vol.extract(*offset, *size, fill),
            _ => match self.pull(vol.grid())? {
                None => Ok(vol.clone()),
                Some(p) => {
                    let shape = vol.shape();
                    warp(vol, vol.grid(), interp, fill, |i| p.coord(shape, i))
                }
            },
        }
    }

    pub fn apply_labels(&self, labels: &LabelVolume) -> Result<LabelVolume> {
        match self {
            GeoStep::Flip { axes } => Ok(labels.flip(*axes)),
            GeoStep::Crop { offset, size } => labels.extract(*offset, *size, 0),
            _ => match self.pull(labels.grid())? {
                None => Ok(labels.clone()),
                Some(p) => {
                    let shape = labels.shape();
                    warp_labels(labels, labels.grid(), 0, |i| p.coord(shape, i))
                }
            },
        }
    }

    pub fn apply_mask(&self, mask: &BinaryMask) -> Result<BinaryMask> {
        Ok(self.apply_labels(&mask.map(u32::from))?.map(|v| v != 0))
    }

    /// Trilinear per class with zero fill, then renormalised.
    pub fn apply_stack(&self, stack: &PosteriorStack) -> Result<PosteriorStack> {
        let classes = stack.classes().to_vec();
        match self {
            GeoStep::Flip { axes } => {
                let vols = stack.volumes().iter().map(|v| v.flip(*axes)).collect();
                PosteriorStack::renormalized(classes, vols)
            }
            GeoStep::Crop { offset, size } => {
                let vols = stack
                    .volumes()
                    .iter()
                    .map(|v| v.extract(*offset, *size, 0.0))
                    .collect::<Result<_>>()?;
                PosteriorStack::renormalized(classes, vols)
            }
            _ => {
                let grid = stack.grid().clone();
                let Some(p) = self.pull(&grid)? else {
                    return Ok(stack.clone());
                };
                let shape = grid.shape;
                let vols = stack
                    .volumes()
                    .iter()
                    .map(|v| warp(v, &grid, Interp::Trilinear, 0.0, |i| p.coord(shape, i)))
                    .collect::<Result<_>>()?;
                PosteriorStack::renormalized(classes, vols)
            }
        }
    }
}

/// Ordered geometric steps applied by one generated sample.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct GeometryRecord {
    pub steps: Vec<GeoStep>,
}

impl GeometryRecord {
    pub fn push(&mut self, step: GeoStep) {
        self.steps.push(step);
    }

    pub fn apply_volume(&self, vol: &Volume, interp: Interp, fill: f64) -> Result<Volume> {
        let mut v = vol.clone();
        for st in &self.steps {
            v = st.apply_volume(&v, interp, fill)?;
        }
        Ok(v)
    }

    pub fn apply_labels(&self, labels: &LabelVolume) -> Result<LabelVolume> {
        let mut l = labels.clone();
        for st in &self.steps {
            l = st.apply_labels(&l)?;
        }
        Ok(l)
    }

    pub fn apply_mask(&self, mask: &BinaryMask) -> Result<BinaryMask> {
        Ok(self.apply_labels(&mask.map(u32::from))?.map(|v| v != 0))
    }

    pub fn apply_stack(&self, stack: &PosteriorStack) -> Result<PosteriorStack> {
        let mut s = stack.clone();
        for st in &self.steps {
            s = st.apply_stack(&s)?;
        }
        Ok(s)
    }
}

/// Draws and applies an affine to an image and its stack.
pub fn random_affine(
    img: &Volume,
    stack: &PosteriorStack,
    cfg: &AffineConfig,
    s: &mut RngStream,
) -> Result<(Volume, PosteriorStack, GeoStep)> {
    img.ensure_same_grid(&stack.volumes()[0], "image vs stack")?;
    let step = GeoStep::affine(img.grid(), AffineParams::draw(cfg, s)?);
    Ok((
        step.apply_volume(img, Interp::Trilinear, 0.0)?,
        step.apply_stack(stack)?,
        step,
    ))
}

/// Draws and applies an elastic deformation to an image and its stack.
pub fn random_elastic(
    img: &Volume,
    stack: &PosteriorStack,
    cfg: &ElasticConfig,
    s: &mut RngStream,
) -> Result<(Volume, PosteriorStack, GeoStep)> {
    img.ensure_same_grid(&stack.volumes()[0], "image vs stack")?;
    let step = GeoStep::elastic(img.grid(), ElasticParams::draw(cfg, s)?, s)?;
    Ok((
        step.apply_volume(img, Interp::Trilinear, 0.0)?,
        step.apply_stack(stack)?,
        step,
    ))
}

/// Independent per-axis flip decisions.
pub fn draw_flips(prob: f64, s: &mut RngStream) -> Result<[bool; 3]> {
    Ok([s.bernoulli(prob)?, s.bernoulli(prob)?, s.bernoulli(prob)?])
}
