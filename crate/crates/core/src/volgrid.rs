//! Dense 3-D voxel grids and the geometric and statistical primitives shared
//! by every other module.
//!
//! Data is stored with x varying fastest: the linear index of voxel
//! `(x, y, z)` is `x + nx * (y + ny * z)`. World coordinates (mm) of a voxel
//! are `origin + direction * diag(spacing) * (x, y, z)`, where column `i` of
//! `direction` is the unit world vector of voxel axis `i`.

use nalgebra::{Matrix3, Matrix4, Vector3, Vector4};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rngkit::RngStream;

const ORTHONORMAL_TOL: f64 = 1e-6;
/// Sample coordinates closer than this to an integer are snapped onto it, so
/// that identity resampling is exact.
const SNAP_EPS: f64 = 1e-9;

/// Geometry of a voxel grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub shape: [usize; 3],
    pub spacing: [f64; 3],
    pub origin: [f64; 3],
    /// Row-major 3x3; column `i` is the world direction of voxel axis `i`.
    pub direction: [[f64; 3]; 3],
}

impl Grid {
    pub const IDENTITY_DIRECTION: [[f64; 3]; 3] = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];

    /// Unit spacing, zero origin, identity orientation.
    pub fn new(shape: [usize; 3]) -> Self {
        Self {
            shape,
            spacing: [1.0; 3],
            origin: [0.0; 3],
            direction: Self::IDENTITY_DIRECTION,
        }
    }

    pub fn with_spacing(mut self, spacing: [f64; 3]) -> Self {
        self.spacing = spacing;
        self
    }

    pub fn with_origin(mut self, origin: [f64; 3]) -> Self {
        self.origin = origin;
        self
    }

    pub fn with_direction(mut self, direction: [[f64; 3]; 3]) -> Self {
        self.direction = direction;
        self
    }

    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        x + self.shape[0] * (y + self.shape[1] * z)
    }

    #[inline]
    pub fn coords(&self, idx: usize) -> [usize; 3] {
        let nx = self.shape[0];
        let ny = self.shape[1];
        [idx % nx, (idx / nx) % ny, idx / (nx * ny)]
    }

    pub fn voxel_volume_mm3(&self) -> f64 {
        self.spacing.iter().product()
    }

    pub fn direction_matrix(&self) -> Matrix3<f64> {
        let d = &self.direction;
        Matrix3::new(
            d[0][0], d[0][1], d[0][2], d[1][0], d[1][1], d[1][2], d[2][0], d[2][1], d[2][2],
        )
    }

    /// Homogeneous voxel-index to world (mm) matrix.
    pub fn voxel_to_world(&self) -> Matrix4<f64> {
        let m = self.direction_matrix() * Matrix3::from_diagonal(&Vector3::from(self.spacing));
        let mut out = Matrix4::identity();
        out.fixed_view_mut::<3, 3>(0, 0).copy_from(&m);
        out[(0, 3)] = self.origin[0];
        out[(1, 3)] = self.origin[1];
        out[(2, 3)] = self.origin[2];
        out
    }

    pub fn world_to_voxel(&self) -> Matrix4<f64> {
        // Direction is orthonormal, so the inverse is cheap and exact-ish.
        let rt = self.direction_matrix().transpose();
        let inv_sp = Matrix3::from_diagonal(&Vector3::new(
            1.0 / self.spacing[0],
            1.0 / self.spacing[1],
            1.0 / self.spacing[2],
        ));
        let m = inv_sp * rt;
        let t = -(m * Vector3::from(self.origin));
        let mut out = Matrix4::identity();
        out.fixed_view_mut::<3, 3>(0, 0).copy_from(&m);
        out[(0, 3)] = t[0];
        out[(1, 3)] = t[1];
        out[(2, 3)] = t[2];
        out
    }

    pub fn world(&self, voxel: [f64; 3]) -> [f64; 3] {
        let p = self.voxel_to_world() * Vector4::new(voxel[0], voxel[1], voxel[2], 1.0);
        [p[0], p[1], p[2]]
    }

    /// World coordinate of the geometric centre of the grid.
    pub fn center_world(&self) -> [f64; 3] {
        self.world([
            (self.shape[0] as f64 - 1.0) / 2.0,
            (self.shape[1] as f64 - 1.0) / 2.0,
            (self.shape[2] as f64 - 1.0) / 2.0,
        ])
    }

    pub fn validate(&self) -> Result<()> {
        if self.shape.iter().any(|&n| n == 0) {
            return Err(Error::DegenerateShape(self.shape));
        }
        if self.spacing.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
            return Err(Error::InvalidVolume(format!(
                "spacing must be positive, got {:?}",
                self.spacing
            )));
        }
        if self.origin.iter().any(|o| !o.is_finite()) {
            return Err(Error::InvalidVolume("non-finite origin".into()));
        }
        let d = self.direction_matrix();
        let gram = d.transpose() * d;
        if (gram - Matrix3::identity()).abs().max() > ORTHONORMAL_TOL {
            return Err(Error::InvalidVolume(
                "orientation columns are not orthonormal".into(),
            ));
        }
        Ok(())
    }

    /// True if shape matches exactly and geometry agrees within `tol`.
    pub fn same_geometry(&self, other: &Grid, tol: f64) -> bool {
        let close = |a: &[f64], b: &[f64]| a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol);
        self.shape == other.shape
            && close(&self.spacing, &other.spacing)
            && close(&self.origin, &other.origin)
            && (0..3).all(|r| close(&self.direction[r], &other.direction[r]))
    }

    /// A grid covering the same physical footprint with the requested
    /// spacing. Voxel footprints (centre ± half a voxel) are aligned at the
    /// low corner.
    pub fn resliced(&self, spacing: [f64; 3]) -> Grid {
        let mut shape = [0usize; 3];
        let mut corner_shift = [0.0; 3];
        for a in 0..3 {
            let extent = self.shape[a] as f64 * self.spacing[a];
            shape[a] = ((extent / spacing[a]).round() as usize).max(1);
            corner_shift[a] = 0.5 * (spacing[a] - self.spacing[a]);
        }
        let d = self.direction_matrix();
        let o = Vector3::from(self.origin) + d * Vector3::from(corner_shift);
        Grid {
            shape,
            spacing,
            origin: [o[0], o[1], o[2]],
            direction: self.direction,
        }
    }

    /// Axis-aligned world bounding box of the voxel footprints.
    pub fn world_bounds(&self) -> ([f64; 3], [f64; 3]) {
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for corner in 0..8 {
            let v = [0, 1, 2].map(|a| {
                if corner >> a & 1 == 0 {
                    -0.5
                } else {
                    self.shape[a] as f64 - 0.5
                }
            });
            let w = self.world(v);
            for a in 0..3 {
                lo[a] = lo[a].min(w[a]);
                hi[a] = hi[a].max(w[a]);
            }
        }
        (lo, hi)
    }

    /// Grid for the sub-block starting at (possibly negative) voxel `offset`.
    pub fn subgrid(&self, offset: [isize; 3], shape: [usize; 3]) -> Grid {
        let o = self.world(offset.map(|v| v as f64));
        Grid {
            shape,
            spacing: self.spacing,
            origin: o,
            direction: self.direction,
        }
    }
}

/// Dense scalar field on a [`Grid`].
#[derive(Debug, Clone, PartialEq)]
pub struct Field<T> {
    grid: Grid,
    data: Vec<T>,
}

/// Real-valued image, probability map or logit channel.
pub type Volume = Field<f64>;
/// Integer label map (tissue classes or component labels).
pub type LabelVolume = Field<u32>;

impl<T> Field<T> {
    pub fn new(grid: Grid, data: Vec<T>) -> Result<Self> {
        grid.validate()?;
        if data.len() != grid.len() {
            return Err(Error::InvalidVolume(format!(
                "data length {} does not match shape {:?}",
                data.len(),
                grid.shape
            )));
        }
        Ok(Self { grid, data })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn shape(&self) -> [usize; 3] {
        self.grid.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    /// Replaces the geometry, keeping the data. Shapes must agree.
    pub fn with_grid(self, grid: Grid) -> Result<Self> {
        Self::new(grid, self.data)
    }

    pub fn same_grid<U>(&self, other: &Field<U>) -> bool {
        self.grid.same_geometry(&other.grid, 1e-6)
    }

    pub fn ensure_same_grid<U>(&self, other: &Field<U>, what: &str) -> Result<()> {
        if self.same_grid(other) {
            Ok(())
        } else {
            Err(Error::GridMismatch(format!(
                "{what}: {:?} vs {:?}",
                self.grid.shape, other.grid.shape
            )))
        }
    }
}

impl<T: Copy + Send + Sync> Field<T> {
    pub fn filled(grid: Grid, value: T) -> Result<Self> {
        let n = grid.len();
        Self::new(grid, vec![value; n])
    }

    pub fn from_fn(grid: Grid, f: impl Fn([usize; 3]) -> T + Sync) -> Result<Self> {
        grid.validate()?;
        let data = (0..grid.len())
            .into_par_iter()
            .map(|i| f(grid.coords(i)))
            .collect();
        Self::new(grid, data)
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, z: usize) -> T {
        self.data[self.grid.index(x, y, z)]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, z: usize, v: T) {
        let i = self.grid.index(x, y, z);
        self.data[i] = v;
    }

    pub fn map<U: Send>(&self, f: impl Fn(T) -> U + Sync + Send) -> Field<U> {
        Field {
            grid: self.grid.clone(),
            data: self.data.par_iter().map(|&v| f(v)).collect(),
        }
    }

    /// Reverses the index order along every axis flagged in `axes`. The grid
    /// is left unchanged.
    pub fn flip(&self, axes: [bool; 3]) -> Self {
        if !axes.iter().any(|&a| a) {
            return self.clone();
        }
        let [nx, ny, nz] = self.grid.shape;
        let mut out = self.data.clone();
        out.par_chunks_mut(nx * ny).enumerate().for_each(|(z, slab)| {
            let sz = if axes[2] { nz - 1 - z } else { z };
            for y in 0..ny {
                let sy = if axes[1] { ny - 1 - y } else { y };
                let src = &self.data[nx * (sy + ny * sz)..][..nx];
                let dst = &mut slab[y * nx..(y + 1) * nx];
                if axes[0] {
                    for (d, s) in dst.iter_mut().zip(src.iter().rev()) {
                        *d = *s;
                    }
                } else {
                    dst.copy_from_slice(src);
                }
            }
        });
        Self {
            grid: self.grid.clone(),
            data: out,
        }
    }

    /// Copies the block of `size` starting at voxel `offset`; positions
    /// outside the source take `fill`.
    pub fn extract(&self, offset: [isize; 3], size: [usize; 3], fill: T) -> Result<Self> {
        if size.iter().any(|&n| n == 0) {
            return Err(Error::DegenerateShape(size));
        }
        let grid = self.grid.subgrid(offset, size);
        let [sx, sy, sz] = self.grid.shape.map(|n| n as isize);
        let mut data = vec![fill; grid.len()];
        data.par_chunks_mut(size[0] * size[1])
            .enumerate()
            .for_each(|(z, slab)| {
                let iz = z as isize + offset[2];
                if iz < 0 || iz >= sz {
                    return;
                }
                for y in 0..size[1] {
                    let iy = y as isize + offset[1];
                    if iy < 0 || iy >= sy {
                        continue;
                    }
                    let row = &mut slab[y * size[0]..(y + 1) * size[0]];
                    let base = (sx * (iy + sy * iz)) as usize;
                    for (x, v) in row.iter_mut().enumerate() {
                        let ix = x as isize + offset[0];
                        if ix >= 0 && ix < sx {
                            *v = self.data[base + ix as usize];
                        }
                    }
                }
            });
        Self::new(grid, data)
    }

    /// Centres the field in a larger grid; odd margins put the extra voxel
    /// on the high side.
    pub fn pad_to(&self, size: [usize; 3], fill: T) -> Result<Self> {
        let shape = self.shape();
        if (0..3).any(|a| size[a] < shape[a]) {
            return Err(Error::PadTooSmall {
                target: size,
                shape,
            });
        }
        if size == shape {
            return Ok(self.clone());
        }
        self.extract(pad_offset(shape, size), size, fill)
    }
}

/// Offset that centres `shape` inside `size` (floor-biased low margin).
pub fn pad_offset(shape: [usize; 3], size: [usize; 3]) -> [isize; 3] {
    [0, 1, 2].map(|a| -(((size[a] as isize - shape[a] as isize) / 2).max(0)))
}

/// How a crop window is positioned.
pub enum CropMode<'a> {
    Center,
    Random(&'a mut RngStream),
}

/// Chooses the crop window offset. Axes shorter than `size` are centred
/// (equivalent to symmetric zero padding followed by cropping).
pub fn crop_offset(shape: [usize; 3], size: [usize; 3], mode: CropMode<'_>) -> [isize; 3] {
    let mut out = [0isize; 3];
    let mut rng = match mode {
        CropMode::Center => None,
        CropMode::Random(s) => Some(s),
    };
    for a in 0..3 {
        if size[a] >= shape[a] {
            out[a] = -(((size[a] - shape[a]) / 2) as isize);
        } else {
            let room = shape[a] - size[a];
            out[a] = match rng.as_deref_mut() {
                None => (room / 2) as isize,
                Some(s) => s.uniform_int(0, room as u64) as isize,
            };
        }
    }
    out
}

pub fn crop<T: Copy + Send + Sync + Default>(
    vol: &Field<T>,
    size: [usize; 3],
    mode: CropMode<'_>,
) -> Result<Field<T>> {
    let offset = crop_offset(vol.shape(), size, mode);
    vol.extract(offset, size, T::default())
}

pub fn pad_to(vol: &Volume, size: [usize; 3], fill: f64) -> Result<Volume> {
    vol.pad_to(size, fill)
}

pub fn flip<T: Copy + Send + Sync>(vol: &Field<T>, axes: [bool; 3]) -> Field<T> {
    vol.flip(axes)
}

/// 4x4 homogeneous world-space transform, mapping input-space points to
/// output-space points.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AffineTransform {
    matrix: Matrix4<f64>,
}

impl Default for AffineTransform {
    fn default() -> Self {
        Self::identity()
    }
}

impl AffineTransform {
    pub fn identity() -> Self {
        Self {
            matrix: Matrix4::identity(),
        }
    }

    pub fn from_matrix(matrix: Matrix4<f64>) -> Result<Self> {
        let last = matrix.row(3);
        if (last[0], last[1], last[2], last[3]) != (0.0, 0.0, 0.0, 1.0) {
            return Err(Error::InvalidParameter(
                "affine last row must be (0, 0, 0, 1)".into(),
            ));
        }
        let t = Self { matrix };
        t.check_invertible()?;
        Ok(t)
    }

    pub fn translation(t: [f64; 3]) -> Self {
        let mut m = Matrix4::identity();
        m[(0, 3)] = t[0];
        m[(1, 3)] = t[1];
        m[(2, 3)] = t[2];
        Self { matrix: m }
    }

    /// Rotation (degrees about x, then y, then z), shear and zoom about
    /// `center`. Shear components are `[xy, xz, yx, yz, zx, zy]`.
    pub fn from_params(
        rotation_deg: [f64; 3],
        shear: [f64; 6],
        zoom: [f64; 3],
        center: [f64; 3],
    ) -> Self {
        let [ax, ay, az] = rotation_deg.map(f64::to_radians);
        let rx = Matrix3::new(1.0, 0.0, 0.0, 0.0, ax.cos(), -ax.sin(), 0.0, ax.sin(), ax.cos());
        let ry = Matrix3::new(ay.cos(), 0.0, ay.sin(), 0.0, 1.0, 0.0, -ay.sin(), 0.0, ay.cos());
        let rz = Matrix3::new(az.cos(), -az.sin(), 0.0, az.sin(), az.cos(), 0.0, 0.0, 0.0, 1.0);
        let s = Matrix3::new(
            1.0, shear[0], shear[1], shear[2], 1.0, shear[3], shear[4], shear[5], 1.0,
        );
        let z = Matrix3::from_diagonal(&Vector3::from(zoom));
        let lin = rz * ry * rx * s * z;
        let c = Vector3::from(center);
        let t = c - lin * c;
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&lin);
        m[(0, 3)] = t[0];
        m[(1, 3)] = t[1];
        m[(2, 3)] = t[2];
        Self { matrix: m }
    }

    pub fn matrix(&self) -> &Matrix4<f64> {
        &self.matrix
    }

    pub fn det(&self) -> f64 {
        self.matrix.fixed_view::<3, 3>(0, 0).determinant()
    }

    fn check_invertible(&self) -> Result<()> {
        let det = self.det();
        if !(det.abs() > 1e-9) {
            return Err(Error::SingularTransform { det });
        }
        Ok(())
    }

    pub fn inverse(&self) -> Result<Self> {
        self.check_invertible()?;
        let inv = self
            .matrix
            .try_inverse()
            .ok_or(Error::SingularTransform { det: self.det() })?;
        Ok(Self { matrix: inv })
    }

    /// `self` applied after `first`.
    pub fn compose(&self, first: &AffineTransform) -> Self {
        Self {
            matrix: self.matrix * first.matrix,
        }
    }

    pub fn apply(&self, p: [f64; 3]) -> [f64; 3] {
        let v = self.matrix * Vector4::new(p[0], p[1], p[2], 1.0);
        [v[0], v[1], v[2]]
    }

    pub fn to_rows(&self) -> [[f64; 4]; 4] {
        let mut out = [[0.0; 4]; 4];
        for (r, row) in out.iter_mut().enumerate() {
            for (c, v) in row.iter_mut().enumerate() {
                *v = self.matrix[(r, c)];
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Interp {
    Trilinear,
    Nearest,
}

#[inline]
fn snap(c: f64) -> f64 {
    let r = c.round();
    if (c - r).abs() < SNAP_EPS {
        r
    } else {
        c
    }
}

/// Samples `vol` at continuous voxel coordinate `c`. Points outside the
/// voxel footprints (`[-0.5, n - 0.5]` per axis) return `fill`.
#[inline]
pub fn sample(vol: &Volume, c: [f64; 3], interp: Interp, fill: f64) -> f64 {
    let shape = vol.shape();
    let c = c.map(snap);
    for a in 0..3 {
        let n = shape[a] as f64;
        if !(c[a] >= -0.5 - 1e-6 && c[a] <= n - 0.5 + 1e-6) {
            return fill;
        }
    }
    match interp {
        Interp::Nearest => {
            let i = [0, 1, 2].map(|a| ((c[a] + 0.5).floor().max(0.0) as usize).min(shape[a] - 1));
            vol.get(i[0], i[1], i[2])
        }
        Interp::Trilinear => {
            let mut i0 = [0usize; 3];
            let mut i1 = [0usize; 3];
            let mut t = [0.0f64; 3];
            for a in 0..3 {
                let f = c[a].floor();
                t[a] = c[a] - f;
                let lo = f as isize;
                i0[a] = lo.clamp(0, shape[a] as isize - 1) as usize;
                i1[a] = (lo + 1).clamp(0, shape[a] as isize - 1) as usize;
            }
            let mut acc = 0.0;
            for dz in 0..2 {
                let wz = if dz == 0 { 1.0 - t[2] } else { t[2] };
                if wz == 0.0 {
                    continue;
                }
                let z = if dz == 0 { i0[2] } else { i1[2] };
                for dy in 0..2 {
                    let wy = if dy == 0 { 1.0 - t[1] } else { t[1] };
                    if wy == 0.0 {
                        continue;
                    }
                    let y = if dy == 0 { i0[1] } else { i1[1] };
                    for dx in 0..2 {
                        let wx = if dx == 0 { 1.0 - t[0] } else { t[0] };
                        if wx == 0.0 {
                            continue;
                        }
                        let x = if dx == 0 { i0[0] } else { i1[0] };
                        acc += wx * wy * wz * vol.get(x, y, z);
                    }
                }
            }
            acc
        }
    }
}

/// Resamples `vol` onto `target`. `transform` maps source world space to
/// target world space; values are pulled through its inverse.
pub fn resample(
    vol: &Volume,
    target: &Grid,
    transform: &AffineTransform,
    interp: Interp,
    fill: f64,
) -> Result<Volume> {
    if target.shape.iter().any(|&n| n == 0) {
        return Err(Error::DegenerateShape(target.shape));
    }
    target.validate()?;
    let inv = transform.inverse()?;
    let m = vol.grid().world_to_voxel() * inv.matrix() * target.voxel_to_world();
    warp(vol, target, interp, fill, |[x, y, z]| {
        let (x, y, z) = (x as f64, y as f64, z as f64);
        [
            m[(0, 0)] * x + m[(0, 1)] * y + m[(0, 2)] * z + m[(0, 3)],
            m[(1, 0)] * x + m[(1, 1)] * y + m[(1, 2)] * z + m[(1, 3)],
            m[(2, 0)] * x + m[(2, 1)] * y + m[(2, 2)] * z + m[(2, 3)],
        ]
    })
}

/// Pulls values onto `target`: `source_coord` maps a target voxel index to a
/// continuous source voxel coordinate.
pub fn warp(
    vol: &Volume,
    target: &Grid,
    interp: Interp,
    fill: f64,
    source_coord: impl Fn([usize; 3]) -> [f64; 3] + Sync,
) -> Result<Volume> {
    let [nx, ny, _] = target.shape;
    let mut data = vec![0.0; target.len()];
    data.par_chunks_mut(nx * ny).enumerate().for_each(|(z, slab)| {
        for y in 0..ny {
            for x in 0..nx {
                slab[x + nx * y] = sample(vol, source_coord([x, y, z]), interp, fill);
            }
        }
    });
    Volume::new(target.clone(), data)
}

/// Nearest-neighbour warp for integer label maps.
pub fn warp_labels(
    labels: &LabelVolume,
    target: &Grid,
    fill: u32,
    source_coord: impl Fn([usize; 3]) -> [f64; 3] + Sync,
) -> Result<LabelVolume> {
    let shape = labels.shape();
    let [nx, ny, _] = target.shape;
    let mut data = vec![fill; target.len()];
    data.par_chunks_mut(nx * ny).enumerate().for_each(|(z, slab)| {
        for y in 0..ny {
            for x in 0..nx {
                let c = source_coord([x, y, z]).map(snap);
                let inside = (0..3).all(|a| {
                    c[a] >= -0.5 - 1e-6 && c[a] <= shape[a] as f64 - 0.5 + 1e-6
                });
                if inside {
                    let i = [0, 1, 2]
                        .map(|a| ((c[a] + 0.5).floor().max(0.0) as usize).min(shape[a] - 1));
                    slab[x + nx * y] = labels.get(i[0], i[1], i[2]);
                }
            }
        }
    });
    LabelVolume::new(target.clone(), data)
}

pub fn resample_labels(
    labels: &LabelVolume,
    target: &Grid,
    transform: &AffineTransform,
    fill: u32,
) -> Result<LabelVolume> {
    if target.shape.iter().any(|&n| n == 0) {
        return Err(Error::DegenerateShape(target.shape));
    }
    target.validate()?;
    let inv = transform.inverse()?;
    let m = labels.grid().world_to_voxel() * inv.matrix() * target.voxel_to_world();
    warp_labels(labels, target, fill, |[x, y, z]| {
        let p = m * Vector4::new(x as f64, y as f64, z as f64, 1.0);
        [p[0], p[1], p[2]]
    })
}

/// Discrete, normalised Gaussian kernel truncated at 4 sigma.
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    if sigma <= 0.0 {
        return vec![1.0];
    }
    let radius = (4.0 * sigma).ceil().max(1.0) as isize;
    let mut k: Vec<f64> = (-radius..=radius)
        .map(|i| (-0.5 * (i as f64 / sigma).powi(2)).exp())
        .collect();
    let sum: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= sum);
    k
}

pub const FWHM_TO_SIGMA: f64 = 2.354_820_045_030_949_3;

/// Convolves along one axis with replicate-edge borders.
pub fn convolve_axis(vol: &Volume, axis: usize, kernel: &[f64]) -> Volume {
    if kernel.len() == 1 {
        return vol.clone();
    }
    let shape = vol.shape();
    let [nx, ny, _] = shape;
    let r = (kernel.len() / 2) as isize;
    let n = shape[axis] as isize;
    let stride = [1, nx, nx * ny][axis];
    let src = vol.data();
    let mut out = vec![0.0; src.len()];
    out.par_chunks_mut(nx * ny).enumerate().for_each(|(z, slab)| {
        for y in 0..ny {
            for x in 0..nx {
                let pos = [x, y, z][axis] as isize;
                let base = x + nx * (y + ny * z) - (pos as usize) * stride;
                let mut acc = 0.0;
                for (t, w) in kernel.iter().enumerate() {
                    let p = (pos + t as isize - r).clamp(0, n - 1) as usize;
                    acc += w * src[base + p * stride];
                }
                slab[x + nx * y] = acc;
            }
        }
    });
    Volume::new(vol.grid().clone(), out).expect("same grid")
}

/// Separable Gaussian smoothing; FWHM is given in mm per axis.
pub fn gaussian_smooth(vol: &Volume, fwhm_mm: [f64; 3]) -> Result<Volume> {
    if fwhm_mm.iter().any(|f| !(*f >= 0.0 && f.is_finite())) {
        return Err(Error::InvalidParameter(format!(
            "fwhm must be non-negative, got {fwhm_mm:?}"
        )));
    }
    let mut out = vol.clone();
    for axis in 0..3 {
        if fwhm_mm[axis] == 0.0 {
            continue;
        }
        let sigma_vox = fwhm_mm[axis] / FWHM_TO_SIGMA / vol.grid().spacing[axis];
        out = convolve_axis(&out, axis, &gaussian_kernel(sigma_vox));
    }
    Ok(out)
}

/// Percentiles of `values` with linear interpolation between order
/// statistics (position `p / 100 * (n - 1)`).
pub fn percentiles(values: &[f64], pcts: &[f64]) -> Result<Vec<f64>> {
    if values.is_empty() {
        return Err(Error::Empty("percentile of empty set".into()));
    }
    if let Some(p) = pcts.iter().find(|p| !(0.0..=100.0).contains(*p)) {
        return Err(Error::InvalidParameter(format!("percentile {p} out of range")));
    }
    let mut sorted = values.to_vec();
    sorted.par_sort_unstable_by(f64::total_cmp);
    Ok(pcts.iter().map(|&p| percentile_sorted(&sorted, p)).collect())
}

pub fn percentile_sorted(sorted: &[f64], p: f64) -> f64 {
    let pos = p / 100.0 * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    let frac = pos - lo as f64;
    if frac == 0.0 {
        sorted[lo]
    } else {
        sorted[lo] + frac * (sorted[hi] - sorted[lo])
    }
}

pub fn clip_percentiles(vol: &Volume, lo_pct: f64, hi_pct: f64) -> Result<Volume> {
    if !(0.0 <= lo_pct && lo_pct < hi_pct && hi_pct <= 100.0) {
        return Err(Error::InvalidParameter(format!(
            "need 0 <= lo < hi <= 100, got ({lo_pct}, {hi_pct})"
        )));
    }
    let p = percentiles(vol.data(), &[lo_pct, hi_pct])?;
    let (lo, hi) = (p[0], p[1]);
    Ok(vol.map(|v| v.clamp(lo, hi)))
}

/// Mean and population standard deviation over `mask` (all voxels if
/// absent). Summation is sequential so results are bitwise reproducible.
pub fn mean_std(vol: &Volume, mask: Option<&Field<bool>>) -> Result<(f64, f64)> {
    let selected = |i: usize| mask.is_none_or(|m| m.data()[i]);
    let mut n = 0usize;
    let mut sum = 0.0;
    for (i, &v) in vol.data().iter().enumerate() {
        if selected(i) {
            n += 1;
            sum += v;
        }
    }
    if n == 0 {
        return Err(Error::Empty("no voxels selected".into()));
    }
    let mean = sum / n as f64;
    let mut ss = 0.0;
    for (i, &v) in vol.data().iter().enumerate() {
        if selected(i) {
            ss += (v - mean) * (v - mean);
        }
    }
    Ok((mean, (ss / n as f64).sqrt()))
}

/// Zero mean, unit (population) standard deviation over the mask, applied
/// to every voxel.
pub fn z_normalize(vol: &Volume, mask: Option<&Field<bool>>) -> Result<Volume> {
    if let Some(m) = mask {
        vol.ensure_same_grid(m, "z_normalize mask")?;
    }
    let (mean, std) = mean_std(vol, mask)?;
    if !(std > 1e-12) {
        return Err(Error::ZeroVariance { std });
    }
    Ok(vol.map(|v| (v - mean) / std))
}

/// Canonical class identifiers used inside posterior stacks.
pub mod tissue {
    pub const GM: &str = "gm";
    pub const WM: &str = "wm";
    pub const PV: &str = "pv";
    pub const CSF: &str = "csf";
    pub const LESION: &str = "lesion";
    /// The four brain tissues among the nine healthy classes.
    pub const BRAIN: [&str; 4] = [GM, WM, PV, CSF];
    /// Number of healthy classes in a full posterior model.
    pub const HEALTHY_CLASS_COUNT: usize = 9;

    /// Training label code for a class: background 0, GM 1, WM 2, PV 3,
    /// CSF 4, lesion 5; non-brain classes map to background.
    pub fn training_label(class: &str) -> u32 {
        match class {
            GM => 1,
            WM => 2,
            PV => 3,
            CSF => 4,
            LESION => 5,
            _ => 0,
        }
    }
}

const STACK_SUM_TOL: f64 = 1e-4;

/// Per-class probability volumes on one shared grid; per-voxel sums lie in
/// `[0, 1]` and any deficit is implicit background.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorStack {
    classes: Vec<String>,
    volumes: Vec<Volume>,
}

impl PosteriorStack {
    pub fn new(classes: Vec<String>, volumes: Vec<Volume>) -> Result<Self> {
        if classes.is_empty() || classes.len() != volumes.len() {
            return Err(Error::InvalidVolume(format!(
                "{} class names for {} volumes",
                classes.len(),
                volumes.len()
            )));
        }
        for (i, c) in classes.iter().enumerate() {
            if classes[..i].contains(c) {
                return Err(Error::InvalidVolume(format!("duplicate class `{c}`")));
            }
        }
        for v in &volumes[1..] {
            volumes[0].ensure_same_grid(v, "posterior stack")?;
        }
        let stack = Self { classes, volumes };
        for (c, v) in stack.classes.iter().zip(&stack.volumes) {
            if let Some(bad) = v.data().iter().find(|p| !(-1e-9..=1.0 + 1e-9).contains(*p)) {
                return Err(Error::InvalidVolume(format!(
                    "class `{c}` has probability {bad} outside [0, 1]"
                )));
            }
        }
        if let Some(s) = stack.sums().into_iter().find(|&s| s > 1.0 + STACK_SUM_TOL) {
            return Err(Error::InvalidVolume(format!(
                "posterior sum {s} exceeds 1"
            )));
        }
        Ok(stack)
    }

    pub fn grid(&self) -> &Grid {
        self.volumes[0].grid()
    }

    pub fn classes(&self) -> &[String] {
        &self.classes
    }

    pub fn volumes(&self) -> &[Volume] {
        &self.volumes
    }

    pub fn len(&self) -> usize {
        self.classes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }

    pub fn class_index(&self, name: &str) -> Option<usize> {
        self.classes.iter().position(|c| c == name)
    }

    pub fn volume(&self, name: &str) -> Option<&Volume> {
        self.class_index(name).map(|i| &self.volumes[i])
    }

    /// Per-voxel sum over classes.
    pub fn sums(&self) -> Vec<f64> {
        let mut s = vec![0.0; self.grid().len()];
        for v in &self.volumes {
            s.iter_mut().zip(v.data()).for_each(|(a, b)| *a += b);
        }
        s
    }

    /// Per-voxel sum over the named classes (missing names are skipped).
    pub fn sum_of(&self, names: &[&str]) -> Vec<f64> {
        let mut s = vec![0.0; self.grid().len()];
        for name in names {
            if let Some(v) = self.volume(name) {
                s.iter_mut().zip(v.data()).for_each(|(a, b)| *a += b);
            }
        }
        s
    }

    /// Applies the same operation to every class volume, then clamps values
    /// to `[0, 1]` and rescales voxels whose sum exceeds one.
    pub fn map_volumes(&self, f: impl Fn(&Volume) -> Result<Volume> + Sync) -> Result<Self> {
        let volumes = self
            .volumes
            .par_iter()
            .map(&f)
            .collect::<Result<Vec<_>>>()?;
        let mut out = Self {
            classes: self.classes.clone(),
            volumes,
        };
        out.renormalize();
        for v in &out.volumes[1..] {
            out.volumes[0].ensure_same_grid(v, "mapped posterior stack")?;
        }
        Ok(out)
    }

    /// Builds a stack from volumes that may have drifted slightly outside
    /// the simplex (e.g. after interpolation): values are clamped to
    /// `[0, 1]` and voxels whose sum exceeds one are rescaled.
    pub fn renormalized(classes: Vec<String>, volumes: Vec<Volume>) -> Result<Self> {
        if classes.is_empty() || classes.len() != volumes.len() {
            return Err(Error::InvalidVolume(format!(
                "{} class names for {} volumes",
                classes.len(),
                volumes.len()
            )));
        }
        for v in &volumes[1..] {
            volumes[0].ensure_same_grid(v, "posterior stack")?;
        }
        let mut out = Self { classes, volumes };
        out.renormalize();
        Ok(out)
    }

    fn renormalize(&mut self) {
        for v in &mut self.volumes {
            v.data_mut().iter_mut().for_each(|p| *p = p.clamp(0.0, 1.0));
        }
        let sums = self.sums();
        for v in &mut self.volumes {
            for (p, &s) in v.data_mut().iter_mut().zip(&sums) {
                if s > 1.0 {
                    *p /= s;
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(shape: [usize; 3]) -> Volume {
        Volume::from_fn(Grid::new(shape), |[x, y, z]| (x + 10 * y + 100 * z) as f64).unwrap()
    }

    #[test]
    fn invalid_grids_are_rejected() {
        assert!(Volume::new(Grid::new([2, 2, 2]), vec![0.0; 7]).is_err());
        assert!(Volume::new(Grid::new([2, 2, 2]).with_spacing([1.0, 0.0, 1.0]), vec![0.0; 8]).is_err());
        let skew = [[1.0, 0.1, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
        assert!(Volume::new(Grid::new([2, 2, 2]).with_direction(skew), vec![0.0; 8]).is_err());
    }

    #[test]
    fn identity_resample_is_exact() {
        let v = ramp([5, 4, 3]).with_grid(
            Grid::new([5, 4, 3])
                .with_spacing([1.3, 0.7, 2.1])
                .with_origin([-4.2, 3.3, 10.0]),
        )
        .unwrap();
        let out = resample(&v, v.grid(), &AffineTransform::identity(), Interp::Trilinear, -1.0).unwrap();
        assert_eq!(out, v);
    }

    #[test]
    fn constant_reslice_to_finer_spacing() {
        let g = Grid::new([6, 5, 4]).with_spacing([2.0; 3]).with_origin([1.0, -2.0, 3.0]);
        let v = Volume::filled(g.clone(), 5.0).unwrap();
        let target = g.resliced([1.0; 3]);
        assert_eq!(target.shape, [12, 10, 8]);
        let out = resample(&v, &target, &AffineTransform::identity(), Interp::Trilinear, 0.0).unwrap();
        assert!(out.data().iter().all(|&x| (x - 5.0).abs() < 1e-12));
    }

    #[test]
    fn half_voxel_translation_splits_impulse() {
        let mut v = Volume::filled(Grid::new([7, 3, 3]), 0.0).unwrap();
        v.set(3, 1, 1, 1.0);
        let t = AffineTransform::translation([0.5, 0.0, 0.0]);
        let out = resample(&v, v.grid(), &t, Interp::Trilinear, 0.0).unwrap();
        // Hand-evaluated trilinear weights: target x=3 pulls 2.5, x=4 pulls 3.5.
        assert!((out.get(3, 1, 1) - 0.5).abs() < 1e-12);
        assert!((out.get(4, 1, 1) - 0.5).abs() < 1e-12);
        let total: f64 = out.data().iter().sum();
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn singular_and_degenerate_resample_errors() {
        let v = ramp([3, 3, 3]);
        let mut m = Matrix4::identity();
        m[(2, 2)] = 0.0;
        assert!(AffineTransform::from_matrix(m).is_err());
        let sing = AffineTransform { matrix: m };
        assert!(matches!(
            resample(&v, v.grid(), &sing, Interp::Nearest, 0.0),
            Err(Error::SingularTransform { .. })
        ));
        let mut g = v.grid().clone();
        g.shape = [3, 0, 3];
        assert!(matches!(
            resample(&v, &g, &AffineTransform::identity(), Interp::Nearest, 0.0),
            Err(Error::DegenerateShape(_))
        ));
    }

    #[test]
    fn smoothing_edge_cases() {
        let v = ramp([6, 6, 6]);
        assert_eq!(gaussian_smooth(&v, [0.0; 3]).unwrap(), v);
        let c = Volume::filled(Grid::new([8, 8, 8]), 3.25).unwrap();
        let s = gaussian_smooth(&c, [2.0, 3.0, 1.5]).unwrap();
        assert!(s.data().iter().all(|&x| (x - 3.25).abs() < 1e-12));
        assert!(gaussian_smooth(&v, [-1.0, 0.0, 0.0]).is_err());
    }

    #[test]
    fn impulse_response_matches_sampled_gaussian_product() {
        let n = 21;
        let mut v = Volume::filled(Grid::new([n, n, n]), 0.0).unwrap();
        v.set(10, 10, 10, 1.0);
        let out = gaussian_smooth(&v, [2.0; 3]).unwrap();
        // Independent evaluation of the 1-D sampled Gaussian.
        let sigma = 2.0 / (2.0 * (2.0f64.ln() * 2.0).sqrt());
        let r = (4.0 * sigma).ceil() as i64;
        let norm: f64 = (-r..=r).map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp()).sum();
        let g = |d: i64| {
            if d.abs() > r {
                0.0
            } else {
                (-(d * d) as f64 / (2.0 * sigma * sigma)).exp() / norm
            }
        };
        for (dx, dy, dz) in [(0, 0, 0), (1, 0, 0), (2, 1, 0), (3, 3, 3), (0, 0, 5)] {
            let got = out.get((10 + dx) as usize, (10 + dy) as usize, (10 + dz) as usize);
            assert!((got - g(dx) * g(dy) * g(dz)).abs() < 1e-12);
        }
        let total: f64 = out.data().iter().sum();
        assert!((total - 1.0).abs() < 1e-6);
    }

    #[test]
    fn percentile_clip_matches_sort_oracle() {
        let g = Grid::new([100, 1, 1]);
        let v = Volume::new(g, (1..=100).map(|i| i as f64).collect()).unwrap();
        let c = clip_percentiles(&v, 1.0, 99.0).unwrap();
        let min = c.data().iter().cloned().fold(f64::INFINITY, f64::min);
        let max = c.data().iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        assert!((min - 1.99).abs() < 1e-12);
        assert!((max - 99.01).abs() < 1e-12);

        let k = Volume::filled(Grid::new([3, 3, 3]), 2.0).unwrap();
        assert_eq!(clip_percentiles(&k, 1.0, 99.0).unwrap(), k);
        assert!(clip_percentiles(&k, 50.0, 50.0).is_err());
    }

    #[test]
    fn z_normalize_behaviour() {
        let v = ramp([4, 4, 4]);
        let z = z_normalize(&v, None).unwrap();
        let (m, s) = mean_std(&z, None).unwrap();
        assert!(m.abs() < 1e-12 && (s - 1.0).abs() < 1e-12);
        let zz = z_normalize(&z, None).unwrap();
        for (a, b) in z.data().iter().zip(zz.data()) {
            assert!((a - b).abs() < 1e-6);
        }
        let k = Volume::filled(Grid::new([3, 3, 3]), 2.0).unwrap();
        assert!(matches!(z_normalize(&k, None), Err(Error::ZeroVariance { .. })));

        let mask = v.map(|x| x < 20.0);
        let zm = z_normalize(&v, Some(&mask)).unwrap();
        let (mm, sm) = mean_std(&zm, Some(&mask)).unwrap();
        assert!(mm.abs() < 1e-12 && (sm - 1.0).abs() < 1e-12);
    }

    #[test]
    fn crop_and_pad() {
        let v = ramp([6, 5, 4]);
        assert_eq!(crop(&v, [6, 5, 4], CropMode::Center).unwrap(), v);

        let small = Volume::filled(Grid::new([10, 10, 10]), 1.0).unwrap();
        let big = crop(&small, [16, 16, 16], CropMode::Center).unwrap();
        assert_eq!(big.shape(), [16, 16, 16]);
        assert_eq!(big.data().iter().filter(|&&x| x == 1.0).count(), 1000);
        assert_eq!(big.get(3, 3, 3), 1.0);
        assert_eq!(big.get(2, 3, 3), 0.0);

        let p = pad_to(&small, [14, 13, 10], 0.0).unwrap();
        assert_eq!(p.get(2, 1, 0), 1.0);
        assert_eq!(p.get(1, 1, 0), 0.0);
        assert_eq!(p.get(11, 10, 9), 1.0);
        assert_eq!(p.get(12, 11, 9), 0.0);
        assert!(matches!(pad_to(&p, [5, 5, 5], 0.0), Err(Error::PadTooSmall { .. })));

        // crop after pad recovers the original.
        let back = p.extract([2, 1, 0], [10, 10, 10], -1.0).unwrap();
        assert_eq!(back.data(), small.data());
        assert_eq!(back.grid(), small.grid());
    }

    #[test]
    fn pad_margins_192_to_256() {
        assert_eq!(pad_offset([192; 3], [256; 3]), [-32; 3]);
    }

    #[test]
    fn random_crop_is_within_bounds() {
        let mut s = RngStream::new(3);
        for _ in 0..50 {
            let o = crop_offset([20, 30, 12], [8, 30, 16], CropMode::Random(&mut s));
            assert!((0..=12).contains(&o[0]));
            assert_eq!(o[1], 0);
            assert_eq!(o[2], -2);
        }
    }

    #[test]
    fn flips() {
        let mut v = Volume::filled(Grid::new([4, 4, 4]), 0.0).unwrap();
        v.set(0, 0, 0, 1.0);
        assert_eq!(v.flip([false; 3]), v);
        assert_eq!(v.flip([true, false, false]).get(3, 0, 0), 1.0);
        let r = ramp([3, 4, 5]);
        assert_eq!(r.flip([true, false, true]).flip([true, false, true]), r);
        assert_eq!(
            r.flip([true, false, false]).flip([false, true, false]),
            r.flip([false, true, false]).flip([true, false, false])
        );
    }

    #[test]
    fn resliced_grid_keeps_footprint() {
        let g = Grid::new([10, 10, 10]).with_spacing([2.0; 3]);
        let r = g.resliced([1.0; 3]);
        let (lo0, hi0) = g.world_bounds();
        let (lo1, hi1) = r.world_bounds();
        for a in 0..3 {
            assert!((lo0[a] - lo1[a]).abs() < 1e-12);
            assert!((hi0[a] - hi1[a]).abs() < 1e-12);
        }
    }
}
