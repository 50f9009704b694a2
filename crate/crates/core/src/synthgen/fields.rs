//! Smooth random fields defined by a coarse control-point lattice.
//!
//! Control points sit at evenly spaced voxel positions spanning the grid,
//! the first at index 0 and the last at `n - 1`. Between them the field is
//! a tensor-product Catmull-Rom spline whose end segments use linearly
//! extrapolated ghost points, so the field interpolates the control values
//! exactly and a 2-point lattice reduces to trilinear interpolation.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::Result;
use crate::rngkit::RngStream;
use crate::synthgen::config::BiasFieldConfig;
use crate::volgrid::{Grid, Volume};

#[derive(Debug, Clone, PartialEq)]
pub struct ControlLattice {
    dims: [usize; 3],
    /// x fastest.
    values: Vec<f64>,
}

/// Dense `n x cp` interpolation weights along one axis.
pub fn axis_weights(n: usize, cp: usize) -> Vec<f64> {
    let mut w = vec![0.0; n * cp];
    if cp == 1 {
        w.iter_mut().for_each(|v| *v = 1.0);
        return w;
    }
    for i in 0..n {
        let u = if n == 1 {
            0.0
        } else {
            i as f64 * (cp - 1) as f64 / (n - 1) as f64
        };
        let seg = (u.floor() as usize).min(cp - 2);
        let t = u - seg as f64;
        let (t2, t3) = (t * t, t * t * t);
        let wm1 = 0.5 * (-t3 + 2.0 * t2 - t);
        let w0 = 0.5 * (3.0 * t3 - 5.0 * t2 + 2.0);
        let w1 = 0.5 * (-3.0 * t3 + 4.0 * t2 + t);
        let w2 = 0.5 * (t3 - t2);
        let row = &mut w[i * cp..(i + 1) * cp];
        row[seg] += w0;
        row[seg + 1] += w1;
        if seg == 0 {
            // ghost = 2 p0 - p1
            row[0] += 2.0 * wm1;
            row[1] -= wm1;
        } else {
            row[seg - 1] += wm1;
        }
        if seg + 2 >= cp {
            // ghost = 2 p_last - p_prev
            row[cp - 1] += 2.0 * w2;
            row[cp - 2] -= w2;
        } else {
            row[seg + 2] += w2;
        }
    }
    w
}

impl ControlLattice {
    pub fn new(dims: [usize; 3], values: Vec<f64>) -> Self {
        assert!(dims.iter().all(|&d| d >= 1));
        assert_eq!(values.len(), dims.iter().product::<usize>());
        Self { dims, values }
    }

    pub fn constant(dims: [usize; 3], value: f64) -> Self {
        Self::new(dims, vec![value; dims.iter().product()])
    }

    /// Control values drawn uniformly from `[lo, hi)` in lattice order.
    pub fn random(dims: [usize; 3], lo: f64, hi: f64, s: &mut RngStream) -> Result<Self> {
        let n = dims.iter().product();
        let values = (0..n).map(|_| s.uniform(lo, hi)).collect::<Result<_>>()?;
        Ok(Self::new(dims, values))
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Evaluates the spline at every voxel of `grid`.
    pub fn evaluate(&self, grid: &Grid) -> Volume {
        let [nx, ny, nz] = grid.shape;
        let [cx, cy, cz] = self.dims;
        let wx = axis_weights(nx, cx);
        let wy = axis_weights(ny, cy);
        let wz = axis_weights(nz, cz);
        // Contract z, then y, then x.
        let mut t1 = vec![0.0; cx * cy * nz];
        for k in 0..nz {
            for c in 0..cz {
                let w = wz[k * cz + c];
                if w == 0.0 {
                    continue;
                }
                for ab in 0..cx * cy {
                    t1[ab + cx * cy * k] += w * self.values[ab + cx * cy * c];
                }
            }
        }
        let mut t2 = vec![0.0; cx * ny * nz];
        for k in 0..nz {
            for j in 0..ny {
                for b in 0..cy {
                    let w = wy[j * cy + b];
                    if w == 0.0 {
                        continue;
                    }
                    for a in 0..cx {
                        t2[a + cx * (j + ny * k)] += w * t1[a + cx * (b + cy * k)];
                    }
                }
            }
        }
        let mut out = vec![0.0; grid.len()];
        out.par_chunks_mut(nx * ny).enumerate().for_each(|(k, slab)| {
            for j in 0..ny {
                let src = &t2[cx * (j + ny * k)..][..cx];
                for i in 0..nx {
                    let wrow = &wx[i * cx..(i + 1) * cx];
                    slab[i + nx * j] = wrow.iter().zip(src).map(|(w, v)| w * v).sum();
                }
            }
        });
        Volume::new(grid.clone(), out).expect("grid validated by caller")
    }
}

/// Concrete draw of a multiplicative bias (or penumbra) field.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BiasFieldParams {
    pub control_points: usize,
    pub strength: f64,
}

impl BiasFieldParams {
    pub fn draw(cfg: &BiasFieldConfig, s: &mut RngStream) -> Result<Self> {
        let control_points = cfg.control_points.draw(s).max(2) as usize;
        let strength = cfg.strength.draw(s)?;
        Ok(Self {
            control_points,
            strength,
        })
    }
}

/// Multiplicative field with control values `~ U(1 - strength, 1 + strength)`.
/// Zero strength yields exactly 1 everywhere.
pub fn bias_field(grid: &Grid, p: &BiasFieldParams, s: &mut RngStream) -> Result<Volume> {
    if p.strength == 0.0 {
        return Volume::filled(grid.clone(), 1.0);
    }
    let cp = p.control_points.max(2);
    let lattice = ControlLattice::random([cp; 3], 1.0 - p.strength, 1.0 + p.strength, s)?;
    Ok(lattice.evaluate(grid))
}

/// Voxelwise product.
pub fn apply_field(img: &Volume, field: &Volume) -> Result<Volume> {
    img.ensure_same_grid(field, "field")?;
    let data = img
        .data()
        .iter()
        .zip(field.data())
        .map(|(a, b)| a * b)
        .collect();
    Volume::new(img.grid().clone(), data)
}

/// Positive noise-amplification map with mean 1; `smoothness` sets the
/// control-point count per axis.
pub fn gfactor_field(grid: &Grid, smoothness: f64, s: &mut RngStream) -> Result<Volume> {
    let cp = (smoothness.round() as usize).max(2);
    let lattice = ControlLattice::random([cp; 3], 0.5, 1.5, s)?;
    let mut g = lattice.evaluate(grid);
    g.data_mut().iter_mut().for_each(|v| *v = v.max(1e-3));
    let mean = g.data().iter().sum::<f64>() / g.len() as f64;
    g.data_mut().iter_mut().for_each(|v| *v /= mean);
    Ok(g)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn weights_partition_unity_and_interpolate_sites() {
        for (n, cp) in [(10, 2), (17, 5), (33, 7), (5, 5), (1, 3)] {
            let w = axis_weights(n, cp);
            for i in 0..n {
                let s: f64 = w[i * cp..(i + 1) * cp].iter().sum();
                assert!((s - 1.0).abs() < 1e-12);
            }
            if n > 1 {
                for c in 0..cp {
                    let pos = c as f64 * (n - 1) as f64 / (cp - 1) as f64;
                    if pos.fract() == 0.0 {
                        let i = pos as usize;
                        for cc in 0..cp {
                            let expect = if cc == c { 1.0 } else { 0.0 };
                            assert!((w[i * cp + cc] - expect).abs() < 1e-12);
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn constant_lattice_gives_constant_field() {
        let f = ControlLattice::constant([4, 3, 5], 1.2).evaluate(&Grid::new([9, 8, 7]));
        assert!(f.data().iter().all(|v| (v - 1.2).abs() < 1e-12));
    }

    #[test]
    fn two_point_lattice_is_trilinear() {
        let vals: Vec<f64> = (0..8).map(|i| 0.7 + 0.11 * i as f64 + 0.03 * (i * i) as f64).collect();
        let grid = Grid::new([5, 6, 7]);
        let f = ControlLattice::new([2, 2, 2], vals.clone()).evaluate(&grid);
        for z in 0..7 {
            for y in 0..6 {
                for x in 0..5 {
                    let (u, v, w) = (x as f64 / 4.0, y as f64 / 5.0, z as f64 / 6.0);
                    let mut expect = 0.0;
                    for c in 0..8 {
                        let (a, b, cc) = (c & 1, (c >> 1) & 1, (c >> 2) & 1);
                        let wa = if a == 1 { u } else { 1.0 - u };
                        let wb = if b == 1 { v } else { 1.0 - v };
                        let wc = if cc == 1 { w } else { 1.0 - w };
                        expect += wa * wb * wc * vals[c];
                    }
                    assert!((f.get(x, y, z) - expect).abs() < 1e-6);
                }
            }
        }
    }

    #[test]
    fn field_hits_control_values_at_sites() {
        let mut s = RngStream::new(8);
        let lattice = ControlLattice::random([4, 4, 4], 0.6, 1.4, &mut s).unwrap();
        let grid = Grid::new([10, 10, 10]);
        let f = lattice.evaluate(&grid);
        for c in 0..4 {
            for b in 0..4 {
                for a in 0..4 {
                    let v = lattice.values()[a + 4 * (b + 4 * c)];
                    assert!((f.get(3 * a, 3 * b, 3 * c) - v).abs() < 1e-3);
                }
            }
        }
    }

    #[test]
    fn zero_strength_bias_is_unity() {
        let mut s = RngStream::new(1);
        let p = BiasFieldParams {
            control_points: 5,
            strength: 0.0,
        };
        let f = bias_field(&Grid::new([4, 4, 4]), &p, &mut s).unwrap();
        assert!(f.data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn gfactor_has_unit_mean() {
        let mut s = RngStream::new(4);
        let g = gfactor_field(&Grid::new([16, 16, 16]), 3.4, &mut s).unwrap();
        let mean = g.data().iter().sum::<f64>() / g.len() as f64;
        assert!((mean - 1.0).abs() < 1e-12);
        assert!(g.data().iter().all(|&v| v > 0.0));
    }
}
