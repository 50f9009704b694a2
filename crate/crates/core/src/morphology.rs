//! Binary morphology, connected components and exact Euclidean distance
//! transforms.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::volgrid::{Field, Grid, LabelVolume, Volume};

pub type BinaryMask = Field<bool>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Connectivity {
    #[serde(rename = "6")]
    Six,
    #[serde(rename = "18")]
    Eighteen,
    #[default]
    #[serde(rename = "26")]
    TwentySix,
}

impl Connectivity {
    /// Neighbour offsets (all 3^3 - 1 candidates filtered by connectivity).
    pub fn offsets(self) -> Vec<[isize; 3]> {
        let max_nonzero = match self {
            Connectivity::Six => 1,
            Connectivity::Eighteen => 2,
            Connectivity::TwentySix => 3,
        };
        let mut out = Vec::new();
        for dz in -1..=1isize {
            for dy in -1..=1isize {
                for dx in -1..=1isize {
                    let nz = (dx != 0) as usize + (dy != 0) as usize + (dz != 0) as usize;
                    if nz > 0 && nz <= max_nonzero {
                        out.push([dx, dy, dz]);
                    }
                }
            }
        }
        out
    }
}

pub fn count(mask: &BinaryMask) -> usize {
    mask.data().iter().filter(|&&b| b).count()
}

pub fn threshold(vol: &Volume, above: f64) -> BinaryMask {
    vol.map(|v| v > above)
}

pub fn complement(mask: &BinaryMask) -> BinaryMask {
    mask.map(|b| !b)
}

pub fn to_volume(mask: &BinaryMask) -> Volume {
    mask.map(|b| if b { 1.0 } else { 0.0 })
}

/// Squared distance transform of a 1-D sampled function (lower envelope of
/// parabolas). `f` holds squared distances or `INFINITY`; `w` is the sample
/// spacing.
fn envelope_1d(f: &[f64], w: f64, out: &mut [f64], v: &mut Vec<usize>, z: &mut Vec<f64>) {
    let n = f.len();
    v.clear();
    z.clear();
    let w2 = w * w;
    for q in 0..n {
        if f[q].is_infinite() {
            continue;
        }
        let fq = f[q] + w2 * (q * q) as f64;
        loop {
            match v.last() {
                None => {
                    v.push(q);
                    z.push(f64::NEG_INFINITY);
                    break;
                }
                Some(&p) => {
                    let fp = f[p] + w2 * (p * p) as f64;
                    let s = (fq - fp) / (2.0 * w2 * (q - p) as f64);
                    if s <= *z.last().unwrap() {
                        v.pop();
                        z.pop();
                    } else {
                        v.push(q);
                        z.push(s);
                        break;
                    }
                }
            }
        }
    }
    if v.is_empty() {
        out.iter_mut().for_each(|o| *o = f64::INFINITY);
        return;
    }
    let mut k = 0;
    for (q, o) in out.iter_mut().enumerate() {
        while k + 1 < v.len() && z[k + 1] < q as f64 {
            k += 1;
        }
        let p = v[k];
        let d = w * (q as f64 - p as f64);
        *o = f[p] + d * d;
    }
}

fn transform_axis(data: &mut [f64], shape: [usize; 3], axis: usize, w: f64) {
    let [nx, ny, nz] = shape;
    let n = shape[axis];
    let stride = [1, nx, nx * ny][axis];
    let starts: Vec<usize> = match axis {
        0 => (0..ny * nz).map(|l| l * nx).collect(),
        1 => (0..nz)
            .flat_map(|z| (0..nx).map(move |x| x + nx * ny * z))
            .collect(),
        _ => (0..nx * ny).collect(),
    };
    let src: &[f64] = data;
    let lines: Vec<Vec<f64>> = starts
        .par_iter()
        .map_init(
            || (Vec::new(), Vec::new(), vec![0.0; n]),
            |(v, z, buf), &s| {
                for (i, b) in buf.iter_mut().enumerate() {
                    *b = src[s + i * stride];
                }
                let mut out = vec![0.0; n];
                envelope_1d(buf, w, &mut out, v, z);
                out
            },
        )
        .collect();
    for (s, line) in starts.iter().zip(lines) {
        for (i, val) in line.into_iter().enumerate() {
            data[s + i * stride] = val;
        }
    }
}

/// Exact squared Euclidean distance to the nearest `true` voxel, with the
/// given per-axis sample spacing. No foreground gives `INFINITY`.
pub fn edt_squared(mask: &BinaryMask, spacing: [f64; 3]) -> Vec<f64> {
    let shape = mask.shape();
    let mut d: Vec<f64> = mask
        .data()
        .iter()
        .map(|&b| if b { 0.0 } else { f64::INFINITY })
        .collect();
    for axis in 0..3 {
        transform_axis(&mut d, shape, axis, spacing[axis]);
    }
    d
}

/// Distance (mm, spacing-aware) from every voxel to the nearest foreground
/// voxel; an all-background mask yields `INFINITY` everywhere.
pub fn edt(mask: &BinaryMask) -> Volume {
    let d = edt_squared(mask, mask.grid().spacing);
    Volume::new(mask.grid().clone(), d.into_iter().map(f64::sqrt).collect())
        .expect("grid unchanged")
}

fn within(d2: f64, radius: f64) -> bool {
    d2 <= radius * radius + 1e-9
}

/// Dilation by the voxel-unit Euclidean ball of `radius_vox`.
pub fn dilate(mask: &BinaryMask, radius_vox: f64) -> BinaryMask {
    if radius_vox <= 0.0 {
        return mask.clone();
    }
    let d2 = edt_squared(mask, [1.0; 3]);
    Field::new(
        mask.grid().clone(),
        d2.into_iter().map(|d| within(d, radius_vox)).collect(),
    )
    .expect("grid unchanged")
}

/// Erosion by the voxel-unit Euclidean ball; voxels beyond the volume edge do
/// not erode.
pub fn erode(mask: &BinaryMask, radius_vox: f64) -> BinaryMask {
    if radius_vox <= 0.0 {
        return mask.clone();
    }
    let d2 = edt_squared(&complement(mask), [1.0; 3]);
    Field::new(
        mask.grid().clone(),
        mask.data()
            .iter()
            .zip(d2)
            .map(|(&m, d)| m && !within(d, radius_vox))
            .collect(),
    )
    .expect("grid unchanged")
}

struct DisjointSet {
    parent: Vec<u32>,
}

impl DisjointSet {
    fn new() -> Self {
        Self { parent: Vec::new() }
    }

    fn make(&mut self) -> u32 {
        let id = self.parent.len() as u32;
        self.parent.push(id);
        id
    }

    fn find(&mut self, mut x: u32) -> u32 {
        let mut root = x;
        while self.parent[root as usize] != root {
            root = self.parent[root as usize];
        }
        while self.parent[x as usize] != root {
            let next = self.parent[x as usize];
            self.parent[x as usize] = root;
            x = next;
        }
        root
    }

    fn union(&mut self, a: u32, b: u32) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
            self.parent[hi as usize] = lo;
        }
    }
}

/// Labels foreground components `1..=count`, numbered in order of their first
/// voxel in scan order.
pub fn connected_components(mask: &BinaryMask, connectivity: Connectivity) -> (LabelVolume, usize) {
    let grid = mask.grid().clone();
    let [nx, ny, nz] = grid.shape;
    // Neighbours already visited in scan order.
    let back: Vec<[isize; 3]> = connectivity
        .offsets()
        .into_iter()
        .filter(|d| (d[2], d[1], d[0]) < (0, 0, 0))
        .collect();
    let mut provisional = vec![u32::MAX; grid.len()];
    let mut sets = DisjointSet::new();
    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                let i = grid.index(x, y, z);
                if !mask.data()[i] {
                    continue;
                }
                let mut label = u32::MAX;
                for d in &back {
                    let (xx, yy, zz) = (x as isize + d[0], y as isize + d[1], z as isize + d[2]);
                    if xx < 0 || yy < 0 || zz < 0 || xx >= nx as isize || yy >= ny as isize {
                        continue;
                    }
                    let j = grid.index(xx as usize, yy as usize, zz as usize);
                    let lj = provisional[j];
                    if lj == u32::MAX {
                        continue;
                    }
                    if label == u32::MAX {
                        label = lj;
                    } else {
                        sets.union(label, lj);
                    }
                }
                if label == u32::MAX {
                    label = sets.make();
                }
                provisional[i] = label;
            }
        }
    }
    let mut remap = vec![0u32; sets.parent.len()];
    let mut next = 0u32;
    let mut out = vec![0u32; grid.len()];
    for (i, &p) in provisional.iter().enumerate() {
        if p == u32::MAX {
            continue;
        }
        let root = sets.find(p) as usize;
        if remap[root] == 0 {
            next += 1;
            remap[root] = next;
        }
        out[i] = remap[root];
    }
    (LabelVolume::new(grid, out).expect("grid unchanged"), next as usize)
}

/// Foreground voxels with at least one 6-neighbour in the background (the
/// outside of the volume counts as background).
pub fn surface(mask: &BinaryMask) -> BinaryMask {
    let grid: &Grid = mask.grid();
    let [nx, ny, nz] = grid.shape;
    let data = mask.data();
    let out: Vec<bool> = (0..grid.len())
        .into_par_iter()
        .map(|i| {
            if !data[i] {
                return false;
            }
            let [x, y, z] = grid.coords(i);
            x == 0
                || y == 0
                || z == 0
                || x + 1 == nx
                || y + 1 == ny
                || z + 1 == nz
                || !data[i - 1]
                || !data[i + 1]
                || !data[i - nx]
                || !data[i + nx]
                || !data[i - nx * ny]
                || !data[i + nx * ny]
        })
        .collect();
    Field::new(grid.clone(), out).expect("grid unchanged")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(n: usize, at: [usize; 3]) -> BinaryMask {
        let mut m = BinaryMask::filled(Grid::new([n, n, n]), false).unwrap();
        m.set(at[0], at[1], at[2], true);
        m
    }

    #[test]
    fn ball_dilation_counts() {
        let m = single(9, [4, 4, 4]);
        assert_eq!(dilate(&m, 0.0), m);
        assert_eq!(count(&dilate(&m, 1.0)), 7);
        // Integer offsets with x^2 + y^2 + z^2 <= 4, enumerated directly.
        let brute = (-2i32..=2)
            .flat_map(|x| (-2i32..=2).flat_map(move |y| (-2i32..=2).map(move |z| (x, y, z))))
            .filter(|(x, y, z)| x * x + y * y + z * z <= 4)
            .count();
        assert_eq!(brute, 33);
        assert_eq!(count(&dilate(&m, 2.0)), 33);
    }

    #[test]
    fn erosion_edges_and_identity() {
        let m = BinaryMask::filled(Grid::new([5, 5, 5]), true).unwrap();
        // Nothing outside the volume erodes.
        assert_eq!(erode(&m, 2.0), m);
        let mut cube = BinaryMask::filled(Grid::new([9, 9, 9]), false).unwrap();
        for z in 2..7 {
            for y in 2..7 {
                for x in 2..7 {
                    cube.set(x, y, z, true);
                }
            }
        }
        let e = erode(&cube, 1.0);
        assert_eq!(count(&e), 27);
        assert_eq!(erode(&cube, 0.0), cube);
    }

    #[test]
    fn components_connectivity() {
        let empty = BinaryMask::filled(Grid::new([3, 3, 3]), false).unwrap();
        assert_eq!(connected_components(&empty, Connectivity::TwentySix).1, 0);

        let mut face = empty.clone();
        face.set(0, 0, 0, true);
        face.set(1, 0, 0, true);
        for c in [Connectivity::Six, Connectivity::Eighteen, Connectivity::TwentySix] {
            assert_eq!(connected_components(&face, c).1, 1);
        }

        let mut corner = empty.clone();
        corner.set(0, 0, 0, true);
        corner.set(1, 1, 1, true);
        assert_eq!(connected_components(&corner, Connectivity::TwentySix).1, 1);
        assert_eq!(connected_components(&corner, Connectivity::Eighteen).1, 2);
        assert_eq!(connected_components(&corner, Connectivity::Six).1, 2);
    }

    #[test]
    fn component_labels_follow_scan_order() {
        let mut m = BinaryMask::filled(Grid::new([5, 1, 3]), false).unwrap();
        // A U-shape whose right arm appears first in scan order of row z=0.
        m.set(4, 0, 0, true);
        m.set(0, 0, 1, true);
        m.set(0, 0, 2, true);
        m.set(1, 0, 2, true);
        m.set(2, 0, 2, true);
        m.set(3, 0, 2, true);
        m.set(4, 0, 2, true);
        m.set(4, 0, 1, true);
        let (labels, n) = connected_components(&m, Connectivity::Six);
        assert_eq!(n, 1);
        assert!(labels.data().iter().all(|&l| l <= 1));
        let mut two = BinaryMask::filled(Grid::new([5, 1, 1]), false).unwrap();
        two.set(3, 0, 0, true);
        two.set(0, 0, 0, true);
        let (l, n) = connected_components(&two, Connectivity::Six);
        assert_eq!(n, 2);
        assert_eq!(l.get(0, 0, 0), 1);
        assert_eq!(l.get(3, 0, 0), 2);
    }

    #[test]
    fn edt_basics() {
        let m = single(8, [0, 0, 0]);
        let d = edt(&m);
        assert_eq!(d.get(3, 4, 0), 5.0);
        assert_eq!(d.get(0, 0, 0), 0.0);
        let none = BinaryMask::filled(Grid::new([3, 3, 3]), false).unwrap();
        assert!(edt(&none).data().iter().all(|v| v.is_infinite()));

        let aniso = m.clone().with_grid(Grid::new([8, 8, 8]).with_spacing([2.0, 1.0, 0.5])).unwrap();
        let d = edt(&aniso);
        assert!((d.get(1, 1, 2) - (4.0f64 + 1.0 + 1.0).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn surface_cases() {
        let s = single(4, [1, 2, 3]);
        assert_eq!(surface(&s), s);
        let mut cube = BinaryMask::filled(Grid::new([5, 5, 5]), false).unwrap();
        for z in 1..4 {
            for y in 1..4 {
                for x in 1..4 {
                    cube.set(x, y, z, true);
                }
            }
        }
        let surf = surface(&cube);
        assert_eq!(count(&surf), 26);
        assert!(!surf.get(2, 2, 2));
        let empty = BinaryMask::filled(Grid::new([3, 3, 3]), false).unwrap();
        assert_eq!(count(&surface(&empty)), 0);
    }
}
