//! Single-file NIfTI-1 (`.nii`, `.nii.gz`) reading and writing, and
//! reorientation to canonical RAS axis order.

use std::fs::File;
use std::io::{BufWriter, Cursor, Read, Write};
use std::path::Path;

use byteorder::{BigEndian, ByteOrder, LittleEndian, ReadBytesExt, WriteBytesExt};
use flate2::read::GzDecoder;
use flate2::write::GzEncoder;
use flate2::Compression;
use nalgebra::Matrix3;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::volgrid::{Field, Grid, Volume};

pub mod stack;

pub const HEADER_SIZE: usize = 348;
pub const VOX_OFFSET: usize = 352;
pub const MAGIC: [u8; 4] = *b"n+1\0";
const GZIP_MAGIC: [u8; 2] = [0x1f, 0x8b];

/// Supported on-disk voxel types.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NiftiType {
    Uint8,
    Int16,
    Int32,
    Float32,
    Float64,
}

impl NiftiType {
    pub fn code(self) -> i16 {
        match self {
            NiftiType::Uint8 => 2,
            NiftiType::Int16 => 4,
            NiftiType::Int32 => 8,
            NiftiType::Float32 => 16,
            NiftiType::Float64 => 64,
        }
    }

    pub fn from_code(code: i16) -> Result<Self> {
        Ok(match code {
            2 => NiftiType::Uint8,
            4 => NiftiType::Int16,
            8 => NiftiType::Int32,
            16 => NiftiType::Float32,
            64 => NiftiType::Float64,
            other => return Err(Error::UnsupportedDatatype(other)),
        })
    }

    pub fn bytes(self) -> usize {
        match self {
            NiftiType::Uint8 => 1,
            NiftiType::Int16 => 2,
            NiftiType::Int32 | NiftiType::Float32 => 4,
            NiftiType::Float64 => 8,
        }
    }
}

/// The fields of the 348-byte header this crate interprets or writes.
/// Everything else is read past and written as zero.
#[derive(Debug, Clone, PartialEq)]
pub struct NiftiHeader {
    pub dim: [i16; 8],
    pub intent_code: i16,
    pub datatype: i16,
    pub bitpix: i16,
    pub pixdim: [f32; 8],
    pub vox_offset: f32,
    pub scl_slope: f32,
    pub scl_inter: f32,
    pub xyzt_units: u8,
    pub descrip: [u8; 80],
    pub qform_code: i16,
    pub sform_code: i16,
    pub quatern: [f32; 3],
    pub qoffset: [f32; 3],
    pub srow: [[f32; 4]; 3],
    pub magic: [u8; 4],
    pub little_endian: bool,
}

impl Default for NiftiHeader {
    fn default() -> Self {
        Self {
            dim: [3, 1, 1, 1, 1, 1, 1, 1],
            intent_code: 0,
            datatype: NiftiType::Float32.code(),
            bitpix: 32,
            pixdim: [1.0; 8],
            vox_offset: VOX_OFFSET as f32,
            scl_slope: 1.0,
            scl_inter: 0.0,
            xyzt_units: 2,
            descrip: [0; 80],
            qform_code: 0,
            sform_code: 0,
            quatern: [0.0; 3],
            qoffset: [0.0; 3],
            srow: [[1.0, 0.0, 0.0, 0.0], [0.0, 1.0, 0.0, 0.0], [0.0, 0.0, 1.0, 0.0]],
            magic: MAGIC,
            little_endian: true,
        }
    }
}

impl NiftiHeader {
    fn parse<E: ByteOrder>(b: &[u8]) -> Result<Self> {
        let i16_at = |o: usize| E::read_i16(&b[o..]);
        let f32_at = |o: usize| E::read_f32(&b[o..]);
        let mut h = NiftiHeader::default();
        for i in 0..8 {
            h.dim[i] = i16_at(40 + 2 * i);
            h.pixdim[i] = f32_at(76 + 4 * i);
        }
        h.intent_code = i16_at(68);
        h.datatype = i16_at(70);
        h.bitpix = i16_at(72);
        h.vox_offset = f32_at(108);
        h.scl_slope = f32_at(112);
        h.scl_inter = f32_at(116);
        h.xyzt_units = b[123];
        h.descrip.copy_from_slice(&b[148..228]);
        h.qform_code = i16_at(252);
        h.sform_code = i16_at(254);
        for i in 0..3 {
            h.quatern[i] = f32_at(256 + 4 * i);
            h.qoffset[i] = f32_at(268 + 4 * i);
            for j in 0..4 {
                h.srow[i][j] = f32_at(280 + 16 * i + 4 * j);
            }
        }
        h.magic.copy_from_slice(&b[344..348]);
        Ok(h)
    }

    pub fn from_bytes(b: &[u8]) -> Result<Self> {
        if b.len() < HEADER_SIZE {
            return Err(Error::Truncated {
                expected: HEADER_SIZE,
                found: b.len(),
            });
        }
        let mut h = if LittleEndian::read_i32(b) == HEADER_SIZE as i32 {
            Self::parse::<LittleEndian>(b)?
        } else if BigEndian::read_i32(b) == HEADER_SIZE as i32 {
            let mut h = Self::parse::<BigEndian>(b)?;
            h.little_endian = false;
            h
        } else {
            return Err(Error::BadHeader("sizeof_hdr is not 348".into()));
        };
        if h.magic != MAGIC {
            return Err(Error::BadMagic(h.magic));
        }
        if !(1..=7).contains(&h.dim[0]) {
            return Err(Error::BadHeader(format!("dim[0] = {}", h.dim[0])));
        }
        NiftiType::from_code(h.datatype)?;
        if h.vox_offset < HEADER_SIZE as f32 {
            h.vox_offset = VOX_OFFSET as f32;
        }
        Ok(h)
    }

    /// Serialises to exactly 348 little-endian bytes.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut b = vec![0u8; HEADER_SIZE];
        let w16 = |b: &mut [u8], o: usize, v: i16| LittleEndian::write_i16(&mut b[o..], v);
        let wf = |b: &mut [u8], o: usize, v: f32| LittleEndian::write_f32(&mut b[o..], v);
        LittleEndian::write_i32(&mut b[0..], HEADER_SIZE as i32);
        b[38] = b'r';
        for i in 0..8 {
            w16(&mut b, 40 + 2 * i, self.dim[i]);
            wf(&mut b, 76 + 4 * i, self.pixdim[i]);
        }
        w16(&mut b, 68, self.intent_code);
        w16(&mut b, 70, self.datatype);
        w16(&mut b, 72, self.bitpix);
        wf(&mut b, 108, self.vox_offset);
        wf(&mut b, 112, self.scl_slope);
        wf(&mut b, 116, self.scl_inter);
        b[123] = self.xyzt_units;
        b[148..228].copy_from_slice(&self.descrip);
        w16(&mut b, 252, self.qform_code);
        w16(&mut b, 254, self.sform_code);
        for i in 0..3 {
            wf(&mut b, 256 + 4 * i, self.quatern[i]);
            wf(&mut b, 268 + 4 * i, self.qoffset[i]);
            for j in 0..4 {
                wf(&mut b, 280 + 16 * i + 4 * j, self.srow[i][j]);
            }
        }
        b[344..348].copy_from_slice(&self.magic);
        b
    }

    pub fn shape(&self) -> [usize; 3] {
        let nd = self.dim[0].clamp(1, 7) as usize;
        [1, 2, 3].map(|i| if i <= nd { self.dim[i].max(1) as usize } else { 1 })
    }

    fn pixdim_spacing(&self) -> [f64; 3] {
        [1, 2, 3].map(|i| {
            let p = (self.pixdim[i] as f64).abs();
            if p > 0.0 && p.is_finite() {
                p
            } else {
                1.0
            }
        })
    }

    /// Grid geometry: sform if present, else qform, else pixdim only.
    pub fn grid(&self) -> Result<Grid> {
        let shape = self.shape();
        let grid = if self.sform_code > 0 {
            let mut spacing = [0.0; 3];
            let mut dir = [[0.0; 3]; 3];
            for c in 0..3 {
                let col = [0, 1, 2].map(|r| self.srow[r][c] as f64);
                let n = (col[0] * col[0] + col[1] * col[1] + col[2] * col[2]).sqrt();
                if !(n > 0.0) {
                    return Err(Error::DegenerateOrientation);
                }
                spacing[c] = n;
                for r in 0..3 {
                    dir[r][c] = col[r] / n;
                }
            }
            Grid {
                shape,
                spacing,
                origin: [0, 1, 2].map(|r| self.srow[r][3] as f64),
                direction: orthonormalize(dir)?,
            }
        } else if self.qform_code > 0 {
            let [b, c, d] = self.quatern.map(|v| v as f64);
            let a = (1.0 - (b * b + c * c + d * d)).max(0.0).sqrt();
            let mut r = [
                [a * a + b * b - c * c - d * d, 2.0 * (b * c - a * d), 2.0 * (b * d + a * c)],
                [2.0 * (b * c + a * d), a * a + c * c - b * b - d * d, 2.0 * (c * d - a * b)],
                [2.0 * (b * d - a * c), 2.0 * (c * d + a * b), a * a + d * d - c * c - b * b],
            ];
            if self.pixdim[0] < 0.0 {
                for row in r.iter_mut() {
                    row[2] = -row[2];
                }
            }
            Grid {
                shape,
                spacing: self.pixdim_spacing(),
                origin: self.qoffset.map(|v| v as f64),
                direction: orthonormalize(r)?,
            }
        } else {
            Grid::new(shape).with_spacing(self.pixdim_spacing())
        };
        Ok(grid)
    }

    /// Header describing `grid` with both qform and sform set.
    pub fn for_grid(grid: &Grid, dtype: NiftiType) -> Self {
        let mut h = NiftiHeader::default();
        h.dim = [
            3,
            grid.shape[0] as i16,
            grid.shape[1] as i16,
            grid.shape[2] as i16,
            1,
            1,
            1,
            1,
        ];
        h.datatype = dtype.code();
        h.bitpix = (dtype.bytes() * 8) as i16;
        let (quat, qfac) = quaternion_from_direction(&grid.direction);
        h.pixdim = [
            qfac as f32,
            grid.spacing[0] as f32,
            grid.spacing[1] as f32,
            grid.spacing[2] as f32,
            1.0,
            1.0,
            1.0,
            1.0,
        ];
        h.qform_code = 1;
        h.sform_code = 1;
        h.quatern = quat.map(|v| v as f32);
        h.qoffset = grid.origin.map(|v| v as f32);
        let m = grid.voxel_to_world();
        for r in 0..3 {
            for c in 0..4 {
                h.srow[r][c] = m[(r, c)] as f32;
            }
        }
        h
    }
}

/// Re-orthonormalises a direction matrix decoded from float32 storage.
fn orthonormalize(d: [[f64; 3]; 3]) -> Result<[[f64; 3]; 3]> {
    let m = Matrix3::from_fn(|r, c| d[r][c]);
    if m.determinant().abs() < 1e-6 {
        return Err(Error::DegenerateOrientation);
    }
    if (m.transpose() * m - Matrix3::identity()).abs().max() < 1e-7 {
        return Ok(d);
    }
    let svd = m.svd(true, true);
    let (u, vt) = (svd.u.unwrap(), svd.v_t.unwrap());
    let q = u * vt;
    Ok([0, 1, 2].map(|r| [0, 1, 2].map(|c| q[(r, c)])))
}

/// Unit quaternion (b, c, d) and qfac for an orthonormal direction matrix.
fn quaternion_from_direction(d: &[[f64; 3]; 3]) -> ([f64; 3], f64) {
    let mut r = *d;
    let m = Matrix3::from_fn(|i, j| r[i][j]);
    let qfac = if m.determinant() < 0.0 {
        for row in r.iter_mut() {
            row[2] = -row[2];
        }
        -1.0
    } else {
        1.0
    };
    let (r11, r12, r13) = (r[0][0], r[0][1], r[0][2]);
    let (r21, r22, r23) = (r[1][0], r[1][1], r[1][2]);
    let (r31, r32, r33) = (r[2][0], r[2][1], r[2][2]);
    let trace = r11 + r22 + r33 + 1.0;
    let quat = if trace > 0.5 {
        let a = 0.5 * trace.sqrt();
        [0.25 * (r32 - r23) / a, 0.25 * (r13 - r31) / a, 0.25 * (r21 - r12) / a]
    } else {
        let xd = 1.0 + r11 - (r22 + r33);
        let yd = 1.0 + r22 - (r11 + r33);
        let zd = 1.0 + r33 - (r11 + r22);
        let (a, b, c, d) = if xd > 1.0 {
            let b = 0.5 * xd.sqrt();
            (0.25 * (r32 - r23) / b, b, 0.25 * (r12 + r21) / b, 0.25 * (r13 + r31) / b)
        } else if yd > 1.0 {
            let c = 0.5 * yd.sqrt();
            (0.25 * (r13 - r31) / c, 0.25 * (r12 + r21) / c, c, 0.25 * (r23 + r32) / c)
        } else {
            let d = 0.5 * zd.sqrt();
            (0.25 * (r21 - r12) / d, 0.25 * (r13 + r31) / d, 0.25 * (r23 + r32) / d, d)
        };
        // Keep the scalar part non-negative; (b, c, d) alone must encode it.
        if a < 0.0 {
            [-b, -c, -d]
        } else {
            [b, c, d]
        }
    };
    (quat, qfac)
}

fn decode_payload<E: ByteOrder>(raw: &[u8], dtype: NiftiType, n: usize) -> Vec<f64> {
    let mut cur = Cursor::new(raw);
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let v = match dtype {
            NiftiType::Uint8 => cur.read_u8().map(f64::from),
            NiftiType::Int16 => cur.read_i16::<E>().map(f64::from),
            NiftiType::Int32 => cur.read_i32::<E>().map(f64::from),
            NiftiType::Float32 => cur.read_f32::<E>().map(f64::from),
            NiftiType::Float64 => cur.read_f64::<E>(),
        };
        out.push(v.expect("payload length checked"));
    }
    out
}

/// Decodes an in-memory `.nii` or gzip-compressed `.nii.gz` image.
pub fn read_nifti_bytes(bytes: &[u8]) -> Result<(Volume, NiftiHeader)> {
    let owned;
    let bytes = if bytes.starts_with(&GZIP_MAGIC) {
        let mut buf = Vec::new();
        GzDecoder::new(bytes)
            .read_to_end(&mut buf)
            .map_err(|e| Error::BadHeader(format!("gzip: {e}")))?;
        owned = buf;
        &owned[..]
    } else {
        bytes
    };
    let header = NiftiHeader::from_bytes(bytes)?;
    if header.dim[0] > 3 && header.dim[4..].iter().take(header.dim[0] as usize - 3).any(|&d| d > 1) {
        return Err(Error::BadHeader(format!(
            "expected a 3-D volume, dims {:?}",
            header.dim
        )));
    }
    let dtype = NiftiType::from_code(header.datatype)?;
    let grid = header.grid()?;
    let n = grid.len();
    let start = header.vox_offset as usize;
    let expected = start + n * dtype.bytes();
    if bytes.len() < expected {
        return Err(Error::Truncated {
            expected,
            found: bytes.len(),
        });
    }
    let raw = &bytes[start..expected];
    let mut data = if header.little_endian {
        decode_payload::<LittleEndian>(raw, dtype, n)
    } else {
        decode_payload::<BigEndian>(raw, dtype, n)
    };
    if header.scl_slope != 0.0 && (header.scl_slope != 1.0 || header.scl_inter != 0.0) {
        let (s, i) = (header.scl_slope as f64, header.scl_inter as f64);
        data.iter_mut().for_each(|v| *v = *v * s + i);
    }
    Ok((Volume::new(grid, data)?, header))
}

pub fn read_nifti(path: impl AsRef<Path>) -> Result<(Volume, NiftiHeader)> {
    let path = path.as_ref();
    let mut bytes = Vec::new();
    File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    read_nifti_bytes(&bytes)
}

/// Encodes as a single-file little-endian NIfTI-1 image. Integer types are
/// rounded and saturated.
pub fn encode_nifti(vol: &Volume, dtype: NiftiType) -> Vec<u8> {
    let header = NiftiHeader::for_grid(vol.grid(), dtype);
    let mut out = header.to_bytes();
    out.extend_from_slice(&[0u8; VOX_OFFSET - HEADER_SIZE]);
    out.reserve(vol.len() * dtype.bytes());
    for &v in vol.data() {
        match dtype {
            NiftiType::Uint8 => out.push(v.round().clamp(0.0, u8::MAX as f64) as u8),
            NiftiType::Int16 => out
                .write_i16::<LittleEndian>(v.round().clamp(i16::MIN as f64, i16::MAX as f64) as i16)
                .unwrap(),
            NiftiType::Int32 => out
                .write_i32::<LittleEndian>(v.round().clamp(i32::MIN as f64, i32::MAX as f64) as i32)
                .unwrap(),
            NiftiType::Float32 => out.write_f32::<LittleEndian>(v as f32).unwrap(),
            NiftiType::Float64 => out.write_f64::<LittleEndian>(v).unwrap(),
        }
    }
    out
}

/// Writes `vol`; a `.gz` extension selects gzip compression.
pub fn write_nifti(vol: &Volume, path: impl AsRef<Path>, dtype: NiftiType) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_nifti(vol, dtype);
    let io = |e| Error::io(path, e);
    let file = File::create(path).map_err(io)?;
    let mut w = BufWriter::new(file);
    if path.extension().is_some_and(|e| e == "gz") {
        let mut gz = GzEncoder::new(w, Compression::fast());
        gz.write_all(&bytes).map_err(io)?;
        gz.finish().map_err(io)?.flush().map_err(io)?;
    } else {
        w.write_all(&bytes).map_err(io)?;
        w.flush().map_err(io)?;
    }
    Ok(())
}

/// Axis permutation and signs taking voxel axes to world R, A, S.
fn ras_mapping(direction: &[[f64; 3]; 3]) -> Result<([usize; 3], [bool; 3])> {
    let m = Matrix3::from_fn(|r, c| direction[r][c]);
    if m.determinant().abs() < 1e-6 {
        return Err(Error::DegenerateOrientation);
    }
    const PERMS: [[usize; 3]; 6] = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];
    let best = PERMS
        .iter()
        .max_by(|a, b| {
            let score = |p: &[usize; 3]| (0..3).map(|j| direction[j][p[j]].abs()).sum::<f64>();
            score(a).total_cmp(&score(b)).then(std::cmp::Ordering::Greater)
        })
        .copied()
        .unwrap();
    let negate = [0, 1, 2].map(|j| direction[j][best[j]] < 0.0);
    Ok((best, negate))
}

/// Permutes and flips voxel axes so they point along +R, +A, +S as closely
/// as possible. Pure index shuffle; world coordinates are preserved.
pub fn reorient_ras<T: Copy + Send + Sync>(vol: &Field<T>) -> Result<Field<T>> {
    let g = vol.grid();
    let (perm, negate) = ras_mapping(&g.direction)?;
    if perm == [0, 1, 2] && negate == [false; 3] {
        return Ok(vol.clone());
    }
    let old_shape = g.shape;
    let shape = perm.map(|p| old_shape[p]);
    let old_index = move |n: [usize; 3]| {
        let mut o = [0usize; 3];
        for j in 0..3 {
            o[perm[j]] = if negate[j] {
                old_shape[perm[j]] - 1 - n[j]
            } else {
                n[j]
            };
        }
        o
    };
    let mut direction = [[0.0; 3]; 3];
    for j in 0..3 {
        let s = if negate[j] { -1.0 } else { 1.0 };
        for r in 0..3 {
            direction[r][j] = s * g.direction[r][perm[j]];
        }
    }
    let o0 = old_index([0, 0, 0]);
    let grid = Grid {
        shape,
        spacing: perm.map(|p| g.spacing[p]),
        origin: g.world(o0.map(|v| v as f64)),
        direction,
    };
    let [nx, ny, _] = shape;
    let src = vol.data();
    let mut data: Vec<T> = src.to_vec();
    data.par_chunks_mut(nx * ny).enumerate().for_each(|(z, slab)| {
        for y in 0..ny {
            for x in 0..nx {
                let o = old_index([x, y, z]);
                slab[x + nx * y] = src[g.index(o[0], o[1], o[2])];
            }
        }
    });
    Field::new(grid, data)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_volume() -> Volume {
        let g = Grid::new([4, 3, 2])
            .with_spacing([1.5, 1.0, 2.5])
            .with_origin([-10.0, 20.0, 5.0]);
        Volume::from_fn(g, |[x, y, z]| (x as f64) * 0.25 - (y * z) as f64 + 0.125).unwrap()
    }

    #[test]
    fn header_is_348_bytes_and_payload_at_352() {
        let bytes = encode_nifti(&sample_volume(), NiftiType::Float32);
        assert_eq!(LittleEndian::read_i32(&bytes), 348);
        assert_eq!(LittleEndian::read_f32(&bytes[108..]), 352.0);
        assert_eq!(&bytes[344..348], b"n+1\0");
        assert_eq!(bytes.len(), 352 + 24 * 4);
    }

    #[test]
    fn scaling_is_applied() {
        let v = Volume::filled(Grid::new([1, 1, 1]), 3.0).unwrap();
        let mut bytes = encode_nifti(&v, NiftiType::Int16);
        LittleEndian::write_f32(&mut bytes[112..], 2.0);
        LittleEndian::write_f32(&mut bytes[116..], 1.0);
        let (out, _) = read_nifti_bytes(&bytes).unwrap();
        assert_eq!(out.data(), &[7.0]);
    }

    #[test]
    fn distinct_errors() {
        let v = sample_volume();
        let good = encode_nifti(&v, NiftiType::Float32);

        let mut bad_magic = good.clone();
        bad_magic[344] = b'x';
        assert!(matches!(read_nifti_bytes(&bad_magic), Err(Error::BadMagic(_))));

        let mut bad_type = good.clone();
        LittleEndian::write_i16(&mut bad_type[70..], 128);
        assert!(matches!(
            read_nifti_bytes(&bad_type),
            Err(Error::UnsupportedDatatype(128))
        ));

        let truncated = &good[..good.len() - 3];
        assert!(matches!(read_nifti_bytes(truncated), Err(Error::Truncated { .. })));
    }

    #[test]
    fn big_endian_files_decode() {
        let v = sample_volume();
        let le = encode_nifti(&v, NiftiType::Int32);
        let header = NiftiHeader::from_bytes(&le).unwrap();
        // Re-encode the header and payload big-endian by hand.
        let mut be = vec![0u8; 352];
        BigEndian::write_i32(&mut be[0..], 348);
        for i in 0..8 {
            BigEndian::write_i16(&mut be[40 + 2 * i..], header.dim[i]);
            BigEndian::write_f32(&mut be[76 + 4 * i..], header.pixdim[i]);
        }
        BigEndian::write_i16(&mut be[70..], header.datatype);
        BigEndian::write_f32(&mut be[108..], 352.0);
        BigEndian::write_f32(&mut be[112..], 1.0);
        be[344..348].copy_from_slice(b"n+1\0");
        for &x in v.data() {
            be.write_i32::<BigEndian>(x.round() as i32).unwrap();
        }
        let (out, h) = read_nifti_bytes(&be).unwrap();
        assert!(!h.little_endian);
        let expect: Vec<f64> = v.data().iter().map(|x| x.round()).collect();
        assert_eq!(out.data(), &expect[..]);
        assert_eq!(out.grid().spacing, [1.5, 1.0, 2.5]);
    }

    #[test]
    fn qform_and_sform_agree() {
        let c = std::f64::consts::FRAC_1_SQRT_2;
        let dir = [[c, -c, 0.0], [c, c, 0.0], [0.0, 0.0, -1.0]];
        let g = Grid::new([3, 3, 3]).with_direction(dir).with_origin([1.0, 2.0, 3.0]);
        let v = Volume::filled(g.clone(), 1.0).unwrap();
        let mut h = NiftiHeader::from_bytes(&encode_nifti(&v, NiftiType::Uint8)).unwrap();
        let from_s = h.grid().unwrap();
        h.sform_code = 0;
        let from_q = h.grid().unwrap();
        assert!(from_s.same_geometry(&g, 1e-6));
        assert!(from_q.same_geometry(&g, 1e-6));
    }

    #[test]
    fn pixdim_only_geometry() {
        let v = sample_volume();
        let mut bytes = encode_nifti(&v, NiftiType::Float32);
        LittleEndian::write_i16(&mut bytes[252..], 0);
        LittleEndian::write_i16(&mut bytes[254..], 0);
        let (out, _) = read_nifti_bytes(&bytes).unwrap();
        assert_eq!(out.grid().origin, [0.0; 3]);
        assert_eq!(out.grid().spacing, [1.5, 1.0, 2.5]);
    }

    #[test]
    fn ras_volume_is_untouched() {
        let v = sample_volume();
        assert_eq!(reorient_ras(&v).unwrap(), v);
    }

    #[test]
    fn las_volume_flips_x() {
        let dir = [[-1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
        let g = Grid::new([4, 3, 2]).with_direction(dir).with_origin([5.0, 0.0, 0.0]);
        let v = Volume::from_fn(g, |[x, y, z]| (x + 4 * y + 12 * z) as f64).unwrap();
        let r = reorient_ras(&v).unwrap();
        assert_eq!(r.grid().direction, Grid::IDENTITY_DIRECTION);
        assert_eq!(r.get(0, 0, 0), v.get(3, 0, 0));
        // World coordinate of every voxel preserved.
        for z in 0..2 {
            for y in 0..3 {
                for x in 0..4 {
                    let w_new = r.grid().world([x as f64, y as f64, z as f64]);
                    let w_old = v.grid().world([(3 - x) as f64, y as f64, z as f64]);
                    for a in 0..3 {
                        assert!((w_new[a] - w_old[a]).abs() < 1e-9);
                    }
                    assert_eq!(r.get(x, y, z), v.get(3 - x, y, z));
                }
            }
        }
    }
}
