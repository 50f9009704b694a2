//! Property tests over randomly generated volumes, masks and stacks.

use proptest::prelude::*;
use strokesynth::lesionpaste::{self, SoftLesion};
use strokesynth::morphology::{self, BinaryMask, Connectivity};
use strokesynth::niftio::{encode_nifti, read_nifti_bytes, reorient_ras, NiftiType};
use strokesynth::postproc::{
    blend_patches, entropy_map, plan_patches, softmax, LogitStack, PatchSpec,
};
use strokesynth::segmetrics::{self, Hd95Mode};
use strokesynth::volgrid::{percentiles, PosteriorStack};
use strokesynth::{Grid, RngStream, Volume};

fn shape() -> impl Strategy<Value = [usize; 3]> {
    [2usize..7, 2usize..7, 2usize..7]
}

fn mask() -> impl Strategy<Value = BinaryMask> {
    shape().prop_flat_map(|s| {
        proptest::collection::vec(any::<bool>(), s[0] * s[1] * s[2])
            .prop_map(move |d| BinaryMask::new(Grid::new(s), d).unwrap())
    })
}

fn mask_pair() -> impl Strategy<Value = (BinaryMask, BinaryMask)> {
    shape().prop_flat_map(|s| {
        let n = s[0] * s[1] * s[2];
        (
            proptest::collection::vec(any::<bool>(), n),
            proptest::collection::vec(any::<bool>(), n),
        )
            .prop_map(move |(a, b)| {
                (
                    BinaryMask::new(Grid::new(s), a).unwrap(),
                    BinaryMask::new(Grid::new(s), b).unwrap(),
                )
            })
    })
}

fn volume() -> impl Strategy<Value = Volume> {
    shape().prop_flat_map(|s| {
        proptest::collection::vec(-50.0f64..50.0, s[0] * s[1] * s[2])
            .prop_map(move |d| Volume::new(Grid::new(s), d).unwrap())
    })
}

/// Stack of `c` classes whose per-voxel sums are at most one.
fn stack() -> impl Strategy<Value = PosteriorStack> {
    (shape(), 1usize..5).prop_flat_map(|(s, c)| {
        let n = s[0] * s[1] * s[2];
        (
            proptest::collection::vec(proptest::collection::vec(0.0f64..1.0, c), n),
            proptest::collection::vec(0.0f64..=1.0, n),
        )
            .prop_map(move |(raw, totals)| {
                let g = Grid::new(s);
                let mut vols = vec![Vec::with_capacity(n); c];
                for (row, t) in raw.iter().zip(&totals) {
                    let sum: f64 = row.iter().sum::<f64>().max(1e-12);
                    for k in 0..c {
                        vols[k].push(row[k] / sum * t);
                    }
                }
                PosteriorStack::new(
                    (0..c).map(|k| format!("k{k}")).collect(),
                    vols.into_iter().map(|d| Volume::new(g.clone(), d).unwrap()).collect(),
                )
                .unwrap()
            })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn rng_derivation_is_pure(seed in any::<u64>(), idx in 0u64..1000) {
        let a = RngStream::new(seed).derive("x", idx).uniform(0.0, 1.0).unwrap();
        let b = RngStream::new(seed).derive("x", idx).uniform(0.0, 1.0).unwrap();
        let c = RngStream::new(seed).derive("x", idx + 1).uniform(0.0, 1.0).unwrap();
        prop_assert_eq!(a.to_bits(), b.to_bits());
        prop_assert_ne!(a.to_bits(), c.to_bits());
    }

    #[test]
    fn dice_and_hd95_are_symmetric((p, g) in mask_pair()) {
        let d1 = segmetrics::dice(&p, &g).unwrap();
        let d2 = segmetrics::dice(&g, &p).unwrap();
        prop_assert_eq!(d1, d2);
        prop_assert!((0.0..=1.0).contains(&d1));
        let h1 = segmetrics::hd95(&p, &g, Hd95Mode::Pooled).unwrap();
        let h2 = segmetrics::hd95(&g, &p, Hd95Mode::Pooled).unwrap();
        prop_assert_eq!(h1, h2);
        let m = segmetrics::hd95(&p, &g, Hd95Mode::MaxOfSides).unwrap();
        prop_assert!(m >= 0.0 && (m == 256.0) == (h1 == 256.0));
    }

    #[test]
    fn self_comparison_is_perfect(m in mask()) {
        prop_assert_eq!(segmetrics::dice(&m, &m).unwrap(), 1.0);
        prop_assert_eq!(segmetrics::hd95(&m, &m, Hd95Mode::Pooled).unwrap(), 0.0);
        prop_assert_eq!(segmetrics::avd(&m, &m).unwrap(), 0.0);
        prop_assert_eq!(segmetrics::ald(&m, &m).unwrap(), 0);
        prop_assert_eq!(segmetrics::lesion_f1(&m, &m).unwrap(), 1.0);
        prop_assert_eq!(segmetrics::fpr(&m, &m).unwrap(), 0.0);
    }

    #[test]
    fn dilation_and_erosion_bracket_the_mask(m in mask(), r in 0.5f64..2.5) {
        let d = morphology::dilate(&m, r);
        let e = morphology::erode(&m, r);
        let d2 = morphology::dilate(&m, r + 1.0);
        for i in 0..m.len() {
            prop_assert!(!m.data()[i] || d.data()[i]);
            prop_assert!(!e.data()[i] || m.data()[i]);
            prop_assert!(!d.data()[i] || d2.data()[i]);
        }
    }

    #[test]
    fn components_are_flip_invariant(m in mask(), axes in any::<[bool; 3]>()) {
        for c in [Connectivity::Six, Connectivity::Eighteen, Connectivity::TwentySix] {
            let (_, a) = morphology::connected_components(&m, c);
            let (_, b) = morphology::connected_components(&m.flip(axes), c);
            prop_assert_eq!(a, b);
        }
    }

    #[test]
    fn flip_is_an_involution(v in volume(), axes in any::<[bool; 3]>()) {
        prop_assert_eq!(v.flip(axes).flip(axes), v);
    }

    #[test]
    fn paste_preserves_mass(s in stack(), w in proptest::collection::vec(0.0f64..=1.0, 6 * 6 * 6)) {
        let g = s.grid().clone();
        let weights = Volume::new(g.clone(), w[..g.len()].to_vec()).unwrap();
        let out = lesionpaste::paste(&s, &SoftLesion::new(weights).unwrap()).unwrap();
        for (a, b) in s.sums().iter().zip(out.sums()) {
            prop_assert!((a - b).abs() <= 1e-9);
            prop_assert!(b <= 1.0 + 1e-9);
        }
    }

    #[test]
    fn softmax_is_a_distribution_and_entropy_is_bounded(v in volume(), c in 2usize..6) {
        let chans: Vec<Volume> = (0..c).map(|k| v.map(|x| x * (k as f64 - 1.5))).collect();
        let p = softmax(&LogitStack::new(chans).unwrap());
        let h = entropy_map(&p);
        for i in 0..v.len() {
            let sum: f64 = (0..c).map(|k| p.channel(k).data()[i]).sum();
            prop_assert!((sum - 1.0).abs() < 1e-12);
            let e = h.data()[i];
            prop_assert!(e >= -1e-12 && e <= (c as f64).ln() + 1e-12);
        }
    }

    #[test]
    fn patch_plan_covers_volume(
        dims in [1usize..30, 1usize..30, 1usize..30],
        patch in [1usize..12, 1usize..12, 1usize..12],
        overlap in 0.0f64..0.9,
    ) {
        let spec = PatchSpec { patch_size: patch, overlap, blend_sigma: 0.125 };
        let plan = plan_patches(dims, &spec).unwrap();
        let mut hit = vec![false; dims[0] * dims[1] * dims[2]];
        for w in &plan {
            for a in 0..3 {
                prop_assert!(w.offset[a] + w.size[a] <= dims[a]);
            }
            for z in 0..w.size[2] {
                for y in 0..w.size[1] {
                    for x in 0..w.size[0] {
                        let (i, j, k) = (x + w.offset[0], y + w.offset[1], z + w.offset[2]);
                        hit[i + dims[0] * (j + dims[1] * k)] = true;
                    }
                }
            }
        }
        prop_assert!(hit.iter().all(|&h| h));

        let value = overlap * 10.0 - 3.0;
        let patches: Vec<LogitStack> = plan
            .iter()
            .map(|w| LogitStack::constant(&Grid::new(w.size), &[value]).unwrap())
            .collect();
        let out = blend_patches(&patches, &plan, &Grid::new(dims), &spec).unwrap();
        prop_assert!(out.channel(0).data().iter().all(|&v| v == value));
    }

    #[test]
    fn nifti_float32_round_trip(v in volume()) {
        let v = v.map(|x| x as f32 as f64);
        let bytes = encode_nifti(&v, NiftiType::Float32);
        let (back, _) = read_nifti_bytes(&bytes).unwrap();
        prop_assert_eq!(back.data(), v.data());
        prop_assert_eq!(encode_nifti(&back, NiftiType::Float32), bytes);
    }

    #[test]
    fn reorient_is_idempotent(v in volume(), perm in 0usize..6, signs in 0usize..8) {
        let perms = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];
        let mut dir = [[0.0; 3]; 3];
        for j in 0..3 {
            dir[perms[perm][j]][j] = if signs >> j & 1 == 1 { -1.0 } else { 1.0 };
        }
        let g = v.grid().clone().with_direction(dir).with_origin([3.0, -2.0, 1.5]);
        let v = v.with_grid(g).unwrap();
        let once = reorient_ras(&v).unwrap();
        let twice = reorient_ras(&once).unwrap();
        prop_assert_eq!(&once, &twice);
        let mut a = v.data().to_vec();
        let mut b = once.data().to_vec();
        a.sort_by(f64::total_cmp);
        b.sort_by(f64::total_cmp);
        prop_assert_eq!(a, b);
    }

    #[test]
    fn percentiles_are_monotone(v in proptest::collection::vec(-1e3f64..1e3, 1..200), p in 0.0f64..100.0, q in 0.0f64..100.0) {
        let (lo, hi) = if p <= q { (p, q) } else { (q, p) };
        let r = percentiles(&v, &[lo, hi, 0.0, 100.0]).unwrap();
        prop_assert!(r[0] <= r[1]);
        prop_assert!(r[2] <= r[0] && r[1] <= r[3]);
    }
}
