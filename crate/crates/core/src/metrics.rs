//! Binary segmentation metrics: Dice, IoU, and boundary precision / recall /
//! F1 with a Euclidean distance tolerance.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::fidelity::{check_dims, BinaryMask};
use crate::grid::Field2D;

/// Foreground iff `u >= tau`.
pub fn binarize(u: &Field2D, tau: f64) -> BinaryMask {
    BinaryMask::from_vec(
        u.height(),
        u.width(),
        u.values().iter().map(|&v| (v >= tau) as u8).collect(),
    )
    .expect("field dimensions are valid")
}

fn overlap(pred: &BinaryMask, gt: &BinaryMask) -> Result<(usize, usize, usize)> {
    check_dims(gt.dims(), pred.dims())?;
    let mut inter = 0;
    let mut np = 0;
    let mut ng = 0;
    for (&p, &g) in pred.values().iter().zip(gt.values()) {
        inter += (p & g) as usize;
        np += p as usize;
        ng += g as usize;
    }
    Ok((inter, np, ng))
}

/// `2|U n Y| / (|U| + |Y|)`; two empty masks score 1.
pub fn dice(pred: &BinaryMask, gt: &BinaryMask) -> Result<f64> {
    let (inter, np, ng) = overlap(pred, gt)?;
    if np + ng == 0 {
        return Ok(1.0);
    }
    Ok(2.0 * inter as f64 / (np + ng) as f64)
}

/// `|U n Y| / |U u Y|`; two empty masks score 1.
pub fn iou(pred: &BinaryMask, gt: &BinaryMask) -> Result<f64> {
    let (inter, np, ng) = overlap(pred, gt)?;
    let union = np + ng - inter;
    if union == 0 {
        return Ok(1.0);
    }
    Ok(inter as f64 / union as f64)
}

/// Foreground pixels with a 4-neighbour that is background or off the frame,
/// as `(row, col)` pairs in row-major order.
pub fn boundary_pixels(m: &BinaryMask) -> Vec<(usize, usize)> {
    let (h, w) = m.dims();
    let mut out = Vec::new();
    for i in 0..h {
        for j in 0..w {
            if !m.get(i, j) {
                continue;
            }
            let edge = i == 0
                || j == 0
                || i + 1 == h
                || j + 1 == w
                || !m.get(i - 1, j)
                || !m.get(i + 1, j)
                || !m.get(i, j - 1)
                || !m.get(i, j + 1);
            if edge {
                out.push((i, j));
            }
        }
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BoundaryParams {
    /// Match tolerance in pixels.
    pub eta: f64,
}

impl Default for BoundaryParams {
    fn default() -> Self {
        Self { eta: 2.0 }
    }
}

impl BoundaryParams {
    pub fn new(eta: f64) -> Self {
        Self { eta }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eta.is_finite() && self.eta > 0.0) {
            return invalid(format!("boundary tolerance eta must be positive, got {}", self.eta));
        }
        Ok(())
    }
}

/// Boundary precision, recall, and their harmonic mean.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundaryScore {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Exact squared Euclidean distance transform: for every pixel, the squared
/// distance to the nearest seed, or `f64::INFINITY` when there are no seeds.
/// Separable lower-envelope algorithm of Felzenszwalb and Huttenlocher.
pub fn squared_distance_transform(h: usize, w: usize, seeds: &[(usize, usize)]) -> Vec<f64> {
    let mut d = vec![f64::INFINITY; h * w];
    for &(i, j) in seeds {
        d[i * w + j] = 0.0;
    }
    let mut buf = vec![0.0; h.max(w)];
    let mut out = vec![0.0; h.max(w)];
    for j in 0..w {
        for i in 0..h {
            buf[i] = d[i * w + j];
        }
        envelope_1d(&buf[..h], &mut out[..h]);
        for i in 0..h {
            d[i * w + j] = out[i];
        }
    }
    for i in 0..h {
        buf[..w].copy_from_slice(&d[i * w..(i + 1) * w]);
        envelope_1d(&buf[..w], &mut out[..w]);
        d[i * w..(i + 1) * w].copy_from_slice(&out[..w]);
    }
    d
}

fn envelope_1d(f: &[f64], out: &mut [f64]) {
    let n = f.len();
    let sites: Vec<usize> = (0..n).filter(|&q| f[q].is_finite()).collect();
    if sites.is_empty() {
        out.fill(f64::INFINITY);
        return;
    }
    // v: parabola apexes in the envelope; z: boundaries between them.
    let mut v: Vec<usize> = Vec::with_capacity(sites.len());
    let mut z: Vec<f64> = Vec::with_capacity(sites.len() + 1);
    v.push(sites[0]);
    z.push(f64::NEG_INFINITY);
    z.push(f64::INFINITY);
    let intersect = |q: usize, p: usize| -> f64 {
        let (qf, pf) = (q as f64, p as f64);
        ((f[q] + qf * qf) - (f[p] + pf * pf)) / (2.0 * (qf - pf))
    };
    for &q in &sites[1..] {
        let mut s = intersect(q, *v.last().unwrap());
        while s <= z[v.len() - 1] {
            v.pop();
            z.pop();
            s = intersect(q, *v.last().unwrap());
        }
        v.push(q);
        *z.last_mut().unwrap() = s;
        z.push(f64::INFINITY);
    }
    let mut k = 0;
    for (q, o) in out.iter_mut().enumerate() {
        while z[k + 1] < q as f64 {
            k += 1;
        }
        let dq = q as f64 - v[k] as f64;
        *o = dq * dq + f[v[k]];
    }
}

/// Boundary precision `P_B`, recall `R_B`, and `F1` with tolerance `eta`.
///
/// Both boundaries empty scores `(1, 1, 1)`; exactly one empty scores `(0, 0, 0)`.
pub fn boundary_f1(pred: &BinaryMask, gt: &BinaryMask, p: &BoundaryParams) -> Result<BoundaryScore> {
    check_dims(gt.dims(), pred.dims())?;
    p.validate()?;
    let bp = boundary_pixels(pred);
    let bg = boundary_pixels(gt);
    match (bp.is_empty(), bg.is_empty()) {
        (true, true) => {
            return Ok(BoundaryScore {
                precision: 1.0,
                recall: 1.0,
                f1: 1.0,
            })
        }
        (true, false) | (false, true) => {
            return Ok(BoundaryScore {
                precision: 0.0,
                recall: 0.0,
                f1: 0.0,
            })
        }
        _ => {}
    }
    let (h, w) = pred.dims();
    let eta2 = p.eta * p.eta;
    let matched_fraction = |from: &[(usize, usize)], to: &[(usize, usize)]| -> f64 {
        let dt = squared_distance_transform(h, w, to);
        let hits = from.iter().filter(|&&(i, j)| dt[i * w + j] <= eta2).count();
        hits as f64 / from.len() as f64
    };
    let precision = matched_fraction(&bp, &bg);
    let recall = matched_fraction(&bg, &bp);
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    Ok(BoundaryScore {
        precision,
        recall,
        f1,
    })
}

/// Dice, IoU and boundary F1 of one prediction.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricSet {
    pub dice: f64,
    pub iou: f64,
    pub boundary_f1: f64,
}

pub fn evaluate(pred: &BinaryMask, gt: &BinaryMask, p: &BoundaryParams) -> Result<MetricSet> {
    Ok(MetricSet {
        dice: dice(pred, gt)?,
        iou: iou(pred, gt)?,
        boundary_f1: boundary_f1(pred, gt, p)?.f1,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_mask(n: usize, seed: u64, p: f64) -> BinaryMask {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        BinaryMask::from_fn(n, n, |_, _| rng.random_bool(p))
    }

    fn brute_boundary(m: &BinaryMask) -> Vec<(usize, usize)> {
        let (h, w) = m.dims();
        let fg = |i: isize, j: isize| {
            i >= 0 && j >= 0 && (i as usize) < h && (j as usize) < w && m.get(i as usize, j as usize)
        };
        let mut out = Vec::new();
        for i in 0..h as isize {
            for j in 0..w as isize {
                if fg(i, j)
                    && [(-1, 0), (1, 0), (0, -1), (0, 1)]
                        .iter()
                        .any(|(di, dj)| !fg(i + di, j + dj))
                {
                    out.push((i as usize, j as usize));
                }
            }
        }
        out
    }

    #[test]
    fn binarize_tie_goes_to_foreground() {
        assert_eq!(binarize(&Field2D::constant(3, 3, 0.5), 0.5).count(), 9);
        assert_eq!(binarize(&Field2D::constant(3, 3, 0.49), 0.5).count(), 0);
    }

    #[test]
    fn binarize_complement_relation() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let u = Field2D::from_fn(12, 12, |_, _| rng.random_range(0.0..1.0));
        let a = binarize(&u, 0.5);
        let b = binarize(&u.map(|v| 1.0 - v), 0.5);
        for k in 0..u.len() {
            let v = u.values()[k];
            assert_eq!(a.values()[k] == 1, v >= 0.5);
            // Away from the tie the two thresholds partition the pixels.
            if v != 0.5 {
                assert_eq!(a.values()[k] + b.values()[k], 1);
            }
        }
    }

    #[test]
    fn dice_and_iou_basics() {
        let a = random_mask(8, 1, 0.5);
        assert_eq!(dice(&a, &a).unwrap(), 1.0);
        assert_eq!(iou(&a, &a).unwrap(), 1.0);
        let left = BinaryMask::from_fn(4, 4, |_, j| j < 2);
        assert_eq!(dice(&left, &left.complement()).unwrap(), 0.0);

        let u = BinaryMask::from_vec(1, 6, vec![1, 1, 1, 1, 0, 0]).unwrap();
        let y = BinaryMask::from_vec(1, 6, vec![0, 0, 1, 1, 1, 1]).unwrap();
        assert_eq!(dice(&u, &y).unwrap(), 0.5);
        assert!((iou(&u, &y).unwrap() - 1.0 / 3.0).abs() < 1e-15);

        let empty = BinaryMask::zeros(4, 4);
        assert_eq!(dice(&empty, &empty).unwrap(), 1.0);
        assert_eq!(iou(&empty, &empty).unwrap(), 1.0);
    }

    #[test]
    fn mismatched_dims_rejected() {
        let a = BinaryMask::zeros(3, 4);
        let b = BinaryMask::zeros(4, 3);
        assert!(matches!(dice(&a, &b), Err(Error::DimensionMismatch { .. })));
        assert!(matches!(iou(&a, &b), Err(Error::DimensionMismatch { .. })));
        assert!(boundary_f1(&a, &b, &BoundaryParams::default()).is_err());
    }

    #[test]
    fn boundary_of_full_square() {
        let b = boundary_pixels(&BinaryMask::ones(3, 3));
        assert_eq!(b.len(), 8);
        assert!(!b.contains(&(1, 1)));
        let mut single = BinaryMask::zeros(5, 5);
        single.set(2, 3, true);
        assert_eq!(boundary_pixels(&single), vec![(2, 3)]);
    }

    #[test]
    fn boundary_matches_neighbour_scan() {
        for seed in 0..20 {
            let m = random_mask(8, seed, 0.6);
            assert_eq!(boundary_pixels(&m), brute_boundary(&m));
        }
    }

    #[test]
    fn edt_matches_brute_force() {
        for seed in 0..20 {
            let m = random_mask(13, seed, 0.05);
            let seeds = boundary_pixels(&m);
            let dt = squared_distance_transform(13, 13, &seeds);
            for i in 0..13 {
                for j in 0..13 {
                    let brute = seeds
                        .iter()
                        .map(|&(a, b)| {
                            let (di, dj) = (i as f64 - a as f64, j as f64 - b as f64);
                            di * di + dj * dj
                        })
                        .fold(f64::INFINITY, f64::min);
                    assert_eq!(dt[i * 13 + j], brute);
                }
            }
        }
    }

    #[test]
    fn boundary_f1_identical_and_shifted() {
        let a = BinaryMask::from_fn(16, 16, |i, j| (4..10).contains(&i) && (5..11).contains(&j));
        let same = boundary_f1(&a, &a, &BoundaryParams::default()).unwrap();
        assert_eq!((same.precision, same.recall, same.f1), (1.0, 1.0, 1.0));
        let shifted = BinaryMask::from_fn(16, 16, |i, j| (5..11).contains(&i) && (5..11).contains(&j));
        let s = boundary_f1(&a, &shifted, &BoundaryParams::new(2.0)).unwrap();
        assert_eq!((s.precision, s.recall, s.f1), (1.0, 1.0, 1.0));
    }

    #[test]
    fn boundary_f1_empty_conventions() {
        let empty = BinaryMask::zeros(6, 6);
        let full = BinaryMask::ones(6, 6);
        let p = BoundaryParams::default();
        assert_eq!(boundary_f1(&empty, &empty, &p).unwrap().f1, 1.0);
        let one = boundary_f1(&empty, &full, &p).unwrap();
        assert_eq!((one.precision, one.recall, one.f1), (0.0, 0.0, 0.0));
        assert_eq!(boundary_f1(&full, &empty, &p).unwrap().f1, 0.0);
    }

    proptest! {
        #[test]
        fn metric_symmetry_and_bounds(s1 in any::<u64>(), s2 in any::<u64>(), eta in 0.5..4.0f64) {
            let a = random_mask(10, s1, 0.4);
            let b = random_mask(10, s2, 0.4);
            let p = BoundaryParams::new(eta);
            prop_assert_eq!(dice(&a, &b).unwrap(), dice(&b, &a).unwrap());
            prop_assert_eq!(iou(&a, &b).unwrap(), iou(&b, &a).unwrap());
            let ab = boundary_f1(&a, &b, &p).unwrap();
            let ba = boundary_f1(&b, &a, &p).unwrap();
            prop_assert_eq!(ab.precision, ba.recall);
            prop_assert_eq!(ab.recall, ba.precision);
            prop_assert!((ab.f1 - ba.f1).abs() < 1e-15);
            for v in [dice(&a, &b).unwrap(), iou(&a, &b).unwrap(), ab.precision, ab.recall, ab.f1] {
                prop_assert!((0.0..=1.0).contains(&v));
            }
            let d = dice(&a, &b).unwrap();
            prop_assert!((iou(&a, &b).unwrap() - d / (2.0 - d)).abs() < 1e-12);
        }

        #[test]
        fn boundary_f1_monotone_in_eta(s1 in any::<u64>(), s2 in any::<u64>()) {
            let a = random_mask(12, s1, 0.3);
            let b = random_mask(12, s2, 0.3);
            let mut prev = 0.0;
            for eta in [0.5, 1.0, 1.5, 2.0, 3.0, 5.0] {
                let f = boundary_f1(&a, &b, &BoundaryParams::new(eta)).unwrap().f1;
                prop_assert!(f >= prev);
                prev = f;
            }
        }
    }
}
