use std::f64::consts::TAU;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::raster::rasterize_polygon;
use crate::fidelity::BinaryMask;

/// Number of vertices on every generated outline.
const OUTLINE_VERTICES: usize = 64;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MorphologyKind {
    /// Large irregular blobs.
    Adherent,
    /// Dense clusters of touching cells.
    Raft,
    /// Small round cells.
    Spherical,
}

impl MorphologyKind {
    pub fn name(&self) -> &'static str {
        match self {
            MorphologyKind::Adherent => "adherent",
            MorphologyKind::Raft => "raft",
            MorphologyKind::Spherical => "spherical",
        }
    }
}

/// Shape statistics of one morphology. Radii are fractions of the smaller
/// canvas dimension.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Morphology {
    pub kind: MorphologyKind,
    pub radius_min: f64,
    pub radius_max: f64,
    /// Amplitude of the radial harmonic perturbation, relative to the radius.
    pub irregularity: f64,
    pub harmonics: usize,
    pub cells_min: usize,
    pub cells_max: usize,
}

impl Morphology {
    pub fn of(kind: MorphologyKind) -> Self {
        match kind {
            MorphologyKind::Adherent => Self {
                kind,
                radius_min: 0.17,
                radius_max: 0.24,
                irregularity: 0.22,
                harmonics: 5,
                cells_min: 1,
                cells_max: 2,
            },
            MorphologyKind::Raft => Self {
                kind,
                radius_min: 0.10,
                radius_max: 0.13,
                irregularity: 0.10,
                harmonics: 4,
                cells_min: 3,
                cells_max: 5,
            },
            MorphologyKind::Spherical => Self {
                kind,
                radius_min: 0.06,
                radius_max: 0.085,
                irregularity: 0.02,
                harmonics: 3,
                cells_min: 3,
                cells_max: 6,
            },
        }
    }

    pub fn with_irregularity(mut self, irregularity: f64) -> Self {
        self.irregularity = irregularity;
        self
    }
}

/// Closed polygon in pixel coordinates: `x` runs along columns, `y` along rows.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Polygon {
    pub vertices: Vec<(f64, f64)>,
}

impl Polygon {
    pub fn new(vertices: Vec<(f64, f64)>) -> Self {
        Self { vertices }
    }

    /// Reads a COCO-style flat list `[x0, y0, x1, y1, ...]`.
    pub fn from_flat(coords: &[f64]) -> Self {
        Self {
            vertices: coords.chunks_exact(2).map(|c| (c[0], c[1])).collect(),
        }
    }

    pub fn centroid(&self) -> (f64, f64) {
        let n = self.vertices.len() as f64;
        let (sx, sy) = self
            .vertices
            .iter()
            .fold((0.0, 0.0), |(a, b), &(x, y)| (a + x, b + y));
        (sx / n, sy / n)
    }
}

/// Standard deviation over mean of the vertex distances to the centroid.
pub fn radial_irregularity(poly: &Polygon) -> f64 {
    let (cx, cy) = poly.centroid();
    let radii: Vec<f64> = poly
        .vertices
        .iter()
        .map(|&(x, y)| ((x - cx).powi(2) + (y - cy).powi(2)).sqrt())
        .collect();
    let n = radii.len() as f64;
    let mean = radii.iter().sum::<f64>() / n;
    let var = radii.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n;
    var.sqrt() / mean
}

fn outline(morph: &Morphology, rng: &mut ChaCha8Rng, center: (f64, f64), radius: f64) -> Polygon {
    // Amplitudes decay as 1/k; the sum stays below 1 so the radius is positive.
    let terms: Vec<(usize, f64, f64)> = (0..morph.harmonics)
        .map(|i| {
            let k = i + 2;
            let amp = morph.irregularity * rng.random_range(-1.0..1.0) / (i + 1) as f64;
            let phase = rng.random_range(0.0..TAU);
            (k, amp, phase)
        })
        .collect();
    let vertices = (0..OUTLINE_VERTICES)
        .map(|v| {
            let theta = TAU * v as f64 / OUTLINE_VERTICES as f64;
            let pert: f64 = terms
                .iter()
                .map(|&(k, a, p)| a * (k as f64 * theta + p).cos())
                .sum();
            let r = radius * (1.0 + pert).max(0.2);
            (center.0 + r * theta.cos(), center.1 + r * theta.sin())
        })
        .collect();
    Polygon { vertices }
}

fn draw_radius(morph: &Morphology, rng: &mut ChaCha8Rng, canvas: (usize, usize)) -> f64 {
    let scale = canvas.0.min(canvas.1) as f64;
    scale * rng.random_range(morph.radius_min..=morph.radius_max)
}

/// One cell outline: a circle of morphology-dependent radius perturbed by a
/// low-order random radial harmonic series. `canvas` is `(height, width)`.
pub fn gen_shape(morph: &Morphology, seed: u64, canvas: (usize, usize)) -> Polygon {
    assert!(canvas.0 >= 16 && canvas.1 >= 16, "canvas must be at least 16x16");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let radius = draw_radius(morph, &mut rng, canvas);
    let margin = radius * (1.0 + morph.irregularity * 2.5);
    let pick = |rng: &mut ChaCha8Rng, extent: usize| {
        let lo = margin.min(extent as f64 / 2.0);
        let hi = (extent as f64 - margin).max(lo);
        if hi > lo {
            rng.random_range(lo..hi)
        } else {
            lo
        }
    };
    let cx = pick(&mut rng, canvas.1);
    let cy = pick(&mut rng, canvas.0);
    outline(morph, &mut rng, (cx, cy), radius)
}

/// Ground-truth mask of one synthetic image: the union of several cells of
/// the given morphology. Raft cells are packed into one touching cluster.
pub fn compose_mask(morph: &Morphology, seed: u64, canvas: (usize, usize)) -> BinaryMask {
    let (h, w) = canvas;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cells = rng.random_range(morph.cells_min..=morph.cells_max);
    let mut mask = BinaryMask::zeros(h, w);
    let mut placed: Vec<((f64, f64), f64)> = Vec::new();
    for c in 0..cells {
        let radius = draw_radius(morph, &mut rng, canvas);
        let center = if morph.kind == MorphologyKind::Raft && c > 0 {
            let &(anchor, r0) = &placed[rng.random_range(0..placed.len())];
            let theta = rng.random_range(0.0..TAU);
            let dist = 0.85 * (r0 + radius);
            (
                (anchor.0 + dist * theta.cos()).clamp(radius, w as f64 - radius),
                (anchor.1 + dist * theta.sin()).clamp(radius, h as f64 - radius),
            )
        } else {
            let margin = radius * 1.2;
            let span = |extent: usize| {
                let lo = margin.min(extent as f64 / 2.0);
                let hi = (extent as f64 - margin).max(lo + 1e-9);
                (lo, hi)
            };
            let (xl, xh) = span(w);
            let (yl, yh) = span(h);
            let cx = if morph.kind == MorphologyKind::Raft {
                rng.random_range((w as f64 * 0.35)..(w as f64 * 0.65))
            } else {
                rng.random_range(xl..xh)
            };
            let cy = if morph.kind == MorphologyKind::Raft {
                rng.random_range((h as f64 * 0.35)..(h as f64 * 0.65))
            } else {
                rng.random_range(yl..yh)
            };
            (cx, cy)
        };
        placed.push((center, radius));
        let poly = outline(morph, &mut rng, center, radius);
        let cell = rasterize_polygon(&poly, canvas).expect("outline has 64 vertices");
        mask = mask.union(&cell).expect("same canvas");
    }
    mask
}
