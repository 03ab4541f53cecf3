//! Dense 2-D fields and the finite-difference operators the losses are built on.
//!
//! Out-of-range neighbours are resolved by edge duplication (index `-1` reads
//! index `0`), which realises a zero-flux boundary. Under this convention the
//! five-point Laplacian is symmetric with respect to the plain pixel inner
//! product, so the same stencil serves as its own adjoint in gradient code.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// A dense `height x width` grid of reals, stored row-major.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Field2D {
    height: usize,
    width: usize,
    values: Vec<f64>,
}

impl Field2D {
    pub fn zeros(height: usize, width: usize) -> Self {
        Self::constant(height, width, 0.0)
    }

    pub fn constant(height: usize, width: usize, value: f64) -> Self {
        assert!(height >= 1 && width >= 1, "field dimensions must be positive");
        Self {
            height,
            width,
            values: vec![value; height * width],
        }
    }

    pub fn from_vec(height: usize, width: usize, values: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 {
            return invalid(format!("field dimensions must be positive, got {height}x{width}"));
        }
        if values.len() != height * width {
            return invalid(format!(
                "{} values supplied for a {height}x{width} field",
                values.len()
            ));
        }
        Ok(Self {
            height,
            width,
            values,
        })
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        assert!(height >= 1 && width >= 1, "field dimensions must be positive");
        let mut values = Vec::with_capacity(height * width);
        for i in 0..height {
            for j in 0..width {
                values.push(f(i, j));
            }
        }
        Self {
            height,
            width,
            values,
        }
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.values.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.width + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.values[i * self.width + j] = v;
    }

    /// Reads `(i, j)` with out-of-range indices clamped to the nearest edge.
    #[inline]
    pub(crate) fn get_clamped(&self, i: isize, j: isize) -> f64 {
        let ii = i.clamp(0, self.height as isize - 1) as usize;
        let jj = j.clamp(0, self.width as isize - 1) as usize;
        self.values[ii * self.width + jj]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            height: self.height,
            width: self.width,
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Pixelwise combination of two equally sized fields.
    pub fn zip_map(&self, other: &Self, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        self.check_same_dims(other.dims())?;
        Ok(Self {
            height: self.height,
            width: self.width,
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn scale(&self, s: f64) -> Self {
        self.map(|v| v * s)
    }

    /// `self += s * other`.
    pub fn add_scaled(&mut self, other: &Self, s: f64) -> Result<()> {
        self.check_same_dims(other.dims())?;
        for (a, &b) in self.values.iter_mut().zip(&other.values) {
            *a += s * b;
        }
        Ok(())
    }

    pub fn sum(&self) -> f64 {
        self.values.iter().sum()
    }

    pub fn mean(&self) -> f64 {
        self.sum() / self.values.len() as f64
    }

    /// Unweighted pixel inner product.
    pub fn dot(&self, other: &Self) -> Result<f64> {
        self.check_same_dims(other.dims())?;
        Ok(self.values.iter().zip(&other.values).map(|(a, b)| a * b).sum())
    }

    pub fn norm_l2(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub(crate) fn check_same_dims(&self, dims: (usize, usize)) -> Result<()> {
        if self.dims() != dims {
            return Err(Error::DimensionMismatch {
                expected: self.dims(),
                actual: dims,
            });
        }
        Ok(())
    }
}

/// Grid spacing `h` and the cell-area factors used by Riemann sums.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridSpec {
    pub h: f64,
    pub dx: f64,
    pub dy: f64,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            h: 1.0,
            dx: 1.0,
            dy: 1.0,
        }
    }
}

impl GridSpec {
    pub fn with_spacing(h: f64) -> Self {
        Self {
            h,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("h", self.h), ("dx", self.dx), ("dy", self.dy)] {
            if !(v.is_finite() && v > 0.0) {
                return invalid(format!("grid {name} must be finite and positive, got {v}"));
            }
        }
        Ok(())
    }

    /// Area of one grid cell, `dx * dy`.
    pub fn cell_area(&self) -> f64 {
        self.dx * self.dy
    }
}

/// Pads `f` by `width` pixels on every side with edge-duplication reflection:
/// padded index `-1` maps to `0`, `-2` to `1`, and likewise at the far edges.
pub fn mirror_pad(f: &Field2D, width: usize) -> Result<Field2D> {
    if width == 0 {
        return invalid("padding width must be at least 1");
    }
    if width > f.height.min(f.width) {
        return invalid(format!(
            "padding width {width} exceeds field dimension {}x{}",
            f.height, f.width
        ));
    }
    let reflect = |k: isize, n: usize| -> usize {
        let n = n as isize;
        let r = if k < 0 {
            -k - 1
        } else if k >= n {
            2 * n - 1 - k
        } else {
            k
        };
        r as usize
    };
    let w = width as isize;
    let ph = f.height + 2 * width;
    let pw = f.width + 2 * width;
    Ok(Field2D::from_fn(ph, pw, |i, j| {
        let si = reflect(i as isize - w, f.height);
        let sj = reflect(j as isize - w, f.width);
        f.get(si, sj)
    }))
}

/// Five-point Laplacian with zero-flux (edge duplication) boundaries.
pub fn laplacian(f: &Field2D, g: &GridSpec) -> Field2D {
    let inv_h2 = 1.0 / (g.h * g.h);
    let (m, n) = f.dims();
    Field2D::from_fn(m, n, |i, j| {
        let (ii, jj) = (i as isize, j as isize);
        let c = f.get(i, j);
        let s = f.get_clamped(ii + 1, jj)
            + f.get_clamped(ii - 1, jj)
            + f.get_clamped(ii, jj + 1)
            + f.get_clamped(ii, jj - 1)
            - 4.0 * c;
        s * inv_h2
    })
}

/// Central differences `(dx f, dy f)`: `dx` differences along columns
/// (`j +- 1`), `dy` along rows (`i +- 1`), each divided by `2h`.
pub fn grad_central(f: &Field2D, g: &GridSpec) -> (Field2D, Field2D) {
    let inv_2h = 0.5 / g.h;
    let (m, n) = f.dims();
    let gx = Field2D::from_fn(m, n, |i, j| {
        let (ii, jj) = (i as isize, j as isize);
        (f.get_clamped(ii, jj + 1) - f.get_clamped(ii, jj - 1)) * inv_2h
    });
    let gy = Field2D::from_fn(m, n, |i, j| {
        let (ii, jj) = (i as isize, j as isize);
        (f.get_clamped(ii + 1, jj) - f.get_clamped(ii - 1, jj)) * inv_2h
    });
    (gx, gy)
}

/// Adjoint of [`grad_central`]: given cotangents for `(dx f, dy f)`, returns
/// the cotangent with respect to `f`, including the fold-back of the padding.
pub fn grad_central_adjoint(gx_bar: &Field2D, gy_bar: &Field2D, g: &GridSpec) -> Field2D {
    let inv_2h = 0.5 / g.h;
    let (m, n) = gx_bar.dims();
    let mut out = Field2D::zeros(m, n);
    let clamp = |k: isize, len: usize| k.clamp(0, len as isize - 1) as usize;
    for i in 0..m {
        for j in 0..n {
            let (ii, jj) = (i as isize, j as isize);
            let bx = gx_bar.get(i, j) * inv_2h;
            let by = gy_bar.get(i, j) * inv_2h;
            out.values[i * n + clamp(jj + 1, n)] += bx;
            out.values[i * n + clamp(jj - 1, n)] -= bx;
            out.values[clamp(ii + 1, m) * n + j] += by;
            out.values[clamp(ii - 1, m) * n + j] -= by;
        }
    }
    out
}

/// Squared gradient magnitude `(dx f)^2 + (dy f)^2`.
pub fn grad_mag_sq(f: &Field2D, g: &GridSpec) -> Field2D {
    let (gx, gy) = grad_central(f, g);
    gx.zip_map(&gy, |a, b| a * a + b * b)
        .expect("gradient components share dimensions")
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_field(m: usize, n: usize, seed: u64) -> Field2D {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Field2D::from_fn(m, n, |_, _| rng.random_range(-1.0..1.0))
    }

    // Independent oracle: explicit padded array built by index reflection.
    fn reflect_oracle(k: isize, n: isize) -> isize {
        let mut k = k;
        loop {
            if k < 0 {
                k = -k - 1;
            } else if k >= n {
                k = 2 * n - 1 - k;
            } else {
                return k;
            }
        }
    }

    fn padded_oracle(f: &Field2D, w: usize) -> Vec<Vec<f64>> {
        let (m, n) = (f.height() as isize, f.width() as isize);
        let w = w as isize;
        (-w..m + w)
            .map(|i| {
                (-w..n + w)
                    .map(|j| f.get(reflect_oracle(i, m) as usize, reflect_oracle(j, n) as usize))
                    .collect()
            })
            .collect()
    }

    #[test]
    fn pad_single_value() {
        let f = Field2D::constant(1, 1, 5.0);
        let p = mirror_pad(&f, 1).unwrap();
        assert_eq!(p.dims(), (3, 3));
        assert!(p.values().iter().all(|&v| v == 5.0));
    }

    #[test]
    fn pad_row_duplicates_edges() {
        let f = Field2D::from_vec(1, 3, vec![1.0, 2.0, 3.0]).unwrap();
        let p = mirror_pad(&f, 1).unwrap();
        for i in 0..3 {
            let row: Vec<f64> = (0..5).map(|j| p.get(i, j)).collect();
            assert_eq!(row, vec![1.0, 1.0, 2.0, 3.0, 3.0]);
        }
    }

    #[test]
    fn pad_matches_reflection_oracle() {
        let f = random_field(4, 4, 7);
        let p = mirror_pad(&f, 2).unwrap();
        let oracle = padded_oracle(&f, 2);
        for (i, row) in oracle.iter().enumerate() {
            for (j, &v) in row.iter().enumerate() {
                assert_eq!(p.get(i, j), v);
            }
        }
    }

    #[test]
    fn pad_rejects_oversized_width() {
        let f = Field2D::zeros(3, 5);
        assert!(mirror_pad(&f, 4).is_err());
        assert!(mirror_pad(&f, 0).is_err());
        assert!(mirror_pad(&f, 3).is_ok());
    }

    #[test]
    fn laplacian_of_constant_is_zero() {
        let f = Field2D::constant(6, 5, 3.7);
        let l = laplacian(&f, &GridSpec::default());
        assert!(l.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn laplacian_impulse() {
        let mut f = Field2D::zeros(5, 5);
        f.set(2, 2, 1.0);
        let l = laplacian(&f, &GridSpec::default());
        for i in 0..5 {
            for j in 0..5 {
                let expected = match (i, j) {
                    (2, 2) => -4.0,
                    (1, 2) | (3, 2) | (2, 1) | (2, 3) => 1.0,
                    _ => 0.0,
                };
                assert_eq!(l.get(i, j), expected, "pixel ({i},{j})");
            }
        }
    }

    #[test]
    fn laplacian_of_row_ramp() {
        let f = Field2D::from_fn(4, 4, |i, _| i as f64);
        let l = laplacian(&f, &GridSpec::default());
        let p = padded_oracle(&f, 1);
        for i in 0..4 {
            for j in 0..4 {
                let (pi, pj) = (i + 1, j + 1);
                let oracle =
                    p[pi + 1][pj] + p[pi - 1][pj] + p[pi][pj + 1] + p[pi][pj - 1] - 4.0 * p[pi][pj];
                assert_eq!(l.get(i, j), oracle);
            }
            let expected = match i {
                0 => 1.0,
                3 => -1.0,
                _ => 0.0,
            };
            assert!((0..4).all(|j| l.get(i, j) == expected));
        }
    }

    #[test]
    fn central_gradient_of_column_ramp() {
        let f = Field2D::from_fn(5, 6, |_, j| j as f64);
        let (gx, gy) = grad_central(&f, &GridSpec::default());
        for i in 0..5 {
            for j in 0..6 {
                let expected = if j == 0 || j == 5 { 0.5 } else { 1.0 };
                assert_eq!(gx.get(i, j), expected);
                assert_eq!(gy.get(i, j), 0.0);
            }
        }
    }

    #[test]
    fn central_gradient_scales_with_spacing() {
        let f = Field2D::from_fn(5, 5, |i, _| i as f64);
        let (_, gy1) = grad_central(&f, &GridSpec::default());
        let (gx, gy_half) = grad_central(&f, &GridSpec::with_spacing(0.5));
        assert_eq!(gy_half, gy1.scale(2.0));
        assert_eq!(gx.max_abs(), 0.0);
    }

    #[test]
    fn grad_mag_sq_diagonal_ramp() {
        let f = Field2D::from_fn(5, 5, |i, j| (i + j) as f64);
        let g = grad_mag_sq(&f, &GridSpec::default());
        assert_eq!(g.get(2, 2), 2.0);
        assert_eq!(grad_mag_sq(&Field2D::constant(3, 3, 1.0), &GridSpec::default()).max_abs(), 0.0);
    }

    #[test]
    fn grad_mag_sq_matches_padded_oracle() {
        let f = random_field(8, 8, 11);
        let h = 0.7;
        let got = grad_mag_sq(&f, &GridSpec::with_spacing(h));
        let p = padded_oracle(&f, 1);
        for i in 0..8 {
            for j in 0..8 {
                let (pi, pj) = (i + 1, j + 1);
                let dx = (p[pi][pj + 1] - p[pi][pj - 1]) / (2.0 * h);
                let dy = (p[pi + 1][pj] - p[pi - 1][pj]) / (2.0 * h);
                assert!((got.get(i, j) - (dx * dx + dy * dy)).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn gradient_adjoint_identity() {
        let f = random_field(7, 9, 1);
        let a = random_field(7, 9, 2);
        let b = random_field(7, 9, 3);
        let g = GridSpec::with_spacing(1.3);
        let (gx, gy) = grad_central(&f, &g);
        let lhs = gx.dot(&a).unwrap() + gy.dot(&b).unwrap();
        let rhs = f.dot(&grad_central_adjoint(&a, &b, &g)).unwrap();
        assert!((lhs - rhs).abs() < 1e-12 * lhs.abs().max(1.0));
    }

    proptest! {
        #[test]
        fn laplacian_is_linear(seed in any::<u64>(), alpha in -3.0..3.0f64, beta in -3.0..3.0f64) {
            let f = random_field(6, 7, seed);
            let g = random_field(6, 7, seed.wrapping_add(1));
            let spec = GridSpec::default();
            let mut comb = f.scale(alpha);
            comb.add_scaled(&g, beta).unwrap();
            let lhs = laplacian(&comb, &spec);
            let mut rhs = laplacian(&f, &spec).scale(alpha);
            rhs.add_scaled(&laplacian(&g, &spec), beta).unwrap();
            for (a, b) in lhs.values().iter().zip(rhs.values()) {
                prop_assert!((a - b).abs() < 1e-12);
            }
        }

        #[test]
        fn laplacian_is_self_adjoint(seed in any::<u64>(), m in 1usize..10, n in 1usize..10) {
            let f = random_field(m, n, seed);
            let g = random_field(m, n, seed ^ 0xdead_beef);
            let spec = GridSpec::with_spacing(0.8);
            let lhs = laplacian(&f, &spec).dot(&g).unwrap();
            let rhs = f.dot(&laplacian(&g, &spec)).unwrap();
            prop_assert!((lhs - rhs).abs() <= 1e-10 * lhs.abs().max(rhs.abs()).max(1.0));
        }

        #[test]
        fn laplacian_sums_to_zero(seed in any::<u64>(), m in 1usize..10, n in 1usize..10) {
            // With zero-flux boundaries every interior difference cancels pairwise.
            let f = random_field(m, n, seed);
            let s = laplacian(&f, &GridSpec::default()).sum();
            prop_assert!(s.abs() < 1e-12);
        }

        #[test]
        fn padding_constant_stays_constant(c in -10.0..10.0f64, m in 1usize..6, n in 1usize..6, w in 1usize..3) {
            let f = Field2D::constant(m, n, c);
            if let Ok(p) = mirror_pad(&f, w) {
                prop_assert!(p.values().iter().all(|&v| v == c));
            }
        }
    }
}
