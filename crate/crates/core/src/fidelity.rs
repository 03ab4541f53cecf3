//! Data-fidelity losses (soft Dice and binary cross-entropy) against a
//! binary ground truth, and the composite objective that adds the weighted
//! physics priors.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::grid::{Field2D, GridSpec};
use crate::priors::{pf_energy, pf_energy_grad, rd_loss_and_grad, PfParams, RdParams};

/// Probability clamp applied before taking logarithms in [`bce_loss`].
pub const BCE_CLAMP: f64 = 1e-7;

/// Additive smoothing in the soft Dice ratio.
pub const DICE_SMOOTH: f64 = 1.0;

/// An `height x width` grid of labels in `{0, 1}`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BinaryMask {
    height: usize,
    width: usize,
    values: Vec<u8>,
}

impl BinaryMask {
    pub fn zeros(height: usize, width: usize) -> Self {
        assert!(height >= 1 && width >= 1, "mask dimensions must be positive");
        Self {
            height,
            width,
            values: vec![0; height * width],
        }
    }

    pub fn ones(height: usize, width: usize) -> Self {
        let mut m = Self::zeros(height, width);
        m.values.fill(1);
        m
    }

    pub fn from_vec(height: usize, width: usize, values: Vec<u8>) -> Result<Self> {
        if height == 0 || width == 0 {
            return invalid(format!("mask dimensions must be positive, got {height}x{width}"));
        }
        if values.len() != height * width {
            return invalid(format!(
                "{} labels supplied for a {height}x{width} mask",
                values.len()
            ));
        }
        if let Some(pos) = values.iter().position(|&v| v > 1) {
            return invalid(format!("mask label at index {pos} is {}, not 0 or 1", values[pos]));
        }
        Ok(Self {
            height,
            width,
            values,
        })
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut m = Self::zeros(height, width);
        for i in 0..height {
            for j in 0..width {
                m.values[i * width + j] = f(i, j) as u8;
            }
        }
        m
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
    pub fn get(&self, i: usize, j: usize) -> bool {
        self.values[i * self.width + j] == 1
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: bool) {
        self.values[i * self.width + j] = v as u8;
    }

    pub fn values(&self) -> &[u8] {
        &self.values
    }

    /// Number of foreground pixels.
    pub fn count(&self) -> usize {
        self.values.iter().filter(|&&v| v == 1).count()
    }

    pub fn complement(&self) -> Self {
        Self {
            height: self.height,
            width: self.width,
            values: self.values.iter().map(|&v| 1 - v).collect(),
        }
    }

    /// Pixelwise OR.
    pub fn union(&self, other: &Self) -> Result<Self> {
        check_dims(self.dims(), other.dims())?;
        Ok(Self {
            height: self.height,
            width: self.width,
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(a, b)| a | b)
                .collect(),
        })
    }

    pub fn to_field(&self) -> Field2D {
        Field2D::from_vec(
            self.height,
            self.width,
            self.values.iter().map(|&v| v as f64).collect(),
        )
        .expect("mask dimensions are valid")
    }
}

pub(crate) fn check_dims(expected: (usize, usize), actual: (usize, usize)) -> Result<()> {
    if expected != actual {
        return Err(Error::DimensionMismatch { expected, actual });
    }
    Ok(())
}

/// Nonnegative weights of the two physics priors in the composite objective.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CompositeWeights {
    pub lambda_rd: f64,
    pub lambda_pf: f64,
}

impl CompositeWeights {
    pub fn new(lambda_rd: f64, lambda_pf: f64) -> Self {
        Self {
            lambda_rd,
            lambda_pf,
        }
    }

    pub fn is_zero(&self) -> bool {
        self.lambda_rd == 0.0 && self.lambda_pf == 0.0
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("lambda_rd", self.lambda_rd), ("lambda_pf", self.lambda_pf)] {
            if !(v.is_finite() && v >= 0.0) {
                return invalid(format!("{name} must be finite and nonnegative, got {v}"));
            }
        }
        Ok(())
    }
}

/// Unweighted value of every objective term, plus the weighted total.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub dice: f64,
    pub bce: f64,
    pub rd: f64,
    pub pf: f64,
    pub total: f64,
}

impl LossBreakdown {
    /// Dice plus BCE.
    pub fn data(&self) -> f64 {
        self.dice + self.bce
    }

    pub fn is_finite(&self) -> bool {
        [self.dice, self.bce, self.rd, self.pf, self.total]
            .iter()
            .all(|v| v.is_finite())
    }

    /// Componentwise mean of a non-empty set of breakdowns.
    pub fn mean(items: &[LossBreakdown]) -> LossBreakdown {
        let n = items.len() as f64;
        let mut acc = LossBreakdown::default();
        for b in items {
            acc.dice += b.dice;
            acc.bce += b.bce;
            acc.rd += b.rd;
            acc.pf += b.pf;
            acc.total += b.total;
        }
        LossBreakdown {
            dice: acc.dice / n,
            bce: acc.bce / n,
            rd: acc.rd / n,
            pf: acc.pf / n,
            total: acc.total / n,
        }
    }
}

/// Mean binary cross-entropy and its gradient, evaluated on `u` clamped to
/// `[BCE_CLAMP, 1 - BCE_CLAMP]`.
pub fn bce_loss(u: &Field2D, y: &BinaryMask) -> Result<(f64, Field2D)> {
    check_dims(u.dims(), y.dims())?;
    let n = u.len() as f64;
    let mut loss = 0.0;
    let mut grad = Field2D::zeros(u.height(), u.width());
    for ((g, &raw), &label) in grad.values_mut().iter_mut().zip(u.values()).zip(y.values()) {
        let p = raw.clamp(BCE_CLAMP, 1.0 - BCE_CLAMP);
        let t = label as f64;
        loss -= t * p.ln() + (1.0 - t) * (1.0 - p).ln();
        *g = (p - t) / (p * (1.0 - p)) / n;
    }
    Ok((loss / n, grad))
}

/// Smoothed soft Dice loss `1 - (2 sum(u y) + s) / (sum(u) + sum(y) + s)`.
pub fn soft_dice_loss(u: &Field2D, y: &BinaryMask) -> Result<(f64, Field2D)> {
    check_dims(u.dims(), y.dims())?;
    let mut inter = 0.0;
    let mut total = 0.0;
    for (&v, &label) in u.values().iter().zip(y.values()) {
        let t = label as f64;
        inter += v * t;
        total += v + t;
    }
    let num = 2.0 * inter + DICE_SMOOTH;
    let den = total + DICE_SMOOTH;
    let loss = 1.0 - num / den;
    let den2 = den * den;
    let mut grad = Field2D::zeros(u.height(), u.width());
    for (g, &label) in grad.values_mut().iter_mut().zip(y.values()) {
        let t = label as f64;
        *g = -(2.0 * t * den - num) / den2;
    }
    Ok((loss, grad))
}

/// Loss and gradient of the data terms only; prior entries are recorded as 0.
pub fn data_loss(u: &Field2D, y: &BinaryMask) -> Result<(f64, Field2D, LossBreakdown)> {
    let (dice, mut grad) = soft_dice_loss(u, y)?;
    let (bce, g_bce) = bce_loss(u, y)?;
    grad.add_scaled(&g_bce, 1.0)?;
    let total = dice + bce;
    Ok((
        total,
        grad,
        LossBreakdown {
            dice,
            bce,
            rd: 0.0,
            pf: 0.0,
            total,
        },
    ))
}

/// The full objective `dice + bce + lambda_rd * rd + lambda_pf * pf` with its
/// gradient. The breakdown always records the unweighted prior values; prior
/// gradients are only formed for terms with a nonzero weight.
pub fn composite_loss(
    u: &Field2D,
    y: &BinaryMask,
    w: &CompositeWeights,
    rd: &RdParams,
    pf: &PfParams,
    g: &GridSpec,
) -> Result<(f64, Field2D, LossBreakdown)> {
    w.validate()?;
    rd.validate()?;
    pf.validate()?;
    let (_, mut grad, mut breakdown) = data_loss(u, y)?;

    let (rd_value, rd_grad) = rd_loss_and_grad(u, rd, g);
    if w.lambda_rd != 0.0 {
        grad.add_scaled(&rd_grad, w.lambda_rd)?;
    }
    let pf_value = pf_energy(u, pf, g);
    if w.lambda_pf != 0.0 {
        grad.add_scaled(&pf_energy_grad(u, pf, g), w.lambda_pf)?;
    }

    breakdown.rd = rd_value;
    breakdown.pf = pf_value;
    let mut total = breakdown.dice + breakdown.bce;
    if w.lambda_rd != 0.0 {
        total += w.lambda_rd * rd_value;
    }
    if w.lambda_pf != 0.0 {
        total += w.lambda_pf * pf_value;
    }
    breakdown.total = total;
    Ok((breakdown.total, grad, breakdown))
}
