//! Direct variational optimization of a single field against a target mask.
//!
//! The field is parameterized as `u = sigmoid(z)` and the latent `z` is
//! optimized with Adam. Stage 1 minimizes the data terms only; stage 2
//! switches on the weighted physics priors.

use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::fidelity::{composite_loss, data_loss, BinaryMask, CompositeWeights, LossBreakdown};
use crate::grid::{Field2D, GridSpec};
use crate::priors::{PfParams, RdParams};

/// Latent values are kept in `[-LATENT_BOUND, LATENT_BOUND]` so the sigmoid
/// image stays strictly inside `(0, 1)` in double precision.
pub const LATENT_BOUND: f64 = 30.0;

#[inline]
pub fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Adam hyperparameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamParams {
    pub step_size: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamParams {
    fn default() -> Self {
        Self {
            step_size: 0.05,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.step_size.is_finite() && self.step_size > 0.0) {
            return invalid(format!("step_size must be positive, got {}", self.step_size));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(b > 0.0 && b < 1.0) {
                return invalid(format!("{name} must lie in (0,1), got {b}"));
            }
        }
        if !(self.eps.is_finite() && self.eps > 0.0) {
            return invalid(format!("adam eps must be positive, got {}", self.eps));
        }
        Ok(())
    }
}

/// First and second moment estimates of Adam.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    /// Number of updates applied so far.
    pub t: usize,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        Self {
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
        }
    }

    /// Applies one update to `params` in place.
    pub fn step(&mut self, params: &mut [f64], grad: &[f64], cfg: &AdamParams) {
        let (next, delta) = adam_update(self, grad, cfg, self.t + 1);
        *self = next;
        for (p, d) in params.iter_mut().zip(delta) {
            *p += d;
        }
    }
}

/// One bias-corrected Adam update at iteration `t >= 1`. Returns the new
/// moment state and the parameter delta to add.
pub fn adam_update(state: &AdamState, grad: &[f64], cfg: &AdamParams, t: usize) -> (AdamState, Vec<f64>) {
    assert!(t >= 1, "adam iteration index starts at 1");
    assert_eq!(state.m.len(), grad.len(), "moment and gradient sizes differ");
    let bc1 = 1.0 - cfg.beta1.powi(t as i32);
    let bc2 = 1.0 - cfg.beta2.powi(t as i32);
    let mut m = Vec::with_capacity(grad.len());
    let mut v = Vec::with_capacity(grad.len());
    let mut delta = Vec::with_capacity(grad.len());
    for ((&g, &m0), &v0) in grad.iter().zip(&state.m).zip(&state.v) {
        let m1 = cfg.beta1 * m0 + (1.0 - cfg.beta1) * g;
        let v1 = cfg.beta2 * v0 + (1.0 - cfg.beta2) * g * g;
        let m_hat = m1 / bc1;
        let v_hat = v1 / bc2;
        delta.push(-cfg.step_size * m_hat / (v_hat.sqrt() + cfg.eps));
        m.push(m1);
        v.push(v1);
    }
    (AdamState { m, v, t }, delta)
}

/// Initial latent field.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum LatentInit {
    #[default]
    Zeros,
    /// i.i.d. Gaussian latent with standard deviation `sigma`.
    Noisy { sigma: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolveConfig {
    pub stage1_iters: usize,
    pub stage2_iters: usize,
    pub adam: AdamParams,
    /// Prior weights, applied during stage 2 only.
    pub weights: CompositeWeights,
    pub rd: RdParams,
    pub pf: PfParams,
    pub grid: GridSpec,
    pub seed: u64,
    pub init: LatentInit,
}

impl Default for SolveConfig {
    fn default() -> Self {
        Self {
            stage1_iters: 300,
            stage2_iters: 300,
            adam: AdamParams::default(),
            weights: CompositeWeights::default(),
            rd: RdParams::default(),
            pf: PfParams::default(),
            grid: GridSpec::default(),
            seed: 0,
            init: LatentInit::Zeros,
        }
    }
}

impl SolveConfig {
    pub fn validate(&self) -> Result<()> {
        if self.stage1_iters == 0 && self.stage2_iters == 0 {
            return invalid("stage1_iters and stage2_iters cannot both be 0");
        }
        self.adam.validate()?;
        self.weights.validate()?;
        self.rd.validate()?;
        self.pf.validate()?;
        self.grid.validate()?;
        if let LatentInit::Noisy { sigma } = self.init {
            if !(sigma.is_finite() && sigma >= 0.0) {
                return invalid(format!("init sigma must be nonnegative, got {sigma}"));
            }
        }
        Ok(())
    }
}

/// One optimizer iteration in the loss log.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterRecord {
    pub iter: usize,
    pub stage: u8,
    pub loss: LossBreakdown,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SolveReport {
    pub final_field: Field2D,
    pub loss_log: Vec<IterRecord>,
    /// Index of the first stage-2 iteration.
    pub stage_boundary: usize,
}

impl SolveReport {
    /// Writes the loss log as CSV (`iter,stage,dice,bce,rd,pf,total`).
    pub fn write_loss_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "iter,stage,dice,bce,rd,pf,total")?;
        for r in &self.loss_log {
            writeln!(
                out,
                "{},{},{},{},{},{},{}",
                r.iter,
                r.stage,
                crate::fmt_sig6(r.loss.dice),
                crate::fmt_sig6(r.loss.bce),
                crate::fmt_sig6(r.loss.rd),
                crate::fmt_sig6(r.loss.pf),
                crate::fmt_sig6(r.loss.total),
            )?;
        }
        Ok(())
    }
}

fn initial_latent(dims: (usize, usize), cfg: &SolveConfig) -> Vec<f64> {
    let n = dims.0 * dims.1;
    match cfg.init {
        LatentInit::Zeros => vec![0.0; n],
        LatentInit::Noisy { sigma } => {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            let normal = Normal::new(0.0, sigma).expect("sigma validated");
            (0..n).map(|_| normal.sample(&mut rng)).collect()
        }
    }
}

/// Optimizes `u = sigmoid(z)` against `target` with the two-stage schedule.
pub fn solve_variational(target: &BinaryMask, cfg: &SolveConfig) -> Result<SolveReport> {
    cfg.validate()?;
    let (h, w) = target.dims();
    let mut z = initial_latent((h, w), cfg);
    let mut adam = AdamState::new(z.len());
    let total_iters = cfg.stage1_iters + cfg.stage2_iters;
    let mut log = Vec::with_capacity(total_iters);

    for iter in 0..total_iters {
        let stage = if iter < cfg.stage1_iters { 1 } else { 2 };
        let u = Field2D::from_vec(h, w, z.iter().map(|&v| sigmoid(v)).collect())?;
        let (total, du, loss) = if stage == 1 {
            data_loss(&u, target)?
        } else {
            composite_loss(&u, target, &cfg.weights, &cfg.rd, &cfg.pf, &cfg.grid)?
        };
        if !total.is_finite() {
            return Err(Error::Divergence {
                phase: "iteration",
                index: iter,
                value: total,
            });
        }
        log.push(IterRecord { iter, stage, loss });

        let dz: Vec<f64> = du
            .values()
            .iter()
            .zip(u.values())
            .map(|(&g, &s)| g * s * (1.0 - s))
            .collect();
        adam.step(&mut z, &dz, &cfg.adam);
        for v in &mut z {
            *v = v.clamp(-LATENT_BOUND, LATENT_BOUND);
        }
    }

    let final_field = Field2D::from_vec(h, w, z.iter().map(|&v| sigmoid(v)).collect())?;
    Ok(SolveReport {
        final_field,
        loss_log: log,
        stage_boundary: cfg.stage1_iters,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::{binarize, dice};
    use rand::Rng;

    fn disk_mask(n: usize, r: f64) -> BinaryMask {
        let c = n as f64 / 2.0;
        BinaryMask::from_fn(n, n, |i, j| {
            let (y, x) = (i as f64 + 0.5 - c, j as f64 + 0.5 - c);
            x * x + y * y <= r * r
        })
    }

    // Scalar-by-scalar reference Adam, written independently of `adam_update`.
    fn scalar_adam(grads: &[Vec<f64>], cfg: &AdamParams) -> Vec<f64> {
        let n = grads[0].len();
        let mut out = vec![0.0; n];
        for k in 0..n {
            let (mut p, mut m, mut v) = (0.0f64, 0.0f64, 0.0f64);
            for (t, g) in grads.iter().enumerate() {
                let g = g[k];
                m = cfg.beta1 * m + (1.0 - cfg.beta1) * g;
                v = cfg.beta2 * v + (1.0 - cfg.beta2) * g * g;
                let mh = m / (1.0 - cfg.beta1.powi(t as i32 + 1));
                let vh = v / (1.0 - cfg.beta2.powi(t as i32 + 1));
                p -= cfg.step_size * mh / (vh.sqrt() + cfg.eps);
            }
            out[k] = p;
        }
        out
    }

    #[test]
    fn adam_zero_gradient_gives_zero_delta() {
        let (_, delta) = adam_update(&AdamState::new(4), &[0.0; 4], &AdamParams::default(), 1);
        assert!(delta.iter().all(|&d| d == 0.0));
    }

    #[test]
    fn adam_constant_gradient_steps_by_step_size() {
        let cfg = AdamParams::default();
        let mut state = AdamState::new(3);
        let mut p = vec![0.0; 3];
        let g = [2.5, -0.01, 40.0];
        let mut last = p.clone();
        for _ in 0..200 {
            last.copy_from_slice(&p);
            state.step(&mut p, &g, &cfg);
        }
        for k in 0..3 {
            let step = p[k] - last[k];
            assert!((step + cfg.step_size * g[k].signum()).abs() < 1e-6 * cfg.step_size);
        }
    }

    #[test]
    fn adam_matches_scalar_reference() {
        let cfg = AdamParams {
            step_size: 0.01,
            beta1: 0.8,
            beta2: 0.99,
            eps: 1e-8,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let grads: Vec<Vec<f64>> = (0..50)
            .map(|_| (0..6).map(|_| rng.random_range(-2.0..2.0)).collect())
            .collect();
        let mut state = AdamState::new(6);
        let mut p = vec![0.0; 6];
        for g in &grads {
            state.step(&mut p, g, &cfg);
        }
        let expected = scalar_adam(&grads, &cfg);
        for k in 0..6 {
            assert!((p[k] - expected[k]).abs() < 1e-12);
        }
    }

    #[test]
    fn clean_target_is_fit() {
        let target = disk_mask(32, 9.0);
        let cfg = SolveConfig {
            stage1_iters: 500,
            stage2_iters: 0,
            ..SolveConfig::default()
        };
        let report = solve_variational(&target, &cfg).unwrap();
        assert_eq!(report.loss_log.len(), 500);
        assert!(dice(&binarize(&report.final_field, 0.5), &target).unwrap() >= 0.99);
        assert!(report.loss_log.iter().all(|r| r.loss.rd == 0.0 && r.loss.pf == 0.0));

        let first: f64 = report.loss_log[..10].iter().map(|r| r.loss.data()).sum();
        let last: f64 = report.loss_log[490..].iter().map(|r| r.loss.data()).sum();
        assert!(last < first);
    }

    #[test]
    fn report_is_deterministic_and_in_range() {
        let target = disk_mask(16, 5.0);
        let cfg = SolveConfig {
            stage1_iters: 20,
            stage2_iters: 20,
            weights: CompositeWeights::new(0.1, 0.1),
            init: LatentInit::Noisy { sigma: 0.5 },
            seed: 9,
            ..SolveConfig::default()
        };
        let a = solve_variational(&target, &cfg).unwrap();
        let b = solve_variational(&target, &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.stage_boundary, 20);
        assert!(a.final_field.values().iter().all(|&v| v > 0.0 && v < 1.0));
        assert!(a.loss_log[..20].iter().all(|r| r.stage == 1 && r.loss.rd == 0.0));
        assert!(a.loss_log[20..].iter().all(|r| r.stage == 2 && r.loss.rd > 0.0));
    }

    #[test]
    fn divergence_is_reported() {
        let target = disk_mask(8, 2.0);
        let cfg = SolveConfig {
            stage1_iters: 0,
            stage2_iters: 5,
            weights: CompositeWeights::new(1.0, 0.0),
            rd: RdParams { d: 1e300, a: 0.5 },
            init: LatentInit::Noisy { sigma: 1.0 },
            ..SolveConfig::default()
        };
        match solve_variational(&target, &cfg) {
            Err(Error::Divergence { index, .. }) => assert_eq!(index, 0),
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn rejects_empty_schedule() {
        let cfg = SolveConfig {
            stage1_iters: 0,
            stage2_iters: 0,
            ..SolveConfig::default()
        };
        assert!(solve_variational(&disk_mask(8, 2.0), &cfg).is_err());
    }
}
