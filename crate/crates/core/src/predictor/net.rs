use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::layers::{
    conv_backward, conv_forward, maxpool_backward, maxpool_forward, relu_backward, relu_inplace,
    upsample_backward, upsample_forward, Tensor,
};
use super::params::{LayerIndex, ParamSet};
use crate::error::{Error, Result};
use crate::fidelity::{composite_loss, data_loss, BinaryMask, CompositeWeights, LossBreakdown};
use crate::grid::{Field2D, GridSpec};
use crate::metrics::binarize;
use crate::priors::{PfParams, RdParams};
use crate::solver::{sigmoid, LATENT_BOUND};

/// Loss value, its breakdown and the gradient with respect to every parameter.
#[derive(Clone, Debug)]
pub struct Gradient {
    pub breakdown: LossBreakdown,
    pub params: ParamSet,
}

struct ConvCache {
    /// Padded input.
    xp: Tensor,
    /// Output after the (optional) ReLU.
    y: Tensor,
}

struct Cache {
    enc: Vec<(ConvCache, ConvCache, Vec<usize>)>,
    bott: (ConvCache, ConvCache),
    dropout: Option<Vec<f64>>,
    dec: Vec<(ConvCache, ConvCache, ConvCache)>,
    head: ConvCache,
    logits: Vec<f64>,
}

fn conv(params: &ParamSet, idx: usize, x: &Tensor, relu: bool) -> ConvCache {
    let k = params.specs()[idx].k;
    let (mut y, xp) = conv_forward(x, params.weight(idx), params.bias(idx), k);
    if relu {
        relu_inplace(&mut y);
    }
    ConvCache { xp, y }
}

fn conv_adjoint(params: &ParamSet, idx: usize, c: &ConvCache, mut dy: Tensor, relu: bool, grad: &mut ParamSet) -> Tensor {
    if relu {
        relu_backward(&c.y, &mut dy);
    }
    let k = params.specs()[idx].k;
    let (dw, db) = grad.conv_mut(idx);
    conv_backward(&c.xp, params.weight(idx), &dy, k, dw, db)
}

fn check_image(image: &Field2D, params: &ParamSet) -> Result<()> {
    let (h, w) = image.dims();
    if h == 0 || w == 0 {
        return Err(Error::InvalidArgument("image is empty".into()));
    }
    params.arch().check_input(h, w)
}

fn run(image: &Field2D, params: &ParamSet, dropout_seed: Option<u64>) -> Cache {
    let arch = *params.arch();
    let ix = LayerIndex::new(arch.depth);
    let (h, w) = image.dims();
    let mut x = Tensor {
        c: 1,
        h,
        w,
        data: image.values().to_vec(),
    };

    let mut enc = Vec::with_capacity(arch.depth);
    for l in 0..arch.depth {
        let (i1, i2) = ix.encoder(l);
        let c1 = conv(params, i1, &x, true);
        let c2 = conv(params, i2, &c1.y, true);
        let (pooled, arg) = maxpool_forward(&c2.y);
        x = pooled;
        enc.push((c1, c2, arg));
    }

    let (b1, b2) = ix.bottleneck();
    let c1 = conv(params, b1, &x, true);
    let mut c2 = conv(params, b2, &c1.y, true);
    let mut dropout = None;
    if let (Some(seed), true) = (dropout_seed, arch.dropout_rate > 0.0) {
        let keep = 1.0 - arch.dropout_rate;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mask: Vec<f64> = (0..c2.y.data.len())
            .map(|_| if rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 })
            .collect();
        for (v, m) in c2.y.data.iter_mut().zip(&mask) {
            *v *= m;
        }
        dropout = Some(mask);
    }
    let mut x = c2.y.clone();
    let bott = (c1, c2);

    let mut dec = Vec::with_capacity(arch.depth);
    for l in (0..arch.depth).rev() {
        let (iu, i1, i2) = ix.decoder(l);
        let up = conv(params, iu, &upsample_forward(&x), false);
        let cat = Tensor::concat(&enc[l].1.y, &up.y);
        let c1 = conv(params, i1, &cat, true);
        let c2 = conv(params, i2, &c1.y, true);
        x = c2.y.clone();
        dec.push((up, c1, c2));
    }

    let head = conv(params, ix.head(), &x, false);
    let logits = head.y.data.clone();
    Cache {
        enc,
        bott,
        dropout,
        dec,
        head,
        logits,
    }
}

fn output_field(cache: &Cache, h: usize, w: usize) -> Field2D {
    let values = cache
        .logits
        .iter()
        .map(|&z| sigmoid(z.clamp(-LATENT_BOUND, LATENT_BOUND)))
        .collect();
    Field2D::from_vec(h, w, values).expect("head output has image dims")
}

/// Evaluation-mode forward pass: the field `u` in `(0, 1)` with the image's dims.
pub fn forward(image: &Field2D, params: &ParamSet) -> Result<Field2D> {
    check_image(image, params)?;
    let cache = run(image, params, None);
    Ok(output_field(&cache, image.height(), image.width()))
}

/// Forward pass thresholded at 0.5.
pub fn predict_mask(image: &Field2D, params: &ParamSet) -> Result<BinaryMask> {
    Ok(binarize(&forward(image, params)?, 0.5))
}

/// Composite loss of `forward(image)` against `target` and its exact
/// parameter gradient. Dropout is never applied here.
pub fn backward(
    image: &Field2D,
    target: &BinaryMask,
    params: &ParamSet,
    weights: &CompositeWeights,
    rd: &RdParams,
    pf: &PfParams,
    grid: &GridSpec,
) -> Result<Gradient> {
    backward_with(image, target, params, weights, rd, pf, grid, None)
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn backward_with(
    image: &Field2D,
    target: &BinaryMask,
    params: &ParamSet,
    weights: &CompositeWeights,
    rd: &RdParams,
    pf: &PfParams,
    grid: &GridSpec,
    dropout_seed: Option<u64>,
) -> Result<Gradient> {
    check_image(image, params)?;
    let (h, w) = image.dims();
    if target.dims() != (h, w) {
        return Err(Error::DimensionMismatch {
            expected: (h, w),
            actual: target.dims(),
        });
    }
    let cache = run(image, params, dropout_seed);
    let u = output_field(&cache, h, w);
    let (_, du, breakdown) = if weights.is_zero() {
        data_loss(&u, target)?
    } else {
        composite_loss(&u, target, weights, rd, pf, grid)?
    };
    Ok(Gradient {
        breakdown,
        params: backprop(params, &cache, &u, &du)?,
    })
}

/// Pulls `du = dL/du` back to the parameters through a cached forward pass.
fn backprop(params: &ParamSet, cache: &Cache, u: &Field2D, du: &Field2D) -> Result<ParamSet> {
    let (h, w) = u.dims();
    let arch = *params.arch();
    let ix = LayerIndex::new(arch.depth);
    let mut grad = ParamSet::zeros(&arch)?;

    let mut dz = Tensor::zeros(1, h, w);
    for (k, d) in dz.data.iter_mut().enumerate() {
        let z = cache.logits[k];
        if z.abs() < LATENT_BOUND {
            let s = u.values()[k];
            *d = du.values()[k] * s * (1.0 - s);
        }
    }
    let mut dx = conv_adjoint(params, ix.head(), &cache.head, dz, false, &mut grad);

    let mut dskips: Vec<Option<Tensor>> = (0..arch.depth).map(|_| None).collect();
    for l in 0..arch.depth {
        let (iu, i1, i2) = ix.decoder(l);
        let (up, c1, c2) = &cache.dec[arch.depth - 1 - l];
        let d = conv_adjoint(params, i2, c2, dx, true, &mut grad);
        let dcat = conv_adjoint(params, i1, c1, d, true, &mut grad);
        let (dskip, dup) = dcat.split_channels(arch.channels(l));
        let dupsampled = conv_adjoint(params, iu, up, dup, false, &mut grad);
        dx = upsample_backward(&dupsampled);
        dskips[l] = Some(dskip);
    }

    let (b1, b2) = ix.bottleneck();
    if let Some(mask) = &cache.dropout {
        for (g, m) in dx.data.iter_mut().zip(mask) {
            *g *= m;
        }
    }
    // The dropout mask is applied after the ReLU, so zeroed entries of the
    // cached output also zero the ReLU mask; this is harmless because their
    // incoming gradient was just multiplied by zero.
    let d = conv_adjoint(params, b2, &cache.bott.1, dx, true, &mut grad);
    dx = conv_adjoint(params, b1, &cache.bott.0, d, true, &mut grad);

    for l in (0..arch.depth).rev() {
        let (i1, i2) = ix.encoder(l);
        let (c1, c2, arg) = &cache.enc[l];
        let mut d = maxpool_backward(&dx, arg, c2.y.h, c2.y.w);
        let skip = dskips[l].take().expect("decoder visited every level");
        for (a, b) in d.data.iter_mut().zip(&skip.data) {
            *a += b;
        }
        let d = conv_adjoint(params, i2, c2, d, true, &mut grad);
        dx = conv_adjoint(params, i1, c1, d, true, &mut grad);
    }
    Ok(grad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::predictor::{init_params, ArchConfig};

    fn random_image(h: usize, w: usize, seed: u64) -> Field2D {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Field2D::from_fn(h, w, |_, _| rng.random_range(0.0..1.0))
    }

    /// Initialized kernels plus nonzero biases: with zero biases a ReLU can
    /// sit exactly on its kink wherever its input window is all zeros, and
    /// central differences there see only half the slope.
    fn random_params(arch: &ArchConfig, seed: u64) -> ParamSet {
        let mut p = init_params(arch, seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xb1a5);
        for idx in 0..p.specs().len() {
            let (_, b) = p.conv_mut(idx);
            for v in b.iter_mut() {
                *v = rng.random_range(-0.1..0.1);
            }
        }
        p
    }

    fn disk(h: usize, w: usize) -> BinaryMask {
        BinaryMask::from_fn(h, w, |i, j| {
            let (di, dj) = (i as f64 - h as f64 / 2.0, j as f64 - w as f64 / 2.0);
            di * di + dj * dj < (h as f64 / 3.0).powi(2)
        })
    }

    #[test]
    fn zero_params_give_one_half() {
        let p = ParamSet::zeros(&ArchConfig::default()).unwrap();
        let u = forward(&random_image(16, 16, 0), &p).unwrap();
        assert!(u.values().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn shape_and_range() {
        let p = init_params(&ArchConfig::default(), 3).unwrap();
        let u = forward(&random_image(16, 20, 1), &p).unwrap();
        assert_eq!(u.dims(), (16, 20));
        assert!(u.values().iter().all(|&v| v > 0.0 && v < 1.0));
    }

    #[test]
    fn rejects_indivisible_input() {
        let p = init_params(&ArchConfig::default(), 3).unwrap();
        assert!(matches!(forward(&random_image(18, 16, 1), &p), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn output_sum_matches_finite_difference() {
        let arch = ArchConfig::new(1, 2);
        let p = random_params(&arch, 9);
        let img = random_image(8, 8, 2);
        let cache = run(&img, &p, None);
        let u = output_field(&cache, 8, 8);
        let an = backprop(&p, &cache, &u, &Field2D::constant(8, 8, 1.0)).unwrap();
        let h = 1e-6;
        for k in 0..p.len() {
            let mut plus = p.clone();
            plus.as_mut_slice()[k] += h;
            let mut minus = p.clone();
            minus.as_mut_slice()[k] -= h;
            let fd = (forward(&img, &plus).unwrap().sum() - forward(&img, &minus).unwrap().sum()) / (2.0 * h);
            let a = an.as_slice()[k];
            assert!((fd - a).abs() <= 1e-3 * fd.abs().max(1e-4), "k={k} fd={fd} analytic={a}");
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let arch = ArchConfig::new(1, 3);
        let weights = CompositeWeights::new(0.3, 0.2);
        let (rd, pf, g) = (RdParams::default(), PfParams::default(), GridSpec::default());
        for seed in 0..5 {
            let p = random_params(&arch, seed);
            let img = random_image(8, 8, seed + 10);
            let y = disk(8, 8);
            let loss = |q: &ParamSet| backward(&img, &y, q, &weights, &rd, &pf, &g).unwrap().breakdown.total;
            let an = backward(&img, &y, &p, &weights, &rd, &pf, &g).unwrap().params;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (mut num, mut den) = (0.0, 0.0);
            for _ in 0..20 {
                let k = rng.random_range(0..p.len());
                let mut plus = p.clone();
                plus.as_mut_slice()[k] += 1e-6;
                let mut minus = p.clone();
                minus.as_mut_slice()[k] -= 1e-6;
                let fd = (loss(&plus) - loss(&minus)) / 2e-6;
                num += (fd - an.as_slice()[k]).powi(2);
                den += fd * fd;
            }
            assert!(den > 0.0, "seed {seed}: sampled coordinates carry no gradient");
            assert!((num / den).sqrt() < 1e-3, "seed {seed}: rel err {}", (num / den).sqrt());
        }
    }

    #[test]
    fn deeper_gradient_matches_finite_differences() {
        let arch = ArchConfig::new(2, 3);
        let weights = CompositeWeights::new(0.1, 0.1);
        let (rd, pf, g) = (RdParams::default(), PfParams::raw_sum(2.0), GridSpec::default());
        let p = random_params(&arch, 21);
        let img = random_image(8, 12, 5);
        let y = disk(8, 12);
        let loss = |q: &ParamSet| backward(&img, &y, q, &weights, &rd, &pf, &g).unwrap().breakdown.total;
        let an = backward(&img, &y, &p, &weights, &rd, &pf, &g).unwrap().params;
        let (mut num, mut den) = (0.0, 0.0);
        for k in (0..p.len()).step_by(7) {
            let mut plus = p.clone();
            plus.as_mut_slice()[k] += 1e-6;
            let mut minus = p.clone();
            minus.as_mut_slice()[k] -= 1e-6;
            let fd = (loss(&plus) - loss(&minus)) / 2e-6;
            num += (fd - an.as_slice()[k]).powi(2);
            den += fd * fd;
        }
        assert!(den > 0.0);
        assert!((num / den).sqrt() < 1e-3, "rel err {}", (num / den).sqrt());
    }

    #[test]
    fn pf_component_is_linear_in_weight() {
        let arch = ArchConfig::new(1, 2);
        let p = init_params(&arch, 1).unwrap();
        let img = random_image(8, 8, 1);
        let y = disk(8, 8);
        let (rd, pf, g) = (RdParams::default(), PfParams::default(), GridSpec::default());
        let grad = |l: f64| {
            backward(&img, &y, &p, &CompositeWeights::new(0.0, l), &rd, &pf, &g)
                .unwrap()
                .params
        };
        let (g0, g1, g2) = (grad(0.0), grad(0.5), grad(1.0));
        for k in 0..p.len() {
            let c1 = g1.as_slice()[k] - g0.as_slice()[k];
            let c2 = g2.as_slice()[k] - g0.as_slice()[k];
            assert!((c2 - 2.0 * c1).abs() <= 1e-9 * (1.0 + c2.abs()));
        }
    }

    #[test]
    fn dropout_changes_training_pass_only() {
        let mut arch = ArchConfig::new(1, 2);
        arch.dropout_rate = 0.5;
        let p = init_params(&arch, 1).unwrap();
        let img = random_image(8, 8, 1);
        let y = disk(8, 8);
        let (w, rd, pf, g) = (
            CompositeWeights::default(),
            RdParams::default(),
            PfParams::default(),
            GridSpec::default(),
        );
        let plain = backward(&img, &y, &p, &w, &rd, &pf, &g).unwrap();
        let again = backward(&img, &y, &p, &w, &rd, &pf, &g).unwrap();
        assert_eq!(plain.params, again.params);
        let dropped = backward_with(&img, &y, &p, &w, &rd, &pf, &g, Some(7)).unwrap();
        assert_ne!(plain.params, dropped.params);
    }
}
