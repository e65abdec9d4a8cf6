//! Central finite-difference checks of analytic gradients.

use super::layers::Mode;
use super::loss::{add_regularizer_grad, training_loss};
use super::params::{ParamKind, ParameterStore};
use super::unet::{init_params, unet_backward, unet_forward, UNetConfig, UpsampleMode};
use crate::error::{invalid, Result};
use crate::image::Tensor;
use crate::prng::Prng;

/// Gradients smaller than this are compared in absolute terms.
pub const REL_ERROR_FLOOR: f64 = 1e-7;

/// `|a - n| / max(|a|, |n|, REL_ERROR_FLOOR)`.
pub fn rel_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERROR_FLOOR)
}

/// Central differences of `f` at `x` for each coordinate in `probe`.
pub fn central_differences(mut f: impl FnMut(&[f64]) -> f64, x: &[f64], probe: &[usize], eps: f64) -> Vec<f64> {
    let mut buf = x.to_vec();
    probe
        .iter()
        .map(|&i| {
            buf[i] = x[i] + eps;
            let hi = f(&buf);
            buf[i] = x[i] - eps;
            let lo = f(&buf);
            buf[i] = x[i];
            (hi - lo) / (2.0 * eps)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckConfig {
    pub depth: usize,
    pub size: usize,
    pub batch: usize,
    pub base_filters: usize,
    pub upsample: UpsampleMode,
    pub probes: usize,
    pub eps: f64,
    pub lambda: f64,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig {
            depth: 3,
            size: 16,
            batch: 4,
            base_filters: 8,
            upsample: UpsampleMode::Transposed,
            probes: 200,
            eps: 1e-5,
            lambda: 1e-4,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct GradCheckReport {
    pub probes: usize,
    pub max_rel_error: f64,
    pub mean_rel_error: f64,
    /// Parameter name and flat index of the worst probe.
    pub worst: (String, usize),
    /// Analytic and numeric derivative at the worst probe.
    pub worst_values: (f64, f64),
    /// Probes redrawn because the perturbation crossed a kink.
    pub skipped: usize,
}

/// Whole-network check in train mode (batch statistics and a fixed dropout
/// mask) on the full training loss. Probes whose perturbed passes flip a relu
/// or max-pool branch are not differentiable there and are redrawn.
pub fn gradcheck(gc: &GradCheckConfig) -> Result<GradCheckReport> {
    if gc.probes == 0 || !(gc.eps > 0.0) {
        return Err(invalid!("gradcheck needs probes > 0 and eps > 0"));
    }
    let cfg = UNetConfig {
        depth: gc.depth,
        base_filters: gc.base_filters,
        upsample: gc.upsample,
        input_size: gc.size,
        ..UNetConfig::default()
    };
    let mut g = Prng::new(gc.seed);
    let mut params = init_params(&cfg, &mut g)?;
    // Non-trivial normalization parameters so every path is exercised.
    for p in params.values_mut() {
        if p.kind.trainable() && p.kind != ParamKind::Kernel {
            for v in p.value.data_mut() {
                *v += 0.2 * g.normal();
            }
        }
    }
    let shape = [gc.batch, 1, gc.size, gc.size];
    let n: usize = shape.iter().product();
    let x = Tensor::from_vec(shape.to_vec(), (0..n).map(|_| g.next_f64()).collect())?;
    let target = Tensor::from_vec(shape.to_vec(), (0..n).map(|_| g.next_f64()).collect())?;
    let dropout_seed = g.next_u64();

    let forward = |params: &ParameterStore| unet_forward(&cfg, params, &x, Mode::Train, &mut Prng::new(dropout_seed));

    let (y, cache) = forward(&params)?;
    let (_, dy) = training_loss(&y, &target, &params, gc.lambda, cfg.dropout_p)?;
    let mut grads = unet_backward(&cfg, &params, &cache, &dy)?;
    add_regularizer_grad(&params, &mut grads, gc.lambda, cfg.dropout_p)?;

    let slots: Vec<(usize, usize)> = params
        .params()
        .iter()
        .enumerate()
        .filter(|(_, p)| p.kind.trainable())
        .flat_map(|(i, p)| (0..p.value.len()).map(move |j| (i, j)))
        .collect();
    let mut worst = (String::new(), 0);
    let mut worst_values = (0.0, 0.0);
    let (mut max_err, mut sum_err) = (0.0f64, 0.0);
    let (mut done, mut skipped) = (0, 0);
    while done < gc.probes {
        if skipped > 10 * gc.probes {
            return Err(invalid!("gradcheck: almost every probe crosses a kink"));
        }
        let (pi, j) = slots[g.uniform_int(0, slots.len() - 1)?];
        let name = params.params()[pi].name.clone();
        let orig = params.params()[pi].value.data()[j];
        let mut eval = |v: f64| -> Result<(Tensor, super::unet::ForwardCache)> {
            let mut t = params.params()[pi].value.clone();
            t.data_mut()[j] = v;
            params.set(&name, t)?;
            forward(&params)
        };
        let (hi, hi_cache) = eval(orig + gc.eps)?;
        let (lo, lo_cache) = eval(orig - gc.eps)?;
        eval(orig)?;
        if !(cache.same_activation_pattern(&hi_cache) && cache.same_activation_pattern(&lo_cache)) {
            skipped += 1;
            continue;
        }
        done += 1;
        // L(hi) - L(lo) summed term by term to avoid cancelling two large totals.
        let data_diff: f64 = hi
            .data()
            .iter()
            .zip(lo.data())
            .zip(target.data())
            .map(|((h, l), t)| (h - l) * (h + l - 2.0 * t))
            .sum::<f64>()
            / gc.batch as f64;
        let reg_diff = if params.params()[pi].kind == ParamKind::Kernel {
            gc.lambda * (1.0 - cfg.dropout_p).powi(2) * 4.0 * orig * gc.eps
        } else {
            0.0
        };
        let numeric = (data_diff + reg_diff) / (2.0 * gc.eps);
        let analytic = grads.slots[pi].data()[j];
        let err = rel_error(analytic, numeric);
        sum_err += err;
        if err >= max_err {
            max_err = err;
            worst = (name, j);
            worst_values = (analytic, numeric);
        }
    }
    Ok(GradCheckReport {
        probes: gc.probes,
        max_rel_error: max_err,
        mean_rel_error: sum_err / gc.probes as f64,
        worst,
        worst_values,
        skipped,
    })
}
