//! Image activation: perturb an image within its JND envelope so that its
//! feature moves towards the value the index stores for it.
//!
//! The perturbation is parametrised as `I = I_o + α · H(I_o) ⊙ tanh(δ)`,
//! where `H` is the [`jnd_map`] of the original. `δ` starts at zero and is
//! updated with [`Adam`] on `L_f(f(I), target) + λ · L_i(I, I_o)`. The index
//! is only read, so stored codes and search results for other images are
//! unaffected.

mod adam;
mod jnd;
mod loss;

use rand::Rng;
use serde::{Deserialize, Serialize};

pub use adam::{Adam, BETA1, BETA2, EPSILON};
pub use jnd::{
    background_luminance, channel_scales, combine, contrast_masking, jnd_luma, jnd_map, luminance_adaptation,
    sobel_magnitude, JndMap, BACKGROUND_PATCH, LUMA_MIX,
};
pub use loss::{LossKind, LossTarget};

use crate::extractor::{ExtractorWeights, FeatureVector};
use crate::imagelab::{apply_transform, quality, transform_vjp, Image, QualityStats, TransformKind, TransformSpec};
use crate::index::AnyIndex;
use crate::seed::rng_for;
use crate::{Error, Result};

/// Expectation-over-transformation settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EotConfig {
    /// Transforms per step, the identity included.
    pub samples: usize,
    pub pool: Vec<TransformSpec>,
    pub seed: u64,
}

impl Default for EotConfig {
    fn default() -> Self {
        EotConfig {
            samples: 8,
            pool: vec![
                TransformSpec::new(TransformKind::Blur, 1.0),
                TransformSpec::new(TransformKind::Rotate, 5.0),
            ],
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ActivationConfig {
    /// Global perturbation strength.
    pub alpha: f64,
    /// Weight of the image loss.
    pub lambda: f64,
    /// Adam learning rate.
    pub lr: f64,
    pub steps: usize,
    /// Loss family; `None` picks the natural one for the index.
    pub loss: Option<LossKind>,
    pub eot: Option<EotConfig>,
}

impl Default for ActivationConfig {
    fn default() -> Self {
        ActivationConfig {
            alpha: 3.0,
            lambda: 1.0,
            lr: 1.0,
            steps: 10,
            loss: None,
            eot: None,
        }
    }
}

impl ActivationConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(Error::invalid(format!("alpha must be finite and >= 0, got {}", self.alpha)));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::invalid(format!("lambda must be finite and >= 0, got {}", self.lambda)));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::invalid(format!("lr must be finite and > 0, got {}", self.lr)));
        }
        if let Some(eot) = &self.eot {
            if eot.samples == 0 {
                return Err(Error::invalid("EoT needs at least one sample"));
            }
            if eot.samples > 1 && eot.pool.is_empty() {
                return Err(Error::invalid("EoT transform pool is empty"));
            }
            for spec in &eot.pool {
                spec.validate()?;
                if spec.kind == TransformKind::Hue {
                    return Err(Error::invalid("hue rotation cannot be used for EoT"));
                }
            }
        }
        Ok(())
    }
}

/// Loss values at one optimisation step.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub feature_loss: f64,
    pub image_loss: f64,
    pub total: f64,
}

#[derive(Clone, Debug)]
pub struct ActivationResult {
    pub activated: Image,
    pub loss_trace: Vec<LossRecord>,
    pub quality: QualityStats,
    pub feature_before: FeatureVector,
    pub feature_after: FeatureVector,
}

/// Image loss: mean squared difference on the `[0, 1]` intensity scale.
pub fn image_loss(current: &[f64], original: &[f64]) -> (f64, Vec<f64>) {
    let n = current.len() as f64;
    let k = 1.0 / (255.0 * 255.0 * n);
    let mut value = 0.0;
    let grad = current
        .iter()
        .zip(original)
        .map(|(c, o)| {
            let d = c - o;
            value += d * d * k;
            2.0 * d * k
        })
        .collect();
    (value, grad)
}

/// Value of `L_f` and its gradient with respect to the image pixels,
/// averaged over `transforms`.
pub fn feature_loss_gradient(
    image: &Image,
    extractor: &ExtractorWeights,
    target: &LossTarget,
    transforms: &[TransformSpec],
) -> Result<(f64, Vec<f64>)> {
    let mut value = 0.0;
    let mut grad = vec![0.0; image.len()];
    for spec in transforms {
        let view = apply_transform(image, spec)?;
        let tape = extractor.forward(&view)?;
        let (v, gx) = target.value_and_gradient(tape.feature())?;
        let g_view = extractor.backward_tape(&tape, &gx)?;
        let g = transform_vjp(image, spec, &g_view.data)?;
        value += v;
        grad.iter_mut().zip(&g).for_each(|(a, b)| *a += b);
    }
    let n = transforms.len() as f64;
    grad.iter_mut().for_each(|g| *g /= n);
    Ok((value / n, grad))
}

/// `I_o + scale ⊙ tanh(δ)` clamped to `[0, 255]`, with the clamp mask.
fn perturbed(original: &[f64], scale: &[f64], delta: &[f64]) -> (Vec<f64>, Vec<bool>) {
    original
        .iter()
        .zip(scale)
        .zip(delta)
        .map(|((o, s), d)| {
            let raw = o + s * d.tanh();
            (raw.clamp(0.0, 255.0), (0.0..=255.0).contains(&raw))
        })
        .unzip()
}

/// Rounds to `f32` without leaving the envelope `|I − I_o| ≤ bound`.
fn within_envelope(values: &[f64], original: &[f32], bound: &[f64]) -> Vec<f32> {
    values
        .iter()
        .zip(original)
        .zip(bound)
        .map(|((&v, &o), &b)| {
            let mut out = v as f32;
            while (out as f64 - o as f64).abs() > b {
                out = if out > o { out.next_down() } else { out.next_up() };
            }
            out
        })
        .collect()
}

fn eot_draws(eot: &EotConfig, step: usize) -> Vec<TransformSpec> {
    let mut rng = rng_for(eot.seed, "eot", step as u64);
    let mut draws = vec![TransformSpec::identity()];
    for _ in 1..eot.samples {
        draws.push(eot.pool[rng.random_range(0..eot.pool.len())].clone());
    }
    draws
}

/// Runs the optimisation against an explicit target.
pub fn activate_with_target(
    original: &Image,
    extractor: &ExtractorWeights,
    target: &LossTarget,
    config: &ActivationConfig,
) -> Result<ActivationResult> {
    config.validate()?;
    let (h, w) = (original.height(), original.width());
    let orig: Vec<f64> = original.data().iter().map(|&v| v as f64).collect();
    let scale: Vec<f64> = jnd_map(original).data.iter().map(|v| config.alpha * v).collect();
    let mut delta = vec![0.0f64; orig.len()];
    let mut adam = Adam::new(delta.len(), config.lr)?;
    let mut trace = Vec::with_capacity(config.steps);
    let identity = [TransformSpec::identity()];

    for step in 0..config.steps {
        let (pixels, mask) = perturbed(&orig, &scale, &delta);
        let image = Image::new(h, w, within_envelope(&pixels, original.data(), &scale))?;
        let draws = config.eot.as_ref().map(|e| eot_draws(e, step));
        let transforms = draws.as_deref().unwrap_or(&identity);
        let (lf, gf) = feature_loss_gradient(&image, extractor, target, transforms)?;
        let (li, gi) = image_loss(&pixels, &orig);
        trace.push(LossRecord {
            feature_loss: lf,
            image_loss: li,
            total: lf + config.lambda * li,
        });
        let grad: Vec<f64> = (0..delta.len())
            .map(|p| {
                if !mask[p] {
                    return 0.0;
                }
                let t = delta[p].tanh();
                (gf[p] + config.lambda * gi[p]) * scale[p] * (1.0 - t * t)
            })
            .collect();
        adam.step(&mut delta, &grad)?;
    }

    let (pixels, _) = perturbed(&orig, &scale, &delta);
    let activated = Image::new(h, w, within_envelope(&pixels, original.data(), &scale))?;
    let feature_before = extractor.extract(original)?;
    let feature_after = extractor.extract(&activated)?;
    Ok(ActivationResult {
        quality: quality(original, &activated)?,
        activated,
        loss_trace: trace,
        feature_before,
        feature_after,
    })
}

fn target_for(index: &AnyIndex, id: u32, config: &ActivationConfig) -> Result<LossTarget> {
    let kind = config.loss.unwrap_or_else(|| LossKind::for_index(index));
    LossTarget::from_index(index, id, kind)
}

/// Activates an image already stored in `index` under `id`.
pub fn activate(
    original: &Image,
    extractor: &ExtractorWeights,
    index: &AnyIndex,
    id: u32,
    config: &ActivationConfig,
) -> Result<ActivationResult> {
    let target = target_for(index, id, config)?;
    let plain = ActivationConfig {
        eot: None,
        ..config.clone()
    };
    activate_with_target(original, extractor, &target, &plain)
}

/// Like [`activate`], but each step averages the feature loss over the
/// identity and `samples − 1` transforms drawn from the EoT pool.
pub fn activate_eot(
    original: &Image,
    extractor: &ExtractorWeights,
    index: &AnyIndex,
    id: u32,
    config: &ActivationConfig,
) -> Result<ActivationResult> {
    if config.eot.is_none() {
        return Err(Error::invalid("EoT activation needs an eot section in the config"));
    }
    let target = target_for(index, id, config)?;
    activate_with_target(original, extractor, &target, config)
}
