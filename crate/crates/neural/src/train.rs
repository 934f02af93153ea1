//! Supervised training of the unrolled network on synthetic degradations.

use blindsr_core::degradation::{degrade, sample_training_kernel, DegradationConfig, Setting};
use blindsr_core::kernel_space::{project, PcaBasis};
use blindsr_core::rng::{rng_for, streams};
use blindsr_core::{Error, Image, Result};
use rand::Rng;

use crate::model::{DanConfig, DanModel, NeuralSolver};
use crate::params::ParamStore;
use crate::tape::Tape;
use crate::tensor::Tensor4;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub setting: Setting,
    pub steps: usize,
    pub batch: usize,
    /// Side of the square HR crops.
    pub crop: usize,
    pub learning_rate: f64,
    /// Halve the learning rate every this many steps; 0 keeps it fixed.
    pub decay_every: usize,
    /// Weight of the kernel term in the loss.
    pub kernel_weight: f64,
    /// AWGN standard deviation on the 0–255 scale.
    pub noise_sigma: f64,
    pub seed: u64,
}

impl TrainConfig {
    pub fn toy(setting: Setting) -> Self {
        Self {
            setting,
            steps: 2000,
            batch: 8,
            crop: 32,
            learning_rate: 2e-4,
            decay_every: 0,
            kernel_weight: 1.0,
            noise_sigma: 0.0,
            seed: 0,
        }
    }

    fn validate(&self, scale: usize) -> Result<()> {
        if self.steps == 0 || self.batch == 0 {
            return Err(Error::InvalidArgument("steps and batch must be positive".into()));
        }
        if self.crop == 0 || !self.crop.is_multiple_of(scale) {
            return Err(Error::InvalidArgument(format!(
                "crop {} must be a positive multiple of the scale {scale}",
                self.crop
            )));
        }
        if !(self.learning_rate > 0.0) || !(self.kernel_weight >= 0.0) || !(self.noise_sigma >= 0.0) {
            return Err(Error::InvalidArgument(
                "learning rate must be positive; kernel weight and noise non-negative".into(),
            ));
        }
        Ok(())
    }
}

/// Adam with bias correction.
#[derive(Clone, Debug)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: i32,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(params: &ParamStore) -> Self {
        let zeros: Vec<Vec<f64>> = params.iter().map(|p| vec![0.0; p.value.len()]).collect();
        Self {
            beta1: 0.9,
            beta2: 0.99,
            eps: 1e-8,
            t: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn step(&mut self, params: &mut ParamStore, grads: &[&[f64]], lr: f64) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for (i, g) in grads.iter().enumerate() {
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            let w = params.get_mut(i).value.data_mut();
            for j in 0..g.len() {
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * g[j];
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * g[j] * g[j];
                w[j] -= lr * (m[j] / c1) / ((v[j] / c2).sqrt() + self.eps);
            }
        }
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub solver: NeuralSolver,
    /// Total loss at every step.
    pub losses: Vec<f64>,
}

struct Batch {
    hr: Tensor4,
    lr: Tensor4,
    kernels: Tensor4,
}

fn sample_batch(
    dataset: &[Image],
    basis: &PcaBasis,
    scale: usize,
    tc: &TrainConfig,
    crop_rng: &mut impl Rng,
    kernel_rng: &mut impl Rng,
) -> Result<Batch> {
    let mut hrs = Vec::with_capacity(tc.batch);
    let mut lrs = Vec::with_capacity(tc.batch);
    let mut coeffs = Vec::with_capacity(tc.batch * basis.dim());
    for _ in 0..tc.batch {
        let img = &dataset[crop_rng.random_range(0..dataset.len())];
        let y0 = crop_rng.random_range(0..=img.height() - tc.crop);
        let x0 = crop_rng.random_range(0..=img.width() - tc.crop);
        let hr = img.crop(y0, x0, tc.crop, tc.crop)?;
        let k = sample_training_kernel(tc.setting, scale, kernel_rng)?;
        let deg = if tc.noise_sigma > 0.0 {
            DegradationConfig::noiseless(scale).with_noise(tc.noise_sigma, kernel_rng.random())
        } else {
            DegradationConfig::noiseless(scale)
        };
        lrs.push(degrade(&hr, &k, &deg)?);
        coeffs.extend(project(basis, &k)?.coeffs);
        hrs.push(hr);
    }
    Ok(Batch {
        hr: Tensor4::from_images(&hrs)?,
        lr: Tensor4::from_images(&lrs)?,
        kernels: Tensor4::new([tc.batch, basis.dim(), 1, 1], coeffs)?,
    })
}

/// Trains a freshly initialized model; deterministic given `tc.seed`.
///
/// Both outputs are supervised at the last iteration only:
/// `L1(sr_T, hr) + w·L1(r_T, project(k))`.
pub fn train_toy(dataset: &[Image], config: &DanConfig, basis: &PcaBasis, tc: &TrainConfig) -> Result<TrainOutcome> {
    train_with(dataset, DanModel::new(*config, tc.seed)?, basis, tc, |_, _| {})
}

/// As [`train_toy`] from an existing model, calling `on_step(step, loss)`
/// after every update.
pub fn train_with(
    dataset: &[Image],
    mut model: DanModel,
    basis: &PcaBasis,
    tc: &TrainConfig,
    mut on_step: impl FnMut(usize, f64),
) -> Result<TrainOutcome> {
    let config = *model.config();
    tc.validate(config.scale)?;
    model.check_basis(basis)?;
    if dataset.is_empty() {
        return Err(Error::InvalidArgument("training set is empty".into()));
    }
    for (i, img) in dataset.iter().enumerate() {
        if img.channels() != config.image_channels || img.height() < tc.crop || img.width() < tc.crop {
            return Err(Error::InvalidArgument(format!(
                "training image {i} is {:?}; need {} channels and at least {}x{}",
                img.dims(),
                config.image_channels,
                tc.crop,
                tc.crop
            )));
        }
    }

    let mut crop_rng = rng_for(tc.seed, streams::CROP);
    let mut kernel_rng = rng_for(tc.seed, streams::KERNEL);
    let mut adam = Adam::new(model.params());
    let mut losses = Vec::with_capacity(tc.steps);
    for step in 0..tc.steps {
        let batch = sample_batch(dataset, basis, config.scale, tc, &mut crop_rng, &mut kernel_rng)?;
        let mut tape = Tape::new();
        let p = model.params().bind(&mut tape);
        let lr = tape.constant(batch.lr);
        let hr = tape.constant(batch.hr);
        let last = *model.dan_forward(&mut tape, &p, lr, basis, config.iterations)?.last().expect("T >= 1");
        let mut loss = tape.l1(last.sr, hr)?;
        if tc.kernel_weight > 0.0 {
            let target = tape.constant(batch.kernels);
            let kl = tape.l1(last.kernel, target)?;
            let kl = tape.scale(kl, tc.kernel_weight);
            loss = tape.add(loss, kl)?;
        }
        let value = tape.value(loss).data()[0];
        if !value.is_finite() {
            return Err(Error::Iteration {
                iteration: step,
                source: Box::new(Error::Degenerate(format!("training loss became {value}"))),
            });
        }
        let grads = tape.backward(loss)?;
        let g: Vec<&[f64]> = p.iter().map(|v| grads.get(*v).expect("parameters need gradients")).collect();
        let rate = match tc.decay_every {
            0 => tc.learning_rate,
            n => tc.learning_rate * 0.5f64.powi((step / n) as i32),
        };
        adam.step(model.params_mut(), &g, rate);
        losses.push(value);
        on_step(step, value);
        if step % 100 == 0 || step + 1 == tc.steps {
            log::info!("step {step}: loss {value:.5}");
        }
    }
    Ok(TrainOutcome {
        solver: NeuralSolver::new(model, basis.clone())?,
        losses,
    })
}
