//! The learned estimator and restorer, and their unrolled alternation.

use blindsr_core::bench::{SrMethod, SrOutput};
use blindsr_core::engine::{run_alternation, ImageRestorer, KernelEstimator};
use blindsr_core::kernel_space::{dirac_coeffs, PcaBasis, ReducedKernel};
use blindsr_core::rng::{rng_for, streams};
use blindsr_core::{Error, Image, Result};

use crate::params::{crb_forward, Conv, CrbParams, ParamStore};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor4;

/// Width and depth of one of the two networks.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BranchConfig {
    pub n_crb: usize,
    pub basic_ch: usize,
    pub cond_ch: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DanConfig {
    pub scale: usize,
    /// Unrolled iterations T.
    pub iterations: usize,
    pub image_channels: usize,
    /// PCA dimension m.
    pub kernel_dim: usize,
    pub estimator: BranchConfig,
    pub restorer: BranchConfig,
    /// Channel-attention reduction factor.
    pub reduction: usize,
}

impl DanConfig {
    /// Desk-scale preset: 3 estimator CRBs and 4 restorer CRBs, 16 channels.
    pub fn toy(scale: usize, kernel_dim: usize) -> Self {
        Self {
            scale,
            iterations: 4,
            image_channels: 3,
            kernel_dim,
            estimator: BranchConfig {
                n_crb: 3,
                basic_ch: 16,
                cond_ch: 16,
            },
            restorer: BranchConfig {
                n_crb: 4,
                basic_ch: 16,
                cond_ch: kernel_dim,
            },
            reduction: 4,
        }
    }

    /// Full-size layout: 5 CRBs at 32/32 channels and 40 CRBs at 64/m.
    pub fn paper(scale: usize, kernel_dim: usize) -> Self {
        Self {
            scale,
            iterations: 4,
            image_channels: 3,
            kernel_dim,
            estimator: BranchConfig {
                n_crb: 5,
                basic_ch: 32,
                cond_ch: 32,
            },
            restorer: BranchConfig {
                n_crb: 40,
                basic_ch: 64,
                cond_ch: kernel_dim,
            },
            reduction: 16,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidArgument(msg));
        if self.iterations == 0 {
            return bad("at least one iteration is required".into());
        }
        if self.image_channels == 0 || self.kernel_dim == 0 {
            return bad("image channels and kernel dimension must be positive".into());
        }
        if upscale_stages(self.scale).is_none() {
            return bad(format!("scale {} is not a product of 2s and 3s", self.scale));
        }
        if self.restorer.cond_ch != self.kernel_dim {
            return bad(format!(
                "restorer conditional channels {} must equal the kernel dimension {}",
                self.restorer.cond_ch, self.kernel_dim
            ));
        }
        for (name, b) in [("estimator", self.estimator), ("restorer", self.restorer)] {
            if b.basic_ch == 0 || b.cond_ch == 0 {
                return bad(format!("{name} channel counts must be positive"));
            }
            if self.reduction == 0 || b.basic_ch % self.reduction != 0 {
                return bad(format!(
                    "{name} has {} channels, not divisible by reduction {}",
                    b.basic_ch, self.reduction
                ));
            }
        }
        Ok(())
    }
}

impl DanConfig {
    /// Number of scalars in a model with this layout, saturating on
    /// overflow. Meaningful only for a validated configuration.
    pub fn param_count(&self) -> usize {
        let conv = |c_in: usize, c_out: usize, k: usize| {
            c_out.saturating_mul(c_in).saturating_mul(k * k).saturating_add(c_out)
        };
        let red = self.reduction.max(1);
        let crb = |basic: usize, cond: usize| {
            conv(basic.saturating_add(cond), basic, 3)
                .saturating_add(conv(basic, basic, 3))
                .saturating_add(conv(basic, basic / red, 1))
                .saturating_add(conv(basic / red, basic, 1))
        };
        let (c, s, m) = (self.image_channels, self.scale, self.kernel_dim);
        let (e, r) = (self.estimator, self.restorer);
        let est = conv(c, e.basic_ch, 3)
            .saturating_add(conv(c, e.cond_ch, 2 * s + 1))
            .saturating_add(crb(e.basic_ch, e.cond_ch).saturating_mul(e.n_crb))
            .saturating_add(conv(e.basic_ch, m, 3));
        let ups = upscale_stages(s)
            .unwrap_or_default()
            .into_iter()
            .fold(0usize, |acc, f| acc.saturating_add(conv(r.basic_ch, r.basic_ch * f * f, 3)));
        let res = conv(c, r.basic_ch, 3)
            .saturating_add(crb(r.basic_ch, m).saturating_mul(r.n_crb))
            .saturating_add(ups)
            .saturating_add(conv(r.basic_ch, c, 3));
        est.saturating_add(res)
    }
}

/// Pixel-shuffle factors whose product is `scale`: ×3 stages first, then ×2.
pub fn upscale_stages(scale: usize) -> Option<Vec<usize>> {
    if scale == 0 {
        return None;
    }
    let mut rest = scale;
    let mut stages = Vec::new();
    for f in [3, 2] {
        while rest.is_multiple_of(f) {
            stages.push(f);
            rest /= f;
        }
    }
    (rest == 1).then_some(stages)
}

#[derive(Clone, Debug, PartialEq)]
struct EstimatorLayout {
    head: Conv,
    cond: Conv,
    crbs: Vec<CrbParams>,
    tail: Conv,
}

#[derive(Clone, Debug, PartialEq)]
struct RestorerLayout {
    head: Conv,
    crbs: Vec<CrbParams>,
    ups: Vec<(Conv, usize)>,
    tail: Conv,
}

/// Parameters and layout of both networks.
#[derive(Clone, Debug, PartialEq)]
pub struct DanModel {
    config: DanConfig,
    params: ParamStore,
    estimator: EstimatorLayout,
    restorer: RestorerLayout,
}

/// Outputs of one unrolled iteration.
#[derive(Clone, Copy, Debug)]
pub struct DanStep {
    pub sr: Var,
    pub kernel: Var,
}

impl DanModel {
    /// A freshly initialized model; the layout is fixed by `config` and the
    /// values by `seed`.
    pub fn new(config: DanConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = rng_for(seed, streams::INIT);
        let mut params = ParamStore::new();
        let (c, s, m) = (config.image_channels, config.scale, config.kernel_dim);

        let e = config.estimator;
        let estimator = EstimatorLayout {
            head: Conv::same3(&mut params, &mut rng, "est.head", c, e.basic_ch),
            cond: Conv::init(&mut params, &mut rng, "est.cond", c, e.cond_ch, 2 * s + 1, s, s),
            crbs: (0..e.n_crb)
                .map(|i| {
                    CrbParams::init(&mut params, &mut rng, &format!("est.crb{i}"), e.basic_ch, e.cond_ch, config.reduction)
                })
                .collect::<Result<_>>()?,
            tail: Conv::same3(&mut params, &mut rng, "est.tail", e.basic_ch, m),
        };

        let r = config.restorer;
        let head = Conv::same3(&mut params, &mut rng, "res.head", c, r.basic_ch);
        let crbs = (0..r.n_crb)
            .map(|i| CrbParams::init(&mut params, &mut rng, &format!("res.crb{i}"), r.basic_ch, m, config.reduction))
            .collect::<Result<_>>()?;
        let ups = upscale_stages(s)
            .expect("validated")
            .into_iter()
            .enumerate()
            .map(|(i, f)| {
                let conv = Conv::same3(&mut params, &mut rng, &format!("res.up{i}"), r.basic_ch, r.basic_ch * f * f);
                (conv, f)
            })
            .collect();
        let tail = Conv::same3(&mut params, &mut rng, "res.tail", r.basic_ch, c);
        let restorer = RestorerLayout { head, crbs, ups, tail };

        Ok(Self {
            config,
            params,
            estimator,
            restorer,
        })
    }

    pub fn config(&self) -> &DanConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    /// Predicts `(batch, m, 1, 1)` kernel coordinates from `lr` and `sr`.
    pub fn estimator_forward(&self, tape: &mut Tape, p: &[Var], lr: Var, sr: Var) -> Result<Var> {
        let s = self.config.scale;
        let [b, c, h, w] = tape.shape(lr);
        self.check_channels(c)?;
        if tape.shape(sr) != [b, c, h * s, w * s] {
            return Err(Error::ShapeMismatch(format!(
                "SR {:?} is not LR {:?} times {s}",
                tape.shape(sr),
                tape.shape(lr)
            )));
        }
        let l = &self.estimator;
        let cond = l.cond.forward(tape, p, sr)?;
        let mut f = l.head.forward(tape, p, lr)?;
        for crb in &l.crbs {
            f = crb_forward(tape, p, crb, f, cond)?;
        }
        let f = l.tail.forward(tape, p, f)?;
        Ok(tape.global_avg_pool(f))
    }

    /// Restores an `s`-times larger image from `lr` and kernel coordinates
    /// `(batch, m, 1, 1)`.
    pub fn restorer_forward(&self, tape: &mut Tape, p: &[Var], lr: Var, kernel: Var) -> Result<Var> {
        let [b, c, h, w] = tape.shape(lr);
        self.check_channels(c)?;
        if tape.shape(kernel) != [b, self.config.kernel_dim, 1, 1] {
            return Err(Error::ShapeMismatch(format!(
                "kernel {:?} where [{b}, {}, 1, 1] was expected",
                tape.shape(kernel),
                self.config.kernel_dim
            )));
        }
        let l = &self.restorer;
        let cond = tape.stretch(kernel, h, w)?;
        let mut f = l.head.forward(tape, p, lr)?;
        for crb in &l.crbs {
            f = crb_forward(tape, p, crb, f, cond)?;
        }
        for (conv, factor) in &l.ups {
            f = conv.forward(tape, p, f)?;
            f = tape.pixel_shuffle(f, *factor)?;
        }
        l.tail.forward(tape, p, f)
    }

    /// Unrolls `iterations` restorer-then-estimator rounds with shared
    /// parameters, starting from the Dirac kernel's coordinates.
    pub fn dan_forward(
        &self,
        tape: &mut Tape,
        p: &[Var],
        lr: Var,
        basis: &PcaBasis,
        iterations: usize,
    ) -> Result<Vec<DanStep>> {
        if iterations == 0 {
            return Err(Error::InvalidArgument("at least one iteration is required".into()));
        }
        self.check_basis(basis)?;
        let b = tape.shape(lr)[0];
        let dirac = dirac_coeffs(basis).coeffs;
        let m = dirac.len();
        let start = Tensor4::from_fn([b, m, 1, 1], |_, j, _, _| dirac[j]);
        let mut kernel = tape.constant(start);
        let mut steps = Vec::with_capacity(iterations);
        for _ in 0..iterations {
            let sr = self.restorer_forward(tape, p, lr, kernel)?;
            kernel = self.estimator_forward(tape, p, lr, sr)?;
            steps.push(DanStep { sr, kernel });
        }
        Ok(steps)
    }

    fn check_channels(&self, c: usize) -> Result<()> {
        if c != self.config.image_channels {
            return Err(Error::ShapeMismatch(format!(
                "model expects {} image channels, got {c}",
                self.config.image_channels
            )));
        }
        Ok(())
    }

    pub(crate) fn check_basis(&self, basis: &PcaBasis) -> Result<()> {
        if basis.dim() != self.config.kernel_dim {
            return Err(Error::ShapeMismatch(format!(
                "basis has {} components, model expects {}",
                basis.dim(),
                self.config.kernel_dim
            )));
        }
        Ok(())
    }
}

/// A trained model together with the kernel basis it was trained on; plugs
/// into the alternation engine as both estimator and restorer.
#[derive(Clone, Debug, PartialEq)]
pub struct NeuralSolver {
    pub model: DanModel,
    pub basis: PcaBasis,
}

impl NeuralSolver {
    pub fn new(model: DanModel, basis: PcaBasis) -> Result<Self> {
        model.check_basis(&basis)?;
        Ok(Self { model, basis })
    }

    fn check_scale(&self, scale: usize) -> Result<()> {
        if scale != self.model.config.scale {
            return Err(Error::InvalidArgument(format!(
                "model was built for scale {}, asked for {scale}",
                self.model.config.scale
            )));
        }
        Ok(())
    }

    /// Runs the unrolled network on one image, returning every iterate.
    pub fn unroll(&self, lr: &Image, iterations: usize) -> Result<Vec<(Image, ReducedKernel)>> {
        let mut tape = Tape::new();
        let p = self.model.params.bind_frozen(&mut tape);
        let x = tape.constant(Tensor4::from_image(lr));
        let steps = self.model.dan_forward(&mut tape, &p, x, &self.basis, iterations)?;
        steps
            .iter()
            .map(|s| {
                let k = ReducedKernel::new(tape.value(s.kernel).row(0).to_vec())?;
                Ok((tape.value(s.sr).image(0), k))
            })
            .collect()
    }
}

impl KernelEstimator for NeuralSolver {
    fn estimate(&self, lr: &Image, sr: &Image, basis: &PcaBasis, scale: usize) -> Result<ReducedKernel> {
        self.check_scale(scale)?;
        self.model.check_basis(basis)?;
        let mut tape = Tape::new();
        let p = self.model.params.bind_frozen(&mut tape);
        let lr = tape.constant(Tensor4::from_image(lr));
        let sr = tape.constant(Tensor4::from_image(sr));
        let k = self.model.estimator_forward(&mut tape, &p, lr, sr)?;
        ReducedKernel::new(tape.value(k).row(0).to_vec())
    }
}

impl ImageRestorer for NeuralSolver {
    fn restore(&self, lr: &Image, kernel: &ReducedKernel, basis: &PcaBasis, scale: usize) -> Result<Image> {
        self.check_scale(scale)?;
        self.model.check_basis(basis)?;
        let mut tape = Tape::new();
        let p = self.model.params.bind_frozen(&mut tape);
        let lr = tape.constant(Tensor4::from_image(lr));
        let k = tape.constant(Tensor4::new([1, kernel.len(), 1, 1], kernel.coeffs.clone())?);
        let sr = self.model.restorer_forward(&mut tape, &p, lr, k)?;
        Ok(tape.value(sr).image(0))
    }
}

impl SrMethod for NeuralSolver {
    fn name(&self) -> &str {
        "neural"
    }

    fn super_resolve(&self, lr: &Image, basis: &PcaBasis, scale: usize, iterations: usize) -> Result<SrOutput> {
        let trace = run_alternation(lr, basis, self, self, scale, iterations)?;
        let last = trace.steps.into_iter().last().expect("at least one iteration");
        Ok(SrOutput {
            image: last.image,
            kernel: Some(last.kernel),
        })
    }
}
