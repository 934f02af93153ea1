use blindsr_core::degradation::gaussian_isotropic;
use blindsr_core::engine::{run_alternation, ImageRestorer, KernelEstimator};
use blindsr_core::kernel_space::{dirac_coeffs, fit_pca, PcaBasis, ReducedKernel};
use blindsr_core::rng::rng_for;
use blindsr_core::Image;
use blindsr_neural::model::{upscale_stages, BranchConfig, DanConfig, DanModel, NeuralSolver};
use blindsr_neural::params::{crb_forward, ChannelAttention, Conv, CrbParams, ParamStore};
use blindsr_neural::tape::{shuffle, unshuffle, Tape};
use blindsr_neural::Tensor4;
use rand::Rng;

fn rand_tensor(shape: [usize; 4], seed: u64) -> Tensor4 {
    let mut rng = rng_for(seed, 0);
    Tensor4::from_fn(shape, |_, _, _, _| rng.random_range(-1.0..1.0))
}

fn norm_diff(a: &Tensor4, b: &Tensor4) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

fn basis(m: usize) -> PcaBasis {
    let ks: Vec<_> = (0..30).map(|i| gaussian_isotropic(5, 0.3 + 0.08 * i as f64).unwrap()).collect();
    fit_pca(&ks, m).unwrap()
}

fn small_config(scale: usize) -> DanConfig {
    DanConfig {
        scale,
        iterations: 3,
        image_channels: 3,
        kernel_dim: 4,
        estimator: BranchConfig { n_crb: 2, basic_ch: 8, cond_ch: 8 },
        restorer: BranchConfig { n_crb: 2, basic_ch: 8, cond_ch: 4 },
        reduction: 4,
    }
}

#[test]
fn pixel_shuffle_index_map() {
    let mut tape = Tape::new();
    let x = tape.constant(Tensor4::new([1, 4, 1, 1], vec![0.0, 1.0, 2.0, 3.0]).unwrap());
    let y = tape.pixel_shuffle(x, 2).unwrap();
    assert_eq!(tape.value(y).shape(), [1, 1, 2, 2]);
    assert_eq!(tape.value(y).data(), &[0.0, 1.0, 2.0, 3.0]);
    let z = tape.pixel_shuffle(x, 1).unwrap();
    assert_eq!(tape.value(z), tape.value(x));
    assert!(tape.pixel_shuffle(x, 3).is_err());

    let t = rand_tensor([2, 18, 3, 4], 1);
    let s = shuffle(&t, 3);
    assert_eq!(s.shape(), [2, 2, 9, 12]);
    assert_eq!(s.at(1, 1, 4, 7), t.at(1, 9 + 3 + 1, 1, 2));
    assert_eq!(unshuffle(&s, 3), t);
}

#[test]
fn conv_shape_and_identity() {
    let mut tape = Tape::new();
    let x = rand_tensor([2, 3, 8, 6], 2);
    let xv = tape.constant(x.clone());
    let eye = Tensor4::from_fn([3, 3, 1, 1], |o, i, _, _| if o == i { 1.0 } else { 0.0 });
    let w = tape.constant(eye);
    let b = tape.constant(Tensor4::zeros([1, 3, 1, 1]));
    let y = tape.conv2d(xv, w, b, 1, 0).unwrap();
    assert_eq!(tape.value(y), &x);

    for s in [2, 3, 4] {
        let x = tape.constant(Tensor4::zeros([1, 3, 12, 24]));
        let w = tape.constant(Tensor4::zeros([5, 3, 2 * s + 1, 2 * s + 1]));
        let b = tape.constant(Tensor4::zeros([1, 5, 1, 1]));
        let y = tape.conv2d(x, w, b, s, s).unwrap();
        assert_eq!(tape.shape(y), [1, 5, 12 / s, 24 / s]);
    }
    let bad = tape.constant(Tensor4::zeros([5, 2, 3, 3]));
    let b = tape.constant(Tensor4::zeros([1, 5, 1, 1]));
    assert!(tape.conv2d(xv, bad, b, 1, 1).is_err());
}

#[test]
fn stretch_is_spatially_constant() {
    let mut tape = Tape::new();
    let zero = tape.constant(Tensor4::zeros([2, 4, 1, 1]));
    let z = tape.stretch(zero, 3, 5).unwrap();
    assert!(tape.value(z).data().iter().all(|v| *v == 0.0));
    let r = tape.constant(rand_tensor([2, 4, 1, 1], 3));
    let s = tape.stretch(r, 3, 5).unwrap();
    for (plane, coeff) in tape.value(s).data().chunks(15).zip(tape.value(r).data()) {
        assert!(plane.iter().all(|v| v == coeff));
    }
    assert!(tape.stretch(s, 3, 5).is_err());
}

#[test]
fn channel_attention_cases() {
    let mut rng = rng_for(4, 0);
    let mut store = ParamStore::new();
    let ca = ChannelAttention::init(&mut store, &mut rng, "ca", 8, 4).unwrap();
    // Saturate the gate: zero up-projection weights, huge bias.
    store.get_mut(ca.up.w).value.data_mut().iter_mut().for_each(|v| *v = 0.0);
    store.get_mut(ca.up.b).value.data_mut().iter_mut().for_each(|v| *v = 100.0);
    let mut tape = Tape::new();
    let p = store.bind_frozen(&mut tape);
    let x = rand_tensor([2, 8, 3, 3], 5);
    let xv = tape.constant(x.clone());
    let y = ca.forward(&mut tape, &p, xv).unwrap();
    assert_eq!(tape.value(y), &x);
    let zero = tape.constant(Tensor4::zeros([2, 8, 3, 3]));
    let y = ca.forward(&mut tape, &p, zero).unwrap();
    assert!(tape.value(y).data().iter().all(|v| *v == 0.0));
    assert!(ChannelAttention::init(&mut store, &mut rng, "bad", 6, 4).is_err());
}

#[test]
fn crb_residual_identity_and_sensitivity() {
    let mut rng = rng_for(6, 0);
    let mut store = ParamStore::new();
    let crb = CrbParams::init(&mut store, &mut rng, "crb", 8, 4, 4).unwrap();
    let basic = rand_tensor([2, 8, 5, 5], 7);
    let cond = rand_tensor([2, 4, 5, 5], 8);
    let run = |store: &ParamStore, cond: &Tensor4| {
        let mut tape = Tape::new();
        let p = store.bind_frozen(&mut tape);
        let b = tape.constant(basic.clone());
        let c = tape.constant(cond.clone());
        let y = crb_forward(&mut tape, &p, &crb, b, c).unwrap();
        tape.value(y).clone()
    };
    let out = run(&store, &cond);
    let out2 = run(&store, &rand_tensor([2, 4, 5, 5], 9));
    assert!(norm_diff(&out, &out2) > 1e-8);

    let mut zeroed = store.clone();
    {
        let conv = crb.conv2;
        zeroed.get_mut(conv.w).value.data_mut().iter_mut().for_each(|v| *v = 0.0);
        zeroed.get_mut(conv.b).value.data_mut().iter_mut().for_each(|v| *v = 0.0);
    }
    assert_eq!(run(&zeroed, &cond), basic);

    let mut tape = Tape::new();
    let p = store.bind_frozen(&mut tape);
    let b = tape.constant(basic.clone());
    let c = tape.constant(Tensor4::zeros([2, 4, 4, 5]));
    assert!(crb_forward(&mut tape, &p, &crb, b, c).is_err());
}

#[test]
fn conv_init_is_bounded_and_seeded() {
    let mut store = ParamStore::new();
    let conv = Conv::same3(&mut store, &mut rng_for(10, 0), "c", 4, 6);
    let bound = 1.0 / 36f64.sqrt();
    assert!(store.get(conv.w).value.data().iter().all(|v| v.abs() <= bound));
    assert!(store.get(conv.b).value.data().iter().all(|v| *v == 0.0));
    assert_eq!(DanModel::new(small_config(2), 3).unwrap(), DanModel::new(small_config(2), 3).unwrap());
    assert_ne!(DanModel::new(small_config(2), 3).unwrap(), DanModel::new(small_config(2), 4).unwrap());
}

#[test]
fn config_validation_and_presets() {
    assert_eq!(upscale_stages(1), Some(vec![]));
    assert_eq!(upscale_stages(2), Some(vec![2]));
    assert_eq!(upscale_stages(3), Some(vec![3]));
    assert_eq!(upscale_stages(4), Some(vec![2, 2]));
    assert_eq!(upscale_stages(5), None);

    let mut cfg = small_config(2);
    cfg.restorer.cond_ch = 5;
    assert!(cfg.validate().is_err());
    let mut cfg = small_config(2);
    cfg.reduction = 3;
    assert!(cfg.validate().is_err());
    assert!(small_config(5).validate().is_err());

    let toy = DanConfig::toy(4, 10);
    assert_eq!((toy.estimator.n_crb, toy.estimator.basic_ch, toy.restorer.n_crb, toy.restorer.basic_ch), (3, 16, 4, 16));
    let paper = DanConfig::paper(4, 10);
    assert_eq!((paper.estimator.n_crb, paper.estimator.basic_ch, paper.estimator.cond_ch), (5, 32, 32));
    assert_eq!((paper.restorer.n_crb, paper.restorer.basic_ch, paper.restorer.cond_ch), (40, 64, 10));
    paper.validate().unwrap();
    let model = DanModel::new(paper, 0).unwrap();
    let crbs = model.params().iter().filter(|p| p.name.starts_with("res.crb") && p.name.ends_with("conv1.w")).count();
    assert_eq!(crbs, 40);
}

#[test]
fn estimator_contracts() {
    let model = DanModel::new(small_config(2), 11).unwrap();
    for (h, w) in [(4, 4), (6, 9), (10, 7)] {
        let mut tape = Tape::new();
        let p = model.params().bind_frozen(&mut tape);
        let one_lr = rand_tensor([1, 3, h, w], 12);
        let one_sr = rand_tensor([1, 3, 2 * h, 2 * w], 13);
        let twice = |t: &Tensor4| {
            let mut d = t.data().to_vec();
            d.extend_from_slice(t.data());
            let [_, c, hh, ww] = t.shape();
            Tensor4::new([2, c, hh, ww], d).unwrap()
        };
        let lr = tape.constant(twice(&one_lr));
        let sr = tape.constant(twice(&one_sr));
        let k = model.estimator_forward(&mut tape, &p, lr, sr).unwrap();
        assert_eq!(tape.shape(k), [2, 4, 1, 1]);
        assert_eq!(tape.value(k).row(0), tape.value(k).row(1));

        let sr2 = tape.constant(twice(&rand_tensor([1, 3, 2 * h, 2 * w], 14)));
        let k2 = model.estimator_forward(&mut tape, &p, lr, sr2).unwrap();
        assert!(norm_diff(tape.value(k), tape.value(k2)) > 1e-8);

        let wrong = tape.constant(Tensor4::zeros([2, 3, 2 * h + 1, 2 * w]));
        assert!(model.estimator_forward(&mut tape, &p, lr, wrong).is_err());
    }
}

#[test]
fn restorer_contracts() {
    for s in 1..=4 {
        let model = DanModel::new(small_config(s), 15).unwrap();
        let mut tape = Tape::new();
        let p = model.params().bind_frozen(&mut tape);
        let lr = tape.constant(rand_tensor([2, 3, 5, 7], 16));
        let r = tape.constant(rand_tensor([2, 4, 1, 1], 17));
        let sr = model.restorer_forward(&mut tape, &p, lr, r).unwrap();
        assert_eq!(tape.shape(sr), [2, 3, 5 * s, 7 * s]);
        let r2 = tape.constant(rand_tensor([2, 4, 1, 1], 18));
        let sr2 = model.restorer_forward(&mut tape, &p, lr, r2).unwrap();
        assert!(norm_diff(tape.value(sr), tape.value(sr2)) > 1e-8, "scale {s}");
        let bad = tape.constant(Tensor4::zeros([2, 5, 1, 1]));
        assert!(model.restorer_forward(&mut tape, &p, lr, bad).is_err());
    }
}

#[test]
fn single_iteration_is_restorer_then_estimator() {
    let model = DanModel::new(small_config(2), 19).unwrap();
    let basis = basis(4);
    let lr_t = rand_tensor([1, 3, 6, 6], 20);
    let mut tape = Tape::new();
    let p = model.params().bind_frozen(&mut tape);
    let lr = tape.constant(lr_t.clone());
    let steps = model.dan_forward(&mut tape, &p, lr, &basis, 1).unwrap();
    assert_eq!(steps.len(), 1);

    let mut manual = Tape::new();
    let q = model.params().bind_frozen(&mut manual);
    let lr2 = manual.constant(lr_t);
    let r0 = manual.constant(Tensor4::new([1, 4, 1, 1], dirac_coeffs(&basis).coeffs).unwrap());
    let sr = model.restorer_forward(&mut manual, &q, lr2, r0).unwrap();
    let k = model.estimator_forward(&mut manual, &q, lr2, sr).unwrap();
    assert_eq!(tape.value(steps[0].sr), manual.value(sr));
    assert_eq!(tape.value(steps[0].kernel), manual.value(k));
}

#[test]
fn unrolling_has_the_prefix_property() {
    let model = DanModel::new(small_config(2), 21).unwrap();
    let basis = basis(4);
    let solver = NeuralSolver::new(model, basis).unwrap();
    let lr = Image::from_fn(3, 6, 6, |c, y, x| ((c + 2 * y + 3 * x) % 7) as f64 / 7.0);
    let four = solver.unroll(&lr, 4).unwrap();
    let six = solver.unroll(&lr, 6).unwrap();
    assert_eq!(four.len(), 4);
    assert_eq!(&six[..4], &four[..]);
}

#[test]
fn engine_adapter_matches_unrolled_network() {
    let cfg = DanConfig { kernel_dim: 4, ..small_config(2) };
    let model = DanModel::new(cfg, 22).unwrap();
    let basis = basis(4);
    let solver = NeuralSolver::new(model, basis.clone()).unwrap();
    let lr = Image::from_fn(3, 8, 8, |c, y, x| ((c * 5 + y * 3 + x) % 11) as f64 / 11.0);
    let trace = run_alternation(&lr, &basis, &solver, &solver, 2, 3).unwrap();
    let unrolled = solver.unroll(&lr, 3).unwrap();
    for (step, (img, k)) in trace.steps.iter().zip(&unrolled) {
        assert_eq!(&step.image, img);
        assert_eq!(&step.kernel, k);
    }
    assert!(solver.restore(&lr, &ReducedKernel::zeros(4), &basis, 3).is_err());
    assert!(solver.estimate(&lr, &lr, &basis, 2).is_err());
    assert!(solver.restore(&lr, &ReducedKernel::zeros(4), &fit_pca(&[gaussian_isotropic(5, 1.0).unwrap()], 1).unwrap(), 2).is_err());
}
