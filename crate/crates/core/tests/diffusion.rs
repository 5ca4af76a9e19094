use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use tog_core::diffusion::checkpoint::{checkpoint_bytes, checkpoint_from_bytes};
use tog_core::diffusion::gradcheck::{central_difference, relative_error};
use tog_core::diffusion::model::attend;
use tog_core::diffusion::sample::{ddim_with, initial_noise};
use tog_core::diffusion::*;
use tog_core::ModelError;

const CORPUS: &[&str] = &[
    "The person turns the head sharply left while the gaze shifts slightly up",
    "The person keeps the head straight, the gaze looks down and right",
    "The person's head moves up, gazing left",
];

fn vocab() -> Vocab {
    Vocab::build(CORPUS).unwrap()
}

fn batch(m: &Model, n: usize, seed: u64) -> Vec<Example> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| Example {
            tokens: m.vocab.encode(CORPUS[i % CORPUS.len()]).unwrap(),
            x0: std::array::from_fn(|_| rng.random_range(-1.0..1.0)),
            t: rng.random_range(1..=m.schedule.steps()),
            eps: std::array::from_fn(|_| rng.sample(StandardNormal)),
        })
        .collect()
}

/// Random (not zero) output layer so every tensor receives gradient.
fn check_model(c: Conditioning) -> Model {
    let cfg = ModelConfig { zero_init_out: false, ..ModelConfig::toy().with_conditioning(c) };
    Model::new(cfg, vocab(), 9).unwrap()
}

#[test]
fn gradients_match_finite_differences() {
    for c in [Conditioning::TamAdd, Conditioning::TamConcat, Conditioning::SelfOnly] {
        let m = check_model(c);
        let b = batch(&m, 3, 1);
        let r = grad_check(&m, &b, 200, 2, GradFault::None).unwrap();
        assert!(r.checked >= 200);
        assert_eq!(r.tensors_covered, r.tensors_total);
        assert!(r.max_rel_error < 1e-4, "{c:?}: {:?}", r.worst);
    }
}

#[test]
fn injected_faults_are_caught() {
    let m = check_model(Conditioning::TamAdd);
    let b = batch(&m, 3, 1);
    for f in [GradFault::SiluDerivative, GradFault::SoftmaxJacobian] {
        let r = grad_check(&m, &b, 200, 2, f).unwrap();
        assert!(r.max_rel_error > 1e-2, "{f:?}: {}", r.max_rel_error);
    }
}

#[test]
fn calibration_square() {
    for w in [-2.0, 0.3, 5.0] {
        let fd = central_difference(|x| x * x, w, 1e-5);
        assert!(relative_error(2.0 * w, fd) < 1e-8);
    }
}

#[test]
fn zero_output_initial_loss_is_chi_square_mean() {
    let m = Model::new(ModelConfig::toy(), vocab(), 0).unwrap();
    let b = batch(&m, 1000, 77);
    let loss = m.batch_loss(&b, None, GradFault::None).unwrap();
    // mean of 1000 χ²(4) draws: sd = sqrt(8/1000)
    assert!((loss - 4.0).abs() < 3.0 * (8.0f64 / 1000.0).sqrt(), "{loss}");
}

#[test]
fn overfits_fixed_batch() {
    let m = Model::new(ModelConfig::toy(), vocab(), 0).unwrap();
    let b = batch(&m, 8, 3);
    let mut tr = Trainer::new(m, 1e-3, 0);
    let mut last = f64::NAN;
    for _ in 0..100 {
        last = tr.step_fixed(&b).unwrap();
    }
    let after = tr.model.batch_loss(&b, None, GradFault::None).unwrap();
    assert!(after < 0.1, "last step {last}, after {after}");
}

#[test]
fn training_is_deterministic() {
    let run = || {
        let m = Model::new(ModelConfig::toy(), vocab(), 5).unwrap();
        let items: Vec<TrainItem> = batch(&m, 12, 8).into_iter().map(|e| TrainItem { tokens: e.tokens, x0: e.x0 }).collect();
        let cfg = TrainConfig { steps: 15, batch_size: 4, lr: 1e-3, seed: 4, eval_every: 0 };
        let (m, rep) = train(m, &items, &[], &cfg, None).unwrap();
        (rep.losses, m.params)
    };
    let (a, pa) = run();
    let (b, pb) = run();
    assert_eq!(a.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), b.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
    assert_eq!(pa, pb);
}

#[test]
fn ddim_zero_network_closed_form() {
    let m = Model::new(ModelConfig::toy(), vocab(), 0).unwrap();
    let c = m.condition(&m.vocab.encode("the head").unwrap()).unwrap();
    let x0 = ddim_sample_raw(&m, &c, 50, 12).unwrap();
    let xt = initial_noise(12);
    let ab = m.schedule.alpha_bar(1000);
    for i in 0..4 {
        assert!((x0[i] - xt[i] / ab.sqrt()).abs() < 1e-9 * (1.0 + x0[i].abs()), "{x0:?}");
    }
}

#[test]
fn ddim_determinism_and_full_stride() {
    let cfg = ModelConfig { zero_init_out: false, ..ModelConfig::toy() };
    let m = Model::new(cfg, vocab(), 1).unwrap();
    let c = m.condition(&m.vocab.encode("the gaze up").unwrap()).unwrap();
    assert_eq!(ddim_sample(&m, &c, 50, 3).unwrap(), ddim_sample(&m, &c, 50, 3).unwrap());
    let taus: Vec<usize> = (1..=1000).collect();
    let full = ddim_with(|t| m.schedule.alpha_bar(t), &taus, 3, |x, t| m.predict_eps(x, t, &c));
    let strided = ddim_sample_raw(&m, &c, 1000, 3).unwrap();
    for i in 0..4 {
        assert!((full[i] - strided[i]).abs() < 1e-9);
    }
    assert!(matches!(ddim_sample(&m, &c, 1001, 3), Err(ModelError::TooManySteps { .. })));
}

#[test]
fn checkpoint_round_trip_and_errors() {
    let m = Model::new(ModelConfig::toy(), vocab(), 2).unwrap();
    let items: Vec<TrainItem> = batch(&m, 8, 1).into_iter().map(|e| TrainItem { tokens: e.tokens, x0: e.x0 }).collect();
    let cfg = TrainConfig { steps: 3, batch_size: 4, lr: 1e-3, seed: 0, eval_every: 0 };
    let (m, _) = train(m, &items, &[], &cfg, None).unwrap();
    let bytes = checkpoint_bytes(&m);
    let back = checkpoint_from_bytes(&bytes).unwrap();
    assert_eq!(back.params.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), m.params.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
    assert_eq!(checkpoint_bytes(&back), bytes);

    let truncated = &bytes[..bytes.len() - 10];
    match checkpoint_from_bytes(truncated) {
        Err(ModelError::Tensor { name, detail }) => {
            assert_eq!(name, "mlp.2.b");
            assert!(detail.contains("truncated"));
        }
        other => panic!("{other:?}"),
    }
    let text = String::from_utf8_lossy(&bytes).into_owned();
    let nl = 8 + text[8..].find('\n').unwrap();
    let manifest = &text[8..nl];
    let edited = manifest.replacen("\"shape\":[64,64]", "\"shape\":[64,32]", 1);
    assert_ne!(edited, manifest);
    let mut bad = b"TOGCKPT\n".to_vec();
    bad.extend(edited.as_bytes());
    bad.extend(&bytes[nl..]);
    match checkpoint_from_bytes(&bad) {
        Err(ModelError::Tensor { detail, .. }) => assert!(detail.contains("shape mismatch")),
        other => panic!("{other:?}"),
    }
}

#[test]
fn positions_off_makes_condition_order_free() {
    let cfg = ModelConfig { positional: false, ..ModelConfig::toy() };
    let m = Model::new(cfg, vocab(), 6).unwrap();
    let toks = m.vocab.encode(CORPUS[0]).unwrap();
    let base = m.condition(&toks).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for _ in 0..5 {
        let mut p = toks.clone();
        p.shuffle(&mut rng);
        let c = m.condition(&p).unwrap();
        for (a, b) in base.iter().zip(&c) {
            assert!((a - b).abs() < 1e-9);
        }
    }
}

#[test]
fn concat_blocks_sum_to_add() {
    let v = vocab();
    let add = Model::new(ModelConfig::toy(), v.clone(), 6).unwrap();
    let mut cat = Model::zeroed(ModelConfig::toy().with_conditioning(Conditioning::TamConcat), v).unwrap();
    // share every tensor the two layouts have in common
    for t in &cat.layout.tensors.clone() {
        if let Some(src) = add.layout.tensors.iter().find(|s| s.name == t.name && s.shape == t.shape) {
            cat.params[t.offset..t.offset + t.len()].copy_from_slice(&add.params[src.offset..src.offset + src.len()]);
        }
    }
    let toks = add.vocab.encode(CORPUS[1]).unwrap();
    let a = add.condition(&toks).unwrap();
    let c = cat.condition(&toks).unwrap();
    let d = 64;
    for j in 0..d {
        assert!((c[j] + c[d + j] + c[2 * d + j] - a[j]).abs() < 1e-12);
    }
}

#[test]
fn identical_words_attend_uniformly() {
    let cfg = ModelConfig { positional: false, ..ModelConfig::toy() };
    let m = Model::new(cfg, vocab(), 6).unwrap();
    let tok = m.vocab.get("left").unwrap();
    let toks = vec![tok; 6];
    for a in m.first_layer_attention(&toks).unwrap() {
        assert!(a.iter().all(|w| (w - 1.0 / 6.0).abs() < 1e-12));
    }
    let shared = vec![0.25; 8];
    let keys: Vec<f64> = shared.iter().cycle().take(8 * 3).copied().collect();
    let (_, o) = attend(&[1.0; 8], 1, &keys, 3, 8, 4);
    assert_eq!(o, shared);
}
