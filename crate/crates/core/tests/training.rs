use fgv_core::checkpoint::{decode, encode, TrainMeta};
use fgv_core::eval::evaluate_classifier;
use fgv_core::image::to_tensor;
use fgv_core::model::{build_model, Depth, HeadKind, Model, ModelConfig};
use fgv_core::preprocess::{preprocess_eval_center, PreprocessConfig};
use fgv_core::synth::{generate_dataset, subset_samples, Sample, SynthConfig};
use fgv_core::train::{train, train_classifier, Control, Sgd, TrainConfig};
use fgv_core::views::View;
use fgv_core::Tensor;

const INPUT: usize = 64;
const CANVAS: usize = 73;

fn data(classes: usize, per: usize, seed: u64) -> Vec<Sample> {
    generate_dataset(&SynthConfig::new(classes, per, CANVAS, seed)).unwrap()
}

fn central() -> View {
    View::CentralCrop(PreprocessConfig::for_input(INPUT))
}

fn toy(classes: usize) -> ModelConfig {
    ModelConfig::new(Depth::R18, classes).with_width(0.125).with_input(INPUT)
}

fn batch(samples: &[Sample]) -> Tensor<f32> {
    let crops: Vec<_> = samples
        .iter()
        .map(|s| preprocess_eval_center(&s.image, &PreprocessConfig::for_input(INPUT)).unwrap().0)
        .collect();
    to_tensor(&crops.iter().collect::<Vec<_>>()).unwrap()
}

fn quiet() -> impl FnMut(&fgv_core::train::EpochRecord, &Model<f32>) -> Control {
    |_, _| Control::Continue
}

#[test]
fn full_batch_loss_falls_every_epoch() {
    let samples = data(4, 5, 1);
    let mut model = build_model::<f32>(&toy(4)).unwrap();
    let cfg = TrainConfig {
        batch_size: samples.len(),
        epochs: 8,
        view: central(),
        ..TrainConfig::default()
    };
    let report = train_classifier(&mut model, &samples, &cfg, TrainMeta::default(), &mut quiet()).unwrap();
    let losses: Vec<f64> = report.history.iter().map(|r| r.loss).collect();
    assert!(losses.windows(2).all(|w| w[1] < w[0]), "{losses:?}");
}

#[test]
fn frozen_backbone_moves_only_the_head() {
    let samples = data(3, 4, 2);
    let mut model = build_model::<f32>(&toy(3)).unwrap();
    model.set_backbone_frozen(true);
    let before = model.clone();
    let cfg = TrainConfig {
        batch_size: samples.len(),
        epochs: 1,
        view: central(),
        ..TrainConfig::default()
    };
    train_classifier(&mut model, &samples, &cfg, TrainMeta::default(), &mut quiet()).unwrap();
    let start = model.head_start();
    for (i, (a, b)) in before.params().entries().iter().zip(model.params().entries()).enumerate() {
        if i < start {
            assert_eq!(a.tensor.data(), b.tensor.data(), "{}", a.name);
        }
    }
    let head_moved = (start..model.params().len()).any(|i| before.params().tensor(i) != model.params().tensor(i));
    assert!(head_moved);
}

#[test]
fn sgd_step_matches_hand_update() {
    // v = momentum * v + g + wd * w; w -= lr * v, on a bare linear layer.
    let mut model = build_model::<f32>(&toy(2)).unwrap();
    let x = batch(&data(2, 1, 3));
    let w0 = model.params().get("head.fc.weight").unwrap().clone();
    let (lr, mom, wd) = (0.1f32, 0.9f32, 0.01f32);
    let mut sgd = Sgd::new();
    let mut grads_seen = Vec::new();
    for _ in 0..2 {
        let (grads, leaves) = {
            let mut tape = fgv_core::Tape::new();
            let xv = tape.leaf(&x);
            let out = model.forward(&mut tape, xv, fgv_core::nn::BnMode::Infer).unwrap();
            let loss = tape.softmax_cross_entropy(out.outputs[0], &[0, 1]).unwrap();
            let g = tape.backward(loss).unwrap();
            let i = model.params().index_of("head.fc.weight").unwrap();
            grads_seen.push(g.get(out.leaves[i]).unwrap().to_vec());
            (g, out.leaves.clone())
        };
        sgd.step(&mut model, &grads, &leaves, lr as f64, mom as f64, wd as f64);
    }
    let w2 = model.params().get("head.fc.weight").unwrap().data().to_vec();
    let mut w = w0.data().to_vec();
    let mut v = vec![0f32; w.len()];
    for g in &grads_seen {
        for j in 0..w.len() {
            v[j] = mom * v[j] + g[j] + wd * w[j];
            w[j] -= lr * v[j];
        }
    }
    for (a, b) in w.iter().zip(&w2) {
        assert!((a - b).abs() <= 1e-6 * a.abs().max(1.0), "{a} vs {b}");
    }
}

#[test]
fn checkpoint_roundtrip_forward_is_bit_identical() {
    let cfg = toy(5).with_head(HeadKind::Swp).fit_swp().unwrap();
    let mut model = build_model::<f32>(&cfg).unwrap();
    let samples = data(5, 2, 4);
    let tc = TrainConfig { batch_size: 10, epochs: 1, view: central(), ..TrainConfig::default() };
    train(&mut model, &samples, &tc, TrainMeta::default(), &mut quiet()).unwrap();
    let meta = TrainMeta { epochs: 1, iterations: 1 };
    let bytes = encode(&model, &meta).unwrap();
    let back = decode(&bytes).unwrap();
    assert_eq!(back.meta, meta);
    assert_eq!(encode(&back.model, &back.meta).unwrap(), bytes);
    let x = batch(&samples);
    let a = model.predict(x.clone(), true).unwrap();
    let b = back.model.predict(x, true).unwrap();
    let bits = |t: &[Tensor<f32>]| t.iter().flat_map(|t| t.data().iter().map(|v| v.to_bits())).collect::<Vec<_>>();
    assert_eq!(bits(&a), bits(&b));
}

#[test]
fn same_seed_same_history_and_weights() {
    let samples = data(3, 4, 5);
    let cfg = TrainConfig {
        batch_size: 4,
        epochs: 2,
        view: View::Augment(PreprocessConfig { seed: 9, ..PreprocessConfig::for_input(INPUT) }),
        ..TrainConfig::default()
    };
    let run = || {
        let mut m = build_model::<f32>(&toy(3)).unwrap();
        let r = train_classifier(&mut m, &samples, &cfg, TrainMeta::default(), &mut quiet()).unwrap();
        (m, r.history)
    };
    assert_eq!(run(), run());
}

#[test]
fn transfer_beats_scratch_on_small_budget() {
    // Pretrain on classes 0..6, then learn classes 6..9 from 6 images each.
    let source = data(6, 30, 6);
    let target_all = data(9, 6, 7);
    let held_all = data(9, 20, 8);
    let ids = [6, 7, 8];
    let (target, _) = subset_samples(&target_all, &ids).unwrap();
    let (held, _) = subset_samples(&held_all, &ids).unwrap();
    let aug = View::Augment(PreprocessConfig::for_input(INPUT));
    let pre_cfg = TrainConfig { batch_size: 16, epochs: 12, view: aug, ..TrainConfig::default() };
    let mut pre = build_model::<f32>(&toy(6)).unwrap();
    train_classifier(&mut pre, &source, &pre_cfg, TrainMeta::default(), &mut quiet()).unwrap();

    let tune = TrainConfig { batch_size: 6, epochs: 4, view: aug, ..TrainConfig::default() };
    let mut transferred = pre.transfer_head(3, false).unwrap();
    train_classifier(&mut transferred, &target, &tune, TrainMeta::default(), &mut quiet()).unwrap();
    let mut scratch = build_model::<f32>(&toy(3)).unwrap();
    train_classifier(&mut scratch, &target, &tune, TrainMeta::default(), &mut quiet()).unwrap();

    let t = evaluate_classifier(&transferred, &held, &central(), 32).unwrap().top1.unwrap();
    let s = evaluate_classifier(&scratch, &held, &central(), 32).unwrap().top1.unwrap();
    println!("transfer {t:.1}% scratch {s:.1}%");
    assert!(t > s, "transfer {t} scratch {s}");
}
