use activeindex::activation::*;
use activeindex::extractor::ExtractorWeights;
use activeindex::imagelab::{generate_image, Image, TransformKind, TransformSpec};
use activeindex::index::{IndexSpec, IvfPqParams};
use activeindex::Error;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Direct transcription of the JND formulas with explicit border clamping.
fn reference_jnd(img: &Image) -> Vec<f64> {
    let (h, w) = (img.height() as i64, img.width() as i64);
    let luma = |y: i64, x: i64| -> f64 {
        let y = y.max(0).min(h - 1) as usize;
        let x = x.max(0).min(w - 1) as usize;
        0.299 * img.get(y, x, 0) as f64 + 0.587 * img.get(y, x, 1) as f64 + 0.114 * img.get(y, x, 2) as f64
    };
    let mut out = Vec::new();
    for y in 0..h {
        for x in 0..w {
            let kx = [[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]];
            let mut gx = 0.0;
            let mut gy = 0.0;
            for i in 0..3 {
                for j in 0..3 {
                    let v = luma(y + i as i64 - 1, x + j as i64 - 1);
                    gx += kx[i][j] * v;
                    gy += kx[j][i] * v;
                }
            }
            let cl = (gx * gx + gy * gy).sqrt();
            let mc = 0.115 * 16.0 * cl.powf(2.4) / (cl * cl + 26.0 * 26.0);
            let mut b = 0.0;
            for i in -2..=2 {
                for j in -2..=2 {
                    b += luma(y + i, x + j);
                }
            }
            b /= 25.0;
            let la = if b < 127.0 { 17.0 * (1.0 - (b / 127.0).sqrt()) } else { 3.0 * (b - 127.0) / 128.0 + 3.0 };
            let hv = la + mc - 0.3 * la.min(mc);
            for m in [0.299, 0.587, 0.114] {
                out.push(0.072 / m * hv);
            }
        }
    }
    out
}

#[test]
fn jnd_matches_scalar_reference_on_textured_card() {
    let card = generate_image(3, 5, 48).unwrap();
    let map = jnd_map(&card);
    let reference = reference_jnd(&card);
    for (a, b) in map.data.iter().zip(&reference) {
        assert!((a - b).abs() < 1e-4, "{a} vs {b}");
    }
    assert!(map.data.iter().all(|v| *v > 0.0 && v.is_finite()));
}

#[test]
fn jnd_uniform_closed_forms() {
    let gray = jnd_map(&Image::filled(16, 16, [127.0; 3]).unwrap());
    for (c, want) in [0.7224, 0.3680, 1.8947].iter().enumerate() {
        assert!((gray.get(5, 5, c) - want).abs() < 1e-3);
    }
    let black = jnd_luma(&Image::filled(16, 16, [0.0; 3]).unwrap());
    assert!(black.iter().all(|h| (h - 17.0).abs() < 1e-6));
}

fn random_target(kind: LossKind, dim: usize, rng: &mut ChaCha8Rng) -> LossTarget {
    match kind {
        LossKind::Lsh => {
            let l = 16;
            let dirs: Vec<f64> = (0..l * dim).map(|_| rng.random_range(-1.0..1.0)).collect();
            let offsets: Vec<f64> = (0..l).map(|_| rng.random_range(-0.1..0.1)).collect();
            let reference: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
            LossTarget::hash_from_reference(dirs, offsets, &reference).unwrap()
        }
        _ => LossTarget::Point {
            kind,
            target: (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect(),
        },
    }
}

#[test]
fn loss_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for kind in [LossKind::Ivfpq, LossKind::Ivf, LossKind::Pq, LossKind::Opq, LossKind::Lsh] {
        let target = random_target(kind, 64, &mut rng);
        let x: Vec<f64> = (0..64).map(|_| rng.random_range(-1.0..1.0)).collect();
        let (_, grad) = target.value_and_gradient(&x).unwrap();
        for i in 0..64 {
            let h = 1e-5;
            let mut p = x.clone();
            let mut m = x.clone();
            p[i] += h;
            m[i] -= h;
            let fd = (target.value_and_gradient(&p).unwrap().0 - target.value_and_gradient(&m).unwrap().0) / (2.0 * h);
            let rel = (fd - grad[i]).abs() / fd.abs().max(grad[i].abs()).max(1e-3);
            assert!(rel < 1e-6, "{kind:?} coordinate {i}: {fd} vs {}", grad[i]);
        }
    }
}

struct Setup {
    weights: ExtractorWeights,
    images: Vec<Image>,
    index: activeindex::index::AnyIndex,
}

fn setup(spec: IndexSpec) -> Setup {
    let weights = ExtractorWeights::init(1);
    let train: Vec<f32> = (0..600)
        .flat_map(|i| weights.extract(&generate_image(50, i, 32).unwrap()).unwrap().into_inner())
        .collect();
    let mut index = spec.train(&train, 64, 2).unwrap();
    let images: Vec<Image> = (0..12).map(|i| generate_image(51, i, 32).unwrap()).collect();
    for (id, img) in images.iter().enumerate() {
        index.add(id as u32, &weights.extract(img).unwrap()).unwrap();
    }
    Setup { weights, images, index }
}

fn small_ivfpq() -> IndexSpec {
    IndexSpec::IvfPq(IvfPqParams {
        k: 8,
        m: 8,
        ks: 32,
        ..IvfPqParams::default()
    })
}

#[test]
fn zero_strength_or_zero_steps_return_the_original() {
    let s = setup(small_ivfpq());
    for cfg in [
        ActivationConfig { alpha: 0.0, ..Default::default() },
        ActivationConfig { steps: 0, ..Default::default() },
    ] {
        let out = activate(&s.images[0], &s.weights, &s.index, 0, &cfg).unwrap();
        assert_eq!(out.activated, s.images[0]);
        assert_eq!(out.feature_after, out.feature_before);
        assert_eq!(out.loss_trace.len(), cfg.steps);
    }
}

#[test]
fn perturbation_stays_inside_the_jnd_envelope() {
    let s = setup(small_ivfpq());
    let cfg = ActivationConfig { alpha: 3.0, lr: 5.0, steps: 6, ..Default::default() };
    for (id, img) in s.images.iter().enumerate().take(4) {
        let out = activate(img, &s.weights, &s.index, id as u32, &cfg).unwrap();
        let map = jnd_map(img);
        let max = map.max();
        for ((a, o), h) in out.activated.data().iter().zip(img.data()).zip(&map.data) {
            let d = (*a as f64 - *o as f64).abs();
            assert!(d <= 3.0 * h, "{d} > {}", 3.0 * h);
            assert!(d <= 3.0 * max);
        }
        assert_eq!(out.loss_trace.len(), 6);
        for r in &out.loss_trace {
            assert!((r.total - (r.feature_loss + cfg.lambda * r.image_loss)).abs() < 1e-12);
        }
    }
}

#[test]
fn activation_reduces_distance_and_leaves_index_untouched() {
    let s = setup(small_ivfpq());
    let before = s.index.to_bytes();
    let probe = s.weights.extract(&generate_image(77, 0, 32).unwrap()).unwrap();
    let search_before = s.index.search(&probe, 5).unwrap();
    let mut closer = 0;
    for (id, img) in s.images.iter().enumerate() {
        let out = activate(img, &s.weights, &s.index, id as u32, &ActivationConfig::default()).unwrap();
        let target = LossTarget::from_index(&s.index, id as u32, LossKind::Ivfpq).unwrap();
        if target.distance(&out.feature_after.to_f64()).unwrap() < target.distance(&out.feature_before.to_f64()).unwrap() {
            closer += 1;
        }
    }
    assert!(closer >= 10, "{closer}/12");
    assert_eq!(s.index.to_bytes(), before);
    assert_eq!(s.index.search(&probe, 5).unwrap(), search_before);
}

#[test]
fn activation_is_deterministic() {
    let s = setup(small_ivfpq());
    let a = activate(&s.images[3], &s.weights, &s.index, 3, &ActivationConfig::default()).unwrap();
    let b = activate(&s.images[3], &s.weights, &s.index, 3, &ActivationConfig::default()).unwrap();
    assert_eq!(a.activated, b.activated);
    assert_eq!(a.loss_trace, b.loss_trace);
}

#[test]
fn single_sample_eot_matches_plain_activation() {
    let s = setup(small_ivfpq());
    let plain = activate(&s.images[2], &s.weights, &s.index, 2, &ActivationConfig::default()).unwrap();
    for pool in [vec![TransformSpec::new(TransformKind::Blur, 1.0)], vec![TransformSpec::identity(); 3]] {
        let samples = if pool[0].kind == TransformKind::Identity { 4 } else { 1 };
        let cfg = ActivationConfig {
            eot: Some(EotConfig { samples, pool, seed: 9 }),
            ..Default::default()
        };
        let eot = activate_eot(&s.images[2], &s.weights, &s.index, 2, &cfg).unwrap();
        assert_eq!(eot.activated, plain.activated);
        assert_eq!(eot.loss_trace, plain.loss_trace);
    }
}

#[test]
fn eot_with_transforms_runs_and_respects_the_envelope() {
    let s = setup(small_ivfpq());
    let cfg = ActivationConfig {
        eot: Some(EotConfig::default()),
        ..Default::default()
    };
    let out = activate_eot(&s.images[1], &s.weights, &s.index, 1, &cfg).unwrap();
    let map = jnd_map(&s.images[1]);
    for ((a, o), h) in out.activated.data().iter().zip(s.images[1].data()).zip(&map.data) {
        assert!((*a as f64 - *o as f64).abs() <= 3.0 * h);
    }
    assert!(activate_eot(&s.images[1], &s.weights, &s.index, 1, &ActivationConfig::default()).is_err());
}

#[test]
fn every_index_family_supplies_a_target() {
    for preset in ["ivfpq", "pq", "opq", "ivf", "lsh"] {
        let spec = match IndexSpec::preset(preset).unwrap() {
            IndexSpec::IvfPq(p) => IndexSpec::IvfPq(IvfPqParams { k: p.k.min(8), ks: 32, ..p }),
            IndexSpec::IvfFlat { nprobe, iterations, .. } => IndexSpec::IvfFlat { k: 8, nprobe, iterations },
            other => other,
        };
        let s = setup(spec);
        let cfg = ActivationConfig { steps: 3, ..Default::default() };
        let out = activate(&s.images[0], &s.weights, &s.index, 0, &cfg).unwrap();
        assert_eq!(out.loss_trace.len(), 3);
        let kind = LossKind::for_index(&s.index);
        assert_eq!(kind.name(), preset);
        let target = LossTarget::from_index(&s.index, 0, kind).unwrap();
        if kind == LossKind::Lsh {
            let (v, _) = target.value_and_gradient(&out.feature_before.to_f64()).unwrap();
            assert!(v <= 0.0);
        }
    }
}

#[test]
fn unknown_ids_and_mismatched_kinds_are_errors() {
    let s = setup(small_ivfpq());
    let err = activate(&s.images[0], &s.weights, &s.index, 999, &ActivationConfig::default()).unwrap_err();
    assert!(matches!(err, Error::NotFound(_)));
    let cfg = ActivationConfig { loss: Some(LossKind::Lsh), ..Default::default() };
    assert!(matches!(activate(&s.images[0], &s.weights, &s.index, 0, &cfg), Err(Error::InvalidArgument(_))));
    let cfg = ActivationConfig { lr: 0.0, ..Default::default() };
    assert!(activate(&s.images[0], &s.weights, &s.index, 0, &cfg).is_err());
}
