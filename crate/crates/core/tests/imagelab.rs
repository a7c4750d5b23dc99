use std::path::PathBuf;

use activeindex::activation::sobel_magnitude;
use activeindex::imagelab::*;
use proptest::prelude::*;

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

/// Same formula as `card()` in the fixture script.
fn card_pixel(y: usize, x: usize, c: usize) -> f32 {
    let v = match c {
        0 => (x * 37 + y * 11) % 256,
        1 => (x * y + 3 * y) % 256,
        _ => (200 + 7 * y + 256 * 4 - 5 * x) % 256,
    };
    v as f32
}

#[test]
fn decodes_a_ppm_written_by_an_independent_encoder() {
    let img = read_ppm(fixture("card.ppm")).unwrap();
    assert_eq!((img.height(), img.width()), (23, 31));
    for y in 0..23 {
        for x in 0..31 {
            for c in 0..3 {
                assert_eq!(img.get(y, x, c), card_pixel(y, x, c), "({y}, {x}, {c})");
            }
        }
    }
}

#[test]
fn corpus_has_flat_and_textured_regions() {
    let (mut flat, mut sharp, mut total) = (0usize, 0usize, 0usize);
    for i in 0..100 {
        let img = generate_image(7, i, 64).unwrap();
        let g = sobel_magnitude(&img.luminance(), 64, 64);
        let lo = g.iter().filter(|&&v| v < 2.0).count();
        let hi = g.iter().filter(|&&v| v > 60.0).count();
        assert!(lo * 1000 >= g.len() && hi * 1000 >= g.len(), "image {i}: {lo} flat, {hi} sharp");
        flat += lo;
        sharp += hi;
        total += g.len();
    }
    assert!(flat * 10 >= total, "{flat} of {total}");
    assert!(sharp * 20 >= total, "{sharp} of {total}");
}

fn all_transforms() -> Vec<TransformSpec> {
    use TransformKind::*;
    vec![
        TransformSpec::new(Brightness, 1.7),
        TransformSpec::new(Contrast, 2.5),
        TransformSpec::new(Hue, 0.3),
        TransformSpec::new(Blur, 1.5),
        TransformSpec::new(Rotate, 33.0),
        TransformSpec::new(CenterCrop, 0.6),
        TransformSpec::new(Resize, 0.4),
        TransformSpec::new(GaussianNoise, 40.0).with_seed(3),
    ]
}

fn arb_image() -> impl Strategy<Value = Image> {
    (16usize..24, 16usize..24).prop_flat_map(|(h, w)| {
        proptest::collection::vec(0.0f32..=255.0, h * w * 3).prop_map(move |d| Image::new(h, w, d).unwrap())
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn transforms_stay_in_range(img in arb_image()) {
        for spec in all_transforms() {
            let out = apply_transform(&img, &spec).unwrap();
            prop_assert!(out.data().iter().all(|v| (0.0..=255.0).contains(v)), "{}", spec.label());
        }
    }

    #[test]
    fn identity_parameters_change_nothing(img in arb_image()) {
        use TransformKind::*;
        for (kind, p) in [(Brightness, 1.0), (Contrast, 1.0), (Hue, 0.0), (Blur, 0.0), (Rotate, 0.0), (CenterCrop, 1.0), (Resize, 1.0), (GaussianNoise, 0.0)] {
            prop_assert_eq!(&apply_transform(&img, &TransformSpec::new(kind, p)).unwrap(), &img);
        }
    }

    #[test]
    fn doubling_a_perturbation_costs_six_decibels(
        base in 60.0f32..190.0,
        deltas in proptest::collection::vec(-30.0f32..30.0, 8 * 8 * 3),
    ) {
        prop_assume!(deltas.iter().any(|d| d.abs() > 0.1));
        let a = Image::filled(8, 8, [base; 3]).unwrap();
        let shifted = |k: f32| Image::new(8, 8, deltas.iter().map(|d| base + k * d).collect()).unwrap();
        let drop = psnr(&a, &shifted(1.0)).unwrap() - psnr(&a, &shifted(2.0)).unwrap();
        prop_assert!((drop - 20.0 * 2f64.log10()).abs() < 1e-4);
    }

    #[test]
    fn integer_images_survive_ppm(img in arb_image()) {
        let rounded = img.rounded();
        prop_assert_eq!(decode_ppm(&encode_ppm(&rounded)).unwrap(), rounded.clone());
        prop_assert_eq!(decode_ppm(&encode_ppm(&img)).unwrap(), rounded);
    }
}
