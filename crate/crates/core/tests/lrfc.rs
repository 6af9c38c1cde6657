use rand::Rng;
use samc_tensor::rng::stream;
use samcnet::lrfc::{encode, relative_encoding, LrfcConfig};

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn point(rng: &mut impl Rng, extent: f64) -> [f64; 2] {
    [rng.random_range(-extent..extent), rng.random_range(-extent..extent)]
}

#[test]
fn squared_norm_is_three_per_scale() {
    let cfg = LrfcConfig::default();
    let mut rng = stream(1, "lrfc");
    for _ in 0..1000 {
        let pe = encode(point(&mut rng, 5000.0), &cfg);
        assert_eq!(pe.len(), 30);
        assert!((dot(&pe, &pe) - 15.0).abs() < 1e-12);
    }
}

#[test]
fn inner_products_are_translation_invariant() {
    let cfg = LrfcConfig::default();
    let mut rng = stream(2, "lrfc");
    for _ in 0..1000 {
        let (x, y, t) = (point(&mut rng, 1000.0), point(&mut rng, 1000.0), point(&mut rng, 1000.0));
        let base = dot(&encode(x, &cfg), &encode(y, &cfg));
        let shifted = dot(&encode([x[0] + t[0], x[1] + t[1]], &cfg), &encode([y[0] + t[0], y[1] + t[1]], &cfg));
        assert!((base - shifted).abs() < 1e-9, "{base} vs {shifted}");
    }
}

#[test]
fn single_scale_decays_quadratically() {
    let mut rng = stream(3, "lrfc");
    for lambda in [1.0, 7.5, 100.0] {
        let cfg = LrfcConfig::new(1, lambda, lambda).unwrap();
        for _ in 0..200 {
            let x = point(&mut rng, 500.0);
            let r = rng.random_range(0.0..=0.01) * lambda;
            let angle = rng.random_range(0.0..std::f64::consts::TAU);
            let d = [r * angle.cos(), r * angle.sin()];
            let ip = dot(&encode(x, &cfg), &encode([x[0] + d[0], x[1] + d[1]], &cfg));
            let expected = 3.0 - 0.75 * (r / lambda).powi(2);
            assert!((ip - expected).abs() < 1e-6);
        }
    }
}

#[test]
fn relative_encoding_identity_and_symmetry() {
    let cfg = LrfcConfig::default();
    let mut rng = stream(4, "lrfc");
    for _ in 0..100 {
        let (a, b) = (point(&mut rng, 300.0), point(&mut rng, 300.0));
        assert!(relative_encoding(a, a, &cfg).iter().all(|&v| v == 0.0));
        assert_eq!(relative_encoding(a, b, &cfg), relative_encoding(b, a, &cfg));
    }
}

/// The per-slot absolute difference is not itself translation invariant;
/// what survives a shift is the norm of each (cos, sin) block.
#[test]
fn relative_encoding_shift_keeps_block_norms_not_slots() {
    let cfg = LrfcConfig::new(1, 1.0, 1.0).unwrap();
    let (a, b, t) = ([0.0, 0.0], [1.0, 0.0], [1.0, 0.0]);
    let before = relative_encoding(a, b, &cfg);
    let after = relative_encoding([a[0] + t[0], a[1]], [b[0] + t[0], b[1]], &cfg);
    // cos slot of the first direction: |1 − cos 1| versus |cos 1 − cos 2|.
    assert!((before[0] - (1.0 - 1f64.cos())).abs() < 1e-15);
    assert!((after[0] - (1f64.cos() - 2f64.cos()).abs()).abs() < 1e-15);
    assert!((before[0] - after[0]).abs() > 0.1);

    let cfg = LrfcConfig::default();
    let mut rng = stream(5, "lrfc");
    for _ in 0..100 {
        let (a, b, t) = (point(&mut rng, 1000.0), point(&mut rng, 1000.0), point(&mut rng, 1000.0));
        let r0 = relative_encoding(a, b, &cfg);
        let r1 = relative_encoding([a[0] + t[0], a[1] + t[1]], [b[0] + t[0], b[1] + t[1]], &cfg);
        for (c0, c1) in r0.chunks(2).zip(r1.chunks(2)) {
            assert!((norm(c0) - norm(c1)).abs() < 1e-9);
        }
        assert!((norm(&r0) - norm(&r1)).abs() < 1e-9);
    }
}

#[test]
fn nearby_positions_encode_differently() {
    let cfg = LrfcConfig::default();
    let mut rng = stream(6, "lrfc");
    for _ in 0..500 {
        let x = point(&mut rng, 1000.0);
        let r = rng.random_range(1e-6..cfg.lambda_min / 2.0);
        let angle = rng.random_range(0.0..std::f64::consts::TAU);
        let y = [x[0] + r * angle.cos(), x[1] + r * angle.sin()];
        assert_ne!(encode(x, &cfg), encode(y, &cfg));
    }
}

#[test]
fn config_rejects_bad_scales() {
    assert!(LrfcConfig::new(0, 1.0, 100.0).is_err());
    assert!(LrfcConfig::new(3, 0.0, 100.0).is_err());
    assert!(LrfcConfig::new(3, 10.0, 1.0).is_err());
}
