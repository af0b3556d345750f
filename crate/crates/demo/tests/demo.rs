use skewmix_demo::{components, fit, mixture, sample};

#[test]
fn mixture_is_sum_of_components() {
    let p = [10.0, 3.0, 1.5, 0.8, 30.0, 5.0, -2.0, -0.4];
    let total = mixture(48, &p).unwrap();
    let parts = components(48, &p).unwrap();
    assert_eq!(parts.len(), 2 * 48);
    for b in 0..48 {
        assert!((parts[b] + parts[48 + b] - total[b]).abs() < 1e-15);
    }
    assert!(mixture(48, &p[..6]).is_err());
}

#[test]
fn noiseless_sample_matches_its_truth() {
    let out = sample(3, 40, 2, 0.0).unwrap();
    assert_eq!(out.len(), 40 + 8);
    let rendered = mixture(40, &out[40..]).unwrap();
    for (a, b) in out[..40].iter().zip(&rendered) {
        assert_eq!(*a, *b as f32 as f64);
    }
    assert_eq!(sample(3, 40, 2, 0.0).unwrap(), out);
}

#[test]
fn fitting_one_symmetric_component_recovers_it() {
    let truth = [20.0, 4.0, 0.0, 0.7];
    let target = mixture(64, &truth).unwrap();
    let out = fit(&target, 1, 3000, 0.05).unwrap();
    let loss = out[4];
    assert!(loss < 1e-7, "loss {loss}");
    // μ and α trade off slightly, so compare curves rather than parameters.
    let fitted = mixture(64, &out[..4]).unwrap();
    let worst = fitted.iter().zip(&target).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    assert!(worst < 1e-3, "{out:?}");
}

#[test]
fn fitting_reduces_loss_on_noisy_pixels() {
    for seed in 0..5 {
        let px = sample(seed, 64, 3, 0.01).unwrap();
        let target = &px[..64];
        let start = fit(target, 3, 0, 0.05).unwrap()[12];
        let end = fit(target, 3, 2000, 0.05).unwrap()[12];
        assert!(end < start, "seed {seed}: {start} -> {end}");
    }
}
