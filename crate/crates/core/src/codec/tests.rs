use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::autodiff::{gradient_check, gradient_check_coords, Graph};
use crate::tensor::Tensor;

fn random_image(h: usize, w: usize, seed: u64) -> Image {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Image::new(Tensor::from_fn(&[3, h, w], |_| rng.gen_range(0.05..0.95))).unwrap()
}

fn small_model(seed: u64) -> CodecModel {
    CodecModel::new(6, 4, 50.0, seed).unwrap()
}

#[test]
fn zero_weights_map_zero_image_to_zero_latent() {
    let m = CodecModel::zeroed(8, 4, 0.0).unwrap();
    let y = m.encode(&Image::filled(8, 8, 0.0).unwrap()).unwrap();
    assert_eq!(y.dims(), [4, 2, 2]);
    assert!(y.data().iter().all(|&v| v == 0.0));
}

#[test]
fn latent_and_reconstruction_shapes() {
    let m = CodecModel::new(64, 32, 100.0, 1).unwrap();
    let x = random_image(64, 64, 2);
    let y = m.encode(&x).unwrap();
    assert_eq!(y.dims(), [32, 16, 16]);
    let x_hat = m.decode(&y).unwrap();
    assert_eq!(x_hat.dims(), [3, 64, 64]);
}

#[test]
fn encode_rejects_bad_spatial_dims() {
    let m = small_model(0);
    let mut g = Graph::new();
    let p = m.bind(&mut g, false);
    let x = g.constant(Tensor::zeros(&[3, 6, 8]));
    assert!(m.encode_on(&mut g, &p, x).is_err());
}

#[test]
fn decode_of_zero_latent_is_output_bias() {
    let m = CodecModel::zeroed(8, 4, 0.3).unwrap();
    let out = m.decode(&Tensor::zeros(&[4, 4, 4])).unwrap();
    assert_eq!(out.dims(), [3, 16, 16]);
    assert!(out.data().iter().all(|&v| v == 0.3));
    assert!(m.decode(&Tensor::zeros(&[5, 4, 4])).is_err());
}

#[test]
fn encode_gradient_matches_finite_differences() {
    let m = small_model(3);
    let x = random_image(8, 8, 4);
    let weights = Tensor::from_fn(&[4, 2, 2], |i| (i as f64 * 0.37).sin());
    let err = gradient_check(
        |g, xv| {
            let p = m.bind(g, false);
            let y = m.encode_on(g, &p, xv)?;
            let w = g.mul_const(y, &weights)?;
            g.sum(w)
        },
        x.tensor(),
        1e-5,
    )
    .unwrap();
    assert!(err < 1e-4, "{err}");
}

#[test]
fn quantizer_modes() {
    let m = small_model(0);
    let y = Tensor::new(&[3], vec![-1.5, 2.49, 0.4]).unwrap();
    let hard = m.quantize(&y, &mut Quantizer::Hard).unwrap();
    assert_eq!(hard.data(), &[-2.0, 2.0, 0.0]);

    let mut g = Graph::new();
    let yv = g.variable(Tensor::scalar(0.4));
    let q = m.quantize_on(&mut g, yv, &mut Quantizer::Ste).unwrap();
    assert_eq!(g.value(q).data(), &[0.0]);
    g.backward(q).unwrap();
    assert_eq!(g.grad(yv).unwrap(), &[1.0]);
    assert!(m.quantize_on(&mut g, yv, &mut Quantizer::Hard).is_err());
}

#[test]
fn noise_quantizer_is_centered_uniform() {
    let m = small_model(0);
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let y = Tensor::full(&[100_000], 0.25);
    let q = m.quantize(&y, &mut Quantizer::Noise(&mut rng)).unwrap();
    let mut sum = 0.0;
    for (a, b) in q.data().iter().zip(y.data()) {
        let u = a - b;
        assert!(u > -0.5 && u < 0.5);
        sum += u;
    }
    assert!((sum / 1e5).abs() < 0.01);
}

#[test]
fn forward_equals_manual_composition() {
    let m = small_model(5);
    let x = random_image(16, 16, 6);
    let manual = m.decode(&m.quantize(&m.encode(&x).unwrap(), &mut Quantizer::Hard).unwrap()).unwrap();
    let piped = m.forward(&x, &mut Quantizer::Hard).unwrap();
    assert_eq!(manual, piped);
    let ste = m.forward(&x, &mut Quantizer::Ste).unwrap();
    assert_eq!(ste, piped);
}

#[test]
fn ste_forward_is_piecewise_constant_in_latent() {
    let m = small_model(5);
    let y = Tensor::from_fn(&[4, 4, 4], |i| (i as f64 * 0.61).sin() * 3.0);
    let base = m.quantize(&y, &mut Quantizer::Hard).unwrap();
    // Nudge every latent by less than its distance to the nearest rounding boundary.
    let nudged = Tensor::from_fn(&[4, 4, 4], |i| {
        let v = y.data()[i];
        let room = 0.5 - (v - v.round()).abs();
        v + 0.5 * room * if i % 2 == 0 { 1.0 } else { -1.0 }
    });
    let moved = m.quantize(&nudged, &mut Quantizer::Hard).unwrap();
    assert_eq!(base, moved);
    assert_eq!(m.decode(&base).unwrap(), m.decode(&moved).unwrap());
}

/// The straight-through gradient at `x0` equals the exact gradient of the
/// surrogate `x -> D(E(x) - r)` where `r = E(x0) - round(E(x0))` is frozen.
#[test]
fn ste_reconstruction_gradient_matches_frozen_residual_surrogate() {
    let mut m = small_model(8);
    // Keep decoder pre-activations off the leaky-ReLU kink (small latents round to 0).
    m.decoder.get_mut("decoder.deconv1.bias").unwrap().data_mut().iter_mut().enumerate().for_each(|(i, v)| *v = 0.2 + 0.1 * i as f64);
    let x0 = random_image(8, 8, 9);
    let target = random_image(8, 8, 10);
    let y0 = m.encode(&x0).unwrap();
    let residual = y0.map(|v| v.round() - v);

    let mut g = Graph::new();
    let p = m.bind(&mut g, false);
    let xv = g.variable(x0.tensor().clone());
    let (_, x_hat) = m.forward_on(&mut g, &p, xv, &mut Quantizer::Ste).unwrap();
    let t = g.constant(target.tensor().clone());
    let d = g.sub(x_hat, t).unwrap();
    let s = g.sum_squares(d).unwrap();
    let obj = g.scale(s, 0.5).unwrap();
    g.backward(obj).unwrap();
    let ste_grad = g.grad(xv).unwrap().to_vec();

    let surrogate = |g: &mut Graph, xv| {
        let p = m.bind(g, false);
        let y = m.encode_on(g, &p, xv)?;
        let shifted = g.add_const(y, &residual)?;
        let x_hat = m.decode_on(g, &p, shifted)?;
        let t = g.constant(target.tensor().clone());
        let d = g.sub(x_hat, t)?;
        let s = g.sum_squares(d)?;
        g.scale(s, 0.5)
    };
    let err = gradient_check(surrogate, x0.tensor(), 1e-5).unwrap();
    assert!(err < 1e-4, "{err}");
    let (_, exact) = crate::autodiff::analytic_gradient(&surrogate, x0.tensor()).unwrap();
    for (a, b) in ste_grad.iter().zip(&exact) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn bits_of_zero_latent_under_standard_logistic() {
    let m = small_model(0);
    let est = m.bits_estimate(&Tensor::zeros(&[4, 2, 2]), 8, 8).unwrap();
    let p: f64 = 1.0 / (1.0 + (-0.5f64).exp()) - 1.0 / (1.0 + 0.5f64.exp());
    assert!((p - 0.244918).abs() < 1e-6);
    let per = -p.log2();
    assert!((per - 2.0296).abs() < 1e-4);
    assert!((est.total_bits - 16.0 * per).abs() < 1e-9);
    assert!((est.bpp - est.total_bits / 64.0).abs() < 1e-15);
}

#[test]
fn bits_floor_engages_far_from_location() {
    let m = small_model(0);
    let est = m.bits_estimate(&Tensor::full(&[4, 1, 1], 200.0), 4, 4).unwrap();
    let per = -(1e-9f64).log2();
    assert!((per - 29.897).abs() < 1e-3);
    assert!((est.total_bits - 4.0 * per).abs() < 1e-9);
}

#[test]
fn bits_are_spatially_permutation_invariant() {
    let m = small_model(1);
    let y = Tensor::from_fn(&[4, 4, 4], |i| ((i * 7) % 5) as f64 - 2.0);
    let mut perm = y.clone();
    for c in 0..4 {
        perm.data_mut()[c * 16..(c + 1) * 16].reverse();
    }
    let a = m.bits_estimate(&y, 16, 16).unwrap().total_bits;
    let b = m.bits_estimate(&perm, 16, 16).unwrap().total_bits;
    assert!((a - b).abs() < 1e-9);
}

#[test]
fn bits_gradient_matches_finite_differences() {
    let mut m = small_model(2);
    m.entropy.get_mut("entropy.loc").unwrap().data_mut().copy_from_slice(&[0.3, -0.2, 0.1, 0.0]);
    m.entropy.get_mut("entropy.log_scale").unwrap().data_mut().copy_from_slice(&[0.5, -0.3, 0.0, 1.0]);
    let y = Tensor::from_fn(&[4, 2, 2], |i| (i as f64 * 0.77).sin() * 2.0);
    let err = gradient_check(
        |g, yv| {
            let p = m.bind(g, false);
            m.bits_on(g, &p, yv)
        },
        &y,
        1e-6,
    )
    .unwrap();
    assert!(err < 1e-4, "{err}");
    // Entropy parameters: differentiate through the loc leaf.
    let loc = m.entropy.get("entropy.loc").unwrap().clone();
    let err = gradient_check(
        |g, lv| {
            let yv = g.constant(y.clone());
            let ls = g.constant(m.entropy.get("entropy.log_scale").unwrap().clone());
            g.logistic_bits(yv, lv, ls, PROB_FLOOR)
        },
        &loc,
        1e-6,
    )
    .unwrap();
    assert!(err < 1e-4, "{err}");
}

#[test]
fn rd_loss_composes_rate_and_distortion() {
    let m = small_model(4);
    let x = random_image(8, 8, 5);
    let y_hat = m.quantize(&m.encode(&x).unwrap(), &mut Quantizer::Hard).unwrap();
    let bpp = m.bits_estimate(&y_hat, 8, 8).unwrap().bpp;
    let x_hat = m.decode(&y_hat).unwrap();
    let mse = x_hat.data().iter().zip(x.data()).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / 192.0;
    let loss = m.rd_loss(&x, &mut Quantizer::Hard).unwrap();
    assert!((loss - (bpp + 50.0 * mse)).abs() < 1e-9);

    let mut rate_only = m.clone();
    rate_only.lambda = 0.0;
    assert!((rate_only.rd_loss(&x, &mut Quantizer::Hard).unwrap() - bpp).abs() < 1e-12);
}

#[test]
fn rd_loss_of_perfect_reconstruction_is_rate_only() {
    // Zero network with output bias c reconstructs the constant image c exactly.
    let mut m = CodecModel::zeroed(4, 2, 0.25).unwrap();
    m.lambda = 100.0;
    let x = Image::filled(8, 8, 0.25).unwrap();
    let bpp = m.bits_estimate(&Tensor::zeros(&[2, 2, 2]), 8, 8).unwrap().bpp;
    assert!((m.rd_loss(&x, &mut Quantizer::Hard).unwrap() - bpp).abs() < 1e-12);
}

#[test]
fn rd_loss_gradient_wrt_parameters() {
    let m = small_model(6);
    let x = random_image(8, 8, 7);
    let w = m.parameter("decoder.deconv1.weight").unwrap().clone();
    let coords: Vec<usize> = (0..w.len()).step_by(7).collect();
    let err = gradient_check_coords(
        |g, wv| {
            let mut p = m.bind(g, false);
            p.dec1_w = wv;
            let xv = g.constant(x.tensor().clone());
            let mut rng = ChaCha8Rng::seed_from_u64(1);
            m.rd_loss_on(g, &p, xv, &mut Quantizer::Noise(&mut rng))
        },
        &w,
        1e-6,
        &coords,
    )
    .unwrap();
    assert!(err < 1e-4, "{err}");
}

#[test]
fn hard_forward_is_idempotent_on_integral_latents() {
    let m = small_model(3);
    let x = random_image(8, 8, 1);
    let once = m.quantize(&m.encode(&x).unwrap(), &mut Quantizer::Hard).unwrap();
    let twice = m.quantize(&once, &mut Quantizer::Hard).unwrap();
    assert_eq!(once, twice);
}

#[test]
fn zero_epochs_leave_model_untouched() {
    let m = small_model(2);
    let data = vec![random_image(8, 8, 0)];
    let opts = TrainOptions { epochs: 0, ..TrainOptions::default() };
    let report = train(&m, &data, &opts).unwrap();
    assert_eq!(report.model, m);
    assert!(report.history.is_empty());
}

#[test]
fn training_is_deterministic() {
    let m = small_model(2);
    let data: Vec<_> = (0..4).map(|s| random_image(8, 8, s)).collect();
    let opts = TrainOptions { epochs: 2, lr: 1e-3, seed: 9, batch_size: 2, plateau_patience: None };
    let a = train(&m, &data, &opts).unwrap();
    let b = train(&m, &data, &opts).unwrap();
    assert_eq!(a.model, b.model);
    assert_eq!(a.history, b.history);
}

#[test]
fn overfits_a_constant_image() {
    let m = CodecModel::new(8, 4, 1000.0, 1).unwrap();
    let data = vec![Image::filled(8, 8, 0.6).unwrap()];
    let opts = TrainOptions { epochs: 400, lr: 2e-4, seed: 0, batch_size: 1, plateau_patience: Some(20) };
    let report = train(&m, &data, &opts).unwrap();
    assert!(report.diverged_at.is_none());
    let out = report.model.forward(&data[0], &mut Quantizer::Hard).unwrap();
    let mse = out.data().iter().map(|v| (v - 0.6).powi(2)).sum::<f64>() / out.len() as f64;
    assert!(mse < 1e-3, "{mse}");
}

#[test]
fn training_rejects_mixed_shapes_and_empty_sets() {
    let m = small_model(0);
    let opts = TrainOptions::default();
    assert!(train(&m, &[], &opts).is_err());
    let data = vec![random_image(8, 8, 0), random_image(8, 12, 1)];
    assert!(train(&m, &data, &opts).is_err());
}

