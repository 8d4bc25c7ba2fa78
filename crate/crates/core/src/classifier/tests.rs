use super::*;
use crate::dataio::emnist_group_map;

#[test]
fn binary_activation_cases() {
    // Negative input: silent with zero gradient in both modes.
    assert_eq!(binary_activation(-0.5, Mode::Surrogate1, 0.125), (0, 0));
    assert_eq!(binary_activation(-0.5, Mode::Surrogate2, 0.125), (0, 0));
    // Inside the saturation band: surrogate 1 passes gradient.
    assert_eq!(binary_activation(0.05, Mode::Surrogate1, 0.125), (1, 1));
    // Past saturation: surrogate 1 blocks, surrogate 2 follows the spike.
    assert_eq!(binary_activation(0.5, Mode::Surrogate1, 0.125), (1, 0));
    assert_eq!(binary_activation(0.5, Mode::Surrogate2, 0.125), (1, 1));
    // z = 0 spikes.
    assert_eq!(binary_activation(0.0, Mode::Surrogate1, 0.125), (1, 1));
}

#[test]
fn surrogate1_grad_is_saturating_relu_derivative() {
    // sigma(z) = clamp(z, 0, tau); central differences at interior points
    // away from the kinks at 0 and tau.
    let tau = 0.125;
    let sigma = |z: f64| z.clamp(0.0, tau);
    let h = 1e-7;
    for i in 0..100 {
        let z = -0.3 + 0.6 * (i as f64 + 0.5) / 100.0;
        if (z.abs() < 1e-3) || ((z - tau).abs() < 1e-3) {
            continue;
        }
        let fd = (sigma(z + h) - sigma(z - h)) / (2.0 * h);
        let (_, g) = binary_activation(z, Mode::Surrogate1, tau);
        assert!((fd - g as f64).abs() < 1e-6, "z={z}: fd={fd} grad={g}");
    }
}

#[test]
fn floor_softmax_known_values() {
    let p = floor_softmax(&[0.7, 0.2]);
    assert_eq!(p, vec![0.5, 0.5]);

    let p = floor_softmax(&[2.1, 0.9]);
    let e2 = 2.0f64.exp();
    assert!((p[0] - e2 / (e2 + 1.0)).abs() < 1e-12);
    assert!((p[1] - 1.0 / (e2 + 1.0)).abs() < 1e-12);
    assert!((p[0] - 0.8808).abs() < 1e-4);
}

#[test]
fn floor_softmax_normalizes_and_shifts() {
    let z = [3.7, -1.2, 0.4, 9.9, -0.3];
    let p = floor_softmax(&z);
    assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    // Adding an integer constant leaves the result bit-identical.
    let shifted: Vec<f64> = z.iter().map(|v| v + 7.0).collect();
    assert_eq!(floor_softmax(&shifted), p);
}

#[test]
fn init_respects_truncation_and_seed() {
    let a = init_mlp(3630, 1500, 47, Mode::Surrogate1, 5).unwrap();
    assert!(a.w_hidden_t.iter().all(|w| w.abs() <= 0.02));
    assert!(a.w_out.iter().all(|w| w.abs() <= 0.02));
    assert_eq!(a.w_out.dim(), (47, 1500));
    assert!(a.b_hidden.iter().chain(a.b_out.iter()).all(|&b| b == 0.0));
    let b = init_mlp(3630, 1500, 47, Mode::Surrogate1, 5).unwrap();
    assert_eq!(a.w_hidden_t, b.w_hidden_t);
    assert_eq!(a.w_out, b.w_out);
    assert!(matches!(init_mlp(0, 5, 3, Mode::Surrogate1, 0), Err(Error::BadDims(_))));
}

#[test]
fn zero_input_with_zero_biases_spikes_everywhere() {
    let state = init_mlp(10, 6, 3, Mode::Surrogate1, 2).unwrap();
    let fwd = forward(&[0; 10], &state, None).unwrap();
    assert!(fwd.z_hidden.iter().all(|&z| z == 0.0));
    assert!(fwd.hidden_bits.iter().all(|&a| a == 1));
}

#[test]
fn exact_relu_with_zero_weights_is_uniform() {
    let mut state = init_mlp(4, 3, 5, Mode::ExactRelu, 0).unwrap();
    state.w_hidden_t.fill(0.0);
    state.w_out.fill(0.0);
    let fwd = forward(&[1, 0, 1, 1], &state, None).unwrap();
    for &p in &fwd.probs {
        assert!((p - 0.2).abs() < 1e-15);
    }
}

#[test]
fn forward_is_deterministic_given_mask() {
    let state = init_mlp(8, 5, 3, Mode::Surrogate2, 3).unwrap();
    let bits = [1, 0, 1, 1, 0, 0, 1, 0];
    let mask = [1, 0, 1, 1, 0];
    let a = forward(&bits, &state, Some(&mask)).unwrap();
    let b = forward(&bits, &state, Some(&mask)).unwrap();
    assert_eq!(a.z_out, b.z_out);
    assert_eq!(a.hidden_bits, b.hidden_bits);
    // Masked units are silent.
    assert_eq!(a.hidden_bits[1], 0);
    assert_eq!(a.hidden_bits[4], 0);
}

#[test]
fn perfect_prediction_leaves_weights_unchanged() {
    // Drive the floored logits so far apart that p is exactly one-hot;
    // delta = p - y = 0 and the step is a no-op.
    let mut state = init_mlp(4, 3, 3, Mode::Surrogate1, 1).unwrap();
    state.dropout_p = 0.0;
    state.b_out = vec![1000.0, 0.0, 0.0];
    let before_w = state.w_out.clone();
    let before_h = state.w_hidden_t.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let bits = [1u8, 0, 1, 0];
    backprop_batch(&mut state, &[(&bits, 0)], &mut rng).unwrap();
    assert_eq!(state.w_out, before_w);
    assert_eq!(state.w_hidden_t, before_h);
}

#[test]
fn saturated_units_receive_no_hidden_update() {
    // Surrogate 1 gradient is zero for z >= tau, so the input weights into a
    // saturated unit stay frozen for that step.
    let mut state = init_mlp(3, 2, 2, Mode::Surrogate1, 4).unwrap();
    state.dropout_p = 0.0;
    state.b_hidden = vec![10.0, 0.05]; // unit 0 saturated, unit 1 in-band
    let before = state.w_hidden_t.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let bits = [1u8, 1, 0];
    backprop_batch(&mut state, &[(&bits, 1)], &mut rng).unwrap();
    // Column 0 (into hidden unit 0) unchanged, column 1 moved.
    for j in 0..3 {
        assert_eq!(state.w_hidden_t[[j, 0]], before[[j, 0]]);
    }
    assert!((0..2).any(|j| state.w_hidden_t[[j, 1]] != before[[j, 1]]));
    assert_eq!(state.b_hidden[0], 10.0);
    assert_ne!(state.b_hidden[1], 0.05);
}

#[test]
fn empty_batch_and_bad_label_are_rejected() {
    let mut state = init_mlp(3, 2, 2, Mode::Surrogate1, 0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    assert!(matches!(backprop_batch(&mut state, &[], &mut rng), Err(Error::EmptyBatch)));
    let bits = [1u8, 0, 0];
    assert!(matches!(
        backprop_batch(&mut state, &[(&bits, 2)], &mut rng),
        Err(Error::LabelOutOfRange { .. })
    ));
}

/// Mean quadratic loss of the exact-ReLU network over a batch, from forward
/// passes only. Used as the finite-difference oracle.
fn exact_loss(state: &MlpState, batch: &[(&[u8], usize)]) -> f64 {
    let mut sum = 0.0;
    for &(bits, label) in batch {
        let fwd = forward(bits, state, None).unwrap();
        for k in 0..state.num_classes() {
            let a = fwd.z_out[k].max(0.0);
            let y = (k == label) as usize as f64;
            sum += 0.5 * (a - y) * (a - y);
        }
    }
    sum / batch.len() as f64
}

fn toy_exact_state() -> MlpState {
    // 5-4-3 toy with hand-set weights that keep every pre-activation away
    // from the ReLU kinks, so central differences are clean.
    let mut state = init_mlp(5, 4, 3, Mode::ExactRelu, 0).unwrap();
    state.dropout_p = 0.0;
    for (idx, w) in state.w_hidden_t.iter_mut().enumerate() {
        *w = 0.4 * ((idx as f64) * 0.7 + 0.3).sin();
    }
    for (idx, w) in state.w_out.iter_mut().enumerate() {
        *w = 0.5 * ((idx as f64) * 1.3 - 0.4).cos();
    }
    state.b_hidden = vec![0.11, -0.23, 0.31, 0.17];
    state.b_out = vec![0.21, -0.13, 0.09];
    state
}

#[test]
fn exact_relu_gradients_match_central_differences() {
    let state = toy_exact_state();
    let b0 = [1u8, 0, 1, 1, 0];
    let b1 = [0u8, 1, 1, 0, 1];
    let b2 = [1u8, 1, 0, 0, 1];
    let batch: Vec<(&[u8], usize)> = vec![(&b0, 0), (&b1, 2), (&b2, 1)];

    // Analytic mean gradient extracted from one unit-learning-rate step.
    let mut stepped = state.clone();
    stepped.eta = 1.0;
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    backprop_batch(&mut stepped, &batch, &mut rng).unwrap();

    let h = 1e-6;
    let check = |analytic: f64, fd: f64, what: &str| {
        let denom = analytic.abs().max(fd.abs()).max(1e-8);
        assert!(
            (analytic - fd).abs() / denom < 1e-5,
            "{what}: analytic {analytic} vs fd {fd}"
        );
    };

    for j in 0..5 {
        for i in 0..4 {
            let analytic = state.w_hidden_t[[j, i]] - stepped.w_hidden_t[[j, i]];
            let mut plus = state.clone();
            plus.w_hidden_t[[j, i]] += h;
            let mut minus = state.clone();
            minus.w_hidden_t[[j, i]] -= h;
            let fd = (exact_loss(&plus, &batch) - exact_loss(&minus, &batch)) / (2.0 * h);
            check(analytic, fd, &format!("w_hidden[{j},{i}]"));
        }
    }
    for k in 0..3 {
        for i in 0..4 {
            let analytic = state.w_out[[k, i]] - stepped.w_out[[k, i]];
            let mut plus = state.clone();
            plus.w_out[[k, i]] += h;
            let mut minus = state.clone();
            minus.w_out[[k, i]] -= h;
            let fd = (exact_loss(&plus, &batch) - exact_loss(&minus, &batch)) / (2.0 * h);
            check(analytic, fd, &format!("w_out[{k},{i}]"));
        }
    }
    for i in 0..4 {
        let analytic = state.b_hidden[i] - stepped.b_hidden[i];
        let mut plus = state.clone();
        plus.b_hidden[i] += h;
        let mut minus = state.clone();
        minus.b_hidden[i] -= h;
        let fd = (exact_loss(&plus, &batch) - exact_loss(&minus, &batch)) / (2.0 * h);
        check(analytic, fd, &format!("b_hidden[{i}]"));
    }
    for k in 0..3 {
        let analytic = state.b_out[k] - stepped.b_out[k];
        let mut plus = state.clone();
        plus.b_out[k] += h;
        let mut minus = state.clone();
        minus.b_out[k] -= h;
        let fd = (exact_loss(&plus, &batch) - exact_loss(&minus, &batch)) / (2.0 * h);
        check(analytic, fd, &format!("b_out[{k}]"));
    }
}

fn feature(bits: Vec<u8>, label: u8) -> FeatureVector {
    FeatureVector { bits, label }
}

#[test]
fn evaluate_single_correct_sample() {
    let mut state = init_mlp(3, 2, 2, Mode::Surrogate1, 0).unwrap();
    state.b_out = vec![0.0, 5.0];
    let report = evaluate(&state, &[feature(vec![1, 0, 0], 1)]).unwrap();
    assert_eq!(report.accuracy, 1.0);
    assert_eq!(report.confusion[[1, 1]], 1);
}

#[test]
fn confusion_trace_over_total_equals_accuracy() {
    let state = init_mlp(6, 4, 3, Mode::Surrogate2, 9).unwrap();
    let set: Vec<FeatureVector> = (0..30)
        .map(|i| feature((0..6).map(|j| ((i + j) % 3 == 0) as u8).collect(), (i % 3) as u8))
        .collect();
    let report = evaluate(&state, &set).unwrap();
    let trace: u32 = (0..3).map(|c| report.confusion[[c, c]]).sum();
    let total: u32 = report.confusion.iter().sum();
    assert_eq!(total, 30);
    assert_eq!(report.accuracy, trace as f64 / total as f64);
    assert!(matches!(evaluate(&state, &[]), Err(Error::EmptySet)));
}

#[test]
fn evaluation_is_stable_across_calls() {
    // Dropout must be inference-disabled: two evaluations agree exactly.
    let mut state = init_mlp(6, 4, 3, Mode::Surrogate1, 9).unwrap();
    state.dropout_p = 0.5;
    let set: Vec<FeatureVector> = (0..20)
        .map(|i| feature((0..6).map(|j| ((i * j) % 4 == 1) as u8).collect(), (i % 3) as u8))
        .collect();
    let a = evaluate(&state, &set).unwrap();
    let b = evaluate(&state, &set).unwrap();
    assert_eq!(a.accuracy, b.accuracy);
    assert_eq!(a.confusion, b.confusion);
}

#[test]
fn conditioned_restriction_is_consistent_and_never_worse() {
    let groups = emnist_group_map();
    let state = init_mlp(12, 8, 47, Mode::Surrogate1, 11).unwrap();
    let set: Vec<FeatureVector> = (0..94)
        .map(|i| feature((0..12).map(|j| ((i + 2 * j) % 5 < 2) as u8).collect(), (i % 47) as u8))
        .collect();
    let plain = evaluate(&state, &set).unwrap();
    let cond = conditioned_evaluate(&state, &set, &groups).unwrap();
    assert!(cond.accuracy >= plain.accuracy);
    assert_eq!(cond.conditioned_accuracy, Some(cond.accuracy));

    // Restriction consistency: when the unconditioned argmax already lies in
    // the true group, conditioning must return the same class.
    for f in &set {
        let fwd = forward(&f.bits, &state, None).unwrap();
        let unrestricted = argmax_lowest(&fwd.probs);
        let allowed = groups.members_of_group(f.label as usize);
        if allowed.contains(&unrestricted) {
            let mut best = allowed[0];
            for &c in &allowed {
                if fwd.probs[c] > fwd.probs[best] {
                    best = c;
                }
            }
            assert_eq!(best, unrestricted);
        }
    }
}

fn separable_set(n: usize, dim: usize) -> Vec<FeatureVector> {
    // Two classes with disjoint active halves plus mild overlap noise.
    (0..n)
        .map(|i| {
            let label = (i % 2) as u8;
            let bits = (0..dim)
                .map(|j| {
                    let own_half = (label == 0) == (j < dim / 2);
                    (own_half && (i + j) % 3 != 0) as u8
                })
                .collect();
            feature(bits, label)
        })
        .collect()
}

#[test]
fn zero_eta_training_changes_nothing() {
    let train = separable_set(40, 16);
    let cfg = TrainConfig {
        hidden: 8,
        num_classes: 2,
        eta: 0.0,
        epochs: 1,
        seed: 3,
        ..TrainConfig::default()
    };
    let (state, report, curves) = train_classifier(&train, &train, &train, &cfg).unwrap();
    let fresh = init_mlp(16, 8, 2, cfg.mode, cfg.seed).unwrap();
    assert_eq!(state.w_hidden_t, fresh.w_hidden_t);
    assert_eq!(state.w_out, fresh.w_out);
    let init_acc = evaluate(&fresh, &train).unwrap().accuracy;
    assert_eq!(report.accuracy, init_acc);
    assert_eq!(curves.rows.len(), 1);
}

#[test]
fn training_learns_a_separable_problem_in_each_mode() {
    let train = separable_set(120, 16);
    let test = separable_set(40, 16);
    for mode in [Mode::Surrogate1, Mode::Surrogate2, Mode::ExactRelu] {
        let cfg = TrainConfig {
            hidden: 12,
            num_classes: 2,
            mode,
            eta: if mode == Mode::ExactRelu { 0.05 } else { 0.02 },
            dropout_p: 0.0,
            epochs: 25,
            seed: 1,
            ..TrainConfig::default()
        };
        let (_, report, _) = train_classifier(&train, &test, &test, &cfg).unwrap();
        assert!(
            report.accuracy > 0.9,
            "{} reached only {:.3}",
            mode.as_str(),
            report.accuracy
        );
    }
}

#[test]
fn training_is_seed_reproducible() {
    let train = separable_set(60, 12);
    let cfg = TrainConfig {
        hidden: 6,
        num_classes: 2,
        epochs: 3,
        seed: 77,
        ..TrainConfig::default()
    };
    let (a, ra, _) = train_classifier(&train, &train, &train, &cfg).unwrap();
    let (b, rb, _) = train_classifier(&train, &train, &train, &cfg).unwrap();
    assert_eq!(a.w_hidden_t, b.w_hidden_t);
    assert_eq!(a.w_out, b.w_out);
    assert_eq!(ra.accuracy, rb.accuracy);
}
