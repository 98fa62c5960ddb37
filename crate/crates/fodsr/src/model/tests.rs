use super::*;

fn toy_cfg() -> ModelConfig {
    ModelConfig {
        patch_size: [4, 4, 4],
        embed_dim: 8,
        window_size: [2, 2, 2],
        depths: vec![1, 1],
        num_heads: vec![2, 2],
        shift: true,
        residual: false,
        in_channels: 5,
        out_channels: 5,
        mlp_ratio: 2,
    }
}

fn pseudo(n: usize, scale: f64, phase: f64) -> Vec<f64> {
    (0..n)
        .map(|i| ((i as f64 + phase) * 0.417).sin() * scale)
        .collect()
}

#[test]
fn init_is_deterministic_and_shaped() {
    let cfg = ModelConfig::default();
    let a: ModelParams<f32> = init_params(&cfg, 5).unwrap();
    let b: ModelParams<f32> = init_params(&cfg, 5).unwrap();
    assert_eq!(a, b);
    let c: ModelParams<f32> = init_params(&cfg, 6).unwrap();
    assert_ne!(a, c);
    // per-head dim 8 with embed 24 / 3 heads: qkv shape is [24, 72]
    assert_eq!(a.stages[0][0].qkv.w.shape, vec![24, 72]);
    assert_eq!(24 / cfg.num_heads[0], 8);
}

#[test]
fn init_values_respect_truncation() {
    let cfg = toy_cfg();
    let p: ModelParams<f64> = init_params(&cfg, 3).unwrap();
    for (name, t) in p.tensors() {
        if name.ends_with(".w") || name.ends_with("rel_bias") {
            assert!(t.data.iter().all(|v| v.abs() <= 0.04), "{name}");
            assert!(t.data.iter().any(|v| *v != 0.0), "{name} all zero");
        }
    }
}

#[test]
fn invalid_configs_are_rejected() {
    let mut cfg = ModelConfig::default();
    cfg.patch_size = [20, 20, 20];
    cfg.window_size = [8, 8, 8];
    assert!(matches!(cfg.validate(), Err(FodError::Config(_))));

    let mut cfg = ModelConfig::default();
    cfg.num_heads = vec![5, 6]; // 24 % 5 != 0
    assert!(cfg.validate().is_err());

    let mut cfg = ModelConfig::default();
    cfg.depths = vec![2, 2, 2, 2, 2];
    cfg.num_heads = vec![3; 5];
    assert!(cfg.validate().is_err());

    let mut cfg = ModelConfig::default();
    cfg.residual = true;
    cfg.out_channels = 44;
    assert!(cfg.validate().is_err());
}

#[test]
fn forward_preserves_shape_on_default_config() {
    let cfg = ModelConfig::default();
    let params: ModelParams<f32> = init_params(&cfg, 0).unwrap();
    let n = cfg.stage_tokens(0) * cfg.in_channels;
    let input: Vec<f32> = (0..n).map(|i| (i as f32 * 0.01).sin()).collect();
    let out = forward(&params, &cfg, &input).unwrap();
    assert_eq!(out.len(), cfg.stage_tokens(0) * cfg.out_channels);
}

#[test]
fn zero_head_maps_zero_input_to_zero() {
    let cfg = toy_cfg();
    let mut params: ModelParams<f64> = init_params(&cfg, 1).unwrap();
    params.head.w.fill(0.0);
    params.head.b.fill(0.0);
    let input = vec![0.0; cfg.stage_tokens(0) * cfg.in_channels];
    let out = forward(&params, &cfg, &input).unwrap();
    assert!(out.iter().all(|&v| v == 0.0));
}

#[test]
fn forward_is_bitwise_deterministic() {
    let cfg = toy_cfg();
    let params: ModelParams<f32> = init_params(&cfg, 9).unwrap();
    let input: Vec<f32> = (0..cfg.stage_tokens(0) * cfg.in_channels)
        .map(|i| (i as f32 * 0.013).cos())
        .collect();
    let a = forward(&params, &cfg, &input).unwrap();
    let b = forward(&params, &cfg, &input).unwrap();
    assert_eq!(
        a.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
        b.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
    );
}

#[test]
fn mse_trivial_cases() {
    let cfg = toy_cfg();
    let params: ModelParams<f64> = init_params(&cfg, 2).unwrap();
    let n = cfg.stage_tokens(0) * cfg.in_channels;
    let input = pseudo(n, 0.7, 0.3);
    let output = forward(&params, &cfg, &input).unwrap();

    // target = output → zero loss
    let (mse, _, _) = loss_and_grads(&params, &cfg, &input, &output).unwrap();
    assert!(mse.abs() < 1e-24);

    // target = output + ε·e_k → mse = ε²/n
    let eps = 0.25;
    let mut target = output.clone();
    target[7] += eps;
    let (mse, _, _) = loss_and_grads(&params, &cfg, &input, &target).unwrap();
    assert!((mse - eps * eps / n as f64).abs() < 1e-15);
}

#[test]
fn residual_mode_with_zero_head_is_identity() {
    let mut cfg = toy_cfg();
    cfg.residual = true;
    let mut params: ModelParams<f64> = init_params(&cfg, 4).unwrap();
    params.head.w.fill(0.0);
    params.head.b.fill(0.0);
    let input = pseudo(cfg.stage_tokens(0) * cfg.in_channels, 1.3, 0.9);
    let out = forward(&params, &cfg, &input).unwrap();
    assert_eq!(out, input);
}

/// Central-difference check of every parameter tensor and the input
/// gradient on the toy config, in f64.
#[test]
fn gradients_match_finite_differences_everywhere() {
    let cfg = toy_cfg();
    let params: ModelParams<f64> = init_params(&cfg, 7).unwrap();
    let n = cfg.stage_tokens(0) * cfg.in_channels;
    let input = pseudo(n, 0.9, 0.1);
    let target = pseudo(n, 0.8, 4.2);

    let (_, grads, dinput) = loss_and_grads(&params, &cfg, &input, &target).unwrap();
    let h = 1e-5;
    let tol = 1e-3;

    // Parameter tensors.
    let grad_tensors = grads.tensors();
    let mut probe = params.clone();
    {
        let names: Vec<String> = probe.tensors().iter().map(|(n, _)| n.clone()).collect();
        for (ti, name) in names.iter().enumerate() {
            let len = grad_tensors[ti].1.len();
            let step = len.div_ceil(8).max(1);
            for i in (0..len).step_by(step) {
                let old = probe.tensors_mut()[ti].1.data[i];
                probe.tensors_mut()[ti].1.data[i] = old + h;
                let (lp, _, _) = loss_and_grads(&probe, &cfg, &input, &target).unwrap();
                probe.tensors_mut()[ti].1.data[i] = old - h;
                let (lm, _, _) = loss_and_grads(&probe, &cfg, &input, &target).unwrap();
                probe.tensors_mut()[ti].1.data[i] = old;
                let num = (lp - lm) / (2.0 * h);
                let ana = grad_tensors[ti].1.data[i];
                let denom = num.abs().max(ana.abs()).max(1e-6);
                let rel = (num - ana).abs() / denom;
                assert!(rel < tol, "{name}[{i}]: analytic {ana} vs numeric {num}");
            }
        }
    }

    // Input gradient.
    let mut x = input.clone();
    for i in (0..n).step_by(n.div_ceil(24).max(1)) {
        let old = x[i];
        x[i] = old + h;
        let (lp, _, _) = loss_and_grads(&params, &cfg, &x, &target).unwrap();
        x[i] = old - h;
        let (lm, _, _) = loss_and_grads(&params, &cfg, &x, &target).unwrap();
        x[i] = old;
        let num = (lp - lm) / (2.0 * h);
        let denom = num.abs().max(dinput[i].abs()).max(1e-6);
        assert!(
            (num - dinput[i]).abs() / denom < tol,
            "input[{i}]: analytic {} vs numeric {num}",
            dinput[i]
        );
    }
}

#[test]
fn three_stage_config_runs_and_checks_gradients_lightly() {
    let cfg = ModelConfig {
        patch_size: [8, 8, 8],
        embed_dim: 4,
        window_size: [2, 2, 2],
        depths: vec![1, 1, 1],
        num_heads: vec![2, 2, 2],
        shift: true,
        residual: true,
        in_channels: 3,
        out_channels: 3,
        mlp_ratio: 2,
    };
    let params: ModelParams<f64> = init_params(&cfg, 13).unwrap();
    let n = cfg.stage_tokens(0) * cfg.in_channels;
    let input = pseudo(n, 0.6, 1.4);
    let target = pseudo(n, 0.5, 2.8);
    let (_, grads, _) = loss_and_grads(&params, &cfg, &input, &target).unwrap();

    // Spot-check one coordinate of a deep tensor and one decoder tensor.
    let h = 1e-5;
    for probe_name in ["enc2.blk0.qkv.w", "dec1.fuse.w", "merge2.reduce.w"] {
        let gt = grads.tensors();
        let (ti, _) = gt
            .iter()
            .enumerate()
            .find(|(_, (n, _))| n == probe_name)
            .map(|(i, (n, _))| (i, n.clone()))
            .unwrap();
        let i = gt[ti].1.len() / 2;
        let ana = gt[ti].1.data[i];
        let mut probe = params.clone();
        let old = probe.tensors_mut()[ti].1.data[i];
        probe.tensors_mut()[ti].1.data[i] = old + h;
        let (lp, _, _) = loss_and_grads(&probe, &cfg, &input, &target).unwrap();
        probe.tensors_mut()[ti].1.data[i] = old - h;
        let (lm, _, _) = loss_and_grads(&probe, &cfg, &input, &target).unwrap();
        let num = (lp - lm) / (2.0 * h);
        let denom = num.abs().max(ana.abs()).max(1e-6);
        assert!(
            (num - ana).abs() / denom < 1e-3,
            "{probe_name}: analytic {ana} vs numeric {num}"
        );
    }
}
