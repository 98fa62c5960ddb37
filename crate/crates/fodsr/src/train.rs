//! MSE training loop with Adam, tissue-gated patch sampling, and
//! validation-driven checkpointing.

use crate::error::{FodError, Result};
use crate::model::{
    self, forward, loss_and_grads, Checkpoint, ModelConfig, ModelParams, Real, Tensor,
};
use crate::patch::{extract, sample_patch};
use crate::seeds;
use crate::volume::{FodVolume, TissueFractions};
use std::path::Path;
use std::time::Instant;

/// Seed stream id for the frozen validation patch set.
const VAL_STREAM: u64 = 0x7A11_DA7E;

/// Optimization hyperparameters and sampling budget.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Patches drawn per epoch (rounded up to whole batches).
    pub patches_per_epoch: usize,
    /// Size of the frozen validation patch set.
    pub val_patches: usize,
    pub min_tissue_frac: f64,
    /// Stop after this many epochs without validation improvement.
    pub patience: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.0005,
            batch_size: 2,
            max_epochs: 80,
            patches_per_epoch: 32,
            val_patches: 8,
            min_tissue_frac: 0.2,
            patience: 15,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) {
            return Err(FodError::Config("learning rate must be > 0".into()));
        }
        if self.batch_size == 0 {
            return Err(FodError::Config("batch size must be ≥ 1".into()));
        }
        if self.max_epochs == 0 {
            return Err(FodError::Config("max_epochs must be ≥ 1".into()));
        }
        if self.patches_per_epoch == 0 || self.val_patches == 0 {
            return Err(FodError::Config(
                "patches_per_epoch and val_patches must be ≥ 1".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.min_tissue_frac) {
            return Err(FodError::Config("min_tissue_frac must be in [0,1]".into()));
        }
        Ok(())
    }
}

/// One epoch's record.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_mse: f64,
    pub val_mse: f64,
    pub seconds: f64,
}

/// Learning trajectory plus the index of the best epoch (1-based).
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
}

impl TrainHistory {
    /// CSV with header `epoch,train_mse,val_mse,seconds`.
    ///
    /// The seconds column is wall time and is excluded from determinism
    /// comparisons.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,train_mse,val_mse,seconds\n");
        for r in &self.epochs {
            s.push_str(&format!(
                "{},{},{},{:.3}\n",
                r.epoch, r.train_mse, r.val_mse, r.seconds
            ));
        }
        s
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }
}

/// Adam optimizer state (first/second moments per tensor, shared step count).
#[derive(Debug, Clone)]
pub struct AdamState<T> {
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
    pub t: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl<T: Real> AdamState<T> {
    pub fn new(params: &ModelParams<T>) -> Self {
        let m = params
            .tensors()
            .iter()
            .map(|(_, t)| Tensor::zeros(&t.shape))
            .collect::<Vec<_>>();
        Self {
            v: m.clone(),
            m,
            t: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// One bias-corrected Adam update. Gradients must be finite; a non-finite
/// entry aborts with the offending tensor named.
pub fn adam_step<T: Real>(
    params: &mut ModelParams<T>,
    grads: &ModelParams<T>,
    state: &mut AdamState<T>,
    lr: f64,
) -> Result<()> {
    if let Some(name) = grads.find_non_finite() {
        return Err(FodError::Training(format!(
            "non-finite gradient in tensor '{name}' at adam step {}",
            state.t + 1
        )));
    }
    state.t += 1;
    let t = state.t as i32;
    let b1 = T::of_f64(state.beta1);
    let b2 = T::of_f64(state.beta2);
    let one = T::one();
    let bc1 = T::of_f64(1.0 - state.beta1.powi(t));
    let bc2 = T::of_f64(1.0 - state.beta2.powi(t));
    let lr = T::of_f64(lr);
    let eps = T::of_f64(state.eps);

    let grad_tensors = grads.tensors();
    for (ti, (name, tensor)) in params.tensors_mut().into_iter().enumerate() {
        let g = grad_tensors[ti].1;
        debug_assert_eq!(name, grad_tensors[ti].0);
        let m = &mut state.m[ti].data;
        let v = &mut state.v[ti].data;
        for i in 0..tensor.data.len() {
            let gi = g.data[i];
            m[i] = b1 * m[i] + (one - b1) * gi;
            v[i] = b2 * v[i] + (one - b2) * gi * gi;
            let mhat = m[i] / bc1;
            let vhat = v[i] / bc2;
            tensor.data[i] -= lr * mhat / (vhat.sqrt() + eps);
        }
    }
    Ok(())
}

/// One co-registered (input, target, fractions) triple.
#[derive(Debug, Clone)]
pub struct TrainPair {
    pub input: FodVolume,
    pub target: FodVolume,
    pub fractions: TissueFractions,
}

impl TrainPair {
    pub fn validate(&self) -> Result<()> {
        let dims = self.input.spatial_dims();
        if self.target.spatial_dims() != dims || self.fractions.dims != dims {
            return Err(FodError::InvalidArgument(
                "train pair volumes must share spatial dims".into(),
            ));
        }
        if self.input.n_channels() != self.target.n_channels() {
            return Err(FodError::InvalidArgument(
                "train pair volumes must share channel count".into(),
            ));
        }
        Ok(())
    }
}

/// Per-channel mean/std over majority-tissue voxels of the training pairs.
///
/// Inputs and targets are pooled so channels the degradation suppressed
/// (which the model must reconstruct) are still scaled by their true
/// dynamic range.
pub fn normalization_stats(pairs: &[TrainPair]) -> Result<(Vec<f32>, Vec<f32>)> {
    let channels = pairs[0].input.n_channels();
    let mut sum = vec![0.0f64; channels];
    let mut sumsq = vec![0.0f64; channels];
    let mut count = 0usize;
    for pair in pairs {
        let n = pair.input.n_voxels();
        for i in 0..n {
            if !pair.fractions.is_tissue(i) {
                continue;
            }
            count += 2;
            for c in 0..channels {
                for vol in [&pair.input, &pair.target] {
                    let v = vol.data[i + c * n] as f64;
                    sum[c] += v;
                    sumsq[c] += v * v;
                }
            }
        }
    }
    if count == 0 {
        return Err(FodError::Training(
            "no tissue voxels in the training inputs".into(),
        ));
    }
    let mut mean = vec![0.0f32; channels];
    let mut std = vec![0.0f32; channels];
    for c in 0..channels {
        let m = sum[c] / count as f64;
        let var = (sumsq[c] / count as f64 - m * m).max(0.0);
        mean[c] = m as f32;
        std[c] = (var.sqrt() as f32).max(1e-6);
    }
    Ok((mean, std))
}

struct SampledPatch {
    input: Vec<f32>,
    target: Vec<f32>,
}

/// Draw one normalized (input, target) patch pair.
fn draw_patch(
    pairs: &[TrainPair],
    patch_size: [usize; 3],
    min_frac: f64,
    seed: u64,
    mean: &[f32],
    std: &[f32],
) -> Result<SampledPatch> {
    let pair = &pairs[(seeds::mix(seed, 0xA11) % pairs.len() as u64) as usize];
    let spec = sample_patch(&pair.fractions, patch_size, min_frac, seed, 10_000)?;
    let mut input = extract(&pair.input, &spec)?.data;
    let mut target = extract(&pair.target, &spec)?.data;
    let c = mean.len();
    for row in input.chunks_mut(c) {
        for (j, v) in row.iter_mut().enumerate() {
            *v = (*v - mean[j]) / std[j];
        }
    }
    for row in target.chunks_mut(c) {
        for (j, v) in row.iter_mut().enumerate() {
            *v = (*v - mean[j]) / std[j];
        }
    }
    Ok(SampledPatch { input, target })
}

/// Train the model; the best-validation checkpoint is written to
/// `ckpt_path` (atomically) every time validation improves.
///
/// Loss is MSE in per-channel-normalized coefficient space. Fully
/// deterministic given the seed in `tcfg` (wall-time fields aside).
pub fn train(
    train_pairs: &[TrainPair],
    val_pairs: &[TrainPair],
    mcfg: &ModelConfig,
    tcfg: &TrainConfig,
    ckpt_path: &Path,
) -> Result<(Checkpoint, TrainHistory)> {
    mcfg.validate()?;
    tcfg.validate()?;
    if train_pairs.is_empty() || val_pairs.is_empty() {
        return Err(FodError::InvalidArgument(
            "need at least one training and one validation pair".into(),
        ));
    }
    for p in train_pairs.iter().chain(val_pairs) {
        p.validate()?;
        if p.input.n_channels() != mcfg.in_channels {
            return Err(FodError::InvalidArgument(format!(
                "volume has {} channels, model expects {}",
                p.input.n_channels(),
                mcfg.in_channels
            )));
        }
    }

    let (mean, std) = normalization_stats(train_pairs)?;

    // Frozen validation patch set with a dedicated seed stream.
    let val_seed = seeds::mix(tcfg.seed, VAL_STREAM);
    let mut val_set = Vec::with_capacity(tcfg.val_patches);
    for i in 0..tcfg.val_patches {
        val_set.push(
            draw_patch(
                val_pairs,
                mcfg.patch_size,
                tcfg.min_tissue_frac,
                seeds::mix(val_seed, i as u64),
                &mean,
                &std,
            )
            .map_err(|e| match e {
                FodError::Sampling(msg) => {
                    FodError::Training(format!("validation patch sampling failed: {msg}"))
                }
                other => other,
            })?,
        );
    }

    let mut params: ModelParams<f32> = model::init_params(mcfg, tcfg.seed)?;
    let mut adam = AdamState::new(&params);

    let steps_per_epoch = tcfg.patches_per_epoch.div_ceil(tcfg.batch_size);
    let mut history = TrainHistory::default();
    let mut best_val = f64::INFINITY;
    let mut best: Option<Checkpoint> = None;

    for epoch in 1..=tcfg.max_epochs {
        let t0 = Instant::now();
        let epoch_seed = seeds::mix(tcfg.seed, 0xE0000 + epoch as u64);
        let mut train_loss_sum = 0.0f64;

        for step in 0..steps_per_epoch {
            let mut batch_grads: Option<ModelParams<f32>> = None;
            let mut batch_loss = 0.0f64;
            for b in 0..tcfg.batch_size {
                let draw_seed = seeds::mix(epoch_seed, (step * tcfg.batch_size + b) as u64);
                let sample = draw_patch(
                    train_pairs,
                    mcfg.patch_size,
                    tcfg.min_tissue_frac,
                    draw_seed,
                    &mean,
                    &std,
                )
                .map_err(|e| match e {
                    FodError::Sampling(msg) => {
                        FodError::Training(format!("patch sampling failed: {msg}"))
                    }
                    other => other,
                })?;
                let (loss, grads, _) =
                    loss_and_grads(&params, mcfg, &sample.input, &sample.target)?;
                if !loss.is_finite() {
                    return Err(FodError::Training(format!(
                        "non-finite training loss at epoch {epoch} step {step}"
                    )));
                }
                batch_loss += loss as f64;
                batch_grads = Some(match batch_grads {
                    None => grads,
                    Some(mut acc) => {
                        let g = grads.tensors();
                        for (ti, (_, tensor)) in acc.tensors_mut().into_iter().enumerate() {
                            for (a, &b) in tensor.data.iter_mut().zip(&g[ti].1.data) {
                                *a += b;
                            }
                        }
                        acc
                    }
                });
            }
            let mut grads = batch_grads.expect("batch_size ≥ 1");
            let scale = 1.0 / tcfg.batch_size as f32;
            for (_, tensor) in grads.tensors_mut() {
                for v in &mut tensor.data {
                    *v *= scale;
                }
            }
            adam_step(&mut params, &grads, &mut adam, tcfg.learning_rate)?;
            train_loss_sum += batch_loss / tcfg.batch_size as f64;
        }
        let train_mse = train_loss_sum / steps_per_epoch as f64;

        let mut val_sum = 0.0f64;
        for sample in &val_set {
            let out = forward(&params, mcfg, &sample.input)?;
            let mse: f64 = out
                .iter()
                .zip(&sample.target)
                .map(|(a, b)| ((a - b) as f64).powi(2))
                .sum::<f64>()
                / out.len() as f64;
            val_sum += mse;
        }
        let val_mse = val_sum / val_set.len() as f64;

        history.epochs.push(EpochRecord {
            epoch,
            train_mse,
            val_mse,
            seconds: t0.elapsed().as_secs_f64(),
        });

        if val_mse < best_val {
            best_val = val_mse;
            history.best_epoch = epoch;
            let ckpt = Checkpoint {
                config: mcfg.clone(),
                params: params.clone(),
                norm_mean: mean.clone(),
                norm_std: std.clone(),
                seed: tcfg.seed,
                epoch: epoch as u32,
                val_mse: val_mse as f32,
                learning_rate: tcfg.learning_rate as f32,
                batch_size: tcfg.batch_size as u32,
            };
            ckpt.save(ckpt_path)?;
            best = Some(ckpt);
        } else if epoch - history.best_epoch >= tcfg.patience {
            break; // plateau
        }
    }

    Ok((best.expect("at least one epoch ran"), history))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phantom::{degrade, gen_phantom, DegradeConfig};
    use tempfile::TempDir;

    fn micro_cfg() -> ModelConfig {
        ModelConfig {
            patch_size: [2, 2, 2],
            embed_dim: 4,
            window_size: [2, 2, 2],
            depths: vec![1],
            num_heads: vec![2],
            shift: false,
            residual: false,
            in_channels: 3,
            out_channels: 3,
            mlp_ratio: 2,
        }
    }

    #[test]
    fn adam_zero_gradient_moves_only_seeded_state() {
        let cfg = micro_cfg();
        let mut params: ModelParams<f64> = model::init_params(&cfg, 0).unwrap();
        let before = params.clone();
        let zero_grads = ModelParams::<f64>::zeros(&cfg).unwrap();
        let mut state = AdamState::new(&params);
        state.m[0].data[0] = 1.0;
        state.v[0].data[0] = 1.0;
        adam_step(&mut params, &zero_grads, &mut state, 0.1).unwrap();
        let pt = params.tensors();
        let bt = before.tensors();
        for ti in 0..pt.len() {
            for i in 0..pt[ti].1.data.len() {
                if ti == 0 && i == 0 {
                    continue;
                }
                assert_eq!(pt[ti].1.data[i], bt[ti].1.data[i], "tensor {ti} [{i}]");
            }
        }
        // moments decayed by beta1/beta2
        assert!((state.m[0].data[0] - 0.9).abs() < 1e-12);
        assert!((state.v[0].data[0] - 0.999).abs() < 1e-12);
    }

    #[test]
    fn adam_first_step_is_signlike() {
        // constant gradient g at t=1: Δ = −lr·ĝ/(√(ĝ²)+ε) ≈ −lr·sign(g)
        let cfg = micro_cfg();
        let mut params = ModelParams::<f64>::zeros(&cfg).unwrap();
        let mut grads = ModelParams::<f64>::zeros(&cfg).unwrap();
        for (_, t) in grads.tensors_mut() {
            t.fill(0.37);
        }
        let mut state = AdamState::new(&params);
        adam_step(&mut params, &grads, &mut state, 0.01).unwrap();
        for (_, t) in params.tensors() {
            for &v in &t.data {
                assert!((v + 0.01).abs() < 1e-6, "expected ≈ −lr, got {v}");
            }
        }
    }

    #[test]
    fn adam_rejects_non_finite_gradients() {
        let cfg = micro_cfg();
        let mut params = ModelParams::<f64>::zeros(&cfg).unwrap();
        let mut grads = ModelParams::<f64>::zeros(&cfg).unwrap();
        grads.tensors_mut()[3].1.data[0] = f64::NAN;
        let mut state = AdamState::new(&params);
        match adam_step(&mut params, &grads, &mut state, 0.01) {
            Err(FodError::Training(msg)) => assert!(msg.contains("embed_norm.b"), "{msg}"),
            other => panic!("expected training error, got {other:?}"),
        }
    }

    /// Scalar convergence: minimize f(x) = x² from x=1 with Adam.
    #[test]
    fn adam_scalar_convergence() {
        let mut x = 1.0f64;
        let (b1, b2, eps, lr) = (0.9, 0.999, 1e-8, 0.1);
        let (mut m, mut v) = (0.0, 0.0);
        for t in 1..=100i32 {
            let g = 2.0 * x;
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            let mhat = m / (1.0 - b1.powi(t));
            let vhat = v / (1.0 - b2.powi(t));
            x -= lr * mhat / (vhat.sqrt() + eps);
        }
        assert!(x.abs() < 0.1, "x = {x}");
    }

    fn tiny_setup() -> (Vec<TrainPair>, ModelConfig, TrainConfig) {
        let (target, fractions) = gen_phantom([16, 16, 16], 3).unwrap();
        let input = degrade(&target, &DegradeConfig::default(), 5).unwrap();
        let pairs = vec![TrainPair {
            input,
            target,
            fractions,
        }];
        let mcfg = ModelConfig {
            patch_size: [8, 8, 8],
            embed_dim: 8,
            window_size: [4, 4, 4],
            depths: vec![1, 1],
            num_heads: vec![2, 2],
            shift: true,
            residual: false,
            in_channels: 45,
            out_channels: 45,
            mlp_ratio: 2,
        };
        let tcfg = TrainConfig {
            max_epochs: 2,
            patches_per_epoch: 4,
            val_patches: 2,
            ..TrainConfig::default()
        };
        (pairs, mcfg, tcfg)
    }

    #[test]
    fn train_is_deterministic_and_checkpoints() {
        let (pairs, mcfg, tcfg) = tiny_setup();
        let dir = TempDir::new().unwrap();
        let p1 = dir.path().join("a.ckpt");
        let p2 = dir.path().join("b.ckpt");
        let (ck1, h1) = train(&pairs, &pairs, &mcfg, &tcfg, &p1).unwrap();
        let (ck2, h2) = train(&pairs, &pairs, &mcfg, &tcfg, &p2).unwrap();
        assert_eq!(ck1.params, ck2.params);
        let strip = |h: &TrainHistory| {
            h.epochs
                .iter()
                .map(|e| (e.epoch, e.train_mse.to_bits(), e.val_mse.to_bits()))
                .collect::<Vec<_>>()
        };
        assert_eq!(strip(&h1), strip(&h2));
        assert_eq!(h1.best_epoch, h2.best_epoch);
        // checkpoint file loads back to the returned best, with the paper
        // defaults in its metadata
        let loaded = Checkpoint::load(&p1).unwrap();
        assert_eq!(loaded.params, ck1.params);
        assert_eq!(loaded.learning_rate, 0.0005);
        assert_eq!(loaded.batch_size, 2);
    }

    #[test]
    fn best_checkpoint_has_minimal_val_mse() {
        let (pairs, mcfg, tcfg) = tiny_setup();
        let dir = TempDir::new().unwrap();
        let (ckpt, history) =
            train(&pairs, &pairs, &mcfg, &tcfg, &dir.path().join("c.ckpt")).unwrap();
        let min_val = history
            .epochs
            .iter()
            .map(|e| e.val_mse)
            .fold(f64::INFINITY, f64::min);
        assert_eq!(ckpt.val_mse, min_val as f32);
        let best = &history.epochs[history.best_epoch - 1];
        assert_eq!(best.val_mse, min_val);
    }

    #[test]
    fn train_rejects_empty_datasets() {
        let (pairs, mcfg, tcfg) = tiny_setup();
        let dir = TempDir::new().unwrap();
        assert!(train(&[], &pairs, &mcfg, &tcfg, &dir.path().join("x.ckpt")).is_err());
        assert!(train(&pairs, &[], &mcfg, &tcfg, &dir.path().join("x.ckpt")).is_err());
    }

    #[test]
    fn train_aborts_on_degenerate_masks() {
        let (mut pairs, mcfg, tcfg) = tiny_setup();
        pairs[0].fractions = TissueFractions::zeros([16, 16, 16]);
        let dir = TempDir::new().unwrap();
        match train(&pairs, &pairs, &mcfg, &tcfg, &dir.path().join("x.ckpt")) {
            Err(FodError::Training(msg)) => {
                assert!(msg.contains("tissue") || msg.contains("sampling"), "{msg}")
            }
            other => panic!("expected training abort, got {other:?}"),
        }
    }
}
