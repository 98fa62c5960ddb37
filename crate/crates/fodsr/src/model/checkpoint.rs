//! Versioned binary checkpoint: config block, per-channel normalization,
//! training metadata, and named parameter tensors (all little-endian).

use super::{init_params, ModelConfig, ModelParams, Tensor};
use crate::error::{FodError, Result};
use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

const MAGIC: &[u8; 11] = b"FODSRCKPT1\n";
const VERSION: u32 = 1;

/// A trained (or diagnostic) model ready for inference.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub params: ModelParams<f32>,
    /// Per-input-channel affine normalization computed on the training set.
    pub norm_mean: Vec<f32>,
    pub norm_std: Vec<f32>,
    pub seed: u64,
    pub epoch: u32,
    pub val_mse: f32,
    pub learning_rate: f32,
    pub batch_size: u32,
}

impl Checkpoint {
    /// Normalize a `[tokens, C]` channel-fastest buffer in place.
    pub fn normalize(&self, data: &mut [f32]) {
        let c = self.norm_mean.len();
        for row in data.chunks_mut(c) {
            for (j, v) in row.iter_mut().enumerate() {
                *v = (*v - self.norm_mean[j]) / self.norm_std[j];
            }
        }
    }

    /// Inverse of [`Self::normalize`].
    pub fn denormalize(&self, data: &mut [f32]) {
        let c = self.norm_mean.len();
        for row in data.chunks_mut(c) {
            for (j, v) in row.iter_mut().enumerate() {
                *v = *v * self.norm_std[j] + self.norm_mean[j];
            }
        }
    }

    /// Write atomically (temp file in the same directory, then rename).
    pub fn save(&self, path: &Path) -> Result<()> {
        let dir = path.parent().unwrap_or_else(|| Path::new("."));
        std::fs::create_dir_all(dir)?;
        let tmp = tempfile::NamedTempFile::new_in(dir)?;
        {
            let mut w = BufWriter::new(tmp.as_file());
            self.write_to(&mut w)?;
            w.flush()?;
        }
        tmp.persist(path)
            .map_err(|e| FodError::Io(e.error))?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        let mut r = BufReader::new(file);
        Self::read_from(&mut r).map_err(|e| match e {
            FodError::Io(io) if io.kind() == std::io::ErrorKind::UnexpectedEof => {
                FodError::Format(format!("{}: truncated checkpoint", path.display()))
            }
            other => other,
        })
    }

    fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_u32::<LittleEndian>(VERSION)?;
        let cfg = &self.config;
        for d in cfg.patch_size {
            w.write_u32::<LittleEndian>(d as u32)?;
        }
        w.write_u32::<LittleEndian>(cfg.embed_dim as u32)?;
        for d in cfg.window_size {
            w.write_u32::<LittleEndian>(d as u32)?;
        }
        w.write_u32::<LittleEndian>(cfg.depths.len() as u32)?;
        for &d in &cfg.depths {
            w.write_u32::<LittleEndian>(d as u32)?;
        }
        for &h in &cfg.num_heads {
            w.write_u32::<LittleEndian>(h as u32)?;
        }
        w.write_u8(cfg.shift as u8)?;
        w.write_u8(cfg.residual as u8)?;
        w.write_u32::<LittleEndian>(cfg.in_channels as u32)?;
        w.write_u32::<LittleEndian>(cfg.out_channels as u32)?;
        w.write_u32::<LittleEndian>(cfg.mlp_ratio as u32)?;

        w.write_u32::<LittleEndian>(self.norm_mean.len() as u32)?;
        for &v in &self.norm_mean {
            w.write_f32::<LittleEndian>(v)?;
        }
        for &v in &self.norm_std {
            w.write_f32::<LittleEndian>(v)?;
        }

        w.write_u64::<LittleEndian>(self.seed)?;
        w.write_u32::<LittleEndian>(self.epoch)?;
        w.write_f32::<LittleEndian>(self.val_mse)?;
        w.write_f32::<LittleEndian>(self.learning_rate)?;
        w.write_u32::<LittleEndian>(self.batch_size)?;

        let tensors = self.params.tensors();
        w.write_u32::<LittleEndian>(tensors.len() as u32)?;
        for (name, t) in tensors {
            let bytes = name.as_bytes();
            w.write_u16::<LittleEndian>(bytes.len() as u16)?;
            w.write_all(bytes)?;
            w.write_u8(t.shape.len() as u8)?;
            for &d in &t.shape {
                w.write_u32::<LittleEndian>(d as u32)?;
            }
            for &v in &t.data {
                w.write_f32::<LittleEndian>(v)?;
            }
        }
        Ok(())
    }

    fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        let mut magic = [0u8; 11];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(FodError::Format("bad checkpoint magic".into()));
        }
        let version = r.read_u32::<LittleEndian>()?;
        if version != VERSION {
            return Err(FodError::Unsupported(format!(
                "checkpoint version {version}, expected {VERSION}"
            )));
        }
        let mut patch = [0usize; 3];
        for d in &mut patch {
            *d = r.read_u32::<LittleEndian>()? as usize;
        }
        let embed = r.read_u32::<LittleEndian>()? as usize;
        let mut window = [0usize; 3];
        for d in &mut window {
            *d = r.read_u32::<LittleEndian>()? as usize;
        }
        let n_stages = r.read_u32::<LittleEndian>()? as usize;
        if n_stages == 0 || n_stages > 4 {
            return Err(FodError::Format(format!(
                "checkpoint declares {n_stages} stages"
            )));
        }
        let mut depths = Vec::with_capacity(n_stages);
        for _ in 0..n_stages {
            depths.push(r.read_u32::<LittleEndian>()? as usize);
        }
        let mut heads = Vec::with_capacity(n_stages);
        for _ in 0..n_stages {
            heads.push(r.read_u32::<LittleEndian>()? as usize);
        }
        let shift = r.read_u8()? != 0;
        let residual = r.read_u8()? != 0;
        let in_channels = r.read_u32::<LittleEndian>()? as usize;
        let out_channels = r.read_u32::<LittleEndian>()? as usize;
        let mlp_ratio = r.read_u32::<LittleEndian>()? as usize;
        let config = ModelConfig {
            patch_size: patch,
            embed_dim: embed,
            window_size: window,
            depths,
            num_heads: heads,
            shift,
            residual,
            in_channels,
            out_channels,
            mlp_ratio,
        };
        config.validate()?;

        let nc = r.read_u32::<LittleEndian>()? as usize;
        if nc != in_channels {
            return Err(FodError::Format(format!(
                "normalization has {nc} channels, config expects {in_channels}"
            )));
        }
        let mut norm_mean = vec![0.0f32; nc];
        for v in &mut norm_mean {
            *v = r.read_f32::<LittleEndian>()?;
        }
        let mut norm_std = vec![0.0f32; nc];
        for v in &mut norm_std {
            *v = r.read_f32::<LittleEndian>()?;
        }

        let seed = r.read_u64::<LittleEndian>()?;
        let epoch = r.read_u32::<LittleEndian>()?;
        let val_mse = r.read_f32::<LittleEndian>()?;
        let learning_rate = r.read_f32::<LittleEndian>()?;
        let batch_size = r.read_u32::<LittleEndian>()?;

        let mut params = ModelParams::<f32>::zeros(&config)?;
        let n_tensors = r.read_u32::<LittleEndian>()? as usize;
        let mut expected = params.tensors_mut();
        if n_tensors != expected.len() {
            return Err(FodError::Format(format!(
                "checkpoint has {n_tensors} tensors, config expects {}",
                expected.len()
            )));
        }
        for (name, tensor) in expected.iter_mut() {
            let len = r.read_u16::<LittleEndian>()? as usize;
            let mut buf = vec![0u8; len];
            r.read_exact(&mut buf)?;
            let stored = String::from_utf8_lossy(&buf);
            if stored != *name {
                return Err(FodError::Format(format!(
                    "tensor order mismatch: stored '{stored}', expected '{name}'"
                )));
            }
            let ndim = r.read_u8()? as usize;
            let mut shape = Vec::with_capacity(ndim);
            for _ in 0..ndim {
                shape.push(r.read_u32::<LittleEndian>()? as usize);
            }
            if shape != tensor.shape {
                return Err(FodError::Format(format!(
                    "tensor '{name}' shape {shape:?} does not match config shape {:?}",
                    tensor.shape
                )));
            }
            for v in &mut tensor.data {
                *v = r.read_f32::<LittleEndian>()?;
            }
        }
        Ok(Self {
            config,
            params,
            norm_mean,
            norm_std,
            seed,
            epoch,
            val_mse,
            learning_rate,
            batch_size,
        })
    }
}

/// Diagnostic checkpoint whose forward pass is the identity map: residual
/// mode with a zeroed head and identity normalization.
pub fn identity_checkpoint(base: &ModelConfig) -> Result<Checkpoint> {
    let mut config = base.clone();
    config.residual = true;
    config.out_channels = config.in_channels;
    config.validate()?;
    let mut params: ModelParams<f32> = init_params(&config, 0)?;
    params.head.w = Tensor::zeros(&params.head.w.shape);
    params.head.b = Tensor::zeros(&params.head.b.shape);
    Ok(Checkpoint {
        norm_mean: vec![0.0; config.in_channels],
        norm_std: vec![1.0; config.in_channels],
        config,
        params,
        seed: 0,
        epoch: 0,
        val_mse: 0.0,
        learning_rate: 0.0,
        batch_size: 0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::TempDir;

    fn small_cfg() -> ModelConfig {
        ModelConfig {
            patch_size: [8, 8, 8],
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

    #[test]
    fn save_load_roundtrip() {
        let dir = TempDir::new().unwrap();
        let path = dir.path().join("m.ckpt");
        let cfg = small_cfg();
        let ckpt = Checkpoint {
            params: init_params(&cfg, 11).unwrap(),
            norm_mean: (0..5).map(|i| i as f32 * 0.1).collect(),
            norm_std: (0..5).map(|i| 1.0 + i as f32 * 0.01).collect(),
            config: cfg,
            seed: 99,
            epoch: 17,
            val_mse: 0.125,
            learning_rate: 5e-4,
            batch_size: 2,
        };
        ckpt.save(&path).unwrap();
        let loaded = Checkpoint::load(&path).unwrap();
        assert_eq!(loaded, ckpt);
    }

    #[test]
    fn load_rejects_bad_magic() {
        let dir = TempDir::new().unwrap();
        let path = dir.path().join("bad.ckpt");
        std::fs::write(&path, b"NOTACKPTFILE____________").unwrap();
        assert!(matches!(Checkpoint::load(&path), Err(FodError::Format(_))));
    }

    #[test]
    fn load_rejects_truncation() {
        let dir = TempDir::new().unwrap();
        let path = dir.path().join("t.ckpt");
        let cfg = small_cfg();
        let ckpt = Checkpoint {
            params: init_params(&cfg, 1).unwrap(),
            norm_mean: vec![0.0; 5],
            norm_std: vec![1.0; 5],
            config: cfg,
            seed: 0,
            epoch: 0,
            val_mse: 0.0,
            learning_rate: 0.0,
            batch_size: 0,
        };
        ckpt.save(&path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() / 2]).unwrap();
        assert!(Checkpoint::load(&path).is_err());
    }

    #[test]
    fn normalize_roundtrip() {
        let cfg = small_cfg();
        let ckpt = Checkpoint {
            params: init_params(&cfg, 1).unwrap(),
            norm_mean: vec![1.0, -2.0, 0.5, 0.0, 3.0],
            norm_std: vec![2.0, 0.5, 1.5, 1.0, 0.25],
            config: cfg,
            seed: 0,
            epoch: 0,
            val_mse: 0.0,
            learning_rate: 0.0,
            batch_size: 0,
        };
        let orig: Vec<f32> = (0..20).map(|i| i as f32 * 0.3 - 2.0).collect();
        let mut data = orig.clone();
        ckpt.normalize(&mut data);
        assert_ne!(data, orig);
        ckpt.denormalize(&mut data);
        for (a, b) in data.iter().zip(&orig) {
            assert!((a - b).abs() < 1e-5);
        }
    }
}
