//! Command-line pipeline: phantom generation, training, sliding-window
//! inference, and ACC evaluation.

use clap::{Args, Parser, Subcommand};
use fodsr::error::FodError;
use fodsr::eval::{
    acc_stats, compare_methods, export_heatmap_slice, region_mask, standard_rules, Axis,
};
use fodsr::infer::{super_resolve, BlendMode};
use fodsr::model::{identity_checkpoint, Checkpoint, ModelConfig};
use fodsr::nifti::{read_nifti, read_nifti_3d, write_nifti};
use fodsr::phantom::{degrade, gen_phantom, DegradeConfig};
use fodsr::sh::{acc_volume, AccMap, N_COEFFS};
use fodsr::train::{train, TrainConfig, TrainPair};
use fodsr::volume::{FodVolume, TissueFractions, VolumeHeader};
use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "fodsr",
    about = "FOD angular super-resolution: phantoms, training, sliding-window inference, ACC evaluation",
    version
)]
struct Cli {
    /// Cap the worker thread count (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic phantom pair: target/input FOD volumes plus
    /// WM/CGM/SGM fraction maps.
    PhantomGen(PhantomGenArgs),
    /// Train the windowed-attention model on phantom pairs.
    Train(TrainArgs),
    /// Super-resolve a whole volume by overlap-blended sliding windows.
    Infer(InferArgs),
    /// Tissue-stratified ACC report of a prediction against a reference.
    Eval(EvalArgs),
    /// Per-voxel ACC volume (and optional heatmap slice export).
    AccMap(AccMapArgs),
    /// Write a diagnostic checkpoint whose forward pass is the identity.
    IdentityCkpt(IdentityArgs),
}

#[derive(Args)]
struct PhantomGenArgs {
    /// Volume dims: one value (cube) or x,y,z.
    #[arg(long)]
    dims: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (target.nii, input.nii, wm.nii, cgm.nii, sgm.nii).
    #[arg(long)]
    out: PathBuf,
    /// key=value file; flags override its entries.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Degradation: zero degrees above this (2/4/6/8).
    #[arg(long)]
    truncate_lmax: Option<usize>,
    /// Degradation: coefficient noise std-dev.
    #[arg(long)]
    noise_sigma: Option<f64>,
    /// Degradation: damping on surviving l >= 2 coefficients.
    #[arg(long)]
    damping: Option<f64>,
    /// Seed of the degradation noise stream.
    #[arg(long)]
    degrade_seed: Option<u64>,
}

#[derive(Args)]
struct TrainArgs {
    /// Training pair directory (phantom-gen layout); repeatable.
    #[arg(long, required = true)]
    data: Vec<PathBuf>,
    /// Validation pair directory; defaults to the training data.
    #[arg(long)]
    val_data: Vec<PathBuf>,
    /// Output directory (best.ckpt, history.csv).
    #[arg(long)]
    out: PathBuf,
    /// key=value file; flags override its entries.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    patches_per_epoch: Option<usize>,
    #[arg(long)]
    val_patches: Option<usize>,
    #[arg(long)]
    min_tissue_frac: Option<f64>,
    #[arg(long)]
    patience: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Patch size: one value or x,y,z.
    #[arg(long)]
    patch: Option<String>,
    #[arg(long)]
    embed: Option<usize>,
    /// Window size: one value or x,y,z.
    #[arg(long)]
    window: Option<String>,
    /// Blocks per stage, comma separated (e.g. 2,2).
    #[arg(long)]
    depths: Option<String>,
    /// Heads per stage, comma separated (e.g. 3,6).
    #[arg(long)]
    heads: Option<String>,
    #[arg(long)]
    mlp_ratio: Option<usize>,
    /// Disable the alternate-block cyclic shift.
    #[arg(long)]
    no_shift: bool,
    /// Predict input-plus-residual instead of direct regression.
    #[arg(long)]
    residual: bool,
}

#[derive(Args)]
struct InferArgs {
    /// Input FOD volume (.nii).
    #[arg(long, value_name = "IN")]
    input: PathBuf,
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0.25)]
    overlap: f64,
    /// Brain mask volume; voxels outside pass through unchanged.
    #[arg(long)]
    mask: Option<PathBuf>,
    /// Blend window: uniform or cosine.
    #[arg(long, default_value = "uniform")]
    blend: String,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    pred: PathBuf,
    /// Reference (ground-truth) FOD volume.
    #[arg(long, value_name = "REF")]
    reference: PathBuf,
    /// Directory with wm.nii, cgm.nii, sgm.nii.
    #[arg(long)]
    masks: PathBuf,
    /// Report CSV path (default: report.csv next to --pred).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also dump per-voxel ACC values per region to this CSV.
    #[arg(long)]
    acc_values: Option<PathBuf>,
    /// Method label used in the report rows.
    #[arg(long, default_value = "model")]
    method: String,
}

#[derive(Args)]
struct AccMapArgs {
    #[arg(long)]
    pred: PathBuf,
    #[arg(long, value_name = "REF")]
    reference: PathBuf,
    /// Directory with wm.nii/cgm.nii/sgm.nii (union of evaluation regions).
    #[arg(long)]
    masks: Option<PathBuf>,
    /// Explicit mask volume (nonzero = evaluate) instead of --masks.
    #[arg(long)]
    mask: Option<PathBuf>,
    /// Output ACC volume (.nii, NaN where undefined).
    #[arg(long)]
    out: PathBuf,
    /// Export one slice as PGM+CSV: axis x|y|z.
    #[arg(long)]
    slice_axis: Option<String>,
    #[arg(long)]
    slice_index: Option<usize>,
    /// Output path stem for the slice export (.pgm).
    #[arg(long)]
    slice_out: Option<PathBuf>,
}

#[derive(Args)]
struct IdentityArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    patch: Option<String>,
    #[arg(long)]
    embed: Option<usize>,
    #[arg(long)]
    window: Option<String>,
    #[arg(long)]
    depths: Option<String>,
    #[arg(long)]
    heads: Option<String>,
    #[arg(long)]
    mlp_ratio: Option<usize>,
    #[arg(long)]
    no_shift: bool,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: cannot configure {n} threads: {e}");
            return ExitCode::from(1);
        }
    }
    let result = match cli.command {
        Command::PhantomGen(args) => cmd_phantom_gen(args),
        Command::Train(args) => cmd_train(args),
        Command::Infer(args) => cmd_infer(args),
        Command::Eval(args) => cmd_eval(args),
        Command::AccMap(args) => cmd_acc_map(args),
        Command::IdentityCkpt(args) => cmd_identity(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}

type CliResult = Result<(), FodError>;

/// key=value file, one entry per line, '#' comments.
fn read_config_file(path: &Path) -> Result<HashMap<String, String>, FodError> {
    let text = std::fs::read_to_string(path)?;
    let mut map = HashMap::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| {
            FodError::InvalidArgument(format!(
                "{}:{}: expected key=value, got '{line}'",
                path.display(),
                lineno + 1
            ))
        })?;
        map.insert(k.trim().to_string(), v.trim().to_string());
    }
    Ok(map)
}

fn parse_from_file<T: std::str::FromStr>(
    file: &HashMap<String, String>,
    key: &str,
) -> Result<Option<T>, FodError>
where
    T::Err: std::fmt::Display,
{
    match file.get(key) {
        None => Ok(None),
        Some(raw) => raw
            .parse::<T>()
            .map(Some)
            .map_err(|e| FodError::InvalidArgument(format!("config key '{key}' = '{raw}': {e}"))),
    }
}

/// flag > config file > default
fn resolve<T>(flag: Option<T>, file: Option<T>, default: T) -> T {
    flag.or(file).unwrap_or(default)
}

fn parse_triple(s: &str, what: &str) -> Result<[usize; 3], FodError> {
    let parts: Vec<_> = s.split(',').collect();
    let parse = |p: &str| {
        p.trim()
            .parse::<usize>()
            .map_err(|e| FodError::InvalidArgument(format!("{what} component '{p}' invalid: {e}")))
    };
    match parts.len() {
        1 => {
            let v = parse(parts[0])?;
            Ok([v, v, v])
        }
        3 => Ok([parse(parts[0])?, parse(parts[1])?, parse(parts[2])?]),
        n => Err(FodError::InvalidArgument(format!(
            "{what} needs 1 or 3 comma-separated values, got {n}"
        ))),
    }
}

fn parse_list(s: &str, what: &str) -> Result<Vec<usize>, FodError> {
    s.split(',')
        .map(|p| {
            p.trim().parse::<usize>().map_err(|e| {
                FodError::InvalidArgument(format!("{what} component '{p}' invalid: {e}"))
            })
        })
        .collect()
}

fn print_config(command: &str, entries: &[(&str, String)]) {
    println!("# resolved {command} config");
    for (k, v) in entries {
        println!("{k} = {v}");
    }
}

fn fractions_header(dims: [usize; 3]) -> Result<VolumeHeader, FodError> {
    VolumeHeader::isotropic(vec![dims[0], dims[1], dims[2]], 1.25, "tissue fraction")
}

fn cmd_phantom_gen(args: PhantomGenArgs) -> CliResult {
    let file = match &args.config {
        Some(p) => read_config_file(p)?,
        None => HashMap::new(),
    };
    let dims_str = resolve(args.dims, file.get("dims").cloned(), "48".to_string());
    let dims = parse_triple(&dims_str, "dims")?;
    let seed = resolve(args.seed, parse_from_file(&file, "seed")?, 0);
    let degrade_cfg = DegradeConfig {
        truncate_lmax: resolve(
            args.truncate_lmax,
            parse_from_file(&file, "truncate_lmax")?,
            DegradeConfig::default().truncate_lmax,
        ),
        coeff_noise_sigma: resolve(
            args.noise_sigma,
            parse_from_file(&file, "noise_sigma")?,
            DegradeConfig::default().coeff_noise_sigma,
        ),
        amplitude_damping: resolve(
            args.damping,
            parse_from_file(&file, "damping")?,
            DegradeConfig::default().amplitude_damping,
        ),
    };
    let degrade_seed = resolve(
        args.degrade_seed,
        parse_from_file(&file, "degrade_seed")?,
        seed.wrapping_add(1),
    );
    print_config(
        "phantom-gen",
        &[
            ("dims", format!("{},{},{}", dims[0], dims[1], dims[2])),
            ("seed", seed.to_string()),
            ("truncate_lmax", degrade_cfg.truncate_lmax.to_string()),
            ("noise_sigma", degrade_cfg.coeff_noise_sigma.to_string()),
            ("damping", degrade_cfg.amplitude_damping.to_string()),
            ("degrade_seed", degrade_seed.to_string()),
            ("out", args.out.display().to_string()),
        ],
    );

    let (target, fractions) = gen_phantom(dims, seed)?;
    let input = degrade(&target, &degrade_cfg, degrade_seed)?;
    std::fs::create_dir_all(&args.out)?;
    write_nifti(&target.header, &target.data, &args.out.join("target.nii"))?;
    write_nifti(&input.header, &input.data, &args.out.join("input.nii"))?;
    let fh = fractions_header(dims)?;
    write_nifti(&fh, &fractions.wm, &args.out.join("wm.nii"))?;
    write_nifti(&fh, &fractions.cgm, &args.out.join("cgm.nii"))?;
    write_nifti(&fh, &fractions.sgm, &args.out.join("sgm.nii"))?;
    println!(
        "wrote target.nii input.nii wm.nii cgm.nii sgm.nii under {}",
        args.out.display()
    );
    Ok(())
}

fn load_pair(dir: &Path) -> Result<TrainPair, FodError> {
    let (theader, tdata) = read_nifti(&dir.join("target.nii"))?;
    let (iheader, idata) = read_nifti(&dir.join("input.nii"))?;
    let target = FodVolume::new(theader, tdata)?;
    let input = FodVolume::new(iheader, idata)?;
    let fractions = load_fractions(dir, target.spatial_dims())?;
    Ok(TrainPair {
        input,
        target,
        fractions,
    })
}

fn load_fractions(dir: &Path, dims: [usize; 3]) -> Result<TissueFractions, FodError> {
    let (wh, wm) = read_nifti_3d(&dir.join("wm.nii"))?;
    let (_, cgm) = read_nifti_3d(&dir.join("cgm.nii"))?;
    let (_, sgm) = read_nifti_3d(&dir.join("sgm.nii"))?;
    if wh.spatial_dims() != dims {
        return Err(FodError::InvalidArgument(format!(
            "fraction maps in {} have dims {:?}, volume has {:?}",
            dir.display(),
            wh.spatial_dims(),
            dims
        )));
    }
    TissueFractions::new(dims, wm, cgm, sgm)
}

fn cmd_train(args: TrainArgs) -> CliResult {
    let file = match &args.config {
        Some(p) => read_config_file(p)?,
        None => HashMap::new(),
    };
    let dt = TrainConfig::default();
    let tcfg = TrainConfig {
        learning_rate: resolve(args.lr, parse_from_file(&file, "lr")?, dt.learning_rate),
        batch_size: resolve(args.batch, parse_from_file(&file, "batch")?, dt.batch_size),
        max_epochs: resolve(args.epochs, parse_from_file(&file, "epochs")?, dt.max_epochs),
        patches_per_epoch: resolve(
            args.patches_per_epoch,
            parse_from_file(&file, "patches_per_epoch")?,
            dt.patches_per_epoch,
        ),
        val_patches: resolve(
            args.val_patches,
            parse_from_file(&file, "val_patches")?,
            dt.val_patches,
        ),
        min_tissue_frac: resolve(
            args.min_tissue_frac,
            parse_from_file(&file, "min_tissue_frac")?,
            dt.min_tissue_frac,
        ),
        patience: resolve(args.patience, parse_from_file(&file, "patience")?, dt.patience),
        seed: resolve(args.seed, parse_from_file(&file, "seed")?, dt.seed),
    };
    let dm = ModelConfig::default();
    let patch = parse_triple(
        &resolve(args.patch, file.get("patch").cloned(), "16".into()),
        "patch",
    )?;
    let window = parse_triple(
        &resolve(args.window, file.get("window").cloned(), "4".into()),
        "window",
    )?;
    let depths = parse_list(
        &resolve(args.depths, file.get("depths").cloned(), "2,2".into()),
        "depths",
    )?;
    let heads = parse_list(
        &resolve(args.heads, file.get("heads").cloned(), "3,6".into()),
        "heads",
    )?;
    let shift = if args.no_shift {
        false
    } else {
        parse_from_file(&file, "shift")?.unwrap_or(dm.shift)
    };
    let residual = if args.residual {
        true
    } else {
        parse_from_file(&file, "residual")?.unwrap_or(dm.residual)
    };
    let mcfg = ModelConfig {
        patch_size: patch,
        embed_dim: resolve(args.embed, parse_from_file(&file, "embed")?, dm.embed_dim),
        window_size: window,
        depths,
        num_heads: heads,
        shift,
        residual,
        in_channels: N_COEFFS,
        out_channels: N_COEFFS,
        mlp_ratio: resolve(
            args.mlp_ratio,
            parse_from_file(&file, "mlp_ratio")?,
            dm.mlp_ratio,
        ),
    };
    print_config(
        "train",
        &[
            (
                "data",
                args.data
                    .iter()
                    .map(|p| p.display().to_string())
                    .collect::<Vec<_>>()
                    .join(";"),
            ),
            (
                "val_data",
                if args.val_data.is_empty() {
                    "<same as data>".into()
                } else {
                    args.val_data
                        .iter()
                        .map(|p| p.display().to_string())
                        .collect::<Vec<_>>()
                        .join(";")
                },
            ),
            ("epochs", tcfg.max_epochs.to_string()),
            ("lr", tcfg.learning_rate.to_string()),
            ("batch", tcfg.batch_size.to_string()),
            ("patches_per_epoch", tcfg.patches_per_epoch.to_string()),
            ("val_patches", tcfg.val_patches.to_string()),
            ("min_tissue_frac", tcfg.min_tissue_frac.to_string()),
            ("patience", tcfg.patience.to_string()),
            ("seed", tcfg.seed.to_string()),
            (
                "patch",
                format!(
                    "{},{},{}",
                    mcfg.patch_size[0], mcfg.patch_size[1], mcfg.patch_size[2]
                ),
            ),
            ("embed", mcfg.embed_dim.to_string()),
            (
                "window",
                format!(
                    "{},{},{}",
                    mcfg.window_size[0], mcfg.window_size[1], mcfg.window_size[2]
                ),
            ),
            (
                "depths",
                mcfg.depths
                    .iter()
                    .map(|d| d.to_string())
                    .collect::<Vec<_>>()
                    .join(","),
            ),
            (
                "heads",
                mcfg.num_heads
                    .iter()
                    .map(|d| d.to_string())
                    .collect::<Vec<_>>()
                    .join(","),
            ),
            ("shift", mcfg.shift.to_string()),
            ("residual", mcfg.residual.to_string()),
            ("mlp_ratio", mcfg.mlp_ratio.to_string()),
            ("out", args.out.display().to_string()),
        ],
    );

    let train_pairs: Vec<TrainPair> = args
        .data
        .iter()
        .map(|d| load_pair(d))
        .collect::<Result<_, _>>()?;
    let val_pairs: Vec<TrainPair> = if args.val_data.is_empty() {
        train_pairs.clone()
    } else {
        args.val_data
            .iter()
            .map(|d| load_pair(d))
            .collect::<Result<_, _>>()?
    };

    std::fs::create_dir_all(&args.out)?;
    let ckpt_path = args.out.join("best.ckpt");
    let (ckpt, history) = train(&train_pairs, &val_pairs, &mcfg, &tcfg, &ckpt_path)?;
    history.write_csv(&args.out.join("history.csv"))?;
    println!(
        "best epoch {} (val mse {:.6}); checkpoint {} + history.csv written",
        ckpt.epoch,
        ckpt.val_mse,
        ckpt_path.display()
    );
    Ok(())
}

fn parse_blend(s: &str) -> Result<BlendMode, FodError> {
    match s {
        "uniform" => Ok(BlendMode::Uniform),
        "cosine" => Ok(BlendMode::CosineTaper),
        other => Err(FodError::InvalidArgument(format!(
            "blend '{other}' must be uniform or cosine"
        ))),
    }
}

fn load_bool_mask(path: &Path, dims: [usize; 3]) -> Result<Vec<bool>, FodError> {
    let (header, data) = read_nifti_3d(path)?;
    if header.spatial_dims() != dims {
        return Err(FodError::InvalidArgument(format!(
            "mask {} dims {:?} do not match volume {:?}",
            path.display(),
            header.spatial_dims(),
            dims
        )));
    }
    Ok(data.iter().map(|&v| v != 0.0).collect())
}

fn cmd_infer(args: InferArgs) -> CliResult {
    let blend = parse_blend(&args.blend)?;
    print_config(
        "infer",
        &[
            ("input", args.input.display().to_string()),
            ("ckpt", args.ckpt.display().to_string()),
            ("out", args.out.display().to_string()),
            ("overlap", args.overlap.to_string()),
            (
                "mask",
                args.mask
                    .as_ref()
                    .map(|p| p.display().to_string())
                    .unwrap_or_else(|| "<none>".into()),
            ),
            ("blend", args.blend.clone()),
        ],
    );
    let (header, data) = read_nifti(&args.input)?;
    let input = FodVolume::new(header, data)?;
    let ckpt = Checkpoint::load(&args.ckpt)?;
    let mask = match &args.mask {
        Some(p) => Some(load_bool_mask(p, input.spatial_dims())?),
        None => None,
    };
    let (output, report) = super_resolve(&ckpt, &input, args.overlap, mask.as_deref(), blend)?;
    write_nifti(&output.header, &output.data, &args.out)?;
    println!(
        "forward passes: {} (tiles: {}), wall time: {:.2}s",
        report.forward_passes, report.tiles, report.seconds
    );
    println!("wrote {}", args.out.display());
    Ok(())
}

fn load_acc_inputs(pred: &Path, reference: &Path) -> Result<(FodVolume, FodVolume), FodError> {
    let (ph, pd) = read_nifti(pred)?;
    let (rh, rd) = read_nifti(reference)?;
    let pred = FodVolume::new(ph, pd)?;
    let reference = FodVolume::new(rh, rd)?;
    if pred.spatial_dims() != reference.spatial_dims() {
        return Err(FodError::InvalidArgument(
            "prediction and reference dims differ".into(),
        ));
    }
    Ok((pred, reference))
}

/// Union of the three standard evaluation regions.
fn union_region_mask(fr: &TissueFractions) -> Vec<bool> {
    let rules = standard_rules();
    let mut union = vec![false; fr.n_voxels()];
    for rule in &rules {
        for (u, m) in union.iter_mut().zip(region_mask(fr, rule)) {
            *u |= m;
        }
    }
    union
}

fn cmd_eval(args: EvalArgs) -> CliResult {
    let out = args
        .out
        .clone()
        .unwrap_or_else(|| args.pred.with_file_name("report.csv"));
    print_config(
        "eval",
        &[
            ("pred", args.pred.display().to_string()),
            ("ref", args.reference.display().to_string()),
            ("masks", args.masks.display().to_string()),
            ("out", out.display().to_string()),
            ("method", args.method.clone()),
        ],
    );
    let (pred, reference) = load_acc_inputs(&args.pred, &args.reference)?;
    let fractions = load_fractions(&args.masks, pred.spatial_dims())?;
    let union = union_region_mask(&fractions);
    let map = acc_volume(&pred, &reference, &union)?;
    let rules = standard_rules();
    let report = compare_methods(&[(args.method.clone(), &map)], &fractions, &rules)?;
    print!("{}", report.to_table());
    std::fs::write(&out, report.to_csv())?;
    println!("wrote {}", out.display());

    if let Some(values_path) = &args.acc_values {
        let mut csv = String::from("region,acc\n");
        for rule in &rules {
            let mask = region_mask(&fractions, rule);
            let (values, _) = map.select(&mask);
            for v in values {
                let _ = writeln!(csv, "{},{}", rule.name, v);
            }
        }
        std::fs::write(values_path, csv)?;
        println!("wrote {}", values_path.display());
    }
    Ok(())
}

fn write_acc_nifti(map: &AccMap, like: &VolumeHeader, path: &Path) -> CliResult {
    let header = VolumeHeader {
        dims: vec![map.dims[0], map.dims[1], map.dims[2]],
        voxel_size: like.voxel_size,
        affine: like.affine,
        intent: "angular correlation coefficient".into(),
    };
    write_nifti(&header, &map.values, path)
}

fn cmd_acc_map(args: AccMapArgs) -> CliResult {
    print_config(
        "acc-map",
        &[
            ("pred", args.pred.display().to_string()),
            ("ref", args.reference.display().to_string()),
            ("out", args.out.display().to_string()),
        ],
    );
    let (pred, reference) = load_acc_inputs(&args.pred, &args.reference)?;
    let dims = pred.spatial_dims();
    let mask = match (&args.mask, &args.masks) {
        (Some(path), _) => load_bool_mask(path, dims)?,
        (None, Some(dir)) => union_region_mask(&load_fractions(dir, dims)?),
        (None, None) => vec![true; pred.n_voxels()],
    };
    let map = acc_volume(&pred, &reference, &mask)?;
    write_acc_nifti(&map, &pred.header, &args.out)?;
    println!("wrote {}", args.out.display());
    match acc_stats(&map, &vec![true; map.n_voxels()]) {
        Ok(stats) => println!(
            "defined {} undefined {} mean {:.4}",
            stats.n_voxels, stats.n_undefined, stats.mean
        ),
        Err(e) => println!("no stats: {e}"),
    }

    match (args.slice_axis, args.slice_index, args.slice_out) {
        (Some(axis), Some(index), Some(stem)) => {
            let paths = export_heatmap_slice(&map, Axis::parse(&axis)?, index, &stem)?;
            println!(
                "wrote {} {} {}",
                paths.image.display(),
                paths.mask.display(),
                paths.csv.display()
            );
        }
        (None, None, None) => {}
        _ => {
            return Err(FodError::InvalidArgument(
                "slice export needs --slice-axis, --slice-index, and --slice-out together".into(),
            ))
        }
    }
    Ok(())
}

fn cmd_identity(args: IdentityArgs) -> CliResult {
    let dm = ModelConfig::default();
    let cfg = ModelConfig {
        patch_size: parse_triple(&args.patch.unwrap_or_else(|| "16".into()), "patch")?,
        embed_dim: args.embed.unwrap_or(dm.embed_dim),
        window_size: parse_triple(&args.window.unwrap_or_else(|| "4".into()), "window")?,
        depths: parse_list(&args.depths.unwrap_or_else(|| "2,2".into()), "depths")?,
        num_heads: parse_list(&args.heads.unwrap_or_else(|| "3,6".into()), "heads")?,
        shift: !args.no_shift,
        residual: true,
        in_channels: N_COEFFS,
        out_channels: N_COEFFS,
        mlp_ratio: args.mlp_ratio.unwrap_or(dm.mlp_ratio),
    };
    print_config(
        "identity-ckpt",
        &[
            (
                "patch",
                format!(
                    "{},{},{}",
                    cfg.patch_size[0], cfg.patch_size[1], cfg.patch_size[2]
                ),
            ),
            ("embed", cfg.embed_dim.to_string()),
            (
                "depths",
                cfg.depths
                    .iter()
                    .map(|d| d.to_string())
                    .collect::<Vec<_>>()
                    .join(","),
            ),
            ("out", args.out.display().to_string()),
        ],
    );
    let ckpt = identity_checkpoint(&cfg)?;
    ckpt.save(&args.out)?;
    println!("wrote {}", args.out.display());
    Ok(())
}
