//! `skullrec` command-line entry point.
//!
//! Exit codes: 0 success, 1 data or runtime error, 2 usage error.
//! Results (paths, JSON) go to stdout; logs go to stderr.

use std::error::Error;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{CommandFactory, FromArgMatches, Parser, Subcommand, ValueEnum};
use serde_json::json;

use skullrec::dataset::{build_pairs, split_dataset, DatasetManifest, KindSelection, ManifestEntry, PairOptions, Split, SplitCounts};
use skullrec::io::{load_volume, save_volume, PathFormat};
use skullrec::ops::{make_phantom, PhantomSpec};
use skullrec::registration::extract_implant;
use skullrec::trainer::{evaluate, reconstruct, train, Checkpoint, TrainConfig, FORMAT_VERSION};

#[derive(Parser)]
#[command(name = "skullrec", about = "Skull reconstruction and implant design pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum OutFormat {
    Nrrd,
    Nii,
    #[value(name = "nii.gz")]
    NiiGz,
}

impl OutFormat {
    fn ext(self) -> &'static str {
        match self {
            OutFormat::Nrrd => "nrrd",
            OutFormat::Nii => "nii",
            OutFormat::NiiGz => "nii.gz",
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Convert between NRRD and NIfTI (chosen by file extension).
    Convert {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Output format; overrides the extension of --out.
        #[arg(long)]
        format: Option<OutFormat>,
    },
    /// Generate phantom skulls.
    Phantom {
        #[arg(long)]
        seed: u64,
        /// Grid size as X,Y,Z.
        #[arg(long, value_delimiter = ',', required = true)]
        dims: Vec<usize>,
        /// Output file, or a directory when --count is given.
        #[arg(long)]
        out: PathBuf,
        /// Number of phantoms; phantom i uses seed + i.
        #[arg(long)]
        count: Option<usize>,
        /// File format used with --count.
        #[arg(long, default_value = "nrrd")]
        format: OutFormat,
        /// Also write a manifest listing the phantoms as complete skulls.
        #[arg(long)]
        manifest: Option<PathBuf>,
    },
    /// Build defective/implant pairs from a manifest of complete skulls.
    Inject {
        #[arg(long)]
        manifest_in: PathBuf,
        #[arg(long)]
        manifest_out: PathBuf,
        #[arg(long)]
        kind: KindSelection,
        #[arg(long)]
        seed: u64,
        /// Pair options as inline JSON or a path to a JSON file.
        #[arg(long)]
        spec: Option<String>,
        /// Assign train,val,test splits with these counts first.
        #[arg(long, value_delimiter = ',')]
        split: Option<Vec<usize>>,
    },
    /// Train (or resume) the reconstruction network.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Overrides the config's preprocessing worker count.
        #[arg(long)]
        workers: Option<usize>,
    },
    /// Score a checkpoint on one split.
    Evaluate {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        split: Split,
    },
    /// Predict the complete skull for a defective one.
    Reconstruct {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Align a reconstruction to its defective input and subtract.
    ExtractImplant {
        #[arg(long)]
        recon: PathBuf,
        #[arg(long)]
        defect: PathBuf,
        #[arg(long)]
        out_implant: PathBuf,
        #[arg(long)]
        out_transform: PathBuf,
    },
}

enum Failure {
    Usage(String),
    Runtime(Box<dyn Error>),
}

impl<E: Error + 'static> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure::Runtime(Box::new(e))
    }
}

type CliResult = Result<(), Failure>;

fn volume_path(path: &Path, flag: &str) -> Result<(), Failure> {
    match PathFormat::from_path(path) {
        Some(_) => Ok(()),
        None => Err(Failure::Usage(format!(
            "{flag} {}: expected a .nrrd, .nii or .nii.gz file",
            path.display()
        ))),
    }
}

/// File name without its volume extension.
fn volume_stem(path: &Path) -> String {
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("out");
    [".nii.gz", ".nii", ".nrrd"]
        .iter()
        .find_map(|e| name.strip_suffix(e))
        .unwrap_or(name)
        .to_string()
}

fn with_ext(path: &Path, ext: &str) -> PathBuf {
    path.with_file_name(format!("{}.{ext}", volume_stem(path)))
}

fn write_text(path: &Path, text: &str) -> Result<(), Failure> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(path, text)?;
    Ok(())
}

fn convert(input: &Path, out: &Path, format: Option<OutFormat>) -> CliResult {
    volume_path(input, "--in")?;
    let out = match format {
        Some(f) => with_ext(out, f.ext()),
        None => out.to_path_buf(),
    };
    volume_path(&out, "--out")?;
    let vol = load_volume(input)?;
    save_volume(&vol, &out)?;
    println!("{}", out.display());
    Ok(())
}

fn phantom(seed: u64, dims: &[usize], out: &Path, count: Option<usize>, format: OutFormat, manifest: Option<&Path>) -> CliResult {
    let dims: [usize; 3] = dims
        .try_into()
        .map_err(|_| Failure::Usage(format!("--dims needs three values X,Y,Z, got {}", dims.len())))?;
    let jobs: Vec<(String, u64, PathBuf)> = match count {
        None => {
            volume_path(out, "--out")?;
            vec![(volume_stem(out), seed, out.to_path_buf())]
        }
        Some(k) => (0..k)
            .map(|i| {
                let id = format!("skull_{i:03}");
                let path = out.join(format!("{id}.{}", format.ext()));
                (id, seed.wrapping_add(i as u64), path)
            })
            .collect(),
    };
    let mut entries = Vec::new();
    for (id, s, path) in jobs {
        let vol = make_phantom(&PhantomSpec::for_dims(dims, s))?;
        save_volume(&vol, &path)?;
        println!("{}", path.display());
        entries.push((id, s, path));
    }
    if let Some(mpath) = manifest {
        let base = mpath.parent().filter(|d| !d.as_os_str().is_empty()).unwrap_or(Path::new("."));
        std::fs::create_dir_all(base)?;
        let rows = entries
            .into_iter()
            .map(|(id, s, path)| ManifestEntry {
                seed: Some(s),
                ..ManifestEntry::complete_only(id, skullrec::dataset::relative_path(&path, base))
            })
            .collect();
        DatasetManifest::new(rows, base).save(mpath)?;
        println!("{}", mpath.display());
    }
    Ok(())
}

fn pair_options(spec: Option<&str>) -> Result<PairOptions, Failure> {
    let Some(spec) = spec else {
        return Ok(PairOptions::default());
    };
    let text = if spec.trim_start().starts_with('{') {
        spec.to_string()
    } else {
        std::fs::read_to_string(spec)?
    };
    Ok(serde_json::from_str(&text)?)
}

fn inject(
    manifest_in: &Path,
    manifest_out: &Path,
    kind: KindSelection,
    seed: u64,
    spec: Option<&str>,
    split: Option<&[usize]>,
) -> CliResult {
    let mut opts = pair_options(spec)?;
    opts.kinds = kind;
    let mut input = DatasetManifest::load(manifest_in)?;
    if let Some(counts) = split {
        let [train, val, test]: [usize; 3] = counts
            .try_into()
            .map_err(|_| Failure::Usage("--split needs three counts train,val,test".into()))?;
        let entries = split_dataset(&input.entries, SplitCounts::new(train, val, test), seed)?;
        input = DatasetManifest::new(entries, input.base_dir.clone());
    }
    let out = build_pairs(&input, &opts, seed, manifest_out)?;
    out.save(manifest_out)?;
    let skipped = out.entries.iter().filter(|e| e.skipped.is_some()).count();
    log::info!("{} rows written, {skipped} skipped", out.entries.len());
    println!("{}", manifest_out.display());
    Ok(())
}

fn train_cmd(config: &Path, resume: Option<&Path>, workers: Option<usize>) -> CliResult {
    let mut cfg = TrainConfig::load(config)?;
    if let Some(w) = workers {
        cfg.workers = w;
    }
    let resume = resume.map(Checkpoint::load).transpose()?;
    let manifest = DatasetManifest::load(&cfg.manifest)?;
    let outcome = train(&manifest, &cfg, resume)?;
    let best = cfg.checkpoint_dir.join("best.skrc");
    let report = json!({
        "last": cfg.checkpoint_dir.join("last.skrc"),
        "best": outcome.best_val_dice.map(|_| best),
        "epoch": outcome.last.epoch,
        "best_val_dice": outcome.best_val_dice,
        "final_loss": outcome.history.last().map(|h| h.mean_loss),
    });
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(())
}

fn evaluate_cmd(ckpt: &Path, manifest: &Path, split: Split) -> CliResult {
    let ck = Checkpoint::load(ckpt)?;
    let manifest = DatasetManifest::load(manifest)?;
    let report = evaluate(&ck, &manifest, split)?;
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(())
}

fn reconstruct_cmd(ckpt: &Path, input: &Path, out: &Path) -> CliResult {
    volume_path(input, "--in")?;
    volume_path(out, "--out")?;
    let ck = Checkpoint::load(ckpt)?;
    let defective = load_volume(input)?;
    save_volume(&reconstruct(&ck, &defective)?, out)?;
    println!("{}", out.display());
    Ok(())
}

fn extract_cmd(recon: &Path, defect: &Path, out_implant: &Path, out_transform: &Path) -> CliResult {
    for (p, flag) in [(recon, "--recon"), (defect, "--defect"), (out_implant, "--out-implant")] {
        volume_path(p, flag)?;
    }
    let r = skullrec::volume::binarize(&load_volume(recon)?, 0.5);
    let d = skullrec::volume::binarize(&load_volume(defect)?, 0.5);
    let (implant, reg) = extract_implant::<f64>(&r, &d)?;
    if !reg.converged {
        log::warn!("registration did not converge (dice {:.4}); implant may be unreliable", reg.dice);
    }
    save_volume(&implant, out_implant)?;
    write_text(out_transform, &(serde_json::to_string_pretty(&reg.transform)? + "\n"))?;
    let report = json!({
        "implant": out_implant,
        "transform": out_transform,
        "implant_voxels": implant.count_nonzero(),
        "dice": reg.dice,
        "converged": reg.converged,
        "iterations": reg.iterations,
    });
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(())
}

fn run(cmd: Command) -> CliResult {
    match cmd {
        Command::Convert { input, out, format } => convert(&input, &out, format),
        Command::Phantom {
            seed,
            dims,
            out,
            count,
            format,
            manifest,
        } => phantom(seed, &dims, &out, count, format, manifest.as_deref()),
        Command::Inject {
            manifest_in,
            manifest_out,
            kind,
            seed,
            spec,
            split,
        } => inject(&manifest_in, &manifest_out, kind, seed, spec.as_deref(), split.as_deref()),
        Command::Train { config, resume, workers } => train_cmd(&config, resume.as_deref(), workers),
        Command::Evaluate { ckpt, manifest, split } => evaluate_cmd(&ckpt, &manifest, split),
        Command::Reconstruct { ckpt, input, out } => reconstruct_cmd(&ckpt, &input, &out),
        Command::ExtractImplant {
            recon,
            defect,
            out_implant,
            out_transform,
        } => extract_cmd(&recon, &defect, &out_implant, &out_transform),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let version = format!("{} (checkpoint format {FORMAT_VERSION})", env!("CARGO_PKG_VERSION"));
    let version: &'static str = Box::leak(version.into_boxed_str());
    let matches = Cli::command().version(version).get_matches();
    let cli = match Cli::from_arg_matches(&matches) {
        Ok(c) => c,
        Err(e) => e.exit(),
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(e)) => {
            let mut shown = e.to_string();
            eprintln!("error: {shown}");
            let mut src = e.source();
            while let Some(s) = src {
                // Some messages already embed their source.
                let msg = s.to_string();
                if !shown.contains(&msg) {
                    eprintln!("  caused by: {msg}");
                }
                shown = msg;
                src = s.source();
            }
            ExitCode::from(1)
        }
    }
}
