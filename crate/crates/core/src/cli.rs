//! Command-line driver. Reports are JSON, one object per line.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::json;

use crate::error::{Result, UmcfError};
use crate::eval::{dice, generate_phantom, hierarchy_violation_rate, PhantomSpec};
use crate::field::{pairwise_mean, VoxelGrid};
use crate::fusion::{run_fusion, semantic_field, FusionConfig, FusionInputs, Stream};
use crate::io::{
    read_token_file, read_tokens, read_volume, write_config, write_token_file, write_volume,
};
use crate::spatial::{signed_distance_transform, spatial_stats, ProbMaps, TumorClass};
use crate::uncertainty::{u_joint, u_spatial, u_text, u_visual};

pub const EXIT_OK: i32 = 0;
pub const EXIT_VALIDATION: i32 = 1;
pub const EXIT_IO: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "umcf", version, about = "Coherent-field fusion of visual, semantic and spatial tokens")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the fusion iteration and write the fused field, refreshed maps and diagnostics.
    Fuse(FuseArgs),
    /// Generate a synthetic nested-ellipsoid phantom.
    Phantom(PhantomArgs),
    /// Signed distance transform of a binary mask (positive inside).
    Sdt(SdtArgs),
    /// Per-class centroid, covariance eigenvalues and mean signed distance.
    Stats(StatsArgs),
    /// Dice overlap between two volumes, per channel, after hardening.
    Dice(DiceArgs),
    /// Summaries of the four uncertainty fields.
    Diag(DiagArgs),
}

#[derive(Debug, Args)]
pub struct Ablations {
    /// Drop the visual attention stream.
    #[arg(long = "disable-mV")]
    pub disable_m_v: bool,
    /// Drop the semantic token stream.
    #[arg(long = "disable-mT")]
    pub disable_m_t: bool,
    /// Drop the spatial token stream.
    #[arg(long = "disable-mS")]
    pub disable_m_s: bool,
    /// Drop the semantic-spatial consistency stream.
    #[arg(long = "disable-mTS")]
    pub disable_m_ts: bool,
    /// Replace uncertainty gating with an equal-weight mean of enabled streams.
    #[arg(long = "disable-pfug")]
    pub disable_pfug: bool,
    /// Gate streams in pairs and average the pairwise weights.
    #[arg(long = "pairwise")]
    pub pairwise: bool,
}

impl Ablations {
    fn apply(&self, cfg: &mut FusionConfig) {
        for (flag, stream) in [
            (self.disable_m_v, Stream::V),
            (self.disable_m_t, Stream::T),
            (self.disable_m_s, Stream::S),
            (self.disable_m_ts, Stream::TS),
        ] {
            if flag {
                cfg.disable(stream);
            }
        }
        cfg.disable_pfug |= self.disable_pfug;
        cfg.pairwise_mode |= self.pairwise;
    }
}

#[derive(Debug, Args)]
pub struct FuseArgs {
    /// Feature volume, H x W x D x d.
    #[arg(long)]
    pub features: PathBuf,
    /// Semantic token file (JSON).
    #[arg(long)]
    pub tokens: PathBuf,
    /// Probability maps, H x W x D x 3 (ET, TC, WT).
    #[arg(long)]
    pub probmaps: PathBuf,
    /// Fusion config (JSON); missing keys take defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Where to write the fused field.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Where to write the refreshed probability maps.
    #[arg(long)]
    pub out_probmaps: Option<PathBuf>,
    /// Where to write the diagnostics report; stdout when omitted.
    #[arg(long)]
    pub diag: Option<PathBuf>,
    #[command(flatten)]
    pub ablations: Ablations,
}

#[derive(Debug, Args)]
pub struct PhantomArgs {
    /// Phantom spec (JSON); missing keys take defaults.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    /// Output directory, created if absent.
    #[arg(long)]
    pub outdir: PathBuf,
}

#[derive(Debug, Args)]
pub struct SdtArgs {
    /// Single-channel volume; voxels >= 0.5 are inside.
    #[arg(long)]
    pub mask: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct StatsArgs {
    #[arg(long)]
    pub probmaps: PathBuf,
    /// Hardening threshold for the signed distance.
    #[arg(long, default_value_t = 0.5)]
    pub threshold: f64,
}

#[derive(Debug, Args)]
pub struct DiceArgs {
    #[arg(long)]
    pub a: PathBuf,
    #[arg(long)]
    pub b: PathBuf,
    #[arg(long, default_value_t = 0.5)]
    pub threshold: f64,
}

#[derive(Debug, Args)]
pub struct DiagArgs {
    #[arg(long)]
    pub probmaps: PathBuf,
    /// Feature volume; with --tokens enables the semantic fields.
    #[arg(long, requires = "tokens")]
    pub features: Option<PathBuf>,
    #[arg(long, requires = "features")]
    pub tokens: Option<PathBuf>,
    /// Fusion config supplying the temperature and projection seed.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Directory to write each uncertainty field as a volume.
    #[arg(long)]
    pub export: Option<PathBuf>,
}

/// Parses `args` (including the program name) and runs the command,
/// returning the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp
                | ErrorKind::DisplayVersion
                | ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand => EXIT_OK,
                _ => EXIT_VALIDATION,
            };
        }
    };
    if let Err(msg) = configure_threads() {
        eprintln!("error: {msg}");
        return EXIT_VALIDATION;
    }
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    match execute(&cli.command, &mut out) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let _ = out.flush();
            eprintln!("error: {e}");
            if e.is_io_or_format() {
                EXIT_IO
            } else {
                EXIT_VALIDATION
            }
        }
    }
}

fn configure_threads() -> std::result::Result<(), String> {
    let Ok(raw) = std::env::var("UMCF_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| format!("UMCF_THREADS must be a positive integer, got {raw:?}"))?;
    // a pool may already exist when called twice in one process
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}

fn io_err(path: &Path, source: std::io::Error) -> UmcfError {
    UmcfError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn emit(out: &mut dyn Write, line: &serde_json::Value) -> Result<()> {
    writeln!(out, "{line}").map_err(|e| io_err(Path::new("<stdout>"), e))
}

fn load_config(path: Option<&Path>) -> Result<FusionConfig> {
    match path {
        Some(p) => crate::io::read_config(p),
        None => Ok(FusionConfig::default()),
    }
}

fn load_probmaps(path: &Path) -> Result<ProbMaps> {
    ProbMaps::new(read_volume(path)?)
}

pub fn execute(command: &Command, out: &mut dyn Write) -> Result<()> {
    match command {
        Command::Fuse(a) => cmd_fuse(a, out),
        Command::Phantom(a) => cmd_phantom(a, out),
        Command::Sdt(a) => cmd_sdt(a, out),
        Command::Stats(a) => cmd_stats(a, out),
        Command::Dice(a) => cmd_dice(a, out),
        Command::Diag(a) => cmd_diag(a, out),
    }
}

fn cmd_fuse(args: &FuseArgs, out: &mut dyn Write) -> Result<()> {
    let mut cfg = load_config(args.config.as_deref())?;
    args.ablations.apply(&mut cfg);
    cfg.validate()?;
    let features = read_volume(&args.features)?;
    let probmaps = load_probmaps(&args.probmaps)?;
    let semantic = read_tokens(&args.tokens, features.channels(), cfg.projection_seed)?;
    let inputs = FusionInputs {
        features,
        semantic,
        probmaps,
    };
    let result = match run_fusion(&inputs, &cfg) {
        Ok(r) => r,
        Err(UmcfError::Diverged {
            iteration,
            residual,
            initial,
            diagnostics,
        }) => {
            // keep the partial report so the failure can be inspected
            let report = diagnostics.to_json_lines();
            match &args.diag {
                Some(p) => fs::write(p, &report).map_err(|e| io_err(p, e))?,
                None => write!(out, "{report}").map_err(|e| io_err(Path::new("<stdout>"), e))?,
            }
            return Err(UmcfError::Diverged {
                iteration,
                residual,
                initial,
                diagnostics,
            });
        }
        Err(e) => return Err(e),
    };
    if let Some(p) = &args.out {
        write_volume(p, &result.field)?;
    }
    if let Some(p) = &args.out_probmaps {
        write_volume(p, result.probmaps.grid())?;
    }
    let report = result.diagnostics.to_json_lines();
    match &args.diag {
        Some(p) => fs::write(p, &report).map_err(|e| io_err(p, e)),
        None => write!(out, "{report}").map_err(|e| io_err(Path::new("<stdout>"), e)),
    }
}

fn cmd_phantom(args: &PhantomArgs, out: &mut dyn Write) -> Result<()> {
    let spec = match &args.spec {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| io_err(p, e))?;
            serde_json::from_str::<PhantomSpec>(&text)
                .map_err(|e| UmcfError::InvalidInput(format!("phantom spec: {e}")))?
        }
        None => PhantomSpec::default(),
    };
    let ph = generate_phantom(&spec)?;
    let dir = &args.outdir;
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    write_volume(dir.join("features.vol"), &ph.features)?;
    write_volume(dir.join("probmaps.vol"), ph.probmaps.grid())?;
    write_volume(dir.join("truth.vol"), ph.ground_truth.grid())?;
    write_token_file(dir.join("tokens.json"), &ph.tokens)?;
    let spec_path = dir.join("spec.json");
    let spec_text = serde_json::to_string_pretty(&ph.spec).expect("spec serializes");
    fs::write(&spec_path, spec_text).map_err(|e| io_err(&spec_path, e))?;
    write_config(dir.join("config.json"), &FusionConfig::default())?;
    emit(
        out,
        &json!({
            "kind": "phantom",
            "dims": ph.spec.dims,
            "feature_dim": ph.spec.feature_dim,
            "seed": ph.spec.seed,
            "violation_rate": hierarchy_violation_rate(&ph.probmaps, 0.5),
        }),
    )
}

fn cmd_sdt(args: &SdtArgs, out: &mut dyn Write) -> Result<()> {
    let mask = read_volume(&args.mask)?;
    let sdt = signed_distance_transform(&mask)?;
    write_volume(&args.out, &sdt.grid)?;
    emit(
        out,
        &json!({ "kind": "sdt", "dims": sdt.grid.dims(), "degenerate": sdt.degenerate }),
    )
}

fn cmd_stats(args: &StatsArgs, out: &mut dyn Write) -> Result<()> {
    let p = load_probmaps(&args.probmaps)?;
    for c in TumorClass::ALL {
        let stats = spatial_stats(&p, c, args.threshold)?;
        emit(out, &json!({ "class": c, "stats": stats }))?;
    }
    Ok(())
}

fn cmd_dice(args: &DiceArgs, out: &mut dyn Write) -> Result<()> {
    let a = read_volume(&args.a)?;
    let b = read_volume(&args.b)?;
    if a.dims() != b.dims() || a.channels() != b.channels() {
        return Err(UmcfError::DimensionMismatch(format!(
            "{} is {:?}x{}, {} is {:?}x{}",
            args.a.display(),
            a.dims(),
            a.channels(),
            args.b.display(),
            b.dims(),
            b.channels()
        )));
    }
    let harden = |g: &VoxelGrid, c: usize| -> Vec<bool> {
        g.channel(c).iter().map(|&v| v >= args.threshold).collect()
    };
    for c in 0..a.channels() {
        let score = dice(&harden(&a, c), &harden(&b, c))?;
        emit(out, &json!({ "channel": c, "dice": score }))?;
    }
    Ok(())
}

#[derive(Serialize)]
struct FieldSummary {
    mean: f64,
    min: f64,
    max: f64,
}

fn summarize(g: &VoxelGrid) -> FieldSummary {
    let data = g.data();
    FieldSummary {
        mean: pairwise_mean(data),
        min: data.iter().copied().fold(f64::INFINITY, f64::min),
        max: data.iter().copied().fold(f64::NEG_INFINITY, f64::max),
    }
}

fn cmd_diag(args: &DiagArgs, out: &mut dyn Write) -> Result<()> {
    let cfg = load_config(args.config.as_deref())?;
    cfg.validate()?;
    let p = load_probmaps(&args.probmaps)?;
    let u_v = u_visual(&p)?;
    let u_s = u_spatial(&p)?;
    let semantic = match (&args.features, &args.tokens) {
        (Some(fp), Some(tp)) => {
            let features = read_volume(fp)?;
            if features.dims() != p.dims() {
                let (a, b) = (features.dims(), p.dims());
                return Err(UmcfError::DimensionMismatch(format!(
                    "features are {}x{}x{}x{}, probmaps are {}x{}x{}x3",
                    a[0],
                    a[1],
                    a[2],
                    features.channels(),
                    b[0],
                    b[1],
                    b[2]
                )));
            }
            // validate the raw file before projecting so format errors surface as such
            read_token_file(tp)?;
            let tokens = read_tokens(tp, features.channels(), cfg.projection_seed)?;
            let field = crate::fusion::renormalize_rows(&features)?;
            let phi = semantic_field(&field, tokens.prototype(), cfg.temperature()?)?.phi;
            let u_t = u_text(&phi)?;
            let u_ts = u_joint(&u_t, &u_s)?;
            Some((u_t, u_ts))
        }
        _ => None,
    };
    let named: Vec<(&str, Option<&VoxelGrid>)> = vec![
        ("u_v", Some(&u_v)),
        ("u_t", semantic.as_ref().map(|s| &s.0)),
        ("u_s", Some(&u_s)),
        ("u_ts", semantic.as_ref().map(|s| &s.1)),
    ];
    if let Some(dir) = &args.export {
        fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    }
    for (name, grid) in named {
        let summary = grid.map(summarize);
        emit(out, &json!({ "field": name, "summary": summary }))?;
        if let (Some(dir), Some(g)) = (&args.export, grid) {
            write_volume(dir.join(format!("{name}.vol")), g)?;
        }
    }
    Ok(())
}
