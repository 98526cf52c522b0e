//! `codesep` — coded-snapshot mask design, simulation, and recovery.

use clap::{Args, Parser, Subcommand, ValueEnum};
use codesep::basis::build_dct2_basis;
use codesep::coherence::{exact_coherence, shift_coherence_table, soft_coherence, CodeMask};
use codesep::evaluation::{rrmse_stack, run_sweep, MaskSource, SweepConfig};
use codesep::io;
use codesep::optimizer::{design, DesignConfig};
use codesep::recovery::{demosaic, recover_frames, EpsilonSpec, SolverConfig};
use codesep::sensing::{acquire, tile, FrameStack, Snapshot};
use codesep::Error;
use serde_json::{json, Value};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "codesep", version, about = "Coded-snapshot source separation toolkit")]
struct Cli {
    /// Worker thread count (env fallback: COSEP_THREADS). Outputs do not
    /// depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Design a code mask by multi-start projected gradient descent.
    Design(DesignArgs),
    /// Report the coherence of an existing mask.
    Coherence(CoherenceArgs),
    /// Simulate a coded snapshot from per-frame PGM images.
    Sense(SenseArgs),
    /// Recover frames from a snapshot by sliding-window sparse recovery.
    Recover(RecoverArgs),
    /// Recover R, G, B planes from a panchromatic snapshot (T = 3).
    Demosaic(DemosaicArgs),
    /// Map mean recovery error over a (sparsity, frame-count) grid.
    Sweep(SweepArgs),
    /// Tabulate the hard coherence of every circular shift of a mask.
    ShiftHist(ShiftHistArgs),
}

#[derive(Args)]
struct DesignArgs {
    /// Patch side length.
    #[arg(long)]
    m: usize,
    /// Number of frames.
    #[arg(long = "T", visible_alias = "frames")]
    t: usize,
    /// Soft-max sharpness.
    #[arg(long, default_value_t = 1000.0)]
    theta: f64,
    /// Number of random restarts.
    #[arg(long, default_value_t = 20)]
    starts: usize,
    /// Iteration cap per start.
    #[arg(long, default_value_t = 2000)]
    iters: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Pool all circular shifts into the objective.
    #[arg(long)]
    circular: bool,
    /// Output mask file.
    #[arg(long)]
    out: PathBuf,
    /// Optional CSV descent profile of the winning start.
    #[arg(long)]
    trace: Option<PathBuf>,
}

#[derive(Args)]
struct CoherenceArgs {
    /// Mask file.
    #[arg(long)]
    code: PathBuf,
    /// Also evaluate the smooth surrogate at this sharpness.
    #[arg(long)]
    theta: Option<f64>,
    /// Optional JSON report path; defaults to stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SenseArgs {
    /// Mask file.
    #[arg(long)]
    code: PathBuf,
    /// One PGM image per frame, in order.
    #[arg(long, num_args = 1.., required = true)]
    frames: Vec<PathBuf>,
    /// Output snapshot (text matrix).
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RecoverArgs {
    /// Mask file.
    #[arg(long)]
    code: PathBuf,
    /// Snapshot (text matrix).
    #[arg(long)]
    snap: PathBuf,
    /// Absolute residual bound; defaults to 1e-8 * ||y||.
    #[arg(long)]
    eps: Option<f64>,
    /// Sliding-window step.
    #[arg(long, default_value_t = 1)]
    stride: usize,
    /// Prefix for the recovered frame PGMs and report.
    #[arg(long = "out-prefix")]
    out_prefix: String,
    /// Ground-truth PGMs; when given, RRMSE is computed and printed.
    #[arg(long, num_args = 1..)]
    truth: Vec<PathBuf>,
}

#[derive(Args)]
struct DemosaicArgs {
    #[arg(long)]
    code: PathBuf,
    #[arg(long)]
    snap: PathBuf,
    /// Absolute residual bound; defaults to 1e-8 * ||y||.
    #[arg(long)]
    eps: Option<f64>,
    #[arg(long, default_value_t = 1)]
    stride: usize,
    /// Output PPM image.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum MaskSourceArg {
    Random,
    Designed,
    DesignedCircular,
}

#[derive(Args)]
struct SweepArgs {
    /// Patch side length.
    #[arg(long, default_value_t = 8)]
    m: usize,
    /// Frame-count range `lo:hi` (inclusive).
    #[arg(long = "t-range", default_value = "2:6")]
    t_range: String,
    /// Sparsity range `lo:hi:step`.
    #[arg(long = "s-range", default_value = "0.05:0.5:0.05")]
    s_range: String,
    #[arg(long, default_value_t = 20)]
    trials: usize,
    #[arg(long = "mask-source", value_enum, default_value_t = MaskSourceArg::Random)]
    mask_source: MaskSourceArg,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Restart budget for designed sources.
    #[arg(long = "design-starts", default_value_t = 8)]
    design_starts: usize,
    /// Iteration budget for designed sources.
    #[arg(long = "design-iters", default_value_t = 600)]
    design_iters: usize,
    /// Output error-map CSV.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ShiftHistArgs {
    #[arg(long)]
    code: PathBuf,
    /// Output CSV (`dr,dc,coherence`).
    #[arg(long)]
    out: PathBuf,
}

fn exit_code_for(err: &Error) -> u8 {
    match err {
        Error::Io(_) | Error::Parse { .. } => 4,
        Error::SolverFailure { .. }
        | Error::OptimizationFailed(_)
        | Error::RecoveryFailure { .. }
        | Error::DegenerateColumn { .. }
        | Error::ZeroNormReference => 3,
        Error::InvalidSize(_)
        | Error::DimensionMismatch(_)
        | Error::InvalidParameter(_)
        | Error::Validation(_) => 2,
    }
}

/// Reproducibility record written next to every output. Thread count is
/// deliberately excluded: results do not depend on it.
fn write_manifest(anchor: &Path, command: &str, params: Value) -> codesep::Result<()> {
    let manifest = json!({
        "tool": "codesep",
        "version": env!("CARGO_PKG_VERSION"),
        "command": command,
        "params": params,
    });
    let mut path = anchor.as_os_str().to_owned();
    path.push(".manifest.json");
    std::fs::write(PathBuf::from(path), format!("{:#}\n", manifest))?;
    Ok(())
}

fn solver_config(eps: Option<f64>, stride: usize) -> SolverConfig<f64> {
    SolverConfig {
        epsilon: match eps {
            Some(e) => EpsilonSpec::Absolute(e),
            None => EpsilonSpec::RelativeToNorm(1e-8),
        },
        stride,
        ..SolverConfig::default()
    }
}

fn load_snapshot(path: &Path, mask: &CodeMask<f64>) -> codesep::Result<Snapshot<f64>> {
    Ok(Snapshot {
        y: io::read_matrix(path)?,
        mask_side: mask.side(),
        frames: mask.frames(),
        mask_fingerprint: None,
    })
}

fn run_design(a: &DesignArgs) -> codesep::Result<()> {
    let dict = build_dct2_basis::<f64>(a.m)?;
    let mut cfg = DesignConfig::<f64>::new(a.m, a.t);
    cfg.theta = a.theta;
    cfg.circular = a.circular;
    cfg.starts = a.starts;
    cfg.max_iters = a.iters;
    cfg.seed = a.seed;
    let (mask, trace) = design(&cfg, &dict)?;
    io::write_mask(&a.out, &mask)?;
    if let Some(tp) = &a.trace {
        io::write_trace_csv(tp, &trace.objective)?;
    }
    write_manifest(
        &a.out,
        "design",
        json!({
            "m": a.m, "T": a.t, "theta": a.theta, "starts": a.starts,
            "iters": a.iters, "seed": a.seed, "circular": a.circular,
            "out": a.out, "trace": a.trace,
        }),
    )?;
    println!(
        "designed {}x{} T={} mask: exact coherence {:.6} (winning start {})",
        a.m, a.m, a.t, trace.final_exact_mu, trace.winner
    );
    Ok(())
}

fn run_coherence(a: &CoherenceArgs) -> codesep::Result<()> {
    let mask: CodeMask<f64> = io::read_mask(&a.code)?;
    let dict = build_dct2_basis::<f64>(mask.side())?;
    let report = exact_coherence(&mask, &dict)?;
    let soft = match a.theta {
        Some(theta) => Some(soft_coherence(&mask, &dict, theta)?),
        None => None,
    };
    let out = json!({
        "m": mask.side(),
        "T": mask.frames(),
        "exact_mu": report.exact_mu,
        "argmax_pair": report.argmax_pair,
        "theta": a.theta,
        "soft_coherence": soft,
        "code": a.code,
    });
    match &a.out {
        Some(path) => {
            std::fs::write(path, format!("{:#}\n", out))?;
            write_manifest(path, "coherence", json!({"code": a.code, "theta": a.theta}))?;
        }
        None => println!("{:#}", out),
    }
    Ok(())
}

fn run_sense(a: &SenseArgs) -> codesep::Result<()> {
    let mask: CodeMask<f64> = io::read_mask(&a.code)?;
    if a.frames.len() != mask.frames() {
        return Err(Error::InvalidParameter(format!(
            "mask expects {} frames, got {}",
            mask.frames(),
            a.frames.len()
        )));
    }
    let frames = a
        .frames
        .iter()
        .map(|p| io::read_pgm::<f64>(p))
        .collect::<codesep::Result<Vec<_>>>()?;
    let stack = FrameStack::new(frames)?;
    let (n1, n2) = stack.shape();
    let code = tile(&mask, n1, n2)?;
    let snap = acquire(&stack, &code)?;
    io::write_matrix(&a.out, &snap.y)?;
    write_manifest(
        &a.out,
        "sense",
        json!({"code": a.code, "frames": a.frames, "out": a.out}),
    )?;
    println!("snapshot {}x{} written to {}", n1, n2, a.out.display());
    Ok(())
}

fn run_recover(a: &RecoverArgs) -> codesep::Result<()> {
    let mask: CodeMask<f64> = io::read_mask(&a.code)?;
    if !a.truth.is_empty() && a.truth.len() != mask.frames() {
        return Err(Error::InvalidParameter(format!(
            "need {} truth images, got {}",
            mask.frames(),
            a.truth.len()
        )));
    }
    let dict = build_dct2_basis::<f64>(mask.side())?;
    let snap = load_snapshot(&a.snap, &mask)?;
    let cfg = solver_config(a.eps, a.stride);
    let (stack, mut report) = recover_frames(&snap, &mask, &dict, &cfg)?;
    for (i, frame) in stack.frames().iter().enumerate() {
        io::write_pgm(format!("{}{}.pgm", a.out_prefix, i + 1), frame)?;
    }
    if !a.truth.is_empty() {
        let truth = FrameStack::new(
            a.truth
                .iter()
                .map(|p| io::read_pgm::<f64>(p))
                .collect::<codesep::Result<Vec<_>>>()?,
        )?;
        let err = rrmse_stack(&truth, &stack)?;
        report.rrmse = Some(err);
        println!("rrmse {err:.6e}");
    }
    let report_path = PathBuf::from(format!("{}report.json", a.out_prefix));
    std::fs::write(
        &report_path,
        format!("{:#}\n", serde_json::to_value(&report).expect("report is serializable")),
    )?;
    write_manifest(
        &report_path,
        "recover",
        json!({
            "code": a.code, "snap": a.snap, "eps": a.eps, "stride": a.stride,
            "out_prefix": a.out_prefix, "truth": a.truth,
        }),
    )?;
    println!(
        "recovered {} frames ({} patches, {} failed)",
        stack.count(),
        report.patches,
        report.failures
    );
    Ok(())
}

fn run_demosaic(a: &DemosaicArgs) -> codesep::Result<()> {
    let mask: CodeMask<f64> = io::read_mask(&a.code)?;
    let dict = build_dct2_basis::<f64>(mask.side())?;
    let snap = load_snapshot(&a.snap, &mask)?;
    let cfg = solver_config(a.eps, a.stride);
    let (stack, report) = demosaic(&snap, &mask, &dict, &cfg)?;
    io::write_ppm(&a.out, &stack)?;
    write_manifest(
        &a.out,
        "demosaic",
        json!({
            "code": a.code, "snap": a.snap, "eps": a.eps,
            "stride": a.stride, "out": a.out,
        }),
    )?;
    println!(
        "demosaiced image written to {} ({} patches, {} failed)",
        a.out.display(),
        report.patches,
        report.failures
    );
    Ok(())
}

fn parse_t_range(text: &str) -> codesep::Result<Vec<usize>> {
    let bad = || Error::InvalidParameter(format!("bad frame-count range {text:?}, want lo:hi"));
    let (lo, hi) = text.split_once(':').ok_or_else(bad)?;
    let lo: usize = lo.parse().map_err(|_| bad())?;
    let hi: usize = hi.parse().map_err(|_| bad())?;
    if lo < 2 || hi < lo {
        return Err(bad());
    }
    Ok((lo..=hi).collect())
}

fn parse_s_range(text: &str) -> codesep::Result<Vec<f64>> {
    let bad = || Error::InvalidParameter(format!("bad sparsity range {text:?}, want lo:hi:step"));
    let parts: Vec<&str> = text.split(':').collect();
    let [lo, hi, step] = parts.as_slice() else {
        return Err(bad());
    };
    let lo: f64 = lo.parse().map_err(|_| bad())?;
    let hi: f64 = hi.parse().map_err(|_| bad())?;
    let step: f64 = step.parse().map_err(|_| bad())?;
    if !(step > 0.0 && lo > 0.0 && hi >= lo) {
        return Err(bad());
    }
    // index-based stepping avoids accumulation drift
    let count = ((hi - lo) / step + 1.0 + 1e-9).floor() as usize;
    Ok((0..count).map(|i| lo + i as f64 * step).collect())
}

fn run_sweep_cmd(a: &SweepArgs) -> codesep::Result<()> {
    let source = match a.mask_source {
        MaskSourceArg::Random => MaskSource::Random,
        MaskSourceArg::Designed => MaskSource::DesignedPlain,
        MaskSourceArg::DesignedCircular => MaskSource::DesignedCircular,
    };
    let mut cfg = SweepConfig::<f64>::new(a.m, source);
    cfg.frame_counts = parse_t_range(&a.t_range)?;
    cfg.sparsities = parse_s_range(&a.s_range)?;
    cfg.trials = a.trials;
    cfg.seed = a.seed;
    cfg.design_starts = a.design_starts;
    cfg.design_iters = a.design_iters;
    let dict = build_dct2_basis::<f64>(a.m)?;
    let map = run_sweep(&cfg, &dict)?;
    io::write_error_map_csv(&a.out, &map)?;
    write_manifest(
        &a.out,
        "sweep",
        json!({
            "m": a.m, "t_range": a.t_range, "s_range": a.s_range,
            "trials": a.trials, "mask_source": format!("{source:?}"),
            "seed": a.seed, "design_starts": a.design_starts,
            "design_iters": a.design_iters, "out": a.out,
        }),
    )?;
    println!(
        "error map over {} cells written to {}",
        map.mean_rrmse.len(),
        a.out.display()
    );
    Ok(())
}

fn run_shift_hist(a: &ShiftHistArgs) -> codesep::Result<()> {
    let mask: CodeMask<f64> = io::read_mask(&a.code)?;
    let dict = build_dct2_basis::<f64>(mask.side())?;
    let table = shift_coherence_table(&mask, &dict)?;
    io::write_shift_table_csv(&a.out, &table)?;
    write_manifest(&a.out, "shift-hist", json!({"code": a.code, "out": a.out}))?;
    let max = table.iter().map(|(_, v)| *v).fold(f64::NEG_INFINITY, f64::max);
    println!(
        "shift table ({} entries, max coherence {max:.6}) written to {}",
        table.len(),
        a.out.display()
    );
    Ok(())
}

fn run(cli: &Cli) -> codesep::Result<()> {
    match &cli.command {
        Command::Design(a) => run_design(a),
        Command::Coherence(a) => run_coherence(a),
        Command::Sense(a) => run_sense(a),
        Command::Recover(a) => run_recover(a),
        Command::Demosaic(a) => run_demosaic(a),
        Command::Sweep(a) => run_sweep_cmd(a),
        Command::ShiftHist(a) => run_shift_hist(a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let threads = cli.threads.or_else(|| {
        std::env::var("COSEP_THREADS")
            .ok()
            .and_then(|v| v.parse().ok())
    });
    if let Some(n) = threads {
        if n == 0 {
            eprintln!("error: thread count must be positive");
            return ExitCode::from(2);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: failed to configure thread pool: {e}");
            return ExitCode::from(3);
        }
    }
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code_for(&e))
        }
    }
}
