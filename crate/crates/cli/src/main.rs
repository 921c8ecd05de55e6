use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Deserialize;

use bitparticle::experiment::{self, ExperimentSpec, Format, Preset, DEFAULT_SEED};
use bitparticle::Exec;

/// Runs experiments on the bit-particle MAC unit and array model.
#[derive(Parser, Debug)]
#[command(name = "bitparticle", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run a preset and write one row per grid point.
    Run(RunArgs),
    /// Run a preset and compare it against the reference values.
    Verify(RunArgs),
    /// List the available presets.
    ListPresets,
}

#[derive(Args, Debug)]
struct RunArgs {
    /// Preset name (see `list-presets`).
    #[arg(long)]
    preset: Option<String>,
    /// Output file; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum)]
    format: Option<FormatArg>,
    /// Base seed. Array presets average over seed, seed+1, seed+2.
    #[arg(long)]
    seed: Option<u64>,
    /// Grid override `key=v1,v2,...`; repeatable. Keys: bs, vs (vs_a), vs_w, E, Q, variant, zero_filter, seeds.
    #[arg(long = "grid", value_name = "KEY=VALUES")]
    grid: Vec<String>,
    /// Layer sparsity profile CSV (layer_name,macs,bs_w,bs_a,vs_w,vs_a) replacing i.i.d. streams.
    #[arg(long)]
    profile: Option<PathBuf>,
    #[arg(long)]
    rows: Option<usize>,
    #[arg(long)]
    cols: Option<usize>,
    /// Steps per column (N).
    #[arg(long)]
    steps: Option<usize>,
    /// Operand pairs for per-operation Monte-Carlo statistics.
    #[arg(long)]
    samples: Option<usize>,
    #[arg(long, value_enum)]
    exec: Option<ExecArg>,
    /// TOML file with the same keys as the flags; flags take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, ValueEnum, Deserialize)]
#[serde(rename_all = "lowercase")]
enum FormatArg {
    Csv,
    Json,
}

#[derive(Clone, Copy, Debug, ValueEnum, Deserialize)]
#[serde(rename_all = "lowercase")]
enum ExecArg {
    Auto,
    Sequential,
    Parallel,
}

/// Config-file counterpart of [`RunArgs`].
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    preset: Option<String>,
    out: Option<PathBuf>,
    format: Option<FormatArg>,
    seed: Option<u64>,
    #[serde(default)]
    grid: Vec<String>,
    profile: Option<PathBuf>,
    rows: Option<usize>,
    cols: Option<usize>,
    steps: Option<usize>,
    samples: Option<usize>,
    exec: Option<ExecArg>,
}

impl FileConfig {
    fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }
}

/// Flags merged over the config file. Relative paths in the file resolve
/// against the file's directory.
struct Resolved {
    spec: ExperimentSpec,
    out: Option<PathBuf>,
    format: Format,
    exec: Exec,
}

fn resolve(args: RunArgs) -> Result<Resolved> {
    let (file, base) = match &args.config {
        Some(path) => (FileConfig::load(path)?, path.parent().map(Path::to_path_buf).unwrap_or_default()),
        None => (FileConfig::default(), PathBuf::new()),
    };
    let rebase = |p: PathBuf| if p.is_relative() { base.join(p) } else { p };

    let preset_name = args.preset.or(file.preset).context("--preset is required")?;
    let preset: Preset = preset_name.parse()?;
    let seed = args.seed.or(file.seed).unwrap_or(DEFAULT_SEED);
    let mut spec = ExperimentSpec::for_preset(preset, seed);
    spec.rows = args.rows.or(file.rows).unwrap_or(spec.rows);
    spec.cols = args.cols.or(file.cols).unwrap_or(spec.cols);
    spec.steps = args.steps.or(file.steps).unwrap_or(spec.steps);
    spec.samples = args.samples.or(file.samples).unwrap_or(spec.samples);
    spec.profile = args.profile.or(file.profile.map(rebase));
    // file grid first so a flag for the same key wins
    for item in file.grid.iter().chain(&args.grid) {
        let Some((key, values)) = item.split_once('=') else {
            bail!("grid override `{item}` must look like key=v1,v2");
        };
        spec.grid.set(key, values)?;
    }
    if spec.profile.is_some()
        && !matches!(
            preset,
            Preset::Fig8Utilization | Preset::Fig9CyclesPerStep | Preset::Fig7ZeroFilter | Preset::Custom
        )
    {
        bail!("--profile only applies to array presets");
    }
    spec.validate()?;

    let format = match args.format.or(file.format).unwrap_or(FormatArg::Csv) {
        FormatArg::Csv => Format::Csv,
        FormatArg::Json => Format::Json,
    };
    let exec = match args.exec.or(file.exec).unwrap_or(ExecArg::Auto) {
        ExecArg::Auto => Exec::Auto,
        ExecArg::Sequential => Exec::Sequential,
        ExecArg::Parallel => Exec::Parallel,
    };
    Ok(Resolved {
        spec,
        out: args.out.or(file.out.map(rebase)),
        format,
        exec,
    })
}

fn emit(text: &str, out: Option<&Path>) -> Result<()> {
    match out {
        Some(path) => std::fs::write(path, text).with_context(|| format!("writing {}", path.display())),
        None => {
            std::io::stdout().write_all(text.as_bytes())?;
            Ok(())
        }
    }
}

fn cmd_run(r: Resolved) -> Result<bool> {
    let rows = experiment::run(&r.spec, r.exec)?;
    emit(&experiment::render(&rows, r.format)?, r.out.as_deref())?;
    Ok(true)
}

fn cmd_verify(r: Resolved) -> Result<bool> {
    let checks = experiment::verify(&r.spec, r.exec)?;
    let failed = checks.iter().filter(|c| !c.pass).count();
    let text = match r.format {
        Format::Json => serde_json::to_string_pretty(&checks)? + "\n",
        Format::Csv => {
            let mut s: String = checks.iter().map(|c| format!("{c}\n")).collect();
            s.push_str(&format!("{}: {} checks, {failed} failed\n", r.spec.preset, checks.len()));
            s
        }
    };
    emit(&text, r.out.as_deref())?;
    Ok(failed == 0)
}

fn cmd_list() {
    for p in Preset::ALL {
        println!("{:<22} {}", p.name(), p.description());
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (args, verify) = match cli.command {
        Command::ListPresets => {
            cmd_list();
            return ExitCode::SUCCESS;
        }
        Command::Run(a) => (a, false),
        Command::Verify(a) => (a, true),
    };
    let resolved = match resolve(args) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("error: {e:#}");
            return ExitCode::from(2);
        }
    };
    let outcome = if verify { cmd_verify(resolved) } else { cmd_run(resolved) };
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
