//! `literoof` command line: sweep, single-config evaluation and die
//! economics. Every flag can also come from a `LITEROOF_*` environment
//! variable; flags win.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::error::{Error, Result};
use crate::hardware::{
    default_gpu_config, die_yield, load_gpu_config, relative_cost_per_compute,
    shoreline_bandwidth_ratio, DieSpec, GpuConfig,
};
use crate::report::{emit_barchart, emit_table, explain, fmt_sig, ChartSpec, TableFormat};
use crate::roofline::{evaluate_config, ClusterConfig, Overlap, RooflineOptions};
use crate::search::{sweep, BatchGrid, Constraints, SweepGrid, SweepResult, Violation};
use crate::workload::{default_models, find_model, load_models, param_count, ModelSpec, Phase};

pub const EXIT_OK: i32 = 0;
pub const EXIT_ERROR: i32 = 1;
pub const EXIT_INFEASIBLE: i32 = 2;

#[derive(Debug, Parser)]
#[command(
    name = "literoof",
    version,
    about = "Roofline model of LLM inference on GPU and Lite-GPU clusters"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Search tp and batch per GPU type and report the best config per phase.
    Sweep(SweepArgs),
    /// Evaluate one config and print its per-stage breakdown.
    Eval(EvalArgs),
    /// Die yield, cost per compute and shoreline bandwidth of a split.
    Economics(EconomicsArgs),
}

#[derive(Debug, Args)]
struct Inputs {
    /// GPU spec file (TOML). Defaults to the shipped table.
    #[arg(long, env = "LITEROOF_GPUS")]
    gpus: Option<PathBuf>,
    /// Model spec file (TOML, `[[model]]` entries). Defaults to the shipped models.
    #[arg(long, env = "LITEROOF_MODEL_FILE")]
    model_file: Option<PathBuf>,
    #[arg(long, env = "LITEROOF_PROMPT_LEN", default_value_t = 1500)]
    prompt_len: u64,
    #[arg(long, env = "LITEROOF_DECODE_CTX", default_value_t = 1500)]
    decode_ctx: u64,
    /// Seconds.
    #[arg(
        long,
        env = "LITEROOF_MAX_TTFT",
        default_value_t = 1.0,
        allow_negative_numbers = true
    )]
    max_ttft: f64,
    /// Seconds.
    #[arg(
        long,
        env = "LITEROOF_MAX_TBT",
        default_value_t = 0.05,
        allow_negative_numbers = true
    )]
    max_tbt: f64,
    #[arg(long, env = "LITEROOF_OVERLAP", value_enum, default_value_t = OverlapArg::Collectives)]
    overlap: OverlapArg,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum OverlapArg {
    Serial,
    Collectives,
    Full,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum GridArg {
    /// Powers of two up to 2048 plus the memory-limited maximum.
    Pow2,
    /// Every batch up to the memory-limited maximum.
    Exhaustive,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum FormatArg {
    Csv,
    Json,
    Chart,
    Both,
}

#[derive(Debug, Args)]
struct SweepArgs {
    /// Comma-separated model names. Defaults to every model in the model file.
    #[arg(long, env = "LITEROOF_MODELS", value_delimiter = ',')]
    models: Vec<String>,
    #[command(flatten)]
    inputs: Inputs,
    /// Directory for table and chart files. Without it the table goes to stdout.
    #[arg(long, env = "LITEROOF_OUT")]
    out: Option<PathBuf>,
    #[arg(long, env = "LITEROOF_FORMAT", value_enum, default_value_t = FormatArg::Csv)]
    format: FormatArg,
    /// Chart values relative to this GPU type.
    #[arg(long, env = "LITEROOF_NORMALIZE")]
    normalize: Option<String>,
    #[arg(long, env = "LITEROOF_GRID", value_enum, default_value_t = GridArg::Pow2)]
    grid: GridArg,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long, env = "LITEROOF_MODEL")]
    model: String,
    #[arg(long, env = "LITEROOF_GPU")]
    gpu: String,
    #[arg(long, env = "LITEROOF_TP")]
    tp: u32,
    #[arg(long, env = "LITEROOF_BATCH")]
    batch: u64,
    #[command(flatten)]
    inputs: Inputs,
    /// Override the model's weight datatype width.
    #[arg(long, env = "LITEROOF_BYTES_PER_PARAM")]
    bytes_per_param: Option<f64>,
    /// Override the model's activation and KV datatype width.
    #[arg(long, env = "LITEROOF_BYTES_PER_ACT")]
    bytes_per_act: Option<f64>,
}

#[derive(Debug, Args)]
struct EconomicsArgs {
    /// Die area, cm².
    #[arg(long, env = "LITEROOF_AREA", allow_negative_numbers = true)]
    area: Option<f64>,
    /// Defects per cm².
    #[arg(long, env = "LITEROOF_DEFECT_DENSITY", allow_negative_numbers = true)]
    defect_density: Option<f64>,
    /// Negative-binomial clustering parameter.
    #[arg(long, env = "LITEROOF_ALPHA", allow_negative_numbers = true)]
    alpha: Option<f64>,
    #[arg(long, env = "LITEROOF_SPLIT", default_value_t = 4)]
    split: u32,
    /// GPU config whose `[die]` table supplies the defaults.
    #[arg(long, env = "LITEROOF_GPUS")]
    gpus: Option<PathBuf>,
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::Invalid {
        field: path.display().to_string(),
        reason: e.to_string(),
    })
}

fn gpu_config(path: Option<&Path>) -> Result<GpuConfig> {
    match path {
        Some(p) => load_gpu_config(&read(p)?),
        None => Ok(default_gpu_config()),
    }
}

fn model_set(path: Option<&Path>) -> Result<Vec<ModelSpec>> {
    match path {
        Some(p) => load_models(&read(p)?),
        None => Ok(default_models()),
    }
}

impl Inputs {
    fn constraints(&self) -> Result<Constraints> {
        let c = Constraints {
            max_ttft: self.max_ttft,
            max_tbt: self.max_tbt,
            prompt_len: self.prompt_len,
            decode_ctx: self.decode_ctx,
        };
        c.validate()?;
        Ok(c)
    }

    fn options(&self) -> RooflineOptions {
        RooflineOptions {
            overlap: match self.overlap {
                OverlapArg::Serial => Overlap::Serial,
                OverlapArg::Collectives => Overlap::Collectives,
                OverlapArg::Full => Overlap::Full,
            },
            ..Default::default()
        }
    }
}

fn write_file(dir: &Path, name: &str, text: &str) -> Result<PathBuf> {
    let path = dir.join(name);
    std::fs::write(&path, text)?;
    Ok(path)
}

fn cmd_sweep(args: &SweepArgs, out: &mut dyn Write, err: &mut dyn Write) -> Result<i32> {
    let gpus = gpu_config(args.inputs.gpus.as_deref())?.gpus;
    let all = model_set(args.inputs.model_file.as_deref())?;
    let models: Vec<&ModelSpec> = if args.models.is_empty() {
        all.iter().collect()
    } else {
        args.models
            .iter()
            .map(|n| find_model(&all, n.trim()))
            .collect::<Result<_>>()?
    };
    if models.is_empty() {
        return Err(Error::invalid("models", "no models selected"));
    }
    let constraints = args.inputs.constraints()?;
    let grid = SweepGrid {
        tp: None,
        batch: match args.grid {
            GridArg::Pow2 => BatchGrid::default(),
            GridArg::Exhaustive => BatchGrid::Exhaustive,
        },
        options: args.inputs.options(),
    };
    if let Some(n) = &args.normalize {
        if !gpus.iter().any(|g| g.name.eq_ignore_ascii_case(n)) {
            return Err(Error::Unknown {
                kind: "GPU type",
                name: n.clone(),
            });
        }
    }

    let sweeps: Vec<SweepResult> = models
        .iter()
        .map(|m| sweep(m, &gpus, &constraints, &grid))
        .collect::<Result<_>>()?;

    let table_format = if args.format == FormatArg::Json {
        TableFormat::Json
    } else {
        TableFormat::Csv
    };
    let table = emit_table(&sweeps, table_format);
    match &args.out {
        Some(dir) => {
            std::fs::create_dir_all(dir)?;
            let mut written = Vec::new();
            if args.format != FormatArg::Chart {
                let name = if table_format == TableFormat::Json {
                    "sweep.json"
                } else {
                    "sweep.csv"
                };
                written.push(write_file(dir, name, &table)?);
            }
            if matches!(args.format, FormatArg::Chart | FormatArg::Both) {
                for phase in Phase::ALL {
                    let chart = ChartSpec::from_sweeps(&sweeps, phase, args.normalize.as_deref())?;
                    written.push(write_file(
                        dir,
                        &format!("{phase}.svg"),
                        &emit_barchart(&chart)?,
                    )?);
                }
            }
            for p in written {
                writeln!(out, "{}", p.display())?;
            }
        }
        None => out.write_all(table.as_bytes())?,
    }

    let mut code = EXIT_OK;
    for s in &sweeps {
        for g in s.infeasible_gpus() {
            let why = g
                .binding_constraint()
                .map_or("no valid tp".to_string(), |v| v.to_string());
            writeln!(
                err,
                "no feasible config for {} on {} (binding: {why})",
                s.model, g.gpu.name
            )?;
            code = EXIT_INFEASIBLE;
        }
    }
    Ok(code)
}

fn cmd_eval(args: &EvalArgs, out: &mut dyn Write, err: &mut dyn Write) -> Result<i32> {
    let config = gpu_config(args.inputs.gpus.as_deref())?;
    let gpu = config.find(&args.gpu)?.clone();
    let models = model_set(args.inputs.model_file.as_deref())?;
    let mut model = find_model(&models, &args.model)?.clone();
    if args.bytes_per_param.is_some() || args.bytes_per_act.is_some() {
        model = model.with_dtype(
            args.bytes_per_param.unwrap_or(model.bytes_per_param),
            args.bytes_per_act.unwrap_or(model.bytes_per_act),
        );
        model.nominal_params = None;
        model.validate()?;
    }
    let constraints = args.inputs.constraints()?;
    let cfg = ClusterConfig {
        gpu,
        tp: args.tp,
        batch: args.batch,
        prompt_len: constraints.prompt_len,
        decode_ctx: constraints.decode_ctx,
        options: args.inputs.options(),
    };
    let result = evaluate_config(&model, &cfg)?;
    writeln!(
        out,
        "{} on {} × {}, batch {}",
        model.name, cfg.tp, cfg.gpu.name, cfg.batch
    )?;
    out.write_all(explain(&result).as_bytes())?;

    let violations = constraints.violations(&result.metrics);
    if violations.is_empty() {
        return Ok(EXIT_OK);
    }
    for v in violations {
        let reason = match v {
            Violation::Memory => {
                let weights =
                    param_count(&model) as f64 * model.bytes_per_param / f64::from(cfg.tp);
                let what = if weights > cfg.gpu.mem_capacity_gb * 1e9 {
                    "weights"
                } else {
                    "weights and KV cache"
                };
                format!(
                    "infeasible: {what} exceed memory ({} GB per GPU, capacity {} GB)",
                    fmt_sig(result.metrics.mem_per_gpu_bytes / 1e9),
                    fmt_sig(cfg.gpu.mem_capacity_gb)
                )
            }
            Violation::Ttft => format!(
                "infeasible: ttft {} s exceeds {} s",
                fmt_sig(result.metrics.ttft),
                fmt_sig(constraints.max_ttft)
            ),
            Violation::Tbt => format!(
                "infeasible: tbt {} s exceeds {} s",
                fmt_sig(result.metrics.tbt),
                fmt_sig(constraints.max_tbt)
            ),
        };
        writeln!(err, "{reason}")?;
    }
    Ok(EXIT_INFEASIBLE)
}

fn cmd_economics(args: &EconomicsArgs, out: &mut dyn Write) -> Result<i32> {
    let base = gpu_config(args.gpus.as_deref())?.die.unwrap_or_default();
    let die = DieSpec {
        area: args.area.unwrap_or(base.area),
        defect_density: args.defect_density.unwrap_or(base.defect_density),
        cluster_alpha: args.alpha.unwrap_or(base.cluster_alpha),
    };
    if die.area.partial_cmp(&0.0) != Some(std::cmp::Ordering::Greater) {
        return Err(Error::invalid(
            "area",
            format!("must be > 0, got {}", die.area),
        ));
    }
    let full = die_yield(&die)?;
    let split = die_yield(&die.split(args.split)?)?;
    let cost = relative_cost_per_compute(&die, args.split)?;
    let shoreline = shoreline_bandwidth_ratio(args.split)?;
    writeln!(out, "area_cm2            {}", fmt_sig(die.area))?;
    writeln!(out, "defect_density      {}", fmt_sig(die.defect_density))?;
    writeln!(out, "cluster_alpha       {}", fmt_sig(die.cluster_alpha))?;
    writeln!(out, "split               {}", args.split)?;
    writeln!(out, "yield_full          {}", fmt_sig(full))?;
    writeln!(out, "yield_split         {}", fmt_sig(split))?;
    writeln!(out, "yield_ratio         {}", fmt_sig(split / full))?;
    writeln!(out, "cost_ratio          {}", fmt_sig(cost))?;
    writeln!(out, "shoreline_ratio     {}", fmt_sig(shoreline))?;
    Ok(EXIT_OK)
}

/// Runs the CLI and returns the process exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_ERROR } else { EXIT_OK };
            let text = e.render().to_string();
            let _ = if e.use_stderr() {
                err.write_all(text.as_bytes())
            } else {
                out.write_all(text.as_bytes())
            };
            return code;
        }
    };
    let result = match &cli.command {
        Command::Sweep(a) => cmd_sweep(a, out, err),
        Command::Eval(a) => cmd_eval(a, out, err),
        Command::Economics(a) => cmd_economics(a, out),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            EXIT_ERROR
        }
    }
}
