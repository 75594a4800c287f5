use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use volnas::data::{load_case, save_case, synth_generate, Case, DatasetManifest, SynthSpec};
use volnas::diagnostics::gradient_suite;
use volnas::engine::{evaluate_dice, one_shot_infer, preprocess, write_logs, Dataset, ExperimentConfig, Search};
use volnas::searchspace::{build_schema, patch_d_candidates, patch_hw_candidates, TaskStats};
use volnas::supernet::ArchRealization;
use volnas::tensor::{sigmoid, Tensor5};
use volnas::Error;

#[derive(Parser, Debug)]
#[command(name = "volnas", version, about = "Macro architecture search for anisotropic 3D segmentation")]
struct Cli {
    /// JSON experiment config; flags override its fields.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Dataset root holding manifest.json.
    #[arg(long, global = true)]
    data: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic anisotropic dataset.
    Synth(SynthArgs),
    /// Print the decision schema as JSON.
    InspectSpace(InspectArgs),
    /// Run the architecture search.
    Search(SearchArgs),
    /// Dice of the checkpointed greedy architecture on a validation fold.
    Eval(EvalArgs),
    /// Predict a mask for one case.
    Infer(InferArgs),
    /// Run the finite-difference gradient suite.
    Gradcheck,
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[arg(long, default_value_t = 16)]
    cases: usize,
    #[arg(long, default_value_t = 1)]
    channels: usize,
    #[arg(long, default_value_t = 1)]
    classes: usize,
    /// Inclusive depth range `lo,hi`.
    #[arg(long, value_parser = parse_pair, default_value = "12,16")]
    depth: [usize; 2],
    /// Inclusive in-plane range `lo,hi`.
    #[arg(long, value_parser = parse_pair, default_value = "40,40")]
    hw: [usize; 2],
    #[arg(long, default_value_t = 0.3)]
    noise: f64,
}

#[derive(Args, Debug)]
struct InspectArgs {
    /// Median extents `d,h,w` (instead of --data).
    #[arg(long, value_parser = parse_triple)]
    stats: Option<[usize; 3]>,
    /// Minimum extents `d,h,w`; defaults to the medians.
    #[arg(long = "min", value_parser = parse_triple)]
    min: Option<[usize; 3]>,
    #[arg(long, default_value_t = 1)]
    in_channels: usize,
    #[arg(long, default_value_t = 1)]
    out_channels: usize,
}

#[derive(Args, Debug)]
struct SearchArgs {
    #[arg(long)]
    episodes: Option<usize>,
    #[arg(long)]
    fold: Option<usize>,
    #[arg(long)]
    base_channels: Option<usize>,
    /// Resume from this checkpoint instead of starting fresh.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    fold: Option<usize>,
}

#[derive(Args, Debug)]
struct InferArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Case directory to segment.
    #[arg(long)]
    case: PathBuf,
}

fn parse_list<const N: usize>(s: &str) -> Result<[usize; N], String> {
    let v: Vec<usize> = s
        .split(',')
        .map(|p| p.trim().parse::<usize>().map_err(|e| format!("`{p}`: {e}")))
        .collect::<Result<_, _>>()?;
    v.try_into().map_err(|_| format!("expected {N} comma-separated integers"))
}

fn parse_pair(s: &str) -> Result<[usize; 2], String> {
    parse_list::<2>(s)
}

fn parse_triple(s: &str) -> Result<[usize; 3], String> {
    parse_list::<3>(s)
}

enum Failure {
    Usage(String),
    Run(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Run(e)
    }
}

type CliResult<T = ()> = Result<T, Failure>;

fn io_err(path: &Path, e: std::io::Error) -> Failure {
    Failure::Run(Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn load_config(cli: &Cli) -> CliResult<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| io_err(p, e))?;
            ExperimentConfig::from_json(&text)?
        }
        None => ExperimentConfig::default(),
    };
    if let Some(d) = &cli.data {
        cfg.data = Some(d.clone());
    }
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn print_json(v: &serde_json::Value) {
    use std::io::Write;
    let text = serde_json::to_string_pretty(v).expect("json value serializes");
    let _ = writeln!(std::io::stdout().lock(), "{text}");
}

fn out_dir(cli: &Cli) -> CliResult<&Path> {
    cli.out
        .as_deref()
        .ok_or_else(|| Failure::Usage("--out <DIR> is required".into()))
}

fn synth(cli: &Cli, a: &SynthArgs) -> CliResult {
    let out = out_dir(cli)?;
    let spec = SynthSpec {
        cases: a.cases,
        channels: a.channels,
        classes: a.classes,
        depth: a.depth,
        hw: a.hw,
        noise: a.noise,
        seed: cli.seed.unwrap_or(0),
    };
    let m = synth_generate(&spec, out)?;
    print_json(&json!({ "root": out, "cases": m.cases.len(), "stats": m.stats }));
    Ok(())
}

fn inspect(cli: &Cli, a: &InspectArgs) -> CliResult {
    let stats = match (a.stats, &cli.data) {
        (Some(med), _) => {
            let min = a.min.unwrap_or(med);
            TaskStats {
                median_d: med[0],
                median_h: med[1],
                median_w: med[2],
                min_d: min[0],
                min_h: min[1],
                min_w: min[2],
                in_channels: a.in_channels,
                out_channels: a.out_channels,
            }
        }
        (None, Some(root)) => DatasetManifest::load(root)?.stats,
        (None, None) => return Err(Failure::Usage("inspect-space needs --data or --stats".into())),
    };
    let schema = build_schema(&stats)?;
    let rule = &schema.stride_rule;
    print_json(&json!({
        "stats": stats,
        "patch_hw": patch_hw_candidates(&stats, rule.hw_divisor)?,
        "patch_d": patch_d_candidates(&stats, rule.depth_divisor)?,
        "stride_rule": rule,
        "architecture_count": schema.architecture_count().to_string(),
        "decisions": schema.decisions,
    }));
    Ok(())
}

fn search(cli: &Cli, a: &SearchArgs) -> CliResult {
    let out = cli.out.clone().unwrap_or_else(|| PathBuf::from("runs"));
    let mut s = match &a.checkpoint {
        Some(path) => Search::load_checkpoint(path)?,
        None => {
            let mut cfg = load_config(cli)?;
            if cfg.data.is_none() && cfg.surrogate.is_none() {
                return Err(Failure::Usage("search needs --data or a config naming a dataset".into()));
            }
            if let Some(f) = a.fold {
                cfg.fold = f;
            }
            if let Some(b) = a.base_channels {
                cfg.base_channels = b;
            }
            Search::new(cfg)?
        }
    };
    if let Some(e) = a.episodes {
        s.config.episodes = e;
    }
    let ckpt = out.join("checkpoint.bin");
    while !s.is_done() {
        let result = s.run_episode();
        // Keep whatever finished so a numeric abort still leaves usable logs.
        write_logs(&out, &s.logs)?;
        result?;
    }
    s.save_checkpoint(&ckpt)?;
    let greedy = s.greedy();
    let arch = s.realize(&greedy)?;
    let result = json!({
        "greedy": greedy,
        "realization": arch,
        "episodes": s.logs.len(),
        "checkpoint": ckpt,
    });
    let path = out.join("result.json");
    fs::write(&path, serde_json::to_string_pretty(&result).expect("json")).map_err(|e| io_err(&path, e))?;
    print_json(&result);
    Ok(())
}

fn eval(cli: &Cli, a: &EvalArgs) -> CliResult {
    let mut s = Search::load_checkpoint(&a.checkpoint)?;
    let greedy = s.greedy();
    let arch = s.realize(&greedy)?;
    if a.fold.is_some() || cli.data.is_some() {
        let mut cfg = s.config.clone();
        if let Some(f) = a.fold {
            cfg.fold = f;
        }
        if let Some(d) = &cli.data {
            cfg.data = Some(d.clone());
        }
        cfg.validate()?;
        s.dataset = Some(Dataset::load(&cfg)?);
    }
    let (Some(child), Some(data)) = (&s.child, &s.dataset) else {
        return Err(Failure::Run(Error::Config("checkpoint has no trained supernet (surrogate run)".into())));
    };
    let dice = evaluate_dice(&child.weights, &arch, &data.validation)?;
    print_json(&json!({ "greedy": greedy, "dice": dice, "cases": data.validation.len() }));
    Ok(())
}

fn infer(cli: &Cli, a: &InferArgs) -> CliResult {
    let out = out_dir(cli)?;
    let s = Search::load_checkpoint(&a.checkpoint)?;
    let Some(child) = &s.child else {
        return Err(Failure::Run(Error::Config("checkpoint has no trained supernet (surrogate run)".into())));
    };
    let arch: ArchRealization = s.realize(&s.greedy())?;
    let case = load_case(&a.case)?;
    let crop = volnas::data::nonzero_crop(&case);
    let prepared = preprocess(&case);
    let logits = one_shot_infer(&child.weights, &arch, &prepared.image)?;

    // Paste the cropped prediction back onto the original grid.
    let ls = case.label.shape().with_channels(logits.shape().c);
    let mut mask = Tensor5::<f32>::zeros(ls);
    let [bd, bh, bw] = crop.bbox;
    let cs = logits.shape();
    for c in 0..cs.c {
        for d in 0..cs.d {
            for h in 0..cs.h {
                for w in 0..cs.w {
                    let p = sigmoid(logits.at(0, c, d, h, w)) >= 0.5;
                    let i = ls.index(0, c, bd[0] + d, bh[0] + h, bw[0] + w);
                    mask.data_mut()[i] = p as u8 as f32;
                }
            }
        }
    }
    let predicted = Case {
        id: format!("{}_pred", case.id),
        channel_names: case.channel_names.clone(),
        image: case.image.clone(),
        label: mask,
    };
    save_case(&predicted, out)?;
    print_json(&json!({ "case": case.id, "out": out, "foreground_voxels": predicted.foreground_voxels() }));
    Ok(())
}

fn gradcheck(cli: &Cli) -> CliResult {
    let entries = gradient_suite(cli.seed.unwrap_or(0))?;
    let mut ok = true;
    for e in &entries {
        let pass = e.report.passes(1e-4);
        ok &= pass;
        println!("{:<5} {:<32} max rel error {:.3e}", if pass { "ok" } else { "FAIL" }, e.name, e.report.worst());
    }
    if ok {
        Ok(())
    } else {
        Err(Failure::Run(Error::NumericAbort {
            episode: 0,
            detail: "gradient check exceeded tolerance".into(),
        }))
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::NumericAbort { .. } => 3,
        _ => 2,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match &cli.command {
        Command::Synth(a) => synth(&cli, a),
        Command::InspectSpace(a) => inspect(&cli, a),
        Command::Search(a) => search(&cli, a),
        Command::Eval(a) => eval(&cli, a),
        Command::Infer(a) => infer(&cli, a),
        Command::Gradcheck => gradcheck(&cli),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}\n");
            let mut cmd = <Cli as clap::CommandFactory>::command();
            let _ = cmd.write_help(&mut std::io::stderr());
            ExitCode::from(1)
        }
        Err(Failure::Run(e)) => {
            log::error!("{e}");
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
