//! The `segse` subcommands.

use std::fs::{self, File};
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use segse_core::gradsuite::{self, Scope, UnitOutcome};
use segse_core::layers::ForwardCtx;
use segse_core::metrics::MetricsReport;
use segse_core::net::Network;
use segse_core::params::ParamStore;
use segse_core::train::{evaluate, Dataset, Trainer};
use segse_core::{Error, Tape};

use crate::checkpoint::Checkpoint;
use crate::config::RunConfig;
use crate::dataset::{load_dataset, write_dataset};
use crate::error::{CliError, CliResult, FormatError};
use crate::pgm::{write_gray_pgm, write_heatmap_pgm, Normalization};
use crate::report;

pub const CONFIG_FILE: &str = "config.cfg";
pub const TRACE_FILE: &str = "trace.txt";
pub const MANIFEST_FILE: &str = "manifest.txt";
pub const INITIAL_CHECKPOINT: &str = "initial.sgck";
pub const FINAL_CHECKPOINT: &str = "final.sgck";
const EVAL_BATCH: usize = 10;

#[derive(Parser, Debug)]
#[command(
    name = "segse",
    version,
    about = "Segmentation networks with recombination and recalibration blocks",
    after_help = "Configuration keys can be overridden on the command line as --section.key value, e.g. --train.lr 0."
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Write synthetic phantoms and an index file.
    Gen(GenArgs),
    /// Train a network on a dataset directory.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a dataset directory.
    Eval(EvalArgs),
    /// Compare backward passes against central differences.
    Gradcheck(GradcheckArgs),
    /// Train and evaluate several configurations on shared data.
    Compare(CompareArgs),
    /// Write recalibration maps of one block as PGM images.
    Inspect(InspectArgs),
}

#[derive(Args, Debug)]
pub struct GenArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long)]
    pub count: u64,
    /// Index of the first phantom.
    #[arg(long, default_value_t = 0)]
    pub start: u64,
    #[arg(long)]
    pub force: bool,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub data_dir: PathBuf,
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Continue from a checkpoint written by an earlier run.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    #[arg(long)]
    pub force: bool,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data_dir: PathBuf,
    /// Output directory for the table, the record and the configuration.
    #[arg(long)]
    pub report: PathBuf,
    #[arg(long)]
    pub force: bool,
}

#[derive(Args, Debug)]
pub struct GradcheckArgs {
    /// layer, block, network or all.
    #[arg(long, default_value = "all")]
    pub scope: String,
    /// Flip the sign of the named unit's backward rule.
    #[arg(long, hide = true)]
    pub inject_fault: Option<String>,
}

#[derive(Args, Debug)]
pub struct CompareArgs {
    #[arg(long, num_args = 1.., required = true)]
    pub configs: Vec<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Training data; generated from the first configuration when absent.
    #[arg(long, requires = "eval_dir")]
    pub data_dir: Option<PathBuf>,
    /// Held-out data; generated from the first configuration when absent.
    #[arg(long, requires = "data_dir")]
    pub eval_dir: Option<PathBuf>,
    /// Allow a non-empty output directory. Finished runs whose stored
    /// configuration matches are reused rather than retrained.
    #[arg(long)]
    pub force: bool,
}

#[derive(Args, Debug)]
pub struct InspectArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Phantom index (from the checkpoint's data settings, or from --data-dir).
    #[arg(long)]
    pub sample: u64,
    /// RR block name, e.g. rr1.
    #[arg(long)]
    pub layer: String,
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long)]
    pub data_dir: Option<PathBuf>,
    #[arg(long)]
    pub force: bool,
}

/// Runs a parsed command with the given configuration overrides.
pub fn run(command: Command, overrides: &[(String, String)]) -> CliResult<()> {
    let no_overrides = |name: &str| {
        if overrides.is_empty() {
            Ok(())
        } else {
            Err(CliError::usage(format!(
                "{name} takes its configuration from the checkpoint; --section.key overrides are not accepted"
            )))
        }
    };
    match command {
        Command::Gen(a) => cmd_gen(&a, overrides),
        Command::Train(a) => cmd_train(&a, overrides),
        Command::Eval(a) => no_overrides("eval").and_then(|_| cmd_eval(&a)),
        Command::Gradcheck(a) => no_overrides("gradcheck").and_then(|_| cmd_gradcheck(&a)),
        Command::Compare(a) => cmd_compare(&a, overrides),
        Command::Inspect(a) => no_overrides("inspect").and_then(|_| cmd_inspect(&a)),
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |e| FormatError::io(path, e).into()
}

/// Creates `dir`, refusing a non-empty one unless `force`.
pub fn prepare_out_dir(dir: &Path, force: bool) -> CliResult<()> {
    if dir.exists() {
        let mut entries = fs::read_dir(dir).map_err(io_err(dir))?;
        if entries.next().is_some() && !force {
            return Err(CliError::validation(format!(
                "{} is not empty; pass --force to write into it",
                dir.display()
            )));
        }
    }
    fs::create_dir_all(dir).map_err(io_err(dir))
}

pub fn write_config(dir: &Path, config: &RunConfig) -> CliResult<()> {
    let path = dir.join(CONFIG_FILE);
    fs::write(&path, config.to_text()).map_err(io_err(&path))
}

pub fn cmd_gen(a: &GenArgs, overrides: &[(String, String)]) -> CliResult<()> {
    let config = RunConfig::resolve(a.config.as_deref(), overrides)?;
    prepare_out_dir(&a.out_dir, a.force)?;
    write_config(&a.out_dir, &config)?;
    let entries = write_dataset(&a.out_dir, &config.data.phantom, a.start, a.count)?;
    println!("wrote {} phantoms to {}", entries.len(), a.out_dir.display());
    Ok(())
}

/// Checks that `data` fits the network configuration.
fn check_dataset(config: &RunConfig, data: &Dataset) -> CliResult<()> {
    let Some(first) = data.samples.first() else {
        return Err(CliError::validation("dataset is empty"));
    };
    if first.channels() != config.network.in_channels {
        return Err(CliError::validation(format!(
            "dataset has {} channels, network expects {}",
            first.channels(),
            config.network.in_channels
        )));
    }
    let classes = config.network.num_classes;
    for (i, s) in data.samples.iter().enumerate() {
        if let Some(&l) = s.labels.iter().find(|&&l| l as usize >= classes) {
            return Err(CliError::validation(format!("sample {i}: label {l} out of range for {classes} classes")));
        }
    }
    let size = config.train.patch_size;
    config
        .network
        .check_input(size.unwrap_or(first.height()), size.unwrap_or(first.width()))?;
    config.network.check_input(first.height(), first.width())?;
    Ok(())
}

/// Everything but the run length must agree for a resumed run to continue
/// the original one.
fn same_run(a: &RunConfig, b: &RunConfig) -> bool {
    let strip = |c: &RunConfig| {
        let mut c = c.clone();
        c.train.iterations = 0;
        c.train.checkpoint_every = 0;
        c
    };
    strip(a) == strip(b)
}

/// Rejects a checkpoint written by a run that `config` does not continue.
fn check_resume(config: &RunConfig, path: &Path, ck: &Checkpoint) -> CliResult<()> {
    if same_run(&ck.config()?, config) {
        Ok(())
    } else {
        Err(CliError::validation(format!(
            "{} was written by a different configuration (only iterations and checkpoint_every may change)",
            path.display()
        )))
    }
}

/// Trains `config` on `data`, writing checkpoints, the trace and the
/// manifest into `out_dir` (which must already exist).
pub fn train_into(
    config: &RunConfig,
    data: &Dataset,
    data_dir: &Path,
    out_dir: &Path,
    resume: Option<(&Path, Checkpoint)>,
) -> CliResult<Trainer> {
    check_dataset(config, data)?;
    if let Some((path, ck)) = &resume {
        check_resume(config, path, ck)?;
    }
    write_config(out_dir, config)?;
    let mut trainer = Trainer::new(config.network.clone(), config.train.clone())?;
    if let Some((_, ck)) = &resume {
        ck.restore_into(&mut trainer)?;
    } else {
        Checkpoint::from_trainer(&trainer, config).write(&out_dir.join(INITIAL_CHECKPOINT))?;
    }
    let trace_path = out_dir.join(TRACE_FILE);
    let mut trace = File::create(&trace_path).map_err(io_err(&trace_path))?;
    for (i, loss) in trainer.trace.iter().enumerate() {
        writeln!(trace, "{}\t{loss:?}", i + 1).map_err(io_err(&trace_path))?;
    }
    let start = Instant::now();
    let total = config.train.iterations;
    while trainer.step() < total {
        let loss = match trainer.train_step(data) {
            Ok(l) => l,
            Err(e @ Error::NonFiniteLoss { .. }) => {
                return Err(CliError::numerical(format!("training aborted: {e}")));
            }
            Err(e) => return Err(e.into()),
        };
        let step = trainer.step();
        writeln!(trace, "{step}\t{loss:?}").map_err(io_err(&trace_path))?;
        let every = config.train.checkpoint_every;
        if every > 0 && step % every == 0 {
            let path = out_dir.join(format!("checkpoint_{step:06}.sgck"));
            Checkpoint::from_trainer(&trainer, config).write(&path)?;
        }
        if step % 100 == 0 || step == total {
            println!("step {step}/{total} loss {loss:.5} ({:.0}s)", start.elapsed().as_secs_f64());
        }
    }
    drop(trace);
    Checkpoint::from_trainer(&trainer, config).write(&out_dir.join(FINAL_CHECKPOINT))?;
    let manifest = format!(
        "data_dir = {}\nsamples = {}\nsteps = {}\nfinal_loss = {}\nresumed_from = {}\ncheckpoint = {FINAL_CHECKPOINT}\ntrace = {TRACE_FILE}\nconfig = {CONFIG_FILE}\n",
        data_dir.display(),
        data.len(),
        trainer.step(),
        trainer.trace.last().map_or("none".into(), |v| format!("{v:?}")),
        resume.map_or("none".into(), |(p, _)| p.display().to_string()),
    );
    let path = out_dir.join(MANIFEST_FILE);
    fs::write(&path, manifest).map_err(io_err(&path))?;
    Ok(trainer)
}

pub fn cmd_train(a: &TrainArgs, overrides: &[(String, String)]) -> CliResult<()> {
    let config = RunConfig::resolve(a.config.as_deref(), overrides)?;
    let resume = match &a.resume {
        Some(p) => Some((p.as_path(), Checkpoint::read(p)?)),
        None => None,
    };
    let (data, _) = load_dataset(&a.data_dir)?;
    // fail before touching the output directory
    check_dataset(&config, &data)?;
    if let Some((path, ck)) = &resume {
        check_resume(&config, path, ck)?;
    }
    prepare_out_dir(&a.out_dir, a.force)?;
    let trainer = train_into(&config, &data, &a.data_dir, &a.out_dir, resume)?;
    println!(
        "trained {} steps; checkpoint {}",
        trainer.step(),
        a.out_dir.join(FINAL_CHECKPOINT).display()
    );
    Ok(())
}

/// Network and parameters stored in a checkpoint.
pub fn load_network(path: &Path) -> CliResult<(RunConfig, Network, ParamStore<f32>)> {
    let (config, trainer) = Checkpoint::read(path)?.restore()?;
    Ok((config, trainer.net, trainer.store))
}

/// Evaluates `net` on `data` and writes the table, the record and the
/// configuration into `dir` (which must already exist).
pub fn eval_into(
    config: &RunConfig,
    net: &Network,
    store: &mut ParamStore<f32>,
    data: &Dataset,
    ids: &[u64],
    dir: &Path,
) -> CliResult<MetricsReport> {
    check_dataset(config, data)?;
    let report = evaluate(net, store, data, EVAL_BATCH)?;
    write_config(dir, config)?;
    let table = report::table(&report);
    for (name, text) in [("report.txt", table), ("metrics.tsv", report::record(&report, ids))] {
        let path = dir.join(name);
        fs::write(&path, text).map_err(io_err(&path))?;
    }
    Ok(report)
}

pub fn cmd_eval(a: &EvalArgs) -> CliResult<()> {
    let (config, net, mut store) = load_network(&a.checkpoint)?;
    let (data, entries) = load_dataset(&a.data_dir)?;
    prepare_out_dir(&a.report, a.force)?;
    let ids: Vec<u64> = entries.iter().map(|e| e.index).collect();
    let report = eval_into(&config, &net, &mut store, &data, &ids, &a.report)?;
    println!("{} samples from {}", data.len(), a.data_dir.display());
    print!("{}", report::table(&report));
    Ok(())
}

fn outcome_line(o: &UnitOutcome) -> String {
    let worst = o.report.worst_entry().map_or("-", |e| e.name.as_str());
    format!(
        "{:<8} {:<18} {:>10.3e} {:>8} {:>7}  {:<26} {}",
        o.scope.as_str(),
        o.name,
        o.worst(),
        o.report.compared(),
        o.report.kinked(),
        worst,
        if o.passed() { "PASS" } else { "FAIL" }
    )
}

pub fn cmd_gradcheck(a: &GradcheckArgs) -> CliResult<()> {
    let scopes = if a.scope == "all" {
        Scope::ALL.to_vec()
    } else {
        vec![Scope::parse(&a.scope).map_err(|e| CliError::usage(e.to_string()))?]
    };
    if let Some(f) = &a.inject_fault {
        if !scopes.iter().any(|s| s.units().contains(&f.as_str())) {
            return Err(CliError::usage(format!("no gradcheck unit named {f:?}")));
        }
    }
    println!(
        "step {:e}, tolerance {:e}, at most {}% of elements skipped at kinks",
        gradsuite::STEP,
        gradsuite::TOLERANCE,
        gradsuite::MAX_KINKED_FRACTION * 100.0
    );
    println!(
        "{:<8} {:<18} {:>10} {:>8} {:>7}  {:<26} result",
        "scope", "unit", "worst", "compared", "kinked", "worst source"
    );
    let mut failed = Vec::new();
    for scope in scopes {
        for unit in scope.units() {
            let fault = a.inject_fault.as_deref() == Some(unit);
            let o = gradsuite::run_unit(scope, unit, fault)?;
            println!("{}", outcome_line(&o));
            if !o.passed() {
                failed.push(o.name);
            }
        }
    }
    if failed.is_empty() {
        println!("all units passed");
        Ok(())
    } else {
        Err(CliError::numerical(format!("gradient check failed: {}", failed.join(", "))))
    }
}

fn config_name(path: &Path) -> String {
    path.file_stem().map_or_else(|| "config".into(), |s| s.to_string_lossy().into_owned())
}

/// Rows of the comparison: config name and its held-out report.
pub fn comparison_table(rows: &[(String, MetricsReport)], header: &str) -> String {
    let mut s = String::from(header);
    let classes = rows.first().map_or(0, |(_, r)| r.classes);
    s.push_str(&format!("{:<16}", "config"));
    for c in 1..classes {
        for m in ["DC", "PPV", "Sens", "HD95"] {
            s.push_str(&format!(" {:>8}", format!("{m}{c}")));
        }
    }
    s.push_str(&format!(" {:>8}\n", "meanDC"));
    for (name, r) in rows {
        s.push_str(&format!("{name:<16}"));
        for c in 1..classes {
            for m in 0..4 {
                s.push_str(&format!(" {:>8}", r.class_mean(c, m).map_or("n/a".into(), |v| format!("{v:.4}"))));
            }
        }
        s.push_str(&format!(" {:>8}\n", r.mean_dice().map_or("n/a".into(), |v| format!("{v:.4}"))));
    }
    s
}

/// Machine form of the comparison: `config class metric value` rows of
/// per-class means over defined entries.
pub fn comparison_record(rows: &[(String, MetricsReport)]) -> String {
    let mut s = String::from("config\tclass\tmetric\tvalue\n");
    for (name, r) in rows {
        for c in 1..r.classes {
            for (m, metric) in segse_core::metrics::METRIC_NAMES.iter().enumerate() {
                let v = r.class_mean(c, m).unwrap_or(f64::NAN);
                s.push_str(&format!("{name}\t{c}\t{metric}\t{v:?}\n"));
            }
        }
    }
    s
}

pub fn cmd_compare(a: &CompareArgs, overrides: &[(String, String)]) -> CliResult<()> {
    let mut configs = Vec::new();
    for path in &a.configs {
        configs.push((config_name(path), RunConfig::resolve(Some(path), overrides)?));
    }
    let mut names: Vec<&str> = configs.iter().map(|(n, _)| n.as_str()).collect();
    names.sort_unstable();
    if let Some(w) = names.windows(2).find(|w| w[0] == w[1]) {
        return Err(CliError::usage(format!("two configurations are named {:?}", w[0])));
    }
    // one seed and one data definition for every row
    let shared_seed = configs[0].1.train.seed;
    let shared_data = configs[0].1.data.clone();
    for (_, c) in &mut configs {
        c.train.seed = shared_seed;
        c.data = shared_data.clone();
        c.validate()?;
    }
    prepare_out_dir(&a.out, a.force)?;
    let (train_dir, eval_dir) = match (&a.data_dir, &a.eval_dir) {
        (Some(t), Some(e)) => (t.clone(), e.clone()),
        _ => {
            let (t, e) = (a.out.join("data").join("train"), a.out.join("data").join("eval"));
            let n = shared_data.train_count as u64;
            write_dataset(&t, &shared_data.phantom, 0, n)?;
            write_dataset(&e, &shared_data.phantom, n, shared_data.eval_count as u64)?;
            (t, e)
        }
    };
    let (train, _) = load_dataset(&train_dir)?;
    let (held_out, entries) = load_dataset(&eval_dir)?;
    let ids: Vec<u64> = entries.iter().map(|e| e.index).collect();
    let mut rows = Vec::new();
    for (name, config) in &configs {
        let run_dir = a.out.join("runs").join(name);
        let final_path = run_dir.join(FINAL_CHECKPOINT);
        let reusable = final_path.exists()
            && Checkpoint::read(&final_path).is_ok_and(|ck| ck.config_text == config.to_text() && ck.step == config.train.iterations);
        let (net, mut store) = if reusable {
            println!("== {name}: reusing {}", final_path.display());
            let (_, net, store) = load_network(&final_path)?;
            (net, store)
        } else {
            println!("== {name}: training {} steps", config.train.iterations);
            fs::create_dir_all(&run_dir).map_err(io_err(&run_dir))?;
            let start = Instant::now();
            let trainer = train_into(config, &train, &train_dir, &run_dir, None)?;
            println!("== {name}: trained in {:.0}s", start.elapsed().as_secs_f64());
            (trainer.net, trainer.store)
        };
        let eval_out = run_dir.join("eval");
        fs::create_dir_all(&eval_out).map_err(io_err(&eval_out))?;
        let report = eval_into(config, &net, &mut store, &held_out, &ids, &eval_out)?;
        rows.push((name.clone(), report));
    }
    let header = format!(
        "# {} configurations trained sequentially with one shared seed ({shared_seed}); no averaging over seeds\n\
         # training data {} ({} samples), held-out data {} ({} samples)\n\
         # per-class means over held-out samples; HD95 in pixels\n",
        configs.len(),
        train_dir.display(),
        train.len(),
        eval_dir.display(),
        held_out.len(),
    );
    let table = comparison_table(&rows, &header);
    for (file, text) in [("comparison.txt", table.clone()), ("comparison.tsv", comparison_record(&rows))] {
        let path = a.out.join(file);
        fs::write(&path, text).map_err(io_err(&path))?;
    }
    write_config(&a.out, &configs[0].1)?;
    print!("{table}");
    Ok(())
}

/// Paths of the maps written for one channel: pre, excitation, post.
pub fn map_paths(dir: &Path, layer: &str, channel: usize) -> [PathBuf; 3] {
    ["pre", "excitation", "post"].map(|kind| dir.join(format!("{layer}_c{channel:03}_{kind}.pgm")))
}

pub const LABEL_MAP: &str = "labels.pgm";

pub fn cmd_inspect(a: &InspectArgs) -> CliResult<()> {
    let (config, net, mut store) = load_network(&a.checkpoint)?;
    let names = net.block_names().join(", ");
    let Some(block) = net.blocks.iter().find(|b| b.name == a.layer) else {
        return Err(CliError::validation(format!("no block named {:?}; available: {names}", a.layer)));
    };
    if !block.config.kind.recalibrates() {
        return Err(CliError::validation(format!(
            "block {} has kind {} which does not recalibrate; available: {names}",
            a.layer, block.config.kind
        )));
    }
    let sample = match &a.data_dir {
        Some(dir) => {
            let (data, entries) = load_dataset(dir)?;
            let pos = entries
                .iter()
                .position(|e| e.index == a.sample)
                .ok_or_else(|| CliError::validation(format!("sample {} is not in {}", a.sample, dir.display())))?;
            data.samples[pos].clone()
        }
        None => config.data.phantom.generate(a.sample)?,
    };
    let single = Dataset::new(vec![sample.clone()])?;
    check_dataset(&config, &single)?;
    prepare_out_dir(&a.out_dir, a.force)?;
    write_config(&a.out_dir, &config)?;
    let (x, _) = Dataset::batch(std::slice::from_ref(&sample))?;
    let mut tape = Tape::new();
    let xv = tape.constant(x);
    let mut ctx = ForwardCtx::eval().capturing();
    net.forward(&mut tape, &mut store, xv, &mut ctx)?;
    let probe = ctx
        .probes
        .iter()
        .find(|p| p.block == a.layer)
        .ok_or_else(|| CliError::validation(format!("block {} produced no recalibration maps", a.layer)))?;
    let (_, channels, h, w) = probe.pre.dims4()?;
    let plane = h * w;
    let mut varying = 0;
    for c in 0..channels {
        let slice = |t: &segse_core::Tensor<f32>| -> Vec<f64> {
            t.data()[c * plane..(c + 1) * plane].iter().map(|&v| v as f64).collect()
        };
        let (pre, s, post) = (slice(&probe.pre), slice(&probe.excitation), slice(&probe.post));
        // pre and post share a symmetric range so post = pre * s survives quantization
        let bound = pre.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let bound = if bound > 0.0 { bound } else { 1.0 };
        let shared = Normalization::Fixed { lo: -bound, hi: bound };
        let [pp, sp, qp] = map_paths(&a.out_dir, &a.layer, c);
        write_heatmap_pgm(&pp, &pre, h, w, shared)?;
        write_heatmap_pgm(&sp, &s, h, w, Normalization::Fixed { lo: 0.0, hi: 1.0 })?;
        write_heatmap_pgm(&qp, &post, h, w, shared)?;
        let (lo, hi) = s.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
        if hi > lo {
            varying += 1;
        }
    }
    let levels = (255 / (config.network.num_classes.max(2) - 1)) as u8;
    let labels: Vec<u8> = sample.labels.iter().map(|&l| l.saturating_mul(levels)).collect();
    write_gray_pgm(&a.out_dir.join(LABEL_MAP), &labels, sample.height(), sample.width())?;
    println!(
        "{}: {channels} channels at {h}x{w}, {varying} with spatially varying excitation; {} maps in {}",
        a.layer,
        3 * channels + 1,
        a.out_dir.display()
    );
    Ok(())
}

/// Parses `args` (program name first) and runs the command.
pub fn main_with_args(args: Vec<String>) -> CliResult<()> {
    let (rest, overrides) = crate::config::extract_overrides(args)?;
    let cli = match Cli::try_parse_from(rest) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return Ok(());
            }
            return Err(CliError::usage(e.render().to_string()));
        }
    };
    run(cli.command, &overrides)
}
