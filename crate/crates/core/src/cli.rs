//! Command-line front end. Every subcommand is a thin wrapper over the
//! library; `run` returns the exit status instead of exiting.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::cfg::{find_loops, function_acfgs, serialize, to_dot};
use crate::detector::{
    build_templates, cross_validate, load_manifest, load_sample, scan, sweep_threshold,
    sweep_to_text, write_acfgs, CvConfig, DetectOptions, Granularity, LabeledSample, Mode,
    SourceSample, TemplateStore, DEFAULT_THRESHOLD,
};
use crate::disasm::{parse_disasm_with, Arch};
use crate::lift::{lift_program, LiftOptions};
use crate::mail::{emit_mail, ClassifyOptions};
use crate::matcher::{subgraph_match_with, MatchOptions, MatchOutcome, DEFAULT_BUDGET};
use crate::synth::{synthetic_corpus, CorpusConfig};

#[derive(Parser, Debug)]
#[command(
    name = "mailkit",
    version,
    about = "Lift disassembly to MAIL, build annotated CFGs, and match them against malware templates"
)]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Global {
    /// Default architecture for listings without an ARCH directive.
    #[arg(long, global = true, default_value = "x86", value_parser = parse_arch)]
    arch: Arch,
    /// Tag library calls as CALL/CALL_CONSTANT.
    #[arg(long, global = true)]
    compat: bool,
    /// Worker threads for corpus-level work (default: all processors).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// More log output; repeat for more.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    /// Write the main output here instead of standard output.
    #[arg(short, long, global = true)]
    output: Option<PathBuf>,
}

fn parse_arch(s: &str) -> Result<Arch, String> {
    s.parse()
}

fn parse_fraction(s: &str) -> Result<f64, String> {
    let t: f64 = s.parse().map_err(|e| format!("{e}"))?;
    if t > 0.0 && t <= 1.0 {
        Ok(t)
    } else {
        Err(format!("{t} is outside (0, 1]"))
    }
}

#[derive(Args, Debug)]
struct StoreArg {
    /// Template store directory.
    #[arg(long, env = "MAIL_STORE")]
    store: PathBuf,
}

#[derive(Args, Debug, Clone, Copy)]
struct MatchArgs {
    /// Match on structure only, ignoring pattern sequences.
    #[arg(long)]
    no_patterns: bool,
    /// Candidate pair checks per graph pair before giving up.
    #[arg(long, default_value_t = DEFAULT_BUDGET)]
    budget: u64,
}

impl MatchArgs {
    fn options(self) -> MatchOptions {
        MatchOptions {
            use_patterns: !self.no_patterns,
            budget: self.budget,
        }
    }
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
enum Format {
    Text,
    Json,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Disassembly to MAIL text.
    Translate { input: PathBuf },
    /// Disassembly to serialized ACFGs.
    Cfg {
        input: PathBuf,
        #[arg(long)]
        normalize: bool,
        /// Append loop summaries as comment lines.
        #[arg(long)]
        loops: bool,
        /// Graphviz output instead of the ACFG format.
        #[arg(long)]
        dot: bool,
    },
    /// Match every template graph against every target graph.
    Match {
        template: PathBuf,
        target: PathBuf,
        #[command(flatten)]
        matching: MatchArgs,
    },
    /// Build a template store from malware listings or ACFG files.
    BuildTemplates {
        #[command(flatten)]
        store: StoreArg,
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
    },
    /// Classify samples against a template store.
    Detect {
        #[command(flatten)]
        store: StoreArg,
        /// Flag a sample when any template graph embeds in it.
        #[arg(long, conflicts_with = "threshold")]
        exact: bool,
        /// Flag a sample when this fraction of some template's graphs match.
        #[arg(long, value_parser = parse_fraction)]
        threshold: Option<f64>,
        /// What exact mode matches against.
        #[arg(long, value_enum, default_value = "function")]
        granularity: GranularityArg,
        #[command(flatten)]
        matching: MatchArgs,
        #[arg(long, value_enum, default_value = "json")]
        format: Format,
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
    },
    /// Repeated train/test rounds over a labelled corpus manifest.
    Xval {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, default_value_t = 10, value_parser = clap::value_parser!(u64).range(2..))]
        folds: u64,
        #[arg(long, default_value_t = 1)]
        train: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = DEFAULT_THRESHOLD, value_parser = parse_fraction)]
        threshold: f64,
        #[command(flatten)]
        matching: MatchArgs,
        #[arg(long, value_enum, default_value = "text")]
        format: Format,
    },
    /// Detection and false-positive rates over a list of thresholds.
    Sweep {
        #[command(flatten)]
        store: StoreArg,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, value_delimiter = ',', required = true, value_parser = parse_fraction)]
        thresholds: Vec<f64>,
        #[command(flatten)]
        matching: MatchArgs,
        #[arg(long, value_enum, default_value = "text")]
        format: Format,
    },
    /// Write a synthetic labelled corpus of ACFG files with a manifest.
    SynthCorpus {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long, default_value_t = 6)]
        families: usize,
        #[arg(long, default_value_t = 5)]
        members: usize,
        #[arg(long, default_value_t = 30)]
        benign: usize,
    },
}

#[derive(ValueEnum, Debug, Clone, Copy)]
enum GranularityArg {
    Function,
    Program,
}

type Failure = Box<dyn std::error::Error + Send + Sync>;

fn read(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()).into())
}

fn sample_name(path: &Path) -> String {
    path.file_name().map_or_else(
        || path.display().to_string(),
        |n| n.to_string_lossy().into_owned(),
    )
}

fn load_corpus(
    manifest: &Path,
    arch: Arch,
    lift: LiftOptions,
) -> Result<Vec<LabeledSample>, Failure> {
    let entries = load_manifest(manifest, arch)?;
    Ok(entries
        .iter()
        .map(|e| e.load(lift))
        .collect::<Result<_, _>>()?)
}

struct Ctx {
    arch: Arch,
    lift: LiftOptions,
}

fn execute(
    cmd: Command,
    ctx: &Ctx,
    out: &mut dyn Write,
    err: &mut dyn Write,
) -> Result<(), Failure> {
    match cmd {
        Command::Translate { input } => {
            let spans = parse_disasm_with(&read(&input)?, ctx.arch)?;
            out.write_all(emit_mail(&lift_program(&spans, ctx.lift)).as_bytes())?;
        }
        Command::Cfg {
            input,
            normalize,
            loops,
            dot,
        } => {
            let spans = parse_disasm_with(&read(&input)?, ctx.arch)?;
            let program = lift_program(&spans, ctx.lift);
            for g in function_acfgs(&program, normalize) {
                if dot {
                    out.write_all(to_dot(&g).as_bytes())?;
                } else {
                    out.write_all(serialize(&g).as_bytes())?;
                }
                if loops {
                    let info = find_loops(&g);
                    let edges = |e: &[(usize, usize)]| {
                        e.iter()
                            .map(|(s, d)| format!("{s}->{d}"))
                            .collect::<Vec<_>>()
                            .join(" ")
                    };
                    writeln!(out, "# loops {}: {}", g.name, info.summary())?;
                    writeln!(out, "# back edges: {}", edges(&info.back_edges))?;
                    writeln!(
                        out,
                        "# backward branches: {}",
                        edges(&info.backward_branches)
                    )?;
                    if !info.irreducible.is_empty() {
                        writeln!(out, "# irreducible: {}", edges(&info.irreducible))?;
                    }
                }
            }
        }
        Command::Match {
            template,
            target,
            matching,
        } => {
            let t = load_sample(&sample_name(&template), &template, ctx.arch, ctx.lift)?;
            let g = load_sample(&sample_name(&target), &target, ctx.arch, ctx.lift)?;
            for tg in &t.acfgs {
                let mut line = format!("{}: not found", tg.name);
                for gg in &g.acfgs {
                    match subgraph_match_with(tg, gg, matching.options()) {
                        MatchOutcome::Found(m) => {
                            let pairs: Vec<String> = m
                                .pairs
                                .iter()
                                .enumerate()
                                .map(|(a, b)| format!("{a}->{b}"))
                                .collect();
                            line =
                                format!("{}: found in {}: {}", tg.name, gg.name, pairs.join(" "));
                            break;
                        }
                        MatchOutcome::Inconclusive { expansions } => {
                            line = format!(
                                "{}: inconclusive against {} after {expansions} expansions",
                                tg.name, gg.name
                            );
                        }
                        MatchOutcome::NotFound => {}
                    }
                }
                writeln!(out, "{line}")?;
            }
        }
        Command::BuildTemplates { store, inputs } => {
            let mut samples = Vec::new();
            for p in &inputs {
                samples.push(SourceSample {
                    name: sample_name(p),
                    text: read(p)?,
                    arch: ctx.arch,
                    source: Some(p.display().to_string()),
                });
            }
            let built = build_templates(&samples, ctx.lift);
            for (name, why) in &built.skipped {
                writeln!(err, "skipped {name}: {why}")?;
            }
            for note in &built.notes {
                writeln!(err, "{note}")?;
            }
            built.store.save(&store.store)?;
            writeln!(
                out,
                "{} templates written to {}",
                built.store.len(),
                store.store.display()
            )?;
        }
        Command::Detect {
            store,
            exact,
            threshold,
            granularity,
            matching,
            format,
            inputs,
        } => {
            let templates = TemplateStore::load(&store.store)?;
            let samples = inputs
                .iter()
                .map(|p| load_sample(&sample_name(p), p, ctx.arch, ctx.lift))
                .collect::<Result<Vec<_>, _>>()?;
            let mode = if exact {
                Mode::Exact
            } else {
                Mode::Threshold(threshold.unwrap_or(DEFAULT_THRESHOLD))
            };
            let granularity = match granularity {
                GranularityArg::Function => Granularity::Function,
                GranularityArg::Program => Granularity::Program,
            };
            let opts = DetectOptions {
                matching: matching.options(),
                granularity,
            };
            for r in scan(&templates, &samples, mode, opts)? {
                for d in &r.diagnostics {
                    writeln!(err, "{}: {d}", r.sample)?;
                }
                match format {
                    Format::Json => writeln!(out, "{}", r.to_json_line())?,
                    Format::Text => writeln!(out, "{}", r.to_text())?,
                }
            }
        }
        Command::Xval {
            corpus,
            folds,
            train,
            seed,
            threshold,
            matching,
            format,
        } => {
            let samples = load_corpus(&corpus, ctx.arch, ctx.lift)?;
            let detect = DetectOptions {
                matching: matching.options(),
                ..Default::default()
            };
            let config = CvConfig {
                folds: folds as usize,
                train_size: train,
                threshold,
                seed,
                detect,
            };
            let report = cross_validate(&samples, config)?;
            match format {
                Format::Json => out.write_all(report.to_json().as_bytes())?,
                Format::Text => out.write_all(report.to_text().as_bytes())?,
            }
        }
        Command::Sweep {
            store,
            corpus,
            thresholds,
            matching,
            format,
        } => {
            let templates = TemplateStore::load(&store.store)?;
            let samples = load_corpus(&corpus, ctx.arch, ctx.lift)?;
            let detect = DetectOptions {
                matching: matching.options(),
                ..Default::default()
            };
            let rows = sweep_threshold(&templates, &samples, &thresholds, detect)?;
            match format {
                Format::Json => {
                    for r in &rows {
                        writeln!(out, "{}", serde_json::to_string(r)?)?;
                    }
                }
                Format::Text => out.write_all(sweep_to_text(&rows).as_bytes())?,
            }
        }
        Command::SynthCorpus {
            out: dir,
            seed,
            families,
            members,
            benign,
        } => {
            let config = CorpusConfig {
                families,
                members,
                benign,
                seed,
                ..Default::default()
            };
            fs::create_dir_all(&dir).map_err(|e| format!("{}: {e}", dir.display()))?;
            let mut manifest = String::from("# label path\n");
            for s in synthetic_corpus(config) {
                let file = format!("{}.acfg", s.graphs.name);
                write_acfgs(&dir.join(&file), &s.graphs)?;
                manifest.push_str(&format!(
                    "{} {file}\n",
                    if s.malware { "malware" } else { "benign" }
                ));
            }
            let path = dir.join("manifest.txt");
            fs::write(&path, manifest).map_err(|e| format!("{}: {e}", path.display()))?;
            writeln!(out, "{}", path.display())?;
        }
    }
    Ok(())
}

/// Parses `argv` (program name first) and runs one subcommand. Returns 0 on
/// success, 1 on operational errors and 2 on usage errors. Verdicts never
/// affect the status.
pub fn run<I, T>(argv: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = e.exit_code();
            let text = e.render().to_string();
            let _ = if code == 0 {
                out.write_all(text.as_bytes())
            } else {
                err.write_all(text.as_bytes())
            };
            return code;
        }
    };
    let level = match cli.global.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        2 => log::LevelFilter::Debug,
        _ => log::LevelFilter::Trace,
    };
    let _ = env_logger::Builder::new()
        .filter_level(level)
        .parse_default_env()
        .try_init();

    let ctx = Ctx {
        arch: cli.global.arch,
        lift: LiftOptions {
            classify: ClassifyOptions {
                libcall_as_call: cli.global.compat,
            },
        },
    };
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cli.global.jobs {
        pool = pool.num_threads(n);
    }
    let pool = match pool.build() {
        Ok(p) => p,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            return 1;
        }
    };

    let output = cli.global.output.clone();
    let (result, obuf, ebuf) = pool.install(move || {
        let (mut obuf, mut ebuf) = (Vec::new(), Vec::new());
        let r = execute(cli.command, &ctx, &mut obuf, &mut ebuf);
        (r, obuf, ebuf)
    });
    let _ = err.write_all(&ebuf);
    let result = result.and_then(|()| match &output {
        Some(path) => fs::write(path, &obuf).map_err(|e| format!("{}: {e}", path.display()).into()),
        None => out.write_all(&obuf).map_err(Into::into),
    });
    match result {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            1
        }
    }
}
