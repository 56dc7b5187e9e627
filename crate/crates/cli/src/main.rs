//! `miaudit`: validate exported records, score them, evaluate scores, and run
//! the synthetic n-gram experiment.
//!
//! Exit status: 0 success, 1 usage error, 2 data error.

mod config;
mod tables;

use std::fs::{self, File};
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use miaudit_core::eval::{self, build_report};
use miaudit_core::records::{self, parse_records};
use miaudit_core::toylab;
use miaudit_core::{
    Dataset, LabConfig, Label, MetricSpec, ParseError, ParseMode, ReportLayout, ScoredSample,
};

use config::{Effective, RunConfig};

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Data(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Data(m) => m,
        }
    }
}

#[derive(Parser, Debug)]
#[command(
    name = "miaudit",
    version,
    about = "Membership-inference metrics over exported next-token distributions"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// TOML run configuration
    #[arg(long)]
    config: Option<PathBuf>,
    /// strict or lenient record parsing
    #[arg(long)]
    parse_mode: Option<String>,
    /// worker threads (default: available cores)
    #[arg(long)]
    jobs: Option<usize>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Parse records and report per-metric computability
    Validate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        records: Vec<PathBuf>,
        /// also write the report to this file
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Score records under the configured metrics
    Score {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        records: Vec<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate scores (or score and evaluate records)
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long, conflicts_with = "records")]
        scores: Option<PathBuf>,
        #[arg(long)]
        records: Vec<PathBuf>,
        /// FPR target for the TPR column; repeatable
        #[arg(long = "fpr")]
        fpr: Vec<f64>,
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Generate the synthetic corpus, fit the n-gram model, score and evaluate
    Synth {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        alphabet_size: Option<usize>,
        #[arg(long)]
        length: Option<usize>,
        #[arg(long)]
        n_member: Option<usize>,
        #[arg(long)]
        n_nonmember: Option<usize>,
        #[arg(long)]
        order: Option<usize>,
        #[arg(long)]
        beta: Option<f64>,
        #[arg(long)]
        augmentations: Option<usize>,
        #[arg(long = "fpr")]
        fpr: Vec<f64>,
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Re-render an existing report.csv
    Report {
        #[arg(long)]
        input: PathBuf,
        /// grid or csv
        #[arg(long, default_value = "grid")]
        format: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn data(e: impl std::fmt::Display) -> CliError {
    CliError::Data(e.to_string().replace('\n', " "))
}

fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| data(format!("{}: {e}", dir.display())))?;
    }
    fs::write(path, contents).map_err(|e| data(format!("{}: {e}", path.display())))
}

fn read_file(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| data(format!("{}: {e}", path.display())))
}

fn parse_error(path: &Path, e: ParseError) -> CliError {
    data(format!("{}: {e}", path.display()))
}

struct Loaded {
    dataset: Dataset,
    rejected: Vec<(PathBuf, ParseError)>,
}

fn load_records(paths: &[PathBuf], mode: ParseMode) -> Result<Loaded, CliError> {
    if paths.is_empty() {
        return Err(CliError::Usage(
            "no records given (--records or `records` in the config)".into(),
        ));
    }
    let mut dataset = Dataset::default();
    let mut rejected = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for path in paths {
        let file = File::open(path).map_err(|e| data(format!("{}: {e}", path.display())))?;
        let outcome =
            parse_records(BufReader::new(file), mode).map_err(|e| parse_error(path, e))?;
        for s in &outcome.dataset.samples {
            if !seen.insert(s.id.clone()) {
                return Err(data(format!(
                    "{}: duplicate sample id {:?} across files",
                    path.display(),
                    s.id
                )));
            }
        }
        dataset.samples.extend(outcome.dataset.samples);
        dataset.metadata.extend(outcome.dataset.metadata);
        rejected.extend(outcome.rejected.into_iter().map(|e| (path.clone(), e)));
    }
    Ok(Loaded { dataset, rejected })
}

fn pool(jobs: Option<usize>) -> Result<rayon::ThreadPool, CliError> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.unwrap_or(0))
        .build()
        .map_err(|e| CliError::Usage(format!("thread pool: {e}")))
}

struct Settings {
    cfg: RunConfig,
    parse_mode: ParseMode,
    metrics: Vec<MetricSpec>,
    jobs: Option<usize>,
}

fn settings(common: &Common) -> Result<Settings, CliError> {
    let cfg = RunConfig::load(common.config.as_deref())?;
    let parse_mode = match common.parse_mode.as_deref().or(cfg.parse_mode.as_deref()) {
        Some(name) => config::parse_mode(name)?,
        None => ParseMode::Strict,
    };
    let metrics = config::metrics(&cfg)?;
    let jobs = common.jobs.or(cfg.jobs);
    if jobs == Some(0) {
        return Err(CliError::Usage("--jobs must be at least 1".into()));
    }
    Ok(Settings {
        cfg,
        parse_mode,
        metrics,
        jobs,
    })
}

fn record_paths(flags: &[PathBuf], cfg: &RunConfig) -> Vec<PathBuf> {
    if flags.is_empty() {
        cfg.records.clone()
    } else {
        flags.to_vec()
    }
}

fn score_all(
    dataset: &Dataset,
    metrics: &[MetricSpec],
    jobs: Option<usize>,
) -> Result<Vec<ScoredSample>, CliError> {
    pool(jobs)?
        .install(|| miaudit_core::metrics::score_dataset(dataset, metrics))
        .map_err(data)
}

fn write_eval_outputs(
    dir: &Path,
    provenance: &str,
    scores: &[ScoredSample],
    fprs: &[f64],
    jobs: Option<usize>,
) -> Result<String, CliError> {
    let results = pool(jobs)?
        .install(|| eval::evaluate(scores, fprs))
        .map_err(data)?;
    let report = build_report(&results, ReportLayout { include_tpr: true });
    write_file(
        &dir.join("report.csv"),
        &tables::report_csv(provenance, &report),
    )?;
    let grid = tables::report_txt(provenance, &report);
    write_file(&dir.join("report.txt"), &grid)?;
    write_file(&dir.join("roc.csv"), &tables::roc_csv(provenance, &results))?;
    Ok(grid)
}

fn validate(common: &Common, records: &[PathBuf], out: Option<&Path>) -> Result<(), CliError> {
    let s = settings(common)?;
    let paths = record_paths(records, &s.cfg);
    let loaded = load_records(&paths, s.parse_mode)?;
    let effective = Effective {
        parse_mode: s.parse_mode,
        metrics: &s.metrics,
        fpr_targets: &[],
        lab: None,
    };
    let report = records::validate_dataset(&loaded.dataset, &s.metrics);
    let d = &loaded.dataset;
    let mut text = format!(
        "records: {} (member {}, nonmember {}, unknown {})\nrejected: {}\n",
        d.samples.len(),
        d.count(Label::Member),
        d.count(Label::Nonmember),
        d.count(Label::Unknown),
        loaded.rejected.len()
    );
    for (path, e) in &loaded.rejected {
        text.push_str(&format!(
            "  {}: {}\n",
            path.display(),
            e.to_string().replace('\n', " ")
        ));
    }
    text.push_str("computable\tmetric\n");
    for (i, m) in report.metrics.iter().enumerate() {
        text.push_str(&format!(
            "{}/{}\t{m}\n",
            report.computable_count(i),
            report.samples.len()
        ));
    }
    print!("{text}");
    if let Some(out) = out.or(s.cfg.out.as_deref()) {
        write_file(out, &format!("{}\n{text}", effective.provenance()))?;
    }
    if let Some((path, e)) = loaded.rejected.first() {
        return Err(data(format!(
            "{}: {} invalid record line(s), first: {e}",
            path.display(),
            loaded.rejected.len()
        )));
    }
    Ok(())
}

fn score(common: &Common, records: &[PathBuf], out: Option<&Path>) -> Result<(), CliError> {
    let s = settings(common)?;
    let out = out
        .or(s.cfg.out.as_deref())
        .ok_or_else(|| CliError::Usage("score needs --out".into()))?;
    let loaded = load_records(&record_paths(records, &s.cfg), s.parse_mode)?;
    let scores = score_all(&loaded.dataset, &s.metrics, s.jobs)?;
    let effective = Effective {
        parse_mode: s.parse_mode,
        metrics: &s.metrics,
        fpr_targets: &[],
        lab: None,
    };
    write_file(out, &tables::scores_csv(&effective.provenance(), &scores))
}

fn eval_cmd(
    common: &Common,
    scores_path: Option<&Path>,
    records: &[PathBuf],
    fpr: &[f64],
    out_dir: Option<&Path>,
) -> Result<(), CliError> {
    let s = settings(common)?;
    let fprs = config::fpr_targets(&s.cfg, fpr)?;
    let dir = out_dir
        .or(s.cfg.out_dir.as_deref())
        .ok_or_else(|| CliError::Usage("eval needs --out-dir".into()))?;
    let scores = match scores_path {
        Some(p) => tables::parse_scores(&read_file(p)?)
            .map_err(|e| data(format!("{}: {}", p.display(), e.message())))?,
        None => {
            let loaded = load_records(&record_paths(records, &s.cfg), s.parse_mode)?;
            score_all(&loaded.dataset, &s.metrics, s.jobs)?
        }
    };
    let effective = Effective {
        parse_mode: s.parse_mode,
        metrics: &s.metrics,
        fpr_targets: &fprs,
        lab: None,
    };
    let grid = write_eval_outputs(dir, &effective.provenance(), &scores, &fprs, s.jobs)?;
    print!("{grid}");
    Ok(())
}

struct LabFlags {
    seed: Option<u64>,
    alphabet_size: Option<usize>,
    length: Option<usize>,
    n_member: Option<usize>,
    n_nonmember: Option<usize>,
    order: Option<usize>,
    beta: Option<f64>,
    augmentations: Option<usize>,
}

fn synth(
    common: &Common,
    flags: LabFlags,
    fpr: &[f64],
    out_dir: Option<&Path>,
) -> Result<(), CliError> {
    let s = settings(common)?;
    let fprs = config::fpr_targets(&s.cfg, fpr)?;
    let dir = out_dir
        .or(s.cfg.out_dir.as_deref())
        .ok_or_else(|| CliError::Usage("synth needs --out-dir".into()))?;
    let base = s.cfg.lab.clone().unwrap_or_default();
    let lab = LabConfig {
        seed: flags.seed.unwrap_or(base.seed),
        alphabet_size: flags.alphabet_size.unwrap_or(base.alphabet_size),
        string_length: flags.length.unwrap_or(base.string_length),
        n_member: flags.n_member.unwrap_or(base.n_member),
        n_nonmember: flags.n_nonmember.unwrap_or(base.n_nonmember),
        ngram_order: flags.order.unwrap_or(base.ngram_order),
        smoothing_beta: flags.beta.unwrap_or(base.smoothing_beta),
        augmentations: flags.augmentations.unwrap_or(base.augmentations),
    };
    lab.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    let effective = Effective {
        parse_mode: s.parse_mode,
        metrics: &s.metrics,
        fpr_targets: &fprs,
        lab: Some(&lab),
    };
    let provenance = effective.provenance();
    let (members, nonmembers) = toylab::gen_corpus(&lab).map_err(data)?;
    let model = toylab::fit_ngram(
        &members,
        lab.alphabet_size,
        lab.ngram_order,
        lab.smoothing_beta,
    );
    let dataset =
        pool(s.jobs)?.install(|| toylab::emit_dataset(&model, &lab, &members, &nonmembers));

    let mut jsonl = Vec::new();
    writeln!(jsonl, "{provenance}").expect("in-memory write");
    dataset.write_to(&mut jsonl).expect("in-memory write");
    write_file(
        &dir.join("records.jsonl"),
        std::str::from_utf8(&jsonl).expect("utf-8 records"),
    )?;

    let scores = score_all(&dataset, &s.metrics, s.jobs)?;
    write_file(
        &dir.join("scores.csv"),
        &tables::scores_csv(&provenance, &scores),
    )?;
    let grid = write_eval_outputs(dir, &provenance, &scores, &fprs, s.jobs)?;
    print!("{grid}");
    Ok(())
}

fn report(input: &Path, format: &str, out: Option<&Path>) -> Result<(), CliError> {
    let text = read_file(input)?;
    let provenance = text
        .lines()
        .next()
        .filter(|l| l.starts_with("# provenance:"))
        .ok_or_else(|| data(format!("{}: missing provenance line", input.display())))?
        .to_string();
    let parsed = tables::parse_report(&text)
        .map_err(|e| data(format!("{}: {}", input.display(), e.message())))?;
    let rendered = match format {
        "grid" => tables::report_txt(&provenance, &parsed),
        "csv" => tables::report_csv(&provenance, &parsed),
        other => {
            return Err(CliError::Usage(format!(
                "--format must be grid or csv, got {other:?}"
            )))
        }
    };
    match out {
        Some(path) => write_file(path, &rendered),
        None => {
            print!("{rendered}");
            Ok(())
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Validate {
            common,
            records,
            out,
        } => validate(&common, &records, out.as_deref()),
        Command::Score {
            common,
            records,
            out,
        } => score(&common, &records, out.as_deref()),
        Command::Eval {
            common,
            scores,
            records,
            fpr,
            out_dir,
        } => eval_cmd(
            &common,
            scores.as_deref(),
            &records,
            &fpr,
            out_dir.as_deref(),
        ),
        Command::Synth {
            common,
            seed,
            alphabet_size,
            length,
            n_member,
            n_nonmember,
            order,
            beta,
            augmentations,
            fpr,
            out_dir,
        } => synth(
            &common,
            LabFlags {
                seed,
                alphabet_size,
                length,
                n_member,
                n_nonmember,
                order,
                beta,
                augmentations,
            },
            &fpr,
            out_dir.as_deref(),
        ),
        Command::Report { input, format, out } => report(&input, &format, out.as_deref()),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let rendered = e.to_string();
            let first = rendered.lines().next().unwrap_or("usage error");
            eprintln!("{first} (see --help)");
            return ExitCode::from(1);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.code())
        }
    }
}
