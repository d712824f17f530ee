//! `labelshed` command-line interface.

use std::collections::{BTreeMap, BTreeSet};
use std::ffi::OsString;
use std::io::Write;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::{Arc, RwLock};

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use labelshed::analysis::{chi_square_independence, clopper_pearson, ContingencyTable};
use labelshed::annotations::{diff_versions, load_annotations};
use labelshed::collapse::load_mapping;
use labelshed::dedup::{
    decode_canonical, exact_duplicates, knn_search, leak_manifest, near_duplicate_candidates, read_embeddings, read_ids,
    scan_images, KnnConfig, Metric,
};
use labelshed::evaluator::{
    group_by_model, load_predictions, load_single_labels, multi_label_accuracy, EvalOptions, GroupPartition,
    UnclearPolicy,
};
use labelshed::slicer::{audit_slice_predictions, build_major_slice, SliceDefinition};
use labelshed::triage::{attribute_mistakes, find_novel_predictions, load_items, load_mistakes, save_items, DEFAULT_MAX_ROUNDS};
use labelshed::{ClassId, CollapseMapping};

use crate::classes::ClassCatalog;
use crate::server::{router, AppState};
use crate::session::{Session, SessionConfig};

/// Environment variable that overrides `--image-root`.
pub const IMAGE_ROOT_ENV: &str = "LABELSHED_IMAGE_ROOT";

#[derive(Debug, Parser)]
#[command(name = "labelshed", version, about = "Multi-label benchmark maintenance")]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Score predictions with multi-label accuracy.
    Eval(EvalArgs),
    /// Queue every prediction outside the adjudicated label sets for review.
    Triage(TriageArgs),
    /// Panel review service.
    #[command(subcommand)]
    Review(ReviewCommand),
    /// Major-mistake slices.
    #[command(subcommand)]
    Slice(SliceCommand),
    /// Train/validation leakage detection.
    #[command(subcommand)]
    Dedup(DedupCommand),
    /// Statistical tests.
    #[command(subcommand)]
    Stats(StatsCommand),
    /// Label changes between two annotation versions.
    Diff(DiffArgs),
}

#[derive(Debug, Args)]
struct MappingArgs {
    /// Class-equivalence mapping; defaults to the built-in table.
    #[arg(long, conflicts_with = "no_collapse")]
    mapping: Option<PathBuf>,
    /// Evaluate without any class collapsing.
    #[arg(long)]
    no_collapse: bool,
}

impl MappingArgs {
    fn load(&self, class_count: Option<u32>) -> anyhow::Result<CollapseMapping> {
        if self.no_collapse {
            return Ok(CollapseMapping::empty());
        }
        Ok(match &self.mapping {
            Some(path) => load_mapping(path, class_count)?,
            None => CollapseMapping::imagenet(),
        })
    }
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    preds: PathBuf,
    #[arg(long)]
    anns: PathBuf,
    #[command(flatten)]
    mapping: MappingArgs,
    /// Report path; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// JSON object of image id to original single label; adds top-1 accuracy.
    #[arg(long)]
    single_labels: Option<PathBuf>,
    /// JSON object of group name to class list, for per-group accuracy.
    #[arg(long, requires = "single_labels")]
    groups: Option<PathBuf>,
    /// Image ids to restrict scoring to, one per line.
    #[arg(long)]
    subset: Option<PathBuf>,
    /// exclude, count-wrong or count-correct.
    #[arg(long, default_value = "exclude")]
    unclear: UnclearPolicy,
    /// Only score this model.
    #[arg(long)]
    model: Option<String>,
}

#[derive(Debug, Args)]
struct TriageArgs {
    #[arg(long)]
    preds: PathBuf,
    #[arg(long)]
    anns: PathBuf,
    #[command(flatten)]
    mapping: MappingArgs,
    /// Review items (JSON lines).
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Subcommand)]
enum ReviewCommand {
    /// Serve the review API.
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
struct ServeArgs {
    #[arg(long)]
    anns: PathBuf,
    #[arg(long)]
    items: PathBuf,
    /// Reviewer ids, comma separated.
    #[arg(long, value_delimiter = ',', required = true)]
    panel: Vec<String>,
    #[arg(long, default_value = "default")]
    session: String,
    /// Directory holding files named by image id.
    #[arg(long)]
    image_root: Option<PathBuf>,
    #[arg(long)]
    classes: Option<PathBuf>,
    /// Append-only vote log; defaults to votes.jsonl in the output directory.
    #[arg(long)]
    log: Option<PathBuf>,
    /// Where reviews.jsonl, mistakes.jsonl and the merged annotations go.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value = "127.0.0.1:8080")]
    addr: SocketAddr,
    #[arg(long, default_value_t = DEFAULT_MAX_ROUNDS)]
    max_rounds: u32,
    #[arg(long, default_value = "val")]
    dataset_tag: String,
}

#[derive(Debug, Subcommand)]
enum SliceCommand {
    /// Select images where at least k models make a major mistake.
    Build(SliceBuildArgs),
    /// Score one or more models on a slice.
    Audit(SliceAuditArgs),
}

#[derive(Debug, Args)]
struct SliceBuildArgs {
    /// Mistake ledger (JSON lines).
    #[arg(long)]
    mistakes: PathBuf,
    /// Predictions used to attribute each mistake to every model making it;
    /// without it the ledger's own model ids are used.
    #[arg(long)]
    preds: Option<PathBuf>,
    #[arg(long)]
    anns: PathBuf,
    #[arg(long, default_value_t = 3)]
    k: usize,
    #[arg(long, default_value = "major-mistakes")]
    name: String,
    /// Source models, comma separated; defaults to every model seen.
    #[arg(long, value_delimiter = ',')]
    models: Vec<String>,
    /// Image ids that went through review even though they carry no wrong
    /// labels, one per line.
    #[arg(long)]
    reviewed: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct SliceAuditArgs {
    #[arg(long)]
    slice: PathBuf,
    #[arg(long)]
    preds: PathBuf,
    #[command(flatten)]
    mapping: MappingArgs,
    #[arg(long)]
    model: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum DedupCommand {
    /// Pixel-identical images across the two directories.
    Exact(DedupExactArgs),
    /// Nearest training neighbours of validation embeddings.
    Knn(DedupKnnArgs),
}

#[derive(Debug, Args)]
struct DedupExactArgs {
    #[arg(long)]
    val_dir: PathBuf,
    #[arg(long)]
    train_dir: PathBuf,
    /// JSON object of validation image id to class.
    #[arg(long)]
    val_labels: Option<PathBuf>,
    /// JSON object of training image id to class.
    #[arg(long)]
    train_labels: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Writes leaked_val.txt and dropped_train.txt here.
    #[arg(long)]
    manifest_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct DedupKnnArgs {
    #[arg(long)]
    queries: PathBuf,
    #[arg(long)]
    query_ids: PathBuf,
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    corpus_ids: PathBuf,
    #[arg(long, default_value_t = 10)]
    k: usize,
    /// l2 or cosine.
    #[arg(long, default_value = "l2")]
    metric: Metric,
    /// Corpus rows per block.
    #[arg(long, default_value_t = 4096)]
    block: usize,
    #[arg(long)]
    threads: Option<usize>,
    /// Emit only pairs at or below this distance.
    #[arg(long)]
    threshold: Option<f64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum StatsCommand {
    /// Pearson chi-square test of independence.
    Chisq {
        /// Rows separated by ';', cells by ','.
        #[arg(long)]
        table: String,
        #[arg(long, default_value_t = 2)]
        digits: u32,
    },
    /// Clopper-Pearson interval for k successes in n trials.
    Cp {
        #[arg(long)]
        k: u64,
        #[arg(long)]
        n: u64,
        #[arg(long, default_value_t = 0.05)]
        alpha: f64,
        #[arg(long, default_value_t = 4)]
        digits: u32,
    },
}

#[derive(Debug, Args)]
struct DiffArgs {
    #[arg(long)]
    old: PathBuf,
    #[arg(long)]
    new: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Parses `args` and runs the command: 0 on success, 1 on a domain error,
/// 2 on a usage error.
pub fn run<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

pub fn execute(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Eval(a) => eval(a),
        Command::Triage(a) => triage(a),
        Command::Review(ReviewCommand::Serve(a)) => serve(a),
        Command::Slice(SliceCommand::Build(a)) => slice_build(a),
        Command::Slice(SliceCommand::Audit(a)) => slice_audit(a),
        Command::Dedup(DedupCommand::Exact(a)) => dedup_exact(a),
        Command::Dedup(DedupCommand::Knn(a)) => dedup_knn(a),
        Command::Stats(StatsCommand::Chisq { table, digits }) => {
            let t = ContingencyTable::parse(&table)?;
            let r = chi_square_independence(&t)?;
            #[derive(Serialize)]
            struct Out {
                stat: f64,
                df: u32,
                p: f64,
            }
            print_compact(&Out {
                stat: round_to(r.stat, digits),
                df: r.df,
                p: round_to(r.p, digits),
            })
        }
        Command::Stats(StatsCommand::Cp { k, n, alpha, digits }) => {
            let ci = clopper_pearson(k, n, alpha)?;
            #[derive(Serialize)]
            struct Out {
                k: u64,
                n: u64,
                alpha: f64,
                lower: f64,
                upper: f64,
            }
            print_compact(&Out {
                k,
                n,
                alpha,
                lower: round_to(ci.lower, digits),
                upper: round_to(ci.upper, digits),
            })
        }
        Command::Diff(a) => {
            let old = load_annotations(&a.old)?;
            let new = load_annotations(&a.new)?;
            write_json(a.out.as_deref(), &diff_versions(&old, &new)?)
        }
    }
}

fn round_to(x: f64, digits: u32) -> f64 {
    let scale = 10f64.powi(digits as i32);
    let r = (x * scale).round() / scale;
    if r == 0.0 {
        0.0
    } else {
        r
    }
}

fn print_compact<T: Serialize>(value: &T) -> anyhow::Result<()> {
    let mut out = std::io::stdout().lock();
    serde_json::to_writer(&mut out, value)?;
    writeln!(out)?;
    Ok(())
}

/// Pretty JSON with a trailing newline, to `path` or stdout.
fn write_json<T: Serialize>(path: Option<&Path>, value: &T) -> anyhow::Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    match path {
        Some(p) => std::fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            std::io::stdout().lock().write_all(text.as_bytes())?;
            Ok(())
        }
    }
}

fn read_id_set(path: &Path) -> anyhow::Result<BTreeSet<String>> {
    Ok(read_ids(path)?.into_iter().filter(|s| !s.trim().is_empty()).collect())
}

fn eval(a: EvalArgs) -> anyhow::Result<()> {
    let anns = load_annotations(&a.anns)?;
    let mapping = a.mapping.load(Some(anns.class_count()))?;
    let mut by_model = group_by_model(load_predictions(&a.preds)?);
    if let Some(m) = &a.model {
        by_model.retain(|k, _| k == m);
        if by_model.is_empty() {
            bail!("no predictions for model {m:?}");
        }
    }
    if by_model.is_empty() {
        bail!("{} holds no predictions", a.preds.display());
    }
    let subset = a.subset.as_deref().map(read_id_set).transpose()?;
    let groups = a.groups.as_deref().map(GroupPartition::load).transpose()?;
    let single = a.single_labels.as_deref().map(load_single_labels).transpose()?;
    let options = EvalOptions {
        unclear_policy: a.unclear,
        subset: subset.as_ref(),
        groups: groups.as_ref(),
        single_labels: single.as_ref(),
    };
    let reports = by_model
        .values()
        .map(|rows| multi_label_accuracy(rows, &anns, &mapping, &options))
        .collect::<labelshed::Result<Vec<_>>>()?;
    if reports.len() == 1 {
        write_json(a.out.as_deref(), &reports[0])
    } else {
        write_json(a.out.as_deref(), &reports)
    }
}

fn triage(a: TriageArgs) -> anyhow::Result<()> {
    let anns = load_annotations(&a.anns)?;
    let mapping = a.mapping.load(Some(anns.class_count()))?;
    let preds = load_predictions(&a.preds)?;
    let items = find_novel_predictions(&preds, &anns, &mapping)?;
    save_items(&a.out, &items)?;
    eprintln!("{} item(s) queued for review", items.len());
    Ok(())
}

fn serve(a: ServeArgs) -> anyhow::Result<()> {
    let image_root = std::env::var_os(IMAGE_ROOT_ENV)
        .map(PathBuf::from)
        .or(a.image_root);
    let anns = load_annotations(&a.anns)?;
    let classes = a
        .classes
        .as_deref()
        .map(|p| ClassCatalog::load(p, Some(anns.class_count())))
        .transpose()?;
    let items = load_items(&a.items)?;
    let log = a.log.unwrap_or_else(|| a.out.join("votes.jsonl"));
    let config = SessionConfig {
        session_id: a.session,
        panel: a.panel,
        max_rounds: a.max_rounds,
        dataset_tag: a.dataset_tag,
    };
    let session = Session::open(config, anns, items, &log, Some(a.out.clone()))?;
    let state = Arc::new(AppState {
        session: RwLock::new(session),
        classes,
        image_root,
    });
    let runtime = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    runtime.block_on(async move {
        let listener = tokio::net::TcpListener::bind(a.addr)
            .await
            .with_context(|| format!("binding {}", a.addr))?;
        eprintln!("review service listening on http://{}", listener.local_addr()?);
        axum::serve(listener, router(state)).await?;
        Ok(())
    })
}

fn slice_build(a: SliceBuildArgs) -> anyhow::Result<()> {
    let anns = load_annotations(&a.anns)?;
    let ledger = load_mistakes(&a.mistakes)?;
    let mistakes = match &a.preds {
        Some(p) => attribute_mistakes(&ledger, &load_predictions(p)?),
        None => {
            let mut by_model: BTreeMap<String, Vec<_>> = BTreeMap::new();
            for m in ledger {
                by_model.entry(m.model_id.clone()).or_default().push(m);
            }
            by_model
        }
    };
    let models: Vec<String> = if a.models.is_empty() {
        mistakes.keys().cloned().collect()
    } else {
        a.models
    };
    let slice = build_major_slice(&mistakes, &models, &anns, a.k, &a.name)?;
    let reviewed = a.reviewed.as_deref().map(read_id_set).transpose()?.unwrap_or_default();
    slice.export(&a.out, &reviewed)?;
    eprintln!("slice {:?}: {} image(s)", slice.name, slice.len());
    Ok(())
}

fn slice_audit(a: SliceAuditArgs) -> anyhow::Result<()> {
    let slice = SliceDefinition::load(&a.slice)?;
    let mapping = a.mapping.load(None)?;
    let mut by_model = group_by_model(load_predictions(&a.preds)?);
    if let Some(m) = &a.model {
        by_model.retain(|k, _| k == m);
        if by_model.is_empty() {
            bail!("no predictions for model {m:?}");
        }
    }
    let audits = by_model
        .values()
        .map(|rows| audit_slice_predictions(rows, &slice, &mapping))
        .collect::<labelshed::Result<Vec<_>>>()?;
    if audits.len() == 1 {
        write_json(a.out.as_deref(), &audits[0])
    } else {
        write_json(a.out.as_deref(), &audits)
    }
}

fn load_label_map(path: Option<&Path>) -> anyhow::Result<BTreeMap<String, ClassId>> {
    Ok(match path {
        Some(p) => load_single_labels(p)?,
        None => BTreeMap::new(),
    })
}

fn dedup_exact(a: DedupExactArgs) -> anyhow::Result<()> {
    let val = scan_images(&a.val_dir)?;
    let train = scan_images(&a.train_dir)?;
    let paths: BTreeMap<(bool, &str), &Path> = val
        .iter()
        .map(|s| ((true, s.digest.image_id.as_str()), s.path.as_path()))
        .chain(train.iter().map(|s| ((false, s.digest.image_id.as_str()), s.path.as_path())))
        .collect();
    let val_digests: Vec<_> = val.iter().map(|s| s.digest.clone()).collect();
    let train_digests: Vec<_> = train.iter().map(|s| s.digest.clone()).collect();
    let val_labels = load_label_map(a.val_labels.as_deref())?;
    let train_labels = load_label_map(a.train_labels.as_deref())?;
    let report = exact_duplicates(&val_digests, &train_digests, &val_labels, &train_labels, |v, t| {
        let left = decode_canonical(paths[&(true, v.image_id.as_str())])?;
        let right = decode_canonical(paths[&(false, t.image_id.as_str())])?;
        Ok(left.dimensions() == right.dimensions() && left.as_raw() == right.as_raw())
    })?;
    if let Some(dir) = &a.manifest_dir {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        let (leaked, dropped) = leak_manifest(&report);
        write_lines(&dir.join("leaked_val.txt"), &leaked)?;
        write_lines(&dir.join("dropped_train.txt"), &dropped)?;
    }
    write_json(a.out.as_deref(), &report)
}

fn write_lines(path: &Path, ids: &BTreeSet<String>) -> anyhow::Result<()> {
    let mut text = String::new();
    for id in ids {
        text.push_str(id);
        text.push('\n');
    }
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn dedup_knn(a: DedupKnnArgs) -> anyhow::Result<()> {
    let queries = read_embeddings(&a.queries, &a.query_ids)?;
    let corpus = read_embeddings(&a.corpus, &a.corpus_ids)?;
    let config = KnnConfig {
        k: a.k,
        metric: a.metric,
        block_size: a.block,
        threads: a.threads,
        ..KnnConfig::default()
    };
    let lists = knn_search(&queries, &corpus, &config)?;
    match a.threshold {
        Some(t) => write_json(a.out.as_deref(), &near_duplicate_candidates(&lists, t)),
        None => write_json(a.out.as_deref(), &lists),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rounding() {
        assert_eq!(round_to(0.364630, 2), 0.36);
        assert_eq!(round_to(0.0528030, 4), 0.0528);
        assert_eq!(round_to(-0.0001, 2), 0.0);
    }

    #[test]
    fn parser_is_consistent() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }
}
