//! Command implementations behind the `xkalign` binary.

pub mod config;

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use xkalign::eval::{evaluate, split_by_seed_fraction, split_ills, EvalReport};
use xkalign::joint::{run_pipeline, write_alignments, write_iteration_log, PipelineResult};
use xkalign::kg::{build_initial_seeds, load_graph, load_ills, resolve_ills, EntityId, KnowledgeGraph};
use xkalign::similarity::{SimilarityMatrix, View};
use xkalign::synth::{generate_synth, SynthSpec};

pub use config::PipelineConfig;

/// Failure classes mapped to exit codes.
#[derive(Debug)]
pub enum CliError {
    Usage(anyhow::Error),
    Runtime(anyhow::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(e) | CliError::Runtime(e) => write!(f, "{e:#}"),
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;

pub fn usage<T>(r: anyhow::Result<T>) -> CliResult<T> {
    r.map_err(CliError::Usage)
}

pub fn runtime<T>(r: anyhow::Result<T>) -> CliResult<T> {
    r.map_err(CliError::Runtime)
}

pub const ITERATIONS_FILE: &str = "iterations.jsonl";
pub const ALIGNMENTS_FILE: &str = "alignments.tsv";
pub const EVAL_FILE: &str = "eval.json";
pub const SIMILARITY_FILE: &str = "similarity.bin";
pub const TEST_PAIRS_FILE: &str = "test_pairs.tsv";
pub const TRANSLATION_FILE: &str = "translation.tsv";
pub const EMBEDDINGS_FILE: &str = "embeddings.tsv";
pub const CONFIG_FILE: &str = "config.toml";

struct Inputs {
    g: KnowledgeGraph,
    g2: KnowledgeGraph,
    ills: Vec<(String, String)>,
    train_fraction: Option<f64>,
}

fn load_inputs(cfg: &PipelineConfig) -> anyhow::Result<Inputs> {
    if let Some(spec) = &cfg.synth {
        let data = generate_synth(spec)?;
        data.write(cfg.output_dir.join("data"))?;
        let (g, g2) = data.graphs();
        return Ok(Inputs {
            g,
            g2,
            ills: data.entity_pairs,
            train_fraction: Some(cfg.split.train_fraction.unwrap_or(spec.seed_fraction)),
        });
    }
    let paths = cfg.data.resolve()?;
    let g = load_graph(&paths.rel[0], &paths.attr[0])?;
    let g2 = load_graph(&paths.rel[1], &paths.attr[1])?;
    Ok(Inputs {
        g,
        g2,
        ills: load_ills(&paths.ills)?,
        train_fraction: cfg.split.train_fraction,
    })
}

/// Everything `align` produces.
pub struct AlignOutcome {
    pub result: PipelineResult,
    pub report: EvalReport,
    pub test: Vec<(EntityId, EntityId)>,
}

/// Runs the pipeline and writes all outputs into `cfg.output_dir`.
pub fn cmd_align(cfg: &PipelineConfig) -> CliResult<AlignOutcome> {
    usage(cfg.validate())?;
    let out = &cfg.output_dir;
    runtime(fs::create_dir_all(out).with_context(|| format!("creating {}", out.display())))?;
    let inputs = runtime(load_inputs(cfg))?;
    let (g, g2) = (&inputs.g, &inputs.g2);
    log::info!(
        "left graph: {} entities, {} relation triples, {} attribute triples",
        g.num_entities(),
        g.rel_triples().len(),
        g.attr_triples().len()
    );
    log::info!(
        "right graph: {} entities, {} relation triples, {} attribute triples",
        g2.num_entities(),
        g2.rel_triples().len(),
        g2.attr_triples().len()
    );

    let (train, valid, test) = runtime(
        match inputs.train_fraction {
            Some(f) => split_by_seed_fraction(&inputs.ills, f, cfg.rng_seed),
            None => split_ills(&inputs.ills, cfg.rng_seed),
        }
        .map_err(anyhow::Error::from),
    )?;
    log::info!("ILL split: {} train, {} valid, {} test", train.len(), valid.len(), test.len());
    let seeds = runtime(build_initial_seeds(g, g2, &train).map_err(Into::into))?;
    let valid = runtime(resolve_ills(g, g2, &valid).map_err(Into::into))?;
    let test = runtime(resolve_ills(g, g2, &test).map_err(Into::into))?;

    let mut joint = cfg.joint.clone();
    joint.transe.rng_seed = cfg.transe_seed();
    let result = runtime(run_pipeline(g, g2, seeds, &valid, &joint).map_err(Into::into))?;
    if result.truncated {
        log::warn!("stopped at the iteration cap before reaching a fixpoint");
    }
    let s = result.evaluation_matrix();
    let report = runtime(evaluate(&s, &test, &cfg.eval_ks).map_err(Into::into))?;

    runtime(write_outputs(cfg, g, g2, &result, &s, &report, &test))?;
    Ok(AlignOutcome { result, report, test })
}

fn write_outputs(
    cfg: &PipelineConfig,
    g: &KnowledgeGraph,
    g2: &KnowledgeGraph,
    result: &PipelineResult,
    s: &SimilarityMatrix,
    report: &EvalReport,
    test: &[(EntityId, EntityId)],
) -> anyhow::Result<()> {
    let out = &cfg.output_dir;
    write_iteration_log(out.join(ITERATIONS_FILE), &result.records)?;
    write_alignments(out.join(ALIGNMENTS_FILE), &result.store, g, g2)?;
    s.write_dump(out.join(SIMILARITY_FILE))?;
    fs::write(out.join(EVAL_FILE), serde_json::to_string_pretty(report)? + "\n")?;
    fs::write(out.join(CONFIG_FILE), cfg.to_toml()?)?;
    let pairs: String = test.iter().map(|(l, r)| format!("{}\t{}\n", l.0, r.0)).collect();
    fs::write(out.join(TEST_PAIRS_FILE), pairs)?;
    if let Some(t) = &result.translation {
        t.write_tsv(out.join(TRANSLATION_FILE))?;
    }
    if let Some(e) = &result.embeddings {
        e.export(out.join(EMBEDDINGS_FILE), g, g2)?;
    }
    Ok(())
}

/// Generates a synthetic dataset into `out`.
pub fn cmd_gen(spec: &SynthSpec, out: &Path) -> CliResult<Vec<PathBuf>> {
    usage(spec.validate().map_err(Into::into))?;
    let data = runtime(generate_synth(spec).map_err(Into::into))?;
    runtime(data.write(out).map_err(Into::into))
}

/// Parses `"1,10"` into cut-offs.
pub fn parse_ks(s: &str) -> anyhow::Result<Vec<usize>> {
    let ks: Vec<usize> = s
        .split(',')
        .map(|x| x.trim().parse::<usize>().with_context(|| format!("bad cut-off `{x}`")))
        .collect::<anyhow::Result<_>>()?;
    if ks.is_empty() || ks.contains(&0) {
        bail!("cut-offs must be positive");
    }
    Ok(ks)
}

/// Reads `row<TAB>column` index pairs.
pub fn read_index_pairs(path: &Path) -> anyhow::Result<Vec<(EntityId, EntityId)>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            let mut it = l.split('\t');
            let mut next = || -> anyhow::Result<u32> {
                it.next()
                    .with_context(|| format!("{}:{}: expected two columns", path.display(), i + 1))?
                    .trim()
                    .parse()
                    .with_context(|| format!("{}:{}: bad index", path.display(), i + 1))
            };
            Ok((EntityId(next()?), EntityId(next()?)))
        })
        .collect()
}

/// Evaluates a similarity dump against index pairs.
pub fn cmd_eval(matrix: &Path, test: &Path, ks: &[usize]) -> CliResult<EvalReport> {
    let s = usage(SimilarityMatrix::read_dump(matrix, View::Merged).map_err(Into::into))?;
    let pairs = usage(read_index_pairs(test))?;
    usage(evaluate(&s, &pairs, ks).map_err(Into::into))
}

/// Writes a report as one JSON line.
pub fn print_report(report: &EvalReport, mut w: impl Write) -> anyhow::Result<()> {
    writeln!(w, "{}", serde_json::to_string(report)?)?;
    Ok(())
}

