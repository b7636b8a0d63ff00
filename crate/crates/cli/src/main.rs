use std::io;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use xkalign::joint::{MergeMode, Views};
use xkalign::synth::SynthSpec;
use xkalign_cli::{cmd_align, cmd_eval, cmd_gen, parse_ks, print_report, runtime, usage, CliResult, PipelineConfig};

#[derive(Parser)]
#[command(name = "xkalign", version, about = "Cross-lingual knowledge graph alignment")]
struct Cli {
    /// Worker threads for the parallel similarity blocks (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the iterative alignment pipeline.
    Align(AlignArgs),
    /// Generate a synthetic graph pair with ground truth.
    Gen(GenArgs),
    /// Evaluate a similarity dump against test pairs.
    Eval(EvalArgs),
}

#[derive(Args)]
struct AlignArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Directory holding rel_triples_1/2, attr_triples_1/2 and ent_ILLs.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    output: Option<PathBuf>,
    #[arg(long)]
    merge: Option<MergeMode>,
    #[arg(long, value_enum)]
    views: Option<ViewsArg>,
    #[arg(long)]
    max_iterations: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    /// Train the translator once instead of every iteration.
    #[arg(long)]
    train_once: bool,
    /// Cut-offs for HR@K, comma separated.
    #[arg(long)]
    k: Option<String>,
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum ViewsArg {
    Both,
    Attribute,
    Relationship,
}

#[derive(Args)]
struct GenArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    entities: Option<usize>,
    #[arg(long)]
    relations: Option<usize>,
    #[arg(long)]
    attributes: Option<usize>,
    #[arg(long)]
    rel_density: Option<f64>,
    #[arg(long)]
    attr_per_entity: Option<f64>,
    #[arg(long)]
    dictionary_size: Option<usize>,
    #[arg(long)]
    drop_prob: Option<f64>,
    #[arg(long)]
    seed_fraction: Option<f64>,
    #[arg(long)]
    shared_label_fraction: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct EvalArgs {
    /// Similarity dump written by `align`.
    #[arg(long)]
    matrix: PathBuf,
    /// Test pairs as `row<TAB>column` indices.
    #[arg(long)]
    test: PathBuf,
    #[arg(long, default_value = "1,10")]
    k: String,
}

fn align_config(a: AlignArgs) -> CliResult<PipelineConfig> {
    let mut cfg = match &a.config {
        Some(p) => usage(PipelineConfig::load(p))?,
        None => PipelineConfig::default(),
    };
    if let Some(d) = a.data {
        cfg.data.dir = Some(d);
        cfg.synth = None;
    }
    if let Some(o) = a.output {
        cfg.output_dir = o;
    }
    if let Some(m) = a.merge {
        cfg.joint.merge = m;
    }
    if let Some(v) = a.views {
        cfg.joint.views = match v {
            ViewsArg::Both => Views::Both,
            ViewsArg::Attribute => Views::AttributeOnly,
            ViewsArg::Relationship => Views::RelationshipOnly,
        };
    }
    if let Some(n) = a.max_iterations {
        cfg.joint.max_iterations = n;
    }
    if let Some(s) = a.seed {
        cfg.rng_seed = s;
    }
    if let Some(e) = a.epochs {
        cfg.joint.transe.epochs = e;
    }
    if a.train_once {
        cfg.joint.retrain_translator = false;
    }
    if let Some(k) = a.k {
        cfg.eval_ks = usage(parse_ks(&k))?;
    }
    Ok(cfg)
}

fn gen_spec(a: &GenArgs) -> SynthSpec {
    let d = SynthSpec::default();
    SynthSpec {
        n_entities: a.entities.unwrap_or(d.n_entities),
        n_relations: a.relations.unwrap_or(d.n_relations),
        n_attributes: a.attributes.unwrap_or(d.n_attributes),
        rel_density: a.rel_density.unwrap_or(d.rel_density),
        attr_per_entity: a.attr_per_entity.unwrap_or(d.attr_per_entity),
        dictionary_size: a.dictionary_size.unwrap_or(d.dictionary_size),
        drop_prob: a.drop_prob.unwrap_or(d.drop_prob),
        seed_fraction: a.seed_fraction.unwrap_or(d.seed_fraction),
        shared_label_fraction: a.shared_label_fraction.unwrap_or(d.shared_label_fraction),
        rng_seed: a.seed.unwrap_or(d.rng_seed),
    }
}

fn run(cli: Cli) -> CliResult<()> {
    if let Some(n) = cli.threads {
        usage(
            rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build_global()
                .map_err(anyhow::Error::from),
        )?;
    }
    match cli.command {
        Command::Align(a) => {
            let cfg = align_config(a)?;
            let out = cmd_align(&cfg)?;
            runtime(print_report(&out.report, io::stdout()))
        }
        Command::Gen(a) => {
            for p in cmd_gen(&gen_spec(&a), &a.out)? {
                log::info!("wrote {}", p.display());
            }
            Ok(())
        }
        Command::Eval(a) => {
            let ks = usage(parse_ks(&a.k))?;
            let report = cmd_eval(&a.matrix, &a.test, &ks)?;
            runtime(print_report(&report, io::stdout()))
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
