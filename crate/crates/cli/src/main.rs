use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;

use mqle::artifact::RunDir;
use mqle::config::PipelineConfig;
use mqle::corpus::{ingest_manifest, Corpus};
use mqle::descriptors::codec;
use mqle::descriptors::FeatureMatrix;
use mqle::eval::EvalReport;
use mqle::pipeline::{self, DescriptorSource};
use mqle::synth::{self, generate};
use mqle::{Error, Result};

#[derive(Parser)]
#[command(name = "mqle", version, about = "Multi-query expansion for landmark photo retrieval")]
struct Cli {
    #[command(flatten)]
    global: Global,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// Preset name (`default`, `desk`) or path to a key=value config file.
    #[arg(long, global = true, default_value = "default")]
    config: String,

    /// Override one config key, e.g. `--set topic.z=10`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,

    /// Global seed; falls back to MQLE_SEED, then the config.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Candidate-topic threshold.
    #[arg(long, global = true)]
    lambda: Option<f64>,

    /// Multi-query pooling: `fv` or `average`.
    #[arg(long, global = true)]
    pool: Option<String>,

    /// Topic vocabulary: `codebook` or `photo-id`.
    #[arg(long, global = true)]
    vocab: Option<String>,

    #[arg(long, global = true, default_value = "run")]
    run_dir: PathBuf,

    /// Worker threads; defaults to the available cores.
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Accept artifacts written under a different config hash.
    #[arg(long, global = true)]
    force: bool,

    #[arg(long, global = true, value_enum, default_value_t = Output::Text)]
    output: Output,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Output {
    Text,
    Json,
}

#[derive(Args, Default)]
struct Inputs {
    /// Photo manifest (TSV). Without it the synthetic corpus from the config is used.
    #[arg(long)]
    manifest: Option<PathBuf>,

    /// Descriptor file in the MQLF codec.
    #[arg(long, conflicts_with = "images")]
    features: Option<PathBuf>,

    /// Image directory; descriptors are computed from `<dir>/<photo_id>.*`.
    #[arg(long)]
    images: Option<PathBuf>,

    /// Query photo ids, one per line. Sampled from the test split when absent.
    #[arg(long)]
    queries: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic manifest, feature file and query list.
    Synth {
        #[arg(long, default_value = "synth")]
        out: PathBuf,
    },
    /// Load the corpus, split it and fix the query list.
    Ingest(Inputs),
    /// Load or compute descriptors for every photo.
    Describe(Inputs),
    Lda,
    Factorize,
    Expand,
    Pseudo,
    Embed,
    Gmm,
    Encode,
    Retrieve,
    Evaluate,
    /// Every stage in order.
    Pipeline(Inputs),
}

fn build_config(g: &Global) -> Result<PipelineConfig> {
    let mut cfg = PipelineConfig::load(&g.config)?;
    match g.seed {
        Some(s) => cfg.seed = s,
        None => {
            if let Ok(v) = std::env::var("MQLE_SEED") {
                cfg.set("seed", &v)?;
            }
        }
    }
    for kv in &g.overrides {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Error::config(kv.as_str(), "expected KEY=VALUE"))?;
        cfg.set(k.trim(), v.trim())?;
    }
    if let Some(l) = g.lambda {
        cfg.set("topic.lambda", &l.to_string())?;
    }
    if let Some(p) = &g.pool {
        cfg.set("retrieve.pool", p)?;
    }
    if let Some(v) = &g.vocab {
        cfg.set("topic.vocab_mode", v)?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn read_queries(path: &Path) -> Result<Vec<String>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(synth::parse_queries(&text))
}

struct Loaded {
    corpus: Corpus,
    features: Option<FeatureMatrix>,
    queries: Option<Vec<String>>,
}

fn load_inputs(cfg: &PipelineConfig, inputs: &Inputs) -> Result<Loaded> {
    let mut loaded = match &inputs.manifest {
        Some(m) => Loaded {
            corpus: ingest_manifest(m)?,
            features: None,
            queries: None,
        },
        None => {
            info!("no manifest given; generating the synthetic corpus");
            let s = generate(&cfg.synth)?;
            Loaded {
                corpus: s.corpus,
                features: Some(s.features),
                queries: Some(s.queries),
            }
        }
    };
    if let Some(f) = &inputs.features {
        loaded.features = Some(codec::read_features(f)?);
    }
    if let Some(q) = &inputs.queries {
        loaded.queries = Some(read_queries(q)?);
    }
    Ok(loaded)
}

fn descriptors(loaded: &Loaded) -> Result<FeatureMatrix> {
    loaded
        .features
        .clone()
        .ok_or_else(|| Error::invalid("a manifest needs --features or --images"))
}

fn print_report(report: &EvalReport, output: Output) {
    match output {
        Output::Text => print!("{}", report.to_table()),
        Output::Json => println!("{}", report.to_json()),
    }
}

fn execute(cli: Cli) -> Result<()> {
    let g = &cli.global;
    if let Some(n) = g.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build_global()
            .map_err(|e| Error::invalid(format!("cannot size the thread pool: {e}")))?;
    }
    let cfg = build_config(g)?;
    let run = RunDir::new(&g.run_dir, cfg.hash()).force(g.force);
    match &cli.command {
        Command::Synth { out } => {
            let s = generate(&cfg.synth)?;
            fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
            let write = |name: &str, text: String| {
                let p = out.join(name);
                fs::write(&p, text).map_err(|e| Error::io(p, e))
            };
            write("manifest.tsv", s.corpus.to_manifest())?;
            write("queries.txt", synth::queries_text(&s.queries))?;
            codec::write_features(out.join("features.mqlf"), &s.features)?;
            println!(
                "{} photos, {} users, {} landmarks, {} queries -> {}",
                s.corpus.len(),
                s.corpus.users().len(),
                s.corpus.landmarks().len(),
                s.queries.len(),
                out.display()
            );
        }
        Command::Ingest(inputs) => {
            let l = load_inputs(&cfg, inputs)?;
            pipeline::run_ingest(&run, &cfg, &l.corpus, l.queries.as_deref())?;
        }
        Command::Describe(inputs) => {
            let corpus = pipeline::load_corpus(&run)?;
            let features = if let Some(root) = &inputs.images {
                pipeline::describe_images(&corpus, root)?
            } else if let Some(f) = &inputs.features {
                codec::read_features(f)?
            } else {
                generate(&cfg.synth)?.features
            };
            pipeline::run_describe(&run, &features)?;
        }
        Command::Lda => pipeline::run_lda(&run, &cfg)?,
        Command::Factorize => pipeline::run_factorize(&run, &cfg)?,
        Command::Expand => pipeline::run_expand(&run, &cfg)?,
        Command::Pseudo => pipeline::run_pseudo(&run, &cfg)?,
        Command::Embed => pipeline::run_embed(&run, &cfg)?,
        Command::Gmm => pipeline::run_gmm(&run, &cfg)?,
        Command::Encode => pipeline::run_encode(&run, &cfg)?,
        Command::Retrieve => {
            pipeline::run_retrieve(&run, &cfg)?;
            let methods: Vec<String> = pipeline::METHODS.iter().map(|m| m.to_string()).collect();
            let rankings = pipeline::load_rankings(&run, &methods)?;
            for (method, lists) in &rankings {
                if g.output == Output::Json {
                    run.write_json("retrieve", &format!("ranked-{method}.json"), "ranked", lists)?;
                }
                println!("{method}: {} ranked lists", lists.len());
            }
        }
        Command::Evaluate => print_report(&pipeline::run_evaluate(&run, &cfg)?, g.output),
        Command::Pipeline(inputs) => {
            let l = load_inputs(&cfg, inputs)?;
            let features;
            let source = match &inputs.images {
                Some(root) => DescriptorSource::Images(root),
                None => {
                    features = descriptors(&l)?;
                    DescriptorSource::Features(&features)
                }
            };
            let report = pipeline::run_pipeline(&run, &cfg, &l.corpus, source, l.queries.as_deref())?;
            print_report(&report, g.output);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
