use std::fs;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use cbm_concepts::{
    assemble_concept_set, build_prompt, generate_candidates, record_fixture, select_distinctive, ConceptCandidates,
    LLMConfig, PromptKind, PromptTemplate,
};
use cbm_core::concept_space::{NormalizerMode, PoolingMode};
use cbm_core::interpret::{export_sankey, instance_contributions};
use cbm_core::linear_head::{dataset_splits, evaluate, load_model, save_model, train, TrainConfig};
use cbm_core::synth::{concept_count_ablation, generate, run_robustness_experiment, SynthConfig};
use cbm_core::tensor_io::{load_concepts, load_dataset, read_tensor_file, save_concepts};
use cbm_serve::ServiceState;
use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::Serialize;

#[derive(Parser)]
#[command(name = "cbm", version, about = "Concept-bottleneck classification toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic confounded dataset.
    Synth {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Concept path vs raw-feature probe on a synthetic dataset.
    Robustness {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        train: Option<PathBuf>,
        #[arg(long)]
        report: PathBuf,
    },
    /// Concept-path accuracy using random concept subsets of size K.
    Ablation {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        train: Option<PathBuf>,
        #[arg(long, value_delimiter = ',', default_values_t = [1usize, 2, 4, 8])]
        ks: Vec<usize>,
        #[arg(long, default_value_t = 10)]
        repeats: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        report: PathBuf,
    },
    /// Concept elicitation.
    #[command(subcommand)]
    Concepts(ConceptsCommand),
    /// Train a head on a dataset and concept set.
    Train {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        concepts: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        train: Option<PathBuf>,
        #[arg(long, default_value = "avg", value_parser = parse_snake::<PoolingMode>)]
        pooling: PoolingMode,
        #[arg(long, default_value = "per_concept_minmax", value_parser = parse_snake::<NormalizerMode>)]
        normalizer: NormalizerMode,
        /// Write the per-epoch training report here.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Per-concept contributions for one item.
    Interpret {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        concepts: PathBuf,
        #[arg(long)]
        item: String,
        #[arg(long)]
        class: Option<usize>,
        #[arg(long)]
        top_k: Option<usize>,
    },
    /// Export concept-to-class weights as Sankey nodes and links.
    Weights {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        threshold: Option<f64>,
        #[arg(long)]
        hard_threshold: Option<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Serve items, interpretations and interventions over HTTP.
    Serve {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        concepts: PathBuf,
        #[arg(long, default_value = "127.0.0.1:8080")]
        bind: SocketAddr,
        /// Allow this origin to call the API from a browser.
        #[arg(long)]
        cors_origin: Option<String>,
    },
}

#[derive(Subcommand)]
enum ConceptsCommand {
    /// Query the model for concept candidates.
    Generate {
        #[arg(long, value_delimiter = ',', required = true)]
        classes: Vec<String>,
        #[arg(long, default_value = "per_class")]
        template: PromptKind,
        #[arg(long)]
        out: PathBuf,
        /// Run one select-N round over the candidates.
        #[arg(long)]
        select_n: Option<usize>,
        #[command(flatten)]
        llm: LlmArgs,
    },
    /// Pair candidate descriptors with text embeddings into a concept set.
    Assemble {
        #[arg(long)]
        candidates: PathBuf,
        /// `[N, D]` tensor, one row per descriptor in candidate order.
        #[arg(long)]
        embeddings: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct LlmArgs {
    /// JSON LLM config; flags below override its fields.
    #[arg(long)]
    llm_config: Option<PathBuf>,
    /// Replay responses from this directory instead of querying the network.
    #[arg(long)]
    fixtures: Option<PathBuf>,
    #[arg(long)]
    endpoint: Option<String>,
    #[arg(long)]
    model: Option<String>,
    /// Environment variable holding the API key.
    #[arg(long)]
    api_key_env: Option<String>,
    #[arg(long)]
    timeout: Option<f64>,
    /// Save every live response as a fixture in this directory.
    #[arg(long)]
    record: Option<PathBuf>,
}

impl LlmArgs {
    fn config(&self) -> Result<LLMConfig> {
        let mut cfg: LLMConfig = match &self.llm_config {
            Some(path) => read_json(path)?,
            None => LLMConfig::default(),
        };
        if let Some(dir) = &self.fixtures {
            cfg.fixture_dir = Some(dir.clone());
        }
        if let Some(e) = &self.endpoint {
            cfg.endpoint = Some(e.clone());
        }
        if let Some(m) = &self.model {
            cfg.model = m.clone();
        }
        if let Some(v) = &self.api_key_env {
            cfg.api_key_env = Some(v.clone());
        }
        if let Some(t) = self.timeout {
            cfg.timeout_secs = t;
        }
        if self.record.is_some() && cfg.is_offline() {
            bail!("--record needs live mode; drop --fixtures");
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn parse_snake<T: DeserializeOwned>(s: &str) -> Result<T, String> {
    serde_json::from_value(serde_json::Value::String(s.to_string())).map_err(|e| e.to_string())
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn read_json_or_default<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T> {
    path.map_or_else(|| Ok(T::default()), read_json)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn print_json<T: Serialize>(value: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn concepts_generate(
    classes: &[String],
    kind: PromptKind,
    out: &Path,
    select_n: Option<usize>,
    llm: &LlmArgs,
) -> Result<()> {
    let cfg = llm.config()?;
    let names: Vec<&str> = classes.iter().map(|s| s.trim()).collect();
    let template = PromptTemplate::default_for(kind);
    let candidates = match &llm.record {
        Some(dir) => {
            let recording = RecordingQuery { dir, cfg: &cfg };
            recording.generate(&names, &template, select_n)?
        }
        None => {
            let c = generate_candidates(&names, &template, &cfg)?;
            match select_n {
                Some(n) => select_distinctive(&c, n, &cfg)?,
                None => c,
            }
        }
    };
    write_json(out, &candidates)?;
    eprintln!(
        "{} descriptors in {} group(s) -> {}",
        candidates.len(),
        candidates.groups.len(),
        out.display()
    );
    Ok(())
}

/// Live queries whose raw responses are also stored as fixtures.
struct RecordingQuery<'a> {
    dir: &'a Path,
    cfg: &'a LLMConfig,
}

impl RecordingQuery<'_> {
    fn fetch(&self, prompt: &str) -> Result<()> {
        let response = cbm_concepts::query_llm(prompt, self.cfg)?;
        let path = record_fixture(self.dir, prompt, &response)?;
        log::info!("recorded {}", path.display());
        Ok(())
    }

    /// Records every response, then replays the whole pipeline from the fixtures so the
    /// output is identical to a later offline run.
    fn generate(&self, names: &[&str], template: &PromptTemplate, select_n: Option<usize>) -> Result<ConceptCandidates> {
        match template.kind() {
            PromptKind::PerClass => {
                for name in names {
                    self.fetch(&build_prompt(template, &[name])?)?;
                }
            }
            _ => self.fetch(&build_prompt(template, names)?)?,
        }
        let offline = LLMConfig::offline(self.dir);
        let c = generate_candidates(names, template, &offline)?;
        let Some(n) = select_n else { return Ok(c) };
        let flat: Vec<&str> = c.flatten().iter().map(|(d, _, _)| *d).collect();
        self.fetch(&build_prompt(&PromptTemplate::select_n(n), &flat)?)?;
        Ok(select_distinctive(&c, n, &offline)?)
    }
}

fn concepts_assemble(candidates: &Path, embeddings: &Path, out: &Path) -> Result<()> {
    let c: ConceptCandidates = read_json(candidates)?;
    let emb = read_tensor_file(embeddings)?;
    let assembled = assemble_concept_set(&c, &emb)?;
    let stem = out
        .file_stem()
        .and_then(|s| s.to_str())
        .context("output path needs a file name")?;
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    save_concepts(&assembled.concepts, out, &format!("{stem}.cltensr"))?;
    write_json(&out.with_file_name(format!("{stem}.provenance.json")), &assembled.provenance)?;
    eprintln!("{} concepts -> {}", assembled.concepts.len(), out.display());
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn train_command(
    dataset: &Path,
    concepts: &Path,
    out: &Path,
    train_cfg: Option<&Path>,
    pooling: PoolingMode,
    normalizer: NormalizerMode,
    report: Option<&Path>,
) -> Result<()> {
    let tc: TrainConfig = read_json_or_default(train_cfg)?;
    let ds = load_dataset(dataset)?;
    let cs = load_concepts(concepts)?;
    let (norm, splits) = dataset_splits(&ds, &cs, pooling, normalizer)?;
    let (head, train_report) = train(
        &splits,
        &tc,
        ds.manifest().class_names.clone(),
        cs.texts(),
        norm,
        pooling,
    )?;
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    save_model(&head, out)?;
    if let Some(path) = report {
        write_json(path, &train_report)?;
    }
    let best = train_report.best();
    eprint!(
        "best epoch {} of {}: val acc {:.4}",
        train_report.best_epoch,
        train_report.epochs.len(),
        best.val_acc
    );
    if let Some(test) = &splits.test {
        eprint!(", test acc {:.4}", evaluate(head.weights(), test)?);
    }
    eprintln!(" -> {}", out.display());
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth { config, out } => {
            let cfg: SynthConfig = read_json_or_default(config.as_deref())?;
            let ds = generate(&cfg)?;
            ds.write_to(&out)?;
            eprintln!("{} items, {} concepts -> {}", ds.items.len(), ds.concepts.len(), out.display());
        }
        Command::Robustness { config, train, report } => {
            let cfg: SynthConfig = read_json_or_default(config.as_deref())?;
            let tc: TrainConfig = read_json_or_default(train.as_deref())?;
            let r = run_robustness_experiment(&cfg, &tc)?;
            write_json(&report, &r)?;
            eprintln!(
                "concept test acc {:.4}, raw probe test acc {:.4} -> {}",
                r.concept_test_acc,
                r.raw_probe_test_acc,
                report.display()
            );
        }
        Command::Ablation {
            config,
            train,
            ks,
            repeats,
            seed,
            report,
        } => {
            let cfg: SynthConfig = read_json_or_default(config.as_deref())?;
            let tc: TrainConfig = read_json_or_default(train.as_deref())?;
            let rows = concept_count_ablation(&cfg, &tc, &ks, repeats, seed)?;
            write_json(&report, &rows)?;
            for row in &rows {
                eprintln!("K={:<3} mean {:.4} std {:.4}", row.k, row.mean_acc, row.std_acc);
            }
        }
        Command::Concepts(ConceptsCommand::Generate {
            classes,
            template,
            out,
            select_n,
            llm,
        }) => concepts_generate(&classes, template, &out, select_n, &llm)?,
        Command::Concepts(ConceptsCommand::Assemble {
            candidates,
            embeddings,
            out,
        }) => concepts_assemble(&candidates, &embeddings, &out)?,
        Command::Train {
            dataset,
            concepts,
            out,
            train,
            pooling,
            normalizer,
            report,
        } => train_command(
            &dataset,
            &concepts,
            &out,
            train.as_deref(),
            pooling,
            normalizer,
            report.as_deref(),
        )?,
        Command::Interpret {
            model,
            dataset,
            concepts,
            item,
            class,
            top_k,
        } => {
            let head = load_model(&model)?;
            let state = ServiceState::from_dataset(head, &load_dataset(&dataset)?, &load_concepts(&concepts)?)?;
            let entry = state.item(&item).with_context(|| format!("unknown item {item:?}"))?;
            let class = match class {
                Some(c) => c,
                None => state.head().forward(&entry.concepts)?.predicted_class,
            };
            print_json(&instance_contributions(state.head(), &entry.concepts, class, top_k, Some(&item))?)?;
        }
        Command::Weights {
            model,
            threshold,
            hard_threshold,
            out,
        } => {
            for v in [threshold, hard_threshold].into_iter().flatten() {
                if !(v >= 0.0 && v.is_finite()) {
                    bail!("thresholds must be finite and >= 0, got {v}");
                }
            }
            let sankey = export_sankey(&load_model(&model)?, threshold, hard_threshold);
            match out {
                Some(path) => write_json(&path, &sankey)?,
                None => print_json(&sankey)?,
            }
        }
        Command::Serve {
            model,
            dataset,
            concepts,
            bind,
            cors_origin,
        } => {
            let head = load_model(&model)?;
            let state = ServiceState::from_dataset(head, &load_dataset(&dataset)?, &load_concepts(&concepts)?)?;
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(cbm_serve::serve(state, bind, cors_origin.as_deref()))?;
        }
    }
    Ok(())
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
