//! `ontoplace` command-line interface.
//!
//! Every subcommand resolves a [`RunConfig`] from an optional `--config`
//! JSON file, its own flags and `--set key=value` overrides (later wins),
//! validates all paths, runs, and records the resolved config next to its
//! outputs. Failures print one JSON line on stderr and exit with 2 (usage),
//! 3 (configuration) or 1 (runtime).

pub mod config;
pub mod dot;
pub mod error;
pub mod report;

use std::collections::HashMap;
use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use ontoplace::grounding::{
    argmax, evaluate_many, run_ablation, train, AblationConfig, LossKind, Predictor, TrainedModel,
};
use ontoplace::ontology::{
    self, build_by_completion, build_by_scoring, evaluate_against_reference, load_judgments, ChatClient,
    HttpChatClient, HttpChatConfig, PlantedChat, SpatialOntology, TableScorer,
};
use ontoplace::scenegraph::{self, generate_synthetic, planted_ontology, SceneGraph, Split, SynthConfig};
use serde::{Deserialize, Serialize};
use serde_json::Value;

pub use config::{resolve, Override, RunConfig};
pub use error::{CliError, CliResult};
pub use report::emit_report;

use config::{check_inputs, check_output_file, config_path_for, required};
use report::{json_text, write_all_or_nothing};

#[derive(Debug, Parser)]
#[command(
    name = "ontoplace",
    version,
    about = "Ontology-guided region classification for 3D scene graphs"
)]
pub struct Cli {
    /// Answer language-model queries from a planted ontology instead of a
    /// live backend.
    #[arg(long, global = true)]
    pub mock: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// JSON run configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override a config field, e.g. `--set train.seed=3`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    /// Output file (directory for `train` and `ablate`).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build or evaluate a spatial ontology.
    #[command(subcommand)]
    Ontology(OntologyCommand),
    /// Generate a synthetic places layer from a planted ontology.
    Synth {
        #[command(flatten)]
        common: Common,
        /// Plant this ontology instead of a generated one.
        #[arg(long)]
        ontology: Option<PathBuf>,
        /// Also write the planted ontology here.
        #[arg(long)]
        ontology_out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        num_nodes: Option<usize>,
        #[arg(long)]
        noise_rate: Option<f64>,
    },
    /// Train a region classifier.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long = "graph")]
        graphs: Vec<PathBuf>,
        #[arg(long)]
        ontology: Option<PathBuf>,
        #[arg(long)]
        loss_kind: Option<LossKind>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        keep_fraction: Option<f64>,
        #[arg(long)]
        max_epochs: Option<usize>,
        /// Hide this class's training labels (repeatable).
        #[arg(long = "masked-class")]
        masked_classes: Vec<String>,
    },
    /// Measure a trained model's accuracy on a split.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long = "graph")]
        graphs: Vec<PathBuf>,
        /// train, val or test.
        #[arg(long)]
        split: Option<String>,
        #[arg(long = "masked-class")]
        masked_classes: Vec<String>,
    },
    /// Train every (loss kind, keep fraction, trial) combination and report.
    Ablate {
        #[command(flatten)]
        common: Common,
        #[arg(long = "graph")]
        graphs: Vec<PathBuf>,
        #[arg(long)]
        ontology: Option<PathBuf>,
        /// Comma-separated loss kinds.
        #[arg(long, value_delimiter = ',')]
        loss_kinds: Vec<LossKind>,
        /// Comma-separated keep fractions.
        #[arg(long, value_delimiter = ',')]
        keep_fractions: Vec<f64>,
        #[arg(long)]
        trials: Option<usize>,
        /// Worker threads for independent trials.
        #[arg(long)]
        jobs: Option<usize>,
    },
    /// Label every node of a scene graph with the model's prediction.
    Predict {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        graph: Option<PathBuf>,
    },
    /// Render a places layer as Graphviz DOT colored by region class.
    ExportDot {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        graph: Option<PathBuf>,
        /// Color by this model's predictions instead of the stored labels.
        #[arg(long)]
        model: Option<PathBuf>,
    },
}

#[derive(Debug, Subcommand)]
pub enum OntologyCommand {
    /// Keep the highest-scoring edges of each low-level concept.
    Score {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        vocabulary: Option<PathBuf>,
        /// Precomputed `{"<sentence>": log_prob}` scores.
        #[arg(long)]
        scores: Option<PathBuf>,
        #[arg(long)]
        planted: Option<PathBuf>,
        #[arg(long)]
        temperature: Option<f64>,
        #[arg(long)]
        threshold: Option<f64>,
    },
    /// Ask a chat model for the k concepts that distinguish each region.
    Complete {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        vocabulary: Option<PathBuf>,
        #[arg(long)]
        planted: Option<PathBuf>,
        #[arg(long)]
        k: Option<usize>,
        #[arg(long)]
        repetitions: Option<usize>,
        #[arg(long)]
        max_retries: Option<usize>,
        #[arg(long)]
        chat_model: Option<String>,
        #[arg(long)]
        cache_dir: Option<PathBuf>,
    },
    /// Compare an ontology with human relation judgments.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        ontology: Option<PathBuf>,
        #[arg(long)]
        judgments: Option<PathBuf>,
    },
}

/// Collects flag overrides, skipping flags that were not given.
#[derive(Default)]
struct Overrides(Vec<Override>);

impl Overrides {
    fn opt<T: Into<Value>>(&mut self, key: &str, value: Option<T>) -> &mut Self {
        if let Some(v) = value {
            self.0.push(Override::new(key, v));
        }
        self
    }

    fn path(&mut self, key: &str, value: &Option<PathBuf>) -> &mut Self {
        let v = value.as_ref().map(|p| p.to_string_lossy().into_owned());
        self.opt(key, v)
    }

    fn list<T: Serialize>(&mut self, key: &str, values: &[T]) -> &mut Self {
        if !values.is_empty() {
            let v = serde_json::to_value(values).expect("flag values serialize");
            self.0.push(Override::new(key, v));
        }
        self
    }

    fn finish(&mut self, common: &Common) -> CliResult<RunConfig> {
        self.path("out", &common.out);
        for s in &common.set {
            self.0.push(Override::parse(s)?);
        }
        resolve(common.config.as_deref(), &self.0)
    }
}

fn loss_value(kind: Option<LossKind>) -> Option<Value> {
    kind.map(|k| Value::String(k.name().into()))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct Vocabulary {
    low_levels: Vec<String>,
    high_levels: Vec<String>,
}

fn load_vocabulary(config: &RunConfig, planted: Option<&SpatialOntology>) -> CliResult<(Vec<String>, Vec<String>)> {
    match (&config.vocabulary, planted) {
        (Some(path), _) => {
            let v: Vocabulary = ontoplace::jsonio::read_json(path)?;
            Ok((v.low_levels, v.high_levels))
        }
        (None, Some(p)) => Ok((p.low_levels().to_vec(), p.high_levels().to_vec())),
        (None, None) => Err(CliError::Config("missing required path \"vocabulary\"".into())),
    }
}

fn load_graphs(paths: &[PathBuf]) -> CliResult<Vec<SceneGraph>> {
    if paths.is_empty() {
        return Err(CliError::Config("at least one graph is required".into()));
    }
    paths.iter().map(|p| Ok(scenegraph::load(p)?)).collect()
}

fn masked_indices(names: &[String], high_levels: &[String]) -> CliResult<Vec<usize>> {
    names
        .iter()
        .map(|n| {
            high_levels
                .iter()
                .position(|h| h == n)
                .ok_or_else(|| CliError::Config(format!("unknown high-level concept {n:?}")))
        })
        .collect()
}

fn write_file(path: &Path, text: &str) -> CliResult<()> {
    std::fs::write(path, text).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))
}

/// Records the resolved config of a single-output command.
fn write_config_beside(out: &Path, config: &RunConfig) -> CliResult<PathBuf> {
    let path = config_path_for(out);
    write_file(&path, &json_text(config)?)?;
    Ok(path)
}

fn opt_paths<'a>(paths: impl IntoIterator<Item = &'a Option<PathBuf>>) -> Vec<&'a Path> {
    paths.into_iter().filter_map(|p| p.as_deref()).collect()
}

fn ontology_score(mock: bool, config: &RunConfig) -> CliResult<Vec<PathBuf>> {
    let out = required(&config.out, "out")?;
    let scoring = config
        .scoring
        .ok_or_else(|| CliError::Config("missing \"scoring\" settings (temperature, threshold)".into()))?;
    scoring.validate()?;
    check_inputs(opt_paths([&config.vocabulary, &config.scores, &config.planted]))?;
    check_output_file(out)?;

    let planted = config.planted.as_deref().map(ontology::load).transpose()?;
    let (lows, highs) = load_vocabulary(config, planted.as_ref())?;
    let scorer = if mock {
        let planted = planted
            .as_ref()
            .ok_or_else(|| CliError::Config("--mock scoring needs a \"planted\" ontology".into()))?;
        TableScorer::planted(planted, &config.templates, -1.0, -6.0)
    } else {
        let path = config
            .scores
            .as_deref()
            .ok_or_else(|| CliError::Config("no live scoring backend; provide \"scores\" or use --mock".into()))?;
        let scores: HashMap<String, f64> = ontoplace::jsonio::read_json(path)?;
        TableScorer::new(scores)
    };
    let onto = build_by_scoring(&scorer, &lows, &highs, &scoring, &config.templates)?;
    ontology::save(&onto, out)?;
    Ok(vec![out.to_path_buf(), write_config_beside(out, config)?])
}

fn ontology_complete(mock: bool, config: &RunConfig) -> CliResult<Vec<PathBuf>> {
    let out = required(&config.out, "out")?;
    let completion = config
        .completion
        .ok_or_else(|| CliError::Config("missing \"completion\" settings (k, repetitions, max_retries)".into()))?;
    check_inputs(opt_paths([&config.vocabulary, &config.planted]))?;
    check_output_file(out)?;

    let planted = config.planted.as_deref().map(ontology::load).transpose()?;
    let (lows, highs) = load_vocabulary(config, planted.as_ref())?;
    completion.validate(lows.len())?;
    let client: Box<dyn ChatClient> = if mock {
        let planted =
            planted.ok_or_else(|| CliError::Config("--mock completion needs a \"planted\" ontology".into()))?;
        if !(0.0..=1.0).contains(&config.chat.hallucination_rate) {
            return Err(CliError::Config("chat.hallucination_rate must lie in [0, 1]".into()));
        }
        Box::new(PlantedChat::new(planted, config.chat.seed).with_hallucination_rate(config.chat.hallucination_rate))
    } else {
        let http = HttpChatConfig::from_env(&config.chat.model, config.chat.cache_dir.clone())?;
        Box::new(HttpChatClient::new(http))
    };
    let onto = build_by_completion(client.as_ref(), &lows, &highs, &completion, &config.templates)?;
    ontology::save(&onto, out)?;
    Ok(vec![out.to_path_buf(), write_config_beside(out, config)?])
}

fn ontology_eval(config: &RunConfig) -> CliResult<Vec<PathBuf>> {
    let out = required(&config.out, "out")?;
    let onto_path = required(&config.ontology, "ontology")?;
    let judgments_path = required(&config.judgments, "judgments")?;
    check_inputs([onto_path, judgments_path])?;
    check_output_file(out)?;
    let onto = ontology::load(onto_path)?;
    let metrics = evaluate_against_reference(&onto, &load_judgments(judgments_path)?)?;
    write_file(out, &json_text(&metrics)?)?;
    Ok(vec![out.to_path_buf(), write_config_beside(out, config)?])
}

fn synth(config: &RunConfig) -> CliResult<Vec<PathBuf>> {
    let out = required(&config.out, "out")?;
    let ontology_out = config.ontology_out.as_deref();
    check_inputs(opt_paths([&config.ontology]))?;
    check_output_file(out)?;
    if let Some(p) = ontology_out {
        check_output_file(p)?;
    }
    let s = &config.synth;
    let onto = match &config.ontology {
        Some(p) => ontology::load(p)?,
        None => planted_ontology(
            s.planted.num_high,
            s.planted.num_low,
            s.planted.edges_per_high,
            s.planted.seed,
        )?,
    };
    let graph = generate_synthetic(&SynthConfig {
        ontology: onto.clone(),
        num_nodes: s.num_nodes,
        num_regions_per_class: s.num_regions_per_class,
        knn_k: s.knn_k,
        histogram_draws: s.histogram_draws,
        noise_rate: s.noise_rate,
        region_spread: s.region_spread,
        seed: s.seed,
    })?;
    scenegraph::save(&graph, out)?;
    let mut written = vec![out.to_path_buf()];
    if let Some(p) = ontology_out {
        ontology::save(&onto, p)?;
        written.push(p.to_path_buf());
    }
    written.push(write_config_beside(out, config)?);
    Ok(written)
}

#[derive(Serialize)]
struct TrainMetrics {
    validation: ontoplace::grounding::Metrics,
    test: ontoplace::grounding::Metrics,
}

fn train_cmd(config: &RunConfig) -> CliResult<Vec<PathBuf>> {
    let out = required(&config.out, "out")?;
    let onto_path = required(&config.ontology, "ontology")?;
    check_inputs(config.graphs.iter().map(PathBuf::as_path).chain([onto_path]))?;
    let onto = ontology::load(onto_path)?;
    let graphs = load_graphs(&config.graphs)?;
    config.train.masked_indices(&onto)?;

    let outcome = train(&graphs, &onto, &config.train)?;
    let timed = config.train.record_timing;
    let metrics = TrainMetrics {
        validation: evaluate_many(&outcome.model, &graphs, Split::Val, &outcome.masked_classes, timed)?,
        test: evaluate_many(&outcome.model, &graphs, Split::Test, &outcome.masked_classes, timed)?,
    };
    std::fs::create_dir_all(out).map_err(|e| CliError::Runtime(format!("{}: {e}", out.display())))?;
    let model_path = out.join("model.json");
    outcome.model.save(&model_path)?;
    let mut written = vec![model_path];
    written.extend(write_all_or_nothing(
        out,
        &[
            ("history.json", json_text(&outcome.history)?),
            ("metrics.json", json_text(&metrics)?),
            ("config.json", json_text(config)?),
        ],
    )?);
    Ok(written)
}

fn eval_cmd(config: &RunConfig) -> CliResult<Vec<PathBuf>> {
    let out = required(&config.out, "out")?;
    let model_path = required(&config.model, "model")?;
    check_inputs(config.graphs.iter().map(PathBuf::as_path).chain([model_path]))?;
    check_output_file(out)?;
    let model = TrainedModel::load(model_path)?;
    let graphs = load_graphs(&config.graphs)?;
    let masked = masked_indices(&config.evaluation.masked_classes, &model.high_levels)?;
    let metrics = evaluate_many(
        &model,
        &graphs,
        config.evaluation.split.into(),
        &masked,
        config.train.record_timing,
    )?;
    write_file(out, &json_text(&metrics)?)?;
    Ok(vec![out.to_path_buf(), write_config_beside(out, config)?])
}

fn ablate_cmd(config: &RunConfig) -> CliResult<Vec<PathBuf>> {
    let out = required(&config.out, "out")?;
    let onto_path = required(&config.ontology, "ontology")?;
    check_inputs(config.graphs.iter().map(PathBuf::as_path).chain([onto_path]))?;
    if out.is_file() {
        return Err(CliError::Config(format!("output {} is a file", out.display())));
    }
    let onto = ontology::load(onto_path)?;
    let graphs = load_graphs(&config.graphs)?;
    config.train.masked_indices(&onto)?;
    let ablation = AblationConfig {
        train: config.train.clone(),
        loss_kinds: config.ablation.loss_kinds.clone(),
        keep_fractions: config.ablation.keep_fractions.clone(),
        trials: config.ablation.trials,
    };
    ablation.validate()?;
    let report = run_ablation(&graphs, &onto, &ablation, config.ablation.jobs)?;
    emit_report(&report, out, &[("config.json", json_text(config)?)])
}

fn predicted_labels(model: &TrainedModel, graph: &SceneGraph) -> CliResult<Vec<Option<usize>>> {
    let probs = model.predict_probs(graph)?;
    Ok((0..graph.num_nodes()).map(|v| Some(argmax(probs.row(v)))).collect())
}

fn predict_cmd(config: &RunConfig, graph_path: &Path) -> CliResult<Vec<PathBuf>> {
    let out = required(&config.out, "out")?;
    let model_path = required(&config.model, "model")?;
    check_inputs([model_path, graph_path])?;
    check_output_file(out)?;
    let model = TrainedModel::load(model_path)?;
    let mut graph = scenegraph::load(graph_path)?;
    let labels = predicted_labels(&model, &graph)?;
    for (node, label) in graph.nodes.iter_mut().zip(labels) {
        node.label = label;
    }
    scenegraph::save(&graph, out)?;
    Ok(vec![out.to_path_buf(), write_config_beside(out, config)?])
}

fn export_dot_cmd(config: &RunConfig, graph_path: &Path) -> CliResult<Vec<PathBuf>> {
    let out = required(&config.out, "out")?;
    check_inputs(opt_paths([&config.model]).into_iter().chain([graph_path]))?;
    check_output_file(out)?;
    let graph = scenegraph::load(graph_path)?;
    let labels = match &config.model {
        Some(p) => predicted_labels(&TrainedModel::load(p)?, &graph)?,
        None => graph.nodes.iter().map(|n| n.label).collect(),
    };
    write_file(out, &dot::to_dot(&graph, &labels, 10.0))?;
    Ok(vec![out.to_path_buf()])
}

fn graph_list(paths: &[PathBuf]) -> Vec<String> {
    paths.iter().map(|p| p.to_string_lossy().into_owned()).collect()
}

/// Runs a parsed command and returns the files it wrote.
pub fn dispatch(cli: Cli) -> CliResult<Vec<PathBuf>> {
    let mut ov = Overrides::default();
    match cli.command {
        Command::Ontology(OntologyCommand::Score {
            common,
            vocabulary,
            scores,
            planted,
            temperature,
            threshold,
        }) => {
            ov.path("vocabulary", &vocabulary)
                .path("scores", &scores)
                .path("planted", &planted)
                .opt("scoring.temperature", temperature)
                .opt("scoring.threshold", threshold);
            ontology_score(cli.mock, &ov.finish(&common)?)
        }
        Command::Ontology(OntologyCommand::Complete {
            common,
            vocabulary,
            planted,
            k,
            repetitions,
            max_retries,
            chat_model,
            cache_dir,
        }) => {
            ov.path("vocabulary", &vocabulary)
                .path("planted", &planted)
                .opt("completion.k", k)
                .opt("completion.repetitions", repetitions)
                .opt("completion.max_retries", max_retries)
                .opt("chat.model", chat_model)
                .path("chat.cache_dir", &cache_dir);
            ontology_complete(cli.mock, &ov.finish(&common)?)
        }
        Command::Ontology(OntologyCommand::Eval {
            common,
            ontology,
            judgments,
        }) => {
            ov.path("ontology", &ontology).path("judgments", &judgments);
            ontology_eval(&ov.finish(&common)?)
        }
        Command::Synth {
            common,
            ontology,
            ontology_out,
            seed,
            num_nodes,
            noise_rate,
        } => {
            ov.path("ontology", &ontology)
                .path("ontology_out", &ontology_out)
                .opt("synth.seed", seed)
                .opt("synth.num_nodes", num_nodes)
                .opt("synth.noise_rate", noise_rate);
            synth(&ov.finish(&common)?)
        }
        Command::Train {
            common,
            graphs,
            ontology,
            loss_kind,
            seed,
            keep_fraction,
            max_epochs,
            masked_classes,
        } => {
            ov.list("graphs", &graph_list(&graphs))
                .path("ontology", &ontology)
                .opt("train.loss_kind", loss_value(loss_kind))
                .opt("train.seed", seed)
                .opt("train.keep_fraction", keep_fraction)
                .opt("train.max_epochs", max_epochs)
                .list("train.masked_classes", &masked_classes);
            train_cmd(&ov.finish(&common)?)
        }
        Command::Eval {
            common,
            model,
            graphs,
            split,
            masked_classes,
        } => {
            ov.path("model", &model)
                .list("graphs", &graph_list(&graphs))
                .opt("evaluation.split", split)
                .list("evaluation.masked_classes", &masked_classes);
            eval_cmd(&ov.finish(&common)?)
        }
        Command::Ablate {
            common,
            graphs,
            ontology,
            loss_kinds,
            keep_fractions,
            trials,
            jobs,
        } => {
            let kinds: Vec<&str> = loss_kinds.iter().map(|k| k.name()).collect();
            ov.list("graphs", &graph_list(&graphs))
                .path("ontology", &ontology)
                .list("ablation.loss_kinds", &kinds)
                .list("ablation.keep_fractions", &keep_fractions)
                .opt("ablation.trials", trials)
                .opt("ablation.jobs", jobs);
            ablate_cmd(&ov.finish(&common)?)
        }
        Command::Predict { common, model, graph } => {
            ov.path("model", &model);
            let graphs: Vec<PathBuf> = graph.into_iter().collect();
            ov.list("graphs", &graph_list(&graphs));
            let config = ov.finish(&common)?;
            let graph = single_graph(&config)?;
            predict_cmd(&config, &graph)
        }
        Command::ExportDot { common, graph, model } => {
            ov.path("model", &model);
            let graphs: Vec<PathBuf> = graph.into_iter().collect();
            ov.list("graphs", &graph_list(&graphs));
            let config = ov.finish(&common)?;
            let graph = single_graph(&config)?;
            export_dot_cmd(&config, &graph)
        }
    }
}

fn single_graph(config: &RunConfig) -> CliResult<PathBuf> {
    match config.graphs.as_slice() {
        [one] => Ok(one.clone()),
        _ => Err(CliError::Config(format!(
            "expected exactly one graph, got {}",
            config.graphs.len()
        ))),
    }
}

/// Parses `args`, runs, prints written paths on stdout and errors as one
/// JSON line on stderr. Returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return 0;
            }
            let message = e.to_string();
            let first = message.lines().next().unwrap_or("invalid arguments");
            let err = CliError::Usage(first.trim_start_matches("error: ").to_string());
            eprintln!("{}", err.to_json_line());
            return err.exit_code();
        }
    };
    match dispatch(cli) {
        Ok(paths) => {
            for p in paths {
                println!("{}", p.display());
            }
            0
        }
        Err(e) => {
            eprintln!("{}", e.to_json_line());
            e.exit_code()
        }
    }
}
