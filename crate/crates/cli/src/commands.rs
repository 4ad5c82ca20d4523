use std::collections::HashMap;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use proplab::estimator::{
    analyze, estimate_grid, heatmap_svg, read_propensity_csv, write_bucket_csv, write_propensity_csv,
    BootstrapConfig, DivergenceReport, EstimatorSpec, OmittedBucket,
};
use proplab::evaluator::{
    delta_report, evaluate, instances_from_log, render_table, tokenize, write_report_csv, Bm25Index,
    Bm25Params, LabelSource, LOGGED,
};
use proplab::judge::{
    annotate_log, AnnotateOptions, Catalog, ConstantJudge, EndpointConfig, EndpointJudge, JudgeCache,
    JudgeCalibration, JudgeSource, PromptTemplate, SimulatedJudge,
};
use proplab::ltr::{model_scores, train_with, FeatureTable, RankerModel, TrainConfig, TrainingMode};
use proplab::simulator::{simulate_with, SimConfig};
use proplab::types::{infer_layout, read_jsonl, write_jsonl, Impression, JudgeScore, ScoreBucket};
use proplab::Exec;

use crate::manifest::{config_hash, sha256_hex, Run, RunManifest};
use crate::{AnnotateArgs, Cli, Command, EstimateArgs, EvaluateArgs, Labels, SimulateArgs, Source, TrainArgs};

/// Parses TOML, or JSON when the file ends in `.json`.
fn parse_config<T: DeserializeOwned>(path: &Path, bytes: &[u8]) -> Result<T> {
    let text = std::str::from_utf8(bytes).with_context(|| format!("{} is not UTF-8", path.display()))?;
    let parsed = if path.extension().is_some_and(|e| e == "json") {
        serde_json::from_str(text).map_err(anyhow::Error::from)
    } else {
        toml::from_str(text).map_err(anyhow::Error::from)
    };
    parsed.with_context(|| format!("invalid configuration in {}", path.display()))
}

fn optional_config<T: DeserializeOwned + Default>(run: &mut Run, path: Option<&Path>) -> Result<T> {
    match path {
        Some(p) => {
            let bytes = run.input(p)?;
            parse_config(p, &bytes)
        }
        None => Ok(T::default()),
    }
}

fn read_log(run: &mut Run, path: &Path) -> Result<Vec<Impression>> {
    let bytes = run.input(path)?;
    read_jsonl(bytes.as_slice()).with_context(|| format!("reading log {}", path.display()))
}

fn jsonl<T: Serialize>(rows: &[T]) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    write_jsonl(&mut buf, rows)?;
    Ok(buf)
}

fn pretty_json<T: Serialize>(value: &T) -> Result<Vec<u8>> {
    let mut json = serde_json::to_vec_pretty(value)?;
    json.push(b'\n');
    Ok(json)
}

/// Manifest path for a single-file output: `model.json` gets `model.json.manifest.json`.
fn sidecar(path: &Path) -> PathBuf {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(".manifest.json");
    path.with_file_name(name)
}

pub fn run(cli: &Cli, argv: &[String]) -> Result<()> {
    let exec = if cli.sequential { Exec::Sequential } else { Exec::Parallel };
    match &cli.command {
        Command::Simulate(a) => simulate(a, argv, exec),
        Command::Annotate(a) => annotate(a, argv),
        Command::Estimate(a) => estimate(a, argv, exec),
        Command::Train(a) => train(a, argv, exec),
        Command::Evaluate(a) => evaluate_cmd(a, argv, exec),
        Command::Replay { manifest } => replay(manifest),
    }
}

fn simulate(a: &SimulateArgs, argv: &[String], exec: Exec) -> Result<()> {
    let mut run = Run::new("simulate", argv, String::new(), None);
    let bytes = run.input(&a.config)?;
    let mut config: SimConfig = parse_config(&a.config, &bytes)?;
    if let Some(seed) = a.seed {
        config.seed = seed;
    }
    let mut run = run.with_config(config.hash(), Some(config.seed));
    let sim = simulate_with(&config, exec)?;
    let mut features = Vec::new();
    sim.features.write_jsonl(&mut features)?;
    run.output(a.out.join("log.jsonl"), jsonl(&sim.impressions)?);
    run.output(a.out.join("features.jsonl"), features);
    run.output(a.out.join("surface.csv"), sim.surface.to_csv(&config.layout)?.into_bytes());
    run.finish(&a.out.join("manifest.json"))?;
    eprintln!(
        "simulated {} queries, {} impressions into {}",
        config.num_queries,
        sim.impressions.len(),
        a.out.display()
    );
    Ok(())
}

/// Judge settings; each source reads only its own section.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnnotateConfig {
    pub mock_score: u8,
    pub calib: JudgeCalibration,
    pub seed: u64,
    pub endpoint: EndpointConfig,
    /// Prompt text with `{query}`, `{title}` and `{description}` placeholders.
    pub prompt: Option<String>,
    pub max_in_flight: usize,
}

impl Default for AnnotateConfig {
    fn default() -> Self {
        AnnotateConfig {
            mock_score: 70,
            calib: JudgeCalibration::default(),
            seed: 42,
            endpoint: EndpointConfig::default(),
            prompt: None,
            max_in_flight: 4,
        }
    }
}

fn annotate(a: &AnnotateArgs, argv: &[String]) -> Result<()> {
    let mut run = Run::new("annotate", argv, String::new(), None);
    let mut config: AnnotateConfig = optional_config(&mut run, a.config.as_deref())?;
    if let Some(seed) = a.seed {
        config.seed = seed;
    }
    let log = read_log(&mut run, &a.log)?;
    let source: Box<dyn JudgeSource> = match a.source {
        Source::Mock => Box::new(ConstantJudge(JudgeScore::new(config.mock_score)?)),
        Source::Simulated => {
            config.calib.validate()?;
            Box::new(SimulatedJudge {
                calib: config.calib.clone(),
                seed: config.seed,
            })
        }
        Source::Endpoint => {
            let catalog_path = a
                .catalog
                .as_deref()
                .ok_or_else(|| anyhow!("--source endpoint needs --catalog with query and item text"))?;
            let catalog: Catalog = serde_json::from_slice(&run.input(catalog_path)?)
                .with_context(|| format!("parsing catalog {}", catalog_path.display()))?;
            let template = match &config.prompt {
                Some(text) => PromptTemplate::new(text.clone())?,
                None => PromptTemplate::default(),
            };
            Box::new(EndpointJudge::new(config.endpoint.clone(), template, catalog))
        }
    };
    let hashed = serde_json::json!({ "source": a.source, "force": a.force, "config": config });
    let mut run = run.with_config(config_hash(&hashed), (a.source == Source::Simulated).then_some(config.seed));
    let options = AnnotateOptions {
        force: a.force,
        max_in_flight: config.max_in_flight,
    };
    let result = annotate_log(&log, source.as_ref(), &options, &JudgeCache::new());
    let s = &result.summary;
    eprintln!(
        "annotated {} of {} rows ({} kept, {} judge calls, {} cache hits, {} failed)",
        s.annotated,
        s.rows,
        s.kept,
        s.calls,
        s.cache_hits,
        s.failures.len()
    );
    for f in s.failures.iter().take(5) {
        eprintln!("  row {} ({}/{}): {}", f.row, f.query_id, f.item_id, f.error);
    }
    run.output(a.out.clone(), jsonl(&result.log)?);
    run.finish(&sidecar(&a.out))?;
    Ok(())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EstimateConfig {
    pub estimator: EstimatorSpec,
    pub bootstrap: BootstrapConfig,
    pub buckets: String,
}

impl Default for EstimateConfig {
    fn default() -> Self {
        EstimateConfig {
            estimator: EstimatorSpec::default(),
            bootstrap: BootstrapConfig::default(),
            buckets: "81-100,61-80,41-60".into(),
        }
    }
}

#[derive(Serialize)]
struct DivergenceFile<'a> {
    divergent: bool,
    report: Option<&'a DivergenceReport>,
    omitted: &'a [OmittedBucket],
    warnings: &'a [String],
}

fn estimate(a: &EstimateArgs, argv: &[String], exec: Exec) -> Result<()> {
    let mut run = Run::new("estimate", argv, String::new(), None);
    let mut config: EstimateConfig = optional_config(&mut run, a.config.as_deref())?;
    if let Some(b) = &a.buckets {
        config.buckets = b.clone();
    }
    if let Some(m) = a.min_support {
        config.estimator.min_support = m;
    }
    if let Some(s) = a.smoothing {
        config.estimator.smoothing = s;
    }
    if let Some(r) = a.resamples {
        config.bootstrap.resamples = r;
    }
    if let Some(seed) = a.seed {
        config.bootstrap.seed = seed;
    }
    let buckets = ScoreBucket::parse_list(&config.buckets)?;
    let mut run = run.with_config(config_hash(&config), Some(config.bootstrap.seed));
    let log = read_log(&mut run, &a.log)?;
    let layout = infer_layout(&log)?;
    let analysis = analyze(&log, &buckets, &config.estimator, &config.bootstrap, exec)?;

    let mut csv = Vec::new();
    write_propensity_csv(&mut csv, &analysis.overall, &layout)?;
    run.output(a.out.join("propensity.csv"), csv);
    let mut csv = Vec::new();
    write_bucket_csv(&mut csv, &analysis.buckets, &layout)?;
    run.output(a.out.join("buckets.csv"), csv);
    let divergence = DivergenceFile {
        divergent: analysis.divergence.as_ref().is_some_and(|d| d.divergent),
        report: analysis.divergence.as_ref(),
        omitted: &analysis.buckets.omitted,
        warnings: &analysis.warnings,
    };
    run.output(a.out.join("divergence.json"), pretty_json(&divergence)?);
    if a.svg {
        let grid = estimate_grid(&analysis.overall, &layout)?;
        run.output(
            a.out.join("heatmap.svg"),
            heatmap_svg(&grid, "Estimated examination propensity").into_bytes(),
        );
        for curve in &analysis.buckets.curves {
            let grid = estimate_grid(&curve.estimate, &layout)?;
            let name = format!("heatmap_{}.svg", curve.bucket.label.to_lowercase().replace(' ', "_"));
            run.output(
                a.out.join(name),
                heatmap_svg(&grid, &format!("{} ({}-{})", curve.bucket.label, curve.bucket.lo, curve.bucket.hi))
                    .into_bytes(),
            );
        }
    }
    run.finish(&a.out.join("manifest.json"))?;

    for w in &analysis.warnings {
        eprintln!("warning: {w}");
    }
    let values: Vec<String> = analysis
        .overall
        .values()
        .iter()
        .map(|v| v.map_or_else(|| "n/a".into(), |v| format!("{v:.3}")))
        .collect();
    println!("propensity: {}", values.join(" "));
    match &analysis.divergence {
        Some(d) => println!(
            "buckets: {} curves, consistent at {:.0}% of ranks, divergent: {}",
            d.buckets.len(),
            100.0 * d.consistent_fraction,
            d.divergent
        ),
        None => println!("buckets: fewer than two curves, no divergence check"),
    }
    Ok(())
}

fn train(a: &TrainArgs, argv: &[String], exec: Exec) -> Result<()> {
    let mut run = Run::new("train", argv, String::new(), None);
    let mut config: TrainConfig = optional_config(&mut run, a.config.as_deref())?;
    if let Some(f) = a.clip_floor {
        config.clip_floor = f;
    }
    if let Some(seed) = a.seed {
        config.seed = seed;
    }
    config.validate()?;
    let mut run = run.with_config(config.hash(), Some(config.seed));
    let log = read_log(&mut run, &a.log)?;
    let features = FeatureTable::read_jsonl(run.input(&a.features)?.as_slice())
        .with_context(|| format!("reading features {}", a.features.display()))?;
    let mode = TrainingMode::from(a.mode);
    let propensity = match (&a.propensity, mode) {
        (Some(path), _) => {
            let bytes = run.input(path)?;
            let est = read_propensity_csv(bytes.as_slice())
                .with_context(|| format!("reading propensities {}", path.display()))?;
            Some((est, sha256_hex(&bytes)))
        }
        (None, TrainingMode::Ips) => bail!(proplab::Error::Validation(
            "--mode ips needs --propensity (the CSV written by `estimate`)".into()
        )),
        (None, TrainingMode::Naive) => None,
    };
    let mut model = train_with(
        &log,
        &features,
        mode,
        propensity.as_ref().map(|(est, _)| est),
        &config,
        exec,
    )?;
    if mode == TrainingMode::Ips {
        model.propensity_sha256 = propensity.map(|(_, sha)| sha);
    }
    run.output(a.out.clone(), pretty_json(&model)?);
    run.finish(&sidecar(&a.out))?;
    println!("{mode} model, final loss {:.6}", model.final_loss);
    Ok(())
}

fn parse_model_arg(spec: &str) -> Result<(String, PathBuf)> {
    let (name, path) = spec
        .split_once('=')
        .ok_or_else(|| proplab::Error::Validation(format!("--model expects NAME=PATH, got `{spec}`")))?;
    if name.is_empty() || name == LOGGED {
        bail!(proplab::Error::Validation(format!("invalid model name `{name}`")));
    }
    Ok((name.to_string(), PathBuf::from(path)))
}

fn bm25_rankings(catalog: &Catalog, instances: &mut [proplab::evaluator::EvalInstance]) -> Result<()> {
    let mut ids: Vec<&String> = catalog.items.keys().collect();
    ids.sort();
    let docs: Vec<Vec<String>> = ids
        .iter()
        .map(|id| {
            let item = &catalog.items[*id];
            tokenize(&format!("{} {}", item.title, item.description))
        })
        .collect();
    let doc_of: HashMap<&str, usize> = ids.iter().enumerate().map(|(i, id)| (id.as_str(), i)).collect();
    let index = Bm25Index::new(&docs, Bm25Params::default());
    for inst in instances {
        let query = catalog
            .queries
            .get(&inst.query_id)
            .ok_or_else(|| proplab::Error::Validation(format!("catalog has no text for query {}", inst.query_id)))?;
        let docs = inst
            .item_ids
            .iter()
            .map(|id| {
                doc_of
                    .get(id.as_str())
                    .copied()
                    .ok_or_else(|| proplab::Error::Validation(format!("catalog has no text for item {id}")))
            })
            .collect::<Result<Vec<_>, _>>()?;
        let scores = index.scores(&tokenize(query), &docs);
        inst.add_ranking("bm25", &scores)?;
    }
    Ok(())
}

fn evaluate_cmd(a: &EvaluateArgs, argv: &[String], exec: Exec) -> Result<()> {
    let models = a.model.iter().map(|m| parse_model_arg(m)).collect::<Result<Vec<_>>>()?;
    let labels = match a.labels {
        Labels::Booked => LabelSource::Booked,
        Labels::TrueRelevance => LabelSource::TrueRelevance,
    };
    let hashed = serde_json::json!({
        "k": a.k,
        "baseline": a.baseline,
        "labels": labels,
        "judge": a.judge,
        "bm25": a.catalog.is_some(),
        "models": models.iter().map(|(n, _)| n).collect::<Vec<_>>(),
    });
    let mut run = Run::new("evaluate", argv, config_hash(&hashed), None);
    let log = read_log(&mut run, &a.log)?;
    let mut instances = instances_from_log(&log, labels)?;
    if !models.is_empty() {
        let path = a
            .features
            .as_deref()
            .ok_or_else(|| proplab::Error::Validation("--model needs --features".into()))?;
        let features = FeatureTable::read_jsonl(run.input(path)?.as_slice())
            .with_context(|| format!("reading features {}", path.display()))?;
        for (name, path) in &models {
            let model: RankerModel = serde_json::from_slice(&run.input(path)?)
                .with_context(|| format!("parsing model {}", path.display()))?;
            for inst in &mut instances {
                let scores = model_scores(&model, &features, &inst.query_id, &inst.item_ids)?;
                inst.add_ranking(name, &scores)?;
            }
        }
    }
    if a.judge {
        for inst in &mut instances {
            let scores = inst.judge_ranking_scores()?;
            inst.add_ranking("judge", &scores)?;
        }
    }
    if let Some(path) = &a.catalog {
        let catalog: Catalog = serde_json::from_slice(&run.input(path)?)
            .with_context(|| format!("parsing catalog {}", path.display()))?;
        bm25_rankings(&catalog, &mut instances)?;
    }
    let metrics = evaluate(&instances, a.k, exec)?;
    let report = delta_report(&metrics, &a.baseline, a.k)?;
    let table = render_table(&report);
    let mut csv = Vec::new();
    write_report_csv(&mut csv, &report)?;
    run.output(a.out.join("report.csv"), csv);
    run.output(a.out.join("report.json"), pretty_json(&report)?);
    run.output(a.out.join("table.txt"), table.clone().into_bytes());
    run.finish(&a.out.join("manifest.json"))?;
    print!("{table}");
    Ok(())
}

/// Reruns the command recorded in a manifest into a scratch directory and
/// compares every output digest.
fn replay(manifest_path: &Path) -> Result<()> {
    let manifest = RunManifest::read(manifest_path)?;
    for input in &manifest.inputs {
        let bytes = crate::manifest::read_input(Path::new(&input.path))?;
        if sha256_hex(&bytes) != input.sha256 {
            bail!(proplab::Error::Validation(format!(
                "input {} changed since the manifest was written",
                input.path
            )));
        }
    }
    let out_pos = manifest
        .argv
        .iter()
        .position(|a| a == "--out")
        .ok_or_else(|| proplab::Error::Validation("manifest argv has no --out".into()))?;
    let original_out = PathBuf::from(
        manifest
            .argv
            .get(out_pos + 1)
            .ok_or_else(|| proplab::Error::Validation("manifest argv ends after --out".into()))?,
    );
    let scratch = tempfile::tempdir().map_err(|e| proplab::Error::io(std::env::temp_dir(), e))?;
    let file_output = manifest.command == "annotate" || manifest.command == "train";
    let replay_out = if file_output {
        scratch.path().join(original_out.file_name().unwrap_or_default())
    } else {
        scratch.path().join("out")
    };
    let mut argv = manifest.argv.clone();
    argv[out_pos + 1] = replay_out.display().to_string();
    let cli = <Cli as clap::Parser>::try_parse_from(std::iter::once("proplab".to_string()).chain(argv.iter().cloned()))
        .map_err(|e| proplab::Error::Validation(format!("manifest argv does not parse: {e}")))?;
    run(&cli, &argv)?;

    let mut mismatched = Vec::new();
    for output in &manifest.outputs {
        let recorded = Path::new(&output.path);
        let replayed = if file_output {
            replay_out.clone()
        } else {
            replay_out.join(recorded.strip_prefix(&original_out).unwrap_or(recorded))
        };
        let bytes = crate::manifest::read_input(&replayed)?;
        if sha256_hex(&bytes) != output.sha256 {
            mismatched.push(output.path.clone());
        }
    }
    if !mismatched.is_empty() {
        bail!(proplab::Error::Validation(format!(
            "replay differs for {}",
            mismatched.join(", ")
        )));
    }
    println!("replayed `{}`: {} outputs identical", manifest.command, manifest.outputs.len());
    Ok(())
}
