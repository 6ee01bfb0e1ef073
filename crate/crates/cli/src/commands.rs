use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;
use sigtrust::baselines::{self, badrank, lowest_pct_heuristic, unsigned_features, BaselineScore};
use sigtrust::checkpoint;
use sigtrust::evaluation::{self, median, render_ablation, render_table, split_scores, EvalReport};
use sigtrust::features::{assemble_features, FeatureMatrix};
use sigtrust::graph::{load_edge_list, load_edge_list_with_audit, SignedGraph};
use sigtrust::labeling::{
    generate_labels, label_report, labels_to_csv, parse_labels_csv, LabelSet,
};
use sigtrust::model::{self, MessageGraph, ModelConfig, ModelParams, Wiring};
use sigtrust::training::{self, Split, SplitAssignment};

use crate::config::RunConfig;

fn write(path: &Path, contents: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir).map_err(|e| sigtrust::Error::Io {
                path: dir.to_path_buf(),
                source: e,
            })?;
        }
    }
    fs::write(path, contents).map_err(|e| sigtrust::Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    Ok(())
}

/// The cached graph when present, otherwise a fresh ingest of the edge list.
fn load_graph(cfg: &RunConfig) -> Result<SignedGraph> {
    let cached = cfg.out("graph.csv");
    if cached.exists() {
        log::info!("using cached graph {}", cached.display());
        return Ok(load_edge_list(&cached, &cfg.ingest)?);
    }
    let path = cfg.edges_path();
    log::info!("no cached graph, ingesting {}", path.display());
    Ok(load_edge_list(&path, &cfg.ingest)?)
}

/// Labels from `labels.csv` when present, otherwise generated.
fn load_labels(cfg: &RunConfig, graph: &SignedGraph) -> Result<LabelSet> {
    let path = cfg.out("labels.csv");
    if path.exists() {
        let text = fs::read_to_string(&path).map_err(|e| sigtrust::Error::Io {
            path: path.clone(),
            source: e,
        })?;
        return parse_labels_csv(&text, graph)
            .with_context(|| format!("reading {}", path.display()));
    }
    log::info!("no labels.csv, generating labels");
    Ok(generate_labels(graph, &cfg.labels)?.1)
}

struct Prepared {
    graph: SignedGraph,
    labels: LabelSet,
    features: FeatureMatrix,
    split: SplitAssignment,
}

fn prepare(cfg: &RunConfig) -> Result<Prepared> {
    let graph = load_graph(cfg)?;
    let labels = load_labels(cfg, &graph)?;
    let features = assemble_features(&graph, &cfg.features)?;
    let split = training::make_splits(&labels, &cfg.train)?;
    Ok(Prepared {
        graph,
        labels,
        features,
        split,
    })
}

fn seed_config(cfg: &RunConfig, seed: u64) -> ModelConfig {
    ModelConfig { seed, ..cfg.model }
}

pub fn ingest(cfg: &RunConfig, path: Option<PathBuf>, out: Option<PathBuf>) -> Result<()> {
    let path = path.unwrap_or_else(|| cfg.edges_path());
    let (graph, audit) = load_edge_list_with_audit(&path, &cfg.ingest)?;
    let out = out.unwrap_or_else(|| cfg.out("graph.csv"));
    write(&out, &graph.to_csv())?;
    let summary = audit.render();
    let audit_path = out.with_file_name("ingest_audit.txt");
    write(&audit_path, &format!("{summary}\n"))?;
    println!("{summary}");
    println!("graph written to {}", out.display());
    Ok(())
}

pub fn label(cfg: &RunConfig) -> Result<()> {
    let graph = load_graph(cfg)?;
    let (seeds, labels) = generate_labels(&graph, &cfg.labels)?;
    let report = label_report(&labels);
    write(&cfg.out("labels.csv"), &labels_to_csv(&graph, &labels))?;
    let seed_ids: Vec<String> = seeds.iter().map(|&s| graph.raw_id(s).to_string()).collect();
    let text = format!("seeds={}\n{}", seed_ids.join(";"), report.render());
    write(&cfg.out("label_report.txt"), &text)?;
    print!("{text}");
    Ok(())
}

pub fn train(cfg: &RunConfig, only_seed: Option<u64>) -> Result<()> {
    let p = prepare(cfg)?;
    write(&cfg.out("features.csv"), &p.features.to_csv(&p.graph))?;
    let checksum = p.split.checksum();
    write(
        &cfg.out("split.txt"),
        &format!("split_seed={} checksum={checksum}\n", cfg.train.split_seed),
    )?;
    let seeds: Vec<u64> = match only_seed {
        Some(s) => vec![s],
        None => cfg.train.model_seeds.clone(),
    };
    for seed in seeds {
        let model_cfg = seed_config(cfg, seed);
        let (params, log) = training::train_with_split(
            &p.graph,
            &p.features,
            &p.labels,
            &model_cfg,
            &Wiring::default(),
            &cfg.train,
            &cfg.loss,
            &p.split,
        )?;
        write(
            &cfg.out(&format!("trainlog_seed{seed}.jsonl")),
            &log.to_json_lines(),
        )?;
        let mut meta = BTreeMap::new();
        meta.insert("split_checksum".to_string(), checksum.clone());
        meta.insert("best_epoch".to_string(), log.best_epoch.to_string());
        meta.insert("best_val_auc".to_string(), log.best_val_auc.to_string());
        meta.insert("w_fraud".to_string(), log.w_fraud.to_string());
        let ckpt = cfg.out(&format!("checkpoint_seed{seed}.json"));
        checkpoint::save(&ckpt, &params, meta)?;
        println!(
            "seed={seed} epochs={} best_epoch={} best_val_auc={:.4} checkpoint={}",
            log.records.len(),
            log.best_epoch,
            log.best_val_auc,
            ckpt.display()
        );
    }
    Ok(())
}

fn load_checkpoint(
    path: &Path,
    model_cfg: &ModelConfig,
    split: &SplitAssignment,
) -> Result<ModelParams> {
    if !path.exists() {
        return Err(sigtrust::Error::Checkpoint(format!(
            "missing checkpoint {} (run `sigtrust train` first)",
            path.display()
        ))
        .into());
    }
    let (params, ckpt) = checkpoint::load(path, Some((model_cfg, &Wiring::default())))?;
    if let Some(stored) = ckpt.metadata.get("split_checksum") {
        if *stored != split.checksum() {
            return Err(sigtrust::Error::Checkpoint(format!(
                "{} was trained on a different split",
                path.display()
            ))
            .into());
        }
    }
    Ok(params)
}

/// Explicit checkpoints (seed read from their config) or one per model seed.
fn checkpoints(cfg: &RunConfig, explicit: &[PathBuf]) -> Result<Vec<(u64, PathBuf)>> {
    if explicit.is_empty() {
        return Ok(cfg
            .train
            .model_seeds
            .iter()
            .map(|&s| (s, cfg.out(&format!("checkpoint_seed{s}.json"))))
            .collect());
    }
    explicit
        .iter()
        .map(|p| {
            let text = fs::read_to_string(p).map_err(|e| sigtrust::Error::Io {
                path: p.clone(),
                source: e,
            })?;
            Ok((checkpoint::decode(&text)?.config.seed, p.clone()))
        })
        .collect()
}

fn baseline_report(
    score: &BaselineScore,
    labels: &LabelSet,
    split: &SplitAssignment,
) -> Result<EvalReport> {
    let (scores, ys) = split_scores(&score.scores, labels, split, Split::Test);
    let flags = score.flags.as_ref().expect("baselines define flags");
    let (preds, _) = split_scores(
        &flags
            .iter()
            .map(|&f| f64::from(u8::from(f)))
            .collect::<Vec<_>>(),
        labels,
        split,
        Split::Test,
    );
    let preds: Vec<u8> = preds.iter().map(|&p| u8::from(p > 0.5)).collect();
    Ok(EvalReport::from_scores(
        &score.method,
        "test",
        &scores,
        &preds,
        &ys,
    )?)
}

#[derive(Serialize)]
struct EvalOutput {
    split_checksum: String,
    reports: Vec<EvalReport>,
    per_seed: Vec<EvalReport>,
    median_auc: BTreeMap<String, f64>,
    median_f1: BTreeMap<String, f64>,
}

pub fn eval(cfg: &RunConfig, explicit: &[PathBuf]) -> Result<()> {
    let p = prepare(cfg)?;
    let mut per_seed = Vec::new();
    let mut dual = Vec::new();
    for (seed, path) in checkpoints(cfg, explicit)? {
        let params = load_checkpoint(&path, &seed_config(cfg, seed), &p.split)?;
        let probs = model::predict(
            &params,
            &MessageGraph::new(&p.graph, params.wiring.channels),
            p.features.data(),
        )?;
        let (scores, ys) =
            split_scores(probs.as_slice().unwrap(), &p.labels, &p.split, Split::Test);
        let report = EvalReport::from_probs("dual_channel", "test", &scores, &ys)?;
        dual.push(report.clone());
        per_seed.push(report);
    }

    let gcn_features = unsigned_features(&p.graph, &cfg.features)?;
    let mut gcn = Vec::new();
    for &seed in &cfg.train.model_seeds {
        let out = baselines::unsigned_gcn(
            &p.graph,
            &gcn_features,
            &p.labels,
            &seed_config(cfg, seed),
            &cfg.train,
            &cfg.loss,
            &p.split,
        )?;
        write(
            &cfg.out(&format!("scores_gcn_seed{seed}.csv")),
            &out.score.to_csv(&p.graph),
        )?;
        let report = baseline_report(&out.score, &p.labels, &p.split)?;
        gcn.push(report.clone());
        per_seed.push(report);
    }

    let low = lowest_pct_heuristic(&p.graph, cfg.baselines.lowest_pct)?;
    let bad = badrank(&p.graph, &cfg.baselines.badrank)?;
    write(
        &cfg.out(&format!("scores_{}.csv", low.method)),
        &low.to_csv(&p.graph),
    )?;
    write(&cfg.out("scores_badrank.csv"), &bad.to_csv(&p.graph))?;

    let mut reports = vec![EvalReport::aggregate(&dual)?, EvalReport::aggregate(&gcn)?];
    reports.push(baseline_report(&bad, &p.labels, &p.split)?);
    reports.push(baseline_report(&low, &p.labels, &p.split)?);

    let mut median_auc = BTreeMap::new();
    let mut median_f1 = BTreeMap::new();
    for (name, group) in [("dual_channel", &dual), ("gcn", &gcn)] {
        median_auc.insert(
            name.to_string(),
            median(&group.iter().map(|r| r.auc_roc).collect::<Vec<_>>()),
        );
        median_f1.insert(
            name.to_string(),
            median(&group.iter().map(|r| r.macro_f1).collect::<Vec<_>>()),
        );
    }
    let table = render_table(&reports);
    let output = EvalOutput {
        split_checksum: p.split.checksum(),
        reports,
        per_seed,
        median_auc,
        median_f1,
    };
    write(
        &cfg.out("eval_report.json"),
        &serde_json::to_string_pretty(&output)?,
    )?;
    write(&cfg.out("eval_table.txt"), &table)?;
    print!("{table}");
    Ok(())
}

pub fn ablate(cfg: &RunConfig) -> Result<()> {
    let p = prepare(cfg)?;
    let outcome = evaluation::run_ablation_suite(
        &p.graph,
        &p.features,
        &p.labels,
        &cfg.model,
        &cfg.train,
        &cfg.loss,
        &cfg.train.model_seeds,
        &cfg.ablation.variants,
    )?;
    let table = render_ablation(&outcome);
    write(
        &cfg.out("ablation.json"),
        &serde_json::to_string_pretty(&outcome)?,
    )?;
    write(&cfg.out("ablation_table.txt"), &table)?;
    print!("{table}");
    Ok(())
}

pub fn export(cfg: &RunConfig, explicit: Option<PathBuf>) -> Result<()> {
    let p = prepare(cfg)?;
    let given: Vec<PathBuf> = explicit.into_iter().collect();
    let (seed, path) = checkpoints(cfg, &given)?
        .into_iter()
        .next()
        .expect("at least one model seed");
    let params = load_checkpoint(&path, &seed_config(cfg, seed), &p.split)?;
    let export = evaluation::export_embeddings(&params, &p.graph, &p.features, &p.labels)?;
    let emb = cfg.out(&format!("embeddings_seed{seed}.csv"));
    let proj = cfg.out(&format!("projection_seed{seed}.csv"));
    write(&emb, &export.embeddings_csv)?;
    write(&proj, &export.projection_csv)?;
    println!(
        "rows={} embeddings={} projection={}",
        export.z.nrows(),
        emb.display(),
        proj.display()
    );
    if let Some(sep) = export.separation {
        println!(
            "separation inter_centroid={:.6} mean_intra={:.6} separated={}",
            sep.inter_centroid,
            sep.mean_intra,
            sep.separated()
        );
    }
    Ok(())
}
