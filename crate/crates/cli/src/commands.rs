use std::collections::BTreeMap;
use std::path::Path;

use anyhow::{Context, Result};
use idgnn::constructive::triangle_net_trace;
use idgnn::graph::{load_jsonl, make_batch, save_jsonl, Dataset, Graph, SplitName};
use idgnn::ids::{sample_ids, IdDistribution, IdMode};
use idgnn::invariance::invariance_report;
use idgnn::layers::{model_forward, LayerKind, Model, ModelConfig, Pooling};
use idgnn::metrics::{self, MetricsRow, FINAL_EPOCH};
use idgnn::seed::salted;
use idgnn::synth::{build_istriangle_dataset, build_wlhard_pairs, generate_ba, pair_indices, triangle_labels_bruteforce, wl_distinguishable, BaParams, IsTriangleConfig, WlHardConfig};
use idgnn::train::{evaluate, mean_std, train_with, EvalSet, TrainConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::plot::{render_svg, Panel, Series};
use crate::provenance::Provenance;
use crate::{Command, UsageError, VerificationFailed, SEED_ENV};

pub fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::GenIstriangle(a) => gen_istriangle(a),
        Command::GenWlhard(a) => gen_wlhard(a),
        Command::Train(a) => train(a),
        Command::EvalInvariance(a) => eval_invariance(a),
        Command::VerifyTheorem3(a) => verify_theorem3(a),
        Command::VerifyWl(a) => verify_wl(a),
        Command::ExportCurves(a) => export_curves(a),
    }
}

/// `IDGNN_SEED` if set, else the flag.
fn seed_override(flag: Option<u64>) -> Result<Option<u64>> {
    match std::env::var(SEED_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| UsageError(format!("{SEED_ENV}={v:?} is not an unsigned integer")).into()),
        Err(_) => Ok(flag),
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn require_file(path: &Path, flag: &str) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(UsageError(format!("{flag} {} does not exist", path.display())).into())
    }
}

fn load_dataset(path: &Path) -> Result<Dataset> {
    require_file(path, "--data")?;
    load_jsonl(path).with_context(|| format!("loading {}", path.display()))
}

fn gen_istriangle(a: crate::GenIsTriangleArgs) -> Result<()> {
    let cfg = IsTriangleConfig {
        num_graphs: a.graphs,
        num_nodes: a.nodes,
        m_train: a.m_train,
        m_test: a.m_extrap,
        test_graphs: a.test_graphs,
        valid_fraction: a.valid_fraction,
        labeled_per_split: a.labeled,
        seed: seed_override(a.seed)?.unwrap_or(0),
    };
    let prov = Provenance::start(&a.out, "gen-istriangle", Some(cfg.seed), serde_json::to_value(&cfg)?)?;
    let data = build_istriangle_dataset(&cfg)?;
    let mut files = Vec::new();
    for (stem, ds) in [("train", &data.train), ("interp", &data.interp), ("extrap", &data.extrap)] {
        save_jsonl(ds, &a.out.join(format!("{stem}.jsonl")))?;
        files.push(format!("{stem}.jsonl"));
        files.push(format!("{stem}.split.json"));
    }
    write_json(&a.out.join("generator.json"), &cfg)?;
    files.push("generator.json".into());
    prov.complete(&files)?;
    println!(
        "wrote {} training, {} interpolation and {} extrapolation graphs to {}",
        data.train.graphs.len(),
        data.interp.graphs.len(),
        data.extrap.graphs.len(),
        a.out.display()
    );
    Ok(())
}

fn gen_wlhard(a: crate::GenWlHardArgs) -> Result<()> {
    let cfg = WlHardConfig {
        num_pairs: a.pairs,
        sizes: a.sizes,
        seed: seed_override(a.seed)?.unwrap_or(0),
    };
    let prov = Provenance::start(&a.out, "gen-wlhard", Some(cfg.seed), serde_json::to_value(&cfg)?)?;
    let ds = build_wlhard_pairs(cfg.num_pairs, &cfg.sizes, cfg.seed)?;
    save_jsonl(&ds, &a.out.join("pairs.jsonl"))?;
    write_json(&a.out.join("generator.json"), &cfg)?;
    prov.complete(&["pairs.jsonl", "pairs.split.json", "generator.json"])?;
    println!("wrote {} pairs to {}", cfg.num_pairs, a.out.display());
    Ok(())
}

fn load_train_config(path: Option<&Path>) -> Result<TrainConfig> {
    let Some(path) = path else {
        return Ok(TrainConfig::default());
    };
    require_file(path, "--config")?;
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn file_stem(path: &Path) -> String {
    path.file_stem().map_or_else(|| "dataset".to_string(), |s| s.to_string_lossy().into_owned())
}

fn train(a: crate::TrainArgs) -> Result<()> {
    let mut cfg = load_train_config(a.config.as_deref())?;
    if let Some(seed) = seed_override(a.seed)? {
        cfg.seeds = vec![seed];
    }
    if let Some(jobs) = a.jobs {
        cfg.jobs = jobs;
    }
    cfg.validate()?;
    let dataset = load_dataset(&a.data)?;
    let extras = a
        .extra_test
        .iter()
        .map(|(name, path)| Ok((name.clone(), load_dataset(path)?)))
        .collect::<Result<Vec<_>>>()?;
    let name = a.name.clone().unwrap_or_else(|| file_stem(&a.data));

    let prov = Provenance::start(&a.out, "train", cfg.seeds.first().copied(), serde_json::to_value(&cfg)?)?;
    let sets: Vec<EvalSet<'_>> = extras.iter().map(|(n, ds)| EvalSet::whole(n, ds)).collect();
    let record = train_with(&dataset, &name, &sets, &cfg)?;

    let ckpt_dir = a.out.join("checkpoints");
    std::fs::create_dir_all(&ckpt_dir)?;
    let mut files = vec!["record.json".to_string(), "metrics.csv".to_string()];
    for run in &record.runs {
        let rel = format!("checkpoints/seed-{}.json", run.seed);
        run.model.save_checkpoint(&a.out.join(&rel))?;
        files.push(rel);
    }
    write_json(&a.out.join("record.json"), &record)?;
    metrics::write_csv(&[&record], &a.out.join("metrics.csv"))?;
    prov.complete(&files)?;

    for agg in &record.summary {
        let inv = agg
            .invariance_mean
            .map_or_else(String::new, |m| format!(", invariance {m:.4} +- {:.4}", agg.invariance_std.unwrap_or(0.0)));
        println!(
            "{} {}: accuracy {:.4} +- {:.4}{inv} over {} seeds",
            cfg.method(),
            agg.split,
            agg.accuracy_mean,
            agg.accuracy_std,
            agg.n
        );
    }
    Ok(())
}

fn split_graphs<'a>(dataset: &'a Dataset, split: &str) -> Result<Vec<&'a Graph>> {
    let name = match split {
        "train" => SplitName::Train,
        "valid" => SplitName::Valid,
        "test" => SplitName::Test,
        "all" => return Ok(dataset.graphs.iter().collect()),
        other => return Err(UsageError(format!("--split must be train, valid, test or all, got {other:?}")).into()),
    };
    Ok(dataset.split_graphs(name))
}

#[derive(Serialize)]
struct InvarianceOutput {
    split: String,
    k: usize,
    seed: u64,
    accuracy: f64,
    mean: f64,
    per_example: Vec<f64>,
}

fn eval_invariance(a: crate::EvalInvarianceArgs) -> Result<()> {
    require_file(&a.checkpoint, "--checkpoint")?;
    if a.k == 0 {
        return Err(UsageError("--k must be >= 1".into()).into());
    }
    let seed = seed_override(a.seed)?.unwrap_or(0);
    let config = serde_json::json!({
        "checkpoint": a.checkpoint, "data": a.data, "split": a.split, "k": a.k,
    });
    let dataset = load_dataset(&a.data)?;
    let graphs = split_graphs(&dataset, &a.split)?;
    let prov = Provenance::start(&a.out, "eval-invariance", Some(seed), config)?;
    let model = Model::load_checkpoint(&a.checkpoint)?;
    let report = invariance_report(&model, &graphs, a.k, &a.split, seed)?;
    let accuracy = evaluate(&model, &graphs, seed)?.accuracy;
    let out = InvarianceOutput {
        split: a.split.clone(),
        k: a.k,
        seed,
        accuracy,
        mean: report.mean,
        per_example: report.per_example,
    };
    write_json(&a.out.join("invariance.json"), &out)?;
    prov.complete(&["invariance.json"])?;
    println!(
        "split {}: invariance ratio {:.4} (K={}, {} examples), accuracy {:.4}",
        out.split,
        out.mean,
        out.k,
        out.per_example.len(),
        accuracy
    );
    Ok(())
}

#[derive(Debug, Serialize)]
pub struct Theorem3Report {
    pub graphs: usize,
    pub resamples: usize,
    /// Graphs whose output matches the brute-force labels.
    pub agree: usize,
    /// Graphs whose output is bit-identical across all resamples.
    pub invariant: usize,
    /// Graphs whose layer-1 and layer-2 messages change under resampling.
    pub intermediates_vary: usize,
}

fn verify_theorem3(a: crate::VerifyTheorem3Args) -> Result<()> {
    if a.nodes < a.m + 2 || a.m == 0 {
        return Err(UsageError(format!("--nodes must be >= m + 2 and m >= 1 (got nodes {}, m {})", a.nodes, a.m)).into());
    }
    if a.resamples < 2 {
        return Err(UsageError("--resamples must be >= 2".into()).into());
    }
    let seed = seed_override(a.seed)?.unwrap_or(0);
    let prov = match &a.out {
        Some(out) => Some(Provenance::start(
            out,
            "verify-theorem3",
            Some(seed),
            serde_json::json!({"graphs": a.graphs, "nodes": a.nodes, "m": a.m, "resamples": a.resamples}),
        )?),
        None => None,
    };
    let mut report = Theorem3Report {
        graphs: a.graphs,
        resamples: a.resamples,
        agree: 0,
        invariant: 0,
        intermediates_vary: 0,
    };
    for i in 0..a.graphs {
        let mut rng = ChaCha8Rng::seed_from_u64(salted(seed, "verify-theorem3", i as u64));
        let n = rng.gen_range(a.m + 2..=a.nodes);
        let graph = generate_ba(BaParams {
            n,
            m: a.m,
            seed: rng.gen(),
        })?;
        let oracle: Vec<bool> = triangle_labels_bruteforce(&graph).into_iter().map(|l| l == 1).collect();
        let first = triangle_net_trace(&graph, &sample_ids(n, 1, IdDistribution::Uniform, &mut rng)?)?;
        let (mut same_output, mut varies) = (true, false);
        for _ in 1..a.resamples {
            let t = triangle_net_trace(&graph, &sample_ids(n, 1, IdDistribution::Uniform, &mut rng)?)?;
            same_output &= t.output == first.output;
            varies |= t.layer1 != first.layer1 && t.layer2 != first.layer2;
        }
        report.agree += usize::from(first.output == oracle);
        report.invariant += usize::from(same_output);
        report.intermediates_vary += usize::from(varies);
    }
    if let (Some(prov), Some(out)) = (prov, &a.out) {
        write_json(&out.join("theorem3.json"), &report)?;
        prov.complete(&["theorem3.json"])?;
    }
    println!(
        "{}/{} agree; {} under {} resamples",
        report.agree,
        report.graphs,
        if report.invariant == report.graphs { "invariant" } else { "NOT invariant" },
        report.resamples
    );
    if report.agree != report.graphs || report.invariant != report.graphs {
        return Err(VerificationFailed(format!(
            "{} disagreements, {} non-invariant graphs",
            report.graphs - report.agree,
            report.graphs - report.invariant
        ))
        .into());
    }
    Ok(())
}

#[derive(Debug, Serialize)]
pub struct WlReport {
    pub pairs: usize,
    /// Pairs that 1-WL refinement cannot tell apart.
    pub indistinguishable: usize,
    /// Largest absolute gap between the sum-pooled embeddings of a pair under
    /// an identifier-free GIN.
    pub max_embedding_gap: f64,
}

fn pooled_embedding(model: &Model, graph: &Graph) -> Result<Vec<f64>> {
    let batch = make_batch(&[graph])?;
    let (h, _) = model_forward(model, &batch, None)?;
    let cols = h.shape()[1];
    let mut sum = vec![0.0; cols];
    for r in 0..h.shape()[0] {
        for (s, x) in sum.iter_mut().zip(h.row(r)) {
            *s += x;
        }
    }
    Ok(sum)
}

fn verify_wl(a: crate::VerifyWlArgs) -> Result<()> {
    let seed = seed_override(a.seed)?.unwrap_or(0);
    let prov = match &a.out {
        Some(out) => Some(Provenance::start(
            out,
            "verify-wl",
            Some(seed),
            serde_json::json!({"pairs": a.pairs, "sizes": a.sizes, "hidden": a.hidden, "layers": a.layers}),
        )?),
        None => None,
    };
    let ds = build_wlhard_pairs(a.pairs, &a.sizes, seed)?;
    let cfg = ModelConfig::stack(LayerKind::Gin, ds.feature_dim(), IdMode::Constant, 0, a.hidden, a.layers, Pooling::Sum, 2);
    let model = Model::new(cfg, &mut ChaCha8Rng::seed_from_u64(salted(seed, "verify-wl-model", 0)))?;
    let mut report = WlReport {
        pairs: a.pairs,
        indistinguishable: 0,
        max_embedding_gap: 0.0,
    };
    for (i, j) in pair_indices(&ds) {
        let (g1, g2) = (&ds.graphs[i], &ds.graphs[j]);
        report.indistinguishable += usize::from(!wl_distinguishable(g1, g2));
        let (e1, e2) = (pooled_embedding(&model, g1)?, pooled_embedding(&model, g2)?);
        let gap = e1.iter().zip(&e2).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        report.max_embedding_gap = report.max_embedding_gap.max(gap);
    }
    if let (Some(prov), Some(out)) = (prov, &a.out) {
        write_json(&out.join("wl.json"), &report)?;
        prov.complete(&["wl.json"])?;
    }
    println!(
        "{}/{} pairs 1-WL indistinguishable; max pooled-embedding gap {:.3e}",
        report.indistinguishable, report.pairs, report.max_embedding_gap
    );
    if report.indistinguishable != report.pairs || report.max_embedding_gap > 1e-6 {
        return Err(VerificationFailed("a pair was separated without identifiers".into()).into());
    }
    Ok(())
}

#[derive(Debug, PartialEq, Serialize)]
pub struct SummaryRow {
    pub dataset: String,
    pub model: String,
    pub method: String,
    pub split: String,
    pub task_metric_mean: f64,
    pub task_metric_std: f64,
    pub invariance_mean: Option<f64>,
    pub invariance_std: Option<f64>,
    pub seeds: usize,
}

/// Seed-averaged final metrics per (dataset, model, method, split).
pub fn summarize(rows: &[MetricsRow]) -> Vec<SummaryRow> {
    let mut groups: BTreeMap<(&str, &str, &str, &str), Vec<&MetricsRow>> = BTreeMap::new();
    for r in rows.iter().filter(|r| r.epoch == FINAL_EPOCH) {
        groups
            .entry((&r.dataset, &r.model, &r.method, &r.split))
            .or_default()
            .push(r);
    }
    groups
        .into_iter()
        .map(|((dataset, model, method, split), rs)| {
            let acc: Vec<f64> = rs.iter().map(|r| r.task_metric).collect();
            let inv: Vec<f64> = rs.iter().filter_map(|r| r.invariance_ratio).collect();
            let (task_metric_mean, task_metric_std) = mean_std(&acc);
            let (invariance_mean, invariance_std) = if inv.is_empty() {
                (None, None)
            } else {
                let (m, s) = mean_std(&inv);
                (Some(m), Some(s))
            };
            SummaryRow {
                dataset: dataset.to_string(),
                model: model.to_string(),
                method: method.to_string(),
                split: split.to_string(),
                task_metric_mean,
                task_metric_std,
                invariance_mean,
                invariance_std,
                seeds: rs.len(),
            }
        })
        .collect()
}

type Curve = BTreeMap<usize, Vec<f64>>;

fn seed_mean(curve: &Curve) -> Vec<(f64, f64)> {
    curve
        .iter()
        .map(|(&e, v)| (e as f64, v.iter().sum::<f64>() / v.len() as f64))
        .collect()
}

fn sanitize(s: &str) -> String {
    s.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect()
}

/// One SVG per (dataset, model) for `split`, with one series per method.
/// Returns `(file name, svg)` pairs.
pub fn curve_plots(rows: &[MetricsRow], split: &str) -> Vec<(String, String)> {
    let mut acc: BTreeMap<(&str, &str), BTreeMap<&str, Curve>> = BTreeMap::new();
    let mut inv: BTreeMap<(&str, &str), BTreeMap<&str, Curve>> = BTreeMap::new();
    for r in rows.iter().filter(|r| r.split == split) {
        let Some(epoch) = r.epoch_number() else { continue };
        let key = (r.dataset.as_str(), r.model.as_str());
        acc.entry(key)
            .or_default()
            .entry(&r.method)
            .or_default()
            .entry(epoch)
            .or_default()
            .push(r.task_metric);
        if let Some(x) = r.invariance_ratio {
            inv.entry(key)
                .or_default()
                .entry(&r.method)
                .or_default()
                .entry(epoch)
                .or_default()
                .push(x);
        }
    }
    acc.iter()
        .map(|(&(dataset, model), methods)| {
            let series = |m: &BTreeMap<&str, Curve>| -> Vec<Series> {
                m.iter()
                    .map(|(method, curve)| Series {
                        label: method.to_string(),
                        points: seed_mean(curve),
                    })
                    .collect()
            };
            let mut panels = vec![Panel {
                y_label: format!("task metric ({split})"),
                series: series(methods),
            }];
            if let Some(m) = inv.get(&(dataset, model)) {
                panels.push(Panel {
                    y_label: format!("invariance ratio ({split})"),
                    series: series(m),
                });
            }
            let title = format!("{dataset} / {model}");
            (format!("{}-{}.svg", sanitize(dataset), sanitize(model)), render_svg(&title, "epoch", &panels))
        })
        .collect()
}

fn export_curves(a: crate::ExportCurvesArgs) -> Result<()> {
    require_file(&a.metrics, "--metrics")?;
    let rows = metrics::read_csv(&a.metrics).with_context(|| format!("reading {}", a.metrics.display()))?;
    let prov = Provenance::start(
        &a.out,
        "export-curves",
        None,
        serde_json::json!({"metrics": a.metrics, "split": a.split}),
    )?;
    if rows.is_empty() {
        eprintln!("warning: {} has no rows; no plots written", a.metrics.display());
        prov.complete::<&str>(&[])?;
        return Ok(());
    }
    let plots = curve_plots(&rows, &a.split);
    if plots.is_empty() {
        eprintln!("warning: no per-epoch rows for split {:?}", a.split);
    }
    let mut files: Vec<String> = Vec::new();
    for (name, svg) in &plots {
        std::fs::write(a.out.join(name), svg)?;
        files.push(name.clone());
    }
    let summary = summarize(&rows);
    let mut w = csv::Writer::from_path(a.out.join("summary.csv"))?;
    for row in &summary {
        w.serialize(row)?;
    }
    w.flush()?;
    files.push("summary.csv".into());
    prov.complete(&files)?;
    println!("wrote {} plots and {} summary rows to {}", plots.len(), summary.len(), a.out.display());
    Ok(())
}
