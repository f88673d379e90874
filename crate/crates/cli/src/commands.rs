use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use inforewrite::analysis::{format_latency_table, format_stats_table, latency_stats, rewrite_stats, timed_count, LatencyStats, RewriteStats};
use inforewrite::config::{PipelineConfig, DISTILL_DEV_QUESTIONS, DISTILL_TRAIN_QUESTIONS};
use inforewrite::corpus::{
    filter_evaluable, load_conversations, load_passages, preprocess_tasks, read_tasks, split_dev, subset_map, write_tasks, LoadOptions,
    PassageFields, RewriteTask, SubsetCounts,
};
use inforewrite::dense::{build_shards, embed, read_shards, EmbeddingProvider, HashEmbedder, HttpEmbedder, PrecomputedEmbedder};
use inforewrite::distill::{export_training_set, write_examples, LabelSource};
use inforewrite::eval::{evaluate_run, format_metric_table, format_win_tie, pairwise_win_tie, recall_curve, EvalOptions, MetricReport, MetricRow, Qrels, RunFile};
use inforewrite::llm::{ClientConfig, HttpTransport, LlmClient, MockTransport, ResponseCache, Transport};
use inforewrite::prompting::{ablate_instruction, Instruction, Property};
use inforewrite::retrieval::{dense_run, sparse_run, EMBED_BATCH};
use inforewrite::rewriter::{read_rewrites, write_rewrites, Method, RewriteMap, RewriteRecord, Rewriter};
use inforewrite::sparse::{read_index, try_build_index, write_index, Analyzer, Bm25Params, Stemmer};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::cli::*;
use crate::failure::{CliResult, Failure};
use crate::manifest::Recorder;

pub fn run(command: Command, global: &GlobalArgs, config: &PipelineConfig) -> CliResult<()> {
    let recorder = match command {
        Command::Prepare(a) => prepare(a, config)?,
        Command::Rewrite(a) => rewrite(a, config)?,
        Command::IndexSparse(a) => index_sparse(a, config)?,
        Command::Embed(a) => embed_passages(a, config)?,
        Command::Search(a) => search(a, config)?,
        Command::Evaluate(a) => evaluate(a)?,
        Command::Compare(a) => compare(a)?,
        Command::Analyze(a) => analyze(a)?,
        Command::Ablate(a) => ablate(a, config)?,
        Command::ExportDistill(a) => export_distill(a, config)?,
        Command::Report(a) => report(a)?,
    };
    let path = recorder.write(config, global.manifest.as_deref())?;
    tracing::info!(manifest = %path.display(), "done");
    Ok(())
}

fn write_text(path: &Path, text: &str) -> CliResult<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Failure::Runtime(format!("{}: {e}", dir.display())))?;
    }
    std::fs::write(path, text).map_err(|e| Failure::Runtime(format!("{}: {e}", path.display())))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Failure::Runtime(e.to_string()))?;
    write_text(path, &(text + "\n"))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> CliResult<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Failure::Input(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Failure::Input(format!("{}: {e}", path.display())))
}

fn counts_json(counts: &SubsetCounts) -> serde_json::Value {
    let mut by = serde_json::Map::new();
    for (source, n) in &counts.by_source {
        by.insert(source.as_str().to_string(), json!(n));
    }
    json!({"total": counts.total, "by_subset": by})
}

fn prepare(a: PrepareArgs, config: &PipelineConfig) -> CliResult<Recorder> {
    let mut rec = Recorder::new("prepare");
    rec.input(&a.dataset);
    let source_override = a.source.as_deref().map(str::parse).transpose().map_err(|e: inforewrite::Error| Failure::Usage(e.to_string()))?;
    let opts = LoadOptions { source_override, ..Default::default() };
    let conversations = load_conversations(&a.dataset, &opts)?;

    let (main, dev) = match a.dev_conversations {
        Some(n) => {
            let (train, dev) = split_dev(&conversations, n, config.seeds.dev_split).map_err(|e| Failure::Usage(e.to_string()))?;
            (train, Some(dev))
        }
        None => (conversations, None),
    };
    let tasks = preprocess_tasks(&main);
    let qrels = match &a.qrels {
        Some(path) => {
            rec.input(path);
            Qrels::read(path)?
        }
        None => Qrels::from_gold(tasks.iter().map(|t| (t.qid(), t.gold_passage_ids.iter().cloned().collect::<Vec<_>>()))),
    };
    let (kept, counts) = if a.no_filter {
        let counts = SubsetCounts::of(&tasks);
        (tasks.clone(), counts)
    } else {
        filter_evaluable(&tasks, &qrels)
    };
    write_tasks(&a.out, &kept)?;
    rec.output(&a.out);
    let mut summary = json!({
        "conversations": main.len(),
        "tasks_before_filter": tasks.len(),
        "tasks": counts_json(&counts),
        "filtered": !a.no_filter,
    });
    if let (Some(dev), Some(path)) = (dev, &a.dev_out) {
        let dev_tasks = preprocess_tasks(&dev);
        write_tasks(path, &dev_tasks)?;
        rec.output(path);
        summary["dev"] = json!({"conversations": dev.len(), "tasks": dev_tasks.len()});
    }
    if let Some(path) = &a.qrels_out {
        qrels.write(path)?;
        rec.output(path);
    }
    println!("{}", serde_json::to_string(&summary["tasks"]).expect("json"));
    rec.summary = summary;
    Ok(rec)
}

fn method_of(m: MethodArg) -> Method {
    match m {
        MethodArg::Original => Method::Original,
        MethodArg::Human => Method::Human,
        MethodArg::RwZsl => Method::RwZsl,
        MethodArg::RwFsl => Method::RwFsl,
        MethodArg::EdSelf => Method::EdSelf,
        MethodArg::EdFile => Method::EdFile,
    }
}

fn llm_client(config: &PipelineConfig, args: &LlmArgs, rec: &mut Recorder) -> CliResult<LlmClient> {
    let s = &config.llm;
    let transport: Arc<dyn Transport> = match &args.mock_transcript {
        Some(path) => {
            rec.input(path);
            Arc::new(MockTransport::from_transcript(path)?)
        }
        None => {
            let key = std::env::var(&s.api_key_env)
                .map_err(|_| Failure::Input(format!("environment variable {} is not set; it must hold the API key", s.api_key_env)))?;
            Arc::new(HttpTransport::new(&s.endpoint, Some(key), Duration::from_secs(s.timeout_secs)))
        }
    };
    let cache = match &config.paths.cache {
        Some(path) => ResponseCache::open(path).map_err(|e| Failure::Runtime(e.to_string()))?,
        None => ResponseCache::in_memory(),
    };
    let client_config = ClientConfig {
        model: s.model.clone(),
        temperature: s.temperature,
        max_tokens: s.max_tokens,
        max_attempts: s.max_attempts,
        backoff_base: Duration::from_millis(s.backoff_base_ms),
        concurrency: s.concurrency,
        rate_per_sec: s.rate_per_sec,
    };
    Ok(LlmClient::new(client_config, transport, cache))
}

fn run_rewrites(
    method: Method,
    tasks: &[RewriteTask],
    config: &PipelineConfig,
    llm: &LlmArgs,
    instructions: Option<(Instruction, Instruction)>,
    rec: &mut Recorder,
) -> CliResult<(Vec<RewriteRecord>, usize)> {
    if method == Method::EdFile && llm.initial.is_none() {
        return Err(Failure::Usage("ed-file needs --initial".into()));
    }
    let initials = match &llm.initial {
        Some(path) if method.is_editor() => {
            rec.input(path);
            Some(RewriteMap::from_records(&read_rewrites(path)?))
        }
        _ => None,
    };
    let client = if method.uses_llm() { Some(llm_client(config, llm, rec)?) } else { None };
    let mut rewriter = Rewriter::new(client.as_ref());
    rewriter.render.context_char_budget = config.llm.context_char_budget;
    rewriter.workers = config.llm.concurrency;
    if let Some((rw, ed)) = instructions {
        rewriter.rewriter_instruction = rw;
        rewriter.editor_instruction = ed;
    }
    let run = rewriter.generate_rewrites(method, tasks, initials.as_ref())?;
    if run.failed > 0 {
        tracing::warn!(failed = run.failed, "some rewrites fell back to the original question");
    }
    Ok((run.records, run.failed))
}

fn rewrite_summary(method: Method, records: &[RewriteRecord], failed: usize) -> serde_json::Value {
    json!({
        "method": method.as_str(),
        "records": records.len(),
        "failed": failed,
        "cached": records.iter().filter(|r| r.cached).count(),
        "timed_calls": timed_count(records),
    })
}

fn rewrite(a: RewriteArgs, config: &PipelineConfig) -> CliResult<Recorder> {
    let mut rec = Recorder::new("rewrite");
    rec.input(&a.tasks);
    let tasks = read_tasks(&a.tasks)?;
    let method = method_of(a.method);
    let (records, failed) = run_rewrites(method, &tasks, config, &a.llm, None, &mut rec)?;
    write_rewrites(&a.out, &records)?;
    rec.output(&a.out);
    rec.summary = rewrite_summary(method, &records, failed);
    Ok(rec)
}

fn property_of(p: PropertyArg) -> Property {
    match p {
        PropertyArg::Correctness => Property::Correctness,
        PropertyArg::Clarity => Property::Clarity,
        PropertyArg::Informativeness => Property::Informativeness,
        PropertyArg::Nonredundancy => Property::Nonredundancy,
    }
}

fn ablate(a: AblateArgs, config: &PipelineConfig) -> CliResult<Recorder> {
    let mut rec = Recorder::new("ablate");
    let drop = property_of(a.drop);
    let rewriter = ablate_instruction(&Instruction::rewriter(), drop);
    let editor = ablate_instruction(&Instruction::editor(), drop);
    let instructions = json!({"drop": drop.as_str(), "rewriter": rewriter, "editor": editor});
    write_json(&a.instruction_out, &instructions)?;
    rec.output(&a.instruction_out);
    let mut summary = json!({"drop": drop.as_str(), "rewriter_instruction": rewriter.text, "editor_instruction": editor.text});

    if let (Some(tasks_path), Some(out)) = (&a.tasks, &a.out) {
        let method = method_of(a.method);
        if !method.uses_llm() {
            return Err(Failure::Usage(format!("ablation needs an LLM method, not {method}")));
        }
        rec.input(tasks_path);
        let tasks = read_tasks(tasks_path)?;
        let (records, failed) = run_rewrites(method, &tasks, config, &a.llm, Some((rewriter, editor)), &mut rec)?;
        write_rewrites(out, &records)?;
        rec.output(out);
        summary["rewrites"] = rewrite_summary(method, &records, failed);
    }
    rec.summary = summary;
    Ok(rec)
}

fn index_sparse(a: IndexSparseArgs, config: &PipelineConfig) -> CliResult<Recorder> {
    let mut rec = Recorder::new("index-sparse");
    rec.input(&a.passages);
    let mut analyzer = Analyzer {
        stemmer: if a.no_stem { Stemmer::None } else { Stemmer::Porter },
        ..Default::default()
    };
    if let Some(path) = &a.stopwords {
        rec.input(path);
        analyzer = analyzer.with_stopword_file(path)?;
    }
    let fields = PassageFields { id: a.id_field, text: a.text_field };
    let params = Bm25Params { k1: config.retrieval.k1, b: config.retrieval.b };
    let index = try_build_index(load_passages(&a.passages, &fields)?, &analyzer, params)?;
    write_index(&a.out, &index)?;
    rec.output(&a.out);
    rec.summary = json!({
        "documents": index.doc_count(),
        "terms": index.term_count(),
        "avg_doc_len": index.avg_doc_len(),
        "k1": params.k1,
        "b": params.b,
    });
    Ok(rec)
}

fn provider(args: &ProviderArgs, dimension: usize, config: &PipelineConfig, rec: &mut Recorder) -> CliResult<Box<dyn EmbeddingProvider>> {
    Ok(match args.provider {
        ProviderArg::Hash => Box::new(HashEmbedder::new(dimension, config.seeds.embedding)),
        ProviderArg::Precomputed => {
            let path = args.vectors.as_ref().ok_or_else(|| Failure::Usage("--provider precomputed needs --vectors".into()))?;
            rec.input(path);
            Box::new(PrecomputedEmbedder::load(path, dimension)?)
        }
        ProviderArg::Http => {
            let endpoint = args.embed_endpoint.clone().ok_or_else(|| Failure::Usage("--provider http needs --embed-endpoint".into()))?;
            let model = args.embed_model.clone().ok_or_else(|| Failure::Usage("--provider http needs --embed-model".into()))?;
            Box::new(HttpEmbedder::new(endpoint, model, std::env::var(&config.llm.api_key_env).ok(), dimension))
        }
    })
}

fn embed_passages(a: EmbedArgs, config: &PipelineConfig) -> CliResult<Recorder> {
    let mut rec = Recorder::new("embed");
    rec.input(&a.passages);
    let dimension = config.retrieval.dimension;
    let provider = provider(&a.provider, dimension, config, &mut rec)?;
    let fields = PassageFields { id: a.id_field, text: a.text_field };
    let (mut ids, mut vectors) = (Vec::new(), Vec::new());
    let mut batch: Vec<String> = Vec::with_capacity(EMBED_BATCH);
    for passage in load_passages(&a.passages, &fields)? {
        let passage = passage?;
        ids.push(passage.id);
        batch.push(passage.text);
        if batch.len() == EMBED_BATCH {
            vectors.extend(embed(&batch, provider.as_ref())?);
            batch.clear();
        }
    }
    if !batch.is_empty() {
        vectors.extend(embed(&batch, provider.as_ref())?);
    }
    let n = ids.len();
    let shards = build_shards(ids, vectors, config.retrieval.shards)?;
    inforewrite::dense::write_shards(&a.out_dir, &shards)?;
    rec.output(&a.out_dir);
    rec.summary = json!({
        "passages": n,
        "shards": shards.len(),
        "dimension": dimension,
        "provider": provider.name(),
    });
    Ok(rec)
}

fn search(a: SearchArgs, config: &PipelineConfig) -> CliResult<Recorder> {
    let mut rec = Recorder::new("search");
    rec.input(&a.rewrites);
    rec.input(&a.index);
    let records = read_rewrites(&a.rewrites)?;
    let tag = a
        .tag
        .clone()
        .or_else(|| records.first().map(|r| r.method.as_str().to_string()))
        .unwrap_or_else(|| "run".into());
    let k = config.retrieval.k;
    let run = match a.retriever {
        RetrieverArg::Sparse => sparse_run(&tag, &read_index(&a.index)?, &records, k, a.workers)?,
        RetrieverArg::Dense => {
            let shards = read_shards(&a.index)?;
            let dimension = shards.first().map_or(config.retrieval.dimension, |s| s.dimension);
            let provider = provider(&a.provider, dimension, config, &mut rec)?;
            dense_run(&tag, &shards, provider.as_ref(), &records, k)?
        }
    };
    run.write(&a.out)?;
    rec.output(&a.out);
    rec.summary = json!({
        "retriever": format!("{:?}", a.retriever).to_lowercase(),
        "queries": run.len(),
        "k": k,
        "tag": tag,
    });
    Ok(rec)
}

fn evaluate(a: EvaluateArgs) -> CliResult<Recorder> {
    let mut rec = Recorder::new("evaluate");
    rec.input(&a.run);
    rec.input(&a.qrels);
    let run = RunFile::read(&a.run)?;
    let qrels = Qrels::read(&a.qrels)?;
    let subsets = match &a.tasks {
        Some(path) => {
            rec.input(path);
            Some(subset_map(&read_tasks(path)?))
        }
        None => None,
    };
    let opts = EvalOptions { missing_as_zero: !a.skip_missing, ..Default::default() };
    let report = evaluate_run(&run, &qrels, &opts, subsets.as_ref());
    write_json(&a.out, &report)?;
    rec.output(&a.out);

    let names: Vec<&str> = report.metrics.iter().map(String::as_str).collect();
    let row = MetricRow { group: String::new(), label: report.run_tag.clone(), report: &report };
    let table = format_metric_table(&[row], &names);
    print!("{table}");
    if let Some(path) = &a.table_out {
        write_text(path, &table)?;
        rec.output(path);
    }
    rec.summary = json!({
        "queries": report.query_counts,
        "all": report.aggregate.get(inforewrite::eval::ALL_SUBSET),
        "unjudged": report.unjudged.len(),
        "missing": report.missing.len(),
    });
    Ok(rec)
}

fn compare(a: CompareArgs) -> CliResult<Recorder> {
    let mut rec = Recorder::new("compare");
    for p in [&a.run_a, &a.run_b, &a.qrels] {
        rec.input(p);
    }
    let run_a = RunFile::read(&a.run_a)?;
    let run_b = RunFile::read(&a.run_b)?;
    let qrels = Qrels::read(&a.qrels)?;
    let wt = pairwise_win_tie(&run_a, &run_b, &qrels).map_err(|e| Failure::Input(e.to_string()))?;
    let out = json!({"run_a": run_a.tag, "run_b": run_b.tag, "result": wt});
    write_json(&a.out, &out)?;
    rec.output(&a.out);
    println!("{}", format_win_tie(&run_a.tag, &run_b.tag, &wt));
    rec.summary = out;
    Ok(rec)
}

#[derive(Serialize, Deserialize)]
struct AnalysisOutput {
    stats: Vec<RewriteStats>,
    latency: Vec<LatencyStats>,
}

fn analysis_tables(out: &AnalysisOutput) -> String {
    let mut text = format_stats_table(&out.stats);
    if !out.latency.is_empty() {
        text.push('\n');
        text.push_str(&format_latency_table(&out.latency));
    }
    text
}

fn analyze(a: AnalyzeArgs) -> CliResult<Recorder> {
    let mut rec = Recorder::new("analyze");
    rec.input(&a.tasks);
    let tasks = read_tasks(&a.tasks)?;
    let mut records = Vec::new();
    for path in &a.rewrites {
        rec.input(path);
        records.extend(read_rewrites(path)?);
    }
    let stats = rewrite_stats(&records, &RewriteMap::human(&tasks), &subset_map(&tasks))?;
    let latency = if timed_count(&records) > 0 { latency_stats(&records)? } else { Vec::new() };
    let out = AnalysisOutput { stats, latency };
    write_json(&a.out, &out)?;
    rec.output(&a.out);
    let tables = analysis_tables(&out);
    print!("{tables}");
    if let Some(path) = &a.table_out {
        write_text(path, &tables)?;
        rec.output(path);
    }
    let mut methods: Vec<&str> = out.stats.iter().map(|s| s.method.as_str()).collect();
    methods.dedup();
    rec.summary = json!({"records": records.len(), "methods": methods});
    Ok(rec)
}

fn export_distill(a: ExportDistillArgs, config: &PipelineConfig) -> CliResult<Recorder> {
    let mut rec = Recorder::new("export-distill");
    rec.input(&a.train_tasks);
    rec.input(&a.dev_tasks);
    let train = read_tasks(&a.train_tasks)?;
    let dev = read_tasks(&a.dev_tasks)?;
    let (source, method) = match a.label_source {
        LabelArg::RwFsl => (LabelSource::RwFsl, Some(Method::RwFsl)),
        LabelArg::EdSelf => (LabelSource::EdSelf, Some(Method::EdSelf)),
        LabelArg::Human => (LabelSource::Human, None),
    };
    let labels = match method {
        None => {
            let mut all = train.clone();
            all.extend(dev.iter().cloned());
            RewriteMap::human(&all)
        }
        Some(method) => {
            if a.labels.is_empty() {
                return Err(Failure::Usage(format!("--label-source {source} needs --labels")));
            }
            let mut records = Vec::new();
            for path in &a.labels {
                rec.input(path);
                records.extend(read_rewrites(path)?.into_iter().filter(|r| r.method == method && r.flag.is_none()));
            }
            if records.is_empty() {
                return Err(Failure::Input(format!("no usable {method} records in the label files")));
            }
            RewriteMap::from_records(&records)
        }
    };
    let n_train = a.n_train.unwrap_or(DISTILL_TRAIN_QUESTIONS);
    let n_dev = a.n_dev.unwrap_or(DISTILL_DEV_QUESTIONS);
    let (train_ex, dev_ex) = export_training_set(&train, &dev, &labels, source, n_train, n_dev, config.seeds.distill)?;
    write_examples(&a.train_out, &train_ex)?;
    write_examples(&a.dev_out, &dev_ex)?;
    rec.output(&a.train_out);
    rec.output(&a.dev_out);
    rec.summary = json!({"label_source": source.as_str(), "train": train_ex.len(), "dev": dev_ex.len(), "seed": config.seeds.distill});
    Ok(rec)
}

struct EvalSpec {
    group: String,
    label: String,
    path: PathBuf,
}

fn parse_eval_spec(s: &str) -> CliResult<EvalSpec> {
    let bad = || Failure::Usage(format!("--eval expects GROUP:LABEL=PATH, got {s:?}"));
    let (head, path) = s.split_once('=').ok_or_else(bad)?;
    let (group, label) = head.split_once(':').ok_or_else(bad)?;
    if label.is_empty() || path.is_empty() {
        return Err(bad());
    }
    Ok(EvalSpec { group: group.to_string(), label: label.to_string(), path: PathBuf::from(path) })
}

fn report(a: ReportArgs) -> CliResult<Recorder> {
    let mut rec = Recorder::new("report");
    if a.evals.is_empty() && a.stats.is_none() {
        return Err(Failure::Usage("report needs --eval or --stats".into()));
    }
    let specs = a.evals.iter().map(|s| parse_eval_spec(s)).collect::<CliResult<Vec<_>>>()?;
    let mut reports: Vec<MetricReport> = Vec::new();
    for spec in &specs {
        rec.input(&spec.path);
        reports.push(read_json(&spec.path)?);
    }
    let rows: Vec<MetricRow> = specs
        .iter()
        .zip(&reports)
        .map(|(s, r)| MetricRow { group: s.group.clone(), label: s.label.clone(), report: r })
        .collect();

    let mut text = String::new();
    let mut summary = json!({});
    if !rows.is_empty() {
        text.push_str(&format_metric_table(&rows, &["MRR", "MAP", "R@10"]));
        text.push('\n');
        text.push_str(&format_metric_table(&rows, &["NDCG@3", "R@5", "R@100"]));
        text.push('\n');
        let curves: Vec<_> = rows
            .iter()
            .map(|r| {
                let curve = recall_curve(r.report, inforewrite::eval::ALL_SUBSET);
                let cells: Vec<String> = curve.iter().map(|(k, v)| format!("R@{k} {:.2}", v * 100.0)).collect();
                text.push_str(&format!("{} {}: {}\n", r.group, r.label, cells.join("  ")));
                json!({"group": r.group, "label": r.label, "recall_curve": curve, "aggregate": r.report.aggregate})
            })
            .collect();
        summary["runs"] = json!(curves);
    }
    if let Some(path) = &a.stats {
        rec.input(path);
        let stats: AnalysisOutput = read_json(path)?;
        if !text.is_empty() {
            text.push('\n');
        }
        text.push_str(&analysis_tables(&stats));
        summary["stats"] = json!(stats.stats);
        summary["latency"] = json!(stats.latency);
    }
    write_text(&a.out, &text)?;
    rec.output(&a.out);
    if let Some(path) = &a.json_out {
        write_json(path, &summary)?;
        rec.output(path);
    }
    print!("{text}");
    rec.summary = json!({"rows": rows.len(), "stats": a.stats.is_some()});
    Ok(rec)
}
