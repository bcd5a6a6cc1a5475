use std::collections::HashSet;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;
use std::time::Duration;

use anyhow::{anyhow, Context};
use kgsq_core::graph::{read_named_triples, resolve_triples, Ingested};
use kgsq_core::store::{load_model_file, save_model_file};
use kgsq_core::{
    augment, evaluate_link_prediction, ingest_entity_types, ingest_triples, split_holdout, GraphError,
    KnowledgeGraph, Model32, Model64, Triple,
};
use kgsq_service::{run_query, ApiError, QueryKind, QueryRequest, ServeConfig};

use crate::config::{self, TrainSettings};
use crate::{EvalArgs, Format, IngestArgs, QueryArgs, ServeArgs, Task, TrainArgs};

pub const EXIT_STAGE: u8 = 1;
pub const EXIT_INPUT: u8 = 2;

#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub error: anyhow::Error,
}

pub type Outcome = Result<(), Failure>;

fn stage(error: impl Into<anyhow::Error>) -> Failure {
    Failure { code: EXIT_STAGE, error: error.into() }
}

fn input(error: impl Into<anyhow::Error>) -> Failure {
    Failure { code: EXIT_INPUT, error: error.into() }
}

fn graph_failure(e: GraphError, path: &Path) -> Failure {
    let code = match e {
        GraphError::UnknownEntity { .. } | GraphError::UnknownRelation { .. } => EXIT_INPUT,
        _ => EXIT_STAGE,
    };
    Failure { code, error: anyhow::Error::new(e).context(path.display().to_string()) }
}

fn open(path: &Path) -> Result<BufReader<File>, Failure> {
    File::open(path)
        .map(BufReader::new)
        .with_context(|| format!("cannot open {}", path.display()))
        .map_err(stage)
}

fn create(path: &Path) -> Result<BufWriter<File>, Failure> {
    File::create(path)
        .map(BufWriter::new)
        .with_context(|| format!("cannot create {}", path.display()))
        .map_err(stage)
}

fn load_graph(triples: &Path, types: Option<&Path>) -> Result<Ingested, Failure> {
    let mut ingested = ingest_triples(open(triples)?).map_err(|e| graph_failure(e, triples))?;
    if let Some(path) = types {
        ingested.graph = ingest_entity_types(open(path)?, ingested.graph).map_err(|e| graph_failure(e, path))?;
    }
    Ok(ingested)
}

fn load_model(path: &Path) -> Result<Model32, Failure> {
    load_model_file(path)
        .with_context(|| format!("cannot load model {}", path.display()))
        .map_err(stage)
}

fn write_graph(graph: &KnowledgeGraph, path: &Path) -> Outcome {
    let mut out = create(path)?;
    graph
        .write_triples(&mut out)
        .and_then(|_| out.flush())
        .with_context(|| format!("writing {}", path.display()))
        .map_err(stage)
}

pub fn ingest(args: &IngestArgs) -> Outcome {
    let Ingested { graph, duplicates } = load_graph(&args.triples, args.types.as_deref())?;
    let v = graph.vocabulary();
    println!(
        "entities={} relations={} triples={} duplicates={} typed={}",
        v.num_entities(),
        v.num_relations(),
        graph.triples().len(),
        duplicates,
        v.entity_types().len()
    );
    let (Some(fraction), Some(train_out), Some(test_out)) = (args.holdout, &args.train_out, &args.test_out) else {
        return Ok(());
    };
    let (train, test) = split_holdout(&graph, fraction, args.seed).map_err(|e| graph_failure(e, &args.triples))?;
    let test_graph = KnowledgeGraph::from_triples(graph.vocabulary().clone(), test).map_err(stage)?;
    write_graph(&train, train_out)?;
    write_graph(&test_graph, test_out)?;
    println!("train={} test={}", train.triples().len(), test_graph.triples().len());
    Ok(())
}

fn flag_pairs(a: &TrainArgs) -> Vec<(String, String)> {
    let v: Vec<(&str, Option<String>)> = vec![
        ("triples", a.triples.as_ref().map(|p| p.display().to_string())),
        ("types", a.types.as_ref().map(|p| p.display().to_string())),
        ("out", a.out.as_ref().map(|p| p.display().to_string())),
        ("dim", a.dim.map(|x| x.to_string())),
        ("epochs", a.epochs.map(|x| x.to_string())),
        ("lr", a.lr.map(|x| x.to_string())),
        ("n_neg", a.n_neg.map(|x| x.to_string())),
        ("l2", a.l2.map(|x| x.to_string())),
        ("seed", a.seed.map(|x| x.to_string())),
        ("optimizer", a.optimizer.clone()),
        ("init_scale", a.init_scale.map(|x| x.to_string())),
        ("batch_size", a.batch_size.map(|x| x.to_string())),
    ];
    v.into_iter().filter_map(|(k, x)| x.map(|x| (k.to_owned(), x))).collect()
}

pub fn train(args: &TrainArgs) -> Outcome {
    let file = match &args.config {
        Some(p) => config::read_file(p).map_err(stage)?,
        None => Vec::new(),
    };
    let settings: TrainSettings = config::resolve(&file, &flag_pairs(args)).map_err(stage)?;
    eprint!("# effective config\n{}", settings.render());
    let triples = settings.triples.as_deref().ok_or_else(|| stage(anyhow!("no triples file given")))?;
    let out = settings.out.as_deref().ok_or_else(|| stage(anyhow!("no output model path given")))?;
    settings.model.validate().map_err(stage)?;

    let Ingested { graph, duplicates } = load_graph(triples, settings.types.as_deref())?;
    if duplicates > 0 {
        eprintln!("skipped {duplicates} duplicate triples");
    }
    let graph = augment(graph).map_err(stage)?;
    let stdout = std::io::stdout();
    let model: Model64 = kgsq_core::train(&graph, &settings.model, |epoch, loss: f64| {
        let _ = writeln!(stdout.lock(), "epoch={epoch} loss={loss:?}");
    })
    .map_err(stage)?;
    let bytes = save_model_file(&model, out)
        .with_context(|| format!("cannot save model {}", out.display()))
        .map_err(stage)?;
    eprintln!("wrote {} ({bytes} bytes)", out.display());
    Ok(())
}

fn read_resolved(path: &Path, model: &Model32) -> Result<Vec<Triple>, Failure> {
    let named = read_named_triples(open(path)?).map_err(|e| graph_failure(e, path))?;
    resolve_triples(&model.vocabulary, &named).map_err(|e| graph_failure(e, path))
}

pub fn eval(args: &EvalArgs) -> Outcome {
    let model = load_model(&args.model)?;
    let test = read_resolved(&args.test, &model)?;
    if test.is_empty() {
        return Err(stage(anyhow!("{}: no test triples", args.test.display())));
    }
    let train = read_resolved(&args.train, &model)?;
    let known: HashSet<Triple> = train.iter().chain(&test).copied().collect();
    let m = evaluate_link_prediction(&model, &test, &known).map_err(stage)?;
    println!(
        "mrr={:?} hits@1={:?} hits@3={:?} hits@10={:?}",
        m.mrr, m.hits_at[&1], m.hits_at[&3], m.hits_at[&10]
    );
    Ok(())
}

pub fn query(args: &QueryArgs) -> Outcome {
    let model = load_model(&args.model)?;
    let kind = match args.task {
        Task::Similar => QueryKind::Similar,
        Task::Biased => QueryKind::Biased,
        Task::Analogy => QueryKind::Analogy,
    };
    let req = QueryRequest {
        entity: args.entity.clone(),
        positives: args.positives.clone(),
        negatives: args.negatives.clone(),
        k: args.k as usize,
        type_filter: args.type_filter.clone(),
        exclude_self: Some(!args.include_self),
        cosine: args.cosine,
    };
    let resp = run_query(&model, kind, &req).map_err(|e| match e {
        ApiError::UnknownEntity(name) => input(anyhow!("unknown entity {name:?}")),
        ApiError::BadRequest(msg) => input(anyhow!(msg)),
        other => stage(anyhow!(other.body().to_string())),
    })?;
    match args.format {
        Format::Json => println!("{}", serde_json::to_string(&resp).map_err(stage)?),
        Format::Table => {
            let name_w = resp.results.iter().map(|r| r.entity.len()).max().unwrap_or(0).max(6);
            let type_w = resp
                .results
                .iter()
                .map(|r| r.entity_type.as_deref().map_or(1, str::len))
                .max()
                .unwrap_or(0)
                .max(4);
            println!("{:>4}  {:<name_w$}  {:<type_w$}  score", "rank", "entity", "type");
            for (i, r) in resp.results.iter().enumerate() {
                let ty = r.entity_type.as_deref().unwrap_or("-");
                println!("{:>4}  {:<name_w$}  {:<type_w$}  {}", i + 1, r.entity, ty, r.score);
            }
        }
    }
    Ok(())
}

pub fn serve(args: &ServeArgs) -> Outcome {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env()
                .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new("info")),
        )
        .with_writer(std::io::stderr)
        .init();
    let model = load_model(&args.model)?;
    let config = ServeConfig {
        session_ttl: Duration::from_secs(args.session_ttl),
        max_sessions: args.max_sessions,
    };
    let rt = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .context("starting runtime")
        .map_err(stage)?;
    rt.block_on(async {
        let listener = tokio::net::TcpListener::bind(&args.bind)
            .await
            .with_context(|| format!("cannot bind {}", args.bind))
            .map_err(stage)?;
        let addr = listener.local_addr().map_err(stage)?;
        eprintln!(
            "serving {} entities (dim {}) on http://{addr}",
            model.num_entities(),
            model.dim()
        );
        kgsq_service::serve(listener, model, config, kgsq_service::shutdown_signal())
            .await
            .context("server error")
            .map_err(stage)
    })
}
