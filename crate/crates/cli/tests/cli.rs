#[path = "../../core/tests/common/mod.rs"]
mod common;

use std::collections::HashSet;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};

use kgsq_core::graph::Vocabulary;
use kgsq_core::semquery::{analogy_query, similar_entities, QuerySpec};
use kgsq_core::store::{load_model_file, save_model, save_model_file};
use kgsq_core::{augment, ingest_triples, init_model, Matrix, Model32, Model64, ModelConfig, Triple};
use kgsq_service::api::QueryResponse;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn kgsq(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_kgsq")).args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8(o.stderr.clone()).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

const TRIPLES: &str = "\
alice\twrote\tp1
bob\twrote\tp1
bob\twrote\tp2
carol\twrote\tp3
alice\tcites\tp2
p1\tcites\tp2
p2\tcites\tp3
p1\tat\tkdd
p2\tat\tkdd
p3\tat\tvldb
carol\tmember\tvldb
alice\tmember\tkdd
";

const TYPES: &str = "alice\tauthor\nbob\tauthor\ncarol\tauthor\np1\tpaper\np2\tpaper\np3\tpaper\nkdd\tvenue\nvldb\tvenue\n";

struct Fixture {
    dir: tempfile::TempDir,
}

impl Fixture {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("triples.tsv"), TRIPLES).unwrap();
        std::fs::write(dir.path().join("types.tsv"), TYPES).unwrap();
        Self { dir }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn train(&self, out: &str, extra: &[&str]) -> Output {
        let (t, ty, o) = (self.path("triples.tsv"), self.path("types.tsv"), self.path(out));
        let mut args = vec!["train", "--triples", p(&t), "--types", p(&ty), "--out", p(&o)];
        args.extend_from_slice(extra);
        kgsq(&args)
    }
}

fn losses(out: &str) -> Vec<f64> {
    out.lines()
        .map(|l| {
            let (e, loss) = l.split_once(' ').unwrap();
            assert!(e.starts_with("epoch="), "{l}");
            loss.strip_prefix("loss=").unwrap().parse().unwrap()
        })
        .collect()
}

#[test]
fn train_writes_model_and_reports_losses() {
    let fx = Fixture::new();
    let o = fx.train("m.kgsq", &["--dim", "16", "--epochs", "50", "--seed", "1", "--lr", "0.5"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let l = losses(&stdout(&o));
    assert_eq!(l.len(), 50);
    assert!(l[49] < l[0], "{l:?}");
    let err = stderr(&o);
    assert!(err.contains("# effective config"));
    assert!(err.contains("dim=16") && err.contains("seed=1") && err.contains("optimizer=sgd"));
    let model = load_model_file(&fx.path("m.kgsq")).unwrap();
    assert_eq!(model.dim(), 16);
    assert_eq!(model.num_entities(), 8);
    assert_eq!(model.vocabulary.entity_type(model.vocabulary.entity_id("kdd").unwrap()), Some("venue"));
}

#[test]
fn train_is_byte_deterministic() {
    let fx = Fixture::new();
    for out in ["a.kgsq", "b.kgsq"] {
        assert!(fx.train(out, &["--dim", "8", "--epochs", "5", "--seed", "7"]).status.success());
    }
    assert_eq!(std::fs::read(fx.path("a.kgsq")).unwrap(), std::fs::read(fx.path("b.kgsq")).unwrap());
    assert!(fx.train("c.kgsq", &["--dim", "8", "--epochs", "5", "--seed", "8"]).status.success());
    assert_ne!(std::fs::read(fx.path("a.kgsq")).unwrap(), std::fs::read(fx.path("c.kgsq")).unwrap());
}

#[test]
fn zero_epochs_saves_the_initialization() {
    let fx = Fixture::new();
    let o = fx.train("m.kgsq", &["--dim", "4", "--epochs", "0", "--seed", "3"]);
    assert!(o.status.success());
    assert_eq!(stdout(&o), "");
    let mut graph = ingest_triples(TRIPLES.as_bytes()).unwrap().graph;
    graph = kgsq_core::ingest_entity_types(TYPES.as_bytes(), graph).unwrap();
    let graph = augment(graph).unwrap();
    let cfg = ModelConfig { dim: 4, epochs: 0, seed: 3, ..ModelConfig::default() };
    let init: Model64 = init_model(&graph, &cfg).unwrap();
    let mut want = Vec::new();
    save_model(&init, &mut want).unwrap();
    assert_eq!(std::fs::read(fx.path("m.kgsq")).unwrap(), want);
}

#[test]
fn config_file_is_overridden_by_flags() {
    let fx = Fixture::new();
    let cfg = fx.path("run.conf");
    let text = format!(
        "# fixture run\ntriples={}\nout={}\ndim=6\nepochs=3\noptimizer=adagrad\n",
        p(&fx.path("triples.tsv")),
        p(&fx.path("m.kgsq"))
    );
    std::fs::write(&cfg, text).unwrap();
    let o = kgsq(&["train", "--config", p(&cfg), "--epochs", "2"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(losses(&stdout(&o)).len(), 2);
    let err = stderr(&o);
    assert!(err.contains("dim=6") && err.contains("epochs=2") && err.contains("optimizer=adagrad"));
    assert_eq!(load_model_file(&fx.path("m.kgsq")).unwrap().dim(), 6);

    std::fs::write(&cfg, "colour=blue\n").unwrap();
    assert_eq!(kgsq(&["train", "--config", p(&cfg)]).status.code(), Some(1));
}

#[test]
fn train_failures_exit_one() {
    let fx = Fixture::new();
    let missing = fx.path("nope.tsv");
    let o = kgsq(&["train", "--triples", p(&missing), "--out", p(&fx.path("m.kgsq"))]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains(p(&missing)));

    assert_eq!(fx.train("m.kgsq", &["--dim", "0"]).status.code(), Some(1));
    assert_eq!(fx.train("m.kgsq", &["--optimizer", "adam"]).status.code(), Some(1));
    let o = kgsq(&["train", "--triples", p(&fx.path("triples.tsv"))]);
    assert_eq!(o.status.code(), Some(1));

    std::fs::write(fx.path("bad.tsv"), "a\tb\n").unwrap();
    let o = kgsq(&["train", "--triples", p(&fx.path("bad.tsv")), "--out", p(&fx.path("m.kgsq"))]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("line 1"));

    std::fs::write(fx.path("types2.tsv"), "zed\tauthor\n").unwrap();
    let o = kgsq(&["train", "--triples", p(&fx.path("triples.tsv")), "--types", p(&fx.path("types2.tsv")), "--out", p(&fx.path("m.kgsq"))]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("zed"));
}

fn trained(fx: &Fixture) -> PathBuf {
    assert!(fx.train("m.kgsq", &["--dim", "8", "--epochs", "20", "--seed", "2"]).status.success());
    fx.path("m.kgsq")
}

fn query_json(model: &Path, extra: &[&str]) -> QueryResponse {
    let mut args = vec!["query", "--model", p(model), "--format", "json"];
    args.extend_from_slice(extra);
    let o = kgsq(&args);
    assert!(o.status.success(), "{}", stderr(&o));
    serde_json::from_str(stdout(&o).trim()).unwrap()
}

#[test]
fn query_table_has_k_sorted_rows() {
    let fx = Fixture::new();
    let m = trained(&fx);
    let o = kgsq(&["query", "--model", p(&m), "--task", "similar", "--entity", "alice", "-k", "5"]);
    assert!(o.status.success());
    let out = stdout(&o);
    let rows: Vec<&str> = out.lines().skip(1).collect();
    assert_eq!(rows.len(), 5);
    let scores: Vec<f32> = rows.iter().map(|r| r.split_whitespace().last().unwrap().parse().unwrap()).collect();
    assert!(scores.windows(2).all(|w| w[0] >= w[1]), "{scores:?}");
    assert!(out.lines().next().unwrap().contains("entity"));
}

#[test]
fn query_json_matches_library() {
    let fx = Fixture::new();
    let path = trained(&fx);
    let model = load_model_file(&path).unwrap();
    let id = |n: &str| model.vocabulary.entity_id(n).unwrap();

    let got = query_json(&path, &["--task", "analogy", "--entity", "alice", "-p", "p1,p2", "-n", "kdd", "-k", "4"]);
    let spec = QuerySpec::new(id("alice"), 4).positives([id("p1"), id("p2")]).negatives([id("kdd")]);
    let want = QueryResponse::from_ranked(&analogy_query(&spec, &model).unwrap(), &model.vocabulary);
    assert_eq!(got, want);

    // byte-for-byte equal to the service's serialization
    let o = kgsq(&["query", "--model", p(&path), "--format", "json", "--task", "analogy", "--entity", "alice", "-p", "p1", "-p", "p2", "-n", "kdd", "-k", "4"]);
    assert_eq!(stdout(&o).trim(), serde_json::to_string(&want).unwrap());

    let got = query_json(&path, &["--task", "similar", "--entity", "p1", "-k", "3", "--type", "paper"]);
    let spec = QuerySpec::new(id("p1"), 3).type_filter(Some("paper"));
    assert_eq!(got, QueryResponse::from_ranked(&similar_entities(&spec, &model).unwrap(), &model.vocabulary));
    assert!(got.results.iter().all(|r| r.entity_type.as_deref() == Some("paper")));
}

#[test]
fn analogy_with_equal_biases_is_similar() {
    let fx = Fixture::new();
    let path = trained(&fx);
    let sim = query_json(&path, &["--task", "similar", "--entity", "bob", "-k", "8", "--include-self"]);
    let ana = query_json(&path, &["--task", "analogy", "--entity", "bob", "-p", "p3", "-n", "p3", "-k", "8", "--include-self"]);
    let names = |r: &QueryResponse| r.results.iter().map(|x| x.entity.clone()).collect::<Vec<_>>();
    assert_eq!(names(&sim), names(&ana));
}

#[test]
fn query_input_errors_exit_two() {
    let fx = Fixture::new();
    let path = trained(&fx);
    let o = kgsq(&["query", "--model", p(&path), "--task", "similar", "--entity", "mallory"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("mallory"));
    let o = kgsq(&["query", "--model", p(&path), "--task", "analogy", "--entity", "bob", "-p", "eve"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("eve"));
    let o = kgsq(&["query", "--model", p(&path), "--task", "similar", "--entity", "bob", "-p", "p1"]);
    assert_eq!(o.status.code(), Some(2));
    let o = kgsq(&["query", "--model", p(&path), "--task", "similar", "--entity", "bob", "-k", "0"]);
    assert_eq!(o.status.code(), Some(2));
    let o = kgsq(&["query", "--model", p(&fx.path("none.kgsq")), "--task", "similar", "--entity", "bob"]);
    assert_eq!(o.status.code(), Some(1));
    std::fs::write(fx.path("junk.kgsq"), b"KGSQ\x01").unwrap();
    let o = kgsq(&["query", "--model", p(&fx.path("junk.kgsq")), "--task", "similar", "--entity", "bob"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("junk.kgsq"));
}

/// Entity i's head vector is e_i and its tail vector e_{i-1}, so the only
/// positive score is on the chain i -> i+1.
fn chain_model(n: usize) -> Model32 {
    let names = (0..n).map(|i| format!("c{i}")).collect();
    let vocab = Vocabulary::from_names(names, vec!["next".into()]).unwrap();
    let mut head = Matrix::zeros(n, n);
    let mut tail = Matrix::zeros(n, n);
    for i in 0..n {
        head.row_mut(i)[i] = 1.0;
        if i > 0 {
            tail.row_mut(i)[i - 1] = 1.0;
        }
    }
    let mut rel = Matrix::zeros(2, n);
    rel.row_mut(0).fill(1.0);
    Model32::from_parts(vocab, ModelConfig { dim: n, ..ModelConfig::default() }, head, tail, rel).unwrap()
}

fn eval(fx: &Fixture, model: &Path, test: &str, train: &str) -> Output {
    std::fs::write(fx.path("test.tsv"), test).unwrap();
    std::fs::write(fx.path("train.tsv"), train).unwrap();
    kgsq(&["eval", "--model", p(model), "--test", p(&fx.path("test.tsv")), "--train", p(&fx.path("train.tsv"))])
}

#[test]
fn eval_on_perfect_model() {
    let fx = Fixture::new();
    let path = fx.path("chain.kgsq");
    save_model_file(&chain_model(5), &path).unwrap();
    let o = eval(&fx, &path, "c0\tnext\tc1\nc2\tnext\tc3\n", "c1\tnext\tc2\n");
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(stdout(&o).trim(), "mrr=1.0 hits@1=1.0 hits@3=1.0 hits@10=1.0");
}

#[test]
fn eval_errors() {
    let fx = Fixture::new();
    let path = fx.path("chain.kgsq");
    save_model_file(&chain_model(5), &path).unwrap();
    assert_eq!(eval(&fx, &path, "", "c1\tnext\tc2\n").status.code(), Some(1));
    assert_eq!(eval(&fx, &path, "# nothing\n\n", "c1\tnext\tc2\n").status.code(), Some(1));
    let o = eval(&fx, &path, "c0\tnext\tzz\n", "");
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("zz"));
    assert_eq!(eval(&fx, &path, "c0\tprev\tc1\n", "").status.code(), Some(2));
    assert_eq!(eval(&fx, &path, "c0\tnext\n", "").status.code(), Some(1));
}

#[test]
fn eval_matches_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    for round in 0..3 {
        let fx = Fixture::new();
        let mut model = common::random_model(&mut rng, 20, 3, 6, false);
        // small integers keep f32 and f64 scores identical, ties included
        for m in [&mut model.head_vectors, &mut model.tail_vectors, &mut model.relation_vectors] {
            for v in m.as_mut_slice() {
                *v = (*v * 1.5).round();
            }
        }
        let path = fx.path("r.kgsq");
        save_model_file(&model, &path).unwrap();
        let known: HashSet<Triple> = (0..60)
            .map(|_| Triple::new(rng.random_range(0..20), rng.random_range(0..20), rng.random_range(0..3)))
            .collect();
        let all: Vec<Triple> = known.iter().copied().collect();
        let (test, train) = all.split_at(15);
        let render = |ts: &[Triple]| -> String {
            ts.iter().map(|t| format!("e{}\tr{}\te{}\n", t.head.0, t.relation.0, t.tail.0)).collect()
        };
        let o = eval(&fx, &path, &render(test), &render(train));
        assert!(o.status.success(), "{}", stderr(&o));
        let (mrr, hits) = common::metrics_oracle(&model, test, &known);
        let want = format!("mrr={mrr:?} hits@1={:?} hits@3={:?} hits@10={:?}", hits[0], hits[1], hits[2]);
        assert_eq!(stdout(&o).trim(), want, "round {round}");
    }
}

#[test]
fn ingest_reports_and_splits() {
    let fx = Fixture::new();
    let o = kgsq(&["ingest", "--triples", p(&fx.path("triples.tsv")), "--types", p(&fx.path("types.tsv"))]);
    assert!(o.status.success());
    assert_eq!(stdout(&o).trim(), "entities=8 relations=4 triples=12 duplicates=0 typed=8");

    let (src, tr, te) = (fx.path("triples.tsv"), fx.path("train.tsv"), fx.path("test.tsv"));
    let args = ["ingest", "--triples", p(&src), "--holdout", "0.2", "--seed", "4", "--train-out", p(&tr), "--test-out", p(&te)];
    let o = kgsq(&args);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("train=10 test=2"));
    let lines = |path: &Path| -> HashSet<String> {
        std::fs::read_to_string(path).unwrap().lines().map(str::to_owned).collect()
    };
    let (a, b) = (lines(&tr), lines(&te));
    assert!(a.is_disjoint(&b));
    let original: HashSet<String> = TRIPLES.lines().map(str::to_owned).collect();
    assert_eq!(&a | &b, original);
    assert_eq!(kgsq(&args).stdout, o.stdout);
    assert_eq!(lines(&tr), a);

    let o = kgsq(&["ingest", "--triples", p(&src), "--holdout", "0.9", "--train-out", p(&tr), "--test-out", p(&te)]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn serve_answers_and_stops_on_sigterm() {
    let fx = Fixture::new();
    let path = trained(&fx);
    let mut child = Command::new(env!("CARGO_BIN_EXE_kgsq"))
        .args(["serve", "--model", p(&path), "--bind", "127.0.0.1:0"])
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    let mut err = BufReader::new(child.stderr.take().unwrap());
    let mut line = String::new();
    while !line.contains("http://") {
        line.clear();
        assert!(err.read_line(&mut line).unwrap() > 0, "server exited early");
    }
    let addr = line.trim().rsplit("http://").next().unwrap().to_owned();
    let mut stream = std::net::TcpStream::connect(&addr).unwrap();
    stream.write_all(b"GET /health HTTP/1.1\r\nHost: x\r\nConnection: close\r\n\r\n").unwrap();
    let mut resp = String::new();
    stream.read_to_string(&mut resp).unwrap();
    assert!(resp.starts_with("HTTP/1.1 200"), "{resp}");
    assert!(resp.contains(r#""entities":8"#));

    let pid = child.id().to_string();
    assert!(Command::new("kill").args(["-TERM", &pid]).status().unwrap().success());
    assert!(child.wait().unwrap().success());
}

#[test]
fn serve_startup_failures_exit_one() {
    let fx = Fixture::new();
    assert_eq!(kgsq(&["serve", "--model", p(&fx.path("none.kgsq"))]).status.code(), Some(1));
    let path = trained(&fx);
    let taken = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = taken.local_addr().unwrap().to_string();
    let o = kgsq(&["serve", "--model", p(&path), "--bind", &addr]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains(&addr));
}

#[test]
fn usage_errors_exit_two() {
    assert_eq!(kgsq(&[]).status.code(), Some(2));
    assert_eq!(kgsq(&["query", "--task", "nope"]).status.code(), Some(2));
}
