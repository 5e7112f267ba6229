//! Acceptance suite: one PASS/FAIL/SKIP line per criterion.

mod common;

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::{Duration, Instant};

use common::*;
use kgfuse::embeddings::{ConstantProvider, EmbeddingProvider, ToyAdditiveEmbedder};
use kgfuse::gkstore::{
    anchor_projection, gk_loss, initial_embeddings, train_gk, GkObjective, GkTrainConfig, InitialKey,
};
use kgfuse::numerics::{glorot_uniform, grad_check, seeded_rng, Activation, DenseLayer, Ffnn, Matrix, Vector};
use kgfuse::relweights::{
    build_masked_sentences, correct_triples, normalize_weights, score_pairs, triple_weight, Entity,
    NormalizedWeights, PairMode, RelationType, SentenceQuad, Vocabulary, WeightedTriple,
};
use kgfuse::synthetic::{generate, SyntheticSpec};
use kgfuse::taskfusion::{build_sk_graph, FusionGraph, Gcn, GcnLayer, GraphConfig, NormalizedAdjacency};
use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;

type Check = fn(&Path) -> Outcome;

enum Outcome {
    Pass(String),
    Fail(String),
    Skip(String),
}

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Outcome::Fail(format!($($msg)+));
        }
    };
}

fn random_vector(rng: &mut impl Rng, dim: usize, scale: f64) -> Vector {
    Vector::new((0..dim).map(|_| rng.random_range(-scale..scale)).collect()).unwrap()
}

fn parallelogram_and_weight(_: &Path) -> Outcome {
    let mut rng = seeded_rng(2024);
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for i in 0..1000 {
        let dim = rng.random_range(1..=64);
        let [a, b, c, d] = [0; 4].map(|_| random_vector(&mut rng, dim, 10.0));
        let quad = SentenceQuad::new(a.clone(), b.clone(), c.clone(), d).unwrap();
        for k in 0..dim {
            let expected = b.as_slice()[k] + c.as_slice()[k] - a.as_slice()[k];
            ensure!(
                quad.v_e.as_slice()[k].to_bits() == expected.to_bits(),
                "quad {i}: v_e[{k}] = {} but v_b + v_c - v_a = {expected}",
                quad.v_e.as_slice()[k]
            );
        }
        let w = quad.weight().unwrap();
        ensure!((-1.0..=1.0).contains(&w), "quad {i}: weight {w} outside [-1, 1]");
        lo = lo.min(w);
        hi = hi.max(w);
    }
    let (s, r, o) = (Entity::new("s", "flu"), RelationType::new("r", "has symptoms"), Entity::new("o", "fever"));
    for i in 0..100 {
        let dim = rng.random_range(1..=64);
        let provider = ConstantProvider::new(random_vector(&mut rng, dim, 5.0));
        let w = triple_weight(&provider, &s, &r, &o).unwrap().triple.weight;
        ensure!((w - 1.0).abs() <= 1e-9, "constant provider {i}: weight {w}");
    }
    Outcome::Pass(format!("1000 quads exact, weights in [{lo:.3}, {hi:.3}]; constant provider = 1"))
}

fn word(rng: &mut impl Rng) -> String {
    const SYL: [&str; 12] = ["ka", "ro", "mi", "tu", "sel", "an", "vo", "pri", "de", "lo", "ny", "zu"];
    (0..rng.random_range(1..=3)).map(|_| *SYL.choose(rng).unwrap()).collect()
}

fn phrase(rng: &mut impl Rng, max_words: usize) -> String {
    (0..rng.random_range(1..=max_words)).map(|_| word(rng)).collect::<Vec<_>>().join(" ")
}

fn toy_mask_law(_: &Path) -> Outcome {
    let toy = ToyAdditiveEmbedder::new(48, 7).unwrap();
    let mut rng = seeded_rng(99);
    for i in 0..100 {
        let (s, r, o) = (phrase(&mut rng, 2), phrase(&mut rng, 3), phrase(&mut rng, 2));
        let masked = toy.embed(&format!("{s} [MASK] {o}")).unwrap();
        let plain = toy.embed(&format!("{s} {o}")).unwrap();
        ensure!(masked == plain, "triple {i}: masking {s:?}/{o:?} changed the embedding");

        let sentences = build_masked_sentences(&s, &r, &o).unwrap();
        let quad = SentenceQuad::embed(&toy, &sentences).unwrap();
        let mut relation = vec![0.0; 48];
        for token in r.split_whitespace() {
            for (acc, x) in relation.iter_mut().zip(toy.token_vector(token).as_slice()) {
                *acc += x;
            }
        }
        for (k, (got, rel)) in quad.v_e.as_slice().iter().zip(&relation).enumerate() {
            ensure!((got - 2.0 * rel).abs() <= 1e-12, "triple {i}, component {k}: {got} vs 2 * {rel}");
        }
    }
    Outcome::Pass("mask is neutral; v_b + v_c - v_a = 2 v(r) on 100 triples".into())
}

fn normalization(_: &Path) -> Outcome {
    let mut rng = seeded_rng(5);
    let triples: Vec<WeightedTriple> = (0..500)
        .map(|_| WeightedTriple {
            subject: format!("s{}", rng.random_range(0..10)),
            relation: format!("r{}", rng.random_range(0..3)),
            object: format!("o{}", rng.random_range(0..8)),
            weight: rng.random_range(-1.0..1.0),
        })
        .collect();
    let outcome = normalize_weights(&triples);
    for g in &outcome.groups {
        ensure!((g.total() - 1.0).abs() <= 1e-9, "group {}/{} sums to {}", g.subject, g.relation, g.total());
        ensure!(g.entries.iter().all(|(_, w)| *w >= 0.0), "group {}/{} has a negative weight", g.subject, g.relation);
    }
    let example = normalize_weights(&[
        WeightedTriple { subject: "s".into(), relation: "r".into(), object: "o1".into(), weight: -0.3 },
        WeightedTriple { subject: "s".into(), relation: "r".into(), object: "o2".into(), weight: 0.9 },
    ]);
    ensure!(example.groups.len() == 1, "expected one group, got {}", example.groups.len());
    let got: BTreeMap<&str, f64> = example.groups[0].entries.iter().map(|(o, w)| (o.as_str(), *w)).collect();
    ensure!(got.get("o1") == Some(&0.0) && got.get("o2") == Some(&1.0), "{{-0.3, 0.9}} became {got:?}");
    Outcome::Pass(format!("{} random groups sum to 1; {{-0.3, 0.9}} -> {{0, 1}}", outcome.groups.len()))
}

fn group(s: &str, entries: &[(&str, f64)]) -> NormalizedWeights {
    NormalizedWeights {
        subject: s.into(),
        relation: "r".into(),
        entries: entries.iter().map(|(o, w)| (o.to_string(), *w)).collect(),
    }
}

fn loss_and_gradient(_: &Path) -> Outcome {
    let v = |x: &[f64]| Vector::new(x.to_vec()).unwrap();

    let constant =
        Ffnn::new(vec![DenseLayer::new(Matrix::zeros(3, 2), vec![0.4, -2.0, 1.5], Activation::Identity).unwrap()])
            .unwrap();
    let initial: BTreeMap<String, Vector> =
        ["a", "b", "c"].iter().enumerate().map(|(i, id)| (id.to_string(), v(&[i as f64, 2.0 - i as f64]))).collect();
    let groups = [group("a", &[("b", 0.25), ("c", 0.75)]), group("c", &[("a", 1.0)])];
    let flat = gk_loss(&constant, &groups, &initial, 0.0, &anchor_projection(2, 3, 0)).unwrap();
    ensure!(flat.abs() <= 1e-12, "constant encoder loss {flat}");

    let identity =
        Ffnn::new(vec![DenseLayer::new(Matrix::identity(2), vec![0.0; 2], Activation::Identity).unwrap()]).unwrap();
    let pair = BTreeMap::from([("s".to_string(), v(&[1.0, 0.0])), ("o".to_string(), v(&[0.0, 1.0]))]);
    let hand = gk_loss(&identity, &[group("s", &[("o", 1.0)])], &pair, 0.0, &Matrix::identity(2)).unwrap();
    ensure!((hand - 2.0).abs() <= 1e-12, "two-entity loss {hand}, expected 2");

    let mut rng = seeded_rng(31);
    let five: BTreeMap<String, Vector> =
        ["a", "b", "c", "d", "e"].iter().map(|id| (id.to_string(), random_vector(&mut rng, 4, 1.0))).collect();
    let groups = [
        group("a", &[("b", 0.6), ("c", 0.4)]),
        group("b", &[("d", 1.0)]),
        group("e", &[("a", 0.3), ("c", 0.7)]),
    ];
    let objective = GkObjective::new(&groups, &five, &anchor_projection(4, 3, 2), 0.1).unwrap();
    let mut worst: f64 = 0.0;
    for act in [Activation::Tanh, Activation::Identity] {
        let net = Ffnn::init(&[4, 6, 3], &[act, Activation::Identity], &mut rng).unwrap();
        let err = grad_check(&net, |f| objective.loss_and_grad(f), 1e-5).unwrap();
        ensure!(err < 1e-4, "{act:?} encoder: gradient relative error {err:.2e}");
        worst = worst.max(err);
    }
    Outcome::Pass(format!("constant {flat:.1e}, hand {hand}, gradient error {worst:.1e}"))
}

fn collapse_detection(dir: &Path) -> Outcome {
    symmetric_kg(dir);
    let free = train_symmetric_gk(dir, "0", "free.kgxs");
    let anchored = train_symmetric_gk(dir, "0.1", "anchored.kgxs");
    let (vf, va) = (&free["counters"]["output_variance"], &anchored["counters"]["output_variance"]);
    ensure!(free["counters"]["collapse_warning"] == true, "lambda=0 did not warn (variance {vf})");
    ensure!(anchored["counters"]["collapse_warning"] == false, "lambda=0.1 warned (variance {va})");
    Outcome::Pass(format!("variance {vf} at lambda=0 vs {va} at lambda=0.1"))
}

fn fusion_structure(_: &Path) -> Outcome {
    let mut graphs = 0;
    let mut rng = seeded_rng(77);
    for seed in 0..3 {
        let corpus = generate(&SyntheticSpec { seed, docs: 60, ..SyntheticSpec::default() }).unwrap();
        let vocab = Vocabulary::new(corpus.entities.clone()).unwrap();
        let schema = kgfuse::relweights::Schema::new(corpus.relations.clone()).unwrap();
        let (rows, _) = score_pairs(&corpus.embeddings, &vocab, &schema, &corpus.triples, PairMode::Gold).unwrap();
        let groups = normalize_weights(&correct_triples(&rows)).groups;
        let initial = initial_embeddings(&corpus.embeddings, &vocab, &groups, InitialKey::Surface).unwrap();
        let config = GkTrainConfig { epochs: 20, hidden: 16, out_dim: 8, seed, ..GkTrainConfig::default() };
        let gk = train_gk(&groups, &vocab, &initial, &schema, &config).unwrap().store;

        let docs: Vec<_> = corpus.train.iter().chain(&corpus.dev).cloned().collect();
        let task = build_sk_graph(&docs, Some(&gk), &corpus.embeddings, &GraphConfig::default()).unwrap();
        let fusion = FusionGraph::from_task(&task).unwrap();
        ensure!(fusion.gk_gk_edge_count() == 0, "seed {seed}: {} GK-GK edges", fusion.gk_gk_edge_count());
        for &(a, b) in fusion.edges() {
            ensure!(!(fusion.nodes()[a].is_gk() && fusion.nodes()[b].is_gk()), "seed {seed}: edge {a}-{b} joins GK nodes");
        }
        let sk: std::collections::BTreeSet<&str> =
            fusion.nodes().iter().filter(|n| !n.is_gk()).map(|n| n.key.as_str()).collect();
        ensure!(
            fusion.nodes().iter().filter(|n| n.is_gk()).all(|n| !sk.contains(n.key.as_str())),
            "seed {seed}: SK and GK ids overlap"
        );
        ensure!(fusion.nodes().iter().any(|n| n.is_gk()), "seed {seed}: no GK node linked");

        // Relabeling the real graph commutes with the forward pass.
        let n = fusion.len();
        let keys: Vec<&str> = fusion.nodes().iter().map(|n| n.key.as_str()).collect();
        let x = glorot_uniform(n, 6, &mut rng);
        let gcn = Gcn::new(vec![
            GcnLayer { weight: glorot_uniform(8, 6, &mut rng), activation: Activation::Relu },
            GcnLayer { weight: glorot_uniform(5, 8, &mut rng), activation: Activation::Identity },
        ])
        .unwrap();
        let out = gcn.forward(fusion.adjacency(), &x).unwrap();
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut rng);
        let mut inverse = vec![0; n];
        for (new, &old) in perm.iter().enumerate() {
            inverse[old] = new;
        }
        let p_keys: Vec<&str> = perm.iter().map(|&o| keys[o]).collect();
        let p_edges: Vec<_> = fusion.edges().iter().map(|&(a, b)| (inverse[a], inverse[b])).collect();
        let mut p_x = Matrix::zeros(n, 6);
        for (new, &old) in perm.iter().enumerate() {
            p_x.row_mut(new).copy_from_slice(x.row(old));
        }
        let p_out = gcn.forward(&NormalizedAdjacency::new(&p_keys, &p_edges).unwrap(), &p_x).unwrap();
        for (new, &old) in perm.iter().enumerate() {
            ensure!(p_out.row(new) == out.row(old), "seed {seed}: node {old} changed under relabeling");
        }
        graphs += 1;
    }

    let adj = NormalizedAdjacency::new(&["sk:a", "gk:b"], &[(0, 1)]).unwrap();
    let w = glorot_uniform(3, 4, &mut rng);
    let x = glorot_uniform(2, 4, &mut rng);
    let gcn = Gcn::new(vec![GcnLayer { weight: w.clone(), activation: Activation::Identity }]).unwrap();
    let out = gcn.forward(&adj, &x).unwrap();
    // (A + I) is all ones with degree 2 everywhere, so every entry is 1/2.
    let oracle = Matrix::from_rows(&[vec![0.5, 0.5], vec![0.5, 0.5]]).unwrap().matmul(&x).unwrap().matmul_t(&w).unwrap();
    let err = out.data().iter().zip(oracle.data()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    ensure!(err <= 1e-9, "two-node output differs from the dense oracle by {err:.2e}");
    Outcome::Pass(format!("{graphs} synthetic graphs: no GK-GK edges, disjoint ids, exact equivariance; oracle {err:.1e}"))
}

/// gen-synthetic, weights and train-gk on the end-to-end instance.
fn build_gk(dir: &Path) {
    ok(dir, &["gen-synthetic", "--entities", "50", "--relations", "3", "--docs", "200", "--noise", "0.1", "--seed", "1", "--out", "syn"]);
    ok(
        dir,
        &["weights", "--triples", "syn/triples.jsonl", "--vocab", "syn/entities.jsonl", "--relations",
          "syn/relations.jsonl", "--embeddings", "syn/embeddings.kgxe", "--out", "weights.jsonl"],
    );
    ok(
        dir,
        &["train-gk", "--weights", "weights.jsonl", "--vocab", "syn/entities.jsonl", "--relations",
          "syn/relations.jsonl", "--embeddings", "syn/embeddings.kgxe", "--seed", "1", "--out", "gk.kgxs"],
    );
}

fn gk_reuse(dir: &Path) -> Outcome {
    build_gk(dir);
    let store = hash(dir.join("gk.kgxs"));
    let mut shares = Vec::new();
    for (task, doc_seed) in [("task-a", "11"), ("task-b", "12")] {
        ok(dir, &["gen-synthetic", "--seed", "1", "--doc-seed", doc_seed, "--docs", "120", "--out", task]);
        ensure!(
            hash(dir.join(task).join("kg.jsonl")) == hash(dir.join("syn/kg.jsonl")),
            "{task} does not share the source graph"
        );
        let model = format!("{task}.kgxm");
        let out = run(
            dir,
            &["train-task", "--train", &format!("{task}/train.jsonl"), "--dev", &format!("{task}/dev.jsonl"),
              "--gk", "gk.kgxs", "--embeddings", "syn/embeddings.kgxe", "--seed", doc_seed, "--out", &model],
        );
        ensure!(out.status.success(), "{task} failed: {}", stderr(&out));
        ensure!(hash(dir.join("gk.kgxs")) == store, "GK store file changed during {task}");
        let report = json(dir.join(format!("{model}.report.json")));
        shares.push(format!("{task} rel F1 {}", report["metrics"]["relation"]["f1"]));
    }
    ensure!(
        hash(dir.join("task-a/train.jsonl")) != hash(dir.join("task-b/train.jsonl")),
        "the two tasks are identical"
    );
    Outcome::Pass(format!("store {} unchanged; {}", &store[..12], shares.join(", ")))
}

fn f1(metrics: &serde_json::Value, label: &str) -> f64 {
    metrics[label]["f1"].as_f64().unwrap()
}

fn end_to_end(dir: &Path) -> Outcome {
    build_gk(dir);
    let common = ["--train", "syn/train.jsonl", "--dev", "syn/dev.jsonl", "--embeddings", "syn/embeddings.kgxe", "--seed", "1"];
    ok(dir, &[&["train-task"][..], &common, &["--gk", "gk.kgxs", "--out", "fused.kgxm"]].concat());
    ok(dir, &[&["train-task"][..], &common, &["--out", "plain.kgxm"]].concat());
    ok(dir, &["eval", "--model", "fused.kgxm", "--docs", "syn/dev.jsonl", "--gk", "gk.kgxs", "--embeddings", "syn/embeddings.kgxe"]);
    ok(dir, &["eval", "--model", "plain.kgxm", "--docs", "syn/dev.jsonl", "--embeddings", "syn/embeddings.kgxe"]);

    let report = json(dir.join("fused.kgxm.report.json"));
    let epochs = report["counters"]["history"].as_array().map_or(0, Vec::len);
    ensure!(epochs <= 50, "trained {epochs} epochs");
    let fused = json(dir.join("fused.kgxm.metrics.json"));
    let plain = json(dir.join("plain.kgxm.metrics.json"));
    let (rel, ent) = (f1(&fused, "relation"), f1(&fused, "entity"));
    let (rel0, ent0) = (f1(&plain, "relation"), f1(&plain, "entity"));
    let summary = format!("with GK rel {rel:.4} ent {ent:.4}; without GK rel {rel0:.4} ent {ent0:.4}; {epochs} epochs");
    ensure!(rel >= 0.9 && ent >= 0.95, "{summary}");
    ensure!(rel0 < rel, "ablation is not lower: {summary}");
    Outcome::Pass(summary)
}

fn artifacts(root: &Path) -> BTreeMap<String, String> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            let name = path.strip_prefix(root).unwrap().display().to_string();
            if path.is_dir() {
                stack.push(path);
            } else if !name.ends_with("report.json") {
                out.insert(name, hash(&path));
            }
        }
    }
    out
}

fn determinism(dir: &Path) -> Outcome {
    let mut runs = Vec::new();
    for round in ["one", "two"] {
        let d = dir.join(round);
        std::fs::create_dir(&d).unwrap();
        ok(&d, &["gen-synthetic", "--entities", "20", "--relations", "3", "--docs", "40", "--seed", "4", "--out", "syn"]);
        let kg = ["--vocab", "syn/entities.jsonl", "--relations", "syn/relations.jsonl"];
        ok(&d, &[&["embed-toy"][..], &kg, &["--triples", "syn/triples.jsonl", "--toy-dim", "16", "--out", "toy.kgxe"]].concat());
        ok(&d, &[&["weights"][..], &kg, &["--triples", "syn/triples.jsonl", "--embeddings", "syn/embeddings.kgxe", "--out", "w.jsonl"]].concat());
        ok(&d, &[&["train-gk"][..], &kg, &["--weights", "w.jsonl", "--embeddings", "syn/embeddings.kgxe", "--epochs", "50", "--out", "gk.kgxs"]].concat());
        ok(
            &d,
            &["train-task", "--train", "syn/train.jsonl", "--dev", "syn/dev.jsonl", "--gk", "gk.kgxs", "--embeddings",
              "syn/embeddings.kgxe", "--epochs", "5", "--out", "m.kgxm"],
        );
        ok(&d, &["eval", "--model", "m.kgxm", "--docs", "syn/dev.jsonl", "--gk", "gk.kgxs", "--embeddings", "syn/embeddings.kgxe"]);
        runs.push(artifacts(&d));
    }
    ensure!(runs[0].len() >= 12, "only {} artifacts produced", runs[0].len());
    for (name, h) in &runs[0] {
        ensure!(runs[1].get(name) == Some(h), "{name} differs between runs");
    }
    ensure!(runs[0].len() == runs[1].len(), "artifact sets differ");
    Outcome::Pass(format!("{} artifacts byte-identical across reruns", runs[0].len()))
}

const REFERENCE_RATIO: f64 = 9924.0 / 12000.0;

fn triple_ratio(dir: &Path) -> Outcome {
    let vars = ["KGFUSE_REAL_TRIPLES", "KGFUSE_REAL_VOCAB", "KGFUSE_REAL_RELATIONS", "KGFUSE_REAL_EMBEDDINGS"];
    let values: Vec<_> = vars.iter().map(|v| std::env::var(v).ok()).collect();
    if let Some(i) = values.iter().position(Option::is_none) {
        return Outcome::Skip(format!("real inputs not supplied ({} unset)", vars[i]));
    }
    let v: Vec<String> = values.into_iter().flatten().collect();
    ok(
        dir,
        &["weights", "--triples", &v[0], "--vocab", &v[1], "--relations", &v[2], "--embeddings", &v[3], "--out", "real.jsonl"],
    );
    let report = json(dir.join("real.jsonl.report.json"));
    let ratio = report["counters"]["ratio"].as_f64().unwrap();
    let summary = format!(
        "{}/{} = {ratio:.4} (target {REFERENCE_RATIO:.4} +/- 0.05)",
        report["counters"]["correct"], report["counters"]["pairs"]
    );
    ensure!((ratio - REFERENCE_RATIO).abs() <= 0.05, "{summary}");
    Outcome::Pass(summary)
}

fn main() {
    let criteria: [(&str, u64, Check); 10] = [
        ("parallelogram and weight", 5, parallelogram_and_weight),
        ("toy embedder mask law", 5, toy_mask_law),
        ("weight normalization", 1, normalization),
        ("loss and gradient", 10, loss_and_gradient),
        ("collapse detection", 30, collapse_detection),
        ("fusion structure", 10, fusion_structure),
        ("GK reuse", 120, gk_reuse),
        ("end-to-end learnability", 300, end_to_end),
        ("determinism", 60, determinism),
        ("triple prediction ratio", 600, triple_ratio),
    ];
    let mut failures = 0;
    for (name, budget, check) in criteria {
        let dir = tempfile::tempdir().unwrap();
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(|| check(dir.path())))
            .unwrap_or_else(|_| Outcome::Fail("panicked".into()));
        let elapsed = start.elapsed();
        let outcome = match outcome {
            Outcome::Pass(msg) if elapsed > Duration::from_secs(budget) => {
                Outcome::Fail(format!("over the {budget} s budget; {msg}"))
            }
            other => other,
        };
        let (tag, msg) = match outcome {
            Outcome::Pass(m) => ("PASS", m),
            Outcome::Skip(m) => ("SKIP", m),
            Outcome::Fail(m) => {
                failures += 1;
                ("FAIL", m)
            }
        };
        println!("{tag} {name} [{:.2}s]: {msg}", elapsed.as_secs_f64());
    }
    if failures > 0 {
        eprintln!("{failures} acceptance criteria failed");
        std::process::exit(1);
    }
}
