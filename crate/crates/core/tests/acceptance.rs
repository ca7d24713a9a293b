//! Acceptance harness: one PASS/FAIL line per criterion.
//!
//! Everything runs inside a single test so the training-heavy checks run
//! one at a time and their timings are meaningful. Criteria listed in
//! `KNOWN_FAILURES` still print FAIL but do not fail the test run.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use rnnparse::composer::{Arena, Mode};
use rnnparse::decoder::{constrain_path_validity, num_tags, TagLattice};
use rnnparse::ensemble_eval::{evalb_f1, vote_parse};
use rnnparse::greedy_parser::{parse, parse_with, OracleScorer};
use rnnparse::nncore::{grad_check, ModelDims, ModelParams, ParamGrads, Precision, Tensor};
use rnnparse::synth::generate_treebank;
use rnnparse::tagger::{score_sequence, tagger_backward};
use rnnparse::trainer::{corpus_f1, sequence_loss_grad, train, TrainConfig, TrainOutcome};
use rnnparse::tree::{read_trees, ParseTree};
use rnnparse::treebank::{extract_gold_sequences, preprocess_splits, reassemble};
use rnnparse::vocab::TagSet;

/// Criteria whose failure is understood and recorded; see the README.
const KNOWN_FAILURES: &[&str] = &["6b", "8b"];

struct Line {
    id: &'static str,
    status: &'static str,
    detail: String,
}

type Check = std::result::Result<String, String>;

fn run(id: &'static str, f: impl FnOnce() -> Check) -> Line {
    let start = Instant::now();
    let result = catch_unwind(AssertUnwindSafe(f));
    let secs = start.elapsed().as_secs_f64();
    let (status, detail) = match result {
        Ok(Ok(d)) => ("PASS", d),
        Ok(Err(d)) => ("FAIL", d),
        Err(p) => {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            ("FAIL", format!("panicked: {msg}"))
        }
    };
    let line = Line {
        id,
        status,
        detail: format!("{detail} [{secs:.1}s]"),
    };
    println!("criterion {:<3} {}  {}", line.id, line.status, line.detail);
    line
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> std::result::Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Every valid path of `lat` with its score, by depth-first search.
fn enumerate(lat: &TagLattice) -> Vec<(Vec<usize>, f64)> {
    fn rec(lat: &TagLattice, path: &mut Vec<usize>, score: f64, out: &mut Vec<(Vec<usize>, f64)>) {
        let pos = path.len();
        if pos == lat.len() {
            if lat.allowed_end(*path.last().unwrap()) {
                out.push((path.clone(), score));
            }
            return;
        }
        for t in 0..lat.num_tags() {
            let ok = match path.last() {
                None => lat.allowed_start(t),
                Some(&p) => lat.allowed_next(p, t),
            };
            if ok {
                path.push(t);
                rec(lat, path, score + lat.scores().get(pos, t), out);
                path.pop();
            }
        }
    }
    let mut out = Vec::new();
    rec(lat, &mut Vec::new(), 0.0, &mut out);
    out
}

fn criterion_2() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let start = Instant::now();
    let mut worst = 0.0f64;
    for case in 0..1000 {
        let n = rng.gen_range(1..=8);
        let labels = rng.gen_range(1..=3);
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..num_tags(labels)).map(|_| rng.gen_range(-2.0..2.0)).collect())
            .collect();
        let lat = TagLattice::from_rows(&rows, labels).unwrap();
        let paths = enumerate(&lat);
        let best = paths
            .iter()
            .map(|p| p.1)
            .fold(f64::NEG_INFINITY, f64::max);
        let (vpath, vscore) = lat.viterbi();
        let brute_best = paths.iter().find(|p| p.1 == best).unwrap();
        ensure((vscore - best).abs() < 1e-9, || format!("case {case}: viterbi {vscore} vs {best}"))?;
        ensure(vpath == brute_best.0 || (lat.path_score(&vpath) - best).abs() < 1e-12, || {
            format!("case {case}: viterbi path differs")
        })?;
        let scores: Vec<f64> = paths.iter().map(|p| p.1).collect();
        let log_z = log_sum_exp(&scores);
        worst = worst.max((lat.log_partition() - log_z).abs());
        ensure((lat.log_partition() - log_z).abs() < 1e-9, || format!("case {case}: logZ"))?;
        let mut brute = Tensor::zeros(n, num_tags(labels));
        for (path, s) in &paths {
            let w = (s - log_z).exp();
            for (pos, &t) in path.iter().enumerate() {
                brute.set(pos, t, brute.get(pos, t) + w);
            }
        }
        let m = lat.marginals();
        for (a, b) in m.data().iter().zip(brute.data()) {
            worst = worst.max((a - b).abs());
            ensure((a - b).abs() < 1e-9, || format!("case {case}: marginal {a} vs {b}"))?;
        }
    }
    let elapsed = start.elapsed();
    ensure(elapsed < Duration::from_secs(10), || format!("took {elapsed:?}"))?;
    Ok(format!("1000 lattices match enumeration, max deviation {worst:.1e}"))
}

fn small_dims() -> ModelDims {
    ModelDims {
        word_dim: 4,
        tag_dim: 4,
        hidden: 6,
        window: 3,
        kmax: 3,
    }
}

fn criterion_3() -> Check {
    let start = Instant::now();
    let tree = rnnparse::tree::parse_tree("(NP (DT the) (JJ big) (NN dog))").unwrap();
    let corpus = vec![tree.clone(), rnnparse::tree::parse_tree("(S (NP (NN rain)) (VP (VBZ falls)))").unwrap()];
    let ts = TagSet::build(&corpus, 1).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut params = ModelParams::init(small_dims(), ts.num_words(), ts.num_tag_entries(), ts.num_bioes(), &mut rng).unwrap();
    params.p_drop = 0.0;
    let mut report = Vec::new();

    // Composer: loss = w · root representation.
    let w: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let root_loss = |p: &ModelParams| {
        let mut a = Arena::new(Mode::Eval, 0.0, 0);
        let root = a.compose_tree(&tree, p, &ts).unwrap();
        a.node(root).vec.iter().zip(&w).map(|(x, y)| x * y).sum::<f64>()
    };
    let mut arena = Arena::new(Mode::Eval, 0.0, 0);
    let root = arena.compose_tree(&tree, &params, &ts).unwrap();
    let mut grads = ParamGrads::zeros(&params);
    arena.compose_backward(root, &w, &params, &mut grads).unwrap();
    let err = grad_check(
        |v| {
            let mut q = params.clone();
            q.unflatten(v);
            root_loss(&q)
        },
        &params.flatten(),
        &grads.flatten(&params),
        1e-5,
    )
    .unwrap();
    ensure(err < 1e-4, || format!("composer rel. error {err:.2e}"))?;
    report.push(format!("composer {err:.1e}"));

    // Tagger with N = 3.
    let slots: Vec<Vec<f64>> = (0..3)
        .map(|_| (0..8).map(|_| rng.gen_range(-1.0..1.0)).collect())
        .collect();
    let weights = Tensor::uniform(3, ts.num_bioes(), 1.0, &mut rng);
    let tag_loss = |p: &ModelParams, x: &[Vec<f64>]| {
        let t = score_sequence(x, p).unwrap();
        t.scores.data().iter().zip(weights.data()).map(|(a, b)| a * b).sum::<f64>()
    };
    let table = score_sequence(&slots, &params).unwrap();
    let mut grads = ParamGrads::zeros(&params);
    let slot_grads = tagger_backward(&table, &weights, &params, &mut grads).unwrap();
    let err_p = grad_check(
        |v| {
            let mut q = params.clone();
            q.unflatten(v);
            tag_loss(&q, &slots)
        },
        &params.flatten(),
        &grads.flatten(&params),
        1e-5,
    )
    .unwrap();
    let err_x = grad_check(
        |v| {
            let x: Vec<Vec<f64>> = v.chunks(8).map(|c| c.to_vec()).collect();
            tag_loss(&params, &x)
        },
        &slots.concat(),
        &slot_grads.concat(),
        1e-5,
    )
    .unwrap();
    ensure(err_p < 1e-4 && err_x < 1e-4, || format!("tagger rel. error {err_p:.2e} / {err_x:.2e}"))?;
    report.push(format!("tagger {:.1e}", err_p.max(err_x)));

    // Whole training step, dropout off.
    params.p_drop = 0.0;
    let mut worst = 0.0f64;
    for seq in corpus.iter().flat_map(|t| extract_gold_sequences(t).unwrap()) {
        let (_, grads) = sequence_loss_grad(&seq, &params, &ts, Mode::Eval, 0).unwrap();
        let err = grad_check(
            |v| {
                let mut q = params.clone();
                q.unflatten(v);
                sequence_loss_grad(&seq, &q, &ts, Mode::Eval, 0).unwrap().0
            },
            &params.flatten(),
            &grads.flatten(&params),
            1e-5,
        )
        .unwrap();
        worst = worst.max(err);
    }
    ensure(worst < 1e-4, || format!("train step rel. error {worst:.2e}"))?;
    report.push(format!("train step {worst:.1e}"));
    let elapsed = start.elapsed();
    ensure(elapsed < Duration::from_secs(5), || format!("took {elapsed:?}"))?;
    Ok(format!("max rel. error: {}", report.join(", ")))
}

fn oracle_corpus() -> (Vec<ParseTree>, TagSet) {
    let raw = read_trees(fixture("oracle_200.mrg")).unwrap();
    let (mut trees, _, _) = preprocess_splits(&raw, &[], 30);
    trees.extend(read_trees(fixture("figure1.mrg")).unwrap());
    let ts = TagSet::build(&trees, 1).unwrap();
    (trees, ts)
}

fn criterion_4() -> Check {
    let (trees, ts) = oracle_corpus();
    let mut pred = Vec::new();
    for t in &trees {
        let mut oracle = OracleScorer::new(t, &ts).unwrap();
        let out = parse_with(&t.words(), &t.pos_tags(), &ts, &mut oracle).unwrap();
        ensure(&out.merged == t, || format!("oracle parse differs: {} vs {}", out.merged, t))?;
        pred.push(out.merged);
    }
    let f1 = evalb_f1(&trees, &pred).unwrap().f1 * 100.0;
    ensure(f1 == 100.0, || format!("F1 {f1}"))?;
    let figure = std::fs::read_to_string(fixture("figure1.mrg")).unwrap();
    ensure(pred.last().unwrap().to_string() == figure.trim(), || "figure tree differs".into())?;
    Ok(format!(
        "{} fixture trees + figure sentence reproduced exactly, F1 {f1:.1}",
        trees.len() - 1
    ))
}

fn criterion_5() -> Check {
    let (mut trees, _) = oracle_corpus();
    let raw = generate_treebank(2000, 5);
    trees.extend(preprocess_splits(&raw, &[], 30).0);
    let mut sequences = 0;
    for t in &trees {
        let seqs = extract_gold_sequences(t).unwrap();
        ensure(seqs.iter().all(|s| constrain_path_validity(&s.targets)), || {
            format!("invalid targets for {t}")
        })?;
        sequences += seqs.len();
        if t.is_leaf() {
            continue;
        }
        ensure(&reassemble(&seqs).unwrap() == t, || format!("reassembly differs for {t}"))?;
    }
    Ok(format!("{} trees, {sequences} valid sequences, all reassembled", trees.len()))
}

struct Synthetic {
    train: Vec<ParseTree>,
    dev: Vec<ParseTree>,
    tagset: TagSet,
}

fn synthetic() -> Synthetic {
    let raw = generate_treebank(2200, 2024);
    let (train, mut others, _) = preprocess_splits(&raw[..2000], &[&raw[2000..]], 30);
    let tagset = TagSet::build(&train, 1).unwrap();
    Synthetic {
        train,
        dev: others.remove(0),
        tagset,
    }
}

fn toy_config(p_drop: f64, seed: u64) -> TrainConfig {
    TrainConfig {
        p_drop,
        dims: ModelDims {
            word_dim: 32,
            tag_dim: 8,
            hidden: 64,
            window: 7,
            kmax: 7,
        },
        max_epochs: 30,
        seed,
        ..TrainConfig::default()
    }
}

struct Runs {
    dropout: TrainOutcome,
    dropout_time: Duration,
    no_dropout: TrainOutcome,
    second_seed: TrainOutcome,
}

fn criterion_6a(data: &Synthetic, runs: &Runs) -> Check {
    let best = runs.dropout.history[runs.dropout.best_epoch].dev_f1;
    let dev_f1 = corpus_f1(&data.dev, &runs.dropout.params, &data.tagset).unwrap();
    ensure(dev_f1 >= 95.0, || format!("dev F1 {dev_f1:.2}"))?;
    ensure(runs.dropout_time < Duration::from_secs(600), || format!("took {:?}", runs.dropout_time))?;
    ensure(runs.dropout.history.len() <= 31, || "more than 30 epochs".into())?;
    Ok(format!(
        "dev F1 {best:.2} at epoch {} ({} epochs run, {:.0}s)",
        runs.dropout.best_epoch,
        runs.dropout.history.len() - 1,
        runs.dropout_time.as_secs_f64()
    ))
}

fn criterion_6b(data: &Synthetic, runs: &Runs) -> Check {
    let gap = |o: &TrainOutcome| {
        let tr = corpus_f1(&data.train, &o.params, &data.tagset).unwrap();
        let dv = corpus_f1(&data.dev, &o.params, &data.tagset).unwrap();
        (tr, dv, tr - dv)
    };
    let (t0, d0, g0) = gap(&runs.no_dropout);
    let (t1, d1, g1) = gap(&runs.dropout);
    let detail = format!(
        "train/dev F1 gap: dropout off {g0:+.3} ({t0:.2}/{d0:.2}), dropout 0.25 {g1:+.3} ({t1:.2}/{d1:.2})"
    );
    ensure(g0 > g1, || detail.clone())?;
    Ok(detail)
}

fn criterion_7(data: &Synthetic, runs: &Runs) -> Check {
    let a = &runs.dropout.params;
    let b = &runs.second_seed.params;
    let ts = &data.tagset;
    let mut dup = Vec::new();
    let mut pair = Vec::new();
    for t in &data.dev {
        let (w, p) = (t.words(), t.pos_tags());
        let single = parse(&w, &p, a, ts).unwrap();
        let doubled = vote_parse(&w, &p, &[a, a], &[ts, ts]).unwrap();
        ensure(single == doubled, || format!("duplicated vote differs on {t}"))?;
        dup.push(doubled);
        pair.push(vote_parse(&w, &p, &[a, b], &[ts, ts]).unwrap());
    }
    let fa = corpus_f1(&data.dev, a, ts).unwrap();
    let fb = corpus_f1(&data.dev, b, ts).unwrap();
    let fv = evalb_f1(&data.dev, &pair).unwrap().f1 * 100.0;
    ensure(fv >= fa.max(fb) - 0.5, || format!("V2 {fv:.2} vs members {fa:.2}, {fb:.2}"))?;
    Ok(format!(
        "duplicated V2 identical on {} sentences; V2 {fv:.2} vs members {fa:.2}, {fb:.2}",
        dup.len()
    ))
}

fn criterion_8a() -> Check {
    let (_, oracle_ts) = oracle_corpus();
    let mut tagsets = vec![oracle_ts, synthetic().tagset];
    for labels in 1..=12 {
        let text: String = (0..labels).map(|l| format!("(L{l} (NN w{l}))\n")).collect();
        tagsets.push(TagSet::build(&rnnparse::tree::parse_trees(&text).unwrap(), 1).unwrap());
    }
    for ts in &tagsets {
        ensure(ts.bioes_tags().len() == 4 * ts.num_labels() + 1, || {
            format!("{} tags for {} labels", ts.bioes_tags().len(), ts.num_labels())
        })?;
    }
    Ok(format!("|bioes| = 4|labels|+1 on {} tagsets", tagsets.len()))
}

fn criterion_8b() -> Check {
    let mut detail = Vec::new();
    let mut ok = true;
    for labels in 1..=4 {
        let lat = TagLattice::from_rows(&[vec![0.0; num_tags(labels)]], labels).unwrap();
        let got = lat.log_partition();
        let stated = ((2 * labels + 1) as f64).ln();
        ok &= (got - stated).abs() < 1e-12;
        detail.push(format!("L={labels}: logZ {got:.4} = log({:.0}), stated log({})", got.exp(), 2 * labels + 1));
    }
    let detail = detail.join("; ");
    ensure(ok, || detail.clone())?;
    Ok(detail)
}

fn criterion_9() -> Check {
    let raw = generate_treebank(360, 9);
    let (train_set, others, _) = preprocess_splits(&raw[..300], &[&raw[300..]], 30);
    let dev = &others[0];
    let ts = TagSet::build(&train_set, 1).unwrap();
    let cfg = TrainConfig {
        max_epochs: 4,
        precision: Precision::F64,
        ..toy_config(0.25, 99)
    };
    let dir = tempfile::tempdir().unwrap();
    let mut files = Vec::new();
    let mut outputs = Vec::new();
    for run in 0..2 {
        let out = train(&train_set, dev, &ts, &cfg).unwrap();
        let path = dir.path().join(format!("run{run}.bin"));
        out.params.save(&path, cfg.precision).unwrap();
        files.push(std::fs::read(&path).unwrap());
        let trees: Vec<String> = dev
            .iter()
            .map(|t| parse(&t.words(), &t.pos_tags(), &out.params, &ts).unwrap().to_string())
            .collect();
        outputs.push(trees);
    }
    ensure(files[0] == files[1], || "model files differ".into())?;
    ensure(outputs[0] == outputs[1], || "parse outputs differ".into())?;
    Ok(format!(
        "model files ({} bytes) and {} parsed trees bit-identical",
        files[0].len(),
        outputs[0].len()
    ))
}

#[test]
fn acceptance() {
    println!("criterion 1   NOT REPRODUCIBLE  full WSJ F1 needs the licensed treebank; criteria 2-9 substitute");
    let mut lines = vec![
        run("2", criterion_2),
        run("3", criterion_3),
        run("4", criterion_4),
        run("5", criterion_5),
    ];

    let data = synthetic();
    let start = Instant::now();
    let dropout = train(&data.train, &data.dev, &data.tagset, &toy_config(0.25, 1)).unwrap();
    let dropout_time = start.elapsed();
    let runs = Runs {
        dropout,
        dropout_time,
        no_dropout: train(&data.train, &data.dev, &data.tagset, &toy_config(0.0, 1)).unwrap(),
        second_seed: train(&data.train, &data.dev, &data.tagset, &toy_config(0.25, 2)).unwrap(),
    };
    lines.push(run("6a", || criterion_6a(&data, &runs)));
    lines.push(run("6b", || criterion_6b(&data, &runs)));
    lines.push(run("7", || criterion_7(&data, &runs)));
    lines.push(run("8a", criterion_8a));
    lines.push(run("8b", criterion_8b));
    lines.push(run("9", criterion_9));

    let unexpected: Vec<&str> = lines
        .iter()
        .filter(|l| l.status == "FAIL" && !KNOWN_FAILURES.contains(&l.id))
        .map(|l| l.id)
        .collect();
    let fixed: Vec<&str> = lines
        .iter()
        .filter(|l| l.status == "PASS" && KNOWN_FAILURES.contains(&l.id))
        .map(|l| l.id)
        .collect();
    assert!(unexpected.is_empty(), "failing criteria: {unexpected:?}");
    assert!(fixed.is_empty(), "criteria listed as known failures now pass: {fixed:?}");
}
