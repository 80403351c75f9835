//! Acceptance criteria 1-9, one PASS / FAIL / SKIPPED line each.
//!
//! Criteria 7 and 8 need the HART raw files (`RACE_HART_DIR`) and, for 8, a
//! tree cache produced by the real RST parser (`RACE_TREE_CACHE`). Criterion
//! 9 needs a GPU-scale run; point `RACE_TABLE1_AGGREGATE` at the
//! `aggregate.json` of such a run to check it.

#[path = "../../core/tests/oracles/mod.rs"]
mod oracles;

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use oracles::*;
use race::commands::{self, relation_docs, DatasetSource};
use race::config::RunConfig;
use race::dataset_dir::DatasetDir;
use race::trees::TreeCache;
use race_core::analysis::{pairwise_cosine, zscore_profile};
use race_core::dataset::{build_corpus, stratified_split, Label, Record, SplitRatios, HART_TABLE, HART_TOTALS};
use race_core::embed::{align_spans, mock_embed};
use race_core::graph::build_graph;
use race_core::linalg::Mat;
use race_core::metrics::{binary_auroc, macro_auroc, tpr_at_fpr, ScoreTable};
use race_core::model::{node_contents, rgcn_forward, Activation, Dropout, ModelConfig, ModelParams};
use race_core::objectives::{ce_loss, supcon_loss, Batch};
use race_core::rng::SeededRng;
use race_core::rst::RstTree;
use race_core::synth::{nearest_centroid_scores, random_tree, synthetic_corpus, SynthConfig};
use race_core::train::{batch_loss_grad, train, EncoderMode, Example, TrainConfig};
use race_core::RelationLabel;

enum Outcome {
    Pass(String),
    Fail(String),
    Skipped(String),
}

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Outcome::Pass(detail)
    } else {
        Outcome::Fail(detail)
    }
}

fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn message_passing() -> Outcome {
    let mut rng = SeededRng::new(101);
    let mut worst: f64 = 0.0;
    for trial in 0..100 {
        let g = random_graph(&mut rng, 12, 36);
        let (din, dout) = (1 + rng.below(6), 1 + rng.below(6));
        let layer = random_layer(din, dout, g.num_relations(), 1 + rng.below(5), &mut rng);
        let h = random_mat(g.num_nodes(), din, &mut rng);
        let act = if trial % 2 == 0 { Activation::Relu } else { Activation::Identity };
        let got = rgcn_forward(&g, &h, &layer, act).unwrap();
        worst = worst.max(got.max_abs_diff(&naive_rgcn(&g, &h, &layer, act)));
    }
    check(worst <= 1e-6, format!("100 graphs, max |diff| {worst:.1e} (tol 1e-6)"))
}

/// Graph id of each source-tree node: leaves in reading order, internals in
/// post-order after them.
fn graph_ids(tree: &RstTree) -> Vec<(usize, usize)> {
    fn walk(tree: &RstTree, id: usize, out: &mut Vec<usize>) {
        if let Some(n) = tree.internals().iter().find(|n| n.id == id) {
            walk(tree, n.left, out);
            walk(tree, n.right, out);
            out.push(id);
        }
    }
    let mut post = Vec::new();
    walk(tree, tree.root(), &mut post);
    let l = tree.num_leaves();
    let mut out: Vec<(usize, usize)> = tree.edus().iter().enumerate().map(|(i, e)| (e.id, i)).collect();
    out.extend(post.iter().enumerate().map(|(k, &id)| (id, l + k)));
    out
}

fn span_pooling() -> Outcome {
    let mut rng = SeededRng::new(77);
    let mut worst: f64 = 0.0;
    for t in 0..100u64 {
        let n = 1 + rng.below(20);
        let tree = random_tree(&format!("t{t}"), n, &mut rng, |r| RelationLabel::ALL[r.below(18)]).unwrap();
        let emb = mock_embed(tree.document(), 16, t).unwrap();
        let g = build_graph(&tree).unwrap();
        let contents = node_contents(&g, &emb, &align_spans(&tree, &emb).unwrap()).unwrap();
        let leaf_rows = leaf_contents_oracle(&tree, &emb);
        for (tree_id, gid) in graph_ids(&tree) {
            worst = worst.max(max_diff(contents.row(gid), &content_oracle(&tree, &leaf_rows, tree_id)));
        }
    }
    check(worst <= 1e-6, format!("100 trees, max |diff| {worst:.1e} (tol 1e-6)"))
}

fn grad_example(tree: &RstTree, label: Label, cfg: &ModelConfig, seed: u64) -> Example {
    let emb = mock_embed(tree.document(), cfg.d_plm, seed).unwrap();
    let align = align_spans(tree, &emb).unwrap();
    Example::new(tree.doc_id(), label, build_graph(tree).unwrap(), &emb, &align).unwrap()
}

fn gradient_check() -> Outcome {
    const H: f64 = 1e-6;
    let cfg = tiny_config(Activation::Relu);
    let mut rng = SeededRng::new(4);
    let t1 = random_tree("r1", 6, &mut rng, |r| RelationLabel::ALL[r.below(18)]).unwrap();
    let t2 = random_tree("r2", 5, &mut rng, |r| RelationLabel::ALL[r.below(18)]).unwrap();
    let examples = [
        grad_example(&five_edu_fixture(), Label::HumanWritten, &cfg, 1),
        grad_example(&t1, Label::HumanWritten, &cfg, 2),
        grad_example(&t2, Label::LlmGenerated, &cfg, 3),
    ];
    let refs: Vec<&Example> = examples.iter().collect();
    let loss = |p: &ModelParams| batch_loss_grad(&refs, p, &cfg, &mut Dropout::Off).unwrap().0;
    let params = random_params(&cfg, 17);
    let (_, grads) = batch_loss_grad(&refs, &params, &cfg, &mut Dropout::Off).unwrap();
    let analytic: Vec<(String, Vec<f64>)> =
        grads.named_tensors().into_iter().map(|(n, t)| (n, t.as_slice().to_vec())).collect();
    let mut worst = (String::new(), 0.0f64);
    for (g, (name, a)) in analytic.iter().enumerate() {
        let mut fd = vec![0.0; a.len()];
        for (i, slot) in fd.iter_mut().enumerate() {
            let mut plus = params.clone();
            plus.tensors_mut()[g].as_mut_slice()[i] += H;
            let mut minus = params.clone();
            minus.tensors_mut()[g].as_mut_slice()[i] -= H;
            *slot = (loss(&plus) - loss(&minus)) / (2.0 * H);
        }
        let diff = a.iter().zip(&fd).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
        let denom = a.iter().map(|x| x * x).sum::<f64>().sqrt().max(fd.iter().map(|x| x * x).sum::<f64>().sqrt());
        let rel = if denom == 0.0 { 0.0 } else { diff / denom };
        if rel >= worst.1 {
            worst = (name.clone(), rel);
        }
    }
    let names: Vec<&str> = analytic.iter().map(|(n, _)| n.as_str()).collect();
    let covered = ["type_embedding", "proj_weight", "layer0.basis0", "layer0.coeffs", "head.in_weight", "head.out_weight"]
        .iter()
        .all(|w| names.contains(w));
    check(
        covered && worst.1 <= 1e-4,
        format!("{} tensors, worst relative error {:.1e} at {} (tol 1e-4)", names.len(), worst.1, worst.0),
    )
}

fn auroc_pairwise_and_scan() -> Outcome {
    let mut rng = SeededRng::new(2024);
    let mut mismatches = 0;
    for _ in 0..1000 {
        let n = 8 + rng.below(40);
        let probs = Mat::from_vec(n, 4, (0..n * 4).map(|_| (rng.uniform() * 10.0).floor() / 10.0).collect());
        let mut labels: Vec<usize> = (0..n).map(|i| if i < 4 { i } else { rng.below(4) }).collect();
        rng.shuffle(&mut labels);
        let table = ScoreTable::new(probs.clone(), labels.clone()).unwrap();
        let mut sum = 0.0;
        for c in 0..4 {
            let (s, t) = one_vs_rest(&probs, &labels, c);
            let want = auroc_pairwise(&s, &t).unwrap();
            mismatches += usize::from(binary_auroc(&s, &t) != Some(want));
            sum += want;
            for cap in [0.01, 0.05] {
                let (thr, tpr) = tpr_scan(&s, &t, cap).unwrap();
                let got = tpr_at_fpr(&table, c, cap).unwrap();
                mismatches += usize::from((got.threshold, got.tpr) != (thr, tpr));
            }
        }
        mismatches += usize::from(macro_auroc(&table).unwrap() != sum / 4.0);
    }
    check(mismatches == 0, format!("1000 tables with ties, {mismatches} inexact results"))
}

fn losses() -> Outcome {
    let mut rng = SeededRng::new(31);
    let mut worst: f64 = 0.0;
    for _ in 0..200 {
        let n = 2 + rng.below(15);
        let emb = random_mat(n, 1 + rng.below(6), &mut rng);
        let labels: Vec<usize> = (0..n).map(|_| rng.below(4)).collect();
        let mut probs = Mat::zeros(n, 4);
        for i in 0..n {
            let row: Vec<f64> = (0..4).map(|_| rng.uniform() + 1e-3).collect();
            let s: f64 = row.iter().sum();
            for c in 0..4 {
                probs[(i, c)] = row[c] / s;
            }
        }
        let tau = 0.05 + rng.uniform();
        let batch = Batch::new(emb.clone(), probs.clone(), labels.clone()).unwrap();
        worst = worst.max((supcon_loss(&batch, tau).unwrap() - supcon_enum(&emb, &labels, tau)).abs());
        worst = worst.max((ce_loss(&batch) - ce_enum(&probs, &labels)).abs());
    }
    let emb = Mat::from_rows(&[vec![1.0, 0.2], vec![-0.3, 1.0], vec![0.5, 0.5], vec![2.0, -1.0]]);
    let b = Batch::new(emb, Mat::from_rows(&vec![vec![0.25; 4]; 4]), vec![0, 1, 2, 3]).unwrap();
    let supcon_zero = supcon_loss(&b, 0.07).unwrap() == 0.0;
    let ce_ln4 = ce_loss(&b) == 4f64.ln();
    check(
        worst <= 1e-8 && supcon_zero && ce_ln4,
        format!("200 batches, max |diff| {worst:.1e} (tol 1e-8); SupCon=0 {supcon_zero}, CE=ln4 {ce_ln4}"),
    )
}

fn synthetic_end_to_end() -> Outcome {
    let cfg = ModelConfig { d_plm: 32, d_feat: 16, hidden: 32, head_hidden: 32, ..ModelConfig::default() };
    let docs = synthetic_corpus(&SynthConfig::default());
    let records: Vec<Record> = docs.iter().map(|d| d.record.clone()).collect();
    let split = stratified_split(&records, SplitRatios::HART, 0).unwrap();
    let mut parts: [Vec<(Example, [u32; 18])>; 3] = Default::default();
    for d in &docs {
        let emb = mock_embed(d.tree.document(), cfg.d_plm, 0).unwrap();
        let align = align_spans(&d.tree, &emb).unwrap();
        let ex = Example::new(&d.record.id, d.record.label, build_graph(&d.tree).unwrap(), &emb, &align).unwrap();
        parts[split.get(&d.record.id).unwrap().index()].push((ex, d.tree.relation_frequency_vector()));
    }
    let [tr, va, _] = parts;
    let train_counts: Vec<([u32; 18], usize)> = tr.iter().map(|(e, c)| (*c, e.label)).collect();
    let val_counts: Vec<[u32; 18]> = va.iter().map(|(_, c)| *c).collect();
    let val_labels: Vec<usize> = va.iter().map(|(e, _)| e.label).collect();
    let oracle = macro_auroc(&ScoreTable::new(nearest_centroid_scores(&train_counts, &val_counts), val_labels).unwrap()).unwrap();
    let tc = TrainConfig { epochs: 30, batch_size: 32, encoder: EncoderMode::Mock, ..TrainConfig::default() };
    let train_set: Vec<Example> = tr.into_iter().map(|(e, _)| e).collect();
    let val_set: Vec<Example> = va.into_iter().map(|(e, _)| e).collect();
    let out = train(&train_set, &val_set, &cfg, &tc, 0).unwrap();
    let got = out.best().val_macro_auroc.unwrap_or(0.0);
    check(
        oracle >= 0.99 && got >= 0.95,
        format!("{} docs, val macro-AUROC {got:.4} (>= 0.95) at epoch {}, centroid oracle {oracle:.4} (>= 0.99)", docs.len(), out.best_epoch),
    )
}

fn env_path(name: &str) -> Option<PathBuf> {
    std::env::var_os(name).map(PathBuf::from).filter(|p| p.exists())
}

fn dataset_reconstruction() -> Outcome {
    let Some(raw) = env_path("RACE_HART_DIR") else {
        return Outcome::Skipped("set RACE_HART_DIR to the HART raw files to run".into());
    };
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = RunConfig::default();
    cfg.data.seed = std::env::var("RACE_SEED").ok().and_then(|s| s.parse().ok()).unwrap_or(0);
    let data = DatasetDir::new(dir.path());
    let s = match commands::build_dataset(&DatasetSource::Raw(raw), &data, &cfg) {
        Ok(s) => s,
        Err(e) => return Outcome::Fail(e.to_string()),
    };
    let totals = [s.stats.totals[0], s.stats.totals[1], s.stats.totals[2]];
    let wrong: Vec<String> = HART_TABLE
        .iter()
        .filter_map(|&(d, l, want)| {
            let got = s.stats.cell(d, l).unwrap_or_default();
            (got != want).then(|| format!("{d}/{l} {got:?} != {want:?}"))
        })
        .collect();
    check(
        totals == HART_TOTALS && wrong.is_empty(),
        format!("totals {totals:?} (want {HART_TOTALS:?}), {} mismatched cells {wrong:?}", wrong.len()),
    )
}

fn analysis_reproduction() -> Outcome {
    let (Some(raw), Some(trees)) = (env_path("RACE_HART_DIR"), env_path("RACE_TREE_CACHE")) else {
        return Outcome::Skipped("set RACE_HART_DIR and RACE_TREE_CACHE (real-parser trees) to run".into());
    };
    let raws = match race::hart::load_raw(&raw) {
        Ok(r) => r,
        Err(e) => return Outcome::Fail(e.to_string()),
    };
    let (records, _) = build_corpus(&raws);
    let trees = match TreeCache::new(trees).load() {
        Ok(t) => t,
        Err(e) => return Outcome::Fail(e.to_string()),
    };
    let (docs, missing) = relation_docs(&records, &trees);
    let sim = |a, b| pairwise_cosine(a, b, &docs).map(|s| s.mean).unwrap_or(f64::NAN);
    let hw_lp = sim(Label::HumanWritten, Label::LlmPolished);
    let lg_hu = sim(Label::LlmGenerated, Label::Humanized);
    let Ok(profile) = zscore_profile(&docs) else {
        return Outcome::Fail("no usable documents".into());
    };
    let z = |l: Label, r: RelationLabel| profile.z[l.index()][r.index()];
    let signs = z(Label::HumanWritten, RelationLabel::Attribution) > 0.0
        && z(Label::HumanWritten, RelationLabel::Background) > 0.0
        && z(Label::LlmGenerated, RelationLabel::Elaboration) > 0.0
        && z(Label::LlmGenerated, RelationLabel::Evaluation) > 0.0;
    check(
        (hw_lp - 0.92).abs() <= 0.05 && (lg_hu - 0.95).abs() <= 0.05 && signs,
        format!("HW-LP {hw_lp:.3} (0.92±0.05), LG-Hum {lg_hu:.3} (0.95±0.05), Z sign pattern {signs}, {missing} docs without trees"),
    )
}

fn table1_reproduction() -> Outcome {
    let Some(path) = env_path("RACE_TABLE1_AGGREGATE") else {
        return Outcome::Skipped(
            "not desk-scale: needs encoder fine-tuning on full HART with the real parser on a GPU; \
             set RACE_TABLE1_AGGREGATE to a run's aggregate.json to check it (±1.5 points)"
                .into(),
        );
    };
    let agg: std::collections::BTreeMap<String, race_core::train::MeanStd> = match race::jsonl::read_json(&path) {
        Ok(a) => a,
        Err(e) => return Outcome::Fail(e.to_string()),
    };
    let get = |k: &str| agg.get(k).map_or(f64::NAN, |m| 100.0 * m.mean);
    let (auroc, tpr) = (get("macro_auroc"), get("avg_tpr@1"));
    check(
        (auroc - 97.99).abs() <= 1.5 && (tpr - 83.06).abs() <= 1.5,
        format!("AUROC {auroc:.2} (97.99±1.5), avg TPR@1%FPR {tpr:.2} (83.06±1.5)"),
    )
}

fn main() -> ExitCode {
    let criteria: [(&str, f64, fn() -> Outcome); 9] = [
        ("message passing vs triple-loop oracle", 30.0, message_passing),
        ("descendant span pooling vs brute force", 10.0, span_pooling),
        ("gradient check", 60.0, gradient_check),
        ("AUROC and TPR@FPR oracles", 60.0, auroc_pairwise_and_scan),
        ("SupCon and CE oracles", 10.0, losses),
        ("synthetic end-to-end", 300.0, synthetic_end_to_end),
        ("dataset reconstruction (Table 5)", f64::INFINITY, dataset_reconstruction),
        ("analysis reproduction (Table 2, Fig. 2a)", f64::INFINITY, analysis_reproduction),
        ("full Table 1 reproduction", f64::INFINITY, table1_reproduction),
    ];
    let mut failed = 0;
    for (i, (name, budget, run)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = run();
        let secs = start.elapsed().as_secs_f64();
        let timing = if budget.is_finite() { format!(" [{secs:.2}s, budget {budget}s]") } else { String::new() };
        let (status, detail) = match outcome {
            Outcome::Pass(d) if secs <= *budget => ("PASS", d),
            Outcome::Pass(d) => ("FAIL", format!("{d}; over time budget")),
            Outcome::Fail(d) => ("FAIL", d),
            Outcome::Skipped(d) => ("SKIPPED", d),
        };
        if status == "FAIL" {
            failed += 1;
        }
        println!("criterion {} {status}: {name}: {detail}{timing}", i + 1);
    }
    if failed > 0 {
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
