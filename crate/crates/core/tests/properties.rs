mod oracles;

use std::collections::BTreeSet;

use oracles::*;
use proptest::prelude::*;
use race_core::analysis::{cosine, pairwise_cosine, zscore_profile, RelationDoc};
use race_core::dataset::{
    allocate, group_aware_split, leave_one_domain_out, stratified_split, Domain, Label, Partition, Record, SplitRatios,
};
use race_core::embed::{align_spans, mock_embed};
use race_core::graph::{build_graph, descendants};
use race_core::linalg::Mat;
use race_core::metrics::{binary_auroc, binary_tpr_at_fpr, macro_auroc, ScoreTable};
use race_core::model::{forward_contents, rgcn_forward, Activation, Dropout, LayerParams, ModelParams};
use race_core::objectives::{supcon_loss_grad, Batch};
use race_core::optim::{AdamW, AdamWConfig};
use race_core::rng::SeededRng;
use race_core::rst::{load_tree, RstTree};
use race_core::segment::fallback_segment;
use race_core::synth::random_tree;
use race_core::train::{batch_loss_grad, Example};
use race_core::RelationLabel;

fn tree(seed: u64, leaves: usize) -> RstTree {
    let mut rng = SeededRng::new(seed);
    random_tree("p", leaves, &mut rng, |r| RelationLabel::ALL[r.below(18)]).unwrap()
}

fn corpus(seed: u64, n: usize) -> Vec<Record> {
    let mut rng = SeededRng::new(seed);
    (0..n)
        .map(|i| {
            let g = rng.below(n / 3 + 1);
            Record {
                id: format!("r{i}"),
                text: String::new(),
                domain: Domain::ALL[rng.below(4)],
                label: Label::ALL[rng.below(4)],
                group_id: format!("g{g}"),
                content_source: String::new(),
                language_source: String::new(),
            }
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn tree_round_trip(seed in any::<u64>(), leaves in 1usize..30) {
        let t = tree(seed, leaves);
        prop_assert_eq!(load_tree(t.to_record()).unwrap(), t.clone());
        prop_assert_eq!(t.internals().len(), t.edus().len() - 1);
        prop_assert_eq!(t.relation_frequency_vector().iter().sum::<u32>() as usize, leaves - 1);
    }

    #[test]
    fn fallback_is_pure(words in proptest::collection::vec("[a-z]{1,8}[.!?]?", 1..40)) {
        let text = words.join(" ");
        let a = fallback_segment("d", &text);
        let b = fallback_segment("d", &text);
        prop_assert_eq!(a, b);
    }

    #[test]
    fn graph_counts_and_descendants(seed in any::<u64>(), leaves in 1usize..25) {
        let t = tree(seed, leaves);
        let g = build_graph(&t).unwrap();
        prop_assert_eq!(g.num_nodes(), 2 * leaves - 1);
        prop_assert_eq!(g.edges().len(), 4 * (leaves - 1));
        prop_assert!(g.edges().iter().all(|e| e.src != e.dst && e.relation < 36));
        prop_assert_eq!(descendants(&g, g.root()).unwrap().len(), leaves);
        for v in 0..g.num_nodes() {
            let kids = g.children(v);
            if kids.is_empty() {
                continue;
            }
            let a: BTreeSet<usize> = descendants(&g, kids[0]).unwrap().into_iter().collect();
            let b: BTreeSet<usize> = descendants(&g, kids[1]).unwrap().into_iter().collect();
            prop_assert!(a.is_disjoint(&b));
            let union: Vec<usize> = a.union(&b).copied().collect();
            prop_assert_eq!(union, descendants(&g, v).unwrap());
        }
    }

    #[test]
    fn graph_ignores_raw_ids(seed in any::<u64>(), leaves in 1usize..20, offset in 1usize..1000) {
        let t = tree(seed, leaves);
        let n = t.num_nodes();
        // reverse ids and shift them
        let relabeled = t.relabel(|id| offset + (n - 1 - id) * 3).unwrap();
        let a = serde_json::to_string(&build_graph(&t).unwrap()).unwrap();
        let b = serde_json::to_string(&build_graph(&relabeled).unwrap()).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn alignment_total_and_disjoint(seed in any::<u64>(), leaves in 1usize..20) {
        let t = tree(seed, leaves);
        let emb = mock_embed(t.document(), 4, seed).unwrap();
        let al = align_spans(&t, &emb).unwrap();
        prop_assert_eq!(al.ranges.len(), leaves);
        let mut seen = vec![0; emb.num_tokens()];
        for &(a, b) in &al.ranges {
            prop_assert!(a <= b);
            for k in a..=b {
                seen[k] += 1;
            }
        }
        prop_assert!(seen.iter().all(|&c| c <= 1));
    }

    #[test]
    fn splits_partition_and_are_deterministic(seed in any::<u64>(), n in 4usize..120) {
        let recs = corpus(seed, n);
        let ids: BTreeSet<&str> = recs.iter().map(|r| r.id.as_str()).collect();
        let r = SplitRatios::HART;
        for split in [
            stratified_split(&recs, r, seed).unwrap(),
            group_aware_split(&recs, r, seed).unwrap(),
            leave_one_domain_out(&recs, Domain::News, seed).unwrap(),
        ] {
            let assigned: BTreeSet<&str> = split.assignment.keys().map(|s| s.as_str()).collect();
            prop_assert_eq!(&assigned, &ids);
            prop_assert_eq!(Partition::ALL.iter().map(|&p| split.count(p)).sum::<usize>(), n);
        }
        prop_assert_eq!(stratified_split(&recs, r, seed).unwrap(), stratified_split(&recs, r, seed).unwrap());
        prop_assert_eq!(group_aware_split(&recs, r, seed).unwrap(), group_aware_split(&recs, r, seed).unwrap());

        let g = group_aware_split(&recs, r, seed).unwrap();
        for a in &recs {
            for b in &recs {
                if a.group_id == b.group_id {
                    prop_assert_eq!(g.get(&a.id), g.get(&b.id));
                }
            }
        }
        let s = stratified_split(&recs, r, seed).unwrap();
        for d in Domain::ALL {
            for l in Label::ALL {
                let cell: Vec<&Record> = recs.iter().filter(|x| x.domain == d && x.label == l).collect();
                let m = cell.len() as f64;
                for (k, ratio) in [r.train, r.val, r.test].iter().enumerate() {
                    let got = cell.iter().filter(|x| s.get(&x.id) == Some(Partition::ALL[k])).count() as f64;
                    prop_assert!((got - ratio * m).abs() <= 1.0);
                }
            }
        }
    }

    #[test]
    fn allocation_sums(n in 0usize..100_000) {
        prop_assert_eq!(allocate(n, &SplitRatios::HART).iter().sum::<usize>(), n);
    }

    #[test]
    fn permutation_equivariance(seed in any::<u64>()) {
        let mut rng = SeededRng::new(seed);
        let g = random_graph(&mut rng, 12, 36);
        let layer = random_layer(4, 3, g.num_relations(), 3, &mut rng);
        let h = random_mat(g.num_nodes(), 4, &mut rng);
        let mut perm: Vec<usize> = (0..g.num_nodes()).collect();
        rng.shuffle(&mut perm);
        let mut hp = Mat::zeros(h.rows(), h.cols());
        for (i, &p) in perm.iter().enumerate() {
            hp.row_mut(p).copy_from_slice(h.row(i));
        }
        let out = rgcn_forward(&g, &h, &layer, Activation::Relu).unwrap();
        let outp = rgcn_forward(&g.permuted(&perm), &hp, &layer, Activation::Relu).unwrap();
        for (i, &p) in perm.iter().enumerate() {
            for (a, b) in out.row(i).iter().zip(outp.row(p)) {
                prop_assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn one_hot_bases_equal_free_weights(seed in any::<u64>()) {
        let mut rng = SeededRng::new(seed);
        let g = random_graph(&mut rng, 10, 8);
        let r = g.num_relations();
        let free: Vec<Mat> = (0..r).map(|_| random_mat(3, 2, &mut rng)).collect();
        let layer = LayerParams { bases: free.clone(), coeffs: Mat::identity(r), self_weight: random_mat(3, 2, &mut rng) };
        let h = random_mat(g.num_nodes(), 3, &mut rng);
        let got = rgcn_forward(&g, &h, &layer, Activation::Identity).unwrap();
        // unconstrained reference: message per edge with its own W_r
        let mut want = h.matmul(&layer.self_weight);
        for e in g.edges() {
            let deg = g.edges().iter().filter(|f| f.dst == e.dst && f.relation == e.relation).count() as f64;
            for b in 0..2 {
                let m: f64 = (0..3).map(|a| h[(e.src, a)] * free[e.relation][(a, b)]).sum();
                want[(e.dst, b)] += m / deg;
            }
        }
        prop_assert!(got.max_abs_diff(&want) < 1e-10);
    }

    #[test]
    fn eval_forward_is_bitwise_deterministic(seed in any::<u64>(), leaves in 1usize..12) {
        let t = tree(seed, leaves);
        let cfg = tiny_config(Activation::Relu);
        let p = ModelParams::init(&cfg, seed).unwrap();
        let emb = mock_embed(t.document(), cfg.d_plm, 0).unwrap();
        let ex = Example::new("x", Label::HumanWritten, build_graph(&t).unwrap(), &emb, &align_spans(&t, &emb).unwrap()).unwrap();
        let a = forward_contents(&ex.graph, &ex.contents, &p, &cfg, &mut Dropout::Off).unwrap().0;
        let b = forward_contents(&ex.graph, &ex.contents, &p, &cfg, &mut Dropout::Off).unwrap().0;
        prop_assert_eq!(a.probs.iter().map(|x| x.to_bits()).collect::<Vec<_>>(), b.probs.iter().map(|x| x.to_bits()).collect::<Vec<_>>());
    }

    #[test]
    fn supcon_properties(seed in any::<u64>(), n in 2usize..12, scale in 0.01f64..100.0) {
        let mut rng = SeededRng::new(seed);
        let emb = random_mat(n, 3, &mut rng);
        let labels: Vec<usize> = (0..n).map(|_| rng.below(3)).collect();
        let (l, _) = supcon_loss_grad(&emb, &labels, 0.07).unwrap();
        prop_assert!(l >= 0.0);
        let mut scaled = emb.clone();
        scaled.scale(scale);
        prop_assert!((supcon_loss_grad(&scaled, &labels, 0.07).unwrap().0 - l).abs() < 1e-9 * (1.0 + l));
        let mut perm: Vec<usize> = (0..n).collect();
        rng.shuffle(&mut perm);
        let pe = Mat::from_rows(&perm.iter().map(|&i| emb.row(i).to_vec()).collect::<Vec<_>>());
        let pl: Vec<usize> = perm.iter().map(|&i| labels[i]).collect();
        prop_assert!((supcon_loss_grad(&pe, &pl, 0.07).unwrap().0 - l).abs() < 1e-9 * (1.0 + l));
    }

    #[test]
    fn auroc_invariant_under_monotone_maps(seed in any::<u64>(), n in 4usize..60) {
        let mut rng = SeededRng::new(seed);
        let s: Vec<f64> = (0..n).map(|_| rng.uniform()).collect();
        let mut t: Vec<bool> = (0..n).map(|_| rng.uniform() < 0.5).collect();
        t[0] = true;
        t[1] = false;
        let base = binary_auroc(&s, &t).unwrap();
        let cube: Vec<f64> = s.iter().map(|x| (x - 0.5).powi(3)).collect();
        let logit: Vec<f64> = s.iter().map(|x| (x / (1.0 - x)).ln() + 3.0).collect();
        prop_assert_eq!(binary_auroc(&cube, &t).unwrap(), base);
        prop_assert_eq!(binary_auroc(&logit, &t).unwrap(), base);
    }

    #[test]
    fn tpr_monotone_and_minimal(seed in any::<u64>(), n in 4usize..80) {
        let mut rng = SeededRng::new(seed);
        let s: Vec<f64> = (0..n).map(|_| (rng.uniform() * 20.0).floor()).collect();
        let mut t: Vec<bool> = (0..n).map(|_| rng.uniform() < 0.5).collect();
        t[0] = true;
        t[1] = false;
        let mut prev = 0.0;
        for cap in [0.0, 0.01, 0.05, 0.1, 0.3, 0.6, 1.0] {
            let p = binary_tpr_at_fpr(&s, &t, cap).unwrap();
            prop_assert!(p.tpr >= prev);
            prev = p.tpr;
            prop_assert!(p.fpr <= cap);
            // next-lower candidate breaks the cap
            let lower = s.iter().copied().filter(|&x| x < p.threshold).fold(f64::NEG_INFINITY, f64::max);
            if lower.is_finite() {
                let neg = t.iter().filter(|&&y| !y).count() as f64;
                let fp = s.iter().zip(&t).filter(|(&x, &y)| !y && x >= lower).count() as f64;
                prop_assert!(fp / neg > cap);
            }
        }
    }

    #[test]
    fn cosine_scale_invariant_and_symmetric(seed in any::<u64>(), k in 1u32..50) {
        let mut rng = SeededRng::new(seed);
        let mut a = [0u32; 18];
        let mut b = [0u32; 18];
        for j in 0..18 {
            a[j] = rng.below(5) as u32;
            b[j] = rng.below(5) as u32;
        }
        a[0] += 1;
        b[1] += 1;
        let ka = a.map(|x| x * k);
        let c = cosine(&a, &b).unwrap();
        prop_assert!((cosine(&ka, &b).unwrap() - c).abs() < 1e-12);
        let docs = vec![
            RelationDoc { id: "x".into(), group_id: "g".into(), label: Label::HumanWritten, counts: a },
            RelationDoc { id: "y".into(), group_id: "g".into(), label: Label::LlmPolished, counts: b },
        ];
        let ab = pairwise_cosine(Label::HumanWritten, Label::LlmPolished, &docs).unwrap();
        let ba = pairwise_cosine(Label::LlmPolished, Label::HumanWritten, &docs).unwrap();
        prop_assert!((ab.mean - ba.mean).abs() < 1e-15);
    }

    #[test]
    fn balanced_z_columns_sum_to_zero(seed in any::<u64>(), per_class in 1usize..8) {
        let mut rng = SeededRng::new(seed);
        let mut docs = Vec::new();
        for l in Label::ALL {
            for i in 0..per_class {
                let mut counts = [0u32; 18];
                for _ in 0..(1 + rng.below(8)) {
                    counts[rng.below(18)] += 1;
                }
                docs.push(RelationDoc { id: format!("{l}{i}"), group_id: format!("{i}"), label: l, counts });
            }
        }
        let p = zscore_profile(&docs).unwrap();
        for j in 0..18 {
            let s: f64 = (0..4).map(|k| p.z[k][j]).sum();
            prop_assert!(s.abs() < 1e-9);
        }
    }
}

#[test]
fn shuffled_labels_give_chance_auroc() {
    let mut rng = SeededRng::new(99);
    let n = 200;
    let probs = Mat::from_vec(n, 4, (0..n * 4).map(|_| rng.uniform()).collect());
    let mut labels: Vec<usize> = (0..n).map(|i| i % 4).collect();
    let mut total = 0.0;
    for _ in 0..200 {
        rng.shuffle(&mut labels);
        total += macro_auroc(&ScoreTable::new(probs.clone(), labels.clone()).unwrap()).unwrap();
    }
    assert!((total / 200.0 - 0.5).abs() < 0.05);
}

#[test]
fn supcon_decreases_with_separation() {
    let labels = [0, 0, 1, 1, 2, 2];
    let mut prev = f64::INFINITY;
    for spread in [0.0, 0.2, 0.5, 1.0, 2.0, 5.0] {
        // class centres on the axes, within-class jitter shrinking relative to them
        let rows: Vec<Vec<f64>> = labels
            .iter()
            .enumerate()
            .map(|(i, &c)| {
                let mut v = vec![0.3, 0.3, 0.3];
                v[c] += spread;
                v[(c + 1) % 3] += if i % 2 == 0 { 0.05 } else { -0.05 };
                v
            })
            .collect();
        let b = Batch::new(Mat::from_rows(&rows), Mat::from_rows(&vec![vec![0.25; 4]; 6]), labels.to_vec()).unwrap();
        let (l, _) = supcon_loss_grad(&b.embeddings, &b.labels, 0.07).unwrap();
        assert!(l < prev, "spread {spread}: {l} !< {prev}");
        prev = l;
    }
}

#[test]
fn small_lr_descends_for_five_steps() {
    let cfg = tiny_config(Activation::Relu);
    let mut rng = SeededRng::new(1);
    let examples: Vec<Example> = (0..6)
        .map(|i| {
            let t = random_tree(&format!("d{i}"), 3 + i, &mut rng, |r| RelationLabel::ALL[r.below(18)]).unwrap();
            let emb = mock_embed(t.document(), cfg.d_plm, i as u64).unwrap();
            Example::new(t.doc_id(), Label::ALL[i % 3], build_graph(&t).unwrap(), &emb, &align_spans(&t, &emb).unwrap()).unwrap()
        })
        .collect();
    let refs: Vec<&Example> = examples.iter().collect();
    let mut params = ModelParams::init(&cfg, 3).unwrap();
    let mut opt = AdamW::new(AdamWConfig { learning_rate: 1e-4, weight_decay: 0.0, ..AdamWConfig::default() }, &params);
    let mut prev = f64::INFINITY;
    for step in 0..5 {
        let (l, g) = batch_loss_grad(&refs, &params, &cfg, &mut Dropout::Off).unwrap();
        assert!(l < prev, "step {step}: {l} !< {prev}");
        prev = l;
        opt.step(&mut params, &g);
    }
}

#[test]
fn relabel_then_load_is_identity() {
    let t = tree(5, 9);
    let r = t.relabel(|id| id + 100).unwrap();
    assert_eq!(load_tree(r.to_record()).unwrap(), r);
}
