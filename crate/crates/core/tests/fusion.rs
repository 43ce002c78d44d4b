//! Alignment, context vectors, fused representations and classifier heads.

mod common;

use common::{random_tensor, rng};
use fusionet_core::autodiff::{Graph, Var};
use fusionet_core::fusion::{
    align, context_vectors, fuse, predicted_class, AlignmentParams, BaselineHead, Classifier, ContextVectors,
    FusionKind,
};
use fusionet_core::params::ParamSet;
use fusionet_core::{Error, Tensor};
use rand::Rng;

const D: usize = 100;
const TWO_N: usize = 100;
const L: usize = 60;
const A: usize = 100;

fn alignment_params(a: usize) -> (ParamSet<f64>, AlignmentParams) {
    let mut params = ParamSet::new();
    let p = AlignmentParams::init(&mut params, D, TWO_N, a, &mut rng(11));
    (params, p)
}

fn values(g: &Graph<'_, f64>, v: Var) -> Vec<f64> {
    g.value(v).data().to_vec()
}

fn row(t: &Tensor<f64>, r: usize) -> &[f64] {
    let cols = t.shape()[1];
    &t.data()[r * cols..(r + 1) * cols]
}

/// Alignment weights for the given features, evaluated through the graph.
fn alpha_of(params: &ParamSet<f64>, p: &AlignmentParams, visual: &Tensor<f64>, words: &Tensor<f64>) -> Vec<f64> {
    let mut g = Graph::new();
    let b = params.bind(&mut g);
    let (v, w) = (g.constant(visual.clone()), g.constant(words.clone()));
    let al = align(&mut g, &b, p, v, w, None).unwrap();
    values(&g, al.alpha)
}

#[test]
fn zero_score_vector_gives_uniform_weights() {
    let (mut params, p) = alignment_params(A);
    params.get_mut(p.v).data_mut().fill(0.0);
    let mut r = rng(12);
    let alpha = alpha_of(
        &params,
        &p,
        &random_tensor(&mut r, &[1, D], 0.0, 1.0),
        &random_tensor(&mut r, &[L, TWO_N], -1.0, 1.0),
    );
    assert_eq!(alpha.len(), L);
    for a in alpha {
        assert!((a - 1.0 / 60.0).abs() < 1e-12);
    }
}

#[test]
fn weights_follow_a_permutation_of_positions() {
    let (params, p) = alignment_params(A);
    let mut r = rng(13);
    let visual = random_tensor(&mut r, &[1, D], 0.0, 1.0);
    let words = random_tensor(&mut r, &[L, TWO_N], -1.0, 1.0);
    let perm: Vec<usize> = (0..L).map(|j| (j * 7 + 3) % L).collect();
    let mut shuffled = Vec::new();
    for &j in &perm {
        shuffled.extend_from_slice(row(&words, j));
    }
    let shuffled = Tensor::new(vec![L, TWO_N], shuffled).unwrap();
    let a = alpha_of(&params, &p, &visual, &words);
    let b = alpha_of(&params, &p, &visual, &shuffled);
    for (k, &j) in perm.iter().enumerate() {
        assert!((b[k] - a[j]).abs() < 1e-14);
    }
}

#[test]
fn weights_match_direct_evaluation_and_peak_at_the_aligned_word() {
    // Small crafted case: W1 = W2 = I, v = 1, so score_j = Σ tanh(V_f + h_j).
    let (d, w, l, a) = (3, 3, 5, 3);
    let mut params = ParamSet::new();
    let p = AlignmentParams::init(&mut params, d, w, a, &mut rng(14));
    *params.get_mut(p.w_visual) = Tensor::eye(3);
    *params.get_mut(p.w_text) = Tensor::eye(3);
    *params.get_mut(p.v) = Tensor::ones(&[3, 1]);
    let visual = Tensor::row(vec![0.2, 0.1, 0.3]);
    let star = 3;
    let mut words = vec![-0.5; l * w];
    words[star * w..(star + 1) * w].copy_from_slice(&[0.9, 0.8, 0.7]);
    words[w..2 * w].copy_from_slice(&[0.1, 0.0, -0.1]);
    let words = Tensor::new(vec![l, w], words).unwrap();

    let alpha = alpha_of(&params, &p, &visual, &words);
    let scores: Vec<f64> = (0..l)
        .map(|j| (0..w).map(|k| (visual.data()[k] + row(&words, j)[k]).tanh()).sum())
        .collect();
    let z: f64 = scores.iter().map(|s| s.exp()).sum();
    for j in 0..l {
        assert!((alpha[j] - scores[j].exp() / z).abs() < 1e-14);
    }
    let best = (0..l).max_by(|&i, &j| alpha[i].total_cmp(&alpha[j])).unwrap();
    assert_eq!(best, star);
}

#[test]
fn visual_context_equals_visual_feature_in_single_precision() {
    let mut params = ParamSet::<f32>::new();
    let p = AlignmentParams::init(&mut params, D, TWO_N, A, &mut rng(15));
    let mut r = rng(16);
    for _ in 0..100 {
        let visual = random_tensor(&mut r, &[1, D], 0.0, 1.0).cast::<f32>();
        let words = random_tensor(&mut r, &[L, TWO_N], -1.0, 1.0).cast::<f32>();
        let mut g = Graph::new();
        let b = params.bind(&mut g);
        let (v, w) = (g.constant(visual.clone()), g.constant(words));
        let al = align(&mut g, &b, &p, v, w, None).unwrap();
        let ctx = context_vectors(&mut g, al.alpha, v, w).unwrap();
        assert!(g.value(ctx.visual).max_abs_diff(&visual).unwrap() < 1e-6);
    }
}

fn context_for(alpha: Vec<f64>, words: &Tensor<f64>) -> Vec<f64> {
    let mut g = Graph::new();
    let a = g.constant(Tensor::row(alpha));
    let v = g.constant(Tensor::zeros(&[1, 4]));
    let w = g.constant(words.clone());
    let ctx = context_vectors(&mut g, a, v, w).unwrap();
    values(&g, ctx.text)
}

#[test]
fn text_context_picks_or_averages_word_features() {
    let words = random_tensor(&mut rng(17), &[L, 6], -1.0, 1.0);
    let mut one_hot = vec![0.0; L];
    one_hot[17] = 1.0;
    assert_eq!(context_for(one_hot, &words), row(&words, 17));

    let mean = context_for(vec![1.0 / L as f64; L], &words);
    for (k, m) in mean.iter().enumerate() {
        let direct: f64 = (0..L).map(|j| row(&words, j)[k]).sum::<f64>() / L as f64;
        assert!((m - direct).abs() < 1e-14);
    }
}

#[test]
fn context_vectors_reject_mismatched_weights() {
    let mut g = Graph::<f64>::new();
    let a = g.constant(Tensor::row(vec![0.5, 0.5]));
    let v = g.constant(Tensor::zeros(&[1, 4]));
    let w = g.constant(Tensor::zeros(&[3, 6]));
    assert!(matches!(context_vectors(&mut g, a, v, w), Err(Error::Dimension { .. })));
}

#[test]
fn fused_widths_and_part_offsets() {
    let mut g = Graph::<f64>::new();
    let part = |g: &mut Graph<'_, f64>, value: f64| g.constant(Tensor::full(&[1, 100], value));
    let ctx = ContextVectors {
        visual: part(&mut g, 1.0),
        text: part(&mut g, 2.0),
    };
    let (visual, sentence) = (part(&mut g, 3.0), part(&mut g, 4.0));
    let cases = [
        (FusionKind::McaScf, vec![1.0, 2.0, 3.0, 4.0]),
        (FusionKind::Vgcf, vec![1.0, 4.0]),
        (FusionKind::Tgcf, vec![2.0, 3.0]),
        (FusionKind::Mcf, vec![1.0, 2.0]),
    ];
    for (kind, parts) in cases {
        let fused = fuse(&mut g, kind, &ctx, visual, sentence).unwrap();
        assert_eq!(g.shape(fused), [1, 100 * parts.len()]);
        assert_eq!(kind.fused_width(100, 100), 100 * parts.len());
        for (i, want) in parts.into_iter().enumerate() {
            let s = g.slice_cols(fused, 100 * i, 100).unwrap();
            assert!(g.value(s).data().iter().all(|&x| x == want), "{kind} part {i}");
        }
    }
    assert!(fuse(&mut g, FusionKind::Early, &ctx, visual, sentence).is_err());
}

fn baseline(kind: FusionKind) -> (ParamSet<f64>, BaselineHead) {
    let mut params = ParamSet::new();
    let head = BaselineHead::init(&mut params, kind, D, TWO_N, A, &mut rng(18)).unwrap();
    (params, head)
}

#[test]
fn early_fusion_joint_width() {
    let (params, head) = baseline(FusionKind::Early);
    let mut g = Graph::new();
    let b = params.bind(&mut g);
    let mut r = rng(19);
    let v = g.constant(random_tensor(&mut r, &[1, D], 0.0, 1.0));
    let t = g.constant(random_tensor(&mut r, &[1, TWO_N], -1.0, 1.0));
    let out = head.forward(&mut g, &b, Some(v), Some(t)).unwrap();
    assert_eq!(g.shape(out.joint.unwrap()), [1, 200]);
    assert_eq!(FusionKind::Early.fused_width(D, TWO_N), 200);
}

#[test]
fn late_fusion_with_matching_branches_keeps_their_scores() {
    let (mut params, head) = baseline(FusionKind::Late);
    let BaselineHead::Late { visual, text } = head else {
        unreachable!()
    };
    let w = random_tensor(&mut rng(20), &[D, 2], -0.2, 0.2);
    *params.get_mut(visual.dense.weight) = w.clone();
    *params.get_mut(text.dense.weight) = w;
    let x = random_tensor(&mut rng(21), &[1, D], -1.0, 1.0);
    let mut g = Graph::new();
    let b = params.bind(&mut g);
    let (v, t) = (g.constant(x.clone()), g.constant(x));
    let out = head.forward(&mut g, &b, Some(v), Some(t)).unwrap();
    let single = visual.classify(&mut g, &b, v).unwrap();
    assert!(g.value(out.probs).max_abs_diff(g.value(single)).unwrap() < 1e-15);
}

#[test]
fn attentive_fusion_with_zero_attention_averages_the_branches() {
    let (mut params, head) = baseline(FusionKind::Attentive);
    let BaselineHead::Attentive { attention, .. } = head else {
        unreachable!()
    };
    for id in [attention.w, attention.query, attention.v] {
        params.get_mut(id).data_mut().fill(0.0);
    }
    let mut g = Graph::new();
    let b = params.bind(&mut g);
    let mut r = rng(22);
    let v = g.constant(random_tensor(&mut r, &[1, D], 0.0, 1.0));
    let t = g.constant(random_tensor(&mut r, &[1, TWO_N], -1.0, 1.0));
    let out = head.forward(&mut g, &b, Some(v), Some(t)).unwrap();
    assert_eq!(values(&g, out.attention.unwrap()), [0.5, 0.5]);
    // Recompute the two projected branches and compare with their mean.
    let BaselineHead::Attentive {
        visual: dv, text: dt, ..
    } = head
    else {
        unreachable!()
    };
    let pv = dv.apply(&mut g, &b, v).unwrap();
    let pv = g.relu(pv).unwrap();
    let pt = dt.apply(&mut g, &b, t).unwrap();
    let pt = g.relu(pt).unwrap();
    let (pv, pt, pooled) = (values(&g, pv), values(&g, pt), values(&g, out.joint.unwrap()));
    for k in 0..D {
        assert!((pooled[k] - 0.5 * (pv[k] + pt[k])).abs() < 1e-14);
    }
}

#[test]
fn baseline_heads_need_their_branches() {
    let (params, head) = baseline(FusionKind::Late);
    let mut g = Graph::new();
    let b = params.bind(&mut g);
    let v = g.constant(Tensor::zeros(&[1, D]));
    assert!(matches!(head.forward(&mut g, &b, Some(v), None), Err(Error::Config(_))));
    let mut params = ParamSet::<f64>::new();
    assert!(BaselineHead::init(&mut params, FusionKind::McaScf, D, TWO_N, A, &mut rng(0)).is_err());
}

fn classifier(inputs: usize) -> (ParamSet<f64>, Classifier) {
    let mut params = ParamSet::new();
    let c = Classifier::init(&mut params, "head", inputs, &mut rng(23));
    (params, c)
}

#[test]
fn zero_classifier_is_undecided_and_ties_go_to_class_zero() {
    let (mut params, c) = classifier(400);
    params.get_mut(c.dense.weight).data_mut().fill(0.0);
    let mut g = Graph::new();
    let b = params.bind(&mut g);
    let x = g.constant(random_tensor(&mut rng(24), &[1, 400], -1.0, 1.0));
    let probs = c.classify(&mut g, &b, x).unwrap();
    let p = values(&g, probs);
    assert_eq!(p, [0.5, 0.5]);
    assert_eq!(predicted_class(&p), 0);
    assert_eq!(predicted_class(&[0.4, 0.6]), 1);
}

#[test]
fn class_probabilities_are_normalised() {
    let (params, c) = classifier(400);
    let mut r = rng(25);
    for _ in 0..100 {
        let mut g = Graph::new();
        let b = params.bind(&mut g);
        let x = g.constant(random_tensor(&mut r, &[1, 400], -5.0, 5.0));
        let probs = c.classify(&mut g, &b, x).unwrap();
        let p = values(&g, probs);
        assert!(p.iter().all(|&q| (0.0..=1.0).contains(&q)));
        assert!((p[0] + p[1] - 1.0).abs() < 1e-12);
    }
}

#[test]
fn adding_a_constant_to_both_logits_leaves_probabilities_unchanged() {
    let (mut params, c) = classifier(10);
    let x = Tensor::row((0..10).map(|i| i as f64 / 10.0).collect());
    let run = |params: &ParamSet<f64>| {
        let mut g = Graph::new();
        let b = params.bind(&mut g);
        let xv = g.constant(x.clone());
        let probs = c.classify(&mut g, &b, xv).unwrap();
        values(&g, probs)
    };
    let before = run(&params);
    params
        .get_mut(c.dense.bias)
        .data_mut()
        .iter_mut()
        .for_each(|b| *b += 37.5);
    let after = run(&params);
    assert!((before[0] - after[0]).abs() < 1e-12);
}

#[test]
fn reordering_word_positions_keeps_the_text_context_and_prediction() {
    let (params, p) = alignment_params(A);
    let mut head_params = params.clone();
    let c = Classifier::init(&mut head_params, "head", 400, &mut rng(26));
    let mut r = rng(27);
    let visual = random_tensor(&mut r, &[1, D], 0.0, 1.0);
    let sentence = random_tensor(&mut r, &[1, TWO_N], -1.0, 1.0);
    let words = random_tensor(&mut r, &[L, TWO_N], -1.0, 1.0);
    let reversed: Vec<f64> = (0..L).rev().flat_map(|j| row(&words, j).to_vec()).collect();
    let reversed = Tensor::new(vec![L, TWO_N], reversed).unwrap();
    let run = |words: &Tensor<f64>| {
        let mut g = Graph::new();
        let b = head_params.bind(&mut g);
        let (v, w, s) = (
            g.constant(visual.clone()),
            g.constant(words.clone()),
            g.constant(sentence.clone()),
        );
        let al = align(&mut g, &b, &p, v, w, None).unwrap();
        let ctx = context_vectors(&mut g, al.alpha, v, w).unwrap();
        let fused = fuse(&mut g, FusionKind::McaScf, &ctx, v, s).unwrap();
        let probs = c.classify(&mut g, &b, fused).unwrap();
        (values(&g, ctx.text), values(&g, probs))
    };
    let (ct_a, p_a) = run(&words);
    let (ct_b, p_b) = run(&reversed);
    for (x, y) in ct_a.iter().zip(&ct_b).chain(p_a.iter().zip(&p_b)) {
        assert!((x - y).abs() < 1e-12);
    }
}

#[test]
fn dimension_errors_name_the_operand() {
    let (params, p) = alignment_params(A);
    let mut g = Graph::new();
    let b = params.bind(&mut g);
    let v = g.constant(Tensor::zeros(&[1, D + 1]));
    let w = g.constant(Tensor::zeros(&[L, TWO_N]));
    let err = align(&mut g, &b, &p, v, w, None).unwrap_err();
    assert!(err.to_string().contains("V_f"), "{err}");
    let v = g.constant(Tensor::zeros(&[1, D]));
    let w = g.constant(Tensor::zeros(&[L, TWO_N - 1]));
    let err = align(&mut g, &b, &p, v, w, None).unwrap_err();
    assert!(err.to_string().contains("word features"), "{err}");

    let (params, c) = classifier(400);
    let mut g = Graph::new();
    let b = params.bind(&mut g);
    let x = g.constant(Tensor::zeros(&[1, 200]));
    let err = c.classify(&mut g, &b, x).unwrap_err();
    assert!(err.to_string().contains("fused representation"), "{err}");
}

#[test]
fn fusion_kinds_parse_by_name() {
    for kind in FusionKind::ALL {
        assert_eq!(kind.as_str().parse::<FusionKind>().unwrap(), kind);
    }
    assert!(matches!("gated".parse::<FusionKind>(), Err(Error::UnknownFusionKind(s)) if s == "gated"));
}

#[test]
fn masked_positions_get_no_weight() {
    let (params, p) = alignment_params(A);
    let mut r = rng(28);
    let mut g = Graph::new();
    let b = params.bind(&mut g);
    let v = g.constant(random_tensor(&mut r, &[1, D], 0.0, 1.0));
    let w = g.constant(random_tensor(&mut r, &[L, TWO_N], -1.0, 1.0));
    let mask: Vec<bool> = (0..L).map(|_| r.random_bool(0.5)).collect();
    let al = align(&mut g, &b, &p, v, w, Some(&mask)).unwrap();
    let alpha = values(&g, al.alpha);
    for (a, m) in alpha.iter().zip(&mask) {
        if *m {
            assert_eq!(*a, 0.0);
        }
    }
    assert!((alpha.iter().sum::<f64>() - 1.0).abs() < 1e-12);
}
