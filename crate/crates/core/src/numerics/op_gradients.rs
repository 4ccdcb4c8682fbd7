//! Finite-difference checks of every tape operation.

use super::*;
use crate::rng::rng_for;

fn rand_tensor(seed: &str, shape: &[usize]) -> Tensor {
    let mut rng = rng_for(11, seed);
    uniform(&mut rng, shape.to_vec(), 1.0)
}

/// Contracts `y` with a fixed random tensor so every output element matters.
fn probe<'t>(ctx: &ForwardCtx<'t, '_>, y: Var<'t>, label: &str) -> Var<'t> {
    let w = ctx.constant(rand_tensor(label, &y.shape()));
    (y * w).sum()
}

fn check<F>(store: &ParamStore, mode: Mode, f: F)
where
    F: for<'t, 's> Fn(&ForwardCtx<'t, 's>) -> crate::Result<Var<'t>>,
{
    let report = grad_check(store, mode, 1e-5, 1e-4, f).unwrap();
    assert!(report.passed, "{:?}", report.worst());
}

#[test]
fn elementwise_and_linear_ops() {
    let mut s = ParamStore::new();
    let a = s.add("a", rand_tensor("a", &[3, 4]));
    let b = s.add("b", rand_tensor("b", &[3, 4]));
    let w = s.add("w", rand_tensor("w", &[4, 2]));
    let r = s.add("r", rand_tensor("r", &[2]));
    let c = s.add("c", rand_tensor("c", &[3, 1]));
    check(&s, Mode::Eval, |ctx| {
        let (a, b) = (ctx.param(a), ctx.param(b));
        let h = (a * b - a + b.scale(0.3)).silu();
        let y = h.matmul(ctx.param(w)).add_row(ctx.param(r)).mul_col(ctx.param(c));
        Ok(probe(ctx, y.transpose().reshape([6, 1]), "p1") + (-y).mean())
    });
}

#[test]
fn softmax_family() {
    let mut s = ParamStore::new();
    let a = s.add("a", rand_tensor("sa", &[3, 5]));
    check(&s, Mode::Eval, |ctx| {
        let x = ctx.param(a).scale(2.0);
        Ok(probe(ctx, x.softmax_rows(), "p2") + probe(ctx, x.log_softmax_rows(), "p3"))
    });
}

#[test]
fn row_indexing_ops() {
    let mut s = ParamStore::new();
    let a = s.add("a", rand_tensor("ga", &[4, 3]));
    let b = s.add("b", rand_tensor("gb", &[2, 3]));
    let c = s.add("c", rand_tensor("gc", &[4, 2]));
    check(&s, Mode::Eval, |ctx| {
        let (a, b, c) = (ctx.param(a), ctx.param(b), ctx.param(c));
        let g = a.gather_rows(vec![3, 0, 0, 2, 1]);
        let sc = g.scatter_add_rows(vec![1, 1, 0, 2, 0], 3);
        let stacked = ctx.tape.concat_rows(&[sc, b]);
        let wide = ctx.tape.concat_cols(&[a, c]);
        Ok(probe(ctx, stacked, "p4") + probe(ctx, wide, "p5"))
    });
}

#[test]
fn batch_norm_both_modes() {
    let mut s = ParamStore::new();
    let x = s.add("x", rand_tensor("bx", &[5, 3]));
    let bn = BatchNorm::new(&mut s, "bn", 3);
    for (id, v) in [(bn.gamma, "bg"), (bn.beta, "bb")] {
        *s.value_mut(id) = rand_tensor(v, &[3]);
    }
    *s.value_mut(bn.running_var) = Tensor::new([3], vec![0.5, 1.5, 2.0]).unwrap();
    for mode in [Mode::Train, Mode::Eval] {
        check(&s, mode, |ctx| {
            let y = bn.forward(ctx, ctx.param(x));
            Ok(probe(ctx, y, "p6"))
        });
    }
}

#[test]
fn fused_attention() {
    let layout = AttentionLayout {
        groups: 2,
        seq: 3,
        heads: 2,
        key_width: 2,
        value_width: 3,
    };
    let mut s = ParamStore::new();
    let q = s.add("q", rand_tensor("aq", &[6, 4]));
    let k = s.add("k", rand_tensor("ak", &[6, 4]));
    let v = s.add("v", rand_tensor("av", &[6, 6]));
    check(&s, Mode::Eval, |ctx| {
        let y = ctx.param(q).attention(ctx.param(k), ctx.param(v), layout);
        Ok(probe(ctx, y, "p7"))
    });
}

#[test]
fn fused_attention_matches_composed_ops() {
    let (seq, dk, dv) = (4, 3, 2);
    let layout = AttentionLayout {
        groups: 2,
        seq,
        heads: 1,
        key_width: dk,
        value_width: dv,
    };
    let q = rand_tensor("cq", &[2 * seq, dk]);
    let k = rand_tensor("ck", &[2 * seq, dk]);
    let v = rand_tensor("cv", &[2 * seq, dv]);
    let tape = Tape::new();
    let fused = tape
        .constant(q.clone())
        .attention(tape.constant(k.clone()), tape.constant(v.clone()), layout);
    for g in 0..2 {
        let rows: Vec<usize> = (g * seq..(g + 1) * seq).collect();
        let qg = tape.constant(q.clone()).gather_rows(rows.clone());
        let kg = tape.constant(k.clone()).gather_rows(rows.clone());
        let vg = tape.constant(v.clone()).gather_rows(rows.clone());
        let composed = qg
            .matmul(kg.transpose())
            .scale(1.0 / (dk as f64).sqrt())
            .softmax_rows()
            .matmul(vg);
        let fused_g = fused.gather_rows(rows);
        assert!(composed.value().max_abs_diff(&fused_g.value()) < 1e-14);
    }
}
