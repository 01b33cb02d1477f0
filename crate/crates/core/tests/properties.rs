use std::collections::BTreeSet;

use proptest::prelude::*;

use crossreid::data::{epoch_rng, make_splits, sample_epoch};
use crossreid::diffcore::gradcheck::{grad_check, random_projection, random_tensor};
use crossreid::diffcore::{Graph, LstmParams, Tensor};
use crossreid::eval::{cmc, ScoreMatrix};

const TOL: f64 = 1e-5;

fn named(name: &str, t: Tensor<f64>) -> (String, Tensor<f64>) {
    (name.to_string(), t)
}

/// Rank by fully sorting the row (score descending, column ascending).
fn oracle_cmc(rows: &[Vec<f64>], truth: &[usize]) -> Vec<f64> {
    let g = rows[0].len();
    let ranks: Vec<usize> = rows
        .iter()
        .zip(truth)
        .map(|(row, &t)| {
            let mut order: Vec<usize> = (0..g).collect();
            order.sort_by(|&a, &b| row[b].total_cmp(&row[a]).then(a.cmp(&b)));
            order.iter().position(|&c| c == t).unwrap() + 1
        })
        .collect();
    (1..=g)
        .map(|m| ranks.iter().filter(|&&r| r <= m).count() as f64 / rows.len() as f64)
        .collect()
}

fn score_matrix() -> impl Strategy<Value = (Vec<Vec<f64>>, Vec<usize>)> {
    (1usize..8, 1usize..8).prop_flat_map(|(n, g)| {
        // Small integer scores force frequent ties.
        let rows = prop::collection::vec(prop::collection::vec((0i32..4).prop_map(f64::from), g), n);
        let truth = prop::collection::vec(0..g, n);
        (rows, truth)
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn conv2d_gradients(
        seed in any::<u64>(),
        c_in in 1usize..3, c_out in 1usize..3,
        k in 1usize..4, extra in 0usize..4, stride in 1usize..3,
    ) {
        let h = k + extra;
        let inputs = vec![
            named("input", random_tensor(&[c_in, h, h + 1], seed)),
            named("kernel", random_tensor(&[c_out, c_in, k, k], seed ^ 1)),
            named("bias", random_tensor(&[c_out], seed ^ 2)),
        ];
        let r = grad_check(|g, v| {
            let y = g.conv2d(v[0], v[1], v[2], stride)?;
            random_projection(g, y, seed ^ 3)
        }, &inputs, TOL).unwrap();
        prop_assert!(r.passed(), "{r:?}");
    }

    #[test]
    fn linear_gradients(seed in any::<u64>(), n in 1usize..6, m in 1usize..6) {
        let inputs = vec![
            named("input", random_tensor(&[n], seed)),
            named("weight", random_tensor(&[m, n], seed ^ 1)),
            named("bias", random_tensor(&[m], seed ^ 2)),
        ];
        let r = grad_check(|g, v| {
            let y = g.linear(v[0], v[1], v[2])?;
            random_projection(g, y, seed ^ 3)
        }, &inputs, TOL).unwrap();
        prop_assert!(r.passed(), "{r:?}");
    }

    #[test]
    fn lstm_step_gradients(seed in any::<u64>(), n in 1usize..5, d in 1usize..4) {
        let inputs = vec![
            named("x", random_tensor(&[n], seed)),
            named("h_prev", random_tensor(&[d], seed ^ 1)),
            named("c_prev", random_tensor(&[d], seed ^ 2)),
            named("w_input", random_tensor(&[4 * d, n], seed ^ 3)),
            named("w_hidden", random_tensor(&[4 * d, d], seed ^ 4)),
            named("bias", random_tensor(&[4 * d], seed ^ 5)),
        ];
        let r = grad_check(|g, v| {
            let p = LstmParams { w_input: v[3], w_hidden: v[4], bias: v[5] };
            let (h, c) = g.lstm_step(v[0], v[1], v[2], &p)?;
            let a = random_projection(g, h, seed ^ 6)?;
            let b = random_projection(g, c, seed ^ 7)?;
            g.add(a, b)
        }, &inputs, TOL).unwrap();
        prop_assert!(r.passed(), "{r:?}");
    }

    #[test]
    fn softmax_and_cross_entropy_gradients(seed in any::<u64>(), k in 2usize..8, t in 0usize..8) {
        let inputs = vec![named("logits", random_tensor(&[k], seed))];
        let r = grad_check(|g, v| {
            let y = g.softmax(v[0])?;
            random_projection(g, y, seed ^ 1)
        }, &inputs, TOL).unwrap();
        prop_assert!(r.passed(), "{r:?}");
        let r = grad_check(|g, v| g.cross_entropy(v[0], t % k), &inputs, TOL).unwrap();
        prop_assert!(r.passed(), "{r:?}");
    }

    #[test]
    fn max_pool_gradients(seed in any::<u64>(), c in 1usize..3, size in 1usize..4, cells in 1usize..4) {
        let h = size * cells;
        let inputs = vec![named("input", random_tensor(&[c, h, h], seed))];
        let r = grad_check(|g, v| {
            let y = g.max_pool2d(v[0], size)?;
            random_projection(g, y, seed ^ 1)
        }, &inputs, TOL).unwrap();
        prop_assert!(r.passed(), "{r:?}");
    }

    #[test]
    fn elementwise_gradients(seed in any::<u64>(), n in 2usize..10) {
        let inputs = vec![
            named("a", random_tensor(&[n], seed)),
            named("b", random_tensor(&[n], seed ^ 1)),
        ];
        let r = grad_check(|g, v| {
            let r = g.relu(v[0]);
            let s = g.sigmoid(v[1]);
            let t = g.tanh(v[0]);
            let d = g.sub(r, s)?;
            let q = g.square(d);
            let m = g.mul(q, t)?;
            let sc = g.scale(m, 0.7);
            let mean = g.mean(&[sc, v[1]])?;
            let sl = g.slice(mean, 1, n - 1)?;
            random_projection(g, sl, seed ^ 2)
        }, &inputs, TOL).unwrap();
        prop_assert!(r.passed(), "{r:?}");
    }

    #[test]
    fn shared_input_accumulates(seed in any::<u64>(), n in 1usize..6) {
        // x*x + 3x through two consumers equals the fused 2x + 3 gradient.
        let x = random_tensor(&[n], seed);
        let mut g = Graph::new();
        let v = g.param(x.clone());
        let sq = g.mul(v, v).unwrap();
        let lin = g.scale(v, 3.0);
        let y = g.add(sq, lin).unwrap();
        let loss = g.sum(y);
        g.backward(loss).unwrap();
        let grad = g.grad(v).unwrap();
        for (gv, xv) in grad.data().iter().zip(x.data()) {
            prop_assert!((gv - (2.0 * xv + 3.0)).abs() < 1e-12);
        }
    }

    #[test]
    fn cmc_matches_sorting_oracle((rows, truth) in score_matrix()) {
        let m = ScoreMatrix::new(rows.clone(), truth.clone()).unwrap();
        let c = cmc(&m).unwrap();
        prop_assert_eq!(&c.values, &oracle_cmc(&rows, &truth));
        prop_assert_eq!(c.values.len(), rows[0].len());
        prop_assert_eq!(*c.values.last().unwrap(), 1.0);
        prop_assert!(c.values.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn cmc_rank_invariance((rows, truth) in score_matrix(), a in 0.1f64..5.0, b in -3.0f64..3.0) {
        let base = cmc(&ScoreMatrix::new(rows.clone(), truth.clone()).unwrap()).unwrap();
        let moved: Vec<Vec<f64>> = rows.iter().map(|r| r.iter().map(|&s| (a * s + b).exp()).collect()).collect();
        let after = cmc(&ScoreMatrix::new(moved, truth).unwrap()).unwrap();
        prop_assert_eq!(base.values, after.values);
    }

    #[test]
    fn splits_are_disjoint_halves(n in 2usize..60, trials in 1usize..12, seed in any::<u64>()) {
        for p in make_splits(n, trials, seed).unwrap() {
            prop_assert_eq!(p.train.len(), n / 2);
            prop_assert_eq!(p.train.len() + p.test.len(), n);
            let all: BTreeSet<_> = p.train.iter().chain(&p.test).copied().collect();
            prop_assert_eq!(all.len(), n);
        }
    }

    #[test]
    fn epochs_are_balanced(n in 4usize..40, seed in any::<u64>(), epoch in 0usize..1000) {
        let split = &make_splits(n, 1, seed).unwrap()[0];
        let batch = sample_epoch(split, &mut epoch_rng(seed, 0, epoch)).unwrap();
        prop_assert_eq!(batch.positives(), split.train.len());
        prop_assert_eq!(batch.negatives(), split.train.len());
    }
}
