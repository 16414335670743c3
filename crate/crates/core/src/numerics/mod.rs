//! Dense tensors, reverse-mode differentiation, and the Adam optimizer.

mod adam;
mod graph;
pub mod gradcheck;
mod tensor;

pub use adam::{lr_at, AdamConfig, AdamState, ParamSlot};
pub use graph::{Gradients, Graph, Var};
pub use tensor::{gelu, gelu_grad_scalar, gelu_scalar, softmax_in_place, softmax_rows, Real, Tensor};

#[cfg(test)]
mod tests {
    use super::gradcheck::{check, DEFAULT_STEP};
    use super::*;
    use proptest::prelude::*;

    const TOL: f64 = 1e-4;

    fn mat(rows: usize, cols: usize, vals: &[f64]) -> Tensor<f64> {
        Tensor::new(vec![rows, cols], vals[..rows * cols].to_vec()).unwrap()
    }

    /// Weighted sum so that every output element carries a distinct
    /// upstream gradient.
    fn weighted_sum(g: &mut Graph<f64>, x: Var) -> Var {
        let shape = g.value(x).shape().to_vec();
        let w = Tensor::from_fn(&shape, |i| ((i * 7 + 3) % 11) as f64 / 5.0 - 1.0);
        let w = g.constant(w);
        let p = g.mul(x, w).unwrap();
        g.sum(p)
    }

    #[test]
    fn identity_matmul_gradient_is_outer_product() {
        let x = Tensor::new(vec![3, 1], vec![1.0, -2.0, 0.5]).unwrap();
        let mut g = Graph::<f64>::new();
        let w = g.param(Tensor::from_fn(&[3, 3], |i| if i % 4 == 0 { 1.0 } else { 0.0 }));
        let xv = g.constant(x.clone());
        let y = g.matmul(w, xv, false).unwrap();
        let loss = g.sum(y);
        let grads = g.backward(loss).unwrap();
        let dw = grads.wrt(&g, w);
        for r in 0..3 {
            assert_eq!(dw.row(r), x.data());
        }
    }

    #[test]
    fn constant_only_graph_has_zero_gradients() {
        let mut g = Graph::<f64>::new();
        let p = g.param(Tensor::full(&[2, 2], 3.0));
        let c = g.constant(Tensor::full(&[2, 2], 1.0));
        let y = g.gelu(c);
        let loss = g.sum(y);
        let grads = g.backward(loss).unwrap();
        assert!(grads.wrt(&g, p).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let mut g = Graph::<f64>::new();
        let p = g.param(Tensor::full(&[2, 2], 3.0));
        assert!(g.backward(p).is_err());
    }

    #[test]
    fn shared_parameter_accumulates() {
        let mut g = Graph::<f64>::new();
        let p = g.param(Tensor::scalar(2.0));
        let y = g.mul(p, p).unwrap();
        let grads = g.backward(y).unwrap();
        assert_eq!(grads.wrt(&g, p).item(), 4.0);
    }

    #[test]
    fn cross_entropy_of_confident_match_tends_to_zero() {
        let mut g = Graph::<f64>::new();
        let l = g.constant(Tensor::new(vec![1, 3], vec![40.0, 0.0, 0.0]).unwrap());
        let ce = g.cross_entropy(l, &[0]).unwrap();
        assert!(g.value(ce).item() < 1e-15);
        let ce_wrong = g.cross_entropy(l, &[1]).unwrap();
        assert!((g.value(ce_wrong).item() - 40.0).abs() < 1e-9);
    }

    #[test]
    fn cross_entropy_propagates_nan() {
        let mut g = Graph::<f32>::new();
        let x = g.constant(Tensor::new(vec![1, 3], vec![0.0, f32::NAN, 1.0]).unwrap());
        let l = g.cross_entropy(x, &[0]).unwrap();
        assert!(g.value(l).item().is_nan());
        let y = g.constant(Tensor::new(vec![1, 2], vec![f32::INFINITY, 0.0]).unwrap());
        let l = g.cross_entropy(y, &[1]).unwrap();
        assert!(!g.value(l).item().is_finite());
    }

    #[test]
    fn attention_masks_padded_keys() {
        let mut g = Graph::<f64>::new();
        let x = Tensor::from_fn(&[4, 4], |i| (i as f64 * 0.3).cos());
        let mut y = x.clone();
        y.row_mut(3).copy_from_slice(&[9.0, -9.0, 4.0, 1.0]);
        let mask = [true, true, true, false];
        let xa = g.constant(x);
        let ya = g.constant(y);
        let a = g.attention(xa, xa, xa, 2, 4, &mask).unwrap();
        // only V of the padded row changes; queries at real rows unaffected
        let b = g.attention(xa, xa, ya, 2, 4, &mask).unwrap();
        for r in 0..3 {
            assert_eq!(g.value(a).row(r), g.value(b).row(r));
        }
    }

    fn vals(n: usize) -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(-2.0f64..2.0, n)
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn grad_matmul(a in vals(12), b in vals(12), tb in any::<bool>()) {
            let a = mat(3, 4, &a);
            let b = if tb { mat(3, 4, &b) } else { mat(4, 3, &b) };
            let r = check(&[a, b], DEFAULT_STEP, |g, v| {
                let y = g.matmul(v[0], v[1], tb)?;
                Ok(weighted_sum(g, y))
            }).unwrap();
            prop_assert!(r.max_relative_error < TOL, "{r:?}");
        }

        #[test]
        fn grad_bias_and_scale(x in vals(8), b in vals(4)) {
            let r = check(&[mat(2, 4, &x), Tensor::new(vec![4], b).unwrap()], DEFAULT_STEP, |g, v| {
                let y = g.add_bias(v[0], v[1])?;
                let y = g.scale(y, 0.7);
                let z = g.add(y, v[0])?;
                Ok(weighted_sum(g, z))
            }).unwrap();
            prop_assert!(r.max_relative_error < TOL, "{r:?}");
        }

        #[test]
        fn grad_reshape(x in vals(12), t in prop::collection::vec(0usize..6, 2)) {
            let r = check(&[mat(3, 4, &x)], DEFAULT_STEP, |g, v| {
                let y = g.reshape(v[0], &[2, 6])?;
                g.cross_entropy(y, &t)
            }).unwrap();
            prop_assert!(r.max_relative_error < TOL, "{r:?}");
        }

        #[test]
        fn grad_gelu(x in vals(10)) {
            let r = check(&[mat(2, 5, &x)], DEFAULT_STEP, |g, v| {
                let y = g.gelu(v[0]);
                Ok(weighted_sum(g, y))
            }).unwrap();
            prop_assert!(r.max_relative_error < TOL, "{r:?}");
        }

        #[test]
        fn grad_layer_norm(x in vals(15), gm in vals(5), bt in vals(5)) {
            let inputs = [mat(3, 5, &x), Tensor::new(vec![5], gm).unwrap(), Tensor::new(vec![5], bt).unwrap()];
            let r = check(&inputs, DEFAULT_STEP, |g, v| {
                let y = g.layer_norm(v[0], v[1], v[2], 1e-12)?;
                Ok(weighted_sum(g, y))
            }).unwrap();
            prop_assert!(r.max_relative_error < TOL, "{r:?}");
        }

        #[test]
        fn grad_softmax_cross_entropy(x in vals(12), t in prop::collection::vec(0usize..4, 3)) {
            let r = check(&[mat(3, 4, &x)], DEFAULT_STEP, |g, v| g.cross_entropy(v[0], &t)).unwrap();
            prop_assert!(r.max_relative_error < TOL, "{r:?}");
        }

        #[test]
        fn grad_embedding_and_gather(x in vals(15), ids in prop::collection::vec(0usize..5, 4)) {
            let r = check(&[mat(5, 3, &x)], DEFAULT_STEP, |g, v| {
                let e = g.embedding(v[0], &ids)?;
                let s = g.gather_rows(e, &[3, 0, 3])?;
                Ok(weighted_sum(g, s))
            }).unwrap();
            prop_assert!(r.max_relative_error < TOL, "{r:?}");
        }

        #[test]
        fn grad_attention(q in vals(24), k in vals(24), v in vals(24), pad in any::<bool>()) {
            // batch 2, seq 3, width 4, two heads
            let mask = [true, true, !pad, true, true, true];
            let r = check(&[mat(6, 4, &q), mat(6, 4, &k), mat(6, 4, &v)], DEFAULT_STEP, |g, x| {
                let y = g.attention(x[0], x[1], x[2], 2, 3, &mask)?;
                Ok(weighted_sum(g, y))
            }).unwrap();
            prop_assert!(r.max_relative_error < TOL, "{r:?}");
        }

        #[test]
        fn softmax_rows_normalized(x in prop::collection::vec(-50.0f32..50.0, 12)) {
            let p = softmax_rows(&Tensor::new(vec![3, 4], x).unwrap());
            for r in 0..3 {
                let s: f32 = p.row(r).iter().sum();
                prop_assert!((s - 1.0).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn forward_is_bit_deterministic() {
        let run = || {
            let mut g = Graph::<f32>::new();
            let x = g.param(Tensor::from_fn(&[8, 8], |i| (i as f32 * 0.11).sin()));
            let y = g.attention(x, x, x, 2, 4, &[true; 8]).unwrap();
            let y = g.gelu(y);
            g.value(y).clone()
        };
        assert_eq!(run().data(), run().data());
    }
}
