//! Minimal reverse-mode automatic differentiation over dense `f64` tensors.
//!
//! Every forward computation is recorded on a [`Tape`]. After
//! [`Tape::backward`] the gradient of the scalar root is available for all
//! differentiable leaves and for any intermediate that was given a name with
//! [`Tape::mark`]; the latter is how activation gradients such as the one at
//! a decoder's last-layer input are read out.

mod tape;
mod tensor;

pub mod gradcheck;

pub use tape::{Gradients, NodeId, Op, Tape};
pub use tensor::Tensor;

#[cfg(test)]
mod tests {
    use super::gradcheck::{check_gradients, relative_error};
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn v(data: &[f64]) -> Tensor {
        Tensor::vector(data.to_vec()).unwrap()
    }

    #[test]
    fn add_values() {
        let mut t = Tape::new();
        let x = t.constant(v(&[1.0, 2.0]));
        let y = t.constant(v(&[3.0, 4.0]));
        let z = t.add(x, y).unwrap();
        assert_eq!(t.value(z).data(), &[4.0, 6.0]);
    }

    #[test]
    fn matmul_ones() {
        let mut t = Tape::new();
        let a = t.constant(Tensor::ones(&[2, 3]));
        let b = t.constant(Tensor::ones(&[3, 1]));
        let c = t.matmul(a, b).unwrap();
        assert_eq!(t.value(c).shape(), &[2, 1]);
        assert_eq!(t.value(c).data(), &[3.0, 3.0]);
    }

    #[test]
    fn logsumexp_of_zeros_is_ln3() {
        let mut t = Tape::new();
        let x = t.constant(v(&[0.0, 0.0, 0.0]));
        let l = t.logsumexp(x).unwrap();
        let direct = (3.0 * 0f64.exp()).ln();
        assert_abs_diff_eq!(t.value(l).item().unwrap(), direct, epsilon = 1e-15);
        assert_abs_diff_eq!(t.value(l).item().unwrap(), 1.0986123, epsilon = 1e-7);
    }

    #[test]
    fn logsumexp_is_stable_for_large_logits() {
        let mut t = Tape::new();
        let x = t.constant(v(&[1000.0, 1000.0]));
        let l = t.logsumexp(x).unwrap();
        assert_abs_diff_eq!(t.value(l).item().unwrap(), 1000.0 + 2f64.ln(), epsilon = 1e-9);
        let s = t.softmax(x).unwrap();
        assert_eq!(t.value(s).data(), &[0.5, 0.5]);
    }

    #[test]
    fn shape_mismatch_names_op() {
        let mut t = Tape::new();
        let a = t.constant(Tensor::ones(&[2, 3]));
        let b = t.constant(Tensor::ones(&[2, 3]));
        let err = t.matmul(a, b).unwrap_err().to_string();
        assert!(err.contains("matmul"), "{err}");
        assert!(err.contains("[2, 3]"), "{err}");
        let c = t.constant(Tensor::ones(&[2]));
        assert!(t.add(a, c).is_err());
    }

    #[test]
    fn non_finite_output_is_an_error() {
        let mut t = Tape::new();
        let x = t.constant(v(&[0.0]));
        assert!(t.log(x).is_err());
    }

    #[test]
    fn grad_of_sum_of_squares() {
        let mut t = Tape::new();
        let x = t.leaf(v(&[1.0, 2.0, 3.0]), true);
        let sq = t.square(x).unwrap();
        let s = t.sum(sq).unwrap();
        let g = t.backward(s).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[2.0, 4.0, 6.0]);
    }

    #[test]
    fn grad_of_logsumexp_equal_logits() {
        let mut t = Tape::new();
        let x = t.leaf(v(&[0.0, 0.0]), true);
        let l = t.logsumexp(x).unwrap();
        let g = t.backward(l).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[0.5, 0.5]);
    }

    #[test]
    fn non_scalar_root_rejected() {
        let mut t = Tape::new();
        let x = t.leaf(v(&[1.0, 2.0]), true);
        assert!(matches!(
            t.backward(x),
            Err(crate::error::Error::NonScalarRoot(_))
        ));
    }

    #[test]
    fn grad_at_marked_input() {
        let mut t = Tape::new();
        let x = t.constant(v(&[1.0, 0.0]));
        t.mark("x", x);
        let sq = t.square(x).unwrap();
        let s = t.sum(sq).unwrap();
        let g = t.backward(s).unwrap();
        assert_eq!(g.at_mark("x").unwrap().data(), &[2.0, 0.0]);
        assert!(matches!(
            g.at_mark("nope"),
            Err(crate::error::Error::UnknownMark(_))
        ));
    }

    #[test]
    fn grad_at_marked_hidden_through_identity_affine() {
        let mut t = Tape::new();
        let h = t.constant(v(&[1.0, 1.0]));
        t.mark("h", h);
        let w = t.constant(Tensor::matrix(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap());
        let b = t.constant(Tensor::zeros(&[2]));
        let y = t.affine(h, w, b).unwrap();
        let sq = t.square(y).unwrap();
        let s = t.sum(sq).unwrap();
        let g = t.backward(s).unwrap();
        assert_eq!(g.at_mark("h").unwrap().data(), &[2.0, 2.0]);
    }

    #[test]
    fn batched_affine_bias_grad_sums_rows() {
        let mut t = Tape::new();
        let x = t.constant(Tensor::matrix(3, 2, vec![1.0, 2.0, 0.0, 0.0, -1.0, 4.0]).unwrap());
        let w = t.constant(Tensor::matrix(2, 2, vec![0.5, -1.0, 2.0, 0.25]).unwrap());
        let b = t.leaf(v(&[0.0, 0.0]), true);
        let y = t.affine(x, w, b).unwrap();
        let s = t.sum(y).unwrap();
        let g = t.backward(s).unwrap();
        assert_eq!(g.get(b).unwrap().data(), &[3.0, 3.0]);
    }

    #[test]
    fn fan_out_accumulates() {
        // f = x*x + x  => df/dx = 2x + 1
        let mut t = Tape::new();
        let x = t.leaf(v(&[3.0]), true);
        let sq = t.mul(x, x).unwrap();
        let y = t.add(sq, x).unwrap();
        let s = t.sum(y).unwrap();
        let g = t.backward(s).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[7.0]);
    }

    #[test]
    fn mark_gradient_equals_cut_graph_gradient() {
        // Gradient at an intermediate mark equals the gradient obtained by
        // feeding that intermediate's value in as a free input.
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let xd: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let wd: Vec<f64> = (0..12).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let w2d: Vec<f64> = (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let tail = |t: &mut Tape, h: NodeId| -> NodeId {
                let w2 = t.constant(Tensor::matrix(3, 2, w2d.clone()).unwrap());
                let b2 = t.constant(Tensor::zeros(&[2]));
                let o = t.affine(h, w2, b2).unwrap();
                let l = t.logsumexp(o).unwrap();
                t.sum(l).unwrap()
            };
            let mut full = Tape::new();
            let x = full.leaf(Tensor::vector(xd.clone()).unwrap(), true);
            let w = full.constant(Tensor::matrix(4, 3, wd.clone()).unwrap());
            let b = full.constant(Tensor::zeros(&[3]));
            let a = full.affine(x, w, b).unwrap();
            let h = full.tanh(a).unwrap();
            full.mark("h", h);
            let root = tail(&mut full, h);
            let g_mark = full.backward(root).unwrap().at_mark("h").unwrap().clone();

            let mut cut = Tape::new();
            let hv = cut.leaf(full.value(h).clone(), true);
            let root2 = tail(&mut cut, hv);
            let g_cut = cut.backward(root2).unwrap().get(hv).unwrap().clone();
            assert_eq!(g_mark, g_cut);
        }
    }

    #[test]
    fn backward_is_bitwise_deterministic() {
        let build = || {
            let mut t = Tape::new();
            let x = t.leaf(Tensor::matrix(2, 3, vec![0.1, -0.2, 0.3, 0.7, 0.5, -0.9]).unwrap(), true);
            let w = t.leaf(Tensor::matrix(3, 2, vec![0.3, 0.1, -0.4, 0.2, 0.9, -0.6]).unwrap(), true);
            let y = t.matmul(x, w).unwrap();
            let s = t.softmax(y).unwrap();
            let l = t.log(s).unwrap();
            let r = t.sum(l).unwrap();
            let g = t.backward(r).unwrap();
            (g.get(x).unwrap().clone(), g.get(w).unwrap().clone())
        };
        let (a1, b1) = build();
        let (a2, b2) = build();
        assert_eq!(a1.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
                   a2.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>());
        assert_eq!(b1, b2);
    }

    #[test]
    fn broadcast_bias_gradient_sums_over_rows() {
        let mut t = Tape::new();
        let x = t.constant(Tensor::matrix(3, 2, vec![1.0; 6]).unwrap());
        let b = t.leaf(v(&[0.5, -0.5]), true);
        let y = t.add(x, b).unwrap();
        let s = t.sum(y).unwrap();
        let g = t.backward(s).unwrap();
        assert_eq!(g.get(b).unwrap().data(), &[3.0, 3.0]);
    }

    #[test]
    fn relative_error_helper() {
        assert_eq!(relative_error(&[1.0, 2.0], &[1.0, 2.0]), 0.0);
        assert!(relative_error(&[1.0], &[1.1]) > 0.05);
    }

    #[test]
    fn finite_difference_smoke() {
        let x = Tensor::vector(vec![0.3, -0.7]).unwrap();
        let report = check_gradients(&[x], 1e-5, |t, ids| {
            let e = t.exp(ids[0])?;
            t.sum(e)
        })
        .unwrap();
        assert!(report.max_relative_error < 1e-6, "{report:?}");
    }
}
