//! Reverse-mode automatic differentiation over dense `f64` tensors.
//!
//! The engine supports differentiating a gradient a second time, restricted
//! to its op set (everything except the fused softmax cross-entropy). That is
//! all the gradient penalty needs: the penalty is a function of
//! `∂D/∂x̂`, and its parameter gradients require differentiating through
//! that input-gradient.

mod graph;
mod param;

pub use graph::{Graph, Var};
pub use param::{Gradients, ParamId, Parameter};

use crate::error::AutodiffError;

/// Default LeakyReLU negative slope.
pub const DEFAULT_LEAKY_SLOPE: f64 = 0.2;

/// Per-row L2 norm of `∂D(x̂)/∂x̂` for a critic `D` that emits one scalar
/// per row of `x_hat`.
///
/// `critic` builds the critic's forward pass on the graph. The result is a
/// `b x 1` node that stays differentiable with respect to everything the
/// critic depends on (double backprop).
pub fn input_gradient_norm<F, E>(g: &mut Graph, x_hat: Var, critic: F) -> Result<Var, E>
where
    F: FnOnce(&mut Graph, Var) -> Result<Var, E>,
    E: From<AutodiffError>,
{
    let out = critic(g, x_hat)?;
    let (rows, cols) = (g.value(out).rows(), g.value(out).cols());
    if g.value(out).rank() != 2 || cols != 1 || rows != g.value(x_hat).rows() {
        return Err(AutodiffError::Shape {
            op: "input_gradient_norm",
            detail: format!(
                "critic must emit one scalar per row, got {:?} for input {:?}",
                g.value(out).shape(),
                g.value(x_hat).shape()
            ),
        }
        .into());
    }
    // Rows are independent, so the gradient of the summed scores gives each
    // row's own input-gradient.
    let total = g.sum(out)?;
    let grads = g.grad(total, &[x_hat], true)?;
    Ok(g.row_l2_norm(grads[0])?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn t(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    fn p(id: u32, tensor: Tensor) -> Parameter {
        Parameter::new(ParamId(id), format!("p{id}"), tensor)
    }

    #[test]
    fn leaky_relu_definition() {
        let mut g = Graph::new();
        let x = g.constant(t(&[2], &[-1.0, 2.0]));
        let y = g.leaky_relu(x, 0.2).unwrap();
        assert_eq!(g.value(y).data(), &[-0.2, 2.0]);
    }

    #[test]
    fn sigmoid_at_zero() {
        let mut g = Graph::new();
        let x = g.constant(t(&[1], &[0.0]));
        let y = g.sigmoid(x).unwrap();
        assert_eq!(g.value(y).data(), &[0.5]);
    }

    #[test]
    fn identity_matmul() {
        let mut g = Graph::new();
        let eye = g.constant(t(&[3, 3], &[1., 0., 0., 0., 1., 0., 0., 0., 1.]));
        let a = t(&[3, 2], &[1.5, -2.0, 3.0, 0.25, -7.0, 8.0]);
        let av = g.constant(a.clone());
        let y = g.matmul(eye, av).unwrap();
        assert_eq!(g.value(y), &a);
    }

    #[test]
    fn shape_errors_name_the_op() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::zeros(&[2, 3]));
        let b = g.constant(Tensor::zeros(&[2, 3]));
        let err = g.matmul(a, b).unwrap_err();
        assert!(matches!(err, AutodiffError::Shape { op: "matmul", .. }));
        let c = g.constant(Tensor::zeros(&[3, 1]));
        let err = g.concat(a, c).unwrap_err();
        assert!(err.to_string().contains("concat"));
        let v = g.constant(Tensor::zeros(&[2]));
        assert!(matches!(
            g.add(a, v).unwrap_err(),
            AutodiffError::Shape { op: "add", .. }
        ));
    }

    #[test]
    fn linear_form_gradient_is_input() {
        let x = t(&[3], &[1.0, -2.0, 0.5]);
        let w = p(0, t(&[3], &[0.3, 0.1, -0.4]));
        let mut g = Graph::new();
        let wv = g.param(&w);
        let xv = g.constant(x.clone());
        let prod = g.mul(wv, xv).unwrap();
        let root = g.sum(prod).unwrap();
        let grads = g.backward(root).unwrap();
        assert_eq!(grads.get(ParamId(0)).unwrap(), &x);
    }

    #[test]
    fn mean_square_gradient() {
        let w = p(0, t(&[1], &[3.0]));
        let mut g = Graph::new();
        let wv = g.param(&w);
        let sq = g.square(wv).unwrap();
        let root = g.mean(sq).unwrap();
        let grads = g.backward(root).unwrap();
        assert_eq!(grads.get(ParamId(0)).unwrap().data(), &[6.0]);
    }

    #[test]
    fn non_scalar_root_rejected() {
        let w = p(0, t(&[2], &[1.0, 2.0]));
        let mut g = Graph::new();
        let wv = g.param(&w);
        let sq = g.square(wv).unwrap();
        assert!(matches!(
            g.backward(sq),
            Err(AutodiffError::NonScalarRoot { .. })
        ));
    }

    #[test]
    fn unreachable_parameter_has_no_gradient() {
        let a = p(0, t(&[1], &[2.0]));
        let b = p(1, t(&[1], &[5.0]));
        let mut g = Graph::new();
        let av = g.param(&a);
        let _bv = g.param(&b);
        let root = g.sum(av).unwrap();
        let grads = g.backward(root).unwrap();
        assert!(grads.get(ParamId(0)).is_some());
        assert!(grads.get(ParamId(1)).is_none());
    }

    #[test]
    fn shared_subgraph_accumulates_each_use() {
        // y = s + s + s with s = w*w; dy/dw = 3 * 2w
        let w = p(0, t(&[1], &[1.5]));
        let mut g = Graph::new();
        let wv = g.param(&w);
        let s = g.mul(wv, wv).unwrap();
        let a = g.add(s, s).unwrap();
        let b = g.add(a, s).unwrap();
        let root = g.sum(b).unwrap();
        let grads = g.backward(root).unwrap();
        assert_eq!(grads.get(ParamId(0)).unwrap().data(), &[9.0]);
    }

    #[test]
    fn binding_a_parameter_twice_reuses_the_node() {
        let w = p(7, t(&[1], &[2.0]));
        let mut g = Graph::new();
        let a = g.param(&w);
        let b = g.param(&w);
        assert_eq!(a, b);
        let m = g.mul(a, b).unwrap();
        let root = g.sum(m).unwrap();
        assert_eq!(g.backward(root).unwrap().get(ParamId(7)).unwrap().data(), &[4.0]);
    }

    #[test]
    fn non_finite_root_is_reported() {
        let w = p(0, t(&[1], &[-1.0]));
        let mut g = Graph::new();
        let wv = g.param(&w);
        let l = g.log(wv).unwrap();
        let root = g.sum(l).unwrap();
        assert!(matches!(
            g.backward(root),
            Err(AutodiffError::NonFinite { .. })
        ));
        assert!(g.scalar(root).is_err());
    }

    #[test]
    fn linear_critic_input_gradient_norm_is_weight_norm() {
        let w = p(0, t(&[3, 1], &[1.0, 2.0, 2.0]));
        let mut g = Graph::new();
        let x = g.input(t(&[4, 3], &[0.1, 0.2, 0.3, 1., 1., 1., -5., 2., 0., 0., 0., 0.]));
        let norm = input_gradient_norm(&mut g, x, |g, x| -> Result<Var, AutodiffError> {
            let wv = g.param(&w);
            g.matmul(x, wv)
        })
        .unwrap();
        for &v in g.value(norm).data() {
            assert!((v - 3.0).abs() < 1e-14);
        }
    }

    #[test]
    fn half_square_critic_norm_is_input_norm() {
        let mut g = Graph::new();
        let x = g.input(t(&[1, 2], &[3.0, 4.0]));
        let norm = input_gradient_norm(&mut g, x, |g, x| -> Result<Var, AutodiffError> {
            let sq = g.square(x)?;
            let s = g.sum_cols(sq)?;
            g.scale(s, 0.5)
        })
        .unwrap();
        assert!((g.value(norm).item() - 5.0).abs() < 1e-14);
    }

    #[test]
    fn second_order_through_square() {
        // f(w) = (d/dx (w x^2))|_{x=2} = 4w, so df/dw = 4.
        let w = p(0, t(&[1, 1], &[1.3]));
        let mut g = Graph::new();
        let x = g.input(t(&[1, 1], &[2.0]));
        let wv = g.param(&w);
        let sq = g.square(x).unwrap();
        let y = g.mul(wv, sq).unwrap();
        let s = g.sum(y).unwrap();
        let dx = g.grad(s, &[x], true).unwrap()[0];
        assert!((g.value(dx).item() - 4.0 * 1.3).abs() < 1e-14);
        let root = g.sum(dx).unwrap();
        let grads = g.backward(root).unwrap();
        assert!((grads.get(ParamId(0)).unwrap().item() - 4.0).abs() < 1e-14);
    }

    #[test]
    fn fused_cross_entropy_refuses_double_backward() {
        let mut g = Graph::new();
        let x = g.input(t(&[2, 3], &[0.1, 0.2, 0.3, 0.4, 0.5, 0.6]));
        let err = input_gradient_norm(&mut g, x, |g, x| -> Result<Var, AutodiffError> {
            let ce = g.softmax_cross_entropy(x, &[0, 2])?;
            g.expand(ce, &[2, 1])
        })
        .unwrap_err();
        assert!(matches!(
            err,
            AutodiffError::UnsupportedDoubleBackward { .. }
        ));
    }

    #[test]
    fn cross_entropy_gradient_is_softmax_minus_onehot() {
        let w = p(0, t(&[1, 2], &[0.0, 0.0]));
        let mut g = Graph::new();
        let wv = g.param(&w);
        let ce = g.softmax_cross_entropy(wv, &[1]).unwrap();
        assert!((g.value(ce).item() - std::f64::consts::LN_2).abs() < 1e-14);
        let grads = g.backward(ce).unwrap();
        assert_eq!(grads.get(ParamId(0)).unwrap().data(), &[0.5, -0.5]);
    }

    #[test]
    fn norm_of_zero_row_has_zero_gradient() {
        let w = p(0, t(&[1, 2], &[0.0, 0.0]));
        let mut g = Graph::new();
        let wv = g.param(&w);
        let n = g.row_l2_norm(wv).unwrap();
        let root = g.sum(n).unwrap();
        let grads = g.backward(root).unwrap();
        assert_eq!(grads.get(ParamId(0)).unwrap().data(), &[0.0, 0.0]);
    }
}
