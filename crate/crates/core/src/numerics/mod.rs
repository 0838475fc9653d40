//! Deterministic tensors and reverse-mode autodiff.

mod gradcheck;
mod graph;
mod layers;
mod params;
mod tensor;
pub mod vten;

pub use gradcheck::{autodiff_grad, grad_check, grad_check_coords};
pub use graph::{Gradients, Graph, Var};
pub use layers::{Activation, Mlp};
pub use params::{normal_tensor, Adam, AdamConfig, Bound, ParamId, ParamStore};
pub use tensor::{numel, strides, Scalar, Tensor};

use crate::error::Result;

/// Forward-only matmul of two rank-2 tensors.
pub fn matmul<S: Scalar>(a: &Tensor<S>, b: &Tensor<S>) -> Result<Tensor<S>> {
    let mut g = Graph::new();
    let (va, vb) = (g.constant(a.clone()), g.constant(b.clone()));
    let c = g.matmul(va, vb)?;
    Ok(g.value(c).clone())
}

/// Forward-only softmax along `axis`.
pub fn softmax<S: Scalar>(x: &Tensor<S>, axis: usize) -> Result<Tensor<S>> {
    let mut g = Graph::new();
    let v = g.constant(x.clone());
    let y = g.softmax(v, axis)?;
    Ok(g.value(y).clone())
}

/// Forward-only layer norm over the last axis.
pub fn layer_norm<S: Scalar>(x: &Tensor<S>, gamma: &Tensor<S>, beta: &Tensor<S>, eps: f64) -> Result<Tensor<S>> {
    let mut g = Graph::new();
    let v = g.constant(x.clone());
    let gm = g.constant(gamma.clone());
    let bt = g.constant(beta.clone());
    let y = g.layer_norm(v, Some(gm), Some(bt), eps)?;
    Ok(g.value(y).clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;
    use crate::rng;
    use proptest::prelude::*;
    use rand::Rng as _;

    fn rand_tensor(seed: u64, shape: &[usize]) -> Tensor<f64> {
        let mut r = rng::stream(seed, &[]);
        Tensor::from_fn(shape, |_| r.random_range(-1.0..1.0))
    }

    #[test]
    fn matmul_identity_and_hand_case() {
        let x = Tensor::<f32>::from_fn(&[3, 3], |i| i as f64 + 0.5);
        let eye = Tensor::<f32>::from_fn(&[3, 3], |i| if i % 4 == 0 { 1.0 } else { 0.0 });
        assert_eq!(matmul(&eye, &x).unwrap(), x);
        let a = Tensor::<f32>::from_f64_slice(&[2, 2], &[1., 2., 3., 4.]).unwrap();
        let b = Tensor::<f32>::from_f64_slice(&[2, 1], &[5., 6.]).unwrap();
        assert_eq!(matmul(&a, &b).unwrap().data(), &[17.0, 39.0]);
    }

    #[test]
    fn matmul_matches_triple_loop() {
        let a = rand_tensor(1, &[4, 3]);
        let b = rand_tensor(2, &[3, 5]);
        let c = matmul(&a, &b).unwrap();
        for i in 0..4 {
            for j in 0..5 {
                let mut s = 0.0;
                for k in 0..3 {
                    s += a.get(&[i, k]) * b.get(&[k, j]);
                }
                assert!((c.get(&[i, j]) - s).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn matmul_shape_mismatch() {
        let a = Tensor::<f32>::zeros(&[2, 3]);
        let b = Tensor::<f32>::zeros(&[2, 3]);
        assert!(matches!(matmul(&a, &b), Err(Error::Dimension { .. })));
    }

    #[test]
    fn softmax_cases() {
        let y = softmax(&Tensor::<f32>::zeros(&[3]), 0).unwrap();
        for v in y.data() {
            assert!((v - 1.0 / 3.0).abs() < 1e-7);
        }
        let y = softmax(&Tensor::<f32>::from_f64_slice(&[2], &[1000.0, 0.0]).unwrap(), 0).unwrap();
        assert!((y.data()[0] - 1.0).abs() < 1e-7 && y.data()[1] < 1e-30);
        assert!(matches!(softmax(&Tensor::<f32>::zeros(&[2, 0]), 1), Err(Error::Dimension { .. })));
        assert!(softmax(&Tensor::<f32>::zeros(&[2]), 1).is_err());
    }

    #[test]
    fn softmax_matches_f64_reference() {
        let x = rand_tensor(3, &[7]).map(|v| v * 5.0).cast::<f32>();
        let y = softmax(&x, 0).unwrap();
        let xs = x.to_f64_vec();
        let z: f64 = xs.iter().map(|v| v.exp()).sum();
        for (o, v) in y.data().iter().zip(&xs) {
            assert!((*o as f64 - v.exp() / z).abs() < 1e-7);
        }
    }

    #[test]
    fn softmax_inner_axis() {
        let x = rand_tensor(4, &[3, 4, 2]);
        let y = softmax(&x, 1).unwrap();
        for o in 0..3 {
            for i in 0..2 {
                let s: f64 = (0..4).map(|j| y.get(&[o, j, i])).sum();
                assert!((s - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn layer_norm_cases() {
        let ones = Tensor::<f64>::full(&[3], 1.0);
        let zeros = Tensor::<f64>::zeros(&[3]);
        let c = layer_norm(&Tensor::full(&[2, 3], 4.0), &ones, &zeros, 1e-5).unwrap();
        assert!(c.data().iter().all(|v| *v == 0.0));
        let x = Tensor::from_f64_slice(&[3], &[1.0, 2.0, 3.0]).unwrap();
        let y = layer_norm(&x, &ones, &zeros, 1e-12).unwrap();
        for (a, b) in y.data().iter().zip([-1.224_744_871, 0.0, 1.224_744_871]) {
            assert!((a - b).abs() < 1e-6);
        }
        let beta = Tensor::from_f64_slice(&[3], &[0.5, -1.0, 2.0]).unwrap();
        let y = layer_norm(&x, &zeros, &beta, 1e-5).unwrap();
        assert_eq!(y.data(), beta.data());
        assert!(matches!(layer_norm(&x, &ones, &zeros, 0.0), Err(Error::Domain(_))));
    }

    #[test]
    fn non_finite_is_an_error() {
        let mut g = Graph::<f32>::new();
        let x = g.constant(Tensor::full(&[2], 3e38));
        assert!(matches!(g.scale(x, 10.0), Err(Error::NonFinite { .. })));
    }

    #[test]
    fn grad_check_examples() {
        let x = Tensor::from_f64_slice(&[1], &[3.0]).unwrap();
        let sq = |g: &mut Graph<f64>, x: Var| {
            let s = g.square(x)?;
            g.sum(s)
        };
        assert_eq!(autodiff_grad(&sq, &x).unwrap(), vec![6.0]);
        assert!(grad_check(sq, &x, 1e-4).unwrap() < 1e-6);

        let konst = |g: &mut Graph<f64>, x: Var| {
            let z = g.scale(x, 0.0)?;
            let s = g.sum(z)?;
            g.add_scalar(s, 2.0)
        };
        assert_eq!(autodiff_grad(&konst, &x).unwrap(), vec![0.0]);
        assert_eq!(grad_check(konst, &x, 1e-4).unwrap(), 0.0);

        assert!(matches!(grad_check(sq, &x, 1e-2), Err(Error::Domain(_))));
        let blowup = |g: &mut Graph<f64>, x: Var| {
            let s = g.scale(x, 1e308)?;
            let s = g.scale(s, 1e308)?;
            g.sum(s)
        };
        assert!(matches!(grad_check(blowup, &x, 1e-4), Err(Error::Evaluation(_))));
    }

    /// Weighted reduction so gradients are not trivially zero.
    fn weighted<'a>(w: &'a Tensor<f64>) -> impl Fn(&mut Graph<f64>, Var) -> Result<Var> + 'a {
        move |g, y| {
            let wv = g.constant(w.clone());
            let p = g.mul(y, wv)?;
            g.sum(p)
        }
    }

    fn check_op(shape: &[usize], seed: u64, op: impl Fn(&mut Graph<f64>, Var) -> Result<Var>) -> f64 {
        let x = rand_tensor(seed, shape);
        let out_shape = {
            let mut g = Graph::new();
            let v = g.constant(x.clone());
            let y = op(&mut g, v).unwrap();
            g.shape(y).to_vec()
        };
        let w = rand_tensor(seed + 100, &out_shape);
        let red = weighted(&w);
        grad_check(|g, v| { let y = op(g, v)?; red(g, y) }, &x, 1e-4).unwrap()
    }

    #[test]
    fn every_op_passes_grad_check() {
        let tol = 1e-4;
        let cases: Vec<(&str, f64)> = vec![
            ("matmul", check_op(&[12], 1, |g, x| {
                let a = g.slice(x, 0, 0, 6)?;
                let a = g.reshape(a, &[2, 3])?;
                let b = g.slice(x, 0, 6, 6)?;
                let b = g.reshape(b, &[3, 2])?;
                g.matmul(a, b)
            })),
            ("bmm", check_op(&[24], 2, |g, x| {
                let a = g.slice(x, 0, 0, 12)?;
                let a = g.reshape(a, &[2, 2, 3])?;
                let b = g.slice(x, 0, 12, 12)?;
                let b = g.reshape(b, &[2, 3, 2])?;
                g.bmm(a, b, false)
            })),
            ("bmm_nt", check_op(&[24], 3, |g, x| {
                let a = g.slice(x, 0, 0, 12)?;
                let a = g.reshape(a, &[2, 2, 3])?;
                let b = g.slice(x, 0, 12, 12)?;
                let b = g.reshape(b, &[2, 2, 3])?;
                g.bmm(a, b, true)
            })),
            ("add_sub_mul", check_op(&[8], 4, |g, x| {
                let a = g.slice(x, 0, 0, 4)?;
                let b = g.slice(x, 0, 4, 4)?;
                let s = g.add(a, b)?;
                let d = g.sub(a, b)?;
                g.mul(s, d)
            })),
            ("scale_shift", check_op(&[5], 5, |g, x| {
                let s = g.scale(x, -1.7)?;
                g.add_scalar(s, 0.3)
            })),
            ("broadcast", check_op(&[3], 6, |g, x| {
                let r = g.reshape(x, &[1, 3])?;
                g.broadcast_to(r, &[4, 3])
            })),
            ("permute", check_op(&[24], 7, |g, x| {
                let r = g.reshape(x, &[2, 3, 4])?;
                g.permute(r, &[2, 0, 1])
            })),
            ("concat", check_op(&[12], 8, |g, x| {
                let r = g.reshape(x, &[2, 6])?;
                let a = g.slice(r, 1, 0, 2)?;
                let b = g.slice(r, 1, 2, 4)?;
                g.concat(&[b, a], 1)
            })),
            ("softmax", check_op(&[3, 4], 9, |g, x| g.softmax(x, 1))),
            ("softmax_axis0", check_op(&[3, 4], 10, |g, x| g.softmax(x, 0))),
            ("layer_norm", check_op(&[22], 11, |g, x| {
                let v = g.slice(x, 0, 0, 12)?;
                let v = g.reshape(v, &[3, 4])?;
                let gm = g.slice(x, 0, 12, 4)?;
                let bt = g.slice(x, 0, 16, 4)?;
                g.layer_norm(v, Some(gm), Some(bt), 1e-5)
            })),
            ("l2_normalize", check_op(&[3, 4], 12, |g, x| g.l2_normalize(x, 1e-15))),
            ("rope", check_op(&[2, 5, 4], 13, |g, x| g.rope(x, 10000.0))),
            ("gelu", check_op(&[6], 14, |g, x| g.gelu(x))),
            ("silu", check_op(&[6], 15, |g, x| g.silu(x))),
            ("sigmoid", check_op(&[6], 16, |g, x| g.sigmoid(x))),
            ("square", check_op(&[6], 17, |g, x| g.square(x))),
            ("mean", check_op(&[6], 18, |g, x| g.mean(x))),
            ("linear", check_op(&[14], 19, |g, x| {
                let a = g.slice(x, 0, 0, 6)?;
                let a = g.reshape(a, &[3, 2])?;
                let w = g.slice(x, 0, 6, 6)?;
                let w = g.reshape(w, &[2, 3])?;
                let b = g.slice(x, 0, 12, 2)?;
                let b = g.concat(&[b, b], 0)?;
                let b = g.slice(b, 0, 0, 3)?;
                g.linear(a, w, Some(b))
            })),
        ];
        for (name, err) in cases {
            assert!(err < tol, "{} grad_check rel error {}", name, err);
        }
    }

    #[test]
    fn composite_softmax_layer_norm_sum() {
        let x = rand_tensor(21, &[2, 5]);
        let w = rand_tensor(22, &[2, 5]);
        let red = weighted(&w);
        let err = grad_check(
            |g, v| {
                let s = g.softmax(v, 1)?;
                let n = g.layer_norm(s, None, None, 1e-5)?;
                red(g, n)
            },
            &x,
            1e-4,
        )
        .unwrap();
        assert!(err < 1e-4, "{}", err);
    }

    #[test]
    fn gradients_accumulate_over_fanout() {
        let mut g = Graph::<f64>::new();
        let x = g.param(Tensor::from_f64_slice(&[2], &[1.0, 2.0]).unwrap());
        let a = g.mul(x, x).unwrap();
        let b = g.add(a, x).unwrap();
        let s = g.sum(b).unwrap();
        let grads = g.backward(s).unwrap();
        assert_eq!(grads.get(x).unwrap().data(), &[3.0, 5.0]);
    }

    #[test]
    fn l2_normalize_zero_vector_is_zero() {
        let mut g = Graph::<f32>::new();
        let x = g.constant(Tensor::zeros(&[1, 4]));
        let y = g.l2_normalize(x, 1e-15).unwrap();
        assert!(g.value(y).data().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn f32_graph_is_deterministic() {
        let x = rand_tensor(30, &[6, 8]).cast::<f32>();
        let run = || {
            let mut g = Graph::<f32>::new();
            let v = g.param(x.clone());
            let s = g.softmax(v, 1).unwrap();
            let n = g.layer_norm(s, None, None, 1e-5).unwrap();
            let q = g.square(n).unwrap();
            let l = g.mean(q).unwrap();
            let grads = g.backward(l).unwrap();
            (g.value(n).clone(), grads.get(v).unwrap().clone())
        };
        let (a, ga) = run();
        let (b, gb) = run();
        assert_eq!(a.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>(), b.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>());
        assert_eq!(ga, gb);
    }

    proptest! {
        #[test]
        fn softmax_sums_to_one(v in prop::collection::vec(-1e4f32..1e4, 1..40)) {
            let n = v.len();
            let y = softmax(&Tensor::new(vec![n], v).unwrap(), 0).unwrap();
            let s: f64 = y.data().iter().map(|&p| p as f64).sum();
            prop_assert!((s - 1.0).abs() < 1e-6);
            prop_assert!(y.data().iter().all(|&p| p >= 0.0));
        }
    }
}
