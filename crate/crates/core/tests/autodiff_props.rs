use mmfuse::autodiff::{grad_check, Graph, Tensor};
use proptest::prelude::*;

fn matrix() -> impl Strategy<Value = Tensor> {
    (1usize..6, 1usize..9).prop_flat_map(|(r, c)| {
        prop::collection::vec(-50.0f64..50.0, r * c)
            .prop_map(move |d| Tensor::matrix(r, c, d).unwrap())
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn softmax_rows_are_distributions(t in matrix()) {
        let mut g = Graph::new();
        let x = g.constant(t.clone());
        let s = g.softmax_rows(x).unwrap();
        let out = g.value(s);
        for r in 0..t.rows() {
            let row = out.row_slice(r);
            prop_assert!(row.iter().all(|&p| (0.0..=1.0).contains(&p)));
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn softmax_is_shift_invariant(t in matrix(), c in -100.0f64..100.0) {
        let mut g = Graph::new();
        let x = g.constant(t.clone());
        let s1 = g.softmax_rows(x).unwrap();
        let shifted = g.affine(x, 1.0, c).unwrap();
        let s2 = g.softmax_rows(shifted).unwrap();
        for (a, b) in g.value(s1).data().iter().zip(g.value(s2).data()) {
            prop_assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn shared_subexpressions_accumulate(x in prop::collection::vec(-3.0f64..3.0, 1..8)) {
        // y = sum(x*x + x + tanh(x)*x); dy/dx = 2x + 1 + (1 - tanh²x)x + tanh x
        let mut g = Graph::new();
        let v = g.param(Tensor::row(x.clone()).unwrap());
        let sq = g.mul(v, v).unwrap();
        let t = g.tanh(v).unwrap();
        let tx = g.mul(t, v).unwrap();
        let a = g.add(sq, v).unwrap();
        let b = g.add(a, tx).unwrap();
        let y = g.sum(b).unwrap();
        g.backward(y).unwrap();
        let grad = g.grad(v);
        for (gi, &xi) in grad.data().iter().zip(&x) {
            let th = xi.tanh();
            let want = 2.0 * xi + 1.0 + (1.0 - th * th) * xi + th;
            prop_assert!((gi - want).abs() < 1e-12, "{gi} vs {want}");
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn random_two_layer_graphs_pass_grad_check(
        w1 in prop::collection::vec(-1.0f64..1.0, 12),
        w2 in prop::collection::vec(-1.0f64..1.0, 4),
        x in prop::collection::vec(-2.0f64..2.0, 6),
    ) {
        let params = [
            Tensor::matrix(3, 4, w1).unwrap(),
            Tensor::matrix(4, 1, w2).unwrap(),
            Tensor::matrix(2, 3, x).unwrap(),
        ];
        let err = grad_check(
            |g, v| {
                let h = g.matmul(v[2], v[0])?;
                let h = g.tanh(h)?;
                let o = g.matmul(h, v[1])?;
                let o = g.sigmoid(o)?;
                g.mean(o)
            },
            &params,
            1e-5,
        )
        .unwrap();
        prop_assert!(err < 1e-6, "relative error {err}");
    }
}

#[test]
fn gradients_accumulate_until_zeroed() {
    let mut g = Graph::new();
    let x = g.param(Tensor::row(vec![1.5, -2.0]).unwrap());
    let y = g.sum(x).unwrap();
    g.backward(y).unwrap();
    g.backward(y).unwrap();
    assert_eq!(g.grad(x).data(), &[2.0, 2.0]);
    g.zero_grad();
    assert_eq!(g.grad(x).data(), &[0.0, 0.0]);
}
