//! Every primitive's adjoint against central finite differences.

use lpad_core::diffcore::{
    finite_difference_grad, grad_agreement, Graph, Mode, NodeId, Tensor, UpsampleMode,
};
use lpad_core::rng::{standard_normal, stream};
use lpad_core::Result;

fn randn(shape: &[usize], seed: u64) -> Tensor {
    let mut rng = stream(seed, 99);
    let n = shape.iter().product();
    Tensor::new(
        shape.to_vec(),
        (0..n).map(|_| standard_normal(&mut rng)).collect(),
    )
    .unwrap()
}

fn positive(shape: &[usize], seed: u64) -> Tensor {
    randn(shape, seed).map(|v| 0.5 + v.abs())
}

/// Builds `sum(op(inputs) * R)` for a fixed random projection `R`, checks
/// the analytic gradient of every input against finite differences.
fn check<F>(name: &str, inputs: Vec<Tensor>, mode: Mode, build: F)
where
    F: Fn(&mut Graph, &[NodeId]) -> Result<NodeId>,
{
    let scalar_fn = |xs: &[Tensor]| -> Result<(Graph, NodeId, Vec<NodeId>)> {
        let mut g = Graph::new(mode);
        let ids: Vec<NodeId> = xs.iter().map(|t| g.variable(t.clone()).unwrap()).collect();
        let out = build(&mut g, &ids)?;
        let proj = randn(g.shape(out), 4242);
        let p = g.input(proj)?;
        let prod = g.mul(out, p)?;
        let s = g.sum(prod)?;
        Ok((g, s, ids))
    };
    let (g, root, ids) = scalar_fn(&inputs).unwrap();
    let grads = g.backward(root).unwrap();
    for (k, id) in ids.iter().enumerate() {
        let analytic = grads
            .of(*id)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(inputs[k].shape()));
        let numeric = finite_difference_grad(
            |x| {
                let mut xs = inputs.clone();
                xs[k] = x.clone();
                let (g, s, _) = scalar_fn(&xs)?;
                Ok(g.value(s).item())
            },
            &inputs[k],
            1e-6,
        )
        .unwrap();
        let (worst, ok) = grad_agreement(&analytic, &numeric, 1e-4, 1e-8);
        assert!(ok, "{name}: input {k} worst relative error {worst:e}");
    }
}

#[test]
fn elementwise_primitives() {
    let a = randn(&[3, 4], 1);
    let b = randn(&[3, 4], 2);
    check("add", vec![a.clone(), b.clone()], Mode::Train, |g, x| {
        g.add(x[0], x[1])
    });
    check("sub", vec![a.clone(), b.clone()], Mode::Train, |g, x| {
        g.sub(x[0], x[1])
    });
    check("mul", vec![a.clone(), b.clone()], Mode::Train, |g, x| {
        g.mul(x[0], x[1])
    });
    check("scale", vec![a.clone()], Mode::Train, |g, x| {
        g.scale(x[0], -1.7)
    });
    check("add_scalar", vec![a.clone()], Mode::Train, |g, x| {
        g.add_scalar(x[0], 0.3)
    });
    check("exp", vec![a.clone()], Mode::Train, |g, x| g.exp(x[0]));
    check("log", vec![positive(&[3, 4], 3)], Mode::Train, |g, x| {
        g.log(x[0])
    });
    check("sigmoid", vec![a.clone()], Mode::Train, |g, x| {
        g.sigmoid(x[0])
    });
    check("softplus", vec![a.clone()], Mode::Train, |g, x| {
        g.softplus(x[0])
    });
    check("relu", vec![a.clone()], Mode::Train, |g, x| g.relu(x[0]));
    check("clamp", vec![a.clone()], Mode::Train, |g, x| {
        g.clamp(x[0], -0.5, 0.5)
    });
}

#[test]
fn reductions_and_shapes() {
    let a = randn(&[2, 3, 4], 5);
    check("sum", vec![a.clone()], Mode::Train, |g, x| g.sum(x[0]));
    check("mean", vec![a.clone()], Mode::Train, |g, x| g.mean(x[0]));
    check("reshape", vec![a.clone()], Mode::Train, |g, x| {
        g.reshape(x[0], &[6, 4])
    });
    check("narrow_time", vec![a.clone()], Mode::Train, |g, x| {
        g.narrow(x[0], 2, 1, 2)
    });
    check("narrow_channel", vec![a.clone()], Mode::Train, |g, x| {
        g.narrow(x[0], 1, 1, 2)
    });
    check(
        "concat",
        vec![a.clone(), randn(&[2, 1, 4], 6)],
        Mode::Train,
        |g, x| g.concat(&[x[0], x[1]], 1),
    );
}

#[test]
fn affine_primitives() {
    check(
        "matmul",
        vec![randn(&[3, 4], 7), randn(&[4, 2], 8)],
        Mode::Train,
        |g, x| g.matmul(x[0], x[1]),
    );
    check(
        "linear",
        vec![randn(&[3, 4], 9), randn(&[4, 2], 10), randn(&[2], 11)],
        Mode::Train,
        |g, x| g.linear(x[0], x[1], x[2]),
    );
}

#[test]
fn convolutions() {
    for k in [1usize, 3, 5] {
        check(
            "conv1d",
            vec![
                randn(&[2, 3, 7], 12),
                randn(&[4, 3, k], 13),
                randn(&[4], 14),
            ],
            Mode::Train,
            |g, x| g.conv1d(x[0], x[1], x[2]),
        );
        check(
            "conv_transpose1d",
            vec![
                randn(&[2, 3, 7], 15),
                randn(&[3, 4, k], 16),
                randn(&[4], 17),
            ],
            Mode::Train,
            |g, x| g.conv_transpose1d(x[0], x[1], x[2]),
        );
    }
}

#[test]
fn batch_norm_both_modes() {
    let rm = Tensor::vector(vec![0.2, -0.1, 0.4]);
    let rv = Tensor::vector(vec![1.5, 0.7, 2.0]);
    let inputs = vec![
        randn(&[4, 3, 5], 18),
        randn(&[3], 19).map(|v| 1.0 + 0.3 * v),
        randn(&[3], 20),
    ];
    check("batch_norm_train", inputs.clone(), Mode::Train, |g, x| {
        g.batch_norm(x[0], x[1], x[2], (&rm, &rv), "bn")
    });
    check("batch_norm_eval", inputs, Mode::Eval, |g, x| {
        g.batch_norm(x[0], x[1], x[2], (&rm, &rv), "bn")
    });
}

#[test]
fn pooling_and_upsampling() {
    check(
        "max_pool2",
        vec![randn(&[2, 3, 8], 21)],
        Mode::Train,
        |g, x| g.max_pool2(x[0]),
    );
    check(
        "upsample_linear",
        vec![randn(&[2, 3, 5], 22)],
        Mode::Train,
        |g, x| g.upsample2(x[0], UpsampleMode::Linear),
    );
    check(
        "upsample_nearest",
        vec![randn(&[2, 3, 5], 23)],
        Mode::Train,
        |g, x| g.upsample2(x[0], UpsampleMode::Nearest),
    );
}

#[test]
fn scalar_examples() {
    let mut g = Graph::new(Mode::Train);
    let zero = g.variable(Tensor::scalar(0.0)).unwrap();
    let s = g.sigmoid(zero).unwrap();
    assert_eq!(g.value(s).item(), 0.5);
    let sp = g.softplus(zero).unwrap();
    assert!((g.value(sp).item() - std::f64::consts::LN_2).abs() < 1e-15);
    let grads = g.backward(s).unwrap();
    assert_eq!(grads.of(zero).unwrap().item(), 0.25);

    let mut g = Graph::new(Mode::Train);
    let x = g.variable(Tensor::scalar(3.0)).unwrap();
    let sq = g.mul(x, x).unwrap();
    assert_eq!(g.backward(sq).unwrap().of(x).unwrap().item(), 6.0);

    let mut g = Graph::new(Mode::Train);
    let v = g
        .variable(Tensor::vector(vec![1.0, 3.0, 2.0, 5.0]))
        .unwrap();
    let r = g.reshape(v, &[1, 1, 4]).unwrap();
    let p = g.max_pool2(r).unwrap();
    assert_eq!(g.value(p).data(), &[3.0, 5.0]);
    let m = g.mean(v).unwrap();
    assert_eq!(g.backward(m).unwrap().of(v).unwrap().data(), &[0.25; 4]);
}
