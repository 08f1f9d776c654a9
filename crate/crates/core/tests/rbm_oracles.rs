//! RBM sampling and loss checked against exact enumeration and finite differences.

use lpad_core::diffcore::{finite_difference_grad, grad_agreement, Graph, Mode, Tensor};
use lpad_core::rbm::{
    energies, exact_oracle, gibbs_step, pcd_update, rbm_kl_node, state_index, RbmChains, RbmNodes,
    RbmParams,
};
use lpad_core::rng::stream;
use lpad_core::Result;
use rand::Rng;

fn random_params(k: usize, l: usize, seed: u64) -> RbmParams {
    let mut rng = stream(seed, 0);
    let mut u = |n: usize| Tensor::vector((0..n).map(|_| rng.random_range(-1.0..1.0)).collect());
    let w = u(k * l).reshape(&[k, l]).unwrap();
    RbmParams::new(w, u(k), u(l)).unwrap()
}

#[test]
fn gibbs_frequencies_converge_to_enumeration() {
    let p = random_params(3, 3, 21);
    let exact = exact_oracle(&p).unwrap();
    let mut chains = RbmChains::zeros(1, 3, 3);
    let mut rng = stream(22, 0);
    let mut counts = vec![0usize; 64];
    let sweeps = 100_000;
    for _ in 0..sweeps {
        gibbs_step(&mut chains, &p, &mut rng).unwrap();
        counts[state_index(chains.v.data(), chains.h.data())] += 1;
    }
    let tv: f64 = counts
        .iter()
        .zip(&exact.probs)
        .map(|(&c, &q)| (c as f64 / sweeps as f64 - q).abs())
        .sum::<f64>()
        * 0.5;
    assert!(tv <= 0.05, "total variation {tv}");
}

#[test]
fn pcd_equals_composed_gibbs_steps() {
    let p = random_params(4, 5, 23);
    let mut a = RbmChains::zeros(7, 4, 5);
    let mut b = a.clone();
    pcd_update(&mut a, &p, 9, &mut stream(24, 0)).unwrap();
    let mut rng = stream(24, 0);
    for _ in 0..9 {
        gibbs_step(&mut b, &p, &mut rng).unwrap();
    }
    assert_eq!(a, b);
    assert_eq!(a.sweep_count, 9);
}

fn random_binary(rows: usize, cols: usize, seed: u64) -> Tensor {
    let mut rng = stream(seed, 0);
    Tensor::new(
        vec![rows, cols],
        (0..rows * cols)
            .map(|_| if rng.random::<bool>() { 1.0 } else { 0.0 })
            .collect(),
    )
    .unwrap()
}

#[test]
fn loss_gradients_match_finite_differences() {
    let (k, l, batch) = (3, 4, 2);
    let p = random_params(k, l, 25);
    let mut chains = RbmChains::zeros(6, k, l);
    pcd_update(&mut chains, &p, 3, &mut stream(26, 0)).unwrap();
    let zv = Tensor::new(vec![batch, k], vec![0.1, 0.9, 0.4, 0.7, 0.2, 0.95]).unwrap();
    let zh = random_binary(batch, l, 27);
    let log_q = Tensor::scalar(-1.3);

    let loss = |w: &Tensor, a: &Tensor, b: &Tensor, zv: &Tensor, g: &mut Graph| -> Result<_> {
        let nodes = RbmNodes {
            w: g.variable(w.clone())?,
            a: g.variable(a.clone())?,
            b: g.variable(b.clone())?,
        };
        let zvn = g.variable(zv.clone())?;
        let zhn = g.input(zh.clone())?;
        let lq = g.variable(log_q.clone())?;
        let out = rbm_kl_node(g, lq, zvn, zhn, &chains, nodes)?;
        Ok((out, nodes, zvn))
    };

    let mut g = Graph::new(Mode::Train);
    let (out, nodes, zvn) = loss(&p.w, &p.a, &p.b, &zv, &mut g).unwrap();

    // value agrees with the direct evaluation
    let pos: f64 = energies(&zv, &zh, &p).unwrap().iter().sum();
    let neg: f64 = energies(&chains.v, &chains.h, &p).unwrap().iter().sum();
    let direct = (log_q.item() + pos) / batch as f64 - neg / chains.count() as f64;
    assert!((g.value(out).item() - direct).abs() < 1e-12);

    let grads = g.backward(out).unwrap();
    let eval = |w: &Tensor, a: &Tensor, b: &Tensor, zv: &Tensor| -> Result<f64> {
        let mut g = Graph::new(Mode::Train);
        let (out, _, _) = loss(w, a, b, zv, &mut g)?;
        Ok(g.value(out).item())
    };
    let checks = [
        (
            "W",
            nodes.w,
            finite_difference_grad(|x| eval(x, &p.a, &p.b, &zv), &p.w, 1e-6).unwrap(),
        ),
        (
            "a",
            nodes.a,
            finite_difference_grad(|x| eval(&p.w, x, &p.b, &zv), &p.a, 1e-6).unwrap(),
        ),
        (
            "b",
            nodes.b,
            finite_difference_grad(|x| eval(&p.w, &p.a, x, &zv), &p.b, 1e-6).unwrap(),
        ),
        (
            "zv",
            zvn,
            finite_difference_grad(|x| eval(&p.w, &p.a, &p.b, x), &zv, 1e-6).unwrap(),
        ),
    ];
    for (name, node, numeric) in checks {
        let (worst, ok) = grad_agreement(grads.of(node).unwrap(), &numeric, 1e-4, 1e-9);
        assert!(ok, "{name}: worst relative error {worst:e}");
    }

    // d/da of the phase difference is -(mean zv - mean chain v)
    let ga = grads.of(nodes.a).unwrap();
    for i in 0..k {
        let mean_zv = (0..batch).map(|r| zv.data()[r * k + i]).sum::<f64>() / batch as f64;
        let mean_v = (0..chains.count())
            .map(|c| chains.v.data()[c * k + i])
            .sum::<f64>()
            / chains.count() as f64;
        assert!((ga.data()[i] + (mean_zv - mean_v)).abs() < 1e-12);
    }
}
