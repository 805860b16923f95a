#![allow(dead_code)]

pub mod oracles;

use mrdiff::nn::{grad_check, GradCheckReport, Graph, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Contracts `y` with a fixed random tensor so every output entry carries a
/// distinct upstream gradient.
pub fn probe_loss(g: &mut Graph<'_, f64>, y: Var, seed: u64) -> Var {
    let r = Tensor::<f64>::randn(g.shape(y), &mut rng(seed));
    let r = g.constant(r);
    let p = g.mul(y, r).unwrap();
    g.sum(p)
}

/// Checks `build(graph, inputs) -> output` against finite differences of the
/// probe loss with respect to every input.
pub fn check_op(
    inputs: &[Tensor<f64>],
    tolerance: f64,
    build: impl Fn(&mut Graph<'_, f64>, &[Var]) -> Var,
) -> GradCheckReport {
    check_op_in(None, inputs, tolerance, build)
}

/// As [`check_op`], with parameters of `store` reachable from the graph.
pub fn check_op_in(
    store: Option<&mrdiff::nn::ParamStore<f64>>,
    inputs: &[Tensor<f64>],
    tolerance: f64,
    build: impl Fn(&mut Graph<'_, f64>, &[Var]) -> Var,
) -> GradCheckReport {
    let eval = |xs: &[Tensor<f64>], want_grads: bool| {
        let mut g = match store {
            Some(s) => Graph::new(s),
            None => Graph::detached(),
        };
        let vars: Vec<Var> = xs.iter().map(|t| g.input(t.clone())).collect();
        let y = build(&mut g, &vars);
        let loss = probe_loss(&mut g, y, 99);
        let value = g.value(loss).data()[0];
        let grads = want_grads.then(|| {
            let gr = g.backward(loss).unwrap();
            vars.iter()
                .zip(xs)
                .map(|(&v, t)| gr.get(v).cloned().unwrap_or_else(|| Tensor::zeros(t.shape())))
                .collect::<Vec<_>>()
        });
        (value, grads)
    };
    let (_, analytic) = eval(inputs, true);
    grad_check(|xs| eval(xs, false).0, inputs, &analytic.unwrap(), tolerance, None)
}

/// Direct-sum convolution, the reference for the im2col/GEMM kernels.
pub fn naive_conv2d(
    x: &Tensor<f64>,
    w: &Tensor<f64>,
    b: Option<&Tensor<f64>>,
    stride: usize,
    pad: usize,
    groups: usize,
) -> Tensor<f64> {
    let [n, cin, h, wd] = x.shape();
    let [cout, cin_g, kh, kw] = w.shape();
    let oh = (h + 2 * pad - kh) / stride + 1;
    let ow = (wd + 2 * pad - kw) / stride + 1;
    let cout_g = cout / groups;
    assert_eq!(cin_g, cin / groups);
    Tensor::from_fn([n, cout, oh, ow], |i, co, oy, ox| {
        let grp = co / cout_g;
        let mut acc = b.map_or(0.0, |b| b.data()[co]);
        for ci in 0..cin_g {
            for ky in 0..kh {
                for kx in 0..kw {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    let ix = (ox * stride + kx) as isize - pad as isize;
                    if iy < 0 || ix < 0 || iy >= h as isize || ix >= wd as isize {
                        continue;
                    }
                    acc += w.at(co, ci, ky, kx) * x.at(i, grp * cin_g + ci, iy as usize, ix as usize);
                }
            }
        }
        acc
    })
}

/// Finite-difference check over every parameter in `store`, using the probe
/// loss of whatever `build` returns.
pub fn check_store(
    store: &mrdiff::nn::ParamStore<f64>,
    tolerance: f64,
    max_entries: Option<usize>,
    build: impl Fn(&mut Graph<'_, f64>) -> Var,
) -> GradCheckReport {
    check_store_with_step(store, tolerance, max_entries, mrdiff::nn::gradcheck::FD_STEP, build)
}

pub fn check_store_with_step(
    store: &mrdiff::nn::ParamStore<f64>,
    tolerance: f64,
    max_entries: Option<usize>,
    step: f64,
    build: impl Fn(&mut Graph<'_, f64>) -> Var,
) -> GradCheckReport {
    check_store_subset(store, tolerance, max_entries, step, |_| true, build)
}

/// Checks only the parameters whose names satisfy `select`.
pub fn check_store_subset(
    store: &mrdiff::nn::ParamStore<f64>,
    tolerance: f64,
    max_entries: Option<usize>,
    step: f64,
    select: impl Fn(&str) -> bool,
    build: impl Fn(&mut Graph<'_, f64>) -> Var,
) -> GradCheckReport {
    let ids: Vec<_> = store.iter().filter(|(_, p)| select(&p.name)).map(|(id, _)| id).collect();
    let values: Vec<Tensor<f64>> = ids.iter().map(|&id| store.value(id).clone()).collect();
    let eval = |xs: &[Tensor<f64>]| {
        let mut s = store.clone();
        for (&id, x) in ids.iter().zip(xs) {
            *s.value_mut(id) = x.clone();
        }
        let mut g = Graph::new(&s);
        let y = build(&mut g);
        let loss = probe_loss(&mut g, y, 77);
        g.value(loss).data()[0]
    };
    let mut g = Graph::new(store);
    let y = build(&mut g);
    let loss = probe_loss(&mut g, y, 77);
    let grads = g.backward(loss).unwrap();
    let analytic: Vec<Tensor<f64>> = ids
        .iter()
        .map(|&id| grads.param(id).cloned().unwrap_or_else(|| Tensor::zeros(store.value(id).shape())))
        .collect();
    mrdiff::nn::grad_check_with_step(eval, &values, &analytic, tolerance, max_entries, step)
}

/// Replaces every parameter with small random values so no path is
/// silenced by a zero initialisation.
pub fn randomize(store: &mut mrdiff::nn::ParamStore<f64>, seed: u64, scale: f64) {
    let mut r = rng(seed);
    for p in store.iter_mut() {
        p.value = Tensor::randn(p.value.shape(), &mut r).scale(scale);
    }
}
