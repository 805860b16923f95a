//! Built-in oracle suites: closed-form marginals against brute-force path
//! simulation, the one-step posterior against conjugate-Gaussian algebra,
//! analytic gradients against finite differences, and reverse sampling
//! driven by the true score.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::cpem::{Cpem, CpemConfig, Rcab};
use crate::eanet::{Eab, Eanet, EanetConfig};
use crate::error::Result;
use crate::nn::{grad_check, Graph, ParamStore, Tensor, Var};
use crate::sampling::{reverse_chain, OraclePredictor, SampleConfig};
use crate::schedule::NoiseSchedule;
use crate::sde;
use crate::toolkit::{make_lr_pair, psnr};

#[derive(Clone, Debug, PartialEq)]
pub struct CheckRow {
    pub name: String,
    pub detail: String,
    pub passed: bool,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct SelfCheckReport {
    pub rows: Vec<CheckRow>,
}

impl SelfCheckReport {
    pub fn passed(&self) -> bool {
        self.rows.iter().all(|r| r.passed)
    }

    fn push(&mut self, name: &str, passed: bool, detail: String) {
        self.rows.push(CheckRow { name: name.to_string(), detail, passed });
    }
}

impl fmt::Display for SelfCheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let width = self.rows.iter().map(|r| r.name.len()).max().unwrap_or(0);
        for r in &self.rows {
            let status = if r.passed { "PASS" } else { "FAIL" };
            writeln!(f, "{status}  {:width$}  {}", r.name, r.detail)?;
        }
        Ok(())
    }
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Runs every suite. `quick` divides the Monte-Carlo sizes by ten.
pub fn run(quick: bool) -> Result<SelfCheckReport> {
    let mut report = SelfCheckReport::default();
    let s = NoiseSchedule::default_schedule();
    forward_marginal(&mut report, &s, if quick { 1_000 } else { 10_000 })?;
    posterior_identity(&mut report, &s, if quick { 100 } else { 1_000 })?;
    score_identity(&mut report, &s)?;
    gradients(&mut report)?;
    oracle_sampling(&mut report, &s, if quick { 2 } else { 10 })?;
    Ok(report)
}

fn forward_marginal(report: &mut SelfCheckReport, s: &NoiseSchedule, paths: usize) -> Result<()> {
    let mut r = rng(1);
    let x0 = Tensor::<f64>::uniform([1, 1, 8, 8], 0.0, 1.0, &mut r);
    let mu = Tensor::<f64>::uniform([1, 1, 8, 8], 0.0, 1.0, &mut r);
    let x0s = Tensor::stack(&vec![x0.clone(); paths])?;
    let mus = Tensor::stack(&vec![mu.clone(); paths])?;
    let out = sde::forward_path_simulate(s, &x0s, &mus, 20, &mut r)?;
    let t = s.steps();
    let (c, n) = (s.mean_coeff(t)?, s.variance(t)?);
    let (mut worst_z, mut worst_var) = (0.0f64, 0.0f64);
    for p in 0..64 {
        let mean = (0..paths).map(|i| out.item(i)[p]).sum::<f64>() / paths as f64;
        let var = (0..paths).map(|i| (out.item(i)[p] - mean).powi(2)).sum::<f64>() / (paths - 1) as f64;
        let m = mu.data()[p] + c * (x0.data()[p] - mu.data()[p]);
        worst_z = worst_z.max((mean - m).abs() / (n / paths as f64).sqrt());
        worst_var = worst_var.max((var / n - 1.0).abs());
    }
    // 5% is the target; small runs widen it to four standard errors of a variance
    let var_tol = 0.05f64.max(4.0 * (2.0 / (paths - 1) as f64).sqrt());
    report.push(
        "forward marginal (Monte Carlo)",
        worst_z <= 4.0 && worst_var <= var_tol,
        format!("{paths} paths: mean {worst_z:.2} SE (<= 4), variance {:.2}% (<= {:.1}%)", 100.0 * worst_var, 100.0 * var_tol),
    );
    Ok(())
}

fn posterior_identity(report: &mut SelfCheckReport, s: &NoiseSchedule, cases: usize) -> Result<()> {
    let mut r = rng(2);
    let mut worst = 0.0f64;
    for _ in 0..cases {
        let t = r.random_range(1..=s.steps());
        let x0 = Tensor::<f64>::uniform([1, 1, 2, 2], -1.0, 2.0, &mut r);
        let xt = Tensor::<f64>::uniform([1, 1, 2, 2], -1.0, 2.0, &mut r);
        let mu = Tensor::<f64>::uniform([1, 1, 2, 2], -1.0, 2.0, &mut r);
        let got = sde::ideal_reverse_state(s, &xt, &x0, &mu, t)?;
        let want = sde::posterior_mean_oracle(s, &xt, &x0, &mu, t)?;
        for (a, b) in got.data().iter().zip(want.data()) {
            worst = worst.max((a - b).abs() / b.abs().max(1.0));
        }
    }
    report.push("posterior identity", worst <= 1e-10, format!("{cases} cases: max rel err {worst:.1e} (<= 1e-10)"));
    Ok(())
}

fn score_identity(report: &mut SelfCheckReport, s: &NoiseSchedule) -> Result<()> {
    let mut r = rng(3);
    let mut worst = 0.0f64;
    for t in 1..=s.steps() {
        let x0 = Tensor::<f64>::uniform([1, 3, 4, 4], 0.0, 1.0, &mut r);
        let mu = Tensor::<f64>::uniform([1, 3, 4, 4], 0.0, 1.0, &mut r);
        let (xt, eps) = sde::forward_marginal_sample(s, &x0, &mu, t, &mut r)?;
        let score = sde::conditional_score(s, &xt, &x0, &mu, t)?;
        let sd = s.variance(t)?.sqrt();
        for (a, e) in score.data().iter().zip(eps.data()) {
            worst = worst.max((a + e / sd).abs() * sd);
        }
    }
    report.push("score identity", worst <= 1e-12, format!("max |score·sqrt(n) + eps| {worst:.1e} (<= 1e-12)"));
    Ok(())
}

fn probe(g: &mut Graph<'_, f64>, y: Var) -> Result<Var> {
    let r = Tensor::<f64>::randn(g.shape(y), &mut rng(99));
    let r = g.constant(r);
    let p = g.mul(y, r)?;
    Ok(g.sum(p))
}

/// Largest relative finite-difference error over `inputs` and every
/// parameter in `store` for the probe loss of `build`.
fn module_grad_error(
    store: &ParamStore<f64>,
    inputs: &[Tensor<f64>],
    max_entries: Option<usize>,
    build: impl Fn(&mut Graph<'_, f64>, &[Var]) -> Result<Var>,
) -> Result<f64> {
    let ids: Vec<_> = store.ids().collect();
    let mut all: Vec<Tensor<f64>> = inputs.to_vec();
    all.extend(ids.iter().map(|&id| store.value(id).clone()));
    let k = inputs.len();

    let mut g = Graph::new(store);
    let vars: Vec<Var> = inputs.iter().map(|t| g.input(t.clone())).collect();
    let y = build(&mut g, &vars)?;
    let loss = probe(&mut g, y)?;
    let grads = g.backward(loss)?;
    let mut analytic: Vec<Tensor<f64>> =
        vars.iter().zip(inputs).map(|(&v, t)| grads.get(v).cloned().unwrap_or_else(|| Tensor::zeros(t.shape()))).collect();
    analytic.extend(ids.iter().map(|&id| grads.param(id).cloned().unwrap_or_else(|| Tensor::zeros(store.value(id).shape()))));

    let mut failure = None;
    let rep = grad_check(
        |xs| {
            let mut s = store.clone();
            for (&id, x) in ids.iter().zip(&xs[k..]) {
                *s.value_mut(id) = x.clone();
            }
            let mut g = Graph::new(&s);
            let vars: Vec<Var> = xs[..k].iter().map(|t| g.constant(t.clone())).collect();
            match build(&mut g, &vars).and_then(|y| probe(&mut g, y)) {
                Ok(l) => g.value(l).data()[0],
                Err(e) => {
                    failure = Some(e);
                    f64::NAN
                }
            }
        },
        &all,
        &analytic,
        f64::INFINITY,
        max_entries,
    );
    match failure {
        Some(e) => Err(e),
        None => Ok(rep.worst()),
    }
}

fn randomize(store: &mut ParamStore<f64>, seed: u64, scale: f64) {
    let mut r = rng(seed);
    for p in store.iter_mut() {
        p.value = Tensor::randn(p.value.shape(), &mut r).scale(scale);
    }
}

fn gradients(report: &mut SelfCheckReport) -> Result<()> {
    let mut row = |name: &str, tol: f64, err: f64| {
        report.push(name, err <= tol, format!("max rel err {err:.1e} (<= {tol:.0e})"));
    };
    let mut r = rng(4);
    let empty = ParamStore::<f64>::new();

    let x = Tensor::<f64>::randn([2, 4, 5, 6], &mut r);
    let w = Tensor::<f64>::randn([6, 2, 3, 3], &mut r);
    let b = Tensor::<f64>::randn([1, 6, 1, 1], &mut r);
    let err = module_grad_error(&empty, &[x.clone(), w, b], None, |g, v| g.conv2d(v[0], v[1], Some(v[2]), 2, 1, 2))?;
    let dw = Tensor::<f64>::randn([4, 1, 5, 5], &mut r);
    let err = err.max(module_grad_error(&empty, &[x.clone(), dw], None, |g, v| g.conv2d(v[0], v[1], None, 1, 2, 4))?);
    row("gradient: conv2d", 1e-5, err);

    let alpha = Tensor::<f64>::randn([1, 4, 1, 1], &mut r);
    let beta = Tensor::<f64>::randn([1, 4, 1, 1], &mut r);
    let err = module_grad_error(&empty, &[x.clone(), alpha, beta], None, |g, v| {
        g.layer_norm_channel(v[0], v[1], v[2], 1e-6)
    })?;
    row("gradient: layer norm", 1e-5, err);

    let err = module_grad_error(&empty, &[x.clone()], None, |g, v| {
        let a = g.simple_gate(v[0])?;
        let p = g.global_avg_pool(a)?;
        let s = g.sigmoid(p);
        g.scale_channels(a, s)
    })?;
    let y = Tensor::<f64>::randn([1, 8, 4, 6], &mut r);
    let err = err.max(module_grad_error(&empty, &[y], None, |g, v| {
        let u = g.pixel_shuffle(v[0], 2)?;
        let d = g.pixel_unshuffle(u, 2)?;
        let m = g.mul(d, v[0])?;
        Ok(g.relu(m))
    })?);
    row("gradient: gates, pooling, shuffles", 1e-5, err);

    let mut store = ParamStore::<f64>::new();
    let block = Rcab::new(&mut store, "rcab", 8, 4, &mut r)?;
    randomize(&mut store, 5, 0.3);
    let input = Tensor::<f64>::randn([1, 8, 5, 5], &mut r);
    row("gradient: RCAB", 1e-5, module_grad_error(&store, &[input], None, |g, v| block.forward(g, v[0]))?);

    let mut store = ParamStore::<f64>::new();
    let block = Eab::new(&mut store, "eab", 8, 8, &mut r)?;
    randomize(&mut store, 6, 0.3);
    let input = Tensor::<f64>::randn([1, 8, 6, 6], &mut r);
    let te = Tensor::<f64>::randn([1, 8, 1, 1], &mut r);
    row("gradient: EAB", 1e-5, module_grad_error(&store, &[input, te], None, |g, v| block.forward(g, v[0], Some(v[1])))?);

    let cfg = CpemConfig { n_rcab: 1, channels: 8, scale: 2, ca_reduction: 4, enabled: true };
    let mut store = ParamStore::<f64>::new();
    let cpem = Cpem::new(&mut store, "cpem", &cfg, &mut r)?;
    randomize(&mut store, 7, 0.3);
    let v = Tensor::<f64>::randn([1, 3, 3, 3], &mut r);
    let folded = Tensor::<f64>::randn([1, 12, 3, 3], &mut r);
    row("gradient: CPEM", 1e-5, module_grad_error(&store, &[v, folded], Some(40), |g, x| cpem.forward(g, x[0], x[1]))?);

    let cfg = EanetConfig { base_channels: 4, enc_counts: [1, 1, 1, 1], dec_counts: [1, 1, 1, 1], mid_count: 1, time_dim: 8, ..Default::default() };
    let mut store = ParamStore::<f64>::new();
    let net = Eanet::new(&mut store, "eanet", &cfg, &mut r)?;
    randomize(&mut store, 8, 0.2);
    let cond = Tensor::<f64>::randn([1, 3, 8, 8], &mut r);
    row("gradient: EANet", 1e-4, module_grad_error(&store, &[cond], Some(6), |g, v| net.forward(g, v[0], &[7]))?);
    Ok(())
}

fn oracle_sampling(report: &mut SelfCheckReport, s: &NoiseSchedule, images: usize) -> Result<()> {
    let mut means = Vec::new();
    for steps in [10, 20, 50, 100] {
        let mut total = 0.0;
        for seed in 0..images as u64 {
            let x0 = Tensor::<f64>::uniform([1, 3, 32, 32], 0.0, 1.0, &mut rng(100 + seed));
            let (v, mu) = make_lr_pair(&x0, 4)?;
            let oracle = OraclePredictor { schedule: s, x0: x0.clone(), scale: 4 };
            let cfg = SampleConfig { steps: Some(steps), stochastic: false, seed };
            total += psnr(&reverse_chain(&oracle, s, &v, &mu, &cfg)?, &x0, 1.0)?;
        }
        means.push(total / images as f64);
    }
    let monotone = means.windows(2).all(|w| w[1] >= w[0]);
    let last = *means.last().unwrap_or(&0.0);
    let detail = means.iter().map(|m| format!("{m:.1}")).collect::<Vec<_>>().join("/");
    report.push(
        "oracle-score sampling",
        last >= 25.0 && monotone,
        format!("{images} images, PSNR at 10/20/50/100 steps {detail} dB (>= 25, non-decreasing)"),
    );
    Ok(())
}
