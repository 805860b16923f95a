//! Brute-force reference implementations, written from the formulas.

use mrdiff::nn::Tensor;

fn cubic(x: f64) -> f64 {
    let a = -0.5;
    let x = x.abs();
    if x <= 1.0 {
        (a + 2.0) * x.powi(3) - (a + 3.0) * x.powi(2) + 1.0
    } else if x < 2.0 {
        a * x.powi(3) - 5.0 * a * x.powi(2) + 8.0 * a * x - 4.0 * a
    } else {
        0.0
    }
}

/// Dense `out × in` interpolation matrix. Shrinking stretches the kernel by
/// the inverse scale; out-of-range taps fold onto the edge pixel.
pub fn resize_matrix(n_in: usize, n_out: usize) -> Vec<Vec<f64>> {
    let scale = n_out as f64 / n_in as f64;
    let s = scale.min(1.0);
    let mut m = vec![vec![0.0; n_in]; n_out];
    for (i, row) in m.iter_mut().enumerate() {
        let centre = (i as f64 + 0.5) / scale - 0.5;
        for j in -(4 * n_in as isize)..(5 * n_in as isize) {
            let w = s * cubic(s * (centre - j as f64));
            row[j.clamp(0, n_in as isize - 1) as usize] += w;
        }
        let total: f64 = row.iter().sum();
        row.iter_mut().for_each(|v| *v /= total);
    }
    m
}

pub fn dense_resize(img: &Tensor<f64>, oh: usize, ow: usize) -> Tensor<f64> {
    let [n, c, h, w] = img.shape();
    let (mh, mw) = (resize_matrix(h, oh), resize_matrix(w, ow));
    let mut out = Tensor::zeros([n, c, oh, ow]);
    for p in 0..n * c {
        let src = &img.data()[p * h * w..(p + 1) * h * w];
        for y in 0..oh {
            for x in 0..ow {
                let mut acc = 0.0;
                for i in 0..h {
                    for j in 0..w {
                        acc += mh[y][i] * src[i * w + j] * mw[x][j];
                    }
                }
                out.data_mut()[(p * oh + y) * ow + x] = acc;
            }
        }
    }
    out
}

pub fn luma(img: &Tensor<f64>, item: usize) -> Vec<f64> {
    let [_, _, h, w] = img.shape();
    let d = img.item(item);
    (0..h * w).map(|p| 0.299 * d[p] + 0.587 * d[h * w + p] + 0.114 * d[2 * h * w + p]).collect()
}

pub fn psnr(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
    let mse = a.data().iter().zip(b.data()).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / a.data().len() as f64;
    if mse == 0.0 {
        99.0
    } else {
        -10.0 * mse.log10()
    }
}

/// Mean SSIM over every fully-contained 11×11 window, each evaluated from
/// its own weighted moments.
pub fn ssim(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
    let [n, _, h, w] = a.shape();
    let k = 11;
    let mut g2 = vec![0.0; k * k];
    for i in 0..k {
        for j in 0..k {
            let (di, dj) = (i as f64 - 5.0, j as f64 - 5.0);
            g2[i * k + j] = (-(di * di + dj * dj) / (2.0 * 1.5 * 1.5)).exp();
        }
    }
    let norm: f64 = g2.iter().sum();
    g2.iter_mut().for_each(|v| *v /= norm);
    let (c1, c2) = (0.01f64.powi(2), 0.03f64.powi(2));
    let mut total = 0.0;
    for item in 0..n {
        let (x, y) = (luma(a, item), luma(b, item));
        let mut acc = 0.0;
        let mut count = 0;
        for oy in 0..=h - k {
            for ox in 0..=w - k {
                let (mut mx, mut my) = (0.0, 0.0);
                for i in 0..k {
                    for j in 0..k {
                        let p = (oy + i) * w + ox + j;
                        mx += g2[i * k + j] * x[p];
                        my += g2[i * k + j] * y[p];
                    }
                }
                let (mut vx, mut vy, mut cxy) = (0.0, 0.0, 0.0);
                for i in 0..k {
                    for j in 0..k {
                        let p = (oy + i) * w + ox + j;
                        vx += g2[i * k + j] * (x[p] - mx).powi(2);
                        vy += g2[i * k + j] * (y[p] - my).powi(2);
                        cxy += g2[i * k + j] * (x[p] - mx) * (y[p] - my);
                    }
                }
                acc += (2.0 * mx * my + c1) * (2.0 * cxy + c2) / ((mx * mx + my * my + c1) * (vx + vy + c2));
                count += 1;
            }
        }
        total += acc / count as f64;
    }
    total / n as f64
}

pub fn avg_gradient(img: &Tensor<f64>) -> f64 {
    let [n, _, h, w] = img.shape();
    let mut total = 0.0;
    for item in 0..n {
        let y = luma(img, item);
        let mut acc = 0.0;
        for i in 0..h - 1 {
            for j in 0..w - 1 {
                let dx = y[i * w + j + 1] - y[i * w + j];
                let dy = y[(i + 1) * w + j] - y[i * w + j];
                acc += (0.5 * (dx * dx + dy * dy)).sqrt();
            }
        }
        total += acc / ((h - 1) * (w - 1)) as f64;
    }
    total / n as f64
}

/// `E[x_{t-1} | x_t, x_0]` for the scalar chain
/// `x_{t-1} | x_0 ~ N(μ + c·(x_0 − μ), v)` and
/// `x_t | x_{t-1} ~ N(μ + γ·(x_{t-1} − μ), δ²(1 − γ²))`,
/// by multiplying the two densities and completing the square.
pub fn conjugate_posterior_mean(x_t: f64, x0: f64, mu: f64, c: f64, v: f64, gamma: f64, delta: f64) -> f64 {
    let prior_mean = mu + c * (x0 - mu);
    let lik_var = delta * delta * (1.0 - gamma * gamma);
    if v == 0.0 {
        return prior_mean;
    }
    if lik_var == 0.0 {
        return mu + (x_t - mu) / gamma;
    }
    // in x_{t-1}: prior precision 1/v; the likelihood contributes γ²/lik_var
    let precision = 1.0 / v + gamma * gamma / lik_var;
    let weighted = prior_mean / v + gamma * (x_t - mu + gamma * mu) / lik_var;
    weighted / precision
}

/// Per-pixel terminal moments of many Euler–Maruyama forward paths, as
/// `(worst mean error in standard errors, worst relative variance error)`.
pub fn forward_path_moments(
    s: &mrdiff::NoiseSchedule,
    paths: usize,
    substeps: usize,
    seed: u64,
) -> (f64, f64) {
    use rand::SeedableRng;
    let mut r = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let x0 = Tensor::<f64>::uniform([1, 1, 8, 8], 0.0, 1.0, &mut r);
    let mu = Tensor::<f64>::uniform([1, 1, 8, 8], 0.0, 1.0, &mut r);
    let rep = |t: &Tensor<f64>| Tensor::stack(&vec![t.clone(); paths]).unwrap();
    let out = mrdiff::sde::forward_path_simulate(s, &rep(&x0), &rep(&mu), substeps, &mut r).unwrap();
    let c = (-s.lambda_bars()[s.steps()]).exp();
    let n = s.delta().powi(2) * (1.0 - c * c);
    let (mut worst_z, mut worst_var) = (0.0f64, 0.0f64);
    for p in 0..64 {
        let vals: Vec<f64> = (0..paths).map(|i| out.item(i)[p]).collect();
        let mean = vals.iter().sum::<f64>() / paths as f64;
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (paths - 1) as f64;
        let m = mu.data()[p] + c * (x0.data()[p] - mu.data()[p]);
        worst_z = worst_z.max((mean - m).abs() / (n / paths as f64).sqrt());
        worst_var = worst_var.max((var / n - 1.0).abs());
    }
    (worst_z, worst_var)
}
