//! Scalar attention logits for a single `(i, j)` pair, outside the tape.

use crate::autodiff::Tensor;
use crate::error::{Error, Result};

pub fn leaky_relu(x: f64, slope: f64) -> f64 {
    if x >= 0.0 {
        x
    } else {
        slope * x
    }
}

fn check_len(op: &'static str, what: &str, got: usize, want: usize) -> Result<()> {
    if got != want {
        return Err(Error::ShapeMismatch {
            op,
            detail: format!("{what} has length {got}, expected {want}"),
        });
    }
    Ok(())
}

/// `LeakyReLU(a^T [Wh_i || Wh_j])` given already-projected features.
pub fn gat_logit(hi_proj: &[f64], hj_proj: &[f64], a: &[f64], slope: f64) -> Result<f64> {
    check_len("gat_logit", "hj_proj", hj_proj.len(), hi_proj.len())?;
    check_len("gat_logit", "a", a.len(), 2 * hi_proj.len())?;
    let f = hi_proj.len();
    let s: f64 = a[..f].iter().zip(hi_proj).map(|(x, y)| x * y).sum::<f64>()
        + a[f..].iter().zip(hj_proj).map(|(x, y)| x * y).sum::<f64>();
    Ok(leaky_relu(s, slope))
}

/// `q^T LeakyReLU(W [h_i || h_j])` with `W` of shape `k x 2d`.
pub fn gatv2_logit(hi: &[f64], hj: &[f64], w: &Tensor, q: &[f64], slope: f64) -> Result<f64> {
    check_len("gatv2_logit", "hj", hj.len(), hi.len())?;
    check_len("gatv2_logit", "W columns", w.cols(), 2 * hi.len())?;
    check_len("gatv2_logit", "q", q.len(), w.rows())?;
    let d = hi.len();
    let mut total = 0.0;
    for (r, qr) in q.iter().enumerate() {
        let row = w.row(r);
        let z: f64 = row[..d].iter().zip(hi).map(|(x, y)| x * y).sum::<f64>()
            + row[d..].iter().zip(hj).map(|(x, y)| x * y).sum::<f64>();
        total += qr * leaky_relu(z, slope);
    }
    Ok(total)
}

/// `-sum_l w_l |h_il - h_jl|`.
pub fn weighted_l1_logit(hi: &[f64], hj: &[f64], w: &[f64]) -> Result<f64> {
    check_len("weighted_l1_logit", "hj", hj.len(), hi.len())?;
    check_len("weighted_l1_logit", "w", w.len(), hi.len())?;
    if let Some(bad) = w.iter().find(|&&x| !(x > 0.0)) {
        return Err(Error::InvalidParameter(format!("weights must be positive, got {bad}")));
    }
    Ok(-hi
        .iter()
        .zip(hj)
        .zip(w)
        .map(|((a, b), wl)| wl * (a - b).abs())
        .sum::<f64>())
}

/// GATv2 parameters `(W, q)` whose logit equals the weighted ℓ1 logit:
/// `W = [[D_w, -D_w], [-D_w, D_w]]`, `q = -1/(1 - beta) * 1`. Relies on
/// `LeakyReLU(t) + LeakyReLU(-t) = (1 - beta)|t|`.
pub fn embed_l1_as_gatv2(w: &[f64], beta: f64) -> Result<(Tensor, Vec<f64>)> {
    if !(beta > 0.0 && beta < 1.0) {
        return Err(Error::InvalidParameter(format!("slope must lie in (0, 1), got {beta}")));
    }
    if let Some(bad) = w.iter().find(|&&x| !(x > 0.0)) {
        return Err(Error::InvalidParameter(format!("weights must be positive, got {bad}")));
    }
    let d = w.len();
    let mut m = Tensor::zeros(2 * d, 2 * d);
    for (l, &wl) in w.iter().enumerate() {
        let n = 2 * d;
        m.data_mut()[l * n + l] = wl;
        m.data_mut()[l * n + d + l] = -wl;
        m.data_mut()[(d + l) * n + l] = -wl;
        m.data_mut()[(d + l) * n + d + l] = wl;
    }
    Ok((m, vec![-1.0 / (1.0 - beta); 2 * d]))
}

/// Largest `|gatv2_logit - weighted_l1_logit|` over `draws` random
/// instances with dimension 1..=8, weights in `[0.01, 3)`, slopes in
/// `[0.01, 0.99)` and standard normal features.
pub fn l1_embedding_max_error(draws: usize, seed: u64) -> Result<f64> {
    use rand::Rng;
    use rand_distr::StandardNormal;
    let mut rng = crate::rng::stream_rng(seed, 0);
    let mut worst: f64 = 0.0;
    for _ in 0..draws {
        let d = rng.random_range(1..9);
        let hi: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        let hj: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        let w: Vec<f64> = (0..d).map(|_| rng.random_range(0.01..3.0)).collect();
        let beta = rng.random_range(0.01..0.99);
        let (m, q) = embed_l1_as_gatv2(&w, beta)?;
        let diff = gatv2_logit(&hi, &hj, &m, &q, beta)? - weighted_l1_logit(&hi, &hj, &w)?;
        worst = worst.max(diff.abs());
    }
    Ok(worst)
}

/// `sigmoid(h Wg + bg)` row by row; `h` is `n x d`, `Wg` is `d x k`,
/// `bg` has length `k`.
pub fn gate_values(h: &Tensor, wg: &Tensor, bg: &[f64]) -> Result<Tensor> {
    if h.cols() != wg.rows() || bg.len() != wg.cols() {
        return Err(Error::ShapeMismatch {
            op: "gate_values",
            detail: format!("h {:?}, Wg {:?}, bg {}", h.shape(), wg.shape(), bg.len()),
        });
    }
    let (n, k) = (h.rows(), wg.cols());
    let mut out = Tensor::zeros(n, k);
    for i in 0..n {
        for c in 0..k {
            let z: f64 = (0..h.cols()).map(|p| h.get(i, p) * wg.get(p, c)).sum::<f64>() + bg[c];
            out.data_mut()[i * k + c] = 1.0 / (1.0 + (-z).exp());
        }
    }
    Ok(out)
}
