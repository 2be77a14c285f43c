use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Result of comparing analytic gradients with central differences.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// `(parameter index, flat coordinate)` of the worst disagreement.
    pub worst: Option<(usize, usize)>,
    pub checked: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct GradCheckOptions {
    pub eps: f64,
    /// Denominator floor of the relative error, `|a - n| / max(|a|, |n|, floor)`.
    pub floor: f64,
    /// Above this many coordinates a seeded random subset of this size is checked.
    pub max_coords: usize,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            eps: 1e-5,
            floor: 1e-6,
            max_coords: 10_000,
            seed: 0,
        }
    }
}

pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Checks `f`, a scalar function of `params`, against central differences.
///
/// `f` receives a fresh tape with every parameter registered as a trainable
/// leaf, in order, and returns the scalar output variable.
pub fn grad_check<F>(params: &[Tensor], opts: GradCheckOptions, f: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let eval = |ps: &[Tensor]| -> Result<(Tape, Vec<Var>, Var)> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = ps.iter().map(|p| tape.param(p.clone())).collect();
        let out = f(&mut tape, &vars)?;
        let v = tape.value(out);
        if v.len() != 1 {
            return Err(Error::NonScalarBackward(v.shape().to_vec()));
        }
        if !v.item().is_finite() {
            return Err(Error::NonFinite("grad_check objective".into()));
        }
        Ok((tape, vars, out))
    };

    let (tape, vars, out) = eval(params)?;
    let grads = tape.backward(out)?;
    let analytic: Vec<Tensor> = vars
        .iter()
        .zip(params)
        .map(|(&v, p)| grads.get_or_zeros(v, p))
        .collect();

    let coords: Vec<(usize, usize)> = params
        .iter()
        .enumerate()
        .flat_map(|(pi, p)| (0..p.len()).map(move |c| (pi, c)))
        .collect();
    let chosen: Vec<(usize, usize)> = if coords.len() > opts.max_coords {
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
        let mut idx = sample(&mut rng, coords.len(), opts.max_coords).into_vec();
        idx.sort_unstable();
        idx.into_iter().map(|i| coords[i]).collect()
    } else {
        coords
    };

    let mut work = params.to_vec();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        checked: 0,
    };
    for (pi, c) in chosen {
        let orig = work[pi].data()[c];
        work[pi].data_mut()[c] = orig + opts.eps;
        let (t_plus, _, o_plus) = eval(&work)?;
        work[pi].data_mut()[c] = orig - opts.eps;
        let (t_minus, _, o_minus) = eval(&work)?;
        work[pi].data_mut()[c] = orig;

        let numeric = (t_plus.value(o_plus).item() - t_minus.value(o_minus).item()) / (2.0 * opts.eps);
        let a = analytic[pi].data()[c];
        if !a.is_finite() || !numeric.is_finite() {
            return Err(Error::NonFinite(format!("gradient at parameter {pi}, coordinate {c}")));
        }
        let err = relative_error(a, numeric, opts.floor);
        if report.worst.is_none() || err > report.max_rel_error {
            report.max_rel_error = err;
            report.worst = Some((pi, c));
        }
        report.checked += 1;
    }
    Ok(report)
}
