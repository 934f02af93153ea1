//! Central finite-difference checks of tape gradients.

use blindsr_core::rng::rng_for;
use blindsr_core::Result;
use rand::seq::index::sample;
use rand::Rng;

use crate::tape::{Tape, Var};
use crate::tensor::Tensor4;

#[derive(Clone, Debug)]
pub struct GradCheckOptions {
    pub eps: f64,
    /// Relative errors use `max(|analytic|, |numeric|, floor)` as denominator.
    pub floor: f64,
    /// Coordinates probed per input; all of them when the input is smaller.
    pub max_coords: usize,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            eps: 1e-6,
            floor: 1e-4,
            max_coords: 64,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub coords: usize,
    /// `(input, index, analytic, numeric)` at the largest error.
    pub worst: Option<(usize, usize, f64, f64)>,
}

/// Compares reverse-mode gradients of `f` against central differences.
///
/// `f` builds a graph from the inputs; a non-scalar output is reduced to a
/// weighted mean with fixed random weights first.
pub fn check_gradients<F>(inputs: &[Tensor4], f: F, opts: &GradCheckOptions) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut rng = rng_for(opts.seed, 0);
    let mut weights: Option<Vec<f64>> = None;
    let mut eval = |xs: &[Tensor4], grads: bool| -> Result<(f64, Vec<Vec<f64>>)> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = xs.iter().map(|x| tape.variable(x.clone())).collect();
        let out = f(&mut tape, &vars)?;
        let out = if tape.value(out).len() == 1 {
            out
        } else {
            let n = tape.value(out).len();
            let w = weights.get_or_insert_with(|| (0..n).map(|_| rng.random_range(-1.0..1.0) / n as f64).collect());
            tape.weighted_sum(out, w.clone())?
        };
        let value = tape.value(out).data()[0];
        if !grads {
            return Ok((value, Vec::new()));
        }
        let g = tape.backward(out)?;
        let all = vars
            .iter()
            .map(|v| g.get(*v).map_or_else(|| vec![0.0; tape.value(*v).len()], <[f64]>::to_vec))
            .collect();
        Ok((value, all))
    };

    let (_, analytic) = eval(inputs, true)?;
    let mut pick = rng_for(opts.seed, 1);
    let mut max_rel_err: f64 = 0.0;
    let mut worst = None;
    let mut coords = 0;
    let mut xs = inputs.to_vec();
    for (i, input) in inputs.iter().enumerate() {
        let n = input.len();
        let idx: Vec<usize> = if n <= opts.max_coords {
            (0..n).collect()
        } else {
            sample(&mut pick, n, opts.max_coords).into_vec()
        };
        for j in idx {
            let orig = input.data()[j];
            xs[i].data_mut()[j] = orig + opts.eps;
            let (plus, _) = eval(&xs, false)?;
            xs[i].data_mut()[j] = orig - opts.eps;
            let (minus, _) = eval(&xs, false)?;
            xs[i].data_mut()[j] = orig;
            let numeric = (plus - minus) / (2.0 * opts.eps);
            let a = analytic[i][j];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(opts.floor);
            if rel > max_rel_err || worst.is_none() {
                max_rel_err = rel;
                worst = Some((i, j, a, numeric));
            }
            coords += 1;
        }
    }
    Ok(GradCheckReport {
        max_rel_err,
        coords,
        worst,
    })
}
