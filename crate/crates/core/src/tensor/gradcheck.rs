//! Central finite-difference check of tape gradients.

use crate::error::Result;
use crate::tensor::{ParameterStore, Tape, Var};

/// Below this norm a gradient counts as zero and the absolute error is reported.
pub const NORM_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    pub name: String,
    pub analytic_norm: f64,
    pub numeric_norm: f64,
    /// `|a - n| / max(|a|, |n|)` over the whole tensor, or `|a - n|` when
    /// both norms are below [`NORM_FLOOR`].
    pub rel_error: f64,
    pub max_abs_error: f64,
}

pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = analytic.iter().zip(numeric).map(|(a, n)| a - n).collect();
    let scale = norm(analytic).max(norm(numeric));
    if scale < NORM_FLOOR {
        norm(&diff)
    } else {
        norm(&diff) / scale
    }
}

/// Compare the backward-pass gradient of `loss` with `(f(p + h) - f(p - h)) / 2h`
/// for every scalar of every parameter in `store`.
pub fn check_gradients<F>(store: &ParameterStore, h: f64, loss: F) -> Result<Vec<GradCheck>>
where
    F: for<'s> Fn(&mut Tape<'s>) -> Result<Var>,
{
    let mut tape = Tape::new(store);
    let l = loss(&mut tape)?;
    let grads = tape.backward(l)?;
    drop(tape);

    let eval = |s: &ParameterStore| -> Result<f64> {
        let mut tape = Tape::new(s);
        let l = loss(&mut tape)?;
        tape.value(l).item()
    };
    let mut probe = store.clone();
    let mut out = Vec::with_capacity(store.len());
    for id in store.ids() {
        let n = store.value(id).numel();
        let analytic: Vec<f64> = grads.get(id).map_or(vec![0.0; n], |g| g.data().to_vec());
        let mut numeric = Vec::with_capacity(n);
        for i in 0..n {
            let orig = store.value(id).data()[i];
            probe.value_mut(id).data_mut()[i] = orig + h;
            let plus = eval(&probe)?;
            probe.value_mut(id).data_mut()[i] = orig - h;
            let minus = eval(&probe)?;
            probe.value_mut(id).data_mut()[i] = orig;
            numeric.push((plus - minus) / (2.0 * h));
        }
        let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
        out.push(GradCheck {
            name: store.name(id).to_string(),
            analytic_norm: norm(&analytic),
            numeric_norm: norm(&numeric),
            rel_error: relative_error(&analytic, &numeric),
            max_abs_error: analytic
                .iter()
                .zip(&numeric)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max),
        });
    }
    Ok(out)
}
