use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::graph::{Graph, Var};
use super::tensor::Tensor;
use crate::error::Result;

/// Denominator floor of the relative error, so gradients that are zero on
/// both sides compare by absolute difference instead of dividing by ~0.
pub const REL_ERROR_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// `(input index, element index)` of the worst element.
    pub worst: (usize, usize),
    pub analytic: f64,
    pub numeric: f64,
}

/// Compares recorded backward gradients of `op` against central differences.
///
/// The scalar objective is `sum(r * op(inputs))` with a fixed pseudo-random
/// projection `r`, so every output element contributes. `op` must be a pure
/// function of its inputs: it is re-evaluated twice per checked element, so
/// any randomness inside it has to be re-seeded on every call.
pub fn grad_check<F>(inputs: &[Tensor<f64>], step: f64, op: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    let evaluate = |values: &[Tensor<f64>]| -> Result<(Graph<f64>, Vec<Var>, Var)> {
        let mut g = Graph::new();
        let vars: Vec<Var> = values.iter().map(|t| g.param(t.clone())).collect();
        let out = op(&mut g, &vars)?;
        Ok((g, vars, out))
    };

    let (mut graph, vars, out) = evaluate(inputs)?;
    let mut rng = ChaCha8Rng::seed_from_u64(0x6a09e667);
    let projection: Vec<f64> = (0..graph.value(out).len())
        .map(|_| rng.random_range(-1.0..1.0))
        .collect();
    graph.backward_with(out, projection.clone())?;
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .zip(inputs)
        .map(|(v, t)| graph.grad(*v).map_or_else(|| vec![0.0; t.len()], <[f64]>::to_vec))
        .collect();

    let objective = |values: &[Tensor<f64>]| -> Result<f64> {
        let (g, _, out) = evaluate(values)?;
        Ok(g.value(out)
            .data()
            .iter()
            .zip(&projection)
            .map(|(y, r)| y * r)
            .sum())
    };

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: (0, 0),
        analytic: 0.0,
        numeric: 0.0,
    };
    let mut perturbed = inputs.to_vec();
    for (i, input) in inputs.iter().enumerate() {
        for j in 0..input.len() {
            let original = input.data()[j];
            perturbed[i].data_mut()[j] = original + step;
            let plus = objective(&perturbed)?;
            perturbed[i].data_mut()[j] = original - step;
            let minus = objective(&perturbed)?;
            perturbed[i].data_mut()[j] = original;

            let numeric = (plus - minus) / (2.0 * step);
            let a = analytic[i][j];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(REL_ERROR_FLOOR);
            if rel > report.max_rel_error {
                report = GradCheckReport {
                    max_rel_error: rel,
                    worst: (i, j),
                    analytic: a,
                    numeric,
                };
            }
        }
    }
    Ok(report)
}
