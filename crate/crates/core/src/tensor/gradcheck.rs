//! Central-difference gradient verification in 64-bit precision.
//!
//! Uses the fourth-order five-point stencil. Its truncation error falls as
//! `eps^4`, so a step near `1e-3` keeps both truncation and cancellation
//! in the loss well below `1e-9` in f64.

use rand::seq::index::sample;
use rand::Rng;

use super::{HasParams, NodeId, ParamId, Tape};
use crate::error::{invalid, Error, Result};
use crate::rng;

#[derive(Clone, Debug)]
pub struct GradCheckConfig {
    /// Finite-difference step.
    pub eps: f64,
    /// Total coordinates to compare, spread over every parameter.
    pub samples: usize,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self { eps: 1e-3, samples: 200, seed: 0 }
    }
}

#[derive(Clone, Debug)]
pub struct CoordCheck {
    pub param: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub checks: Vec<CoordCheck>,
}

impl GradCheckReport {
    pub fn worst(&self) -> Option<&CoordCheck> {
        self.checks.iter().max_by(|a, b| a.rel_error.total_cmp(&b.rel_error))
    }

    pub fn params_covered(&self) -> usize {
        let mut names: Vec<&str> = self.checks.iter().map(|c| c.param.as_str()).collect();
        names.sort_unstable();
        names.dedup();
        names.len()
    }
}

pub fn rel_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Compare analytic gradients of `loss_fn` against central differences.
///
/// Parameters contribute coordinates round-robin until `samples` is
/// reached, each drawing from entries with a nonzero analytic gradient when
/// it has any, plus one uniform draw per parameter. Embedding tables touch
/// only a few rows per input, so uniform draws would mostly compare zero
/// against zero.
pub fn grad_check<T, L>(target: &mut T, loss_fn: L, cfg: &GradCheckConfig) -> Result<GradCheckReport>
where
    T: HasParams<f64>,
    L: Fn(&T, &mut Tape<f64>) -> Result<NodeId>,
{
    if cfg.eps <= 0.0 {
        return Err(invalid("eps must be positive"));
    }
    if target.params().is_empty() {
        return Err(invalid("no parameters to check"));
    }
    target.params_mut().zero_grad();
    {
        let mut tape = Tape::new();
        let loss = loss_fn(target, &mut tape)?;
        tape.backward(loss, target.params_mut())?;
    }
    let eval = |target: &T| -> Result<f64> {
        let mut tape = Tape::no_grad();
        let loss = loss_fn(target, &mut tape)?;
        let v = tape.value(loss).item();
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::NonFinite(format!("loss {v}")))
        }
    };

    // Round-robin over parameters, each drawing from its own shuffled pool,
    // until the sample budget is met or every pool is exhausted.
    let mut pools: Vec<(ParamId, Vec<usize>)> = Vec::new();
    let mut picks: Vec<(ParamId, usize)> = Vec::new();
    let store = target.params();
    for id in store.ids().collect::<Vec<_>>() {
        let mut r = rng::stream(cfg.seed, "grad-check", id.index() as u64);
        let grad = store.grad(id).data();
        let nonzero: Vec<usize> = (0..grad.len()).filter(|&i| grad[i] != 0.0).collect();
        let pool: Vec<usize> = if nonzero.is_empty() { (0..grad.len()).collect() } else { nonzero };
        let order: Vec<usize> = sample(&mut r, pool.len(), pool.len()).into_iter().map(|j| pool[j]).collect();
        // one uniform draw so untouched rows are also covered
        picks.push((id, r.random_range(0..grad.len())));
        pools.push((id, order));
    }
    let mut round = 0;
    while picks.len() < cfg.samples + pools.len() {
        let mut any = false;
        for (id, order) in &pools {
            if let Some(&i) = order.get(round) {
                picks.push((*id, i));
                any = true;
            }
        }
        if !any {
            break;
        }
        round += 1;
    }

    let mut checks = Vec::with_capacity(picks.len());
    for (id, i) in picks {
        let analytic = target.params().grad(id).data()[i];
        let orig = target.params().value(id).data()[i];
        let set = |t: &mut T, v: f64| t.params_mut().get_mut(id).value_mut().data_mut()[i] = v;
        let h = cfg.eps;
        let mut at = |d: f64| -> Result<f64> {
            set(target, orig + d);
            eval(target)
        };
        // fourth-order central difference
        let (p1, m1, p2, m2) = (at(h)?, at(-h)?, at(2.0 * h)?, at(-2.0 * h)?);
        set(target, orig);
        let numeric = (8.0 * (p1 - m1) - (p2 - m2)) / (12.0 * h);
        checks.push(CoordCheck {
            param: target.params().get(id).name.clone(),
            index: i,
            analytic,
            numeric,
            rel_error: rel_error(analytic, numeric),
        });
    }
    let max_rel_error = checks.iter().map(|c| c.rel_error).fold(0.0, f64::max);
    Ok(GradCheckReport { max_rel_error, checks })
}
