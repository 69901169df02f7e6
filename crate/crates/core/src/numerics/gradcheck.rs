use alloc::string::String;
use alloc::vec::Vec;

use super::{Gradients, ParamStore};
use crate::{Error, Result};

/// Outcome for one parameter group.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupReport {
    pub group: String,
    pub coords_checked: usize,
    pub max_rel_error: f64,
    /// Largest analytic gradient magnitude anywhere in the group.
    pub max_abs_grad: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckReport {
    pub groups: Vec<GroupReport>,
}

impl GradcheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.groups.iter().map(|g| g.max_rel_error).fold(0.0, f64::max)
    }

    pub fn passes(&self, tol: f64) -> bool {
        self.groups.iter().all(|g| g.max_rel_error < tol && g.max_abs_grad > 0.0)
    }
}

/// Compares analytic gradients against central differences at 64-bit.
///
/// `eval(store)` returns the loss and its analytic gradients. For every
/// parameter up to `coords_per_param` coordinates are perturbed by `±step`:
/// evenly strided ones plus the coordinate of largest analytic gradient.
/// Relative error is `|g - fd| / max(|g|, |fd|, abs_floor)`; `group_of`
/// maps a parameter name to its reporting group.
pub fn gradcheck<E, G>(
    store: &ParamStore<f64>,
    eval: E,
    group_of: G,
    step: f64,
    coords_per_param: usize,
    abs_floor: f64,
) -> Result<GradcheckReport>
where
    E: Fn(&ParamStore<f64>) -> Result<(f64, Gradients<f64>)>,
    G: Fn(&str) -> String,
{
    let (loss, grads) = eval(store)?;
    if !loss.is_finite() {
        return Err(Error::NonFinite(alloc::format!("gradcheck loss {loss}")));
    }
    let mut groups: Vec<GroupReport> = Vec::new();
    let mut probe = store.clone();
    for (id, param) in store.iter() {
        let g = grads.get(id);
        let numel = g.len();
        let group = group_of(&param.name);
        let max_abs = g.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        let mut coords: Vec<usize> = Vec::new();
        let count = coords_per_param.min(numel);
        for c in 0..count {
            coords.push(c * numel / count.max(1));
        }
        if let Some((argmax, _)) =
            g.iter().enumerate().max_by(|a, b| a.1.abs().partial_cmp(&b.1.abs()).unwrap_or(core::cmp::Ordering::Equal))
        {
            if !coords.contains(&argmax) {
                coords.push(argmax);
            }
        }
        let mut worst = 0.0f64;
        for &c in &coords {
            let orig = probe.get(id).tensor.data()[c];
            probe.get_mut(id).tensor.data_mut()[c] = orig + step;
            let (plus, _) = eval(&probe)?;
            probe.get_mut(id).tensor.data_mut()[c] = orig - step;
            let (minus, _) = eval(&probe)?;
            probe.get_mut(id).tensor.data_mut()[c] = orig;
            let fd = (plus - minus) / (2.0 * step);
            let denom = g[c].abs().max(fd.abs()).max(abs_floor);
            worst = worst.max((g[c] - fd).abs() / denom);
        }
        match groups.iter_mut().find(|r| r.group == group) {
            Some(r) => {
                r.coords_checked += coords.len();
                r.max_rel_error = r.max_rel_error.max(worst);
                r.max_abs_grad = r.max_abs_grad.max(max_abs);
            }
            None => groups.push(GroupReport {
                group,
                coords_checked: coords.len(),
                max_rel_error: worst,
                max_abs_grad: max_abs,
            }),
        }
    }
    Ok(GradcheckReport { groups })
}
