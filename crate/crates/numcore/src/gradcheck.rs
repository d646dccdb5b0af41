use crate::error::{NumError, Result};
use crate::graph::{Graph, Var};
use crate::param::ParamStore;
use crate::tensor::Precision;

/// Outcome of comparing reverse-mode gradients to central differences.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    /// Parameter name and flat index of the worst coordinate.
    pub worst: Option<(String, usize)>,
    pub coordinates: usize,
}

/// Denominator floor so that near-zero gradients do not blow up the ratio.
const REL_FLOOR: f64 = 1e-6;

/// Checks every trainable coordinate of `store` that `f` depends on.
///
/// `f` builds a scalar on a fresh 64-bit graph. Parameters are perturbed in
/// place and restored before returning.
pub fn grad_check<F>(store: &mut ParamStore, f: F, h: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &ParamStore) -> Result<Var>,
{
    let eval = |s: &ParamStore| -> Result<f64> {
        let mut g = Graph::with_precision(Precision::F64);
        let out = f(&mut g, s)?;
        let v = g.value(out);
        if v.len() != 1 {
            return Err(NumError::Shape(format!("grad_check needs a scalar, got {:?}", v.shape())));
        }
        Ok(v.data()[0])
    };

    let mut g = Graph::with_precision(Precision::F64);
    let out = f(&mut g, store)?;
    let analytic = g.backward(out)?;

    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        worst: None,
        coordinates: 0,
    };
    for (id, grad) in analytic.iter() {
        let grad = grad.to_vec();
        for (i, &a) in grad.iter().enumerate() {
            let orig = store.get(id).tensor.data()[i];
            store.get_mut(id).tensor.data_mut()[i] = orig + h;
            let plus = eval(store);
            store.get_mut(id).tensor.data_mut()[i] = orig - h;
            let minus = eval(store);
            store.get_mut(id).tensor.data_mut()[i] = orig;
            let numeric = (plus? - minus?) / (2.0 * h);
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(REL_FLOOR);
            report.coordinates += 1;
            if rel > report.max_rel_err {
                report.max_rel_err = rel;
                report.worst = Some((store.get(id).name.clone(), i));
            }
        }
    }
    Ok(report)
}
