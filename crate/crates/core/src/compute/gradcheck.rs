use super::{ComputeError, ParamSet};

/// Outcome of comparing analytic gradients with central differences.
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheck {
    pub max_rel_error: f64,
    pub worst_param: String,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub values_checked: usize,
}

/// Denominator floor for the relative error, so near-zero gradients are
/// judged on absolute error instead.
pub const REL_ERROR_FLOOR: f64 = 1e-3;

/// Compares the gradients already stored in `params` with
/// `(L(x + h) - L(x - h)) / 2h` for every trainable value.
///
/// The error per value is `|analytic - numeric| / max(|numeric|, REL_ERROR_FLOOR)`.
/// The step actually taken is recovered from the rounded `f32` values, so
/// `h` need not be representable around `x`.
pub fn finite_diff_check<F, E>(mut loss: F, params: &ParamSet, h: f64) -> Result<GradCheck, E>
where
    F: FnMut(&ParamSet) -> Result<f64, E>,
    E: From<ComputeError>,
{
    let mut report = GradCheck {
        max_rel_error: 0.0,
        worst_param: String::new(),
        worst_index: 0,
        analytic: 0.0,
        numeric: 0.0,
        values_checked: 0,
    };
    let mut probe = params.detached();
    for (name, tensor) in params.iter() {
        if !tensor.requires_grad() {
            continue;
        }
        let grad = tensor.grad().ok_or_else(|| ComputeError::MissingGradient {
            name: name.to_string(),
        })?;
        for i in 0..tensor.numel() {
            let x = tensor.data()[i];
            let plus = (x as f64 + h) as f32;
            let minus = (x as f64 - h) as f32;
            set_value(&mut probe, name, i, plus);
            let lp = loss(&probe)?;
            set_value(&mut probe, name, i, minus);
            let lm = loss(&probe)?;
            set_value(&mut probe, name, i, x);
            let numeric = (lp - lm) / (plus as f64 - minus as f64);
            let analytic = grad[i] as f64;
            let rel = (analytic - numeric).abs() / numeric.abs().max(REL_ERROR_FLOOR);
            report.values_checked += 1;
            if rel > report.max_rel_error || report.worst_param.is_empty() {
                report.max_rel_error = rel.max(report.max_rel_error);
                report.worst_param = name.to_string();
                report.worst_index = i;
                report.analytic = analytic;
                report.numeric = numeric;
            }
        }
    }
    Ok(report)
}

fn set_value(params: &mut ParamSet, name: &str, index: usize, value: f32) {
    if let Some(t) = params.get_mut(name) {
        t.data_mut()[index] = value;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::compute::{Graph, Tensor};

    fn setup() -> (ParamSet, impl FnMut(&ParamSet) -> Result<f64, ComputeError>) {
        let mut p = ParamSet::new();
        p.insert("w", Tensor::new(vec![3], vec![0.5, -1.0, 2.0]).unwrap().trainable())
            .unwrap();
        let loss = |p: &ParamSet| -> Result<f64, ComputeError> {
            let mut g = Graph::new();
            let w = g.param(p, "w")?;
            let s = g.tanh(w);
            let s = g.mul(s, w);
            let s = g.sum(s);
            Ok(g.scalar(s))
        };
        (p, loss)
    }

    fn numeric(p: &ParamSet, loss: &mut impl FnMut(&ParamSet) -> Result<f64, ComputeError>) -> Vec<f32> {
        let n = p.get("w").unwrap().numel();
        (0..n)
            .map(|i| {
                let mut a = p.clone();
                let mut b = p.clone();
                a.get_mut("w").unwrap().data_mut()[i] += 1e-3;
                b.get_mut("w").unwrap().data_mut()[i] -= 1e-3;
                let step = a.get("w").unwrap().data()[i] as f64 - b.get("w").unwrap().data()[i] as f64;
                ((loss(&a).unwrap() - loss(&b).unwrap()) / step) as f32
            })
            .collect()
    }

    #[test]
    fn copied_numeric_grads_give_zero_error() {
        let (mut p, mut loss) = setup();
        let g = numeric(&p, &mut loss);
        p.get_mut("w").unwrap().set_grad(g).unwrap();
        let r = finite_diff_check(&mut loss, &p, 1e-3).unwrap();
        assert!(r.max_rel_error < 1e-5, "{r:?}");
    }

    #[test]
    fn doubled_grads_give_unit_error() {
        let (mut p, mut loss) = setup();
        let g: Vec<f32> = numeric(&p, &mut loss).iter().map(|x| 2.0 * x).collect();
        p.get_mut("w").unwrap().set_grad(g).unwrap();
        let r = finite_diff_check(&mut loss, &p, 1e-3).unwrap();
        assert!((r.max_rel_error - 1.0).abs() < 1e-3, "{r:?}");
    }

    #[test]
    fn analytic_grads_pass() {
        let (mut p, mut loss) = setup();
        let mut g = Graph::new();
        let w = g.param(&p, "w").unwrap();
        let s = g.tanh(w);
        let s = g.mul(s, w);
        let s = g.sum(s);
        g.backward_into(s, &mut p).unwrap();
        let r = finite_diff_check(&mut loss, &p, 1e-3).unwrap();
        assert!(r.max_rel_error < 1e-3, "{r:?}");
        assert_eq!(r.values_checked, 3);
    }
}
