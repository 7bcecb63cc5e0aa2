use super::graph::{Graph, Var};
use super::params::ParameterStore;
use crate::error::{Error, Result};

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst_param: String,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub checked: usize,
    /// Every checked element, in store order.
    pub elements: Vec<ElementCheck>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ElementCheck {
    pub param: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

impl GradCheckReport {
    pub fn exceeding(&self, tolerance: f64) -> impl Iterator<Item = &ElementCheck> {
        self.elements.iter().filter(move |e| e.rel_error >= tolerance)
    }
}

/// `(f(θ+h) - f(θ-h)) / 2h` for one parameter element; the store is restored.
pub fn central_difference<F>(store: &mut ParameterStore, name: &str, index: usize, h: f64, mut f: F) -> Result<f64>
where
    F: FnMut(&mut Graph, &ParameterStore) -> Result<Var>,
{
    let mut eval = |store: &ParameterStore| -> Result<f64> {
        let mut g = Graph::inference();
        let o = f(&mut g, store)?;
        scalar(&g, o)
    };
    let Some(&orig) = store.get(name)?.data().get(index) else {
        return Err(Error::InvalidArgument(format!("`{name}` has no element {index}")));
    };
    store.value_mut(name)?.data_mut()[index] = orig + h;
    let plus = eval(store);
    store.value_mut(name)?.data_mut()[index] = orig - h;
    let minus = eval(store);
    store.value_mut(name)?.data_mut()[index] = orig;
    Ok((plus? - minus?) / (2.0 * h))
}

/// Compares reverse-mode gradients of every parameter element against
/// central differences `(f(θ+h) - f(θ-h)) / 2h`.
///
/// Relative error uses the denominator `max(|analytic|, |numeric|, 1e-8)`.
/// `f` must build the same computation on every call; a non-reproducible
/// loss value makes the check invalid.
pub fn gradient_check<F>(store: &mut ParameterStore, h: f64, mut f: F) -> Result<GradCheckReport>
where
    F: FnMut(&mut Graph, &ParameterStore) -> Result<Var>,
{
    if !(h > 0.0) {
        return Err(Error::InvalidArgument(format!("finite-difference step {h}")));
    }
    let mut g = Graph::new();
    let out = f(&mut g, store)?;
    let base = scalar(&g, out)?;
    let grads = g.backward(out)?;

    let mut again = Graph::new();
    let out2 = f(&mut again, store)?;
    if scalar(&again, out2)?.to_bits() != base.to_bits() {
        return Err(Error::InvalidGradientCheck("function is not deterministic".into()));
    }

    let analytic: Vec<(String, Vec<f64>)> = store
        .names()
        .map(|name| {
            let n = store.get(name).map(|t| t.numel()).unwrap_or(0);
            let grad = g
                .param_vars()
                .find(|(p, _)| *p == name)
                .and_then(|(_, v)| grads.get(v).map(<[f64]>::to_vec))
                .unwrap_or_else(|| vec![0.0; n]);
            (name.to_string(), grad)
        })
        .collect();

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_param: String::new(),
        worst_index: 0,
        analytic: 0.0,
        numeric: 0.0,
        checked: 0,
        elements: Vec::new(),
    };
    let mut eval = |store: &ParameterStore| -> Result<f64> {
        let mut gg = Graph::inference();
        let o = f(&mut gg, store)?;
        scalar(&gg, o)
    };
    for (name, grad) in &analytic {
        for (i, &a) in grad.iter().enumerate() {
            let orig = store.get(name)?.data()[i];
            store.value_mut(name)?.data_mut()[i] = orig + h;
            let plus = eval(store)?;
            store.value_mut(name)?.data_mut()[i] = orig - h;
            let minus = eval(store)?;
            store.value_mut(name)?.data_mut()[i] = orig;
            let numeric = (plus - minus) / (2.0 * h);
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
            report.checked += 1;
            report.elements.push(ElementCheck { param: name.clone(), index: i, analytic: a, numeric, rel_error: rel });
            if rel > report.max_rel_error || report.worst_param.is_empty() {
                report.max_rel_error = rel;
                report.worst_param = name.clone();
                report.worst_index = i;
                report.analytic = a;
                report.numeric = numeric;
            }
        }
    }
    Ok(report)
}

fn scalar(g: &Graph, v: Var) -> Result<f64> {
    let t = g.value(v);
    if t.numel() != 1 {
        return Err(Error::Shape(format!("gradient check needs a scalar output, got {:?}", t.dims())));
    }
    Ok(t.data()[0])
}
