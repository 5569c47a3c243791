use super::{Graph, ParamStore, Result, Scope, Tensor, TensorError, Var};

fn check_eps(eps: f64) -> Result<()> {
    if !(1e-7..=1e-4).contains(&eps) {
        return Err(TensorError::Invalid {
            op: "finite_diff_check",
            msg: format!("epsilon {eps} outside [1e-7, 1e-4]"),
        });
    }
    Ok(())
}

fn scalarize<'g>(v: Var<'g>) -> Var<'g> {
    if v.value().len() == 1 {
        v
    } else {
        v.sum()
    }
}

/// Compares the analytic gradient of `sum(op(x))` against central
/// differences. Returns the max over coordinates of
/// `|analytic - numeric| / max(1, |analytic|)`.
pub fn finite_diff_check<F>(op: F, input: &Tensor, eps: f64) -> Result<f64>
where
    F: for<'g> Fn(&'g Graph, Var<'g>) -> Result<Var<'g>>,
{
    let mut store = ParamStore::new();
    store.insert("input", input.clone());
    finite_diff_check_store(
        |scope| {
            let x = scope.param("input")?;
            op(scope.graph, x)
        },
        &store,
        eps,
    )
}

/// Finite-difference check against every scalar of every tensor in `store`.
/// The closure reads its inputs and weights through the scope by name.
pub fn finite_diff_check_store<F>(op: F, store: &ParamStore, eps: f64) -> Result<f64>
where
    F: for<'g> Fn(Scope<'g>) -> Result<Var<'g>>,
{
    check_eps(eps)?;
    let eval = |s: &ParamStore| -> Result<f64> {
        let g = Graph::new();
        let out = scalarize(op(Scope::new(&g, s))?);
        let v = out.value().item();
        Ok(v)
    };

    let g = Graph::new();
    let out = scalarize(op(Scope::new(&g, store))?);
    if !out.value().item().is_finite() {
        return Err(TensorError::NonFinite { index: 0 });
    }
    let grads = g.backward(out)?;

    let mut probe = store.clone();
    let mut worst = 0.0f64;
    let mut coord = 0usize;
    for name in store.names() {
        let len = store.get(&name)?.len();
        let zeros = Tensor::zeros(store.get(&name)?.shape());
        let analytic = grads.param(&name).unwrap_or(&zeros).clone();
        for i in 0..len {
            let orig = store.get(&name)?.data()[i];
            probe.get_mut(&name)?.data_mut()[i] = orig + eps;
            let plus = eval(&probe)?;
            probe.get_mut(&name)?.data_mut()[i] = orig - eps;
            let minus = eval(&probe)?;
            probe.get_mut(&name)?.data_mut()[i] = orig;
            if !plus.is_finite() || !minus.is_finite() {
                return Err(TensorError::NonFinite { index: coord });
            }
            let numeric = (plus - minus) / (2.0 * eps);
            let a = analytic.data()[i];
            worst = worst.max((a - numeric).abs() / a.abs().max(1.0));
            coord += 1;
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_out_of_range_epsilon() {
        assert!(finite_diff_check(|_, x| Ok(x), &Tensor::scalar(1.0), 1e-2).is_err());
    }

    #[test]
    fn detects_wrong_gradient() {
        // relu at a kink is the only way to fool it; use a deliberately
        // discontinuous function instead: clamp with a jump far from x.
        let err =
            finite_diff_check(|_, x| Ok(x.clamp(0.0, 0.5)), &Tensor::scalar(0.5), 1e-6).unwrap();
        assert!(err > 0.4);
    }

    #[test]
    fn reports_non_finite_coordinate() {
        let res = finite_diff_check(|_, x| x.ln(), &Tensor::row(&[1.0, 1e-9]), 1e-6);
        assert!(matches!(
            res,
            Err(TensorError::Invalid { .. }) | Err(TensorError::NonFinite { .. })
        ));
    }
}
