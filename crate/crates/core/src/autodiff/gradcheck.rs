//! Central-difference gradient checking.

use crate::autodiff::{ParamStore, Tape, Tensor, TensorError, Var};
use crate::rng::SplitMix64;
use crate::scalar::Scalar;

/// Error measure used by every check: `|analytic - numeric| / max(1, |analytic|)`.
fn rel_err<T: Scalar>(analytic: T, numeric: T) -> T {
    (analytic - numeric).abs() / analytic.abs().max(T::one())
}

fn eval_scalar<T: Scalar>(
    f: &dyn for<'t> Fn(&'t Tape<T>, &[Var<'t, T>]) -> Result<Var<'t, T>, TensorError>,
    point: &[Tensor<T>],
) -> Result<T, TensorError> {
    let tape = Tape::new();
    let vars = point
        .iter()
        .map(|p| tape.constant(p.clone()))
        .collect::<Result<Vec<_>, _>>()?;
    let out = f(&tape, &vars)?;
    let v = out.value();
    if v.numel() != 1 {
        return Err(TensorError::NotScalar(v.shape().to_vec()));
    }
    Ok(v.item())
}

/// Maximum relative error between reverse-mode gradients of `f` at `point`
/// and central differences with step `h`, over every input coordinate.
pub fn grad_check<T: Scalar>(
    f: &dyn for<'t> Fn(&'t Tape<T>, &[Var<'t, T>]) -> Result<Var<'t, T>, TensorError>,
    point: &[Tensor<T>],
    h: T,
) -> Result<T, TensorError> {
    let tape = Tape::new();
    let vars = point
        .iter()
        .map(|p| tape.leaf(p.clone()))
        .collect::<Result<Vec<_>, _>>()?;
    let out = f(&tape, &vars)?;
    let grads = tape.backward(out, None)?;
    let analytic: Vec<Tensor<T>> = vars
        .iter()
        .map(|v| grads.wrt(v).cloned().expect("leaf gradient"))
        .collect();

    let mut worst = T::zero();
    let mut probe: Vec<Tensor<T>> = point.to_vec();
    for (i, a) in analytic.iter().enumerate() {
        for j in 0..a.numel() {
            let orig = probe[i].data()[j];
            probe[i].data_mut()[j] = orig + h;
            let plus = eval_scalar(f, &probe)?;
            probe[i].data_mut()[j] = orig - h;
            let minus = eval_scalar(f, &probe)?;
            probe[i].data_mut()[j] = orig;
            let numeric = (plus - minus) / (h + h);
            worst = worst.max(rel_err(a.data()[j], numeric));
        }
    }
    Ok(worst)
}

/// Gradient check over the parameters of a store.
///
/// `f` builds a scalar loss reading parameters through [`Tape::param`].
/// When `max_coords` is set, that many coordinates are sampled (seeded)
/// instead of checking every scalar.
pub fn grad_check_params<T: Scalar>(
    f: &dyn for<'t> Fn(&'t Tape<T>, &ParamStore<T>) -> Result<Var<'t, T>, TensorError>,
    store: &mut ParamStore<T>,
    h: T,
    max_coords: Option<usize>,
    seed: u64,
) -> Result<T, TensorError> {
    store.zero_grad();
    let tape = Tape::new();
    let out = f(&tape, store)?;
    tape.backward(out, Some(store))?;
    let analytic: Vec<Tensor<T>> = store
        .iter()
        .map(|p| p.grad.clone().expect("filled by backward"))
        .collect();
    store.zero_grad();

    let mut coords: Vec<(usize, usize)> = analytic
        .iter()
        .enumerate()
        .flat_map(|(i, a)| (0..a.numel()).map(move |j| (i, j)))
        .collect();
    if let Some(limit) = max_coords {
        if coords.len() > limit {
            let mut rng = SplitMix64::new(seed);
            for k in 0..limit {
                let pick = k + rng.below(coords.len() - k);
                coords.swap(k, pick);
            }
            coords.truncate(limit);
        }
    }

    let eval = |store: &ParamStore<T>| -> Result<T, TensorError> {
        let tape = Tape::new();
        let out = f(&tape, store)?;
        let v = out.value();
        if v.numel() != 1 {
            return Err(TensorError::NotScalar(v.shape().to_vec()));
        }
        Ok(v.item())
    };

    let ids: Vec<_> = store.ids().collect();
    let mut worst = T::zero();
    for (i, j) in coords {
        let id = ids[i];
        let orig = store.value(id).data()[j];
        store.value_mut(id).data_mut()[j] = orig + h;
        let plus = eval(store)?;
        store.value_mut(id).data_mut()[j] = orig - h;
        let minus = eval(store)?;
        store.value_mut(id).data_mut()[j] = orig;
        let numeric = (plus - minus) / (h + h);
        worst = worst.max(rel_err(analytic[i].data()[j], numeric));
    }
    Ok(worst)
}
