use super::{NnError, ParamStore, Tape, Var};

/// Gradients smaller than this are compared in absolute terms.
const DENOM_FLOOR: f64 = 1e-6;

/// Compare reverse-mode gradients of a scalar graph against central finite
/// differences over every scalar of every parameter in `store`.
///
/// `build` must construct the same graph on each call. Returns the maximum
/// of `|analytic - numeric| / max(|analytic|, |numeric|, 1e-6)`. Intended for
/// `epsilon` in `[1e-7, 1e-3]`.
pub fn gradient_check<F>(store: &ParamStore, build: F, epsilon: f64) -> Result<f64, NnError>
where
    F: Fn(&mut Tape<'_>) -> Result<Var, NnError>,
{
    let analytic = {
        let mut tape = Tape::new(store);
        let out = build(&mut tape)?;
        tape.backward(out)?
    };

    let eval = |s: &ParamStore| -> Result<f64, NnError> {
        let mut tape = Tape::new(s);
        let out = build(&mut tape)?;
        let v = tape.value(out);
        v.item()
            .ok_or_else(|| NnError::NonScalarOutput(v.shape().to_vec()))
    };

    let mut work = store.clone();
    let mut worst = 0.0f64;
    for id in store.ids() {
        for j in 0..store.get(id).len() {
            let orig = store.get(id).data()[j];
            work.get_mut(id).data_mut()[j] = orig + epsilon;
            let plus = eval(&work)?;
            work.get_mut(id).data_mut()[j] = orig - epsilon;
            let minus = eval(&work)?;
            work.get_mut(id).data_mut()[j] = orig;

            let numeric = (plus - minus) / (2.0 * epsilon);
            let a = analytic.get(id).data()[j];
            let denom = a.abs().max(numeric.abs()).max(DENOM_FLOOR);
            worst = worst.max((a - numeric).abs() / denom);
        }
    }
    Ok(worst)
}
