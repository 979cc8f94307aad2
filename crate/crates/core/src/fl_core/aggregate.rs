use std::cmp::Ordering;

use super::model::WeightVector;
use super::FlError;

fn canonical_cmp(a: &WeightVector, b: &WeightVector) -> Ordering {
    a.values
        .iter()
        .zip(&b.values)
        .map(|(x, y)| x.total_cmp(y))
        .find(|o| o.is_ne())
        .unwrap_or(Ordering::Equal)
}

fn check_same_shape(updates: &[&WeightVector]) -> Result<(), FlError> {
    let first = updates.first().ok_or(FlError::EmptyAggregate)?;
    if let Some(bad) = updates.iter().find(|u| u.shapes != first.shapes || u.len() != first.len()) {
        return Err(FlError::ShapeMismatch(format!(
            "aggregate of {:?} with {:?}",
            first.shapes, bad.shapes
        )));
    }
    Ok(())
}

/// Element-wise unweighted mean.
///
/// Inputs are put into a canonical order before summing, so the result is
/// bit-identical for any permutation of `updates`. Deviations are summed
/// around the first canonical input, which makes the mean of identical
/// inputs exact.
pub fn aggregate_mean(updates: &[WeightVector]) -> Result<WeightVector, FlError> {
    let mut refs: Vec<&WeightVector> = updates.iter().collect();
    check_same_shape(&refs)?;
    refs.sort_by(|a, b| canonical_cmp(a, b));
    let n = refs.len() as f64;
    let base = &refs[0].values;
    let mut dev = vec![0.0; base.len()];
    for u in &refs[1..] {
        for ((d, v), b) in dev.iter_mut().zip(&u.values).zip(base) {
            *d += v - b;
        }
    }
    let values = base.iter().zip(dev).map(|(b, d)| b + d / n).collect();
    Ok(WeightVector {
        shapes: refs[0].shapes.clone(),
        values,
    })
}

/// Mean weighted by `weights` (e.g. shard sizes). Not the default FedAvg rule.
pub fn aggregate_weighted(updates: &[WeightVector], weights: &[f64]) -> Result<WeightVector, FlError> {
    if updates.len() != weights.len() {
        return Err(FlError::ShapeMismatch("one weight per update required".into()));
    }
    let mut pairs: Vec<(&WeightVector, f64)> = updates.iter().zip(weights.iter().copied()).collect();
    check_same_shape(&pairs.iter().map(|p| p.0).collect::<Vec<_>>())?;
    let total: f64 = weights.iter().sum();
    if !(total.is_finite() && total > 0.0) || weights.iter().any(|w| *w < 0.0) {
        return Err(FlError::EmptyAggregate);
    }
    pairs.sort_by(|a, b| canonical_cmp(a.0, b.0).then(a.1.total_cmp(&b.1)));
    let mut sum = vec![0.0; pairs[0].0.len()];
    for (u, w) in &pairs {
        for (s, v) in sum.iter_mut().zip(&u.values) {
            *s += w * v;
        }
    }
    Ok(WeightVector {
        shapes: pairs[0].0.shapes.clone(),
        values: sum.into_iter().map(|s| s / total).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn wv(values: Vec<f64>) -> WeightVector {
        // shapes are irrelevant to the arithmetic; use a consistent dummy
        WeightVector {
            shapes: vec![values.len()],
            values,
        }
    }

    #[test]
    fn simple_mean() {
        let out = aggregate_mean(&[wv(vec![0.0, 2.0]), wv(vec![2.0, 0.0])]).unwrap();
        assert_eq!(out.values, vec![1.0, 1.0]);
    }

    #[test]
    fn idempotent() {
        let w = wv(vec![0.1, -0.7, 1e-9, 3.3]);
        for k in 1..6 {
            assert_eq!(aggregate_mean(&vec![w.clone(); k]).unwrap(), w);
        }
    }

    #[test]
    fn empty_is_error() {
        assert_eq!(aggregate_mean(&[]), Err(FlError::EmptyAggregate));
    }

    #[test]
    fn mismatched_shapes_rejected() {
        assert!(matches!(
            aggregate_mean(&[wv(vec![1.0]), wv(vec![1.0, 2.0])]),
            Err(FlError::ShapeMismatch(_))
        ));
    }

    #[test]
    fn weighted_mean() {
        let out =
            aggregate_weighted(&[wv(vec![0.0, 4.0]), wv(vec![4.0, 0.0])], &[3.0, 1.0]).unwrap();
        assert_eq!(out.values, vec![1.0, 3.0]);
        assert!(aggregate_weighted(&[wv(vec![1.0])], &[0.0]).is_err());
    }
}
