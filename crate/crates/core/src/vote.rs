//! Probability-row voting shared by the ensemble and the fusion.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Scores within this distance of the maximum count as tied.
///
/// Soft votes over decimal probabilities carry rounding error: the column
/// sums of (0.7,0.3), (0.6,0.4), (0.2,0.8) come out as 1.4999999999999998
/// and 1.5. Treating such near-equal scores as a tie keeps the documented
/// tie rule meaningful.
pub const TIE_EPS: f64 = 1e-9;

/// Lowest index whose score is within [`TIE_EPS`] of the maximum.
pub fn argmax(row: &[f64]) -> usize {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    row.iter().position(|&v| v >= max - TIE_EPS).unwrap_or(0)
}

/// Row-wise argmax of a `[N,C]` tensor.
pub fn argmax_rows(probs: &Tensor) -> Vec<usize> {
    (0..probs.shape()[0]).map(|i| argmax(probs.row(i))).collect()
}

/// Sums after sorting, so the result does not depend on term order.
fn order_free_sum(terms: &mut [f64]) -> f64 {
    terms.sort_unstable_by(f64::total_cmp);
    terms.iter().sum()
}

/// `Σ wᵢ pᵢ / Σ wᵢ` per class. The result is bitwise independent of member
/// order. Weights must be finite and nonnegative with a positive sum.
pub fn weighted_mean(rows: &[&[f64]], weights: &[f64]) -> Result<Vec<f64>> {
    check_weights(weights, rows.len())?;
    let c = rows.first().map_or(0, |r| r.len());
    if rows.iter().any(|r| r.len() != c) {
        return Err(Error::InvalidArgument("member rows differ in class count".into()));
    }
    let total = order_free_sum(&mut weights.to_vec());
    let mut terms = vec![0.0; rows.len()];
    Ok((0..c)
        .map(|j| {
            for (t, (row, &w)) in terms.iter_mut().zip(rows.iter().zip(weights)) {
                *t = w * row[j];
            }
            order_free_sum(&mut terms) / total
        })
        .collect())
}

pub fn check_weights(weights: &[f64], members: usize) -> Result<()> {
    if weights.len() != members {
        return Err(Error::InvalidArgument(format!(
            "{} weights for {members} members",
            weights.len()
        )));
    }
    if weights.iter().any(|w| !w.is_finite() || *w < 0.0) || weights.iter().sum::<f64>() <= 0.0 {
        return Err(Error::InvalidArgument(format!(
            "weights must be finite, nonnegative and not all zero: {weights:?}"
        )));
    }
    Ok(())
}

/// Row-wise weighted soft vote over member probability matrices `[N,C]`.
pub fn soft_vote(members: &[&Tensor], weights: &[f64]) -> Result<Tensor> {
    let first = members
        .first()
        .ok_or_else(|| Error::InvalidArgument("soft vote over no members".into()))?;
    if members.iter().any(|m| m.shape() != first.shape()) {
        return Err(Error::InvalidArgument(
            "member probability matrices differ in shape".into(),
        ));
    }
    let mut data = Vec::with_capacity(first.len());
    for i in 0..first.shape()[0] {
        let rows: Vec<&[f64]> = members.iter().map(|m| m.row(i)).collect();
        data.extend(weighted_mean(&rows, weights)?);
    }
    Tensor::new(first.shape().to_vec(), data)
}

/// Majority vote: each member votes its argmax class. Rows are the
/// weighted vote fractions.
pub fn hard_vote(members: &[&Tensor], weights: &[f64]) -> Result<Tensor> {
    let one_hot: Vec<Tensor> = members
        .iter()
        .map(|m| {
            let (n, c) = (m.shape()[0], m.shape()[1]);
            let mut t = Tensor::zeros(&[n, c]);
            for i in 0..n {
                let k = argmax(m.row(i));
                t.data_mut()[i * c + k] = 1.0;
            }
            t
        })
        .collect();
    let refs: Vec<&Tensor> = one_hot.iter().collect();
    soft_vote(&refs, weights)
}
