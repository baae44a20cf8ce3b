//! Exact k-nearest-neighbour voting.

use super::{check_input, check_training};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const DEFAULT_K: usize = 7;

#[derive(Clone, Debug, PartialEq)]
pub struct KnnModel {
    data: Tensor,
    labels: Vec<usize>,
    classes: usize,
    k: usize,
}

/// Stores the training set. Errors when `k` is 0 or exceeds its size.
pub fn knn_fit(x: &Tensor, labels: &[usize], k: usize) -> Result<KnnModel> {
    let classes = check_training("knn_fit", x, labels)?;
    KnnModel::new(x.clone(), labels.to_vec(), classes, k)
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

impl KnnModel {
    pub(crate) fn new(data: Tensor, labels: Vec<usize>, classes: usize, k: usize) -> Result<Self> {
        let n = data.shape()[0];
        if k == 0 || k > n {
            return Err(Error::Config(format!(
                "k = {k} must lie in 1..={n} (training set size)"
            )));
        }
        if labels.len() != n || labels.iter().any(|&l| l >= classes) {
            return Err(Error::InvalidArgument("knn labels do not match the stored rows".into()));
        }
        Ok(Self {
            data,
            labels,
            classes,
            k,
        })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn data(&self) -> &Tensor {
        &self.data
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    /// Indices of the `k` nearest stored rows, nearest first. Equal
    /// distances are ordered by training index.
    pub fn neighbors(&self, query: &[f64]) -> Vec<usize> {
        let mut d: Vec<(f64, usize)> = (0..self.labels.len())
            .map(|i| (sq_dist(self.data.row(i), query), i))
            .collect();
        let order = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
        if self.k < d.len() {
            d.select_nth_unstable_by(self.k - 1, order);
            d.truncate(self.k);
        }
        d.sort_unstable_by(order);
        d.into_iter().map(|(_, i)| i).collect()
    }

    /// Neighbour class frequencies divided by `k`.
    pub fn predict_proba(&self, x: &Tensor) -> Result<Tensor> {
        let n = check_input("knn_predict_proba", x, self.data.shape()[1])?;
        let rows = crate::par::map(&(0..n).collect::<Vec<_>>(), |&i| {
            let mut row = vec![0.0; self.classes];
            for j in self.neighbors(x.row(i)) {
                row[self.labels[j]] += 1.0;
            }
            row.iter_mut().for_each(|v| *v /= self.k as f64);
            row
        });
        Ok(Tensor::new(vec![n, self.classes], rows.concat()).expect("n ≥ 1"))
    }
}
