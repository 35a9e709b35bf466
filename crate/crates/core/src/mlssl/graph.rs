use ndarray::{Array1, Array2, ArrayView2, Axis};
use rayon::prelude::*;

use crate::error::{Result, StageError};

/// Floor applied to neighbour scales and degrees.
pub const GRAPH_FLOOR: f64 = 1e-8;

/// k-nn similarity graph with its normalized Laplacian.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityGraph {
    /// Symmetric, non-negative, zero diagonal.
    pub weights: Array2<f64>,
    pub degrees: Array1<f64>,
    /// `I - D^{-1/2} V D^{-1/2}` with degrees floored.
    pub laplacian: Array2<f64>,
}

impl SimilarityGraph {
    pub fn len(&self) -> usize {
        self.weights.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.nrows() == 0
    }

    /// Restriction of the graph to `rows`, renormalized.
    pub fn restrict(&self, rows: &[usize]) -> SimilarityGraph {
        let v = self.weights.select(Axis(0), rows).select(Axis(1), rows);
        from_weights(v)
    }
}

fn from_weights(weights: Array2<f64>) -> SimilarityGraph {
    let n = weights.nrows();
    let degrees = weights.sum_axis(Axis(1));
    let inv_sqrt = degrees.mapv(|d| 1.0 / d.max(GRAPH_FLOOR).sqrt());
    let mut laplacian = Array2::<f64>::zeros((n, n));
    for i in 0..n {
        for j in 0..n {
            let off = weights[(i, j)] * (inv_sqrt[i] * inv_sqrt[j]);
            laplacian[(i, j)] = if i == j { 1.0 - off } else { -off };
        }
    }
    SimilarityGraph {
        weights,
        degrees,
        laplacian,
    }
}

/// Indices and distances of the `k` nearest other rows, nearest first; ties
/// go to the lower index.
fn neighbours(x: &ArrayView2<f64>, i: usize, k: usize) -> Vec<(usize, f64)> {
    let xi = x.row(i);
    let mut d: Vec<(usize, f64)> = (0..x.nrows())
        .filter(|&j| j != i)
        .map(|j| {
            let sq: f64 = xi.iter().zip(x.row(j)).map(|(a, b)| (a - b) * (a - b)).sum();
            (j, sq.sqrt())
        })
        .collect();
    let cmp = |a: &(usize, f64), b: &(usize, f64)| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0));
    if k < d.len() {
        d.select_nth_unstable_by(k - 1, cmp);
        d.truncate(k);
    }
    d.sort_by(cmp);
    d
}

/// Gaussian k-nn graph over the rows of `x`.
///
/// `V(i, j) = exp(-m^2 / (sigma_i sigma_j))` when `j` is one of the `k_nn`
/// nearest neighbours of `i` (Euclidean `m`), then `V <- max(V, V^T)`.
/// `sigma_i` is the distance to the `h_nn`-th nearest neighbour.
pub fn build_graph(x: ArrayView2<f64>, k_nn: usize, h_nn: usize) -> Result<SimilarityGraph> {
    let n = x.nrows();
    if n < 2 {
        return Err(StageError::Graph(format!("need at least two rows, got {n}")));
    }
    if k_nn == 0 || k_nn > n - 1 {
        return Err(StageError::Graph(format!("k_nn = {k_nn} must lie in 1..={}", n - 1)));
    }
    if h_nn == 0 || h_nn > k_nn {
        return Err(StageError::Graph(format!("h_nn = {h_nn} must lie in 1..={k_nn}")));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(StageError::Graph("features contain non-finite values".into()));
    }
    let nbrs: Vec<Vec<(usize, f64)>> = (0..n)
        .into_par_iter()
        .map(|i| neighbours(&x, i, k_nn))
        .collect();
    let sigma: Vec<f64> = nbrs.iter().map(|nb| nb[h_nn - 1].1.max(GRAPH_FLOOR)).collect();
    let mut v = Array2::<f64>::zeros((n, n));
    for (i, nb) in nbrs.iter().enumerate() {
        for &(j, m) in nb {
            let w = (-(m * m) / (sigma[i] * sigma[j])).exp();
            v[(i, j)] = v[(i, j)].max(w);
            v[(j, i)] = v[(j, i)].max(w);
        }
    }
    Ok(from_weights(v))
}

/// `sum_s yhat_s^T L yhat_s` over the stage columns of `yhat`.
pub fn sls_loss(yhat: ArrayView2<f64>, graph: &SimilarityGraph) -> Result<f64> {
    if yhat.nrows() != graph.len() {
        return Err(StageError::shape(format!(
            "{} score rows for a {}-node graph",
            yhat.nrows(),
            graph.len()
        )));
    }
    let ly = graph.laplacian.dot(&yhat);
    Ok((&yhat * &ly).sum())
}

/// Gradient of [`sls_loss`]: `2 L Yhat`.
pub(crate) fn sls_grad(yhat: ArrayView2<f64>, graph: &SimilarityGraph) -> Array2<f64> {
    graph.laplacian.dot(&yhat) * 2.0
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    #[test]
    fn diagonal_is_zero_and_symmetric() {
        let x = array![[0.0, 0.0], [1.0, 0.0], [0.0, 2.0], [3.0, 3.0], [0.5, 0.5]];
        let g = build_graph(x.view(), 2, 1).unwrap();
        for i in 0..5 {
            assert_eq!(g.weights[(i, i)], 0.0);
            for j in 0..5 {
                assert_eq!(g.weights[(i, j)], g.weights[(j, i)]);
            }
        }
    }

    #[test]
    fn non_neighbours_have_no_edge() {
        // two tight pairs far apart; with k = 1 they never connect
        let x = array![[0.0], [0.1], [10.0], [10.1]];
        let g = build_graph(x.view(), 1, 1).unwrap();
        assert_eq!(g.weights[(0, 2)], 0.0);
        assert_eq!(g.weights[(1, 3)], 0.0);
        assert!(g.weights[(0, 1)] > 0.0);
    }

    #[test]
    fn hand_evaluated_weight() {
        // every pair at distance 2, so sigma = 2 everywhere and V = e^-1
        let h = 3f64.sqrt();
        let x = array![[0.0, 0.0], [2.0, 0.0], [1.0, h]];
        let g = build_graph(x.view(), 2, 2).unwrap();
        assert_abs_diff_eq!(g.weights[(0, 1)], (-1.0f64).exp(), epsilon = 1e-12);
    }

    #[test]
    fn precondition_errors() {
        let one = array![[1.0, 2.0]];
        assert!(matches!(build_graph(one.view(), 1, 1), Err(StageError::Graph(_))));
        let two = array![[1.0], [2.0]];
        assert!(build_graph(two.view(), 2, 1).is_err());
        assert!(build_graph(two.view(), 1, 2).is_err());
    }

    fn single_edge() -> SimilarityGraph {
        from_weights(array![[0.0, 1.0], [1.0, 0.0]])
    }

    #[test]
    fn two_node_values() {
        let g = single_edge();
        assert_eq!(sls_loss(array![[0.3], [0.3]].view(), &g).unwrap(), 0.0);
        assert_abs_diff_eq!(sls_loss(array![[1.0], [-1.0]].view(), &g).unwrap(), 4.0, epsilon = 1e-12);
    }

    #[test]
    fn degree_vector_is_in_the_null_space() {
        let x = array![[0.0, 0.0], [1.0, 0.2], [0.3, 2.0], [3.0, 3.0], [0.5, 0.5], [2.0, 1.0]];
        let g = build_graph(x.view(), 3, 2).unwrap();
        let y = g.degrees.mapv(f64::sqrt).insert_axis(Axis(1));
        assert!(sls_loss(y.view(), &g).unwrap().abs() < 1e-12);
    }

    #[test]
    fn restriction_keeps_structure() {
        let x = array![[0.0], [0.4], [1.0], [1.3], [5.0]];
        let g = build_graph(x.view(), 2, 1).unwrap();
        let r = g.restrict(&[0, 2, 3]);
        assert_eq!(r.weights[(1, 2)], g.weights[(2, 3)]);
        assert_eq!(r.len(), 3);
    }
}
