//! Discrete vector calculus on graphs.
//!
//! Vertex, edge and triangle functions are stored as `rows x channels`
//! arrays; every operator acts channel-wise.
//!
//! Sign conventions:
//! * an edge function is antisymmetric, `F(j, i) = -F(i, j)`, and stored once
//!   per canonical edge `(i, j)` with `i < j`;
//! * a triangle `i < j < k` is oriented along the cycle `i -> j -> k -> i`.
//!
//! Under these conventions `div(grad f) = -L f`, `curl(grad f) = 0` and
//! `div(curl* C) = 0` hold exactly (up to rounding).

use ndarray::{Array1, Array2, ArrayView2};
use thiserror::Error;

use crate::graph::Graph;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CalculusError {
    #[error("{what} has {got} rows, graph needs {expected}")]
    LengthMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("edge {0} has zero weight")]
    ZeroEdgeWeight(usize),
}

macro_rules! field_type {
    ($(#[$doc:meta])* $name:ident) => {
        $(#[$doc])*
        #[derive(Debug, Clone, PartialEq)]
        pub struct $name(pub Array2<f64>);

        impl $name {
            /// Single-channel function from one value per row.
            pub fn from_vec(values: Vec<f64>) -> Self {
                let n = values.len();
                Self(Array2::from_shape_vec((n, 1), values).expect("column shape"))
            }

            pub fn zeros(rows: usize, channels: usize) -> Self {
                Self(Array2::zeros((rows, channels)))
            }

            pub fn len(&self) -> usize {
                self.0.nrows()
            }

            pub fn is_empty(&self) -> bool {
                self.0.nrows() == 0
            }

            pub fn channels(&self) -> usize {
                self.0.ncols()
            }

            pub fn view(&self) -> ArrayView2<'_, f64> {
                self.0.view()
            }

            /// Values of channel 0.
            pub fn column(&self) -> Array1<f64> {
                self.0.column(0).to_owned()
            }

            pub fn max_abs(&self) -> f64 {
                self.0.iter().fold(0.0, |m, v| m.max(v.abs()))
            }
        }
    };
}

field_type!(
    /// A real (multi-channel) function on the vertices.
    VertexFunction
);
field_type!(
    /// An antisymmetric function on edges, one row per canonical edge.
    EdgeFunction
);
field_type!(
    /// A function on oriented 3-cliques, one row per sorted triangle.
    TriangleFunction
);

fn check_rows(what: &'static str, expected: usize, got: usize) -> Result<(), CalculusError> {
    if expected == got {
        Ok(())
    } else {
        Err(CalculusError::LengthMismatch { what, expected, got })
    }
}

/// `(grad f)(i, j) = f_j - f_i` on canonical edges.
pub fn gradient(g: &Graph, f: &VertexFunction) -> Result<EdgeFunction, CalculusError> {
    check_rows("vertex function", g.n_nodes(), f.len())?;
    let mut out = Array2::zeros((g.n_edges(), f.channels()));
    for (k, &(i, j)) in g.edges().iter().enumerate() {
        let mut row = out.row_mut(k);
        row.assign(&f.0.row(j));
        row -= &f.0.row(i);
    }
    Ok(EdgeFunction(out))
}

/// `(div F)_i = sum_j w_ij F(i, j)`, reading `F(j, i) = -F(i, j)`.
pub fn divergence(g: &Graph, flow: &EdgeFunction) -> Result<VertexFunction, CalculusError> {
    check_rows("edge function", g.n_edges(), flow.len())?;
    let mut out = Array2::zeros((g.n_nodes(), flow.channels()));
    for (k, (&(i, j), &w)) in g.edges().iter().zip(g.edge_weights()).enumerate() {
        let contribution = &flow.0.row(k) * w;
        {
            let mut row = out.row_mut(i);
            row += &contribution;
        }
        let mut row = out.row_mut(j);
        row -= &contribution;
    }
    Ok(VertexFunction(out))
}

/// `(L f)_i = sum_j w_ij (f_i - f_j)`, evaluated edge by edge.
pub fn laplacian_apply(g: &Graph, f: &VertexFunction) -> Result<VertexFunction, CalculusError> {
    check_rows("vertex function", g.n_nodes(), f.len())?;
    let mut out = Array2::zeros((g.n_nodes(), f.channels()));
    for (&(i, j), &w) in g.edges().iter().zip(g.edge_weights()) {
        let diff = (&f.0.row(i) - &f.0.row(j)) * w;
        {
            let mut row = out.row_mut(i);
            row += &diff;
        }
        let mut row = out.row_mut(j);
        row -= &diff;
    }
    Ok(VertexFunction(out))
}

/// `(curl F)(i, j, k) = F(i, j) + F(j, k) + F(k, i)` for each sorted triangle.
pub fn curl(g: &Graph, flow: &EdgeFunction) -> Result<TriangleFunction, CalculusError> {
    check_rows("edge function", g.n_edges(), flow.len())?;
    let mut out = Array2::zeros((g.n_triangles(), flow.channels()));
    for (t, &[i, j, k]) in g.triangles().iter().enumerate() {
        let ij = triangle_edge(g, i, j);
        let jk = triangle_edge(g, j, k);
        let ik = triangle_edge(g, i, k);
        // F(k, i) = -F(i, k)
        let value = &flow.0.row(ij) + &flow.0.row(jk) - flow.0.row(ik);
        out.row_mut(t).assign(&value);
    }
    Ok(TriangleFunction(out))
}

/// `(curl* C)(i, j) = sum_k (w_ijk / w_ij) C(i, j, k)` over triangles holding the edge.
///
/// Each triangle contributes with the sign its cycle induces on the
/// canonical edge: `+` on `(i, j)` and `(j, k)`, `-` on `(i, k)`.
pub fn curl_adjoint(g: &Graph, c: &TriangleFunction) -> Result<EdgeFunction, CalculusError> {
    check_rows("triangle function", g.n_triangles(), c.len())?;
    let weights = g.edge_weights();
    let mut out = Array2::zeros((g.n_edges(), c.channels()));
    for (t, (&[i, j, k], &wt)) in g.triangles().iter().zip(g.triangle_weights()).enumerate() {
        for (a, b, sign) in [(i, j, 1.0), (j, k, 1.0), (i, k, -1.0)] {
            let e = triangle_edge(g, a, b);
            if weights[e] == 0.0 {
                return Err(CalculusError::ZeroEdgeWeight(e));
            }
            let scale = sign * wt / weights[e];
            let mut row = out.row_mut(e);
            row.scaled_add(scale, &c.0.row(t));
        }
    }
    Ok(EdgeFunction(out))
}

fn triangle_edge(g: &Graph, a: usize, b: usize) -> usize {
    g.edge_index(a, b)
        .expect("triangle edges are present by construction")
}

/// Dirichlet energy `f^T L f`, summed over channels.
pub fn dirichlet_energy(g: &Graph, f: &VertexFunction) -> Result<f64, CalculusError> {
    check_rows("vertex function", g.n_nodes(), f.len())?;
    Ok(g
        .edges()
        .iter()
        .zip(g.edge_weights())
        .map(|(&(i, j), &w)| {
            let d = &f.0.row(i) - &f.0.row(j);
            w * d.dot(&d)
        })
        .sum())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{complete, path};
    use ndarray::array;

    fn triangle() -> Graph {
        Graph::unweighted(3, &[(0, 1), (1, 2), (0, 2)]).unwrap()
    }

    #[test]
    fn gradient_examples() {
        let g = path(3);
        let grad = gradient(&g, &VertexFunction::from_vec(vec![1.0, 3.0, 0.0])).unwrap();
        assert_eq!(grad.column().to_vec(), vec![2.0, -3.0]);

        let grad = gradient(&g, &VertexFunction::from_vec(vec![7.0; 3])).unwrap();
        assert_eq!(grad.max_abs(), 0.0);

        // canonical order (0,1), (0,2), (1,2)
        let grad = gradient(&triangle(), &VertexFunction::from_vec(vec![0.0, 1.0, 4.0])).unwrap();
        assert_eq!(grad.column().to_vec(), vec![1.0, 4.0, 3.0]);
    }

    #[test]
    fn divergence_examples() {
        let g = path(3);
        let div = divergence(&g, &EdgeFunction::from_vec(vec![1.0, 0.0])).unwrap();
        assert_eq!(div.column().to_vec(), vec![1.0, -1.0, 0.0]);

        let div = divergence(&g, &EdgeFunction::zeros(2, 3)).unwrap();
        assert_eq!(div, VertexFunction::zeros(3, 3));

        let f = VertexFunction::from_vec(vec![0.0, 1.0, 4.0]);
        let g = triangle();
        let div = divergence(&g, &gradient(&g, &f).unwrap()).unwrap();
        let lf = laplacian_apply(&g, &f).unwrap();
        assert_eq!(div.0, -lf.0);
    }

    #[test]
    fn laplacian_apply_examples() {
        let g = path(3);
        let lf = laplacian_apply(&g, &VertexFunction::from_vec(vec![1.0, 0.0, 0.0])).unwrap();
        assert_eq!(lf.column().to_vec(), vec![1.0, -1.0, 0.0]);

        let lf = laplacian_apply(&g, &VertexFunction::from_vec(vec![2.5; 3])).unwrap();
        assert_eq!(lf.max_abs(), 0.0);

        let k4 = complete(4);
        let f = VertexFunction(array![[0.3, -1.0], [1.7, 2.0], [-0.4, 0.5], [2.2, 0.0]]);
        let expected = k4.laplacian_matrix().dot(&f.0);
        let got = laplacian_apply(&k4, &f).unwrap();
        assert!((&got.0 - &expected).iter().all(|d| d.abs() < 1e-14));
    }

    #[test]
    fn curl_examples() {
        let g = triangle();
        let f = VertexFunction::from_vec(vec![0.3, -2.0, 5.5]);
        let c = curl(&g, &gradient(&g, &f).unwrap()).unwrap();
        assert!(c.max_abs() < 1e-15);

        // F(0,1)=1, F(0,2)=0, F(1,2)=1 in canonical order
        let c = curl(&g, &EdgeFunction::from_vec(vec![1.0, 0.0, 1.0])).unwrap();
        assert_eq!(c.column().to_vec(), vec![2.0]);

        let c = curl(&path(4), &EdgeFunction::from_vec(vec![1.0, 2.0, 3.0])).unwrap();
        assert!(c.is_empty());
    }

    #[test]
    fn curl_adjoint_examples() {
        let p = path(4);
        let e = curl_adjoint(&p, &TriangleFunction::zeros(0, 1)).unwrap();
        assert_eq!(e, EdgeFunction::zeros(3, 1));

        let g = triangle();
        let e = curl_adjoint(&g, &TriangleFunction::from_vec(vec![1.0])).unwrap();
        // (0,1): +1, (0,2): -1, (1,2): +1
        assert_eq!(e.column().to_vec(), vec![1.0, -1.0, 1.0]);
        assert_eq!(divergence(&g, &e).unwrap().max_abs(), 0.0);

        // triangles {0,1,2} and {1,2,3} share edge (1,2)
        let two = Graph::unweighted(4, &[(0, 1), (0, 2), (1, 2), (1, 3), (2, 3)]).unwrap();
        assert_eq!(two.triangles(), &[[0, 1, 2], [1, 2, 3]]);
        let e = curl_adjoint(&two, &TriangleFunction::from_vec(vec![1.0, -1.0])).unwrap();
        let shared = two.edge_index(1, 2).unwrap();
        assert_eq!(e.0[(shared, 0)], 0.0);
    }

    #[test]
    fn length_mismatch_is_reported() {
        let g = path(3);
        assert_eq!(
            gradient(&g, &VertexFunction::from_vec(vec![1.0])).unwrap_err(),
            CalculusError::LengthMismatch { what: "vertex function", expected: 3, got: 1 }
        );
        assert!(divergence(&g, &EdgeFunction::from_vec(vec![1.0])).is_err());
        assert!(curl(&g, &EdgeFunction::from_vec(vec![1.0])).is_err());
        assert!(curl_adjoint(&g, &TriangleFunction::from_vec(vec![1.0])).is_err());
        assert!(laplacian_apply(&g, &VertexFunction::from_vec(vec![])).is_err());
    }

    #[test]
    fn dirichlet_energy_matches_quadratic_form() {
        let g = complete(4);
        let f = VertexFunction::from_vec(vec![0.5, -1.0, 2.0, 0.0]);
        let lf = g.laplacian_matrix().dot(&f.column());
        let q = f.column().dot(&lf);
        assert!((dirichlet_energy(&g, &f).unwrap() - q).abs() < 1e-12);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        // Dense incidence oracle: B[e, i] = -1, B[e, j] = +1 for canonical (i, j).
        fn incidence(g: &Graph) -> Array2<f64> {
            let mut b = Array2::zeros((g.n_edges(), g.n_nodes()));
            for (k, &(i, j)) in g.edges().iter().enumerate() {
                b[(k, i)] = -1.0;
                b[(k, j)] = 1.0;
            }
            b
        }

        fn arb_weighted(max_n: usize) -> impl Strategy<Value = Graph> {
            (2..=max_n).prop_flat_map(|n| {
                let m = n * (n - 1) / 2;
                (
                    proptest::collection::vec(prop::bool::weighted(0.5), m),
                    proptest::collection::vec(0.05f64..2.0, m),
                    proptest::collection::vec(0.0f64..2.0, n * n * n),
                )
                    .prop_map(move |(mask, w, tw)| {
                        let pairs: Vec<(usize, usize)> =
                            (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect();
                        let (edges, weights): (Vec<_>, Vec<_>) = pairs
                            .into_iter()
                            .zip(w)
                            .zip(mask)
                            .filter(|(_, keep)| *keep)
                            .map(|(e, _)| e)
                            .unzip();
                        let base = Graph::new(n, &edges, Some(&weights), None).unwrap();
                        let tws = base
                            .triangles()
                            .iter()
                            .enumerate()
                            .map(|(t, &tri)| (tri, tw[t]))
                            .collect();
                        Graph::new(n, &edges, Some(&weights), Some(&tws)).unwrap()
                    })
            })
        }

        proptest! {
            #[test]
            fn gradient_matches_incidence(g in arb_weighted(10), seed in any::<u64>()) {
                let f = VertexFunction::from_vec(
                    (0..g.n_nodes()).map(|i| ((seed as f64 + i as f64) * 0.37).sin()).collect(),
                );
                let expected = incidence(&g).dot(&f.0);
                prop_assert_eq!(gradient(&g, &f).unwrap().0, expected);
            }

            #[test]
            fn div_grad_is_negative_laplacian(
                g in arb_weighted(20),
                vals in proptest::collection::vec(-5.0f64..5.0, 40),
            ) {
                let n = g.n_nodes();
                let f = VertexFunction(
                    Array2::from_shape_vec((n, 2), vals[..2 * n].to_vec()).unwrap(),
                );
                let lhs = divergence(&g, &gradient(&g, &f).unwrap()).unwrap();
                let lf = laplacian_apply(&g, &f).unwrap();
                let dense = g.laplacian_matrix().dot(&f.0);
                for ((a, b), c) in lhs.0.iter().zip(lf.0.iter()).zip(dense.iter()) {
                    prop_assert!((a + b).abs() < 1e-10);
                    prop_assert!((b - c).abs() < 1e-10);
                }
            }

            #[test]
            fn curl_grad_vanishes(
                g in arb_weighted(12),
                vals in proptest::collection::vec(-5.0f64..5.0, 12),
            ) {
                let f = VertexFunction::from_vec(vals[..g.n_nodes()].to_vec());
                let c = curl(&g, &gradient(&g, &f).unwrap()).unwrap();
                prop_assert!(c.max_abs() < 1e-12);
            }

            #[test]
            fn div_curl_adjoint_vanishes(
                g in arb_weighted(12),
                vals in proptest::collection::vec(-5.0f64..5.0, 220),
            ) {
                let c = TriangleFunction::from_vec(vals[..g.n_triangles()].to_vec());
                let d = divergence(&g, &curl_adjoint(&g, &c).unwrap()).unwrap();
                prop_assert!(d.max_abs() < 1e-10);
            }

            #[test]
            fn gradient_is_linear(
                g in arb_weighted(10),
                a in -3.0f64..3.0,
                b in -3.0f64..3.0,
                vals in proptest::collection::vec(-5.0f64..5.0, 20),
            ) {
                let n = g.n_nodes();
                let f = VertexFunction::from_vec(vals[..n].to_vec());
                let h = VertexFunction::from_vec(vals[10..10 + n].to_vec());
                let combo = VertexFunction(&f.0 * a + &h.0 * b);
                let lhs = gradient(&g, &combo).unwrap();
                let rhs = gradient(&g, &f).unwrap().0 * a + gradient(&g, &h).unwrap().0 * b;
                for (x, y) in lhs.0.iter().zip(rhs.iter()) {
                    prop_assert!((x - y).abs() < 1e-12);
                }
            }
        }
    }
}
