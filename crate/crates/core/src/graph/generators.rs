//! Unit-weight graph families used by the simulators, tests and CLI.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::Graph;

pub fn path(n: usize) -> Graph {
    let edges: Vec<_> = (1..n).map(|i| (i - 1, i)).collect();
    Graph::unweighted(n, &edges).expect("path graph is valid")
}

pub fn cycle(n: usize) -> Graph {
    assert!(n >= 3, "cycle needs at least 3 nodes");
    let edges: Vec<_> = (0..n).map(|i| (i, (i + 1) % n)).collect();
    Graph::unweighted(n, &edges).expect("cycle graph is valid")
}

pub fn complete(n: usize) -> Graph {
    let edges: Vec<_> = (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect();
    Graph::unweighted(n, &edges).expect("complete graph is valid")
}

/// 4-neighbour lattice; node `r * cols + c`.
pub fn grid(rows: usize, cols: usize) -> Graph {
    let mut edges = Vec::new();
    for r in 0..rows {
        for c in 0..cols {
            let i = r * cols + c;
            if c + 1 < cols {
                edges.push((i, i + 1));
            }
            if r + 1 < rows {
                edges.push((i, i + cols));
            }
        }
    }
    Graph::unweighted(rows * cols, &edges).expect("grid graph is valid")
}

/// Random geometric graph on the unit square, made connected.
///
/// Nodes closer than `radius` are joined. Remaining components are then
/// linked through their closest node pair until the graph is connected.
/// Returns the graph and the node coordinates.
pub fn random_geometric(n: usize, radius: f64, seed: u64) -> (Graph, Vec<[f64; 2]>) {
    assert!(n >= 1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let coords: Vec<[f64; 2]> = (0..n).map(|_| [rng.random::<f64>(), rng.random::<f64>()]).collect();
    let dist = |a: usize, b: usize| {
        let dx = coords[a][0] - coords[b][0];
        let dy = coords[a][1] - coords[b][1];
        (dx * dx + dy * dy).sqrt()
    };

    let mut edges = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            if dist(i, j) < radius {
                edges.push((i, j));
            }
        }
    }

    let mut component = label_components(n, &edges);
    loop {
        let n_components = component.iter().max().map_or(0, |m| m + 1);
        if n_components <= 1 {
            break;
        }
        // closest pair between component 0 and any other component
        let mut best: Option<(f64, usize, usize)> = None;
        for i in (0..n).filter(|&i| component[i] == 0) {
            for j in (0..n).filter(|&j| component[j] != 0) {
                let d = dist(i, j);
                if best.is_none_or(|(bd, _, _)| d < bd) {
                    best = Some((d, i, j));
                }
            }
        }
        let (_, i, j) = best.expect("at least two components");
        edges.push((i.min(j), i.max(j)));
        component = label_components(n, &edges);
    }

    let graph = Graph::unweighted(n, &edges).expect("geometric graph is valid");
    (graph, coords)
}

fn label_components(n: usize, edges: &[(usize, usize)]) -> Vec<usize> {
    let mut adjacency = vec![Vec::new(); n];
    for &(i, j) in edges {
        adjacency[i].push(j);
        adjacency[j].push(i);
    }
    let mut label = vec![usize::MAX; n];
    let mut next = 0;
    for start in 0..n {
        if label[start] != usize::MAX {
            continue;
        }
        let mut stack = vec![start];
        label[start] = next;
        while let Some(i) = stack.pop() {
            for &j in &adjacency[i] {
                if label[j] == usize::MAX {
                    label[j] = next;
                    stack.push(j);
                }
            }
        }
        next += 1;
    }
    label
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_counts() {
        let g = grid(5, 6);
        assert_eq!(g.n_nodes(), 30);
        assert_eq!(g.n_edges(), 5 * 5 + 4 * 6);
        assert!(g.is_connected());
        assert_eq!(g.n_triangles(), 0);
    }

    #[test]
    fn geometric_is_connected_and_seeded() {
        for seed in 0..5 {
            let (g, coords) = random_geometric(30, 0.2, seed);
            assert!(g.is_connected());
            assert_eq!(coords.len(), 30);
            let (h, _) = random_geometric(30, 0.2, seed);
            assert_eq!(g.edges(), h.edges());
        }
    }
}
