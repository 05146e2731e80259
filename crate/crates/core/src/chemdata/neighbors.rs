use super::{Cluster, Vec3};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Pair {
    pub i: usize,
    pub j: usize,
    pub distance: f64,
    /// (r_j − r_i) / |r_j − r_i|
    pub unit: Vec3,
}

/// Directed neighbor graph under open boundary conditions.
#[derive(Clone, Debug, PartialEq)]
pub struct PairList {
    pub edges: Vec<Pair>,
    pub cutoff: f64,
}

/// All ordered pairs `(i, j)`, `i ≠ j`, with `|r_j − r_i| ≤ cutoff`.
///
/// Clusters stay below a hundred atoms, so the O(N²) scan is the whole
/// algorithm.
pub fn neighbor_pairs(c: &Cluster, cutoff: f64) -> PairList {
    let mut edges = Vec::new();
    for (i, j, d) in undirected_within(&c.positions, cutoff) {
        let ri = c.positions[i];
        let rj = c.positions[j];
        let u = [(rj[0] - ri[0]) / d, (rj[1] - ri[1]) / d, (rj[2] - ri[2]) / d];
        edges.push(Pair { i, j, distance: d, unit: u });
        edges.push(Pair { i: j, j: i, distance: d, unit: [-u[0], -u[1], -u[2]] });
    }
    PairList { edges, cutoff }
}

/// `(i, j, d)` for `i < j` with `d ≤ cutoff`, in lexicographic order.
pub(crate) fn undirected_within(positions: &[Vec3], cutoff: f64) -> Vec<(usize, usize, f64)> {
    let mut out = Vec::new();
    for i in 0..positions.len() {
        for j in i + 1..positions.len() {
            let d = distance(&positions[i], &positions[j]);
            if d <= cutoff {
                out.push((i, j, d));
            }
        }
    }
    out
}

#[inline]
pub(crate) fn distance(a: &Vec3, b: &Vec3) -> f64 {
    ((b[0] - a[0]).powi(2) + (b[1] - a[1]).powi(2) + (b[2] - a[2]).powi(2)).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cluster(p: Vec<Vec3>) -> Cluster {
        Cluster::new(vec![1; p.len()], p).unwrap()
    }

    #[test]
    fn two_atoms() {
        let near = cluster(vec![[0.0; 3], [3.0, 0.0, 0.0]]);
        assert_eq!(neighbor_pairs(&near, 6.0).edges.len(), 2);
        let far = cluster(vec![[0.0; 3], [7.0, 0.0, 0.0]]);
        assert!(neighbor_pairs(&far, 6.0).edges.is_empty());
    }

    #[test]
    fn collinear_chain_skips_ends() {
        let c = cluster(vec![[0.0; 3], [4.0, 0.0, 0.0], [8.0, 0.0, 0.0]]);
        let pl = neighbor_pairs(&c, 6.0);
        assert_eq!(pl.edges.len(), 4);
        assert!(pl.edges.iter().all(|e| !(e.i == 0 && e.j == 2) && !(e.i == 2 && e.j == 0)));
    }

    #[test]
    fn isolated_atom_has_no_edges() {
        assert!(neighbor_pairs(&cluster(vec![[1.0, 2.0, 3.0]]), 6.0).edges.is_empty());
    }

    proptest! {
        #[test]
        fn matches_all_pairs_filter(pts in prop::collection::vec(prop::array::uniform3(-8.0f64..8.0), 1..50)) {
            let c = cluster(pts.clone());
            let pl = neighbor_pairs(&c, 6.0);
            let mut got: Vec<(usize, usize)> = pl.edges.iter().map(|e| (e.i, e.j)).collect();
            got.sort_unstable();
            let mut want = Vec::new();
            for i in 0..pts.len() {
                for j in 0..pts.len() {
                    let d = ((pts[i][0]-pts[j][0]).powi(2) + (pts[i][1]-pts[j][1]).powi(2) + (pts[i][2]-pts[j][2]).powi(2)).sqrt();
                    if i != j && d <= 6.0 {
                        want.push((i, j));
                    }
                }
            }
            prop_assert_eq!(got, want);
            for e in &pl.edges {
                prop_assert!(e.distance <= 6.0 && e.i != e.j);
                let n = (e.unit[0].powi(2) + e.unit[1].powi(2) + e.unit[2].powi(2)).sqrt();
                prop_assert!((n - 1.0).abs() < 1e-12);
            }
        }
    }
}
