//! Armband topology: sensors as graph nodes, physical adjacency as
//! undirected edges, and the self-loop-augmented symmetric normalization
//! `D̃^{-1/2} (A + I) D̃^{-1/2}` used by every graph-convolution step.
//!
//! All matrices are dense. Armbands carry a few dozen sensors at most.

use std::collections::BTreeSet;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::selection::SelectionVector;

/// Index of a sensor node within its topology.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SensorId(pub usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TopologyKind {
    Ring,
    Custom,
}

/// Sensor graph G = (V, E). Edges are stored canonically as `(min, max)`
/// pairs in ascending order, without self-pairs or duplicates.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ArmbandTopology {
    kind: TopologyKind,
    node_count: usize,
    edges: Vec<(usize, usize)>,
}

impl ArmbandTopology {
    /// Evenly distributed ring: sensor `i` touches `i ± 1 (mod n)`.
    pub fn ring(n: usize) -> Result<Self> {
        if n < 3 {
            return Err(Error::InvalidTopology(format!(
                "a ring needs at least 3 nodes, got {n}"
            )));
        }
        let edges: Vec<_> = (0..n).map(|i| (i, (i + 1) % n)).collect();
        let mut t = Self::custom(n, &edges)?;
        t.kind = TopologyKind::Ring;
        Ok(t)
    }

    /// Arbitrary wiring. Unordered duplicates collapse silently.
    pub fn custom(n: usize, edges: &[(usize, usize)]) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidTopology("node count must be positive".into()));
        }
        let mut set = BTreeSet::new();
        for &(a, b) in edges {
            if a >= n || b >= n {
                return Err(Error::InvalidTopology(format!(
                    "edge ({a}, {b}) references a node outside 0..{n}"
                )));
            }
            if a == b {
                return Err(Error::InvalidTopology(format!("self-pair ({a}, {a})")));
            }
            set.insert((a.min(b), a.max(b)));
        }
        Ok(Self {
            kind: TopologyKind::Custom,
            node_count: n,
            edges: set.into_iter().collect(),
        })
    }

    /// Several independent rings laid out back to back, e.g. `[6, 6, 4]`
    /// for a three-band device. No edges connect different bands.
    pub fn banded_rings(band_sizes: &[usize]) -> Result<Self> {
        let mut edges = Vec::new();
        let mut offset = 0;
        for &size in band_sizes {
            let ring = Self::ring(size)?;
            edges.extend(ring.edges.iter().map(|&(a, b)| (a + offset, b + offset)));
            offset += size;
        }
        Self::custom(offset, &edges)
    }

    pub fn kind(&self) -> TopologyKind {
        self.kind
    }

    pub fn node_count(&self) -> usize {
        self.node_count
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn degree(&self, node: SensorId) -> usize {
        self.edges
            .iter()
            .filter(|&&(a, b)| a == node.0 || b == node.0)
            .count()
    }

    pub fn contains_edge(&self, a: SensorId, b: SensorId) -> bool {
        let key = (a.0.min(b.0), a.0.max(b.0));
        self.edges.binary_search(&key).is_ok()
    }

    /// Binary adjacency A with `A[i][j] = 1` iff `(i, j)` is an edge.
    pub fn adjacency(&self) -> BinaryAdjacency {
        let n = self.node_count;
        let mut a = Array2::zeros((n, n));
        for &(i, j) in &self.edges {
            a[[i, j]] = 1.0;
            a[[j, i]] = 1.0;
        }
        BinaryAdjacency(a)
    }

    /// Shorthand for `self.adjacency().normalize()`.
    pub fn normalized_adjacency(&self) -> NormalizedAdjacency {
        self.adjacency().normalize()
    }

    /// Keeps the selected sensors, renumbered densely in ascending original
    /// order, and the edges whose both endpoints survive.
    pub fn subgraph(&self, s: &SelectionVector) -> Result<Self> {
        s.ensure_len(self.node_count)?;
        s.ensure_nonempty()?;
        let mut new_index = vec![usize::MAX; self.node_count];
        for (dense, old) in s.indices().into_iter().enumerate() {
            new_index[old] = dense;
        }
        let edges: Vec<_> = self
            .edges
            .iter()
            .filter(|&&(a, b)| s.is_selected(a) && s.is_selected(b))
            .map(|&(a, b)| (new_index[a], new_index[b]))
            .collect();
        let mut t = Self::custom(s.count(), &edges)?;
        if s.count() == self.node_count {
            t.kind = self.kind;
        }
        Ok(t)
    }

    pub fn to_config(&self) -> TopologyConfig {
        TopologyConfig {
            kind: self.kind,
            node_count: self.node_count,
            edges: Some(self.edges.iter().map(|&(a, b)| [a, b]).collect()),
        }
    }

    pub fn from_config(cfg: &TopologyConfig) -> Result<Self> {
        let edges: Vec<(usize, usize)> = cfg
            .edges
            .as_ref()
            .map(|e| e.iter().map(|&[a, b]| (a, b)).collect())
            .unwrap_or_default();
        match cfg.kind {
            TopologyKind::Ring => {
                let ring = Self::ring(cfg.node_count)?;
                if cfg.edges.is_some() && Self::custom(cfg.node_count, &edges)?.edges != ring.edges {
                    return Err(Error::InvalidTopology(
                        "edges listed for a ring topology do not form the ring".into(),
                    ));
                }
                Ok(ring)
            }
            TopologyKind::Custom => Self::custom(cfg.node_count, &edges),
        }
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(&self.to_config())?)
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        Self::from_config(&toml::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }
}

/// On-disk topology document.
///
/// ```toml
/// kind = "custom"       # or "ring"
/// node_count = 4
/// edges = [[0, 1], [2, 3]]
/// ```
///
/// For `kind = "ring"` the edge list may be omitted; if present it must
/// describe the ring exactly.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TopologyConfig {
    pub kind: TopologyKind,
    pub node_count: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub edges: Option<Vec<[usize; 2]>>,
}

/// Symmetric 0/1 matrix with zero diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct BinaryAdjacency(Array2<f64>);

impl BinaryAdjacency {
    pub fn matrix(&self) -> &Array2<f64> {
        &self.0
    }

    pub fn node_count(&self) -> usize {
        self.0.nrows()
    }

    /// `D̃^{-1/2} Ã D̃^{-1/2}` with `Ã = A + I` and `D̃ᵢᵢ = Σⱼ Ãᵢⱼ ≥ 1`.
    pub fn normalize(&self) -> NormalizedAdjacency {
        let n = self.node_count();
        let mut tilde = self.0.clone();
        for i in 0..n {
            tilde[[i, i]] += 1.0;
        }
        let inv_sqrt: Vec<f64> = tilde.rows().into_iter().map(|r| 1.0 / r.sum().sqrt()).collect();
        let norm = Array2::from_shape_fn((n, n), |(i, j)| inv_sqrt[i] * tilde[[i, j]] * inv_sqrt[j]);
        NormalizedAdjacency(norm)
    }
}

/// Propagation operator Â of a graph-convolution layer.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedAdjacency(Array2<f64>);

impl NormalizedAdjacency {
    pub fn matrix(&self) -> &Array2<f64> {
        &self.0
    }

    pub fn node_count(&self) -> usize {
        self.0.nrows()
    }

    /// Wraps an arbitrary square matrix. Used for the identity operator in
    /// degenerate comparisons and for tests; no normalization is applied.
    pub fn from_matrix(m: Array2<f64>) -> Result<Self> {
        if m.nrows() != m.ncols() {
            return Err(Error::Shape(format!(
                "adjacency must be square, got {}x{}",
                m.nrows(),
                m.ncols()
            )));
        }
        Ok(Self(m))
    }

    pub fn identity(n: usize) -> Self {
        Self(Array2::eye(n))
    }

    /// Column means `(1/N) 1ᵀ Â`: the weight each node's hidden row carries
    /// in the mean-pooled graph readout.
    pub fn pooling_weights(&self) -> Vec<f64> {
        let n = self.node_count() as f64;
        self.0.columns().into_iter().map(|c| c.sum() / n).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    #[test]
    fn smallest_ring() {
        let t = ArmbandTopology::ring(3).unwrap();
        assert_eq!(t.edges(), &[(0, 1), (0, 2), (1, 2)]);
        assert_eq!(t.kind(), TopologyKind::Ring);
    }

    #[test]
    fn ring_of_sixteen_has_degree_two() {
        let t = ArmbandTopology::ring(16).unwrap();
        assert_eq!(t.edges().len(), 16);
        assert!((0..16).all(|i| t.degree(SensorId(i)) == 2));
    }

    #[test]
    fn ring_needs_three_nodes() {
        assert!(matches!(ArmbandTopology::ring(2), Err(Error::InvalidTopology(_))));
    }

    #[test]
    fn custom_dedups_unordered_pairs() {
        let t = ArmbandTopology::custom(4, &[(0, 1), (1, 0), (2, 3)]).unwrap();
        assert_eq!(t.edges(), &[(0, 1), (2, 3)]);
    }

    #[test]
    fn custom_rejects_bad_edges() {
        assert!(matches!(
            ArmbandTopology::custom(4, &[(0, 4)]),
            Err(Error::InvalidTopology(_))
        ));
        assert!(matches!(
            ArmbandTopology::custom(4, &[(2, 2)]),
            Err(Error::InvalidTopology(_))
        ));
        assert!(ArmbandTopology::custom(0, &[]).is_err());
    }

    #[test]
    fn single_isolated_node_is_valid() {
        let t = ArmbandTopology::custom(1, &[]).unwrap();
        assert_eq!(t.node_count(), 1);
        assert!(t.edges().is_empty());
    }

    #[test]
    fn adjacency_examples() {
        let a = ArmbandTopology::ring(3).unwrap().adjacency();
        assert_eq!(a.matrix(), &array![[0., 1., 1.], [1., 0., 1.], [1., 1., 0.]]);
        let a = ArmbandTopology::custom(2, &[(0, 1)]).unwrap().adjacency();
        assert_eq!(a.matrix(), &array![[0., 1.], [1., 0.]]);
        let a = ArmbandTopology::custom(3, &[]).unwrap().adjacency();
        assert_eq!(a.matrix(), &Array2::<f64>::zeros((3, 3)));
    }

    #[test]
    fn normalized_three_ring_is_one_third_everywhere() {
        let a_hat = ArmbandTopology::ring(3).unwrap().normalized_adjacency();
        for &v in a_hat.matrix() {
            assert_abs_diff_eq!(v, 1.0 / 3.0, epsilon = 1e-15);
        }
    }

    #[test]
    fn normalized_small_cases() {
        let one = ArmbandTopology::custom(1, &[]).unwrap().normalized_adjacency();
        assert_eq!(one.matrix(), &array![[1.0]]);
        let two = ArmbandTopology::custom(2, &[(0, 1)]).unwrap().normalized_adjacency();
        for &v in two.matrix() {
            assert_abs_diff_eq!(v, 0.5, epsilon = 1e-15);
        }
    }

    #[test]
    fn subgraph_examples() {
        let ring = ArmbandTopology::ring(4).unwrap();
        let s = SelectionVector::parse_bitstring("1110").unwrap();
        assert_eq!(ring.subgraph(&s).unwrap().edges(), &[(0, 1), (1, 2)]);

        let s = SelectionVector::parse_bitstring("1010").unwrap();
        let sub = ring.subgraph(&s).unwrap();
        assert_eq!(sub.node_count(), 2);
        assert!(sub.edges().is_empty());

        assert_eq!(ring.subgraph(&SelectionVector::all(4)).unwrap(), ring);
        assert!(matches!(
            ring.subgraph(&SelectionVector::none(4)),
            Err(Error::EmptySelection)
        ));
    }

    #[test]
    fn config_round_trip() {
        let t = ArmbandTopology::banded_rings(&[6, 6, 4]).unwrap();
        assert_eq!(t.node_count(), 16);
        assert_eq!(t.edges().len(), 16);
        assert!(!t.contains_edge(SensorId(5), SensorId(6)));
        let back = ArmbandTopology::from_toml(&t.to_toml().unwrap()).unwrap();
        assert_eq!(back, t);

        let ring = ArmbandTopology::ring(5).unwrap();
        assert_eq!(ArmbandTopology::from_toml(&ring.to_toml().unwrap()).unwrap(), ring);
        let bare = ArmbandTopology::from_toml("kind = \"ring\"\nnode_count = 5\n").unwrap();
        assert_eq!(bare, ring);
        let wrong = "kind = \"ring\"\nnode_count = 4\nedges = [[0, 2]]\n";
        assert!(ArmbandTopology::from_toml(wrong).is_err());
    }
}
