use super::{Graph, HopMatrix, UNREACHABLE, VIRTUAL};
use crate::error::{input, Result};

/// Feature id carried by the virtual node; models map it to a reserved embedding row.
pub const VIRTUAL_FEATURE: u32 = u32::MAX;

#[inline]
fn in_scope(hop: u32, fl: usize) -> bool {
    hop == VIRTUAL || (hop != UNREACHABLE && hop as usize <= fl)
}

/// Sorted ids of nodes within `fl` hops of `center`, center included.
///
/// A virtual node is in every ego-net and its own ego-net is the whole graph.
pub fn ego_net(hops: &HopMatrix, center: usize, fl: usize) -> Result<Vec<usize>> {
    if center >= hops.n() {
        return input(format!("center {center} out of range for {} nodes", hops.n()));
    }
    Ok(hops
        .row(center)
        .iter()
        .enumerate()
        .filter(|&(_, &h)| in_scope(h, fl))
        .map(|(j, _)| j)
        .collect())
}

/// Focal mask: row `i` lists the nodes inside the `fl`-hop ego-net of `i`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FocalMask {
    n: usize,
    fl: usize,
    rows: Vec<Vec<usize>>,
}

impl FocalMask {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn fl(&self) -> usize {
        self.fl
    }

    pub fn row(&self, i: usize) -> &[usize] {
        &self.rows[i]
    }

    pub fn rows(&self) -> &[Vec<usize>] {
        &self.rows
    }

    /// Total number of in-scope pairs.
    pub fn nnz(&self) -> usize {
        self.rows.iter().map(Vec::len).sum()
    }

    /// Row-major `n × n` boolean view.
    pub fn dense(&self) -> Vec<bool> {
        let mut d = vec![false; self.n * self.n];
        for (i, row) in self.rows.iter().enumerate() {
            for &j in row {
                d[i * self.n + j] = true;
            }
        }
        d
    }

    /// Dense 0/1 matrix, one `Vec` per row.
    pub fn dense_matrix(&self) -> Vec<Vec<u8>> {
        let d = self.dense();
        d.chunks(self.n.max(1))
            .take(self.n)
            .map(|r| r.iter().map(|&b| u8::from(b)).collect())
            .collect()
    }
}

pub fn focal_mask(hops: &HopMatrix, fl: usize) -> FocalMask {
    let rows = (0..hops.n())
        .map(|i| ego_net(hops, i, fl).expect("row in range"))
        .collect();
    FocalMask { n: hops.n(), fl, rows }
}

/// Appends a virtual node that sits at the dedicated [`VIRTUAL`] distance from
/// every real node. The adjacency lists are left untouched.
pub fn add_virtual_node(graph: &Graph, hops: &HopMatrix) -> (Graph, HopMatrix) {
    let n = graph.num_nodes();
    let mut feats = graph.node_feats().to_vec();
    feats.push(VIRTUAL_FEATURE);
    let labels = graph.node_labels().map(|l| {
        let mut l = l.to_vec();
        l.push(0);
        l
    });
    let augmented = Graph::new(
        n + 1,
        graph.edges().to_vec(),
        feats,
        labels,
        graph.edge_types().map(<[u32]>::to_vec),
    )
    .expect("augmenting a valid graph stays valid")
    .with_virtual_node(n);

    let m = n + 1;
    let mut raw = vec![VIRTUAL; m * m];
    for i in 0..n {
        raw[i * m..i * m + n].copy_from_slice(hops.row(i));
    }
    raw[n * m + n] = 0;
    (augmented, HopMatrix::from_raw(m, raw))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::hop_matrix;
    use crate::graph::testutil::{complete, gnp, path};
    use proptest::prelude::*;

    #[test]
    fn ego_net_examples() {
        let h = hop_matrix(&path(5));
        assert_eq!(ego_net(&h, 2, 2).unwrap(), vec![0, 1, 2, 3, 4]);
        assert_eq!(ego_net(&h, 0, 1).unwrap(), vec![0, 1]);
        for c in 0..5 {
            assert_eq!(ego_net(&h, c, 0).unwrap(), vec![c]);
        }
        assert!(ego_net(&h, 5, 1).is_err());
    }

    #[test]
    fn ego_net_matches_adjacency_powers() {
        for seed in 0..4 {
            let g = gnp(25, 0.2, seed);
            let n = 25;
            let mut a = vec![0u64; n * n];
            for i in 0..n {
                for &j in g.neighbors(i) {
                    a[i * n + j] = 1;
                }
            }
            let mut a2 = vec![0u64; n * n];
            for i in 0..n {
                for k in 0..n {
                    for j in 0..n {
                        a2[i * n + j] += a[i * n + k] * a[k * n + j];
                    }
                }
            }
            let h = hop_matrix(&g);
            for c in 0..n {
                let want: Vec<usize> = (0..n)
                    .filter(|&j| j == c || a[c * n + j] + a2[c * n + j] > 0)
                    .collect();
                assert_eq!(ego_net(&h, c, 2).unwrap(), want);
            }
        }
    }

    #[test]
    fn mask_examples() {
        let m = focal_mask(&hop_matrix(&complete(3)), 1);
        assert!(m.dense().iter().all(|&b| b));
        let m = focal_mask(&hop_matrix(&path(4)), 1);
        assert_eq!(
            m.dense_matrix(),
            vec![
                vec![1, 1, 0, 0],
                vec![1, 1, 1, 0],
                vec![0, 1, 1, 1],
                vec![0, 0, 1, 1]
            ]
        );
        let g = gnp(40, 0.1, 3);
        let h = hop_matrix(&g);
        let d = focal_mask(&h, 3).dense();
        for i in 0..40 {
            for j in 0..40 {
                let hop = h.get(i, j);
                assert_eq!(d[i * 40 + j], hop != UNREACHABLE && hop <= 3);
            }
        }
    }

    #[test]
    fn virtual_node_joins_every_scope() {
        let g = complete(4);
        let (va, vh) = add_virtual_node(&g, &hop_matrix(&g));
        assert_eq!(va.num_nodes(), 5);
        assert_eq!(va.virtual_node(), Some(4));
        assert_eq!(va.node_feats()[4], VIRTUAL_FEATURE);
        assert!(focal_mask(&vh, 1).dense().iter().all(|&b| b));

        let e = Graph::empty(3);
        let (_, vh) = add_virtual_node(&e, &hop_matrix(&e));
        for fl in 0..3 {
            let m = focal_mask(&vh, fl);
            assert_eq!(m.row(3), &[0, 1, 2, 3]);
            for i in 0..3 {
                assert_eq!(m.row(i), &[i, 3]);
            }
        }
        assert_eq!(vh.get(0, 3), VIRTUAL);
        assert_eq!(vh.get(3, 3), 0);
        assert_eq!(vh.get(0, 1), UNREACHABLE);
    }

    proptest! {
        #[test]
        fn mask_invariants(n in 1usize..30, p in 0.0f64..0.4, seed in any::<u64>()) {
            let g = gnp(n, p, seed);
            let h = hop_matrix(&g);
            let comp = g.components();
            let mut prev: Option<FocalMask> = None;
            for fl in 0..=n {
                let m = focal_mask(&h, fl);
                let d = m.dense();
                for i in 0..n {
                    prop_assert!(d[i * n + i]);
                    for j in 0..n {
                        prop_assert_eq!(d[i * n + j], d[j * n + i]);
                    }
                }
                if let Some(pm) = &prev {
                    for i in 0..n {
                        prop_assert!(pm.row(i).iter().all(|j| m.row(i).contains(j)));
                    }
                }
                if fl as u32 >= h.diameter() {
                    for i in 0..n {
                        for j in 0..n {
                            prop_assert_eq!(d[i * n + j], comp[i] == comp[j]);
                        }
                    }
                }
                prev = Some(m);
            }
        }
    }
}
