//! Exact k-nearest-neighbour retrieval over labelled reference samples.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use serde::{Deserialize, Serialize};

use crate::data::WellLogSequence;
use crate::error::{Error, Result};

/// Flat store of labelled feature vectors, kept in insertion order.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceSet {
    dim: usize,
    points: Vec<f64>,
    labels: Vec<usize>,
}

impl ReferenceSet {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            points: Vec::new(),
            labels: Vec::new(),
        }
    }

    pub fn push(&mut self, point: &[f64], label: usize) -> Result<()> {
        if point.len() != self.dim {
            return Err(Error::InvalidArgument(format!(
                "reference point has dimension {}, expected {}",
                point.len(),
                self.dim
            )));
        }
        self.points.extend_from_slice(point);
        self.labels.push(label);
        Ok(())
    }

    /// Every labelled depth of `seqs`, one channel vector per depth.
    pub fn from_sequences(seqs: &[WellLogSequence]) -> Result<Self> {
        let dim = seqs.first().map_or(0, WellLogSequence::num_channels);
        let mut set = Self::new(dim);
        for seq in seqs {
            let Some(labels) = seq.labels() else {
                return Err(Error::Data(format!("reference well '{}' has no labels", seq.well_id())));
            };
            for (t, &y) in labels.iter().enumerate() {
                set.push(&seq.row(t), y)?;
            }
        }
        Ok(set)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.points[i * self.dim..(i + 1) * self.dim]
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Neighbor {
    /// Position in the reference set.
    pub index: usize,
    pub features: Vec<f64>,
    pub label: usize,
    pub distance: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct NeighborSet {
    pub neighbors: Vec<Neighbor>,
}

impl NeighborSet {
    pub fn labels(&self) -> impl Iterator<Item = usize> + '_ {
        self.neighbors.iter().map(|n| n.label)
    }
}

#[derive(PartialEq)]
struct Candidate {
    distance: f64,
    index: usize,
}

impl Eq for Candidate {}

impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        self.distance
            .total_cmp(&other.distance)
            .then(self.index.cmp(&other.index))
    }
}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

pub fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// The `k` closest reference points by Euclidean distance, nearest first;
/// equal distances keep insertion order. Returns the whole set when `k`
/// exceeds it.
pub fn retrieve_neighbors(query: &[f64], reference: &ReferenceSet, k: usize) -> Result<NeighborSet> {
    if k == 0 {
        return Err(Error::InvalidArgument("k must be positive".into()));
    }
    if reference.is_empty() {
        return Err(Error::InvalidArgument("empty reference set".into()));
    }
    if query.len() != reference.dim() {
        return Err(Error::InvalidArgument(format!(
            "query has dimension {}, reference has {}",
            query.len(),
            reference.dim()
        )));
    }
    // max-heap holding the best k seen so far
    let mut heap: BinaryHeap<Candidate> = BinaryHeap::with_capacity(k + 1);
    for i in 0..reference.len() {
        let cand = Candidate {
            distance: euclidean(query, reference.point(i)),
            index: i,
        };
        if heap.len() < k {
            heap.push(cand);
        } else if cand < *heap.peek().expect("non-empty") {
            heap.pop();
            heap.push(cand);
        }
    }
    let neighbors = heap
        .into_sorted_vec()
        .into_iter()
        .map(|c| Neighbor {
            index: c.index,
            features: reference.point(c.index).to_vec(),
            label: reference.label(c.index),
            distance: c.distance,
        })
        .collect();
    Ok(NeighborSet { neighbors })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn reference(points: &[[f64; 2]]) -> ReferenceSet {
        let mut r = ReferenceSet::new(2);
        for (i, p) in points.iter().enumerate() {
            r.push(p, i % 3).unwrap();
        }
        r
    }

    fn brute_force(query: &[f64], r: &ReferenceSet, k: usize) -> Vec<usize> {
        let mut all: Vec<(f64, usize)> = (0..r.len())
            .map(|i| {
                let d: f64 = query.iter().zip(r.point(i)).map(|(a, b)| (a - b).powi(2)).sum();
                (d.sqrt(), i)
            })
            .collect();
        all.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
        all.into_iter().take(k).map(|(_, i)| i).collect()
    }

    #[test]
    fn exact_match_first() {
        let r = reference(&[[0.0, 0.0], [1.0, 1.0], [2.0, 2.0]]);
        let n = retrieve_neighbors(&[1.0, 1.0], &r, 1).unwrap();
        assert_eq!(n.neighbors.len(), 1);
        assert_eq!((n.neighbors[0].index, n.neighbors[0].distance), (1, 0.0));
    }

    #[test]
    fn five_points_against_sort() {
        let r = reference(&[[0.0, 0.0], [3.0, 4.0], [-1.0, 0.5], [2.0, -2.0], [0.2, 0.1]]);
        let q = [0.5, 0.5];
        let got: Vec<usize> = retrieve_neighbors(&q, &r, 3).unwrap().neighbors.iter().map(|n| n.index).collect();
        assert_eq!(got, brute_force(&q, &r, 3));
        assert_eq!(got, vec![4, 0, 2]);
    }

    #[test]
    fn saturation_and_ties() {
        let r = reference(&[[1.0, 0.0], [0.0, 1.0], [-1.0, 0.0], [0.0, -1.0]]);
        let n = retrieve_neighbors(&[0.0, 0.0], &r, 10).unwrap();
        let idx: Vec<usize> = n.neighbors.iter().map(|n| n.index).collect();
        assert_eq!(idx, vec![0, 1, 2, 3]);
    }

    #[test]
    fn errors() {
        let r = reference(&[[0.0, 0.0]]);
        assert!(retrieve_neighbors(&[0.0], &r, 1).is_err());
        assert!(retrieve_neighbors(&[0.0, 0.0], &r, 0).is_err());
        assert!(retrieve_neighbors(&[0.0, 0.0], &ReferenceSet::new(2), 1).is_err());
    }

    proptest! {
        #[test]
        fn matches_full_sort(
            pts in proptest::collection::vec((-5i32..5, -5i32..5), 1..60),
            q in (-5i32..5, -5i32..5),
            k in 1usize..12,
        ) {
            // integer grid coordinates force plenty of exact ties
            let points: Vec<[f64; 2]> = pts.iter().map(|&(a, b)| [a as f64, b as f64]).collect();
            let r = reference(&points);
            let query = [q.0 as f64, q.1 as f64];
            let got = retrieve_neighbors(&query, &r, k).unwrap();
            let ids: Vec<usize> = got.neighbors.iter().map(|n| n.index).collect();
            prop_assert_eq!(ids, brute_force(&query, &r, k));
            prop_assert!(got.neighbors.windows(2).all(|w| w[0].distance <= w[1].distance));
        }
    }
}
