//! Location embedding and K-means partitioning into area groups.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use nalgebra::{DMatrix, SymmetricEigen};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dynamics::{GroupAssignment, ReactionParams};
use crate::error::{Error, Result};
use crate::rng::stream;

/// Two-dimensional representation of each location's reaction parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Embedding {
    pub coords: Vec<[f64; 2]>,
}

impl Embedding {
    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }
}

/// Maps per-location reaction parameters to 2-D points.
pub trait Reducer {
    fn embed(&self, params: &ReactionParams) -> Result<Embedding>;
}

/// Top-two principal components of the z-scored feature vectors
/// `[a; b; vec(C)]`.
#[derive(Debug, Clone, Copy, Default)]
pub struct Pca;

impl Reducer for Pca {
    fn embed(&self, params: &ReactionParams) -> Result<Embedding> {
        embed(params)
    }
}

/// PCA embedding. Zero-variance features are dropped; each component is
/// signed so its largest-magnitude loading is positive.
pub fn embed(params: &ReactionParams) -> Result<Embedding> {
    let l = params.locations;
    if l < 2 {
        return Err(Error::InvalidArgument("embedding needs at least two locations".into()));
    }
    let rows: Vec<Vec<f64>> = (0..l).map(|i| params.feature_vector(i)).collect();
    let width = rows[0].len();
    let mut columns = Vec::new();
    for f in 0..width {
        let col: Vec<f64> = rows.iter().map(|r| r[f]).collect();
        let mean = col.iter().sum::<f64>() / l as f64;
        let var = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / l as f64;
        let sd = libm::sqrt(var);
        if !(sd > 1e-12 * (1.0 + libm::fabs(mean))) {
            continue;
        }
        columns.push(col.iter().map(|v| (v - mean) / sd).collect::<Vec<f64>>());
    }
    if columns.is_empty() {
        return Ok(Embedding {
            coords: vec![[0.0, 0.0]; l],
        });
    }
    let z = DMatrix::from_fn(l, columns.len(), |i, f| columns[f][i]);
    let cov = z.transpose() * &z / l as f64;
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|a, b| eig.eigenvalues[*b].total_cmp(&eig.eigenvalues[*a]).then(a.cmp(b)));
    let mut coords = vec![[0.0, 0.0]; l];
    for (c, &idx) in order.iter().take(2).enumerate() {
        let mut v: Vec<f64> = eig.eigenvectors.column(idx).iter().copied().collect();
        let lead = v
            .iter()
            .copied()
            .enumerate()
            .max_by(|a, b| libm::fabs(a.1).total_cmp(&libm::fabs(b.1)).then(b.0.cmp(&a.0)))
            .map(|(_, x)| x)
            .unwrap_or(1.0);
        if lead < 0.0 {
            v.iter_mut().for_each(|x| *x = -*x);
        }
        for (i, coord) in coords.iter_mut().enumerate() {
            coord[c] = (0..v.len()).map(|f| z[(i, f)] * v[f]).sum();
        }
    }
    Ok(Embedding { coords })
}

fn dist2(a: &[f64; 2], b: &[f64; 2]) -> f64 {
    (a[0] - b[0]) * (a[0] - b[0]) + (a[1] - b[1]) * (a[1] - b[1])
}

fn plus_plus<R: Rng>(points: &[[f64; 2]], k: usize, rng: &mut R) -> Vec<[f64; 2]> {
    let mut centers = vec![points[rng.random_range(0..points.len())]];
    let mut best: Vec<f64> = points.iter().map(|p| dist2(p, &centers[0])).collect();
    while centers.len() < k {
        let total: f64 = best.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.random_range(0.0..total);
            let mut chosen = points.len() - 1;
            for (i, w) in best.iter().enumerate() {
                if target < *w {
                    chosen = i;
                    break;
                }
                target -= w;
            }
            chosen
        } else {
            rng.random_range(0..points.len())
        };
        let c = points[pick];
        for (b, p) in best.iter_mut().zip(points) {
            *b = b.min(dist2(p, &c));
        }
        centers.push(c);
    }
    centers
}

/// One Lloyd run. Returns `None` if a cluster empties.
fn lloyd(points: &[[f64; 2]], mut centers: Vec<[f64; 2]>) -> Option<(Vec<usize>, f64)> {
    let k = centers.len();
    let mut labels = vec![usize::MAX; points.len()];
    for _ in 0..300 {
        let mut changed = false;
        for (i, p) in points.iter().enumerate() {
            let mut best = 0;
            let mut best_d = f64::INFINITY;
            for (c, center) in centers.iter().enumerate() {
                let d = dist2(p, center);
                if d < best_d {
                    best_d = d;
                    best = c;
                }
            }
            if labels[i] != best {
                labels[i] = best;
                changed = true;
            }
        }
        let mut sums = vec![[0.0, 0.0]; k];
        let mut counts = vec![0usize; k];
        for (p, &g) in points.iter().zip(&labels) {
            sums[g][0] += p[0];
            sums[g][1] += p[1];
            counts[g] += 1;
        }
        if counts.contains(&0) {
            return None;
        }
        for c in 0..k {
            centers[c] = [sums[c][0] / counts[c] as f64, sums[c][1] / counts[c] as f64];
        }
        if !changed {
            break;
        }
    }
    let sse = points.iter().zip(&labels).map(|(p, &g)| dist2(p, &centers[g])).sum();
    Some((labels, sse))
}

/// Relabels so groups are numbered in order of their lowest member.
pub fn canonicalize(labels: &[usize]) -> Vec<usize> {
    let mut map: Vec<Option<usize>> = Vec::new();
    let mut next = 0;
    labels
        .iter()
        .map(|&g| {
            if map.len() <= g {
                map.resize(g + 1, None);
            }
            *map[g].get_or_insert_with(|| {
                next += 1;
                next - 1
            })
        })
        .collect()
}

/// K-means with k-means++ seeding; the restart with the smallest
/// within-cluster sum of squares wins.
pub fn cluster(embedding: &Embedding, groups: usize, seed: u64, restarts: usize) -> Result<GroupAssignment> {
    let l = embedding.len();
    if groups == 0 || groups > l {
        return Err(Error::InvalidArgument(format!("cannot form {groups} groups from {l} locations")));
    }
    if groups == 1 {
        return Ok(GroupAssignment::single(l));
    }
    if groups == l {
        return Ok(GroupAssignment::singletons(l));
    }
    let points = &embedding.coords;
    let mut distinct: Vec<[f64; 2]> = Vec::new();
    for p in points {
        if !distinct.iter().any(|q| q == p) {
            distinct.push(*p);
        }
    }
    if distinct.len() < groups {
        return Err(Error::InvalidArgument(format!(
            "only {} distinct embedding points for {groups} groups",
            distinct.len()
        )));
    }
    let mut best: Option<(Vec<usize>, f64)> = None;
    for r in 0..restarts.max(1) {
        // an empty cluster re-seeds the same restart
        for attempt in 0..20u64 {
            let mut rng = stream(seed, ((r as u64) << 8) | attempt);
            let centers = plus_plus(points, groups, &mut rng);
            if let Some((labels, sse)) = lloyd(points, centers) {
                if best.as_ref().map_or(true, |(_, b)| sse < *b) {
                    best = Some((labels, sse));
                }
                break;
            }
        }
    }
    let (labels, _) = best.ok_or_else(|| Error::InvalidArgument("K-means produced empty clusters in every restart".into()))?;
    GroupAssignment::new(canonicalize(&labels), groups)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn params_from(features: &[(f64, f64)]) -> ReactionParams {
        let l = features.len();
        let growth: Vec<f64> = features.iter().map(|f| f.0).collect();
        let capacity: Vec<f64> = features.iter().map(|f| f.1).collect();
        ReactionParams::from_values(l, 1, &growth, &capacity, &vec![1.0; l]).unwrap()
    }

    fn points(p: &[[f64; 2]]) -> Embedding {
        Embedding { coords: p.to_vec() }
    }

    /// Brute-force best 2-partition by within-cluster SSE.
    fn best_two_partition(p: &[[f64; 2]]) -> Vec<usize> {
        let n = p.len();
        let mut best = (f64::INFINITY, vec![]);
        for mask in 1..(1u32 << n) - 1 {
            let labels: Vec<usize> = (0..n).map(|i| ((mask >> i) & 1) as usize).collect();
            let mut sse = 0.0;
            for g in 0..2 {
                let members: Vec<&[f64; 2]> = p.iter().zip(&labels).filter(|(_, l)| **l == g).map(|(q, _)| q).collect();
                let cx = members.iter().map(|q| q[0]).sum::<f64>() / members.len() as f64;
                let cy = members.iter().map(|q| q[1]).sum::<f64>() / members.len() as f64;
                sse += members.iter().map(|q| dist2(q, &[cx, cy])).sum::<f64>();
            }
            if sse < best.0 {
                best = (sse, canonicalize(&labels));
            }
        }
        best.1
    }

    #[test]
    fn identical_parameters_embed_to_one_point() {
        let e = embed(&params_from(&[(0.5, 1.0); 4])).unwrap();
        assert!(e.coords.iter().all(|c| *c == e.coords[0]));
    }

    #[test]
    fn two_locations_differ_along_one_axis() {
        let e = embed(&params_from(&[(0.5, 1.0), (0.9, 0.3)])).unwrap();
        assert!((e.coords[0][0] - e.coords[1][0]).abs() > 1.0);
        assert!(e.coords[0][1].abs() < 1e-9 && e.coords[1][1].abs() < 1e-9);
    }

    #[test]
    fn duplicated_inputs_map_to_duplicated_outputs() {
        let e = embed(&params_from(&[(0.5, 1.0), (0.9, 0.3), (0.5, 1.0), (0.9, 0.3)])).unwrap();
        assert_eq!(e.coords[0], e.coords[2]);
        assert_eq!(e.coords[1], e.coords[3]);
        assert_ne!(e.coords[0], e.coords[1]);
    }

    #[test]
    fn largest_loading_is_positive() {
        // growth dominates the spread, so the first axis should increase with it
        let e = embed(&params_from(&[(0.1, 1.0), (0.5, 1.01), (0.9, 0.99)])).unwrap();
        assert!(e.coords[2][0] > e.coords[0][0]);
    }

    #[test]
    fn single_location_cannot_be_embedded() {
        assert!(embed(&params_from(&[(0.5, 1.0)])).is_err());
    }

    #[test]
    fn trivial_group_counts() {
        let e = points(&[[0.0, 0.0], [1.0, 0.0], [5.0, 5.0]]);
        assert_eq!(cluster(&e, 1, 0, 50).unwrap().as_slice(), &[0, 0, 0]);
        assert_eq!(cluster(&e, 3, 0, 50).unwrap().as_slice(), &[0, 1, 2]);
        assert!(cluster(&e, 4, 0, 50).is_err());
    }

    #[test]
    fn separated_pairs_match_brute_force() {
        let p = [[0.0, 0.0], [10.0, 10.0], [0.2, -0.1], [10.1, 9.8]];
        let got = cluster(&points(&p), 2, 7, 50).unwrap();
        assert_eq!(got.as_slice(), &best_two_partition(&p)[..]);
        assert_eq!(got.as_slice(), &[0, 1, 0, 1]);
    }

    #[test]
    fn too_few_distinct_points_is_an_error() {
        let e = points(&[[1.0, 1.0], [1.0, 1.0], [1.0, 1.0]]);
        assert!(cluster(&e, 2, 0, 50).is_err());
    }

    proptest! {
        #[test]
        fn every_label_is_used(raw in proptest::collection::vec((-5.0f64..5.0, -5.0f64..5.0), 3..12), d in 2usize..4) {
            let p: Vec<[f64; 2]> = raw.iter().map(|(x, y)| [*x, *y]).collect();
            let e = points(&p);
            if let Ok(g) = cluster(&e, d, 3, 10) {
                for label in 0..d {
                    prop_assert!(g.as_slice().contains(&label));
                }
            }
        }

        #[test]
        fn clustering_is_deterministic(raw in proptest::collection::vec((-5.0f64..5.0, -5.0f64..5.0), 4..10)) {
            let p: Vec<[f64; 2]> = raw.iter().map(|(x, y)| [*x, *y]).collect();
            let a = cluster(&points(&p), 2, 11, 20).unwrap();
            let b = cluster(&points(&p), 2, 11, 20).unwrap();
            prop_assert_eq!(a, b);
        }

        #[test]
        fn permutation_preserves_partition(shift in 0usize..6, spread in 0.01f64..0.5) {
            let base = [[0.0, 0.0], [spread, 0.1], [8.0, 8.0], [8.0 + spread, 7.9], [-0.1, spread], [8.2, 8.0 - spread]];
            let n = base.len();
            let perm: Vec<usize> = (0..n).map(|i| (i + shift) % n).collect();
            let permuted: Vec<[f64; 2]> = perm.iter().map(|&i| base[i]).collect();
            let a = cluster(&points(&base), 2, 5, 50).unwrap();
            let b = cluster(&points(&permuted), 2, 5, 50).unwrap();
            let mut back = vec![0; n];
            for (pos, &i) in perm.iter().enumerate() {
                back[i] = b.as_slice()[pos];
            }
            prop_assert_eq!(a.as_slice(), &canonicalize(&back)[..]);
        }
    }
}
