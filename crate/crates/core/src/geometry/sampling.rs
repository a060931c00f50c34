//! Sparsification, farthest-point sampling and KNN grouping. Ties always
//! resolve to the lower point index.

use rand::seq::index::sample;
use rand::Rng;

use super::cloud::{sq_dist, PointCloud};
use crate::error::{invalid, Result};
use crate::numerics::{derive_seed, RngStream};

/// Group centres and their `s` nearest neighbours (row-major, `g x s`).
#[derive(Clone, Debug, PartialEq)]
pub struct GroupIndex {
    pub centers: Vec<usize>,
    pub neighbors: Vec<usize>,
    pub group_size: usize,
}

impl GroupIndex {
    pub fn num_groups(&self) -> usize {
        self.centers.len()
    }

    pub fn row(&self, g: usize) -> &[usize] {
        &self.neighbors[g * self.group_size..(g + 1) * self.group_size]
    }
}

fn check_target(pc: &PointCloud, n_target: usize) -> Result<()> {
    if n_target == 0 || n_target > pc.len() {
        return Err(invalid(format!(
            "cannot keep {n_target} of {} points",
            pc.len()
        )));
    }
    Ok(())
}

fn child_seed(pc: &PointCloud, seed: u64, label: &str) -> u64 {
    derive_seed(pc.seed ^ seed.rotate_left(29), label)
}

/// Keeps `n_target` distinct points drawn uniformly without replacement.
/// Surviving points keep their original relative order.
pub fn downsample_uniform(pc: &PointCloud, n_target: usize, seed: u64) -> Result<PointCloud> {
    check_target(pc, n_target)?;
    let mut rng = RngStream::new(seed, "downsample/uniform");
    let mut picks = sample(&mut rng, pc.len(), n_target).into_vec();
    picks.sort_unstable();
    Ok(pc.select(&picks, child_seed(pc, seed, "uniform")))
}

/// Indices of the `k` points nearest to `points[center]`, nearest first. The
/// centre itself always comes first.
pub fn nearest_indices(points: &[[f32; 3]], center: usize, k: usize) -> Vec<usize> {
    let c = points[center];
    let mut keyed: Vec<(f32, bool, usize)> = points
        .iter()
        .enumerate()
        .map(|(i, p)| (sq_dist(p, &c), i != center, i))
        .collect();
    let cmp = |a: &(f32, bool, usize), b: &(f32, bool, usize)| {
        a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2))
    };
    let k = k.min(keyed.len());
    if k < keyed.len() {
        keyed.select_nth_unstable_by(k, cmp);
        keyed.truncate(k);
    }
    keyed.sort_unstable_by(cmp);
    keyed.into_iter().map(|(_, _, i)| i).collect()
}

/// Picks a uniformly random centre and returns it with the indices of the
/// `n_target` points nearest to it.
pub fn knn_patch_indices(
    pc: &PointCloud,
    n_target: usize,
    seed: u64,
) -> Result<(usize, Vec<usize>)> {
    check_target(pc, n_target)?;
    let mut rng = RngStream::new(seed, "downsample/knn");
    let center = rng.gen_range(0..pc.len());
    Ok((center, nearest_indices(&pc.points, center, n_target)))
}

/// Keeps the `n_target` points nearest to a random centre (a local patch).
pub fn downsample_knn_patch(pc: &PointCloud, n_target: usize, seed: u64) -> Result<PointCloud> {
    let (_, idx) = knn_patch_indices(pc, n_target, seed)?;
    Ok(pc.select(&idx, child_seed(pc, seed, "knn")))
}

/// Greedy farthest-point sampling of `g` centre indices. The first centre is
/// drawn from `seed`; each next one maximizes the distance to the chosen set.
pub fn fps(pc: &PointCloud, g: usize, seed: u64) -> Result<Vec<usize>> {
    let n = pc.len();
    if g == 0 || g > n {
        return Err(invalid(format!("fps cannot choose {g} of {n} points")));
    }
    let mut rng = RngStream::new(seed, "fps");
    let first = rng.gen_range(0..n);
    let mut chosen = vec![false; n];
    let mut min_d = vec![f32::INFINITY; n];
    let mut out = Vec::with_capacity(g);
    let mut current = first;
    loop {
        out.push(current);
        chosen[current] = true;
        if out.len() == g {
            break;
        }
        let c = pc.points[current];
        let mut best = usize::MAX;
        let mut best_d = f32::NEG_INFINITY;
        for i in 0..n {
            let d = sq_dist(&pc.points[i], &c);
            if d < min_d[i] {
                min_d[i] = d;
            }
            if !chosen[i] && min_d[i] > best_d {
                best_d = min_d[i];
                best = i;
            }
        }
        current = best;
    }
    Ok(out)
}

/// For every centre, its `s` nearest points. When the cloud has fewer than
/// `s` points the distance-sorted list repeats cyclically.
pub fn knn_group(pc: &PointCloud, centers: &[usize], s: usize) -> Result<GroupIndex> {
    if centers.is_empty() {
        return Err(invalid("knn_group needs at least one centre"));
    }
    if s == 0 {
        return Err(invalid("group size must be positive"));
    }
    if let Some(&bad) = centers.iter().find(|&&c| c >= pc.len()) {
        return Err(invalid(format!(
            "centre {bad} out of range for {} points",
            pc.len()
        )));
    }
    let mut neighbors = Vec::with_capacity(centers.len() * s);
    for &c in centers {
        let sorted = nearest_indices(&pc.points, c, s);
        neighbors.extend((0..s).map(|j| sorted[j % sorted.len()]));
    }
    Ok(GroupIndex {
        centers: centers.to_vec(),
        neighbors,
        group_size: s,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{sample_shape, ShapeSpec};
    use proptest::prelude::{prop_assert_eq, proptest};
    use std::collections::BTreeSet;

    fn by_distance(a: (f32, usize), b: (f32, usize)) -> std::cmp::Ordering {
        a.0.total_cmp(&b.0).then(a.1.cmp(&b.1))
    }

    fn cloud(points: Vec<[f32; 3]>) -> PointCloud {
        PointCloud::new(points, 3, 17)
    }

    fn random_cloud(n: usize, seed: u64) -> PointCloud {
        let mut rng = RngStream::new(seed, "test");
        cloud((0..n).map(|_| [rng.gen(), rng.gen(), rng.gen()]).collect())
    }

    /// Recomputes every min-distance from scratch at each greedy step.
    fn fps_oracle(pc: &PointCloud, first: usize, g: usize) -> Vec<usize> {
        let mut chosen = vec![first];
        while chosen.len() < g {
            let mut best = None;
            for i in 0..pc.len() {
                if chosen.contains(&i) {
                    continue;
                }
                let d = chosen
                    .iter()
                    .map(|&c| sq_dist(&pc.points[i], &pc.points[c]))
                    .fold(f32::INFINITY, f32::min);
                match best {
                    Some((bd, _)) if d <= bd => {}
                    _ => best = Some((d, i)),
                }
            }
            chosen.push(best.unwrap().1);
        }
        chosen
    }

    fn knn_oracle(pc: &PointCloud, c: usize, s: usize) -> Vec<usize> {
        let mut all: Vec<(f32, usize)> = (0..pc.len())
            .map(|i| (sq_dist(&pc.points[i], &pc.points[c]), i))
            .collect();
        all.sort_by(|&a, &b| by_distance(a, b));
        all.truncate(s);
        all.into_iter().map(|(_, i)| i).collect()
    }

    #[test]
    fn uniform_full_draw_is_a_permutation() {
        let pc = random_cloud(40, 1);
        let out = downsample_uniform(&pc, 40, 5).unwrap();
        assert_eq!(out.points, pc.points);
        assert_eq!(out.category_id, pc.category_id);
    }

    #[test]
    fn uniform_is_a_subset_without_duplicates() {
        let spec = ShapeSpec::new("cube", 0.1, 0.01).unwrap();
        let pc = sample_shape(&spec, 2048, 3).unwrap();
        let out = downsample_uniform(&pc, 128, 4).unwrap();
        assert_eq!(out.len(), 128);
        let src: BTreeSet<[u32; 3]> = pc.points.iter().map(|p| p.map(f32::to_bits)).collect();
        let dst: BTreeSet<[u32; 3]> = out.points.iter().map(|p| p.map(f32::to_bits)).collect();
        assert_eq!(dst.len(), 128);
        assert!(dst.is_subset(&src));
    }

    #[test]
    fn uniform_single_draw_frequencies() {
        // Binomial(10000, 1/4): sd = 43.3, so 3 sd is about 130 < 150.
        let pc = cloud(vec![
            [0.0; 3],
            [1.0, 0.0, 0.0],
            [2.0, 0.0, 0.0],
            [3.0, 0.0, 0.0],
        ]);
        let mut counts = [0usize; 4];
        for seed in 0..10_000u64 {
            let out = downsample_uniform(&pc, 1, seed).unwrap();
            counts[out.points[0][0] as usize] += 1;
        }
        for c in counts {
            assert!((2350..=2650).contains(&c), "{counts:?}");
        }
    }

    #[test]
    fn oversized_targets_are_rejected() {
        let pc = random_cloud(10, 2);
        assert!(downsample_uniform(&pc, 11, 0).is_err());
        assert!(downsample_knn_patch(&pc, 11, 0).is_err());
        assert!(downsample_uniform(&pc, 0, 0).is_err());
        assert!(fps(&pc, 11, 0).is_err());
    }

    #[test]
    fn knn_patch_full_and_separated() {
        let pc = random_cloud(60, 3);
        let whole = downsample_knn_patch(&pc, 60, 1).unwrap();
        let mut a: Vec<_> = whole.points.iter().map(|p| p.map(f32::to_bits)).collect();
        let mut b: Vec<_> = pc.points.iter().map(|p| p.map(f32::to_bits)).collect();
        a.sort();
        b.sort();
        assert_eq!(a, b);

        for seed in 0..20 {
            let (center, idx) = knn_patch_indices(&pc, 17, seed).unwrap();
            let c = pc.points[center];
            let inside = idx
                .iter()
                .map(|&i| sq_dist(&pc.points[i], &c))
                .fold(0.0, f32::max);
            let outside = (0..60)
                .filter(|i| !idx.contains(i))
                .map(|i| sq_dist(&pc.points[i], &c))
                .fold(f32::INFINITY, f32::min);
            assert!(inside <= outside);
            assert_eq!(idx[0], center);
        }
    }

    #[test]
    fn collinear_patch_from_leftmost() {
        let pc = cloud((0..8).map(|i| [i as f32 * 0.5, 0.0, 0.0]).collect());
        assert_eq!(nearest_indices(&pc.points, 0, 3), vec![0, 1, 2]);
    }

    #[test]
    fn fps_single_centre_is_the_random_first() {
        let pc = random_cloud(30, 4);
        for seed in 0..5 {
            let mut rng = RngStream::new(seed, "fps");
            let expected = rng.gen_range(0..30);
            assert_eq!(fps(&pc, 1, seed).unwrap(), vec![expected]);
        }
    }

    #[test]
    fn fps_square_picks_opposite_corner() {
        let pc = cloud(vec![
            [0.0, 0.0, 0.0],
            [1.0, 0.0, 0.0],
            [1.0, 1.0, 0.0],
            [0.0, 1.0, 0.0],
        ]);
        // Find a seed whose first centre is corner 0.
        let seed = (0..1000)
            .find(|&s| fps(&pc, 1, s).unwrap()[0] == 0)
            .unwrap();
        assert_eq!(fps(&pc, 2, seed).unwrap(), vec![0, 2]);
    }

    #[test]
    fn knn_single_neighbour_is_the_centre() {
        let pc = random_cloud(20, 5);
        let groups = knn_group(&pc, &[3, 7, 11], 1).unwrap();
        assert_eq!(groups.neighbors, vec![3, 7, 11]);
    }

    #[test]
    fn knn_repeats_when_short() {
        let pc = random_cloud(4, 6);
        let groups = knn_group(&pc, &[0, 2], 8).unwrap();
        for g in 0..2 {
            let row = groups.row(g);
            assert_eq!(row[0], groups.centers[g]);
            for p in 0..4 {
                assert_eq!(row.iter().filter(|&&i| i == p).count(), 2);
            }
        }
    }

    #[test]
    fn knn_rejects_empty_centres() {
        assert!(knn_group(&random_cloud(5, 0), &[], 2).is_err());
    }

    #[test]
    fn duplicate_points_keep_centre_in_its_row() {
        let pc = cloud(vec![[0.0; 3], [0.0; 3], [0.0; 3], [1.0; 3]]);
        let groups = knn_group(&pc, &[2], 2).unwrap();
        assert_eq!(groups.row(0), &[2, 0]);
    }

    proptest! {
        #[test]
        fn fps_matches_greedy_oracle(n in 1usize..=16, g_frac in 0.0f64..1.0, seed in 0u64..1000) {
            let pc = random_cloud(n, seed);
            let g = 1 + ((n - 1) as f64 * g_frac) as usize;
            let got = fps(&pc, g, seed).unwrap();
            prop_assert_eq!(got.clone(), fps_oracle(&pc, got[0], g));
        }

        #[test]
        fn knn_matches_sort_oracle(n in 2usize..=16, s_frac in 0.0f64..1.0, seed in 0u64..1000) {
            let pc = random_cloud(n, seed);
            let s = 1 + ((n - 1) as f64 * s_frac) as usize;
            let centers: Vec<usize> = (0..n).step_by(3).collect();
            let groups = knn_group(&pc, &centers, s).unwrap();
            for (gi, &c) in centers.iter().enumerate() {
                prop_assert_eq!(groups.row(gi).to_vec(), knn_oracle(&pc, c, s));
            }
        }

        #[test]
        fn samplers_are_pure(seed in 0u64..10_000, k in 1usize..=32) {
            let pc = random_cloud(32, 9);
            prop_assert_eq!(downsample_uniform(&pc, k, seed).unwrap(), downsample_uniform(&pc, k, seed).unwrap());
            prop_assert_eq!(downsample_knn_patch(&pc, k, seed).unwrap(), downsample_knn_patch(&pc, k, seed).unwrap());
        }
    }
}
