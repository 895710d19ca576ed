//! Region attribution: intensity-based over-segmentation, regions ranked by
//! mean integrated-gradients attribution.

use std::cmp::Ordering;
use std::collections::{BTreeSet, BinaryHeap};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug)]
struct Candidate {
    cost: f64,
    a: usize,
    b: usize,
    stamp_a: u32,
    stamp_b: u32,
}

impl PartialEq for Candidate {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Candidate {}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Candidate {
    /// Reversed so that `BinaryHeap` pops the cheapest merge, ties broken by
    /// region ids.
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .cost
            .total_cmp(&self.cost)
            .then_with(|| other.a.cmp(&self.a))
            .then_with(|| other.b.cmp(&self.b))
    }
}

/// Greedy agglomerative segmentation of a grayscale image into 4-connected
/// regions. Adjacent regions are merged in order of increasing Ward cost
/// `n_a n_b / (n_a + n_b) · (μ_a − μ_b)²` until at most `target` remain;
/// merges of identical-mean regions always happen, so a uniform image
/// collapses to a single region.
///
/// Returns a label per pixel, numbered `0..regions` in raster order of each
/// region's first pixel.
pub fn segment(image: &[f32], h: usize, w: usize, target: usize) -> Result<Vec<usize>> {
    if target < 2 {
        return Err(Error::invalid(format!("XRAI needs at least 2 segments, got {target}")));
    }
    if image.len() != h * w {
        return Err(Error::invalid("segment: image size does not match dimensions"));
    }
    let n = h * w;
    let mut parent: Vec<usize> = (0..n).collect();
    let mut count: Vec<f64> = vec![1.0; n];
    let mut sum: Vec<f64> = image.iter().map(|&v| v as f64).collect();
    let mut stamp: Vec<u32> = vec![0; n];
    let mut alive = vec![true; n];
    let mut neighbors: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); n];
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            if x + 1 < w {
                neighbors[i].insert(i + 1);
                neighbors[i + 1].insert(i);
            }
            if y + 1 < h {
                neighbors[i].insert(i + w);
                neighbors[i + w].insert(i);
            }
        }
    }
    let cost = |count: &[f64], sum: &[f64], a: usize, b: usize| {
        let (na, nb) = (count[a], count[b]);
        let d = sum[a] / na - sum[b] / nb;
        na * nb / (na + nb) * d * d
    };
    let mut heap = BinaryHeap::new();
    for a in 0..n {
        for &b in neighbors[a].range(a + 1..) {
            heap.push(Candidate {
                cost: cost(&count, &sum, a, b),
                a,
                b,
                stamp_a: 0,
                stamp_b: 0,
            });
        }
    }
    let mut regions = n;
    while let Some(c) = heap.pop() {
        if !alive[c.a] || !alive[c.b] || stamp[c.a] != c.stamp_a || stamp[c.b] != c.stamp_b {
            continue;
        }
        if regions <= target && c.cost > 0.0 {
            break;
        }
        // Merge b into a.
        let (a, b) = (c.a, c.b);
        alive[b] = false;
        parent[b] = a;
        count[a] += count[b];
        sum[a] += sum[b];
        stamp[a] += 1;
        regions -= 1;
        let moved = std::mem::take(&mut neighbors[b]);
        for &m in &moved {
            neighbors[m].remove(&b);
            if m != a {
                neighbors[m].insert(a);
                neighbors[a].insert(m);
            }
        }
        neighbors[a].remove(&b);
        for &m in &neighbors[a] {
            let (lo, hi) = (a.min(m), a.max(m));
            heap.push(Candidate {
                cost: cost(&count, &sum, lo, hi),
                a: lo,
                b: hi,
                stamp_a: stamp[lo],
                stamp_b: stamp[hi],
            });
        }
    }

    fn root(parent: &mut [usize], mut i: usize) -> usize {
        while parent[i] != i {
            parent[i] = parent[parent[i]];
            i = parent[i];
        }
        i
    }
    let mut relabel = vec![usize::MAX; n];
    let mut next = 0;
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let r = root(&mut parent, i);
        if relabel[r] == usize::MAX {
            relabel[r] = next;
            next += 1;
        }
        labels.push(relabel[r]);
    }
    Ok(labels)
}

/// Orders regions by mean attribution, highest first; ties keep label order.
pub fn rank_regions(attribution: &[f32], labels: &[usize]) -> Vec<usize> {
    let regions = labels.iter().max().map_or(0, |&m| m + 1);
    let mut sums = vec![0.0f64; regions];
    let mut counts = vec![0usize; regions];
    for (&a, &l) in attribution.iter().zip(labels) {
        sums[l] += a as f64;
        counts[l] += 1;
    }
    let means: Vec<f64> = sums
        .iter()
        .zip(&counts)
        .map(|(&s, &c)| if c == 0 { f64::NEG_INFINITY } else { s / c as f64 })
        .collect();
    let mut order: Vec<usize> = (0..regions).collect();
    order.sort_by(|&x, &y| means[y].total_cmp(&means[x]).then(x.cmp(&y)));
    order
}

/// Piecewise-constant map: the region added `k`-th (0-based) gets `1 − k/R`.
pub fn region_map(attribution: &[f32], labels: &[usize]) -> Vec<f32> {
    let order = rank_regions(attribution, labels);
    let regions = order.len();
    let mut value = vec![0.0f32; regions];
    for (k, &r) in order.iter().enumerate() {
        value[r] = (1.0 - k as f64 / regions as f64) as f32;
    }
    labels.iter().map(|&l| value[l]).collect()
}
