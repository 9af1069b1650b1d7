//! Pseudo-geodesic distances along depth-sorted partitions.
//!
//! Between two objects `s` and `t` with `z_s < z_t`, the path visits every
//! dataset depth in `[z_s, z_t]` in ascending order, one object per distinct
//! depth, and sums the feature distances of consecutive objects. Every
//! depth gap along the path must stay below ε.
//!
//! If all ε-neighbors satisfy the quasi-isometric corridor with slack `B`,
//! summing the corridor over at most `L` segments bounds the path length by
//! `|z_s − z_t|/K − L·B ≤ Ĝ ≤ K·|z_s − z_t| + L·B`. [`verify_theorem`]
//! checks this exhaustively.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::par;
use crate::quasi_iso::{check_local_qi, merge_global, rounding_slack, DescriptorSet, GlobalQiReport, QiParams, WorstPair};

/// A depth-sorted path between two objects.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GeodesicPath {
    /// Endpoint with the smaller depth.
    pub source: usize,
    /// Endpoint with the larger depth.
    pub target: usize,
    /// Object indices along the path, depths strictly increasing.
    pub partition: Vec<usize>,
    pub segment_lengths: Vec<f64>,
    /// `Σ segment_lengths`, accumulated from `source` to `target`.
    pub total: f64,
    /// Largest depth gap between consecutive partition points.
    pub mesh: f64,
}

fn check_index(ds: &DescriptorSet, i: usize) -> Result<()> {
    if i >= ds.len() {
        return Err(Error::IndexOutOfRange { index: i, len: ds.len() });
    }
    Ok(())
}

/// Builds the finest partition between `s` and `t`. Endpoints are swapped
/// so the path always runs from the smaller to the larger depth.
pub fn build_path(ds: &DescriptorSet, s: usize, t: usize, params: &QiParams) -> Result<GeodesicPath> {
    check_index(ds, s)?;
    check_index(ds, t)?;
    let z = ds.depths();
    if z[s] == z[t] {
        return Err(Error::DegeneratePath(s, t));
    }
    let (s, t) = if z[s] < z[t] { (s, t) } else { (t, s) };

    let mut inner: Vec<usize> = (0..ds.len()).filter(|&i| z[i] > z[s] && z[i] < z[t]).collect();
    inner.sort_by(|&a, &b| z[a].total_cmp(&z[b]).then(a.cmp(&b)));
    // lowest index per distinct depth
    inner.dedup_by(|later, earlier| z[*later] == z[*earlier]);

    let mut partition = Vec::with_capacity(inner.len() + 2);
    partition.push(s);
    partition.extend(inner);
    partition.push(t);

    let mut mesh = 0.0f64;
    let mut widest = (s, t);
    for w in partition.windows(2) {
        let gap = z[w[1]] - z[w[0]];
        if gap > mesh {
            mesh = gap;
            widest = (w[0], w[1]);
        }
    }
    if !(mesh < params.epsilon) {
        return Err(Error::PartitionTooCoarse {
            widest_gap: mesh,
            from: widest.0,
            to: widest.1,
            epsilon: params.epsilon,
        });
    }

    let segment_lengths: Vec<f64> = partition
        .windows(2)
        .map(|w| params.p_feat.dist(ds.feature(w[0]), ds.feature(w[1])))
        .collect();
    let total = segment_lengths.iter().sum();
    Ok(GeodesicPath {
        source: s,
        target: t,
        partition,
        segment_lengths,
        total,
        mesh,
    })
}

/// Length `Ĝ(ρ_s, ρ_t)` of the path from [`build_path`].
pub fn pseudo_geodesic(ds: &DescriptorSet, s: usize, t: usize, params: &QiParams) -> Result<f64> {
    Ok(build_path(ds, s, t, params)?.total)
}

/// All-pairs pseudo-geodesic lengths. Entry `(i, j)` is `None` when the pair
/// has equal depths or no admissible path. Sums are accumulated in the same
/// order as [`build_path`], so the values are bit-identical to it.
pub fn pseudo_geodesic_matrix(ds: &DescriptorSet, params: &QiParams) -> Vec<Vec<Option<f64>>> {
    let n = ds.len();
    let z = ds.depths();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| z[a].total_cmp(&z[b]).then(a.cmp(&b)));
    // start offset of each distinct depth in `order`
    let mut groups: Vec<usize> = Vec::new();
    for (k, &i) in order.iter().enumerate() {
        if k == 0 || z[i] != z[order[k - 1]] {
            groups.push(k);
        }
    }
    let rank_of = {
        let mut r = vec![0usize; n];
        for (g, &start) in groups.iter().enumerate() {
            let end = groups.get(g + 1).copied().unwrap_or(n);
            for &i in &order[start..end] {
                r[i] = g;
            }
        }
        r
    };

    let upward: Vec<Vec<(usize, f64)>> = par::map_range(n, |s| {
        let mut found = Vec::new();
        let mut cur = s;
        let mut partial = 0.0;
        for g in rank_of[s] + 1..groups.len() {
            let start = groups[g];
            let end = groups.get(g + 1).copied().unwrap_or(n);
            if !(z[order[start]] - z[cur] < params.epsilon) {
                break;
            }
            for &t in &order[start..end] {
                found.push((t, partial + params.p_feat.dist(ds.feature(cur), ds.feature(t))));
            }
            let rep = order[start];
            partial += params.p_feat.dist(ds.feature(cur), ds.feature(rep));
            cur = rep;
        }
        found
    });

    let mut out = vec![vec![None; n]; n];
    for (s, row) in upward.into_iter().enumerate() {
        for (t, g) in row {
            out[s][t] = Some(g);
            out[t][s] = Some(g);
        }
    }
    out
}

/// Outcome of [`verify_theorem`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TheoremReport {
    /// Local quasi-isometry holds with `(K, B, ε)`.
    pub premise_ok: bool,
    /// `B′ = L·B`.
    pub b_prime: f64,
    /// Global bounds hold under the pseudo-geodesic with slack `B′`.
    /// `false` when the premise fails.
    pub global_ok: bool,
    pub checked_pairs: usize,
    /// Pairs with equal depths or no admissible path.
    pub skipped_pairs: usize,
    pub violating_pairs: usize,
    /// Largest corridor margin among checked pairs (≤ 0 when all hold).
    pub worst: Option<WorstPair>,
}

/// Checks that local quasi-isometry implies global quasi-isometry under the
/// pseudo-geodesic with `B′ = L·B`, over every pair with a valid path.
pub fn verify_theorem(ds: &DescriptorSet, params: &QiParams) -> TheoremReport {
    let b_prime = ds.len() as f64 * params.b;
    let local = check_local_qi(ds, params);
    if !local.holds {
        return TheoremReport {
            premise_ok: false,
            b_prime,
            global_ok: false,
            checked_pairs: 0,
            skipped_pairs: 0,
            violating_pairs: 0,
            worst: None,
        };
    }
    let g = pseudo_geodesic_matrix(ds, params);
    let k = params.k;
    let n = ds.len();
    let rows: Vec<GlobalQiReport> = par::map_range(n, |i| {
        let mut row = GlobalQiReport {
            holds: true,
            checked_pairs: 0,
            skipped_pairs: 0,
            violating_pairs: 0,
            worst: None,
        };
        for j in i + 1..n {
            let Some(d_feat) = g[i][j] else {
                row.skipped_pairs += 1;
                continue;
            };
            let d_depth = (ds.depths()[i] - ds.depths()[j]).abs();
            row.checked_pairs += 1;
            let margin = (d_feat - (k * d_depth + b_prime)).max((d_depth / k - b_prime) - d_feat);
            if margin > rounding_slack(d_depth, d_feat) {
                row.violating_pairs += 1;
            }
            if row.worst.is_none_or(|w| margin > w.margin) {
                row.worst = Some(WorstPair { i, j, d_depth, d_feat, margin });
            }
        }
        row
    });
    let merged = merge_global(rows);
    TheoremReport {
        premise_ok: true,
        b_prime,
        global_ok: merged.holds,
        checked_pairs: merged.checked_pairs,
        skipped_pairs: merged.skipped_pairs,
        violating_pairs: merged.violating_pairs,
        worst: merged.worst,
    }
}
