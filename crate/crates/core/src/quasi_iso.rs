//! Quasi-isometry audits between the depth space and the descriptor space.
//!
//! A pair of objects `(i, j)` is *eligible* when their depth gap
//! `d₁ = |z_i − z_j|` is at most ε. An eligible pair violates the upper bound
//! (set P⁺) when `d₂ > K·d₁ + B` and the lower bound (set P⁻) when
//! `d₂ < d₁/K − B`, where `d₂` is the feature distance.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::metric::{check_same_dim, Norm};
use crate::par;

/// Paired depths and descriptors. Index `l` maps depth `z_l` to feature `ρ_l`.
#[derive(Debug, Clone, PartialEq)]
pub struct DescriptorSet {
    ids: Vec<String>,
    depths: Vec<f64>,
    features: Vec<Vec<f64>>,
}

impl DescriptorSet {
    /// Validates lengths, dimensions and finiteness. Depths must be `≥ 0`.
    pub fn new(ids: Vec<String>, depths: Vec<f64>, features: Vec<Vec<f64>>) -> Result<Self> {
        if depths.len() != features.len() {
            return Err(Error::DimensionMismatch {
                expected: depths.len(),
                got: features.len(),
            });
        }
        if ids.len() != depths.len() {
            return Err(Error::DimensionMismatch {
                expected: depths.len(),
                got: ids.len(),
            });
        }
        check_same_dim(&features)?;
        if depths.iter().any(|z| !z.is_finite()) {
            return Err(Error::NonFinite("depth"));
        }
        if let Some(z) = depths.iter().find(|z| **z < 0.0) {
            return Err(Error::InvalidInput(format!("depth must be non-negative, got {z}")));
        }
        if features.iter().flatten().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("feature"));
        }
        Ok(Self {
            ids,
            depths,
            features,
        })
    }

    /// Like [`DescriptorSet::new`] with ids `"0"`, `"1"`, ….
    pub fn from_parts(depths: Vec<f64>, features: Vec<Vec<f64>>) -> Result<Self> {
        let ids = (0..depths.len()).map(|i| i.to_string()).collect();
        Self::new(ids, depths, features)
    }

    /// Scalar features, one per object.
    pub fn from_scalars(depths: &[f64], features: &[f64]) -> Result<Self> {
        Self::from_parts(depths.to_vec(), features.iter().map(|&x| vec![x]).collect())
    }

    pub fn len(&self) -> usize {
        self.depths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.depths.is_empty()
    }

    /// Feature dimension; 0 for an empty set.
    pub fn dim(&self) -> usize {
        self.features.first().map_or(0, Vec::len)
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn depths(&self) -> &[f64] {
        &self.depths
    }

    pub fn features(&self) -> &[Vec<f64>] {
        &self.features
    }

    pub fn feature(&self, i: usize) -> &[f64] {
        &self.features[i]
    }

    /// Replaces features in place, keeping ids and depths.
    pub fn with_features(&self, features: Vec<Vec<f64>>) -> Result<Self> {
        Self::new(self.ids.clone(), self.depths.clone(), features)
    }

    /// Reorders objects: entry `k` of the result is object `order[k]`.
    pub fn permuted(&self, order: &[usize]) -> Result<Self> {
        if let Some(&bad) = order.iter().find(|&&i| i >= self.len()) {
            return Err(Error::IndexOutOfRange {
                index: bad,
                len: self.len(),
            });
        }
        Self::new(
            order.iter().map(|&i| self.ids[i].clone()).collect(),
            order.iter().map(|&i| self.depths[i]).collect(),
            order.iter().map(|&i| self.features[i].clone()).collect(),
        )
    }

    /// Subset of objects by index, in the given order.
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        self.permuted(indices)
    }

    /// Appends one object.
    pub fn push(&mut self, id: String, depth: f64, feature: Vec<f64>) -> Result<()> {
        if !self.is_empty() && feature.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: feature.len(),
            });
        }
        if !depth.is_finite() || depth < 0.0 || feature.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidInput("non-finite or negative entry".into()));
        }
        self.ids.push(id);
        self.depths.push(depth);
        self.features.push(feature);
        Ok(())
    }

    #[inline]
    pub(crate) fn depth_gap(&self, i: usize, j: usize) -> f64 {
        (self.depths[i] - self.depths[j]).abs()
    }
}

/// Hyperparameters of the quasi-isometric corridor and loss.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QiParams {
    /// Multiplicative distortion, `K ≥ 1`.
    pub k: f64,
    /// Additive slack, `B ≥ 0`.
    pub b: f64,
    /// Neighborhood radius in depth units; may be `f64::INFINITY`.
    pub epsilon: f64,
    /// Softmax temperature, `τ > 0`.
    pub tau: f64,
    /// Norm used for feature distances.
    pub p_feat: Norm,
    /// Norm used for depth distances. Depths are scalars, so every order
    /// reduces to `|z_i − z_j|`.
    pub p_depth: Norm,
    /// Guard added to the denominator of the literal loss form.
    pub div_guard: f64,
}

impl Default for QiParams {
    fn default() -> Self {
        Self {
            k: 1.5,
            b: 0.5,
            epsilon: 10.0,
            tau: 1.0,
            p_feat: Norm::L2,
            p_depth: Norm::L1,
            div_guard: 1e-12,
        }
    }
}

impl QiParams {
    /// Checks every constraint and names the first one violated.
    pub fn validate(&self) -> Result<()> {
        if !(self.k >= 1.0) || self.k.is_infinite() {
            return Err(Error::InvalidParam("K must be ≥ 1".into()));
        }
        if !(self.b >= 0.0) || self.b.is_infinite() {
            return Err(Error::InvalidParam("B must be ≥ 0".into()));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::InvalidParam("epsilon must be > 0".into()));
        }
        if !(self.tau > 0.0) || self.tau.is_infinite() {
            return Err(Error::InvalidParam("tau must be > 0".into()));
        }
        if !(self.div_guard > 0.0) || self.div_guard.is_infinite() {
            return Err(Error::InvalidParam("div_guard must be > 0".into()));
        }
        Ok(())
    }

    #[inline]
    pub(crate) fn eligible(&self, d_depth: f64) -> bool {
        d_depth <= self.epsilon
    }

    /// `d₂ − (K·d₁ + B)`, positive for upper-bound violations.
    #[inline]
    pub fn upper_margin(&self, d_depth: f64, d_feat: f64) -> f64 {
        d_feat - self.k * d_depth - self.b
    }

    /// `(d₁/K − B) − d₂`, positive for lower-bound violations.
    #[inline]
    pub fn lower_margin(&self, d_depth: f64, d_feat: f64) -> f64 {
        d_depth / self.k - self.b - d_feat
    }
}

/// One audited pair with its distances and the (positive) violation margin.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PairViolation {
    pub i: usize,
    pub j: usize,
    pub d_depth: f64,
    pub d_feat: f64,
    pub margin: f64,
}

/// Result of [`find_violating_pairs`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ViolationReport {
    /// Upper-bound violations (P⁺), sorted by `(i, j)`.
    pub pos_pairs: Vec<PairViolation>,
    /// Lower-bound violations (P⁻), sorted by `(i, j)`.
    pub neg_pairs: Vec<PairViolation>,
    /// Pairs `i < j` with `d₁ ≤ ε`.
    pub eligible_count: usize,
    /// `L·(L−1)/2`.
    pub total_pairs: usize,
    /// `(|P⁺| + |P⁻|) / total_pairs`, or 0 when there are no pairs.
    pub ratio: f64,
}

impl ViolationReport {
    pub fn violation_count(&self) -> usize {
        self.pos_pairs.len() + self.neg_pairs.len()
    }

    /// All violations sorted by decreasing margin, ties by `(i, j)`.
    pub fn worst(&self, limit: usize) -> Vec<(Side, PairViolation)> {
        let mut all: Vec<(Side, PairViolation)> = self
            .pos_pairs
            .iter()
            .map(|p| (Side::Upper, *p))
            .chain(self.neg_pairs.iter().map(|p| (Side::Lower, *p)))
            .collect();
        all.sort_by(|a, b| {
            b.1.margin
                .total_cmp(&a.1.margin)
                .then((a.1.i, a.1.j).cmp(&(b.1.i, b.1.j)))
        });
        all.truncate(limit);
        all
    }
}

/// Which side of the corridor a pair violates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Upper,
    Lower,
}

/// Indices `j ≠ index` with `|z_index − z_j| ≤ ε`.
pub fn epsilon_neighborhood(ds: &DescriptorSet, index: usize, params: &QiParams) -> Result<Vec<usize>> {
    if index >= ds.len() {
        return Err(Error::IndexOutOfRange {
            index,
            len: ds.len(),
        });
    }
    Ok((0..ds.len())
        .filter(|&j| j != index && params.eligible(ds.depth_gap(index, j)))
        .collect())
}

/// Enumerates the violating pair sets P⁺ and P⁻ over all `i < j`.
pub fn find_violating_pairs(ds: &DescriptorSet, params: &QiParams) -> ViolationReport {
    let n = ds.len();
    let total_pairs = n * n.saturating_sub(1) / 2;
    type Row = (Vec<PairViolation>, Vec<PairViolation>, usize);
    let rows: Vec<Row> = par::map_range(n, |i| {
        let mut pos = Vec::new();
        let mut neg = Vec::new();
        let mut eligible = 0;
        for j in i + 1..n {
            let d_depth = ds.depth_gap(i, j);
            if !params.eligible(d_depth) {
                continue;
            }
            eligible += 1;
            let d_feat = params.p_feat.dist(ds.feature(i), ds.feature(j));
            let up = params.upper_margin(d_depth, d_feat);
            let lo = params.lower_margin(d_depth, d_feat);
            if up > 0.0 {
                pos.push(PairViolation { i, j, d_depth, d_feat, margin: up });
            }
            if lo > 0.0 {
                neg.push(PairViolation { i, j, d_depth, d_feat, margin: lo });
            }
        }
        (pos, neg, eligible)
    });
    let mut report = ViolationReport {
        pos_pairs: Vec::new(),
        neg_pairs: Vec::new(),
        eligible_count: 0,
        total_pairs,
        ratio: 0.0,
    };
    for (pos, neg, eligible) in rows {
        report.pos_pairs.extend(pos);
        report.neg_pairs.extend(neg);
        report.eligible_count += eligible;
    }
    if total_pairs > 0 {
        report.ratio = report.violation_count() as f64 / total_pairs as f64;
    }
    report
}

/// Outcome of the local quasi-isometry check.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LocalQiReport {
    /// Condition (ii): no eligible pair leaves the corridor.
    pub holds: bool,
    /// Condition (iii): every descriptor is the image of its own depth, so
    /// coverage is trivially satisfied for a [`DescriptorSet`].
    pub coverage_holds: bool,
    pub violations: ViolationReport,
}

/// Local quasi-isometry: no violating pair within ε-neighborhoods.
pub fn check_local_qi(ds: &DescriptorSet, params: &QiParams) -> LocalQiReport {
    let violations = find_violating_pairs(ds, params);
    LocalQiReport {
        holds: violations.violation_count() == 0,
        coverage_holds: true,
        violations,
    }
}

/// Feature-space distance used by [`check_global_qi`].
pub enum FeatureMetric<'a> {
    Minkowski(Norm),
    /// Distance between objects `i` and `j`; `None` skips the pair.
    Custom(&'a (dyn Fn(usize, usize) -> Option<f64> + Sync)),
}

/// Pair with the largest corridor margin in a global check.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct WorstPair {
    pub i: usize,
    pub j: usize,
    pub d_depth: f64,
    pub d_feat: f64,
    /// `max(d₂ − (K·d₁ + B), (d₁/K − B) − d₂)`; positive means a violation.
    pub margin: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GlobalQiReport {
    pub holds: bool,
    pub checked_pairs: usize,
    pub skipped_pairs: usize,
    pub violating_pairs: usize,
    /// Largest margin over all checked pairs, violating or not.
    pub worst: Option<WorstPair>,
}

/// Relative slack for floating-point rounding in the global check. A pair
/// counts as violating when its margin exceeds `GLOBAL_RTOL · max(1, d₁, d₂)`.
pub const GLOBAL_RTOL: f64 = 1e-9;

pub(crate) fn rounding_slack(d_depth: f64, d_feat: f64) -> f64 {
    GLOBAL_RTOL * d_depth.max(d_feat).max(1.0)
}

/// Global quasi-isometry over all pairs `i < j`, with no ε filter.
pub fn check_global_qi(ds: &DescriptorSet, k: f64, b: f64, metric: FeatureMetric<'_>) -> GlobalQiReport {
    let n = ds.len();
    let dist = |i: usize, j: usize| -> Option<f64> {
        match &metric {
            FeatureMetric::Minkowski(p) => Some(p.dist(ds.feature(i), ds.feature(j))),
            FeatureMetric::Custom(f) => f(i, j),
        }
    };
    let rows: Vec<GlobalQiReport> = par::map_range(n, |i| {
        let mut row = GlobalQiReport {
            holds: true,
            checked_pairs: 0,
            skipped_pairs: 0,
            violating_pairs: 0,
            worst: None,
        };
        for j in i + 1..n {
            let Some(d_feat) = dist(i, j) else {
                row.skipped_pairs += 1;
                continue;
            };
            let d_depth = ds.depth_gap(i, j);
            row.checked_pairs += 1;
            let margin = (d_feat - (k * d_depth + b)).max((d_depth / k - b) - d_feat);
            if margin > rounding_slack(d_depth, d_feat) {
                row.violating_pairs += 1;
            }
            if row.worst.is_none_or(|w| margin > w.margin) {
                row.worst = Some(WorstPair { i, j, d_depth, d_feat, margin });
            }
        }
        row
    });
    merge_global(rows)
}

pub(crate) fn merge_global(rows: Vec<GlobalQiReport>) -> GlobalQiReport {
    let mut out = GlobalQiReport {
        holds: true,
        checked_pairs: 0,
        skipped_pairs: 0,
        violating_pairs: 0,
        worst: None,
    };
    for row in rows {
        out.checked_pairs += row.checked_pairs;
        out.skipped_pairs += row.skipped_pairs;
        out.violating_pairs += row.violating_pairs;
        if let Some(w) = row.worst {
            if out.worst.is_none_or(|o| w.margin > o.margin) {
                out.worst = Some(w);
            }
        }
    }
    out.holds = out.violating_pairs == 0;
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params() -> QiParams {
        QiParams::default()
    }

    #[test]
    fn defaults_match_reference_setting() {
        let p = params();
        assert_eq!((p.k, p.b, p.epsilon, p.tau), (1.5, 0.5, 10.0, 1.0));
        assert_eq!(p.p_feat, Norm::L2);
        assert_eq!(p.div_guard, 1e-12);
        p.validate().unwrap();
    }

    #[test]
    fn validate_names_constraint() {
        let e = QiParams { k: 0.5, ..params() }.validate().unwrap_err();
        assert_eq!(e.to_string(), "K must be ≥ 1");
        let e = QiParams { b: -1.0, ..params() }.validate().unwrap_err();
        assert_eq!(e.to_string(), "B must be ≥ 0");
        let e = QiParams { tau: 0.0, ..params() }.validate().unwrap_err();
        assert_eq!(e.to_string(), "tau must be > 0");
        QiParams { epsilon: f64::INFINITY, ..params() }.validate().unwrap();
    }

    #[test]
    fn neighborhood_examples() {
        let ds = DescriptorSet::from_scalars(&[5.0], &[0.0]).unwrap();
        assert!(epsilon_neighborhood(&ds, 0, &params()).unwrap().is_empty());

        let ds = DescriptorSet::from_scalars(&[0.0, 5.0, 20.0], &[0.0, 0.0, 0.0]).unwrap();
        assert_eq!(epsilon_neighborhood(&ds, 0, &params()).unwrap(), vec![1]);

        let inf = QiParams { epsilon: f64::INFINITY, ..params() };
        assert_eq!(epsilon_neighborhood(&ds, 1, &inf).unwrap(), vec![0, 2]);

        assert!(matches!(
            epsilon_neighborhood(&ds, 3, &params()),
            Err(Error::IndexOutOfRange { index: 3, len: 3 })
        ));
    }

    #[test]
    fn neighborhood_boundary_is_inclusive() {
        let ds = DescriptorSet::from_scalars(&[0.0, 10.0], &[0.0, 0.0]).unwrap();
        assert_eq!(epsilon_neighborhood(&ds, 0, &params()).unwrap(), vec![1]);
    }

    #[test]
    fn single_upper_violation() {
        let ds = DescriptorSet::from_scalars(&[0.0, 1.0], &[0.0, 5.0]).unwrap();
        let r = find_violating_pairs(&ds, &params());
        assert_eq!(r.pos_pairs.len(), 1);
        assert_eq!((r.pos_pairs[0].i, r.pos_pairs[0].j), (0, 1));
        assert_eq!(r.pos_pairs[0].margin, 3.0);
        assert!(r.neg_pairs.is_empty());
        assert_eq!(r.ratio, 1.0);
    }

    #[test]
    fn only_eligible_pair_counted() {
        let ds = DescriptorSet::from_scalars(&[0.0, 5.0, 20.0], &[0.0, 20.0, 30.0]).unwrap();
        let r = find_violating_pairs(&ds, &params());
        assert_eq!(r.eligible_count, 1);
        assert_eq!(r.total_pairs, 3);
        assert_eq!(r.pos_pairs.len(), 1);
        assert_eq!(r.pos_pairs[0].margin, 20.0 - 8.0);
        assert!((r.ratio - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn isometric_embedding_has_no_violations() {
        let depths = [1.0, 2.5, 4.0, 9.0, 9.5];
        let feats: Vec<Vec<f64>> = depths.iter().map(|&z| vec![z, 0.0, 0.0]).collect();
        let ds = DescriptorSet::from_parts(depths.to_vec(), feats).unwrap();
        for eps in [1.0, 10.0, f64::INFINITY] {
            let p = QiParams { k: 1.0, b: 0.0, epsilon: eps, ..params() };
            let r = check_local_qi(&ds, &p);
            assert!(r.holds && r.coverage_holds);
        }
    }

    #[test]
    fn small_sets_are_vacuous() {
        let ds = DescriptorSet::from_scalars(&[3.0], &[100.0]).unwrap();
        let r = find_violating_pairs(&ds, &params());
        assert_eq!((r.total_pairs, r.ratio), (0, 0.0));
        assert!(check_local_qi(&ds, &params()).holds);
        let empty = DescriptorSet::from_parts(vec![], vec![]).unwrap();
        assert_eq!(find_violating_pairs(&empty, &params()).ratio, 0.0);
    }

    #[test]
    fn local_check_fails_on_upper_violation() {
        let ds = DescriptorSet::from_scalars(&[0.0, 1.0], &[0.0, 5.0]).unwrap();
        assert!(!check_local_qi(&ds, &params()).holds);
    }

    #[test]
    fn duplicate_depth_pair_is_eligible() {
        let ds = DescriptorSet::from_scalars(&[2.0, 2.0], &[0.0, 0.75]).unwrap();
        let r = find_violating_pairs(&ds, &params());
        assert_eq!(r.eligible_count, 1);
        assert_eq!(r.pos_pairs.len(), 1);
        assert!(r.neg_pairs.is_empty());
    }

    #[test]
    fn global_examples() {
        let ds = DescriptorSet::from_scalars(&[1.0, 2.0, 4.0], &[1.0, 2.0, 4.0]).unwrap();
        let r = check_global_qi(&ds, 1.0, 0.0, FeatureMetric::Minkowski(Norm::L2));
        assert!(r.holds);
        assert_eq!(r.checked_pairs, 3);

        let ds = DescriptorSet::from_scalars(&[0.0, 1.0], &[0.0, 5.0]).unwrap();
        let r = check_global_qi(&ds, 1.5, 0.5, FeatureMetric::Minkowski(Norm::L2));
        assert!(!r.holds);
        assert_eq!(r.worst.unwrap().margin, 3.0);

        let r = check_global_qi(&ds, 1.0, 6.0, FeatureMetric::Minkowski(Norm::L2));
        assert!(r.holds);
    }

    #[test]
    fn global_custom_metric_can_skip() {
        let ds = DescriptorSet::from_scalars(&[0.0, 1.0, 2.0], &[0.0, 1.0, 2.0]).unwrap();
        let f = |i: usize, j: usize| if i == 0 && j == 2 { None } else { Some(1.0) };
        let r = check_global_qi(&ds, 1.0, 0.0, FeatureMetric::Custom(&f));
        assert_eq!((r.checked_pairs, r.skipped_pairs), (2, 1));
        assert!(r.holds);
    }

    #[test]
    fn descriptor_set_validation() {
        assert!(DescriptorSet::from_parts(vec![1.0], vec![]).is_err());
        assert!(DescriptorSet::from_parts(vec![1.0, 2.0], vec![vec![0.0], vec![0.0, 1.0]]).is_err());
        assert!(DescriptorSet::from_parts(vec![f64::NAN], vec![vec![0.0]]).is_err());
        assert!(DescriptorSet::from_parts(vec![-1.0], vec![vec![0.0]]).is_err());
        assert!(DescriptorSet::from_parts(vec![1.0], vec![vec![f64::INFINITY]]).is_err());
    }
}
