//! Extrapolated loss and gradient, the attribute distribution they imply,
//! and the feasible range of the extrapolation factor `beta`.
//!
//! With `L_ext = L_lb + beta * (L_lb - L_b)`, training on `L_ext` is in
//! expectation training on class-balanced batches with
//! `p_ext(a|y) = alpha_ya + c * (beta + 1) * (1/A - alpha_ya)`.
//! `beta = -1` recovers class-balanced ERM, `c * (beta + 1) = 1` gives
//! uniform groups, and larger `beta` oversamples the groups with
//! `alpha_ya < 1/A`.

use serde::{Deserialize, Serialize};

use crate::dataset::GroupStats;
use crate::error::{GerneError, Result};
use crate::model::GradientVector;
use crate::sampling::check_c;
use crate::serde_util;

/// `alpha` within this distance of `1/A` does not constrain `beta`.
const UNIFORM_EPS: f64 = 1e-12;
/// Roundoff slack when checking that `p_ext` stays inside `[0, 1]`.
const FEASIBILITY_EPS: f64 = 1e-9;

/// `(1 + beta) * L_lb - beta * L_b`.
///
/// Written in this form so that `beta = -1` returns `L_b` and `beta = 0`
/// returns `L_lb` bit for bit.
pub fn extrapolated_loss(loss_lb: f64, loss_b: f64, beta: f64) -> f64 {
    (1.0 + beta) * loss_lb - beta * loss_b
}

/// Elementwise `(1 + beta) * g_lb - beta * g_b`.
pub fn extrapolated_gradient(grad_lb: &GradientVector, grad_b: &GradientVector, beta: f64) -> GradientVector {
    assert_eq!(grad_lb.len(), grad_b.len(), "gradient dimension mismatch");
    GradientVector(
        grad_lb
            .0
            .iter()
            .zip(&grad_b.0)
            .map(|(&lb, &b)| extrapolated_loss(lb, b, beta))
            .collect(),
    )
}

fn p_ext_entry(alpha: f64, uniform: f64, c: f64, beta: f64) -> f64 {
    alpha + c * (beta + 1.0) * (uniform - alpha)
}

/// `p_ext` for every group; errors on the first entry outside `[0, 1]`.
pub fn compute_p_ext(stats: &GroupStats, c: f64, beta: f64) -> Result<Vec<Vec<f64>>> {
    check_c(c)?;
    if !beta.is_finite() {
        return Err(GerneError::InvalidArgument(format!("beta = {beta}")));
    }
    let uniform = 1.0 / stats.num_attributes() as f64;
    let mut out = Vec::with_capacity(stats.num_classes());
    for (y, row) in stats.alpha.iter().enumerate() {
        let mut prow = Vec::with_capacity(row.len());
        for (a, &alpha) in row.iter().enumerate() {
            let p = p_ext_entry(alpha, uniform, c, beta);
            if !(-FEASIBILITY_EPS..=1.0 + FEASIBILITY_EPS).contains(&p) {
                return Err(GerneError::InfeasibleBeta {
                    beta,
                    class: y + 1,
                    attribute: a + 1,
                    value: p,
                });
            }
            prow.push(p.clamp(0.0, 1.0));
        }
        out.push(prow);
    }
    Ok(out)
}

/// Per-group endpoints of the feasible `beta` interval and their aggregate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BetaBounds {
    /// `i1 = -alpha / (c (1/A - alpha)) - 1`; `None` where `alpha = 1/A`.
    pub i1: Vec<Vec<Option<f64>>>,
    /// `i2 = (1 - alpha) / (c (1/A - alpha)) - 1`; `None` where `alpha = 1/A`.
    pub i2: Vec<Vec<Option<f64>>>,
    /// `-inf` when no group constrains `beta`.
    #[serde(with = "serde_util::neg_inf")]
    pub lo: f64,
    /// `+inf` when no group constrains `beta`.
    #[serde(with = "serde_util::pos_inf")]
    pub hi: f64,
    /// Group with the largest `alpha`, 0-based `(y, a)`.
    pub argmax_group: (usize, usize),
    /// Group with the smallest `alpha`, 0-based `(y, a)`.
    pub argmin_group: (usize, usize),
}

impl BetaBounds {
    pub fn is_unbounded(&self) -> bool {
        self.lo == f64::NEG_INFINITY && self.hi == f64::INFINITY
    }

    pub fn contains(&self, beta: f64) -> bool {
        beta >= self.lo && beta <= self.hi
    }
}

fn arg_extrema(stats: &GroupStats) -> ((usize, usize), (usize, usize)) {
    let mut argmax = (0, 0);
    let mut argmin = (0, 0);
    for (y, row) in stats.alpha.iter().enumerate() {
        for (a, &v) in row.iter().enumerate() {
            if v > stats.alpha[argmax.0][argmax.1] {
                argmax = (y, a);
            }
            if v < stats.alpha[argmin.0][argmin.1] {
                argmin = (y, a);
            }
        }
    }
    (argmax, argmin)
}

/// Feasible interval of `beta` over all constraining groups:
/// `lo = max min(i1, i2)`, `hi = min max(i1, i2)`.
pub fn beta_bounds_full(stats: &GroupStats, c: f64) -> Result<BetaBounds> {
    check_c(c)?;
    let uniform = 1.0 / stats.num_attributes() as f64;
    let mut lo = f64::NEG_INFINITY;
    let mut hi = f64::INFINITY;
    let mut i1 = Vec::with_capacity(stats.num_classes());
    let mut i2 = Vec::with_capacity(stats.num_classes());
    for row in &stats.alpha {
        let mut r1 = Vec::with_capacity(row.len());
        let mut r2 = Vec::with_capacity(row.len());
        for &alpha in row {
            let gap = uniform - alpha;
            if gap.abs() <= UNIFORM_EPS {
                r1.push(None);
                r2.push(None);
                continue;
            }
            let a = -alpha / (c * gap) - 1.0;
            let b = (1.0 - alpha) / (c * gap) - 1.0;
            lo = lo.max(a.min(b));
            hi = hi.min(a.max(b));
            r1.push(Some(a));
            r2.push(Some(b));
        }
        i1.push(r1);
        i2.push(r2);
    }
    let (argmax_group, argmin_group) = arg_extrema(stats);
    Ok(BetaBounds {
        i1,
        i2,
        lo,
        hi,
        argmax_group,
        argmin_group,
    })
}

/// Tuning interval `[-1, i1(y'', a'')]` with `(y'', a'')` the group of
/// largest `alpha`. Unbounded above when that `alpha` is `1/A`.
pub fn beta_bounds_simplified(stats: &GroupStats, c: f64) -> Result<(f64, f64)> {
    check_c(c)?;
    let uniform = 1.0 / stats.num_attributes() as f64;
    let (argmax, _) = arg_extrema(stats);
    let alpha = stats.alpha[argmax.0][argmax.1];
    let gap = uniform - alpha;
    if gap.abs() <= UNIFORM_EPS {
        return Ok((-1.0, f64::INFINITY));
    }
    Ok((-1.0, -alpha / (c * gap) - 1.0))
}

/// `(1/K) * sum_g p_ext(a|y) * L_g`.
pub fn decompose_loss(group_losses: &[Vec<f64>], p_ext: &[Vec<f64>], num_classes: usize) -> Result<f64> {
    if group_losses.len() != p_ext.len()
        || group_losses.iter().zip(p_ext).any(|(l, p)| l.len() != p.len())
    {
        return Err(GerneError::InvalidArgument(
            "group losses and p_ext have different shapes".into(),
        ));
    }
    let total: f64 = group_losses
        .iter()
        .zip(p_ext)
        .flat_map(|(l, p)| l.iter().zip(p).map(|(l, p)| l * p))
        .sum();
    Ok(total / num_classes as f64)
}

/// `p_ext(a|y)` for a true attribute `a` seen through two pseudo-groups:
/// `sum_ã p_ext(ã|y) * p(a|ã, y)` with
/// `p_ext(ã|y) = alpha_ã + c (beta + 1) (1/2 - alpha_ã)`.
pub fn pseudo_mixture_p_ext(conditionals: &[f64; 2], pseudo_alpha: &[f64; 2], c: f64, beta: f64) -> f64 {
    conditionals
        .iter()
        .zip(pseudo_alpha)
        .map(|(&p_a, &alpha)| p_ext_entry(alpha, 0.5, c, beta) * p_a)
        .sum()
}

/// The `beta` at which the pseudo-group mixture reaches `p_ext(a|y) = target`.
///
/// `conditionals[ã] = p(a | ã, y)` and `pseudo_alpha[ã] = |X_{y,ã}| / |X_y|`
/// for the two pseudo-groups.
pub fn beta_target(target: f64, conditionals: &[f64; 2], pseudo_alpha: &[f64; 2], c: f64) -> Result<f64> {
    check_c(c)?;
    if (pseudo_alpha[0] - 0.5).abs() <= UNIFORM_EPS {
        return Err(GerneError::Degenerate(
            "pseudo-groups are equally sized (alpha = 1/2): beta has no effect".into(),
        ));
    }
    if (conditionals[0] - conditionals[1]).abs() <= UNIFORM_EPS {
        return Err(GerneError::Degenerate(
            "p(a|ã=1,y) = p(a|ã=2,y): the pseudo-groups carry no information on a".into(),
        ));
    }
    let base: f64 = pseudo_alpha.iter().zip(conditionals).map(|(al, p)| al * p).sum();
    let slope: f64 = pseudo_alpha
        .iter()
        .zip(conditionals)
        .map(|(al, p)| c * (0.5 - al) * p)
        .sum();
    if slope == 0.0 {
        return Err(GerneError::Degenerate("zero denominator".into()));
    }
    Ok((target - base) / slope - 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MixtureBounds {
    /// `min_ã p(a|ã, y)`.
    pub min: f64,
    /// `max_ã p(a|ã, y)`.
    pub max: f64,
    /// Smallest `p_B(a|y)` seen over the `gamma` grid.
    pub grid_min: f64,
    /// Largest `p_B(a|y)` seen over the `gamma` grid.
    pub grid_max: f64,
}

/// Range of `p_B(a|y) = gamma * p(a|ã=1, y) + (1 - gamma) * p(a|ã=2, y)`
/// reachable by plain mixing of the two pseudo-groups. The extremes sit at
/// the vertices; the `gamma` grid scan is reported alongside as a check.
pub fn mixture_bounds(conditionals: &[f64; 2], gamma_grid: &[f64]) -> Result<MixtureBounds> {
    if gamma_grid.iter().any(|g| !(0.0..=1.0).contains(g)) {
        return Err(GerneError::InvalidArgument("gamma must lie in [0, 1]".into()));
    }
    let mix = |g: f64| g * conditionals[0] + (1.0 - g) * conditionals[1];
    let (grid_min, grid_max) = gamma_grid
        .iter()
        .map(|&g| mix(g))
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    Ok(MixtureBounds {
        min: conditionals[0].min(conditionals[1]),
        max: conditionals[0].max(conditionals[1]),
        grid_min,
        grid_max,
    })
}

/// Default tuning grid: `points` evenly spaced values over `[lo, hi]` plus
/// the special values `-1`, `0` and `1/c - 1` when they are feasible.
/// Sorted ascending, duplicates removed.
pub fn default_beta_grid(lo: f64, hi: f64, c: f64, points: usize) -> Vec<f64> {
    let mut grid = Vec::with_capacity(points + 3);
    if lo.is_finite() && hi.is_finite() && points > 0 {
        if points == 1 {
            grid.push(lo);
        } else {
            let step = (hi - lo) / (points - 1) as f64;
            grid.extend((0..points).map(|i| lo + step * i as f64));
            *grid.last_mut().unwrap() = hi;
        }
    }
    for special in [-1.0, 0.0, 1.0 / c - 1.0] {
        if special >= lo && special <= hi {
            grid.push(special);
        }
    }
    grid.sort_by(f64::total_cmp);
    grid.dedup_by(|a, b| (*a - *b).abs() < 1e-12);
    grid
}

/// Validated `(c, beta)` pair with its implied attribute distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtrapolationPlan {
    pub c: f64,
    pub beta: f64,
    pub p_ext: Vec<Vec<f64>>,
    pub beta_bounds: BetaBounds,
}

impl ExtrapolationPlan {
    pub fn new(stats: &GroupStats, c: f64, beta: f64) -> Result<Self> {
        let beta_bounds = beta_bounds_full(stats, c)?;
        let p_ext = compute_p_ext(stats, c, beta)?;
        Ok(Self {
            c,
            beta,
            p_ext,
            beta_bounds,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn stats(sizes: Vec<Vec<usize>>) -> GroupStats {
        GroupStats::from_sizes(sizes).unwrap()
    }

    #[test]
    fn loss_special_values() {
        assert_eq!(extrapolated_loss(0.3, 0.7, -1.0), 0.7);
        assert_eq!(extrapolated_loss(0.3, 0.7, 0.0), 0.3);
        assert_eq!(extrapolated_loss(0.5, 1.0, 2.0), -0.5);
    }

    #[test]
    fn gradient_special_values() {
        let lb = GradientVector(vec![0.1, -2.0, 3.3]);
        let b = GradientVector(vec![1.7, 0.25, -0.9]);
        assert_eq!(extrapolated_gradient(&lb, &b, -1.0), b);
        assert_eq!(extrapolated_gradient(&lb, &b, 0.0), lb);
        for beta in [-0.5, 1.5, 7.0] {
            let same = extrapolated_gradient(&lb, &lb, beta);
            for (x, y) in same.0.iter().zip(&lb.0) {
                assert!((x - y).abs() <= 1e-15 * y.abs().max(1.0));
            }
        }
    }

    #[test]
    fn p_ext_special_cases() {
        let s = stats(vec![vec![9, 1], vec![3, 7]]);
        assert_eq!(compute_p_ext(&s, 1.0, 0.0).unwrap(), vec![vec![0.5; 2]; 2]);
        assert_eq!(compute_p_ext(&s, 0.3, -1.0).unwrap(), s.alpha);
        // c (beta + 1) = 1.5 > 1: minority 0.1 moves beyond 1/2
        let p = compute_p_ext(&s, 0.5, 2.0).unwrap();
        assert!(p[0][1] > 0.5 && p[0][0] < 0.5);
        assert!(matches!(
            compute_p_ext(&s, 1.0, 5.0),
            Err(GerneError::InfeasibleBeta { class: 1, attribute: 1, .. })
        ));
    }

    #[test]
    fn reported_divergence_bound() {
        // ten classes, 0.995 on the diagonal, 0.005 spread evenly elsewhere
        let sizes = (0..10)
            .map(|y| (0..10).map(|a| if a == y { 1791 } else { 1 }).collect())
            .collect();
        let b = beta_bounds_full(&stats(sizes), 0.5).unwrap();
        let expect = 0.995 / (0.5 * 0.895) - 1.0;
        assert!((b.hi - expect).abs() < 1e-12);
        assert!((b.hi - 1.2235).abs() < 1e-3);
    }

    #[test]
    fn uniform_stats_are_unbounded() {
        let s = stats(vec![vec![4, 4, 4]; 3]);
        let b = beta_bounds_full(&s, 0.5).unwrap();
        assert!(b.is_unbounded());
        assert!(b.i1.iter().flatten().all(Option::is_none));
        assert_eq!(beta_bounds_simplified(&s, 0.5).unwrap(), (-1.0, f64::INFINITY));
        let json = serde_json::to_string(&b).unwrap();
        let back: BetaBounds = serde_json::from_str(&json).unwrap();
        assert!(back.is_unbounded());
    }

    #[test]
    fn simplified_bound_shrinks_with_c() {
        let s = stats(vec![vec![95, 5], vec![10, 90]]);
        let mut last = f64::INFINITY;
        for c in [0.1, 0.3, 0.5, 0.8, 1.0] {
            let (lo, hi) = beta_bounds_simplified(&s, c).unwrap();
            assert_eq!(lo, -1.0);
            assert!(hi < last);
            last = hi;
        }
    }

    #[test]
    fn decomposition_basics() {
        let p = vec![vec![0.5, 0.5]; 2];
        let l = vec![vec![0.8, 0.8]; 2];
        assert!((decompose_loss(&l, &p, 2).unwrap() - 0.8).abs() < 1e-15);
        assert!(decompose_loss(&l, &p[..1], 2).is_err());
    }

    #[test]
    fn past_balance_minority_weight_dominates() {
        let s = stats(vec![vec![90, 6, 4], vec![5, 80, 15]]);
        let c = 0.4;
        let (_, min_g) = arg_extrema(&s);
        let beta = 1.0 / c - 1.0 + 0.3;
        let p = compute_p_ext(&s, c, beta).unwrap();
        let row = &p[min_g.0];
        for (a, &v) in row.iter().enumerate() {
            if a != min_g.1 {
                assert!(row[min_g.1] > v);
            }
        }
    }

    #[test]
    fn beta_target_perfect_pseudo_groups() {
        // pseudo-minority is exactly the true minority: inverting p_ext for A = 2
        let alpha = [0.05, 0.95];
        let cond = [1.0, 0.0];
        let c = 0.5;
        let target = 0.6;
        let beta = beta_target(target, &cond, &alpha, c).unwrap();
        let inverted = (target - alpha[0]) / (c * (0.5 - alpha[0])) - 1.0;
        assert!((beta - inverted).abs() < 1e-12);
        assert!((pseudo_mixture_p_ext(&cond, &alpha, c, beta) - target).abs() < 1e-12);
    }

    #[test]
    fn beta_target_degenerate_cases() {
        assert!(matches!(beta_target(0.5, &[0.7, 0.2], &[0.5, 0.5], 0.5), Err(GerneError::Degenerate(_))));
        assert!(matches!(beta_target(0.5, &[0.3, 0.3], &[0.1, 0.9], 0.5), Err(GerneError::Degenerate(_))));
    }

    #[test]
    fn beta_target_beyond_vertices() {
        let cond = [0.8, 0.3];
        let alpha = [0.1, 0.9];
        let beta = beta_target(0.95, &cond, &alpha, 0.5).unwrap();
        assert!(beta.is_finite());
        assert!((pseudo_mixture_p_ext(&cond, &alpha, 0.5, beta) - 0.95).abs() < 1e-10);
    }

    #[test]
    fn mixture_vertex_rule() {
        let grid: Vec<f64> = (0..=100).map(|i| i as f64 / 100.0).collect();
        let m = mixture_bounds(&[0.8, 0.3], &grid).unwrap();
        assert_eq!((m.min, m.max), (0.3, 0.8));
        assert_eq!((m.grid_min, m.grid_max), (0.3, 0.8));
        let ends = mixture_bounds(&[0.8, 0.3], &[0.0, 1.0]).unwrap();
        assert_eq!((ends.grid_min, ends.grid_max), (0.3, 0.8));
        assert!(mixture_bounds(&[0.8, 0.3], &[1.5]).is_err());
    }

    #[test]
    fn default_grid_contains_special_points() {
        let g = default_beta_grid(-1.5, 1.2235, 0.5, 20);
        for special in [-1.0, 0.0, 1.0] {
            assert!(g.iter().any(|&v| (v - special).abs() < 1e-12));
        }
        assert_eq!(*g.first().unwrap(), -1.5);
        assert_eq!(*g.last().unwrap(), 1.2235);
        assert!(g.windows(2).all(|w| w[0] < w[1]));
    }

    proptest! {
        #[test]
        fn p_ext_rows_sum_to_one(sizes in proptest::collection::vec(proptest::collection::vec(1usize..50, 3), 2..4),
                                 c in 0.05f64..1.0, t in 0.0f64..1.0) {
            let s = stats(sizes);
            let b = beta_bounds_full(&s, c).unwrap();
            prop_assume!(b.lo.is_finite() && b.hi.is_finite());
            let beta = b.lo + t * (b.hi - b.lo);
            let p = compute_p_ext(&s, c, beta).unwrap();
            for row in p {
                prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }
        }
    }
}
