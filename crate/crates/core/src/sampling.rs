//! Class-balanced batch construction.
//!
//! Every batch holds `B` samples per class (`p(y) = 1/K`). Inside a group
//! samples are drawn uniformly with replacement.

use ndarray::{Array2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{draw_with_replacement, GroupStats, GroupedDataset};
use crate::error::{GerneError, Result};

/// Remainders closer than this are treated as tied.
const TIE_EPS: f64 = 1e-9;

/// Largest-remainder apportionment of `total` units over `dist`.
///
/// Each entry first gets `floor(p * total)`; the units left over go to the
/// largest fractional parts, ties to the lower index. The result always sums
/// to `total`.
pub fn allocate_counts(dist: &[f64], total: usize) -> Result<Vec<usize>> {
    if dist.is_empty() {
        return Err(GerneError::InvalidArgument("empty distribution".into()));
    }
    if dist.iter().any(|&p| !(p >= 0.0) || !p.is_finite()) {
        return Err(GerneError::InvalidArgument(format!(
            "distribution {dist:?} has a negative or non-finite entry"
        )));
    }
    let sum: f64 = dist.iter().sum();
    if (sum - 1.0).abs() > 1e-9 {
        return Err(GerneError::InvalidArgument(format!(
            "distribution sums to {sum}, expected 1"
        )));
    }
    let exact: Vec<f64> = dist.iter().map(|&p| p * total as f64).collect();
    let mut counts: Vec<usize> = exact.iter().map(|&e| e.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut left = total.saturating_sub(assigned);
    let mut order: Vec<usize> = (0..dist.len()).collect();
    let rem = |i: usize| exact[i] - exact[i].floor();
    order.sort_by(|&i, &j| {
        let (ri, rj) = (rem(i), rem(j));
        if (ri - rj).abs() <= TIE_EPS {
            i.cmp(&j)
        } else {
            rj.total_cmp(&ri)
        }
    });
    for &i in order.iter().cycle() {
        if left == 0 {
            break;
        }
        if dist[i] > 0.0 {
            counts[i] += 1;
            left -= 1;
        }
    }
    Ok(counts)
}

/// Integer per-group batch composition, `counts[y][a]`, with `B` per class.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BatchPlan {
    pub counts: Vec<Vec<usize>>,
    pub per_class: usize,
}

impl BatchPlan {
    /// Realizes the conditional attribute distribution `dist[y]` per class.
    pub fn from_conditionals(dist: &[Vec<f64>], per_class: usize) -> Result<Self> {
        let counts = dist
            .iter()
            .map(|row| allocate_counts(row, per_class))
            .collect::<Result<_>>()?;
        Ok(Self { counts, per_class })
    }

    /// `counts / B`.
    pub fn realized(&self) -> Vec<Vec<f64>> {
        self.counts
            .iter()
            .map(|row| row.iter().map(|&n| n as f64 / self.per_class as f64).collect())
            .collect()
    }
}

/// `p_lb(a|y) = alpha + c * (1/A - alpha)`.
pub fn less_biased_conditionals(stats: &GroupStats, c: f64) -> Result<Vec<Vec<f64>>> {
    check_c(c)?;
    let uniform = 1.0 / stats.num_attributes() as f64;
    Ok(stats
        .alpha
        .iter()
        .map(|row| row.iter().map(|&a| a + c * (uniform - a)).collect())
        .collect())
}

pub(crate) fn check_c(c: f64) -> Result<()> {
    if c > 0.0 && c <= 1.0 {
        Ok(())
    } else {
        Err(GerneError::InvalidArgument(format!("c = {c} must lie in (0, 1]")))
    }
}

fn check_batch_size(per_class: usize) -> Result<()> {
    if per_class == 0 {
        Err(GerneError::InvalidArgument("batch size per class must be >= 1".into()))
    } else {
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BatchKind {
    Biased,
    LessBiased,
    Resampled,
    Sw,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub kind: BatchKind,
    pub indices: Vec<usize>,
    pub features: Array2<f64>,
    pub labels: Vec<usize>,
    /// Active (true or pseudo) attribute of each sample; `None` for biased
    /// batches, which are drawn without looking at attributes.
    pub attributes: Option<Vec<usize>>,
    /// Per-sample loss weights summing to 1; `None` means uniform.
    pub weights: Option<Vec<f64>>,
}

impl Batch {
    fn gather(ds: &GroupedDataset, kind: BatchKind, indices: Vec<usize>, with_attributes: bool) -> Self {
        let features = ds.features().select(Axis(0), &indices);
        let labels = indices.iter().map(|&i| ds.labels()[i]).collect();
        let attributes = if with_attributes {
            ds.active_attributes()
                .map(|attrs| indices.iter().map(|&i| attrs[i]).collect())
        } else {
            None
        };
        Self {
            kind,
            indices,
            features,
            labels,
            attributes,
            weights: None,
        }
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    /// Per-group sample counts of this batch, `[y][a]`.
    pub fn group_counts(&self, num_classes: usize, num_attributes: usize) -> Option<Vec<Vec<usize>>> {
        let attrs = self.attributes.as_ref()?;
        let mut counts = vec![vec![0; num_attributes]; num_classes];
        for (&y, &a) in self.labels.iter().zip(attrs) {
            counts[y][a] += 1;
        }
        Some(counts)
    }
}

/// `B_b`: `B` uniform draws from each class; attributes are never read.
pub fn sample_biased_batch<R: Rng + ?Sized>(ds: &GroupedDataset, per_class: usize, rng: &mut R) -> Result<Batch> {
    check_batch_size(per_class)?;
    let mut indices = Vec::with_capacity(per_class * ds.num_classes());
    for members in ds.class_index() {
        draw_with_replacement(members, per_class, rng, &mut indices);
    }
    Ok(Batch::gather(ds, BatchKind::Biased, indices, false))
}

fn sample_from_plan<R: Rng + ?Sized>(
    ds: &GroupedDataset,
    plan: &BatchPlan,
    kind: BatchKind,
    rng: &mut R,
) -> Result<Batch> {
    let index = ds.group_index()?;
    let mut indices = Vec::with_capacity(plan.per_class * ds.num_classes());
    for (y, (row, groups)) in plan.counts.iter().zip(index).enumerate() {
        for (a, (&count, members)) in row.iter().zip(groups).enumerate() {
            if count > 0 && members.is_empty() {
                return Err(GerneError::EmptyGroup {
                    class: y + 1,
                    attribute: a + 1,
                });
            }
            draw_with_replacement(members, count, rng, &mut indices);
        }
    }
    Ok(Batch::gather(ds, kind, indices, true))
}

fn check_shape(ds: &GroupedDataset, stats: &GroupStats) -> Result<()> {
    let width = ds.active_num_attributes().ok_or(GerneError::HiddenAttributes)?;
    if stats.num_classes() != ds.num_classes() || stats.num_attributes() != width {
        return Err(GerneError::InvalidArgument(format!(
            "stats are {}x{}, dataset groups are {}x{width}",
            stats.num_classes(),
            stats.num_attributes(),
            ds.num_classes()
        )));
    }
    Ok(())
}

/// Plan of `B_lb`.
pub fn less_biased_plan(stats: &GroupStats, c: f64, per_class: usize) -> Result<BatchPlan> {
    check_batch_size(per_class)?;
    BatchPlan::from_conditionals(&less_biased_conditionals(stats, c)?, per_class)
}

/// `B_lb`, drawn independently of any biased batch.
pub fn sample_less_biased_batch<R: Rng + ?Sized>(
    ds: &GroupedDataset,
    stats: &GroupStats,
    c: f64,
    per_class: usize,
    rng: &mut R,
) -> Result<Batch> {
    check_shape(ds, stats)?;
    let plan = less_biased_plan(stats, c, per_class)?;
    sample_from_plan(ds, &plan, BatchKind::LessBiased, rng)
}

/// `B_lb` built from `biased` by keeping its samples group by group (in draw
/// order) up to the planned count and drawing only the shortfall fresh.
/// This maximizes the overlap between the two batches.
pub fn sample_less_biased_shared<R: Rng + ?Sized>(
    ds: &GroupedDataset,
    stats: &GroupStats,
    c: f64,
    biased: &Batch,
    rng: &mut R,
) -> Result<Batch> {
    check_shape(ds, stats)?;
    let per_class = biased.len() / ds.num_classes();
    let plan = less_biased_plan(stats, c, per_class)?;
    let attrs = ds.active_attributes().ok_or(GerneError::HiddenAttributes)?;
    let index = ds.group_index()?;
    let width = plan.counts[0].len();
    let mut pools = vec![vec![Vec::new(); width]; ds.num_classes()];
    for &i in &biased.indices {
        pools[ds.labels()[i]][attrs[i]].push(i);
    }
    let mut indices = Vec::with_capacity(biased.len());
    for (y, row) in plan.counts.iter().enumerate() {
        for (a, &count) in row.iter().enumerate() {
            let reused = count.min(pools[y][a].len());
            indices.extend_from_slice(&pools[y][a][..reused]);
            if count > reused && index[y][a].is_empty() {
                return Err(GerneError::EmptyGroup {
                    class: y + 1,
                    attribute: a + 1,
                });
            }
            draw_with_replacement(&index[y][a], count - reused, rng, &mut indices);
        }
    }
    Ok(Batch::gather(ds, BatchKind::LessBiased, indices, true))
}

/// `B_rs`: equal counts from every group of a class (the `c = 1` less
/// biased batch).
pub fn sample_group_balanced_batch<R: Rng + ?Sized>(ds: &GroupedDataset, per_class: usize, rng: &mut R) -> Result<Batch> {
    check_batch_size(per_class)?;
    let width = ds.active_num_attributes().ok_or(GerneError::HiddenAttributes)?;
    let uniform = vec![vec![1.0 / width as f64; width]; ds.num_classes()];
    let plan = BatchPlan::from_conditionals(&uniform, per_class)?;
    sample_from_plan(ds, &plan, BatchKind::Resampled, rng)
}

/// Weight of the majority-group loss in the SW comparator,
/// `w = (2 - c * (1 + beta)) / 2`.
pub fn sw_weight(c: f64, beta: f64) -> f64 {
    (2.0 - c * (1.0 + beta)) / 2.0
}

/// SW comparator batch for `K = A = 2`: per class `1 - c/2` of the samples
/// come from the majority group and `c/2` from the minority group; the
/// per-sample weights make the batch loss `w * L_A + (1 - w) * L_C`.
pub fn sample_sw_batch<R: Rng + ?Sized>(
    ds: &GroupedDataset,
    stats: &GroupStats,
    c: f64,
    beta: f64,
    per_class: usize,
    rng: &mut R,
) -> Result<Batch> {
    check_c(c)?;
    check_batch_size(per_class)?;
    check_shape(ds, stats)?;
    if stats.num_classes() != 2 || stats.num_attributes() != 2 {
        return Err(GerneError::InvalidArgument(
            "the SW comparator is defined for K = A = 2".into(),
        ));
    }
    let w = sw_weight(c, beta);
    if !(0.0..=1.0).contains(&w) {
        return Err(GerneError::InvalidArgument(format!(
            "SW weight {w} outside [0, 1] for c = {c}, beta = {beta}"
        )));
    }
    let split = allocate_counts(&[1.0 - c / 2.0, c / 2.0], per_class)?;
    let (n_major, n_minor) = (split[0], split[1]);
    if n_major == 0 || n_minor == 0 {
        return Err(GerneError::InvalidArgument(format!(
            "batch size {per_class} too small for an SW split at c = {c}"
        )));
    }
    let index = ds.group_index()?;
    let k = ds.num_classes() as f64;
    let mut indices = Vec::with_capacity(2 * per_class);
    let mut weights = Vec::with_capacity(2 * per_class);
    for (row, groups) in stats.alpha.iter().zip(index) {
        let major = if row[0] >= row[1] { 0 } else { 1 };
        draw_with_replacement(&groups[major], n_major, rng, &mut indices);
        weights.extend(std::iter::repeat_n(w / (n_major as f64 * k), n_major));
        draw_with_replacement(&groups[1 - major], n_minor, rng, &mut indices);
        weights.extend(std::iter::repeat_n((1.0 - w) / (n_minor as f64 * k), n_minor));
    }
    let mut batch = Batch::gather(ds, BatchKind::Sw, indices, true);
    batch.weights = Some(weights);
    Ok(batch)
}
