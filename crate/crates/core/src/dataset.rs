//! Grouped datasets: samples indexed by class label `y` and attribute `a`.
//!
//! Labels and attributes are 0-based in memory and 1-based on disk.

use std::path::Path;

use ndarray::{Array2, ArrayView1, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{GerneError, Result};
use crate::pseudoattr::PseudoGrouping;
use crate::rng::{self, Stream};
use crate::sampling::allocate_counts;

/// Which attribute assignment drives group-aware sampling.
#[derive(Debug, Clone, PartialEq)]
enum Grouping {
    /// No attribute information may be used: groups are classes only.
    ClassOnly,
    /// True attributes are visible.
    True,
    /// Pseudo attributes (two per class) replace the true ones.
    Pseudo(Vec<usize>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroupedDataset {
    features: Array2<f64>,
    labels: Vec<usize>,
    /// True attributes when known at all (possibly hidden from training).
    attributes: Option<Vec<usize>>,
    num_classes: usize,
    num_attributes: usize,
    grouping: Grouping,
    class_index: Vec<Vec<usize>>,
    /// `group_index[y][a]` for the active grouping; empty for `ClassOnly`.
    group_index: Vec<Vec<Vec<usize>>>,
}

impl GroupedDataset {
    /// Builds a dataset with visible attributes (when given).
    pub fn new(
        features: Array2<f64>,
        labels: Vec<usize>,
        attributes: Option<Vec<usize>>,
        num_classes: usize,
        num_attributes: usize,
    ) -> Result<Self> {
        let n = features.nrows();
        if labels.len() != n {
            return Err(GerneError::InvalidArgument(format!(
                "{} labels for {n} samples",
                labels.len()
            )));
        }
        if num_classes == 0 || num_attributes == 0 {
            return Err(GerneError::InvalidArgument(
                "need at least one class and one attribute".into(),
            ));
        }
        if let Some(&y) = labels.iter().find(|&&y| y >= num_classes) {
            return Err(GerneError::InvalidArgument(format!(
                "label {} out of range 1..={num_classes}",
                y + 1
            )));
        }
        if let Some(attrs) = &attributes {
            if attrs.len() != n {
                return Err(GerneError::InvalidArgument(format!(
                    "{} attributes for {n} samples",
                    attrs.len()
                )));
            }
            if let Some(&a) = attrs.iter().find(|&&a| a >= num_attributes) {
                return Err(GerneError::InvalidArgument(format!(
                    "attribute {} out of range 1..={num_attributes}",
                    a + 1
                )));
            }
        }
        let mut class_index = vec![Vec::new(); num_classes];
        for (i, &y) in labels.iter().enumerate() {
            class_index[y].push(i);
        }
        if let Some(y) = class_index.iter().position(Vec::is_empty) {
            return Err(GerneError::EmptyClass(y + 1));
        }
        let grouping = if attributes.is_some() {
            Grouping::True
        } else {
            Grouping::ClassOnly
        };
        let mut ds = Self {
            features,
            labels,
            attributes,
            num_classes,
            num_attributes,
            grouping,
            class_index,
            group_index: Vec::new(),
        };
        ds.rebuild_group_index();
        Ok(ds)
    }

    fn rebuild_group_index(&mut self) {
        let (assign, width): (&[usize], usize) = match &self.grouping {
            Grouping::ClassOnly => {
                self.group_index.clear();
                return;
            }
            Grouping::True => (
                self.attributes.as_deref().expect("true grouping without attributes"),
                self.num_attributes,
            ),
            Grouping::Pseudo(p) => (p, 2),
        };
        let mut index = vec![vec![Vec::new(); width]; self.num_classes];
        for (i, (&y, &a)) in self.labels.iter().zip(assign).enumerate() {
            index[y][a].push(i);
        }
        self.group_index = index;
    }

    /// Marks attributes hidden: sampling sees classes only, but the true
    /// attributes stay available for evaluation.
    pub fn hide_attributes(mut self) -> Self {
        self.grouping = Grouping::ClassOnly;
        self.rebuild_group_index();
        self
    }

    /// Copy with the true attributes discarded entirely, so evaluation
    /// cannot see them either.
    pub fn without_attributes(&self) -> Self {
        let mut ds = self.clone();
        ds.attributes = None;
        ds.grouping = Grouping::ClassOnly;
        ds.rebuild_group_index();
        ds
    }

    /// Copy of this dataset whose active grouping is the given pseudo split.
    pub fn with_pseudo_attributes(&self, grouping: &PseudoGrouping) -> Result<Self> {
        if grouping.assignment.len() != self.len() {
            return Err(GerneError::InvalidArgument(format!(
                "pseudo-grouping covers {} samples, dataset has {}",
                grouping.assignment.len(),
                self.len()
            )));
        }
        let mut ds = self.clone();
        ds.grouping = Grouping::Pseudo(grouping.assignment.clone());
        ds.rebuild_group_index();
        Ok(ds)
    }

    /// Rows `indices` as a new dataset with the same grouping mode.
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        let features = self.features.select(Axis(0), indices);
        let labels = indices.iter().map(|&i| self.labels[i]).collect();
        let attributes = self
            .attributes
            .as_ref()
            .map(|a| indices.iter().map(|&i| a[i]).collect());
        let mut ds = Self::new(features, labels, attributes, self.num_classes, self.num_attributes)?;
        match &self.grouping {
            Grouping::True => {}
            Grouping::ClassOnly => ds = ds.hide_attributes(),
            Grouping::Pseudo(p) => {
                ds.grouping = Grouping::Pseudo(indices.iter().map(|&i| p[i]).collect());
                ds.rebuild_group_index();
            }
        }
        Ok(ds)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    /// Number of true attribute values `A`.
    pub fn num_attributes(&self) -> usize {
        self.num_attributes
    }

    /// Width of the active grouping: `A` for true attributes, 2 for pseudo.
    pub fn active_num_attributes(&self) -> Option<usize> {
        match self.grouping {
            Grouping::ClassOnly => None,
            Grouping::True => Some(self.num_attributes),
            Grouping::Pseudo(_) => Some(2),
        }
    }

    pub fn features(&self) -> ArrayView2<'_, f64> {
        self.features.view()
    }

    pub fn row(&self, i: usize) -> ArrayView1<'_, f64> {
        self.features.row(i)
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    /// True attributes, regardless of whether they are hidden from training.
    pub fn true_attributes(&self) -> Option<&[usize]> {
        self.attributes.as_deref()
    }

    /// Attributes usable for group-aware sampling (true or pseudo).
    pub fn active_attributes(&self) -> Option<&[usize]> {
        match &self.grouping {
            Grouping::ClassOnly => None,
            Grouping::True => self.attributes.as_deref(),
            Grouping::Pseudo(p) => Some(p),
        }
    }

    pub fn attributes_hidden(&self) -> bool {
        self.grouping == Grouping::ClassOnly
    }

    pub fn is_pseudo(&self) -> bool {
        matches!(self.grouping, Grouping::Pseudo(_))
    }

    pub fn class_index(&self) -> &[Vec<usize>] {
        &self.class_index
    }

    /// `X_{y,a}` for the active grouping.
    pub fn group_index(&self) -> Result<&[Vec<Vec<usize>>]> {
        match self.grouping {
            Grouping::ClassOnly => Err(GerneError::HiddenAttributes),
            _ => Ok(&self.group_index),
        }
    }

    /// Group index over the true attributes, for evaluation.
    pub fn true_group_index(&self) -> Option<Vec<Vec<Vec<usize>>>> {
        let attrs = self.attributes.as_ref()?;
        let mut index = vec![vec![Vec::new(); self.num_attributes]; self.num_classes];
        for (i, (&y, &a)) in self.labels.iter().zip(attrs).enumerate() {
            index[y][a].push(i);
        }
        Some(index)
    }
}

/// Within-class attribute frequencies `alpha[y][a] = |X_{y,a}| / |X_y|`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupStats {
    pub alpha: Vec<Vec<f64>>,
    pub group_sizes: Vec<Vec<usize>>,
    pub class_sizes: Vec<usize>,
}

impl GroupStats {
    /// Stats from integer group sizes; every group must be non-empty.
    pub fn from_sizes(group_sizes: Vec<Vec<usize>>) -> Result<Self> {
        if group_sizes.is_empty() || group_sizes[0].is_empty() {
            return Err(GerneError::InvalidArgument("empty group-size matrix".into()));
        }
        let width = group_sizes[0].len();
        let mut class_sizes = Vec::with_capacity(group_sizes.len());
        let mut alpha = Vec::with_capacity(group_sizes.len());
        for (y, row) in group_sizes.iter().enumerate() {
            if row.len() != width {
                return Err(GerneError::InvalidArgument("ragged group-size matrix".into()));
            }
            if let Some(a) = row.iter().position(|&n| n == 0) {
                return Err(GerneError::EmptyGroup {
                    class: y + 1,
                    attribute: a + 1,
                });
            }
            let total: usize = row.iter().sum();
            class_sizes.push(total);
            alpha.push(row.iter().map(|&n| n as f64 / total as f64).collect());
        }
        Ok(Self {
            alpha,
            group_sizes,
            class_sizes,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.alpha.len()
    }

    pub fn num_attributes(&self) -> usize {
        self.alpha[0].len()
    }
}

/// Group statistics of the active grouping (true or pseudo attributes).
pub fn compute_group_stats(ds: &GroupedDataset) -> Result<GroupStats> {
    let index = ds.group_index()?;
    GroupStats::from_sizes(
        index
            .iter()
            .map(|row| row.iter().map(Vec::len).collect())
            .collect(),
    )
}

/// Geometry and group ratios of a synthetic biased dataset.
///
/// Features live in `d >= K + A` dimensions. Coordinates `0..K` carry the
/// class signal (class `y` has mean `core_separation / sqrt(2)` on axis `y`,
/// so any two class means are `core_separation` apart), coordinates
/// `K..K+A` carry the attribute signal in the same way with
/// `spurious_separation`, and the rest is pure noise. Every coordinate gets
/// independent `N(0, noise_std^2)` noise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub num_classes: usize,
    pub num_attributes: usize,
    pub dim: usize,
    pub alpha_target: Vec<Vec<f64>>,
    pub n_per_class: usize,
    pub core_separation: f64,
    pub spurious_separation: f64,
    pub noise_std: f64,
    pub seed: u64,
}

impl SyntheticSpec {
    /// `K = A` classes/attributes with `1 - minority_ratio` of each class on
    /// its aligned attribute and the rest spread evenly over the others.
    pub fn aligned(
        k: usize,
        minority_ratio: f64,
        n_per_class: usize,
        dim: usize,
        seed: u64,
    ) -> Self {
        let off = if k > 1 {
            minority_ratio / (k - 1) as f64
        } else {
            0.0
        };
        let alpha_target = (0..k)
            .map(|y| {
                (0..k)
                    .map(|a| if a == y { 1.0 - minority_ratio } else { off })
                    .collect()
            })
            .collect();
        Self {
            num_classes: k,
            num_attributes: k,
            dim,
            alpha_target,
            n_per_class,
            core_separation: 2.0,
            spurious_separation: 5.0,
            noise_std: 1.0,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(GerneError::InvalidSpec(m));
        if self.num_classes == 0 || self.num_attributes == 0 {
            return bad("K and A must be positive".into());
        }
        if self.dim < self.num_classes + self.num_attributes {
            return bad(format!(
                "dim {} < K + A = {}",
                self.dim,
                self.num_classes + self.num_attributes
            ));
        }
        if self.n_per_class == 0 {
            return bad("n_per_class must be positive".into());
        }
        if !(self.noise_std > 0.0) {
            return bad("noise_std must be positive".into());
        }
        if self.alpha_target.len() != self.num_classes {
            return bad("alpha_target must have K rows".into());
        }
        for (y, row) in self.alpha_target.iter().enumerate() {
            if row.len() != self.num_attributes {
                return bad(format!("alpha_target row {} must have A entries", y + 1));
            }
            if row.iter().any(|&p| !(p > 0.0) || !p.is_finite()) {
                return bad(format!("alpha_target row {} has a non-positive entry", y + 1));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > 1e-9 {
                return bad(format!("alpha_target row {} sums to {sum}", y + 1));
            }
        }
        Ok(())
    }

    /// Per-group sample counts after largest-remainder apportionment.
    pub fn group_counts(&self) -> Result<Vec<Vec<usize>>> {
        self.validate()?;
        let mut counts = Vec::with_capacity(self.num_classes);
        for (y, row) in self.alpha_target.iter().enumerate() {
            let c = allocate_counts(row, self.n_per_class)?;
            if let Some(a) = c.iter().position(|&n| n == 0) {
                return Err(GerneError::EmptyGroup {
                    class: y + 1,
                    attribute: a + 1,
                });
            }
            counts.push(c);
        }
        Ok(counts)
    }
}

/// Samples a synthetic dataset; samples are laid out class-major, then by
/// attribute. Identical specs give bit-identical datasets.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<GroupedDataset> {
    generate_synthetic_from(spec, Stream::Data)
}

/// [`generate_synthetic`] drawing from another stream of `spec.seed`; used
/// for validation and test sets that share the geometry of the training set.
pub fn generate_synthetic_from(spec: &SyntheticSpec, which: Stream) -> Result<GroupedDataset> {
    let counts = spec.group_counts()?;
    let (k, a_count) = (spec.num_classes, spec.num_attributes);
    let n = k * spec.n_per_class;
    let core = spec.core_separation / std::f64::consts::SQRT_2;
    let spur = spec.spurious_separation / std::f64::consts::SQRT_2;
    let mut rng = rng::stream(spec.seed, which);

    let mut features = Array2::<f64>::zeros((n, spec.dim));
    let mut labels = Vec::with_capacity(n);
    let mut attributes = Vec::with_capacity(n);
    let mut i = 0;
    for (y, row) in counts.iter().enumerate() {
        for (a, &count) in row.iter().enumerate() {
            for _ in 0..count {
                let mut x = features.row_mut(i);
                for v in x.iter_mut() {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    *v = spec.noise_std * z;
                }
                x[y] += core;
                x[k + a] += spur;
                labels.push(y);
                attributes.push(a);
                i += 1;
            }
        }
    }
    GroupedDataset::new(features, labels, Some(attributes), k, a_count)
}

/// Writes the dataset in the CSV exchange format. Attributes are written as
/// `-1` when the dataset has no true attributes.
pub fn write_csv(ds: &GroupedDataset, path: impl AsRef<Path>) -> Result<()> {
    let mut w = csv::Writer::from_path(path.as_ref())?;
    let mut header: Vec<String> = (0..ds.dim()).map(|j| format!("f{j}")).collect();
    header.push("label".into());
    header.push("attribute".into());
    w.write_record(&header)?;
    let attrs = ds.true_attributes();
    let mut record = Vec::with_capacity(ds.dim() + 2);
    for i in 0..ds.len() {
        record.clear();
        // `{}` on f64 prints the shortest string that parses back exactly.
        record.extend(ds.row(i).iter().map(|v| v.to_string()));
        record.push((ds.labels[i] + 1).to_string());
        record.push(match attrs {
            Some(a) => (a[i] + 1).to_string(),
            None => "-1".into(),
        });
        w.write_record(&record)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a CSV dataset, inferring `K` and `A` from the largest ids present.
pub fn load_csv(path: impl AsRef<Path>, has_attributes: bool) -> Result<GroupedDataset> {
    load_csv_with_shape(path, has_attributes, None, None)
}

/// Reads a CSV dataset with an optional fixed `K` / `A` (for eval files that
/// may not contain every attribute value).
pub fn load_csv_with_shape(
    path: impl AsRef<Path>,
    has_attributes: bool,
    num_classes: Option<usize>,
    num_attributes: Option<usize>,
) -> Result<GroupedDataset> {
    let path = path.as_ref();
    let schema = |message: String| GerneError::Schema {
        path: path.to_path_buf(),
        message,
    };
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)?;
    let headers = reader.headers()?.clone();
    let cols: Vec<&str> = headers.iter().collect();
    let label_col = cols
        .iter()
        .position(|&c| c == "label")
        .ok_or_else(|| schema("missing `label` column".into()))?;
    let attr_col = cols.iter().position(|&c| c == "attribute");
    if has_attributes && attr_col.is_none() {
        return Err(schema("missing `attribute` column".into()));
    }
    let dim = label_col;
    for (j, &c) in cols[..dim].iter().enumerate() {
        if c != format!("f{j}") {
            return Err(schema(format!("expected column `f{j}`, found `{c}`")));
        }
    }
    let expected_cols = dim + 1 + usize::from(attr_col.is_some());
    if cols.len() != expected_cols || attr_col.is_some_and(|c| c != dim + 1) {
        return Err(schema(
            "header must be `f0,...,f{d-1},label[,attribute]`".into(),
        ));
    }

    let mut values = Vec::new();
    let mut labels = Vec::new();
    let mut raw_attrs: Vec<i64> = Vec::new();
    for (row, record) in reader.records().enumerate() {
        let record = record?;
        let line = record.position().map_or(row as u64 + 2, |p| p.line());
        let malformed = |message: String| GerneError::MalformedRow {
            path: path.to_path_buf(),
            line,
            message,
        };
        if record.len() != expected_cols {
            return Err(malformed(format!(
                "{} fields, expected {expected_cols}",
                record.len()
            )));
        }
        for j in 0..dim {
            let v: f64 = record[j]
                .parse()
                .map_err(|_| malformed(format!("f{j} = `{}` is not a number", &record[j])))?;
            values.push(v);
        }
        let label: i64 = record[dim]
            .parse()
            .map_err(|_| malformed(format!("label `{}` is not an integer", &record[dim])))?;
        if label < 1 || num_classes.is_some_and(|k| label as usize > k) {
            return Err(malformed(format!("label {label} out of range")));
        }
        labels.push(label as usize - 1);
        if let Some(c) = attr_col {
            let attr: i64 = record[c]
                .parse()
                .map_err(|_| malformed(format!("attribute `{}` is not an integer", &record[c])))?;
            let in_range = attr >= 1 && num_attributes.is_none_or(|a| attr as usize <= a);
            if !(in_range || (attr == -1 && !has_attributes)) {
                return Err(malformed(format!("attribute {attr} out of range")));
            }
            raw_attrs.push(attr);
        }
    }
    if labels.is_empty() {
        return Err(schema("no data rows".into()));
    }
    let n = labels.len();
    let features = Array2::from_shape_vec((n, dim), values)
        .map_err(|e| schema(format!("feature matrix: {e}")))?;
    let k = num_classes.unwrap_or_else(|| labels.iter().max().unwrap() + 1);
    let attributes: Option<Vec<usize>> =
        if attr_col.is_some() && raw_attrs.iter().all(|&a| a >= 1) {
            Some(raw_attrs.iter().map(|&a| a as usize - 1).collect())
        } else {
            None
        };
    let a = num_attributes
        .or_else(|| attributes.as_ref().map(|v| v.iter().max().unwrap() + 1))
        .unwrap_or(1);
    let ds = GroupedDataset::new(features, labels, attributes, k, a)?;
    Ok(if has_attributes { ds } else { ds.hide_attributes() })
}

/// Stratified train/val/test split.
///
/// Strata are true groups when true attributes exist, otherwise classes.
/// Each stratum is shuffled with the split stream of `seed` and cut by
/// largest-remainder apportionment of `fractions`, so per-stratum proportions
/// are within one sample of the requested ones.
pub fn split(
    ds: &GroupedDataset,
    fractions: [f64; 3],
    seed: u64,
) -> Result<(GroupedDataset, GroupedDataset, GroupedDataset)> {
    if fractions.iter().any(|&f| !(f > 0.0)) || (fractions.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(GerneError::InvalidArgument(format!(
            "split fractions {fractions:?} must be positive and sum to 1"
        )));
    }
    let strata: Vec<(usize, usize, Vec<usize>)> = match ds.true_group_index() {
        Some(index) => index
            .into_iter()
            .enumerate()
            .flat_map(|(y, row)| {
                row.into_iter()
                    .enumerate()
                    .map(move |(a, members)| (y, a, members))
            })
            .collect(),
        None => ds
            .class_index
            .iter()
            .enumerate()
            .map(|(y, members)| (y, 0, members.clone()))
            .collect(),
    };
    let mut rng = rng::stream(seed, Stream::Split);
    let mut parts: [Vec<usize>; 3] = Default::default();
    for (y, a, mut members) in strata {
        if members.is_empty() {
            continue;
        }
        members.shuffle(&mut rng);
        let counts = allocate_counts(&fractions, members.len())?;
        if counts[0] == 0 {
            return Err(GerneError::GroupTooSmall {
                class: y + 1,
                attribute: a + 1,
                size: members.len(),
            });
        }
        let mut start = 0;
        for (part, &count) in parts.iter_mut().zip(&counts) {
            part.extend_from_slice(&members[start..start + count]);
            start += count;
        }
    }
    for part in parts.iter_mut() {
        part.sort_unstable();
    }
    Ok((
        ds.subset(&parts[0])?,
        ds.subset(&parts[1])?,
        ds.subset(&parts[2])?,
    ))
}

/// Draws `n` indices uniformly with replacement from `pool`.
pub(crate) fn draw_with_replacement<R: Rng + ?Sized>(
    pool: &[usize],
    n: usize,
    rng: &mut R,
    out: &mut Vec<usize>,
) {
    out.extend((0..n).map(|_| pool[rng.random_range(0..pool.len())]));
}
