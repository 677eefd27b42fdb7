//! Label-noise models and injection: symmetric resampling and asymmetric
//! class-map/cycle noise, expressed through row-stochastic transition
//! matrices, with ground-truth bookkeeping for later clean/noisy breakdowns.

use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::Rng;

use crate::seeding;
use crate::{Error, Result};

/// Tolerance for transition-matrix row sums.
const ROW_SUM_TOL: f64 = 1e-12;

/// Which noise model to build the transition matrix from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NoiseKind {
    /// Labels resampled uniformly over all K classes with probability η
    /// (resampling may restore the true label).
    Symmetric,
    /// Specific class→class flips with probability η.
    AsymmetricMap,
    /// Labels cycled to the next class within ordered groups.
    AsymmetricCycle,
}

/// A noise model: kind, rate, kind-specific structure, and the injection
/// seed.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSpec {
    pub kind: NoiseKind,
    pub rate: f64,
    /// Source→target flips for [`NoiseKind::AsymmetricMap`].
    pub class_map: Vec<(usize, usize)>,
    /// Ordered class groups for [`NoiseKind::AsymmetricCycle`]; must
    /// partition 0..K.
    pub groups: Vec<Vec<usize>>,
    pub seed: u64,
}

impl NoiseSpec {
    pub fn symmetric(rate: f64, seed: u64) -> Self {
        Self { kind: NoiseKind::Symmetric, rate, class_map: Vec::new(), groups: Vec::new(), seed }
    }

    pub fn asymmetric_map(rate: f64, class_map: Vec<(usize, usize)>, seed: u64) -> Self {
        Self { kind: NoiseKind::AsymmetricMap, rate, class_map, groups: Vec::new(), seed }
    }

    pub fn asymmetric_cycle(rate: f64, groups: Vec<Vec<usize>>, seed: u64) -> Self {
        Self { kind: NoiseKind::AsymmetricCycle, rate, class_map: Vec::new(), groups, seed }
    }

    /// The K×K transition matrix this spec induces.
    pub fn transition(&self, k: usize) -> Result<TransitionMatrix> {
        match self.kind {
            NoiseKind::Symmetric => symmetric_transition(k, self.rate),
            NoiseKind::AsymmetricMap => asymmetric_map_transition(k, self.rate, &self.class_map),
            NoiseKind::AsymmetricCycle => asymmetric_cycle_transition(k, self.rate, &self.groups),
        }
    }
}

/// Row-stochastic K×K matrix: T[i][j] = P(observed = j | true = i).
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionMatrix {
    rows: Vec<Vec<f64>>,
}

impl TransitionMatrix {
    pub fn new(rows: Vec<Vec<f64>>) -> Result<Self> {
        let k = rows.len();
        if k < 2 {
            return Err(Error::InvalidParameter(format!(
                "transition matrix needs K >= 2, got {k}"
            )));
        }
        for (i, row) in rows.iter().enumerate() {
            if row.len() != k {
                return Err(Error::DimensionMismatch(format!(
                    "row {i} has {} entries in a {k}x{k} matrix",
                    row.len()
                )));
            }
            let mut sum = 0.0;
            for (j, &p) in row.iter().enumerate() {
                if !p.is_finite() || p < 0.0 {
                    return Err(Error::InvalidParameter(format!(
                        "T[{i}][{j}] = {p} is not a probability"
                    )));
                }
                sum += p;
            }
            if (sum - 1.0).abs() > ROW_SUM_TOL {
                return Err(Error::InvalidParameter(format!(
                    "row {i} sums to {sum}, outside 1 ± {ROW_SUM_TOL}"
                )));
            }
        }
        Ok(Self { rows })
    }

    pub fn k(&self) -> usize {
        self.rows.len()
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    /// One CSV row per matrix row, plain probabilities.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = BufWriter::new(std::fs::File::create(path)?);
        for row in &self.rows {
            let line: Vec<String> = row.iter().map(|v| format!("{v}")).collect();
            writeln!(out, "{}", line.join(","))?;
        }
        out.flush()?;
        Ok(())
    }
}

fn check_eta(eta: f64) -> Result<()> {
    if !eta.is_finite() || !(0.0..=1.0).contains(&eta) {
        return Err(Error::InvalidParameter(format!(
            "noise rate {eta}, outside [0, 1]"
        )));
    }
    Ok(())
}

/// T = (1−η)·I + (η/K)·ones. Resampling is over all labels, so the expected
/// flip fraction is η·(1 − 1/K), not η.
pub fn symmetric_transition(k: usize, eta: f64) -> Result<TransitionMatrix> {
    if k < 2 {
        return Err(Error::InvalidParameter(format!("K = {k}, need K >= 2")));
    }
    check_eta(eta)?;
    let off = eta / k as f64;
    let rows = (0..k)
        .map(|i| {
            (0..k)
                .map(|j| if i == j { 1.0 - eta + off } else { off })
                .collect()
        })
        .collect();
    TransitionMatrix::new(rows)
}

/// Mapped classes flip i→j with probability η; unmapped rows are identity.
pub fn asymmetric_map_transition(
    k: usize,
    eta: f64,
    class_map: &[(usize, usize)],
) -> Result<TransitionMatrix> {
    if k < 2 {
        return Err(Error::InvalidParameter(format!("K = {k}, need K >= 2")));
    }
    check_eta(eta)?;
    let mut seen = vec![false; k];
    for &(i, j) in class_map {
        if i >= k || j >= k {
            return Err(Error::InvalidParameter(format!(
                "class map entry {i}->{j} out of range for K = {k}"
            )));
        }
        if i == j {
            return Err(Error::InvalidParameter(format!("self-map {i}->{i}")));
        }
        if seen[i] {
            return Err(Error::InvalidParameter(format!(
                "class {i} mapped more than once"
            )));
        }
        seen[i] = true;
    }
    let mut rows: Vec<Vec<f64>> = (0..k)
        .map(|i| (0..k).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
        .collect();
    for &(i, j) in class_map {
        rows[i][i] = 1.0 - eta;
        rows[i][j] = eta;
    }
    TransitionMatrix::new(rows)
}

/// Within each ordered group (c_0..c_{g−1}), class c_t flips to
/// c_{(t+1) mod g} with probability η. Groups must partition 0..K with every
/// group of size ≥ 2.
pub fn asymmetric_cycle_transition(
    k: usize,
    eta: f64,
    groups: &[Vec<usize>],
) -> Result<TransitionMatrix> {
    if k < 2 {
        return Err(Error::InvalidParameter(format!("K = {k}, need K >= 2")));
    }
    check_eta(eta)?;
    let mut seen = vec![false; k];
    for group in groups {
        if group.len() < 2 {
            return Err(Error::InvalidParameter(format!(
                "cycle group {group:?} has fewer than 2 classes"
            )));
        }
        for &c in group {
            if c >= k {
                return Err(Error::InvalidParameter(format!(
                    "class {c} out of range for K = {k}"
                )));
            }
            if seen[c] {
                return Err(Error::InvalidParameter(format!(
                    "class {c} appears in more than one group"
                )));
            }
            seen[c] = true;
        }
    }
    if let Some(missing) = seen.iter().position(|&s| !s) {
        return Err(Error::InvalidParameter(format!(
            "groups do not cover class {missing}"
        )));
    }
    let mut rows: Vec<Vec<f64>> = (0..k)
        .map(|i| (0..k).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
        .collect();
    for group in groups {
        for (t, &c) in group.iter().enumerate() {
            let next = group[(t + 1) % group.len()];
            rows[c][c] = 1.0 - eta;
            rows[c][next] += eta;
        }
    }
    TransitionMatrix::new(rows)
}

/// One training example with ground-truth bookkeeping.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub features: Vec<f64>,
    pub observed_label: usize,
    pub true_label: usize,
    pub is_noisy: bool,
}

/// A dataset whose labels may have been noise-injected. The invariant
/// `is_noisy == (observed != true)` holds for every example.
#[derive(Debug, Clone, PartialEq)]
pub struct NoisyDataset {
    pub examples: Vec<Example>,
    pub n_classes: usize,
}

impl NoisyDataset {
    /// Wrap clean features/labels: observed = true, nothing flagged.
    pub fn from_clean(features: Vec<Vec<f64>>, labels: Vec<usize>, n_classes: usize) -> Result<Self> {
        if features.len() != labels.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} feature rows but {} labels",
                features.len(),
                labels.len()
            )));
        }
        if features.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let dim = features[0].len();
        let mut examples = Vec::with_capacity(features.len());
        for (x, &y) in features.iter().zip(&labels) {
            if x.len() != dim {
                return Err(Error::DimensionMismatch("ragged feature rows".into()));
            }
            if y >= n_classes {
                return Err(Error::InvalidParameter(format!(
                    "label {y} out of range for K = {n_classes}"
                )));
            }
            examples.push(Example {
                features: x.clone(),
                observed_label: y,
                true_label: y,
                is_noisy: false,
            });
        }
        Ok(Self { examples, n_classes })
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.examples.first().map_or(0, |e| e.features.len())
    }

    /// Replace observed labels by draws from the transition matrix (row of
    /// each example's true label), setting flags. Deterministic in the seed.
    pub fn inject(&mut self, t: &TransitionMatrix, seed: u64) -> Result<()> {
        if t.k() != self.n_classes {
            return Err(Error::DimensionMismatch(format!(
                "transition matrix is {}x{} but dataset has {} classes",
                t.k(),
                t.k(),
                self.n_classes
            )));
        }
        let true_labels: Vec<usize> = self.examples.iter().map(|e| e.true_label).collect();
        let (observed, flags) = inject_noise(&true_labels, t, seed)?;
        for (e, (obs, flag)) in self.examples.iter_mut().zip(observed.into_iter().zip(flags)) {
            e.observed_label = obs;
            e.is_noisy = flag;
        }
        Ok(())
    }

    /// Dataset CSV: `feat_0..feat_{d−1},observed_label,true_label,is_noisy`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = BufWriter::new(std::fs::File::create(path)?);
        let dim = self.dim();
        let mut header: Vec<String> = (0..dim).map(|i| format!("feat_{i}")).collect();
        header.extend(["observed_label".into(), "true_label".into(), "is_noisy".into()]);
        writeln!(out, "{}", header.join(","))?;
        for e in &self.examples {
            let mut fields: Vec<String> = e.features.iter().map(|v| format!("{v}")).collect();
            fields.push(e.observed_label.to_string());
            fields.push(e.true_label.to_string());
            fields.push(if e.is_noisy { "1".into() } else { "0".into() });
            writeln!(out, "{}", fields.join(","))?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let reader = BufReader::new(std::fs::File::open(path)?);
        let mut lines = reader.lines().enumerate();
        let (_, header) = lines
            .next()
            .ok_or_else(|| Error::Parse { line: 1, msg: "empty file".into() })?;
        let header = header?;
        let cols: Vec<&str> = header.split(',').collect();
        if cols.len() < 4 || cols[cols.len() - 3..] != ["observed_label", "true_label", "is_noisy"]
        {
            return Err(Error::Parse {
                line: 1,
                msg: "expected feat_*,observed_label,true_label,is_noisy header".into(),
            });
        }
        let dim = cols.len() - 3;
        let mut examples = Vec::new();
        let mut max_label = 0usize;
        for (idx, line) in lines {
            let line = line?;
            if line.is_empty() {
                continue;
            }
            let lineno = idx + 1;
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != dim + 3 {
                return Err(Error::Parse {
                    line: lineno,
                    msg: format!("expected {} fields, got {}", dim + 3, fields.len()),
                });
            }
            let mut features = Vec::with_capacity(dim);
            for f in &fields[..dim] {
                features.push(f.parse::<f64>().map_err(|e| Error::Parse {
                    line: lineno,
                    msg: format!("bad feature value {f:?}: {e}"),
                })?);
            }
            let observed: usize = fields[dim].parse().map_err(|e| Error::Parse {
                line: lineno,
                msg: format!("bad observed label: {e}"),
            })?;
            let truth: usize = fields[dim + 1].parse().map_err(|e| Error::Parse {
                line: lineno,
                msg: format!("bad true label: {e}"),
            })?;
            let is_noisy = match fields[dim + 2] {
                "0" => false,
                "1" => true,
                other => {
                    return Err(Error::Parse {
                        line: lineno,
                        msg: format!("bad is_noisy flag {other:?}"),
                    })
                }
            };
            if is_noisy != (observed != truth) {
                return Err(Error::Parse {
                    line: lineno,
                    msg: "is_noisy flag contradicts the labels".into(),
                });
            }
            max_label = max_label.max(observed).max(truth);
            examples.push(Example { features, observed_label: observed, true_label: truth, is_noisy });
        }
        if examples.is_empty() {
            return Err(Error::EmptyDataset);
        }
        Ok(Self { examples, n_classes: max_label + 1 })
    }
}

/// Draw an observed label for each true label from the matching transition
/// row; the flag records whether the label actually changed.
pub fn inject_noise(
    true_labels: &[usize],
    t: &TransitionMatrix,
    seed: u64,
) -> Result<(Vec<usize>, Vec<bool>)> {
    let k = t.k();
    for &y in true_labels {
        if y >= k {
            return Err(Error::InvalidParameter(format!(
                "label {y} out of range for K = {k}"
            )));
        }
    }
    let mut rng = seeding::rng(seed);
    let mut observed = Vec::with_capacity(true_labels.len());
    let mut flags = Vec::with_capacity(true_labels.len());
    for &y in true_labels {
        let row = &t.rows()[y];
        let u: f64 = rng.random_range(0.0..1.0);
        let mut acc = 0.0;
        let mut drawn = k - 1;
        for (j, &p) in row.iter().enumerate() {
            acc += p;
            if u < acc {
                drawn = j;
                break;
            }
        }
        observed.push(drawn);
        flags.push(drawn != y);
    }
    Ok((observed, flags))
}

/// Flip-rate summary: overall and per true class.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseStats {
    pub total: usize,
    pub flipped: usize,
    pub overall_fraction: f64,
    /// Per class: (examples with this true label, flipped among them, fraction).
    pub per_class: Vec<(usize, usize, f64)>,
}

pub fn noise_stats(dataset: &NoisyDataset) -> NoiseStats {
    let k = dataset.n_classes;
    let mut per = vec![(0usize, 0usize); k];
    let mut flipped = 0usize;
    for e in &dataset.examples {
        per[e.true_label].0 += 1;
        if e.is_noisy {
            per[e.true_label].1 += 1;
            flipped += 1;
        }
    }
    let total = dataset.len();
    NoiseStats {
        total,
        flipped,
        overall_fraction: if total == 0 { 0.0 } else { flipped as f64 / total as f64 },
        per_class: per
            .into_iter()
            .map(|(n, f)| (n, f, if n == 0 { 0.0 } else { f as f64 / n as f64 }))
            .collect(),
    }
}
