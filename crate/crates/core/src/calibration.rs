//! Latent-space feature calibration.
//!
//! New training vectors are produced by moving an existing sample part of the
//! way toward (or away from) the mean of a nearby common class, with a random
//! per-channel intensity `omega` in `[-1, 1]`:
//!
//! ```text
//! x_new = x + omega * (mu - x)        (elementwise)
//! ```
//!
//! Rare classes are calibrated against the `k` nearest common-class centers;
//! common classes are calibrated the same way against common centers that may
//! include their own. Both views (plain and augmented) are processed, each
//! against the statistics of its own view.
//!
//! Every generated row draws from its own RNG stream keyed by
//! `(seed, class, view, replicate)`, so the output does not depend on thread
//! count or processing order.

use std::collections::BTreeSet;
use std::fmt;
use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{EmbeddingDataset, View};
use crate::error::{Error, Result};
use crate::stats::{
    compute_class_stats, partition_by_frequency, ClassStats, CovMode, FrequencyPartition,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CalibrationConfig {
    /// Classes with more than `eta` training rows are common.
    pub eta: usize,
    /// Number of nearest common centers to choose from.
    pub k: usize,
    /// Generated rows per rare class, per view.
    pub n_rare: usize,
    /// Generated rows per common class, per view.
    pub n_com: usize,
    pub seed: u64,
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        CalibrationConfig {
            eta: 400,
            k: 2,
            n_rare: 100,
            n_com: 50,
            seed: 0,
        }
    }
}

impl CalibrationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::config("k: must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CenterKind {
    /// Rare anchor, common centers.
    RareCommon,
    /// Common anchor, common centers including its own class.
    SelfAugment,
}

/// The `k` common classes whose means are closest to an anchor, nearest first.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CenterSet {
    pub center_ids: Vec<usize>,
    pub kind: CenterKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Provenance {
    OriginalPlain,
    OriginalAug,
    GeneratedRarePlain,
    GeneratedRareAug,
    GeneratedCommonPlain,
    GeneratedCommonAug,
}

impl Provenance {
    pub fn as_str(self) -> &'static str {
        match self {
            Provenance::OriginalPlain => "original_plain",
            Provenance::OriginalAug => "original_aug",
            Provenance::GeneratedRarePlain => "generated_rare_plain",
            Provenance::GeneratedRareAug => "generated_rare_aug",
            Provenance::GeneratedCommonPlain => "generated_common_plain",
            Provenance::GeneratedCommonAug => "generated_common_aug",
        }
    }

    pub fn is_generated(self) -> bool {
        !matches!(self, Provenance::OriginalPlain | Provenance::OriginalAug)
    }

    fn generated(kind: CenterKind, view: View) -> Self {
        match (kind, view) {
            (CenterKind::RareCommon, View::Plain) => Provenance::GeneratedRarePlain,
            (CenterKind::RareCommon, View::AugmentedView) => Provenance::GeneratedRareAug,
            (CenterKind::SelfAugment, View::Plain) => Provenance::GeneratedCommonPlain,
            (CenterKind::SelfAugment, View::AugmentedView) => Provenance::GeneratedCommonAug,
        }
    }
}

impl fmt::Display for Provenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Where a calibrated row came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RowOrigin {
    pub tag: Provenance,
    /// Row index in the source view dataset (the row itself for originals,
    /// the anchor for generated rows).
    pub anchor_index: usize,
    pub center_class: Option<usize>,
    pub replicate: Option<usize>,
}

/// One generated feature vector with everything needed to replay it.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedRow {
    pub class_id: usize,
    pub view: View,
    pub replicate: usize,
    pub kind: CenterKind,
    pub anchor_index: usize,
    pub center_class: usize,
    pub values: Vec<f32>,
}

/// Training rows after calibration together with their provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibratedSet {
    pub data: EmbeddingDataset,
    pub origins: Vec<RowOrigin>,
}

impl CalibratedSet {
    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn write_provenance_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut buf = Vec::new();
        writeln!(buf, "row_index,tag,anchor_index,center_class").unwrap();
        for (i, o) in self.origins.iter().enumerate() {
            let center = o.center_class.map(|c| c.to_string()).unwrap_or_default();
            writeln!(buf, "{i},{},{},{center}", o.tag, o.anchor_index).unwrap();
        }
        std::fs::write(path, buf).map_err(|e| Error::io(path, e))
    }
}

/// Domain tags keep RNG streams of different consumers apart.
pub(crate) mod stream {
    pub const CALIBRATION: u64 = 0xCA1B;
    pub const SYNTH: u64 = 0x5EED;
    pub const TRAIN_INIT: u64 = 0x1417;
    pub const TRAIN_SHUFFLE: u64 = 0x5AFF;
}

/// Counter-style stream derivation: the ChaCha key is the concatenation of the
/// four words, so distinct tuples never share a stream.
pub(crate) fn derive_rng(seed: u64, domain: u64, a: u64, b: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&domain.to_le_bytes());
    key[16..24].copy_from_slice(&a.to_le_bytes());
    key[24..].copy_from_slice(&b.to_le_bytes());
    ChaCha8Rng::from_seed(key)
}

fn generation_rng(seed: u64, class_id: usize, view: View, replicate: usize) -> ChaCha8Rng {
    let a = ((class_id as u64) << 8) | view.as_byte() as u64;
    derive_rng(seed, stream::CALIBRATION, a, replicate as u64)
}

/// Clamps raw Gaussian draws into `[-1, 1]`.
pub fn clamp_omega(raw: &[f64]) -> Vec<f32> {
    raw.iter().map(|&r| r.clamp(-1.0, 1.0) as f32).collect()
}

/// Per-channel standard-normal draws clamped to `[-1, 1]`.
pub fn sample_omega<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> Vec<f32> {
    let raw: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
    clamp_omega(&raw)
}

/// `x + omega * (mu - x)`, elementwise.
///
/// Arithmetic is done in f64 on the f32 inputs, and the result is rounded to
/// f32 toward the anchor, so `|out_j - x_j| <= |mu_j - x_j|` holds exactly for
/// every `|omega_j| <= 1`. `omega = 0` returns `x` and `omega = 1` returns `mu`
/// bit for bit.
pub fn calibrate_sample(x: &[f32], mu: &[f32], omega: &[f32]) -> Result<Vec<f32>> {
    if x.len() != mu.len() || x.len() != omega.len() {
        return Err(Error::validation(format!(
            "dimension mismatch: x {}, mu {}, omega {}",
            x.len(),
            mu.len(),
            omega.len()
        )));
    }
    Ok(x.iter()
        .zip(mu)
        .zip(omega)
        .map(|((&x, &m), &w)| calibrate_channel(x, m, w))
        .collect())
}

fn calibrate_channel(x: f32, mu: f32, omega: f32) -> f32 {
    let xd = x as f64;
    let diff = mu as f64 - xd;
    let exact = xd + omega as f64 * diff;
    let mut out = exact as f32;
    while (out as f64 - xd).abs() > diff.abs() {
        out = step_toward(out, x);
    }
    out
}

/// The neighbouring f32 of `v` in the direction of `target`.
fn step_toward(v: f32, target: f32) -> f32 {
    if target > v {
        v.next_up()
    } else if target < v {
        v.next_down()
    } else {
        v
    }
}

/// Common-class centers of one view, ready for nearest-neighbour queries.
struct CenterTable<'a> {
    ids: Vec<usize>,
    means: Vec<&'a [f64]>,
    means_f32: Vec<Vec<f32>>,
}

impl<'a> CenterTable<'a> {
    fn new(stats: &'a [ClassStats], common_ids: &BTreeSet<usize>) -> Result<Self> {
        let mut ids = Vec::with_capacity(common_ids.len());
        let mut means = Vec::with_capacity(common_ids.len());
        let mut means_f32 = Vec::with_capacity(common_ids.len());
        for &id in common_ids {
            let s = stats
                .iter()
                .find(|s| s.class_id == id)
                .ok_or_else(|| Error::validation(format!("no statistics for common class {id}")))?;
            ids.push(id);
            means.push(s.mean.as_slice());
            means_f32.push(s.mean_f32());
        }
        Ok(CenterTable {
            ids,
            means,
            means_f32,
        })
    }

    fn nearest(&self, x: &[f32], k: usize, kind: CenterKind) -> Result<CenterSet> {
        if k > self.ids.len() {
            return Err(Error::config(format!(
                "k = {k} exceeds the number of common classes ({})",
                self.ids.len()
            )));
        }
        // bounded insertion: `best` stays sorted by (distance, id)
        let mut best: Vec<(f64, usize)> = Vec::with_capacity(k + 1);
        for (&id, mean) in self.ids.iter().zip(&self.means) {
            if mean.len() != x.len() {
                return Err(Error::validation("center and anchor dimensions differ"));
            }
            let d = euclidean(x, mean);
            if best.len() == k && !less(d, id, best[k - 1]) {
                continue;
            }
            let at = best.partition_point(|&b| less(b.0, b.1, (d, id)));
            best.insert(at, (d, id));
            best.truncate(k);
        }
        Ok(CenterSet {
            center_ids: best.into_iter().map(|(_, id)| id).collect(),
            kind,
        })
    }

    fn mean_f32(&self, id: usize) -> &[f32] {
        let pos = self.ids.iter().position(|&i| i == id).unwrap();
        &self.means_f32[pos]
    }
}

fn less(d: f64, id: usize, other: (f64, usize)) -> bool {
    d < other.0 || (d == other.0 && id < other.1)
}

fn euclidean(x: &[f32], mu: &[f64]) -> f64 {
    x.iter()
        .zip(mu)
        .map(|(&a, &b)| {
            let d = a as f64 - b;
            d * d
        })
        .sum::<f64>()
        .sqrt()
}

/// The `k` common classes whose means are nearest to `x` (Euclidean), ordered
/// by ascending distance with ties going to the lower class id.
pub fn topk_common_centers(
    x: &[f32],
    stats: &[ClassStats],
    common_ids: &BTreeSet<usize>,
    k: usize,
    kind: CenterKind,
) -> Result<CenterSet> {
    CenterTable::new(stats, common_ids)?.nearest(x, k, kind)
}

/// Statistics and rows of one view.
#[derive(Clone, Copy)]
pub struct ViewInput<'a> {
    pub data: &'a EmbeddingDataset,
    pub stats: &'a [ClassStats],
}

fn generate(
    kind: CenterKind,
    class_ids: &BTreeSet<usize>,
    per_class: usize,
    views: [ViewInput<'_>; 2],
    partition: &FrequencyPartition,
    config: &CalibrationConfig,
) -> Result<Vec<GeneratedRow>> {
    if per_class == 0 || class_ids.is_empty() {
        return Ok(Vec::new());
    }
    config.validate()?;
    let tables = [
        CenterTable::new(views[0].stats, &partition.common_ids)?,
        CenterTable::new(views[1].stats, &partition.common_ids)?,
    ];
    if config.k > partition.common_ids.len() {
        return Err(Error::config(format!(
            "k = {} exceeds the number of common classes ({})",
            config.k,
            partition.common_ids.len()
        )));
    }
    let members = [
        views[0].data.indices_by_class(),
        views[1].data.indices_by_class(),
    ];

    let mut jobs = Vec::new();
    for &class_id in class_ids {
        for (v, view) in [View::Plain, View::AugmentedView].into_iter().enumerate() {
            if members[v].get(class_id).is_none_or(Vec::is_empty) {
                log::warn!("class {class_id} has no {view:?} samples; skipping generation");
                continue;
            }
            jobs.extend((0..per_class).map(|rep| (class_id, v, view, rep)));
        }
    }

    jobs.into_par_iter()
        .map(|(class_id, v, view, replicate)| {
            // omega first so it can be replayed without knowing pool sizes
            let mut rng = generation_rng(config.seed, class_id, view, replicate);
            let omega = sample_omega(views[v].data.dim(), &mut rng);
            let pool = &members[v][class_id];
            let anchor_index = pool[rng.gen_range(0..pool.len())];
            let x = views[v].data.row(anchor_index);
            let centers = tables[v].nearest(x, config.k, kind)?;
            let center_class = centers.center_ids[rng.gen_range(0..centers.center_ids.len())];
            let values = calibrate_sample(x, tables[v].mean_f32(center_class), &omega)?;
            Ok(GeneratedRow {
                class_id,
                view,
                replicate,
                kind,
                anchor_index,
                center_class,
                values,
            })
        })
        .collect()
}

/// Rare-class rows interpolated toward the nearest common centers, `n_rare`
/// per rare class and view.
pub fn generate_rare(
    plain: ViewInput<'_>,
    aug: ViewInput<'_>,
    partition: &FrequencyPartition,
    config: &CalibrationConfig,
) -> Result<Vec<GeneratedRow>> {
    generate(
        CenterKind::RareCommon,
        &partition.rare_ids,
        config.n_rare,
        [plain, aug],
        partition,
        config,
    )
}

/// Self-augmented common-class rows, `n_com` per common class and view.
pub fn generate_common(
    plain: ViewInput<'_>,
    aug: ViewInput<'_>,
    partition: &FrequencyPartition,
    config: &CalibrationConfig,
) -> Result<Vec<GeneratedRow>> {
    generate(
        CenterKind::SelfAugment,
        &partition.common_ids,
        config.n_com,
        [plain, aug],
        partition,
        config,
    )
}

/// Checks that two datasets can serve as the plain and augmented views of the
/// same clips.
pub fn check_paired_views(plain: &EmbeddingDataset, aug: &EmbeddingDataset) -> Result<()> {
    if plain.dim() != aug.dim() {
        return Err(Error::validation(format!(
            "view dimensions differ: {} vs {}",
            plain.dim(),
            aug.dim()
        )));
    }
    plain.check_same_classes(aug)?;
    if plain.class_counts() != aug.class_counts() {
        return Err(Error::validation(
            "plain and augmented views have different per-class row counts",
        ));
    }
    Ok(())
}

/// Original rows of both views followed by the rare and common generated
/// rows, sorted by (class, view, replicate).
pub fn build_calibrated_set(
    plain: &EmbeddingDataset,
    aug: &EmbeddingDataset,
    config: &CalibrationConfig,
) -> Result<CalibratedSet> {
    check_paired_views(plain, aug)?;
    config.validate()?;
    let stats_plain = compute_class_stats(plain, CovMode::Diagonal);
    let stats_aug = compute_class_stats(aug, CovMode::Diagonal);
    let partition = partition_by_frequency(plain, config.eta);
    log::info!(
        "calibrating: {} common, {} rare classes (eta = {})",
        partition.common_ids.len(),
        partition.rare_ids.len(),
        config.eta
    );
    let pv = ViewInput {
        data: plain,
        stats: &stats_plain,
    };
    let av = ViewInput {
        data: aug,
        stats: &stats_aug,
    };
    let mut generated = generate_rare(pv, av, &partition, config)?;
    generated.extend(generate_common(pv, av, &partition, config)?);
    generated.sort_by_key(|g| (g.class_id, g.view, g.replicate));
    assemble(plain, aug, generated)
}

fn assemble(
    plain: &EmbeddingDataset,
    aug: &EmbeddingDataset,
    generated: Vec<GeneratedRow>,
) -> Result<CalibratedSet> {
    let dim = plain.dim();
    let total = plain.len() + aug.len() + generated.len();
    let mut values = Vec::with_capacity(total * dim);
    let mut labels = Vec::with_capacity(total);
    let mut origins = Vec::with_capacity(total);

    for (ds, tag) in [
        (plain, Provenance::OriginalPlain),
        (aug, Provenance::OriginalAug),
    ] {
        values.extend_from_slice(ds.embeddings());
        labels.extend_from_slice(ds.labels());
        origins.extend((0..ds.len()).map(|i| RowOrigin {
            tag,
            anchor_index: i,
            center_class: None,
            replicate: None,
        }));
    }
    for g in generated {
        values.extend_from_slice(&g.values);
        labels.push(g.class_id as u32);
        origins.push(RowOrigin {
            tag: Provenance::generated(g.kind, g.view),
            anchor_index: g.anchor_index,
            center_class: Some(g.center_class),
            replicate: Some(g.replicate),
        });
    }
    let data = EmbeddingDataset::new(
        dim,
        values,
        labels,
        plain.class_names().to_vec(),
        View::Plain,
    )?
    .with_meta("split", "train_calibrated");
    Ok(CalibratedSet { data, origins })
}

/// Recomputes the `omega` vector a generated row was built with.
pub fn replay_omega(
    seed: u64,
    class_id: usize,
    view: View,
    replicate: usize,
    dim: usize,
) -> Vec<f32> {
    sample_omega(dim, &mut generation_rng(seed, class_id, view, replicate))
}
