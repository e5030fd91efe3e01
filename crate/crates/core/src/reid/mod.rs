//! Cross-radar identity association.
//!
//! For every radar pair `(m, n)` the signatures of `m`, adapted to `n`'s
//! viewpoint, are correlated with `n`'s observed signatures. The similarity
//! matrix is turned into a cost, solved as a one-to-one assignment and
//! filtered; accepted pairs become edges of an [`IdentityGraph`] whose
//! connected components are the global identities.

mod graph;

pub use graph::{GlobalId, IdentityGraph, NodeKey, PersistenceParams};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::assignment::{gated_assignment, hungarian};
use crate::error::{Error, Result};
use crate::geometry::Vec2;
use crate::radar_sim::{RadarId, WorkerId};
use crate::signatures::RDSignature;
use crate::tdscan::LocalId;
use crate::view_adapt::AdaptedSignature;

/// Default similarity threshold.
pub const DEFAULT_TAU: f64 = 0.6;

/// How cross-radar candidates are scored.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ReidMode {
    /// View-adapted signature correlation.
    #[default]
    Full,
    /// Nearest global positions, no signatures.
    DistanceOnly,
    /// Signature correlation without view adaptation.
    CorrelationOnly,
}

impl std::str::FromStr for ReidMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(ReidMode::Full),
            "distance-only" => Ok(ReidMode::DistanceOnly),
            "correlation-only" => Ok(ReidMode::CorrelationOnly),
            other => Err(Error::Config(format!(
                "unknown re-identification mode {other:?} (full, distance-only, correlation-only)"
            ))),
        }
    }
}

/// Normalized Frobenius inner product `⟨A, B⟩ / (‖A‖·‖B‖)`.
pub fn correlation(a: &Array2<f64>, b: &Array2<f64>) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::Shape {
            expected: a.dim(),
            actual: b.dim(),
        });
    }
    let (mut ab, mut aa, mut bb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b.iter()) {
        ab += x * y;
        aa += x * x;
        bb += y * y;
    }
    if !(aa > 0.0 && bb > 0.0) {
        return Err(Error::Domain("correlation of a zero-energy signature".into()));
    }
    Ok(ab / (aa.sqrt() * bb.sqrt()))
}

/// Correlations between the signatures of two radars.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityMatrix {
    pub radar_pair: (RadarId, RadarId),
    pub rows: Vec<LocalId>,
    pub cols: Vec<LocalId>,
    pub values: Array2<f64>,
    pub tau: f64,
}

impl SimilarityMatrix {
    pub fn from_values(radar_pair: (RadarId, RadarId), values: Array2<f64>, tau: f64) -> Self {
        Self {
            radar_pair,
            rows: (1..=values.nrows() as LocalId).collect(),
            cols: (1..=values.ncols() as LocalId).collect(),
            values,
            tau,
        }
    }

    /// Entries below the threshold are kept but cannot be matched.
    pub fn suppressed(&self, row: usize, col: usize) -> bool {
        !(self.values[[row, col]] >= self.tau)
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// `R[a][b] = correlation(adapted a, observed b)`.
pub fn build_similarity(
    radar_pair: (RadarId, RadarId),
    adapted: &[AdaptedSignature],
    observed: &[RDSignature],
    tau: f64,
) -> Result<SimilarityMatrix> {
    let mut values = Array2::zeros((adapted.len(), observed.len()));
    for (i, a) in adapted.iter().enumerate() {
        for (j, b) in observed.iter().enumerate() {
            values[[i, j]] = correlation(&a.signature.patch, &b.patch)?;
        }
    }
    Ok(SimilarityMatrix {
        radar_pair,
        rows: adapted.iter().map(|a| a.signature.local_id).collect(),
        cols: observed.iter().map(|b| b.local_id).collect(),
        values,
        tau,
    })
}

/// Like [`build_similarity`] with one window of per-frame signatures per
/// track: `R[a][b]` is the mean per-frame correlation over the frames both
/// windows cover (matched by timestamp). Tracks without a shared frame get 0.
pub fn build_window_similarity(
    radar_pair: (RadarId, RadarId),
    adapted: &[Vec<&AdaptedSignature>],
    observed: &[Vec<&RDSignature>],
    tau: f64,
) -> Result<SimilarityMatrix> {
    let last_id = |n: usize, id: Option<LocalId>| {
        id.ok_or_else(|| Error::Domain(format!("empty signature window for track {}", n + 1)))
    };
    let rows = adapted
        .iter()
        .enumerate()
        .map(|(i, w)| last_id(i, w.last().map(|a| a.signature.local_id)))
        .collect::<Result<Vec<_>>>()?;
    let cols = observed
        .iter()
        .enumerate()
        .map(|(j, w)| last_id(j, w.last().map(|b| b.local_id)))
        .collect::<Result<Vec<_>>>()?;
    let mut values = Array2::zeros((adapted.len(), observed.len()));
    for (i, wa) in adapted.iter().enumerate() {
        for (j, wb) in observed.iter().enumerate() {
            let (mut sum, mut n) = (0.0, 0usize);
            for a in wa {
                let t = a.signature.timestamp_s;
                if let Some(b) = wb.iter().find(|b| b.timestamp_s == t) {
                    sum += correlation(&a.signature.patch, &b.patch)?;
                    n += 1;
                }
            }
            values[[i, j]] = if n > 0 { sum / n as f64 } else { 0.0 };
        }
    }
    Ok(SimilarityMatrix {
        radar_pair,
        rows,
        cols,
        values,
        tau,
    })
}

/// `C = max(R) - R`, with suppressed entries replaced by the penalty
/// `max(R)·N_m·N_n + 1`. Returns the cost and the penalty value.
pub fn to_cost(r: &SimilarityMatrix) -> (Array2<f64>, f64) {
    let (nm, nn) = r.values.dim();
    let max = r.values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let max = if max.is_finite() { max } else { 0.0 };
    let penalty = max * (nm * nn) as f64 + 1.0;
    let cost = Array2::from_shape_fn((nm, nn), |(i, j)| {
        if r.suppressed(i, j) {
            penalty
        } else {
            max - r.values[[i, j]]
        }
    });
    (cost, penalty)
}

/// Keeps a pair only if its similarity is a (non-strict) maximum of both its
/// row and its column.
pub fn mutual_best_filter(r: &SimilarityMatrix, pairs: &[(usize, usize)]) -> Vec<(usize, usize)> {
    let v = &r.values;
    let candidate = |i: usize, j: usize| if r.suppressed(i, j) { f64::NEG_INFINITY } else { v[[i, j]] };
    pairs
        .iter()
        .copied()
        .filter(|&(i, j)| {
            let x = candidate(i, j);
            (0..v.ncols()).all(|k| candidate(i, k) <= x) && (0..v.nrows()).all(|k| candidate(k, j) <= x)
        })
        .collect()
}

/// One accepted cross-radar pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Match {
    pub row: usize,
    pub col: usize,
    pub rho: f64,
}

/// Assignment on `to_cost(r)` without penalized pairs, optionally mutual-best filtered.
pub fn match_signatures(r: &SimilarityMatrix, mutual_best: bool) -> Result<Vec<Match>> {
    if r.is_empty() {
        return Ok(Vec::new());
    }
    let (cost, _) = to_cost(r);
    let a = hungarian(&cost)?;
    let mut pairs: Vec<(usize, usize)> = a.pairs.into_iter().filter(|&(i, j)| !r.suppressed(i, j)).collect();
    if mutual_best {
        pairs = mutual_best_filter(r, &pairs);
    }
    Ok(pairs
        .into_iter()
        .map(|(row, col)| Match {
            row,
            col,
            rho: r.values[[row, col]],
        })
        .collect())
}

/// Nearest-position assignment between two radars' detections in the global
/// frame, gated at `gate_m`.
pub fn match_positions(a: &[Vec2], b: &[Vec2], gate_m: f64) -> Result<Vec<(usize, usize)>> {
    let cost = Array2::from_shape_fn((a.len(), b.len()), |(i, j)| a[i].distance(b[j]));
    Ok(gated_assignment(&cost, gate_m)?.pairs)
}

/// A detection labeled with its predicted identity and its true worker.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LabeledDetection {
    pub radar_id: RadarId,
    pub global_id: Option<GlobalId>,
    pub truth: Option<WorkerId>,
}

/// Pair-level confusion counts.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairCounts {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl PairCounts {
    pub fn add(&mut self, other: PairCounts) {
        self.tp += other.tp;
        self.fp += other.fp;
        self.fn_ += other.fn_;
    }

    /// `2TP / (2TP + FP + FN)`; 1 when there is nothing to find and nothing predicted.
    pub fn f1(&self) -> f64 {
        let den = 2 * self.tp + self.fp + self.fn_;
        if den == 0 {
            1.0
        } else {
            2.0 * self.tp as f64 / den as f64
        }
    }
}

/// Counts over all pairs of detections from different radars in one frame.
/// A pair is predicted when both carry the same global id and actual when
/// both belong to the same worker.
pub fn pair_counts(frame: &[LabeledDetection]) -> PairCounts {
    let mut c = PairCounts::default();
    for (i, a) in frame.iter().enumerate() {
        for b in &frame[i + 1..] {
            if a.radar_id == b.radar_id {
                continue;
            }
            let predicted = a.global_id.is_some() && a.global_id == b.global_id;
            let actual = a.truth.is_some() && a.truth == b.truth;
            match (predicted, actual) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, true) => c.fn_ += 1,
                (false, false) => {}
            }
        }
    }
    c
}

/// Pairwise F1 pooled over frames.
pub fn reid_f1(frames: &[Vec<LabeledDetection>]) -> f64 {
    let mut total = PairCounts::default();
    for f in frames {
        total.add(pair_counts(f));
    }
    total.f1()
}
