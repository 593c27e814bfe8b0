//! Scoring, equal error rate, per-subset breakdowns and embedding distances.
//!
//! Scores are spoof probabilities. At threshold `t` a bona fide clip counts
//! against FAR when its score is `>= t`, a spoof clip counts against FRR
//! when its score is `< t`. The EER is read off by linear interpolation
//! between the two operating points that bracket `FAR = FRR`.

use std::collections::BTreeMap;
use std::path::Path;

use ndarray::{Array1, ArrayView2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::audio::{prepare, Manifest, SampleLabel};
use crate::config::RunConfig;
use crate::error::{RaclError, Result};
use crate::model::Detector;

fn check_scores(bona: &[f64], spoof: &[f64]) -> Result<()> {
    if bona.is_empty() || spoof.is_empty() {
        return Err(RaclError::UndefinedEer(format!(
            "need both classes, got {} bona fide and {} spoof scores",
            bona.len(),
            spoof.len()
        )));
    }
    if bona.iter().chain(spoof).any(|s| s.is_nan()) {
        return Err(RaclError::UndefinedEer("NaN score".into()));
    }
    Ok(())
}

/// Crossing of a sequence of `(far, frr)` points ordered by threshold.
fn crossing(points: impl IntoIterator<Item = (f64, f64)>) -> f64 {
    let mut prev: Option<(f64, f64)> = None;
    for (far, frr) in points {
        let d = far - frr;
        if d <= 0.0 {
            return match prev {
                Some((pf, pr)) if d < 0.0 => {
                    let pd = pf - pr;
                    let t = pd / (pd - d);
                    100.0 * (pf + t * (far - pf))
                }
                _ => 100.0 * far,
            };
        }
        prev = Some((far, frr));
    }
    unreachable!("the last operating point always has FAR = 0 and FRR = 1")
}

/// Equal error rate in percent, by one sorted sweep.
pub fn eer(bona: &[f64], spoof: &[f64]) -> Result<f64> {
    check_scores(bona, spoof)?;
    let mut all: Vec<(f64, bool)> = bona
        .iter()
        .map(|&s| (s, true))
        .chain(spoof.iter().map(|&s| (s, false)))
        .collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0));
    let (nb, ns) = (bona.len() as f64, spoof.len() as f64);
    let mut points = Vec::with_capacity(all.len() + 1);
    let (mut bona_below, mut spoof_below) = (0usize, 0usize);
    let mut i = 0;
    while i < all.len() {
        let t = all[i].0;
        points.push(((nb - bona_below as f64) / nb, spoof_below as f64 / ns));
        while i < all.len() && all[i].0 == t {
            if all[i].1 {
                bona_below += 1;
            } else {
                spoof_below += 1;
            }
            i += 1;
        }
    }
    points.push((0.0, 1.0));
    Ok(crossing(points))
}

/// Brute-force reference: every score, every midpoint between neighbouring
/// distinct scores and both infinities, each evaluated by direct counting.
pub fn eer_oracle(bona: &[f64], spoof: &[f64]) -> Result<f64> {
    check_scores(bona, spoof)?;
    let mut distinct: Vec<f64> = bona.iter().chain(spoof).copied().collect();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    let mut candidates = vec![f64::NEG_INFINITY];
    for (i, &s) in distinct.iter().enumerate() {
        candidates.push(s);
        if let Some(&next) = distinct.get(i + 1) {
            candidates.push(s + (next - s) / 2.0);
        }
    }
    candidates.push(f64::INFINITY);
    let points = candidates.iter().map(|&t| {
        let far = bona.iter().filter(|&&s| s >= t).count() as f64 / bona.len() as f64;
        let frr = spoof.iter().filter(|&&s| s < t).count() as f64 / spoof.len() as f64;
        (far, frr)
    });
    // +inf yields FAR 0 only when no score is +inf; add the sentinel point.
    Ok(crossing(points.chain(std::iter::once((0.0, 1.0)))))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRecord {
    pub source_id: String,
    pub subset: String,
    pub provenance: SampleLabel,
    /// Spoof probability.
    pub score: f64,
}

impl ScoreRecord {
    pub fn label(&self) -> u8 {
        self.provenance.binary()
    }
}

pub const SCORE_HEADER: &str = "source_id\tsubset\tlabel\tscore";

pub fn scores_to_tsv(records: &[ScoreRecord]) -> String {
    let mut out = String::from(SCORE_HEADER);
    out.push('\n');
    for r in records {
        out.push_str(&format!("{}\t{}\t{}\t{}\n", r.source_id, r.subset, r.label(), r.score));
    }
    out
}

fn split(records: &[&ScoreRecord]) -> (Vec<f64>, Vec<f64>) {
    let mut bona = Vec::new();
    let mut spoof = Vec::new();
    for r in records {
        if r.label() == 0 {
            bona.push(r.score);
        } else {
            spoof.push(r.score);
        }
    }
    (bona, spoof)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubsetReport {
    /// EER per subset tag; `None` when the subset lacks one of the classes.
    pub subsets: BTreeMap<String, Option<f64>>,
    /// Unweighted mean over the defined subsets.
    pub average: f64,
    /// EER over all records pooled together, if defined.
    pub pooled: Option<f64>,
}

pub fn subset_report(records: &[ScoreRecord]) -> Result<SubsetReport> {
    if records.is_empty() {
        return Err(RaclError::UndefinedEer("no score records".into()));
    }
    let mut groups: BTreeMap<String, Vec<&ScoreRecord>> = BTreeMap::new();
    for r in records {
        groups.entry(r.subset.clone()).or_default().push(r);
    }
    let mut subsets = BTreeMap::new();
    let mut defined = Vec::new();
    for (tag, rows) in &groups {
        let (bona, spoof) = split(rows);
        match eer(&bona, &spoof) {
            Ok(v) => {
                defined.push(v);
                subsets.insert(tag.clone(), Some(v));
            }
            Err(RaclError::UndefinedEer(why)) => {
                log::warn!("subset {tag:?}: EER undefined ({why}); excluded from the average");
                subsets.insert(tag.clone(), None);
            }
            Err(e) => return Err(e),
        }
    }
    if defined.is_empty() {
        return Err(RaclError::UndefinedEer("no subset contains both classes".into()));
    }
    let all: Vec<&ScoreRecord> = records.iter().collect();
    let (bona, spoof) = split(&all);
    Ok(SubsetReport {
        subsets,
        average: defined.iter().sum::<f64>() / defined.len() as f64,
        pooled: eer(&bona, &spoof).ok(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistanceReport {
    pub classes: Vec<String>,
    pub counts: Vec<usize>,
    /// Mean pairwise Euclidean distance between classes. Diagonal entries
    /// average over distinct within-class pairs. Absent where undefined.
    pub matrix: Vec<Vec<Option<f64>>>,
    /// Mean distance over every (bona fide, other class) pair.
    pub bona_vs_others: Option<f64>,
}

impl DistanceReport {
    pub fn get(&self, a: SampleLabel, b: SampleLabel) -> Option<f64> {
        self.matrix[a.index()][b.index()]
    }
}

fn dist(a: ndarray::ArrayView1<'_, f64>, b: ndarray::ArrayView1<'_, f64>) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

pub fn embedding_distances(embeddings: ArrayView2<'_, f64>, labels: &[SampleLabel]) -> Result<DistanceReport> {
    if embeddings.nrows() != labels.len() {
        return Err(RaclError::Shape(format!(
            "{} embeddings for {} labels",
            embeddings.nrows(),
            labels.len()
        )));
    }
    let mut sums = [[0.0f64; 4]; 4];
    let mut pairs = [[0usize; 4]; 4];
    let (mut bo_sum, mut bo_n) = (0.0, 0usize);
    for i in 0..labels.len() {
        for j in i + 1..labels.len() {
            let d = dist(embeddings.row(i), embeddings.row(j));
            let (a, b) = (labels[i].index(), labels[j].index());
            sums[a][b] += d;
            pairs[a][b] += 1;
            if a != b {
                sums[b][a] += d;
                pairs[b][a] += 1;
            }
            if labels[i].is_bona_fide() != labels[j].is_bona_fide() {
                bo_sum += d;
                bo_n += 1;
            }
        }
    }
    let matrix = (0..4)
        .map(|a| (0..4).map(|b| (pairs[a][b] > 0).then(|| sums[a][b] / pairs[a][b] as f64)).collect())
        .collect();
    Ok(DistanceReport {
        classes: SampleLabel::ALL.iter().map(|l| l.as_str().to_string()).collect(),
        counts: SampleLabel::ALL
            .iter()
            .map(|l| labels.iter().filter(|x| *x == l).count())
            .collect(),
        matrix,
        bona_vs_others: (bo_n > 0).then(|| bo_sum / bo_n as f64),
    })
}

pub fn embeddings_to_tsv(records: &[ScoreRecord], embeddings: &[Array1<f64>]) -> String {
    let mut out = String::new();
    for (r, e) in records.iter().zip(embeddings) {
        out.push_str(&r.source_id);
        out.push('\t');
        out.push_str(r.provenance.as_str());
        for v in e {
            out.push_str(&format!("\t{v}"));
        }
        out.push('\n');
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub config_hash: String,
    pub checkpoint_epoch: u32,
    pub scored: usize,
    pub failed: Vec<String>,
    pub eer: SubsetReport,
    pub distances: DistanceReport,
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

#[derive(Debug, Clone)]
pub struct ScoredManifest {
    pub records: Vec<ScoreRecord>,
    pub embeddings: Vec<Array1<f64>>,
    /// `path: reason` for rows that could not be scored.
    pub failures: Vec<String>,
}

/// Scores every row; rows that fail to load are listed rather than aborting
/// the run. `subset_col` picks the manifest column used as the subset tag.
pub fn score_manifest(
    manifest: &Manifest,
    detector: &Detector,
    cfg: &RunConfig,
    subset_col: Option<usize>,
) -> Result<ScoredManifest> {
    let results: Vec<std::result::Result<(ScoreRecord, Array1<f64>), String>> = manifest
        .entries
        .par_iter()
        .map(|entry| {
            let scored = manifest
                .read_clip(entry)
                .and_then(|c| prepare(&c, cfg.audio.sample_rate, cfg.audio.target_len))
                .and_then(|c| detector.score(&c));
            match scored {
                Ok(s) => {
                    let subset = match subset_col {
                        Some(col) => entry.column(col).unwrap_or_default(),
                        None => "all".to_string(),
                    };
                    Ok((
                        ScoreRecord {
                            source_id: entry.path.clone(),
                            subset,
                            provenance: entry.label,
                            score: s.score,
                        },
                        s.embedding,
                    ))
                }
                Err(e) => Err(format!("{}: {e}", entry.path)),
            }
        })
        .collect();
    let mut out = ScoredManifest {
        records: Vec::new(),
        embeddings: Vec::new(),
        failures: Vec::new(),
    };
    for r in results {
        match r {
            Ok((rec, emb)) => {
                out.records.push(rec);
                out.embeddings.push(emb);
            }
            Err(msg) => out.failures.push(msg),
        }
    }
    Ok(out)
}

/// Assembles the JSON report from scored rows.
pub fn build_report(cfg: &RunConfig, checkpoint_epoch: u32, scored: &ScoredManifest) -> Result<EvalReport> {
    let eer = subset_report(&scored.records)?;
    let e = scored.embeddings.first().map_or(0, |v| v.len());
    let mut emb = ndarray::Array2::zeros((scored.embeddings.len(), e));
    for (i, v) in scored.embeddings.iter().enumerate() {
        emb.row_mut(i).assign(v);
    }
    let labels: Vec<SampleLabel> = scored.records.iter().map(|r| r.provenance).collect();
    Ok(EvalReport {
        config_hash: cfg.hash_hex(),
        checkpoint_epoch,
        scored: scored.records.len(),
        failed: scored.failures.clone(),
        eer,
        distances: embedding_distances(emb.view(), &labels)?,
    })
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| RaclError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use SampleLabel::*;

    #[test]
    fn eer_examples() {
        assert_eq!(eer(&[0.1, 0.2], &[0.8, 0.9]).unwrap(), 0.0);
        assert_eq!(eer(&[0.9], &[0.1]).unwrap(), 100.0);
        assert_eq!(eer(&[0.2, 0.6], &[0.4, 0.8]).unwrap(), 50.0);
        assert_eq!(eer(&[0.5], &[0.5]).unwrap(), 50.0);
        assert_eq!(eer_oracle(&[0.5], &[0.5]).unwrap(), 50.0);
        assert!(matches!(eer(&[], &[0.5]), Err(RaclError::UndefinedEer(_))));
        assert!(matches!(eer_oracle(&[0.5], &[]), Err(RaclError::UndefinedEer(_))));
    }

    #[test]
    fn swapping_symmetric_classes_reflects_eer() {
        let bona = [0.1, 0.3, 0.45, 0.7];
        let spoof = [0.3, 0.55, 0.7, 0.9];
        let a = eer(&bona, &spoof).unwrap();
        let mirror = |v: &[f64]| v.iter().map(|s| 1.0 - s).collect::<Vec<_>>();
        let b = eer(&mirror(&spoof), &mirror(&bona)).unwrap();
        assert!((a - b).abs() < 1e-9);
        let c = eer(&spoof, &bona).unwrap();
        assert!(((100.0 - a) - c).abs() < 1e-9, "{a} {c}");
    }

    fn rec(subset: &str, label: SampleLabel, score: f64) -> ScoreRecord {
        ScoreRecord {
            source_id: format!("{subset}-{score}"),
            subset: subset.into(),
            provenance: label,
            score,
        }
    }

    #[test]
    fn subset_average_is_unweighted() {
        // EERs of 0, 50 and 100.
        let rows = vec![
            rec("a", BonaFide, 0.1),
            rec("a", Spoof, 0.9),
            rec("b", BonaFide, 0.5),
            rec("b", Spoof, 0.5),
            rec("c", BonaFide, 0.9),
            rec("c", Spoof, 0.1),
            rec("d", Spoof, 0.3),
        ];
        let r = subset_report(&rows).unwrap();
        assert_eq!(r.subsets["a"], Some(0.0));
        assert_eq!(r.subsets["d"], None);
        assert_eq!(r.average, 50.0);
        let one = subset_report(&rows[..2]).unwrap();
        assert_eq!(one.average, 0.0);
        assert!(subset_report(&[]).is_err());
        assert!(subset_report(&rows[6..]).is_err());
    }

    #[test]
    fn distance_examples() {
        let emb = array![[0.0, 0.0], [3.0, 4.0]];
        let r = embedding_distances(emb.view(), &[BonaFide, RecBonaFide]).unwrap();
        assert_eq!(r.get(BonaFide, RecBonaFide), Some(5.0));
        assert_eq!(r.get(RecBonaFide, BonaFide), Some(5.0));
        assert_eq!(r.get(BonaFide, BonaFide), None);
        assert_eq!(r.get(Spoof, BonaFide), None);
        assert_eq!(r.bona_vs_others, Some(5.0));

        let same = ndarray::Array2::from_elem((4, 3), 0.7);
        let r = embedding_distances(same.view(), &[BonaFide, Spoof, BonaFide, Spoof]).unwrap();
        for a in [BonaFide, Spoof] {
            for b in [BonaFide, Spoof] {
                assert_eq!(r.get(a, b), Some(0.0));
            }
        }
    }

    #[test]
    fn score_tsv_layout() {
        let tsv = scores_to_tsv(&[rec("x", RecBonaFide, 0.25)]);
        assert_eq!(tsv, "source_id\tsubset\tlabel\tscore\nx-0.25\tx\t1\t0.25\n");
    }
}
