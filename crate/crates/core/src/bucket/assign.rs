use std::cmp::Ordering;
use std::collections::BTreeMap;

use rand::seq::SliceRandom;

use super::table::{Bucket, BucketTable};
use crate::error::{Error, Result};
use crate::rng;

#[derive(Clone, Debug, PartialEq)]
pub struct SampleMeta {
    pub id: String,
    pub width: usize,
    pub height: usize,
    pub frames: usize,
    pub fps: f64,
}

impl SampleMeta {
    pub fn short_side(&self) -> usize {
        self.width.min(self.height)
    }

    pub fn aspect(&self) -> f64 {
        self.width as f64 / self.height as f64
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub enum Assignment {
    /// Index into the bucket table.
    Bucket(usize),
    Rejected,
}

fn aspect_gap(b: &Bucket, s: &SampleMeta) -> f64 {
    (b.aspect.ratio().ln() - s.aspect().ln()).abs()
}

/// Buckets that fit `s`, one per `(resolution, frames)` size (the one with
/// the nearest aspect, earliest in the table on ties), largest size first.
pub fn fitting_sizes(s: &SampleMeta, table: &BucketTable) -> Vec<usize> {
    let mut best: BTreeMap<(usize, usize), usize> = BTreeMap::new();
    for (i, b) in table.buckets.iter().enumerate() {
        if b.resolution > s.short_side() || b.frames > s.frames {
            continue;
        }
        best.entry((b.resolution, b.frames))
            .and_modify(|j| {
                if aspect_gap(b, s).total_cmp(&aspect_gap(&table.buckets[*j], s)) == Ordering::Less {
                    *j = i;
                }
            })
            .or_insert(i);
    }
    best.into_values().rev().collect()
}

/// Largest fitting bucket, then a keep-probability cascade: a bucket that
/// fails its Bernoulli draw passes the sample on to the next strictly smaller
/// size. Draws are keyed by `(seed, clip id, bucket size)`, so the outcome
/// for one sample never depends on any other sample.
pub fn assign(s: &SampleMeta, table: &BucketTable, seed: u64) -> Assignment {
    let id = rng::label(&s.id);
    for i in fitting_sizes(s, table) {
        let b = &table.buckets[i];
        let u = rng::uniform_at(seed, &[rng::label("bucket.keep"), id, b.resolution as u64, b.frames as u64]);
        if u < b.keep_prob {
            return Assignment::Bucket(i);
        }
    }
    Assignment::Rejected
}

#[derive(Clone, Debug, PartialEq)]
pub struct PlannedBatch {
    pub bucket: usize,
    pub ids: Vec<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochPlan {
    pub batches: Vec<PlannedBatch>,
    pub rejected: Vec<String>,
    /// Samples left in a bucket's final partial batch.
    pub dropped: Vec<String>,
}

/// Shuffles, assigns, batches per bucket (dropping partial batches) and
/// interleaves the batches in shuffled order.
pub fn plan_epoch(samples: &[SampleMeta], table: &BucketTable, seed: u64) -> EpochPlan {
    let mut order: Vec<usize> = (0..samples.len()).collect();
    order.shuffle(&mut rng::stream(seed, &[rng::label("bucket.shuffle")]));
    let mut per_bucket: Vec<Vec<String>> = vec![Vec::new(); table.len()];
    let mut rejected = Vec::new();
    for &i in &order {
        match assign(&samples[i], table, seed) {
            Assignment::Bucket(b) => per_bucket[b].push(samples[i].id.clone()),
            Assignment::Rejected => rejected.push(samples[i].id.clone()),
        }
    }
    let mut batches = Vec::new();
    let mut dropped = Vec::new();
    for (b, ids) in per_bucket.into_iter().enumerate() {
        let size = table.buckets[b].batch_size;
        let mut chunks = ids.chunks_exact(size);
        batches.extend(chunks.by_ref().map(|c| PlannedBatch { bucket: b, ids: c.to_vec() }));
        dropped.extend_from_slice(chunks.remainder());
    }
    batches.shuffle(&mut rng::stream(seed, &[rng::label("bucket.interleave")]));
    EpochPlan { batches, rejected, dropped }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BucketLoad {
    pub bucket: usize,
    pub batches: usize,
    pub tokens_per_batch: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LoadReport {
    pub per_bucket: Vec<BucketLoad>,
    pub max: usize,
    pub min: usize,
    pub mean: f64,
}

/// Per-batch compute proxy statistics over a plan.
pub fn load_report(plan: &EpochPlan, table: &BucketTable) -> Result<LoadReport> {
    if plan.batches.is_empty() {
        return Err(Error::Precondition("load report needs a non-empty plan".into()));
    }
    let mut counts = vec![0usize; table.len()];
    let mut loads = Vec::with_capacity(plan.batches.len());
    for b in &plan.batches {
        let bucket = table
            .buckets
            .get(b.bucket)
            .ok_or_else(|| Error::Argument(format!("plan references bucket {} of {}", b.bucket, table.len())))?;
        counts[b.bucket] += 1;
        loads.push(bucket.batch_tokens());
    }
    let per_bucket = counts
        .iter()
        .enumerate()
        .filter(|(_, &n)| n > 0)
        .map(|(i, &n)| BucketLoad {
            bucket: i,
            batches: n,
            tokens_per_batch: table.buckets[i].batch_tokens(),
        })
        .collect();
    Ok(LoadReport {
        per_bucket,
        max: *loads.iter().max().expect("non-empty"),
        min: *loads.iter().min().expect("non-empty"),
        mean: loads.iter().sum::<usize>() as f64 / loads.len() as f64,
    })
}

/// Load report as CSV: one row per used bucket.
pub fn write_load_csv<W: std::io::Write>(report: &LoadReport, table: &BucketTable, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["resolution", "frames", "aspect", "keep_prob", "batch_size", "batches", "tokens_per_batch"])?;
    for l in &report.per_bucket {
        let b = &table.buckets[l.bucket];
        w.write_record([
            super::table::resolution_label(b.resolution),
            b.frames.to_string(),
            b.aspect.to_string(),
            b.keep_prob.to_string(),
            b.batch_size.to_string(),
            l.batches.to_string(),
            l.tokens_per_batch.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<load report>", e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn meta(id: &str, side: usize, frames: usize) -> SampleMeta {
        SampleMeta { id: id.into(), width: side, height: side, frames, fps: 4.0 }
    }

    fn table(rows: &[&str]) -> BucketTable {
        BucketTable::from_rows(rows).unwrap()
    }

    #[test]
    fn largest_fit_example() {
        let t = table(&["144p, 16, 1:1, 1, 1", "240p, 16, 1:1, 1, 1", "240p, 32, 1:1, 1, 1", "480p, 16, 1:1, 1, 1"]);
        assert_eq!(assign(&meta("a", 24, 20), &t, 0), Assignment::Bucket(1));
        assert_eq!(assign(&meta("b", 4, 20), &t, 0), Assignment::Rejected);
    }

    #[test]
    fn cascade_moves_down() {
        let t = table(&["144p, 16, 1:1, 1, 1", "240p, 16, 1:1, 0, 1"]);
        for i in 0..200 {
            assert_eq!(assign(&meta(&format!("c{}", i), 24, 20), &t, i), Assignment::Bucket(0));
        }
    }

    #[test]
    fn nearest_aspect_breaks_ties() {
        let t = table(&["240p, 16, 1:1, 1, 1", "240p, 16, 16:9, 1, 1"]);
        let wide = SampleMeta { id: "w".into(), width: 40, height: 22, frames: 16, fps: 4.0 };
        assert_eq!(assign(&wide, &t, 0), Assignment::Bucket(1));
        assert_eq!(assign(&meta("s", 22, 16), &t, 0), Assignment::Bucket(0));
    }

    #[test]
    fn partial_batches_dropped() {
        let t = table(&["144p, 1, 1:1, 1, 4"]);
        let samples: Vec<SampleMeta> = (0..10).map(|i| meta(&format!("s{}", i), 8, 1)).collect();
        let plan = plan_epoch(&samples, &t, 3);
        assert_eq!(plan.batches.len(), 2);
        assert_eq!(plan.dropped.len(), 2);
        assert_eq!(plan, plan_epoch(&samples, &t, 3));
    }

    #[test]
    fn load_report_examples() {
        let t = table(&["144p, 16, 1:1, 1, 4", "240p, 16, 1:1, 1, 1"]);
        let samples: Vec<SampleMeta> = (0..8).map(|i| meta(&format!("s{}", i), 8, 16)).collect();
        let one = load_report(&plan_epoch(&samples, &t, 1), &t).unwrap();
        assert_eq!(one.max, one.min);
        // 144p × 4 and 240p × 1 give equal token products
        let mut mixed = samples.clone();
        mixed.extend((0..3).map(|i| meta(&format!("l{}", i), 16, 16)));
        let r = load_report(&plan_epoch(&mixed, &t, 1), &t).unwrap();
        assert_eq!(r.per_bucket.len(), 2);
        assert!((r.max as f64 / r.min as f64 - 1.0).abs() < 0.1);
        let empty = EpochPlan { batches: vec![], rejected: vec![], dropped: vec![] };
        assert!(load_report(&empty, &t).is_err());
        let mut csv = Vec::new();
        write_load_csv(&r, &t, &mut csv).unwrap();
        let text = String::from_utf8(csv).unwrap();
        assert!(text.starts_with("resolution,frames,aspect"));
        assert_eq!(text.lines().count(), 3);
    }

    fn random_table() -> impl Strategy<Value = BucketTable> {
        proptest::collection::vec((1usize..6, 1usize..40, 0usize..5, 0.0f64..=1.0, 1usize..5), 1..8).prop_map(|rows| {
            BucketTable::new(
                rows.into_iter()
                    .map(|(r, f, a, k, b)| Bucket {
                        resolution: 8 * r,
                        frames: f,
                        aspect: crate::bucket::Aspect::SUPPORTED[a],
                        keep_prob: k,
                        batch_size: b,
                    })
                    .collect(),
            )
            .unwrap()
        })
    }

    proptest! {
        #[test]
        fn never_exceeds_sample(t in random_table(), w in 1usize..60, h in 1usize..60, f in 1usize..50, seed in any::<u64>()) {
            let s = SampleMeta { id: format!("{}-{}", w, h), width: w, height: h, frames: f, fps: 4.0 };
            if let Assignment::Bucket(i) = assign(&s, &t, seed) {
                prop_assert!(t.buckets[i].resolution <= s.short_side());
                prop_assert!(t.buckets[i].frames <= s.frames);
            }
        }

        #[test]
        fn lowering_keep_prob_only_moves_down(t in random_table(), side in 1usize..60, f in 1usize..50, seed in any::<u64>(), which in 0usize..8, factor in 0.0f64..1.0) {
            let s = meta("x", side, f);
            let before = assign(&s, &t, seed);
            let mut lowered = t.clone();
            let j = which % lowered.len();
            lowered.buckets[j].keep_prob *= factor;
            let after = assign(&s, &lowered, seed);
            let size = |a: Assignment| match a {
                Assignment::Bucket(i) => Some((t.buckets[i].resolution, t.buckets[i].frames)),
                Assignment::Rejected => None,
            };
            match (size(before), size(after)) {
                (Some(b), Some(a)) => prop_assert!(a <= b),
                (None, Some(_)) => prop_assert!(false, "rejected sample became assigned"),
                _ => {}
            }
        }
    }
}
