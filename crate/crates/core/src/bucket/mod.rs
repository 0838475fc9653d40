//! Resolution / length / aspect buckets with keep-probability cascades and
//! per-bucket batch sizes.

mod assign;
mod table;

pub use assign::{
    assign, fitting_sizes, load_report, plan_epoch, write_load_csv, Assignment, BucketLoad, EpochPlan, LoadReport,
    PlannedBatch, SampleMeta,
};
pub use table::{resolution_label, resolution_px, Aspect, Bucket, BucketSection, BucketTable, RESOLUTIONS};
