//! Clip curation: scene cutting, aesthetic / motion / text scoring behind
//! pluggable scorers, camera-motion labelling and manifest statistics.

mod flow;
mod pipeline;
mod scenes;
mod scores;
pub mod synthetic;

pub use flow::{
    block_match, camera_motion, flow_score, mean_flow_magnitude, optical_flow, FlowField, MotionThresholds, BLOCK,
    SEARCH_RADIUS,
};
pub use pipeline::{
    histograms, process_video, run_pipeline, scan_input_dir, write_manifest, write_outputs, write_stats, ClipRecord,
    HistogramBin, ItemError, PrepConfig, PrepItem, PrepOutput, Scorers, Source, MANIFEST_COLUMNS,
};
pub use scenes::{detect_scenes, frame_differences, scene_ranges, MIN_CUT_DIFF, SCENE_WINDOW};
pub use scores::{
    aesthetic_score, ocr_area_ratio, passes_ocr, sampled_frames, FrameScorer, ReferenceAesthetic, ReferenceTextDetector,
    TextDetector,
};
