//! Part proposals: backbone, anchors, RoI pooling, detection heads and
//! top-K selection.

pub mod anchors;
pub mod loss;
pub mod net;
pub mod roi;
pub mod select;

pub use anchors::{
    assign_labels, decode_bbox, decode_unclipped, encode_bbox, generate_anchors, sample_anchors, Anchor, AnchorLabel,
    Ratio,
};
pub use loss::{detection_loss, shape_detection_loss, ViewTargets};
pub use net::{Detector, DetectorConfig, Layer, Proposal, DET_PREFIX};
pub use roi::{box_cells, roi_pool, roi_windows, ROI_BINS};
pub use select::{detections_csv, draw_detections, nms, ranked, recall_counts, select_top_k, DRAW_THRESHOLD};
