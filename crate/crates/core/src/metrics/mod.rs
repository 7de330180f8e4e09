//! Task metrics: segmentation overlap, VQA and grounding accuracy, and
//! caption similarity (BLEU, ROUGE-L, CIDEr-D).

mod overlap;
mod records;
mod text;

pub use overlap::{box_iou, load_mask, mask_dice, mask_iou, save_mask, BoundingBox, SegmentationMask};
pub use records::{
    grounding_accuracy, normalize_answer, read_records, vqa_accuracy, write_records, CaptionField,
    GroundTruthRecord, JoinStats, Payload, PredictionRecord, Score, Task, TaskRecord,
};
pub use text::{bleu, cider, rouge_l, tokenize, CiderScore, CIDER_SIGMA, ROUGE_BETA};
