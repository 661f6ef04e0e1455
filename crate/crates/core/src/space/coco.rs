use std::path::Path;

use serde_json::Value;

use super::BoxRecord;
use crate::error::{Error, Result};

/// Extracts boxes from a COCO-style annotation document.
///
/// Only `annotations[*].bbox` (`[x, y, width, height]`) and
/// `annotations[*].image_id` are read; all other fields are ignored.
pub fn parse_coco(text: &str) -> Result<Vec<BoxRecord>> {
    let doc: Value = serde_json::from_str(text)?;
    let anns = doc
        .get("annotations")
        .and_then(Value::as_array)
        .ok_or_else(|| Error::InvalidInput("missing \"annotations\" array".into()))?;
    anns.iter().enumerate().map(|(i, a)| parse_annotation(i, a)).collect()
}

fn parse_annotation(index: usize, ann: &Value) -> Result<BoxRecord> {
    let name = || match ann.get("id") {
        Some(id) => format!("annotation #{index} (id {id})"),
        None => format!("annotation #{index}"),
    };
    let bbox = ann
        .get("bbox")
        .and_then(Value::as_array)
        .filter(|b| b.len() == 4)
        .ok_or_else(|| Error::InvalidInput(format!("{}: \"bbox\" must be a 4-element array", name())))?;
    let nums: Option<Vec<f64>> = bbox.iter().map(Value::as_f64).collect();
    let nums = nums.ok_or_else(|| Error::InvalidInput(format!("{}: \"bbox\" entries must be numbers", name())))?;
    let image_id = match ann.get("image_id") {
        None => 0,
        Some(v) => v
            .as_u64()
            .ok_or_else(|| Error::InvalidInput(format!("{}: \"image_id\" must be a non-negative integer", name())))?,
    };
    BoxRecord::new(nums[2], nums[3], image_id).map_err(|e| match e {
        Error::InvalidInput(m) => Error::InvalidInput(format!("{}: {m}", name())),
        e => e,
    })
}

pub fn read_coco(path: &Path) -> Result<Vec<BoxRecord>> {
    parse_coco(&std::fs::read_to_string(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reads_bboxes_and_ignores_extras() {
        let text = r#"{
            "info": {"year": 2017},
            "images": [{"id": 1, "width": 640}],
            "annotations": [
                {"id": 10, "image_id": 1, "bbox": [0, 0, 4, 9], "area": 36, "iscrowd": 0},
                {"id": 11, "image_id": 1, "bbox": [5.5, 2, 10.5, 3.25], "segmentation": []}
            ]
        }"#;
        let boxes = parse_coco(text).unwrap();
        assert_eq!(boxes.len(), 2);
        assert_eq!(boxes[0], BoxRecord { width: 4.0, height: 9.0, image_id: 1 });
        assert_eq!(boxes[1].width, 10.5);
    }

    #[test]
    fn names_the_offending_record() {
        let text = r#"{"annotations": [{"id": 1, "bbox": [0,0,1,1]}, {"id": 77, "bbox": [0,0,0,5]}]}"#;
        let err = parse_coco(text).unwrap_err().to_string();
        assert!(err.contains("annotation #1") && err.contains("77"), "{err}");
        let err = parse_coco(r#"{"annotations": [{"bbox": [1, 2, 3]}]}"#).unwrap_err().to_string();
        assert!(err.contains("annotation #0"), "{err}");
        assert!(parse_coco(r#"{"images": []}"#).is_err());
        assert!(parse_coco("not json").is_err());
    }
}
