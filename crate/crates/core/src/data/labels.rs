//! Plain-text annotation files, one object per line:
//! `<category> <cx> <cy> <w> <h>` with normalized coordinates.

use std::fmt::Write as _;

use thiserror::Error;

use super::LabelRecord;
use crate::geometry::BBox;
use crate::SEVERITY_LEVELS;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LabelError {
    #[error("line {line}: category {value} is not one of 0, 1, 2")]
    InvalidCategory { line: usize, value: String },
    #[error("line {line}: {field} = {value} outside the valid range")]
    Range {
        line: usize,
        field: &'static str,
        value: f64,
    },
    #[error("line {line}: {detail}")]
    Parse { line: usize, detail: String },
}

const FIELDS: [&str; 4] = ["cx", "cy", "w", "h"];

pub fn parse_label_file(text: &str) -> Result<Vec<LabelRecord>, LabelError> {
    let mut records = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let content = raw.trim();
        if content.is_empty() {
            continue;
        }
        let fields: Vec<&str> = content.split_whitespace().collect();
        if fields.len() != 5 {
            return Err(LabelError::Parse {
                line,
                detail: format!("expected 5 fields, found {}", fields.len()),
            });
        }
        let category = match fields[0].parse::<i64>() {
            Ok(c) if (0..SEVERITY_LEVELS as i64).contains(&c) => c as usize,
            Ok(_) => {
                return Err(LabelError::InvalidCategory {
                    line,
                    value: fields[0].to_string(),
                })
            }
            Err(_) => {
                return Err(LabelError::Parse {
                    line,
                    detail: format!("category {:?} is not an integer", fields[0]),
                })
            }
        };
        let mut coords = [0.0; 4];
        for (k, (slot, text)) in coords.iter_mut().zip(&fields[1..]).enumerate() {
            let value: f64 = text.parse().map_err(|_| LabelError::Parse {
                line,
                detail: format!("{} {text:?} is not a number", FIELDS[k]),
            })?;
            if !(0.0..=1.0).contains(&value) {
                return Err(LabelError::Range {
                    line,
                    field: FIELDS[k],
                    value,
                });
            }
            *slot = value;
        }
        let [cx, cy, w, h] = coords;
        for (field, value) in [("w", w), ("h", h)] {
            if value <= 0.0 {
                return Err(LabelError::Range { line, field, value });
            }
        }
        let bbox = BBox::new(cx, cy, w, h).map_err(|e| LabelError::Parse {
            line,
            detail: e.to_string(),
        })?;
        records.push(LabelRecord { category, bbox });
    }
    Ok(records)
}

/// Writes records with six decimals, LF-terminated.
pub fn serialize_labels(records: &[LabelRecord]) -> String {
    let mut out = String::new();
    for r in records {
        let b = r.bbox;
        writeln!(out, "{} {:.6} {:.6} {:.6} {:.6}", r.category, b.cx, b.cy, b.w, b.h)
            .expect("writing to a String");
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn parses_single_record() {
        let recs = parse_label_file("2 0.5 0.5 0.1 0.2").unwrap();
        assert_eq!(
            recs,
            vec![LabelRecord {
                category: 2,
                bbox: BBox { cx: 0.5, cy: 0.5, w: 0.1, h: 0.2 }
            }]
        );
    }

    #[test]
    fn empty_file_has_no_records() {
        assert!(parse_label_file("").unwrap().is_empty());
        assert!(parse_label_file("\n\n").unwrap().is_empty());
    }

    #[test]
    fn rejects_unknown_category() {
        assert_eq!(
            parse_label_file("5 0.5 0.5 0.1 0.2"),
            Err(LabelError::InvalidCategory {
                line: 1,
                value: "5".into()
            })
        );
    }

    #[test]
    fn reports_line_of_out_of_range_coordinate() {
        let text = "0 0.1 0.1 0.1 0.1\n1 0.5 1.5 0.1 0.1\n";
        assert_eq!(
            parse_label_file(text),
            Err(LabelError::Range {
                line: 2,
                field: "cy",
                value: 1.5
            })
        );
    }

    #[test]
    fn rejects_wrong_field_count_and_garbage() {
        assert!(matches!(
            parse_label_file("1 0.5 0.5 0.1"),
            Err(LabelError::Parse { line: 1, .. })
        ));
        assert!(matches!(
            parse_label_file("1 0.5 x 0.1 0.1"),
            Err(LabelError::Parse { line: 1, .. })
        ));
        assert!(matches!(
            parse_label_file("a 0.5 0.5 0.1 0.1"),
            Err(LabelError::Parse { line: 1, .. })
        ));
    }

    #[test]
    fn serializes_fixed_point() {
        let recs = parse_label_file("1 0.25 0.5 0.125 0.3").unwrap();
        assert_eq!(serialize_labels(&recs), "1 0.250000 0.500000 0.125000 0.300000\n");
    }

    fn micro(lo: u32, hi: u32) -> impl Strategy<Value = f64> {
        (lo..=hi).prop_map(|v| v as f64 / 1e6)
    }

    proptest! {
        #[test]
        fn serialize_then_parse_is_identity(
            raw in prop::collection::vec((0usize..3, micro(0, 1_000_000), micro(0, 1_000_000), micro(1, 1_000_000), micro(1, 1_000_000)), 0..12)
        ) {
            let records: Vec<LabelRecord> = raw
                .into_iter()
                .map(|(category, cx, cy, w, h)| LabelRecord { category, bbox: BBox { cx, cy, w, h } })
                .filter(|r| r.bbox.validate().is_ok())
                .collect();
            let back = parse_label_file(&serialize_labels(&records)).unwrap();
            prop_assert_eq!(back, records);
        }
    }
}
