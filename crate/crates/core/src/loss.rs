//! Sum-of-squares detection objective with responsible-box assignment.
//!
//! For a cell that owns an object, the box among its `B` predictions with
//! the highest IOU against the ground truth is responsible: its `x, y, w, h`
//! are regressed onto the target and its confidence onto `Pr(Object)·IOU`,
//! i.e. onto that IOU itself. The other boxes of the cell, and every box of
//! an empty cell, only have their confidence pulled towards zero.
//!
//! The IOU target depends on the predicted box, so it is differentiated
//! through rather than frozen; the adjoint below is the exact derivative of
//! the scalar the forward pass reports.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{argmax, iou, BBox, GridSpec};
use crate::tensor::{CustomOp, Tape, Tensor, Var};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LossError {
    #[error("loss shape error: {0}")]
    Shape(String),
    #[error("loss weights must be finite and non-negative: {0:?}")]
    BadWeights(LossWeights),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub coord: f64,
    pub obj: f64,
    pub noobj: f64,
    pub category: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            coord: 1.0,
            obj: 1.0,
            noobj: 1.0,
            category: 1.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<(), LossError> {
        let ok = [self.coord, self.obj, self.noobj, self.category]
            .iter()
            .all(|w| w.is_finite() && *w >= 0.0);
        if ok {
            Ok(())
        } else {
            Err(LossError::BadWeights(*self))
        }
    }
}

/// Index of the predicted box with the highest IOU against `gt`; lowest
/// index on ties, so all-zero overlaps pick box 0.
pub fn assign_responsible(cell_pred_boxes: &[BBox], gt: &BBox) -> usize {
    let ious: Vec<f64> = cell_pred_boxes.iter().map(|b| iou(b, gt)).collect();
    argmax(&ious)
}

/// IOU of `a` against `b` and its partial derivatives with respect to
/// `a.cx, a.cy, a.w, a.h`.
pub(crate) fn iou_with_grad(a: &BBox, b: &BBox) -> (f64, [f64; 4]) {
    let (ax1, ay1, ax2, ay2) = a.corners();
    let (bx1, by1, bx2, by2) = b.corners();
    let ix = ax2.min(bx2) - ax1.max(bx1);
    let iy = ay2.min(by2) - ay1.max(by1);
    if ix <= 0.0 || iy <= 0.0 {
        return (0.0, [0.0; 4]);
    }
    // d(ix)/d(cx) and d(ix)/d(w) depend on which box bounds each side.
    let right_x = if ax2 < bx2 { 1.0 } else { 0.0 };
    let left_x = if ax1 > bx1 { 1.0 } else { 0.0 };
    let right_y = if ay2 < by2 { 1.0 } else { 0.0 };
    let left_y = if ay1 > by1 { 1.0 } else { 0.0 };
    let dix_dcx = right_x - left_x;
    let dix_dw = 0.5 * (right_x + left_x);
    let diy_dcy = right_y - left_y;
    let diy_dh = 0.5 * (right_y + left_y);

    let inter = ix * iy;
    let (aw, ah) = (ax2 - ax1, ay2 - ay1);
    let union = aw * ah + (bx2 - bx1) * (by2 - by1) - inter;
    let di = [dix_dcx * iy, diy_dcy * ix, dix_dw * iy, diy_dh * ix];
    let da = [0.0, 0.0, ah, aw];
    let u2 = union * union;
    let grad = std::array::from_fn(|k| (di[k] * union - inter * (da[k] - di[k])) / u2);
    (inter / union, grad)
}

fn check_lengths(pred: &[f64], target: &[f64], grid: GridSpec) -> Result<(), LossError> {
    let n = grid.output_len();
    if pred.len() != n || target.len() != n {
        return Err(LossError::Shape(format!(
            "prediction has {} values and target {}, grid needs {n}",
            pred.len(),
            target.len()
        )));
    }
    Ok(())
}

/// Loss value and its gradient with respect to `pred`.
pub fn yolo_loss_with_grad(
    pred: &[f64],
    target: &[f64],
    grid: GridSpec,
    weights: LossWeights,
) -> Result<(f64, Vec<f64>), LossError> {
    check_lengths(pred, target, grid)?;
    weights.validate()?;
    let mut loss = 0.0;
    let mut grad = vec![0.0; pred.len()];
    let inv_s = 1.0 / grid.s as f64;

    for cell in 0..grid.cells() {
        let t0 = grid.box_offset(cell, 0);
        let has_object = target[t0 + 4] > 0.5;
        if !has_object {
            for slot in 0..grid.b {
                let ci = grid.box_offset(cell, slot) + 4;
                loss += weights.noobj * pred[ci] * pred[ci];
                grad[ci] += 2.0 * weights.noobj * pred[ci];
            }
            continue;
        }

        let gt = grid.absolute_box(cell, target[t0], target[t0 + 1], target[t0 + 2], target[t0 + 3]);
        let boxes: Vec<BBox> = (0..grid.b)
            .map(|slot| {
                let o = grid.box_offset(cell, slot);
                grid.absolute_box(cell, pred[o], pred[o + 1], pred[o + 2], pred[o + 3])
            })
            .collect();
        let r = assign_responsible(&boxes, &gt);

        for slot in 0..grid.b {
            let o = grid.box_offset(cell, slot);
            if slot != r {
                loss += weights.noobj * pred[o + 4] * pred[o + 4];
                grad[o + 4] += 2.0 * weights.noobj * pred[o + 4];
                continue;
            }
            for f in 0..4 {
                let d = pred[o + f] - target[t0 + f];
                loss += weights.coord * d * d;
                grad[o + f] += 2.0 * weights.coord * d;
            }
            let (overlap, d_overlap) = iou_with_grad(&boxes[slot], &gt);
            let d = pred[o + 4] - overlap;
            loss += weights.obj * d * d;
            grad[o + 4] += 2.0 * weights.obj * d;
            // x, y are cell offsets: d(cx)/dx = 1/S.
            let chain = [inv_s, inv_s, 1.0, 1.0];
            for f in 0..4 {
                grad[o + f] -= 2.0 * weights.obj * d * d_overlap[f] * chain[f];
            }
        }

        let co = grid.category_offset(cell);
        for l in 0..grid.c {
            let d = pred[co + l] - target[co + l];
            loss += weights.category * d * d;
            grad[co + l] += 2.0 * weights.category * d;
        }
    }
    Ok((loss, grad))
}

/// Scalar loss for one image.
pub fn yolo_loss(
    pred: &[f64],
    target: &[f64],
    grid: GridSpec,
    weights: LossWeights,
) -> Result<f64, LossError> {
    yolo_loss_with_grad(pred, target, grid, weights).map(|(l, _)| l)
}

struct YoloLossOp {
    grad: Vec<f64>,
}

impl CustomOp for YoloLossOp {
    fn name(&self) -> &'static str {
        "yolo_loss"
    }

    fn backward(&self, inputs: &[&Tensor], _output: &Tensor, grad_out: &Tensor) -> Vec<Tensor> {
        let scale = grad_out.data()[0];
        let g = self.grad.iter().map(|v| v * scale).collect();
        vec![Tensor::new(inputs[0].shape(), g).expect("loss gradient has prediction shape")]
    }
}

/// Records the loss of the head output `pred` against `target` on the tape.
pub fn record_yolo_loss(
    tape: &mut Tape,
    pred: Var,
    target: &[f64],
    grid: GridSpec,
    weights: LossWeights,
) -> Result<Var, LossError> {
    let (loss, grad) = yolo_loss_with_grad(tape.value(pred).data(), target, grid, weights)?;
    Ok(tape.custom(&[pred], Tensor::scalar(loss), Box::new(YoloLossOp { grad })))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::encode_targets;

    fn grid() -> GridSpec {
        GridSpec::new(7, 2, 3).unwrap()
    }

    #[test]
    fn perfect_prediction_without_objects_costs_nothing() {
        let t = vec![0.0; 637];
        assert_eq!(yolo_loss(&t, &t, grid(), LossWeights::default()).unwrap(), 0.0);
    }

    #[test]
    fn stray_confidence_costs_its_square() {
        let t = vec![0.0; 637];
        let mut p = t.clone();
        p[grid().box_offset(10, 1) + 4] = 0.2;
        let l = yolo_loss(&p, &t, grid(), LossWeights::default()).unwrap();
        assert!((l - 0.04).abs() < 1e-15);
    }

    #[test]
    fn exact_object_prediction_costs_nothing() {
        let gts = [(BBox::new(0.4, 0.6, 0.2, 0.1).unwrap(), 2)];
        let t = encode_targets(&gts, grid()).unwrap().values;
        assert_eq!(yolo_loss(&t, &t, grid(), LossWeights::default()).unwrap(), 0.0);
    }

    #[test]
    fn responsible_box_follows_higher_iou() {
        let gt = BBox::new(0.5, 0.5, 0.2, 0.2).unwrap();
        let far = BBox::new(0.45, 0.5, 0.2, 0.2).unwrap();
        let near = BBox::new(0.49, 0.5, 0.2, 0.2).unwrap();
        assert_eq!(assign_responsible(&[far, near], &gt), 1);
        assert_eq!(assign_responsible(&[near], &gt), 0);
        let nowhere = BBox::new(0.05, 0.05, 0.05, 0.05).unwrap();
        assert_eq!(assign_responsible(&[nowhere, nowhere], &gt), 0);
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        assert!(matches!(
            yolo_loss(&[0.0; 10], &[0.0; 637], grid(), LossWeights::default()),
            Err(LossError::Shape(_))
        ));
    }

    #[test]
    fn negative_weight_is_rejected() {
        let w = LossWeights {
            noobj: -1.0,
            ..LossWeights::default()
        };
        assert!(yolo_loss(&[0.0; 637], &[0.0; 637], grid(), w).is_err());
    }

    #[test]
    fn iou_gradient_matches_central_differences() {
        let gt = BBox { cx: 0.5, cy: 0.45, w: 0.3, h: 0.2 };
        let cases = [
            BBox { cx: 0.56, cy: 0.5, w: 0.2, h: 0.25 },
            BBox { cx: 0.41, cy: 0.42, w: 0.5, h: 0.1 },
            BBox { cx: 0.62, cy: 0.33, w: 0.3, h: 0.3 },
        ];
        let h = 1e-7;
        for a in cases {
            let (_, g) = iou_with_grad(&a, &gt);
            for k in 0..4 {
                let bump = |d: f64| {
                    let mut b = a;
                    match k {
                        0 => b.cx += d,
                        1 => b.cy += d,
                        2 => b.w += d,
                        _ => b.h += d,
                    }
                    iou(&b, &gt)
                };
                let fd = (bump(h) - bump(-h)) / (2.0 * h);
                assert!((fd - g[k]).abs() < 1e-6, "field {k}: fd {fd} vs {}", g[k]);
            }
        }
    }
}
