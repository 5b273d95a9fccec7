//! Brute-force reference implementations, written independently of the
//! library code they check. Shared with the acceptance target.
#![allow(dead_code)]

use cascade_screen::geometry::{iou, BoundingBox, ScoredBox};

/// The unique subset in which a box is kept exactly when no kept box that
/// precedes it (higher score, or equal score and lower index) overlaps it
/// above `thr`. Found by enumerating every subset.
pub fn nms_brute(boxes: &[ScoredBox], thr: f64) -> Vec<usize> {
    let n = boxes.len();
    let before = |a: usize, b: usize| boxes[a].score > boxes[b].score || (boxes[a].score == boxes[b].score && a < b);
    let mut found: Vec<Vec<usize>> = Vec::new();
    for mask in 0u32..(1 << n) {
        let kept = |i: usize| mask & (1 << i) != 0;
        let consistent = (0..n).all(|i| {
            let blocked = (0..n).any(|j| j != i && kept(j) && before(j, i) && iou(&boxes[j].bbox, &boxes[i].bbox) > thr);
            kept(i) == !blocked
        });
        if consistent {
            found.push((0..n).filter(|&i| kept(i)).collect());
        }
    }
    assert_eq!(found.len(), 1, "stable NMS set must be unique");
    let mut s = found.pop().unwrap();
    s.sort_by(|&a, &b| if before(a, b) { std::cmp::Ordering::Less } else { std::cmp::Ordering::Greater });
    s
}

/// Every one-to-one partial assignment of ROIs to detections (IoU >= min) is
/// enumerated; the answer is the one that is stable under the priority
/// order (IoU desc, ROI asc, detection asc): no eligible unmatched pair
/// outranks the pairs holding its ROI and its detection.
pub fn match_brute(gbbs: &[BoundingBox], rois: &[BoundingBox], iou_min: f64) -> Vec<(usize, usize)> {
    let key = |r: usize, g: usize| (iou(&rois[r], &gbbs[g]), r, g);
    let outranks = |a: (f64, usize, usize), b: (f64, usize, usize)| {
        a.0 > b.0 || (a.0 == b.0 && (a.1 < b.1 || (a.1 == b.1 && a.2 < b.2)))
    };
    let mut stable = Vec::new();
    let mut current: Vec<Option<usize>> = vec![None; rois.len()];
    fn rec(
        r: usize,
        current: &mut Vec<Option<usize>>,
        used: &mut Vec<bool>,
        visit: &mut dyn FnMut(&[Option<usize>]),
        ok: &dyn Fn(usize, usize) -> bool,
    ) {
        if r == current.len() {
            visit(current);
            return;
        }
        current[r] = None;
        rec(r + 1, current, used, visit, ok);
        for g in 0..used.len() {
            if !used[g] && ok(r, g) {
                used[g] = true;
                current[r] = Some(g);
                rec(r + 1, current, used, visit, ok);
                used[g] = false;
                current[r] = None;
            }
        }
    }
    let ok = |r: usize, g: usize| iou(&rois[r], &gbbs[g]) >= iou_min;
    let mut used = vec![false; gbbs.len()];
    let mut visit = |a: &[Option<usize>]| {
        let holder_of_g = |g: usize| a.iter().position(|&x| x == Some(g));
        let is_stable = (0..rois.len()).all(|r| {
            (0..gbbs.len()).all(|g| {
                if !ok(r, g) || a[r] == Some(g) {
                    return true;
                }
                let k = key(r, g);
                let r_blocks = a[r].is_some_and(|g2| outranks(key(r, g2), k));
                let g_blocks = holder_of_g(g).is_some_and(|r2| outranks(key(r2, g), k));
                r_blocks || g_blocks
            })
        });
        if is_stable {
            stable.push(a.to_vec());
        }
    };
    rec(0, &mut current, &mut used, &mut visit, &ok);
    assert_eq!(stable.len(), 1, "priority-stable matching must be unique");
    let mut pairs: Vec<(usize, usize)> =
        stable[0].iter().enumerate().filter_map(|(r, g)| g.map(|g| (r, g))).collect();
    pairs.sort();
    pairs
}

/// Pair-counting AUC: probability a random positive outranks a random
/// negative, ties counting one half.
pub fn auc_pairs(pos: &[f64], neg: &[f64]) -> f64 {
    let mut s = 0.0;
    for &p in pos {
        for &n in neg {
            s += if p > n { 1.0 } else if p == n { 0.5 } else { 0.0 };
        }
    }
    s / (pos.len() * neg.len()) as f64
}

/// Step-interpolated AP by exhaustive sweep: every distinct score is tried
/// as a threshold, each operating point is recomputed from scratch, and
/// recall gains are weighted by the precision where they occur.
pub fn ap_sweep(dets: &[(f64, bool)], positives: usize) -> f64 {
    let mut thresholds: Vec<f64> = dets.iter().map(|d| d.0).collect();
    thresholds.sort_by(|a, b| b.total_cmp(a));
    thresholds.dedup();
    let mut ap = 0.0;
    let mut prev = 0.0;
    for t in thresholds {
        let tp = dets.iter().filter(|d| d.0 >= t && d.1).count();
        let all = dets.iter().filter(|d| d.0 >= t).count();
        let r = tp as f64 / positives as f64;
        ap += (r - prev) * tp as f64 / all as f64;
        prev = r;
    }
    ap
}
