//! Lateral-view eligibility and per-subset class balancing.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::augment::{augment_roi, AugmentParams};
use super::split::{SplitAssignment, Subset};
use crate::corpus::{extract_patch, CorpusManifest, DeviceType, Patch, Radiograph, RoiAnnotation, View};
use crate::error::{Error, Result};
use crate::seeds;

/// Minimum foreshortening ratio for a lateral ROI to be usable.
pub const F_MIN: f64 = 0.6;

/// Whether a lateral ROI shows enough of the device to be a training example.
pub fn lateral_eligibility(roi: &RoiAnnotation) -> Result<bool> {
    if roi.view != View::Lateral {
        return Err(Error::invalid(format!("{} is not a lateral ROI", roi.roi_id)));
    }
    let always = matches!(roi.device_type, DeviceType::Papm1 | DeviceType::Erc1);
    if always {
        return Ok(true);
    }
    let p = roi
        .projection
        .ok_or_else(|| Error::invalid(format!("{} has no projection parameters", roi.roi_id)))?;
    let f_ok = p.foreshortening >= F_MIN;
    Ok(match roi.device_type {
        DeviceType::Llp1 => p.length_to_diameter > 3.0 && f_ok,
        DeviceType::Llp2 => p.length_to_diameter > 2.0 && f_ok,
        _ => f_ok && p.en_face,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ItemKind {
    Frontal,
    Lateral,
    Augmented { variant: u64 },
}

/// One training/validation example: a source ROI, optionally augmented.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BalancedItem {
    pub roi_id: String,
    pub device_type: DeviceType,
    pub kind: ItemKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub params: Option<AugmentParams>,
}

impl BalancedItem {
    /// Crops the source ROI and applies the augmentation, if any.
    pub fn materialize(&self, roi: &RoiAnnotation, image: &Radiograph, size: usize) -> Result<Patch> {
        let patch = extract_patch(image, &roi.bbox, size)?;
        match &self.params {
            Some(p) => augment_roi(&patch, p),
            None => Ok(patch),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LedgerRow {
    pub device_type: DeviceType,
    pub subset: Subset,
    /// A
    pub available_frontal: usize,
    pub eligible_lateral: usize,
    /// B
    pub added_lateral: usize,
    /// A + B
    pub subtotal: usize,
    /// C
    pub added_augmented: usize,
    /// A + B + C
    pub total: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BalanceLedger {
    pub rows: Vec<LedgerRow>,
    pub warnings: Vec<String>,
}

impl BalanceLedger {
    pub fn row(&self, t: DeviceType, subset: Subset) -> Option<&LedgerRow> {
        self.rows.iter().find(|r| r.device_type == t && r.subset == subset)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("device_type,subset,A_frontal,B_lateral,B_eligible,A_plus_B,C_augmented,total\n");
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{}",
                r.device_type,
                r.subset.name(),
                r.available_frontal,
                r.added_lateral,
                r.eligible_lateral,
                r.subtotal,
                r.added_augmented,
                r.total
            );
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BalancedSets {
    pub training: Vec<BalancedItem>,
    pub validation: Vec<BalancedItem>,
    /// Original frontal ROIs of the Test patients.
    pub testing: Vec<String>,
}

fn plain(roi: &RoiAnnotation, kind: ItemKind) -> BalancedItem {
    BalancedItem {
        roi_id: roi.roi_id.clone(),
        device_type: roi.device_type,
        kind,
        params: None,
    }
}

/// Expands Training and Validation so every represented type reaches the
/// subset's largest per-type frontal count: eligible laterals first, then
/// augmented variants of the type's frontal ROIs (laterals when it has none).
///
/// A type present in the corpus with no Training source is an error. A type
/// with no Validation source gets a zero row and a warning.
pub fn balance_datasets(
    manifest: &CorpusManifest,
    assignment: &SplitAssignment,
    seed: u64,
) -> Result<(BalancedSets, BalanceLedger)> {
    let subsets = assignment.image_subsets(manifest);
    let mut groups: BTreeMap<(Subset, DeviceType, View), Vec<&RoiAnnotation>> = BTreeMap::new();
    for roi in &manifest.annotations {
        if let Some(&s) = subsets.get(&roi.image_id) {
            groups.entry((s, roi.device_type, roi.view)).or_default().push(roi);
        }
    }
    for v in groups.values_mut() {
        v.sort_by(|a, b| a.roi_id.cmp(&b.roi_id));
    }
    let present: Vec<DeviceType> = DeviceType::ALL
        .into_iter()
        .filter(|t| manifest.annotations.iter().any(|a| a.device_type == *t))
        .collect();
    let empty = Vec::new();
    let get = |s, t, v| groups.get(&(s, t, v)).unwrap_or(&empty);

    let mut ledger = BalanceLedger { rows: Vec::new(), warnings: Vec::new() };
    let mut sets = BalancedSets { training: Vec::new(), validation: Vec::new(), testing: Vec::new() };

    for subset in [Subset::Training, Subset::Validation] {
        let target = present.iter().map(|&t| get(subset, t, View::Frontal).len()).max().unwrap_or(0);
        let items = match subset {
            Subset::Training => &mut sets.training,
            _ => &mut sets.validation,
        };
        for &t in &present {
            let frontal = get(subset, t, View::Frontal);
            let mut eligible: Vec<&RoiAnnotation> = Vec::new();
            for roi in get(subset, t, View::Lateral) {
                if lateral_eligibility(roi)? {
                    eligible.push(roi);
                }
            }
            let a = frontal.len();
            if a == 0 && eligible.is_empty() {
                if subset == Subset::Training {
                    return Err(Error::BalancingInfeasible {
                        device_type: t.to_string(),
                        subset: subset.name().into(),
                    });
                }
                ledger.warnings.push(format!("{t}: no {} ROIs; left empty", subset.name()));
                ledger.rows.push(LedgerRow {
                    device_type: t,
                    subset,
                    available_frontal: 0,
                    eligible_lateral: 0,
                    added_lateral: 0,
                    subtotal: 0,
                    added_augmented: 0,
                    total: 0,
                });
                continue;
            }
            let mut rng = seeds::rng(seed, "balance-laterals", &[subset as u64, t.index() as u64]);
            eligible.shuffle(&mut rng);
            let b = eligible.len().min(target - a);
            let chosen = &eligible[..b];
            items.extend(frontal.iter().map(|r| plain(r, ItemKind::Frontal)));
            items.extend(chosen.iter().map(|r| plain(r, ItemKind::Lateral)));

            let c = target - a - b;
            let sources: &[&RoiAnnotation] = if a > 0 { frontal } else { chosen };
            for k in 0..c {
                let src = sources[k % sources.len()];
                let variant = (k / sources.len()) as u64;
                items.push(BalancedItem {
                    roi_id: src.roi_id.clone(),
                    device_type: t,
                    kind: ItemKind::Augmented { variant },
                    params: Some(AugmentParams::for_variant(seed, &src.roi_id, variant)),
                });
            }
            ledger.rows.push(LedgerRow {
                device_type: t,
                subset,
                available_frontal: a,
                eligible_lateral: eligible.len(),
                added_lateral: b,
                subtotal: a + b,
                added_augmented: c,
                total: a + b + c,
            });
        }
    }
    for &t in &present {
        let frontal = get(Subset::Testing, t, View::Frontal);
        sets.testing.extend(frontal.iter().map(|r| r.roi_id.clone()));
        let eligible = get(Subset::Testing, t, View::Lateral)
            .iter()
            .map(|r| lateral_eligibility(r))
            .collect::<Result<Vec<bool>>>()?
            .into_iter()
            .filter(|&e| e)
            .count();
        ledger.rows.push(LedgerRow {
            device_type: t,
            subset: Subset::Testing,
            available_frontal: frontal.len(),
            eligible_lateral: eligible,
            added_lateral: 0,
            subtotal: frontal.len(),
            added_augmented: 0,
            total: frontal.len(),
        });
    }
    sets.testing.sort();
    Ok((sets, ledger))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{ProjectionParams, QualityGrade};
    use crate::geometry::BoundingBox;

    fn lateral(t: DeviceType, f: f64, ld: f64, en_face: bool) -> RoiAnnotation {
        RoiAnnotation {
            roi_id: "ROI000001".into(),
            image_id: "IMG000001".into(),
            bbox: BoundingBox::new(0.0, 0.0, 20.0, 20.0).unwrap(),
            device_type: t,
            grade: QualityGrade::Id,
            view: View::Lateral,
            truncated: false,
            projection: Some(ProjectionParams { foreshortening: f, en_face, length_to_diameter: ld }),
            degradations: None,
        }
    }

    #[test]
    fn eligibility_rules() {
        assert!(lateral_eligibility(&lateral(DeviceType::Papm1, 0.1, 0.1, false)).unwrap());
        assert!(lateral_eligibility(&lateral(DeviceType::Erc1, 0.1, 0.1, false)).unwrap());
        assert!(!lateral_eligibility(&lateral(DeviceType::Llp1, 0.9, 2.5, true)).unwrap());
        assert!(lateral_eligibility(&lateral(DeviceType::Llp1, 0.9, 3.5, false)).unwrap());
        assert!(!lateral_eligibility(&lateral(DeviceType::Llp1, 0.5, 3.5, true)).unwrap());
        assert!(lateral_eligibility(&lateral(DeviceType::Llp2, 0.6, 2.1, false)).unwrap());
        assert!(!lateral_eligibility(&lateral(DeviceType::Llp2, 0.6, 2.0, false)).unwrap());
        assert!(!lateral_eligibility(&lateral(DeviceType::Llr3, 0.9, 6.0, false)).unwrap());
        assert!(lateral_eligibility(&lateral(DeviceType::Llr3, 0.6, 6.0, true)).unwrap());
        assert!(!lateral_eligibility(&lateral(DeviceType::Llr5, 0.59, 6.0, true)).unwrap());
        let mut frontal = lateral(DeviceType::Papm1, 1.0, 1.0, true);
        frontal.view = View::Frontal;
        assert!(lateral_eligibility(&frontal).is_err());
    }

    #[test]
    fn csv_has_one_line_per_row() {
        let ledger = BalanceLedger {
            rows: vec![LedgerRow {
                device_type: DeviceType::Llp1,
                subset: Subset::Training,
                available_frontal: 24,
                eligible_lateral: 16,
                added_lateral: 16,
                subtotal: 40,
                added_augmented: 1186,
                total: 1226,
            }],
            warnings: vec![],
        };
        let csv = ledger.to_csv();
        assert_eq!(csv.lines().nth(1).unwrap(), "LLP1,Training,24,16,16,40,1186,1226");
    }
}
