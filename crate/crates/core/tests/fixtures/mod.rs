//! Random manifests and the curation invariants checked over them. Shared
//! with the acceptance target.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use cascade_screen::corpus::{
    CorpusManifest, DeviceType, Exam, ImageRecord, Patient, ProjectionParams, Provenance, QualityGrade, RoiAnnotation,
    View,
};
use cascade_screen::curation::{
    balance_datasets, split_exams, split_patients, BalanceLedger, BalancedSets, ItemKind, SplitAssignment, Subset,
};
use cascade_screen::geometry::BoundingBox;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Random manifest with every type carried by several patients and a mix of
/// eligible and ineligible laterals.
pub fn random_manifest(seed: u64) -> CorpusManifest {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut m = CorpusManifest::default();
    let n_patients = rng.random_range(54..80);
    let (mut n_img, mut n_roi, mut n_acc) = (0, 0, 0);
    for p in 0..n_patients {
        let t = if p < 45 { DeviceType::ALL[p % 9] } else { DeviceType::ALL[rng.random_range(0..9)] };
        let mut exams = Vec::new();
        for _ in 0..rng.random_range(1..=3) {
            n_acc += 1;
            let mut ids = Vec::new();
            let mut views = vec![View::Frontal; rng.random_range(1..=2)];
            if rng.random_bool(0.4) {
                views.push(View::Lateral);
            }
            for view in views {
                n_img += 1;
                let image_id = format!("IMG{n_img:05}");
                m.images.push(ImageRecord {
                    image_id: image_id.clone(),
                    view,
                    width_px: 100,
                    height_px: 100,
                    pixel_spacing_mm: 1.0,
                    pixel_file: format!("images/{image_id}.pgm"),
                    provenance: Provenance::External { source: "test".into() },
                });
                n_roi += 1;
                let projection = (view == View::Lateral).then(|| ProjectionParams {
                    foreshortening: rng.random_range(0.3..1.0),
                    en_face: rng.random_bool(0.5),
                    length_to_diameter: rng.random_range(1.0..5.0),
                });
                m.annotations.push(RoiAnnotation {
                    roi_id: format!("ROI{n_roi:05}"),
                    image_id: image_id.clone(),
                    bbox: BoundingBox::new(30.0, 30.0, 60.0, 62.0).unwrap(),
                    device_type: t,
                    grade: QualityGrade::Id,
                    view,
                    truncated: false,
                    projection,
                    degradations: None,
                });
                ids.push(image_id);
            }
            exams.push(Exam { acc: format!("ACC{n_acc:06}"), timestamp: "2000-01-01T00:00:00".into(), image_ids: ids });
        }
        m.patients.push(Patient { mrn: format!("MRN{p:05}"), exams });
    }
    m.validate().unwrap();
    m
}

pub fn curate(m: &CorpusManifest, seed: u64) -> (SplitAssignment, BalancedSets, BalanceLedger) {
    let pools = split_patients(m, 0.8, seed).unwrap();
    let split = split_exams(m, &pools, 0.75, seed).unwrap();
    let (sets, ledger) = balance_datasets(m, &split, seed).unwrap();
    (split, sets, ledger)
}

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

/// Every split and balance invariant for one curated manifest.
pub fn check_curation(m: &CorpusManifest, split: &SplitAssignment, sets: &BalancedSets, ledger: &BalanceLedger) -> Result<(), String> {
    let subsets = split.image_subsets(m);
    let roi_subset: BTreeMap<&str, Subset> =
        m.annotations.iter().map(|a| (a.roi_id.as_str(), subsets[&a.image_id])).collect();
    let roi_view: BTreeMap<&str, View> = m.annotations.iter().map(|a| (a.roi_id.as_str(), a.view)).collect();

    // every image is assigned; no patient straddles Testing, no exam straddles subsets
    ensure!(subsets.len() == m.images.len(), "{} of {} images assigned", subsets.len(), m.images.len());
    for p in &m.patients {
        let seen: BTreeSet<Subset> = p.exams.iter().flat_map(|e| e.image_ids.iter().map(|id| subsets[id])).collect();
        ensure!(!(seen.contains(&Subset::Testing) && seen.len() > 1), "patient {} leaks into Testing", p.mrn);
        for e in &p.exams {
            let s: BTreeSet<Subset> = e.image_ids.iter().map(|id| subsets[id]).collect();
            ensure!(s.len() == 1, "exam {} split across subsets", e.acc);
        }
    }
    // balanced items only draw on their own subset
    for (items, subset) in [(&sets.training, Subset::Training), (&sets.validation, Subset::Validation)] {
        for it in items {
            ensure!(roi_subset[it.roi_id.as_str()] == subset, "{} leaks into {}", it.roi_id, subset.name());
        }
    }
    for id in &sets.testing {
        ensure!(roi_subset[id.as_str()] == Subset::Testing, "{id} listed as Testing");
        ensure!(roi_view[id.as_str()] == View::Frontal, "lateral {id} in Testing");
    }

    for subset in [Subset::Training, Subset::Validation] {
        let rows: Vec<_> = ledger.rows.iter().filter(|r| r.subset == subset).collect();
        let totals: BTreeSet<usize> = rows.iter().map(|r| r.total).collect();
        ensure!(totals.len() == 1, "{} totals differ: {totals:?}", subset.name());
        let largest = rows.iter().map(|r| r.available_frontal).max().unwrap();
        for r in &rows {
            ensure!(r.available_frontal + r.added_lateral + r.added_augmented == r.total, "A+B+C != total: {r:?}");
            ensure!(r.subtotal == r.available_frontal + r.added_lateral, "A+B != subtotal: {r:?}");
            ensure!(r.added_lateral <= r.eligible_lateral, "more laterals than eligible: {r:?}");
            if r.available_frontal == largest {
                ensure!((r.added_lateral, r.added_augmented) == (0, 0), "largest class expanded: {r:?}");
            }
        }
        let items = if subset == Subset::Training { &sets.training } else { &sets.validation };
        ensure!(items.len() == rows.iter().map(|r| r.total).sum::<usize>(), "{} item count off", subset.name());
    }
    for r in ledger.rows.iter().filter(|r| r.subset == Subset::Testing) {
        ensure!((r.added_lateral, r.added_augmented) == (0, 0), "Testing expanded: {r:?}");
        ensure!(r.total == r.available_frontal, "Testing total off: {r:?}");
    }
    let consistent = sets.training.iter().chain(&sets.validation).all(|it| match it.kind {
        ItemKind::Augmented { .. } => it.params.is_some(),
        _ => it.params.is_none(),
    });
    ensure!(consistent, "augmentation parameters on the wrong items");
    Ok(())
}
