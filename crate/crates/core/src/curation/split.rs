//! Patient-level pool split followed by exam-level Training/Validation split.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::corpus::{CorpusManifest, DeviceType, View};
use crate::error::{Error, Result};
use crate::seeds;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Pool {
    TrainVal,
    Test,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ExamTag {
    Training,
    Validation,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Subset {
    Training,
    Validation,
    Testing,
}

impl Subset {
    pub const ALL: [Subset; 3] = [Subset::Training, Subset::Validation, Subset::Testing];

    pub fn name(self) -> &'static str {
        match self {
            Subset::Training => "Training",
            Subset::Validation => "Validation",
            Subset::Testing => "Testing",
        }
    }
}

/// One logged exception move.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transfer {
    /// MRN for patient moves, ACC for exam moves.
    pub id: String,
    pub device_type: DeviceType,
    pub from: String,
    pub to: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitAssignment {
    pub seed: u64,
    pub patients: BTreeMap<String, Pool>,
    /// Tags for exams of TrainVal patients only.
    #[serde(default)]
    pub exams: BTreeMap<String, ExamTag>,
    #[serde(default)]
    pub transfers: Vec<Transfer>,
    #[serde(default)]
    pub warnings: Vec<String>,
}

impl SplitAssignment {
    /// Final subset of an exam, if the exam's patient has been assigned and
    /// (for TrainVal) the exam has been tagged.
    pub fn subset_of_exam(&self, mrn: &str, acc: &str) -> Option<Subset> {
        match self.patients.get(mrn)? {
            Pool::Test => Some(Subset::Testing),
            Pool::TrainVal => self.exams.get(acc).map(|t| match t {
                ExamTag::Training => Subset::Training,
                ExamTag::Validation => Subset::Validation,
            }),
        }
    }

    /// Subset of every image in the manifest.
    pub fn image_subsets(&self, manifest: &CorpusManifest) -> BTreeMap<String, Subset> {
        let mut out = BTreeMap::new();
        for p in &manifest.patients {
            for e in &p.exams {
                if let Some(s) = self.subset_of_exam(&p.mrn, &e.acc) {
                    for id in &e.image_ids {
                        out.insert(id.clone(), s);
                    }
                }
            }
        }
        out
    }

    pub fn subset_image_ids(&self, manifest: &CorpusManifest, subset: Subset) -> Vec<String> {
        self.image_subsets(manifest)
            .into_iter()
            .filter(|(_, s)| *s == subset)
            .map(|(id, _)| id)
            .collect()
    }
}

/// Device types with at least one frontal ROI in each exam.
fn exam_types(manifest: &CorpusManifest) -> BTreeMap<String, BTreeSet<DeviceType>> {
    let index = manifest.index();
    let mut out: BTreeMap<String, BTreeSet<DeviceType>> = BTreeMap::new();
    for p in &manifest.patients {
        for e in &p.exams {
            let set = out.entry(e.acc.clone()).or_default();
            for id in &e.image_ids {
                for roi in index.rois_of_image(id) {
                    if roi.view == View::Frontal {
                        set.insert(roi.device_type);
                    }
                }
            }
        }
    }
    out
}

struct PatientTypes {
    /// mrn -> (exam count, per-type exam counts)
    by_patient: BTreeMap<String, (usize, BTreeMap<DeviceType, usize>)>,
}

impl PatientTypes {
    fn new(manifest: &CorpusManifest) -> Self {
        let et = exam_types(manifest);
        let by_patient = manifest
            .patients
            .iter()
            .map(|p| {
                let mut counts = BTreeMap::new();
                for e in &p.exams {
                    for &t in &et[&e.acc] {
                        *counts.entry(t).or_insert(0) += 1;
                    }
                }
                (p.mrn.clone(), (p.exams.len(), counts))
            })
            .collect();
        PatientTypes { by_patient }
    }

    fn exams_in(&self, pools: &BTreeMap<String, Pool>, pool: Pool, t: DeviceType) -> usize {
        self.by_patient
            .iter()
            .filter(|(m, _)| pools[*m] == pool)
            .map(|(_, (_, c))| c.get(&t).copied().unwrap_or(0))
            .sum()
    }

    fn holders(&self, t: DeviceType) -> Vec<&str> {
        self.by_patient
            .iter()
            .filter(|(_, (_, c))| c.contains_key(&t))
            .map(|(m, _)| m.as_str())
            .collect()
    }

    fn total_exams(&self, t: DeviceType) -> usize {
        self.by_patient.values().map(|(_, c)| c.get(&t).copied().unwrap_or(0)).sum()
    }

    /// Best patient to move out of `from` to give `to` coverage of `t`: must
    /// hold `t`, must leave `from` with at least one exam of `t`, and
    /// preferably removes no type's last exam from `from`. Fewest exams first.
    fn pick_mover(&self, pools: &BTreeMap<String, Pool>, from: Pool, t: DeviceType) -> Option<String> {
        let remaining_after = |mrn: &str, ty: DeviceType| {
            self.exams_in(pools, from, ty) - self.by_patient[mrn].1.get(&ty).copied().unwrap_or(0)
        };
        let mut candidates: Vec<(bool, usize, &str)> = self
            .by_patient
            .iter()
            .filter(|(m, (_, c))| pools[*m] == from && c.contains_key(&t))
            .filter(|(m, _)| remaining_after(m, t) >= 1)
            .map(|(m, (n, c))| {
                let breaks_other = c.keys().any(|&ty| remaining_after(m, ty) == 0);
                (breaks_other, *n, m.as_str())
            })
            .collect();
        candidates.sort();
        candidates.first().map(|c| c.2.to_string())
    }
}

fn pool_name(p: Pool) -> &'static str {
    match p {
        Pool::TrainVal => "TrainVal",
        Pool::Test => "Test",
    }
}

/// Random patient-level split with `round(ratio * n)` patients in TrainVal,
/// followed by rare-type exception transfers.
///
/// A type missing from Test but having at least two exams corpus-wide gains
/// one Test patient, taken from TrainVal without removing TrainVal's last
/// exam of that type. Symmetrically, a type missing from TrainVal takes one
/// patient back from Test. Types that cannot be split (a single exam, or all
/// exams belong to one patient) are kept in TrainVal and reported as
/// warnings.
pub fn split_patients(manifest: &CorpusManifest, ratio: f64, seed: u64) -> Result<SplitAssignment> {
    if manifest.patients.is_empty() {
        return Err(Error::invalid("cannot split a manifest with no patients"));
    }
    if !(0.0..=1.0).contains(&ratio) {
        return Err(Error::invalid(format!("patient split ratio {ratio} outside [0, 1]")));
    }
    let mut mrns: Vec<String> = manifest.patients.iter().map(|p| p.mrn.clone()).collect();
    mrns.sort();
    let mut rng = seeds::rng(seed, "split-patients", &[]);
    mrns.shuffle(&mut rng);
    let n_tv = (ratio * mrns.len() as f64).round() as usize;
    let mut pools: BTreeMap<String, Pool> = mrns
        .iter()
        .enumerate()
        .map(|(i, m)| (m.clone(), if i < n_tv { Pool::TrainVal } else { Pool::Test }))
        .collect();

    let pt = PatientTypes::new(manifest);
    let mut transfers = Vec::new();
    let mut warnings = Vec::new();
    for t in DeviceType::ALL {
        let total = pt.total_exams(t);
        if total == 0 {
            continue;
        }
        let holders = pt.holders(t);
        if total == 1 || holders.len() == 1 {
            let reason = if total == 1 {
                "only one exam in the corpus".to_string()
            } else {
                format!("all {total} exams belong to one patient")
            };
            warnings.push(format!("{t}: {reason}; kept in TrainVal only"));
            for m in holders {
                if pools[m] == Pool::Test {
                    pools.insert(m.to_string(), Pool::TrainVal);
                    transfers.push(Transfer {
                        id: m.to_string(),
                        device_type: t,
                        from: pool_name(Pool::Test).into(),
                        to: pool_name(Pool::TrainVal).into(),
                    });
                }
            }
            continue;
        }
        for (from, to) in [(Pool::TrainVal, Pool::Test), (Pool::Test, Pool::TrainVal)] {
            if pt.exams_in(&pools, to, t) > 0 {
                continue;
            }
            match pt.pick_mover(&pools, from, t) {
                Some(m) => {
                    pools.insert(m.clone(), to);
                    transfers.push(Transfer {
                        id: m,
                        device_type: t,
                        from: pool_name(from).into(),
                        to: pool_name(to).into(),
                    });
                }
                None => warnings.push(format!(
                    "{t}: no patient can move from {} to {}",
                    pool_name(from),
                    pool_name(to)
                )),
            }
        }
    }
    Ok(SplitAssignment {
        seed,
        patients: pools,
        exams: BTreeMap::new(),
        transfers,
        warnings,
    })
}

/// Pools every exam of the TrainVal patients and tags `round(ratio * n)` of
/// them (at least one) as Training, the rest as Validation. A follow-up
/// exchange step swaps exams so that each TrainVal type appears in Training,
/// and in Validation when it has at least two exams.
pub fn split_exams(
    manifest: &CorpusManifest,
    assignment: &SplitAssignment,
    ratio: f64,
    seed: u64,
) -> Result<SplitAssignment> {
    if !(0.0..=1.0).contains(&ratio) {
        return Err(Error::invalid(format!("exam split ratio {ratio} outside [0, 1]")));
    }
    let mut out = assignment.clone();
    let mut pool: Vec<String> = Vec::new();
    for p in &manifest.patients {
        match assignment.patients.get(&p.mrn) {
            Some(Pool::TrainVal) => pool.extend(p.exams.iter().map(|e| e.acc.clone())),
            Some(Pool::Test) => {}
            None => {
                return Err(Error::invalid(format!(
                    "patient {} has no pool assignment",
                    p.mrn
                )))
            }
        }
    }
    pool.sort();
    let mut rng = seeds::rng(seed, "split-exams", &[]);
    pool.shuffle(&mut rng);
    let n = pool.len();
    let n_train = if n == 0 {
        0
    } else {
        ((ratio * n as f64).round() as usize).clamp(1, n)
    };
    let mut tags: BTreeMap<String, ExamTag> = pool
        .iter()
        .enumerate()
        .map(|(i, a)| (a.clone(), if i < n_train { ExamTag::Training } else { ExamTag::Validation }))
        .collect();

    let et = exam_types(manifest);
    let count = |tags: &BTreeMap<String, ExamTag>, tag: ExamTag, t: DeviceType| {
        tags.iter().filter(|(a, g)| **g == tag && et[*a].contains(&t)).count()
    };
    // an exam can leave `tag` if no type loses its last exam there
    let safe_to_move = |tags: &BTreeMap<String, ExamTag>, acc: &str, tag: ExamTag| {
        et[acc].iter().all(|&ty| count(tags, tag, ty) > 1)
    };
    for t in DeviceType::ALL {
        let total = count(&tags, ExamTag::Training, t) + count(&tags, ExamTag::Validation, t);
        if total == 0 {
            continue;
        }
        for need in [ExamTag::Training, ExamTag::Validation] {
            if count(&tags, need, t) > 0 || (need == ExamTag::Validation && total < 2) {
                continue;
            }
            let other = match need {
                ExamTag::Training => ExamTag::Validation,
                ExamTag::Validation => ExamTag::Training,
            };
            // bring one exam of `t` into `need`, sending back one exam without `t`
            let incoming = pool.iter().find(|a| {
                tags[*a] == other && et[*a].contains(&t) && (need == ExamTag::Training || count(&tags, other, t) > 1)
            });
            let Some(incoming) = incoming.cloned() else {
                continue;
            };
            let outgoing = pool
                .iter()
                .find(|a| tags[*a] == need && !et[*a].contains(&t) && safe_to_move(&tags, a, need))
                .or_else(|| pool.iter().find(|a| tags[*a] == need && !et[*a].contains(&t)))
                .cloned();
            tags.insert(incoming.clone(), need);
            out.transfers.push(Transfer {
                id: incoming,
                device_type: t,
                from: format!("{other:?}"),
                to: format!("{need:?}"),
            });
            if let Some(o) = outgoing {
                tags.insert(o.clone(), other);
                out.transfers.push(Transfer {
                    id: o,
                    device_type: t,
                    from: format!("{need:?}"),
                    to: format!("{other:?}"),
                });
            }
        }
    }
    out.exams = tags;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Exam, ImageRecord, Patient, Provenance, QualityGrade, RoiAnnotation};
    use crate::geometry::BoundingBox;

    /// Builds a manifest where patient `i` has `exams[i]` exams each with one
    /// frontal ROI of type `types[i]`.
    pub(crate) fn toy_manifest(types: &[DeviceType], exams: &[usize]) -> CorpusManifest {
        let mut m = CorpusManifest::default();
        let mut k = 0;
        for (i, (&t, &n)) in types.iter().zip(exams).enumerate() {
            let mut p = Patient {
                mrn: format!("MRN{:05}", i + 1),
                exams: vec![],
            };
            for _ in 0..n {
                k += 1;
                let image_id = format!("IMG{k:06}");
                m.images.push(ImageRecord {
                    image_id: image_id.clone(),
                    view: View::Frontal,
                    width_px: 100,
                    height_px: 100,
                    pixel_spacing_mm: 1.0,
                    pixel_file: format!("images/{image_id}.pgm"),
                    provenance: Provenance::External { source: "toy".into() },
                });
                m.annotations.push(RoiAnnotation {
                    roi_id: format!("ROI{k:06}"),
                    image_id: image_id.clone(),
                    bbox: BoundingBox::new(10.0, 10.0, 40.0, 40.0).unwrap(),
                    device_type: t,
                    grade: QualityGrade::Id,
                    view: View::Frontal,
                    truncated: false,
                    projection: None,
                    degradations: None,
                });
                p.exams.push(Exam {
                    acc: format!("ACC{k:06}"),
                    timestamp: "2000-01-01".into(),
                    image_ids: vec![image_id],
                });
            }
            m.patients.push(p);
        }
        m.validate().unwrap();
        m
    }

    #[test]
    fn ten_patients_split_eight_two() {
        let m = toy_manifest(&[DeviceType::Papm1; 10], &[1; 10]);
        let a = split_patients(&m, 0.8, 3).unwrap();
        let tv = a.patients.values().filter(|p| **p == Pool::TrainVal).count();
        assert_eq!(tv, 8);
        assert!(a.transfers.is_empty());
        assert_eq!(a, split_patients(&m, 0.8, 3).unwrap());
    }

    #[test]
    fn rare_type_gets_transferred_to_test() {
        // two LLR4 patients; find a seed where both land in TrainVal
        let mut types = vec![DeviceType::Papm1; 8];
        types.extend([DeviceType::Llr4, DeviceType::Llr4]);
        let m = toy_manifest(&types, &[1; 10]);
        let mut found = false;
        for seed in 0..200 {
            let a = split_patients(&m, 0.8, seed).unwrap();
            let in_test = ["MRN00009", "MRN00010"].iter().filter(|m| a.patients[**m] == Pool::Test).count();
            assert_eq!(in_test, 1, "seed {seed}");
            if a.transfers.iter().any(|t| t.device_type == DeviceType::Llr4 && t.to == "Test") {
                found = true;
            }
        }
        assert!(found);
    }

    #[test]
    fn single_exam_type_stays_in_trainval_with_warning() {
        let mut types = vec![DeviceType::Papm1; 9];
        types.push(DeviceType::Erc1);
        let m = toy_manifest(&types, &[1; 10]);
        for seed in 0..20 {
            let a = split_patients(&m, 0.8, seed).unwrap();
            assert_eq!(a.patients["MRN00010"], Pool::TrainVal);
            assert!(a.warnings.iter().any(|w| w.starts_with("ERC1")));
        }
    }

    #[test]
    fn empty_manifest_is_rejected() {
        assert!(split_patients(&CorpusManifest::default(), 0.8, 0).is_err());
    }

    #[test]
    fn exam_split_ratio_and_rounding() {
        let m = toy_manifest(&[DeviceType::Papm1; 10], &[1; 10]);
        let mut a = split_patients(&m, 0.8, 1).unwrap();
        assert_eq!(a.patients.values().filter(|p| **p == Pool::Test).count(), 2);
        a.transfers.clear();
        let e = split_exams(&m, &a, 0.75, 1).unwrap();
        let tr = e.exams.values().filter(|t| **t == ExamTag::Training).count();
        assert_eq!((tr, e.exams.len()), (6, 8));

        let one = toy_manifest(&[DeviceType::Papm1], &[1]);
        let a = split_patients(&one, 0.8, 0).unwrap();
        let e = split_exams(&one, &a, 0.75, 0).unwrap();
        assert_eq!(e.exams.values().copied().collect::<Vec<_>>(), vec![ExamTag::Training]);
    }

    #[test]
    fn exchange_puts_every_type_in_training() {
        let mut types = vec![DeviceType::Papm1; 12];
        types.push(DeviceType::Llp2);
        let m = toy_manifest(&types, &[1; 13]);
        for seed in 0..30 {
            let mut a = split_patients(&m, 1.0, seed).unwrap();
            a.patients.values_mut().for_each(|p| *p = Pool::TrainVal);
            let e = split_exams(&m, &a, 0.75, seed).unwrap();
            let llp2_acc = &m.patients[12].exams[0].acc;
            assert_eq!(e.exams[llp2_acc], ExamTag::Training, "seed {seed}");
            let tr = e.exams.values().filter(|t| **t == ExamTag::Training).count();
            assert_eq!(tr, 10);
        }
    }
}
