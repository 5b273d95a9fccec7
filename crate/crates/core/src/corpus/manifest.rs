//! Patient → exam → image → ROI hierarchy and its JSON manifest file.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::device::DeviceType;
use crate::error::{Error, Result};
use crate::fsutil;
use crate::geometry::BoundingBox;

pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum View {
    Frontal,
    Lateral,
}

/// Per-ROI image-quality grade.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum QualityGrade {
    /// Unequivocally diagnostic.
    #[serde(rename = "ID")]
    Id,
    /// Potentially non-recognizable (poor visibility).
    #[serde(rename = "NR")]
    Nr,
    /// Overlapped by other radio-opaque material or truncated at the margin.
    #[serde(rename = "OL")]
    Ol,
    #[serde(rename = "NR_OL")]
    NrOl,
}

impl QualityGrade {
    pub const ALL: [QualityGrade; 4] = [
        QualityGrade::Id,
        QualityGrade::Nr,
        QualityGrade::Ol,
        QualityGrade::NrOl,
    ];

    pub fn has_nr(self) -> bool {
        matches!(self, QualityGrade::Nr | QualityGrade::NrOl)
    }

    pub fn has_ol(self) -> bool {
        matches!(self, QualityGrade::Ol | QualityGrade::NrOl)
    }

    pub fn name(self) -> &'static str {
        match self {
            QualityGrade::Id => "ID",
            QualityGrade::Nr => "NR",
            QualityGrade::Ol => "OL",
            QualityGrade::NrOl => "NR_OL",
        }
    }
}

/// Synthetic projection parameters of a lateral-view ROI.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProjectionParams {
    /// Projected over true long-axis length, in (0, 1].
    pub foreshortening: f64,
    pub en_face: bool,
    /// Apparent body length over diameter after foreshortening.
    pub length_to_diameter: f64,
}

/// Degradations the generator applied to a ROI; they determine its grade.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Degradations {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub blur_sigma_mm: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub contrast_factor: Option<f64>,
    #[serde(default)]
    pub distractors: u32,
    #[serde(default)]
    pub truncated: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoiAnnotation {
    pub roi_id: String,
    pub image_id: String,
    #[serde(rename = "box")]
    pub bbox: BoundingBox,
    pub device_type: DeviceType,
    pub grade: QualityGrade,
    pub view: View,
    #[serde(default)]
    pub truncated: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub projection: Option<ProjectionParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub degradations: Option<Degradations>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Provenance {
    Synthetic {
        seed: u64,
        noise_sigma: f64,
        background_level: f64,
    },
    External {
        source: String,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageRecord {
    pub image_id: String,
    pub view: View,
    pub width_px: u32,
    pub height_px: u32,
    /// Isotropic pixel spacing, mm per pixel.
    pub pixel_spacing_mm: f64,
    /// Pixel file path relative to the manifest directory.
    pub pixel_file: String,
    pub provenance: Provenance,
}

impl ImageRecord {
    pub fn width_mm(&self) -> f64 {
        f64::from(self.width_px) * self.pixel_spacing_mm
    }

    pub fn height_mm(&self) -> f64 {
        f64::from(self.height_px) * self.pixel_spacing_mm
    }

    pub fn bounds_mm(&self) -> Result<BoundingBox> {
        BoundingBox::new(0.0, 0.0, self.width_mm(), self.height_mm())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Exam {
    pub acc: String,
    pub timestamp: String,
    pub image_ids: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Patient {
    pub mrn: String,
    pub exams: Vec<Exam>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusManifest {
    pub manifest_version: u32,
    pub patients: Vec<Patient>,
    pub images: Vec<ImageRecord>,
    pub annotations: Vec<RoiAnnotation>,
}

impl Default for CorpusManifest {
    fn default() -> Self {
        CorpusManifest {
            manifest_version: MANIFEST_VERSION,
            patients: Vec::new(),
            images: Vec::new(),
            annotations: Vec::new(),
        }
    }
}

impl CorpusManifest {
    /// Checks identifier uniqueness and reference integrity.
    pub fn validate(&self) -> Result<()> {
        if self.manifest_version != MANIFEST_VERSION {
            return Err(Error::Integrity(format!(
                "manifest_version {} is not supported (expected {MANIFEST_VERSION})",
                self.manifest_version
            )));
        }
        let mut images: HashMap<&str, &ImageRecord> = HashMap::new();
        for img in &self.images {
            if img.pixel_spacing_mm.is_nan()
                || img.pixel_spacing_mm <= 0.0
                || img.width_px == 0
                || img.height_px == 0
            {
                return Err(Error::Integrity(format!(
                    "image {} has invalid geometry",
                    img.image_id
                )));
            }
            if images.insert(&img.image_id, img).is_some() {
                return Err(Error::Integrity(format!(
                    "duplicate image_id {}",
                    img.image_id
                )));
            }
        }
        let mut mrns = HashSet::new();
        let mut accs = HashSet::new();
        let mut owned_images = HashSet::new();
        for p in &self.patients {
            if !mrns.insert(p.mrn.as_str()) {
                return Err(Error::Integrity(format!("duplicate mrn {}", p.mrn)));
            }
            for e in &p.exams {
                if !accs.insert(e.acc.as_str()) {
                    return Err(Error::Integrity(format!("duplicate acc {}", e.acc)));
                }
                for id in &e.image_ids {
                    if !images.contains_key(id.as_str()) {
                        return Err(Error::Integrity(format!(
                            "exam {} references missing image {id}",
                            e.acc
                        )));
                    }
                    if !owned_images.insert(id.as_str()) {
                        return Err(Error::Integrity(format!(
                            "image {id} belongs to more than one exam"
                        )));
                    }
                }
            }
        }
        let mut rois = HashSet::new();
        for a in &self.annotations {
            if !rois.insert(a.roi_id.as_str()) {
                return Err(Error::Integrity(format!("duplicate roi_id {}", a.roi_id)));
            }
            let Some(img) = images.get(a.image_id.as_str()) else {
                return Err(Error::Integrity(format!(
                    "annotation {} references missing image {}",
                    a.roi_id, a.image_id
                )));
            };
            if a.view != img.view {
                return Err(Error::Integrity(format!(
                    "annotation {} view does not match image {}",
                    a.roi_id, a.image_id
                )));
            }
            let inside = a.bbox.x_min() >= 0.0
                && a.bbox.y_min() >= 0.0
                && a.bbox.x_max() <= img.width_mm() + 1e-9
                && a.bbox.y_max() <= img.height_mm() + 1e-9;
            if !inside && !a.truncated {
                return Err(Error::Integrity(format!(
                    "annotation {} lies outside image {} but is not flagged truncated",
                    a.roi_id, a.image_id
                )));
            }
            if a.truncated && !a.grade.has_ol() {
                return Err(Error::Integrity(format!(
                    "annotation {} is truncated but graded {}",
                    a.roi_id,
                    a.grade.name()
                )));
            }
        }
        Ok(())
    }

    pub fn index(&self) -> ManifestIndex<'_> {
        ManifestIndex::new(self)
    }

    pub fn image_count(&self) -> usize {
        self.images.len()
    }

    pub fn exam_count(&self) -> usize {
        self.patients.iter().map(|p| p.exams.len()).sum()
    }
}

/// Lookup tables over a manifest.
pub struct ManifestIndex<'a> {
    pub manifest: &'a CorpusManifest,
    images: HashMap<&'a str, &'a ImageRecord>,
    image_exam: HashMap<&'a str, &'a str>,
    exam_patient: HashMap<&'a str, &'a str>,
    rois_by_image: BTreeMap<&'a str, Vec<&'a RoiAnnotation>>,
}

impl<'a> ManifestIndex<'a> {
    fn new(manifest: &'a CorpusManifest) -> Self {
        let images = manifest
            .images
            .iter()
            .map(|i| (i.image_id.as_str(), i))
            .collect();
        let mut image_exam = HashMap::new();
        let mut exam_patient = HashMap::new();
        for p in &manifest.patients {
            for e in &p.exams {
                exam_patient.insert(e.acc.as_str(), p.mrn.as_str());
                for id in &e.image_ids {
                    image_exam.insert(id.as_str(), e.acc.as_str());
                }
            }
        }
        let mut rois_by_image: BTreeMap<&str, Vec<&RoiAnnotation>> = BTreeMap::new();
        for a in &manifest.annotations {
            rois_by_image.entry(a.image_id.as_str()).or_default().push(a);
        }
        ManifestIndex {
            manifest,
            images,
            image_exam,
            exam_patient,
            rois_by_image,
        }
    }

    pub fn image(&self, image_id: &str) -> Option<&'a ImageRecord> {
        self.images.get(image_id).copied()
    }

    pub fn exam_of_image(&self, image_id: &str) -> Option<&'a str> {
        self.image_exam.get(image_id).copied()
    }

    pub fn patient_of_exam(&self, acc: &str) -> Option<&'a str> {
        self.exam_patient.get(acc).copied()
    }

    pub fn rois_of_image(&self, image_id: &str) -> &[&'a RoiAnnotation] {
        self.rois_by_image
            .get(image_id)
            .map(Vec::as_slice)
            .unwrap_or(&[])
    }
}

pub fn save_manifest(manifest: &CorpusManifest, path: &Path) -> Result<()> {
    fsutil::write_json_atomic(path, manifest)
}

pub fn load_manifest(path: &Path) -> Result<CorpusManifest> {
    let m: CorpusManifest = fsutil::read_json(path)?;
    m.validate()?;
    Ok(m)
}
