//! Patients, exams, images and ROI annotations, plus the synthetic generator.

pub mod device;
pub mod glyph;
pub mod image;
pub mod manifest;
pub mod synth;

pub use device::{
    Category, ClassLabel, DeviceType, MriSafety, RegistryEntry, BACKGROUND_CLASS, NUM_CLASSES,
    NUM_DEVICE_TYPES, REGISTRY,
};
pub use image::{extract_patch, Patch, Radiograph};
pub use manifest::{
    load_manifest, save_manifest, CorpusManifest, Degradations, Exam, ImageRecord, ManifestIndex,
    Patient, ProjectionParams, Provenance, QualityGrade, RoiAnnotation, View, MANIFEST_VERSION,
};
pub use synth::{generate_synthetic_corpus, CorpusConfig, GradeMix, SyntheticCorpus};
