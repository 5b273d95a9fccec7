use std::collections::BTreeMap;
use std::path::PathBuf;

use crate::corpus::{ImageRecord, Radiograph};
use crate::error::{Error, Result};

/// Source of pixel data for manifest images.
pub trait ImageStore: Sync {
    fn load(&self, record: &ImageRecord) -> Result<Radiograph>;
}

impl ImageStore for BTreeMap<String, Radiograph> {
    fn load(&self, record: &ImageRecord) -> Result<Radiograph> {
        self.get(&record.image_id)
            .cloned()
            .ok_or_else(|| Error::invalid(format!("no pixel data for {}", record.image_id)))
    }
}

/// Reads `pixel_file` relative to a corpus root.
pub struct DiskImageStore {
    pub root: PathBuf,
}

impl ImageStore for DiskImageStore {
    fn load(&self, record: &ImageRecord) -> Result<Radiograph> {
        let img = Radiograph::read_pgm(&self.root.join(&record.pixel_file), record.pixel_spacing_mm)?;
        if img.width != record.width_px as usize || img.height != record.height_px as usize {
            return Err(Error::Integrity(format!(
                "{} is {}x{} but the manifest says {}x{}",
                record.pixel_file, img.width, img.height, record.width_px, record.height_px
            )));
        }
        Ok(img)
    }
}
