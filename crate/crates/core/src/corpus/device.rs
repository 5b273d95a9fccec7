//! Device categories, types and their MRI-safety levels.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::Error;

pub const NUM_DEVICE_TYPES: usize = 9;
/// Device types plus one background class.
pub const NUM_CLASSES: usize = NUM_DEVICE_TYPES + 1;
pub const BACKGROUND_CLASS: usize = NUM_DEVICE_TYPES;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Category {
    /// Lead-less pacemaker.
    #[serde(rename = "LLP")]
    Llp,
    /// Lead-less (insertable) recorder.
    #[serde(rename = "LLR")]
    Llr,
    /// Pulmonary artery pressure monitor.
    #[serde(rename = "PAPM")]
    Papm,
    /// Esophageal reflux capsule.
    #[serde(rename = "ERC")]
    Erc,
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Category::Llp => "LLP",
            Category::Llr => "LLR",
            Category::Papm => "PAPM",
            Category::Erc => "ERC",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum DeviceType {
    #[serde(rename = "LLP1")]
    Llp1,
    #[serde(rename = "LLP2")]
    Llp2,
    #[serde(rename = "LLR1")]
    Llr1,
    #[serde(rename = "LLR2")]
    Llr2,
    #[serde(rename = "LLR3")]
    Llr3,
    #[serde(rename = "LLR4")]
    Llr4,
    #[serde(rename = "LLR5")]
    Llr5,
    #[serde(rename = "PAPM1")]
    Papm1,
    #[serde(rename = "ERC1")]
    Erc1,
}

impl DeviceType {
    pub const ALL: [DeviceType; NUM_DEVICE_TYPES] = [
        DeviceType::Llp1,
        DeviceType::Llp2,
        DeviceType::Llr1,
        DeviceType::Llr2,
        DeviceType::Llr3,
        DeviceType::Llr4,
        DeviceType::Llr5,
        DeviceType::Papm1,
        DeviceType::Erc1,
    ];

    /// Class index in classifier outputs.
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<DeviceType> {
        Self::ALL.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            DeviceType::Llp1 => "LLP1",
            DeviceType::Llp2 => "LLP2",
            DeviceType::Llr1 => "LLR1",
            DeviceType::Llr2 => "LLR2",
            DeviceType::Llr3 => "LLR3",
            DeviceType::Llr4 => "LLR4",
            DeviceType::Llr5 => "LLR5",
            DeviceType::Papm1 => "PAPM1",
            DeviceType::Erc1 => "ERC1",
        }
    }

    pub fn entry(self) -> &'static RegistryEntry {
        &REGISTRY[self.index()]
    }

    pub fn category(self) -> Category {
        self.entry().category
    }
}

impl fmt::Display for DeviceType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for DeviceType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        DeviceType::ALL
            .iter()
            .copied()
            .find(|t| t.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::invalid(format!("unknown device type {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum MriSafety {
    /// Safe when following manufacturer conditions.
    Conditional,
    /// Safe only under stringent, highly specific scan restrictions.
    StringentlyConditional,
    Unsafe,
    InformationNotAvailable,
}

impl fmt::Display for MriSafety {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MriSafety::Conditional => "Conditional",
            MriSafety::StringentlyConditional => "StringentlyConditional",
            MriSafety::Unsafe => "Unsafe",
            MriSafety::InformationNotAvailable => "InformationNotAvailable",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RegistryEntry {
    pub device_type: DeviceType,
    pub category: Category,
    /// Regulatory approval, month/year.
    pub approval: &'static str,
    pub mri_1_5t: MriSafety,
    pub mri_3t: MriSafety,
}

impl RegistryEntry {
    /// The more restrictive of the two field-strength ratings, used when a
    /// single safety level is reported.
    pub fn worst_safety(&self) -> MriSafety {
        use MriSafety::*;
        let rank = |s: MriSafety| match s {
            Conditional => 0,
            InformationNotAvailable => 1,
            StringentlyConditional => 2,
            Unsafe => 3,
        };
        if rank(self.mri_3t) > rank(self.mri_1_5t) {
            self.mri_3t
        } else {
            self.mri_1_5t
        }
    }
}

const fn entry(
    device_type: DeviceType,
    category: Category,
    approval: &'static str,
    mri_1_5t: MriSafety,
    mri_3t: MriSafety,
) -> RegistryEntry {
    RegistryEntry {
        device_type,
        category,
        approval,
        mri_1_5t,
        mri_3t,
    }
}

pub static REGISTRY: [RegistryEntry; NUM_DEVICE_TYPES] = {
    use Category::*;
    use DeviceType::*;
    use MriSafety::*;
    [
        entry(Llp1, Llp, "10/2013", Conditional, Conditional),
        entry(Llp2, Llp, "04/2016", Conditional, Conditional),
        entry(Llr1, Llr, "11/2007", Conditional, Conditional),
        entry(Llr2, Llr, "08/2008", Conditional, InformationNotAvailable),
        entry(Llr3, Llr, "02/2014", Conditional, Conditional),
        entry(Llr4, Llr, "04/2016", Conditional, Conditional),
        entry(Llr5, Llr, "09/2017", Conditional, Conditional),
        entry(Papm1, Papm, "10/2006", StringentlyConditional, StringentlyConditional),
        entry(Erc1, Erc, "12/2010", Unsafe, Unsafe),
    ]
};

/// Tier-2 output class: one of the device types or background.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ClassLabel {
    Device(DeviceType),
    Background,
}

impl ClassLabel {
    pub fn index(self) -> usize {
        match self {
            ClassLabel::Device(t) => t.index(),
            ClassLabel::Background => BACKGROUND_CLASS,
        }
    }

    pub fn from_index(i: usize) -> Option<ClassLabel> {
        if i == BACKGROUND_CLASS {
            Some(ClassLabel::Background)
        } else {
            DeviceType::from_index(i).map(ClassLabel::Device)
        }
    }
}
