//! Dataset splitting, lateral-view eligibility, augmentation and balancing.

pub mod augment;
pub mod balance;
pub mod split;

pub use augment::{augment_roi, AugmentParams};
pub use balance::{
    balance_datasets, lateral_eligibility, BalanceLedger, BalancedItem, BalancedSets, ItemKind,
    LedgerRow, F_MIN,
};
pub use split::{split_exams, split_patients, ExamTag, Pool, SplitAssignment, Subset, Transfer};
