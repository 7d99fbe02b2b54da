//! Shared fixtures for the criterion benches under `benches/`.

use surprise_core::synthetic::{blobs, contrast_spec, LabeledData};

/// `labels` contrast-style labels with `per_label` documents each.
pub fn fixture(labels: usize, per_label: usize) -> LabeledData {
    blobs(&contrast_spec(labels, per_label, 7), "b").expect("valid fixture spec")
}
