//! Process-wide KKT audit of every certified optimum, compiled into builds
//! with debug assertions (including the default test profile).
//!
//! Each oracle optimum and each cached-region hit is re-checked against the
//! four KKT conditions at [`AUDIT_TOL`]; counts are read with [`counts`].

use std::sync::atomic::{AtomicBool, AtomicU64, AtomicUsize, Ordering};

use crate::qp::KktReport;

pub const AUDIT_TOL: f64 = 1e-7;

static ENABLED: AtomicBool = AtomicBool::new(true);
static CHECKED: AtomicUsize = AtomicUsize::new(0);
static FAILED: AtomicUsize = AtomicUsize::new(0);
// Non-negative floats order like their bit patterns.
static WORST_BITS: AtomicU64 = AtomicU64::new(0);

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AuditCounts {
    pub checked: usize,
    pub failed: usize,
    pub worst: f64,
}

/// Pause or resume recording, e.g. while timing code paths that would
/// otherwise pay for the extra residual computation unevenly.
pub fn set_enabled(on: bool) {
    ENABLED.store(on, Ordering::Relaxed);
}

pub(crate) fn enabled() -> bool {
    ENABLED.load(Ordering::Relaxed)
}

pub(crate) fn record(report: &KktReport) {
    CHECKED.fetch_add(1, Ordering::Relaxed);
    let worst = report.worst();
    if !report.passes(AUDIT_TOL) || !worst.is_finite() {
        FAILED.fetch_add(1, Ordering::Relaxed);
    }
    if worst.is_finite() {
        WORST_BITS.fetch_max(worst.to_bits(), Ordering::Relaxed);
    }
}

pub fn counts() -> AuditCounts {
    AuditCounts {
        checked: CHECKED.load(Ordering::Relaxed),
        failed: FAILED.load(Ordering::Relaxed),
        worst: f64::from_bits(WORST_BITS.load(Ordering::Relaxed)),
    }
}
