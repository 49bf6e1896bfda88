//! Explicit safety filters built on control barrier functions.
//!
//! The filter solves, at each state `x`,
//!
//! ```text
//! minimize  1/2 (u - k(x))' R (u - k(x))
//! s.t.      b_i(x)' u + a_i(x) <= 0,  i = 1..p
//! ```
//!
//! in closed form on the region where a given index set is the optimal active
//! set, and falls back to an iterative oracle only when the state leaves the
//! cached region.

pub mod affine;
#[cfg(debug_assertions)]
pub mod audit;
pub mod bench;
pub mod frontend;
pub mod lqr;
pub mod oracle;
pub mod qp;
pub mod region;
pub mod runtime;
pub mod scenario;
pub mod table;

pub use frontend::{Barrier, BarrierKind, ClassK, FilterProblem, InputBounds, LinearSystem, SlackPolicy};
pub use oracle::{SolveResult, Status, Theta};
pub use qp::{ActiveSet, ConstraintSet, Tolerances, WeightMatrix};
pub use region::{membership, MembershipResult, Reason, TriggerValues};

/// Guide chapters, compiled so their snippets run as doctests.
#[cfg(doctest)]
mod guide {
    macro_rules! chapter {
        ($name:ident, $file:literal) => {
            #[doc = include_str!(concat!("../../../book/src/", $file))]
            pub struct $name;
        };
    }
    chapter!(Introduction, "introduction.md");
    chapter!(QpAndRegions, "qp-and-regions.md");
    chapter!(Oracles, "oracles.md");
    chapter!(ExplicitLaws, "explicit-laws.md");
    chapter!(Runtime, "runtime.md");
    chapter!(Barriers, "barriers.md");
    chapter!(Scenarios, "scenarios.md");
    chapter!(RegionTable, "region-table.md");
    chapter!(Bench, "bench.md");
    chapter!(Cli, "cli.md");
    chapter!(Readme, "../../README.md");
}
