//! Trace well-formedness and the sequentially consistent reference.

mod report;
pub mod sc;
mod wf;
mod wfh;

pub use report::{RuleId, RuleSet, UnknownRule, Violation, WfReport};
pub use wf::check;
pub use wfh::check_wfh;

use crate::run::Checkpoint;
use crate::trace::Trace;

/// Trace rules, plus state rules when checkpoints are available.
pub fn check_all(trace: &Trace, checkpoints: Option<&[Checkpoint]>, rules: &RuleSet) -> WfReport {
    let mut rep = check(trace, rules);
    if let Some(cps) = checkpoints {
        rep.extend(check_wfh(trace, cps, rules));
    }
    rep
}
