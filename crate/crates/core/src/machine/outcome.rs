use std::fmt;
use std::sync::Arc;

use serde::Serialize;

use super::MachineState;
use crate::syntax::{Ref, Value};

/// Final heap contents as sorted `(ref, field, value)` cells. Locks and
/// thread lifecycles are not part of it.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub struct FinalHeap {
    pub cells: Vec<(Ref, Arc<str>, String)>,
    /// Every thread ran to completion.
    pub complete: bool,
}

impl FinalHeap {
    pub fn from_cells(mut cells: Vec<(Ref, Arc<str>, Value)>, complete: bool) -> FinalHeap {
        cells.sort_by(|a, b| (a.0, &a.1).cmp(&(b.0, &b.1)));
        FinalHeap { cells: cells.into_iter().map(|(r, f, v)| (r, f, v.to_string())).collect(), complete }
    }

    pub fn get(&self, r: Ref, f: &str) -> Option<&str> {
        self.cells.iter().find(|c| c.0 == r && &*c.1 == f).map(|c| c.2.as_str())
    }
}

impl fmt::Display for FinalHeap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(if self.complete { "complete" } else { "blocked" })?;
        for (r, name, v) in &self.cells {
            write!(f, " r{r}.{name}={v}")?;
        }
        Ok(())
    }
}

impl MachineState {
    pub fn final_heap(&self) -> FinalHeap {
        let mut cells = Vec::new();
        for (r, o) in self.heap.iter().enumerate() {
            let info = &self.code.classes[o.class as usize];
            for (i, s) in o.slots.iter().enumerate() {
                cells.push((r as Ref, info.fields[i].clone(), s.value));
            }
        }
        let complete = self.threads.iter().all(|t| t.body == super::Body::Done);
        FinalHeap::from_cells(cells, complete)
    }
}
