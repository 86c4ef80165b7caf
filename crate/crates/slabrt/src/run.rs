//! Running a configured study, optionally with several rows in parallel.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use slabrt_core::study::{fill_rates, run_row, StudyRow};

use crate::config::Experiment;

/// Solves every row of the ladder with up to `jobs` worker threads.
///
/// Rows are independent, so the results (and the files written from them)
/// do not depend on `jobs` or on scheduling.
pub fn run_study(exp: &Experiment, jobs: usize) -> Vec<StudyRow> {
    let n = exp.ladder.len();
    let slots: Vec<Mutex<Option<StudyRow>>> = (0..n).map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    let workers = jobs.clamp(1, n.max(1));
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= n {
                    break;
                }
                let (j, m) = exp.ladder[i];
                let row = StudyRow {
                    j,
                    n: m,
                    result: run_row(&exp.case, exp.scheme, j, m, &exp.params),
                };
                *slots[i].lock().expect("row slot poisoned") = Some(row);
            });
        }
    });
    let mut rows: Vec<StudyRow> = slots
        .into_iter()
        .map(|s| s.into_inner().expect("row slot poisoned").expect("every row is solved"))
        .collect();
    fill_rates(&mut rows);
    rows
}
