//! A small discrete-event executor over a dependency graph of timed tasks.
//!
//! A task starts once all of its dependencies have finished and, for
//! transfers, once its link is free; links carry one message at a time in the
//! order the messages become ready. Each finished task remembers the
//! per-component time along its critical path, so the epoch breakdown is the
//! breakdown of the path that finished last.

use std::cmp::Reverse;
use std::collections::{BinaryHeap, HashMap};

use ordered_float::OrderedFloat;

use super::protocol::{Endpoint, ProtocolMessage};

/// Cost components, in breakdown order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Leg {
    ClientCompute = 0,
    EdgeCompute = 1,
    CentralCompute = 2,
    CeTransfer = 3,
    EsTransfer = 4,
    CsTransfer = 5,
}

#[derive(Debug, Clone)]
pub(crate) struct Task {
    /// `None` for zero-time barriers.
    pub leg: Option<Leg>,
    pub duration: f64,
    /// FLOPs or bytes behind `duration`.
    pub work: f64,
    pub deps: Vec<usize>,
    pub link: Option<(Endpoint, Endpoint)>,
    pub message: Option<ProtocolMessage>,
}

#[derive(Debug, Clone)]
pub(crate) struct Outcome {
    pub finish: f64,
    pub path_time: [f64; 6],
    pub path_work: [f64; 6],
    /// Sent messages with their enqueue times, in send order.
    pub messages: Vec<ProtocolMessage>,
}

/// Runs every task; the last task must depend (transitively) on all others.
pub(crate) fn execute(tasks: &[Task]) -> Outcome {
    let n = tasks.len();
    let mut dependents = vec![Vec::new(); n];
    let mut waiting: Vec<usize> = tasks.iter().map(|t| t.deps.len()).collect();
    for (i, t) in tasks.iter().enumerate() {
        for &d in &t.deps {
            dependents[d].push(i);
        }
    }
    let mut ready_at = vec![0.0f64; n];
    let mut critical: Vec<Option<usize>> = vec![None; n];
    let mut end = vec![0.0f64; n];
    let mut path_time = vec![[0.0f64; 6]; n];
    let mut path_work = vec![[0.0f64; 6]; n];
    let mut link_free: HashMap<(Endpoint, Endpoint), f64> = HashMap::new();
    let mut heap = BinaryHeap::new();
    let mut seq = 0u64;
    let mut messages = Vec::new();

    let mut start =
        |i: usize,
         ready: f64,
         crit: Option<usize>,
         end: &mut Vec<f64>,
         path_time: &mut Vec<[f64; 6]>,
         path_work: &mut Vec<[f64; 6]>,
         heap: &mut BinaryHeap<Reverse<(OrderedFloat<f64>, u64, usize)>>| {
            let t = &tasks[i];
            let mut begin = ready;
            if let Some(link) = t.link {
                let free = link_free.entry(link).or_insert(0.0);
                begin = begin.max(*free);
                *free = begin + t.duration;
            }
            if let Some(m) = &t.message {
                let mut m = m.clone();
                m.enqueue_time = begin;
                messages.push(m);
            }
            end[i] = begin + t.duration;
            let (mut pt, mut pw) =
                crit.map_or(([0.0; 6], [0.0; 6]), |c| (path_time[c], path_work[c]));
            if let Some(leg) = t.leg {
                pt[leg as usize] += t.duration;
                pw[leg as usize] += t.work;
            }
            path_time[i] = pt;
            path_work[i] = pw;
            heap.push(Reverse((OrderedFloat(end[i]), seq, i)));
            seq += 1;
        };

    for (i, task) in tasks.iter().enumerate() {
        if task.deps.is_empty() {
            start(
                i,
                0.0,
                None,
                &mut end,
                &mut path_time,
                &mut path_work,
                &mut heap,
            );
        }
    }
    while let Some(Reverse((OrderedFloat(t), _, i))) = heap.pop() {
        for &j in &dependents[i] {
            if critical[j].is_none() || t > ready_at[j] {
                ready_at[j] = t;
                critical[j] = Some(i);
            }
            waiting[j] -= 1;
            if waiting[j] == 0 {
                start(
                    j,
                    ready_at[j],
                    critical[j],
                    &mut end,
                    &mut path_time,
                    &mut path_work,
                    &mut heap,
                );
            }
        }
    }
    let sink = n - 1;
    Outcome {
        finish: end[sink],
        path_time: path_time[sink],
        path_work: path_work[sink],
        messages,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn task(leg: Leg, duration: f64, deps: Vec<usize>) -> Task {
        Task {
            leg: Some(leg),
            duration,
            work: duration,
            deps,
            link: None,
            message: None,
        }
    }

    #[test]
    fn critical_path_wins() {
        let tasks = vec![
            task(Leg::ClientCompute, 2.0, vec![]),
            task(Leg::CeTransfer, 5.0, vec![]),
            task(Leg::EdgeCompute, 1.0, vec![0, 1]),
        ];
        let out = execute(&tasks);
        assert_eq!(out.finish, 6.0);
        assert_eq!(out.path_time, [0.0, 1.0, 0.0, 5.0, 0.0, 0.0]);
    }

    #[test]
    fn links_serialize() {
        let link = Some((Endpoint::Client(0), Endpoint::Edge(0)));
        let mut a = task(Leg::CeTransfer, 3.0, vec![]);
        a.link = link;
        let mut b = task(Leg::CeTransfer, 3.0, vec![]);
        b.link = link;
        let sink = Task {
            leg: None,
            duration: 0.0,
            work: 0.0,
            deps: vec![0, 1],
            link: None,
            message: None,
        };
        assert_eq!(execute(&[a, b, sink]).finish, 6.0);
    }
}
