//! Anytime leapfrog triejoin restricted to one target cube.
//!
//! The join walks attributes in the chosen order, intersecting the trie
//! cursors of every atom that binds the current attribute. Work is metered in
//! cursor primitives (open/next/seek). When the budget runs out after a
//! completed value, the join stops and reports the staircase of sub-cubes it
//! fully covered; the task manager turns the rest back into unprocessed work.

use std::sync::Arc;

use num_bigint::BigUint;

use crate::catalog::{ColumnTable, SortIndex, Value};
use crate::cube::{Cube, StairStep};
use crate::query::{Aggregate, AttributeOrder, InequalityPredicate, Query};
use crate::trieiter::TrieCursor;

/// Leapfrog intersection over the cursors of one attribute.
///
/// `rotation` lists participant cursor ids in leapfrog order; `next` is the
/// rotation slot that moves first on the following search.
#[derive(Debug, Clone)]
pub struct LeapfrogLevel {
    rotation: Vec<usize>,
    next: usize,
}

impl LeapfrogLevel {
    /// Orders participants by their current value. All participants must be
    /// opened at this level and not at EOF.
    pub fn new(participants: &[usize], cursors: &[TrieCursor<'_>]) -> Self {
        let mut rotation = participants.to_vec();
        rotation.sort_by_key(|&c| cursors[c].value());
        Self { rotation, next: 0 }
    }

    /// Least value in `[from, hi]` present under every participant, or `None`.
    /// Each seek issued counts one step.
    pub fn intersect_next(
        &mut self,
        cursors: &mut [TrieCursor<'_>],
        from: Value,
        hi: Value,
        steps: &mut u64,
    ) -> Option<Value> {
        if from > hi {
            return None;
        }
        let k = self.rotation.len();
        let mut target = from;
        for &c in &self.rotation {
            target = target.max(cursors[c].value()?);
        }
        let mut agreed = 0;
        loop {
            let cur = &mut cursors[self.rotation[self.next]];
            let mut v = cur.value()?;
            if v < target {
                *steps += 1;
                v = cur.seek(target)?;
            }
            if v == target {
                agreed += 1;
            } else {
                target = v;
                agreed = 1;
            }
            if target > hi {
                return None;
            }
            self.next = (self.next + 1) % k;
            if agreed == k {
                return Some(target);
            }
        }
    }
}

/// Per-worker result buffer. Count mode only ever bumps the counter.
#[derive(Debug, Clone)]
pub struct ResultBuffer {
    aggregate: Aggregate,
    count: u128,
    tuples: Vec<Vec<Value>>,
    materialized: u64,
}

impl ResultBuffer {
    pub fn new(aggregate: Aggregate) -> Self {
        Self {
            aggregate,
            count: 0,
            tuples: Vec::new(),
            materialized: 0,
        }
    }

    pub fn aggregate(&self) -> Aggregate {
        self.aggregate
    }

    pub fn count(&self) -> u128 {
        self.count
    }

    pub fn tuples(&self) -> &[Vec<Value>] {
        &self.tuples
    }

    pub fn into_tuples(self) -> Vec<Vec<Value>> {
        self.tuples
    }

    /// Tuples ever stored in this buffer.
    pub fn materialized(&self) -> u64 {
        self.materialized
    }

    fn push_tuple(&mut self, tuple: &[Value]) {
        self.materialized += 1;
        self.tuples.push(tuple.to_vec());
    }

    pub fn merge(&mut self, other: ResultBuffer) {
        debug_assert_eq!(self.aggregate, other.aggregate);
        self.count += other.count;
        self.materialized += other.materialized;
        self.tuples.extend(other.tuples);
    }
}

/// Outcome of one `join_one_cube` call.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProcessedReport {
    pub staircase: Vec<StairStep>,
    pub steps: u64,
}

impl ProcessedReport {
    /// Non-empty processed cubes, pairwise disjoint, inside the target.
    pub fn processed(&self) -> Vec<Cube> {
        self.staircase
            .iter()
            .map(StairStep::processed)
            .filter(|c| !c.is_empty())
            .collect()
    }

    pub fn processed_volume(&self) -> BigUint {
        self.processed().iter().map(Cube::volume).sum()
    }
}

pub fn steps_of(report: &ProcessedReport) -> u64 {
    report.steps
}

struct AtomPlan {
    table: Arc<ColumnTable>,
    index: Arc<SortIndex>,
}

/// Per-order join setup: the sort index of every atom under the local column
/// order induced by the attribute order, and which atoms and inequality
/// predicates apply at each order position.
pub struct JoinPlan {
    order: AttributeOrder,
    aggregate: Aggregate,
    num_attributes: usize,
    atoms: Vec<AtomPlan>,
    participants: Vec<Vec<usize>>,
    checks: Vec<Vec<InequalityPredicate>>,
}

impl JoinPlan {
    /// `tables[i]` is the (filtered) relation of atom `i`. Atoms must bind
    /// distinct attributes in every column.
    pub fn new(q: &Query, tables: &[Arc<ColumnTable>], order: &AttributeOrder) -> Self {
        assert_eq!(tables.len(), q.atoms.len());
        assert_eq!(order.len(), q.num_attributes());
        let pos = order.positions();
        let atoms = q
            .atoms
            .iter()
            .zip(tables)
            .map(|(atom, table)| {
                debug_assert_eq!(atom.attributes().len(), atom.vars.len());
                let mut cols: Vec<usize> = (0..atom.vars.len()).collect();
                cols.sort_by_key(|&c| pos[atom.vars[c]]);
                let index = table
                    .sort_index(&cols)
                    .expect("atom columns exist on its table");
                AtomPlan {
                    table: Arc::clone(table),
                    index,
                }
            })
            .collect();
        let participants = order
            .as_slice()
            .iter()
            .map(|&attr| {
                (0..q.atoms.len())
                    .filter(|&i| q.atoms[i].binds(attr))
                    .collect()
            })
            .collect();
        let mut checks = vec![Vec::new(); order.len()];
        for p in &q.ineq_preds {
            checks[pos[p.left].max(pos[p.right])].push(*p);
        }
        Self {
            order: order.clone(),
            aggregate: q.aggregate,
            num_attributes: q.num_attributes(),
            atoms,
            participants,
            checks,
        }
    }

    pub fn order(&self) -> &AttributeOrder {
        &self.order
    }

    pub fn aggregate(&self) -> Aggregate {
        self.aggregate
    }

    fn cursors(&self) -> Vec<TrieCursor<'_>> {
        self.atoms
            .iter()
            .map(|a| TrieCursor::new(&a.table, &a.index))
            .collect()
    }
}

enum Flow {
    Done,
    Interrupted,
}

struct Run<'p> {
    plan: &'p JoinPlan,
    cursors: Vec<TrieCursor<'p>>,
    target: &'p Cube,
    budget: u64,
    steps: u64,
    assignment: Vec<Value>,
    held: Vec<Value>,
    /// Order position and last completed value where the budget ran out.
    stop: Option<(usize, Value)>,
    sink: &'p mut ResultBuffer,
}

impl Run<'_> {
    fn level(&mut self, a: usize) -> Flow {
        let plan = self.plan;
        let attr = plan.order.as_slice()[a];
        let (lo, hi) = (self.target.lo[attr], self.target.hi[attr]);
        let parts = &plan.participants[a];

        let mut opened = 0;
        let mut empty = false;
        for &c in parts {
            self.steps += 1;
            opened += 1;
            if self.cursors[c].open().is_none() {
                empty = true;
                break;
            }
        }
        if empty {
            self.close(&parts[..opened]);
            return Flow::Done;
        }

        let mut leapfrog = LeapfrogLevel::new(parts, &self.cursors);
        let mut from = lo;
        while let Some(v) = leapfrog.intersect_next(&mut self.cursors, from, hi, &mut self.steps) {
            self.assignment[attr] = v;
            if plan.checks[a].iter().all(|p| p.eval(&self.assignment)) {
                if a + 1 == plan.num_attributes {
                    self.emit();
                } else if let Flow::Interrupted = self.level(a + 1) {
                    self.held[a] = v;
                    return Flow::Interrupted;
                }
            }
            if self.steps >= self.budget {
                self.stop = Some((a, v));
                return Flow::Interrupted;
            }
            match v.checked_add(1) {
                Some(next) => from = next,
                None => break,
            }
        }
        self.close(parts);
        Flow::Done
    }

    fn close(&mut self, parts: &[usize]) {
        for &c in parts {
            self.cursors[c].up();
        }
    }

    fn emit(&mut self) {
        match self.sink.aggregate {
            Aggregate::Count => {
                let mult: u128 = self
                    .cursors
                    .iter()
                    .map(|c| c.current_duplicate_range().len() as u128)
                    .product();
                self.sink.count += mult;
            }
            Aggregate::Tuples => {
                self.steps += 1;
                self.sink.push_tuple(&self.assignment);
            }
        }
    }

    fn staircase(&self) -> Vec<StairStep> {
        let order = self.plan.order.as_slice();
        let Some((k, last)) = self.stop else {
            return vec![StairStep::finished(self.target.clone(), order[0])];
        };
        let mut slab = self.target.clone();
        let mut out = Vec::with_capacity(k + 1);
        for (i, &attr) in order.iter().enumerate().take(k + 1) {
            if i == k {
                out.push(StairStep::done_through(slab.clone(), attr, last));
            } else {
                let held = self.held[i];
                out.push(StairStep::holding(slab.clone(), attr, held));
                slab.lo[attr] = held;
                slab.hi[attr] = held;
            }
        }
        out
    }
}

/// Joins the part of the query inside `target` under `plan`'s order until
/// `budget` cursor steps are spent, writing results into `sink`.
///
/// The budget is checked after every completed attribute value, so one call
/// always finishes at least one value and the leaf emission it triggers.
pub fn join_one_cube(
    plan: &JoinPlan,
    budget: u64,
    target: &Cube,
    sink: &mut ResultBuffer,
) -> ProcessedReport {
    assert_eq!(target.dims(), plan.num_attributes, "target dimension");
    assert_eq!(sink.aggregate, plan.aggregate, "sink mode");
    if target.is_empty() || plan.num_attributes == 0 {
        let order = plan.order.as_slice();
        return ProcessedReport {
            staircase: vec![StairStep::finished(
                target.clone(),
                order.first().copied().unwrap_or(0),
            )],
            steps: 0,
        };
    }
    let mut run = Run {
        plan,
        cursors: plan.cursors(),
        target,
        budget,
        steps: 0,
        assignment: target.lo.clone(),
        held: vec![0; plan.num_attributes],
        stop: None,
        sink,
    };
    run.level(0);
    ProcessedReport {
        staircase: run.staircase(),
        steps: run.steps,
    }
}
