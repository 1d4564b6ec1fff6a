//! Trie navigation over a sorted permutation index.
//!
//! A relation sorted lexicographically by its local column order is read as
//! a trie with one level per column: the children of a node are the distinct
//! values of the next column among rows sharing the node's key prefix. Each
//! open level is a contiguous range of sorted positions.

use std::ops::Range;

use crate::catalog::{ColumnTable, SortIndex, Value};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Level {
    lo: usize,
    hi: usize,
    pos: usize,
}

#[derive(Debug, Clone)]
pub struct TrieCursor<'a> {
    columns: Vec<&'a [Value]>,
    rows: &'a [usize],
    stack: Vec<Level>,
    ops: u64,
}

impl<'a> TrieCursor<'a> {
    pub fn new(table: &'a ColumnTable, index: &'a SortIndex) -> Self {
        Self {
            columns: index
                .column_order()
                .iter()
                .map(|&c| table.column(c))
                .collect(),
            rows: index.rows(),
            stack: Vec::with_capacity(index.column_order().len()),
            ops: 0,
        }
    }

    /// Number of trie levels (bound columns).
    pub fn levels(&self) -> usize {
        self.columns.len()
    }

    /// Current level; `-1` at the root.
    pub fn depth(&self) -> isize {
        self.stack.len() as isize - 1
    }

    /// Count of open/next/seek calls so far.
    pub fn ops(&self) -> u64 {
        self.ops
    }

    #[inline]
    fn key(&self, depth: usize, pos: usize) -> Value {
        self.columns[depth][self.rows[pos]]
    }

    fn top(&self) -> &Level {
        self.stack.last().expect("cursor is at the root")
    }

    pub fn at_end(&self) -> bool {
        let l = self.top();
        l.pos >= l.hi
    }

    /// Key at the current position, `None` at EOF.
    pub fn value(&self) -> Option<Value> {
        let l = self.top();
        (l.pos < l.hi).then(|| self.key(self.stack.len() - 1, l.pos))
    }

    /// First position in `[start, hi)` whose key at `depth` satisfies `pred`,
    /// or `hi`. `pred` must be monotone over the range. Exponential probe
    /// followed by binary search.
    fn gallop(&self, depth: usize, start: usize, hi: usize, pred: impl Fn(Value) -> bool) -> usize {
        if start >= hi || pred(self.key(depth, start)) {
            return start;
        }
        // invariant: !pred(key(lo))
        let mut lo = start;
        let mut step = 1;
        let mut probe = start + 1;
        while probe < hi && !pred(self.key(depth, probe)) {
            lo = probe;
            step *= 2;
            probe = lo + step;
        }
        let mut hi = probe.min(hi);
        // first true in (lo, hi]
        while hi - lo > 1 {
            let mid = lo + (hi - lo) / 2;
            if pred(self.key(depth, mid)) {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        hi
    }

    fn run_end(&self, depth: usize, pos: usize, hi: usize) -> usize {
        let v = self.key(depth, pos);
        self.gallop(depth, pos, hi, |k| k > v)
    }

    /// Descends to the first child of the current node.
    pub fn open(&mut self) -> Option<Value> {
        assert!(
            self.stack.len() < self.columns.len(),
            "open() below the last trie level"
        );
        self.ops += 1;
        let level = match self.stack.last() {
            None => Level {
                lo: 0,
                hi: self.rows.len(),
                pos: 0,
            },
            Some(parent) => {
                assert!(parent.pos < parent.hi, "open() at EOF");
                let depth = self.stack.len() - 1;
                let end = self.run_end(depth, parent.pos, parent.hi);
                Level {
                    lo: parent.pos,
                    hi: end,
                    pos: parent.pos,
                }
            }
        };
        self.stack.push(level);
        self.value()
    }

    /// Returns to the parent node.
    pub fn up(&mut self) {
        assert!(self.stack.pop().is_some(), "up() at the root");
    }

    /// Moves to the next distinct sibling value.
    #[allow(clippy::should_implement_trait)]
    pub fn next(&mut self) -> Option<Value> {
        self.ops += 1;
        let depth = self.stack.len() - 1;
        let Level { hi, pos, .. } = *self.top();
        if pos >= hi {
            return None;
        }
        let end = self.run_end(depth, pos, hi);
        self.stack.last_mut().expect("checked").pos = end;
        self.value()
    }

    /// Moves to the least sibling value `>= v`. Forward only: a `v` at or
    /// below the current value leaves the cursor in place.
    pub fn seek(&mut self, v: Value) -> Option<Value> {
        self.ops += 1;
        let depth = self.stack.len() - 1;
        let Level { hi, pos, .. } = *self.top();
        let target = self.gallop(depth, pos, hi, |k| k >= v);
        self.stack.last_mut().expect("checked").pos = target;
        self.value()
    }

    /// Sorted positions sharing the full key at the current leaf; its length
    /// is the multiplicity of that key in the relation.
    pub fn current_duplicate_range(&self) -> Range<usize> {
        assert_eq!(
            self.stack.len(),
            self.columns.len(),
            "duplicate range needs the cursor at the last level"
        );
        let depth = self.stack.len() - 1;
        let Level { hi, pos, .. } = *self.top();
        assert!(pos < hi, "duplicate range at EOF");
        pos..self.run_end(depth, pos, hi)
    }

    /// Table row ids for a sorted position range.
    pub fn row_ids(&self, range: Range<usize>) -> &'a [usize] {
        &self.rows[range]
    }
}
