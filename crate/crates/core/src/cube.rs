//! Hypercubes over join-attribute values and the shared task manager that
//! tracks which parts of the query cube are still unprocessed.
//!
//! Bounds are closed: a cube with `lo == hi` in every dimension holds one
//! lattice point, and volume is the product of `hi - lo + 1`.

use std::fmt;
use std::sync::Mutex;

use num_bigint::BigUint;
use num_traits::{ToPrimitive, Zero};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::catalog::Value;
use crate::query::{AttrId, Domains};

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Cube {
    pub lo: Vec<Value>,
    pub hi: Vec<Value>,
}

impl Cube {
    pub fn new(lo: Vec<Value>, hi: Vec<Value>) -> Self {
        assert_eq!(lo.len(), hi.len(), "cube bounds differ in dimension");
        Self { lo, hi }
    }

    pub fn from_ranges(ranges: &[(Value, Value)]) -> Self {
        Self {
            lo: ranges.iter().map(|r| r.0).collect(),
            hi: ranges.iter().map(|r| r.1).collect(),
        }
    }

    pub fn dims(&self) -> usize {
        self.lo.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lo.iter().zip(&self.hi).any(|(l, h)| l > h)
    }

    /// Number of lattice points.
    pub fn volume(&self) -> BigUint {
        if self.is_empty() {
            return BigUint::zero();
        }
        self.lo
            .iter()
            .zip(&self.hi)
            .map(|(&l, &h)| BigUint::from((h as i128 - l as i128 + 1) as u128))
            .product()
    }

    pub fn contains_point(&self, point: &[Value]) -> bool {
        point.len() == self.dims()
            && point
                .iter()
                .zip(self.lo.iter().zip(&self.hi))
                .all(|(v, (l, h))| l <= v && v <= h)
    }

    /// Whether `other` lies inside `self`. Empty cubes are contained in
    /// everything.
    pub fn contains(&self, other: &Cube) -> bool {
        other.is_empty()
            || (0..self.dims()).all(|i| self.lo[i] <= other.lo[i] && other.hi[i] <= self.hi[i])
    }

    pub fn intersects(&self, other: &Cube) -> bool {
        !self.is_empty()
            && !other.is_empty()
            && (0..self.dims()).all(|i| self.lo[i].max(other.lo[i]) <= self.hi[i].min(other.hi[i]))
    }

    /// Canonical empty cube of the given dimension.
    pub fn empty(dims: usize) -> Self {
        let mut lo = vec![0; dims.max(1)];
        lo[0] = 1;
        Self {
            lo,
            hi: vec![0; dims.max(1)],
        }
    }

    fn with_dim(&self, dim: usize, lo: Value, hi: Value) -> Cube {
        let mut c = self.clone();
        c.lo[dim] = lo;
        c.hi[dim] = hi;
        c
    }
}

/// Debug dump form: `[lo..hi]` per attribute, space separated.
impl fmt::Display for Cube {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for i in 0..self.dims() {
            if i > 0 {
                f.write_str(" ")?;
            }
            write!(f, "[{}..{}]", self.lo[i], self.hi[i])?;
        }
        Ok(())
    }
}

/// One step of the staircase left behind by an interrupted join.
///
/// `slab` fixes the attributes before `dim` (in join order) to the values
/// held at interruption, spans the target range on `dim`, and the full target
/// range on every later attribute. Values on `dim` up to and including
/// `done_upto` were fully processed and values from `pending_from` on were not
/// touched. A value strictly between the two is the one held at interruption;
/// the next step of the staircase accounts for it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StairStep {
    pub slab: Cube,
    pub dim: AttrId,
    pub done_upto: Option<Value>,
    pub pending_from: Option<Value>,
}

impl StairStep {
    /// The processed part; empty when nothing on `dim` was finished.
    pub fn processed(&self) -> Cube {
        match self.done_upto {
            Some(v) => self.slab.with_dim(self.dim, self.slab.lo[self.dim], v),
            None => Cube::empty(self.slab.dims()),
        }
    }

    /// The untouched part of the slab, to be processed later.
    pub fn complement(&self) -> Cube {
        match self.pending_from {
            Some(v) => self.slab.with_dim(self.dim, v, self.slab.hi[self.dim]),
            None => Cube::empty(self.slab.dims()),
        }
    }

    /// Step for a slab that was finished completely.
    pub fn finished(slab: Cube, dim: AttrId) -> Self {
        let hi = slab.hi.get(dim).copied();
        Self {
            slab,
            dim,
            done_upto: hi,
            pending_from: None,
        }
    }

    /// Step for a slab nothing was done in.
    pub fn untouched(slab: Cube, dim: AttrId) -> Self {
        let lo = slab.lo.get(dim).copied();
        Self {
            slab,
            dim,
            done_upto: None,
            pending_from: lo,
        }
    }

    /// Step for a slab finished up to and including `v` on `dim`.
    pub fn done_through(slab: Cube, dim: AttrId, v: Value) -> Self {
        let pending_from = v.checked_add(1).filter(|&n| n <= slab.hi[dim]);
        Self {
            slab,
            dim,
            done_upto: Some(v),
            pending_from,
        }
    }

    /// Step for a slab interrupted while value `held` on `dim` was being
    /// worked on: values below are done, values above untouched.
    pub fn holding(slab: Cube, dim: AttrId, held: Value) -> Self {
        let (lo, hi) = (slab.lo[dim], slab.hi[dim]);
        Self {
            slab,
            dim,
            done_upto: (held > lo).then(|| held - 1),
            pending_from: (held < hi).then(|| held + 1),
        }
    }
}

/// Splits the query cube across `threads` along the attribute with the widest
/// range. Returns an empty list for an empty domain.
pub fn initial_cubes(domains: &Domains, threads: usize) -> Vec<Cube> {
    assert!(threads >= 1, "at least one thread");
    let ranges = match domains {
        Domains::Empty => return Vec::new(),
        Domains::Ranges(r) => r,
    };
    if ranges.is_empty() {
        return Vec::new();
    }
    let full = Cube::from_ranges(ranges);
    let widest = (0..ranges.len())
        .max_by(|&a, &b| {
            let wa = ranges[a].1 as i128 - ranges[a].0 as i128;
            let wb = ranges[b].1 as i128 - ranges[b].0 as i128;
            // ties go to the lowest attribute id
            wa.cmp(&wb).then(b.cmp(&a))
        })
        .expect("non-empty");
    let (lo, hi) = ranges[widest];
    let width = (hi as i128 - lo as i128 + 1) as u128;
    let pieces = (threads as u128).min(width);
    (0..pieces)
        .map(|i| {
            let start = lo as i128 + (i * width / pieces) as i128;
            let end = lo as i128 + ((i + 1) * width / pieces) as i128 - 1;
            full.with_dim(widest, start as Value, end as Value)
        })
        .collect()
}

#[derive(Debug)]
struct TmState {
    available: Vec<Cube>,
    reserved: usize,
    processed_volume: BigUint,
    rng: ChaCha8Rng,
    history: Option<Vec<Cube>>,
}

/// Shared set of disjoint unprocessed cubes.
///
/// Retrieval hands out a uniformly random cube and reserves it so no other
/// worker can take it; the holder must return it through [`remove`].
///
/// [`remove`]: TaskManager::remove
#[derive(Debug)]
pub struct TaskManager {
    dims: usize,
    total_volume: BigUint,
    state: Mutex<TmState>,
}

impl TaskManager {
    pub fn new(domains: &Domains, threads: usize, seed: u64) -> Self {
        let cubes = initial_cubes(domains, threads);
        let dims = match domains {
            Domains::Ranges(r) => r.len(),
            Domains::Empty => 0,
        };
        let total_volume = cubes.iter().map(Cube::volume).sum();
        Self {
            dims,
            total_volume,
            state: Mutex::new(TmState {
                available: cubes,
                reserved: 0,
                processed_volume: BigUint::zero(),
                rng: ChaCha8Rng::seed_from_u64(seed),
                history: None,
            }),
        }
    }

    /// Keeps every processed cube ever registered, for disjointness checks.
    pub fn record_history(self) -> Self {
        self.lock().history = Some(Vec::new());
        self
    }

    fn lock(&self) -> std::sync::MutexGuard<'_, TmState> {
        self.state.lock().expect("task manager poisoned")
    }

    pub fn dims(&self) -> usize {
        self.dims
    }

    pub fn total_volume(&self) -> &BigUint {
        &self.total_volume
    }

    pub fn processed_volume(&self) -> BigUint {
        self.lock().processed_volume.clone()
    }

    /// Removes and returns a random unprocessed cube, reserving it for the
    /// caller.
    pub fn retrieve(&self) -> Option<Cube> {
        let mut st = self.lock();
        if st.available.is_empty() {
            return None;
        }
        let n = st.available.len();
        let i = st.rng.gen_range(0..n);
        let cube = st.available.swap_remove(i);
        st.reserved += 1;
        Some(cube)
    }

    /// Registers the staircase processed within a retrieved `target` and
    /// re-inserts the complement of every step. Returns the inserted cubes.
    pub fn remove(&self, target: &Cube, steps: &[StairStep]) -> Vec<Cube> {
        let processed: Vec<Cube> = steps
            .iter()
            .map(StairStep::processed)
            .filter(|c| !c.is_empty())
            .collect();
        debug_assert!(processed.iter().all(|p| target.contains(p)));
        debug_assert!(steps.iter().all(|s| target.contains(&s.slab)));
        debug_assert!(pairwise_disjoint(&processed));
        let inserted: Vec<Cube> = steps
            .iter()
            .map(StairStep::complement)
            .filter(|c| !c.is_empty())
            .collect();
        debug_assert!(inserted.len() <= self.dims.max(1));

        let added: BigUint = processed.iter().map(Cube::volume).sum();
        let mut st = self.lock();
        assert!(st.reserved > 0, "remove() without a retrieved target");
        st.reserved -= 1;
        st.processed_volume += added;
        st.available.extend(inserted.iter().cloned());
        if let Some(h) = st.history.as_mut() {
            h.extend(processed);
        }
        inserted
    }

    /// True when nothing is unprocessed or reserved.
    pub fn finished(&self) -> bool {
        let st = self.lock();
        st.available.is_empty() && st.reserved == 0
    }

    /// Snapshot of the available cubes.
    pub fn unprocessed(&self) -> Vec<Cube> {
        self.lock().available.clone()
    }

    pub fn history(&self) -> Option<Vec<Cube>> {
        self.lock().history.clone()
    }

    /// One cube per line.
    pub fn dump(&self) -> String {
        self.lock()
            .available
            .iter()
            .map(|c| format!("{c}\n"))
            .collect()
    }

    /// `part / total` as a float.
    pub fn fraction(&self, part: &BigUint) -> f64 {
        volume_ratio(part, &self.total_volume)
    }
}

/// `num / den` as `f64`, exact enough for volumes far beyond `f64` range.
pub fn volume_ratio(num: &BigUint, den: &BigUint) -> f64 {
    if den.is_zero() {
        return 0.0;
    }
    let shift = den.bits().saturating_sub(960);
    let n = (num >> shift).to_f64().unwrap_or(f64::INFINITY);
    let d = (den >> shift).to_f64().unwrap_or(f64::INFINITY);
    n / d
}

fn pairwise_disjoint(cubes: &[Cube]) -> bool {
    cubes
        .iter()
        .enumerate()
        .all(|(i, a)| cubes[i + 1..].iter().all(|b| !a.intersects(b)))
}
