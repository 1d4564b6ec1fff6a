//! Episode loop: pick an order, let worker threads join target cubes under a
//! step budget, feed the processed volume back as reward, repeat until the
//! task manager has nothing left.

use std::collections::{BTreeMap, HashMap};
use std::sync::Arc;
use std::time::{Duration, Instant};

use num_bigint::BigUint;
use thiserror::Error;

use crate::catalog::{apply_unary_filters, Catalog, CatalogError, ColumnTable, Value};
use crate::cube::{volume_ratio, TaskManager};
use crate::learner::{Learner, OrderStat, DEFAULT_EXPLORATION};
use crate::lftj::{join_one_cube, JoinPlan, ResultBuffer};
use crate::query::{attribute_domains, Aggregate, Atom, AttributeOrder, Query, QueryError};

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Query(#[from] QueryError),
    #[error(transparent)]
    Catalog(#[from] CatalogError),
    #[error("query not finished after {0} episodes")]
    EpisodeCap(u64),
}

#[derive(Debug, Clone)]
pub struct EngineConfig {
    pub threads: usize,
    /// Cursor steps per thread and episode.
    pub budget: u64,
    pub exploration: f64,
    pub seed: u64,
    pub max_episodes: u64,
    /// Run every episode with this order instead of consulting the learner.
    pub forced_order: Option<AttributeOrder>,
    /// Keep every processed cube for later inspection.
    pub record_cubes: bool,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            threads: 1,
            budget: 10_000,
            exploration: DEFAULT_EXPLORATION,
            seed: 0,
            max_episodes: 10_000_000,
            forced_order: None,
            record_cubes: false,
        }
    }
}

impl EngineConfig {
    fn check(&self, q: &Query) -> Result<(), EngineError> {
        if self.threads == 0 {
            return Err(EngineError::Config("threads must be at least 1".into()));
        }
        if self.budget == 0 {
            return Err(EngineError::Config("budget must be at least 1".into()));
        }
        if !(self.exploration >= 0.0 && self.exploration.is_finite()) {
            return Err(EngineError::Config(format!(
                "exploration must be a finite non-negative number, got {}",
                self.exploration
            )));
        }
        if let Some(o) = &self.forced_order {
            if o.len() != q.num_attributes() {
                return Err(EngineError::Config(format!(
                    "forced order has {} attributes, query has {}",
                    o.len(),
                    q.num_attributes()
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct EpisodeRecord {
    pub order: AttributeOrder,
    pub reward: f64,
    pub steps: u64,
}

#[derive(Debug, Clone)]
pub struct RunStats {
    pub episodes: u64,
    pub steps: u64,
    pub wall_time: Duration,
    pub reward_sum: f64,
    pub processed_volume: BigUint,
    pub total_volume: BigUint,
    /// Tuples ever written to a result buffer.
    pub materialized: u64,
    pub orders: Vec<(AttributeOrder, OrderStat)>,
    pub trace: Vec<EpisodeRecord>,
    /// Per-order statistics as tab-separated lines.
    pub order_table: String,
    pub processed_cubes: Option<Vec<crate::cube::Cube>>,
}

#[derive(Debug, Clone)]
pub struct QueryResult {
    pub mode: Aggregate,
    pub count: u128,
    /// Sorted, duplicate-free attribute vectors; empty in count mode.
    pub tuples: Vec<Vec<Value>>,
    pub stats: RunStats,
}

/// Evaluates `q` over `catalog`.
pub fn execute(
    catalog: &Catalog,
    q: &Query,
    cfg: &EngineConfig,
) -> Result<QueryResult, EngineError> {
    let start = Instant::now();
    q.validate(catalog)?;
    cfg.check(q)?;
    let (plain, tables) = prepare(catalog, q)?;

    let domains = attribute_domains(&plain, &tables);
    let mut tm = TaskManager::new(&domains, cfg.threads, cfg.seed);
    if cfg.record_cubes {
        tm = tm.record_history();
    }
    let mut learner = Learner::new(&plain, cfg.exploration, cfg.seed);
    let mut plans: HashMap<AttributeOrder, JoinPlan> = HashMap::new();
    let mut sink = ResultBuffer::new(q.aggregate);
    let mut trace = Vec::new();
    let mut reward_sum = 0.0;
    let mut steps = 0;

    while !tm.finished() {
        if trace.len() as u64 >= cfg.max_episodes {
            return Err(EngineError::EpisodeCap(cfg.max_episodes));
        }
        let selection = match &cfg.forced_order {
            Some(o) => learner.select_forced(o),
            None => learner.select(),
        };
        let plan = plans
            .entry(selection.order.clone())
            .or_insert_with(|| JoinPlan::new(&plain, &tables, &selection.order));
        let (reward, used, buffer) = run_episode(plan, &tm, cfg);
        sink.merge(buffer);
        learner.update(&selection, reward);
        reward_sum += reward;
        steps += used;
        trace.push(EpisodeRecord {
            order: selection.order,
            reward,
            steps: used,
        });
    }

    let stats = RunStats {
        episodes: trace.len() as u64,
        steps,
        wall_time: Duration::ZERO,
        reward_sum,
        processed_volume: tm.processed_volume(),
        total_volume: tm.total_volume().clone(),
        materialized: sink.materialized(),
        orders: learner.order_statistics(),
        trace,
        order_table: learner.export_statistics(),
        processed_cubes: tm.history(),
    };
    let mut result = post_process(sink, stats);
    result.stats.wall_time = start.elapsed();
    Ok(result)
}

/// Filters tables by the unary predicates and collapses atoms that repeat a
/// variable into atoms over distinct variables. Returns the rewritten query
/// and the relation of each atom.
pub fn prepare(
    catalog: &Catalog,
    q: &Query,
) -> Result<(Query, Vec<Arc<ColumnTable>>), EngineError> {
    let mut filtered: HashMap<&str, Arc<ColumnTable>> = HashMap::new();
    let mut atoms = Vec::with_capacity(q.atoms.len());
    let mut tables = Vec::with_capacity(q.atoms.len());

    for atom in &q.atoms {
        let table = match filtered.get(atom.table.as_str()) {
            Some(t) => Arc::clone(t),
            None => {
                let preds: Vec<_> = q
                    .unary_preds
                    .iter()
                    .filter(|p| p.table == atom.table)
                    .cloned()
                    .collect();
                let t = apply_unary_filters(catalog.get(&atom.table)?, &preds)?;
                filtered.insert(&atom.table, Arc::clone(&t));
                t
            }
        };

        // first column of each variable, plus equal-column groups
        let mut first: BTreeMap<usize, usize> = BTreeMap::new();
        let mut keep_cols = Vec::new();
        let mut vars = Vec::new();
        let mut equal = Vec::new();
        for (col, &v) in atom.vars.iter().enumerate() {
            match first.get(&v) {
                Some(&c) => equal.push((c, col)),
                None => {
                    first.insert(v, col);
                    keep_cols.push(col);
                    vars.push(v);
                }
            }
        }
        let table = if equal.is_empty() {
            table
        } else {
            let src = Arc::clone(&table);
            Arc::new(table.derive(table.name().to_string(), &keep_cols, |r| {
                equal
                    .iter()
                    .all(|&(a, b)| src.column(a)[r] == src.column(b)[r])
            }))
        };
        atoms.push(Atom {
            table: atom.table.clone(),
            vars,
        });
        tables.push(table);
    }

    let plain = Query {
        atoms,
        attributes: q.attributes.clone(),
        unary_preds: Vec::new(),
        ineq_preds: q.ineq_preds.clone(),
        aggregate: q.aggregate,
    };
    Ok((plain, tables))
}

/// Runs one episode on `cfg.threads` workers sharing `tm`. Returns the summed
/// reward, the steps spent and the merged result buffer.
pub fn run_episode(
    plan: &JoinPlan,
    tm: &TaskManager,
    cfg: &EngineConfig,
) -> (f64, u64, ResultBuffer) {
    let total = tm.total_volume().clone();
    let aggregate = plan.aggregate();
    let worker = || {
        let mut buffer = ResultBuffer::new(aggregate);
        let mut processed = BigUint::default();
        let mut left = cfg.budget;
        let mut used = 0;
        while left > 0 {
            let Some(target) = tm.retrieve() else { break };
            let report = join_one_cube(plan, left, &target, &mut buffer);
            tm.remove(&target, &report.staircase);
            processed += report.processed_volume();
            used += report.steps;
            left = left.saturating_sub(report.steps);
        }
        (processed, used, buffer)
    };

    let results: Vec<(BigUint, u64, ResultBuffer)> = if cfg.threads == 1 {
        vec![worker()]
    } else {
        std::thread::scope(|s| {
            let handles: Vec<_> = (0..cfg.threads).map(|_| s.spawn(worker)).collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("worker panicked"))
                .collect()
        })
    };

    let mut processed = BigUint::default();
    let mut used = 0;
    let mut merged = ResultBuffer::new(aggregate);
    for (p, u, b) in results {
        processed += p;
        used += u;
        merged.merge(b);
    }
    (volume_ratio(&processed, &total), used, merged)
}

/// Turns the merged buffer into the final result.
pub fn post_process(sink: ResultBuffer, stats: RunStats) -> QueryResult {
    let mode = sink.aggregate();
    let count = sink.count();
    let mut tuples = sink.into_tuples();
    tuples.sort_unstable();
    tuples.dedup();
    let count = match mode {
        Aggregate::Count => count,
        Aggregate::Tuples => tuples.len() as u128,
    };
    QueryResult {
        mode,
        count,
        tuples,
        stats,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::ColumnTable;
    use crate::cube::Cube;
    use crate::oracle::{evaluate, OracleResult};
    use crate::query::{parse_query, Domains};

    fn edges(name: &str, pairs: &[(Value, Value)]) -> ColumnTable {
        let rows: Vec<Vec<Value>> = pairs.iter().map(|&(a, b)| vec![a, b]).collect();
        ColumnTable::from_rows(name, &["src", "dst"], &rows).unwrap()
    }

    fn skewed(m: Value) -> Catalog {
        let mut pairs: Vec<(Value, Value)> = (0..=m).map(|j| (0, j)).collect();
        pairs.extend((1..=m).map(|i| (i, 0)));
        let mut cat = Catalog::new();
        for name in ["r", "s", "t"] {
            cat.register(edges(name, &pairs)).unwrap();
        }
        cat
    }

    fn cfg(threads: usize, budget: u64) -> EngineConfig {
        EngineConfig {
            threads,
            budget,
            seed: 3,
            ..EngineConfig::default()
        }
    }

    fn assert_complete(res: &QueryResult) {
        assert_eq!(res.stats.processed_volume, res.stats.total_volume);
        assert!(
            (res.stats.reward_sum - 1.0).abs() <= 1e-9,
            "{}",
            res.stats.reward_sum
        );
    }

    #[test]
    fn skewed_triangle_count() {
        for m in [1, 3, 6, 10] {
            let cat = skewed(m);
            let q = parse_query("Q(count) :- r(a,b), s(a,c), t(b,c)", &cat).unwrap();
            for threads in [1, 2, 4] {
                for budget in [1, 5, 10_000] {
                    let res = execute(&cat, &q, &cfg(threads, budget)).unwrap();
                    assert_eq!(res.count, 3 * m as u128 + 1, "m={m} n={threads} b={budget}");
                    assert!(res.tuples.is_empty());
                    assert_eq!(res.stats.materialized, 0);
                    assert_complete(&res);
                }
            }
        }
    }

    #[test]
    fn acyclic_tuples() {
        let mut cat = Catalog::new();
        cat.register(
            ColumnTable::from_rows(
                "r",
                &["a", "b", "c"],
                &[vec![0, 2, 1], vec![0, 3, 1], vec![1, 5, 2]],
            )
            .unwrap(),
        )
        .unwrap();
        cat.register(edges("s", &[(0, 1), (0, 2), (2, 3)])).unwrap();
        cat.register(ColumnTable::from_rows("t", &["b"], &[vec![0], vec![2], vec![3]]).unwrap())
            .unwrap();
        cat.register(edges("u", &[(0, 0), (0, 2), (2, 1)])).unwrap();
        let q = parse_query("Q(tuples) :- r(a,b,c), s(a,c), t(b), u(b,c)", &cat).unwrap();
        let res = execute(&cat, &q, &cfg(1, 3)).unwrap();
        assert_eq!(res.tuples, vec![vec![0, 2, 1]]);
        assert_eq!(res.count, 1);
        assert_complete(&res);
    }

    #[test]
    fn empty_relation_needs_no_episodes() {
        let mut cat = skewed(2);
        cat.register(edges("e", &[])).unwrap();
        let q = parse_query("Q(count) :- r(a,b), e(b,c)", &cat).unwrap();
        let res = execute(&cat, &q, &cfg(2, 10)).unwrap();
        assert_eq!(res.count, 0);
        assert_eq!(res.stats.episodes, 0);
        assert_eq!(res.stats.steps, 0);
    }

    #[test]
    fn bad_config() {
        let cat = skewed(2);
        let q = parse_query("Q(count) :- r(a,b)", &cat).unwrap();
        assert!(matches!(
            execute(&cat, &q, &cfg(0, 10)),
            Err(EngineError::Config(_))
        ));
        assert!(matches!(
            execute(&cat, &q, &cfg(1, 0)),
            Err(EngineError::Config(_))
        ));
    }

    #[test]
    fn episode_cap() {
        let cat = skewed(8);
        let q = parse_query("Q(count) :- r(a,b), s(a,c), t(b,c)", &cat).unwrap();
        let c = EngineConfig {
            budget: 1,
            max_episodes: 2,
            ..EngineConfig::default()
        };
        assert!(matches!(
            execute(&cat, &q, &c),
            Err(EngineError::EpisodeCap(2))
        ));
    }

    #[test]
    fn repeated_variables_and_filters() {
        let mut cat = Catalog::new();
        cat.register(edges(
            "e",
            &[(1, 1), (1, 2), (2, 2), (2, 2), (3, 1), (3, 3)],
        ))
        .unwrap();
        for text in [
            "Q(count) :- e(a,a), e(a,b)",
            "Q(tuples) :- e(a,a), e(a,b), a<b",
            "Q(count) :- e(a,b), e(b,a), e.src > 1",
            "Q(tuples) :- e(a,b), e(b,c), a!=c, e.dst <= 2",
        ] {
            let q = parse_query(text, &cat).unwrap();
            let expected = evaluate(&cat, &q).unwrap();
            for threads in [1, 3] {
                let res = execute(&cat, &q, &cfg(threads, 2)).unwrap();
                match &expected {
                    OracleResult::Count(n) => assert_eq!(res.count, *n, "{text}"),
                    OracleResult::Tuples(t) => assert_eq!(&res.tuples, t, "{text}"),
                }
                assert_complete(&res);
            }
        }
    }

    #[test]
    fn finished_manager_gives_zero_reward() {
        let cat = skewed(2);
        let q = parse_query("Q(count) :- r(a,b)", &cat).unwrap();
        let tm = TaskManager::new(&Domains::Ranges(vec![(0, 2), (0, 2)]), 1, 0);
        let t = tm.retrieve().unwrap();
        let plan = JoinPlan::new(
            &q,
            &[Arc::clone(cat.get("r").unwrap())],
            &AttributeOrder::identity(2),
        );
        let mut sink = ResultBuffer::new(Aggregate::Count);
        let report = join_one_cube(&plan, u64::MAX, &t, &mut sink);
        tm.remove(&t, &report.staircase);
        assert!(tm.finished());
        let (reward, used, buffer) = run_episode(&plan, &tm, &cfg(1, 10));
        assert_eq!(reward, 0.0);
        assert_eq!(used, 0);
        assert_eq!(buffer.count(), 0);
    }

    #[test]
    fn single_thread_finishes_in_one_episode() {
        let cat = skewed(4);
        let q = parse_query("Q(count) :- r(a,b), s(a,c), t(b,c)", &cat).unwrap();
        let res = execute(&cat, &q, &cfg(1, u64::MAX)).unwrap();
        assert_eq!(res.stats.episodes, 1);
        assert_eq!(res.stats.trace[0].reward, 1.0);
    }

    #[test]
    fn two_workers_disjoint_cubes() {
        let cat = skewed(5);
        let q = parse_query("Q(count) :- r(a,b), s(a,c), t(b,c)", &cat).unwrap();
        let c = EngineConfig {
            record_cubes: true,
            ..cfg(2, 4)
        };
        let res = execute(&cat, &q, &c).unwrap();
        let cubes = res.stats.processed_cubes.clone().unwrap();
        for (i, x) in cubes.iter().enumerate() {
            for y in &cubes[i + 1..] {
                assert!(!x.intersects(y), "{x} overlaps {y}");
            }
        }
        let sum: BigUint = cubes.iter().map(Cube::volume).sum();
        assert_eq!(sum, res.stats.total_volume);
        assert_eq!(res.count, 16);
    }

    #[test]
    fn single_thread_is_deterministic() {
        let cat = skewed(7);
        let q = parse_query("Q(count) :- r(a,b), s(a,c), t(b,c), a<=c", &cat).unwrap();
        let c = EngineConfig {
            exploration: 0.3,
            seed: 17,
            ..cfg(1, 3)
        };
        let a = execute(&cat, &q, &c).unwrap();
        let b = execute(&cat, &q, &c).unwrap();
        assert_eq!(a.stats.order_table, b.stats.order_table);
        let orders = |r: &QueryResult| -> Vec<_> {
            r.stats
                .trace
                .iter()
                .map(|e| (e.order.clone(), e.steps))
                .collect()
        };
        assert_eq!(orders(&a), orders(&b));
        assert_eq!(a.count, b.count);
    }

    #[test]
    fn forced_order_used_every_episode() {
        let cat = skewed(3);
        let q = parse_query("Q(count) :- r(a,b), s(a,c), t(b,c)", &cat).unwrap();
        let order = AttributeOrder::new(vec![2, 0, 1]).unwrap();
        let c = EngineConfig {
            forced_order: Some(order.clone()),
            ..cfg(1, 2)
        };
        let res = execute(&cat, &q, &c).unwrap();
        assert!(res.stats.episodes > 1);
        assert!(res.stats.trace.iter().all(|e| e.order == order));
        assert_eq!(res.stats.orders.len(), 1);
        assert_eq!(res.count, 10);
    }

    #[test]
    fn merge_buffers() {
        let stats = RunStats {
            episodes: 0,
            steps: 0,
            wall_time: Duration::ZERO,
            reward_sum: 0.0,
            processed_volume: BigUint::default(),
            total_volume: BigUint::default(),
            materialized: 0,
            orders: Vec::new(),
            trace: Vec::new(),
            order_table: String::new(),
            processed_cubes: None,
        };
        let res = post_process(ResultBuffer::new(Aggregate::Tuples), stats);
        assert!(res.tuples.is_empty());
        assert_eq!(res.count, 0);
    }
}
