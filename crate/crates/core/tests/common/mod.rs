#![allow(dead_code)]

use cubejoin::catalog::{Catalog, ColumnTable, Value};
use cubejoin::engine::{execute, EngineConfig, QueryResult};
use cubejoin::oracle::{evaluate, OracleResult};
use cubejoin::query::parse_query;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn table(name: &str, cols: &[&str], rows: &[Vec<Value>]) -> ColumnTable {
    ColumnTable::from_rows(name, cols, rows).unwrap()
}

pub fn unary(name: &str, values: &[Value]) -> ColumnTable {
    let rows: Vec<Vec<Value>> = values.iter().map(|&v| vec![v]).collect();
    table(name, &["x"], &rows)
}

/// Four relations with a single joint tuple (0,2,1) over attributes a,b,c.
pub fn acyclic_catalog() -> Catalog {
    let mut cat = Catalog::new();
    cat.register(table(
        "r",
        &["a", "b", "c"],
        &[vec![0, 2, 1], vec![0, 3, 1], vec![1, 5, 2]],
    ))
    .unwrap();
    cat.register(table(
        "s",
        &["a", "c"],
        &[vec![0, 1], vec![0, 2], vec![2, 3]],
    ))
    .unwrap();
    cat.register(unary("t", &[0, 2, 3])).unwrap();
    cat.register(table(
        "u",
        &["b", "c"],
        &[vec![0, 0], vec![0, 2], vec![2, 1]],
    ))
    .unwrap();
    cat
}

pub const ACYCLIC: &str = "Q(tuples) :- r(a,b,c), s(a,c), t(b), u(b,c)";

/// Star-shaped edge set {(0,j)} plus {(i,0)}, copied into r, s and t.
pub fn skewed_catalog(m: Value) -> Catalog {
    let mut rows: Vec<Vec<Value>> = (0..=m).map(|j| vec![0, j]).collect();
    rows.extend((1..=m).map(|i| vec![i, 0]));
    let mut cat = Catalog::new();
    for name in ["r", "s", "t"] {
        cat.register(table(name, &["x", "y"], &rows)).unwrap();
    }
    cat
}

pub const TRIANGLE: &str = "Q(count) :- r(a,b), s(a,c), t(b,c)";

pub fn graph_catalog(edges: &[(Value, Value)]) -> Catalog {
    let rows: Vec<Vec<Value>> = edges.iter().map(|&(a, b)| vec![a, b]).collect();
    let mut cat = Catalog::new();
    cat.register(table("edge", &["src", "dst"], &rows)).unwrap();
    cat
}

pub fn random_graph(rng: &mut ChaCha8Rng, nodes: Value, edges: usize) -> Vec<(Value, Value)> {
    let mut all: Vec<(Value, Value)> = (0..nodes)
        .flat_map(|a| (0..nodes).filter(move |&b| b != a).map(move |b| (a, b)))
        .collect();
    all.shuffle(rng);
    all.truncate(edges);
    all
}

/// A random query with both an evaluation catalog and its text, with the
/// head left as `{}` for the aggregate.
pub struct Instance {
    pub catalog: Catalog,
    pub body: String,
}

impl Instance {
    pub fn text(&self, mode: &str) -> String {
        format!("Q({mode}) :- {}", self.body)
    }
}

const OPS: [&str; 5] = ["<", "<=", ">", ">=", "!="];
const UNARY_OPS: [&str; 6] = ["=", "<", "<=", ">", ">=", "!="];

/// Up to 4 atoms over up to 4 attributes, values in 0..8, up to 30 rows per
/// table, with random self-joins, repeated variables, unary filters and
/// attribute comparisons.
pub fn random_instance(seed: u64) -> Instance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let names = ["a", "b", "c", "d"];
    let n_attrs = rng.gen_range(1..=4);
    let n_atoms = rng.gen_range(1..=4);

    let mut atoms: Vec<Vec<usize>> = (0..n_atoms)
        .map(|_| {
            let arity = rng.gen_range(1..=3);
            (0..arity).map(|_| rng.gen_range(0..n_attrs)).collect()
        })
        .collect();
    for attr in 0..n_attrs {
        if !atoms.iter().any(|a| a.contains(&attr)) {
            let i = rng.gen_range(0..n_atoms);
            atoms[i].push(attr);
        }
    }

    let mut catalog = Catalog::new();
    let mut table_of: Vec<(String, usize)> = Vec::new();
    for (i, vars) in atoms.iter().enumerate() {
        let reuse: Vec<&(String, usize)> = table_of
            .iter()
            .filter(|(_, arity)| *arity == vars.len())
            .collect();
        if !reuse.is_empty() && rng.gen_bool(0.3) {
            let name = reuse.choose(&mut rng).unwrap().0.clone();
            table_of.push((name, vars.len()));
            continue;
        }
        let name = format!("t{i}");
        let cols: Vec<String> = (0..vars.len()).map(|c| format!("c{c}")).collect();
        let col_refs: Vec<&str> = cols.iter().map(String::as_str).collect();
        let n_rows = rng.gen_range(1..=30);
        let rows: Vec<Vec<Value>> = (0..n_rows)
            .map(|_| (0..vars.len()).map(|_| rng.gen_range(0..8)).collect())
            .collect();
        catalog.register(table(&name, &col_refs, &rows)).unwrap();
        table_of.push((name, vars.len()));
    }

    let mut body: Vec<String> = atoms
        .iter()
        .zip(&table_of)
        .map(|(vars, (t, _))| {
            let v: Vec<&str> = vars.iter().map(|&x| names[x]).collect();
            format!("{t}({})", v.join(","))
        })
        .collect();
    for _ in 0..rng.gen_range(0..=2) {
        let (t, arity) = table_of.choose(&mut rng).unwrap();
        let col = rng.gen_range(0..*arity);
        let op = UNARY_OPS.choose(&mut rng).unwrap();
        body.push(format!("{t}.c{col} {op} {}", rng.gen_range(0..8)));
    }
    if n_attrs > 1 {
        for _ in 0..rng.gen_range(0..=2) {
            let x = rng.gen_range(0..n_attrs);
            let mut y = rng.gen_range(0..n_attrs - 1);
            if y >= x {
                y += 1;
            }
            let op = OPS.choose(&mut rng).unwrap();
            body.push(format!("{} {op} {}", names[x], names[y]));
        }
    }
    Instance {
        catalog,
        body: body.join(", "),
    }
}

pub fn config(threads: usize, budget: u64, seed: u64) -> EngineConfig {
    EngineConfig {
        threads,
        budget,
        seed,
        ..EngineConfig::default()
    }
}

/// Runs engine and oracle on `text`; returns the engine result and whether
/// both agree.
pub fn compare(catalog: &Catalog, text: &str, cfg: &EngineConfig) -> (QueryResult, bool) {
    let q = parse_query(text, catalog).unwrap();
    let res = execute(catalog, &q, cfg).unwrap();
    let ok = match evaluate(catalog, &q).unwrap() {
        OracleResult::Count(n) => res.count == n && res.tuples.is_empty(),
        OracleResult::Tuples(t) => res.tuples == t,
    };
    (res, ok)
}

/// Exact volume accounting plus reward sum within 1e-9 of one. Queries with
/// an empty relation have zero volume and run no episodes.
pub fn accounting_holds(res: &QueryResult) -> bool {
    let s = &res.stats;
    if s.processed_volume != s.total_volume {
        return false;
    }
    if s.total_volume == Default::default() {
        return s.episodes == 0 && s.reward_sum == 0.0;
    }
    (s.reward_sum - 1.0).abs() <= 1e-9
}
