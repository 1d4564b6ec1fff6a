mod common;

use std::fs;
use std::path::Path;

use cubejoin::cli::{cmd_genquery, main_with, QueryKind};
use cubejoin::oracle::{evaluate, OracleResult};
use cubejoin::query::parse_query;
use cubejoin::Aggregate;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use common::*;

fn run(args: &[&str]) -> (i32, String, String) {
    let mut out = Vec::new();
    let mut err = Vec::new();
    let mut full = vec!["cubejoin"];
    full.extend_from_slice(args);
    let code = main_with(full, &mut out, &mut err);
    (
        code,
        String::from_utf8(out).unwrap(),
        String::from_utf8(err).unwrap(),
    )
}

fn write_edges(path: &Path, edges: &[(i64, i64)]) {
    let text: String = edges.iter().map(|(a, b)| format!("{a},{b}\n")).collect();
    fs::write(path, text).unwrap();
}

fn toy_graph() -> Vec<(i64, i64)> {
    vec![(1, 2), (2, 3), (1, 3), (3, 4), (2, 4)]
}

#[test]
fn run_prints_count() {
    let dir = tempfile::tempdir().unwrap();
    let edges = dir.path().join("edges.csv");
    write_edges(&edges, &toy_graph());
    let query = dir.path().join("triangle.q");
    fs::write(
        &query,
        "Q(count) :- edge(a,b), edge(b,c), edge(a,c), a<b, b<c\n",
    )
    .unwrap();
    let table = format!("edge={}", edges.display());
    let (code, out, err) = run(&[
        "run",
        "--table",
        &table,
        "--query",
        query.to_str().unwrap(),
        "--threads",
        "4",
    ]);
    assert_eq!(code, 0, "{err}");
    assert!(out.lines().any(|l| l == "count=2"), "{out}");
    assert!(out.lines().any(|l| l.starts_with("seconds=")));
}

#[test]
fn run_tuples_with_header_and_mode_override() {
    let dir = tempfile::tempdir().unwrap();
    let edges = dir.path().join("edges.csv");
    fs::write(&edges, "src,dst\n1,2\n2,3\n1,3\n").unwrap();
    let table = format!("edge={}", edges.display());
    let output = dir.path().join("out.csv");
    let (code, out, err) = run(&[
        "run",
        "--table",
        &table,
        "--header",
        "--query-text",
        "Q(count) :- edge(a,b), edge(b,c), edge(a,c)",
        "--mode",
        "tuples",
        "--output",
        output.to_str().unwrap(),
    ]);
    assert_eq!(code, 0, "{err}");
    assert!(out.contains("tuples=1"));
    assert_eq!(fs::read_to_string(output).unwrap(), "a,b,c\n1,2,3\n");
}

#[test]
fn missing_file_exits_two() {
    let (code, _, err) = run(&[
        "run",
        "--table",
        "edge=/no/such/edges.csv",
        "--query-text",
        "Q(count) :- edge(a,b)",
    ]);
    assert_eq!(code, 2);
    assert!(err.contains("/no/such/edges.csv"), "{err}");

    let dir = tempfile::tempdir().unwrap();
    let edges = dir.path().join("edges.csv");
    write_edges(&edges, &toy_graph());
    let table = format!("edge={}", edges.display());
    let (code, _, err) = run(&["run", "--table", &table, "--query", "/no/such/query.q"]);
    assert_eq!(code, 2);
    assert!(err.contains("/no/such/query.q"), "{err}");
}

#[test]
fn malformed_csv_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let edges = dir.path().join("edges.csv");
    fs::write(&edges, "1,2\n3,x\n").unwrap();
    let table = format!("edge={}", edges.display());
    let (code, _, err) = run(&[
        "run",
        "--table",
        &table,
        "--query-text",
        "Q(count) :- edge(a,b)",
    ]);
    assert_eq!(code, 2);
    assert!(err.contains("edges.csv"), "{err}");
}

#[test]
fn query_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let edges = dir.path().join("edges.csv");
    write_edges(&edges, &toy_graph());
    let table = format!("edge={}", edges.display());
    for text in [
        "Q(count) :- edge(a,b",
        "Q(count) :- nope(a,b)",
        "Q(count) :- edge(a,b,c)",
    ] {
        let (code, _, err) = run(&["run", "--table", &table, "--query-text", text]);
        assert_eq!(code, 1, "{text}: {err}");
        assert!(err.starts_with("error:"));
    }
    let (code, _, _) = run(&[
        "run",
        "--table",
        &table,
        "--query-text",
        "Q(count) :- edge(a,b)",
        "--threads",
        "0",
    ]);
    assert_eq!(code, 1);
}

#[test]
fn stats_file_rows_cover_all_episodes() {
    let dir = tempfile::tempdir().unwrap();
    let edges = dir.path().join("edges.csv");
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    write_edges(&edges, &random_graph(&mut rng, 10, 40));
    let stats = dir.path().join("stats.tsv");
    let table = format!("edge={}", edges.display());
    let (code, out, err) = run(&[
        "run",
        "--table",
        &table,
        "--query-text",
        "Q(count) :- edge(a,b), edge(b,c), edge(c,d), edge(a,d)",
        "--budget",
        "5",
        "--exploration",
        "0.4",
        "--stats",
        stats.to_str().unwrap(),
    ]);
    assert_eq!(code, 0, "{err}");
    let episodes: u64 = out
        .lines()
        .find_map(|l| l.strip_prefix("episodes="))
        .unwrap()
        .parse()
        .unwrap();
    let text = fs::read_to_string(&stats).unwrap();
    let mut total = 0;
    let mut last = u64::MAX;
    for line in text.lines() {
        let fields: Vec<&str> = line.split('\t').collect();
        assert_eq!(fields.len(), 3, "{line}");
        let n: u64 = fields[1].parse().unwrap();
        let mean: f64 = fields[2].parse().unwrap();
        assert!(n <= last);
        assert!((0.0..=1.0).contains(&mean));
        last = n;
        total += n;
    }
    assert!(episodes > 1);
    assert_eq!(total, episodes);
}

#[test]
fn oracle_command() {
    let dir = tempfile::tempdir().unwrap();
    let edges = dir.path().join("edges.csv");
    write_edges(&edges, &toy_graph());
    let table = format!("edge={}", edges.display());
    let (code, out, _) = run(&[
        "oracle",
        "--table",
        &table,
        "--query-text",
        "Q(count) :- edge(a,b), edge(b,c), edge(a,c), a<b, b<c",
    ]);
    assert_eq!(code, 0);
    assert_eq!(out, "count=2\n");
}

#[test]
fn genquery_command() {
    let (code, out, _) = run(&["genquery", "cycle", "4"]);
    assert_eq!(code, 0);
    assert_eq!(
        out,
        "Q(count) :- edge(a,b), edge(b,c), edge(c,d), edge(a,d), a<b, b<c, c<d\n"
    );
    let (code, _, _) = run(&["genquery", "clique", "2"]);
    assert_eq!(code, 1);
}

/// Counts (or lists) satisfying assignments by trying every attribute value
/// combination from `0..nodes` against the stored rows.
fn assignment_oracle(cat: &cubejoin::Catalog, q: &cubejoin::Query, nodes: i64) -> OracleResult {
    use std::collections::HashMap;
    let mut multiplicity: Vec<HashMap<Vec<i64>, u128>> = Vec::new();
    for atom in &q.atoms {
        let mut m = HashMap::new();
        for row in cat.get(&atom.table).unwrap().rows() {
            *m.entry(row).or_insert(0) += 1;
        }
        multiplicity.push(m);
    }
    let n = q.num_attributes();
    let mut assignment = vec![0i64; n];
    let mut count = 0u128;
    let mut tuples = Vec::new();
    loop {
        if q.ineq_preds.iter().all(|p| p.eval(&assignment)) {
            let mut product = 1u128;
            for (atom, m) in q.atoms.iter().zip(&multiplicity) {
                let key: Vec<i64> = atom.vars.iter().map(|&v| assignment[v]).collect();
                product *= m.get(&key).copied().unwrap_or(0);
            }
            if product > 0 {
                count += product;
                tuples.push(assignment.clone());
            }
        }
        let mut i = n;
        loop {
            if i == 0 {
                return match q.aggregate {
                    Aggregate::Count => OracleResult::Count(count),
                    Aggregate::Tuples => OracleResult::Tuples(tuples),
                };
            }
            i -= 1;
            assignment[i] += 1;
            if assignment[i] < nodes {
                break;
            }
            assignment[i] = 0;
        }
    }
}

/// Every generated benchmark query gives the brute-force answer on graphs of
/// at most 60 edges.
#[test]
fn generated_queries_match_oracle() {
    let nodes = 9;
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for round in 0..6 {
        let edges = random_graph(&mut rng, nodes, 20 + 8 * round);
        assert!(edges.len() <= 60);
        let mut cat = graph_catalog(&edges);
        let triples: Vec<Vec<i64>> = edges
            .iter()
            .map(|&(a, b)| vec![a, b, (a + b) % nodes])
            .collect();
        cat.register(table("wide", &["x", "y", "z"], &triples))
            .unwrap();
        let mut cases = Vec::new();
        for n in 3..=5 {
            cases.push(cmd_genquery(QueryKind::Clique, n, Aggregate::Count).unwrap());
            cases.push(cmd_genquery(QueryKind::Cycle, n, Aggregate::Count).unwrap());
        }
        cases.push(cmd_genquery(QueryKind::LoomisWhitney, 3, Aggregate::Count).unwrap());
        // degree 4 needs a ternary table
        cases.push(
            cmd_genquery(QueryKind::LoomisWhitney, 4, Aggregate::Tuples)
                .unwrap()
                .replace("edge(", "wide("),
        );
        for text in cases {
            let q = parse_query(&text, &cat).unwrap();
            let expected = assignment_oracle(&cat, &q, nodes);
            if let Ok(nested) = evaluate(&cat, &q) {
                assert_eq!(nested, expected, "{text}");
            }
            for threads in [1, 3] {
                let res = cubejoin::execute(&cat, &q, &config(threads, 13, round as u64)).unwrap();
                match &expected {
                    OracleResult::Count(c) => assert_eq!(res.count, *c, "{text}"),
                    OracleResult::Tuples(t) => assert_eq!(&res.tuples, t, "{text}"),
                }
            }
        }
    }
}
