//! In-memory columnar tables, CSV ingestion, unary filtering and the
//! sort-order index cache used by the trie cursors.

use std::collections::HashMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, RwLock};

use thiserror::Error;

/// Every join column holds 64-bit signed integers.
pub type Value = i64;

#[derive(Debug, Error)]
pub enum CatalogError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: line {line}: {message}")]
    Parse {
        path: PathBuf,
        line: u64,
        message: String,
    },
    #[error("table `{0}` is already registered")]
    DuplicateTable(String),
    #[error("unknown table `{0}`")]
    UnknownTable(String),
    #[error("table `{table}` has no column `{column}`")]
    UnknownColumn { table: String, column: String },
    #[error("column count mismatch for table `{table}`: expected {expected}, got {actual}")]
    ColumnCount {
        table: String,
        expected: usize,
        actual: usize,
    },
}

pub type Result<T, E = CatalogError> = std::result::Result<T, E>;

/// Whether cached sort indexes outlive the current query.
///
/// Base tables keep their indexes across queries. Tables produced by unary
/// filtering are temporaries: their cache dies with the table.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CachePolicy {
    Persistent,
    PerQuery,
}

/// Row positions of a table ordered lexicographically by `column_order`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SortIndex {
    column_order: Vec<usize>,
    rows: Vec<usize>,
}

impl SortIndex {
    pub fn column_order(&self) -> &[usize] {
        &self.column_order
    }

    /// Row permutation: `rows()[i]` is the table row at sorted position `i`.
    pub fn rows(&self) -> &[usize] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

pub struct ColumnTable {
    name: String,
    column_names: Vec<String>,
    columns: Vec<Vec<Value>>,
    row_count: usize,
    policy: CachePolicy,
    sort_cache: RwLock<HashMap<Vec<usize>, Arc<SortIndex>>>,
    builds: AtomicUsize,
}

impl fmt::Debug for ColumnTable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ColumnTable")
            .field("name", &self.name)
            .field("columns", &self.column_names)
            .field("row_count", &self.row_count)
            .field("policy", &self.policy)
            .finish()
    }
}

impl ColumnTable {
    /// Builds a base table from column vectors. All columns must have equal
    /// length.
    pub fn new(
        name: impl Into<String>,
        column_names: Vec<String>,
        columns: Vec<Vec<Value>>,
    ) -> Result<Self> {
        Self::with_policy(name.into(), column_names, columns, CachePolicy::Persistent)
    }

    /// Convenience constructor from row tuples.
    pub fn from_rows(
        name: impl Into<String>,
        column_names: &[&str],
        rows: &[Vec<Value>],
    ) -> Result<Self> {
        let name = name.into();
        let mut columns = vec![Vec::with_capacity(rows.len()); column_names.len()];
        for row in rows {
            if row.len() != column_names.len() {
                return Err(CatalogError::ColumnCount {
                    table: name,
                    expected: column_names.len(),
                    actual: row.len(),
                });
            }
            for (col, v) in columns.iter_mut().zip(row) {
                col.push(*v);
            }
        }
        Self::new(
            name,
            column_names.iter().map(|s| s.to_string()).collect(),
            columns,
        )
    }

    fn with_policy(
        name: String,
        column_names: Vec<String>,
        columns: Vec<Vec<Value>>,
        policy: CachePolicy,
    ) -> Result<Self> {
        if column_names.len() != columns.len() {
            return Err(CatalogError::ColumnCount {
                table: name,
                expected: column_names.len(),
                actual: columns.len(),
            });
        }
        let row_count = columns.first().map_or(0, Vec::len);
        if let Some(bad) = columns.iter().find(|c| c.len() != row_count) {
            return Err(CatalogError::ColumnCount {
                table: name,
                expected: row_count,
                actual: bad.len(),
            });
        }
        Ok(Self {
            name,
            column_names,
            columns,
            row_count,
            policy,
            sort_cache: RwLock::new(HashMap::new()),
            builds: AtomicUsize::new(0),
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn column_names(&self) -> &[String] {
        &self.column_names
    }

    pub fn arity(&self) -> usize {
        self.columns.len()
    }

    pub fn row_count(&self) -> usize {
        self.row_count
    }

    pub fn is_empty(&self) -> bool {
        self.row_count == 0
    }

    pub fn policy(&self) -> CachePolicy {
        self.policy
    }

    pub fn column(&self, idx: usize) -> &[Value] {
        &self.columns[idx]
    }

    pub fn column_index(&self, name: &str) -> Result<usize> {
        self.column_names
            .iter()
            .position(|c| c == name)
            .ok_or_else(|| CatalogError::UnknownColumn {
                table: self.name.clone(),
                column: name.to_string(),
            })
    }

    pub fn row(&self, idx: usize) -> Vec<Value> {
        self.columns.iter().map(|c| c[idx]).collect()
    }

    pub fn rows(&self) -> impl Iterator<Item = Vec<Value>> + '_ {
        (0..self.row_count).map(move |i| self.row(i))
    }

    /// Number of sort indexes built so far (cache misses).
    pub fn sort_builds(&self) -> usize {
        self.builds.load(Ordering::Relaxed)
    }

    /// Column orders currently held in the cache.
    pub fn cached_orders(&self) -> Vec<Vec<usize>> {
        let cache = self.sort_cache.read().expect("sort cache poisoned");
        let mut orders: Vec<_> = cache.keys().cloned().collect();
        orders.sort();
        orders
    }

    /// Returns the lexicographic sort index for `column_order`, building and
    /// caching it on first request.
    ///
    /// Concurrent builders for the same order may race; the first insert wins
    /// and every caller receives that same index.
    pub fn sort_index(&self, column_order: &[usize]) -> Result<Arc<SortIndex>> {
        if let Some(&bad) = column_order.iter().find(|&&c| c >= self.arity()) {
            return Err(CatalogError::UnknownColumn {
                table: self.name.clone(),
                column: format!("#{bad}"),
            });
        }
        if let Some(idx) = self
            .sort_cache
            .read()
            .expect("sort cache poisoned")
            .get(column_order)
        {
            return Ok(Arc::clone(idx));
        }

        let built = Arc::new(self.build_sort_index(column_order));
        self.builds.fetch_add(1, Ordering::Relaxed);
        let mut cache = self.sort_cache.write().expect("sort cache poisoned");
        let entry = cache
            .entry(column_order.to_vec())
            .or_insert_with(|| Arc::clone(&built));
        Ok(Arc::clone(entry))
    }

    fn build_sort_index(&self, column_order: &[usize]) -> SortIndex {
        let cols: Vec<&[Value]> = column_order.iter().map(|&c| self.column(c)).collect();
        let mut rows: Vec<usize> = (0..self.row_count).collect();
        // stable: ties keep original row order
        rows.sort_by(|&x, &y| {
            cols.iter()
                .map(|col| col[x].cmp(&col[y]))
                .find(|o| o.is_ne())
                .unwrap_or(std::cmp::Ordering::Equal)
        });
        SortIndex {
            column_order: column_order.to_vec(),
            rows,
        }
    }

    /// Temporary table holding a subset of columns for every row satisfying
    /// `keep`. Used for unary filters and for collapsing repeated variables.
    pub(crate) fn derive(
        &self,
        name: String,
        keep_columns: &[usize],
        keep: impl Fn(usize) -> bool,
    ) -> ColumnTable {
        let selected: Vec<usize> = (0..self.row_count).filter(|&r| keep(r)).collect();
        let columns = keep_columns
            .iter()
            .map(|&c| selected.iter().map(|&r| self.columns[c][r]).collect())
            .collect();
        let names = keep_columns
            .iter()
            .map(|&c| self.column_names[c].clone())
            .collect();
        ColumnTable::with_policy(name, names, columns, CachePolicy::PerQuery)
            .expect("derived columns have equal length")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CompareOp {
    Eq,
    Lt,
    Le,
    Gt,
    Ge,
    Ne,
}

impl CompareOp {
    pub fn eval(self, left: Value, right: Value) -> bool {
        match self {
            CompareOp::Eq => left == right,
            CompareOp::Lt => left < right,
            CompareOp::Le => left <= right,
            CompareOp::Gt => left > right,
            CompareOp::Ge => left >= right,
            CompareOp::Ne => left != right,
        }
    }

    pub fn symbol(self) -> &'static str {
        match self {
            CompareOp::Eq => "=",
            CompareOp::Lt => "<",
            CompareOp::Le => "<=",
            CompareOp::Gt => ">",
            CompareOp::Ge => ">=",
            CompareOp::Ne => "!=",
        }
    }
}

impl fmt::Display for CompareOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.symbol())
    }
}

/// `table.column op constant`
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct UnaryPredicate {
    pub table: String,
    pub column: String,
    pub op: CompareOp,
    pub constant: Value,
}

impl fmt::Display for UnaryPredicate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}.{} {} {}",
            self.table, self.column, self.op, self.constant
        )
    }
}

/// Returns the rows of `table` satisfying every predicate. With no
/// predicates the input table itself is returned, keeping its persistent
/// index cache; otherwise the result is a fresh temporary.
pub fn apply_unary_filters(
    table: &Arc<ColumnTable>,
    preds: &[UnaryPredicate],
) -> Result<Arc<ColumnTable>> {
    if preds.is_empty() {
        return Ok(Arc::clone(table));
    }
    let resolved = preds
        .iter()
        .map(|p| Ok((table.column_index(&p.column)?, p.op, p.constant)))
        .collect::<Result<Vec<_>>>()?;
    let all: Vec<usize> = (0..table.arity()).collect();
    let filtered = table.derive(table.name.clone(), &all, |r| {
        resolved
            .iter()
            .all(|&(c, op, k)| op.eval(table.columns[c][r], k))
    });
    Ok(Arc::new(filtered))
}

#[derive(Debug, Default)]
pub struct Catalog {
    tables: HashMap<String, Arc<ColumnTable>>,
}

impl Catalog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, table: ColumnTable) -> Result<Arc<ColumnTable>> {
        if self.tables.contains_key(table.name()) {
            return Err(CatalogError::DuplicateTable(table.name().to_string()));
        }
        let table = Arc::new(table);
        self.tables
            .insert(table.name().to_string(), Arc::clone(&table));
        Ok(table)
    }

    pub fn get(&self, name: &str) -> Result<&Arc<ColumnTable>> {
        self.tables
            .get(name)
            .ok_or_else(|| CatalogError::UnknownTable(name.to_string()))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.tables.contains_key(name)
    }

    pub fn table_names(&self) -> impl Iterator<Item = &str> {
        self.tables.keys().map(String::as_str)
    }

    /// Loads a headerless or single-header CSV of decimal integers.
    ///
    /// Column names come from `schema` when given, else from the header line,
    /// else default to `c0, c1, ...`.
    pub fn load_csv(
        &mut self,
        path: impl AsRef<Path>,
        table_name: &str,
        schema: Option<&[String]>,
        has_header: bool,
    ) -> Result<Arc<ColumnTable>> {
        if self.contains(table_name) {
            return Err(CatalogError::DuplicateTable(table_name.to_string()));
        }
        let table = read_csv(path.as_ref(), table_name, schema, has_header)?;
        self.register(table)
    }
}

fn read_csv(
    path: &Path,
    table_name: &str,
    schema: Option<&[String]>,
    has_header: bool,
) -> Result<ColumnTable> {
    let io_err = |source| CatalogError::Io {
        path: path.to_path_buf(),
        source,
    };
    let file = std::fs::File::open(path).map_err(io_err)?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(has_header)
        .flexible(true)
        .trim(csv::Trim::All)
        .quoting(false)
        .from_reader(file);

    let parse_err = |line: u64, message: String| CatalogError::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };

    let mut names: Option<Vec<String>> = schema.map(<[String]>::to_vec);
    if has_header {
        let header = reader
            .headers()
            .map_err(|e| parse_err(e.position().map_or(1, |p| p.line()), e.to_string()))?;
        if names.is_none() && !header.is_empty() {
            names = Some(header.iter().map(str::to_string).collect());
        }
    }

    let mut columns: Vec<Vec<Value>> = names
        .as_ref()
        .map(|n| vec![Vec::new(); n.len()])
        .unwrap_or_default();
    let mut arity = names.as_ref().map(Vec::len);

    for record in reader.records() {
        let record =
            record.map_err(|e| parse_err(e.position().map_or(0, |p| p.line()), e.to_string()))?;
        let line = record.position().map_or(0, |p| p.line());
        let width = *arity.get_or_insert_with(|| {
            columns = vec![Vec::new(); record.len()];
            record.len()
        });
        if record.len() != width {
            return Err(parse_err(
                line,
                format!("expected {width} fields, found {}", record.len()),
            ));
        }
        for (i, field) in record.iter().enumerate() {
            if field.is_empty() {
                return Err(parse_err(line, format!("empty field {}", i + 1)));
            }
            let v: Value = field
                .parse()
                .map_err(|_| parse_err(line, format!("`{field}` is not a 64-bit integer")))?;
            columns[i].push(v);
        }
    }

    let names = names.unwrap_or_else(|| (0..columns.len()).map(|i| format!("c{i}")).collect());
    if names.len() != columns.len() {
        return Err(CatalogError::ColumnCount {
            table: table_name.to_string(),
            expected: names.len(),
            actual: columns.len(),
        });
    }
    ColumnTable::new(table_name, names, columns)
}
