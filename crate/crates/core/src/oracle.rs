//! Nested-loop reference evaluation.
//!
//! Tries every combination of rows, one per atom, and keeps those that agree
//! on shared variables and pass every predicate. Deliberately shares no code
//! with the join path beyond the catalog and the parsed query.

use std::collections::BTreeSet;

use thiserror::Error;

use crate::catalog::{Catalog, CatalogError, Value};
use crate::query::{Aggregate, Query, QueryError};

/// Largest product of (filtered) relation sizes the oracle accepts.
pub const MAX_COMBINATIONS: u128 = 10_000_000;

#[derive(Debug, Error)]
pub enum OracleError {
    #[error(transparent)]
    Query(#[from] QueryError),
    #[error(transparent)]
    Catalog(#[from] CatalogError),
    #[error("{0} row combinations exceed the oracle limit of {MAX_COMBINATIONS}")]
    TooLarge(u128),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum OracleResult {
    Count(u128),
    /// Sorted, distinct attribute vectors.
    Tuples(Vec<Vec<Value>>),
}

pub fn evaluate(catalog: &Catalog, q: &Query) -> Result<OracleResult, OracleError> {
    q.validate(catalog)?;
    let mut relations = Vec::with_capacity(q.atoms.len());
    for atom in &q.atoms {
        let table = catalog.get(&atom.table)?;
        let mut filters = Vec::new();
        for p in q.unary_preds.iter().filter(|p| p.table == atom.table) {
            filters.push((table.column_index(&p.column)?, p.op, p.constant));
        }
        let rows: Vec<Vec<Value>> = table
            .rows()
            .filter(|row| filters.iter().all(|&(c, op, k)| op.eval(row[c], k)))
            .collect();
        relations.push(rows);
    }

    let combos = relations
        .iter()
        .try_fold(1u128, |acc, r| acc.checked_mul(r.len() as u128))
        .unwrap_or(u128::MAX);
    if combos > MAX_COMBINATIONS {
        return Err(OracleError::TooLarge(combos));
    }

    let mut search = Search {
        q,
        relations: &relations,
        binding: vec![None; q.num_attributes()],
        count: 0,
        tuples: BTreeSet::new(),
    };
    search.atom(0);
    Ok(match q.aggregate {
        Aggregate::Count => OracleResult::Count(search.count),
        Aggregate::Tuples => OracleResult::Tuples(search.tuples.into_iter().collect()),
    })
}

struct Search<'a> {
    q: &'a Query,
    relations: &'a [Vec<Vec<Value>>],
    binding: Vec<Option<Value>>,
    count: u128,
    tuples: BTreeSet<Vec<Value>>,
}

impl Search<'_> {
    fn atom(&mut self, i: usize) {
        if i == self.relations.len() {
            let full: Vec<Value> = self
                .binding
                .iter()
                .map(|v| v.expect("every attribute bound"))
                .collect();
            if self.q.ineq_preds.iter().all(|p| p.eval(&full)) {
                self.count += 1;
                self.tuples.insert(full);
            }
            return;
        }
        let vars = &self.q.atoms[i].vars;
        for row in &self.relations[i] {
            let saved = self.binding.clone();
            let consistent = vars.iter().zip(row).all(|(&v, &x)| match self.binding[v] {
                Some(b) => b == x,
                None => {
                    self.binding[v] = Some(x);
                    true
                }
            });
            if consistent {
                self.atom(i + 1);
            }
            self.binding = saved;
        }
    }
}
