use super::code::{hamming_words, words_for, HashCode};
use super::database::CodeDatabase;
use crate::error::{Error, Result};
use crate::loss::{is_similar, Labels};
use crate::parallel::map_range;

/// Top-k results for one query.
#[derive(Clone, Debug, PartialEq)]
pub struct QueryResult {
    pub query_id: u64,
    /// Item ids by ascending Hamming distance, ties by ascending id.
    pub ranked: Vec<u64>,
    pub distances: Vec<u32>,
    /// Whether each ranked item shares a label with the query.
    pub relevant: Vec<bool>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RetrievalRun {
    pub k: usize,
    pub queries: Vec<QueryResult>,
}

/// Indices of the `k` nearest items, by (distance, id).
fn rank(words: &[u64], db: &CodeDatabase, k: usize) -> Vec<(usize, u32)> {
    let mut buckets: Vec<Vec<usize>> = vec![Vec::new(); db.bits() + 1];
    for &i in db.by_id() {
        buckets[hamming_words(words, db.words_of(i)) as usize].push(i);
    }
    buckets
        .into_iter()
        .enumerate()
        .flat_map(|(d, items)| items.into_iter().map(move |i| (i, d as u32)))
        .take(k)
        .collect()
}

fn check(bits: usize, db: &CodeDatabase, k: usize) -> Result<()> {
    if db.is_empty() {
        return Err(Error::Data("empty database".into()));
    }
    if bits != db.bits() {
        return Err(Error::Data(format!("{bits}-bit query against {}-bit database", db.bits())));
    }
    if k == 0 || k > db.len() {
        return Err(Error::Config(format!("cutoff k = {k} must lie in 1..={}", db.len())));
    }
    Ok(())
}

/// Top-k item ids and distances for `query`.
pub fn retrieve(query: &HashCode, db: &CodeDatabase, k: usize) -> Result<(Vec<u64>, Vec<u32>)> {
    check(query.len(), db, k)?;
    Ok(rank(query.words(), db, k).into_iter().map(|(i, d)| (db.ids()[i], d)).unzip())
}

/// Ranks every query against `db` and marks relevance by label intersection.
pub fn run_retrieval(queries: &CodeDatabase, db: &CodeDatabase, k: usize) -> Result<RetrievalRun> {
    if queries.is_empty() {
        return Err(Error::Data("no queries".into()));
    }
    check(queries.bits(), db, k)?;
    debug_assert_eq!(words_for(queries.bits()), words_for(db.bits()));
    let results = map_range(queries.len(), |q| {
        let ql: Labels = queries.labels()[q];
        let top = rank(queries.words_of(q), db, k);
        QueryResult {
            query_id: queries.ids()[q],
            ranked: top.iter().map(|&(i, _)| db.ids()[i]).collect(),
            distances: top.iter().map(|&(_, d)| d).collect(),
            relevant: top.iter().map(|&(i, _)| is_similar(ql, db.labels()[i])).collect(),
        }
    });
    Ok(RetrievalRun { k, queries: results })
}

/// AP over a ranked relevance list, normalised by the number of relevant
/// items retrieved. No relevant item → 0.
///
/// The precision sum is kept as an exact fraction while it fits in 128 bits,
/// so short lists round once.
pub fn average_precision(relevant: &[bool]) -> f64 {
    let mut hits = 0u64;
    let mut exact = Some((0u128, 1u128));
    let mut approx = 0.0;
    for (r, _) in relevant.iter().enumerate().filter(|(_, &rel)| rel) {
        hits += 1;
        let rank = r as u128 + 1;
        approx += hits as f64 / rank as f64;
        exact = exact.and_then(|(num, den)| {
            let num = num.checked_mul(rank)?.checked_add((hits as u128).checked_mul(den)?)?;
            let den = den.checked_mul(rank)?;
            let g = gcd(num, den);
            Some((num / g, den / g))
        });
    }
    if hits == 0 {
        return 0.0;
    }
    const MAX_EXACT: u128 = 1 << f64::MANTISSA_DIGITS;
    match exact.and_then(|(num, den)| Some((num, den.checked_mul(hits as u128)?))) {
        Some((num, den)) if num < MAX_EXACT && den < MAX_EXACT => num as f64 / den as f64,
        _ => approx / hits as f64,
    }
}

fn gcd(mut a: u128, mut b: u128) -> u128 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

/// Mean of per-query AP@k.
pub fn mean_average_precision(run: &RetrievalRun) -> Result<f64> {
    if run.k == 0 {
        return Err(Error::Config("cutoff k must be positive".into()));
    }
    if run.queries.is_empty() {
        return Err(Error::Data("no queries".into()));
    }
    let total: f64 = run
        .queries
        .iter()
        .map(|q| average_precision(&q.relevant[..run.k.min(q.relevant.len())]))
        .sum();
    Ok(total / run.queries.len() as f64)
}
