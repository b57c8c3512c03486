use std::fmt;

use crate::config::RunConfig;
use crate::data::{DatasetSplits, Split};
use crate::error::{Error, Result};
use crate::model::Checkpoint;
use crate::retrieval::{average_precision, run_retrieval, CodeDatabase};

use super::encode_checkpoint;

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub bits: usize,
    pub k: usize,
    pub queries: usize,
    pub map: f64,
    /// Per-query AP at the 0, 25, 50, 75 and 100th percentiles.
    pub ap_quantiles: [f64; 5],
}

/// MAP@k of `queries` against `database` plus the spread of per-query AP.
pub fn evaluate(queries: &CodeDatabase, database: &CodeDatabase, k: usize) -> Result<EvalReport> {
    let run = run_retrieval(queries, database, k)?;
    let mut aps: Vec<f64> = run.queries.iter().map(|q| average_precision(&q.relevant)).collect();
    let map = aps.iter().sum::<f64>() / aps.len() as f64;
    aps.sort_by(f64::total_cmp);
    let at = |q: f64| aps[((aps.len() - 1) as f64 * q).round() as usize];
    Ok(EvalReport {
        bits: queries.bits(),
        k,
        queries: aps.len(),
        map,
        ap_quantiles: [at(0.0), at(0.25), at(0.5), at(0.75), at(1.0)],
    })
}

/// Encodes the query and database splits with `checkpoint` and scores them
/// at `eval.k`, writing whichever of `paths.codes` and `paths.report` are set.
/// Returns `None` when neither is.
pub fn evaluate_checkpoint(config: &RunConfig, checkpoint: &Checkpoint) -> Result<Option<EvalReport>> {
    let p = &config.paths;
    if p.codes.is_none() && p.report.is_none() {
        return Ok(None);
    }
    let dir = p
        .dataset
        .as_deref()
        .ok_or_else(|| Error::Config("paths.dataset is required for evaluation".into()))?;
    let resize = config.training.resize_to;
    let encode = |split| encode_checkpoint(checkpoint, &DatasetSplits::load_split(dir, split)?, resize, None);
    let queries = encode(Split::Query)?;
    let database = encode(Split::Database)?;
    if let Some(codes) = &p.codes {
        queries.save(&codes.join("query.hhc"))?;
        database.save(&codes.join("database.hhc"))?;
    }
    let report = evaluate(&queries, &database, config.eval.k)?;
    if let Some(path) = &p.report {
        crate::binio::write_file(path, format!("{report}\n").as_bytes())?;
    }
    Ok(Some(report))
}

impl fmt::Display for EvalReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let [min, q1, median, q3, max] = self.ap_quantiles;
        writeln!(f, "bits\t{}", self.bits)?;
        writeln!(f, "k\t{}", self.k)?;
        writeln!(f, "queries\t{}", self.queries)?;
        writeln!(f, "map\t{:.6}", self.map)?;
        write!(
            f,
            "ap_quantiles\tmin={min:.6}\tq25={q1:.6}\tmedian={median:.6}\tq75={q3:.6}\tmax={max:.6}"
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::retrieval::HashCode;

    #[test]
    fn self_retrieval_at_k1_is_perfect() {
        let codes: Vec<_> = (0..6u64).map(|i| HashCode::from_words(8, vec![i * 37 % 256]).unwrap()).collect();
        let db = CodeDatabase::sequential(8, vec![1, 2, 4, 1, 2, 4], codes).unwrap();
        let report = evaluate(&db, &db, 1).unwrap();
        assert_eq!(report.map, 1.0);
        assert_eq!(report.ap_quantiles, [1.0; 5]);
        assert!(report.to_string().contains("map\t1.000000"));
    }
}
