//! Column schemas for every CSV the harness emits, and a strict checker.

use std::fmt;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ColType {
    Int,
    Float,
    Str,
}

#[derive(Debug, Clone, Copy)]
pub struct Schema {
    pub name: &'static str,
    pub columns: &'static [(&'static str, ColType)],
}

use ColType::*;

pub const REWARD_CURVES: Schema = Schema {
    name: "reward_curves",
    columns: &[
        ("learner", Str),
        ("query_type", Int),
        ("seed", Int),
        ("update", Int),
        ("mean_return", Float),
        ("std_return", Float),
        ("goal_rate", Float),
    ],
};

pub const END_POSITIONS: Schema = Schema {
    name: "end_positions",
    columns: &[
        ("learner", Str),
        ("query_type", Int),
        ("seed", Int),
        ("update", Int),
        ("episode", Int),
        ("x", Float),
        ("y", Float),
    ],
};

pub const BANDIT_LOG: Schema = Schema {
    name: "bandit_log",
    columns: &[
        ("learner", Str),
        ("query_type", Int),
        ("seed", Int),
        ("pull", Int),
        ("medoid_index", Int),
        ("episode_return", Float),
        ("chosen", Int),
    ],
};

pub const ASSIGNMENT: Schema = Schema {
    name: "assignment",
    columns: &[("index", Int), ("label", Int), ("is_medoid", Int)],
};

pub const STUDY_SUMMARY: Schema = Schema {
    name: "study_summary",
    columns: &[
        ("update", Int),
        ("intra_mean", Float),
        ("inter_mean", Float),
        ("adjusted_rand_index", Float),
        ("kmedoids_cost", Float),
    ],
};

#[derive(Debug, Clone, PartialEq)]
pub struct SchemaError(pub String);

impl fmt::Display for SchemaError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for SchemaError {}

fn check_cell(v: &str, ty: ColType) -> bool {
    match ty {
        Int => v.parse::<i64>().is_ok(),
        Float => v.parse::<f64>().is_ok_and(|x| !x.is_nan()),
        Str => !v.is_empty(),
    }
}

/// Check header names and every cell's type. Returns the row count.
pub fn validate(text: &str, schema: &Schema) -> Result<usize, SchemaError> {
    let mut r = csv::ReaderBuilder::new().has_headers(true).from_reader(text.as_bytes());
    let header = r
        .headers()
        .map_err(|e| SchemaError(format!("{}: {e}", schema.name)))?
        .clone();
    let expected: Vec<&str> = schema.columns.iter().map(|c| c.0).collect();
    if header.iter().collect::<Vec<_>>() != expected {
        return Err(SchemaError(format!(
            "{}: header {:?}, expected {:?}",
            schema.name, header, expected
        )));
    }
    let mut rows = 0;
    for (i, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| SchemaError(format!("{} row {i}: {e}", schema.name)))?;
        for ((name, ty), v) in schema.columns.iter().zip(rec.iter()) {
            if !check_cell(v, *ty) {
                return Err(SchemaError(format!(
                    "{} row {i}: column {name} = {v:?} is not {ty:?}",
                    schema.name
                )));
            }
        }
        rows += 1;
    }
    Ok(rows)
}

/// Distance matrices: header `id,<id>...`, one row per id in the same
/// order, nonnegative floats, zero diagonal, symmetric.
pub fn validate_distance_matrix(text: &str) -> Result<usize, SchemaError> {
    let err = |m: String| SchemaError(format!("distance_matrix: {m}"));
    let mut r = csv::ReaderBuilder::new().has_headers(true).from_reader(text.as_bytes());
    let header = r.headers().map_err(|e| err(e.to_string()))?.clone();
    if header.get(0) != Some("id") {
        return Err(err("first column must be id".into()));
    }
    let ids: Vec<i64> = header
        .iter()
        .skip(1)
        .map(|h| h.parse::<i64>().map_err(|_| err(format!("column {h:?} is not an id"))))
        .collect::<Result<_, _>>()?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| err(e.to_string()))?;
        let id: i64 = rec[0].parse().map_err(|_| err(format!("row {i} id {:?}", &rec[0])))?;
        if ids.get(i) != Some(&id) {
            return Err(err(format!("row {i} has id {id}, header order differs")));
        }
        let vals: Vec<f64> = rec
            .iter()
            .skip(1)
            .map(|v| v.parse::<f64>().map_err(|_| err(format!("row {i}: {v:?} is not a float"))))
            .collect::<Result<_, _>>()?;
        if vals.iter().any(|v| !(*v >= 0.0)) {
            return Err(err(format!("row {i} has a negative or NaN entry")));
        }
        rows.push(vals);
    }
    if rows.len() != ids.len() {
        return Err(err(format!("{} rows for {} ids", rows.len(), ids.len())));
    }
    for i in 0..rows.len() {
        if rows[i][i] != 0.0 {
            return Err(err(format!("nonzero diagonal at {i}")));
        }
        for j in 0..i {
            if rows[i][j] != rows[j][i] {
                return Err(err(format!("asymmetric at ({i}, {j})")));
            }
        }
    }
    Ok(rows.len())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn accepts_and_rejects() {
        assert_eq!(validate("index,label,is_medoid\n0,1,1\n1,1,0\n", &ASSIGNMENT), Ok(2));
        assert!(validate("index,label\n0,1\n", &ASSIGNMENT).is_err());
        assert!(validate("index,label,is_medoid\n0,x,1\n", &ASSIGNMENT).is_err());
        assert!(validate_distance_matrix("id,0,1\n0,0,1.5\n1,1.5,0\n").is_ok());
        assert!(validate_distance_matrix("id,0,1\n0,0,1.5\n1,1.4,0\n").is_err());
        assert!(validate_distance_matrix("id,0,1\n1,0,1.5\n0,1.5,0\n").is_err());
    }
}
