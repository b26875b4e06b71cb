//! CSV and schema-file readers and writers.
//!
//! Layout of a dataset directory:
//! `schema.toml`, `users.csv` (`i,u1..,s1..`), `items.csv` (`j,v1..,o1..`)
//! and `interactions.csv` (`i,j,y1..yT`). Category levels are one-based on
//! disk and labels are exactly `1` or `-1`.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use super::{Dataset, FeatureSchema, Features, Interaction, ItemId, Label, UserId};
use crate::error::{Error, Result};

pub const SCHEMA_FILE: &str = "schema.toml";
pub const USERS_FILE: &str = "users.csv";
pub const ITEMS_FILE: &str = "items.csv";
pub const INTERACTIONS_FILE: &str = "interactions.csv";

pub fn read_schema(path: &Path) -> Result<FeatureSchema> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    toml::from_str(&text).map_err(|e| Error::malformed(path, e.to_string()))
}

pub fn write_schema(path: &Path, schema: &FeatureSchema) -> Result<()> {
    let text = toml::to_string(schema).map_err(|e| Error::malformed(path, e.to_string()))?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn feature_header(id: &str, numeric: &str, p: usize, categorical: &str, d: usize) -> Vec<String> {
    let mut h = vec![id.to_string()];
    h.extend((1..=p).map(|k| format!("{numeric}{k}")));
    h.extend((1..=d).map(|k| format!("{categorical}{k}")));
    h
}

fn interaction_header(stages: usize) -> Vec<String> {
    let mut h = vec!["i".to_string(), "j".to_string()];
    h.extend((1..=stages).map(|t| format!("y{t}")));
    h
}

fn csv_reader(path: &Path) -> Result<csv::Reader<fs::File>> {
    csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| csv_error(path, e))
}

fn csv_writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    csv::Writer::from_path(path).map_err(|e| csv_error(path, e))
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::malformed(path, format!("{other:?}")),
    }
}

fn check_header(path: &Path, found: &csv::StringRecord, expected: &[String]) -> Result<()> {
    if found.iter().ne(expected.iter().map(String::as_str)) {
        return Err(Error::malformed(
            path,
            format!(
                "header `{}` does not match expected `{}`",
                found.iter().collect::<Vec<_>>().join(","),
                expected.join(",")
            ),
        ));
    }
    Ok(())
}

fn parse_field<T: std::str::FromStr>(path: &Path, line: u64, field: &str) -> Result<T> {
    field
        .parse()
        .map_err(|_| Error::malformed(path, format!("line {line}: cannot parse `{field}`")))
}

fn read_features(
    path: &Path,
    id: &str,
    numeric: &str,
    categorical: &str,
    p: usize,
    d: usize,
) -> Result<BTreeMap<u64, Features>> {
    let mut reader = csv_reader(path)?;
    let header = reader.headers().map_err(|e| csv_error(path, e))?.clone();
    check_header(path, &header, &feature_header(id, numeric, p, categorical, d))?;
    let mut table = BTreeMap::new();
    for record in reader.records() {
        let record = record.map_err(|e| csv_error(path, e))?;
        let line = record.position().map_or(0, |p| p.line());
        let key: u64 = parse_field(path, line, &record[0])?;
        let values = (1..=p)
            .map(|k| parse_field::<f64>(path, line, &record[k]))
            .collect::<Result<Vec<_>>>()?;
        let levels = (p + 1..=p + d)
            .map(|k| {
                let level: usize = parse_field(path, line, &record[k])?;
                level.checked_sub(1).ok_or_else(|| {
                    Error::malformed(path, format!("line {line}: category levels start at 1"))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        if table.insert(key, Features::new(values, levels)).is_some() {
            return Err(Error::malformed(path, format!("line {line}: duplicate id {key}")));
        }
    }
    Ok(table)
}

fn write_features(
    path: &Path,
    header: Vec<String>,
    table: &BTreeMap<u64, Features>,
) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(&header).map_err(|e| csv_error(path, e))?;
    for (id, f) in table {
        let mut row = vec![id.to_string()];
        row.extend(f.numeric.iter().map(|x| x.to_string()));
        row.extend(f.categories.iter().map(|c| (c + 1).to_string()));
        w.write_record(&row).map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// One row of a cell file: ids plus labels when the file carries them.
#[derive(Clone, Debug, PartialEq)]
pub struct CellRecord {
    pub user: UserId,
    pub item: ItemId,
    pub labels: Option<Vec<Label>>,
}

/// Reads `i,j` or `i,j,y1..yT` rows.
pub fn read_cells(path: &Path, stages: usize) -> Result<Vec<CellRecord>> {
    let mut reader = csv_reader(path)?;
    let header = reader.headers().map_err(|e| csv_error(path, e))?.clone();
    let labelled = header.len() > 2;
    if labelled {
        check_header(path, &header, &interaction_header(stages))?;
    } else {
        check_header(path, &header, &interaction_header(0))?;
    }
    let mut out = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| csv_error(path, e))?;
        let line = record.position().map_or(0, |p| p.line());
        let user = parse_field(path, line, &record[0])?;
        let item = parse_field(path, line, &record[1])?;
        let labels = if labelled {
            Some(
                (2..2 + stages)
                    .map(|k| {
                        let v: i64 = parse_field(path, line, &record[k])?;
                        Label::from_sign(v).ok_or_else(|| {
                            Error::malformed(path, format!("line {line}: label `{v}` is not 1 or -1"))
                        })
                    })
                    .collect::<Result<Vec<_>>>()?,
            )
        } else {
            None
        };
        out.push(CellRecord { user, item, labels });
    }
    Ok(out)
}

pub fn write_interactions(path: &Path, interactions: &[Interaction], stages: usize) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(interaction_header(stages))
        .map_err(|e| csv_error(path, e))?;
    for x in interactions {
        let mut row = vec![x.user.to_string(), x.item.to_string()];
        row.extend(x.labels.iter().map(|y| y.as_i8().to_string()));
        w.write_record(&row).map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[derive(Clone, Debug)]
pub struct DatasetPaths {
    pub schema: PathBuf,
    pub users: PathBuf,
    pub items: PathBuf,
    pub interactions: PathBuf,
}

impl DatasetPaths {
    pub fn in_dir(dir: &Path) -> Self {
        DatasetPaths {
            schema: dir.join(SCHEMA_FILE),
            users: dir.join(USERS_FILE),
            items: dir.join(ITEMS_FILE),
            interactions: dir.join(INTERACTIONS_FILE),
        }
    }
}

pub fn read_feature_tables(
    paths: &DatasetPaths,
    schema: &FeatureSchema,
) -> Result<(BTreeMap<UserId, Features>, BTreeMap<ItemId, Features>)> {
    let users = read_features(&paths.users, "i", "u", "s", schema.p1, schema.d1())?;
    let items = read_features(&paths.items, "j", "v", "o", schema.p2, schema.d2())?;
    Ok((users, items))
}

pub fn read_dataset(paths: &DatasetPaths) -> Result<Dataset> {
    let schema = read_schema(&paths.schema)?;
    let (users, items) = read_feature_tables(paths, &schema)?;
    let interactions = read_cells(&paths.interactions, schema.stages)?
        .into_iter()
        .map(|c| match c.labels {
            Some(labels) => Ok(Interaction::new(c.user, c.item, labels)),
            None => Err(Error::malformed(
                &paths.interactions,
                "interactions file needs y1..yT columns",
            )),
        })
        .collect::<Result<Vec<_>>>()?;
    Dataset::new(schema, users, items, interactions)
}

pub fn read_dataset_dir(dir: &Path) -> Result<Dataset> {
    read_dataset(&DatasetPaths::in_dir(dir))
}

pub fn write_dataset(dir: &Path, dataset: &Dataset) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let paths = DatasetPaths::in_dir(dir);
    let schema = dataset.schema();
    write_schema(&paths.schema, schema)?;
    write_features(
        &paths.users,
        feature_header("i", "u", schema.p1, "s", schema.d1()),
        dataset.users(),
    )?;
    write_features(
        &paths.items,
        feature_header("j", "v", schema.p2, "o", schema.d2()),
        dataset.items(),
    )?;
    write_interactions(&paths.interactions, dataset.interactions(), schema.stages)
}

#[cfg(test)]
mod tests {
    use super::*;
    use Label::{Negative as N, Positive as P};

    fn sample() -> Dataset {
        let schema = FeatureSchema::new(1, 2, vec![3], vec![2, 4], 2).unwrap();
        let users = [
            (10, Features::new(vec![0.25], vec![2])),
            (11, Features::new(vec![1.0], vec![0])),
        ]
        .into_iter()
        .collect();
        let items = [(5, Features::new(vec![0.1, 0.9], vec![1, 3]))]
            .into_iter()
            .collect();
        let xs = vec![
            Interaction::new(10, 5, vec![P, N]),
            Interaction::new(11, 5, vec![N, N]),
        ];
        Dataset::new(schema, users, items, xs).unwrap()
    }

    #[test]
    fn dataset_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let d = sample();
        write_dataset(dir.path(), &d).unwrap();
        let back = read_dataset_dir(dir.path()).unwrap();
        assert_eq!(back.schema(), d.schema());
        assert_eq!(back.users(), d.users());
        assert_eq!(back.items(), d.items());
        assert_eq!(back.interactions(), d.interactions());
        let header = fs::read_to_string(dir.path().join(INTERACTIONS_FILE)).unwrap();
        assert!(header.starts_with("i,j,y1,y2\n"));
        let users = fs::read_to_string(dir.path().join(USERS_FILE)).unwrap();
        assert!(users.starts_with("i,u1,s1\n10,0.25,3\n"));
    }

    #[test]
    fn rejects_bad_labels_and_ranges() {
        let dir = tempfile::tempdir().unwrap();
        write_dataset(dir.path(), &sample()).unwrap();
        let inter = dir.path().join(INTERACTIONS_FILE);
        fs::write(&inter, "i,j,y1,y2\n10,5,1,0\n").unwrap();
        assert!(matches!(read_dataset_dir(dir.path()), Err(Error::Malformed { .. })));
        fs::write(&inter, "i,j,y1\n10,5,1\n").unwrap();
        assert!(matches!(read_dataset_dir(dir.path()), Err(Error::Malformed { .. })));
        fs::write(&inter, "i,j,y1,y2\n10,5,1,-1\n").unwrap();
        fs::write(dir.path().join(USERS_FILE), "i,u1,s1\n10,1.5,1\n11,0,1\n").unwrap();
        assert!(matches!(read_dataset_dir(dir.path()), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn unlabelled_cells() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("cells.csv");
        fs::write(&p, "i,j\n1,2\n3,4\n").unwrap();
        let cells = read_cells(&p, 2).unwrap();
        assert_eq!(cells.len(), 2);
        assert!(cells.iter().all(|c| c.labels.is_none()));
    }

    #[test]
    fn schema_file_declares_counts() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join(SCHEMA_FILE);
        fs::write(
            &p,
            "p1 = 0\np2 = 0\nd1 = 2\nd2 = 1\nuser_cardinalities = [3, 4]\nitem_cardinalities = [5]\nT = 2\n",
        )
        .unwrap();
        let s = read_schema(&p).unwrap();
        assert_eq!(s.user_cardinalities, vec![3, 4]);
        fs::write(
            &p,
            "p1 = 0\np2 = 0\nd1 = 1\nd2 = 1\nuser_cardinalities = [3, 4]\nitem_cardinalities = [5]\nT = 2\n",
        )
        .unwrap();
        assert!(read_schema(&p).is_err());
    }
}
