//! Thematic-fit norm datasets: loading, validation and preprocessing.
//!
//! The canonical on-disk layout is a UTF-8 TSV file whose header names the
//! columns `dataset`, `predicate`, `argument`, `role` and `rating`. Other
//! layouts are adapted through a [`ColumnSpec`].

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: no data rows")]
    NoDataRows { path: PathBuf },
    #[error("{path}: header is missing column '{column}'")]
    MissingColumn { path: PathBuf, column: String },
    #[error("{path}:{line}: expected {expected} columns, found {found}")]
    ColumnCount {
        path: PathBuf,
        line: usize,
        expected: usize,
        found: usize,
    },
    #[error("{path}:{line}: unparseable rating '{value}'")]
    BadRating {
        path: PathBuf,
        line: usize,
        value: String,
    },
    #[error("{path}:{line}: rating {value} outside scale {scale}")]
    RatingOutOfScale {
        path: PathBuf,
        line: usize,
        value: f64,
        scale: RatingScale,
    },
    #[error("{path}:{line}: unknown role '{value}'")]
    UnknownRole {
        path: PathBuf,
        line: usize,
        value: String,
    },
    #[error("{path}:{line}: empty {field}")]
    EmptyField {
        path: PathBuf,
        line: usize,
        field: &'static str,
    },
    #[error("{path}:{line}: duplicate item id '{id}'")]
    DuplicateId {
        path: PathBuf,
        line: usize,
        id: String,
    },
    #[error("invalid rating scale [{min}, {max}]")]
    InvalidScale { min: f64, max: f64 },
    #[error("rating {value} outside scale {scale}")]
    OutOfScale { value: f64, scale: RatingScale },
    #[error("unknown role '{0}'")]
    ParseRole(String),
}

/// Semantic role of the argument. PropBank numbered roles plus the two
/// Ferretti roles.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Role {
    Arg0,
    Arg1,
    Arg2,
    Instrument,
    Location,
}

impl Role {
    pub const ALL: [Role; 5] = [
        Role::Arg0,
        Role::Arg1,
        Role::Arg2,
        Role::Instrument,
        Role::Location,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Role::Arg0 => "Arg0",
            Role::Arg1 => "Arg1",
            Role::Arg2 => "Arg2",
            Role::Instrument => "Instrument",
            Role::Location => "Location",
        }
    }

    /// True for the PropBank numbered roles.
    pub fn is_numbered(self) -> bool {
        matches!(self, Role::Arg0 | Role::Arg1 | Role::Arg2)
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Role {
    type Err = DataError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Role::ALL
            .into_iter()
            .find(|r| r.as_str() == s)
            .ok_or_else(|| DataError::ParseRole(s.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RatingScale {
    pub min: f64,
    pub max: f64,
}

impl RatingScale {
    /// The 1-7 Likert scale used by all four norm sets.
    pub const LIKERT_7: RatingScale = RatingScale { min: 1.0, max: 7.0 };

    pub fn new(min: f64, max: f64) -> Result<Self, DataError> {
        if min.is_finite() && max.is_finite() && min < max {
            Ok(RatingScale { min, max })
        } else {
            Err(DataError::InvalidScale { min, max })
        }
    }

    pub fn contains(&self, value: f64) -> bool {
        value >= self.min && value <= self.max
    }
}

impl Default for RatingScale {
    fn default() -> Self {
        RatingScale::LIKERT_7
    }
}

impl fmt::Display for RatingScale {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}, {}]", self.min, self.max)
    }
}

/// Maps `r` from `scale` onto the unit interval.
pub fn normalize_rating(r: f64, scale: RatingScale) -> Result<f64, DataError> {
    if !scale.contains(r) {
        return Err(DataError::OutOfScale { value: r, scale });
    }
    Ok((r - scale.min) / (scale.max - scale.min))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormItem {
    pub item_id: String,
    pub dataset: String,
    pub predicate: String,
    pub argument: String,
    pub role: Role,
    pub human_rating: f64,
    pub scale: RatingScale,
}

impl NormItem {
    /// Human rating mapped onto [0, 1].
    pub fn normalized_rating(&self) -> f64 {
        (self.human_rating - self.scale.min) / (self.scale.max - self.scale.min)
    }

    fn key(&self) -> (&str, &str, Role) {
        (&self.predicate, &self.argument, self.role)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transform {
    pub op: String,
    pub count: usize,
}

impl fmt::Display for Transform {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.op.as_str() {
            "load" => write!(f, "load: {} rows", self.count),
            "dedupe" => write!(f, "dedupe: removed {} rows", self.count),
            op => write!(f, "{op}: {} items changed", self.count),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub source: PathBuf,
    pub transforms: Vec<Transform>,
    #[serde(default)]
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub name: String,
    pub items: Vec<NormItem>,
    pub provenance: Provenance,
    /// Whether item ids were derived from row positions rather than read
    /// from the source. Derived ids are renumbered after each transform.
    #[serde(default)]
    pub derived_ids: bool,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn get(&self, item_id: &str) -> Option<&NormItem> {
        self.items.iter().find(|it| it.item_id == item_id)
    }

    /// True when every role in the dataset is a PropBank numbered role.
    pub fn uses_numbered_roles(&self) -> bool {
        !self.items.is_empty() && self.items.iter().all(|it| it.role.is_numbered())
    }

    /// Keeps the first `n` items (in dataset order).
    pub fn take(&self, n: usize) -> Dataset {
        let mut out = self.clone();
        out.items.truncate(n);
        out
    }

    fn renumber(&mut self) {
        if !self.derived_ids {
            return;
        }
        for (i, item) in self.items.iter_mut().enumerate() {
            item.item_id = derived_id(&self.name, i);
        }
    }
}

fn derived_id(dataset: &str, index: usize) -> String {
    format!("{dataset}:{index:05}")
}

/// Describes how the columns of a delimited norms file map onto
/// [`NormItem`] fields. Columns are referenced by header name.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnSpec {
    /// Dataset label used for item ids. When `None`, the `dataset_column`
    /// value of the first row is used, falling back to the file stem.
    #[serde(default)]
    pub name: Option<String>,
    #[serde(default)]
    pub dataset_column: Option<String>,
    pub predicate: String,
    pub argument: String,
    pub role: String,
    pub rating: String,
    #[serde(default)]
    pub id_column: Option<String>,
    #[serde(default)]
    pub scale: RatingScale,
    #[serde(default = "default_delimiter")]
    pub delimiter: char,
    /// Extra spellings accepted for roles, e.g. `"A0" -> Arg0`.
    #[serde(default)]
    pub role_aliases: BTreeMap<String, Role>,
}

fn default_delimiter() -> char {
    '\t'
}

impl Default for ColumnSpec {
    fn default() -> Self {
        ColumnSpec {
            name: None,
            dataset_column: Some("dataset".into()),
            predicate: "predicate".into(),
            argument: "argument".into(),
            role: "role".into(),
            rating: "rating".into(),
            id_column: None,
            scale: RatingScale::LIKERT_7,
            delimiter: '\t',
            role_aliases: BTreeMap::new(),
        }
    }
}

impl ColumnSpec {
    /// The canonical TSV layout on a 1-7 scale.
    pub fn canonical() -> Self {
        ColumnSpec::default()
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = Some(name.into());
        self
    }

    fn parse_role(&self, raw: &str) -> Option<Role> {
        raw.parse::<Role>()
            .ok()
            .or_else(|| self.role_aliases.get(raw).copied())
    }
}

struct Columns {
    width: usize,
    dataset: Option<usize>,
    predicate: usize,
    argument: usize,
    role: usize,
    rating: usize,
    id: Option<usize>,
}

/// Reads a norms file. Duplicate tuples are kept; see [`dedupe`].
pub fn load_dataset(path: impl AsRef<Path>, columns: &ColumnSpec) -> Result<Dataset, DataError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| DataError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_dataset(&text, path, columns)
}

/// Parses norms from in-memory text; `path` is only used in diagnostics.
pub fn parse_dataset(text: &str, path: &Path, columns: &ColumnSpec) -> Result<Dataset, DataError> {
    if RatingScale::new(columns.scale.min, columns.scale.max).is_err() {
        return Err(DataError::InvalidScale {
            min: columns.scale.min,
            max: columns.scale.max,
        });
    }
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.strip_suffix('\r').unwrap_or(l)))
        .filter(|(_, l)| !l.trim().is_empty());

    let no_rows = || DataError::NoDataRows {
        path: path.to_path_buf(),
    };
    let (_, header) = lines.next().ok_or_else(no_rows)?;
    let header: Vec<&str> = header.split(columns.delimiter).map(str::trim).collect();
    let find = |name: &str| {
        header
            .iter()
            .position(|h| *h == name)
            .ok_or_else(|| DataError::MissingColumn {
                path: path.to_path_buf(),
                column: name.to_string(),
            })
    };
    let cols = Columns {
        width: header.len(),
        dataset: columns.dataset_column.as_deref().and_then(|c| find(c).ok()),
        predicate: find(&columns.predicate)?,
        argument: find(&columns.argument)?,
        role: find(&columns.role)?,
        rating: find(&columns.rating)?,
        id: columns.id_column.as_deref().map(find).transpose()?,
    };

    let mut rows = Vec::new();
    for (line, raw) in lines {
        let fields: Vec<&str> = raw.split(columns.delimiter).collect();
        if fields.len() != cols.width {
            return Err(DataError::ColumnCount {
                path: path.to_path_buf(),
                line,
                expected: cols.width,
                found: fields.len(),
            });
        }
        rows.push((line, fields));
    }
    if rows.is_empty() {
        return Err(no_rows());
    }

    let name = columns
        .name
        .clone()
        .or_else(|| {
            cols.dataset
                .map(|c| rows[0].1[c].trim().to_string())
                .filter(|s| !s.is_empty())
        })
        .or_else(|| path.file_stem().map(|s| s.to_string_lossy().into_owned()))
        .unwrap_or_else(|| "dataset".to_string());

    let mut items = Vec::with_capacity(rows.len());
    let mut seen_ids = HashSet::new();
    for (index, (line, fields)) in rows.iter().enumerate() {
        let line = *line;
        let text_field = |col: usize, field: &'static str| {
            let v = fields[col].trim().to_lowercase();
            if v.is_empty() {
                Err(DataError::EmptyField {
                    path: path.to_path_buf(),
                    line,
                    field,
                })
            } else {
                Ok(v)
            }
        };
        let predicate = text_field(cols.predicate, "predicate")?;
        let argument = text_field(cols.argument, "argument")?;
        let role_raw = fields[cols.role].trim();
        let role = columns
            .parse_role(role_raw)
            .ok_or_else(|| DataError::UnknownRole {
                path: path.to_path_buf(),
                line,
                value: role_raw.to_string(),
            })?;
        let rating_raw = fields[cols.rating].trim();
        let human_rating: f64 = rating_raw
            .parse()
            .ok()
            .filter(|v: &f64| v.is_finite())
            .ok_or_else(|| DataError::BadRating {
                path: path.to_path_buf(),
                line,
                value: rating_raw.to_string(),
            })?;
        if !columns.scale.contains(human_rating) {
            return Err(DataError::RatingOutOfScale {
                path: path.to_path_buf(),
                line,
                value: human_rating,
                scale: columns.scale,
            });
        }
        let item_id = match cols.id {
            Some(c) => fields[c].trim().to_string(),
            None => derived_id(&name, index),
        };
        if !seen_ids.insert(item_id.clone()) {
            return Err(DataError::DuplicateId {
                path: path.to_path_buf(),
                line,
                id: item_id,
            });
        }
        items.push(NormItem {
            item_id,
            dataset: name.clone(),
            predicate,
            argument,
            role,
            human_rating,
            scale: columns.scale,
        });
    }

    Ok(Dataset {
        name,
        provenance: Provenance {
            source: path.to_path_buf(),
            transforms: vec![Transform {
                op: "load".into(),
                count: items.len(),
            }],
            warnings: Vec::new(),
        },
        items,
        derived_ids: cols.id.is_none(),
    })
}

/// Removes repeated (predicate, argument, role) tuples, keeping the first.
pub fn dedupe(d: &Dataset) -> Dataset {
    let mut out = d.clone();
    let mut first: std::collections::HashMap<(String, String, Role), f64> =
        std::collections::HashMap::new();
    let mut kept = Vec::with_capacity(d.items.len());
    for item in &d.items {
        let (p, a, r) = item.key();
        match first.get(&(p.to_string(), a.to_string(), r)) {
            Some(&rating) => {
                if rating != item.human_rating {
                    out.provenance.warnings.push(format!(
                        "dedupe: ({p}, {a}, {r}) repeated with rating {} (kept {rating})",
                        item.human_rating
                    ));
                }
            }
            None => {
                first.insert((p.to_string(), a.to_string(), r), item.human_rating);
                kept.push(item.clone());
            }
        }
    }
    let removed = d.items.len() - kept.len();
    out.items = kept;
    out.renumber();
    out.provenance.transforms.push(Transform {
        op: "dedupe".into(),
        count: removed,
    });
    out
}

/// Drops a leading "a"/"an" token from each argument.
pub fn strip_indefinite_articles(d: &Dataset) -> Dataset {
    let mut out = d.clone();
    let mut changed = 0;
    for item in &mut out.items {
        if let Some(rest) = strip_article(&item.argument) {
            item.argument = rest.to_string();
            changed += 1;
        }
    }
    out.provenance.transforms.push(Transform {
        op: "strip_indefinite_articles".into(),
        count: changed,
    });
    out
}

// Repeated leading articles are all removed so the transform is idempotent.
fn strip_article(s: &str) -> Option<&str> {
    let mut current = s;
    while let Some((head, rest)) = current.split_once(char::is_whitespace) {
        let rest = rest.trim_start();
        if rest.is_empty() || !(head.eq_ignore_ascii_case("a") || head.eq_ignore_ascii_case("an")) {
            break;
        }
        current = rest;
    }
    (current.len() != s.len()).then_some(current)
}

/// Standard preprocessing: dedupe, then article stripping when `strip` is set.
pub fn preprocess(d: &Dataset, strip: bool) -> Dataset {
    let deduped = dedupe(d);
    if strip {
        strip_indefinite_articles(&deduped)
    } else {
        deduped
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<Dataset, DataError> {
        parse_dataset(text, Path::new("t.tsv"), &ColumnSpec::canonical())
    }

    const HEADER: &str = "dataset\tpredicate\targument\trole\trating\n";

    #[test]
    fn empty_file_has_no_data_rows() {
        assert!(matches!(parse(""), Err(DataError::NoDataRows { .. })));
        assert!(matches!(parse(HEADER), Err(DataError::NoDataRows { .. })));
    }

    #[test]
    fn endpoint_rating_parses() {
        let d = parse(&format!("{HEADER}x\teat\tpizza\tArg1\t7\n")).unwrap();
        assert_eq!(d.items[0].human_rating, 7.0);
        assert_eq!(d.items[0].item_id, "x:00000");
        assert_eq!(d.name, "x");
    }

    #[test]
    fn errors_name_the_line() {
        let bad_role = parse(&format!("{HEADER}x\teat\tpizza\tPatient\t5\n"));
        assert!(matches!(bad_role, Err(DataError::UnknownRole { line: 2, .. })));
        let bad_rating = parse(&format!("{HEADER}x\teat\tpizza\tArg1\t5\nx\teat\tfork\tArg1\tfive\n"));
        assert!(matches!(bad_rating, Err(DataError::BadRating { line: 3, .. })));
        let short = parse(&format!("{HEADER}x\teat\tpizza\tArg1\n"));
        assert!(matches!(
            short,
            Err(DataError::ColumnCount { line: 2, expected: 5, found: 4, .. })
        ));
        let out = parse(&format!("{HEADER}x\teat\tpizza\tArg1\t8\n"));
        assert!(matches!(out, Err(DataError::RatingOutOfScale { line: 2, .. })));
        let msg = parse(&format!("{HEADER}x\teat\tpizza\tPatient\t5\n")).unwrap_err().to_string();
        assert!(msg.contains(":2:"), "{msg}");
    }

    #[test]
    fn lowercases_and_trims() {
        let d = parse(&format!("{HEADER}x\t Eat \tPizza\tArg1\t5\n")).unwrap();
        assert_eq!(d.items[0].predicate, "eat");
        assert_eq!(d.items[0].argument, "pizza");
    }

    #[test]
    fn roles_are_exact() {
        assert_eq!("Arg2".parse::<Role>().unwrap(), Role::Arg2);
        assert!("arg2".parse::<Role>().is_err());
        assert!("Agent".parse::<Role>().is_err());
    }

    #[test]
    fn role_aliases_adapt_other_layouts() {
        let mut columns = ColumnSpec {
            name: Some("other".into()),
            dataset_column: None,
            predicate: "verb".into(),
            argument: "noun".into(),
            role: "r".into(),
            rating: "mean".into(),
            delimiter: ',',
            ..ColumnSpec::default()
        };
        columns.role_aliases.insert("A0".into(), Role::Arg0);
        let d = parse_dataset("noun,verb,r,mean\ncop,arrest,A0,6.5\n", Path::new("o.csv"), &columns).unwrap();
        assert_eq!(d.items[0].role, Role::Arg0);
        assert_eq!(d.items[0].predicate, "arrest");
        assert_eq!(d.items[0].item_id, "other:00000");
    }

    #[test]
    fn source_ids_are_kept() {
        let columns = ColumnSpec {
            id_column: Some("id".into()),
            ..ColumnSpec::default()
        };
        let text = "id\tdataset\tpredicate\targument\trole\trating\nq7\tx\teat\tpizza\tArg1\t5\n";
        let d = parse_dataset(text, Path::new("t.tsv"), &columns).unwrap();
        assert_eq!(d.items[0].item_id, "q7");
        assert!(!d.derived_ids);
    }

    #[test]
    fn dedupe_keeps_first_and_warns_on_conflict() {
        let d = parse(&format!("{HEADER}x\teat\tpizza\tArg1\t6\nx\teat\tpizza\tArg1\t2\n")).unwrap();
        let out = dedupe(&d);
        assert_eq!(out.items.len(), 1);
        assert_eq!(out.items[0].human_rating, 6.0);
        assert_eq!(out.provenance.warnings.len(), 1);
        assert_eq!(out.provenance.transforms.last().unwrap().to_string(), "dedupe: removed 1 rows");
    }

    #[test]
    fn dedupe_without_duplicates_is_identity() {
        let d = parse(&format!("{HEADER}x\teat\tpizza\tArg1\t6\nx\teat\tpizza\tArg0\t2\n")).unwrap();
        let out = dedupe(&d);
        assert_eq!(out.items, d.items);
        assert_eq!(out.provenance.transforms.last().unwrap().count, 0);
    }

    #[test]
    fn dedupe_renumbers_derived_ids() {
        let d = parse(&format!(
            "{HEADER}x\ta\tb\tArg1\t6\nx\ta\tb\tArg1\t6\nx\tc\td\tArg1\t2\n"
        ))
        .unwrap();
        let out = dedupe(&d);
        let ids: Vec<_> = out.items.iter().map(|i| i.item_id.as_str()).collect();
        assert_eq!(ids, ["x:00000", "x:00001"]);
    }

    #[test]
    fn article_stripping() {
        assert_eq!(strip_article("a mall"), Some("mall"));
        assert_eq!(strip_article("an office"), Some("office"));
        assert_eq!(strip_article("A  mall"), Some("mall"));
        assert_eq!(strip_article("apple"), None);
        assert_eq!(strip_article("apple orchard"), None);
        assert_eq!(strip_article("a"), None);
        assert_eq!(strip_article("a a mall"), Some("mall"));
        assert_eq!(strip_article("an an"), Some("an"));
    }

    #[test]
    fn normalize_endpoints_and_interior() {
        let s = RatingScale::LIKERT_7;
        assert_eq!(normalize_rating(1.0, s).unwrap(), 0.0);
        assert_eq!(normalize_rating(7.0, s).unwrap(), 1.0);
        assert!((normalize_rating(6.5, s).unwrap() - 0.91667).abs() < 1e-5);
        assert!(normalize_rating(7.5, s).is_err());
        assert!(normalize_rating(0.5, s).is_err());
    }

    #[test]
    fn scale_must_be_ordered() {
        assert!(RatingScale::new(7.0, 1.0).is_err());
        assert!(RatingScale::new(1.0, 1.0).is_err());
        assert!(RatingScale::new(1.0, 7.0).is_ok());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn rows() -> impl Strategy<Value = Vec<(usize, usize, usize, u8)>> {
            prop::collection::vec((0..4usize, 0..4usize, 0..3usize, 1..=7u8), 1..40)
        }

        fn build(rows: &[(usize, usize, usize, u8)]) -> Dataset {
            let preds = ["eat", "cut", "drive", "read"];
            let args = ["pizza", "an apple", "a a car", "book"];
            let roles = ["Arg0", "Arg1", "Location"];
            let mut text = String::from(HEADER);
            for (p, a, r, v) in rows {
                text.push_str(&format!("x\t{}\t{}\t{}\t{v}\n", preds[*p], args[*a], roles[*r]));
            }
            parse(&text).unwrap()
        }

        proptest! {
            #[test]
            fn dedupe_leaves_one_item_per_tuple(rows in rows()) {
                let d = build(&rows);
                let clean = dedupe(&d);
                let distinct: HashSet<_> = rows.iter().map(|(p, a, r, _)| (p, a, r)).collect();
                prop_assert_eq!(clean.len(), distinct.len());
                prop_assert_eq!(dedupe(&clean).items, clean.items.clone());
                let ids: HashSet<_> = clean.items.iter().map(|it| it.item_id.clone()).collect();
                prop_assert_eq!(ids.len(), clean.len());
            }

            #[test]
            fn stripping_is_idempotent_and_total(rows in rows()) {
                let once = strip_indefinite_articles(&build(&rows));
                let twice = strip_indefinite_articles(&once);
                prop_assert_eq!(&once.items, &twice.items);
                for it in &once.items {
                    prop_assert!(!it.argument.is_empty());
                    prop_assert!(!it.argument.starts_with("a ") && !it.argument.starts_with("an "));
                }
            }
        }
    }
}
