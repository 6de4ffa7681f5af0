//! Accident report ingestion, cause-code label schemes and train/test splitting.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::io::{BufRead, Read, Write};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("column `{0}` named in the column map is missing from the CSV header")]
    MissingColumn(String),
    #[error("column map must name at least one narrative column")]
    NoNarrativeColumns,
    #[error("invalid cause code `{0}`")]
    InvalidCode(String),
    #[error("class `{class}` has {count} record(s); at least 2 are needed to split")]
    UnsplittableClass { class: String, count: usize },
    #[error("test fraction {0} is outside (0, 1)")]
    BadFraction(f64),
    #[error("dataset line {line}: {source}")]
    DatasetLine {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One accident report: the free-text narrative and its coded primary cause.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AccidentRecord {
    pub id: String,
    pub year: i32,
    pub narrative: String,
    pub cause_code: String,
}

/// Which CSV columns feed an [`AccidentRecord`].
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnMap {
    #[serde(default)]
    pub id: Option<String>,
    #[serde(default)]
    pub year: Option<String>,
    pub cause: String,
    /// Narrative continuation columns, concatenated in this order.
    pub narratives: Vec<String>,
}

impl Default for ColumnMap {
    fn default() -> Self {
        // Column names of the FRA rail equipment accident/incident files.
        Self {
            id: Some("INCDTNO".into()),
            year: Some("YEAR".into()),
            cause: "CAUSE".into(),
            narratives: (1..=15).map(|i| format!("NARR{i}")).collect(),
        }
    }
}

/// Row accounting for one ingestion pass. Skipped rows are counted, never fatal.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestReport {
    pub rows: usize,
    pub accepted: usize,
    pub missing_cause: usize,
    pub empty_narrative: usize,
    pub malformed_code: usize,
    pub malformed_year: usize,
    pub unreadable: usize,
    /// Accepted records whose id was already seen. They are kept.
    pub duplicate_ids: usize,
}

impl IngestReport {
    pub fn skipped(&self) -> usize {
        self.missing_cause
            + self.empty_narrative
            + self.malformed_code
            + self.malformed_year
            + self.unreadable
    }

    pub fn merge(&mut self, other: &IngestReport) {
        self.rows += other.rows;
        self.accepted += other.accepted;
        self.missing_cause += other.missing_cause;
        self.empty_narrative += other.empty_narrative;
        self.malformed_code += other.malformed_code;
        self.malformed_year += other.malformed_year;
        self.unreadable += other.unreadable;
        self.duplicate_ids += other.duplicate_ids;
    }
}

/// Uppercases and trims a raw code, returning it only if it looks like `[EHMST][0-9]+`.
pub fn normalize_cause_code(raw: &str) -> Option<String> {
    let code = raw.trim().to_ascii_uppercase();
    let mut chars = code.chars();
    let first = chars.next()?;
    let digits = chars.as_str();
    if GeneralCause::from_letter(first).is_some()
        && !digits.is_empty()
        && digits.bytes().all(|b| b.is_ascii_digit())
    {
        Some(code)
    } else {
        None
    }
}

/// Joins narrative fragments with single spaces and collapses whitespace runs.
pub fn assemble_narrative<'a>(parts: impl IntoIterator<Item = &'a str>) -> String {
    let mut out = String::new();
    for word in parts.into_iter().flat_map(str::split_whitespace) {
        if !out.is_empty() {
            out.push(' ');
        }
        out.push_str(word);
    }
    out
}

fn parse_year(raw: &str) -> Option<i32> {
    let year: i32 = raw.trim().parse().ok()?;
    match year {
        // Two-digit years in the FRA files.
        0..=49 => Some(2000 + year),
        50..=99 => Some(1900 + year),
        _ if year >= 1000 => Some(year),
        _ => None,
    }
}

/// Reads an RFC 4180 CSV with a header row. A mapped column missing from
/// the header is fatal; individual bad rows are skipped and counted.
pub fn load_records<R: Read>(
    source: R,
    columns: &ColumnMap,
) -> Result<(Vec<AccidentRecord>, IngestReport), CorpusError> {
    if columns.narratives.is_empty() {
        return Err(CorpusError::NoNarrativeColumns);
    }
    let mut reader = csv::ReaderBuilder::new()
        .flexible(true)
        .has_headers(true)
        .from_reader(source);
    let header = reader.byte_headers()?.clone();
    let position = |name: &str| -> Result<usize, CorpusError> {
        header
            .iter()
            .position(|h| String::from_utf8_lossy(h).trim() == name)
            .ok_or_else(|| CorpusError::MissingColumn(name.to_string()))
    };
    let cause_col = position(&columns.cause)?;
    let id_col = columns.id.as_deref().map(position).transpose()?;
    let year_col = columns.year.as_deref().map(position).transpose()?;
    let narrative_cols = columns
        .narratives
        .iter()
        .map(|n| position(n))
        .collect::<Result<Vec<_>, _>>()?;

    let mut report = IngestReport::default();
    let mut records = Vec::new();
    let mut seen_ids = HashSet::new();
    let mut row = csv::ByteRecord::new();
    loop {
        match reader.read_byte_record(&mut row) {
            Ok(true) => {}
            Ok(false) => break,
            Err(err) if err.is_io_error() => return Err(err.into()),
            Err(_) => {
                report.rows += 1;
                report.unreadable += 1;
                continue;
            }
        }
        report.rows += 1;
        let field = |i: usize| String::from_utf8_lossy(row.get(i).unwrap_or_default()).into_owned();

        let raw_cause = field(cause_col);
        if raw_cause.trim().is_empty() {
            report.missing_cause += 1;
            continue;
        }
        let Some(cause_code) = normalize_cause_code(&raw_cause) else {
            report.malformed_code += 1;
            continue;
        };
        let fragments: Vec<String> = narrative_cols.iter().map(|&i| field(i)).collect();
        let narrative = assemble_narrative(fragments.iter().map(String::as_str));
        if narrative.is_empty() {
            report.empty_narrative += 1;
            continue;
        }
        let year = match year_col {
            Some(i) => match parse_year(&field(i)) {
                Some(y) => y,
                None => {
                    report.malformed_year += 1;
                    continue;
                }
            },
            None => 0,
        };
        let id = match id_col {
            Some(i) => field(i).trim().to_string(),
            None => format!("row{}", report.rows),
        };
        if !seen_ids.insert(id.clone()) {
            report.duplicate_ids += 1;
        }
        report.accepted += 1;
        records.push(AccidentRecord {
            id,
            year,
            narrative,
            cause_code,
        });
    }
    Ok((records, report))
}

/// Writes records as one JSON object per line.
pub fn write_dataset<W: Write>(mut out: W, records: &[AccidentRecord]) -> Result<(), CorpusError> {
    for record in records {
        serde_json::to_writer(&mut out, record).map_err(std::io::Error::from)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_dataset<R: BufRead>(input: R) -> Result<Vec<AccidentRecord>, CorpusError> {
    let mut records = Vec::new();
    for (n, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record = serde_json::from_str(&line)
            .map_err(|source| CorpusError::DatasetLine { line: n + 1, source })?;
        records.push(record);
    }
    Ok(records)
}

/// Five-way cause category given by the cause code's leading letter.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum GeneralCause {
    Electrical,
    HumanFactor,
    Miscellaneous,
    Signal,
    Track,
}

impl GeneralCause {
    pub const ALL: [GeneralCause; 5] = [
        GeneralCause::Electrical,
        GeneralCause::HumanFactor,
        GeneralCause::Miscellaneous,
        GeneralCause::Signal,
        GeneralCause::Track,
    ];

    pub fn from_letter(c: char) -> Option<Self> {
        Some(match c {
            'E' => GeneralCause::Electrical,
            'H' => GeneralCause::HumanFactor,
            'M' => GeneralCause::Miscellaneous,
            'S' => GeneralCause::Signal,
            'T' => GeneralCause::Track,
            _ => return None,
        })
    }

    pub fn letter(self) -> char {
        match self {
            GeneralCause::Electrical => 'E',
            GeneralCause::HumanFactor => 'H',
            GeneralCause::Miscellaneous => 'M',
            GeneralCause::Signal => 'S',
            GeneralCause::Track => 'T',
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for GeneralCause {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.letter())
    }
}

/// The eight merged high-frequency cause codes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SpecificCategory {
    H306_7,
    T110,
    H702,
    T220_207,
    T314,
    M405,
    H704,
    H503,
}

impl SpecificCategory {
    pub const ALL: [SpecificCategory; 8] = [
        SpecificCategory::H306_7,
        SpecificCategory::T110,
        SpecificCategory::H702,
        SpecificCategory::T220_207,
        SpecificCategory::T314,
        SpecificCategory::M405,
        SpecificCategory::H704,
        SpecificCategory::H503,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SpecificCategory::H306_7 => "H306-7",
            SpecificCategory::T110 => "T110",
            SpecificCategory::H702 => "H702",
            SpecificCategory::T220_207 => "T220-207",
            SpecificCategory::T314 => "T314",
            SpecificCategory::M405 => "M405",
            SpecificCategory::H704 => "H704",
            SpecificCategory::H503 => "H503",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for SpecificCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

pub fn general_label(cause_code: &str) -> Result<GeneralCause, CorpusError> {
    cause_code
        .chars()
        .next()
        .and_then(GeneralCause::from_letter)
        .ok_or_else(|| CorpusError::InvalidCode(cause_code.to_string()))
}

/// Maps the top-ten codes onto their merged category; other valid codes give `None`.
pub fn specific_label(cause_code: &str) -> Result<Option<SpecificCategory>, CorpusError> {
    general_label(cause_code)?;
    Ok(match cause_code {
        "H306" | "H307" => Some(SpecificCategory::H306_7),
        "T110" => Some(SpecificCategory::T110),
        "H702" => Some(SpecificCategory::H702),
        "T220" | "T207" => Some(SpecificCategory::T220_207),
        "T314" => Some(SpecificCategory::T314),
        "M405" => Some(SpecificCategory::M405),
        "H704" => Some(SpecificCategory::H704),
        "H503" => Some(SpecificCategory::H503),
        _ => None,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LabelScheme {
    General,
    Specific,
}

impl LabelScheme {
    pub fn num_classes(self) -> usize {
        match self {
            LabelScheme::General => GeneralCause::ALL.len(),
            LabelScheme::Specific => SpecificCategory::ALL.len(),
        }
    }

    pub fn class_names(self) -> Vec<String> {
        match self {
            LabelScheme::General => GeneralCause::ALL.iter().map(|c| c.to_string()).collect(),
            LabelScheme::Specific => SpecificCategory::ALL.iter().map(|c| c.to_string()).collect(),
        }
    }

    /// Class index of a cause code under this scheme, `None` if the scheme excludes it.
    pub fn label(self, cause_code: &str) -> Result<Option<usize>, CorpusError> {
        match self {
            LabelScheme::General => general_label(cause_code).map(|c| Some(c.index())),
            LabelScheme::Specific => specific_label(cause_code).map(|c| c.map(SpecificCategory::index)),
        }
    }

    /// Labels every record, dropping those the scheme does not cover.
    pub fn label_records(
        self,
        records: Vec<AccidentRecord>,
    ) -> Result<Vec<(AccidentRecord, usize)>, CorpusError> {
        let mut out = Vec::with_capacity(records.len());
        for record in records {
            if let Some(label) = self.label(&record.cause_code)? {
                out.push((record, label));
            }
        }
        Ok(out)
    }
}

impl fmt::Display for LabelScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LabelScheme::General => "general",
            LabelScheme::Specific => "specific",
        })
    }
}

impl std::str::FromStr for LabelScheme {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "general" => Ok(LabelScheme::General),
            "specific" => Ok(LabelScheme::Specific),
            other => Err(format!("unknown label scheme `{other}`")),
        }
    }
}

/// Per-class record counts, indexed by class.
pub fn class_counts<T>(labeled: &[(T, usize)], num_classes: usize) -> Vec<usize> {
    let mut counts = vec![0; num_classes];
    for (_, label) in labeled {
        if *label >= counts.len() {
            counts.resize(label + 1, 0);
        }
        counts[*label] += 1;
    }
    counts
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetSplit<T> {
    pub train: Vec<(T, usize)>,
    pub test: Vec<(T, usize)>,
    pub seed: u64,
    pub test_fraction: f64,
}

/// Number of test records drawn from a class of `n` records.
pub fn stratum_test_count(n: usize, test_fraction: f64) -> usize {
    ((n as f64 * test_fraction).round() as usize).clamp(1, n - 1)
}

/// Stratified split: each class contributes `round(fraction * n_c)` test
/// records (at least one, at most `n_c - 1`). Both halves keep input order.
pub fn stratified_split<T: Clone>(
    records: &[(T, usize)],
    test_fraction: f64,
    seed: u64,
) -> Result<DatasetSplit<T>, CorpusError> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(CorpusError::BadFraction(test_fraction));
    }
    let mut by_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, (_, label)) in records.iter().enumerate() {
        by_class.entry(*label).or_default().push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut in_test = vec![false; records.len()];
    for (class, mut members) in by_class {
        if members.len() < 2 {
            return Err(CorpusError::UnsplittableClass {
                class: class.to_string(),
                count: members.len(),
            });
        }
        let n_test = stratum_test_count(members.len(), test_fraction);
        members.shuffle(&mut rng);
        for &i in &members[..n_test] {
            in_test[i] = true;
        }
    }
    let mut split = DatasetSplit {
        train: Vec::new(),
        test: Vec::new(),
        seed,
        test_fraction,
    };
    for (item, flag) in records.iter().zip(in_test) {
        if flag {
            split.test.push(item.clone());
        } else {
            split.train.push(item.clone());
        }
    }
    Ok(split)
}
