//! Parsers for the published dataset files. Every parser returns a raw [`Table`]
//! with missing cells marked (`NaN` / empty string); cleaning happens later.

use std::path::{Path, PathBuf};

use super::table::{Column, DatasetId, Table};
use crate::error::{NsdtError, Result};

/// Environment variable naming the dataset cache directory.
pub const CACHE_ENV: &str = "NSDT_DATA_DIR";

pub fn default_cache_dir() -> PathBuf {
    std::env::var_os(CACHE_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("data"))
}

/// Files each dataset expects under `<cache>/<dataset>/`.
pub fn source_files(id: DatasetId) -> &'static [&'static str] {
    match id {
        DatasetId::Higgs => &["higgs.csv"],
        DatasetId::Census => &["census-income.data", "census-income.test"],
        DatasetId::Credit => &["cs-training.csv"],
        DatasetId::Insurance => &["train.csv"],
    }
}

pub fn source_url(id: DatasetId) -> &'static str {
    match id {
        DatasetId::Higgs => "https://www.openml.org/data/get_csv/2063675/phpZLgL9q",
        DatasetId::Census => {
            "https://archive.ics.uci.edu/static/public/117/census+income+kdd.zip"
        }
        DatasetId::Credit => "https://www.kaggle.com/c/GiveMeSomeCredit",
        DatasetId::Insurance => "https://www.kaggle.com/competitions/allstate-claims-severity",
    }
}

pub fn sources_present(cache: &Path, id: DatasetId) -> bool {
    source_files(id)
        .iter()
        .all(|f| cache.join(id.as_str()).join(f).is_file())
}

fn is_missing_token(s: &str) -> bool {
    matches!(s, "" | "?" | "NA" | "NaN" | "nan")
}

fn parse_num(s: &str) -> f64 {
    let s = s.trim();
    if is_missing_token(s) {
        return f64::NAN;
    }
    s.parse().unwrap_or(f64::NAN)
}

fn parse_cat(s: &str) -> String {
    let s = s.trim();
    if is_missing_token(s) {
        String::new()
    } else {
        s.to_string()
    }
}

/// Reads the file(s) for `id` from `<cache>/<id>/`.
pub fn load_raw(cache: &Path, id: DatasetId) -> Result<Table> {
    let dir = cache.join(id.as_str());
    for f in source_files(id) {
        let p = dir.join(f);
        if !p.is_file() {
            return Err(NsdtError::MissingSource(p.display().to_string()));
        }
    }
    let open = |f: &str| std::fs::File::open(dir.join(f));
    match id {
        DatasetId::Higgs => parse_higgs(open("higgs.csv")?),
        DatasetId::Credit => parse_credit(open("cs-training.csv")?),
        DatasetId::Insurance => parse_insurance(open("train.csv")?),
        DatasetId::Census => {
            let train = parse_census(open("census-income.data")?)?;
            let test = parse_census(open("census-income.test")?)?;
            Ok(concat_with_test(train, test))
        }
    }
}

fn concat_with_test(mut train: Table, test: Table) -> Table {
    let n_train = train.n_rows();
    for (a, b) in train.columns.iter_mut().zip(test.columns) {
        match (a, b) {
            (Column::Numerical(a), Column::Numerical(b)) => a.extend(b),
            (Column::Categorical(a), Column::Categorical(b)) => a.extend(b),
            _ => unreachable!("census parser yields a fixed schema"),
        }
    }
    let n_test = test.target.len();
    train.target.extend(test.target);
    let mut mask = vec![false; n_train];
    mask.extend(std::iter::repeat_n(true, n_test));
    train.test_mask = Some(mask);
    train
}

/// OpenML export: header row, binary `class` column, 28 numerical features.
pub fn parse_higgs<R: std::io::Read>(input: R) -> Result<Table> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(input);
    let headers: Vec<String> = rdr
        .headers()?
        .iter()
        .map(|h| h.trim().trim_matches('"').to_string())
        .collect();
    let target_col = headers
        .iter()
        .position(|h| h.eq_ignore_ascii_case("class") || h.eq_ignore_ascii_case("target"))
        .ok_or_else(|| NsdtError::Format("higgs: no `class` column".into()))?;
    let feature_cols: Vec<usize> = (0..headers.len()).filter(|&c| c != target_col).collect();
    let mut cols: Vec<Vec<f64>> = vec![Vec::new(); feature_cols.len()];
    let mut target = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        target.push(parse_num(rec.get(target_col).unwrap_or("")));
        for (k, &c) in feature_cols.iter().enumerate() {
            cols[k].push(parse_num(rec.get(c).unwrap_or("")));
        }
    }
    Table::new(
        feature_cols.iter().map(|&c| headers[c].clone()).collect(),
        cols.into_iter().map(Column::Numerical).collect(),
        target,
    )
}

/// GiveMeSomeCredit `cs-training.csv`: leading index column, `SeriousDlqin2yrs` target.
pub fn parse_credit<R: std::io::Read>(input: R) -> Result<Table> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(input);
    let headers: Vec<String> = rdr.headers()?.iter().map(|h| h.trim().to_string()).collect();
    let target_col = headers
        .iter()
        .position(|h| h == "SeriousDlqin2yrs")
        .ok_or_else(|| NsdtError::Format("credit: no SeriousDlqin2yrs column".into()))?;
    let feature_cols: Vec<usize> = (0..headers.len())
        .filter(|&c| c != target_col && !headers[c].is_empty())
        .collect();
    let mut cols: Vec<Vec<f64>> = vec![Vec::new(); feature_cols.len()];
    let mut target = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        target.push(parse_num(rec.get(target_col).unwrap_or("")));
        for (k, &c) in feature_cols.iter().enumerate() {
            cols[k].push(parse_num(rec.get(c).unwrap_or("")));
        }
    }
    Table::new(
        feature_cols.iter().map(|&c| headers[c].clone()).collect(),
        cols.into_iter().map(Column::Numerical).collect(),
        target,
    )
}

/// Allstate `train.csv`: `id`, `cat1..cat116`, `cont1..cont14`, continuous `loss`.
/// The target stays continuous; binarize it before encoding.
pub fn parse_insurance<R: std::io::Read>(input: R) -> Result<Table> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(input);
    let headers: Vec<String> = rdr.headers()?.iter().map(|h| h.trim().to_string()).collect();
    let target_col = headers
        .iter()
        .position(|h| h == "loss")
        .ok_or_else(|| NsdtError::Format("insurance: no loss column".into()))?;
    let feature_cols: Vec<usize> = (0..headers.len())
        .filter(|&c| c != target_col && headers[c] != "id")
        .collect();
    let mut cols: Vec<Column> = feature_cols
        .iter()
        .map(|&c| {
            if headers[c].starts_with("cat") {
                Column::Categorical(Vec::new())
            } else {
                Column::Numerical(Vec::new())
            }
        })
        .collect();
    let mut target = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        target.push(parse_num(rec.get(target_col).unwrap_or("")));
        for (col, &c) in cols.iter_mut().zip(&feature_cols) {
            let cell = rec.get(c).unwrap_or("");
            match col {
                Column::Numerical(v) => v.push(parse_num(cell)),
                Column::Categorical(v) => v.push(parse_cat(cell)),
            }
        }
    }
    Table::new(
        feature_cols.iter().map(|&c| headers[c].clone()).collect(),
        cols,
        target,
    )
}

/// Column layout of the KDD census files (the `instance_weight` column is ignored).
pub const CENSUS_COLUMNS: [(&str, bool); 41] = [
    ("age", true),
    ("class_of_worker", false),
    ("detailed_industry_recode", false),
    ("detailed_occupation_recode", false),
    ("education", false),
    ("wage_per_hour", true),
    ("enroll_in_edu_inst_last_wk", false),
    ("marital_stat", false),
    ("major_industry_code", false),
    ("major_occupation_code", false),
    ("race", false),
    ("hispanic_origin", false),
    ("sex", false),
    ("member_of_a_labor_union", false),
    ("reason_for_unemployment", false),
    ("full_or_part_time_employment_stat", false),
    ("capital_gains", true),
    ("capital_losses", true),
    ("dividends_from_stocks", true),
    ("tax_filer_stat", false),
    ("region_of_previous_residence", false),
    ("state_of_previous_residence", false),
    ("detailed_household_and_family_stat", false),
    ("detailed_household_summary_in_household", false),
    ("instance_weight", true),
    ("migration_code_change_in_msa", false),
    ("migration_code_change_in_reg", false),
    ("migration_code_move_within_reg", false),
    ("live_in_this_house_1_year_ago", false),
    ("migration_prev_res_in_sunbelt", false),
    ("num_persons_worked_for_employer", true),
    ("family_members_under_18", false),
    ("country_of_birth_father", false),
    ("country_of_birth_mother", false),
    ("country_of_birth_self", false),
    ("citizenship", false),
    ("own_business_or_self_employed", false),
    ("fill_inc_questionnaire_for_veterans_admin", false),
    ("veterans_benefits", false),
    ("weeks_worked_in_year", true),
    ("year", false),
];

/// Headerless KDD census file; the 42nd field is the income label.
///
/// `"?"` is kept as an ordinary level: the migration columns use it for roughly
/// half of all rows, and treating it as missing would discard them.
pub fn parse_census<R: std::io::Read>(input: R) -> Result<Table> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(input);
    let keep: Vec<usize> = (0..CENSUS_COLUMNS.len())
        .filter(|&c| CENSUS_COLUMNS[c].0 != "instance_weight")
        .collect();
    let mut cols: Vec<Column> = keep
        .iter()
        .map(|&c| {
            if CENSUS_COLUMNS[c].1 {
                Column::Numerical(Vec::new())
            } else {
                Column::Categorical(Vec::new())
            }
        })
        .collect();
    let mut target = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        if rec.len() < CENSUS_COLUMNS.len() + 1 {
            continue;
        }
        let label = rec.get(CENSUS_COLUMNS.len()).unwrap_or("").trim();
        target.push(if label.starts_with("50000+") {
            1.0
        } else if label.starts_with("- 50000") || label.starts_with("-50000") {
            0.0
        } else {
            f64::NAN
        });
        for (col, &c) in cols.iter_mut().zip(&keep) {
            let cell = rec.get(c).unwrap_or("");
            match col {
                Column::Numerical(v) => v.push(parse_num(cell)),
                Column::Categorical(v) => v.push(cell.trim().replace(' ', "_")),
            }
        }
    }
    Table::new(
        keep.iter().map(|&c| CENSUS_COLUMNS[c].0.to_string()).collect(),
        cols,
        target,
    )
}
