//! Delimited result files: per-sample scores, the evaluation report, and
//! ROC points. All start with a `#` provenance line.

use miaudit_core::eval::{parse_tpr_column, ReportRow};
use miaudit_core::numfmt::shortest;
use miaudit_core::{
    Alpha, EvalResult, Label, MetricKind, MetricSpec, Orientation, Report, ReportLayout,
    ScoredSample,
};

use crate::CliError;

pub const SCORE_COLUMNS: [&str; 9] = [
    "sample_id",
    "label",
    "kind",
    "alpha",
    "k_percent",
    "slice",
    "orientation",
    "score",
    "computable",
];

fn metric_fields(m: &MetricSpec) -> [String; 5] {
    [
        m.kind.name().to_string(),
        m.alpha.map(|a| a.to_string()).unwrap_or_default(),
        m.k_percent.map(shortest).unwrap_or_default(),
        m.slice.to_string(),
        m.orientation.name().to_string(),
    ]
}

fn csv_text(
    provenance: &str,
    header: &[&str],
    rows: impl IntoIterator<Item = Vec<String>>,
) -> String {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    w.write_record(header).expect("in-memory csv");
    for row in rows {
        w.write_record(&row).expect("in-memory csv");
    }
    let body = String::from_utf8(w.into_inner().expect("in-memory csv")).expect("utf-8 fields");
    format!("{provenance}\n{body}")
}

pub fn scores_csv(provenance: &str, scores: &[ScoredSample]) -> String {
    csv_text(
        provenance,
        &SCORE_COLUMNS,
        scores.iter().map(|s| {
            let mut row = vec![s.sample_id.clone(), s.label.as_str().to_string()];
            row.extend(metric_fields(&s.metric));
            row.push(s.score.map(shortest).unwrap_or_default());
            row.push(s.computable().to_string());
            row
        }),
    )
}

fn reader(text: &str) -> csv::Reader<&[u8]> {
    csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_reader(text.as_bytes())
}

fn data_err(line: u64, msg: impl std::fmt::Display) -> CliError {
    CliError::Data(format!("line {line}: {msg}"))
}

fn parse_metric(rec: &csv::StringRecord, at: usize, line: u64) -> Result<MetricSpec, CliError> {
    let kind = MetricKind::parse(&rec[at])
        .ok_or_else(|| data_err(line, format!("unknown kind {:?}", &rec[at])))?;
    let alpha = match &rec[at + 1] {
        "" => None,
        s => Some(s.parse::<Alpha>().map_err(|e| data_err(line, e))?),
    };
    let k = match &rec[at + 2] {
        "" => None,
        s => Some(s.parse::<f64>().map_err(|e| data_err(line, e))?),
    };
    let slice = rec[at + 3].parse().map_err(|e| data_err(line, e))?;
    let orientation = Orientation::parse(&rec[at + 4])
        .ok_or_else(|| data_err(line, format!("unknown orientation {:?}", &rec[at + 4])))?;
    Ok(MetricSpec::new(kind, alpha, k, slice)
        .map_err(|e| data_err(line, e))?
        .with_orientation(orientation))
}

fn line_of(rec: &csv::StringRecord) -> u64 {
    rec.position().map_or(0, |p| p.line())
}

pub fn parse_scores(text: &str) -> Result<Vec<ScoredSample>, CliError> {
    let mut rdr = reader(text);
    let header = rdr.headers().map_err(|e| data_err(0, e))?.clone();
    if header.iter().ne(SCORE_COLUMNS) {
        return Err(CliError::Data(format!(
            "scores header must be {}",
            SCORE_COLUMNS.join(",")
        )));
    }
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| CliError::Data(e.to_string()))?;
        let line = line_of(&rec);
        let label = Label::parse(&rec[1])
            .ok_or_else(|| data_err(line, format!("unknown label {:?}", &rec[1])))?;
        let metric = parse_metric(&rec, 2, line)?;
        let score = match &rec[7] {
            "" => None,
            s => Some(s.parse::<f64>().map_err(|e| data_err(line, e))?),
        };
        let computable = match &rec[8] {
            "true" => true,
            "false" => false,
            other => {
                return Err(data_err(
                    line,
                    format!("computable must be true or false, got {other:?}"),
                ))
            }
        };
        if computable != score.is_some() {
            return Err(data_err(
                line,
                "computable flag disagrees with the score column",
            ));
        }
        out.push(ScoredSample {
            sample_id: rec[0].to_string(),
            label,
            metric,
            score,
        });
    }
    Ok(out)
}

pub fn report_csv(provenance: &str, report: &Report) -> String {
    format!("{provenance}\n{}", report.to_delimited())
}

pub fn report_txt(provenance: &str, report: &Report) -> String {
    format!("{provenance}\n{}", report.to_grid())
}

pub fn roc_csv(provenance: &str, results: &[EvalResult]) -> String {
    let header = [
        "kind",
        "alpha",
        "k_percent",
        "slice",
        "orientation",
        "fpr",
        "tpr",
    ];
    csv_text(
        provenance,
        &header,
        results.iter().flat_map(|r| {
            let fields = metric_fields(&r.metric);
            r.roc.iter().map(move |&(fpr, tpr)| {
                let mut row = fields.to_vec();
                row.push(shortest(fpr));
                row.push(shortest(tpr));
                row
            })
        }),
    )
}

fn parse_cell(s: &str, line: u64) -> Result<Option<f64>, CliError> {
    match s {
        "N/A" => Ok(None),
        s => s.parse().map(Some).map_err(|e| data_err(line, e)),
    }
}

fn parse_count(s: &str, line: u64) -> Result<usize, CliError> {
    s.parse().map_err(|e| data_err(line, e))
}

/// Reads a report written by [`report_csv`].
pub fn parse_report(text: &str) -> Result<Report, CliError> {
    let mut rdr = reader(text);
    let header = rdr.headers().map_err(|e| data_err(0, e))?.clone();
    let n = header.len();
    let fixed = [
        "metric",
        "alpha",
        "k_percent",
        "slice",
        "orientation",
        "auc",
    ];
    if n < 9
        || header.iter().take(6).ne(fixed)
        || header
            .iter()
            .skip(n - 3)
            .ne(["n_member", "n_nonmember", "n_uncomputable"])
    {
        return Err(CliError::Data("not an evaluation report header".into()));
    }
    let fprs = header
        .iter()
        .take(n - 3)
        .skip(6)
        .map(|c| {
            parse_tpr_column(c)
                .ok_or_else(|| CliError::Data(format!("unknown report column {c:?}")))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| CliError::Data(e.to_string()))?;
        let line = line_of(&rec);
        let tpr_at_fpr = fprs
            .iter()
            .enumerate()
            .map(|(i, &t)| Ok((t, parse_cell(&rec[6 + i], line)?)))
            .collect::<Result<Vec<_>, CliError>>()?;
        rows.push(ReportRow {
            metric: parse_metric(&rec, 0, line)?,
            auc: parse_cell(&rec[5], line)?,
            tpr_at_fpr,
            n_member: parse_count(&rec[n - 3], line)?,
            n_nonmember: parse_count(&rec[n - 2], line)?,
            n_uncomputable: parse_count(&rec[n - 1], line)?,
        });
    }
    Ok(Report {
        layout: ReportLayout { include_tpr: true },
        rows,
    })
}
