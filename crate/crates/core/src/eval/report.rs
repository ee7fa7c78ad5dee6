use super::{FluencyTable, MeaningTable, TransferReport};

/// Aligned columns: `Experiment | col | col ...` with a rule under the header.
/// The first column is left-aligned, the rest right-aligned.
fn table(header: &[String], rows: &[Vec<String>]) -> String {
    let widths: Vec<usize> = (0..header.len())
        .map(|c| rows.iter().map(|r| r[c].chars().count()).chain([header[c].chars().count()]).max().unwrap_or(0))
        .collect();
    let line = |cells: &[String]| {
        cells
            .iter()
            .enumerate()
            .map(|(c, s)| if c == 0 { format!("{s:<w$}", w = widths[c]) } else { format!("{s:>w$}", w = widths[c]) })
            .collect::<Vec<_>>()
            .join(" | ")
    };
    let rule = widths.iter().map(|&w| "-".repeat(w)).collect::<Vec<_>>().join("-+-");
    let mut out = vec![line(header), rule];
    out.extend(rows.iter().map(|r| line(r)));
    out.join("\n") + "\n"
}

fn pct(x: f64) -> String {
    format!("{:.2}", 100.0 * x)
}

/// Transfer accuracy in percent: the experiment's pooled row, one indented
/// row per direction, then content retention when measured.
pub fn render_transfer(report: &TransferReport) -> String {
    let header = vec!["Experiment".to_string(), report.system.clone()];
    let mut rows = vec![vec![report.experiment.clone(), pct(report.aggregate)]];
    for d in &report.directions {
        rows.push(vec![format!("  {} -> {}", d.source, d.target), pct(d.accuracy)]);
    }
    if let Some(r) = report.content_retention {
        rows.push(vec!["Content retention".into(), pct(r)]);
    }
    table(&header, &rows)
}

/// Preference percentages: `Experiment | first | No Pref. | second`.
pub fn render_meaning(t: &MeaningTable) -> String {
    let header = vec!["Experiment".into(), t.systems[0].clone(), "No Pref.".into(), t.systems[1].clone()];
    let rows: Vec<Vec<String>> = t
        .rows
        .iter()
        .map(|r| {
            let label = match r.bucket {
                None => r.experiment.clone(),
                Some(b) => format!("{} {}", r.experiment, b.label()),
            };
            std::iter::once(label).chain(r.percent.iter().map(|p| format!("{p:.2}"))).collect()
        })
        .collect();
    table(&header, &rows)
}

/// Mean ratings: `Experiment | first | second`, `-` where nothing was rated.
pub fn render_fluency(t: &FluencyTable) -> String {
    let header = vec!["Experiment".into(), t.systems[0].clone(), t.systems[1].clone()];
    let rows: Vec<Vec<String>> = t
        .rows
        .iter()
        .map(|r| {
            std::iter::once(r.label.clone())
                .chain(r.mean.iter().map(|m| m.map_or("-".into(), |v| format!("{v:.2}"))))
                .collect()
        })
        .collect();
    table(&header, &rows)
}
