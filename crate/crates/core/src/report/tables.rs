//! Flat delimited tables, one per report section.

use std::path::{Path, PathBuf};

use serde::Serialize;

use super::{Part, Report};
use crate::collector::{Validity, ValidityRow};

pub const TABLE_NAMES: [&str; 10] = [
    "validity",
    "estimates",
    "distribution",
    "mean_kl",
    "spearman",
    "mi",
    "cbd_results",
    "cbd_summary",
    "cbd_overlap",
    "metaprompt",
];

fn write_rows<R: Serialize>(path: &Path, rows: impl IntoIterator<Item = R>) -> std::io::Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r).map_err(std::io::Error::other)?;
    }
    w.flush()
}

fn write_raw(path: &Path, header: &[String], rows: &[Vec<String>]) -> std::io::Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    w.flush()
}

fn validity_record(setting: &str, order: &str, row: (&usize, &usize, &f64), by: &std::collections::BTreeMap<Validity, usize>) -> Vec<String> {
    let mut out = vec![
        setting.to_string(),
        order.to_string(),
        row.0.to_string(),
        row.1.to_string(),
        row.2.to_string(),
    ];
    out.extend(Validity::ALL.iter().map(|v| by.get(v).copied().unwrap_or(0).to_string()));
    out
}

#[derive(Serialize)]
struct DistributionRow<'a> {
    setting: &'a str,
    lo: f64,
    hi: f64,
    count: usize,
}

#[derive(Serialize)]
struct KlRow<'a> {
    setting: &'a str,
    baseline: &'a str,
    epsilon: f64,
    n_templates: usize,
    mean_bits: f64,
    se_bits: f64,
}

#[derive(Serialize)]
struct SpearmanFlat<'a> {
    setting: &'a str,
    n: usize,
    rho: Option<f64>,
    p_value: Option<f64>,
    p_permutation: Option<f64>,
    flag: Option<&'a str>,
}

#[derive(Serialize)]
struct MiFlat<'a> {
    regime: &'a str,
    feature: &'a str,
    estimator: &'a str,
    n_samples: usize,
    n_templates: usize,
    mi_bits: Option<f64>,
    fold_mean_bits: Option<f64>,
    se_bits: Option<f64>,
    n_folds: usize,
    notes: String,
}

#[derive(Serialize)]
struct CbdFlat<'a> {
    pair_id: &'a str,
    order: &'a str,
    delta_c: f64,
    contextual: bool,
    contextual_gated: Option<bool>,
    ci_low: Option<f64>,
    ci_high: Option<f64>,
    e1_o1: f64,
    e2_o1: f64,
    e1_o2: f64,
    e2_o2: f64,
    j_o1: f64,
    j_o2: f64,
    first_nf_valid: u64,
    first_nf_feminine: u64,
    first_nm_valid: u64,
    first_nm_feminine: u64,
    second_nf_valid: u64,
    second_nf_feminine: u64,
    second_nm_valid: u64,
    second_nm_feminine: u64,
}

#[derive(Serialize)]
struct SummaryFlat<'a> {
    rule: String,
    ci_gate: bool,
    scope: &'a str,
    n_pairs: usize,
    n_contextual: usize,
    fraction: f64,
}

/// Write every table under `dir`, returning the paths written. Sections
/// absent from the report produce header-only tables.
pub fn write_tables(report: &Report, dir: &Path) -> std::io::Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let path = |name: &str| dir.join(format!("{name}.csv"));
    let stats = &report.stats;

    let mut header: Vec<String> = ["setting", "order", "total", "valid", "fraction_valid"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    header.extend(Validity::ALL.iter().map(|v| v.as_str().to_string()));
    let mut rows: Vec<Vec<String>> = report
        .validity
        .rows
        .iter()
        .map(|r: &ValidityRow| {
            validity_record(r.setting.as_str(), r.order.as_str(), (&r.total, &r.valid, &r.fraction_valid), &r.by_category)
        })
        .collect();
    let v = &report.validity;
    rows.push(validity_record("all", "all", (&v.total, &v.valid, &v.fraction_valid), &v.by_category));
    write_raw(&path("validity"), &header, &rows)?;

    write_rows(&path("estimates"), &stats.estimates)?;

    write_rows(
        &path("distribution"),
        stats.distribution.iter().flat_map(|h| {
            let s = h.setting.as_str();
            let interior = h.bin_edges.windows(2).zip(&h.bin_counts).map(move |(e, &count)| DistributionRow {
                setting: s,
                lo: e[0],
                hi: e[1],
                count,
            });
            std::iter::once(DistributionRow {
                setting: s,
                lo: 0.0,
                hi: 0.0,
                count: h.at_zero,
            })
            .chain(interior)
            .chain(std::iter::once(DistributionRow {
                setting: s,
                lo: 1.0,
                hi: 1.0,
                count: h.at_one,
            }))
        }),
    )?;

    write_rows(
        &path("mean_kl"),
        stats.mean_kl.iter().map(|k| KlRow {
            setting: k.setting.as_str(),
            baseline: k.baseline.as_str(),
            epsilon: k.epsilon,
            n_templates: k.n_templates,
            mean_bits: k.mean_bits,
            se_bits: k.se_bits,
        }),
    )?;

    write_rows(
        &path("spearman"),
        stats.spearman.iter().map(|r| SpearmanFlat {
            setting: r.setting.as_str(),
            n: r.result.n,
            rho: r.result.rho,
            p_value: r.result.p_value,
            p_permutation: r.result.p_permutation,
            flag: r.result.flag.as_deref(),
        }),
    )?;

    write_rows(
        &path("mi"),
        stats.mi.iter().map(|r| MiFlat {
            regime: r.regime.as_str(),
            feature: r.feature.as_str(),
            estimator: match r.estimator {
                crate::stats::mi::MiEstimator::Discrete => "discrete",
                crate::stats::mi::MiEstimator::Knn => "knn",
            },
            n_samples: r.n_samples,
            n_templates: r.n_templates,
            mi_bits: r.mi_bits,
            fold_mean_bits: r.fold_mean_bits,
            se_bits: r.se_bits,
            n_folds: r.n_folds,
            notes: r.notes.join("; "),
        }),
    )?;

    let cbd = report.cbd.present();
    let results = cbd.map(|c| c.results.as_slice()).unwrap_or(&[]);
    let cbd_rows: Vec<CbdFlat> = results
        .iter()
        .map(|r| {
            let c = &r.counts;
            CbdFlat {
                pair_id: &r.pair_id,
                order: r.order.as_str(),
                delta_c: r.delta_c,
                contextual: r.contextual,
                contextual_gated: r.contextual_gated,
                ci_low: r.ci.map(|c| c.0),
                ci_high: r.ci.map(|c| c.1),
                e1_o1: r.system.e1_o1,
                e2_o1: r.system.e2_o1,
                e1_o2: r.system.e1_o2,
                e2_o2: r.system.e2_o2,
                j_o1: r.system.j_o1,
                j_o2: r.system.j_o2,
                first_nf_valid: c.first.primed_feminine.n_valid,
                first_nf_feminine: c.first.primed_feminine.n_feminine,
                first_nm_valid: c.first.primed_masculine.n_valid,
                first_nm_feminine: c.first.primed_masculine.n_feminine,
                second_nf_valid: c.second.primed_feminine.n_valid,
                second_nf_feminine: c.second.primed_feminine.n_feminine,
                second_nm_valid: c.second.primed_masculine.n_valid,
                second_nm_feminine: c.second.primed_masculine.n_feminine,
            }
        })
        .collect();
    if cbd_rows.is_empty() {
        write_raw(&path("cbd_results"), &["pair_id".into(), "order".into(), "delta_c".into()], &[])?;
    } else {
        write_rows(&path("cbd_results"), cbd_rows)?;
    }

    let summaries: Vec<SummaryFlat> = cbd
        .into_iter()
        .flat_map(|c| std::iter::once(&c.summary).chain(&c.alternatives))
        .flat_map(|s| {
            let rule = serde_json::to_value(s.rule)
                .ok()
                .and_then(|v| v.as_str().map(String::from))
                .unwrap_or_default();
            s.per_order
                .iter()
                .map(|(o, f)| (o.as_str(), *f))
                .chain(std::iter::once(("pooled", s.pooled)))
                .map(move |(scope, f)| SummaryFlat {
                    rule: rule.clone(),
                    ci_gate: s.ci_gate,
                    scope,
                    n_pairs: f.n_pairs,
                    n_contextual: f.n_contextual,
                    fraction: f.fraction,
                })
                .collect::<Vec<_>>()
        })
        .collect();
    if summaries.is_empty() {
        write_raw(&path("cbd_summary"), &["rule".into(), "scope".into(), "fraction".into()], &[])?;
    } else {
        write_rows(&path("cbd_summary"), summaries)?;
    }

    let (overlap_header, overlap_rows) = match cbd.and_then(|c| c.overlap.as_ref()) {
        Some(o) => {
            let mut h = vec!["run".to_string()];
            h.extend(o.runs.iter().cloned());
            let rows = o
                .runs
                .iter()
                .zip(&o.matrix)
                .map(|(run, row)| {
                    std::iter::once(run.clone())
                        .chain(row.iter().map(|n| n.to_string()))
                        .collect()
                })
                .collect();
            (h, rows)
        }
        None => (vec!["run".to_string()], Vec::new()),
    };
    write_raw(&path("cbd_overlap"), &overlap_header, &overlap_rows)?;

    match &report.metaprompt {
        Part::Present(m) if !m.accuracy.is_empty() => write_rows(&path("metaprompt"), &m.accuracy)?,
        _ => write_raw(
            &path("metaprompt"),
            &["question_kind".into(), "n".into(), "n_correct".into(), "accuracy".into()],
            &[],
        )?,
    }

    Ok(TABLE_NAMES.iter().map(|n| path(n)).collect())
}
