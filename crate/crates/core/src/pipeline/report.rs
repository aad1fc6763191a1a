//! Run report: per-region accounting of list hits, classifier additions,
//! chain-derived URLs, and emitted rules, emitted as JSON or a table.

use serde::{Deserialize, Serialize};

use crate::safety::{SafetyReason, SafetyVerdict};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegionCounts {
    /// Distinct ad-resource URLs matched by the existing filter lists.
    pub ads_by_lists: usize,
    /// Distinct classifier-identified ad URLs the lists missed.
    pub ads_by_classifier_only: usize,
    /// Distinct chain-derived URLs (terminals plus safe upstream scripts)
    /// not matched by the existing lists.
    pub chain_new_urls: usize,
    /// Deduplicated rules emitted for this region.
    pub rules_emitted: usize,
}

impl RegionCounts {
    /// Overall increase over the existing lists, in percent. `None` when
    /// the lists matched nothing (division guard).
    pub fn delta_percent(&self) -> Option<f64> {
        if self.ads_by_lists == 0 {
            return None;
        }
        Some(self.chain_new_urls as f64 / self.ads_by_lists as f64 * 100.0)
    }

    pub fn accumulate(&mut self, other: &RegionCounts) {
        self.ads_by_lists += other.ads_by_lists;
        self.ads_by_classifier_only += other.ads_by_classifier_only;
        self.chain_new_urls += other.chain_new_urls;
        self.rules_emitted += other.rules_emitted;
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RegionReport {
    pub region: String,
    #[serde(flatten)]
    pub counts: RegionCounts,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub delta_percent: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PageStatus {
    Ok,
    Skipped,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScriptSafetyReport {
    pub script_node: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub script_url: Option<String>,
    pub verdict: SafetyVerdict,
    pub reason: SafetyReason,
    pub subtree_count: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PageReport {
    pub region: String,
    pub page: String,
    pub final_url: String,
    pub status: PageStatus,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub skip_reason: Option<String>,
    pub ads_by_lists: usize,
    pub ads_by_classifier_only: usize,
    pub chains_built: usize,
    pub rules_generated: usize,
    /// One JSON line per chain: terminal URL, ordered script URLs,
    /// diagnostics.
    pub chains: Vec<serde_json::Value>,
    pub safety: Vec<ScriptSafetyReport>,
    pub diagnostics: Vec<String>,
}

/// Configuration echo, so a report is self-describing.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConfigEcho {
    pub subtree_limit: usize,
    pub decision_threshold: Option<f64>,
    pub jobs: Option<usize>,
    pub seed: u64,
    pub list_tally_types: Vec<String>,
    pub lists: Vec<String>,
    pub classifier_enabled: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunReport {
    pub schema_version: u32,
    pub crawl_id: String,
    pub generated_at: String,
    pub config: ConfigEcho,
    /// Documented places where the implemented heuristics are stricter
    /// than their plainest reading.
    pub heuristic_deviations: Vec<String>,
    pub totals: RegionCounts,
    pub totals_delta_percent: Option<f64>,
    pub regions: Vec<RegionReport>,
    /// Rules in the emitted list file after global deduplication.
    pub list_rule_count: usize,
    pub pages: Vec<PageReport>,
    pub diagnostics: Vec<String>,
}

pub const REPORT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Json,
    Table,
}

impl ReportFormat {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "json" => Some(ReportFormat::Json),
            "table" => Some(ReportFormat::Table),
            _ => None,
        }
    }
}

/// Deterministic serialization of the report. The table mirrors the
/// per-region accounting columns plus a totals row.
pub fn emit_report(report: &RunReport, format: ReportFormat) -> String {
    match format {
        ReportFormat::Json => {
            serde_json::to_string_pretty(report).expect("report serializes")
        }
        ReportFormat::Table => render_table(report),
    }
}

fn fmt_delta(delta: Option<f64>) -> String {
    match delta {
        Some(d) => format!("{d:.1}%"),
        None => "—".to_string(),
    }
}

fn render_table(report: &RunReport) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "{:<16} {:>14} {:>12} {:>10} {:>8} {:>8}\n",
        "region", "current-lists", "classifier", "chains", "delta", "rules"
    ));
    let width = 16 + 14 + 12 + 10 + 8 + 8 + 5;
    out.push_str(&"-".repeat(width));
    out.push('\n');
    for region in &report.regions {
        out.push_str(&format!(
            "{:<16} {:>14} {:>12} {:>10} {:>8} {:>8}\n",
            region.region,
            region.counts.ads_by_lists,
            region.counts.ads_by_classifier_only,
            region.counts.chain_new_urls,
            fmt_delta(region.counts.delta_percent()),
            region.counts.rules_emitted,
        ));
    }
    out.push_str(&"-".repeat(width));
    out.push('\n');
    out.push_str(&format!(
        "{:<16} {:>14} {:>12} {:>10} {:>8} {:>8}\n",
        "total",
        report.totals.ads_by_lists,
        report.totals.ads_by_classifier_only,
        report.totals.chain_new_urls,
        fmt_delta(report.totals.delta_percent()),
        report.totals.rules_emitted,
    ));
    let skipped = report
        .pages
        .iter()
        .filter(|p| p.status == PageStatus::Skipped)
        .count();
    out.push_str(&format!(
        "pages: {} ok, {} skipped; list file rules: {}\n",
        report.pages.len() - skipped,
        skipped,
        report.list_rule_count,
    ));
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn report_with_totals(lists: usize, chain_new: usize) -> RunReport {
        let counts = RegionCounts {
            ads_by_lists: lists,
            ads_by_classifier_only: 0,
            chain_new_urls: chain_new,
            rules_emitted: 0,
        };
        RunReport {
            schema_version: REPORT_SCHEMA_VERSION,
            crawl_id: "fixture".into(),
            generated_at: "2020-01-01T00:00:00Z".into(),
            config: ConfigEcho {
                subtree_limit: 2,
                decision_threshold: None,
                jobs: None,
                seed: 0,
                list_tally_types: vec!["image".into(), "subdocument".into()],
                lists: vec![],
                classifier_enabled: false,
            },
            heuristic_deviations: vec![],
            totals: counts,
            totals_delta_percent: counts.delta_percent(),
            regions: vec![RegionReport {
                region: "all".into(),
                counts,
                delta_percent: counts.delta_percent(),
            }],
            list_rule_count: 0,
            pages: vec![],
            diagnostics: vec![],
        }
    }

    #[test]
    fn delta_matches_reference_totals() {
        let report = report_with_totals(6541, 1771);
        let table = emit_report(&report, ReportFormat::Table);
        assert!(table.contains("27.1%"), "table was:\n{table}");
        let delta = report.totals.delta_percent().unwrap();
        assert!((delta - 27.1).abs() < 0.05);
    }

    #[test]
    fn zero_lists_prints_dash() {
        let report = report_with_totals(0, 12);
        assert_eq!(report.totals.delta_percent(), None);
        let table = emit_report(&report, ReportFormat::Table);
        assert!(table.contains("—"));
    }

    #[test]
    fn json_and_table_agree_on_numbers() {
        let report = report_with_totals(200, 50);
        let json = emit_report(&report, ReportFormat::Json);
        let parsed: RunReport = serde_json::from_str(&json).unwrap();
        assert_eq!(parsed.totals, report.totals);
        let table = emit_report(&report, ReportFormat::Table);
        assert!(table.contains("25.0%"));
        assert_eq!(parsed.totals.delta_percent(), Some(25.0));
    }
}
