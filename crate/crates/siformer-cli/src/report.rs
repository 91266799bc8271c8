//! Human-readable and JSON metric reports. Accuracy renders as a
//! percentage with two decimals; other floats get four; FLOPs appear
//! both raw and in units of 1e9.

use siformer::infer::EvalMetrics;

pub fn percent(fraction: f64) -> String {
    format!("{:.2}", fraction * 100.0)
}

pub fn giga(flops: f64) -> String {
    format!("{:.4}", flops / 1e9)
}

pub fn render_metrics_table(metrics: &EvalMetrics) -> String {
    let mut out = String::new();
    let mut row = |k: &str, v: String| {
        out.push_str(&format!("{k:<24}{v}\n"));
    };
    row("samples", metrics.samples.to_string());
    row("top1 (%)", percent(metrics.top1));
    row("avg time (s)", format!("{:.4}", metrics.avg_wall_time_s));
    row(
        "avg FLOPs",
        format!("{:.0} ({} G)", metrics.avg_flops, giga(metrics.avg_flops)),
    );
    row(
        "params",
        format!("{} ({:.4} M)", metrics.param_count, metrics.param_count as f64 / 1e6),
    );
    row("early exits", metrics.early_exit_count.to_string());
    out
}

/// Serializes any report value with stable key order (struct order)
/// plus a trailing newline.
pub fn to_json<T: serde::Serialize>(value: &T) -> String {
    let mut text = serde_json::to_string_pretty(value).expect("report serialization");
    text.push('\n');
    text
}
