//! Sectioned `key=value` text reports.
//!
//! Output is a pure function of what was inserted, so two identical runs
//! render byte-identical text. Wall-clock figures belong in a separate
//! section that callers add only on request.

use std::fmt::{self, Display};

use crate::pipeline::{DryRun, ExecutionPlan, Inference, LayerReport};
use crate::slotvm::{CostModel, HocReport, OpCounts};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Section {
    pub name: String,
    pub entries: Vec<(String, String)>,
}

impl Section {
    pub fn new(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            entries: Vec::new(),
        }
    }

    pub fn put(&mut self, key: impl Into<String>, value: impl Display) -> &mut Self {
        self.entries.push((key.into(), value.to_string()));
        self
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Report {
    pub command: String,
    pub sections: Vec<Section>,
}

impl Report {
    pub fn new(command: impl Into<String>) -> Self {
        Self {
            command: command.into(),
            sections: Vec::new(),
        }
    }

    /// Section by name, created at the end if missing.
    pub fn section(&mut self, name: &str) -> &mut Section {
        if let Some(i) = self.sections.iter().position(|s| s.name == name) {
            return &mut self.sections[i];
        }
        self.sections.push(Section::new(name));
        self.sections.last_mut().expect("just pushed")
    }

    pub fn get(&self, section: &str, key: &str) -> Option<&str> {
        self.sections
            .iter()
            .find(|s| s.name == section)
            .and_then(|s| s.get(key))
    }

    /// Parses the `[metrics]` block of rendered text.
    pub fn parse_metrics(text: &str) -> Vec<(String, String)> {
        let mut inside = false;
        let mut out = Vec::new();
        for line in text.lines() {
            if line.starts_with('[') {
                inside = line == "[metrics]";
            } else if inside {
                if let Some((k, v)) = line.split_once('=') {
                    out.push((k.to_string(), v.to_string()));
                }
            }
        }
        out
    }
}

impl Display for Report {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "# hegcn {} report", self.command)?;
        writeln!(f, "schema={SCHEMA_VERSION}")?;
        for s in &self.sections {
            writeln!(f)?;
            writeln!(f, "[{}]", s.name)?;
            for (k, v) in &s.entries {
                writeln!(f, "{k}={v}")?;
            }
        }
        Ok(())
    }
}

fn put_counts(s: &mut Section, prefix: &str, c: &OpCounts, latency: f64) {
    s.put(format!("{prefix}.rot"), c.rot)
        .put(format!("{prefix}.pmult"), c.pmult)
        .put(format!("{prefix}.cmult"), c.cmult)
        .put(format!("{prefix}.add"), c.add)
        .put(format!("{prefix}.latency"), latency);
}

fn put_plan(r: &mut Report, plan: &ExecutionPlan) {
    let s = r.section("plan");
    s.put("t", plan.t())
        .put("ring", plan.layout.ring())
        .put("case", format!("{:?}", plan.packing.case))
        .put("objective", plan.packing.objective)
        .put("utilization", format!("{:.6}", plan.layout.utilization()))
        .put("ciphertexts", plan.layout.num_ciphertexts())
        .put(
            "node_order",
            if plan.order.is_some() {
                "noo"
            } else {
                "identity"
            },
        )
        .put("depth", plan.depth)
        .put("levels", plan.levels);
    if let Some(sched) = &plan.schedule {
        let st = sched.stats();
        s.put("schedule.rot", st.rot)
            .put("schedule.mask", st.mask)
            .put("schedule.add", st.add)
            .put("schedule.deliver", st.deliver)
            .put("schedule.ciphertexts", st.ciphertexts);
    }
    for d in &plan.decisions {
        let l = d.layer;
        s.put(format!("layer{l}.mode"), d.chosen.name())
            .put(format!("layer{l}.forced"), d.forced)
            .put(format!("layer{l}.inter_estimate"), d.inter_cost)
            .put(
                format!("layer{l}.spintra_estimate"),
                format!("{:.3}", d.spintra_cost),
            )
            .put(format!("layer{l}.c"), format!("{:.6}", d.c));
    }
}

fn put_metrics(
    r: &mut Report,
    hoc: &HocReport,
    layers: &[LayerReport],
    cost: &CostModel,
    final_level: u32,
) {
    let s = r.section("metrics");
    for l in layers {
        s.put(format!("layer{}.mode", l.layer), l.mode.name());
        put_counts(s, &format!("layer{}", l.layer), &l.counts, l.latency);
    }
    put_counts(s, "total", &hoc.total, hoc.latency);
    s.put(
        "latency_seconds",
        format!("{:.6}", hoc.latency * cost.unit_seconds),
    )
    .put("final_level", final_level);
    let s = r.section("levels");
    for ((kind, level), count) in &hoc.by_level {
        s.put(format!("{}@{level}", kind.name()), count);
    }
}

pub fn dry_run_report(run: &DryRun, cost: &CostModel) -> Report {
    let mut r = Report::new("plan");
    put_plan(&mut r, &run.plan);
    put_metrics(&mut r, &run.hoc, &run.layers, cost, run.final_level);
    r
}

pub fn inference_report(run: &Inference, cost: &CostModel) -> Report {
    let mut r = Report::new("run");
    put_plan(&mut r, &run.plan);
    put_metrics(&mut r, &run.hoc, &run.layers, cost, run.final_level);
    r.section("metrics")
        .put(
            "verify.max_abs_error",
            format!("{:e}", run.verify.max_abs_error),
        )
        .put(
            "verify.max_rel_error",
            format!("{:e}", run.verify.max_rel_error),
        )
        .put("verify.tolerance", format!("{:e}", run.verify.tolerance))
        .put("verify.passed", run.verify.passed());
    r
}

/// Preprocessing time against simulated online latency.
pub fn add_timing(r: &mut Report, plan: &ExecutionPlan, hoc: &HocReport, cost: &CostModel) {
    let online = hoc.latency * cost.unit_seconds;
    let s = r.section("timing");
    match plan.noo_time {
        Some(t) => {
            let secs = t.as_secs_f64();
            s.put("noo_seconds", format!("{secs:.6}"))
                .put("online_seconds", format!("{online:.6}"))
                .put(
                    "rho",
                    format!("{:.6}", if online > 0.0 { secs / online } else { 0.0 }),
                );
        }
        None => {
            s.put("noo_seconds", "none");
        }
    }
}
