//! Human-readable plan comparison against the best single-cloud plan.

use std::fmt::Write;

use sky_core::scalar::savings_percent;
use sky_core::PhysicalPlan;

struct Row {
    name: String,
    time: f64,
    cost: f64,
}

fn rows(plan: &PhysicalPlan) -> Vec<Row> {
    let mut out: Vec<Row> = Vec::new();
    for p in &plan.placements {
        match out.iter_mut().find(|r| r.name == p.stage) {
            Some(r) => {
                r.time = r.time.max(p.duration_hours);
                r.cost += p.run_cost_usd;
            }
            None => out.push(Row {
                name: p.stage.clone(),
                time: p.duration_hours,
                cost: p.run_cost_usd,
            }),
        }
    }
    out.push(Row {
        name: "egress".into(),
        time: plan.metrics.transfer_time_hours,
        cost: plan.metrics.transfer_cost_usd,
    });
    out.push(Row {
        name: "Total".into(),
        time: plan.metrics.makespan_hours,
        cost: plan.metrics.total_cost_usd,
    });
    out
}

fn delta(baseline: f64, value: f64) -> String {
    if baseline == 0.0 {
        return String::new();
    }
    match savings_percent(&baseline, &value) {
        0 => String::new(),
        s => format!("{:+}%", -s),
    }
}

fn figure(x: f64, egress: bool) -> String {
    if egress && x == 0.0 {
        "-".into()
    } else {
        format!("{x:.2}")
    }
}

/// Rows are stages, egress and total; columns are time then cost, single cloud before sky.
pub fn explain(plan: &PhysicalPlan, baseline: Option<&(String, PhysicalPlan)>) -> String {
    let sky = rows(plan);
    let mut out = String::new();
    let Some((cloud, base)) = baseline else {
        writeln!(out, "plan {} ({:?}); no single-cloud plan exists", plan.job_id, plan.objective.mode).unwrap();
        writeln!(out, "{:<12} {:>10} {:>10}", "", "time (hr)", "cost ($)").unwrap();
        for r in &sky {
            let egress = r.name == "egress";
            writeln!(out, "{:<12} {:>10} {:>10}", r.name, figure(r.time, egress), figure(r.cost, egress)).unwrap();
        }
        return out;
    };
    let base_rows = rows(base);
    writeln!(out, "plan {} vs single-cloud {cloud}", plan.job_id).unwrap();
    writeln!(
        out,
        "{:<12} {:>10} {:>10} {:>6}  {:>10} {:>10} {:>6}",
        "", "time (hr)", "", "", "cost ($)", "", ""
    )
    .unwrap();
    writeln!(
        out,
        "{:<12} {:>10} {:>10} {:>6}  {:>10} {:>10} {:>6}",
        "", cloud, "sky", "", cloud, "sky", ""
    )
    .unwrap();
    let stage_of = |rows: &[Row], name: &str| rows.iter().find(|r| r.name == name).map(|r| (r.time, r.cost));
    for r in &sky {
        let egress = r.name == "egress";
        let (bt, bc) = match stage_of(&base_rows, &r.name) {
            Some((t, c)) => (Some(t), Some(c)),
            None => (None, None),
        };
        let show = |b: Option<f64>| b.map(|x| figure(x, egress)).unwrap_or_else(|| "-".into());
        let d = |b: Option<f64>, v: f64| if egress { String::new() } else { b.map(|b| delta(b, v)).unwrap_or_default() };
        writeln!(
            out,
            "{:<12} {:>10} {:>10} {:>6}  {:>10} {:>10} {:>6}",
            r.name,
            show(bt),
            figure(r.time, egress),
            d(bt, r.time),
            show(bc),
            figure(r.cost, egress),
            d(bc, r.cost),
        )
        .unwrap();
    }
    let m = &plan.metrics;
    let b = &base.metrics;
    writeln!(
        out,
        "savings vs {cloud}: time {}%, cost {}%",
        savings_percent(&b.makespan_hours, &m.makespan_hours),
        savings_percent(&b.total_cost_usd, &m.total_cost_usd)
    )
    .unwrap();
    out
}
