//! CSV emitters. Every file starts with a header row; numbers use Rust's
//! shortest round-trip formatting so equal runs give equal bytes.

use crate::analytics::{ccdf, AggregatePoint};
use crate::engine::{BatchOutput, RunOutput};
use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::Path;

fn create(dir: &Path, name: &str) -> io::Result<BufWriter<File>> {
    std::fs::create_dir_all(dir)?;
    Ok(BufWriter::new(File::create(dir.join(name))?))
}

/// Writes `chi2.csv`, `providers.csv`, `provider_time.csv`, `served.csv`,
/// `access_dist.csv`, and `trace.csv` when the run was traced.
pub fn write_run(dir: &Path, run: &RunOutput) -> io::Result<()> {
    let mut f = create(dir, "chi2.csv")?;
    writeln!(f, "t,index,nodal_index,count_index")?;
    for ((a, b), c) in run.chi2.samples.iter().zip(&run.chi2_nodal.samples).zip(&run.chi2_count.samples) {
        writeln!(f, "{},{},{},{}", a.0, a.1, b.1, c.1)?;
    }
    f.flush()?;

    let mut f = create(dir, "providers.csv")?;
    writeln!(f, "t,C_t,ideal_C")?;
    for (c, ideal) in run.providers.samples.iter().zip(&run.ideal_providers.samples) {
        writeln!(f, "{},{},{}", c.0, c.1, ideal.1)?;
    }
    f.flush()?;

    let mut f = create(dir, "provider_time.csv")?;
    writeln!(f, "node,tau_hat")?;
    for (i, t) in run.provider_time().iter().enumerate() {
        writeln!(f, "{i},{t}")?;
    }
    f.flush()?;

    let mut f = create(dir, "served.csv")?;
    writeln!(f, "node,count")?;
    for (i, c) in run.served.iter().enumerate() {
        writeln!(f, "{i},{c}")?;
    }
    f.flush()?;

    let mut f = create(dir, "access_dist.csv")?;
    writeln!(f, "t,node,meters")?;
    for s in &run.access {
        for (node, d) in &s.distances {
            writeln!(f, "{},{},{}", s.t, node, d)?;
        }
    }
    f.flush()?;

    if !run.trace.is_empty() {
        let mut f = create(dir, "trace.csv")?;
        writeln!(f, "time,copy_id,event,node_id,x,y")?;
        for r in &run.trace {
            writeln!(f, "{},{},{},{},{},{}", r.time, r.copy, r.event.label(), r.node, r.position.x, r.position.y)?;
        }
        f.flush()?;
    }
    Ok(())
}

fn write_band(dir: &Path, name: &str, points: &[AggregatePoint]) -> io::Result<()> {
    let mut f = create(dir, name)?;
    writeln!(f, "t,mean,lo,hi,runs")?;
    for p in points {
        writeln!(f, "{},{},{},{},{}", p.t, p.mean, p.lo, p.hi, p.runs)?;
    }
    f.flush()
}

fn write_curve(dir: &Path, name: &str, header: &str, curve: &[(f64, f64)]) -> io::Result<()> {
    let mut f = create(dir, name)?;
    writeln!(f, "{header}")?;
    for (x, y) in curve {
        writeln!(f, "{x},{y}")?;
    }
    f.flush()
}

/// Writes the cross-run means and 95% bands, pooled CCDFs, and one summary
/// row per run.
pub fn write_aggregate(dir: &Path, batch: &BatchOutput) -> io::Result<()> {
    let agg = &batch.aggregate;
    write_band(dir, "chi2.csv", &agg.chi2)?;
    write_band(dir, "chi2_nodal.csv", &agg.chi2_nodal)?;
    write_band(dir, "access_dist.csv", &agg.access_distance)?;

    let mut f = create(dir, "providers.csv")?;
    writeln!(f, "t,mean,lo,hi,runs,ideal_C")?;
    for (p, ideal) in agg.providers.iter().zip(&agg.ideal_providers) {
        writeln!(f, "{},{},{},{},{},{}", p.t, p.mean, p.lo, p.hi, p.runs, ideal.1)?;
    }
    f.flush()?;

    let pooled_time: Vec<f64> = batch.runs.iter().flat_map(|r| r.provider_time()).collect();
    write_curve(dir, "provider_time_ccdf.csv", "tau_hat,fraction", &ccdf(&pooled_time))?;
    let pooled_served: Vec<f64> = batch
        .runs
        .iter()
        .flat_map(|r| r.ever_providers().into_iter().map(|n| r.served[n.index()] as f64))
        .collect();
    write_curve(dir, "served_ccdf.csv", "count,fraction", &ccdf(&pooled_served))?;

    let mut f = create(dir, "summary.csv")?;
    writeln!(f, "run,mean_index,mean_nodal_index,mean_count_index,mean_access_m,final_C,queries,served")?;
    for r in &batch.runs {
        writeln!(
            f,
            "{},{},{},{},{},{},{},{}",
            r.run_index,
            r.mean_index(),
            r.mean_nodal_index(),
            r.mean_count_index(),
            r.mean_access_distance(),
            r.providers.samples.last().map_or(f64::NAN, |s| s.1),
            r.counters.queries,
            r.counters.served
        )?;
    }
    f.flush()
}

/// Writes every run under `run-NNN/` and the aggregate under `aggregate/`.
pub fn write_batch(dir: &Path, batch: &BatchOutput) -> io::Result<()> {
    for r in &batch.runs {
        write_run(&dir.join(format!("run-{:03}", r.run_index)), r)?;
    }
    write_aggregate(&dir.join("aggregate"), batch)
}

pub fn write_q_table(path: &Path, table: &[(f64, f64)]) -> io::Result<()> {
    let mut f = BufWriter::new(File::create(path)?);
    writeln!(f, "x,q")?;
    for (x, q) in table {
        writeln!(f, "{x},{q}")?;
    }
    f.flush()
}
