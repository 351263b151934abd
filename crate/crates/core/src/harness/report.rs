//! Result files: `results.csv`, a plain-text grid, `episodes.jsonl` and
//! `learning_curve.csv`.

use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::harness::campaign::{CampaignOutput, CellResult, ResultsTable};
use crate::harness::episode::EpisodeRecord;
use crate::policy::CurvePoint;
use crate::scene::{needle_spec, thread_material};

pub const RESULTS_HEADER: [&str; 9] =
    ["controller", "needle", "thread", "angle", "episodes", "successes", "success_rate", "mean_steps", "mean_final_offset"];
pub const CURVE_HEADER: [&str; 3] = ["step", "episode_reward", "success"];
const EXCLUDED: &str = "*";

fn csv_err(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Config(format!("csv: {other:?}")),
    }
}

fn opt(x: Option<f64>) -> String {
    x.map_or_else(String::new, |v| v.to_string())
}

pub fn write_results_csv(path: &Path, table: &ResultsTable) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(RESULTS_HEADER).map_err(csv_err)?;
    for c in &table.cells {
        let mut row = vec![table.controller.clone(), c.needle.to_string(), c.thread.to_string(), c.angle.to_string()];
        if c.excluded {
            row.extend(std::iter::repeat(EXCLUDED.to_string()).take(5));
        } else {
            row.extend([
                c.episodes.to_string(),
                c.successes.to_string(),
                opt(c.success_rate),
                opt(c.mean_steps),
                opt(c.mean_final_offset),
            ]);
        }
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_results_csv(path: &Path) -> Result<ResultsTable> {
    let mut r = csv::Reader::from_path(path).map_err(csv_err)?;
    let bad = |what: &str| Error::Config(format!("{}: bad {what}", path.display()));
    let mut controller = String::new();
    let mut cells = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(csv_err)?;
        if rec.len() != RESULTS_HEADER.len() {
            return Err(bad("row width"));
        }
        controller = rec[0].to_string();
        let needle = rec[1].parse().map_err(|_| bad("needle"))?;
        let thread = rec[2].parse().map_err(|_| bad("thread"))?;
        let angle = rec[3].parse().map_err(|_| bad("angle"))?;
        let num = |i: usize| -> Result<Option<f64>> {
            match &rec[i] {
                "" => Ok(None),
                s => s.parse().map(Some).map_err(|_| bad(RESULTS_HEADER[i])),
            }
        };
        let cell = if &rec[4] == EXCLUDED {
            CellResult {
                needle,
                thread,
                angle,
                excluded: true,
                episodes: 0,
                successes: 0,
                success_rate: None,
                mean_steps: None,
                mean_final_offset: None,
            }
        } else {
            CellResult {
                needle,
                thread,
                angle,
                excluded: false,
                episodes: rec[4].parse().map_err(|_| bad("episodes"))?,
                successes: rec[5].parse().map_err(|_| bad("successes"))?,
                success_rate: num(6)?,
                mean_steps: num(7)?,
                mean_final_offset: num(8)?,
            }
        };
        cells.push(cell);
    }
    Ok(ResultsTable { controller, cells })
}

/// Needle by thread grid of pooled success rates, one row per needle,
/// followed by per-angle averages.
pub fn results_grid(table: &ResultsTable) -> String {
    let mut needles: Vec<usize> = table.cells.iter().map(|c| c.needle).collect();
    let mut threads: Vec<usize> = table.cells.iter().map(|c| c.thread).collect();
    let mut angles: Vec<f64> = table.cells.iter().map(|c| c.angle).collect();
    needles.sort_unstable();
    needles.dedup();
    threads.sort_unstable();
    threads.dedup();
    angles.sort_by(f64::total_cmp);
    angles.dedup();

    let pct = |r: Option<f64>| r.map_or_else(|| "-".to_string(), |x| format!("{:.1}%", 100.0 * x));
    let mut s = String::new();
    let _ = writeln!(s, "controller: {}", table.controller);
    let mut header = format!("{:<22}", "needle \\ thread");
    for &t in &threads {
        let label = thread_material(t).map_or_else(|_| format!("#{t}"), |m| format!("#{t} (t={:.2} mm)", m.thickness * 1e3));
        let _ = write!(header, " | {label:>16}");
    }
    let _ = write!(header, " | {:>8}", "average");
    let _ = writeln!(s, "{header}");
    let _ = writeln!(s, "{}", "-".repeat(header.len()));
    for &n in &needles {
        let label = needle_spec(n, 60.0)
            .map_or_else(|_| format!("#{n}"), |m| format!("#{n} ({:.1}x{:.1} mm)", m.slot_width * 1e3, m.slot_height * 1e3));
        let mut row = format!("{label:<22}");
        for &t in &threads {
            let cells: Vec<&CellResult> = table.cells.iter().filter(|c| c.needle == n && c.thread == t).collect();
            let text = if !cells.is_empty() && cells.iter().all(|c| c.excluded) {
                EXCLUDED.to_string()
            } else {
                pct(table.pooled_rate(|c| c.needle == n && c.thread == t))
            };
            let _ = write!(row, " | {text:>16}");
        }
        let _ = write!(row, " | {:>8}", pct(table.pooled_rate(|c| c.needle == n)));
        let _ = writeln!(s, "{row}");
    }
    let _ = writeln!(s);
    for &a in &angles {
        let _ = writeln!(s, "angle {a:>4}: {}", pct(table.pooled_rate(|c| c.angle == a)));
    }
    let _ = writeln!(s, "overall: {}", pct(table.aggregate_rate()));
    let steps = table.aggregate_mean_steps().map_or_else(|| "-".to_string(), |m| format!("{m:.2}"));
    let _ = writeln!(s, "mean steps to success: {steps}");
    s
}

pub fn write_episodes_jsonl(path: &Path, records: &[EpisodeRecord]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for r in records {
        serde_json::to_writer(&mut w, r).map_err(|e| Error::Io(e.into()))?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_episodes_jsonl(path: &Path) -> Result<Vec<EpisodeRecord>> {
    let mut out = Vec::new();
    for line in BufReader::new(File::open(path)?).lines() {
        let line = line?;
        if !line.trim().is_empty() {
            out.push(serde_json::from_str(&line).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?);
        }
    }
    Ok(out)
}

pub fn write_curve_csv(path: &Path, curve: &[CurvePoint]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(CURVE_HEADER).map_err(csv_err)?;
    for p in curve {
        w.write_record([p.step.to_string(), p.episode_reward.to_string(), u8::from(p.success).to_string()])
            .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_curve_csv(path: &Path) -> Result<Vec<CurvePoint>> {
    let mut r = csv::Reader::from_path(path).map_err(csv_err)?;
    let bad = || Error::Config(format!("{}: malformed learning curve", path.display()));
    r.records()
        .map(|rec| {
            let rec = rec.map_err(csv_err)?;
            Ok(CurvePoint {
                step: rec.get(0).and_then(|s| s.parse().ok()).ok_or_else(bad)?,
                episode_reward: rec.get(1).and_then(|s| s.parse().ok()).ok_or_else(bad)?,
                success: rec.get(2).map(|s| s == "1").ok_or_else(bad)?,
            })
        })
        .collect()
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ReportOptions {
    /// Also write `results.txt`.
    pub grid: bool,
}

/// Writes campaign outputs into `dir`, creating it if needed; returns the
/// written paths.
pub fn report(output: &CampaignOutput, dir: &Path, options: ReportOptions) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let mut written = vec![dir.join("results.csv"), dir.join("episodes.jsonl")];
    write_results_csv(&written[0], &output.table)?;
    write_episodes_jsonl(&written[1], &output.episodes)?;
    if options.grid {
        let p = dir.join("results.txt");
        std::fs::write(&p, results_grid(&output.table))?;
        written.push(p);
    }
    Ok(written)
}
