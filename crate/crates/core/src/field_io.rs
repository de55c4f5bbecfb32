//! CSV serialization of nodal fields, continuation traces, and meshes, plus
//! the key=value run log.
//!
//! Floats are written with 17 significant digits, so write-then-read is the
//! identity on node values and identical runs produce byte-identical files.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use crate::error::{Error, Result};
use crate::field::DiscreteField;
use crate::mesh::Mesh;
use crate::solver::{ContinuationTrace, TraceRecord};

fn fmt(v: f64) -> String {
    format!("{v:.16e}")
}

/// Writes `node_id,x[,y],u` rows at full double precision.
pub fn write_field_csv(path: &Path, mesh: &Mesh, field: &DiscreteField) -> Result<()> {
    crate::field::check_field(mesh, field, "write_field_csv")?;
    let file = File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut w = BufWriter::new(file);
    let io_err = |e: std::io::Error| Error::io(path.display().to_string(), e);
    if mesh.dim() == 1 {
        writeln!(w, "node_id,x,u").map_err(io_err)?;
        for i in 0..mesh.node_count() {
            writeln!(w, "{i},{},{}", fmt(mesh.node(i)[0]), fmt(field.get(i))).map_err(io_err)?;
        }
    } else {
        writeln!(w, "node_id,x,y,u").map_err(io_err)?;
        for i in 0..mesh.node_count() {
            let [x, y] = mesh.node(i);
            writeln!(w, "{i},{},{},{}", fmt(x), fmt(y), fmt(field.get(i))).map_err(io_err)?;
        }
    }
    w.flush().map_err(io_err)
}

/// Reads a field written by [`write_field_csv`], checking the node count
/// against the mesh.
pub fn read_field_csv(path: &Path, mesh: &Mesh) -> Result<DiscreteField> {
    let label = path.display().to_string();
    let file = File::open(path).map_err(|e| Error::io(label.clone(), e))?;
    let reader = BufReader::new(file);
    let mut values = Vec::with_capacity(mesh.node_count());
    let mut lines = reader.lines().enumerate();

    let header = match lines.next() {
        Some((_, line)) => line.map_err(|e| Error::io(label.clone(), e))?,
        None => {
            return Err(Error::Parse {
                path: label,
                line: 1,
                message: "empty field file".into(),
            })
        }
    };
    let ncols = header.split(',').count();
    if !header.starts_with("node_id,") || !(3..=4).contains(&ncols) {
        return Err(Error::Parse {
            path: label,
            line: 1,
            message: format!("unexpected header `{header}`"),
        });
    }

    for (idx, line) in lines {
        let line_no = idx + 1;
        let line = line.map_err(|e| Error::io(label.clone(), e))?;
        if line.trim().is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split(',').collect();
        if parts.len() != ncols {
            return Err(Error::Parse {
                path: label,
                line: line_no,
                message: format!("expected {ncols} columns, got {}", parts.len()),
            });
        }
        let node: usize = parts[0].parse().map_err(|_| Error::Parse {
            path: label.clone(),
            line: line_no,
            message: format!("bad node id `{}`", parts[0]),
        })?;
        if node != values.len() {
            return Err(Error::Parse {
                path: label,
                line: line_no,
                message: format!(
                    "node ids must ascend from 0; got {node} at row {}",
                    values.len()
                ),
            });
        }
        let v: f64 = parts[ncols - 1].parse().map_err(|_| Error::Parse {
            path: label.clone(),
            line: line_no,
            message: format!("bad value `{}`", parts[ncols - 1]),
        })?;
        values.push(v);
    }
    if values.is_empty() {
        return Err(Error::Parse {
            path: label,
            line: 1,
            message: "field file has a header but no rows".into(),
        });
    }
    if values.len() != mesh.node_count() {
        return Err(Error::invalid(format!(
            "field file {label} has {} nodes but the mesh has {}",
            values.len(),
            mesh.node_count()
        )));
    }
    DiscreteField::new(values)
}

pub const TRACE_HEADER: &str =
    "step,epsilon,residual,min_u,max_u,max_grad,picone_integral,collapse_flag";

fn trace_row(r: &TraceRecord) -> String {
    format!(
        "{},{},{},{},{},{},{},{}",
        r.step,
        fmt(r.epsilon),
        fmt(r.residual_norm),
        fmt(r.min_u),
        fmt(r.max_u),
        fmt(r.max_gradient_norm),
        fmt(r.picone_integral),
        r.collapse_flag as u8,
    )
}

/// Writes the continuation trace, with the epsilon = 0 polish as the last row.
pub fn write_trace_csv(path: &Path, trace: &ContinuationTrace) -> Result<()> {
    let io_err = |e: std::io::Error| Error::io(path.display().to_string(), e);
    let file = File::create(path).map_err(io_err)?;
    let mut w = BufWriter::new(file);
    writeln!(w, "{TRACE_HEADER}").map_err(io_err)?;
    for r in &trace.records {
        writeln!(w, "{}", trace_row(r)).map_err(io_err)?;
    }
    let fin = &trace.final_solution;
    let picone = trace
        .collapse
        .as_ref()
        .map(|r| r.integral)
        .unwrap_or(f64::NAN);
    let suspected = trace
        .collapse
        .as_ref()
        .map(|r| r.collapse == crate::picone::CollapseVerdict::CollapseSuspected)
        .unwrap_or(false);
    writeln!(
        w,
        "{},{},{},{},{},{},{},{}",
        trace.records.len(),
        fmt(0.0),
        fmt(trace.final_residual),
        fmt(fin.min_value),
        fmt(fin.max_value),
        fmt(fin.max_gradient_norm),
        fmt(picone),
        suspected as u8,
    )
    .map_err(io_err)?;
    w.flush().map_err(io_err)
}

/// Writes a partial trace (from an aborted run) without a final row.
pub fn write_partial_trace_csv(path: &Path, records: &[TraceRecord]) -> Result<()> {
    let io_err = |e: std::io::Error| Error::io(path.display().to_string(), e);
    let file = File::create(path).map_err(io_err)?;
    let mut w = BufWriter::new(file);
    writeln!(w, "{TRACE_HEADER}").map_err(io_err)?;
    for r in records {
        writeln!(w, "{}", trace_row(r)).map_err(io_err)?;
    }
    w.flush().map_err(io_err)
}

/// Dumps the mesh as `nodes.csv` and `elements.csv` in `dir`.
pub fn write_mesh_csv(dir: &Path, mesh: &Mesh) -> Result<()> {
    let nodes_path = dir.join("nodes.csv");
    let io_err = |p: &Path| {
        let label = p.display().to_string();
        move |e: std::io::Error| Error::io(label.clone(), e)
    };
    let mut w = BufWriter::new(File::create(&nodes_path).map_err(io_err(&nodes_path))?);
    if mesh.dim() == 1 {
        writeln!(w, "node_id,x").map_err(io_err(&nodes_path))?;
        for i in 0..mesh.node_count() {
            writeln!(w, "{i},{}", fmt(mesh.node(i)[0])).map_err(io_err(&nodes_path))?;
        }
    } else {
        writeln!(w, "node_id,x,y").map_err(io_err(&nodes_path))?;
        for i in 0..mesh.node_count() {
            let [x, y] = mesh.node(i);
            writeln!(w, "{i},{},{}", fmt(x), fmt(y)).map_err(io_err(&nodes_path))?;
        }
    }
    w.flush().map_err(io_err(&nodes_path))?;

    let elems_path = dir.join("elements.csv");
    let mut w = BufWriter::new(File::create(&elems_path).map_err(io_err(&elems_path))?);
    if mesh.dim() == 1 {
        writeln!(w, "element_id,n0,n1").map_err(io_err(&elems_path))?;
    } else {
        writeln!(w, "element_id,n0,n1,n2").map_err(io_err(&elems_path))?;
    }
    for k in 0..mesh.element_count() {
        let verts: Vec<String> = mesh.element(k).iter().map(|v| v.to_string()).collect();
        writeln!(w, "{k},{}", verts.join(",")).map_err(io_err(&elems_path))?;
    }
    w.flush().map_err(io_err(&elems_path))
}

/// Append-only run log: one `key=value` record per line, ending with a
/// terminal phase/verdict record.
pub struct RunLog {
    path: String,
    writer: BufWriter<File>,
}

impl RunLog {
    pub fn create(path: &Path) -> Result<RunLog> {
        let file = File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        Ok(RunLog {
            path: path.display().to_string(),
            writer: BufWriter::new(file),
        })
    }

    pub fn record(&mut self, phase: &str, fields: &[(&str, String)]) -> Result<()> {
        let ts = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs_f64())
            .unwrap_or(0.0);
        let mut line = format!("ts={ts:.3} phase={phase}");
        for (k, v) in fields {
            line.push_str(&format!(" {k}={v}"));
        }
        writeln!(self.writer, "{line}").map_err(|e| Error::io(self.path.clone(), e))?;
        self.writer
            .flush()
            .map_err(|e| Error::io(self.path.clone(), e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{build_interval_mesh, build_rectangle_mesh};
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn field_roundtrip_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for mesh in [
            build_interval_mesh(0.0, 1.0, 17).unwrap(),
            build_rectangle_mesh(1.0, 1.0, 3, 4).unwrap(),
        ] {
            let field = DiscreteField::new(
                (0..mesh.node_count())
                    .map(|_| rng.gen_range(-10.0..10.0) * 0.1234567890123456)
                    .collect(),
            )
            .unwrap();
            let path = dir.path().join("f.csv");
            write_field_csv(&path, &mesh, &field).unwrap();
            let back = read_field_csv(&path, &mesh).unwrap();
            assert_eq!(field.values(), back.values());
        }
    }

    #[test]
    fn wrong_node_count_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let mesh = build_interval_mesh(0.0, 1.0, 8).unwrap();
        let field = DiscreteField::constant(&mesh, 1.0);
        let path = dir.path().join("f.csv");
        write_field_csv(&path, &mesh, &field).unwrap();
        let other = build_interval_mesh(0.0, 1.0, 16).unwrap();
        assert!(read_field_csv(&path, &other).is_err());
    }

    #[test]
    fn empty_file_is_parse_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("empty.csv");
        std::fs::write(&path, "").unwrap();
        let mesh = build_interval_mesh(0.0, 1.0, 4).unwrap();
        assert!(matches!(
            read_field_csv(&path, &mesh),
            Err(Error::Parse { .. })
        ));
        std::fs::write(&path, "node_id,x,u\n").unwrap();
        assert!(matches!(
            read_field_csv(&path, &mesh),
            Err(Error::Parse { .. })
        ));
    }

    #[test]
    fn mesh_dump() {
        let dir = tempfile::tempdir().unwrap();
        let mesh = build_rectangle_mesh(1.0, 1.0, 2, 2).unwrap();
        write_mesh_csv(dir.path(), &mesh).unwrap();
        let nodes = std::fs::read_to_string(dir.path().join("nodes.csv")).unwrap();
        assert!(nodes.starts_with("node_id,x,y"));
        assert_eq!(nodes.lines().count(), 1 + mesh.node_count());
        let elems = std::fs::read_to_string(dir.path().join("elements.csv")).unwrap();
        assert_eq!(elems.lines().count(), 1 + mesh.element_count());
    }

    #[test]
    fn run_log_last_record_is_terminal() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.log");
        let mut log = RunLog::create(&path).unwrap();
        log.record("eigen", &[("lambda1", "1.7".into())]).unwrap();
        log.record("done", &[("verdict", "ok".into())]).unwrap();
        drop(log);
        let text = std::fs::read_to_string(&path).unwrap();
        let last = text.lines().last().unwrap();
        assert!(last.contains("phase=done"));
        assert!(last.contains("verdict=ok"));
    }
}
