//! CSV readers and writers for histograms, kernels, matrices, chains, traces,
//! bands and coverage reports.
//!
//! Floats are written with Rust's shortest round-trip formatting, so equal
//! values always produce identical bytes.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use nalgebra::DMatrix;

use crate::empirical_bayes::McemTrace;
use crate::error::{Result, UnfoldError};
use crate::forward::TabulatedKernel;
use crate::harness::CoverageReport;
use crate::inference::PosteriorChain;
use crate::simulate::BinnedCounts;
use crate::uncertainty::IntervalBand;

fn csv_error(e: csv::Error) -> UnfoldError {
    let row = e.position().map_or(0, |p| p.line() as usize);
    UnfoldError::Csv {
        row,
        message: e.to_string(),
    }
}

fn write_err(e: csv::Error) -> UnfoldError {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => UnfoldError::Io(io),
        other => UnfoldError::Csv {
            row: 0,
            message: format!("{other:?}"),
        },
    }
}

/// Reads rows after checking the header; yields `(line, fields)`.
fn read_rows<R: Read>(reader: R, header: &[&str]) -> Result<Vec<(usize, Vec<String>)>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let found: Vec<String> = rdr.headers().map_err(csv_error)?.iter().map(str::to_string).collect();
    if found != header {
        return Err(UnfoldError::Csv {
            row: 1,
            message: format!("expected header `{}`, found `{}`", header.join(","), found.join(",")),
        });
    }
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(csv_error)?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        rows.push((line, rec.iter().map(str::to_string).collect()));
    }
    Ok(rows)
}

fn parse<T: std::str::FromStr>(line: usize, field: &str, name: &str) -> Result<T> {
    field.parse().map_err(|_| UnfoldError::Csv {
        row: line,
        message: format!("cannot parse {name} from `{field}`"),
    })
}

fn writer<W: Write>(w: W) -> csv::Writer<W> {
    csv::WriterBuilder::new().from_writer(w)
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

/// `bin_lo,bin_hi,count`
pub fn write_counts<W: Write>(w: W, y: &BinnedCounts) -> Result<()> {
    let mut out = writer(w);
    out.write_record(["bin_lo", "bin_hi", "count"]).map_err(write_err)?;
    for (e, c) in y.bin_edges().windows(2).zip(y.counts()) {
        out.write_record([e[0].to_string(), e[1].to_string(), c.to_string()])
            .map_err(write_err)?;
    }
    out.flush()?;
    Ok(())
}

/// Reads a histogram; adjacent bins must share edges.
pub fn read_counts<R: Read>(r: R) -> Result<BinnedCounts> {
    let rows = read_rows(r, &["bin_lo", "bin_hi", "count"])?;
    if rows.is_empty() {
        return Err(UnfoldError::Csv {
            row: 1,
            message: "no bins".into(),
        });
    }
    let mut edges = Vec::with_capacity(rows.len() + 1);
    let mut counts = Vec::with_capacity(rows.len());
    for (line, f) in &rows {
        let lo: f64 = parse(*line, &f[0], "bin_lo")?;
        let hi: f64 = parse(*line, &f[1], "bin_hi")?;
        let count: u64 = parse(*line, &f[2], "count")?;
        match edges.last() {
            None => edges.push(lo),
            Some(&prev) if prev != lo => {
                return Err(UnfoldError::Csv {
                    row: *line,
                    message: format!("bin starts at {lo} but previous bin ends at {prev}"),
                })
            }
            _ => {}
        }
        if !(hi > lo) {
            return Err(UnfoldError::Csv {
                row: *line,
                message: format!("bin_hi {hi} must exceed bin_lo {lo}"),
            });
        }
        edges.push(hi);
        counts.push(count);
    }
    BinnedCounts::new(counts, edges)
}

pub fn write_counts_file(path: &Path, y: &BinnedCounts) -> Result<()> {
    write_counts(create(path)?, y)
}

pub fn read_counts_file(path: &Path) -> Result<BinnedCounts> {
    read_counts(File::open(path)?)
}

/// `t,s,value` on the full grid.
pub fn write_kernel<W: Write>(w: W, k: &TabulatedKernel) -> Result<()> {
    let mut out = writer(w);
    out.write_record(["t", "s", "value"]).map_err(write_err)?;
    for (it, t) in k.t_nodes().iter().enumerate() {
        for (is, s) in k.s_nodes().iter().enumerate() {
            out.write_record([t.to_string(), s.to_string(), k.value_at(it, is).to_string()])
                .map_err(write_err)?;
        }
    }
    out.flush()?;
    Ok(())
}

/// Reads a tabulated kernel; every `(t, s)` grid pair must appear exactly once.
pub fn read_kernel<R: Read>(r: R) -> Result<TabulatedKernel> {
    let rows = read_rows(r, &["t", "s", "value"])?;
    let mut triples = Vec::with_capacity(rows.len());
    for (line, f) in &rows {
        let t: f64 = parse(*line, &f[0], "t")?;
        let s: f64 = parse(*line, &f[1], "s")?;
        let v: f64 = parse(*line, &f[2], "value")?;
        triples.push((*line, t, s, v));
    }
    let mut ts: Vec<f64> = triples.iter().map(|x| x.1).collect();
    let mut ss: Vec<f64> = triples.iter().map(|x| x.2).collect();
    for v in [&mut ts, &mut ss] {
        v.sort_by(f64::total_cmp);
        v.dedup();
    }
    let mut values = vec![f64::NAN; ts.len() * ss.len()];
    for (line, t, s, v) in triples {
        let it = ts.partition_point(|&x| x < t);
        let is = ss.partition_point(|&x| x < s);
        let slot = &mut values[it * ss.len() + is];
        if !slot.is_nan() {
            return Err(UnfoldError::Csv {
                row: line,
                message: format!("duplicate grid point ({t}, {s})"),
            });
        }
        *slot = v;
    }
    if values.iter().any(|v| v.is_nan()) {
        return Err(UnfoldError::Csv {
            row: 0,
            message: "kernel grid is incomplete".into(),
        });
    }
    TabulatedKernel::new(ts, ss, values)
}

/// `i,j,value` with zero-based indices.
pub fn write_matrix<W: Write>(w: W, m: &DMatrix<f64>) -> Result<()> {
    let mut out = writer(w);
    out.write_record(["i", "j", "value"]).map_err(write_err)?;
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            out.write_record([i.to_string(), j.to_string(), m[(i, j)].to_string()])
                .map_err(write_err)?;
        }
    }
    out.flush()?;
    Ok(())
}

pub fn read_matrix<R: Read>(r: R) -> Result<DMatrix<f64>> {
    let rows = read_rows(r, &["i", "j", "value"])?;
    let mut entries = Vec::with_capacity(rows.len());
    for (line, f) in &rows {
        let i: usize = parse(*line, &f[0], "i")?;
        let j: usize = parse(*line, &f[1], "j")?;
        let v: f64 = parse(*line, &f[2], "value")?;
        entries.push((i, j, v));
    }
    let nr = entries.iter().map(|e| e.0 + 1).max().unwrap_or(0);
    let nc = entries.iter().map(|e| e.1 + 1).max().unwrap_or(0);
    let mut m = DMatrix::zeros(nr, nc);
    for (i, j, v) in entries {
        m[(i, j)] = v;
    }
    Ok(m)
}

/// `draw_index,beta_1,...,beta_p`
pub fn write_chain<W: Write>(w: W, chain: &PosteriorChain) -> Result<()> {
    let mut out = writer(w);
    let mut header = vec!["draw_index".to_string()];
    header.extend((1..=chain.dim()).map(|j| format!("beta_{j}")));
    out.write_record(&header).map_err(write_err)?;
    for (s, d) in chain.draws().enumerate() {
        let mut rec = vec![s.to_string()];
        rec.extend(d.iter().map(f64::to_string));
        out.write_record(&rec).map_err(write_err)?;
    }
    out.flush()?;
    Ok(())
}

/// `iter,delta,mean_acceptance`; row `i` holds `delta^(i)` and the mean
/// acceptance of the chain sampled at it (empty for the final delta).
pub fn write_trace<W: Write>(w: W, trace: &McemTrace) -> Result<()> {
    let mut out = writer(w);
    out.write_record(["iter", "delta", "mean_acceptance"]).map_err(write_err)?;
    for (i, d) in trace.deltas.iter().enumerate() {
        let acc = trace
            .iterations
            .get(i)
            .map_or(String::new(), |it| it.mean_acceptance().to_string());
        out.write_record([i.to_string(), d.to_string(), acc]).map_err(write_err)?;
    }
    out.flush()?;
    Ok(())
}

/// `s,lower,point,bc_point,upper,method,alpha`; several bands may share a file.
pub fn write_bands<W: Write>(w: W, bands: &[IntervalBand]) -> Result<()> {
    let mut out = writer(w);
    out.write_record(["s", "lower", "point", "bc_point", "upper", "method", "alpha"])
        .map_err(write_err)?;
    for b in bands {
        for g in 0..b.grid.len() {
            out.write_record([
                b.grid[g].to_string(),
                b.lower[g].to_string(),
                b.point[g].to_string(),
                b.bc_point[g].to_string(),
                b.upper[g].to_string(),
                b.method.to_string(),
                b.alpha.to_string(),
            ])
            .map_err(write_err)?;
        }
    }
    out.flush()?;
    Ok(())
}

/// `s,coverage,mean_width,method,n_rep`
pub fn write_coverage<W: Write>(w: W, reports: &[CoverageReport]) -> Result<()> {
    let mut out = writer(w);
    out.write_record(["s", "coverage", "mean_width", "method", "n_rep"])
        .map_err(write_err)?;
    for r in reports {
        let label = r.label();
        for g in 0..r.grid.len() {
            out.write_record([
                r.grid[g].to_string(),
                r.coverage[g].to_string(),
                r.mean_width[g].to_string(),
                label.clone(),
                r.n_rep.to_string(),
            ])
            .map_err(write_err)?;
        }
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn counts_round_trip() {
        let y = BinnedCounts::new(vec![3, 0, 17], vec![-1.0, 0.25, 0.5, 2.0]).unwrap();
        let mut buf = Vec::new();
        write_counts(&mut buf, &y).unwrap();
        assert_eq!(
            String::from_utf8(buf.clone()).unwrap(),
            "bin_lo,bin_hi,count\n-1,0.25,3\n0.25,0.5,0\n0.5,2,17\n"
        );
        assert_eq!(read_counts(buf.as_slice()).unwrap(), y);
    }

    #[test]
    fn corrupt_row_is_named() {
        let text = "bin_lo,bin_hi,count\n0,1,3\n1,2,x\n2,3,4\n";
        match read_counts(text.as_bytes()) {
            Err(UnfoldError::Csv { row, message }) => {
                assert_eq!(row, 3);
                assert!(message.contains("count"));
            }
            other => panic!("unexpected {other:?}"),
        }
        let gap = "bin_lo,bin_hi,count\n0,1,3\n1.5,2,1\n";
        assert!(matches!(read_counts(gap.as_bytes()), Err(UnfoldError::Csv { row: 3, .. })));
        let header = "lo,hi,count\n0,1,3\n";
        assert!(matches!(read_counts(header.as_bytes()), Err(UnfoldError::Csv { row: 1, .. })));
        let short = "bin_lo,bin_hi,count\n0,1\n";
        assert!(matches!(read_counts(short.as_bytes()), Err(UnfoldError::Csv { row: 2, .. })));
    }

    #[test]
    fn kernel_and_matrix_round_trip() {
        let k = TabulatedKernel::new(vec![0.0, 1.0, 2.0], vec![-1.0, 1.0], vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6]).unwrap();
        let mut buf = Vec::new();
        write_kernel(&mut buf, &k).unwrap();
        assert_eq!(read_kernel(buf.as_slice()).unwrap(), k);

        let m = DMatrix::from_row_slice(2, 3, &[1.0, 2.5, -3.0, 1e-300, 0.0, 7.0]);
        let mut buf = Vec::new();
        write_matrix(&mut buf, &m).unwrap();
        assert_eq!(read_matrix(buf.as_slice()).unwrap(), m);
    }

    #[test]
    fn chain_header() {
        let c = PosteriorChain::from_draws(&[vec![1.0, 2.0], vec![0.5, 0.0]]).unwrap();
        let mut buf = Vec::new();
        write_chain(&mut buf, &c).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "draw_index,beta_1,beta_2\n0,1,2\n1,0.5,0\n"
        );
    }
}
