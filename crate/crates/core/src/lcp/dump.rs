use super::{LcpError, MlcpProblem};
use std::io::Write;

/// Writes `M` in MatrixMarket coordinate format (1-based indices), followed
/// by `q` as a dense array block.
pub fn write_matrix_market<W: Write>(p: &MlcpProblem, mut out: W) -> Result<(), LcpError> {
    let m = p.matrix();
    writeln!(out, "%%MatrixMarket matrix coordinate real general")?;
    writeln!(out, "% M of w = Mz + q; q follows as an array block")?;
    writeln!(out, "{} {} {}", m.nrows(), m.ncols(), m.nnz())?;
    for (i, j, v) in m.triplets() {
        writeln!(out, "{} {} {:.17e}", i + 1, j + 1, v)?;
    }
    writeln!(out, "%%MatrixMarket matrix array real general")?;
    writeln!(out, "{} 1", p.n())?;
    for v in p.q() {
        writeln!(out, "{v:.17e}")?;
    }
    Ok(())
}

/// Writes the variable map (id -> symbol/player/period/class/partner/sign) as JSON.
pub fn write_variable_map<W: Write>(p: &MlcpProblem, out: W) -> Result<(), LcpError> {
    serde_json::to_writer_pretty(out, p.vars()).map_err(|e| LcpError::Io(e.into()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lcp::MlcpProblem;

    #[test]
    fn dump_lists_entries_and_q() {
        let p = MlcpProblem::from_dense(&[vec![2.0, 0.0], vec![-1.0, 1.0]], vec![1.0, -3.0]).unwrap();
        let mut buf = Vec::new();
        write_matrix_market(&p, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.contains("2 2 3"));
        assert!(text.contains("2 1 -1.0"));
        let mut js = Vec::new();
        write_variable_map(&p, &mut js).unwrap();
        let v: serde_json::Value = serde_json::from_slice(&js).unwrap();
        assert_eq!(v.as_array().unwrap().len(), 2);
        assert_eq!(v[1]["sign"], "Nonnegative");
    }
}
