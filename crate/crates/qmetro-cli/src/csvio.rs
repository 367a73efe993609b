//! CSV artifact formats.
//!
//! Every file starts with `#` comment rows describing its layout. Numbers use
//! the shortest representation that parses back to the same `f64`. Complex
//! data is stored as interleaved `re, im` columns.

use crate::error::{CliError, CliResult};
use qmetro::linalg::c;
use qmetro::{CMat, CVec, Povm};

fn num(v: f64) -> String {
    format!("{v:?}")
}

fn writer() -> csv::Writer<Vec<u8>> {
    csv::WriterBuilder::new().has_headers(false).flexible(true).from_writer(Vec::new())
}

fn finish(comment: &[String], w: csv::Writer<Vec<u8>>) -> String {
    let body = String::from_utf8(w.into_inner().expect("in-memory writer")).expect("ascii output");
    let mut out = String::new();
    for line in comment {
        out.push_str("# ");
        out.push_str(line);
        out.push('\n');
    }
    out + &body
}

fn push_row(w: &mut csv::Writer<Vec<u8>>, row: impl IntoIterator<Item = String>) {
    w.write_record(row.into_iter().collect::<Vec<_>>()).expect("in-memory writer");
}

/// Rows of numbers under the given comment lines.
pub fn table(comment: &[&str], rows: &[Vec<f64>]) -> String {
    let mut w = writer();
    for r in rows {
        push_row(&mut w, r.iter().map(|v| num(*v)));
    }
    finish(&comment.iter().map(|s| s.to_string()).collect::<Vec<_>>(), w)
}

/// Objective value per episode, one row each.
pub fn f_csv(values: &[f64]) -> String {
    table(&["objective value per episode"], &values.iter().map(|v| vec![*v]).collect::<Vec<_>>())
}

/// One column of values.
pub fn column(comment: &str, values: &[f64]) -> String {
    table(&[comment], &values.iter().map(|v| vec![*v]).collect::<Vec<_>>())
}

pub fn outcomes_csv(ys: &[usize]) -> String {
    let mut w = writer();
    for y in ys {
        push_row(&mut w, [y.to_string()]);
    }
    finish(&["measurement outcome index per round".into()], w)
}

/// Consecutive `K × Nc` blocks, one per saved episode.
pub fn controls_csv(blocks: &[Vec<Vec<f64>>]) -> String {
    let k = blocks.first().map_or(0, Vec::len);
    let nc = blocks.first().and_then(|b| b.first()).map_or(0, Vec::len);
    let mut w = writer();
    for b in blocks {
        for row in b {
            push_row(&mut w, row.iter().map(|v| num(*v)));
        }
    }
    let comment = vec![format!("control amplitudes: blocks of {k} rows (one per control) x {nc} columns (one per interval)")];
    finish(&comment, w)
}

/// One row per state, amplitudes as interleaved `re, im`.
pub fn states_csv(states: &[CVec]) -> String {
    let mut w = writer();
    for s in states {
        push_row(&mut w, s.iter().flat_map(|z| [num(z.re), num(z.im)]));
    }
    finish(&["state amplitudes per row, re/im interleaved: re0, im0, re1, im1, ...".into()], w)
}

/// Operators as consecutive `d × 2d` blocks, POVMs one after another.
pub fn measurements_csv(povms: &[Povm]) -> String {
    let d = povms.first().map_or(0, Povm::dim);
    let n = povms.first().map_or(0, Povm::len);
    let mut w = writer();
    for m in povms {
        for op in m.ops() {
            for i in 0..d {
                push_row(&mut w, (0..d).flat_map(|j| [num(op[(i, j)].re), num(op[(i, j)].im)]));
            }
        }
    }
    let comment = vec![
        format!("POVM operators: {n} per measurement, each {d} rows of {d} entries"),
        "entries re/im interleaved: re(M_i0), im(M_i0), re(M_i1), im(M_i1), ...".into(),
    ];
    finish(&comment, w)
}

fn records(text: &str) -> CliResult<Vec<Vec<String>>> {
    let mut r = csv::ReaderBuilder::new().has_headers(false).comment(Some(b'#')).flexible(true).from_reader(text.as_bytes());
    r.records()
        .map(|rec| rec.map(|x| x.iter().map(|s| s.trim().to_string()).collect()).map_err(|e| CliError::Parse(e.to_string())))
        .collect()
}

fn parse_num(s: &str) -> CliResult<f64> {
    s.parse::<f64>().map_err(|_| CliError::Parse(format!("`{s}` is not a number")))
}

/// Numeric rows, comments skipped.
pub fn read_table(text: &str) -> CliResult<Vec<Vec<f64>>> {
    records(text)?.iter().map(|r| r.iter().map(|s| parse_num(s)).collect()).collect()
}

pub fn read_outcomes(text: &str) -> CliResult<Vec<usize>> {
    records(text)?
        .iter()
        .map(|r| match r.as_slice() {
            [s] => s.parse::<usize>().map_err(|_| CliError::Parse(format!("`{s}` is not an outcome index"))),
            _ => Err(CliError::Parse("outcome files have one column".into())),
        })
        .collect()
}

/// Splits a controls file into blocks of `k` rows.
pub fn read_controls(text: &str, k: usize) -> CliResult<Vec<Vec<Vec<f64>>>> {
    let rows = read_table(text)?;
    if k == 0 || rows.len() % k != 0 {
        return Err(CliError::Parse(format!("{} rows do not split into blocks of {k}", rows.len())));
    }
    Ok(rows.chunks(k).map(<[_]>::to_vec).collect())
}

pub fn read_states(text: &str) -> CliResult<Vec<CVec>> {
    read_table(text)?
        .into_iter()
        .map(|r| {
            if r.len() % 2 != 0 {
                return Err(CliError::Parse("state rows need an even number of columns".into()));
            }
            Ok(CVec::from_iterator(r.len() / 2, r.chunks(2).map(|p| c(p[0], p[1]))))
        })
        .collect()
}

/// All operators in file order; `d` is the operator dimension.
pub fn read_operators(text: &str, d: usize) -> CliResult<Vec<CMat>> {
    let rows = read_table(text)?;
    if d == 0 || rows.len() % d != 0 || rows.iter().any(|r| r.len() != 2 * d) {
        return Err(CliError::Parse(format!("operator blocks must be {d} rows of {} columns", 2 * d)));
    }
    Ok(rows.chunks(d).map(|b| CMat::from_fn(d, d, |i, j| c(b[i][2 * j], b[i][2 * j + 1]))).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::collection::vec;
    use proptest::prelude::*;
    use qmetro::models::{pm_povm, xx_povm};

    #[test]
    fn comment_rows_are_skipped() {
        let text = f_csv(&[1.0, 0.25]);
        assert!(text.starts_with("# "));
        assert_eq!(read_table(&text).unwrap(), vec![vec![1.0], vec![0.25]]);
    }

    #[test]
    fn measurements_round_trip() {
        let text = measurements_csv(&[pm_povm()]);
        let ops = read_operators(&text, 2).unwrap();
        assert_eq!(ops, pm_povm().ops().to_vec());
        let ops = read_operators(&measurements_csv(&[xx_povm()]), 4).unwrap();
        assert_eq!(ops, xx_povm().ops().to_vec());
    }

    #[test]
    fn malformed_rows_are_errors() {
        assert!(read_controls("1,2\n3,4\n5,6\n", 2).is_err());
        assert!(read_states("1,2,3\n").is_err());
        assert!(read_outcomes("1,2\n").is_err());
    }

    proptest! {
        #[test]
        fn controls_round_trip((k, data) in (1usize..4, 1usize..6, 1usize..3).prop_flat_map(|(k, nc, b)| {
            (Just(k), vec(vec(vec(-2.0f64..2.0, nc), k), b))
        })) {
            prop_assert_eq!(read_controls(&controls_csv(&data), k).unwrap(), data);
        }

        #[test]
        fn states_round_trip(re in vec(-1e3f64..1e3, 1..6), im_scale in -1e-9f64..1e9) {
            let psi = CVec::from_iterator(re.len(), re.iter().map(|r| c(*r, r * im_scale)));
            prop_assert_eq!(read_states(&states_csv(&[psi.clone()])).unwrap(), vec![psi]);
        }
    }
}
