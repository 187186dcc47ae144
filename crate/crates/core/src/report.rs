//! CSV writers. Floats carry 17 significant digits so that values round-trip.

use crate::error::{Error, Result};
use crate::filtration::FilteredSpace;
use crate::rbsde::Solution;

pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

pub(crate) fn finish_csv(w: csv::Writer<Vec<u8>>) -> Result<String> {
    let bytes = w.into_inner().map_err(|e| Error::Io(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Error::Io(e.to_string()))
}

/// One row per (step, atom): `step,time,atom,outcomes,Y,Z1..Zd,dRplus,dRminus`.
/// `Z` and the reflection increments refer to the step `(k, k+1]` and are
/// empty at the horizon.
pub fn solution_csv(space: &FilteredSpace, sol: &Solution) -> Result<String> {
    let d = sol.z.get(0, 0).len();
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut head: Vec<String> = ["step", "time", "atom", "outcomes", "Y"].map(String::from).to_vec();
    head.extend((1..=d).map(|i| format!("Z{i}")));
    head.push("dRplus".into());
    head.push("dRminus".into());
    w.write_record(&head)?;
    let n = space.steps();
    for k in 0..=n {
        for a in 0..space.n_atoms(k) {
            let w0 = space.representative(k, a);
            let ids: Vec<&str> = space.atom(k, a).iter().map(|&o| space.ids()[o].as_str()).collect();
            let mut rec = vec![
                k.to_string(),
                fmt_f64(space.time(k)),
                a.to_string(),
                ids.join(";"),
                fmt_f64(sol.y.at(k, w0)),
            ];
            if k < n {
                rec.extend(sol.z.get(k, a).iter().map(|&z| fmt_f64(z)));
                rec.push(fmt_f64(sol.r.plus.at(k + 1, w0) - sol.r.plus.at(k, w0)));
                rec.push(fmt_f64(sol.r.minus.at(k + 1, w0) - sol.r.minus.at(k, w0)));
            } else {
                rec.extend(std::iter::repeat_n(String::new(), d + 2));
            }
            w.write_record(&rec)?;
        }
    }
    finish_csv(w)
}

/// FNV-1a digest of a sequence of floats (bit patterns), as 16 hex digits.
pub fn digest<'a>(values: impl IntoIterator<Item = &'a f64>) -> String {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for v in values {
        for b in v.to_bits().to_le_bytes() {
            h ^= u64::from(b);
            h = h.wrapping_mul(0x0100_0000_01b3);
        }
    }
    format!("{h:016x}")
}

/// Generic table with a header and preformatted cells.
pub fn table_csv(header: &[&str], rows: &[Vec<String>]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    finish_csv(w)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn floats_round_trip() {
        for x in [0.1, 1.0 / 3.0, -2.5e-300, 1e300, 0.0] {
            assert_eq!(fmt_f64(x).parse::<f64>().unwrap(), x);
        }
    }
}
