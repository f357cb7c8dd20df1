//! CSV rendering: fixed column order, numbers as plain decimals with nine
//! significant digits.

use std::path::Path;

use crate::error::Result;

/// Plain decimal with nine significant digits, e.g. `0.000200000000` or
/// `12345.6789`. Zero is `0`.
pub fn fmt9(x: f64) -> String {
    if x == 0.0 {
        return "0".into();
    }
    if !x.is_finite() {
        return format!("{x}");
    }
    // Let the formatter do the rounding, then move the decimal point.
    let sci = format!("{:.8e}", x.abs());
    let (mantissa, exp) = sci.split_once('e').expect("scientific format");
    let exp: i32 = exp.parse().expect("exponent");
    let digits: String = mantissa.chars().filter(|c| *c != '.').collect();
    let sign = if x < 0.0 { "-" } else { "" };
    let body = if exp < 0 {
        format!("0.{}{}", "0".repeat((-exp - 1) as usize), digits)
    } else if exp >= 8 {
        format!("{}{}", digits, "0".repeat((exp - 8) as usize))
    } else {
        let (int, frac) = digits.split_at(exp as usize + 1);
        format!("{int}.{frac}")
    };
    format!("{sign}{body}")
}

/// Renders `header` and `rows` as CSV text.
pub fn render(header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for r in rows {
        w.write_record(&r)?;
    }
    let bytes = w.into_inner().map_err(|e| crate::Error::Io(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| crate::Error::Io(e.to_string()))
}

/// Reads a CSV with a header into string records, checking the header.
pub fn read(path: &Path, header: &[&str]) -> Result<Vec<csv::StringRecord>> {
    let mut r = csv::Reader::from_path(path)?;
    let got: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    if got != header {
        return Err(crate::Error::Validation(format!(
            "{}: expected columns {:?}, found {:?}",
            path.display(),
            header,
            got
        )));
    }
    r.records().map(|x| x.map_err(Into::into)).collect()
}

pub fn parse_f64(rec: &csv::StringRecord, i: usize, path: &Path) -> Result<f64> {
    rec.get(i)
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| crate::Error::Validation(format!("{}: bad number in column {i}: {:?}", path.display(), rec)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn renders() {
        assert_eq!(fmt9(0.0), "0");
        assert_eq!(fmt9(-0.0), "0");
        assert_eq!(fmt9(1.0), "1.00000000");
        assert_eq!(fmt9(2e-4), "0.000200000000");
        assert_eq!(fmt9(-0.0125), "-0.0125000000");
        assert_eq!(fmt9(123456789.0), "123456789");
        assert_eq!(fmt9(1.5e10), "15000000000");
        assert_eq!(fmt9(9.9999999999), "10.0000000");
        assert_eq!(fmt9(86400.0), "86400.0000");
    }

    proptest! {
        #[test]
        fn nine_significant_digits(x in -1e12f64..1e12) {
            prop_assume!(x.abs() > 1e-12);
            let s = fmt9(x);
            let digits: String = s.chars().filter(|c| c.is_ascii_digit()).collect();
            let sig = digits.trim_start_matches('0');
            if x.abs() < 1e8 {
                prop_assert_eq!(sig.len(), 9);
            }
            prop_assert!(!s.contains('e'));
            let back: f64 = s.parse().unwrap();
            prop_assert!((back - x).abs() <= 5e-9 * x.abs());
        }
    }
}
