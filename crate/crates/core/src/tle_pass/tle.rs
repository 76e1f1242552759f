//! Two-line element set text format.

use std::fmt;

use chrono::{DateTime, Datelike, Duration, NaiveDate, TimeZone, Utc};

use crate::error::{Error, Result};

const LINE_LEN: usize = 69;

/// Which of the two element lines an error or checksum refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TleLine {
    One,
    Two,
}

impl TleLine {
    fn number(self) -> usize {
        match self {
            TleLine::One => 1,
            TleLine::Two => 2,
        }
    }
}

impl fmt::Display for TleLine {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "line {}", self.number())
    }
}

/// Mantissa/exponent field with an implied leading decimal point, e.g.
/// `-11606-4` = −0.11606e−4.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ImpliedDecimal {
    pub mantissa: i32,
    pub exponent: i8,
    /// Preserves the `-0` vs `+0` spelling of a zero exponent.
    pub negative_zero_exponent: bool,
}

impl ImpliedDecimal {
    pub fn zero() -> Self {
        Self { mantissa: 0, exponent: 0, negative_zero_exponent: true }
    }

    pub fn value(&self) -> f64 {
        self.mantissa as f64 * 1e-5 * 10f64.powi(self.exponent as i32)
    }

    fn parse(field: &str, line: usize, col: usize) -> Result<Self> {
        let b = field.as_bytes();
        if b.len() != 8 {
            return Err(Error::parse("TLE", line, col, "exponent field must be 8 characters"));
        }
        let sign = match b[0] {
            b' ' | b'+' => 1,
            b'-' => -1,
            _ => return Err(Error::parse("TLE", line, col, format!("bad sign `{}`", b[0] as char))),
        };
        let digits = &field[1..6];
        let mantissa: i32 = parse_digits(digits, line, col + 1)?;
        let exp_neg = match b[6] {
            b'-' => true,
            b'+' | b' ' => false,
            _ => return Err(Error::parse("TLE", line, col + 6, format!("bad exponent sign `{}`", b[6] as char))),
        };
        if !b[7].is_ascii_digit() {
            return Err(Error::parse("TLE", line, col + 7, "exponent must be a digit"));
        }
        let e = (b[7] - b'0') as i8;
        Ok(Self {
            mantissa: sign * mantissa,
            exponent: if exp_neg { -e } else { e },
            negative_zero_exponent: exp_neg && e == 0,
        })
    }

    fn format(&self) -> String {
        let sign = if self.mantissa < 0 { '-' } else { ' ' };
        let exp_sign = if self.exponent < 0 || (self.exponent == 0 && self.negative_zero_exponent) { '-' } else { '+' };
        format!("{sign}{:05}{exp_sign}{}", self.mantissa.unsigned_abs(), self.exponent.unsigned_abs())
    }
}

/// A decoded two-line element set.
#[derive(Debug, Clone, PartialEq)]
pub struct TleRecord {
    pub name: Option<String>,
    pub satellite_number: u32,
    pub classification: char,
    pub international_designator: String,
    pub epoch_year: u8,
    pub epoch_day: f64,
    /// First derivative of mean motion / 2, rev/day².
    pub mean_motion_dot: f64,
    /// Second derivative of mean motion / 6, rev/day³.
    pub mean_motion_ddot: ImpliedDecimal,
    pub bstar: ImpliedDecimal,
    pub ephemeris_type: char,
    pub element_set_number: u32,
    pub inclination_deg: f64,
    pub raan_deg: f64,
    /// Seven implied-decimal digits.
    pub eccentricity_digits: u32,
    pub arg_perigee_deg: f64,
    pub mean_anomaly_deg: f64,
    pub mean_motion_rev_per_day: f64,
    pub revolution_number: u32,
}

/// `(sum of digits + number of '-') mod 10` over the first 68 characters.
pub fn checksum(line: &str) -> u8 {
    let sum: u32 = line
        .bytes()
        .take(LINE_LEN - 1)
        .map(|b| match b {
            b'0'..=b'9' => (b - b'0') as u32,
            b'-' => 1,
            _ => 0,
        })
        .sum();
    (sum % 10) as u8
}

fn parse_digits<T: std::str::FromStr>(s: &str, line: usize, col: usize) -> Result<T> {
    let t = s.trim();
    if t.is_empty() || !t.bytes().all(|b| b.is_ascii_digit()) {
        return Err(Error::parse("TLE", line, col, format!("expected digits, found `{s}`")));
    }
    t.parse().map_err(|_| Error::parse("TLE", line, col, format!("number out of range `{s}`")))
}

fn parse_float(s: &str, line: usize, col: usize) -> Result<f64> {
    let t = s.trim();
    let v: f64 = t.parse().map_err(|_| Error::parse("TLE", line, col, format!("expected a number, found `{s}`")))?;
    if !v.is_finite() {
        return Err(Error::parse("TLE", line, col, format!("non-finite number `{s}`")));
    }
    Ok(v)
}

/// 1-based inclusive column range.
fn field(line: &str, from: usize, to: usize) -> &str {
    &line[from - 1..to]
}

fn check_line(text: &str, which: TleLine, line_no: usize) -> Result<()> {
    if !text.is_ascii() {
        return Err(Error::parse("TLE", line_no, 1, format!("{which} contains non-ASCII characters")));
    }
    if text.len() != LINE_LEN {
        return Err(Error::parse(
            "TLE",
            line_no,
            text.len().min(LINE_LEN) + 1,
            format!("{which} must be {LINE_LEN} characters, found {}", text.len()),
        ));
    }
    let expected = (b'0' + which.number() as u8) as char;
    if !text.starts_with(expected) {
        return Err(Error::parse("TLE", line_no, 1, format!("{which} must start with `{expected}`")));
    }
    let last = text.as_bytes()[LINE_LEN - 1];
    if !last.is_ascii_digit() {
        return Err(Error::parse("TLE", line_no, LINE_LEN, format!("{which} checksum is not a digit")));
    }
    let want = checksum(text);
    if last - b'0' != want {
        return Err(Error::parse(
            "TLE",
            line_no,
            LINE_LEN,
            format!("{which} checksum mismatch: found {}, computed {want}", last - b'0'),
        ));
    }
    Ok(())
}

/// Parse two element lines, optionally preceded by a name line.
pub fn parse_tle(text: &str) -> Result<TleRecord> {
    let lines: Vec<(usize, &str)> = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim_end_matches(['\r', '\n'])))
        .filter(|(_, l)| !l.trim().is_empty())
        .collect();
    let (name, l1, l2) = match lines.as_slice() {
        [a, b] => (None, *a, *b),
        [n, a, b] => (Some(n.1.trim().trim_start_matches("0 ").to_string()), *a, *b),
        _ => return Err(Error::parse("TLE", 1, 1, format!("expected 2 or 3 non-empty lines, found {}", lines.len()))),
    };
    let (n1, t1) = l1;
    let (n2, t2) = l2;
    check_line(t1, TleLine::One, n1)?;
    check_line(t2, TleLine::Two, n2)?;

    let satellite_number: u32 = parse_digits(field(t1, 3, 7), n1, 3)?;
    let sat2: u32 = parse_digits(field(t2, 3, 7), n2, 3)?;
    if sat2 != satellite_number {
        return Err(Error::parse("TLE", n2, 3, "satellite number differs between lines"));
    }
    let classification = t1.as_bytes()[7] as char;
    let international_designator = field(t1, 10, 17).trim_end().to_string();
    let epoch_year: u8 = parse_digits(field(t1, 19, 20), n1, 19)?;
    let epoch_day = parse_float(field(t1, 21, 32), n1, 21)?;
    if !(1.0..367.0).contains(&epoch_day) {
        return Err(Error::parse("TLE", n1, 21, format!("epoch day {epoch_day} out of range")));
    }
    let mean_motion_dot = parse_float(
        &field(t1, 34, 43).replacen(" .", "0.", 1).replacen("-.", "-0.", 1).replacen("+.", "0.", 1),
        n1,
        34,
    )?;
    let mean_motion_ddot = ImpliedDecimal::parse(field(t1, 45, 52), n1, 45)?;
    let bstar = ImpliedDecimal::parse(field(t1, 54, 61), n1, 54)?;
    let ephemeris_type = t1.as_bytes()[62] as char;
    let element_set_number: u32 = parse_digits(field(t1, 65, 68), n1, 65)?;

    let inclination_deg = parse_float(field(t2, 9, 16), n2, 9)?;
    let raan_deg = parse_float(field(t2, 18, 25), n2, 18)?;
    let eccentricity_digits: u32 = parse_digits(field(t2, 27, 33), n2, 27)?;
    let arg_perigee_deg = parse_float(field(t2, 35, 42), n2, 35)?;
    let mean_anomaly_deg = parse_float(field(t2, 44, 51), n2, 44)?;
    let mean_motion_rev_per_day = parse_float(field(t2, 53, 63), n2, 53)?;
    let revolution_number: u32 = parse_digits(field(t2, 64, 68), n2, 64)?;

    if !(0.0..=180.0).contains(&inclination_deg) {
        return Err(Error::parse("TLE", n2, 9, "inclination out of [0, 180]"));
    }
    if !(mean_motion_rev_per_day > 0.0 && mean_motion_rev_per_day < 20.0) {
        return Err(Error::parse("TLE", n2, 53, "mean motion must lie in (0, 20) rev/day"));
    }

    Ok(TleRecord {
        name,
        satellite_number,
        classification,
        international_designator,
        epoch_year,
        epoch_day,
        mean_motion_dot,
        mean_motion_ddot,
        bstar,
        ephemeris_type,
        element_set_number,
        inclination_deg,
        raan_deg,
        eccentricity_digits,
        arg_perigee_deg,
        mean_anomaly_deg,
        mean_motion_rev_per_day,
        revolution_number,
    })
}

fn with_checksum(mut body: String) -> String {
    debug_assert_eq!(body.len(), LINE_LEN - 1, "{body:?}");
    let c = checksum(&body);
    body.push((b'0' + c) as char);
    body
}

fn format_small_decimal(v: f64) -> String {
    let sign = if v < 0.0 { '-' } else { ' ' };
    let digits = format!("{:.8}", v.abs());
    format!("{sign}{}", digits.trim_start_matches('0'))
}

/// Emit the record in canonical column layout with fresh checksums.
pub fn format_tle(rec: &TleRecord) -> String {
    let l1 = format!(
        "1 {:05}{} {:<8} {:02}{:012.8} {} {} {} {} {:>4}",
        rec.satellite_number,
        rec.classification,
        rec.international_designator,
        rec.epoch_year,
        rec.epoch_day,
        format_small_decimal(rec.mean_motion_dot),
        rec.mean_motion_ddot.format(),
        rec.bstar.format(),
        rec.ephemeris_type,
        rec.element_set_number,
    );
    let l2 = format!(
        "2 {:05} {:8.4} {:8.4} {:07} {:8.4} {:8.4} {:11.8}{:>5}",
        rec.satellite_number,
        rec.inclination_deg,
        rec.raan_deg,
        rec.eccentricity_digits,
        rec.arg_perigee_deg,
        rec.mean_anomaly_deg,
        rec.mean_motion_rev_per_day,
        rec.revolution_number,
    );
    let mut out = String::new();
    if let Some(n) = &rec.name {
        out.push_str(n);
        out.push('\n');
    }
    out.push_str(&with_checksum(l1));
    out.push('\n');
    out.push_str(&with_checksum(l2));
    out.push('\n');
    out
}

impl TleRecord {
    pub fn eccentricity(&self) -> f64 {
        self.eccentricity_digits as f64 * 1e-7
    }

    /// Epoch as a UTC instant (two-digit years 57–99 map to 19xx).
    pub fn epoch(&self) -> DateTime<Utc> {
        let year = if self.epoch_year >= 57 { 1900 } else { 2000 } + self.epoch_year as i32;
        let start = Utc.from_utc_datetime(
            &NaiveDate::from_ymd_opt(year, 1, 1).expect("valid year").and_hms_opt(0, 0, 0).expect("midnight"),
        );
        let nanos = ((self.epoch_day - 1.0) * 86_400e9).round() as i64;
        start + Duration::nanoseconds(nanos)
    }

    /// Build a record from Keplerian elements (angles in degrees).
    #[allow(clippy::too_many_arguments)]
    pub fn from_elements(
        name: Option<&str>,
        satellite_number: u32,
        epoch: DateTime<Utc>,
        inclination_deg: f64,
        raan_deg: f64,
        eccentricity: f64,
        arg_perigee_deg: f64,
        mean_anomaly_deg: f64,
        mean_motion_rev_per_day: f64,
    ) -> Result<Self> {
        if !(0.0..1.0).contains(&eccentricity) {
            return Err(Error::input("eccentricity must lie in [0, 1)"));
        }
        if !(mean_motion_rev_per_day > 0.0 && mean_motion_rev_per_day < 20.0) {
            return Err(Error::input("mean motion must lie in (0, 20) rev/day"));
        }
        let year = epoch.year();
        if !(1957..2057).contains(&year) {
            return Err(Error::input("epoch year outside the two-digit TLE range"));
        }
        let jan1 = Utc.with_ymd_and_hms(year, 1, 1, 0, 0, 0).single().expect("valid");
        let day = 1.0 + (epoch - jan1).num_nanoseconds().unwrap_or(0) as f64 / 86_400e9;
        let round = |v: f64, d: i32| (v * 10f64.powi(d)).round() / 10f64.powi(d);
        let rec = Self {
            name: name.map(str::to_string),
            satellite_number,
            classification: 'U',
            international_designator: String::new(),
            epoch_year: (year % 100) as u8,
            epoch_day: round(day, 8),
            mean_motion_dot: 0.0,
            mean_motion_ddot: ImpliedDecimal::zero(),
            bstar: ImpliedDecimal::zero(),
            ephemeris_type: '0',
            element_set_number: 999,
            inclination_deg: round(inclination_deg, 4),
            raan_deg: round(raan_deg.rem_euclid(360.0), 4),
            eccentricity_digits: (eccentricity * 1e7).round() as u32,
            arg_perigee_deg: round(arg_perigee_deg.rem_euclid(360.0), 4),
            mean_anomaly_deg: round(mean_anomaly_deg.rem_euclid(360.0), 4),
            mean_motion_rev_per_day: round(mean_motion_rev_per_day, 8),
            revolution_number: 1,
        };
        // canonicalize through the text form so the record matches what a file holds
        parse_tle(&format_tle(&rec))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) const ISS: &str = "ISS (ZARYA)
1 25544U 98067A   08264.51782528 -.00002182  00000-0 -11606-4 0  2927
2 25544  51.6416 247.4627 0006703 130.5360 325.0288 15.72125391563537
";

    #[test]
    fn parses_known_record() {
        let r = parse_tle(ISS).unwrap();
        assert_eq!(r.name.as_deref(), Some("ISS (ZARYA)"));
        assert_eq!(r.satellite_number, 25544);
        assert_eq!(r.international_designator, "98067A");
        assert_eq!(r.epoch_year, 8);
        assert!((r.epoch_day - 264.51782528).abs() < 1e-12);
        assert!((r.mean_motion_dot + 0.00002182).abs() < 1e-15);
        assert!((r.bstar.value() + 0.11606e-4).abs() < 1e-15);
        assert_eq!(r.mean_motion_ddot.value(), 0.0);
        assert!((r.eccentricity() - 0.0006703).abs() < 1e-15);
        assert!((r.inclination_deg - 51.6416).abs() < 1e-12);
        assert_eq!(r.revolution_number, 56353);
        assert_eq!(r.element_set_number, 292);
        assert_eq!(r.epoch().format("%Y-%m-%d").to_string(), "2008-09-20");
    }

    #[test]
    fn round_trip_is_byte_identical() {
        let r = parse_tle(ISS).unwrap();
        assert_eq!(format_tle(&r), ISS);
        let two_line: String = ISS.lines().skip(1).map(|l| format!("{l}\n")).collect();
        assert_eq!(format_tle(&parse_tle(&two_line).unwrap()), two_line);
    }

    #[test]
    fn checksum_error_names_the_line() {
        let bad = ISS.replace("0  2927", "0  2928");
        match parse_tle(&bad).unwrap_err() {
            Error::Parse { line, column, message, .. } => {
                assert_eq!(line, 2);
                assert_eq!(column, 69);
                assert!(message.contains("line 1"), "{message}");
            }
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn short_line_rejected() {
        let bad = ISS.replace("0  2927", "0 2927");
        let err = parse_tle(&bad).unwrap_err();
        assert!(err.to_string().contains("69 characters"), "{err}");
    }

    #[test]
    fn non_numeric_field_reports_column() {
        // keep the checksum valid: swap a digit for a letter worth the same (0)
        let l2 = "2 25544  51.6416 247.4627 0006703 130.5360 325.0288 15.72125391563537";
        let bad = l2.replacen("51.6416", "5X.6416", 1);
        let digits_removed = checksum(&bad);
        let body = format!("{}{}", &bad[..68], digits_removed);
        let text = format!("{}\n{}\n", ISS.lines().nth(1).unwrap(), body);
        match parse_tle(&text).unwrap_err() {
            Error::Parse { line: 2, column: 9, .. } => {}
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn every_single_digit_mutation_breaks_checksum() {
        for (li, line) in ISS.lines().skip(1).enumerate() {
            for pos in 0..68 {
                let b = line.as_bytes()[pos];
                if !b.is_ascii_digit() {
                    continue;
                }
                for d in b'0'..=b'9' {
                    if d == b {
                        continue;
                    }
                    let mut m = line.as_bytes().to_vec();
                    m[pos] = d;
                    let m = String::from_utf8(m).unwrap();
                    assert_ne!(checksum(&m), checksum(line), "line {} pos {pos}", li + 1);
                }
            }
        }
    }

    #[test]
    fn synthetic_record_is_canonical() {
        let epoch = Utc.with_ymd_and_hms(2019, 6, 1, 12, 0, 0).unwrap();
        let r = TleRecord::from_elements(Some("SYNTH"), 90001, epoch, 97.4, 100.0, 0.001, 90.0, 10.0, 15.2).unwrap();
        let text = format_tle(&r);
        assert_eq!(format_tle(&parse_tle(&text).unwrap()), text);
        assert_eq!(r.epoch(), epoch);
        assert!(TleRecord::from_elements(None, 1, epoch, 97.4, 0.0, 1.2, 0.0, 0.0, 15.0).is_err());
    }
}
