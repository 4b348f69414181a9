use std::fmt;
use std::io::Write;

use serde::{Deserialize, Serialize};

/// Properties an audit can test.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Property {
    #[serde(rename = "U-DSIC")]
    UDsic,
    #[serde(rename = "U-BNIC")]
    UBnic,
    #[serde(rename = "1-SCP")]
    Scp1,
    #[serde(rename = "UIR")]
    Uir,
    #[serde(rename = "BF")]
    Bf,
    #[serde(rename = "NFL")]
    Nfl,
    #[serde(rename = "symmetry")]
    Symmetry,
    #[serde(rename = "monotonicity")]
    Monotonicity,
    #[serde(rename = "competitiveness")]
    Competitiveness,
    #[serde(rename = "conservative-field")]
    ConservativeField,
    #[serde(rename = "burning")]
    Burning,
}

impl Property {
    pub const ALL: [Property; 11] = [
        Property::UDsic,
        Property::UBnic,
        Property::Scp1,
        Property::Uir,
        Property::Bf,
        Property::Nfl,
        Property::Symmetry,
        Property::Monotonicity,
        Property::Competitiveness,
        Property::ConservativeField,
        Property::Burning,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Property::UDsic => "U-DSIC",
            Property::UBnic => "U-BNIC",
            Property::Scp1 => "1-SCP",
            Property::Uir => "UIR",
            Property::Bf => "BF",
            Property::Nfl => "NFL",
            Property::Symmetry => "symmetry",
            Property::Monotonicity => "monotonicity",
            Property::Competitiveness => "competitiveness",
            Property::ConservativeField => "conservative-field",
            Property::Burning => "burning",
        }
    }
}

impl fmt::Display for Property {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Property {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Property::ALL
            .into_iter()
            .find(|p| {
                let name = p.as_str();
                // `dsic`, `bnic` and `scp1` are accepted as short forms
                let short = match p {
                    Property::UDsic | Property::UBnic => &name[2..],
                    Property::Scp1 => "scp1",
                    _ => name,
                };
                name.eq_ignore_ascii_case(s) || short.eq_ignore_ascii_case(s)
            })
            .ok_or_else(|| {
                let names: Vec<_> = Property::ALL.iter().map(|p| p.as_str()).collect();
                format!(
                    "unknown property `{s}` (expected one of {})",
                    names.join(", ")
                )
            })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Pass,
    Fail,
    /// The statistic is within sampling noise of the threshold.
    Inconclusive,
}

impl Verdict {
    /// Pass when `worst <= threshold`, fail when it exceeds the threshold
    /// by more than `uncertainty`, inconclusive in between.
    pub fn judge(worst: f64, threshold: f64, uncertainty: f64) -> Verdict {
        if worst <= threshold {
            Verdict::Pass
        } else if worst - threshold > uncertainty {
            Verdict::Fail
        } else {
            Verdict::Inconclusive
        }
    }

    fn severity(self) -> u8 {
        match self {
            Verdict::Pass => 0,
            Verdict::Inconclusive => 1,
            Verdict::Fail => 2,
        }
    }
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Verdict::Pass => "pass",
            Verdict::Fail => "fail",
            Verdict::Inconclusive => "inconclusive",
        })
    }
}

/// One quantitative check inside an audit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub verdict: Verdict,
    pub worst_violation: f64,
    pub threshold: f64,
    /// Noise allowance on `worst_violation`; zero for deterministic checks.
    pub uncertainty: f64,
}

impl Check {
    pub fn new(name: &str, worst_violation: f64, threshold: f64, uncertainty: f64) -> Self {
        Self {
            name: name.to_string(),
            verdict: Verdict::judge(worst_violation, threshold, uncertainty),
            worst_violation,
            threshold,
            uncertainty,
        }
    }

    /// A check whose verdict was decided by the caller.
    pub fn decided(
        name: &str,
        verdict: Verdict,
        worst_violation: f64,
        threshold: f64,
        uncertainty: f64,
    ) -> Self {
        Self {
            name: name.to_string(),
            verdict,
            worst_violation,
            threshold,
            uncertainty,
        }
    }
}

/// A row of supporting data: the input that produced a statistic.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evidence {
    pub input: String,
    pub statistic: f64,
    pub standard_error: f64,
}

impl Evidence {
    pub fn new(input: impl Into<String>, statistic: f64, standard_error: f64) -> Self {
        Self {
            input: input.into(),
            statistic,
            standard_error,
        }
    }
}

/// Random-number provenance of an audit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Seeds {
    /// Root seed; `None` for deterministic audits.
    pub root: Option<u64>,
    /// Number of substreams drawn from the root.
    pub substreams: u64,
}

impl Seeds {
    pub fn deterministic() -> Self {
        Self {
            root: None,
            substreams: 0,
        }
    }

    pub fn random(root: u64, substreams: u64) -> Self {
        Self {
            root: Some(root),
            substreams,
        }
    }
}

/// Outcome of one audit. The headline fields repeat those of the decisive
/// check: the first failing one, else the first inconclusive one, else the
/// first one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub property: Property,
    pub mechanism: String,
    pub verdict: Verdict,
    pub worst_violation: f64,
    pub threshold: f64,
    pub uncertainty: f64,
    pub checks: Vec<Check>,
    pub evidence: Vec<Evidence>,
    pub seeds: Seeds,
}

impl AuditReport {
    pub fn new(
        property: Property,
        mechanism: String,
        checks: Vec<Check>,
        evidence: Vec<Evidence>,
        seeds: Seeds,
    ) -> Self {
        assert!(!checks.is_empty(), "an audit needs at least one check");
        let decisive = checks
            .iter()
            .enumerate()
            .max_by_key(|(idx, c)| (c.verdict.severity(), std::cmp::Reverse(*idx)))
            .map(|(_, c)| c.clone())
            .expect("non-empty");
        Self {
            property,
            mechanism,
            verdict: decisive.verdict,
            worst_violation: decisive.worst_violation,
            threshold: decisive.threshold,
            uncertainty: decisive.uncertainty,
            checks,
            evidence,
            seeds,
        }
    }

    pub fn passed(&self) -> bool {
        self.verdict == Verdict::Pass
    }

    /// Writes the evidence table as CSV with a header row. Floats are
    /// printed with 17 significant digits.
    pub fn write_evidence_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "input,statistic,standard_error")?;
        for e in &self.evidence {
            writeln!(
                out,
                "{},{},{}",
                csv_field(&e.input),
                fmt_float(e.statistic),
                fmt_float(e.standard_error)
            )?;
        }
        Ok(())
    }
}

/// Float formatting used in tables: 17 significant digits, round-trips.
pub fn fmt_float(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.16e}")
    } else {
        x.to_string()
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Formats a bid vector compactly for evidence rows.
pub(crate) fn fmt_bids(b: &[f64]) -> String {
    let parts: Vec<String> = b.iter().map(|x| format!("{x:.6}")).collect();
    format!("[{}]", parts.join(" "))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn verdict_thresholds() {
        assert_eq!(Verdict::judge(0.5, 1.0, 0.0), Verdict::Pass);
        assert_eq!(Verdict::judge(1.5, 1.0, 0.0), Verdict::Fail);
        assert_eq!(Verdict::judge(1.5, 1.0, 1.0), Verdict::Inconclusive);
    }

    #[test]
    fn decisive_check_is_the_worst() {
        let checks = vec![
            Check::new("a", 0.0, 1.0, 0.0),
            Check::new("b", 2.0, 1.0, 0.0),
            Check::new("c", 3.0, 1.0, 0.0),
        ];
        let r = AuditReport::new(
            Property::Scp1,
            "x".into(),
            checks,
            vec![],
            Seeds::deterministic(),
        );
        assert_eq!(r.verdict, Verdict::Fail);
        assert_eq!(r.worst_violation, 2.0);
    }

    #[test]
    fn property_round_trip() {
        for p in Property::ALL {
            assert_eq!(p.as_str().parse::<Property>().unwrap(), p);
            let js = serde_json::to_string(&p).unwrap();
            assert_eq!(js, format!("\"{}\"", p.as_str()));
        }
        assert!("nope".parse::<Property>().is_err());
    }

    #[test]
    fn csv_escapes_and_formats() {
        let r = AuditReport::new(
            Property::UDsic,
            "x".into(),
            vec![Check::new("a", 0.0, 1.0, 0.0)],
            vec![Evidence::new("i=0, v=1", 0.1, 0.0)],
            Seeds::deterministic(),
        );
        let mut buf = Vec::new();
        r.write_evidence_csv(&mut buf).unwrap();
        let s = String::from_utf8(buf).unwrap();
        assert_eq!(
            s,
            "input,statistic,standard_error\n\"i=0, v=1\",1.0000000000000001e-1,0.0000000000000000e0\n"
        );
    }
}
