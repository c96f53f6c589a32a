use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::digest::canonical_digest;
use crate::simworld::RobotParams;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldVerdict {
    pub field: String,
    pub value: f64,
    pub min: f64,
    pub max: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComplianceReport {
    pub params: RobotParams,
    pub verdicts: Vec<FieldVerdict>,
    pub pass: bool,
    pub digest: String,
}

impl ComplianceReport {
    pub fn failures(&self) -> Vec<&str> {
        self.verdicts.iter().filter(|v| !v.pass).map(|v| v.field.as_str()).collect()
    }
}

/// Checks each hardware field named in `tolerances` against its closed
/// interval. Fields without a tolerance are not checked; a tolerance naming
/// no field fails.
pub fn compliance_check(params: &RobotParams, tolerances: &BTreeMap<String, [f64; 2]>) -> ComplianceReport {
    let fields = params.fields();
    let verdicts: Vec<FieldVerdict> = tolerances
        .iter()
        .map(|(name, &[min, max])| {
            let value = fields.iter().find(|f| f.0 == name).map_or(f64::NAN, |f| f.1);
            FieldVerdict {
                field: name.clone(),
                value,
                min,
                max,
                pass: min <= value && value <= max,
            }
        })
        .collect();
    let pass = verdicts.iter().all(|v| v.pass);
    let digest = canonical_digest(&(params, &verdicts));
    ComplianceReport { params: *params, verdicts, pass, digest }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn trim_limit() -> BTreeMap<String, [f64; 2]> {
        [("trim".to_string(), [-0.1, 0.1])].into_iter().collect()
    }

    #[test]
    fn small_trim_passes() {
        let p = RobotParams { trim: 0.05, ..Default::default() };
        assert!(compliance_check(&p, &trim_limit()).pass);
    }

    #[test]
    fn large_trim_fails_by_name() {
        let p = RobotParams { trim: 0.15, ..Default::default() };
        let r = compliance_check(&p, &trim_limit());
        assert!(!r.pass);
        assert_eq!(r.failures(), vec!["trim"]);
    }

    #[test]
    fn limits_are_inclusive() {
        let p = RobotParams::default();
        let tol: BTreeMap<String, [f64; 2]> = p.fields().iter().map(|(k, v)| (k.to_string(), [*v, *v])).collect();
        let r = compliance_check(&p, &tol);
        assert!(r.pass);
        assert_eq!(r.verdicts.len(), 9);
        let p2 = RobotParams { trim: 0.1, ..Default::default() };
        assert!(compliance_check(&p2, &trim_limit()).pass);
    }

    #[test]
    fn digest_depends_on_params() {
        let a = compliance_check(&RobotParams::default(), &trim_limit());
        let b = compliance_check(&RobotParams { gain: 1.01, ..Default::default() }, &trim_limit());
        assert_eq!(a.digest, compliance_check(&RobotParams::default(), &trim_limit()).digest);
        assert_ne!(a.digest, b.digest);
    }

    #[test]
    fn unknown_field_fails() {
        let tol: BTreeMap<String, [f64; 2]> = [("wings".to_string(), [0.0, 1.0])].into_iter().collect();
        assert!(!compliance_check(&RobotParams::default(), &tol).pass);
    }
}
