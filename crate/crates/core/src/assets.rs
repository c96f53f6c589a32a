//! Built-in maps, benchmarks and lab profiles.

pub const STANDARD_LOOP: &str = include_str!("../../../assets/maps/standard_loop.toml");
pub const LF_SIM: &str = include_str!("../../../assets/benchmarks/lf-sim.toml");
pub const LF_LAB: &str = include_str!("../../../assets/benchmarks/lf-lab.toml");
pub const LF_PROGRESSION: &str = include_str!("../../../assets/benchmarks/lf-progression.toml");
pub const LAB_A: &str = include_str!("../../../assets/labs/lab-a.toml");
pub const LAB_B: &str = include_str!("../../../assets/labs/lab-b.toml");

#[cfg(test)]
mod tests {
    use super::*;
    use crate::benchmark::{BenchmarkDag, BenchmarkSpec};
    use crate::evaluator::LabProfile;

    #[test]
    fn shipped_documents_are_valid() {
        for text in [LF_SIM, LF_LAB] {
            let spec = BenchmarkSpec::from_toml(text).unwrap();
            spec.load_map(None).unwrap();
        }
        let dag = BenchmarkDag::from_toml(LF_PROGRESSION).unwrap();
        assert_eq!(dag.roots(), vec!["lf-sim".to_string()]);
        for text in [LAB_A, LAB_B] {
            LabProfile::from_toml(text).unwrap();
        }
    }
}
