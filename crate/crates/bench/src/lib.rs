//! Benchmark fixtures shared by the criterion targets.

use debias_ate::{gen_synthetic, stack_design, Generator, ObservationalDataset, SimOptions, StackedDesign};

/// HET instance of size `n` with 100 features and its stacked design.
pub fn het_instance(n: usize, seed: u64) -> (ObservationalDataset, StackedDesign) {
    let inst = gen_synthetic(n, 100, Generator::Het, seed, SimOptions::default()).expect("valid generator settings");
    let design = stack_design(&inst.data);
    (inst.data, design)
}
