//! Built-in benchmark topologies.

pub const MZC: &str = include_str!("../netlists/mzc.net");
pub const SMC: &str = include_str!("../netlists/smc.net");
pub const NMC: &str = include_str!("../netlists/nmc.net");
pub const SINGLE_STAGE: &str = include_str!("../netlists/single_stage.net");

pub const ALL: [(&str, &str); 4] = [
    ("mzc", MZC),
    ("smc", SMC),
    ("nmc", NMC),
    ("single_stage", SINGLE_STAGE),
];

pub fn by_name(name: &str) -> Option<&'static str> {
    ALL.iter()
        .find(|(n, _)| n.eq_ignore_ascii_case(name))
        .map(|(_, src)| *src)
}
