//! Scenarios shipped with the binary.

pub const PRESETS: &[(&str, &str)] = &[
    ("fig2", include_str!("../presets/fig2.toml")),
    ("limit-a03", include_str!("../presets/limit-a03.toml")),
    ("limit-type1", include_str!("../presets/limit-type1.toml")),
    ("kramers-b05", include_str!("../presets/kramers-b05.toml")),
    ("qs-plateau", include_str!("../presets/qs-plateau.toml")),
    ("tpm-m03", include_str!("../presets/tpm-m03.toml")),
    ("msm-sym", include_str!("../presets/msm-sym.toml")),
    ("m-table", include_str!("../presets/m-table.toml")),
    ("classify-kramers", include_str!("../presets/classify-kramers.toml")),
    ("verify-arctan", include_str!("../presets/verify-arctan.toml")),
];

pub fn preset(name: &str) -> Option<&'static str> {
    PRESETS.iter().find(|(n, _)| *n == name).map(|(_, s)| *s)
}
