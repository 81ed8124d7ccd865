//! Config files shipped with the crate.

pub const MODELS: [(&str, &str); 4] = [
    ("molmoact-7b-class", include_str!("../configs/models/molmoact-7b-class.toml")),
    ("vla-10b", include_str!("../configs/models/vla-10b.toml")),
    ("vla-40b", include_str!("../configs/models/vla-40b.toml")),
    ("vla-100b", include_str!("../configs/models/vla-100b.toml")),
];

pub const HARDWARE: [(&str, &str); 7] = [
    ("Orin", include_str!("../configs/hw/orin.toml")),
    ("Thor", include_str!("../configs/hw/thor.toml")),
    ("Orin+LPDDR5X", include_str!("../configs/hw/orin-lpddr5x.toml")),
    ("Orin+GDDR7", include_str!("../configs/hw/orin-gddr7.toml")),
    ("Orin+PIM", include_str!("../configs/hw/orin-pim.toml")),
    ("Thor+GDDR7", include_str!("../configs/hw/thor-gddr7.toml")),
    ("Thor+PIM", include_str!("../configs/hw/thor-pim.toml")),
];

pub const DEFAULT_REQUEST: &str = include_str!("../configs/requests/default.toml");
pub const FIG_GRID: &str = include_str!("../configs/grids/scaling.toml");

pub fn model_text(name: &str) -> Option<&'static str> {
    MODELS
        .iter()
        .find(|(n, _)| n.eq_ignore_ascii_case(name))
        .map(|&(_, t)| t)
}
