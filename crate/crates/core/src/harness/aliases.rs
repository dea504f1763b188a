//! Shorthand location names used in experiment tables, mapped to the
//! location identifiers the parsers produce.

use crate::ingest::DatasetKind;

/// `(dataset, alias, locations)`. Group aliases expand to several locations.
pub const LOCATION_ALIASES: &[(DatasetKind, &str, &[&str])] = &[
    (DatasetKind::Interaction, "SR", &["DR_USA_Roundabout_SR"]),
    (DatasetKind::Interaction, "FT", &["DR_USA_Roundabout_FT"]),
    // the FT roundabout also appears as "FR" in some tables
    (DatasetKind::Interaction, "FR", &["DR_USA_Roundabout_FT"]),
    (DatasetKind::Interaction, "EP", &["DR_USA_Roundabout_EP"]),
    (DatasetKind::Interaction, "OF", &["DR_DEU_Roundabout_OF"]),
    (DatasetKind::Interaction, "LN", &["DR_CHN_Roundabout_LN"]),
    (DatasetKind::Interaction, "EP0", &["DR_USA_Intersection_EP0"]),
    (DatasetKind::Interaction, "EP1", &["DR_USA_Intersection_EP1"]),
    (DatasetKind::Interaction, "MA", &["DR_USA_Intersection_MA"]),
    (DatasetKind::Interaction, "GL", &["DR_USA_Intersection_GL"]),
    (DatasetKind::Interaction, "ZS", &["DR_CHN_Merging_ZS"]),
    (DatasetKind::Interaction, "MT", &["DR_DEU_Merging_MT"]),
    (
        DatasetKind::Interaction,
        "INT-round",
        &[
            "DR_USA_Roundabout_SR",
            "DR_USA_Roundabout_FT",
            "DR_USA_Roundabout_EP",
            "DR_DEU_Roundabout_OF",
            "DR_CHN_Roundabout_LN",
        ],
    ),
    (
        DatasetKind::Interaction,
        "INT-int",
        &[
            "DR_USA_Intersection_EP0",
            "DR_USA_Intersection_EP1",
            "DR_USA_Intersection_MA",
            "DR_USA_Intersection_GL",
        ],
    ),
    (DatasetKind::Interaction, "INT-merg", &["DR_CHN_Merging_ZS", "DR_DEU_Merging_MT"]),
];

/// Locations named by `name`: the alias expansion if one exists, otherwise
/// `name` itself.
pub fn resolve_location(dataset: DatasetKind, name: &str) -> Vec<String> {
    LOCATION_ALIASES
        .iter()
        .find(|(d, alias, _)| *d == dataset && alias.eq_ignore_ascii_case(name))
        .map(|(_, _, locs)| locs.iter().map(|s| s.to_string()).collect())
        .unwrap_or_else(|| vec![name.to_string()])
}

/// Location ids compare numerically when both are integers, so `"01"`
/// matches `"1"`.
pub fn same_location(a: &str, b: &str) -> bool {
    match (a.trim().parse::<i64>(), b.trim().parse::<i64>()) {
        (Ok(x), Ok(y)) => x == y,
        _ => a.trim() == b.trim(),
    }
}
