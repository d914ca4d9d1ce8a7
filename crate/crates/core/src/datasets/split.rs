//! Held-out count-combination splits.
//!
//! [`split_holdout`] partitions a manifest into a training set and a
//! held-out set by excluding `(class, count)` pairs: every item whose count
//! vector has exactly `count` instances of `class` goes to the held-out
//! side. Two modes exist only to validate intent: an *extrapolation*
//! exclusion must sit at the dataset's maximum count (the model will never
//! see the top of the range), while an *interpolation* exclusion removes an
//! interior value the model still brackets from both sides.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::datasets::manifest::DatasetManifest;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HoldoutMode {
    Interpolation,
    Extrapolation,
}

impl fmt::Display for HoldoutMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            HoldoutMode::Interpolation => f.write_str("interpolation"),
            HoldoutMode::Extrapolation => f.write_str("extrapolation"),
        }
    }
}

impl FromStr for HoldoutMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "interpolation" => Ok(HoldoutMode::Interpolation),
            "extrapolation" => Ok(HoldoutMode::Extrapolation),
            other => Err(Error::InvalidConfig(format!(
                "unknown holdout mode `{other}` (expected interpolation or extrapolation)"
            ))),
        }
    }
}

/// Partition `manifest` into `(train, heldout)`.
///
/// An item is held out iff some excluded `(class, count)` pair matches its
/// count vector exactly at that class. Every exclusion must match at least
/// one item; in extrapolation mode every excluded count must equal the
/// manifest's `max_count`.
pub fn split_holdout(
    manifest: &DatasetManifest,
    excluded: &[(usize, u32)],
    mode: HoldoutMode,
) -> Result<(DatasetManifest, DatasetManifest)> {
    let n_classes = manifest.header.n_classes();
    for &(class, count) in excluded {
        if class >= n_classes {
            return Err(Error::InvalidExclusion {
                class,
                count,
                reason: format!("dataset has {n_classes} classes"),
            });
        }
        if count > manifest.header.max_count {
            return Err(Error::InvalidExclusion {
                class,
                count,
                reason: format!("max_count is {}", manifest.header.max_count),
            });
        }
        if mode == HoldoutMode::Extrapolation && count != manifest.header.max_count {
            return Err(Error::ModeViolation(format!(
                "extrapolation holds out the top of the count range: \
                 excluded count {count} for class {class} must equal max_count {}",
                manifest.header.max_count
            )));
        }
        if !manifest
            .items
            .iter()
            .any(|item| item.counts.0[class] == count)
        {
            return Err(Error::InvalidExclusion {
                class,
                count,
                reason: "no item matches this exclusion".into(),
            });
        }
    }

    let held_out = |item: &crate::datasets::manifest::ManifestItem| {
        excluded
            .iter()
            .any(|&(class, count)| item.counts.0[class] == count)
    };
    let mut train = DatasetManifest {
        header: manifest.header.clone(),
        items: Vec::new(),
    };
    let mut heldout = DatasetManifest {
        header: manifest.header.clone(),
        items: Vec::new(),
    };
    for item in &manifest.items {
        if held_out(item) {
            heldout.items.push(item.clone());
        } else {
            train.items.push(item.clone());
        }
    }
    Ok((train, heldout))
}

#[cfg(test)]
mod tests {
    use super::*;

    use crate::datasets::manifest::{ItemSource, ManifestHeader, ManifestItem, SCHEMA_VERSION};
    use crate::datasets::{enumerate_combinations, Resolution};

    fn manifest() -> DatasetManifest {
        let combos = enumerate_combinations(2, 2, None);
        let items = combos
            .iter()
            .enumerate()
            .map(|(i, counts)| ManifestItem {
                file: format!("images/{i:06}.png"),
                counts: counts.clone(),
                source: ItemSource::Synthesized { boxes: vec![] },
            })
            .collect();
        DatasetManifest {
            header: ManifestHeader {
                schema_version: SCHEMA_VERSION,
                kind: "multi_mnist".into(),
                class_names: vec!["0".into(), "6".into()],
                max_count: 2,
                max_total: None,
                resolution: Resolution::gray(32),
                seed: 0,
                params: serde_json::Value::Null,
            },
            items,
        }
    }

    #[test]
    fn exclusion_partitions_exactly() {
        let m = manifest();
        let (train, heldout) = split_holdout(&m, &[(1, 2)], HoldoutMode::Extrapolation).unwrap();
        assert_eq!(train.items.len() + heldout.items.len(), m.items.len());
        assert!(train.items.iter().all(|i| i.counts.0[1] != 2));
        assert!(heldout.items.iter().all(|i| i.counts.0[1] == 2));
        assert_eq!(heldout.items.len(), 3, "[0,2], [1,2], [2,2]");
        // Original order preserved within each side.
        let order: Vec<_> = m
            .items
            .iter()
            .filter(|i| i.counts.0[1] != 2)
            .map(|i| i.file.clone())
            .collect();
        assert_eq!(
            order,
            train.items.iter().map(|i| i.file.clone()).collect::<Vec<_>>()
        );
    }

    #[test]
    fn multiple_exclusions_union() {
        let m = manifest();
        let (train, heldout) =
            split_holdout(&m, &[(0, 1), (1, 1)], HoldoutMode::Interpolation).unwrap();
        assert!(train
            .items
            .iter()
            .all(|i| i.counts.0[0] != 1 && i.counts.0[1] != 1));
        // Complement of {counts with a 1 anywhere} over the 3x3 grid: 4.
        assert_eq!(train.items.len(), 4);
        assert_eq!(heldout.items.len(), 5);
    }

    #[test]
    fn empty_exclusion_list_holds_nothing_out() {
        let m = manifest();
        let (train, heldout) = split_holdout(&m, &[], HoldoutMode::Interpolation).unwrap();
        assert_eq!(train.items.len(), m.items.len());
        assert!(heldout.items.is_empty());
    }

    #[test]
    fn extrapolation_requires_the_max_count() {
        let m = manifest();
        let err = split_holdout(&m, &[(1, 1)], HoldoutMode::Extrapolation).unwrap_err();
        assert!(matches!(err, Error::ModeViolation(_)), "got {err}");
        assert!(split_holdout(&m, &[(1, 2)], HoldoutMode::Extrapolation).is_ok());
        // Interpolation accepts interior values.
        assert!(split_holdout(&m, &[(1, 1)], HoldoutMode::Interpolation).is_ok());
    }

    #[test]
    fn invalid_exclusions_are_rejected() {
        let m = manifest();
        assert!(matches!(
            split_holdout(&m, &[(5, 1)], HoldoutMode::Interpolation),
            Err(Error::InvalidExclusion { class: 5, .. })
        ));
        assert!(matches!(
            split_holdout(&m, &[(0, 9)], HoldoutMode::Interpolation),
            Err(Error::InvalidExclusion { .. })
        ));

        // Matches zero items: strip all [*, 2] rows first, then exclude (1, 2).
        let mut no_twos = m.clone();
        no_twos.items.retain(|i| i.counts.0[1] != 2);
        let err = split_holdout(&no_twos, &[(1, 2)], HoldoutMode::Extrapolation).unwrap_err();
        assert!(matches!(err, Error::InvalidExclusion { .. }), "got {err}");
    }

    #[test]
    fn mode_strings_parse() {
        assert_eq!(
            "interpolation".parse::<HoldoutMode>().unwrap(),
            HoldoutMode::Interpolation
        );
        assert_eq!(
            "extrapolation".parse::<HoldoutMode>().unwrap(),
            HoldoutMode::Extrapolation
        );
        assert!("both".parse::<HoldoutMode>().is_err());
    }
}
