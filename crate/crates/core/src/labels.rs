use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub const N_CLASSES: usize = 10;

/// The ten urban scene classes, in class-index order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SceneClass {
    Airport,
    ShoppingMall,
    MetroStation,
    PedestrianStreet,
    PublicSquare,
    StreetTraffic,
    Tram,
    Bus,
    Metro,
    UrbanPark,
}

impl SceneClass {
    pub const ALL: [SceneClass; N_CLASSES] = [
        SceneClass::Airport,
        SceneClass::ShoppingMall,
        SceneClass::MetroStation,
        SceneClass::PedestrianStreet,
        SceneClass::PublicSquare,
        SceneClass::StreetTraffic,
        SceneClass::Tram,
        SceneClass::Bus,
        SceneClass::Metro,
        SceneClass::UrbanPark,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(index: usize) -> Option<Self> {
        Self::ALL.get(index).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            SceneClass::Airport => "airport",
            SceneClass::ShoppingMall => "shopping_mall",
            SceneClass::MetroStation => "metro_station",
            SceneClass::PedestrianStreet => "pedestrian_street",
            SceneClass::PublicSquare => "public_square",
            SceneClass::StreetTraffic => "street_traffic",
            SceneClass::Tram => "tram",
            SceneClass::Bus => "bus",
            SceneClass::Metro => "metro",
            SceneClass::UrbanPark => "urban_park",
        }
    }
}

impl fmt::Display for SceneClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UnknownLabel(pub String);

impl fmt::Display for UnknownLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "unknown scene label `{}`", self.0)
    }
}

impl std::error::Error for UnknownLabel {}

impl FromStr for SceneClass {
    type Err = UnknownLabel;

    /// Accepts the canonical names, spaces or hyphens in place of
    /// underscores, and the TAU file-name spellings `street_pedestrian` and
    /// `park`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm: String = s
            .trim()
            .to_ascii_lowercase()
            .chars()
            .map(|c| if c == ' ' || c == '-' { '_' } else { c })
            .collect();
        let alias = match norm.as_str() {
            "street_pedestrian" => "pedestrian_street",
            "park" => "urban_park",
            other => other,
        };
        SceneClass::ALL
            .into_iter()
            .find(|c| c.name() == alias)
            .ok_or_else(|| UnknownLabel(s.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_round_trip() {
        for c in SceneClass::ALL {
            assert_eq!(c.name().parse::<SceneClass>().unwrap(), c);
            assert_eq!(SceneClass::from_index(c.index()), Some(c));
        }
    }

    #[test]
    fn dataset_spellings_are_accepted() {
        assert_eq!("street_pedestrian".parse::<SceneClass>().unwrap(), SceneClass::PedestrianStreet);
        assert_eq!("park".parse::<SceneClass>().unwrap(), SceneClass::UrbanPark);
        assert_eq!("Shopping Mall".parse::<SceneClass>().unwrap(), SceneClass::ShoppingMall);
    }

    #[test]
    fn unknown_label_is_rejected() {
        assert_eq!("beach".parse::<SceneClass>(), Err(UnknownLabel("beach".into())));
    }
}
