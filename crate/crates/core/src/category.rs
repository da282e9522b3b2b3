use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dsl::FixKind;
use crate::error::{Error, Result};

/// Object categories of the benchmark.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Category {
    Fridge,
    Bucket,
    Usb,
    Kettle,
    Cart,
    KitchenPot,
    Box,
}

/// The interaction each category is tested with.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Functionality {
    Close,
    Lift,
    Shield,
    Pour,
    Move,
}

impl Category {
    /// Accuracy table column order.
    pub const ALL: [Category; 7] = [
        Category::Fridge,
        Category::Bucket,
        Category::Usb,
        Category::Kettle,
        Category::Cart,
        Category::KitchenPot,
        Category::Box,
    ];

    /// Flow error table column order.
    pub const FLOW_ORDER: [Category; 7] = [
        Category::Fridge,
        Category::Bucket,
        Category::Kettle,
        Category::Usb,
        Category::Cart,
        Category::KitchenPot,
        Category::Box,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Category::Fridge => "fridge",
            Category::Bucket => "bucket",
            Category::Usb => "usb",
            Category::Kettle => "kettle",
            Category::Cart => "cart",
            Category::KitchenPot => "kitchenpot",
            Category::Box => "box",
        }
    }

    pub fn accuracy_header(self) -> &'static str {
        match self {
            Category::Fridge => "Refrigerator",
            Category::Bucket => "Bucket",
            Category::Usb => "USB",
            Category::Kettle => "Kettle",
            Category::Cart => "Cart",
            Category::KitchenPot => "KitchenPot",
            Category::Box => "Box",
        }
    }

    pub fn flow_header(self) -> &'static str {
        match self {
            Category::Fridge => "Fridge",
            other => other.accuracy_header(),
        }
    }

    pub fn functionality(self) -> Functionality {
        match self {
            Category::Fridge | Category::Box => Functionality::Close,
            Category::Bucket | Category::KitchenPot => Functionality::Lift,
            Category::Usb => Functionality::Shield,
            Category::Kettle => Functionality::Pour,
            Category::Cart => Functionality::Move,
        }
    }

    /// Fix types that may appear among this category's choices.
    pub fn allowed_kinds(self) -> &'static [FixKind] {
        use FixKind::*;
        match self {
            Category::Fridge => &[Scale, Translate, Rotate],
            Category::Bucket | Category::Usb => &[Scale, Translate],
            Category::Kettle | Category::Cart | Category::KitchenPot => &[Rotate],
            Category::Box => &[Scale],
        }
    }

    pub fn index(self) -> usize {
        Self::ALL.iter().position(|&c| c == self).unwrap()
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Category {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let key = s.trim().to_ascii_lowercase();
        Category::ALL
            .iter()
            .copied()
            .find(|c| c.name() == key || c.accuracy_header().to_ascii_lowercase() == key)
            .ok_or_else(|| Error::Config(format!("unknown category `{s}`")))
    }
}
