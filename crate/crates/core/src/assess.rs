//! Questionnaire scoring: six-item state anxiety short form and the
//! three-subscale usability questionnaire.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const STAI_ITEMS: usize = 6;
pub const USE_ITEMS: usize = 9;
const LIKERT: std::ops::RangeInclusive<u8> = 1..=4;

/// Bundled item definitions (English and French).
pub const DEFAULT_QUESTIONNAIRES: &str = include_str!("../data/questionnaires.toml");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StaiKey {
    AnxietyPresent,
    AnxietyAbsent,
}

/// Calm, tense, upset, relaxed, content, worried.
pub const DEFAULT_STAI_KEYS: [StaiKey; STAI_ITEMS] = [
    StaiKey::AnxietyAbsent,
    StaiKey::AnxietyPresent,
    StaiKey::AnxietyPresent,
    StaiKey::AnxietyAbsent,
    StaiKey::AnxietyAbsent,
    StaiKey::AnxietyPresent,
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StaiShortResponse {
    pub items: [u8; STAI_ITEMS],
    pub item_keys: [StaiKey; STAI_ITEMS],
}

impl StaiShortResponse {
    pub fn new(items: [u8; STAI_ITEMS]) -> Self {
        Self { items, item_keys: DEFAULT_STAI_KEYS }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StaiScore {
    pub value: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UseSubscale {
    EaseOfUse,
    EaseOfLearning,
    Satisfaction,
}

impl UseSubscale {
    pub const ALL: [UseSubscale; 3] = [UseSubscale::EaseOfUse, UseSubscale::EaseOfLearning, UseSubscale::Satisfaction];
}

/// Items are grouped three per subscale in [`UseSubscale::ALL`] order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UseResponse {
    pub items: [u8; USE_ITEMS],
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UseScore {
    pub total: u32,
    pub percent: f64,
    pub per_subscale: [u32; 3],
}

fn check_range(items: &[u8]) -> Result<()> {
    match items.iter().position(|v| !LIKERT.contains(v)) {
        Some(i) => Err(Error::Validation(format!("item {} has value {} outside 1..4", i + 1, items[i]))),
        None => Ok(()),
    }
}

/// Prorates the six keyed items to the 20-80 full-form scale.
pub fn score_stai6(response: &StaiShortResponse) -> Result<StaiScore> {
    check_range(&response.items)?;
    let keyed: u32 = response
        .items
        .iter()
        .zip(&response.item_keys)
        .map(|(&v, key)| match key {
            StaiKey::AnxietyPresent => v as u32,
            StaiKey::AnxietyAbsent => 5 - v as u32,
        })
        .sum();
    Ok(StaiScore { value: keyed as f64 * 20.0 / STAI_ITEMS as f64 })
}

pub fn score_use(response: &UseResponse) -> Result<UseScore> {
    check_range(&response.items)?;
    let mut per_subscale = [0u32; 3];
    for (i, &v) in response.items.iter().enumerate() {
        per_subscale[i / 3] += v as u32;
    }
    let total = per_subscale.iter().sum();
    Ok(UseScore { total, percent: total as f64 / 36.0 * 100.0, per_subscale })
}

/// Parses a slice of answers into a fixed-size array.
pub fn answers<const N: usize>(values: &[u8]) -> Result<[u8; N]> {
    values
        .try_into()
        .map_err(|_| Error::Validation(format!("expected {N} answers, got {}", values.len())))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StaiItem {
    pub id: String,
    pub key: StaiKey,
    pub en: String,
    pub fr: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UseItem {
    pub id: String,
    pub subscale: UseSubscale,
    pub en: String,
    pub fr: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StaiDefinition {
    pub anchors_en: Vec<String>,
    pub anchors_fr: Vec<String>,
    pub items: Vec<StaiItem>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UseDefinition {
    pub anchors_en: Vec<String>,
    pub anchors_fr: Vec<String>,
    pub items: Vec<UseItem>,
}

/// Questionnaire item text, keys and subscales.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Questionnaires {
    pub stai: StaiDefinition,
    #[serde(rename = "use")]
    pub usability: UseDefinition,
}

impl Questionnaires {
    pub fn from_toml(text: &str) -> Result<Self> {
        let q: Questionnaires =
            toml::from_str(text).map_err(|e| Error::Validation(format!("questionnaire file: {e}")))?;
        q.validate()?;
        Ok(q)
    }

    pub fn bundled() -> Self {
        Self::from_toml(DEFAULT_QUESTIONNAIRES).expect("bundled questionnaire file is valid")
    }

    fn validate(&self) -> Result<()> {
        if self.stai.items.len() != STAI_ITEMS {
            return Err(Error::Validation(format!("STAI form needs {STAI_ITEMS} items")));
        }
        if self.usability.items.len() != USE_ITEMS {
            return Err(Error::Validation(format!("USE form needs {USE_ITEMS} items")));
        }
        for (i, item) in self.usability.items.iter().enumerate() {
            if item.subscale != UseSubscale::ALL[i / 3] {
                return Err(Error::Validation(format!(
                    "USE item {} ({}) must belong to {:?}",
                    i + 1,
                    item.id,
                    UseSubscale::ALL[i / 3]
                )));
            }
        }
        for anchors in [&self.stai.anchors_en, &self.stai.anchors_fr, &self.usability.anchors_en, &self.usability.anchors_fr] {
            if anchors.len() != 4 {
                return Err(Error::Validation("each scale needs 4 anchors".into()));
            }
        }
        Ok(())
    }

    pub fn stai_keys(&self) -> [StaiKey; STAI_ITEMS] {
        let mut keys = DEFAULT_STAI_KEYS;
        for (k, item) in keys.iter_mut().zip(&self.stai.items) {
            *k = item.key;
        }
        keys
    }
}
