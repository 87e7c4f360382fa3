//! Food calorie lookup against a local fixture catalog, optionally fronted by
//! a remote nutrition service.
//!
//! Remote contract: `GET {base}/foods/search?query=<q>` with header
//! `X-Api-Key: <key>`. A 200 carries `{"matched_name": str, "kcal_per_100g": number}`,
//! a 404 means no match. Anything else (timeouts, 5xx, bad bodies) falls back
//! to the fixture with a warning.

use std::collections::BTreeSet;
use std::io::Read;
use std::path::Path;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;
use tracing::warn;

pub const NUTRITION_URL_ENV: &str = "GLUCOACH_NUTRITION_URL";
pub const NUTRITION_KEY_ENV: &str = "GLUCOACH_NUTRITION_KEY";

const BUNDLED_FOODS: &str = include_str!("../../data/foods.csv");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FoodSource {
    Fixture,
    Remote,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoodRecord {
    pub query: String,
    pub matched_name: String,
    pub kcal_per_100g: f64,
    pub source: FoodSource,
}

impl FoodRecord {
    pub fn kcal_for(&self, grams: f64) -> f64 {
        self.kcal_per_100g * grams / 100.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoodLookup {
    pub record: FoodRecord,
    /// Set when the remote source failed and the fixture answered instead.
    pub warning: Option<String>,
}

#[derive(Debug, Error)]
pub enum NutritionError {
    #[error("food query must not be empty")]
    EmptyQuery,
    #[error("no food matches '{0}'")]
    NotFound(String),
    #[error("food catalog line {line}: {message}")]
    Catalog { line: u64, message: String },
}

#[derive(Debug, Clone, Deserialize)]
struct CatalogRow {
    name: String,
    kcal_per_100g: f64,
}

#[derive(Debug, Clone)]
struct CatalogEntry {
    name: String,
    tokens: BTreeSet<String>,
    kcal_per_100g: f64,
}

fn tokens(text: &str) -> BTreeSet<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// Local catalog, CSV with header `name,kcal_per_100g`.
#[derive(Debug, Clone)]
pub struct FoodCatalog {
    entries: Vec<CatalogEntry>,
}

impl FoodCatalog {
    pub fn bundled() -> Self {
        Self::from_reader(BUNDLED_FOODS.as_bytes()).expect("bundled food catalog parses")
    }

    pub fn from_path(path: &Path) -> Result<Self, NutritionError> {
        let file = std::fs::File::open(path).map_err(|e| NutritionError::Catalog {
            line: 0,
            message: e.to_string(),
        })?;
        Self::from_reader(file)
    }

    pub fn from_reader<R: Read>(reader: R) -> Result<Self, NutritionError> {
        let mut csv = csv::Reader::from_reader(reader);
        let mut entries = Vec::new();
        for row in csv.deserialize::<CatalogRow>() {
            let row = row.map_err(|e| NutritionError::Catalog {
                line: e.position().map_or(0, |p| p.line()),
                message: e.to_string(),
            })?;
            if !(row.kcal_per_100g >= 0.0) {
                return Err(NutritionError::Catalog {
                    line: 0,
                    message: format!("'{}' has negative kcal_per_100g", row.name),
                });
            }
            entries.push(CatalogEntry {
                tokens: tokens(&row.name),
                name: row.name,
                kcal_per_100g: row.kcal_per_100g,
            });
        }
        Ok(Self { entries })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Best case-insensitive token match: most shared tokens, then the
    /// shortest name, then alphabetical.
    pub fn lookup(&self, query: &str) -> Result<FoodRecord, NutritionError> {
        let wanted = tokens(query);
        if wanted.is_empty() {
            return Err(NutritionError::EmptyQuery);
        }
        self.entries
            .iter()
            .map(|e| (e.tokens.intersection(&wanted).count(), e))
            .filter(|(hits, _)| *hits > 0)
            .min_by(|(ha, a), (hb, b)| {
                hb.cmp(ha)
                    .then(a.tokens.len().cmp(&b.tokens.len()))
                    .then(a.name.cmp(&b.name))
            })
            .map(|(_, e)| FoodRecord {
                query: query.to_string(),
                matched_name: e.name.clone(),
                kcal_per_100g: e.kcal_per_100g,
                source: FoodSource::Fixture,
            })
            .ok_or_else(|| NutritionError::NotFound(query.to_string()))
    }
}

#[derive(Debug, Clone)]
pub struct RemoteNutrition {
    base_url: String,
    api_key: String,
    client: reqwest::Client,
}

#[derive(Debug, Deserialize)]
struct RemoteFood {
    matched_name: String,
    kcal_per_100g: f64,
}

enum RemoteOutcome {
    Found(FoodRecord),
    NotFound,
    Failed(String),
}

impl RemoteNutrition {
    pub fn new(base_url: impl Into<String>, api_key: impl Into<String>, timeout: Duration) -> Self {
        let client = reqwest::Client::builder()
            .timeout(timeout)
            .build()
            .expect("http client builds");
        Self {
            base_url: base_url.into().trim_end_matches('/').to_string(),
            api_key: api_key.into(),
            client,
        }
    }

    /// Reads the base URL and key from the environment; `None` when unset.
    pub fn from_env(timeout: Duration) -> Option<Self> {
        let url = std::env::var(NUTRITION_URL_ENV)
            .ok()
            .filter(|u| !u.is_empty())?;
        let key = std::env::var(NUTRITION_KEY_ENV).unwrap_or_default();
        Some(Self::new(url, key, timeout))
    }

    async fn fetch(&self, query: &str) -> RemoteOutcome {
        let response = self
            .client
            .get(format!("{}/foods/search", self.base_url))
            .query(&[("query", query)])
            .header("X-Api-Key", &self.api_key)
            .send()
            .await;
        let response = match response {
            Ok(r) => r,
            Err(e) => return RemoteOutcome::Failed(e.to_string()),
        };
        if response.status() == reqwest::StatusCode::NOT_FOUND {
            return RemoteOutcome::NotFound;
        }
        if !response.status().is_success() {
            return RemoteOutcome::Failed(format!("status {}", response.status()));
        }
        match response.json::<RemoteFood>().await {
            Ok(food) if food.kcal_per_100g >= 0.0 => RemoteOutcome::Found(FoodRecord {
                query: query.to_string(),
                matched_name: food.matched_name,
                kcal_per_100g: food.kcal_per_100g,
                source: FoodSource::Remote,
            }),
            Ok(food) => RemoteOutcome::Failed(format!("negative kcal for '{}'", food.matched_name)),
            Err(e) => RemoteOutcome::Failed(e.to_string()),
        }
    }
}

#[derive(Debug, Clone)]
pub struct NutritionLookup {
    catalog: FoodCatalog,
    remote: Option<RemoteNutrition>,
}

impl NutritionLookup {
    pub fn new(catalog: FoodCatalog, remote: Option<RemoteNutrition>) -> Self {
        Self { catalog, remote }
    }

    pub fn fixture_only(catalog: FoodCatalog) -> Self {
        Self::new(catalog, None)
    }

    pub fn catalog(&self) -> &FoodCatalog {
        &self.catalog
    }

    pub async fn lookup_food(&self, query: &str) -> Result<FoodLookup, NutritionError> {
        if query.trim().is_empty() {
            return Err(NutritionError::EmptyQuery);
        }
        let Some(remote) = &self.remote else {
            return Ok(FoodLookup {
                record: self.catalog.lookup(query)?,
                warning: None,
            });
        };
        match remote.fetch(query).await {
            RemoteOutcome::Found(record) => Ok(FoodLookup {
                record,
                warning: None,
            }),
            RemoteOutcome::NotFound => Err(NutritionError::NotFound(query.to_string())),
            RemoteOutcome::Failed(reason) => {
                let warning =
                    format!("remote nutrition source unavailable ({reason}); used local catalog");
                warn!(query, %reason, "nutrition lookup degraded to fixture");
                Ok(FoodLookup {
                    record: self.catalog.lookup(query)?,
                    warning: Some(warning),
                })
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixture_examples() {
        let catalog = FoodCatalog::bundled();
        let rice = catalog.lookup("white rice cooked").unwrap();
        assert_eq!(rice.matched_name, "Rice, white, cooked");
        assert_eq!(rice.kcal_per_100g, 130.0);
        assert_eq!(rice.source, FoodSource::Fixture);
        assert!(matches!(
            catalog.lookup(""),
            Err(NutritionError::EmptyQuery)
        ));
        assert!(matches!(
            catalog.lookup("zzzz-unknown"),
            Err(NutritionError::NotFound(_))
        ));
    }

    #[test]
    fn matching_is_case_insensitive_and_prefers_specific_names() {
        let catalog = FoodCatalog::bundled();
        assert_eq!(
            catalog.lookup("BANANA").unwrap().matched_name,
            "Banana, raw"
        );
        assert_eq!(
            catalog.lookup("skim milk").unwrap().matched_name,
            "Milk, skim"
        );
        assert_eq!(
            catalog.lookup("orange").unwrap().matched_name,
            "Orange juice"
        );
    }

    #[test]
    fn grams_scale_calories() {
        let rice = FoodCatalog::bundled().lookup("rice white").unwrap();
        assert_eq!(rice.kcal_for(150.0), 195.0);
    }

    #[test]
    fn catalog_rejects_negative_and_malformed_rows() {
        assert!(FoodCatalog::from_reader("name,kcal_per_100g\nice,-3\n".as_bytes()).is_err());
        assert!(FoodCatalog::from_reader("name,kcal_per_100g\nice,lots\n".as_bytes()).is_err());
    }
}
