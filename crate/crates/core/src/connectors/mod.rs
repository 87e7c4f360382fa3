//! Input sources: nutrition lookup, step exports, glucometer stream.

pub mod glucometer;
pub mod nutrition;
pub mod steps;

pub use glucometer::{glucometer_feed, parse_glu_line, GlucometerSession, LineOutcome, Reply};
pub use nutrition::{
    FoodCatalog, FoodLookup, FoodRecord, FoodSource, NutritionError, NutritionLookup,
    RemoteNutrition,
};
pub use steps::{import_steps, RowError, StepExportRow, StepFileError, StepImport};
