use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use scriptorium::experiment::Strategy;
use serde::{Deserialize, Deserializer};

/// Object-detection dataset tooling for digitized music manuscripts.
///
/// Options of every subcommand may also be given in a JSON config file under
/// the subcommand's name (for example {"run": {"rounds": 10}}). Flags win over
/// the config file, which wins over built-in defaults.
#[derive(Debug, Parser)]
#[command(name = "scriptorium", version, arg_required_else_help = true)]
pub struct Cli {
    /// Log verbosity [default: info]
    #[arg(long, global = true, value_name = "LEVEL", value_parser = ["off", "error", "warn", "info", "debug", "trace"])]
    pub log_level: Option<String>,
    /// Emit log records as JSON lines on stderr
    #[arg(long, global = true)]
    pub log_json: bool,
    /// JSON config file supplying defaults for any option
    #[arg(long, global = true, env = "SCRIPTORIUM_CONFIG", value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Worker threads for parallel work [default: number of logical CPUs]
    #[arg(long, global = true, value_name = "N")]
    pub jobs: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fuse PAGE XML, MEI and SVG annotations into one COCO dataset
    Merge(MergeArgs),
    /// Cluster page features and hold out one representative page per cluster
    Split(SplitArgs),
    /// Run an active or sequential learning experiment
    Run(RunArgs),
    /// Score detections against ground truth
    Eval(EvalArgs),
    /// Tabulate one or more finished runs side by side
    Report(ReportArgs),
}

#[derive(Debug, Clone, Default, Args, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MergeArgs {
    /// Directory of PAGE XML files, one per page, named after the image stem
    #[arg(long, value_name = "DIR")]
    pub pagexml: Option<PathBuf>,
    /// Directory of MEI files, one per page
    #[arg(long, value_name = "DIR")]
    pub mei: Option<PathBuf>,
    /// Directory of SVG files, one per page
    #[arg(long, value_name = "DIR")]
    pub svg: Option<PathBuf>,
    /// JSON array of image records (id, file_name, width, height, page_index)
    #[arg(long, value_name = "MANIFEST")]
    pub images: Option<PathBuf>,
    /// Merge settings: min_iou and the element-kind to category mapping
    #[arg(long, value_name = "FILE")]
    pub mapping: Option<PathBuf>,
    /// Where to write the merged COCO JSON
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
    /// Where to write the per-page merge report
    #[arg(long, value_name = "FILE")]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Args, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitArgs {
    /// JSON lines of {"image_id": .., "vector": [..]}
    #[arg(long, value_name = "FILE")]
    pub features: Option<PathBuf>,
    /// Fraction of pages held out for testing [default: 0.2]
    #[arg(long, value_name = "RATIO")]
    pub ratio: Option<f64>,
    /// Where to write the split
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Args, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunArgs {
    /// Selection strategy: al (lowest confidence first) or sl (page order)
    #[arg(long, value_name = "al|sl")]
    #[serde(deserialize_with = "strategy_from_str")]
    pub strategy: Option<Strategy>,
    /// Ground-truth COCO JSON
    #[arg(long, value_name = "FILE")]
    pub gt: Option<PathBuf>,
    /// Split produced by the split subcommand
    #[arg(long, value_name = "FILE")]
    pub split: Option<PathBuf>,
    /// Detector config (JSON)
    #[arg(long, value_name = "FILE")]
    pub detector: Option<PathBuf>,
    /// Number of rounds [default: 20]
    #[arg(long, value_name = "N")]
    pub rounds: Option<usize>,
    /// Images added per round [default: 15]
    #[arg(long, value_name = "N")]
    pub batch: Option<usize>,
    /// Images labeled before the first round [default: 1]
    #[arg(long, value_name = "N")]
    pub seed_count: Option<usize>,
    /// Seed for the synthetic detector [default: 0]
    #[arg(long, value_name = "N")]
    pub rng_seed: Option<u64>,
    /// Continue training from the previous round's weights instead of the base model
    #[arg(long, value_name = "BOOL", num_args = 0..=1, default_missing_value = "true")]
    pub warm_start: Option<bool>,
    /// Stop after finishing this round; rerun the same command to resume
    #[arg(long, value_name = "ROUND")]
    pub stop_after: Option<usize>,
    /// Run directory (created, or resumed if it already holds rounds)
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
pub enum InterpolationArg {
    /// 101 recall points
    #[value(name = "101")]
    #[serde(rename = "101")]
    Points101,
    /// every recall change
    #[value(name = "all")]
    #[serde(rename = "all")]
    All,
}

#[derive(Debug, Clone, Default, Args, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalArgs {
    /// Ground-truth COCO JSON
    #[arg(long, value_name = "FILE")]
    pub gt: Option<PathBuf>,
    /// JSON array of detections (image_id, category_id, bbox, score)
    #[arg(long, value_name = "FILE")]
    pub dets: Option<PathBuf>,
    /// Restrict scoring to these images: a JSON id array or a split file
    #[arg(long, value_name = "FILE")]
    pub test_ids: Option<PathBuf>,
    /// Where to write metrics.json
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
    /// AP interpolation [default: 101]
    #[arg(long, value_enum, value_name = "MODE")]
    pub interpolation: Option<InterpolationArg>,
    /// Fixed confidence threshold for P/R/F1 instead of the best-F1 point
    #[arg(long, value_name = "SCORE")]
    pub threshold: Option<f64>,
}

#[derive(Debug, Clone, Default, Args, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReportArgs {
    /// Run directories to compare (same number of rounds each)
    #[arg(long, value_name = "DIR", num_args = 1..)]
    pub runs: Vec<PathBuf>,
    /// Where to write the CSV table
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
}

fn strategy_from_str<'de, D: Deserializer<'de>>(d: D) -> Result<Option<Strategy>, D::Error> {
    match Option::<String>::deserialize(d)? {
        None => Ok(None),
        Some(s) => s.parse().map(Some).map_err(serde::de::Error::custom),
    }
}

/// Field-wise `flag.or(file)`.
pub trait Overlay {
    fn overlay(self, file: Self) -> Self;
}

macro_rules! overlay {
    ($t:ty { $($f:ident),* }) => {
        impl Overlay for $t {
            fn overlay(self, file: Self) -> Self {
                Self { $($f: self.$f.or(file.$f)),* }
            }
        }
    };
}

overlay!(MergeArgs { pagexml, mei, svg, images, mapping, out, report });
overlay!(SplitArgs { features, ratio, out });
overlay!(RunArgs { strategy, gt, split, detector, rounds, batch, seed_count, rng_seed, warm_start, stop_after, out });
overlay!(EvalArgs { gt, dets, test_ids, out, interpolation, threshold });

impl Overlay for ReportArgs {
    fn overlay(self, file: Self) -> Self {
        Self { runs: if self.runs.is_empty() { file.runs } else { self.runs }, out: self.out.or(file.out) }
    }
}
