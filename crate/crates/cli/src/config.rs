//! Optional JSON configuration file. Every subcommand option can be given
//! here under the subcommand's name; command-line flags take precedence, and
//! built-in defaults apply last. Relative paths are resolved against the
//! directory holding the file.

use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::args::{EvalArgs, MergeArgs, ReportArgs, RunArgs, SplitArgs};
use crate::error::CliError;

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub log_level: Option<String>,
    pub log_json: Option<bool>,
    pub jobs: Option<usize>,
    pub merge: MergeArgs,
    pub split: SplitArgs,
    pub run: RunArgs,
    pub eval: EvalArgs,
    pub report: ReportArgs,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let mut cfg: FileConfig = serde_json::from_str(&text)
            .map_err(|e| CliError::Config { path: path.display().to_string(), message: e.to_string() })?;
        let base = path.parent().unwrap_or(Path::new(""));
        cfg.rebase(base);
        Ok(cfg)
    }

    fn rebase(&mut self, base: &Path) {
        let fix = |p: &mut Option<PathBuf>| {
            if let Some(path) = p {
                if path.is_relative() {
                    *path = base.join(&*path);
                }
            }
        };
        let m = &mut self.merge;
        for p in [&mut m.pagexml, &mut m.mei, &mut m.svg, &mut m.images, &mut m.mapping, &mut m.out, &mut m.report] {
            fix(p);
        }
        fix(&mut self.split.features);
        fix(&mut self.split.out);
        let r = &mut self.run;
        for p in [&mut r.gt, &mut r.split, &mut r.detector, &mut r.out] {
            fix(p);
        }
        let e = &mut self.eval;
        for p in [&mut e.gt, &mut e.dets, &mut e.test_ids, &mut e.out] {
            fix(p);
        }
        for p in &mut self.report.runs {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        fix(&mut self.report.out);
    }
}
