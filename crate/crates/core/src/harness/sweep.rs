use std::io::Write;

use serde::Serialize;

use super::config::ExperimentConfig;
use super::experiment::{run_experiment, ClassSource};
use super::report::{write_line, RunReport};
use crate::dataset::FeatureDataset;
use crate::error::{Error, Result};
use crate::memory::{Budget, MergeCovariance, ReductionPolicy};

/// Merge-based reduction and plain removal run under the same budget.
#[derive(Debug, Clone, PartialEq)]
pub struct BudgetPoint {
    pub budget: Budget,
    pub reduce: RunReport,
    pub remove: RunReport,
}

fn budget_key(b: Budget) -> usize {
    b.limit().unwrap_or(usize::MAX)
}

/// Runs the experiment at every budget, once per reduction policy.
///
/// The merge run keeps `config.reduction` when it is already a merge policy.
pub fn run_budget_sweep<S: ClassSource>(
    config: &ExperimentConfig,
    source: &S,
    test: &FeatureDataset,
    budgets: &[Budget],
) -> Result<Vec<BudgetPoint>> {
    if budgets.is_empty() {
        return Err(Error::Empty("no budgets to sweep"));
    }
    if budgets
        .windows(2)
        .any(|w| budget_key(w[0]) > budget_key(w[1]))
    {
        return Err(Error::invalid("budgets must be sorted ascending"));
    }
    let merge = match config.reduction {
        ReductionPolicy::Merge(m) => m,
        ReductionPolicy::Remove => MergeCovariance::default(),
    };
    budgets
        .iter()
        .map(|&budget| {
            let run = |reduction| {
                let cfg = ExperimentConfig {
                    budget,
                    reduction,
                    ..config.clone()
                };
                run_experiment(&cfg, source, test)
            };
            Ok(BudgetPoint {
                budget,
                reduce: run(ReductionPolicy::Merge(merge))?,
                remove: run(ReductionPolicy::Remove)?,
            })
        })
        .collect()
}

#[derive(Serialize)]
struct SweepLine<'a> {
    record: &'static str,
    budget: String,
    policy: &'static str,
    mean_average_incremental_accuracy: f64,
    std_average_incremental_accuracy: f64,
    per_seed_average: &'a [f64],
}

/// One line per (budget, policy) with the across-seed summary.
pub fn write_sweep_jsonl<W: Write>(points: &[BudgetPoint], w: &mut W) -> Result<()> {
    for p in points {
        for (policy, report) in [("reduce", &p.reduce), ("remove", &p.remove)] {
            write_line(
                w,
                &SweepLine {
                    record: "budget_point",
                    budget: p.budget.to_string(),
                    policy,
                    mean_average_incremental_accuracy: report
                        .summary
                        .mean_average_incremental_accuracy,
                    std_average_incremental_accuracy: report
                        .summary
                        .std_average_incremental_accuracy,
                    per_seed_average: &report.summary.per_seed_average,
                },
            )?;
        }
    }
    Ok(())
}
