//! Subcommand bodies. Each returns the JSON report and, for tabular
//! commands, a CSV table.

use anyhow::{Context, Result};
use kscore::concave::{tabulated_constants, validate_concave, ConcaveFn, ConcaveKind, PolyCoefficients, ValidationReport};
use kscore::divergence::{
    bhattacharyya_kd, fit_density, kernel_score_with_rule, mmd_projected, mmd_standard_split, projected_moments,
    DensityModel, DivergenceDetails, DivergenceResult, Measure, ProjectedStats,
};
use kscore::hypothesis::experiment::{type2_experiment, ExperimentRow};
use kscore::hypothesis::{run_test, Pipeline, TestReport};
use kscore::kernel::{gram_matrix, KernelSpec};
use kscore::projection::{ProjectionMethod, MEANS_TOL};
use kscore::risk::{rank_features, rank_table, selection_experiment, FeatureRiskReport, RankTable, SelectionReport};
use kscore::Error;
use serde::Serialize;

use crate::config::{
    ConcaveConfig, DivergenceConfig, RankConfig, ReproduceConfig, RunConfig, TestRunConfig,
};
use crate::io;

pub struct Output {
    pub json: Vec<u8>,
    pub csv: Option<Vec<u8>>,
}

pub fn run(config: &RunConfig) -> Result<Output> {
    config.validate()?;
    log::info!("running {} with seed {}", command_name(config), config.seed());
    match config {
        RunConfig::Divergence(c) => json_only(&divergence(config, c)?),
        RunConfig::Test(c) => json_only(&test(config, c)?),
        RunConfig::Reproduce(c) => reproduce(config, c),
        RunConfig::Concave(c) => json_only(&concave(config, c)?),
        RunConfig::RankFeatures(c) => rank(config, c),
    }
}

fn command_name(config: &RunConfig) -> &'static str {
    match config {
        RunConfig::Divergence(_) => "divergence",
        RunConfig::Test(_) => "test",
        RunConfig::Reproduce(_) => "reproduce",
        RunConfig::Concave(_) => "concave",
        RunConfig::RankFeatures(_) => "rank-features",
    }
}

fn json_only<T: Serialize>(report: &T) -> Result<Output> {
    Ok(Output { json: io::to_json(report)?, csv: None })
}

#[derive(Debug, Serialize)]
pub struct SampleSummary {
    pub n_p: usize,
    pub n_q: usize,
    pub d: usize,
}

#[derive(Debug, Serialize)]
pub struct ProjectionSummary {
    pub method: ProjectionMethod,
    /// RKHS norm of the direction; for the means direction this is `T`.
    pub norm: f64,
    pub mmd_projected: f64,
    pub mu_p: f64,
    pub mu_q: f64,
    pub sigma_p: f64,
    pub sigma_q: f64,
}

#[derive(Debug, Serialize)]
pub struct DivergenceReport<'a> {
    pub config: &'a RunConfig,
    pub seed: u64,
    pub samples: SampleSummary,
    pub kernel: KernelSpec,
    pub mmd_standard: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub projection: Option<ProjectionSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub density_model: Option<DensityModel>,
    pub measures: Vec<DivergenceResult>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

fn components(c: &DivergenceConfig) -> Vec<Measure> {
    [Measure::Mmd, Measure::Kd, Measure::Bkd]
        .into_iter()
        .filter(|m| c.measures.iter().any(|t| t.components().contains(m)))
        .collect()
}

fn divergence<'a>(config: &'a RunConfig, c: &DivergenceConfig) -> Result<DivergenceReport<'a>> {
    let data = c.inputs.load()?;
    let kernel = c.kernel.resolve(&data.pooled)?;
    let gram = gram_matrix(&kernel, &data.pooled)?;
    let mmd_standard = mmd_standard_split(&gram, &data.split)?;
    let pipeline = Pipeline::new(&gram, &c.statistic())?;
    let which = components(c);
    let mut report = DivergenceReport {
        config,
        seed: c.seed,
        samples: SampleSummary { n_p: data.split.n_p(), n_q: data.split.n_q(), d: data.pooled.d() },
        kernel,
        mmd_standard,
        projection: None,
        density_model: None,
        measures: Vec::new(),
        note: None,
    };

    let weights = match pipeline.projector().fit(&data.split) {
        Ok(w) => w,
        // Coinciding embedded means leave no direction, and every divergence
        // between the two empirical distributions is zero.
        Err(Error::IndistinguishableMeans(_) | Error::DegenerateDirection(_)) if mmd_standard <= MEANS_TOL => {
            report.note = Some(format!(
                "embedded group means coincide (MMD = {mmd_standard:e}); the {} direction is undefined and all divergences are 0",
                c.projection.method
            ));
            report.measures = which
                .iter()
                .map(|&measure| DivergenceResult { measure, value: 0.0, details: DivergenceDetails::default() })
                .collect();
            return Ok(report);
        }
        Err(e) => return Err(e.into()),
    };
    let xp = pipeline.project(&data.split)?;
    let stats: ProjectedStats = projected_moments(&xp)?;
    report.projection = Some(ProjectionSummary {
        method: c.projection.method,
        norm: weights.norm,
        mmd_projected: mmd_projected(&xp)?,
        mu_p: stats.mu_p,
        mu_q: stats.mu_q,
        sigma_p: stats.var_p.sqrt(),
        sigma_q: stats.var_q.sqrt(),
    });
    for m in which {
        let result = match m {
            // the three-sum form is the reference value; on the means
            // direction it equals the projected gap
            Measure::Mmd => DivergenceResult {
                measure: m,
                value: if c.projection.method == ProjectionMethod::Means { mmd_standard } else { mmd_projected(&xp)? },
                details: DivergenceDetails { stats: Some(stats), ..Default::default() },
            },
            Measure::Kd => {
                let model = fit_density(&xp, c.density)?;
                let concave = ConcaveFn::new(c.concave)?;
                let r = kernel_score_with_rule(&xp, &model, &concave, c.empty_bin)?;
                report.density_model = Some(model);
                r
            }
            Measure::Bkd => bhattacharyya_kd(&stats)?,
        };
        report.measures.push(result);
    }
    Ok(report)
}

#[derive(Debug, Serialize)]
pub struct TestRunReport<'a> {
    pub config: &'a RunConfig,
    pub seed: u64,
    pub samples: SampleSummary,
    pub kernel: KernelSpec,
    pub report: TestReport,
}

fn test<'a>(config: &'a RunConfig, c: &TestRunConfig) -> Result<TestRunReport<'a>> {
    let data = c.inputs.load()?;
    let kernel = c.kernel.resolve(&data.pooled)?;
    let gram = gram_matrix(&kernel, &data.pooled)?;
    let report = run_test(&gram, &data.split, &c.test_config())?;
    Ok(TestRunReport {
        config,
        seed: c.seed,
        samples: SampleSummary { n_p: data.split.n_p(), n_q: data.split.n_q(), d: data.pooled.d() },
        kernel,
        report,
    })
}

#[derive(Debug, Serialize)]
pub struct GaussReport<'a> {
    pub config: &'a RunConfig,
    pub seed: u64,
    pub rows: Vec<ExperimentRow>,
}

#[derive(Debug, Serialize)]
pub struct FeatselReport<'a> {
    pub config: &'a RunConfig,
    pub seed: u64,
    pub table: RankTable,
    pub runs: Vec<NamedSelection>,
}

#[derive(Debug, Serialize)]
pub struct NamedSelection {
    pub dataset: String,
    pub report: SelectionReport,
}

fn fmt(v: f64) -> String {
    v.to_string()
}

fn reproduce(config: &RunConfig, c: &ReproduceConfig) -> Result<Output> {
    match c {
        ReproduceConfig::GaussTable6 { experiment } => {
            let report = type2_experiment(experiment)?;
            let scenarios: Vec<&str> = experiment.scenarios.iter().map(|s| s.name.as_str()).collect();
            let mut header = vec!["projection".to_string(), "measure".to_string()];
            header.extend(scenarios.iter().map(|s| s.to_string()));
            let mut rows = Vec::new();
            for &projection in &experiment.projections {
                for &measure in &experiment.measures {
                    let mut row = vec![projection.to_string(), measure.to_string()];
                    for s in &scenarios {
                        row.push(report.row(s, projection, measure).map_or(String::new(), |r| fmt(r.error_percent)));
                    }
                    rows.push(row);
                }
            }
            Ok(Output {
                json: io::to_json(&GaussReport { config, seed: experiment.seed, rows: report.rows })?,
                csv: Some(io::csv_bytes(&header, &rows)?),
            })
        }
        ReproduceConfig::Featsel { design, selection, datasets } => {
            let mut data = vec![("decoy".to_string(), design.generate(selection.seed)?)];
            for inputs in datasets {
                let name = inputs
                    .labeled
                    .as_ref()
                    .or(inputs.p.as_ref())
                    .map(|p| p.display().to_string())
                    .unwrap_or_default();
                data.push((name, inputs.load()?.pooled));
            }
            let mut runs = Vec::new();
            for (name, set) in &data {
                log::info!("feature selection on {name}");
                let report = selection_experiment(set, selection).with_context(|| format!("dataset {name}"))?;
                runs.push((name.clone(), report));
            }
            let table = rank_table(&runs)?;
            let mut header = vec!["method".to_string()];
            header.extend(table.datasets.iter().cloned());
            header.extend(["wins".to_string(), "rank".to_string()]);
            let rows = table
                .methods
                .iter()
                .enumerate()
                .map(|(i, m)| {
                    let mut row = vec![m.to_string()];
                    row.extend(table.average_rank.iter().map(|r| fmt(r[i])));
                    row.push(table.wins[i].to_string());
                    row.push(fmt(table.rank[i]));
                    row
                })
                .collect::<Vec<_>>();
            let runs = runs.into_iter().map(|(dataset, report)| NamedSelection { dataset, report }).collect();
            Ok(Output {
                json: io::to_json(&FeatselReport { config, seed: selection.seed, table, runs })?,
                csv: Some(io::csv_bytes(&header, &rows)?),
            })
        }
    }
}

#[derive(Debug, Serialize)]
pub struct Extremum {
    pub eta: f64,
    pub value: f64,
}

#[derive(Debug, Serialize)]
pub struct Tabulated {
    pub k1: f64,
    pub k2: f64,
}

#[derive(Debug, Serialize)]
pub struct ConcaveReport<'a> {
    pub config: &'a RunConfig,
    pub seed: u64,
    pub kind: ConcaveKind,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub coefficients: Option<PolyCoefficients>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tabulated: Option<Tabulated>,
    /// `[eta, C(eta)]` pairs on an even grid.
    pub curve: Vec<[f64; 2]>,
    pub max: Extremum,
    pub validation: ValidationReport,
    pub valid: bool,
}

fn concave<'a>(config: &'a RunConfig, c: &ConcaveConfig) -> Result<ConcaveReport<'a>> {
    let f = ConcaveFn::new(c.kind)?;
    let last = (c.grid - 1) as f64;
    let curve: Vec<[f64; 2]> = (0..c.grid)
        .map(|i| {
            let eta = i as f64 / last;
            Ok([eta, f.eval(eta)?])
        })
        .collect::<Result<_>>()?;
    let top = curve.iter().fold(curve[0], |best, &p| if p[1] > best[1] { p } else { best });
    let validation = validate_concave(&f);
    let tabulated = match c.kind {
        ConcaveKind::Poly(n) => tabulated_constants(n).map(|(k1, k2)| Tabulated { k1, k2 }),
        _ => None,
    };
    Ok(ConcaveReport {
        config,
        seed: c.seed,
        kind: c.kind,
        coefficients: f.poly().cloned(),
        tabulated,
        curve,
        max: Extremum { eta: top[0], value: top[1] },
        valid: validation.all_pass(),
        validation,
    })
}

#[derive(Debug, Serialize)]
pub struct RankReport<'a> {
    pub config: &'a RunConfig,
    pub seed: u64,
    pub names: Vec<String>,
    pub report: FeatureRiskReport,
}

fn rank(config: &RunConfig, c: &RankConfig) -> Result<Output> {
    let data = c.inputs.load()?;
    let report = rank_features(&data.pooled, c.bins, &ConcaveFn::new(c.concave)?)?;
    let header = ["feature", "risk", "rank"].map(String::from);
    let rows: Vec<Vec<String>> = report
        .order()
        .into_iter()
        .map(|j| {
            let f = &report.features[j];
            vec![data.names[j].clone(), fmt(f.risk), f.rank.to_string()]
        })
        .collect();
    Ok(Output {
        json: io::to_json(&RankReport { config, seed: c.seed, names: data.names, report })?,
        csv: Some(io::csv_bytes(&header, &rows)?),
    })
}
