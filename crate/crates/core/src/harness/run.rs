use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::experiments::{axis, std_dev};
use super::{compare_surfaces, coverage_map, scenario_to_toml, ExperimentOptions, SurfaceVariant};
use crate::beamform::alternating_optimize;
use crate::chanest::{cascade_probe, estimate, make_groups, noisy, predict};
use crate::channel::{synthesize_cells, synthesize_channels, CascadeModel, Scenario};
use crate::codebook::{run_pipeline, TrainingOptions};
use crate::multicell::{interference_cdf, negotiate_on, random_baseline, surface_off, NegotiationOptions};
use crate::pattern::{beam_pattern, pattern_metrics, steer, AngleGrid, Observation};
use crate::{Error, Result, C64};

/// Stream of the channel-estimation probe noise.
const PROBE_STREAM: u64 = 1 << 35;
/// Random group configurations used to score an estimate.
const SCORE_CONFIGS: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExperimentKind {
    Pattern,
    Hybrid,
    Train,
    Multicell,
    Estimate,
    Compare,
    Coverage,
}

impl ExperimentKind {
    pub const ALL: [ExperimentKind; 7] = [
        Self::Pattern,
        Self::Hybrid,
        Self::Train,
        Self::Multicell,
        Self::Estimate,
        Self::Compare,
        Self::Coverage,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Pattern => "pattern",
            Self::Hybrid => "hybrid",
            Self::Train => "train",
            Self::Multicell => "multicell",
            Self::Estimate => "estimate",
            Self::Compare => "compare",
            Self::Coverage => "coverage",
        }
    }
}

/// Everything a run needs; two equal specs produce identical files.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentSpec {
    pub kind: ExperimentKind,
    pub scenario: Scenario,
    pub options: ExperimentOptions,
    pub seeds: Vec<u64>,
}

/// One CSV file of a run. The main file has an empty suffix; companions are
/// written next to it as `<stem>_<suffix>.csv`.
#[derive(Debug, Clone, PartialEq)]
pub struct OutputFile {
    pub suffix: &'static str,
    pub contents: String,
}

impl OutputFile {
    fn new(suffix: &'static str, header: &str, body: String) -> Self {
        Self {
            suffix,
            contents: format!("{header}{body}"),
        }
    }

    /// Where this file goes when the main output is `main`.
    pub fn path(&self, main: &Path) -> PathBuf {
        if self.suffix.is_empty() {
            return main.to_path_buf();
        }
        let stem = main.file_stem().and_then(|s| s.to_str()).unwrap_or("out");
        main.with_file_name(format!("{stem}_{}.csv", self.suffix))
    }
}

/// Comment block opening every output file: version, kind, seeds and the
/// fully resolved configuration.
pub fn header(spec: &ExperimentSpec) -> String {
    let mut h = String::new();
    let _ = writeln!(h, "# omnisurf {}", env!("CARGO_PKG_VERSION"));
    let _ = writeln!(h, "# kind: {}", spec.kind.as_str());
    let seeds: Vec<String> = spec.seeds.iter().map(u64::to_string).collect();
    let _ = writeln!(h, "# seeds: {}", seeds.join(","));
    let _ = writeln!(h, "# config:");
    for line in scenario_to_toml(&spec.scenario, Some(&spec.options)).lines() {
        let _ = writeln!(h, "#   {line}");
    }
    h
}

/// Runs `spec` and returns its files, main file first.
pub fn run(spec: &ExperimentSpec) -> Result<Vec<OutputFile>> {
    if spec.seeds.is_empty() {
        return Err(Error::Config {
            key: "seeds".into(),
            line: None,
            msg: "at least one seed is required".into(),
        });
    }
    spec.scenario.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(super::workers()?.unwrap_or(0))
        .build()
        .map_err(|e| Error::Config {
            key: "OMNISURF_WORKERS".into(),
            line: None,
            msg: e.to_string(),
        })?;
    let h = header(spec);
    pool.install(|| match spec.kind {
        ExperimentKind::Pattern => run_pattern(spec, &h),
        ExperimentKind::Hybrid => run_hybrid(spec, &h),
        ExperimentKind::Train => run_train(spec, &h),
        ExperimentKind::Multicell => run_multicell(spec, &h),
        ExperimentKind::Estimate => run_estimate(spec, &h),
        ExperimentKind::Compare => run_compare(spec, &h),
        ExperimentKind::Coverage => run_coverage(spec, &h),
    })
}

fn f(x: f64) -> String {
    format!("{x:.6}")
}

/// Appends `mean` and `std` rows over the numeric columns of `rows`.
fn aggregate(out: &mut String, rows: &[Vec<f64>]) {
    let cols = rows.first().map_or(0, Vec::len);
    let col = |j: usize| rows.iter().map(|r| r[j]).collect::<Vec<_>>();
    let n = rows.len().max(1) as f64;
    let means: Vec<String> = (0..cols).map(|j| f(col(j).iter().sum::<f64>() / n)).collect();
    let stds: Vec<String> = (0..cols).map(|j| f(std_dev(&col(j)))).collect();
    let _ = writeln!(out, "mean,{}", means.join(","));
    let _ = writeln!(out, "std,{}", stds.join(","));
}

fn seed_table(header_row: &str, seeds: &[u64], rows: &[Vec<f64>]) -> String {
    let mut out = format!("{header_row}\n");
    for (s, r) in seeds.iter().zip(rows) {
        let cells: Vec<String> = r.iter().map(|&x| f(x)).collect();
        let _ = writeln!(out, "{s},{}", cells.join(","));
    }
    aggregate(&mut out, rows);
    out
}

fn run_hybrid(spec: &ExperimentSpec, h: &str) -> Result<Vec<OutputFile>> {
    let s = &spec.scenario;
    let opts = spec.options.alt();
    let rows = spec
        .seeds
        .par_iter()
        .map(|&seed| {
            let ch = synthesize_channels(s, seed);
            let r = alternating_optimize(&ch, s, &opts, seed)?;
            let mut row = vec![r.sum_rate];
            row.extend(&r.rates.rates);
            row.push(r.sweeps as f64);
            Ok(row)
        })
        .collect::<Result<Vec<_>>>()?;
    let users: Vec<String> = (0..s.users.len()).map(|k| format!("rate_u{k}_bpshz")).collect();
    let head = format!("seed,sum_rate_bpshz,{},sweeps", users.join(","));
    Ok(vec![OutputFile::new("", h, seed_table(&head, &spec.seeds, &rows))])
}

fn run_train(spec: &ExperimentSpec, h: &str) -> Result<Vec<OutputFile>> {
    let s = &spec.scenario;
    let o = &spec.options;
    let topts = TrainingOptions {
        n_sections: o.n_sections,
        n_lobes: o.n_lobes,
        feedback_noise: o.feedback_noise_w,
        precoder: o.precoder,
        ..Default::default()
    };
    let alt = o.alt();
    let rows = spec
        .seeds
        .par_iter()
        .map(|&seed| {
            let ch = synthesize_channels(s, seed);
            let p = run_pipeline(s, &ch, &topts, seed)?;
            let csi = alternating_optimize(&ch, s, &alt, seed)?;
            Ok(vec![
                p.sum_rate,
                csi.sum_rate,
                p.training.training_count as f64,
                p.pilot_count as f64,
            ])
        })
        .collect::<Result<Vec<_>>>()?;
    let head = "seed,sum_rate_bpshz,csi_sum_rate_bpshz,training_count,pilot_count";
    Ok(vec![OutputFile::new("", h, seed_table(head, &spec.seeds, &rows))])
}

fn run_multicell(spec: &ExperimentSpec, h: &str) -> Result<Vec<OutputFile>> {
    let s = &spec.scenario;
    let o = &spec.options;
    let nopts = NegotiationOptions {
        rho: o.rho,
        max_iter: o.max_iter,
        local: o.alt(),
        ..Default::default()
    };
    let rows = spec
        .seeds
        .par_iter()
        .map(|&seed| {
            let cells = synthesize_cells(s, seed);
            let n = negotiate_on(s, &cells, &nopts, seed)?;
            let random = random_baseline(s, &cells, o.precoder, seed)?;
            let off: f64 = surface_off(s, &cells, o.precoder)?.iter().map(|u| u.rate).sum();
            Ok(vec![
                n.sum_rate,
                random,
                off,
                n.iterations as f64,
                n.converged as u8 as f64,
            ])
        })
        .collect::<Result<Vec<_>>>()?;
    let head = "seed,sum_rate_bpshz,random_bpshz,surface_off_bpshz,iterations,converged";
    let cdf = interference_cdf(s, &nopts, &spec.seeds)?;
    Ok(vec![
        OutputFile::new("", h, seed_table(head, &spec.seeds, &rows)),
        OutputFile::new("cdf", h, cdf.to_csv()),
    ])
}

fn run_estimate(spec: &ExperimentSpec, h: &str) -> Result<Vec<OutputFile>> {
    let s = &spec.scenario;
    let o = &spec.options;
    let grouping = make_groups(s.ios.rows, s.ios.cols, o.tile_rows, o.tile_cols)?;
    if s.ios.table.len() != 2 {
        return Err(Error::InvalidTable("grouped estimation needs a two-state table".into()));
    }
    let rows = spec
        .seeds
        .par_iter()
        .map(|&seed| {
            let ch = synthesize_channels(s, seed);
            let model = CascadeModel::omni(&ch, &s.ios.table);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(PROBE_STREAM);
            let est = {
                let probe = noisy(cascade_probe(&model, &grouping), o.probe_sigma, &mut rng);
                estimate(probe, &grouping, o.repeats.max(1))?
            };
            let (mut err, mut norm) = (0.0, 0.0);
            for _ in 0..SCORE_CONFIGS {
                let g: Vec<usize> = (0..grouping.len()).map(|_| rng.random_range(0..2)).collect();
                let truth = model.effective(grouping.expand(&g)?.states());
                let guess = predict(&est, &g)?;
                err += (&guess - &truth).norm_squared();
                norm += truth.norm_squared();
            }
            let nmse_db = if norm > 0.0 { 10.0 * (err / norm).max(1e-300).log10() } else { f64::NAN };
            Ok(vec![grouping.len() as f64, est.probes as f64, nmse_db])
        })
        .collect::<Result<Vec<_>>>()?;
    let head = "seed,groups,probes,nmse_db";
    Ok(vec![OutputFile::new("", h, seed_table(head, &spec.seeds, &rows))])
}

fn run_compare(spec: &ExperimentSpec, h: &str) -> Result<Vec<OutputFile>> {
    let base = &spec.scenario;
    let sizes = if spec.options.sizes.is_empty() {
        vec![[base.ios.rows, base.ios.cols]]
    } else {
        spec.options.sizes.clone()
    };
    let names: Vec<String> = SurfaceVariant::ALL.iter().map(|v| format!("{}_bpshz", v.as_str())).collect();
    let mut out = format!("rows,cols,seed,{}\n", names.join(","));
    let alt = spec.options.alt();
    for [r, c] in sizes {
        let mut s = base.clone();
        s.ios.rows = r;
        s.ios.cols = c;
        s.ios.active_rows = None;
        let cmp = compare_surfaces(&s, &spec.seeds, &alt)?;
        let mut rows = Vec::new();
        for (seed, rates) in cmp.seeds.iter().zip(&cmp.rates) {
            let cells: Vec<String> = rates.iter().map(|&x| f(x)).collect();
            let _ = writeln!(out, "{r},{c},{seed},{}", cells.join(","));
            rows.push(rates.to_vec());
        }
        let mut agg = String::new();
        aggregate(&mut agg, &rows);
        for line in agg.lines() {
            let _ = writeln!(out, "{r},{c},{line}");
        }
    }
    Ok(vec![OutputFile::new("", h, out)])
}

fn run_coverage(spec: &ExperimentSpec, h: &str) -> Result<Vec<OutputFile>> {
    let o = &spec.options;
    let xs = axis(o.x_range_m, o.grid_step_m);
    let ys = axis(o.y_range_m, o.grid_step_m);
    let points: Vec<(f64, f64)> = ys.iter().flat_map(|&y| xs.iter().map(move |&x| (x, y))).collect();
    let map = coverage_map(&spec.scenario, o.probe_user, &points, &spec.seeds, o.surface, &o.alt())?;
    let mut out = String::from("x_m,y_m,rate_bpshz\n");
    for p in map {
        let _ = writeln!(out, "{},{},{}", f(p.x), f(p.y), f(p.rate));
    }
    Ok(vec![OutputFile::new("", h, out)])
}

fn run_pattern(spec: &ExperimentSpec, h: &str) -> Result<Vec<OutputFile>> {
    let s = &spec.scenario;
    let o = &spec.options;
    let n = s.bs[0].n_antennas;
    let v = DVector::from_element(n, C64::new(1.0 / (n as f64).sqrt(), 0.0));
    let config = steer(s, 0, &v, o.target_psi_deg, o.target_phi_deg, Observation::FarField)?;
    let mut grid = AngleGrid::azimuth_cut(o.step_deg)?;
    grid.phi_deg = vec![o.target_phi_deg];
    let pattern = beam_pattern(s, 0, &config, &v, &grid, Observation::FarField)?;
    let psi = o.target_psi_deg.rem_euclid(360.0);
    let half = if psi < 180.0 { pattern.sector(0.0, 180.0) } else { pattern.sector(180.0, 360.0) };
    let m = pattern_metrics(&half)?;
    let metrics = format!(
        "target_psi_deg,main_lobe_deg,hpbw_deg,sll_db\n{},{},{},{}\n",
        f(o.target_psi_deg),
        f(m.main_lobe_deg),
        f(m.hpbw_deg),
        f(m.sll_db)
    );
    Ok(vec![
        OutputFile::new("", h, pattern.to_csv()),
        OutputFile::new("metrics", h, metrics),
    ])
}
