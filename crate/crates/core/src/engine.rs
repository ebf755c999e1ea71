//! Orchestrates one full autonomous-experiment realization: random seeding,
//! per-step target computation, surrogate retraining, acquisition, simulated
//! measurement, and trace logging.
//!
//! The loop is strictly sequential across steps; within a step, candidate
//! prediction and scoring may run in parallel without changing any selected
//! location or recorded float. A realization is a pure function of the
//! dataset bytes, the run configuration, and the seed.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::acquire::{self, AcquisitionConfig, AcquisitionKind};
use crate::dataspace::{GridDataset, MeasuredSet, VoltageWaveform};
use crate::error::{Error, Result};
use crate::evalkit;
use crate::novelty::{self, NoveltyConfig, NoveltyMethod};
use crate::scalarize;
use crate::surrogate::{self, FeatureNet, FitConfig, GpHyper};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Targets are the physical scalarizer (loop area).
    Scalarizer,
    /// Targets are novelty scores over the measured population.
    Novelty,
    /// Novelty targets plus strategic sampling.
    Insane,
}

impl Mode {
    pub fn name(&self) -> &'static str {
        match self {
            Mode::Scalarizer => "scalarizer",
            Mode::Novelty => "novelty",
            Mode::Insane => "insane",
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        match name.to_ascii_lowercase().as_str() {
            "scalarizer" => Ok(Mode::Scalarizer),
            "novelty" => Ok(Mode::Novelty),
            "insane" => Ok(Mode::Insane),
            other => Err(Error::invalid(
                "mode",
                format!("unknown mode '{other}' (scalarizer|novelty|insane)"),
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub mode: Mode,
    pub novelty: NoveltyConfig,
    pub n_init: usize,
    pub n_steps: usize,
    pub seed: u64,
    pub patch_side: usize,
    pub fit: FitConfig,
    /// `None` resolves to grid-scaled defaults with `sane` set by the mode.
    pub acquisition: Option<AcquisitionConfig>,
    /// Steps between surrogate-based error evaluations (the final step is
    /// always evaluated).
    pub eval_cadence: usize,
    /// Fit on targets frozen at measurement time instead of recomputing the
    /// novelty of every measured loop each step.
    pub frozen_targets: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            mode: Mode::Scalarizer,
            novelty: NoveltyConfig::default(),
            n_init: 10,
            n_steps: 200,
            seed: 0,
            patch_side: 9,
            fit: FitConfig::default(),
            acquisition: None,
            eval_cadence: 10,
            frozen_targets: false,
        }
    }
}

impl RunConfig {
    /// Fills in grid-dependent defaults and checks invariants; returns the
    /// effective config that gets embedded in the trace.
    pub fn resolve(&self, height: usize, width: usize) -> Result<RunConfig> {
        if self.n_init < 2 {
            return Err(Error::invalid("n_init", "must be >= 2"));
        }
        if self.n_steps < 1 {
            return Err(Error::invalid("n_steps", "must be >= 1"));
        }
        if self.eval_cadence < 1 {
            return Err(Error::invalid("eval_cadence", "must be >= 1"));
        }
        if self.patch_side < 3 || self.patch_side % 2 == 0 {
            return Err(Error::invalid("patch_side", "must be odd and >= 3"));
        }
        self.fit.validate()?;
        if self.mode != Mode::Scalarizer {
            self.novelty.validate()?;
        }
        let mut acq = self
            .acquisition
            .unwrap_or_else(|| AcquisitionConfig::default_for_grid(height, width));
        if self.acquisition.is_none() {
            acq.sane = self.mode == Mode::Insane;
        }
        if self.mode == Mode::Insane && !acq.sane {
            return Err(Error::Config(
                "insane mode requires strategic sampling (acquisition.sane = true)".into(),
            ));
        }
        acq.validate()?;
        Ok(RunConfig {
            acquisition: Some(acq),
            ..self.clone()
        })
    }
}

/// One acquisition (seed or step) in a realization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    /// 0-based across the whole realization; seeds come first.
    pub step: usize,
    pub loc: (usize, usize),
    /// Target value of this loop at measurement time.
    pub target: f64,
    /// Raw acquisition value at selection; 0 for seed points.
    pub acq: f64,
    pub was_jump: bool,
    /// Wall time of the step in milliseconds. Not exported (it would break
    /// byte-level reproducibility).
    #[serde(skip)]
    pub wall_ms: f64,
    /// Measured-set variability after this acquisition (0 below two points).
    pub variability: f64,
    /// Cross-mode scalarizer error, present on evaluation steps.
    pub nme: Option<f64>,
}

/// Full record of a realization.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentTrace {
    pub config: RunConfig,
    pub dataset_hash: String,
    pub records: Vec<TraceRecord>,
    pub complete: bool,
}

impl ExperimentTrace {
    pub fn jump_count(&self) -> usize {
        self.records.iter().filter(|r| r.was_jump).count()
    }

    pub fn final_variability(&self) -> Option<f64> {
        self.records.last().map(|r| r.variability)
    }

    pub fn nme_series(&self) -> Vec<(usize, f64)> {
        self.records
            .iter()
            .filter_map(|r| r.nme.map(|v| (r.step, v)))
            .collect()
    }

    pub fn final_nme(&self) -> Option<f64> {
        self.nme_series().last().map(|&(_, v)| v)
    }

    pub fn locations(&self) -> Vec<(usize, usize)> {
        self.records.iter().map(|r| r.loc).collect()
    }
}

/// Failures out of [`run_experiment`]. Mid-run numerical failures carry the
/// partial trace (marked incomplete) so it can still be persisted.
#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error("run setup failed: {0}")]
    Setup(#[source] Error),
    #[error("run aborted at step {step}: {source}")]
    Aborted {
        step: usize,
        partial: Box<ExperimentTrace>,
        #[source]
        source: Error,
    },
}

impl RunError {
    pub fn source_error(&self) -> &Error {
        match self {
            RunError::Setup(e) => e,
            RunError::Aborted { source, .. } => source,
        }
    }
}

/// Per-loop targets for the given mode. Novelty modes fall back gracefully
/// on tiny populations: neighbor counts clamp to `n - 1`, the forest
/// subsample clamps to `n`, and populations below each method's minimum get
/// all-zero targets.
pub fn compute_targets(
    loops: &[Vec<f64>],
    mode: Mode,
    ncfg: &NoveltyConfig,
    waveform: &VoltageWaveform,
) -> Result<Vec<f64>> {
    let n = loops.len();
    if n == 0 {
        return Err(Error::InsufficientPoints {
            what: "compute_targets",
            required: 1,
            actual: 0,
        });
    }
    match mode {
        Mode::Scalarizer => loops
            .iter()
            .map(|l| scalarize::loop_area(l, waveform))
            .collect(),
        Mode::Novelty | Mode::Insane => {
            ncfg.validate()?;
            if n == 1 {
                return Ok(vec![0.0]);
            }
            let mut cfg = ncfg.clone();
            match cfg.method {
                NoveltyMethod::Nn | NoveltyMethod::Lof => {
                    if cfg.k > n - 1 {
                        log::warn!(
                            "{} neighbor count {} clamped to {} (population {n})",
                            cfg.method.name(),
                            cfg.k,
                            n - 1
                        );
                        cfg.k = n - 1;
                    }
                }
                NoveltyMethod::If => {
                    if let Some(psi) = cfg.subsample {
                        if psi > n {
                            log::warn!(
                                "isolation-forest subsample {psi} clamped to population {n}"
                            );
                            cfg.subsample = Some(n);
                        }
                    }
                }
                _ => {}
            }
            novelty::score(loops, &cfg)
        }
    }
}

struct LoopState<'a> {
    ds: &'a GridDataset,
    cfg: RunConfig,
    acq_cfg: AcquisitionConfig,
    candidates: Vec<(usize, usize)>,
    /// scaled patch vector per candidate, aligned with `candidates`
    candidate_inputs: Vec<Vec<f64>>,
    measured: MeasuredSet,
    /// scaled patch vector per measured point, insertion order
    measured_inputs: Vec<Vec<f64>>,
    /// measurement-time targets, used directly when targets are frozen
    frozen: Vec<f64>,
    records: Vec<TraceRecord>,
    warm: Option<(FeatureNet<f64>, GpHyper<f64>)>,
    fit_seed: u64,
}

impl<'a> LoopState<'a> {
    fn targets(&self) -> Result<Vec<f64>> {
        if self.cfg.frozen_targets {
            Ok(self.frozen.clone())
        } else {
            compute_targets(
                &self.measured.spectra(),
                self.cfg.mode,
                &self.cfg.novelty,
                self.ds.waveform(),
            )
        }
    }

    fn record_variability(&self) -> f64 {
        if self.measured.len() < 2 {
            0.0
        } else {
            evalkit::variability(&self.measured.spectra()).unwrap_or(0.0)
        }
    }

    fn eval_fit_config(&self) -> FitConfig {
        // the evaluation surrogate starts cold, so it gets a longer schedule
        // than the warm-started per-step fits
        FitConfig {
            epochs: self.cfg.fit.epochs * 2,
            ..self.cfg.fit
        }
    }

    fn eval_nme(&self) -> Result<f64> {
        evalkit::eval_nme(
            self.ds,
            &self.measured,
            self.cfg.patch_side,
            &self.eval_fit_config(),
        )
    }
}

/// Runs a full realization on a pre-acquired dataset.
pub fn run_experiment(ds: &GridDataset, cfg: &RunConfig) -> Result<ExperimentTrace, RunError> {
    let cfg = cfg.resolve(ds.height(), ds.width()).map_err(RunError::Setup)?;
    let acq_cfg = cfg.acquisition.expect("resolved config has acquisition");
    let candidates = ds
        .candidate_locations(cfg.patch_side)
        .map_err(RunError::Setup)?;
    if cfg.n_init + cfg.n_steps > candidates.len() {
        return Err(RunError::Setup(Error::Config(format!(
            "{} seed + {} step acquisitions exceed {} candidates",
            cfg.n_init,
            cfg.n_steps,
            candidates.len()
        ))));
    }

    let (lo, hi) = ds.image_range();
    let scale = evalkit::patch_scaler(lo, hi);
    let candidate_inputs: Vec<Vec<f64>> = candidates
        .iter()
        .map(|&loc| {
            ds.extract_patch(loc, cfg.patch_side)
                .map(|p| scale(&p.values))
        })
        .collect::<Result<_>>()
        .map_err(RunError::Setup)?;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let fit_seed: u64 = rng.gen();
    let seed_picks = rand::seq::index::sample(&mut rng, candidates.len(), cfg.n_init);

    let mut state = LoopState {
        ds,
        acq_cfg,
        candidates,
        candidate_inputs,
        measured: MeasuredSet::new(),
        measured_inputs: Vec::new(),
        frozen: Vec::new(),
        records: Vec::new(),
        warm: None,
        fit_seed,
        cfg: cfg.clone(),
    };

    let trace = |state: &LoopState, complete: bool| ExperimentTrace {
        config: state.cfg.clone(),
        dataset_hash: ds.content_hash(),
        records: state.records.clone(),
        complete,
    };
    let abort = |state: &LoopState, step: usize, source: Error| RunError::Aborted {
        step,
        partial: Box::new(trace(state, false)),
        source,
    };

    // seed phase: distinct uniform draws from the candidate set
    let t0 = Instant::now();
    for idx in seed_picks.iter() {
        let loc = state.candidates[idx];
        let spectrum = ds.spectrum_at(loc).map_err(RunError::Setup)?;
        state.measured.insert(loc, spectrum).map_err(RunError::Setup)?;
        state.measured_inputs.push(state.candidate_inputs[idx].clone());
        state.records.push(TraceRecord {
            step: state.records.len(),
            loc,
            target: 0.0,
            acq: 0.0,
            was_jump: false,
            wall_ms: 0.0,
            variability: state.record_variability(),
            nme: None,
        });
    }
    // seed targets over the initial population
    let seed_targets = state.targets().map_err(|e| abort(&state, 0, e))?;
    for (rec, &target) in state.records.iter_mut().zip(&seed_targets) {
        rec.target = target;
    }
    state.frozen = seed_targets;
    let seed_nme = match state.eval_nme() {
        Ok(v) => Some(v),
        // constant ground truth leaves the metric undefined but the run valid
        Err(Error::DegenerateRange { .. }) => {
            log::warn!("scalarizer ground truth is constant; skipping error evaluation");
            None
        }
        Err(e) => return Err(abort(&state, 0, e)),
    };
    if let Some(last) = state.records.last_mut() {
        last.nme = seed_nme;
        last.wall_ms = t0.elapsed().as_secs_f64() * 1e3;
    }

    for t in 1..=cfg.n_steps {
        let step_start = Instant::now();
        let targets = state.targets().map_err(|e| abort(&state, t, e))?;

        let mut fit_cfg = cfg.fit;
        fit_cfg.seed = state.fit_seed;
        let model = surrogate::fit_warm(
            &state.measured_inputs,
            &targets,
            &fit_cfg,
            state.warm.take(),
        )
        .map_err(|e| abort(&state, t, e))?;
        state.warm = Some((model.net.clone(), model.hyper));

        // predict over unmeasured candidates
        let unmeasured: Vec<usize> = (0..state.candidates.len())
            .filter(|&i| !state.measured.contains(state.candidates[i]))
            .collect();
        let queries: Vec<Vec<f64>> = unmeasured
            .iter()
            .map(|&i| state.candidate_inputs[i].clone())
            .collect();
        let pred = model.predict(&queries).map_err(|e| abort(&state, t, e))?;

        let best = targets.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut acq_values = vec![f64::NEG_INFINITY; state.candidates.len()];
        for (&i, (mean, var)) in unmeasured.iter().zip(pred.mean.iter().zip(&pred.var)) {
            let sigma = var.max(0.0).sqrt();
            acq_values[i] = match state.acq_cfg.kind {
                AcquisitionKind::Ei { xi } => {
                    acquire::expected_improvement(*mean, sigma, best, xi)
                }
                AcquisitionKind::Ucb { beta } => acquire::ucb(*mean, sigma, beta),
            };
        }

        let (loc, was_jump) = acquire::select_next(
            &acq_values,
            &state.candidates,
            &state.measured,
            t,
            &state.acq_cfg,
        )
        .map_err(|e| abort(&state, t, e))?;
        let chosen_idx = state
            .candidates
            .iter()
            .position(|&l| l == loc)
            .expect("selection returns a candidate");

        let spectrum = ds.spectrum_at(loc).map_err(|e| abort(&state, t, e))?;
        state
            .measured
            .insert(loc, spectrum)
            .map_err(|e| abort(&state, t, e))?;
        state
            .measured_inputs
            .push(state.candidate_inputs[chosen_idx].clone());

        // the new point's target at measurement time, within the grown set
        let grown = compute_targets(
            &state.measured.spectra(),
            cfg.mode,
            &cfg.novelty,
            ds.waveform(),
        )
        .map_err(|e| abort(&state, t, e))?;
        let new_target = *grown.last().expect("nonempty targets");
        state.frozen.push(new_target);

        let nme = if t % cfg.eval_cadence == 0 || t == cfg.n_steps {
            match state.eval_nme() {
                Ok(v) => Some(v),
                Err(Error::DegenerateRange { .. }) => None,
                Err(e) => return Err(abort(&state, t, e)),
            }
        } else {
            None
        };

        state.records.push(TraceRecord {
            step: state.records.len(),
            loc,
            target: new_target,
            acq: acq_values[chosen_idx],
            was_jump,
            wall_ms: step_start.elapsed().as_secs_f64() * 1e3,
            variability: state.record_variability(),
            nme,
        });
    }

    Ok(trace(&state, true))
}
