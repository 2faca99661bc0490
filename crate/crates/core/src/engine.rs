//! Full runs: the per-step channel loop, parallel member updates with
//! serial reductions, regeneration cadence and the comparison protocols.
//!
//! Within a step the order is: decoherence channels, force-noise channels,
//! the first-order Hamiltonian term, then each measurement channel in
//! ascending index. Member updates run on the rayon pool; every reduction
//! (ensemble expectation, weight sum, density assembly) runs serially in
//! member order, so records do not depend on the worker count.

use rayon::prelude::*;

use crate::ensemble::{RegenReport, WeightedEnsemble};
use crate::error::{Error, Result};
use crate::hilbert::{trace_distance, DensityMatrix, Operator, SparseRows, StateVector};
use crate::noise::{NoiseStreams, StreamId};
use crate::reference::ReferenceIntegrator;
use crate::steppers::{
    self, DecoherenceChannel, HamiltonianNoiseChannel, MeasurementChannel, Scratch,
};

/// Operators and channels of one model. All operators share dimension `D`.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    dim: usize,
    hamiltonian: Operator,
    hamiltonian_rows: SparseRows,
    hamiltonian_is_zero: bool,
    decoherence: Vec<DecoherenceChannel>,
    ham_noise: Vec<HamiltonianNoiseChannel>,
    measurements: Vec<MeasurementChannel>,
    observables: Vec<(String, Operator)>,
}

pub struct ModelBuilder {
    hamiltonian: Operator,
    decoherence: Vec<DecoherenceChannel>,
    ham_noise: Vec<HamiltonianNoiseChannel>,
    measurements: Vec<MeasurementChannel>,
    observables: Vec<(String, Operator)>,
}

impl ModelBuilder {
    pub fn decoherence(mut self, ch: DecoherenceChannel) -> Self {
        self.decoherence.push(ch);
        self
    }

    pub fn ham_noise(mut self, ch: HamiltonianNoiseChannel) -> Self {
        self.ham_noise.push(ch);
        self
    }

    pub fn measurement(mut self, ch: MeasurementChannel) -> Self {
        self.measurements.push(ch);
        self
    }

    /// Measurement of `M` with efficiency `η`: a measurement channel of
    /// strength `ηk` plus a decoherence channel `(M, (1 − η)k)`.
    pub fn inefficient_measurement(self, op: Operator, strength: f64, efficiency: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&efficiency) {
            return Err(Error::Config(format!("efficiency must lie in [0, 1], got {efficiency}")));
        }
        let mut b = self.measurement(MeasurementChannel::new(op.clone(), efficiency * strength)?);
        if efficiency < 1.0 {
            b = b.decoherence(DecoherenceChannel::new(op, (1.0 - efficiency) * strength)?);
        }
        Ok(b)
    }

    pub fn observable(mut self, name: impl Into<String>, op: Operator) -> Self {
        self.observables.push((name.into(), op));
        self
    }

    pub fn build(self) -> Result<ModelSpec> {
        let dim = self.hamiltonian.dim();
        let defect = self.hamiltonian.hermiticity_defect();
        if defect > 1e-12 {
            return Err(Error::NotHermitian(defect));
        }
        let dims = self
            .decoherence
            .iter()
            .map(|c| c.op().dim())
            .chain(self.ham_noise.iter().map(|c| c.op().dim()))
            .chain(self.measurements.iter().map(|c| c.op().dim()))
            .chain(self.observables.iter().map(|(_, o)| o.dim()));
        for found in dims {
            if found != dim {
                return Err(Error::DimensionMismatch { expected: dim, found });
            }
        }
        for (name, op) in &self.observables {
            if !op.is_hermitian() {
                return Err(Error::Config(format!("observable \"{name}\" is not Hermitian")));
            }
        }
        let hamiltonian_is_zero = self.hamiltonian.entries().iter().all(|z| z.re == 0.0 && z.im == 0.0);
        Ok(ModelSpec {
            dim,
            hamiltonian_rows: SparseRows::new(&self.hamiltonian),
            hamiltonian: self.hamiltonian,
            hamiltonian_is_zero,
            decoherence: self.decoherence,
            ham_noise: self.ham_noise,
            measurements: self.measurements,
            observables: self.observables,
        })
    }
}

impl ModelSpec {
    pub fn builder(hamiltonian: Operator) -> ModelBuilder {
        ModelBuilder {
            hamiltonian,
            decoherence: Vec::new(),
            ham_noise: Vec::new(),
            measurements: Vec::new(),
            observables: Vec::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn hamiltonian(&self) -> &Operator {
        &self.hamiltonian
    }

    pub fn decoherence(&self) -> &[DecoherenceChannel] {
        &self.decoherence
    }

    pub fn ham_noise(&self) -> &[HamiltonianNoiseChannel] {
        &self.ham_noise
    }

    pub fn measurements(&self) -> &[MeasurementChannel] {
        &self.measurements
    }

    pub fn observables(&self) -> &[(String, Operator)] {
        &self.observables
    }

    pub fn observable_names(&self) -> Vec<String> {
        self.observables.iter().map(|(n, _)| n.clone()).collect()
    }

    /// Per-member noise sources: decoherence channels then force-noise channels.
    pub fn n_dv_channels(&self) -> usize {
        self.decoherence.len() + self.ham_noise.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Mc,
    Sme,
    Me,
    Compare,
    ErrorEstimate,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Mc => "mc",
            Mode::Sme => "sme",
            Mode::Me => "me",
            Mode::Compare => "compare",
            Mode::ErrorEstimate => "error-estimate",
        }
    }

    pub fn parse(s: &str) -> Result<Mode> {
        Ok(match s {
            "mc" => Mode::Mc,
            "sme" => Mode::Sme,
            "me" => Mode::Me,
            "compare" => Mode::Compare,
            "error-estimate" => Mode::ErrorEstimate,
            other => {
                return Err(Error::Config(format!(
                    "unknown mode \"{other}\" (expected mc, sme, me, compare, error-estimate)"
                )))
            }
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulationConfig {
    pub model: ModelSpec,
    pub initial: StateVector,
    /// Time step in units of the oscillator period.
    pub dt: f64,
    pub n_steps: u64,
    pub n_ens: usize,
    pub p_thresh: f64,
    pub regen_interval: u64,
    pub seed: u64,
    pub finest_dt: f64,
    /// 0 uses the base decoherence streams; `r > 0` uses `fork_dv(r)`.
    pub dv_replicate: u64,
    pub mode: Mode,
    pub output_stride: u64,
    /// Number of replicate runs for the error estimate.
    pub replicates: usize,
    /// In compare mode, also run at `dt/2` on the same Brownian path.
    pub refine: bool,
    /// Hash of the canonical configuration text, copied into records.
    pub config_hash: String,
}

impl SimulationConfig {
    /// Defaults for everything except the model and the step size.
    pub fn new(model: ModelSpec, initial: StateVector, dt: f64, n_steps: u64) -> Self {
        Self {
            model,
            initial,
            dt,
            n_steps,
            n_ens: 1,
            p_thresh: 0.2,
            regen_interval: 10,
            seed: 0,
            finest_dt: dt,
            dv_replicate: 0,
            mode: Mode::Mc,
            output_stride: 20,
            replicates: 2,
            refine: false,
            config_hash: String::new(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.initial.dim() != self.model.dim() {
            return fail(format!(
                "initial state dimension {} does not match model dimension {}",
                self.initial.dim(),
                self.model.dim()
            ));
        }
        if (self.initial.norm_sqr() - 1.0).abs() > 1e-12 {
            return fail("initial state must be normalized".into());
        }
        if self.n_steps == 0 {
            return fail("n_steps must be positive".into());
        }
        if self.n_ens == 0 {
            return fail("n_ens must be positive".into());
        }
        if !(self.p_thresh > 0.0 && self.p_thresh <= 1.0 / self.n_ens as f64) {
            return fail(format!(
                "P_thresh must be in (0, 1/n_ens] = (0, {}], got {}",
                1.0 / self.n_ens as f64,
                self.p_thresh
            ));
        }
        if self.regen_interval == 0 {
            return fail("regen_interval must be positive".into());
        }
        if self.output_stride == 0 {
            return fail("output_stride must be positive".into());
        }
        if !(self.finest_dt > 0.0 && self.finest_dt.is_finite()) {
            return fail(format!("finest_dt must be positive, got {}", self.finest_dt));
        }
        crate::noise::refinement_factor(self.finest_dt, self.dt)?;
        if self.refine && self.mode == Mode::Compare {
            crate::noise::refinement_factor(self.finest_dt, self.dt / 2.0).map_err(|_| {
                Error::Config("refine needs finest_dt <= dt/2 (dt/2 must be finest_dt · 2^m)".into())
            })?;
        }
        if self.mode == Mode::ErrorEstimate && self.replicates < 2 {
            return fail("error-estimate needs replicates >= 2".into());
        }
        Ok(())
    }

    /// The same run at `dt / 2^level` on the same Brownian path, with
    /// regeneration and recording at the same physical times.
    pub fn refined(&self, level: u32) -> SimulationConfig {
        let f = 1u64 << level;
        let mut c = self.clone();
        c.dt = self.dt / f as f64;
        c.n_steps = self.n_steps * f;
        c.regen_interval = self.regen_interval * f;
        c.output_stride = self.output_stride * f;
        c
    }

    fn noise(&self, replicate: u64) -> Result<NoiseStreams> {
        let base = NoiseStreams::new(
            self.seed,
            self.finest_dt,
            self.model.measurements().len(),
            self.n_ens,
            self.model.n_dv_channels(),
        )?;
        Ok(if replicate == 0 { base } else { base.fork_dv(replicate) })
    }
}

/// One recorded row.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryRow {
    pub step: u64,
    pub time: f64,
    pub observables: Vec<f64>,
    pub n_eff: f64,
    /// Largest `P_drop` among regenerations since the previous row.
    pub p_drop_step: f64,
    /// Running maximum of `P_drop`.
    pub p_drop_max: f64,
    /// Measurement outcome of the most recent step, per channel.
    pub alpha: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryRecord {
    pub observable_names: Vec<String>,
    pub n_measurements: usize,
    pub rows: Vec<TrajectoryRow>,
    /// Minimum of `N_eff` over every step, not only recorded ones.
    pub min_n_eff: f64,
    pub max_p_drop: f64,
    pub seed: u64,
    pub config_hash: String,
    pub mode: Mode,
}

impl TrajectoryRecord {
    fn new(cfg: &SimulationConfig, mode: Mode) -> Self {
        Self {
            observable_names: cfg.model.observable_names(),
            n_measurements: cfg.model.measurements().len(),
            rows: Vec::new(),
            min_n_eff: f64::INFINITY,
            max_p_drop: 0.0,
            seed: cfg.seed,
            config_hash: cfg.config_hash.clone(),
            mode,
        }
    }

    /// Values of one observable across rows.
    pub fn series(&self, name: &str) -> Option<Vec<f64>> {
        let i = self.observable_names.iter().position(|n| n == name)?;
        Some(self.rows.iter().map(|r| r.observables[i]).collect())
    }

    pub fn times(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.time).collect()
    }
}

/// What one MC step did besides moving the states.
#[derive(Debug, Clone, Default)]
pub struct StepOutcome {
    pub alpha: Vec<f64>,
    pub regen: Option<RegenReport>,
    /// `N_eff` after the measurement update, before any regeneration.
    pub n_eff: f64,
}

/// Advances every member through one time step.
pub fn step_mc(
    ens: &mut WeightedEnsemble,
    model: &ModelSpec,
    noise: &NoiseStreams,
    step: u64,
    dt: f64,
    regen: Option<(u64, f64)>,
) -> Result<StepOutcome> {
    let factor = noise.refinement(dt)?;
    let dim = model.dim();
    let n_dec = model.decoherence().len();
    let annihilated = |member: usize| Error::MemberAnnihilated { member, step };

    let needs_member_pass = model.decoherence().iter().any(|c| c.rate() > 0.0)
        || model.ham_noise().iter().any(|c| c.strength() > 0.0)
        || !model.hamiltonian_is_zero;
    if needs_member_pass {
        ens.states_mut().par_iter_mut().enumerate().try_for_each_init(
            || Scratch::new(dim),
            |scratch, (member, psi)| -> Result<()> {
                let amps = psi.amplitudes_mut();
                for (channel, ch) in model.decoherence().iter().enumerate() {
                    if ch.rate() == 0.0 {
                        continue;
                    }
                    let dv = noise.increment_with_factor(StreamId::Decoherence { member, channel }, step, factor)?;
                    steppers::decoherence_kernel(amps, ch, dv.0, dt, scratch);
                    steppers::normalize_in_place(amps).map_err(|_| annihilated(member))?;
                }
                for (h, ch) in model.ham_noise().iter().enumerate() {
                    if ch.strength() == 0.0 {
                        continue;
                    }
                    let id = StreamId::Decoherence { member, channel: n_dec + h };
                    let dv = noise.increment_with_factor(id, step, factor)?;
                    steppers::hamiltonian_noise_kernel(amps, ch, dv.0, scratch);
                    steppers::normalize_in_place(amps).map_err(|_| annihilated(member))?;
                }
                if !model.hamiltonian_is_zero {
                    steppers::hamiltonian_kernel(amps, &model.hamiltonian_rows, dt, scratch);
                    steppers::normalize_in_place(amps).map_err(|_| annihilated(member))?;
                }
                Ok(())
            },
        )?;
    }

    let mut outcome = StepOutcome { alpha: vec![0.0; model.measurements().len()], ..Default::default() };
    for (j, ch) in model.measurements().iter().enumerate() {
        let dw = noise.increment_with_factor(StreamId::Measurement(j), step, factor)?;
        // Serial reduction on the pre-step ensemble.
        let ens_exp = ens.expectation_sum_rows(ch.op_rows());
        outcome.alpha[j] = steppers::measurement_record(ch, ens_exp, dw, dt).0;
        if ch.strength() == 0.0 {
            continue;
        }
        let norms: Vec<f64> = ens
            .states_mut()
            .par_iter_mut()
            .enumerate()
            .map_init(
                || Scratch::new(dim),
                |scratch, (member, psi)| {
                    let amps = psi.amplitudes_mut();
                    steppers::measurement_kernel(amps, ch, ens_exp, dw.0, dt, scratch);
                    steppers::normalize_in_place(amps).map_err(|_| annihilated(member))
                },
            )
            .collect::<Result<_>>()?;
        ens.update_weights(&norms)?;
    }
    outcome.n_eff = ens.effective_size();

    if let Some((interval, p_thresh)) = regen {
        if (step + 1).is_multiple_of(interval) {
            outcome.regen = Some(ens.regenerate(p_thresh)?);
        }
    }
    Ok(outcome)
}

fn is_recorded(completed: u64, stride: u64, n_steps: u64) -> bool {
    completed.is_multiple_of(stride) || completed == n_steps
}

/// Which integrators to run in lockstep on one noise realization.
#[derive(Debug, Clone, Copy)]
struct Drive {
    mc: bool,
    sme: bool,
    me: bool,
}

#[derive(Debug, Clone)]
struct Driven {
    mc: Option<TrajectoryRecord>,
    oracle: Option<TrajectoryRecord>,
    /// Trace distance between the MC density and the oracle at each row.
    trace_distance: Vec<f64>,
}

fn oracle_row(rho: &DensityMatrix, model: &ModelSpec, step: u64, time: f64, alpha: Vec<f64>) -> TrajectoryRow {
    TrajectoryRow {
        step,
        time,
        observables: model
            .observables()
            .iter()
            .map(|(_, o)| rho.expectation(o).map(|z| z.re).unwrap_or(f64::NAN))
            .collect(),
        n_eff: 1.0,
        p_drop_step: 0.0,
        p_drop_max: 0.0,
        alpha,
    }
}

struct Recorder<'a> {
    model: &'a ModelSpec,
    dt: f64,
    mc: Option<TrajectoryRecord>,
    oracle: Option<TrajectoryRecord>,
    distances: Vec<f64>,
}

impl Recorder<'_> {
    fn record(
        &mut self,
        completed: u64,
        ens: Option<&WeightedEnsemble>,
        rho: &DensityMatrix,
        alpha_mc: &[f64],
        alpha_or: &[f64],
        window_drop: f64,
    ) -> Result<()> {
        let time = completed as f64 * self.dt;
        let model = self.model;
        let mut mc_rho = None;
        if let (Some(rec), Some(ens)) = (self.mc.as_mut(), ens) {
            let n_eff = ens.effective_size();
            rec.min_n_eff = rec.min_n_eff.min(n_eff);
            rec.rows.push(TrajectoryRow {
                step: completed,
                time,
                observables: model.observables().iter().map(|(_, o)| ens.mean(o)).collect(),
                n_eff,
                p_drop_step: window_drop,
                p_drop_max: rec.max_p_drop,
                alpha: alpha_mc.to_vec(),
            });
            mc_rho = Some(ens.assemble_density());
        }
        if let Some(rec) = self.oracle.as_mut() {
            rec.min_n_eff = 1.0;
            rec.rows.push(oracle_row(rho, model, completed, time, alpha_or.to_vec()));
            if let Some(a) = mc_rho {
                self.distances.push(trace_distance(&a, rho)?);
            }
        }
        Ok(())
    }
}

fn drive(cfg: &SimulationConfig, noise: &NoiseStreams, what: Drive) -> Result<Driven> {
    let model = &cfg.model;
    let dt = cfg.dt;
    let factor = noise.refinement(dt)?;
    let n_meas = model.measurements().len();

    let mut ens = if what.mc {
        Some(WeightedEnsemble::replicated(&cfg.initial, cfg.n_ens)?)
    } else {
        None
    };
    let oracle_mode = if what.sme { Mode::Sme } else { Mode::Me };
    let integrator = (what.sme || what.me).then(|| ReferenceIntegrator::new(model));
    let mut rho = DensityMatrix::pure(&cfg.initial);

    let mut rec = Recorder {
        model,
        dt,
        mc: what.mc.then(|| TrajectoryRecord::new(cfg, Mode::Mc)),
        oracle: integrator.as_ref().map(|_| TrajectoryRecord::new(cfg, oracle_mode)),
        distances: Vec::new(),
    };
    let mut window_drop = 0.0f64;
    let zeros = vec![0.0; n_meas];
    rec.record(0, ens.as_ref(), &rho, &zeros, &zeros, 0.0)?;

    let regen = Some((cfg.regen_interval, cfg.p_thresh));
    let mut dws = vec![0.0; n_meas];
    for step in 0..cfg.n_steps {
        let mut alpha_mc = zeros.clone();
        if let Some(ens) = ens.as_mut() {
            let out = step_mc(ens, model, noise, step, dt, regen)?;
            let rec = rec.mc.as_mut().expect("mc record");
            rec.min_n_eff = rec.min_n_eff.min(out.n_eff);
            if let Some(r) = out.regen {
                window_drop = window_drop.max(r.p_drop);
                rec.max_p_drop = rec.max_p_drop.max(r.p_drop);
            }
            alpha_mc = out.alpha;
        }
        let mut alpha_or = zeros.clone();
        if let Some(integ) = integrator.as_ref() {
            if what.sme {
                for (j, (dw, ch)) in dws.iter_mut().zip(model.measurements()).enumerate() {
                    *dw = noise.increment_with_factor(StreamId::Measurement(j), step, factor)?.0;
                    let ex = rho.expectation(&ch.op().add(ch.adjoint())?)?.re;
                    alpha_or[j] = 2.0 * ch.strength() * ex * dt + (2.0 * ch.strength()).sqrt() * *dw;
                }
                rho = integ.sme_step_direct(&rho, &dws, dt)?;
            } else {
                rho = integ.me_step(&rho, dt)?;
            }
        }
        let completed = step + 1;
        if is_recorded(completed, cfg.output_stride, cfg.n_steps) {
            rec.record(completed, ens.as_ref(), &rho, &alpha_mc, &alpha_or, window_drop)?;
            window_drop = 0.0;
        }
    }
    Ok(Driven { mc: rec.mc, oracle: rec.oracle, trace_distance: rec.distances })
}

fn with_pool<T: Send>(workers: Option<usize>, f: impl FnOnce() -> Result<T> + Send) -> Result<T> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(w) = workers {
        builder = builder.num_threads(w.max(1));
    }
    let pool = builder
        .build()
        .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))?;
    pool.install(f)
}

/// Runs `mc`, `sme` or `me` mode and returns the single trajectory record.
pub fn run(cfg: &SimulationConfig) -> Result<TrajectoryRecord> {
    run_with_workers(cfg, None)
}

pub fn run_with_workers(cfg: &SimulationConfig, workers: Option<usize>) -> Result<TrajectoryRecord> {
    cfg.validate()?;
    with_pool(workers, || {
        let noise = cfg.noise(cfg.dv_replicate)?;
        let what = match cfg.mode {
            Mode::Mc => Drive { mc: true, sme: false, me: false },
            Mode::Sme => Drive { mc: false, sme: true, me: false },
            Mode::Me => Drive { mc: false, sme: false, me: true },
            other => {
                return Err(Error::Config(format!(
                    "mode {} produces a report; use compare_shared_noise or estimate_error",
                    other.name()
                )))
            }
        };
        let d = drive(cfg, &noise, what)?;
        Ok(d.mc.or(d.oracle).expect("one record"))
    })
}

/// MC and oracle trajectories at one time step on a shared `dW` path.
#[derive(Debug, Clone)]
pub struct ComparisonRun {
    pub dt: f64,
    pub mc: TrajectoryRecord,
    /// Direct SME run (or master equation when the model has no measurement).
    pub oracle: TrajectoryRecord,
    pub trace_distance: Vec<f64>,
    /// `sup_t |⟨O⟩_MC − ⟨O⟩_oracle|` per observable.
    pub divergence: Vec<f64>,
    pub max_trace_distance: f64,
}

#[derive(Debug, Clone)]
pub struct CompareReport {
    pub observable_names: Vec<String>,
    pub base: ComparisonRun,
    /// The same comparison at `dt/2`, when requested.
    pub refined: Option<ComparisonRun>,
}

fn comparison(cfg: &SimulationConfig) -> Result<ComparisonRun> {
    let noise = cfg.noise(cfg.dv_replicate)?;
    let d = drive(cfg, &noise, Drive { mc: true, sme: true, me: false })?;
    let mc = d.mc.expect("mc record");
    let oracle = d.oracle.expect("oracle record");
    let divergence = (0..mc.observable_names.len())
        .map(|i| {
            mc.rows
                .iter()
                .zip(&oracle.rows)
                .map(|(a, b)| (a.observables[i] - b.observables[i]).abs())
                .fold(0.0, f64::max)
        })
        .collect();
    let max_trace_distance = d.trace_distance.iter().cloned().fold(0.0, f64::max);
    Ok(ComparisonRun { dt: cfg.dt, mc, oracle, trace_distance: d.trace_distance, divergence, max_trace_distance })
}

/// Runs MC and the direct SME on identical `dW` and reports their divergence.
pub fn compare_shared_noise(cfg: &SimulationConfig) -> Result<CompareReport> {
    compare_shared_noise_with_workers(cfg, None)
}

pub fn compare_shared_noise_with_workers(
    cfg: &SimulationConfig,
    workers: Option<usize>,
) -> Result<CompareReport> {
    cfg.validate()?;
    with_pool(workers, || {
        let base = comparison(cfg)?;
        let refined = if cfg.refine { Some(comparison(&cfg.refined(1))?) } else { None };
        Ok(CompareReport { observable_names: cfg.model.observable_names(), base, refined })
    })
}

#[derive(Debug, Clone)]
pub struct ErrorReport {
    pub observable_names: Vec<String>,
    pub replicates: Vec<TrajectoryRecord>,
    /// Largest difference between any two replicates over recorded times.
    pub error_estimate: Vec<f64>,
}

/// Repeats the MC run with shared `dW` and independent `dV` streams.
pub fn estimate_error(cfg: &SimulationConfig, replicates: usize) -> Result<ErrorReport> {
    estimate_error_with_workers(cfg, replicates, None)
}

pub fn estimate_error_with_workers(
    cfg: &SimulationConfig,
    replicates: usize,
    workers: Option<usize>,
) -> Result<ErrorReport> {
    cfg.validate()?;
    if replicates < 2 {
        return Err(Error::Config("error estimate needs at least 2 replicates".into()));
    }
    with_pool(workers, || {
        let mut runs = Vec::with_capacity(replicates);
        for r in 0..replicates as u64 {
            let noise = cfg.noise(r)?;
            let d = drive(cfg, &noise, Drive { mc: true, sme: false, me: false })?;
            runs.push(d.mc.expect("mc record"));
        }
        let n_obs = cfg.model.observables().len();
        let mut error_estimate = vec![0.0f64; n_obs];
        for (a, ra) in runs.iter().enumerate() {
            for rb in &runs[a + 1..] {
                for (x, y) in ra.rows.iter().zip(&rb.rows) {
                    for (i, e) in error_estimate.iter_mut().enumerate() {
                        *e = e.max((x.observables[i] - y.observables[i]).abs());
                    }
                }
            }
        }
        Ok(ErrorReport { observable_names: cfg.model.observable_names(), replicates: runs, error_estimate })
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hilbert::{build_annihilation, build_number};
    use crate::models;

    fn qubit_cfg(gamma: f64, n_ens: usize, n_steps: u64) -> SimulationConfig {
        let (model, init) = models::preset_qubit_decay(gamma).unwrap();
        let mut c = SimulationConfig::new(model, init, 1e-3, n_steps);
        c.n_ens = n_ens;
        c.p_thresh = 0.2 / n_ens as f64;
        c.output_stride = 10;
        c
    }

    #[test]
    fn empty_model_leaves_ensemble_unchanged() {
        let model = ModelSpec::builder(Operator::zeros(3).unwrap()).build().unwrap();
        let psi = crate::steppers::normalize_state(
            &StateVector::from_real(&[0.3, 0.4, 0.5]).unwrap(),
        )
        .unwrap()
        .0;
        let mut ens = WeightedEnsemble::replicated(&psi, 4).unwrap();
        let noise = NoiseStreams::new(1, 1e-3, 0, 4, 0).unwrap();
        let before = ens.clone();
        for s in 0..20 {
            step_mc(&mut ens, &model, &noise, s, 1e-3, Some((5, 0.01))).unwrap();
        }
        assert_eq!(ens, before);
    }

    #[test]
    fn zero_strength_measurement_keeps_uniform_weights() {
        let (model, init) = models::preset_oscillator(6, 2.0 * std::f64::consts::PI, 0.0, 0.1, 2).unwrap();
        let mut cfg = SimulationConfig::new(model, init, 1e-3, 200);
        cfg.n_ens = 16;
        cfg.p_thresh = 0.01;
        let noise = cfg.noise(0).unwrap();
        let mut ens = WeightedEnsemble::replicated(&cfg.initial, 16).unwrap();
        for s in 0..200 {
            step_mc(&mut ens, &cfg.model, &noise, s, 1e-3, Some((10, 0.01))).unwrap();
            assert!(ens.weights().iter().all(|&w| w.to_bits() == (1.0f64 / 16.0).to_bits()));
        }
    }

    #[test]
    fn me_mode_fock_state_stationary() {
        let (model, init) = models::preset_oscillator(10, 2.0 * std::f64::consts::PI, 0.0, 0.0, 3).unwrap();
        let mut cfg = SimulationConfig::new(model, init, 1e-3, 500);
        cfg.mode = Mode::Me;
        let rec = run(&cfg).unwrap();
        for v in rec.series("N").unwrap() {
            assert!((v - 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn runs_are_reproducible() {
        let mut cfg = qubit_cfg(0.2, 32, 200);
        cfg.seed = 5;
        let a = run(&cfg).unwrap();
        let b = run_with_workers(&cfg, Some(2)).unwrap();
        assert_eq!(a, b);
        cfg.seed = 6;
        assert_ne!(run(&cfg).unwrap(), a);
    }

    #[test]
    fn records_respect_invariants() {
        let (model, init) = models::preset_oscillator(6, 2.0 * std::f64::consts::PI, 0.5, 0.5, 2).unwrap();
        let mut cfg = SimulationConfig::new(model, init, 1e-3, 400);
        cfg.n_ens = 64;
        cfg.p_thresh = 0.2 / 64.0;
        let noise = cfg.noise(0).unwrap();
        let mut ens = WeightedEnsemble::replicated(&cfg.initial, 64).unwrap();
        for s in 0..400 {
            step_mc(&mut ens, &cfg.model, &noise, s, cfg.dt, Some((10, cfg.p_thresh))).unwrap();
            let total: f64 = ens.weights().iter().sum();
            assert!((total - 1.0).abs() < 1e-12);
            assert!(ens.max_norm_defect() < 1e-12);
            if s % 50 == 0 {
                ens.assemble_density().validate().unwrap();
            }
        }
        let rec = run(&cfg).unwrap();
        assert!(rec.rows.windows(2).all(|w| w[1].time > w[0].time && w[1].p_drop_max >= w[0].p_drop_max));
        assert!(rec.rows.iter().all(|r| r.n_eff >= 1.0 - 1e-12 && r.n_eff <= 64.0 + 1e-9));
        assert_eq!(rec.rows.len(), 21);
    }

    #[test]
    fn single_member_without_decoherence_has_no_replicate_spread() {
        let n = build_number(4).unwrap();
        let model = ModelSpec::builder(n.clone())
            .measurement(MeasurementChannel::new(n.clone(), 0.2).unwrap())
            .observable("N", n)
            .build()
            .unwrap();
        let init = crate::steppers::normalize_state(
            &StateVector::from_real(&[1.0, 1.0, 1.0, 1.0]).unwrap(),
        )
        .unwrap()
        .0;
        let mut cfg = SimulationConfig::new(model, init, 1e-3, 300);
        cfg.mode = Mode::ErrorEstimate;
        let rep = estimate_error(&cfg, 3).unwrap();
        assert_eq!(rep.error_estimate, vec![0.0]);
    }

    #[test]
    fn validation_messages() {
        let mut cfg = qubit_cfg(0.2, 1024, 10);
        cfg.p_thresh = 0.5;
        let msg = cfg.validate().unwrap_err().to_string();
        assert!(msg.contains("P_thresh"), "{msg}");
        let mut cfg = qubit_cfg(0.2, 4, 10);
        cfg.dt = 3e-3;
        assert!(cfg.validate().is_err());
        let mut cfg = qubit_cfg(0.2, 4, 10);
        cfg.mode = Mode::Compare;
        cfg.refine = true;
        assert!(cfg.validate().is_err());
        cfg.finest_dt = 5e-4;
        assert!(cfg.validate().is_ok());
    }

    #[test]
    fn inefficient_measurement_expands() {
        let a = build_annihilation(3).unwrap();
        let m = ModelSpec::builder(Operator::zeros(3).unwrap())
            .inefficient_measurement(a.clone(), 0.4, 0.75)
            .unwrap()
            .build()
            .unwrap();
        assert_eq!(m.measurements().len(), 1);
        assert!((m.measurements()[0].strength() - 0.3).abs() < 1e-15);
        assert_eq!(m.decoherence().len(), 1);
        assert!((m.decoherence()[0].rate() - 0.1).abs() < 1e-15);
        assert!(ModelSpec::builder(Operator::zeros(3).unwrap())
            .inefficient_measurement(a, 0.4, 1.5)
            .is_err());
    }
}
