use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::eval::{
    evaluate, EvalMetrics, PolicyRecommender, Recommender, StaticRecommender, UcbRecommender,
};
use super::{EnvKind, EvalError, ExperimentConfig, HarnessError, PolicyKind};
use crate::baselines::{BanditStats, StaticStrategy};
use crate::env::{
    load_catalog, load_matrix, load_records, synth_env, synth_logs, Environment, InteractionRecord,
    SynthMode, SynthSpec,
};
use crate::policy::{PlanStats, PolicyBundle};
use crate::seed::{derive_seed, stream_rng, Stage};
use crate::statetracker::TrackerInputs;
use crate::usermodel::{train_user_model, TrainData};

/// Evaluation environment plus the logs the user model learns from.
#[derive(Debug, Clone)]
pub struct World {
    pub env: Environment,
    pub records: Vec<InteractionRecord>,
    pub rating_scale: f64,
    /// Planted per-user sensitivity, for synthetic logs.
    pub planted_alpha: Option<Vec<f64>>,
}

/// Build the world described by `cfg`. Synthetic worlds and logs draw
/// from seeds derived from `cfg.seed`.
pub fn build_world(cfg: &ExperimentConfig) -> Result<World, HarnessError> {
    let e = &cfg.env;
    let exit = e.exit_config()?;
    let synth = |mode| -> Result<World, HarnessError> {
        let world = synth_env(&SynthSpec {
            n_users: e.n_users,
            n_items: e.n_items,
            mode,
            seed: derive_seed(cfg.seed, Stage::Data, 0),
        })
        .map_err(HarnessError::Data)?;
        let mut spec = cfg.logs;
        spec.seed = derive_seed(cfg.seed, Stage::Data, 1);
        let logs = synth_logs(&world, &spec).map_err(HarnessError::Data)?;
        let rating_scale = e.rating_scale.unwrap_or(world.rating_max());
        Ok(World {
            env: Environment::new(world.matrix, world.catalog, exit, world.user_features)
                .map_err(HarnessError::Data)?,
            records: logs.records,
            rating_scale,
            planted_alpha: Some(logs.alpha),
        })
    };
    match e.kind {
        EnvKind::SyntheticCategorical => synth(SynthMode::Categorical { vocab: e.vocab }),
        EnvKind::SyntheticContinuous => synth(SynthMode::Continuous {
            user_dim: e.user_dim,
            action_dim: e.action_dim,
        }),
        EnvKind::Files => {
            let need = |p: &Option<PathBuf>, key: &str| {
                p.clone()
                    .ok_or_else(|| HarnessError::Config(format!("env.{key} is required for files")))
            };
            let matrix = load_matrix(need(&e.matrix, "matrix")?).map_err(HarnessError::Data)?;
            let catalog = load_catalog(need(&e.catalog, "catalog")?, e.catalog_vocab)
                .map_err(HarnessError::Data)?;
            let records = load_records(need(&e.logs, "logs")?).map_err(HarnessError::Data)?;
            let rating_scale = e.rating_scale.unwrap_or_else(|| matrix.max_value());
            if !(rating_scale > 0.0) {
                return Err(HarnessError::Config(
                    "rating matrix is all zeros; set env.rating_scale".into(),
                ));
            }
            Ok(World {
                env: Environment::new(matrix, catalog, exit, None).map_err(HarnessError::Data)?,
                records,
                rating_scale,
                planted_alpha: None,
            })
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub epoch: usize,
    pub mean_cum_sat: f64,
    pub mean_len: f64,
    pub mean_single_round: f64,
}

impl MetricsRow {
    fn new(epoch: usize, m: &EvalMetrics) -> Self {
        Self {
            epoch,
            mean_cum_sat: m.mean_cum_sat,
            mean_len: m.mean_len,
            mean_single_round: m.mean_single_round,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub policy: PolicyKind,
    pub metrics: Vec<MetricsRow>,
    /// Empty for policies that do not plan.
    pub planning: Vec<PlanStats>,
    /// Evaluation of the last epoch.
    pub last_eval: EvalMetrics,
}

impl RunSummary {
    pub fn final_row(&self) -> &MetricsRow {
        self.metrics.last().expect("at least one epoch")
    }
}

struct Csv {
    path: PathBuf,
    w: BufWriter<File>,
}

impl Csv {
    fn create(path: PathBuf, header: &str) -> Result<Self, HarnessError> {
        let f = File::create(&path).map_err(|source| HarnessError::Io {
            path: path.clone(),
            source,
        })?;
        let mut c = Self {
            path,
            w: BufWriter::new(f),
        };
        c.row(header)?;
        Ok(c)
    }

    /// Write one line and flush it to disk.
    fn row(&mut self, line: &str) -> Result<(), HarnessError> {
        writeln!(self.w, "{line}")
            .and_then(|_| self.w.flush())
            .map_err(|source| HarnessError::Io {
                path: self.path.clone(),
                source,
            })
    }
}

struct Outputs {
    dir: PathBuf,
    metrics: Csv,
    trajectories: Csv,
    planning: Option<Csv>,
}

impl Outputs {
    fn create(dir: &Path, cfg: &ExperimentConfig) -> Result<Self, HarnessError> {
        let io = |path: &Path| {
            let path = path.to_path_buf();
            move |source| HarnessError::Io { path, source }
        };
        fs::create_dir_all(dir).map_err(io(dir))?;
        let config = dir.join("config.toml");
        fs::write(&config, cfg.to_toml_string()?).map_err(io(&config))?;
        let seed = dir.join("seed.txt");
        fs::write(&seed, format!("{}\n", cfg.seed)).map_err(io(&seed))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            metrics: Csv::create(
                dir.join("metrics.csv"),
                "epoch,mean_cum_sat,mean_len,mean_single_round",
            )?,
            trajectories: Csv::create(
                dir.join("trajectories.csv"),
                "epoch,trajectory,user,length,cum_sat,single_round,exit_reason,items",
            )?,
            planning: if cfg.policy.plans() {
                Some(Csv::create(
                    dir.join("planning.csv"),
                    "epoch,mean_return,repeat_rate,objective,value_loss,entropy,clip_fraction",
                )?)
            } else {
                None
            },
        })
    }

    fn record(
        &mut self,
        row: &MetricsRow,
        eval: &EvalMetrics,
        plan: Option<&PlanStats>,
    ) -> Result<(), HarnessError> {
        if let (Some(csv), Some(p)) = (self.planning.as_mut(), plan) {
            let u = &p.update;
            csv.row(&format!(
                "{},{},{},{},{},{},{}",
                p.epoch,
                p.mean_return,
                p.repeat_rate,
                u.objective,
                u.value_loss,
                u.entropy,
                u.clip_fraction
            ))?;
        }
        for (k, t) in eval.trajectories.iter().enumerate() {
            let mut items = String::new();
            for (n, i) in t.items.iter().enumerate() {
                let _ = write!(items, "{}{i}", if n == 0 { "" } else { "|" });
            }
            self.trajectories.row(&format!(
                "{},{k},{},{},{},{},{},{items}",
                row.epoch,
                t.user,
                t.length(),
                t.cumulative,
                t.single_round(),
                t.exit_reason
            ))?;
        }
        self.metrics.row(&format!(
            "{},{},{},{}",
            row.epoch, row.mean_cum_sat, row.mean_len, row.mean_single_round
        ))
    }
}

/// Run the full pipeline for one configuration. Artifacts go to
/// `cfg.out_dir` when set; metrics rows are flushed as epochs finish.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunSummary, HarnessError> {
    let mut cfg = cfg.clone();
    cfg.validate()?;
    cfg.logs.seed = derive_seed(cfg.seed, Stage::Data, 1);
    cfg.user_model.seed = derive_seed(cfg.seed, Stage::Pretrain, 0);

    let world = build_world(&cfg)?;
    let env = &world.env;
    let mut out = match &cfg.out_dir {
        Some(d) => Some(Outputs::create(d, &cfg)?),
        None => None,
    };

    let data = TrainData {
        records: &world.records,
        catalog: env.catalog(),
        n_users: env.n_users(),
        n_items: env.n_items(),
        rating_scale: world.rating_scale,
    };
    let model = train_user_model(&data, &cfg.user_model, cfg.effective_exposure())
        .map_err(HarnessError::Pretrain)?;
    if let Some(o) = &out {
        model
            .save(o.dir.join("user_model"))
            .map_err(|e| HarnessError::Output(format!("user model checkpoint: {e}")))?;
    }

    let mut metrics = Vec::with_capacity(cfg.epochs);
    let mut planning = Vec::new();
    let mut last_eval = None;
    let mut finish_epoch = |epoch: usize,
                            eval: EvalMetrics,
                            plan: Option<PlanStats>,
                            out: &mut Option<Outputs>|
     -> Result<(), HarnessError> {
        let row = MetricsRow::new(epoch, &eval);
        if let Some(o) = out.as_mut() {
            o.record(&row, &eval, plan.as_ref())?;
        }
        metrics.push(row);
        planning.extend(plan);
        last_eval = Some(eval);
        Ok(())
    };
    let eval_err = |epoch| move |source: EvalError| HarnessError::Eval { epoch, source };
    let n = cfg.eval_trajectories;

    if cfg.policy.plans() {
        let inputs = tracker_inputs(env);
        let mut init = stream_rng(cfg.seed, Stage::Init, 0, 0);
        let mut bundle = PolicyBundle::new(cfg.planner, inputs, &mut init)
            .map_err(|source| HarnessError::Plan { epoch: 0, source })?;
        for epoch in 0..cfg.epochs {
            let stats = bundle
                .plan_epoch(&model, cfg.seed, epoch)
                .map_err(|source| HarnessError::Plan { epoch, source })?;
            let mut rec = PolicyRecommender::new(&bundle, cfg.eval_mode, world.rating_scale);
            let eval =
                evaluate(&mut rec, env, n, cfg.seed, epoch as u64).map_err(eval_err(epoch))?;
            finish_epoch(epoch, eval, Some(stats), &mut out)?;
        }
        if let Some(o) = &out {
            bundle
                .save(o.dir.join("policy"))
                .map_err(|e| HarnessError::Output(format!("policy checkpoint: {e}")))?;
        }
    } else {
        let b = cfg.baselines;
        let mut rec: Box<dyn Recommender> = match cfg.policy {
            PolicyKind::Random => Box::new(StaticRecommender::random(env.n_items())),
            PolicyKind::EpsGreedy => Box::new(StaticRecommender::new(
                &model,
                StaticStrategy::EpsGreedy { eps: b.eps },
            )),
            PolicyKind::SoftmaxStatic => Box::new(StaticRecommender::new(
                &model,
                StaticStrategy::Softmax {
                    temperature: b.softmax_temperature,
                },
            )),
            PolicyKind::Ucb => Box::new(UcbRecommender::new(
                BanditStats::new(env.n_items(), b.ucb_c)
                    .map_err(|e| HarnessError::Config(e.to_string()))?,
                world.rating_scale,
            )),
            PolicyKind::Cirs | PolicyKind::CirsNoCi => {
                unreachable!("planning policies handled above")
            }
        };
        for epoch in 0..cfg.epochs {
            let eval =
                evaluate(rec.as_mut(), env, n, cfg.seed, epoch as u64).map_err(eval_err(epoch))?;
            finish_epoch(epoch, eval, None, &mut out)?;
        }
    }
    Ok(RunSummary {
        policy: cfg.policy,
        metrics,
        planning,
        last_eval: last_eval.expect("epochs >= 1"),
    })
}

fn tracker_inputs(env: &Environment) -> TrackerInputs {
    match (env.user_features(), env.catalog().is_categorical()) {
        (Some(users), false) => TrackerInputs::Features {
            users: users.to_vec(),
            items: (0..env.n_items())
                .map(|i| env.catalog().vector(i).expect("vector catalog").to_vec())
                .collect(),
        },
        _ => TrackerInputs::Embedded {
            n_users: env.n_users(),
            n_items: env.n_items(),
        },
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepCell {
    pub tau: f64,
    pub tau_star: f64,
    /// Final-epoch mean cumulative satisfaction, or the failure message.
    pub outcome: Result<f64, String>,
}

/// One CIRS run per `(tau, tau_star)` pair with shared data and seeds.
/// A failing cell is recorded and the sweep moves on. With `cfg.out_dir`
/// set, each cell gets a subdirectory and `sweep.csv` collects the matrix.
pub fn sweep(
    cfg: &ExperimentConfig,
    taus: &[f64],
    tau_stars: &[f64],
) -> Result<Vec<SweepCell>, HarnessError> {
    if taus.is_empty() || tau_stars.is_empty() {
        return Err(HarnessError::Config("sweep grids must be non-empty".into()));
    }
    let mut csv = match &cfg.out_dir {
        Some(d) => {
            fs::create_dir_all(d).map_err(|source| HarnessError::Io {
                path: d.clone(),
                source,
            })?;
            Some(Csv::create(
                d.join("sweep.csv"),
                "tau,tau_star,final_cum_sat",
            )?)
        }
        None => None,
    };
    let mut cells = Vec::with_capacity(taus.len() * tau_stars.len());
    for &tau in taus {
        for &tau_star in tau_stars {
            let mut c = cfg.clone();
            c.policy = PolicyKind::Cirs;
            c.exposure.tau = tau;
            c.exposure.tau_star = tau_star;
            c.out_dir = cfg
                .out_dir
                .as_ref()
                .map(|d| d.join(format!("tau_{tau}_tau_star_{tau_star}")));
            let outcome = run_experiment(&c)
                .map(|s| s.final_row().mean_cum_sat)
                .map_err(|e| e.to_string());
            if let Some(csv) = csv.as_mut() {
                match &outcome {
                    Ok(v) => csv.row(&format!("{tau},{tau_star},{v}"))?,
                    Err(msg) => {
                        csv.row(&format!("{tau},{tau_star},NaN"))?;
                        let dir = c.out_dir.as_ref().expect("out dir set");
                        let path = dir.join("error.txt");
                        fs::create_dir_all(dir)
                            .and_then(|_| fs::write(&path, format!("{msg}\n")))
                            .map_err(|source| HarnessError::Io { path, source })?;
                    }
                }
            }
            cells.push(SweepCell {
                tau,
                tau_star,
                outcome,
            });
        }
    }
    Ok(cells)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::PpoConfig;

    fn tiny() -> ExperimentConfig {
        let mut cfg = ExperimentConfig::default();
        cfg.env.n_users = 4;
        cfg.env.n_items = 12;
        cfg.env.vocab = 6;
        cfg.env.max_round = 6;
        cfg.logs.sessions_per_user = 1;
        cfg.logs.session_len = 10;
        cfg.user_model.epochs = 2;
        cfg.epochs = 2;
        cfg.eval_trajectories = 5;
        cfg.planner.tracker.d_s = 8;
        cfg.planner.ppo = PpoConfig {
            rollouts_per_epoch: 2,
            minibatch_size: 2,
            update_epochs: 1,
            hidden: 8,
            ..PpoConfig::default()
        };
        cfg
    }

    #[test]
    fn every_policy_produces_one_row_per_epoch() {
        for p in PolicyKind::ALL {
            let mut cfg = tiny();
            cfg.policy = p;
            let s = run_experiment(&cfg).unwrap();
            assert_eq!(s.metrics.len(), 2, "{p}");
            assert_eq!(s.planning.len(), if p.plans() { 2 } else { 0 });
            assert_eq!(s.last_eval.trajectories.len(), 5);
        }
    }

    #[test]
    fn writes_artifacts() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = tiny();
        cfg.out_dir = Some(dir.path().join("run"));
        run_experiment(&cfg).unwrap();
        let run = dir.path().join("run");
        for f in [
            "metrics.csv",
            "trajectories.csv",
            "planning.csv",
            "config.toml",
            "seed.txt",
            "user_model.params",
            "user_model.json",
            "policy.params",
            "policy.json",
        ] {
            assert!(run.join(f).is_file(), "{f}");
        }
        let metrics = fs::read_to_string(run.join("metrics.csv")).unwrap();
        assert_eq!(metrics.lines().count(), 3);
        assert!(metrics.starts_with("epoch,mean_cum_sat,mean_len,mean_single_round\n"));
        let resolved = ExperimentConfig::load(run.join("config.toml")).unwrap();
        assert_eq!(resolved.seed, cfg.seed);
        assert_eq!(
            fs::read_to_string(run.join("trajectories.csv"))
                .unwrap()
                .lines()
                .count(),
            11
        );
    }

    #[test]
    fn zero_grid_cell_matches_the_ablation() {
        let mut cfg = tiny();
        let cells = sweep(&cfg, &[0.0], &[0.0]).unwrap();
        cfg.policy = PolicyKind::CirsNoCi;
        let s = run_experiment(&cfg).unwrap();
        assert_eq!(cells[0].outcome, Ok(s.final_row().mean_cum_sat));
    }

    #[test]
    fn failing_cells_are_recorded() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = tiny();
        cfg.out_dir = Some(dir.path().to_path_buf());
        let cells = sweep(&cfg, &[-1.0, 0.0], &[0.0]).unwrap();
        assert!(cells[0].outcome.is_err());
        assert!(cells[1].outcome.is_ok());
        let text = fs::read_to_string(dir.path().join("sweep.csv")).unwrap();
        assert_eq!(text.lines().count(), 3);
        assert!(text.lines().nth(1).unwrap().ends_with("NaN"));
        assert!(sweep(&cfg, &[], &[0.0]).is_err());
    }

    #[test]
    fn stage_failures_are_tagged() {
        let mut cfg = tiny();
        cfg.user_model.lr = -1.0;
        let err = run_experiment(&cfg).unwrap_err();
        assert!(matches!(err, HarnessError::Config(_)), "{err}");
        let mut cfg = tiny();
        cfg.logs.slate_size = 0;
        let err = run_experiment(&cfg).unwrap_err();
        assert!(err.to_string().starts_with("data stage"), "{err}");
    }
}
