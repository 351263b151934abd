//! Evaluation campaigns over needle × thread × angle grids.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::harness::config::{CampaignMode, Config, ControllerSpec};
use crate::harness::episode::{run_full_pipeline, run_insertion, EpisodeRecord};
use crate::insertion_env::EnvConfig;
use crate::policy::{Controller, PolicyController, PolicyParams, VsController};
use crate::seeding::derive_seed;
use crate::tail_finding::TipModel;

/// A loaded controller, instantiated fresh for every episode.
#[derive(Clone, Debug)]
pub enum ControllerKind {
    Vs,
    Policy(PolicyParams),
}

impl ControllerKind {
    /// Loads the checkpoint a spec names; a missing file is a config error.
    pub fn load(spec: &ControllerSpec) -> Result<Self> {
        match spec {
            ControllerSpec::Vs => Ok(Self::Vs),
            ControllerSpec::Policy(path) => {
                if !path.exists() {
                    return Err(Error::Config(format!("policy checkpoint {} not found", path.display())));
                }
                PolicyParams::load_json(path).map(Self::Policy).map_err(|e| match e {
                    Error::Config(m) => Error::Config(m),
                    other => Error::Config(format!("{}: {other}", path.display())),
                })
            }
        }
    }

    pub fn instantiate(&self) -> Box<dyn Controller> {
        match self {
            Self::Vs => Box::new(VsController),
            Self::Policy(p) => Box::new(PolicyController::new(p.clone())),
        }
    }

    pub fn name(&self) -> String {
        self.instantiate().name()
    }
}

/// Per-episode seed; independent of which other cells a campaign contains.
pub fn episode_seed(master: u64, needle: usize, thread: usize, angle: f64, episode: usize) -> u64 {
    derive_seed(master, &[needle as u64, thread as u64, angle.round() as u64, episode as u64])
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub needle: usize,
    pub thread: usize,
    pub angle: f64,
    /// Incompatible pairing; never executed.
    pub excluded: bool,
    pub episodes: usize,
    pub successes: usize,
    /// `None` for excluded or empty cells.
    pub success_rate: Option<f64>,
    /// Mean steps of successful episodes.
    pub mean_steps: Option<f64>,
    /// Mean final tip distance from the slot center, m.
    pub mean_final_offset: Option<f64>,
}

impl CellResult {
    fn from_records(needle: usize, thread: usize, angle: f64, records: &[&EpisodeRecord]) -> Self {
        let episodes = records.len();
        let wins: Vec<_> = records.iter().filter(|r| r.outcome.is_success()).collect();
        let offsets: Vec<f64> = records.iter().map(|r| r.final_offset).filter(|x| x.is_finite()).collect();
        let mean = |v: &[f64]| (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64);
        Self {
            needle,
            thread,
            angle,
            excluded: false,
            episodes,
            successes: wins.len(),
            success_rate: (episodes > 0).then(|| wins.len() as f64 / episodes as f64),
            mean_steps: mean(&wins.iter().map(|r| r.steps_taken as f64).collect::<Vec<_>>()),
            mean_final_offset: mean(&offsets),
        }
    }

    fn excluded(needle: usize, thread: usize, angle: f64) -> Self {
        Self {
            needle,
            thread,
            angle,
            excluded: true,
            episodes: 0,
            successes: 0,
            success_rate: None,
            mean_steps: None,
            mean_final_offset: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultsTable {
    pub controller: String,
    pub cells: Vec<CellResult>,
}

impl ResultsTable {
    pub fn cell(&self, needle: usize, thread: usize, angle: f64) -> Option<&CellResult> {
        self.cells.iter().find(|c| c.needle == needle && c.thread == thread && c.angle == angle)
    }

    /// Pooled success rate over the executed cells matching `keep`.
    pub fn pooled_rate(&self, keep: impl Fn(&CellResult) -> bool) -> Option<f64> {
        let (mut n, mut s) = (0, 0);
        for c in self.cells.iter().filter(|c| !c.excluded && keep(c)) {
            n += c.episodes;
            s += c.successes;
        }
        (n > 0).then(|| s as f64 / n as f64)
    }

    /// Pooled success rate over all executed cells.
    pub fn aggregate_rate(&self) -> Option<f64> {
        self.pooled_rate(|_| true)
    }

    /// Mean steps over every successful episode.
    pub fn aggregate_mean_steps(&self) -> Option<f64> {
        let (mut n, mut total) = (0, 0.0);
        for c in self.cells.iter().filter(|c| !c.excluded) {
            if let Some(m) = c.mean_steps {
                n += c.successes;
                total += m * c.successes as f64;
            }
        }
        (n > 0).then(|| total / n as f64)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CampaignOutput {
    pub table: ResultsTable,
    /// One record per executed episode, in cell then episode order.
    pub episodes: Vec<EpisodeRecord>,
}

/// Runs every executable cell of `config.campaign` on the rayon pool.
///
/// Results depend only on the configuration and master seed.
pub fn run_campaign(config: &Config, controller: &ControllerKind) -> Result<CampaignOutput> {
    config.validate()?;
    let c = &config.campaign;
    let tip_model = match (c.mode, &c.tip_model) {
        (CampaignMode::Pipeline, Some(p)) => Some(TipModel::load_json(p).map_err(|e| Error::Config(e.to_string()))?),
        _ => None,
    };
    if let Some(dir) = &c.image_dir {
        std::fs::create_dir_all(dir)?;
    }
    let cells = config.cells();
    let jobs: Vec<(usize, usize)> = cells
        .iter()
        .enumerate()
        .filter(|(_, cell)| !cell.3)
        .flat_map(|(i, _)| (0..c.episodes).map(move |e| (i, e)))
        .collect();
    let records: Vec<EpisodeRecord> = jobs
        .par_iter()
        .map(|&(i, e)| {
            let (needle, thread, angle, _) = cells[i];
            let env = EnvConfig { needle, thread, angle, ..config.env_config() };
            let seed = episode_seed(config.seed, needle, thread, angle, e);
            let mut ctl = controller.instantiate();
            let dir = c.image_dir.as_deref();
            match &tip_model {
                Some(m) => run_full_pipeline(&env, m, config.tip.tail_target, ctl.as_mut(), e, seed, dir),
                None => run_insertion(&env, ctl.as_mut(), e, seed, dir),
            }
        })
        .collect();

    let table = ResultsTable {
        controller: controller.name(),
        cells: cells
            .iter()
            .map(|&(n, t, a, excluded)| {
                if excluded {
                    CellResult::excluded(n, t, a)
                } else {
                    let rs: Vec<&EpisodeRecord> =
                        records.iter().filter(|r| r.needle == n && r.thread == t && r.angle == a).collect();
                    CellResult::from_records(n, t, a, &rs)
                }
            })
            .collect(),
    };
    Ok(CampaignOutput { table, episodes: records })
}
