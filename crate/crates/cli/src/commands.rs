use std::fs;
use std::path::{Path, PathBuf};

use log::info;
use rayon::prelude::*;
use serde::Serialize;
use ssp_core::pipeline::match_episode;
use ssp_core::{Diagnostics, Mask, SspConfig};
use ssp_harness::analysis::{partial_prototype_experiment, similarity_stats, PartialReport};
use ssp_harness::eval::{ablation_table, sweep_thresholds, REFERENCE_PLATEAU};
use ssp_harness::gradcheck::gradcheck;
use ssp_harness::manifest::{load_episodes, load_manifest, write_episodes, Manifest};
use ssp_harness::metrics::Scores;
use ssp_harness::sspt::write_tensor_file;
use ssp_harness::synth::suite;
use ssp_harness::{evaluate, Ablation, Episode, SyntheticSpec};

use crate::error::CliError;
use crate::output::{csv, emit, json, pct, Format};
use crate::settings::Settings;
use crate::{Command, Source};

pub struct Context {
    pub settings: Settings,
    pub out: Option<PathBuf>,
    pub format: Format,
}

#[derive(Debug, Clone, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum EpisodeSource {
    Manifest {
        path: String,
    },
    Synthetic {
        spec: SyntheticSpec,
        episodes: usize,
        shots: usize,
    },
}

/// Every JSON artifact: the run settings followed by the result.
#[derive(Serialize)]
struct Envelope<'a, T: Serialize> {
    command: &'static str,
    seed: u64,
    config: &'a SspConfig,
    source: Option<&'a EpisodeSource>,
    result: T,
}

impl Context {
    fn echo(&self, command: &str, source: Option<&EpisodeSource>) -> Vec<(&'static str, String)> {
        let compact = |v: &dyn erased::Json| v.compact();
        let mut lines = vec![
            ("command", command.to_string()),
            ("seed", self.settings.seed.to_string()),
            ("config", compact(&self.settings.config)),
        ];
        if let Some(s) = source {
            lines.push(("source", compact(s)));
        }
        lines
    }

    fn write_json<T: Serialize>(
        &self,
        command: &'static str,
        source: Option<&EpisodeSource>,
        result: T,
    ) -> Result<(), CliError> {
        let env = Envelope {
            command,
            seed: self.settings.seed,
            config: &self.settings.config,
            source,
            result,
        };
        emit(self.out.as_deref(), &json(&env))
    }

    fn write_table<T: Serialize, R: Serialize>(
        &self,
        command: &'static str,
        source: Option<&EpisodeSource>,
        result: T,
        rows: &[R],
    ) -> Result<(), CliError> {
        match self.format {
            Format::Json => self.write_json(command, source, result),
            Format::Csv => emit(
                self.out.as_deref(),
                &csv(&self.echo(command, source), rows)?,
            ),
        }
    }

    fn json_only(&self, command: &str) -> Result<(), CliError> {
        match self.format {
            Format::Json => Ok(()),
            Format::Csv => Err(CliError::Usage(format!("`{command}` only writes JSON"))),
        }
    }

    fn episodes(&self, source: &Source) -> Result<(Vec<Episode>, EpisodeSource), CliError> {
        match &source.manifest {
            Some(path) => {
                let eps = load_episodes(path)?;
                info!("loaded {} episodes from {}", eps.len(), path.display());
                Ok((
                    eps,
                    EpisodeSource::Manifest {
                        path: path.display().to_string(),
                    },
                ))
            }
            None => {
                if source.episodes == 0 || source.shots == 0 {
                    return Err(CliError::Usage(
                        "--episodes and --shots must be positive".into(),
                    ));
                }
                let spec = self.settings.synth.clone();
                let eps = suite(&spec, source.episodes, source.shots)?;
                info!("generated {} synthetic episodes", eps.len());
                Ok((
                    eps,
                    EpisodeSource::Synthetic {
                        spec,
                        episodes: source.episodes,
                        shots: source.shots,
                    },
                ))
            }
        }
    }
}

mod erased {
    pub trait Json {
        fn compact(&self) -> String;
    }

    impl<T: serde::Serialize> Json for T {
        fn compact(&self) -> String {
            serde_json::to_string(self).expect("serializes")
        }
    }
}

pub fn dispatch(ctx: &Context, command: Command) -> Result<(), CliError> {
    match command {
        Command::Match { manifest, ablation } => cmd_match(ctx, &manifest, ablation),
        Command::Eval { source, ablation } => cmd_eval(ctx, &source, ablation),
        Command::SweepThreshold {
            source,
            tau_fg,
            tau_bg,
        } => cmd_sweep(ctx, &source, &tau_fg, &tau_bg),
        Command::Ablate { source } => cmd_ablate(ctx, &source),
        Command::Stats { source, pairs } => cmd_stats(ctx, &source, pairs),
        Command::PartialProto {
            source,
            ratio,
            noise,
            mode,
        } => cmd_partial(ctx, &source, &ratio, &noise, &mode),
        Command::GenSynthetic { episodes, shots } => cmd_gen(ctx, episodes, shots),
        Command::VerifyGrad {
            cases,
            shape,
            step,
            tolerance,
        } => cmd_verify_grad(ctx, cases, &shape, step, tolerance),
    }
}

#[derive(Serialize)]
struct StageCount {
    /// Pixels whose foreground probability exceeds 0.5.
    fg_pixels: usize,
    file: String,
}

#[derive(Serialize)]
struct StageCounts {
    m1: StageCount,
    m2: Option<StageCount>,
    m3: Option<StageCount>,
    m_final: StageCount,
}

#[derive(Serialize)]
struct StageScoreSet {
    m1: Scores,
    m2: Option<Scores>,
    m_final: Scores,
}

#[derive(Serialize)]
struct MatchSummary {
    episode_id: u64,
    class_id: u32,
    shots: usize,
    height: usize,
    width: usize,
    stages: StageCounts,
    diagnostics: Diagnostics,
    scores: Option<StageScoreSet>,
}

fn fg_pixels(m: &Mask) -> usize {
    m.data().iter().filter(|&&v| v > 0.5).count()
}

fn cmd_match(ctx: &Context, manifest: &Path, ablation: Ablation) -> Result<(), CliError> {
    ctx.json_only("match")?;
    let dir = ctx
        .out
        .as_deref()
        .ok_or_else(|| CliError::Usage("`match` needs --out DIR for the mask files".into()))?;
    let episodes = load_manifest(manifest)?;
    fs::create_dir_all(dir).map_err(|e| CliError::Format(format!("{}: {e}", dir.display())))?;
    let cfg = &ctx.settings.config;
    let mut summaries = episodes
        .par_iter()
        .map(|ep| {
            let r = match_episode(&ep.supports, &ep.query, cfg, ablation.variant())
                .map_err(|e| CliError::Pipeline(format!("episode {}: {e}", ep.episode_id)))?;
            let save = |stage: &str, m: &Mask| -> Result<StageCount, CliError> {
                let name = format!("e{}_{stage}.sspt", ep.episode_id);
                write_tensor_file(dir.join(&name), &m.clone().into())?;
                Ok(StageCount {
                    fg_pixels: fg_pixels(m),
                    file: name,
                })
            };
            let stages = StageCounts {
                m1: save("m1", &r.m1.fg)?,
                m2: r.m2.as_ref().map(|m| save("m2", &m.fg)).transpose()?,
                m3: r.m3.as_ref().map(|m| save("m3", &m.fg)).transpose()?,
                m_final: save("m_final", &r.m_final.fg)?,
            };
            let scores = ep.query_gt.as_ref().map(|gt| StageScoreSet {
                m1: Scores::of(&r.m1.fg, gt),
                m2: r.m2.as_ref().map(|m| Scores::of(&m.fg, gt)),
                m_final: Scores::of(&r.m_final.fg, gt),
            });
            Ok(MatchSummary {
                episode_id: ep.episode_id,
                class_id: ep.class_id,
                shots: ep.supports.len(),
                height: ep.query.height(),
                width: ep.query.width(),
                stages,
                diagnostics: r.diagnostics,
                scores,
            })
        })
        .collect::<Result<Vec<_>, CliError>>()?;
    summaries.sort_by_key(|s| s.episode_id);

    #[derive(Serialize)]
    struct MatchResultJson<'a> {
        ablation: Ablation,
        episodes: &'a [MatchSummary],
    }
    let source = EpisodeSource::Manifest {
        path: manifest.display().to_string(),
    };
    let env = Envelope {
        command: "match",
        seed: ctx.settings.seed,
        config: cfg,
        source: Some(&source),
        result: MatchResultJson {
            ablation,
            episodes: &summaries,
        },
    };
    let text = json(&env);
    emit(Some(&dir.join("summary.json")), &text)?;
    emit(None, &text)
}

#[derive(Serialize)]
struct EvalRow {
    episode_id: u64,
    class_id: u32,
    iou: f64,
    mae_all_x100: f64,
    mae_tp_x100: Option<f64>,
    m1_iou: f64,
    m2_iou: Option<f64>,
}

fn cmd_eval(ctx: &Context, source: &Source, ablation: Ablation) -> Result<(), CliError> {
    let (eps, src) = ctx.episodes(source)?;
    let report = evaluate(&eps, &ctx.settings.config, ablation, ctx.settings.seed)?;
    info!("mIoU {:.4}, MAE {:.2}", report.miou, pct(report.mae_all));
    let rows: Vec<EvalRow> = report
        .episodes
        .iter()
        .map(|e| EvalRow {
            episode_id: e.episode_id,
            class_id: e.class_id,
            iou: e.iou,
            mae_all_x100: pct(e.mae_all),
            mae_tp_x100: e.mae_tp.map(pct),
            m1_iou: e.stages.m1.iou,
            m2_iou: e.stages.m2.map(|s| s.iou),
        })
        .collect();
    ctx.write_table("eval", Some(&src), &report, &rows)
}

fn cmd_sweep(
    ctx: &Context,
    source: &Source,
    taus_fg: &[f64],
    taus_bg: &[f64],
) -> Result<(), CliError> {
    if taus_fg.is_empty() || taus_bg.is_empty() {
        return Err(CliError::Usage("threshold grid is empty".into()));
    }
    let (eps, src) = ctx.episodes(source)?;
    let rows = sweep_thresholds(
        &eps,
        &ctx.settings.config,
        taus_fg,
        taus_bg,
        ctx.settings.seed,
    )?;

    #[derive(Serialize)]
    struct Plateau {
        tau_fg: (f64, f64),
        tau_bg: (f64, f64),
    }
    #[derive(Serialize)]
    struct Sweep<'a, R> {
        reference_plateau: Plateau,
        rows: &'a [R],
    }
    let (fg, bg) = REFERENCE_PLATEAU;
    let result = Sweep {
        reference_plateau: Plateau {
            tau_fg: fg,
            tau_bg: bg,
        },
        rows: &rows,
    };
    ctx.write_table("sweep-threshold", Some(&src), result, &rows)
}

#[derive(Serialize)]
struct AblateRow {
    row: &'static str,
    ablation: Ablation,
    miou: f64,
    mae_all_x100: f64,
    mae_tp_x100: Option<f64>,
    loss_total: Option<f64>,
}

fn cmd_ablate(ctx: &Context, source: &Source) -> Result<(), CliError> {
    let (eps, src) = ctx.episodes(source)?;
    let table = ablation_table(&eps, &ctx.settings.config, ctx.settings.seed)?;
    let rows: Vec<AblateRow> = table
        .iter()
        .map(|r| AblateRow {
            row: r.row,
            ablation: r.ablation,
            miou: r.miou,
            mae_all_x100: pct(r.mae_all),
            mae_tp_x100: r.mae_tp.map(pct),
            loss_total: r.mean_losses.map(|l| l.total),
        })
        .collect();
    ctx.write_table("ablate", Some(&src), &table, &rows)
}

#[derive(Serialize)]
struct StatsRow {
    episode_id: u64,
    fg_cross: Option<f64>,
    fg_intra: Option<f64>,
    bg_cross: Option<f64>,
    bg_intra: Option<f64>,
}

fn cmd_stats(ctx: &Context, source: &Source, pairs: usize) -> Result<(), CliError> {
    if pairs == 0 {
        return Err(CliError::Usage("--pairs must be positive".into()));
    }
    let (eps, src) = ctx.episodes(source)?;
    let report = similarity_stats(&eps, pairs, ctx.settings.seed);
    let rows: Vec<StatsRow> = report
        .per_episode
        .iter()
        .map(|(id, c)| StatsRow {
            episode_id: *id,
            fg_cross: c.fg_cross,
            fg_intra: c.fg_intra,
            bg_cross: c.bg_cross,
            bg_intra: c.bg_intra,
        })
        .collect();
    ctx.write_table("stats", Some(&src), &report, &rows)
}

#[derive(Serialize)]
struct PartialRow {
    object_ratio: f64,
    noise_ratio: f64,
    mode: ssp_harness::analysis::PrototypeSource,
    mean_iou: f64,
}

fn cmd_partial(
    ctx: &Context,
    source: &Source,
    ratios: &[f64],
    noises: &[f64],
    modes: &[ssp_harness::analysis::PrototypeSource],
) -> Result<(), CliError> {
    if ratios.is_empty() || noises.is_empty() || modes.is_empty() {
        return Err(CliError::Usage("empty ratio, noise or mode list".into()));
    }
    let (eps, src) = ctx.episodes(source)?;
    let mut reports: Vec<PartialReport> = Vec::new();
    for &r in ratios {
        for &n in noises {
            for &m in modes {
                reports.push(partial_prototype_experiment(
                    &eps,
                    r,
                    n,
                    m,
                    ctx.settings.seed,
                )?);
            }
        }
    }
    let rows: Vec<PartialRow> = reports
        .iter()
        .map(|r| PartialRow {
            object_ratio: r.object_ratio,
            noise_ratio: r.noise_ratio,
            mode: r.mode,
            mean_iou: r.mean_iou,
        })
        .collect();
    ctx.write_table("partial-proto", Some(&src), &reports, &rows)
}

fn cmd_gen(ctx: &Context, episodes: usize, shots: usize) -> Result<(), CliError> {
    ctx.json_only("gen-synthetic")?;
    let dir = ctx
        .out
        .as_deref()
        .ok_or_else(|| CliError::Usage("`gen-synthetic` needs --out DIR".into()))?;
    if episodes == 0 || shots == 0 {
        return Err(CliError::Usage(
            "--episodes and --shots must be positive".into(),
        ));
    }
    let spec = ctx.settings.synth.clone();
    let eps = suite(&spec, episodes, shots)?;
    let path = write_episodes(dir, &eps)?;
    let mut manifest = Manifest::read(&path)?;
    manifest.metadata = Some(serde_json::json!({
        "generator": "synthetic",
        "spec": spec,
        "shots": shots,
    }));
    manifest.write(&path)?;
    #[derive(Serialize)]
    struct Generated {
        manifest: String,
        episodes: usize,
        shots: usize,
        spec: SyntheticSpec,
    }
    let result = Generated {
        manifest: path.display().to_string(),
        episodes,
        shots,
        spec,
    };
    let env = Envelope {
        command: "gen-synthetic",
        seed: ctx.settings.seed,
        config: &ctx.settings.config,
        source: None,
        result,
    };
    emit(None, &json(&env))
}

fn cmd_verify_grad(
    ctx: &Context,
    cases: usize,
    shape: &[usize],
    step: f64,
    tolerance: f64,
) -> Result<(), CliError> {
    ctx.json_only("verify-grad")?;
    let &[c, h, w] = shape else {
        return Err(CliError::Usage("--shape expects C,H,W".into()));
    };
    if c == 0 || h == 0 || w == 0 || cases == 0 {
        return Err(CliError::Usage(
            "shape and case count must be positive".into(),
        ));
    }
    if !(step > 0.0 && step.is_finite() && tolerance > 0.0) {
        return Err(CliError::Usage(
            "step and tolerance must be positive".into(),
        ));
    }
    let report = gradcheck(ctx.settings.seed, cases, (c, h, w), step, tolerance)?;
    let passed = report.passed;
    let worst = report.max_rel_error;
    ctx.write_json("verify-grad", None, report)?;
    if passed {
        Ok(())
    } else {
        Err(CliError::Pipeline(format!(
            "gradient check failed: max relative error {worst:.3e} >= {tolerance:.1e}"
        )))
    }
}
