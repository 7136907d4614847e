use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use freqact::checkpoint::Checkpoint;
use freqact::env::{
    bench_sweep, compressed_level, compression_curve_csv, derive_seed, evaluate_seeds,
    generate_demos, linear_fit_r2, render_pareto_csv, replay_clean, with_iterations, Dataset,
    Demonstration, DiffusionAgent,
};
use freqact::fsutil::read_bytes;
use freqact::fsutil::read_to_string;
use freqact::policy::Trainer;
use freqact::run;
use freqact::sampler::GenerationRecord;
use freqact::trajectory::{
    band_energy_table, dct_forward, energy_proportion, low_pass, parse_trajectory_csv, render_band_table_csv,
    render_spectrum_csv, render_trajectory_csv, Trajectory,
};
use freqact::{Error, Result};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::context::Context;
use crate::svg;
use crate::Common;

fn load_demos(ctx: &Context, data: Option<PathBuf>) -> Result<(Vec<Demonstration>, String)> {
    match ctx.data_dir(data) {
        Some(dir) => Ok((Dataset::read(&dir)?.demos, dir.display().to_string())),
        None => {
            let c = &ctx.config;
            let demos = generate_demos(c.env(), c.data_episodes(), c.data_noise_std(), c.data_seed())?;
            Ok((demos, "generated".to_string()))
        }
    }
}

pub fn demos(ctx: &Context) -> Result<()> {
    let c = &ctx.config;
    let demos = generate_demos(c.env(), c.data_episodes(), c.data_noise_std(), c.data_seed())?;
    let steps: usize = demos.iter().map(Demonstration::len).sum();
    Dataset {
        base_seed: c.data_seed(),
        demos,
    }
    .write(&ctx.out)?;
    ctx.write_provenance(&[])?;
    println!("wrote {} episodes ({steps} steps) to {}", c.data_episodes(), ctx.out.display());
    Ok(())
}

pub fn analyze(ctx: &Context, data: Option<PathBuf>) -> Result<()> {
    let (demos, source) = load_demos(ctx, data)?;
    let c = &ctx.config;
    let actions: Vec<Trajectory> = demos.iter().map(|d| d.actions.clone()).collect();

    let table = band_energy_table(&actions, &c.float_list("analyze.bands"))?;
    ctx.write("band_energy.csv", render_band_table_csv(&table))?;
    let labels: Vec<String> = table
        .band_edges
        .windows(2)
        .map(|w| format!("{:.0}-{:.0}%", 100.0 * w[0], 100.0 * w[1]))
        .collect();
    let rows: Vec<Vec<f64>> = (0..table.dim).map(|j| table.row(j).to_vec()).collect();
    ctx.write("band_energy.svg", svg::heatmap("band energy per action dimension", &rows, &labels))?;

    let spectra = actions.iter().map(dct_forward).collect::<Result<Vec<_>>>()?;
    let dim = actions[0].dim();
    let mut curve = String::from("p");
    for j in 0..dim {
        curve.push_str(&format!(",dim{j}"));
    }
    curve.push('\n');
    let mut series: Vec<(String, Vec<(f64, f64)>)> = (0..dim).map(|j| (format!("dim{j}"), Vec::new())).collect();
    for step in 0..=20 {
        let p = 5.0 * step as f64;
        let mut mean = vec![0.0; dim];
        for s in &spectra {
            for (m, e) in mean.iter_mut().zip(energy_proportion(s, p)?) {
                *m += e / spectra.len() as f64;
            }
        }
        curve.push_str(&p.to_string());
        for (j, m) in mean.iter().enumerate() {
            curve.push_str(&format!(",{m}"));
            series[j].1.push((p, *m));
        }
        curve.push('\n');
    }
    ctx.write("energy_curve.csv", curve)?;
    ctx.write("energy_curve.svg", svg::line_chart("energy proportion E(p)", &series))?;

    let first = &actions[0];
    let fractions = c.float_list("analyze.fractions");
    let mut recons = Vec::new();
    for &f in &fractions {
        if !(f > 0.0 && f <= 1.0) {
            return Err(Error::Config(format!("analyze.fractions entry {f} is outside (0, 1]")));
        }
        let r = low_pass(first, compressed_level(f, first.horizon()))?;
        ctx.write(&format!("reconstruction_{f}.csv"), render_trajectory_csv(&r))?;
        recons.push((f, r));
    }
    for j in 0..dim {
        let line = |t: &Trajectory| (0..t.horizon()).map(|n| (n as f64, t.get(n, j))).collect::<Vec<_>>();
        let mut s = vec![("recorded".to_string(), line(first))];
        s.extend(recons.iter().map(|(f, r)| (format!("{:.0}% of coefficients", 100.0 * f), line(r))));
        ctx.write(&format!("reconstruction_dim{j}.svg"), svg::line_chart(&format!("episode 0, dim{j}"), &s))?;
    }

    let ratios = c.float_list("analyze.ratios");
    let csv = compression_curve_csv(&demos, &ratios)?;
    let pts: Vec<(f64, f64)> = csv
        .lines()
        .skip(1)
        .filter_map(|l| l.split_once(','))
        .map(|(a, b)| (a.parse().unwrap_or(0.0), b.parse().unwrap_or(0.0)))
        .collect();
    ctx.write("compression.csv", &csv)?;
    ctx.write("compression.svg", svg::line_chart("replay success vs kept fraction", &[("success".into(), pts)]))?;
    let clean = replay_clean(&demos)?;
    ctx.write_provenance(&[("data", source), ("clean_replay_success", clean.success_rate.to_string())])?;
    println!("analyzed {} episodes; clean replay success {}", demos.len(), clean.success_rate);
    print!("{csv}");
    Ok(())
}

fn read_loss_rows(path: &Path, upto: u64) -> Vec<String> {
    let Ok(text) = std::fs::read_to_string(path) else {
        return Vec::new();
    };
    text.lines()
        .skip(1)
        .filter(|l| l.split(',').next().and_then(|s| s.parse::<u64>().ok()).is_some_and(|s| s <= upto))
        .map(str::to_owned)
        .collect()
}

pub fn train(common: &Common, name: &'static str, data: Option<PathBuf>, resume: Option<PathBuf>, until: Option<u64>) -> Result<()> {
    let (ctx, mut trainer, obs_norm, act_norm, demos, source) = match &resume {
        Some(path) => {
            let ck = Checkpoint::decode(&read_bytes(path)?)?;
            let ctx = Context::new(common, name, Some(&ck))?;
            if ck.run_config()? != ctx.config {
                return Err(Error::Config("a resumed run takes its whole config from the checkpoint".into()));
            }
            let (demos, source) = load_demos(&ctx, data)?;
            (ctx, ck.trainer()?, ck.obs_norm.clone(), ck.act_norm.clone(), demos, source)
        }
        None => {
            let ctx = Context::new(common, name, None)?;
            let (demos, source) = load_demos(&ctx, data)?;
            let p = run::prepare(&ctx.config, &demos)?;
            (ctx, p.trainer, p.obs_norm, p.act_norm, demos, source)
        }
    };
    if demos[0].env != ctx.config.env() {
        return Err(Error::Data(format!("dataset is {} but run.env is {}", demos[0].env, ctx.config.env())));
    }
    let samples = run::windows(&ctx.config, &demos, &obs_norm, &act_norm)?;
    let stop = until.unwrap_or(u64::MAX).min(trainer.config.total_steps);
    let every = ctx.config.u64_value("train.checkpoint_every");
    let log_every = ctx.config.u64_value("train.log_every");
    let start = trainer.step;
    let mut rows = read_loss_rows(&ctx.path("loss.csv"), start);
    ctx.write_provenance(&[
        ("data", source),
        ("windows", samples.len().to_string()),
        ("parameters", trainer.model.params.num_scalars().to_string()),
        ("resumed_from", resume.map_or("none".into(), |p| p.display().to_string())),
    ])?;
    let t0 = Instant::now();
    let save = |t: &Trainer, file: &str| ctx.write(file, Checkpoint::capture(t, &ctx.config, &obs_norm, &act_norm).encode());
    while trainer.step < stop {
        let lr = trainer.learning_rate()?;
        let loss = trainer.train_step(&samples)?;
        rows.push(format!("{},{loss},{lr}", trainer.step));
        if trainer.step % log_every == 0 {
            println!("step {:>6} loss {loss:.5} lr {lr:.3e} ({:.0}s)", trainer.step, t0.elapsed().as_secs_f64());
        }
        if trainer.step % every == 0 {
            save(&trainer, &format!("ckpt_{:06}.bin", trainer.step))?;
        }
    }
    let mut csv = String::from("step,loss,lr\n");
    let mut pts = Vec::with_capacity(rows.len());
    for r in &rows {
        csv.push_str(r);
        csv.push('\n');
        let mut f = r.split(',');
        if let (Some(s), Some(l)) = (f.next(), f.next()) {
            pts.push((s.parse().unwrap_or(0.0), l.parse().unwrap_or(0.0)));
        }
    }
    ctx.write("loss.csv", csv)?;
    ctx.write("loss.svg", svg::line_chart("training loss", &[("loss".into(), pts)]))?;
    save(&trainer, "checkpoint.bin")?;
    println!("trained {} steps (now at {}) in {:.1}s", trainer.step - start, trainer.step, t0.elapsed().as_secs_f64());
    Ok(())
}

fn agent(ck: &Checkpoint, ctx: &Context) -> Result<DiffusionAgent> {
    run::agent(ck.model()?, ck.obs_norm.clone(), ck.act_norm.clone(), &ctx.config)
}

fn load_checkpoint(common: &Common, name: &'static str, path: &Path) -> Result<(Checkpoint, Context)> {
    let ck = Checkpoint::decode(&read_bytes(path)?)?;
    let ctx = Context::new(common, name, Some(&ck))?;
    Ok((ck, ctx))
}

pub fn eval(common: &Common, name: &'static str, path: &Path, episodes: Option<usize>, n_iter: Option<usize>) -> Result<()> {
    let (ck, mut ctx) = load_checkpoint(common, name, path)?;
    if let Some(n) = episodes {
        ctx.config.set("eval.episodes", &n.to_string())?;
    }
    if let Some(n) = n_iter {
        ctx.config.set("sampler.num_iter", &n.to_string())?;
        ctx.config.validate()?;
    }
    let a = agent(&ck, &ctx)?;
    let c = &ctx.config;
    let mut echo: BTreeMap<String, String> = c.as_map().clone();
    echo.insert("checkpoint".into(), path.display().to_string());
    let reports = evaluate_seeds(
        c.env(),
        &a,
        c.usize_value("eval.episodes"),
        c.usize_value("eval.seeds"),
        c.u64_value("eval.seed"),
        &echo,
    )?;
    let mean = reports.iter().map(|r| r.success_rate).sum::<f64>() / reports.len() as f64;
    let json = serde_json::json!({ "success_rate_mean": mean, "reports": reports });
    ctx.write("report.json", serde_json::to_string_pretty(&json).expect("report serializes") + "\n")?;
    let mut table = String::new();
    for (i, r) in reports.iter().enumerate() {
        table.push_str(&format!("# seed index {i}\n{}\n", r.to_table()));
    }
    table.push_str(&format!("mean success rate {mean:.3}\n"));
    ctx.write("report.txt", &table)?;
    ctx.write_provenance(&[("checkpoint", path.display().to_string())])?;
    for (i, r) in reports.iter().enumerate() {
        println!("seed {i}: success {:.3} mean length {:.1}", r.success_rate, r.mean_episode_length);
    }
    println!("mean success rate {mean:.3}");
    Ok(())
}

pub fn sample(common: &Common, name: &'static str, path: &Path, obs_path: &Path) -> Result<()> {
    let (ck, ctx) = load_checkpoint(common, name, path)?;
    let a = agent(&ck, &ctx)?;
    let p = &a.model.config;
    let src = obs_path.display().to_string();
    let obs = parse_trajectory_csv(&src, &read_to_string(obs_path)?)?;
    if obs.horizon() != p.obs_steps || obs.dim() != p.obs_dim {
        return Err(Error::Data(format!(
            "{src}: observations are {}x{}, the policy expects {}x{}",
            obs.horizon(),
            obs.dim(),
            p.obs_steps,
            p.obs_dim
        )));
    }
    let seed = ctx.config.seed();
    let t0 = Instant::now();
    let g = a.generate(obs.values(), &mut ChaCha8Rng::seed_from_u64(seed))?;
    let wall_ms = t0.elapsed().as_secs_f64() * 1e3;
    let mut raw = g.actions.values().to_vec();
    for row in raw.chunks_mut(a.act_norm.dim()) {
        a.act_norm.denormalize_row(row);
    }
    ctx.write("actions.csv", render_trajectory_csv(&Trajectory::new(p.horizon, p.action_dim, raw)?))?;
    ctx.write("actions_normalized.csv", render_trajectory_csv(&g.actions))?;
    for (i, it) in g.iterations.iter().enumerate() {
        ctx.write(&format!("iter{i}_tokens.csv"), render_trajectory_csv(&it.tokens))?;
        ctx.write(&format!("iter{i}_spectrum.csv"), render_spectrum_csv(&dct_forward(&it.tokens)?))?;
        ctx.write(&format!("iter{i}_candidate.csv"), render_trajectory_csv(&it.candidate))?;
    }
    ctx.write_provenance(&[
        ("checkpoint", path.display().to_string()),
        ("obs", src),
        ("levels", format!("{:?}", a.schedule.levels())),
    ])?;
    println!("{}", GenerationRecord::new(0, seed, &a.schedule, &g, wall_ms)?.to_json_line());
    Ok(())
}

pub fn bench(common: &Common, name: &'static str, path: &Path) -> Result<()> {
    let (ck, ctx) = load_checkpoint(common, name, path)?;
    let a = agent(&ck, &ctx)?;
    let c = &ctx.config;
    let n_iters = c.usize_list("bench.n_iter");
    let episodes = c.usize_value("bench.episodes");
    let base = c.u64_value("eval.seed");
    let rows = bench_sweep(&a, c.env(), &n_iters, episodes, base)?;
    ctx.write("pareto.csv", render_pareto_csv(&rows))?;
    let pts = rows.iter().map(|r| (r.wall_ms_mean, r.success_rate)).collect();
    ctx.write("pareto.svg", svg::line_chart("success vs wall-clock per chunk (ms)", &[("success".into(), pts)]))?;

    let mut records = String::new();
    for &n in &n_iters {
        let an = with_iterations(&a, n)?;
        for i in 0..episodes {
            let seed = derive_seed(base, i as u64);
            let obs = vec![c.env().reset(seed).observe(); an.model.config.obs_steps].concat();
            let t0 = Instant::now();
            let g = an.generate(&obs, &mut ChaCha8Rng::seed_from_u64(derive_seed(seed, 1)))?;
            let ms = t0.elapsed().as_secs_f64() * 1e3;
            records.push_str(&GenerationRecord::new(i, seed, &an.schedule, &g, ms)?.to_json_line());
            records.push('\n');
        }
    }
    ctx.write("records.jsonl", records)?;
    let fit = if rows.len() >= 2 {
        let nfe: Vec<f64> = rows.iter().map(|r| r.nfe as f64).collect();
        let ms: Vec<f64> = rows.iter().map(|r| r.wall_ms_mean).collect();
        linear_fit_r2(&nfe, &ms).map(|(s, i, r2)| format!("slope_ms_per_nfe = {s}\nintercept_ms = {i}\nr2 = {r2}\n"))?
    } else {
        String::new()
    };
    ctx.write("fit.txt", &fit)?;
    ctx.write_provenance(&[("checkpoint", path.display().to_string())])?;
    print!("{}{fit}", render_pareto_csv(&rows));
    Ok(())
}
