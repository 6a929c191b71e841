use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use evassoc::config::EdaConfig;
use evassoc::event_io::{
    parse_stream, read_ground_truth, read_labels, sniff_geometry, write_ground_truth,
    write_label_records, write_labels, write_stream, EventStream, Label, SensorGeometry,
};
use evassoc::fitting::{run_eda, AssociationResult};
use evassoc::hypotheses::Voxel;
use evassoc::synth::{default_bench_scene, fit_tls, generate_scene, SyntheticScene};
use evassoc::tracking::{evaluate, pairs_from_ground_truth, track_sequence};

#[derive(Parser, Debug)]
#[command(name = "evassoc", version, about = "Event data association by robust line fitting")]
struct Cli {
    #[command(flatten)]
    opts: GlobalOpts,
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Args, Debug, Clone)]
struct GlobalOpts {
    /// TOML configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override a configuration key, e.g. `--set fit.tau=0.02`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    set: Vec<String>,
    /// Inlier noise scale (same as `--set fit.tau=...`).
    #[arg(long, global = true)]
    tau: Option<f64>,
    /// Number of time slices (same as `--set hypo.num_slices=...`).
    #[arg(long, global = true)]
    slices: Option<usize>,
    /// Worker threads; defaults to all cores (1 for `bench`).
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Associate events to trajectories, window by window.
    Associate {
        events: PathBuf,
        #[arg(long)]
        geometry: Option<SensorGeometry>,
        /// Association file to write.
        #[arg(long)]
        out: PathBuf,
    },
    /// Follow a box from its first annotation through the remaining frames.
    Track {
        events: PathBuf,
        /// Annotation file; its first box seeds the tracker, its timestamps set the frames.
        #[arg(long)]
        boxes: PathBuf,
        #[arg(long)]
        geometry: Option<SensorGeometry>,
        /// Predicted boxes, in annotation format.
        #[arg(long)]
        out: PathBuf,
    },
    /// Score frame-to-frame box propagation against annotations.
    Eval {
        events: PathBuf,
        boxes: PathBuf,
        #[arg(long)]
        geometry: Option<SensorGeometry>,
        /// Repetitions per pair (defaults to `track.n_rep`).
        #[arg(long)]
        n_rep: Option<usize>,
        /// Print `key value` records instead of the table.
        #[arg(long)]
        machine: bool,
    },
    /// Generate a synthetic scene from a TOML description.
    Synth {
        scene: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Output prefix: writes PREFIX.events, PREFIX.labels and PREFIX.<k>.boxes.
        #[arg(long)]
        out: PathBuf,
    },
    /// Export plot data from an association file or an eval report.
    Plot {
        input: PathBuf,
        /// Event file the association was computed from.
        #[arg(long)]
        events: Option<PathBuf>,
        #[arg(long)]
        geometry: Option<SensorGeometry>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Measure pipeline throughput in events per second.
    Bench {
        /// Scene description; a built-in two-motion scene when omitted.
        scene: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value_t = 3)]
        runs: usize,
    },
}

fn load_config(opts: &GlobalOpts) -> Result<EdaConfig> {
    let mut cfg = match &opts.config {
        Some(p) => EdaConfig::from_file(p).with_context(|| format!("reading {}", p.display()))?,
        None => EdaConfig::default(),
    };
    for kv in &opts.set {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| anyhow!("--set expects KEY=VALUE, got `{kv}`"))?;
        cfg.set(k.trim(), v)?;
    }
    if let Some(tau) = opts.tau {
        cfg.fit.tau = tau;
    }
    if let Some(n) = opts.slices {
        cfg.hypo.num_slices = n;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn open(path: &Path) -> Result<BufReader<File>> {
    let f = File::open(path).with_context(|| format!("cannot open {}", path.display()))?;
    Ok(BufReader::new(f))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    let f = File::create(path).with_context(|| format!("cannot create {}", path.display()))?;
    Ok(BufWriter::new(f))
}

fn load_events(path: &Path, geometry: Option<SensorGeometry>) -> Result<EventStream> {
    let geometry = match geometry {
        Some(g) => g,
        None => {
            let mut head = String::new();
            open(path)?.read_line(&mut head)?;
            sniff_geometry(&head).ok_or_else(|| {
                anyhow!(
                    "{} has no `# geometry WxH` header; pass --geometry",
                    path.display()
                )
            })?
        }
    };
    parse_stream(open(path)?, geometry).with_context(|| format!("parsing {}", path.display()))
}

fn velocity_px_s(r: &AssociationResult, k: usize, geometry: SensorGeometry) -> (f64, f64) {
    let (du, dv) = r.instances[k].hypothesis.image_velocity();
    let scale = geometry.time_axis_len() / (r.t_end - r.t_start);
    (du * scale, dv * scale)
}

fn write_summary<W: Write>(
    results: &[AssociationResult],
    geometry: SensorGeometry,
    mut sink: W,
) -> io::Result<()> {
    for (i, r) in results.iter().enumerate() {
        write!(
            sink,
            "window {i} t=[{:.6},{:.6}] events={} models={}",
            r.t_start,
            r.t_end,
            r.assignment.len(),
            r.num_models
        )?;
        match &r.failure {
            Some(f) => writeln!(sink, " failed: {f}")?,
            None => writeln!(sink, " noise={} tau={}", r.noise_count(), r.tau)?,
        }
        let counts = r.counts();
        for (k, m) in r.instances.iter().enumerate() {
            let (vx, vy) = velocity_px_s(r, k, geometry);
            writeln!(
                sink,
                "  instance {k} inliers={} assigned={} w_stage1={:.3} contrast={:.4} w_final={:.3} velocity=({vx:.1},{vy:.1})px/s",
                m.inliers.len(),
                counts[k],
                m.w_stage1,
                m.contrast,
                m.w_final
            )?;
        }
    }
    Ok(())
}

fn cmd_associate(cfg: &EdaConfig, events: &Path, geometry: Option<SensorGeometry>, out: &Path) -> Result<()> {
    let stream = load_events(events, geometry)?;
    let results = run_eda(&stream, cfg)?;
    for (i, r) in results.iter().enumerate() {
        if let Some(f) = &r.failure {
            log::warn!("window {i}: {f}");
        }
    }
    let mut sink = create(out)?;
    writeln!(sink, "# event_index trajectory_id")?;
    for (i, r) in results.iter().enumerate() {
        writeln!(
            sink,
            "# window {i} {} {} {} {} {}",
            r.t_start,
            r.t_end,
            r.offset,
            r.assignment.len(),
            r.num_models
        )?;
        write_label_records(&r.assignment, r.offset, &mut sink)?;
    }
    sink.flush()?;
    let stdout = io::stdout();
    write_summary(&results, stream.geometry, stdout.lock())?;
    Ok(())
}

fn cmd_track(
    cfg: &EdaConfig,
    events: &Path,
    boxes: &Path,
    geometry: Option<SensorGeometry>,
    out: &Path,
) -> Result<()> {
    let stream = load_events(events, geometry)?;
    let gt = read_ground_truth(open(boxes)?)?;
    let Some(&(_, init)) = gt.first() else {
        bail!("{} contains no boxes", boxes.display());
    };
    let frames: Vec<f64> = gt.iter().map(|(t, _)| *t).collect();
    let track = track_sequence(&stream, &frames, init, cfg);
    let lost = track.iter().filter(|(_, _, ok)| !ok).count();
    if lost > 0 {
        log::warn!("{lost} of {} steps kept the previous box", track.len() - 1);
    }
    let boxes: Vec<_> = track.iter().map(|(t, b, _)| (*t, *b)).collect();
    write_ground_truth(&boxes, create(out)?)?;
    Ok(())
}

fn cmd_eval(
    cfg: &EdaConfig,
    events: &Path,
    boxes: &Path,
    geometry: Option<SensorGeometry>,
    n_rep: Option<usize>,
    machine: bool,
) -> Result<()> {
    let stream = load_events(events, geometry)?;
    let gt = read_ground_truth(open(boxes)?)?;
    let pairs = pairs_from_ground_truth(&gt);
    let report = evaluate(&stream, &pairs, cfg, n_rep.unwrap_or(cfg.track.n_rep))?;
    let text = if machine {
        report.render_machine()
    } else {
        report.render_text()
    };
    io::stdout().write_all(text.as_bytes())?;
    Ok(())
}

fn cmd_synth(scene: &Path, seed: Option<u64>, out: &Path) -> Result<()> {
    let text = std::fs::read_to_string(scene)
        .with_context(|| format!("cannot read {}", scene.display()))?;
    let mut spec = SyntheticScene::from_toml_str(&text)?;
    if let Some(s) = seed {
        spec.seed = s;
    }
    let gen = generate_scene(&spec)?;
    let with_ext = |ext: &str| {
        let mut p = out.as_os_str().to_owned();
        p.push(ext);
        PathBuf::from(p)
    };
    write_stream(&gen.stream, create(&with_ext(".events"))?)?;
    write_labels(&gen.labels, 0, create(&with_ext(".labels"))?)?;
    for (k, boxes) in gen.boxes.iter().enumerate() {
        if boxes.first().is_none_or(|(_, b)| b.area() <= 0.0) {
            continue;
        }
        write_ground_truth(boxes, create(&with_ext(&format!(".{k}.boxes")))?)?;
    }
    println!(
        "{} events, {} motions, {} clutter",
        gen.stream.len(),
        spec.motions.len(),
        gen.labels.iter().filter(|l| l.is_noise()).count()
    );
    Ok(())
}

/// Window blocks recovered from `# window` lines of an association file.
struct WindowBlock {
    index: usize,
    t_start: f64,
    t_end: f64,
    offset: usize,
    len: usize,
}

fn read_window_blocks(text: &str) -> Result<Vec<WindowBlock>> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let Some(rest) = line.trim().strip_prefix("# window ") else {
            continue;
        };
        let f: Vec<&str> = rest.split_whitespace().collect();
        let bad = || anyhow!("line {}: malformed window header", n + 1);
        if f.len() < 5 {
            return Err(bad());
        }
        out.push(WindowBlock {
            index: f[0].parse().map_err(|_| bad())?,
            t_start: f[1].parse().map_err(|_| bad())?,
            t_end: f[2].parse().map_err(|_| bad())?,
            offset: f[3].parse().map_err(|_| bad())?,
            len: f[4].parse().map_err(|_| bad())?,
        });
    }
    Ok(out)
}

fn plot_association<W: Write>(
    text: &str,
    stream: &EventStream,
    mut sink: W,
) -> Result<()> {
    let labels = read_labels(text.as_bytes())?;
    let mut blocks = read_window_blocks(text)?;
    if blocks.is_empty() && !labels.is_empty() {
        // A plain label file: one window over the whole stream.
        let (t0, t1) = match (stream.events.first(), stream.events.last()) {
            (Some(a), Some(b)) => (a.t, b.t),
            _ => (0.0, 0.0),
        };
        blocks.push(WindowBlock {
            index: 0,
            t_start: t0,
            t_end: t1,
            offset: 0,
            len: stream.len(),
        });
    }
    let mut by_event = vec![Label::Noise; stream.len()];
    for (i, l) in labels {
        let slot = by_event
            .get_mut(i)
            .ok_or_else(|| anyhow!("event index {i} beyond the {} events", stream.len()))?;
        *slot = l;
    }
    let s_t = stream.geometry.time_axis_len();
    writeln!(sink, "# segment window trajectory u0 v0 t0 u1 v1 t1")?;
    writeln!(sink, "# voxel window trajectory u v t")?;
    let mut voxels_out = Vec::new();
    for b in &blocks {
        let span = b.t_end - b.t_start;
        let to_norm = |t: f64| if span > 0.0 { (t - b.t_start) / span * s_t } else { 0.0 };
        let to_sec = |t: f64| b.t_start + t / s_t * span;
        let range = b.offset..(b.offset + b.len).min(stream.len());
        let mut groups: std::collections::BTreeMap<u32, Vec<Voxel>> = Default::default();
        for i in range.clone() {
            let e = &stream.events[i];
            if let Some(id) = by_event[i].trajectory() {
                groups
                    .entry(id)
                    .or_default()
                    .push(Voxel::new(e.u as f64, e.v as f64, to_norm(e.t)));
            }
            voxels_out.push((b.index, by_event[i].as_i64(), e.u, e.v, e.t));
        }
        for (id, pts) in &groups {
            let Ok(line) = fit_tls(pts) else { continue };
            let proj = |p: &Voxel| (p.vec() - line.centroid).dot(&line.direction);
            let lo = pts.iter().map(proj).fold(f64::INFINITY, f64::min);
            let hi = pts.iter().map(proj).fold(f64::NEG_INFINITY, f64::max);
            let a = line.centroid + line.direction * lo;
            let z = line.centroid + line.direction * hi;
            writeln!(
                sink,
                "segment {} {id} {} {} {} {} {} {}",
                b.index,
                a.x,
                a.y,
                to_sec(a.z),
                z.x,
                z.y,
                to_sec(z.z)
            )?;
        }
    }
    for (w, id, u, v, t) in voxels_out {
        writeln!(sink, "voxel {w} {id} {u} {v} {t}")?;
    }
    Ok(())
}

fn plot_report<W: Write>(text: &str, mut sink: W) -> Result<()> {
    writeln!(sink, "# overlap repetition pair iou")?;
    for line in text.lines() {
        let mut f: Vec<&str> = line.split_whitespace().collect();
        if f.first() == Some(&"pair") {
            f.remove(0);
        }
        if f.len() < 3 {
            continue;
        }
        let (Ok(rep), Ok(pair), Ok(iou)) =
            (f[0].parse::<usize>(), f[1].parse::<usize>(), f[2].parse::<f64>())
        else {
            continue;
        };
        writeln!(sink, "overlap {rep} {pair} {iou}")?;
    }
    Ok(())
}

fn cmd_plot(
    input: &Path,
    events: Option<&Path>,
    geometry: Option<SensorGeometry>,
    out: &Path,
) -> Result<()> {
    let text = std::fs::read_to_string(input)
        .with_context(|| format!("cannot read {}", input.display()))?;
    let is_report = text
        .lines()
        .find(|l| !l.trim().is_empty() && !l.trim_start().starts_with('#'))
        .is_some_and(|l| l.starts_with("aor ") || l.starts_with("AOR="));
    let mut sink = create(out)?;
    if is_report {
        plot_report(&text, &mut sink)?;
    } else {
        let events = events.ok_or_else(|| anyhow!("plotting an association needs --events"))?;
        let stream = load_events(events, geometry)?;
        plot_association(&text, &stream, &mut sink)?;
    }
    sink.flush()?;
    Ok(())
}

fn cmd_bench(cfg: &EdaConfig, scene: Option<&Path>, seed: Option<u64>, runs: usize) -> Result<()> {
    let mut spec = match scene {
        Some(p) => SyntheticScene::from_toml_str(
            &std::fs::read_to_string(p).with_context(|| format!("cannot read {}", p.display()))?,
        )?,
        None => default_bench_scene(),
    };
    if let Some(s) = seed {
        spec.seed = s;
    }
    if runs == 0 {
        bail!("--runs must be at least 1");
    }
    let gen = generate_scene(&spec)?;
    let n = gen.stream.len();
    let mut eps = Vec::with_capacity(runs);
    let mut windows = 0;
    for _ in 0..runs {
        let start = Instant::now();
        windows = run_eda(&gen.stream, cfg)?.len();
        let secs = start.elapsed().as_secs_f64().max(1e-9);
        eps.push(n as f64 / secs);
    }
    let mut sorted = eps.clone();
    sorted.sort_by(f64::total_cmp);
    let median = sorted[sorted.len() / 2];
    println!("events {n}");
    println!("windows {windows}");
    println!("threads {}", rayon::current_num_threads());
    for (i, e) in eps.iter().enumerate() {
        println!("run {i} {e:.0}");
    }
    println!("eps_median {median:.0}");
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let cfg = load_config(&cli.opts)?;
    let threads = match (&cli.cmd, cli.opts.threads) {
        (_, Some(t)) => t,
        (Command::Bench { .. }, None) => 1,
        _ => 0,
    };
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .context("setting up worker threads")?;
    match &cli.cmd {
        Command::Associate { events, geometry, out } => cmd_associate(&cfg, events, *geometry, out),
        Command::Track {
            events,
            boxes,
            geometry,
            out,
        } => cmd_track(&cfg, events, boxes, *geometry, out),
        Command::Eval {
            events,
            boxes,
            geometry,
            n_rep,
            machine,
        } => cmd_eval(&cfg, events, boxes, *geometry, *n_rep, *machine),
        Command::Synth { scene, seed, out } => cmd_synth(scene, *seed, out),
        Command::Plot {
            input,
            events,
            geometry,
            out,
        } => cmd_plot(input, events.as_deref(), *geometry, out),
        Command::Bench { scene, seed, runs } => cmd_bench(&cfg, scene.as_deref(), *seed, *runs),
    }
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
