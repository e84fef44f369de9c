use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::sync::Arc;

use aegis_core::corpus::{IngestMode, IngestSummary, JsonlSource, LabeledPost, SharedRepository, StreamSource, TopicRepository};
use aegis_core::inference::{AttributeReport, ConnectionCategory, InferenceReport};
use aegis_core::model::{AttributeSchema, UserProfile};
use aegis_core::queue::{release_due, Clock, FileSink, ManualClock, MemorySink, PublishQueue, SystemClock};
use aegis_core::simgen::{
    generate, presets, run_k_sweep, run_obfuscation_experiment, ExperimentConfig, GeneratorSpec, CALIBRATION_TOLERANCE,
    CSV_HEADER,
};
use aegis_core::suggest::{choose_cover_set, suggest, timeline_topics, PendingPost, PostGroup, SuggestionSet};
use aegis_core::taxonomy::{build_tree, place_topic};
use aegis_core::{Error, ErrorBody};
use aegis_service::{Service, ServiceConfig};
use serde::Serialize;
use serde_json::json;

use crate::args::{Cli, Command, Format, ModeArg, Preset};
use crate::config::{read, Settings};
use crate::infer::{dominant_persona, parse_persona, schema_from_posts};
use crate::CliError;

type Out<'a> = &'a mut dyn Write;

pub fn dispatch(cli: Cli, stdin: &mut dyn BufRead, out: Out<'_>) -> Result<(), CliError> {
    let settings = Settings::resolve(&cli.global)?;
    match cli.command {
        Command::Ingest {
            input,
            schema,
            mode,
            batch_size,
        } => ingest(&settings, &input, schema.as_deref(), mode, batch_size, out),
        Command::Classify { topic, full } => classify(&settings, &topic, full, out),
        Command::Evaluate { topics, timeline } => evaluate(&settings, &topics, timeline.as_deref(), out),
        Command::Suggest {
            topics,
            timeline,
            strategy,
            max_candidates,
        } => {
            let config = settings.suggest_config(strategy, max_candidates);
            suggest_cmd(&settings, &topics, timeline.as_deref(), config, out)
        }
        Command::Session { queue, timeline, now } => {
            session(&settings, queue.as_deref(), timeline.as_deref(), now, stdin, out)
        }
        Command::QueueDrain { queue, now, out: sink } => queue_drain(&queue, now, sink.as_deref(), out),
        Command::Generate {
            spec,
            preset,
            out: path,
            report,
        } => generate_cmd(&settings, spec.as_deref(), preset, &path, report.as_deref(), out),
        Command::Experiment {
            corpus,
            attr,
            k,
            ks,
            delta,
            category,
            strategy,
            schema,
            persona,
            budget,
        } => {
            let ks = match k {
                Some(k) => vec![k],
                None => ks,
            };
            let mut config = ExperimentConfig::new(attr, ks[0], delta, category.parse::<ConnectionCategory>()?);
            if let Some(b) = budget {
                config.budget = b;
            }
            let sc = settings.suggest_config(strategy, None);
            config.strategy = sc.strategy;
            config.epsilon_p = sc.epsilon_p;
            config.link = settings.link();
            experiment(&settings, &corpus, schema.as_deref(), &persona, &ks, &config, out)
        }
        Command::Serve {
            addr,
            static_dir,
            publish,
        } => serve(&settings, addr, static_dir, publish, out),
    }
}

fn emit_json<T: Serialize>(out: Out<'_>, value: &T) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).map_err(Error::from)?;
    writeln!(out, "{text}").map_err(Error::from)?;
    Ok(())
}

fn emit(out: Out<'_>, text: &str) -> Result<(), CliError> {
    out.write_all(text.as_bytes()).map_err(Error::from)?;
    Ok(())
}

fn no_csv(command: &str) -> CliError {
    CliError::Usage(format!("`{command}` has no csv output"))
}

fn read_posts(path: &Path) -> Result<Vec<LabeledPost>, CliError> {
    let file = File::open(path).map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))?;
    let mut source = JsonlSource::new(BufReader::new(file), 4096);
    let mut posts = Vec::new();
    while let Some(batch) = source.next_batch()? {
        posts.extend(batch);
    }
    Ok(posts)
}

fn load_repo(settings: &Settings) -> Result<TopicRepository, CliError> {
    Ok(TopicRepository::load(settings.repo_path()?)?)
}

fn load_profile(settings: &Settings, schema: &AttributeSchema) -> Result<UserProfile, CliError> {
    Ok(UserProfile::from_json(&read(settings.profile_path()?)?, schema)?)
}

fn load_timeline(path: Option<&Path>) -> Result<Vec<PostGroup>, CliError> {
    match path {
        Some(p) if p.exists() => Ok(serde_json::from_str(&read(p)?).map_err(Error::from)?),
        _ => Ok(Vec::new()),
    }
}

fn ingest(
    settings: &Settings,
    inputs: &[std::path::PathBuf],
    schema: Option<&Path>,
    mode: ModeArg,
    batch_size: usize,
    out: Out<'_>,
) -> Result<(), CliError> {
    let path = settings.repo_path()?;
    let mut repo = if path.exists() {
        TopicRepository::load(path)?
    } else {
        let schema = schema.ok_or_else(|| CliError::Usage("--schema is required to create a repository".into()))?;
        let schema = AttributeSchema::from_json(&read(schema)?)?;
        let mode = match mode {
            ModeArg::Marginal => IngestMode::Marginal,
            ModeArg::PersonaJoint => IngestMode::PersonaJoint,
        };
        TopicRepository::with_options(schema, mode, aegis_core::corpus::DEFAULT_DEDUP_WINDOW)
    };
    let mut total = IngestSummary::default();
    for input in inputs {
        let file = File::open(input).map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", input.display()))))?;
        let s = repo.ingest_source(&mut JsonlSource::new(BufReader::new(file), batch_size))?;
        total.posts += s.posts;
        total.increments += s.increments;
        total.duplicates += s.duplicates;
        total.generation = s.generation;
    }
    total.generation = repo.generation();
    repo.save(path)?;
    match settings.format_or(Format::Json) {
        Format::Json => emit_json(out, &json!({ "summary": total, "topics": repo.len() })),
        Format::Text => emit(
            out,
            &format!(
                "ingested {} posts ({} increments, {} duplicates); {} topics at generation {}\n",
                total.posts,
                total.increments,
                total.duplicates,
                repo.len(),
                total.generation
            ),
        ),
        Format::Csv => Err(no_csv("ingest")),
    }
}

fn classify(settings: &Settings, topics: &[String], full: bool, out: Out<'_>) -> Result<(), CliError> {
    let repo = load_repo(settings)?;
    let snap = repo.snapshot();
    let profile = load_profile(settings, snap.schema())?;
    let tree = build_tree(&profile, &snap, settings.link())?;
    let format = settings.format_or(Format::Json);
    if !topics.is_empty() {
        let placements = topics
            .iter()
            .map(|t| {
                let t = aegis_core::model::normalize_topic(t)?;
                Ok((t.clone(), place_topic(&t, &tree, &snap)?))
            })
            .collect::<Result<std::collections::BTreeMap<_, _>, Error>>()?;
        return match format {
            Format::Json => emit_json(out, &placements),
            Format::Csv => {
                let mut s = String::from("topic,path,marginal_fallback\n");
                for (t, p) in &placements {
                    let _ = writeln!(s, "{t},{},{}", p.path.join("/"), p.marginal_fallback);
                }
                emit(out, &s)
            }
            Format::Text => {
                let mut s = String::new();
                for (t, p) in &placements {
                    let flag = if p.marginal_fallback { " (marginal fallback)" } else { "" };
                    let _ = writeln!(s, "#{t} -> {}{flag}", p.path.join(" / "));
                }
                emit(out, &s)
            }
        };
    }
    match format {
        Format::Json if full => emit_json(out, &tree.view()),
        Format::Json => emit_json(out, &tree.pruned_view(&profile)),
        Format::Text => emit(out, &tree.to_text()),
        Format::Csv => Err(no_csv("classify")),
    }
}

fn report_text(report: &InferenceReport) -> String {
    let mut s = format!("topics: {}\n", report.topics_used.join(", "));
    for (attr, a) in &report.attributes {
        match a {
            AttributeReport::Inferred { ranked } => {
                let cells: Vec<String> = ranked.iter().map(|r| format!("{}={:.4}", r.value, r.prob)).collect();
                let _ = writeln!(s, "{attr}: {}", cells.join(" "));
            }
            AttributeReport::NoInference => {
                let _ = writeln!(s, "{attr}: no inference");
            }
        }
    }
    for v in &report.sensitive {
        let _ = writeln!(
            s,
            "sensitive {}: k={} threshold={:.4} delta={:.4} {:?}",
            v.attr, v.k, v.threshold, v.delta, v.verdict
        );
    }
    s
}

fn evaluate(settings: &Settings, topics: &[String], timeline: Option<&Path>, out: Out<'_>) -> Result<(), CliError> {
    let repo = load_repo(settings)?;
    let snap = repo.snapshot();
    let profile = load_profile(settings, snap.schema())?;
    let group = PostGroup::from_topics("evaluate", topics)?;
    let history = load_timeline(timeline)?;
    let scope = if history.is_empty() {
        group.topics()
    } else {
        timeline_topics(history.iter().chain(std::iter::once(&group)))
    };
    let report = InferenceReport::for_topics(&profile, &scope, &snap)?;
    match settings.format_or(Format::Json) {
        Format::Json => emit_json(out, &report),
        Format::Text => emit(out, &report_text(&report)),
        Format::Csv => {
            let mut s = String::from("attr,k,threshold,delta,verdict,inferred_value\n");
            for v in &report.sensitive {
                let _ = writeln!(
                    s,
                    "{},{},{:.6},{:.6},{:?},{}",
                    v.attr,
                    v.k,
                    v.threshold,
                    v.delta,
                    v.verdict,
                    v.inferred_value.as_deref().unwrap_or("")
                );
            }
            emit(out, &s)
        }
    }
}

fn suggestions_csv(set: &SuggestionSet) -> String {
    let attrs: Vec<&String> = set.entries.first().map(|e| e.projected.keys().collect()).unwrap_or_default();
    let mut s = String::from("rank,topic,post_count,score");
    for a in &attrs {
        let _ = write!(s, ",delta_{a}");
    }
    s.push('\n');
    for (i, e) in set.entries.iter().enumerate() {
        let _ = write!(s, "{},{},{},{:.6}", i + 1, e.topic, e.post_count, e.score);
        for a in &attrs {
            let _ = write!(s, ",{:.6}", e.projected[*a]);
        }
        s.push('\n');
    }
    s
}

fn suggest_cmd(
    settings: &Settings,
    topics: &[String],
    timeline: Option<&Path>,
    config: aegis_core::suggest::SuggestConfig,
    out: Out<'_>,
) -> Result<(), CliError> {
    let repo = load_repo(settings)?;
    let snap = repo.snapshot();
    let profile = load_profile(settings, snap.schema())?;
    let tree = build_tree(&profile, &snap, settings.link())?;
    let profile = choose_cover_set(&profile, &tree)?;
    let history = load_timeline(timeline)?;
    let group = PostGroup::from_topics("draft", topics)?;
    let set = suggest(&group, &history, &profile, &tree, &snap, &config)?;
    match settings.format_or(Format::Json) {
        Format::Json => emit_json(out, &set),
        Format::Csv => emit(out, &suggestions_csv(&set)),
        Format::Text => {
            let mut s = format!("worst: {} delta={:.4}\n", set.worst_attr, set.worst_delta);
            for (i, e) in set.entries.iter().enumerate() {
                let _ = writeln!(s, "{:>2}. #{} score={:.4} posts={}", i + 1, e.topic, e.score, e.post_count);
            }
            emit(out, &s)
        }
    }
}

fn clock(now: Option<i64>) -> Arc<dyn Clock> {
    match now {
        Some(t) => Arc::new(ManualClock::new(t)),
        None => Arc::new(SystemClock),
    }
}

fn load_queue(path: Option<&Path>) -> Result<PublishQueue, CliError> {
    match path {
        Some(p) if p.exists() => Ok(PublishQueue::from_json(&read(p)?)?),
        _ => Ok(PublishQueue::new()),
    }
}

fn write_file(path: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text).map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))?;
    Ok(())
}

const SESSION_HELP: &str = "commands: open <topic,...> [| text], suggest, accept <topic>, show, finalize, close, adversary, queue, tree, help, quit";

fn session(
    settings: &Settings,
    queue_path: Option<&Path>,
    timeline_path: Option<&Path>,
    now: Option<i64>,
    stdin: &mut dyn BufRead,
    out: Out<'_>,
) -> Result<(), CliError> {
    let repo = load_repo(settings)?;
    let profile = load_profile(settings, repo.schema())?;
    let config = ServiceConfig {
        seed: settings.seed(),
        bounds: settings.bounds()?,
        suggest: settings.suggest_config(None, None),
        link: settings.link(),
    };
    let svc = Service::new(profile, Arc::new(SharedRepository::new(repo)), clock(now), config)?;
    svc.restore(load_timeline(timeline_path)?, load_queue(queue_path)?);
    let mut current: Option<String> = None;
    let mut line = String::new();
    loop {
        line.clear();
        if stdin.read_line(&mut line).map_err(Error::from)? == 0 {
            break;
        }
        let input = line.trim();
        if input.is_empty() {
            continue;
        }
        let (verb, rest) = input.split_once(char::is_whitespace).unwrap_or((input, ""));
        let rest = rest.trim();
        if verb == "quit" || verb == "exit" {
            break;
        }
        let reply = session_step(&svc, &mut current, verb, rest);
        let text = match reply {
            Ok(v) => v.to_string(),
            Err(body) => serde_json::to_string(&body).expect("error body serializes"),
        };
        writeln!(out, "{text}").map_err(Error::from)?;
    }
    if let Some(p) = queue_path {
        write_file(p, &(svc.export_queue().to_json() + "\n"))?;
    }
    if let Some(p) = timeline_path {
        let text = serde_json::to_string_pretty(&svc.timeline()).map_err(Error::from)?;
        write_file(p, &(text + "\n"))?;
    }
    Ok(())
}

fn session_step(
    svc: &Service,
    current: &mut Option<String>,
    verb: &str,
    rest: &str,
) -> Result<serde_json::Value, ErrorBody> {
    let api = |e: aegis_service::ApiError| e.body;
    let need = |current: &Option<String>| {
        current
            .clone()
            .ok_or_else(|| ErrorBody::new("NoSession", "open a session first"))
    };
    match verb {
        "open" => {
            let (topics, text) = rest.split_once('|').unwrap_or((rest, ""));
            let topics: Vec<String> = topics
                .split(',')
                .map(str::trim)
                .filter(|t| !t.is_empty())
                .map(str::to_string)
                .collect();
            let view = svc
                .open_session(PendingPost {
                    topics,
                    text: text.trim().to_string(),
                })
                .map_err(api)?;
            *current = Some(view.session_id.clone());
            Ok(to_value(&view))
        }
        "suggest" => Ok(to_value(&svc.suggestions(&need(current)?).map_err(api)?)),
        "accept" => Ok(to_value(&svc.accept(&need(current)?, rest).map_err(api)?)),
        "show" => Ok(to_value(&svc.get_session(&need(current)?).map_err(api)?)),
        "finalize" => {
            let view = svc.finalize(&need(current)?).map_err(api)?;
            *current = None;
            Ok(to_value(&view))
        }
        "close" => {
            let id = need(current)?;
            svc.close_session(&id).map_err(api)?;
            *current = None;
            Ok(json!({ "closed": id }))
        }
        "adversary" => Ok(to_value(&svc.adversary_report().map_err(api)?)),
        "queue" => Ok(to_value(&svc.queue())),
        "tree" => Ok(to_value(&svc.tree(false).map_err(api)?)),
        "help" => Ok(json!({ "help": SESSION_HELP })),
        other => Err(ErrorBody::new("UsageError", format!("unknown command `{other}`; {SESSION_HELP}"))),
    }
}

fn to_value<T: Serialize>(reply: &T) -> serde_json::Value {
    serde_json::to_value(reply).expect("reply serializes")
}

#[derive(Serialize)]
struct Published {
    seq: u64,
    scheduled_at: i64,
    topics: Vec<String>,
    text: String,
}

fn queue_drain(queue_path: &Path, now: Option<i64>, sink: Option<&Path>, out: Out<'_>) -> Result<(), CliError> {
    let mut queue = PublishQueue::from_json(&read(queue_path)?)?;
    let now = now.unwrap_or_else(|| SystemClock.now());
    let pending = queue.len();
    let published: Vec<Published> = match sink {
        Some(path) => {
            release_due(&mut queue, now, &mut FileSink::new(path))?;
            Vec::new()
        }
        None => {
            let mut mem = MemorySink::default();
            release_due(&mut queue, now, &mut mem)?;
            mem.published
                .into_iter()
                .map(|e| Published {
                    seq: e.seq,
                    scheduled_at: e.scheduled_at,
                    topics: e.topics,
                    text: e.text,
                })
                .collect()
        }
    };
    let released = pending - queue.len();
    write_file(queue_path, &(queue.to_json() + "\n"))?;
    emit_json(
        out,
        &json!({
            "now": now,
            "released": released,
            "remaining": queue.len(),
            "next_due": queue.next_due(),
            "published": published,
        }),
    )
}

fn generate_cmd(
    settings: &Settings,
    spec: Option<&Path>,
    preset: Option<Preset>,
    path: &Path,
    report: Option<&Path>,
    out: Out<'_>,
) -> Result<(), CliError> {
    let mut spec = match (spec, preset) {
        (Some(p), _) => GeneratorSpec::from_json(&read(p)?)?,
        (None, Some(Preset::Location)) => presets::location_spec(0),
        (None, Some(Preset::Gender)) => presets::gender_spec(0),
        (None, None) => return Err(CliError::Usage("one of --spec or --preset is required".into())),
    };
    if let Some(seed) = settings.explicit_seed().or(preset.map(|_| settings.seed())) {
        spec.seed = seed;
    }
    let corpus = generate(&spec)?;
    write_file(path, &corpus.to_jsonl())?;
    if let Some(r) = report {
        let text = serde_json::to_string_pretty(&corpus.topics).map_err(Error::from)?;
        write_file(r, &(text + "\n"))?;
    }
    let calibrated = corpus
        .topics
        .iter()
        .filter(|t| (t.realized_delta - t.target_delta).abs() <= CALIBRATION_TOLERANCE)
        .count();
    let summary = json!({
        "seed": spec.seed,
        "posts": corpus.posts.len(),
        "topics": corpus.topics.len(),
        "calibrated": calibrated,
    });
    match settings.format_or(Format::Json) {
        Format::Json => emit_json(out, &summary),
        Format::Text => emit(
            out,
            &format!(
                "wrote {} posts over {} topics ({} calibrated) with seed {}\n",
                corpus.posts.len(),
                corpus.topics.len(),
                calibrated,
                spec.seed
            ),
        ),
        Format::Csv => {
            let mut s = String::from("topic,category,target_delta,realized_delta,posts\n");
            for t in &corpus.topics {
                let _ = writeln!(s, "{},{},{:.6},{:.6},{}", t.topic, t.category, t.target_delta, t.realized_delta, t.posts);
            }
            emit(out, &s)
        }
    }
}

fn experiment(
    settings: &Settings,
    corpus: &Path,
    schema: Option<&Path>,
    persona: &[String],
    ks: &[usize],
    config: &ExperimentConfig,
    out: Out<'_>,
) -> Result<(), CliError> {
    let posts = read_posts(corpus)?;
    let schema = match schema {
        Some(p) => AttributeSchema::from_json(&read(p)?)?,
        None => schema_from_posts(&posts)?,
    };
    let persona = if persona.is_empty() {
        dominant_persona(&posts, &schema)?
    } else {
        parse_persona(persona).map_err(CliError::Usage)?
    };
    let mut repo = TopicRepository::new(schema);
    repo.ingest_batch(&posts)?;
    let snap = repo.snapshot();
    let format = settings.format_or(Format::Csv);
    if ks.len() == 1 {
        let result = run_obfuscation_experiment(&snap, &persona, config)?;
        return match format {
            Format::Csv => emit(out, &result.to_csv()),
            Format::Json => emit(out, &(result.to_json() + "\n")),
            Format::Text => {
                let s = &result.summary;
                emit(
                    out,
                    &format!(
                        "{} k={} delta={} {}: {} rows, mean suggestions {:.3}, satisfied {}, argmax changed {:.3}, mean margin shift {:.4}\n",
                        result.attribute,
                        result.k,
                        result.delta,
                        result.category,
                        s.rows,
                        s.mean_suggestions,
                        s.satisfied,
                        s.argmax_changed_rate,
                        s.mean_margin_shift
                    ),
                )
            }
        };
    }
    let sweep = run_k_sweep(&snap, &persona, ks, config)?;
    match format {
        Format::Json => emit_json(out, &sweep),
        Format::Csv => {
            let mut s = format!("{CSV_HEADER}\n");
            for r in &sweep.results {
                s.push_str(r.to_csv().split_once('\n').map(|x| x.1).unwrap_or(""));
            }
            emit(out, &s)
        }
        Format::Text => {
            let mut s = String::new();
            for (k, mean) in &sweep.means {
                let _ = writeln!(s, "k={k}: mean suggestions {mean:.3}");
            }
            let _ = writeln!(s, "monotone: {}", sweep.monotone);
            emit(out, &s)
        }
    }
}

fn serve(
    settings: &Settings,
    addr: Option<String>,
    static_dir: Option<std::path::PathBuf>,
    publish: Option<std::path::PathBuf>,
    out: Out<'_>,
) -> Result<(), CliError> {
    let repo = load_repo(settings)?;
    let profile = load_profile(settings, repo.schema())?;
    let config = ServiceConfig {
        seed: settings.seed(),
        bounds: settings.bounds()?,
        suggest: settings.suggest_config(None, None),
        link: settings.link(),
    };
    let svc = Arc::new(Service::new(profile, Arc::new(SharedRepository::new(repo)), Arc::new(SystemClock), config)?);
    let addr = addr
        .or_else(|| settings.file.serve.addr.clone())
        .unwrap_or_else(|| aegis_service::DEFAULT_ADDR.to_string());
    let addr: std::net::SocketAddr = addr
        .parse()
        .map_err(|e| CliError::Usage(format!("bad --addr `{addr}`: {e}")))?;
    let static_dir = static_dir.or_else(|| settings.file.serve.static_dir.clone());
    writeln!(out, "{}", json!({ "listening": addr.to_string() })).map_err(Error::from)?;
    out.flush().map_err(Error::from)?;
    let runtime = tokio::runtime::Runtime::new().map_err(Error::from)?;
    runtime.block_on(async move {
        if let Some(path) = publish {
            let svc = svc.clone();
            tokio::spawn(async move {
                let mut sink = FileSink::new(path);
                let mut tick = tokio::time::interval(std::time::Duration::from_secs(1));
                loop {
                    tick.tick().await;
                    let _ = svc.release(&mut sink);
                }
            });
        }
        aegis_service::serve(svc, addr, static_dir.as_deref()).await
    })
    .map_err(Error::from)?;
    Ok(())
}
