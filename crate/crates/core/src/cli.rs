//! Command-line front end. Every command returns a process exit code.

use std::ffi::OsString;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::error::Error;
use crate::exec::{map_indexed, with_threads, Exec};
use crate::geometry::{PointSet, MAX_DIM};
use crate::oracle::corpus::{self, Distribution};
use crate::oracle::{self, CheckOutcome, CheckReport, Instance, DEFAULT_CHECK_CAP};
use crate::rnn_index::{IndexStats, RnnIndex};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CHECK_FAILED: i32 = 1;
pub const EXIT_DUPLICATES: i32 = 2;
pub const EXIT_SPREAD: i32 = 3;
pub const EXIT_PARSE: i32 = 4;
pub const EXIT_DIMENSION: i32 = 5;
/// I/O failures and malformed index files.
pub const EXIT_IO: i32 = 6;
pub const EXIT_USAGE: i32 = 64;

#[derive(Parser, Debug)]
#[command(name = "rnnq", version, about = "Exact reverse nearest neighbor queries")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Build an index from a points file.
    Build(BuildArgs),
    /// Answer a file of queries against an index.
    Query(QueryArgs),
    /// Compare the index against brute force on generated instances.
    Check(CheckArgs),
    /// Time construction and queries on a generated instance.
    Bench(BenchArgs),
}

#[derive(Args, Debug)]
struct BuildArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    output: PathBuf,
    /// Merge identical rows; writes `<output>.map` with the kept index of every input row.
    #[arg(long)]
    dedupe: bool,
}

#[derive(Args, Debug)]
struct QueryArgs {
    #[arg(long)]
    index: PathBuf,
    #[arg(long)]
    queries: PathBuf,
    #[arg(long)]
    output: PathBuf,
}

#[derive(Args, Debug)]
struct CheckArgs {
    #[arg(long, default_value_t = 1000)]
    n: usize,
    #[arg(long, default_value_t = 2)]
    d: usize,
    #[arg(long, default_value = "uniform")]
    dist: Distribution,
    #[arg(long, default_value_t = 20)]
    trials: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Corrupt a candidate list before checking.
    #[arg(long, hide = true)]
    inject_fault: bool,
}

#[derive(Args, Debug)]
struct BenchArgs {
    #[arg(long, default_value_t = 100_000)]
    n: usize,
    #[arg(long, default_value_t = 2)]
    d: usize,
    #[arg(long, default_value = "uniform")]
    dist: Distribution,
    #[arg(long, default_value_t = 100_000)]
    queries: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

/// Entry point for the binary.
pub fn run() -> i32 {
    run_from(std::env::args_os())
}

pub fn run_from<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    let threads = match std::env::var("RNNQ_THREADS") {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(t) if t > 0 => Some(t),
            _ => {
                eprintln!("error: RNNQ_THREADS must be a positive integer, got {v:?}");
                return EXIT_USAGE;
            }
        },
        Err(_) => None,
    };
    with_threads(threads, move || match cli.command {
        Command::Build(a) => cmd_build(&a.input, &a.output, a.dedupe),
        Command::Query(a) => cmd_query(&a.index, &a.queries, &a.output),
        Command::Check(a) => cmd_check(&a),
        Command::Bench(a) => cmd_bench(&a),
    })
}

fn exit_code(e: &Error) -> i32 {
    match e {
        Error::DuplicatePoints { .. } => EXIT_DUPLICATES,
        Error::SpreadTooLarge { .. } => EXIT_SPREAD,
        Error::Parse { .. } => EXIT_PARSE,
        Error::DimensionMismatch { .. } => EXIT_DIMENSION,
        Error::InvalidInput(_) => EXIT_USAGE,
        Error::Format(_) | Error::Io(_) => EXIT_IO,
    }
}

fn fail(e: Error) -> i32 {
    eprintln!("error: {e}");
    exit_code(&e)
}

/// Parses the text points format: one point per line, comma-separated,
/// optionally preceded by a `# d=<int>` header. Blank lines are skipped.
pub fn parse_points(text: &str) -> Result<PointSet, Error> {
    let mut dim: Option<usize> = None;
    let mut coords = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let err = |message: String| Error::Parse { line, message };
        let t = raw.trim();
        if t.is_empty() {
            continue;
        }
        if let Some(h) = t.strip_prefix('#') {
            let h = h.trim();
            let v = h
                .strip_prefix("d=")
                .ok_or_else(|| err(format!("unrecognized header {t:?}")))?;
            if dim.is_some() || !coords.is_empty() {
                return Err(err("header must come before any point".into()));
            }
            let d: usize = v.trim().parse().map_err(|_| err(format!("bad dimension {v:?}")))?;
            if d == 0 || d > MAX_DIM {
                return Err(err(format!("dimension {d} outside 1..={MAX_DIM}")));
            }
            dim = Some(d);
            continue;
        }
        let mut count = 0;
        for field in t.split(',') {
            let f = field.trim();
            let v: f64 = f.parse().map_err(|_| err(format!("not a number: {f:?}")))?;
            if !v.is_finite() {
                return Err(err(format!("non-finite value {f:?}")));
            }
            coords.push(v);
            count += 1;
        }
        match dim {
            Some(d) if d != count => {
                return Err(err(format!("expected {d} coordinates, found {count}")));
            }
            Some(_) => {}
            None if count > MAX_DIM => {
                return Err(err(format!("dimension {count} outside 1..={MAX_DIM}")));
            }
            None => dim = Some(count),
        }
    }
    let d = dim.ok_or(Error::Parse {
        line: 0,
        message: "no points".into(),
    })?;
    if coords.is_empty() {
        return Err(Error::Parse {
            line: 0,
            message: "no points".into(),
        });
    }
    PointSet::new(d, coords)
}

fn read_points(path: &Path) -> Result<PointSet, Error> {
    parse_points(&fs::read_to_string(path)?)
}

/// Removes exact duplicates, keeping first occurrences in order. Returns the
/// reduced set and, for each input row, its index in that set.
pub fn dedupe(points: &PointSet) -> (PointSet, Vec<usize>) {
    let d = points.dim();
    let mut seen = std::collections::HashMap::new();
    let mut coords = Vec::new();
    let mut map = Vec::with_capacity(points.len());
    for p in points.iter() {
        // +0.0 folds -0.0 onto 0.0
        let key: Vec<u64> = p.iter().map(|x| (x + 0.0).to_bits()).collect();
        let next = seen.len();
        let id = *seen.entry(key).or_insert_with(|| {
            coords.extend_from_slice(p);
            next
        });
        map.push(id);
    }
    (PointSet::new(d, coords).expect("subset of valid points"), map)
}

pub fn cmd_build(input: &Path, output: &Path, dedupe_rows: bool) -> i32 {
    let points = match read_points(input) {
        Ok(p) => p,
        Err(e) => return fail(e),
    };
    let (points, map) = if dedupe_rows {
        let (p, m) = dedupe(&points);
        (p, Some(m))
    } else {
        (points, None)
    };
    let index = match RnnIndex::build(&points) {
        Ok(i) => i,
        Err(e) => return fail(e),
    };
    if let Err(e) = index.save(output) {
        return fail(e);
    }
    if let Some(map) = map {
        let mut side = output.as_os_str().to_owned();
        side.push(".map");
        let text: String = map.iter().map(|i| format!("{i}\n")).collect();
        if let Err(e) = fs::write(PathBuf::from(side), text) {
            return fail(e.into());
        }
    }
    let s = index.stats();
    eprintln!(
        "built index: {} points, d={}, {} nodes, max candidates {}",
        s.points, s.dim, s.nodes, s.max_candidates
    );
    EXIT_OK
}

#[derive(Serialize)]
struct ResultLine<'a> {
    query: &'a [f64],
    rnn: &'a [usize],
    elapsed_ns: u64,
}

pub fn cmd_query(index_path: &Path, queries_path: &Path, output: &Path) -> i32 {
    let index = match RnnIndex::load(index_path) {
        Ok(i) => i,
        Err(e) => return fail(e),
    };
    let queries = match read_points(queries_path) {
        Ok(q) => q,
        Err(e) => return fail(e),
    };
    if queries.dim() != index.dim() {
        return fail(Error::DimensionMismatch {
            expected: index.dim(),
            found: queries.dim(),
        });
    }
    let start = Instant::now();
    let answers = map_indexed(Exec::Parallel, queries.len(), |i| {
        let t = Instant::now();
        let r = index.query(queries.point(i));
        (r, t.elapsed().as_nanos() as u64)
    });
    let total = start.elapsed();
    let write = || -> std::io::Result<()> {
        let mut w = BufWriter::new(fs::File::create(output)?);
        for (i, (rnn, ns)) in answers.iter().enumerate() {
            let line = ResultLine {
                query: queries.point(i),
                rnn,
                elapsed_ns: *ns,
            };
            serde_json::to_writer(&mut w, &line)?;
            w.write_all(b"\n")?;
        }
        w.flush()
    };
    if let Err(e) = write() {
        return fail(e.into());
    }
    eprintln!(
        "answered {} queries in {:.3} ms",
        queries.len(),
        total.as_secs_f64() * 1e3
    );
    EXIT_OK
}

/// Runs every check on one generated instance.
pub fn check_instance(
    dist: Distribution,
    n: usize,
    d: usize,
    seed: u64,
    queries: usize,
    packing_trials: usize,
    inject_fault: bool,
) -> CheckReport {
    let instance = Instance {
        n,
        d,
        distribution: dist.to_string(),
        seed,
    };
    let mut report = CheckReport::new(instance.clone());
    let points = corpus::generate(dist, n, d, seed);
    let mut index = match RnnIndex::build(&points) {
        Ok(i) => i,
        Err(e) => {
            report.outcomes.push(CheckOutcome::fail("build", e.to_string()));
            return report;
        }
    };
    if inject_fault {
        index.inject_candidate_fault();
    }
    let qs: Vec<Vec<f64>> = corpus::queries(&index, queries, seed)
        .into_iter()
        .map(|q| q.coords)
        .collect();
    report.merge(oracle::equivalence_check(&index, &qs));
    if n <= DEFAULT_CHECK_CAP {
        report.merge(oracle::candidate_semantics_check(&index, DEFAULT_CHECK_CAP));
    }
    if n >= 2 && packing_trials > 0 {
        report.merge(oracle::packing_check(index.points(), packing_trials, seed));
    }
    report.instance = instance;
    report
}

fn cmd_check(a: &CheckArgs) -> i32 {
    if a.d == 0 || a.d > 6 {
        eprintln!("error: --d must be in 1..=6");
        return EXIT_USAGE;
    }
    if a.n == 0 || a.n > 100_000 {
        eprintln!("error: --n must be in 1..=100000");
        return EXIT_USAGE;
    }
    let reports = map_indexed(Exec::Parallel, a.trials, |t| {
        check_instance(a.dist, a.n, a.d, a.seed.wrapping_add(t as u64), 100, 200, a.inject_fault)
    });
    let mut ok = true;
    for r in &reports {
        print!("{}", r.render_text());
        ok &= r.passed();
    }
    if ok {
        println!("all {} instances passed", reports.len());
        EXIT_OK
    } else {
        for r in reports.iter().filter(|r| !r.passed()) {
            eprint!("counterexample:\n{}", r.render_jsonl());
        }
        EXIT_CHECK_FAILED
    }
}

#[derive(Serialize)]
pub struct BenchReport {
    pub n: usize,
    pub d: usize,
    pub dist: String,
    pub seed: u64,
    pub build_ms: f64,
    pub queries: usize,
    pub query_total_ms: f64,
    pub mean_ns: f64,
    pub median_ns: u64,
    pub p99_ns: u64,
    pub mean_finger_path: f64,
    pub max_finger_path: usize,
    /// Order-sensitive hash of every answer; equal across runs with the same seed.
    pub answer_digest: String,
    pub stats: IndexStats,
}

pub fn bench(dist: Distribution, n: usize, d: usize, queries: usize, seed: u64) -> Result<BenchReport, Error> {
    let points = corpus::generate(dist, n, d, seed);
    let start = Instant::now();
    let index = RnnIndex::build(&points)?;
    let build_ms = start.elapsed().as_secs_f64() * 1e3;
    let qs = corpus::queries(&index, queries, seed);
    let mut lat = Vec::with_capacity(qs.len());
    let mut visits = 0usize;
    let mut max_visits = 0usize;
    let mut digest: u64 = 0xcbf2_9ce4_8422_2325;
    let all = Instant::now();
    for q in &qs {
        let t = Instant::now();
        let tr = index.query_normalized_traced(&q.coords);
        lat.push(t.elapsed().as_nanos() as u64);
        visits += tr.finger_visits;
        max_visits = max_visits.max(tr.finger_visits);
        for x in tr.result.iter().map(|&i| i as u64).chain([u64::MAX]) {
            digest = (digest ^ x).wrapping_mul(0x0100_0000_01b3);
        }
    }
    let query_total_ms = all.elapsed().as_secs_f64() * 1e3;
    lat.sort_unstable();
    let m = lat.len().max(1);
    let pick = |f: f64| lat.get(((lat.len() as f64 - 1.0) * f).round() as usize).copied().unwrap_or(0);
    Ok(BenchReport {
        n,
        d,
        dist: dist.to_string(),
        seed,
        build_ms,
        queries: qs.len(),
        query_total_ms,
        mean_ns: lat.iter().sum::<u64>() as f64 / m as f64,
        median_ns: pick(0.5),
        p99_ns: pick(0.99),
        mean_finger_path: visits as f64 / m as f64,
        max_finger_path: max_visits,
        answer_digest: format!("{digest:016x}"),
        stats: index.stats(),
    })
}

fn cmd_bench(a: &BenchArgs) -> i32 {
    if a.d == 0 || a.d > MAX_DIM || a.n == 0 {
        eprintln!("error: need n >= 1 and d in 1..={MAX_DIM}");
        return EXIT_USAGE;
    }
    match bench(a.dist, a.n, a.d, a.queries, a.seed) {
        Ok(r) => {
            println!("{}", serde_json::to_string_pretty(&r).expect("serializable"));
            EXIT_OK
        }
        Err(e) => fail(e),
    }
}
