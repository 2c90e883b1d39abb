//! Acceptance suite. Runs without the libtest harness so each criterion
//! prints exactly one PASS/FAIL line; exits non-zero if any gate fails.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rnnq::exec::{map_indexed, Exec};
use rnnq::oracle::corpus::{self, Distribution};
use rnnq::oracle::{self, naive_quadtree_cells, DEFAULT_CHECK_CAP};
use rnnq::quadtree::{CompressedQuadtree, NodeKind};
use rnnq::rnn_index::{answer_bound, candidate_bound};
use rnnq::{PointSet, QtBox, RnnIndex};

const DIMS: [usize; 4] = [1, 2, 3, 4];
const SIZES: [usize; 4] = [2, 10, 100, 1000];
const SEEDS: u64 = 10;
const QUERIES: usize = 200;

struct Verdict {
    passed: bool,
    detail: String,
}

fn verdict(passed: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        passed,
        detail: detail.into(),
    }
}

#[derive(Clone, Copy)]
struct Case {
    dist: Distribution,
    n: usize,
    d: usize,
    seed: u64,
}

fn corpus_cases() -> Vec<Case> {
    let mut v = Vec::new();
    for d in DIMS {
        for n in SIZES {
            for dist in Distribution::ALL {
                for seed in 0..SEEDS {
                    v.push(Case { dist, n, d, seed });
                }
            }
        }
    }
    v
}

/// Everything the corpus-wide criteria need from one instance.
struct InstanceResult {
    label: String,
    equivalence: Result<(), String>,
    candidates: Result<(), String>,
    max_answer: usize,
    nodes: usize,
    node_limit: usize,
    finger_worst: Option<String>,
}

fn finger_limit(m: usize) -> f64 {
    2.0 * (m as f64).log2() + 4.0
}

fn run_instance(label: String, points: &PointSet, queries: usize, seed: u64, semantics: bool) -> InstanceResult {
    let n = points.len();
    let d = points.dim();
    let index = RnnIndex::build(points).expect("corpus instances build");
    let qs: Vec<Vec<f64>> = corpus::queries(&index, queries, seed)
        .into_iter()
        .map(|q| q.coords)
        .collect();
    let eq = oracle::equivalence_check(&index, &qs);
    let equivalence = if eq.passed() { Ok(()) } else { Err(eq.render_text()) };
    let candidates = if semantics {
        let r = oracle::candidate_semantics_check(&index, DEFAULT_CHECK_CAP);
        if r.passed() {
            Ok(())
        } else {
            Err(r.render_text())
        }
    } else {
        Ok(())
    };
    let m = index.tree().len();
    let limit = finger_limit(m);
    let mut max_answer = 0;
    let mut finger_worst = None;
    for q in &qs {
        let t = index.query_normalized_traced(q);
        max_answer = max_answer.max(t.result.len());
        if t.finger_visits as f64 > limit && finger_worst.is_none() {
            finger_worst = Some(format!(
                "{label}: {} visits > {limit:.1} (m = {m}) at {q:?}",
                t.finger_visits
            ));
        }
    }
    InstanceResult {
        label,
        equivalence,
        candidates,
        max_answer,
        nodes: m,
        node_limit: 4 * (1 << d) * n + 1,
        finger_worst,
    }
}

fn corpus_results() -> (Vec<InstanceResult>, Duration) {
    let cases = corpus_cases();
    let start = Instant::now();
    let results = map_indexed(Exec::Parallel, cases.len(), |i| {
        let s = cases[i];
        let pts = corpus::generate(s.dist, s.n, s.d, s.seed);
        let label = format!("{} n={} d={} seed={}", s.dist, s.n, s.d, s.seed);
        run_instance(label, &pts, QUERIES, s.seed, true)
    });
    (results, start.elapsed())
}

fn nested_results() -> Vec<InstanceResult> {
    [(20_000, 2), (20_000, 3), (2_000, 1)]
        .into_iter()
        .map(|(n, d)| {
            let pts = corpus::nested_scales(n, d, 1);
            run_instance(format!("nested n={n} d={d}"), &pts, 2000, 1, n <= DEFAULT_CHECK_CAP)
        })
        .collect()
}

fn criterion_1(corpus: &[InstanceResult], elapsed: Duration) -> Verdict {
    let bad: Vec<&InstanceResult> = corpus.iter().filter(|r| r.equivalence.is_err()).collect();
    let total = corpus.len() * QUERIES;
    if let Some(r) = bad.first() {
        return verdict(
            false,
            format!(
                "{} of {} instances disagree with brute force; first:\n{}",
                bad.len(),
                corpus.len(),
                r.equivalence.as_ref().unwrap_err()
            ),
        );
    }
    let secs = elapsed.as_secs_f64();
    verdict(
        secs < 300.0,
        format!("{} instances, {total} queries, all exact; {secs:.1} s (limit 300 s)", corpus.len()),
    )
}

fn max_candidates(n: usize) -> usize {
    let pts = corpus::generate(Distribution::Uniform, n, 2, 0);
    RnnIndex::build(&pts).unwrap().stats().max_candidates
}

fn criterion_2(corpus: &[InstanceResult]) -> Verdict {
    if let Some(r) = corpus.iter().find(|r| r.candidates.is_err()) {
        return verdict(false, format!("{}:\n{}", r.label, r.candidates.as_ref().unwrap_err()));
    }
    let small = max_candidates(1_000);
    let large = max_candidates(100_000);
    let bounds: Vec<String> = DIMS.iter().map(|&d| format!("d{d}<={}", candidate_bound(d))).collect();
    verdict(
        large <= small + 5,
        format!(
            "sandwich and bound hold on all {} instances ({}); d=2 uniform max |L|: n=1e3 -> {small}, n=1e5 -> {large} (allowed {})",
            corpus.len(),
            bounds.join(" "),
            small + 5
        ),
    )
}

fn criterion_3(corpus: &[InstanceResult], nested: &[InstanceResult]) -> Verdict {
    let mut worst: BTreeMap<usize, usize> = BTreeMap::new();
    for r in corpus.iter().chain(nested) {
        let d = dim_of(r);
        let w = worst.entry(d).or_default();
        *w = (*w).max(r.max_answer);
        if r.max_answer > answer_bound(d).max(1) {
            return verdict(false, format!("{}: answer of size {}", r.label, r.max_answer));
        }
    }
    let mut notes = Vec::new();
    for d in [1, 2, 3] {
        for dist in [Distribution::Uniform, Distribution::Grid, Distribution::Clusters] {
            let pts = corpus::generate(dist, 2000, d, 3);
            let r = oracle::packing_check(&pts, 10_000, 3);
            if !r.passed() {
                return verdict(false, r.render_text());
            }
            notes.push(format!("d{d}/{dist}: {}", r.outcomes[0].detail));
        }
    }
    let sizes: Vec<String> = worst.iter().map(|(d, w)| format!("d{d}:{w}/{}", answer_bound(*d))).collect();
    verdict(
        true,
        format!("largest answers {}; packing {}", sizes.join(" "), notes.join("; ")),
    )
}

fn bytes_per_point(n: usize) -> f64 {
    let pts = corpus::generate(Distribution::Uniform, n, 2, 0);
    RnnIndex::build(&pts).unwrap().to_bytes().len() as f64 / n as f64
}

fn dim_of(r: &InstanceResult) -> usize {
    r.label.split(" d=").nth(1).unwrap().split(' ').next().unwrap().parse().unwrap()
}

fn criterion_4(corpus: &[InstanceResult], nested: &[InstanceResult]) -> Verdict {
    // per dimension: (instances, over the limit, worst nodes / limit)
    let mut by_dim: BTreeMap<usize, (usize, usize, f64)> = BTreeMap::new();
    let mut first_over = None;
    for r in corpus.iter().chain(nested) {
        let e = by_dim.entry(dim_of(r)).or_default();
        e.0 += 1;
        e.2 = e.2.max(r.nodes as f64 / r.node_limit as f64);
        if r.nodes > r.node_limit {
            e.1 += 1;
            first_over.get_or_insert_with(|| format!("{}: {} nodes > {}", r.label, r.nodes, r.node_limit));
        }
    }
    let small = bytes_per_point(10_000);
    let large = bytes_per_point(100_000);
    let dims: Vec<String> = by_dim
        .iter()
        .map(|(d, (k, over, worst))| format!("d{d}: {over}/{k} over, worst {:.0}%", worst * 100.0))
        .collect();
    verdict(
        first_over.is_none() && large <= 1.25 * small,
        format!(
            "node count vs 4*2^d*n+1 [{}]{}; bytes/point n=1e4 {small:.1}, n=1e5 {large:.1} (ratio {:.3}, limit 1.25)",
            dims.join(", "),
            first_over.map(|f| format!(" first: {f}")).unwrap_or_default(),
            large / small
        ),
    )
}

fn criterion_5(corpus: &[InstanceResult], nested: &[InstanceResult]) -> Verdict {
    if let Some(w) = corpus.iter().chain(nested).find_map(|r| r.finger_worst.clone()) {
        return verdict(false, w);
    }
    let eq = nested.iter().find(|r| r.equivalence.is_err() || r.candidates.is_err());
    if let Some(r) = eq {
        return verdict(false, format!("{} failed its oracle checks", r.label));
    }
    let sizes: Vec<String> = nested.iter().map(|r| format!("{} ({} nodes)", r.label, r.nodes)).collect();
    verdict(
        true,
        format!("every corpus query within 2*log2(m)+4 finger visits, including {}", sizes.join(", ")),
    )
}

fn random_boxes(rng: &mut ChaCha8Rng) -> (usize, Vec<QtBox>) {
    let d = rng.random_range(1..=3);
    let count = rng.random_range(1..=50);
    let mut boxes: Vec<QtBox> = Vec::with_capacity(count);
    while boxes.len() < count {
        // half the time nest below an existing box to force deep chains
        let b = if !boxes.is_empty() && rng.random_bool(0.5) {
            let mut b = boxes[rng.random_range(0..boxes.len())];
            for _ in 0..rng.random_range(1..12) {
                if b.level() >= 47 {
                    break;
                }
                b = b.child(rng.random_range(0..1 << d));
            }
            b
        } else {
            let level = rng.random_range(0..=30);
            let anchor: Vec<u64> = (0..d).map(|_| rng.random_range(0..1u64 << level)).collect();
            QtBox::new(level, &anchor).unwrap()
        };
        boxes.push(b);
    }
    (d, boxes)
}

type CellKey = (u8, u32, Vec<u64>, u32, Vec<u64>, bool);

fn cell_key(kind: NodeKind, marked: bool) -> CellKey {
    match kind {
        NodeKind::Ordinary(b) => (0, b.level(), b.anchor().to_vec(), 0, vec![], marked),
        NodeKind::Compressed { outer, inner } => (
            1,
            outer.level(),
            outer.anchor().to_vec(),
            inner.level(),
            inner.anchor().to_vec(),
            marked,
        ),
    }
}

fn criterion_6() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut total = 0;
    for t in 0..100 {
        let (d, boxes) = random_boxes(&mut rng);
        let tree = CompressedQuadtree::build(d, &boxes).unwrap();
        let mut fast: Vec<CellKey> = (0..tree.len() as u32)
            .map(|v| cell_key(tree.kind(v), tree.is_marked(v)))
            .collect();
        let mut slow: Vec<CellKey> = naive_quadtree_cells(d, &boxes)
            .into_iter()
            .map(|(k, m)| cell_key(k, m))
            .collect();
        fast.sort();
        slow.sort();
        if fast != slow {
            return verdict(
                false,
                format!("instance {t} (d={d}, {} boxes): {} vs {} cells", boxes.len(), fast.len(), slow.len()),
            );
        }
        total += fast.len();
    }
    verdict(true, format!("100 instances, {total} node cells, identical to the naive recursion"))
}

fn criterion_7() -> Verdict {
    let pts = corpus::generate(Distribution::Uniform, 100_000, 2, 7);
    let t = Instant::now();
    let index = RnnIndex::build(&pts).unwrap();
    let build = t.elapsed().as_secs_f64();
    let qs = corpus::generate(Distribution::Uniform, 100_000, 2, 8);
    let t = Instant::now();
    let answers = index.query_batch(&qs);
    let query = t.elapsed().as_secs_f64();
    let t = Instant::now();
    let seq = index.query_batch_with(&qs, Exec::Sequential);
    let query_seq = t.elapsed().as_secs_f64();
    assert_eq!(answers, seq);
    let met = build <= 10.0 && query <= 2.0;
    // soft target: reported, never gating
    verdict(
        true,
        format!(
            "build {build:.2} s (target 10), 1e5 queries {query:.3} s parallel / {query_seq:.3} s sequential (target 2){}",
            if met { "" } else { " [target missed]" }
        ),
    )
}

/// Results lines without the timing field, which is wall-clock by nature.
fn strip_timing(text: &str) -> Vec<serde_json::Value> {
    text.lines()
        .map(|l| {
            let mut v: serde_json::Value = serde_json::from_str(l).unwrap();
            v.as_object_mut().unwrap().remove("elapsed_ns");
            v
        })
        .collect()
}

fn rnnq(args: &[&str]) -> i32 {
    Command::new(env!("CARGO_BIN_EXE_rnnq"))
        .args(args)
        .output()
        .expect("binary runs")
        .status
        .code()
        .unwrap_or(-1)
}

fn write_points(path: &Path, pts: &PointSet) {
    let mut s = format!("# d={}\n", pts.dim());
    for p in pts.iter() {
        let row: Vec<String> = p.iter().map(|x| format!("{x:?}")).collect();
        s.push_str(&row.join(","));
        s.push('\n');
    }
    fs::write(path, s).unwrap();
}

fn criterion_8() -> Verdict {
    let dir = std::env::temp_dir().join(format!("rnnq-acceptance-{}", std::process::id()));
    fs::create_dir_all(&dir).unwrap();
    let p = |name: &str| dir.join(name).to_string_lossy().into_owned();
    write_points(Path::new(&p("points.csv")), &corpus::generate(Distribution::Clusters, 20_000, 3, 8));
    write_points(Path::new(&p("queries.csv")), &corpus::generate(Distribution::Uniform, 5_000, 3, 9));
    for run in ["a", "b"] {
        let code = rnnq(&["build", "--input", &p("points.csv"), "--output", &p(&format!("{run}.rnnq"))]);
        if code != 0 {
            return verdict(false, format!("build exited {code}"));
        }
        let code = rnnq(&[
            "query",
            "--index",
            &p(&format!("{run}.rnnq")),
            "--queries",
            &p("queries.csv"),
            "--output",
            &p(&format!("{run}.jsonl")),
        ]);
        if code != 0 {
            return verdict(false, format!("query exited {code}"));
        }
    }
    let ia = fs::read(p("a.rnnq")).unwrap();
    let ib = fs::read(p("b.rnnq")).unwrap();
    let ra = fs::read_to_string(p("a.jsonl")).unwrap();
    let rb = fs::read_to_string(p("b.jsonl")).unwrap();
    let seq = RnnIndex::build_with(&corpus::generate(Distribution::Clusters, 20_000, 3, 8), Exec::Sequential)
        .unwrap()
        .to_bytes();
    let bench_a = rnnq::cli::bench(Distribution::TwoScale, 5_000, 2, 2_000, 8).unwrap();
    let bench_b = rnnq::cli::bench(Distribution::TwoScale, 5_000, 2, 2_000, 8).unwrap();
    let _ = fs::remove_dir_all(&dir);
    let ok = ia == ib && ia == seq && strip_timing(&ra) == strip_timing(&rb) && bench_a.answer_digest == bench_b.answer_digest;
    verdict(
        ok,
        format!(
            "index files {} bytes, identical across runs and equal to the sequential build: {}; results identical apart from elapsed_ns: {}; bench answers identical: {}",
            ia.len(),
            ia == ib && ia == seq,
            strip_timing(&ra) == strip_timing(&rb),
            bench_a.answer_digest == bench_b.answer_digest
        ),
    )
}

fn main() {
    // `cargo test -- <filter>` passes arguments; list mode must print nothing
    if std::env::args().any(|a| a == "--list") {
        return;
    }
    let (corpus, elapsed) = corpus_results();
    let nested = nested_results();
    let verdicts = [
        ("1 oracle equivalence", criterion_1(&corpus, elapsed)),
        ("2 candidate bound", criterion_2(&corpus)),
        ("3 answer size and packing", criterion_3(&corpus, &nested)),
        ("4 linear size", criterion_4(&corpus, &nested)),
        ("5 logarithmic location", criterion_5(&corpus, &nested)),
        ("6 construction equivalence", criterion_6()),
        ("7 desk-scale performance (soft)", criterion_7()),
        ("8 determinism", criterion_8()),
    ];
    let mut failed = 0;
    for (name, v) in &verdicts {
        println!("criterion {name}: {} - {}", if v.passed { "PASS" } else { "FAIL" }, v.detail);
        failed += usize::from(!v.passed);
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
