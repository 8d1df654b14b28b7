//! Acceptance suite. Prints one line per criterion and fails if any criterion
//! fails. Run with `--nocapture` to see the lines.

use std::collections::{BTreeMap, BTreeSet};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use chatcondense_core::backend::FailingBackend;
use chatcondense_core::client::{ChatClient, ClientConfig};
use chatcondense_core::condenser::{
    parse_condenser_output, parse_strict, MockCondenserBackend, ParsedCondensation,
};
use chatcondense_core::decider::{self, normalize, Decider};
use chatcondense_core::harness::synthetic::{sweep_chat_model, sweep_suite, synthetic_transcript};
use chatcondense_core::harness::{
    self, decider_sweep, MockChatModel, SessionRun, DEFAULT_GAMMAS, DEFAULT_TAUS,
};
use chatcondense_core::perturb::{perturb_turns, PerturbKind, PerturbSpec};
use chatcondense_core::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const TOK: WhitespaceTokenizer = WhitespaceTokenizer;

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        let ok: bool = $cond;
        if !ok {
            return Err(format!($($msg)+));
        }
    };
}

fn within(start: Instant, limit: Duration) -> Result<String, String> {
    let took = start.elapsed();
    if took > limit {
        Err(format!("took {took:.2?}, limit {limit:?}"))
    } else {
        Ok(format!("{took:.2?}"))
    }
}

fn label(e: &HistoryEntry) -> String {
    match e {
        HistoryEntry::Raw(p) => format!("p{}", p.turn_index),
        HistoryEntry::Condensed(c) => format!("C{}", c.generation_index),
    }
}

fn labels(entries: &[HistoryEntry]) -> Vec<String> {
    entries.iter().map(label).collect()
}

// 1 -------------------------------------------------------------------------

fn golden_trace() -> Outcome {
    let start = Instant::now();
    let condenser = Condenser::new(MockCondenserBackend::fixed(20, 60));
    let mut s = SessionState::new(WindowConfig::default()).unwrap();
    let mut histories: BTreeMap<usize, Vec<String>> = BTreeMap::new();
    let mut inputs: BTreeMap<usize, Vec<String>> = BTreeMap::new();
    let mut in_flight_at: Vec<usize> = Vec::new();
    for t in 1..=9 {
        s.begin_user_turn(format!("question number {t}"), &TOK)
            .unwrap();
        let msgs = s.build_prompt_history().unwrap();
        ensure!(
            msgs.len() == 2 * s.entries().len() + 1,
            "turn {t}: message count"
        );
        histories.insert(t, labels(s.entries()));
        if s.pending_job()
            .is_some_and(|j| j.status == JobStatus::Ready)
        {
            in_flight_at.push(t);
        }
        let reply = format!("reply to question {t} with detail {t}");
        if let Some(trigger) = s.complete_assistant_reply(reply, &TOK).unwrap() {
            inputs.insert(trigger.generation_index, labels(&trigger.window));
            let verdict = Decider::default()
                .decide(&trigger.window, s.config(), &TOK)
                .unwrap();
            ensure!(
                s.admit_trigger(&trigger, verdict),
                "trigger at {t} withheld"
            );
            let report = condenser.condense(&trigger, &TOK);
            s.finish_job(report.into_outcome(trigger.trigger_turn))
                .unwrap();
        }
    }
    let want = |v: &[&str]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>();
    ensure!(
        histories[&5] == want(&["p1", "p2", "p3", "p4"]),
        "H5 = {:?}",
        histories[&5]
    );
    ensure!(in_flight_at.contains(&5), "C1 not pending at turn 5");
    ensure!(
        histories[&6] == want(&["C1", "p5"]),
        "H6 = {:?}",
        histories[&6]
    );
    ensure!(
        inputs[&1] == want(&["p1", "p2", "p3", "p4"]),
        "C1 input {:?}",
        inputs[&1]
    );
    ensure!(
        inputs[&2] == want(&["C1", "p5", "p6", "p7"]),
        "C2 input {:?}",
        inputs[&2]
    );
    ensure!(
        histories[&9] == want(&["C2", "p8"]),
        "H9 = {:?}",
        histories[&9]
    );

    // Same schedule through the threaded middleware.
    let mut m = CondensingSession::new(
        WindowConfig::default(),
        std::sync::Arc::new(Condenser::new(MockCondenserBackend::fixed(20, 60))),
    )
    .unwrap();
    for t in 1..=9 {
        m.prompt_for(format!("question number {t}")).unwrap();
        ensure!(
            labels(m.state().entries()) == histories[&t],
            "middleware H{t} = {:?}",
            labels(m.state().entries())
        );
        if let ReplyEffect::Spawned(_) = m.record_reply(format!("reply {t}")).unwrap() {
            m.wait_for_background().unwrap();
        }
    }
    let took = within(start, Duration::from_secs(1))?;
    Ok(format!("H5/H6/C2-input/H9 match, {took}"))
}

// 2 -------------------------------------------------------------------------

/// Per-turn history tokens from the schedule rules alone: pairs of `pair`
/// tokens, `w`-entry windows condensed to `condensed` tokens, integrated two
/// turns after the trigger.
fn oracle_curve(turns: usize, pair: usize, condensed: usize, w: usize) -> Vec<usize> {
    let mut entries: Vec<usize> = Vec::new();
    let mut pending: Option<usize> = None;
    let mut curve = Vec::new();
    for t in 1..=turns {
        if pending.is_some_and(|trig| t >= trig + 2) {
            entries.splice(..w, [condensed]);
            pending = None;
        }
        curve.push(entries.iter().sum());
        entries.push(pair);
        if pending.is_none() && entries.len() >= w {
            pending = Some(t);
        }
    }
    curve
}

fn history_curve(run: &SessionRun) -> Vec<usize> {
    run.records
        .iter()
        .map(|r| r.prompt_history_tokens)
        .collect()
}

fn token_curves() -> Outcome {
    let start = Instant::now();
    let chat = MockChatModel::default();
    let backend = MockCondenserBackend::fixed(20, 60);
    let ctx = RunContext::new(&chat, &backend);
    let t = synthetic_transcript("curve", 10, 50);
    let osc =
        history_curve(&run_session(&t, &Strategy::mt_osc(WindowConfig::default()), &ctx).unwrap());
    let base = history_curve(&run_session(&t, &Strategy::baseline(), &ctx).unwrap());

    let want_osc = vec![0, 200, 400, 600, 800, 280, 480, 680, 280, 480];
    let want_base: Vec<usize> = (0..10).map(|i| 200 * i).collect();
    ensure!(
        oracle_curve(10, 200, 80, 4) == want_osc,
        "oracle disagrees with the expected MT-OSC curve"
    );
    ensure!(osc == want_osc, "MT-OSC curve {osc:?}");
    ensure!(base == want_base, "baseline curve {base:?}");
    let (so, sb): (usize, usize) = (osc.iter().sum(), base.iter().sum());
    ensure!((so, sb) == (4200, 9000), "cumulative {so} vs {sb}");
    let cum = 100.0 * (sb - so) as f64 / sb as f64;
    let last = 100.0 * (base[9] - osc[9]) as f64 / base[9] as f64;
    ensure!((cum - 53.3).abs() < 0.05, "cumulative reduction {cum:.2}%");
    ensure!((last - 73.3).abs() < 0.05, "turn-10 reduction {last:.2}%");
    let took = within(start, Duration::from_secs(1))?;
    Ok(format!(
        "{so} vs {sb} tokens, {cum:.1}% cumulative, {last:.1}% at turn 10, {took}"
    ))
}

// 3 -------------------------------------------------------------------------

const VOCAB: [&str; 30] = [
    "blorf", "zint", "quab", "frod", "glim", "trox", "vemp", "snarl", "kwip", "drab", "plonk",
    "hux", "jarn", "mib", "nerk", "oft", "prag", "quil", "rusk", "stib", "tvark", "umph", "vlin",
    "wemb", "xorn", "yolk", "zeph", "brisk", "clomp", "dwarf",
];

fn phrase(rng: &mut ChaCha8Rng, max: usize) -> Vec<&'static str> {
    let n = rng.random_range(0..=max);
    (0..n)
        .map(|_| VOCAB[rng.random_range(0..VOCAB.len())])
        .collect()
}

fn oracle_overlap(users: &[Vec<&str>], assistants: &[Vec<&str>]) -> f64 {
    let mut seen: BTreeSet<&str> = BTreeSet::new();
    let mut novel: Vec<BTreeSet<&str>> = Vec::new();
    for (u, a) in users.iter().zip(assistants) {
        seen.extend(u.iter().copied());
        novel.push(a.iter().copied().filter(|w| !seen.contains(w)).collect());
    }
    let union: BTreeSet<&str> = novel.iter().flatten().copied().collect();
    if union.is_empty() {
        return 0.0;
    }
    let shared = union
        .iter()
        .filter(|w| novel.iter().filter(|s| s.contains(*w)).count() >= 2)
        .count();
    shared as f64 / union.len() as f64
}

fn decider_oracle() -> Outcome {
    let start = Instant::now();
    for w in VOCAB {
        let n = normalize(w);
        ensure!(
            n.iter().collect::<Vec<_>>() == vec![w],
            "vocabulary word {w} does not normalize to itself"
        );
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0xdec1de);
    let mut withheld = 0;
    for case in 0..500 {
        let len = rng.random_range(2..=6);
        let users: Vec<Vec<&str>> = (0..len).map(|_| phrase(&mut rng, 8)).collect();
        let assistants: Vec<Vec<&str>> = (0..len).map(|_| phrase(&mut rng, 10)).collect();
        let condensed_head = rng.random_bool(0.3);
        let window: Vec<HistoryEntry> = (0..len)
            .map(|i| {
                let (u, a) = (users[i].join(" "), assistants[i].join(" "));
                if i == 0 && condensed_head {
                    HistoryEntry::Condensed(CondensedPair {
                        human_input: u,
                        assistant_summary: a,
                        reasoning: String::new(),
                        covers_from: 1,
                        covers_to: 4,
                        generation_index: 1,
                    })
                } else {
                    HistoryEntry::Raw(ExchangePair::new(
                        i + 1,
                        Turn::user(u, &TOK),
                        Turn::assistant(a, &TOK),
                    ))
                }
            })
            .collect();
        let expected = oracle_overlap(&users, &assistants);
        let got = decider::window_overlap(&window).map_err(|e| format!("case {case}: {e}"))?;
        ensure!(
            got == expected,
            "case {case}: overlap {got} vs oracle {expected}"
        );

        let config = WindowConfig {
            w: len,
            gamma: f64::from(rng.random_range(0..=10u8)) / 10.0,
            tau: rng.random_range(0..=40),
            decider_enabled: rng.random_bool(0.9),
            ..WindowConfig::default()
        };
        let user_tokens: usize = users.iter().map(Vec::len).sum();
        let oracle_withhold =
            config.decider_enabled && expected > config.gamma && user_tokens > config.tau;
        let v = decider::decide(&window, &config, &TOK).map_err(|e| format!("case {case}: {e}"))?;
        ensure!(
            v.user_tokens == user_tokens,
            "case {case}: user tokens {}",
            v.user_tokens
        );
        ensure!(
            (v.decision == Decision::Withhold) == oracle_withhold,
            "case {case}: decision {:?}",
            v.decision
        );
        withheld += usize::from(oracle_withhold);
    }
    let took = within(start, Duration::from_secs(10))?;
    Ok(format!("500 windows agree ({withheld} withheld), {took}"))
}

// 4 -------------------------------------------------------------------------

fn defaults_window(per_user: usize) -> Vec<HistoryEntry> {
    let replies = ["blorf zint", "blorf zint", "quab frod glim trox", "blorf"];
    replies
        .iter()
        .enumerate()
        .map(|(i, a)| {
            let user = (0..per_user)
                .map(|k| format!("q{i}x{k}"))
                .collect::<Vec<_>>()
                .join(" ");
            HistoryEntry::Raw(ExchangePair::new(
                i + 1,
                Turn::user(user, &TOK),
                Turn::assistant(*a, &TOK),
            ))
        })
        .collect()
}

fn decider_defaults() -> Outcome {
    let cfg = WindowConfig::default();
    ensure!(
        (cfg.gamma, cfg.tau) == (0.2, 1000),
        "defaults are {} / {}",
        cfg.gamma,
        cfg.tau
    );
    let high = decider::decide(&defaults_window(300), &cfg, &TOK).map_err(|e| e.to_string())?;
    let low = decider::decide(&defaults_window(180), &cfg, &TOK).map_err(|e| e.to_string())?;
    ensure!(
        (high.overlap - 1.0 / 3.0).abs() < 1e-9,
        "overlap {}",
        high.overlap
    );
    ensure!(
        high.user_tokens == 1200 && low.user_tokens == 720,
        "user tokens"
    );
    ensure!(
        high.decision == Decision::Withhold,
        "1200 tokens: {:?}",
        high.decision
    );
    ensure!(
        low.decision == Decision::Condense,
        "720 tokens: {:?}",
        low.decision
    );
    let off = WindowConfig {
        decider_enabled: false,
        ..cfg
    };
    for per_user in [300, 180] {
        let v =
            decider::decide(&defaults_window(per_user), &off, &TOK).map_err(|e| e.to_string())?;
        ensure!(
            v.decision == Decision::Condense,
            "disabled decider withheld at {per_user}"
        );
    }
    Ok(format!(
        "overlap {:.3}: withhold at 1200, condense at 720, disabled condenses both",
        high.overlap
    ))
}

// 5 -------------------------------------------------------------------------

fn synthetic_suite() -> Vec<Transcript> {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    (0..20)
        .map(|i| {
            synthetic_transcript(
                format!("fallback-{i}"),
                rng.random_range(1..=14),
                rng.random_range(1..=400),
            )
        })
        .collect()
}

fn token_record_bytes(run: &SessionRun) -> String {
    let rows: Vec<_> = run
        .records
        .iter()
        .map(|r| {
            (
                r.turn_index,
                r.prompt_history_tokens,
                r.prompt_tokens,
                r.history_entries,
                r.background_tokens_in,
                r.background_tokens_out,
            )
        })
        .collect();
    serde_json::to_string(&rows).unwrap()
}

fn fallback_equivalence() -> Outcome {
    let chat = MockChatModel::default();
    let failing = FailingBackend;
    let ctx = RunContext::new(&chat, &failing);
    let osc = Strategy::mt_osc(WindowConfig::default());
    let mut failures = 0;
    for t in synthetic_suite() {
        let a = run_session(&t, &osc, &ctx).map_err(|e| e.to_string())?;
        let b = run_session(&t, &Strategy::baseline(), &ctx).map_err(|e| e.to_string())?;
        ensure!(a.aborted.is_none(), "{} aborted", t.id);
        ensure!(
            token_record_bytes(&a) == token_record_bytes(&b),
            "{} token records differ",
            t.id
        );
        failures += a
            .records
            .iter()
            .filter(|r| r.has_event(harness::CondensationEvent::Failed))
            .count();
    }
    ensure!(failures > 0, "no condensation was ever attempted");
    Ok(format!(
        "20 transcripts identical to baseline ({failures} failed jobs)"
    ))
}

// 6 -------------------------------------------------------------------------

fn fifo_plateau() -> Outcome {
    let chat = MockChatModel::default();
    let backend = MockCondenserBackend::fixed(20, 60);
    let ctx = RunContext::new(&chat, &backend);
    let run = run_session(
        &synthetic_transcript("fifo", 10, 50),
        &Strategy::fifo(4),
        &ctx,
    )
    .map_err(|e| e.to_string())?;
    let curve = history_curve(&run);
    ensure!(
        curve == vec![0, 200, 400, 600, 800, 800, 800, 800, 800, 800],
        "FIFO curve {curve:?}"
    );
    ensure!(
        run.records.iter().all(|r| r.history_entries <= 4),
        "more than 4 pairs kept"
    );
    Ok(format!("{curve:?}"))
}

// 7 -------------------------------------------------------------------------

const FILLERS: [&str; 6] = ["Um.", "Uh.", "Well.", "Anyway.", "Ok.", "Hmm."];

fn random_turns(rng: &mut ChaCha8Rng, blanks: bool) -> Vec<String> {
    let len = rng.random_range(3..=15);
    (0..len)
        .map(|i| {
            if blanks && i > 0 && i + 1 < len && rng.random_bool(0.2) {
                "  ".to_string()
            } else {
                format!("turn {i} asks about item {}", rng.random_range(0..1000))
            }
        })
        .collect()
}

fn random_spec(rng: &mut ChaCha8Rng, kind: PerturbKind, seed: u64) -> PerturbSpec {
    let spec = PerturbSpec::new(kind, seed);
    if rng.random_bool(0.5) {
        spec.with_n(rng.random_range(1..=6))
    } else {
        spec.with_ratio(rng.random_range(0.05..=1.0))
    }
}

/// Output with the inserted positions removed.
fn strip(out: &[String], inserted: &[usize]) -> Vec<String> {
    out.iter()
        .enumerate()
        .filter(|(i, _)| !inserted.contains(i))
        .map(|(_, t)| t.clone())
        .collect()
}

fn check_perturbation(kind: PerturbKind, seed: u64) -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x7e57);
    let turns = random_turns(&mut rng, kind == PerturbKind::ContextualDiversion);
    let spec = random_spec(&mut rng, kind, seed);
    let stream = rng.random_range(0..4);
    let n = spec
        .insertion_count(turns.len())
        .map_err(|e| e.to_string())?;
    let p = perturb_turns(&turns, &spec, None, stream).map_err(|e| e.to_string())?;
    let again = perturb_turns(&turns, &spec, None, stream).map_err(|e| e.to_string())?;
    ensure!(p == again, "seed {seed}: not deterministic");
    ensure!(
        strip(&p.turns, &p.inserted_at) == turns,
        "seed {seed}: originals altered"
    );
    let len = turns.len();
    match kind {
        PerturbKind::RepetitionInfusion => {
            ensure!(
                p.turns.len() == len + n.min(len - 2),
                "seed {seed}: RI length"
            );
            for &i in &p.inserted_at {
                ensure!(
                    p.turns[i] == p.turns[i - 1],
                    "seed {seed}: RI insert is not a copy"
                );
            }
            let count = |t: &String| p.turns.iter().filter(|x| *x == t).count();
            ensure!(count(&turns[0]) == 1, "seed {seed}: first turn duplicated");
            ensure!(
                count(&turns[len - 1]) == 1,
                "seed {seed}: last turn duplicated"
            );
        }
        PerturbKind::FillerInjection => {
            ensure!(
                p.turns.len() == len + n.min(len - 1),
                "seed {seed}: FI length"
            );
            ensure!(
                p.turns[0] == turns[0],
                "seed {seed}: filler before the first turn"
            );
            for &i in &p.inserted_at {
                ensure!(
                    FILLERS.contains(&p.turns[i].as_str()),
                    "seed {seed}: filler {:?}",
                    p.turns[i]
                );
            }
        }
        PerturbKind::ContextualDiversion => {
            ensure!(
                p.inserted_at.len() <= n,
                "seed {seed}: CD inserted {} > {n}",
                p.inserted_at.len()
            );
            ensure!(
                p.turns.last() == turns.last(),
                "seed {seed}: distractor after the last turn"
            );
            for &i in &p.inserted_at {
                ensure!(
                    !p.turns[i - 1].trim().is_empty(),
                    "seed {seed}: distractor after a blank turn"
                );
            }
        }
    }
    Ok(())
}

fn perturbation_invariants() -> Outcome {
    let start = Instant::now();
    for kind in [
        PerturbKind::RepetitionInfusion,
        PerturbKind::FillerInjection,
        PerturbKind::ContextualDiversion,
    ] {
        for seed in 0..200 {
            check_perturbation(kind, seed)?;
        }
    }
    let took = within(start, Duration::from_secs(5))?;
    Ok(format!("3 x 200 seeded runs, {took}"))
}

// 8 -------------------------------------------------------------------------

fn sweep_structure() -> Outcome {
    let chat = sweep_chat_model();
    let backend = MockCondenserBackend::fixed(20, 60);
    let ctx = RunContext::new(&chat, &backend);
    let suite = sweep_suite(40, 8);
    let report = decider_sweep(
        &suite,
        &DEFAULT_GAMMAS,
        &DEFAULT_TAUS,
        &Strategy::mt_osc(WindowConfig::default()),
        &ctx,
    )
    .map_err(|e| e.to_string())?;
    ensure!(report.cells.len() == 20, "{} cells", report.cells.len());
    let withheld = |g: f64, t: usize| report.cell(g, t).map(|c| c.withheld_sessions);
    for (gi, &g) in DEFAULT_GAMMAS.iter().enumerate() {
        for (ti, &t) in DEFAULT_TAUS.iter().enumerate() {
            let here = withheld(g, t).ok_or(format!("missing cell {g}/{t}"))?;
            if let Some(&g2) = DEFAULT_GAMMAS.get(gi + 1) {
                ensure!(
                    withheld(g2, t) <= Some(here),
                    "not monotone in gamma at {g}/{t}"
                );
            }
            if let Some(&t2) = DEFAULT_TAUS.get(ti + 1) {
                ensure!(
                    withheld(g, t2) <= Some(here),
                    "not monotone in tau at {g}/{t}"
                );
            }
        }
    }
    let counts: Vec<usize> = report.cells.iter().map(|c| c.withheld_sessions).collect();
    let (lo, hi) = (counts.iter().min().unwrap(), counts.iter().max().unwrap());
    ensure!(
        lo < hi,
        "withheld counts are flat at {lo}, the grid is not exercised"
    );
    Ok(format!(
        "20 cells, withheld {hi} down to {lo} of {}",
        suite.len()
    ))
}

// 9 -------------------------------------------------------------------------

const FRAGMENTS: [&str; 24] = [
    "{",
    "}",
    "\"",
    "\\",
    ":",
    ",",
    "[",
    "]",
    "\"HumanInput\"",
    "\"Assistant\"",
    "\"Reasoning\"",
    "null",
    "true",
    "1e999",
    "-0",
    " ",
    "\n",
    "```json",
    "é",
    "😀",
    "\\u00",
    "\"x\"",
    "{}",
    "\u{0}",
];

fn fuzz_case(rng: &mut ChaCha8Rng) -> String {
    let mut s = String::new();
    for _ in 0..rng.random_range(0..40) {
        if rng.random_bool(0.2) {
            let bytes: Vec<u8> = (0..rng.random_range(1..6)).map(|_| rng.random()).collect();
            s.push_str(&String::from_utf8_lossy(&bytes));
        } else {
            s.push_str(FRAGMENTS[rng.random_range(0..FRAGMENTS.len())]);
        }
    }
    if rng.random_bool(0.3) {
        let good = r#"{"HumanInput":"h","Assistant":"a","Reasoning":"r"}"#;
        let cut = rng.random_range(0..=good.len());
        let at = s.floor_char_boundary(s.len() / 2);
        s.insert_str(at, &good[..cut]);
    }
    s
}

fn field(rng: &mut ChaCha8Rng, allow_empty: bool) -> String {
    let pieces = [
        "a", "Z", "5 hours", "west", "\"q\"", "\\", "\n", "{", "}", "é", "😀", "\t", " ",
    ];
    let mut s: String = (0..rng.random_range(0..8))
        .map(|_| pieces[rng.random_range(0..pieces.len())])
        .collect();
    if !allow_empty && s.trim().is_empty() {
        s.push('x');
    }
    s
}

fn parser_robustness() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let (mut ok, mut err) = (0, 0);
    for case in 0..10_000 {
        let text = fuzz_case(&mut rng);
        match catch_unwind(|| parse_condenser_output(&text)) {
            Ok(Ok(_)) => ok += 1,
            Ok(Err(_)) => err += 1,
            Err(_) => return Err(format!("case {case} panicked on {text:?}")),
        }
    }
    for case in 0..1000 {
        let p = ParsedCondensation {
            human_input: field(&mut rng, false),
            assistant_summary: field(&mut rng, false),
            reasoning: field(&mut rng, true),
        };
        let json = p.to_json();
        ensure!(
            parse_strict(&json).as_ref() == Ok(&p),
            "round trip {case}: {json}"
        );
        let wrapped = format!("Here you go:\n```json\n{json}\n```");
        ensure!(
            parse_condenser_output(&wrapped).as_ref() == Ok(&p),
            "wrapped {case}"
        );
    }
    Ok(format!(
        "10000 fuzz cases ({ok} parsed, {err} typed errors), 1000 round trips"
    ))
}

// 10 ------------------------------------------------------------------------

fn accounting_identity() -> Outcome {
    let chat = sweep_chat_model();
    let mock = MockCondenserBackend::fixed(20, 60);
    let ratio = MockCondenserBackend::ratio(0.3);
    let failing = FailingBackend;
    let mut suite = sweep_suite(12, 10);
    suite.extend(synthetic_suite());
    let mut strategies = vec![
        Strategy::baseline(),
        Strategy::fifo(4),
        Strategy::mt_osc(WindowConfig::default()),
        Strategy::mt_osc(WindowConfig::with_window(2)),
        Strategy::mt_osc(WindowConfig {
            integration_delay_turns: 3,
            decider_enabled: false,
            ..WindowConfig::default()
        }),
    ];
    strategies.push(Strategy {
        kind: StrategyKind::MtOscSummarizer,
        ..Strategy::mt_osc(WindowConfig::default())
    });
    let mut checked = 0;
    let mut background = 0;
    for backend in [&mock as &dyn CompletionBackend, &ratio, &failing] {
        let ctx = RunContext::new(&chat, backend);
        for strategy in &strategies {
            let report = run_transcripts(&suite, strategy, &ctx, Default::default())
                .map_err(|e| e.to_string())?;
            let mut sum_report = 0;
            for s in &report.sessions {
                let expected: usize = s
                    .records
                    .iter()
                    .map(|r| {
                        r.prompt_history_tokens + r.background_tokens_in + r.background_tokens_out
                    })
                    .sum();
                ensure!(
                    s.total_tokens_with_background() == expected,
                    "{} under {}: {} != {expected}",
                    s.transcript_id,
                    strategy.kind.label(),
                    s.total_tokens_with_background()
                );
                sum_report += expected;
                background += s.background_tokens();
                checked += 1;
            }
            ensure!(
                report.aggregates.total_tokens_with_background == sum_report,
                "aggregate mismatch under {}",
                strategy.kind.label()
            );
        }
    }
    ensure!(background > 0, "no background tokens were exercised");
    Ok(format!(
        "{checked} sessions exact, {background} background tokens"
    ))
}

// 11 ------------------------------------------------------------------------

const ELVIS: [(&str, &str); 4] = [
    (
        "Q: how far is Elvis from his house?\nA:",
        "I need more information to answer. Where is Elvis now, and where is his house?",
    ),
    (
        "Q: Elvis begins his journey from his house.\nA:",
        "Since Elvis starts at his house, he is currently 0 miles away from it.",
    ),
    (
        "Q: he drives west for 5 hours.\nA:",
        "Assuming a speed of 60 mph, 5 hours of driving covers about 300 miles, so Elvis is roughly 300 miles west of his house.",
    ),
    (
        "Q: after that, he turns around to change direction.\nA:",
        "Turning around means he now heads east. He is still about 300 miles from home, and that distance will start to shrink.",
    ),
];

/// `None` when no API key is configured.
fn live_smoke() -> Option<Outcome> {
    let config = ClientConfig::from_env()?;
    Some((|| {
        let client = ChatClient::new(config).map_err(|e| e.to_string())?;
        let mut params = CondenserParams::default();
        if let Ok(model) = std::env::var("CHATCONDENSE_CONDENSER_MODEL") {
            params.model_id = model;
        }
        let window: Vec<HistoryEntry> = ELVIS
            .iter()
            .enumerate()
            .map(|(i, (u, a))| {
                HistoryEntry::Raw(ExchangePair::new(
                    i + 1,
                    Turn::user(*u, &TOK),
                    Turn::assistant(*a, &TOK),
                ))
            })
            .collect();
        let report = Condenser::new(client)
            .with_params(params)
            .condense_window(&window, 1, &TOK);
        let pair = report.result.map_err(|e| e.to_string())?;
        let human = pair.human_input.to_lowercase();
        ensure!(
            human.contains("5 hours"),
            "HumanInput lacks \"5 hours\": {}",
            pair.human_input
        );
        ensure!(
            human.contains("west"),
            "HumanInput lacks \"west\": {}",
            pair.human_input
        );
        Ok(format!("HumanInput: {}", pair.human_input))
    })())
}

// ---------------------------------------------------------------------------

fn run(id: usize, name: &str, f: impl FnOnce() -> Outcome) -> bool {
    let start = Instant::now();
    let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
        Err(p
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_else(|| "panicked".into()))
    });
    match outcome {
        Ok(detail) => {
            println!("PASS  {id:>2} {name}: {detail} [{:.1?}]", start.elapsed());
            true
        }
        Err(why) => {
            println!("FAIL  {id:>2} {name}: {why}");
            false
        }
    }
}

#[test]
fn acceptance() {
    // start on a fresh line after the harness's "test acceptance ... "
    println!();
    let results = [
        run(1, "golden trace", golden_trace),
        run(2, "token curves", token_curves),
        run(3, "decider oracle", decider_oracle),
        run(4, "decider defaults", decider_defaults),
        run(5, "fallback equivalence", fallback_equivalence),
        run(6, "fifo plateau", fifo_plateau),
        run(7, "perturbation invariants", perturbation_invariants),
        run(8, "sweep structure", sweep_structure),
        run(9, "parser robustness", parser_robustness),
        run(10, "accounting identity", accounting_identity),
    ];
    let live = match live_smoke() {
        Some(outcome) => run(11, "live smoke", || outcome),
        None => {
            println!("SKIP  11 live smoke: set CHATCONDENSE_API_KEY or OPENAI_API_KEY to run");
            true
        }
    };
    let failed = results.iter().filter(|ok| !**ok).count() + usize::from(!live);
    assert_eq!(failed, 0, "{failed} acceptance criteria failed");
}
