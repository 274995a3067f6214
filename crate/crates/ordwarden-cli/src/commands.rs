//! Subcommand implementations.

use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use anyhow::{bail, Context, Result};
use rayon::prelude::*;

use ordwarden_core::compress::CompressorSpec;
use ordwarden_core::detect::{
    parse_decimal, percent_3dp, sweep, train_tree, Model, ModelFile, ThresholdModel,
    TreeHyperparams,
};
use ordwarden_core::encoding::CodingId;
use ordwarden_core::flow::{Label, SeqFieldBits, Transport, Verdict};
use ordwarden_core::ingest::{ingest_path, IngestError, SeqExtractor, WindowMode};
use ordwarden_core::score::score_records;
use ordwarden_core::synth::emit::{emit, emit_labels, EmitFormat};
use ordwarden_core::synth::{
    covert_corpus, legit_corpus, CovertSpec, LegitSpec, ParetoTail, Randomization,
};

use crate::csvio::{self, MetricsRow, ScoreRow};
use crate::{
    DetectArgs, EvaluateArgs, ExtractorArg, FormatArg, GenerateArgs, RankDistArg, ScoreArgs,
    TrainArgs, TransportArg, WindowArg,
};

/// Thread pool honoring the ORDWARDEN_THREADS cap.
fn thread_pool() -> Result<rayon::ThreadPool> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Ok(v) = std::env::var("ORDWARDEN_THREADS") {
        let n: usize = v.parse().context("ORDWARDEN_THREADS must be a positive integer")?;
        if n == 0 {
            bail!("ORDWARDEN_THREADS must be a positive integer");
        }
        builder = builder.num_threads(n);
    }
    Ok(builder.build()?)
}

fn pick_format(args_format: Option<FormatArg>, out: &Path) -> EmitFormat {
    match args_format {
        Some(FormatArg::Pcap) => EmitFormat::Pcap,
        Some(FormatArg::Jsonl) => EmitFormat::Jsonl,
        None => match out.extension().and_then(|e| e.to_str()) {
            Some("jsonl") | Some("ndjson") => EmitFormat::Jsonl,
            _ => EmitFormat::Pcap,
        },
    }
}

pub fn generate(args: GenerateArgs) -> Result<i32> {
    let bits = SeqFieldBits::from_bits(args.bits)
        .ok_or_else(|| anyhow::anyhow!("--bits must be 8 or 32"))?;
    let transport = match args.transport {
        TransportArg::Udp => Transport::Generic,
        TransportArg::Tcp => Transport::Tcp,
    };
    if args.iat_min_ms > args.iat_max_ms {
        bail!("--iat-min-ms exceeds --iat-max-ms");
    }
    let iat_us = (args.iat_min_ms * 1000, args.iat_max_ms * 1000);

    let flows = if args.covert {
        let spec = CovertSpec {
            n: args.n,
            m: args.groups,
            iat_us,
            seq_field_bits: bits,
            randomization: match args.rank_dist {
                RankDistArg::Uniform => Randomization::UniformOrder,
                RankDistArg::Bits => Randomization::BitBlocks,
            },
        };
        covert_corpus(&spec, transport, args.flows, args.seed)?
    } else {
        let spec = LegitSpec {
            length: args.length,
            p_reorder: args.p_reorder,
            p_retransmit: args.p_retransmit,
            iat_us,
            seq_field_bits: bits,
            tail: if args.flat_rates { None } else { Some(ParetoTail::default()) },
        };
        legit_corpus(&spec, transport, args.flows, args.seed)?
    };

    let format = pick_format(args.format, &args.out);
    emit(&flows, format, &args.out)?;
    if let Some(labels) = &args.labels {
        emit_labels(&flows, labels)?;
    }
    let packets: usize = flows.iter().map(|f| f.records.len()).sum();
    eprintln!(
        "generated {} {} flows ({packets} packets) -> {}",
        flows.len(),
        if args.covert { "covert" } else { "legitimate" },
        args.out.display()
    );
    Ok(0)
}

fn extractor_of(arg: ExtractorArg, offset: usize) -> SeqExtractor {
    match arg {
        ExtractorArg::Tcp32 => SeqExtractor::Tcp32,
        ExtractorArg::Generic8 => SeqExtractor::Generic8 { offset },
        ExtractorArg::Generic32 => SeqExtractor::Generic32 { offset },
    }
}

pub fn score(args: ScoreArgs) -> Result<i32> {
    let coding: CodingId = args.coding.parse().map_err(|_| anyhow::anyhow!("--coding must be c1..c4"))?;
    let mode = match args.window {
        WindowArg::First => WindowMode::First,
        WindowArg::Sliding => WindowMode::Sliding { stride: args.stride },
    };
    let extractor = extractor_of(args.extractor, args.offset);

    let (flows, stats) = ingest_path(&args.input, extractor, None)
        .with_context(|| format!("ingesting {}", args.input.display()))?;
    eprintln!(
        "ingested {} packets, {} flows, {} scoreable, {} skipped",
        stats.packets_read, stats.flows_seen, stats.flows_with_window, stats.packets_skipped
    );

    let cspec = CompressorSpec::default();
    let flow_list: Vec<_> = flows.iter().collect();
    let pool = thread_pool()?;
    let scored: Vec<Result<Vec<ScoreRow>, String>> = pool.install(|| {
        flow_list
            .par_iter()
            .map(|(key, records)| {
                match score_records(records, coding, mode, &cspec) {
                    Ok(scores) => Ok(scores
                        .into_iter()
                        .map(|s| ScoreRow {
                            flow_id: if s.window_index == 0 && matches!(mode, WindowMode::First) {
                                key.to_string()
                            } else {
                                format!("{key}#w{}", s.window_index)
                            },
                            coding: coding.to_string(),
                            s_len: s.scored.s_len,
                            c_len: s.scored.c_len,
                        })
                        .collect()),
                    Err(ordwarden_core::score::ScoreError::Ingest(IngestError::FlowTooShort { len })) => {
                        Err(format!("warning: flow {key} has {len} packets, skipped"))
                    }
                    Err(e) => Err(format!("warning: flow {key}: {e}")),
                }
            })
            .collect()
    });

    let mut rows = Vec::new();
    for item in scored {
        match item {
            Ok(mut r) => rows.append(&mut r),
            Err(warning) => eprintln!("{warning}"),
        }
    }
    csvio::write_scores(&args.out, &rows)?;
    eprintln!("wrote {} score rows -> {}", rows.len(), args.out.display());
    Ok(0)
}

fn load_labeled_kappas(
    scores: &Path,
    labels: &Path,
) -> Result<Vec<(num_rational::Ratio<u64>, Label)>> {
    let rows = csvio::read_scores(scores)?;
    let labels = csvio::read_labels(labels)?;
    let mut out = Vec::with_capacity(rows.len());
    for r in &rows {
        let label = labels
            .get(r.base_flow_id())
            .with_context(|| format!("no label for flow {}", r.flow_id))?;
        out.push((r.kappa(), *label));
    }
    Ok(out)
}

pub fn detect(args: DetectArgs) -> Result<i32> {
    let model = match (&args.theta, &args.model) {
        (Some(theta), None) => Model::Threshold(
            ThresholdModel::from_decimal(theta)
                .map_err(|e| anyhow::anyhow!("--theta: {e}"))?,
        ),
        (None, Some(path)) => {
            let file: ModelFile = serde_json::from_reader(File::open(path)?)
                .with_context(|| format!("parsing {}", path.display()))?;
            Model::from_file(&file)?
        }
        _ => unreachable!("clap group enforces exactly one"),
    };

    let rows = csvio::read_scores(&args.scores)?;
    let verdicts: Vec<(ScoreRow, &str)> = rows
        .into_iter()
        .map(|r| {
            let v = model.verdict(r.kappa());
            (r, v.as_str())
        })
        .collect();
    let positives = verdicts.iter().filter(|(_, v)| *v == Verdict::Covert.as_str()).count();
    csvio::write_verdicts(&args.out, &verdicts)?;
    eprintln!("{positives} of {} flows flagged covert -> {}", verdicts.len(), args.out.display());

    if let Some(labels_path) = &args.labels {
        let labels = csvio::read_labels(labels_path)?;
        let mut cm = ordwarden_core::detect::ConfusionMatrix::default();
        for (row, verdict) in &verdicts {
            if let Some(label) = labels.get(row.base_flow_id()) {
                let v = if *verdict == "covert" { Verdict::Covert } else { Verdict::Legitimate };
                cm.record(v, *label);
            }
        }
        let report = ordwarden_core::detect::metrics(cm)?;
        let opt = |v: Option<num_rational::Ratio<u64>>| {
            v.map(percent_3dp).unwrap_or_else(|| "-".into())
        };
        eprintln!(
            "tp={} fp={} tn={} fn={} precision={}% recall={}% accuracy={}% f1={}% fpr={}%",
            cm.tp,
            cm.fp,
            cm.tn,
            cm.fn_,
            opt(report.precision),
            opt(report.recall),
            percent_3dp(report.accuracy),
            opt(report.f1),
            opt(report.fpr),
        );
    }
    Ok(if positives > 0 { 1 } else { 0 })
}

pub fn train(args: TrainArgs) -> Result<i32> {
    let samples: Vec<(f64, Label)> = load_labeled_kappas(&args.scores, &args.labels)?
        .into_iter()
        .map(|(k, l)| (*k.numer() as f64 / *k.denom() as f64, l))
        .collect();
    let hp = TreeHyperparams {
        max_depth: args.max_depth,
        min_leaf: args.min_leaf,
        prune: !args.no_prune,
        seed: args.seed,
    };
    let tree = train_tree(&samples, &hp)?;
    let covert = samples.iter().filter(|(_, l)| l.is_covert()).count();
    let meta = serde_json::json!({
        "samples": samples.len(),
        "covert": covert,
        "legitimate": samples.len() - covert,
        "max_depth": hp.max_depth,
        "min_leaf": hp.min_leaf,
        "prune": hp.prune,
        "seed": hp.seed,
        "depth": tree.depth(),
    });
    let file = Model::Tree(tree.clone()).to_file(meta);
    serde_json::to_writer_pretty(BufWriter::new(File::create(&args.out)?), &file)?;
    eprintln!(
        "trained tree of depth {} on {} samples -> {}",
        tree.depth(),
        samples.len(),
        args.out.display()
    );
    Ok(0)
}

pub fn evaluate(args: EvaluateArgs) -> Result<i32> {
    let scored = load_labeled_kappas(&args.scores, &args.labels)?;
    let threshold_strs: Vec<String> = if args.thresholds == "paper" {
        ordwarden_core::detect::PAPER_THRESHOLD_STRS.iter().map(|s| s.to_string()).collect()
    } else {
        args.thresholds.split(',').map(|s| s.trim().to_string()).collect()
    };
    let thresholds = threshold_strs
        .iter()
        .map(|s| parse_decimal(s).map_err(|e| anyhow::anyhow!("--thresholds: {e}")))
        .collect::<Result<Vec<_>>>()?;

    let rows = sweep(&scored, &thresholds)?;
    let out: Vec<MetricsRow> = rows
        .into_iter()
        .zip(threshold_strs)
        .map(|(row, threshold)| MetricsRow { threshold, report: row.report })
        .collect();
    csvio::write_metrics(&args.out, &out)?;
    eprintln!("evaluated {} thresholds over {} flows -> {}", out.len(), scored.len(), args.out.display());

    // convenience: best accuracy row on stderr
    if let Some(best) = out.iter().max_by_key(|r| r.report.accuracy) {
        eprintln!(
            "best threshold {}: accuracy {}%",
            best.threshold,
            percent_3dp(best.report.accuracy)
        );
    }
    Ok(0)
}
