//! Acceptance criteria, one PASS/FAIL line each. Exits non-zero on any failure.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use rand::Rng;

use dermqa_core::corpus::{
    build_disease_dictionary, load_dataset, write_dataset, Case, DiseaseDictionary,
    ReferenceResponse, Split, WeightConfig,
};
use dermqa_core::eval::{
    brevity_penalty, delta_bleu, EvalConfig, WeightedReference, WeightedReferenceSet,
};
use dermqa_core::experiment::{
    ablate_postprocess, classify_cases, evaluate_predictions, llm_predictions,
    postprocess_predictions, run_ablate_batch_size, run_ablate_postprocess, run_ablate_retrieval,
    write_json, write_predictions, EvaluateSection, ExperimentConfig, PredictionRecord,
};
use dermqa_core::llm::{NoSleep, Orchestrator, PromptSet, ReplayTransport, RetryPolicy, Scenario};
use dermqa_core::postprocess::PostprocessConfig;
use dermqa_core::retrieval::{
    export_pca_coordinates, fit_pca, knn, label_map_from_pairs, write_coordinates_csv, Metric,
    RetrievalConfig, Retriever, VectorSet,
};
use dermqa_core::store::import_embeddings;
use dermqa_core::synthetic::{separable_task, write_experiment_fixture, SyntheticSpec};
use dermqa_core::trainer::{
    check_against, grad_check, load_model, read_pairs, save_model, train, write_loss_trace,
    JointEmbeddingModel, TrainConfig,
};

type Check = fn() -> Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn e2s<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

fn ac1_brevity_penalty() -> Result<String, String> {
    let rows = [
        (498, 506, "0.984", "0.984"),
        (485, 488, "0.994", "0.994"),
        (527, 536, "0.983", "0.983"),
        (523, 521, "1.000", "1.004"),
    ];
    for (h, r, bp, ratio) in rows {
        let direct = format!("{:.3}", brevity_penalty(h, r).map_err(e2s)?);
        let direct_ratio = format!("{:.3}", h as f64 / r as f64);
        ensure(direct == bp && direct_ratio == ratio, || {
            format!("({h},{r}) gave {direct}/{direct_ratio}")
        })?;

        // Same numbers through the corpus scorer: one case with those lengths.
        let hyp = vec![vec!["a".to_owned(); h]];
        let refs = vec![WeightedReferenceSet::new(vec![WeightedReference {
            tokens: vec!["a".to_owned(); r],
            weight: 1.0,
        }])];
        let report = delta_bleu(&hyp, &refs, &EvalConfig::default()).map_err(e2s)?;
        let cells: Vec<String> = report.table_row().split('\t').map(String::from).collect();
        ensure(
            cells[1] == bp
                && cells[2] == ratio
                && cells[3] == h.to_string()
                && cells[4] == r.to_string(),
            || format!("report row for ({h},{r}) was {}", report.table_row()),
        )?;
    }
    Ok("4 rows match to 3 decimals".into())
}

fn ac2_metric_oracle() -> Result<String, String> {
    let mut rng = common::rng(2024);
    let mut worst: f64 = 0.0;
    let mut informative = 0;
    for _ in 0..100 {
        let (hyps, refs) = common::random_corpus(&mut rng);
        let sets: Vec<WeightedReferenceSet> = refs
            .iter()
            .map(|r| {
                WeightedReferenceSet::new(vec![WeightedReference {
                    tokens: r.clone(),
                    weight: 1.0,
                }])
            })
            .collect();
        let got = delta_bleu(&hyps, &sets, &EvalConfig::default())
            .map_err(e2s)?
            .dbleu;
        let want = common::brute_force_bleu4(&hyps, &refs);
        worst = worst.max((got - want).abs());
        if want > 0.0 {
            informative += 1;
        }
    }
    ensure(worst <= 1e-9, || format!("max deviation {worst:e}"))?;
    Ok(format!(
        "100 corpora, max |diff| {worst:.1e}, {informative} with non-zero score"
    ))
}

fn random_gradcheck_instance(seed: u64) -> (JointEmbeddingModel, Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let mut rng = common::rng(seed);
    let (img_dim, txt_dim, out_dim, batch) = (
        rng.gen_range(3..=8),
        rng.gen_range(3..=8),
        rng.gen_range(2..=5),
        rng.gen_range(2..=5),
    );
    let mut model = JointEmbeddingModel::init(img_dim, txt_dim, out_dim, seed);
    let params: Vec<f64> = model
        .params_flat()
        .iter()
        .map(|_| rng.gen_range(-0.8..0.8))
        .collect();
    model.set_params_flat(&params).expect("same length");
    let images = common::random_matrix(&mut rng, batch, img_dim);
    let texts = common::random_matrix(&mut rng, batch, txt_dim);
    (model, images, texts)
}

fn ac3_gradients() -> Result<String, String> {
    let mut worst: f64 = 0.0;
    for seed in 0..20 {
        let (model, images, texts) = random_gradcheck_instance(seed);
        let report = grad_check(&model, &images, &texts, 1e-5).map_err(e2s)?;
        worst = worst.max(report.max_rel_error);
        ensure(report.max_rel_error < 1e-4, || {
            format!(
                "instance {seed}: rel error {:e} at {}",
                report.max_rel_error, report.worst_index
            )
        })?;

        let (_, grads) = model.batch_loss(&images, &texts).map_err(e2s)?;
        let mut corrupted = grads.flatten();
        let idx = seed as usize * 7 % corrupted.len();
        corrupted[idx] += 0.5 * corrupted[idx].abs().max(1e-2);
        let faulty = check_against(&model, &images, &texts, &corrupted, 1e-5).map_err(e2s)?;
        ensure(
            faulty.max_rel_error > 1e-4 && faulty.worst_index == idx,
            || format!("instance {seed}: corruption at {idx} not flagged"),
        )?;
    }
    Ok(format!(
        "20 instances, max rel error {worst:.1e}; 20/20 corruptions flagged"
    ))
}

fn synthetic_train_config(seed: u64) -> TrainConfig {
    TrainConfig {
        batch_size: 9,
        learning_rate: 1e-2,
        weight_decay: 1e-3,
        epochs: 50,
        seed,
        projection_dim: 8,
        ..TrainConfig::default()
    }
}

fn ac4_synthetic_training() -> Result<String, String> {
    let mut notes = Vec::new();
    for seed in [11, 22, 33] {
        let task = separable_task(&SyntheticSpec {
            seed,
            ..SyntheticSpec::default()
        });
        let out = train(
            &synthetic_train_config(seed),
            &task.images,
            &task.texts,
            &task.train_pairs,
        )
        .map_err(e2s)?;
        let (first, last) = (
            out.loss_trace[0],
            *out.loss_trace.last().expect("epochs > 0"),
        );
        ensure(last < first, || {
            format!("seed {seed}: loss {first} -> {last}")
        })?;
        let labels = label_map_from_pairs(&task.train_pairs);
        let retriever = Retriever::new(
            &out.model,
            &task.images,
            &task.texts,
            &labels,
            &RetrievalConfig::default(),
        )
        .map_err(e2s)?;
        let preds = classify_cases(&retriever, &task.cases, &task.images).map_err(e2s)?;
        let correct = preds
            .iter()
            .zip(&task.held_out)
            .filter(|(p, h)| p.text == h.label)
            .count();
        ensure(correct == task.held_out.len(), || {
            format!(
                "seed {seed}: {correct}/{} held-out correct",
                task.held_out.len()
            )
        })?;
        notes.push(format!(
            "seed {seed}: {correct}/{correct}, loss {first:.3}->{last:.3}"
        ));
    }
    Ok(notes.join("; "))
}

fn ac5_knn_pca() -> Result<String, String> {
    let mut rng = common::rng(55);
    for inst in 0..100 {
        let n = rng.gen_range(5..=60);
        let d = rng.gen_range(2..=10);
        let rows = common::random_matrix(&mut rng, n, d);
        let ids: Vec<String> = (0..n).map(|i| format!("id{i:03}")).collect();
        let set = VectorSet::new(ids.clone(), rows.clone()).map_err(e2s)?;
        let query = common::random_matrix(&mut rng, 1, d).remove(0);
        let k = rng.gen_range(1..=n);
        for (metric, cos) in [(Metric::Cosine, true), (Metric::Euclidean, false)] {
            let got: Vec<String> = knn(&query, &set, k, metric)
                .map_err(e2s)?
                .into_iter()
                .map(|x| x.id)
                .collect();
            let want: Vec<String> = common::full_scan(&query, &ids, &rows, k, cos)
                .into_iter()
                .map(|x| x.0)
                .collect();
            ensure(got == want, || {
                format!("instance {inst}: kNN differs from full scan ({metric:?})")
            })?;
        }

        let pn = rng.gen_range(3..=30);
        let pd = rng.gen_range(2..=8);
        let data = common::random_matrix(&mut rng, pn, pd);
        let full = pd.min(pn);
        let pca = fit_pca(&data, full).map_err(e2s)?;
        let ortho = common::max_orthonormality_error(&pca.components);
        ensure(ortho < 1e-8, || {
            format!("instance {inst}: orthonormality error {ortho:e}")
        })?;
        let total: f64 = pca.explained_variance.iter().sum();
        let trace = common::total_variance(&data);
        ensure((total - trace).abs() < 1e-8, || {
            format!("instance {inst}: variance {total} vs trace {trace}")
        })?;
        let projected: Vec<Vec<f64>> = data
            .iter()
            .map(|r| pca.transform(r))
            .collect::<Result<_, _>>()
            .map_err(e2s)?;
        for i in 0..pn {
            for j in 0..i {
                let a = common::euclidean(&data[i], &data[j]);
                let b = common::euclidean(&projected[i], &projected[j]);
                ensure((a - b).abs() < 1e-8, || {
                    format!("instance {inst}: distance {a} became {b}")
                })?;
            }
        }
    }
    Ok("100 kNN instances x 2 metrics, 100 PCA fits".into())
}

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures")
        .join(name)
}

fn ac6_llm_golden() -> Result<String, String> {
    let case = load_dataset(fixture("golden_case.jsonl"), Split::Test).map_err(e2s)?;
    let transport = ReplayTransport::open(fixture("golden_transcript.jsonl")).map_err(e2s)?;
    let orch = Orchestrator::new(&transport, PromptSet::builtin(), RetryPolicy::default())
        .with_sleeper(&NoSleep);

    let two = orch
        .run_pipeline(&case[0], Scenario::Img2Calls)
        .map_err(e2s)?;
    ensure(two.final_label == "hand eczema", || {
        format!("2-call label {:?}", two.final_label)
    })?;
    let preds = llm_predictions(&orch, &case, Scenario::Img2Calls, 2).map_err(e2s)?;
    let dict = DiseaseDictionary::load(fixture("golden_dictionary.json")).map_err(e2s)?;
    let resp =
        postprocess_predictions(&preds, &case, &dict, &PostprocessConfig::both()).map_err(e2s)?;
    ensure(resp[0].text == "It is hand eczema.", || {
        format!("postprocessed {:?}", resp[0].text)
    })?;

    let plus = orch
        .run_pipeline(&case[0], Scenario::ImgPlusText)
        .map_err(e2s)?;
    ensure(
        plus.final_label == "picture 1: lipoma. picture 2: palmar erythema",
        || format!("img+text label {:?}", plus.final_label),
    )?;
    Ok("\"hand eczema\" -> \"It is hand eczema.\"; \"picture 1: lipoma. picture 2: palmar erythema\"".into())
}

fn ac7_postprocess_ablation() -> Result<String, String> {
    let case = |id: &str, query: &str, label: &str| Case {
        encounter_id: id.into(),
        image_ids: vec![format!("{id}.jpg")],
        query_text: query.into(),
        language: "en".into(),
        responses: vec![ReferenceResponse::new(format!("It is {label}."), 0, 0)],
        gold_label: None,
    };
    let cases = vec![
        case(
            "C1",
            "Small red spots on the palm, could it be hand eczema?",
            "hand eczema",
        ),
        case(
            "C2",
            "Scaly plaques on both elbows for a year.",
            "psoriasis",
        ),
        case(
            "C3",
            "My GP mentioned tinea corporis, is that right?",
            "tinea corporis",
        ),
        case("C4", "Round itchy ring on the forearm.", "tinea corporis"),
        case("C5", "Soft lump on the thigh, slowly growing.", "lipoma"),
        case(
            "C6",
            "Blisters between the fingers after washing.",
            "hand eczema",
        ),
    ];
    let preds = vec![
        PredictionRecord::new("C1", "contact dermatitis"),
        PredictionRecord::new("C2", "psoriasis"),
        PredictionRecord::new("C3", "psoriasis"),
        PredictionRecord::new("C4", "tinea corporis"),
        PredictionRecord::new("C5", "lipoma"),
        PredictionRecord::new("C6", "hand eczema"),
    ];
    let dict = DiseaseDictionary::from_names([
        "hand eczema",
        "psoriasis",
        "tinea corporis",
        "lipoma",
        "contact dermatitis",
    ]);
    let row = ablate_postprocess(
        "fixture",
        &preds,
        &cases,
        &dict,
        &EvaluateSection::default(),
    )
    .map_err(e2s)?;
    let (wm, ss, both) = (
        row.word_matching.dbleu,
        row.sentence_structure.dbleu,
        row.both.dbleu,
    );
    ensure(both >= wm && both >= ss, || {
        format!("word {wm:.3}, sentence {ss:.3}, both {both:.3}")
    })?;
    Ok(format!(
        "word matching {wm:.3}, sentence structure {ss:.3}, both {both:.3}"
    ))
}

fn read_all(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        let mut entries: Vec<_> = std::fs::read_dir(&d)
            .unwrap()
            .map(|e| e.unwrap().path())
            .collect();
        entries.sort();
        for p in entries {
            if p.is_dir() {
                stack.push(p);
            } else {
                let bytes = std::fs::read(&p).unwrap();
                out.push((p, bytes));
            }
        }
    }
    out.sort();
    out
}

/// Every stage once, writing into `out`.
fn run_all_stages(work: &Path, out: &Path) -> Result<(), String> {
    std::fs::create_dir_all(out).map_err(e2s)?;
    let cfg_path = work.join("experiment.json");
    let mut cfg = ExperimentConfig::load(&cfg_path).map_err(e2s)?;
    cfg.output_dir = out.join("ablations");

    let cases = load_dataset(work.join("cases.jsonl"), Split::Validation).map_err(e2s)?;
    let mut labelled = cases.clone();
    for c in &mut labelled {
        c.gold_label = c.gold_label.clone().map(|l| format!("{l} (synthetic)"));
    }
    build_disease_dictionary(&labelled)
        .map_err(e2s)?
        .save(out.join("dictionary.json"))
        .map_err(e2s)?;
    write_dataset(out.join("cases.jsonl"), &cases).map_err(e2s)?;

    let images = import_embeddings(work.join("images.json")).map_err(e2s)?;
    let texts = import_embeddings(work.join("texts.json")).map_err(e2s)?;
    images.export(out.join("images.json")).map_err(e2s)?;

    let pairs = read_pairs(work.join("pairs.csv")).map_err(e2s)?;
    let trained = train(&cfg.train, &images, &texts, &pairs).map_err(e2s)?;
    save_model(out.join("model.bin"), &trained.model, Some(&cfg.train)).map_err(e2s)?;
    write_loss_trace(out.join("loss.csv"), &trained.loss_trace).map_err(e2s)?;
    let (model, _) = load_model(out.join("model.bin")).map_err(e2s)?;

    let rc = RetrievalConfig {
        use_augmented_variants: true,
        pca: true,
        ..cfg.retrieval.clone()
    };
    let retriever =
        Retriever::new(&model, &images, &texts, &label_map_from_pairs(&pairs), &rc).map_err(e2s)?;
    let preds = classify_cases(&retriever, &cases, &images).map_err(e2s)?;
    write_predictions(out.join("predictions.jsonl"), &preds).map_err(e2s)?;

    let dict = DiseaseDictionary::load(out.join("dictionary.json")).map_err(e2s)?;
    let responses =
        postprocess_predictions(&preds, &cases, &dict, &PostprocessConfig::both()).map_err(e2s)?;
    write_predictions(out.join("responses.jsonl"), &responses).map_err(e2s)?;
    let report = evaluate_predictions(
        &responses,
        &cases,
        &WeightConfig::default(),
        &EvalConfig::default(),
    )
    .map_err(e2s)?;
    write_json(out.join("report.json"), &report).map_err(e2s)?;

    let golden = load_dataset(fixture("golden_case.jsonl"), Split::Test).map_err(e2s)?;
    let transport = ReplayTransport::open(fixture("golden_transcript.jsonl")).map_err(e2s)?;
    let orch = Orchestrator::new(&transport, PromptSet::builtin(), RetryPolicy::default())
        .with_sleeper(&NoSleep);
    for sc in Scenario::ALL {
        let p = llm_predictions(&orch, &golden, sc, 2).map_err(e2s)?;
        write_predictions(out.join(format!("llm_{sc}.jsonl")), &p).map_err(e2s)?;
    }

    let coords = export_pca_coordinates(&texts, 2).map_err(e2s)?;
    write_coordinates_csv(out.join("coords.csv"), &coords).map_err(e2s)?;

    run_ablate_retrieval(&cfg).map_err(e2s)?;
    run_ablate_postprocess(&cfg).map_err(e2s)?;
    run_ablate_batch_size(&cfg).map_err(e2s)?;
    Ok(())
}

fn ac8_determinism() -> Result<String, String> {
    let work = tempfile::tempdir().map_err(e2s)?;
    let spec = SyntheticSpec {
        per_class: 12,
        held_out_per_class: 4,
        variants_per_image: 2,
        seed: 8,
        ..SyntheticSpec::default()
    };
    write_experiment_fixture(work.path(), &spec).map_err(e2s)?;
    let out = work.path().join("run");
    run_all_stages(work.path(), &out)?;
    let first = read_all(&out);
    run_all_stages(work.path(), &out)?;
    let second = read_all(&out);
    ensure(first.len() == second.len(), || "different file sets".into())?;
    for ((pa, a), (_, b)) in first.iter().zip(&second) {
        ensure(a == b, || format!("{} differs between runs", pa.display()))?;
    }
    Ok(format!(
        "{} output files byte-identical across reruns",
        first.len()
    ))
}

fn main() {
    let checks: [(&str, &str, Check, Option<Duration>); 8] = [
        (
            "AC1",
            "brevity penalty and ratio rows",
            ac1_brevity_penalty,
            Some(Duration::from_secs(1)),
        ),
        (
            "AC2",
            "metric equals brute-force BLEU-4",
            ac2_metric_oracle,
            Some(Duration::from_secs(10)),
        ),
        (
            "AC3",
            "gradient check and fault injection",
            ac3_gradients,
            Some(Duration::from_secs(30)),
        ),
        (
            "AC4",
            "synthetic end-to-end training",
            ac4_synthetic_training,
            Some(Duration::from_secs(120)),
        ),
        ("AC5", "kNN and PCA oracles", ac5_knn_pca, None),
        (
            "AC6",
            "LLM pipeline golden replay",
            ac6_llm_golden,
            Some(Duration::from_secs(1)),
        ),
        (
            "AC7",
            "postprocess ablation ordering",
            ac7_postprocess_ablation,
            None,
        ),
        ("AC8", "byte-identical reruns", ac8_determinism, None),
    ];
    let mut failed = 0;
    for (id, name, check, limit) in checks {
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        let elapsed = start.elapsed();
        let outcome = match (outcome, limit) {
            (Ok(_), Some(l)) if elapsed > l => Err(format!("took {elapsed:.2?}, limit {l:?}")),
            (o, _) => o,
        };
        match outcome {
            Ok(detail) => println!("PASS {id} {name}: {detail} [{elapsed:.2?}]"),
            Err(why) => {
                failed += 1;
                println!("FAIL {id} {name}: {why} [{elapsed:.2?}]");
            }
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
