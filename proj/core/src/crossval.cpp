#include "softcbm/crossval.hpp"

#include <atomic>
#include <mutex>
#include <thread>

#include <json.hpp>

#include "softcbm/checkpoint.hpp"
#include "softcbm/error.hpp"
#include "softcbm/inference.hpp"

namespace softcbm {

using nlohmann::ordered_json;

std::uint64_t fold_seed(std::uint64_t seed, int fold) {
  return derive_seed({seed, 0x666f6c64ULL, static_cast<std::uint64_t>(fold)});
}

std::uint64_t fold_init_seed(std::uint64_t seed, int fold) { return derive_seed({fold_seed(seed, fold), 0x696e6974ULL}); }

FoldReport train_fold(const CohortData& cohort, const TrainConfig& cfg, const BackboneSpec& spec, const Fold& fold,
                      int fold_number, const CrossValOptions& options) {
  const std::vector<int> labels = cohort.labels();
  FoldReport rep;
  rep.fold = fold_number;
  rep.selection = select_concepts(cohort.table, labels, fold.train, cfg.n_concepts, fold_number, cfg.leakage);

  TrainConfig fold_cfg = cfg;
  fold_cfg.seed = fold_seed(cfg.seed, fold_number);
  Model model(spec, static_cast<int>(rep.selection.size()), cfg.dropout, fold_init_seed(cfg.seed, fold_number));
  EpochCallback cb;
  if (options.on_epoch) cb = [&](const EpochRecord& r, const Model& m) { options.on_epoch(fold_number, r, m); };
  TrainResult tr = train_run(cohort, fold, rep.selection, fold_cfg, model, cb);
  rep.epochs = tr.epochs;
  rep.best_epoch = tr.best_epoch;
  rep.oversample_log = tr.oversample_log;
  if (tr.best_epoch < 0) return rep;

  const EvalResult val = evaluate_indices(model, cohort, fold.val, concept_targets(cohort, rep.selection), cfg);
  rep.predictions = val.predictions;
  rep.metrics = compute_metrics(rep.predictions);
  const EpochRecord& best = tr.epochs[static_cast<std::size_t>(tr.best_epoch)];
  rep.metrics.train_val_gap = best.train_acc - best.val_acc;
  std::vector<double> scores;
  std::vector<int> val_labels;
  for (const auto& p : rep.predictions) {
    scores.push_back(p.probability);
    val_labels.push_back(p.true_label);
  }
  rep.roc = roc_auc(scores, val_labels);
  rep.best_train_acc = best.train_acc;
  rep.best_val_acc = best.val_acc;
  rep.best_val_loss = best.val_loss.total;
  rep.final_val_acc = tr.epochs.back().val_acc;

  if (cfg.tta_passes > 0) {
    TtaOptions tta;
    tta.passes = cfg.tta_passes;
    tta.seed = derive_seed({fold_cfg.seed, 0x747461ULL});
    int correct = 0;
    for (std::size_t i : fold.val) {
      const auto r = predict_tta(model, cohort.volumes[i], tta, cohort.records[i].subject_id, labels[i]);
      correct += r.predicted_label == labels[i];
    }
    rep.tta_accuracy = static_cast<double>(correct) / static_cast<double>(fold.val.size());
  }
  if (!options.checkpoint_dir.empty())
    save_checkpoint(model, options.checkpoint_dir / ("fold" + std::to_string(fold_number) + ".ckpt"));
  return rep;
}

RunReport cross_validate(const CohortData& cohort, const TrainConfig& cfg, const BackboneSpec& spec,
                         const CrossValOptions& options) {
  cfg.validate();
  spec.validate();
  require(options.jobs >= 1, "jobs must be >= 1");
  require(!cohort.records.empty(), "cohort is empty");
  for (const auto& v : cohort.volumes) require(v.shape() == spec.input_shape, "cohort volumes do not match the model input shape");

  RunReport run;
  run.backbone = to_string(spec.kind);
  run.spec = spec;
  run.config = cfg;
  const std::vector<int> labels = cohort.labels();
  run.plan = stratified_kfold(labels, cfg.folds, cfg.seed);
  run.folds.resize(run.plan.folds.size());

  std::atomic<std::size_t> next{0};
  std::vector<std::exception_ptr> errors(run.plan.folds.size());
  auto worker = [&] {
    for (std::size_t f; (f = next++) < run.plan.folds.size();) {
      try {
        run.folds[f] = train_fold(cohort, cfg, spec, run.plan.folds[f], static_cast<int>(f) + 1, options);
      } catch (...) {
        errors[f] = std::current_exception();
      }
    }
  };
  const std::size_t workers = std::min<std::size_t>(static_cast<std::size_t>(options.jobs), run.plan.folds.size());
  if (workers <= 1) {
    worker();
  } else {
    std::vector<std::thread> threads;
    for (std::size_t w = 0; w < workers; ++w) threads.emplace_back(worker);
    for (auto& t : threads) t.join();
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
  run.plan.oversample_log.clear();
  for (const auto& f : run.folds) run.plan.oversample_log.push_back(f.oversample_log);
  return run;
}

// ---- JSON ----

namespace {

ordered_json loss_json(const LossBreakdown& l) { return {{"task", l.task}, {"concepts", l.concepts}, {"total", l.total}}; }

LossBreakdown loss_from(const nlohmann::json& j) {
  return {j.at("task").get<double>(), j.at("concepts").get<double>(), j.at("total").get<double>()};
}

}  // namespace

std::string RunReport::to_json() const {
  ordered_json j;
  j["backbone"] = backbone;
  j["width_scale"] = spec.width_scale;
  j["input_shape"] = {spec.input_shape.d, spec.input_shape.h, spec.input_shape.w};
  KeyValueDocument cfg_doc;
  config.write(cfg_doc);
  ordered_json cj;
  for (const auto& [k, v] : cfg_doc.entries()) cj[k] = v;
  j["config"] = cj;
  j["plan"] = ordered_json::parse(plan.to_json());
  auto& fa = j["folds"] = ordered_json::array();
  for (const auto& f : folds) {
    ordered_json fj;
    fj["fold"] = f.fold;
    fj["selection"] = ordered_json::parse(f.selection.to_json());
    fj["best_epoch"] = f.best_epoch;
    auto& ea = fj["epochs"] = ordered_json::array();
    for (const auto& e : f.epochs)
      ea.push_back({{"epoch", e.epoch},
                    {"train_loss", loss_json(e.train_loss)},
                    {"val_loss", loss_json(e.val_loss)},
                    {"train_acc", e.train_acc},
                    {"val_acc", e.val_acc},
                    {"lr", e.lr},
                    {"encoder_frozen", e.encoder_frozen},
                    {"val_auc", e.val_auc},
                    {"val_concept_informed_acc", e.val_concept_informed_acc}});
    auto& pa = fj["predictions"] = ordered_json::array();
    for (const auto& p : f.predictions)
      pa.push_back({{"subject_id", p.subject_id},
                    {"true_label", p.true_label},
                    {"probability", p.probability},
                    {"predicted_label", p.predicted_label},
                    {"predicted_concepts", p.predicted_concepts}});
    const Confusion& c = f.metrics.confusion;
    fj["metrics"] = {{"tp", c.tp}, {"fn", c.fn}, {"fp", c.fp}, {"tn", c.tn},
                     {"accuracy", f.metrics.accuracy}, {"sensitivity", f.metrics.sensitivity},
                     {"specificity", f.metrics.specificity}, {"auc", f.metrics.auc},
                     {"train_val_gap", f.metrics.train_val_gap}};
    auto& ra = fj["roc"] = ordered_json::array();
    for (const auto& pt : f.roc.curve)
      ra.push_back({std::isinf(pt.threshold) ? ordered_json("inf") : ordered_json(pt.threshold), pt.fpr, pt.tpr});
    fj["roc_auc"] = f.roc.auc;
    fj["best_train_acc"] = f.best_train_acc;
    fj["best_val_acc"] = f.best_val_acc;
    fj["best_val_loss"] = f.best_val_loss;
    fj["final_val_acc"] = f.final_val_acc;
    fj["tta_accuracy"] = f.tta_accuracy;
    fa.push_back(std::move(fj));
  }
  return j.dump(2) + "\n";
}

RunReport RunReport::from_json(std::string_view text) {
  try {
    const auto j = nlohmann::json::parse(text);
    RunReport r;
    r.backbone = j.at("backbone").get<std::string>();
    r.spec.kind = parse_backbone_kind(r.backbone);
    r.spec.width_scale = j.at("width_scale").get<double>();
    const auto shape = j.at("input_shape").get<std::vector<int>>();
    if (shape.size() != 3) throw FormatError("input_shape needs three entries");
    r.spec.input_shape = {shape[0], shape[1], shape[2]};
    KeyValueDocument cfg_doc;
    for (const auto& [k, v] : j.at("config").items()) cfg_doc.set(k, v.get<std::string>());
    r.config.read(cfg_doc);
    r.plan = FoldPlan::from_json(j.at("plan").dump());
    for (const auto& fj : j.at("folds")) {
      FoldReport f;
      f.fold = fj.at("fold").get<int>();
      f.selection = ConceptSelection::from_json(fj.at("selection").dump());
      f.best_epoch = fj.at("best_epoch").get<int>();
      for (const auto& e : fj.at("epochs")) {
        EpochRecord rec;
        rec.epoch = e.at("epoch").get<int>();
        rec.train_loss = loss_from(e.at("train_loss"));
        rec.val_loss = loss_from(e.at("val_loss"));
        rec.train_acc = e.at("train_acc").get<double>();
        rec.val_acc = e.at("val_acc").get<double>();
        rec.lr = e.at("lr").get<double>();
        rec.encoder_frozen = e.at("encoder_frozen").get<bool>();
        rec.val_auc = e.at("val_auc").get<double>();
        rec.val_concept_informed_acc = e.at("val_concept_informed_acc").get<double>();
        f.epochs.push_back(rec);
      }
      for (const auto& p : fj.at("predictions")) {
        PredictionRecord pr;
        pr.subject_id = p.at("subject_id").get<std::string>();
        pr.true_label = p.at("true_label").get<int>();
        pr.probability = p.at("probability").get<double>();
        pr.predicted_label = p.at("predicted_label").get<int>();
        pr.predicted_concepts = p.at("predicted_concepts").get<std::vector<double>>();
        f.predictions.push_back(std::move(pr));
      }
      const auto& m = fj.at("metrics");
      f.metrics.confusion = {m.at("tp").get<long long>(), m.at("fn").get<long long>(), m.at("fp").get<long long>(),
                             m.at("tn").get<long long>()};
      f.metrics.accuracy = m.at("accuracy").get<double>();
      f.metrics.sensitivity = m.at("sensitivity").get<double>();
      f.metrics.specificity = m.at("specificity").get<double>();
      f.metrics.auc = m.at("auc").get<double>();
      f.metrics.train_val_gap = m.at("train_val_gap").get<double>();
      for (const auto& pt : fj.at("roc")) {
        const double thr = pt.at(0).is_string() ? std::numeric_limits<double>::infinity() : pt.at(0).get<double>();
        f.roc.curve.push_back({thr, pt.at(1).get<double>(), pt.at(2).get<double>()});
      }
      f.roc.auc = fj.at("roc_auc").get<double>();
      f.best_train_acc = fj.at("best_train_acc").get<double>();
      f.best_val_acc = fj.at("best_val_acc").get<double>();
      f.best_val_loss = fj.at("best_val_loss").get<double>();
      f.final_val_acc = fj.at("final_val_acc").get<double>();
      f.tta_accuracy = fj.at("tta_accuracy").get<double>();
      r.folds.push_back(std::move(f));
    }
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("bad run report: ") + e.what());
  }
}

}  // namespace softcbm
