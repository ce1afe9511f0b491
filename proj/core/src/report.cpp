#include "softcbm/report.hpp"

#include <algorithm>
#include <cmath>

#include "softcbm/error.hpp"
#include "softcbm/kv_document.hpp"

namespace softcbm {

namespace {

std::string f6(double v) { return format_fixed(v, 6); }

std::string loss_pm(double mean, double sd) { return format_fixed(mean, 4) + " \xC2\xB1 " + format_fixed(sd, 4); }

}  // namespace

std::vector<AggregateRow> aggregate_rows(const RunReport& run) {
  std::vector<double> acc, loss, auc, tta;
  for (const auto& f : run.folds) {
    if (f.best_epoch < 0) continue;
    acc.push_back(f.best_val_acc);
    loss.push_back(f.best_val_loss);
    auc.push_back(f.roc.auc);
    if (f.tta_accuracy >= 0.0) tta.push_back(f.tta_accuracy);
  }
  std::vector<AggregateRow> rows;
  AggregateRow r;
  r.backbone = run.backbone;
  r.strategy = "single-pass";
  r.mean_val_acc = mean_of(acc);
  r.std_val_acc = sample_std(acc);
  r.best_fold_acc = acc.empty() ? 0.0 : *std::max_element(acc.begin(), acc.end());
  r.mean_val_loss = mean_of(loss);
  r.std_val_loss = sample_std(loss);
  r.mean_auc = mean_of(auc);
  r.std_auc = sample_std(auc);
  rows.push_back(r);
  if (!tta.empty() && tta.size() == acc.size()) {
    AggregateRow t = r;
    t.strategy = "tta-" + std::to_string(run.config.tta_passes);
    t.mean_val_acc = mean_of(tta);
    t.std_val_acc = sample_std(tta);
    t.best_fold_acc = *std::max_element(tta.begin(), tta.end());
    rows.push_back(t);
  }
  return rows;
}

int gap_passes(const RunReport& run, double threshold) {
  int n = 0;
  for (const auto& f : run.folds)
    if (f.best_epoch >= 0 && gap_check(f.best_train_acc, f.best_val_acc, threshold)) ++n;
  return n;
}

std::string aggregate_csv(const RunReport& run) {
  std::string out =
      "backbone,strategy,mean_val_acc,best_fold_acc,mean_val_loss,val_acc_mean,val_acc_std,val_loss_mean,"
      "val_loss_std,val_auc_mean,val_auc_std\n";
  for (const auto& r : aggregate_rows(run)) {
    char best[32];
    std::snprintf(best, sizeof best, "%.2f%%", r.best_fold_acc * 100.0);
    out += r.backbone + "," + r.strategy + "," + format_percent_pm(r.mean_val_acc, r.std_val_acc) + "," + best + "," +
           loss_pm(r.mean_val_loss, r.std_val_loss) + "," + f6(r.mean_val_acc) + "," + f6(r.std_val_acc) + "," +
           f6(r.mean_val_loss) + "," + f6(r.std_val_loss) + "," + f6(r.mean_auc) + "," + f6(r.std_auc) + "\n";
  }
  return out;
}

std::string roc_csv(const FoldReport& fold) {
  std::string out = "threshold,fpr,tpr\n";
  for (const auto& p : fold.roc.curve)
    out += (std::isinf(p.threshold) ? std::string("inf") : format_fixed(p.threshold, 9)) + "," + f6(p.fpr) + "," +
           f6(p.tpr) + "\n";
  return out;
}

std::string confusion_csv(const FoldReport& fold) {
  const Confusion& c = fold.metrics.confusion;
  std::string out = "actual,predicted_patient,predicted_control\n";
  out += "patient," + std::to_string(c.tp) + "," + std::to_string(c.fn) + "\n";
  out += "control," + std::to_string(c.fp) + "," + std::to_string(c.tn) + "\n";
  return out;
}

std::string epochs_csv(const FoldReport& fold) {
  std::string out =
      "epoch,train_task,train_concept,train_total,val_task,val_concept,val_total,train_acc,val_acc,val_auc,"
      "val_concept_informed_acc,lr,encoder_frozen\n";
  for (const auto& e : fold.epochs) {
    out += std::to_string(e.epoch) + "," + f6(e.train_loss.task) + "," + f6(e.train_loss.concepts) + "," +
           f6(e.train_loss.total) + "," + f6(e.val_loss.task) + "," + f6(e.val_loss.concepts) + "," +
           f6(e.val_loss.total) + "," + f6(e.train_acc) + "," + f6(e.val_acc) + "," + f6(e.val_auc) + "," +
           f6(e.val_concept_informed_acc) + "," + format_exact(e.lr) + "," + (e.encoder_frozen ? "1" : "0") + "\n";
  }
  return out;
}

std::string summary_text(const RunReport& run, double gap_threshold) {
  KeyValueDocument doc;
  doc.set("backbone", run.backbone);
  doc.set("width_scale", format_exact(run.spec.width_scale));
  doc.set("input_shape", run.spec.input_shape.to_string());
  doc.set("seed", std::to_string(run.config.seed));
  doc.set("folds", static_cast<int>(run.folds.size()));
  doc.set("epochs", run.config.epochs);
  doc.set("leakage_policy", to_string(run.config.leakage));
  doc.set("model_selection", "best epoch by validation total loss");
  const auto rows = aggregate_rows(run);
  for (const auto& r : rows) {
    const std::string p = r.strategy + ".";
    doc.set(p + "mean_val_acc", format_percent_pm(r.mean_val_acc, r.std_val_acc));
    doc.set(p + "best_fold_acc", f6(r.best_fold_acc));
  }
  doc.set("mean_val_loss", loss_pm(rows[0].mean_val_loss, rows[0].std_val_loss));
  doc.set("mean_val_auc", format_fixed(rows[0].mean_auc, 4) + " \xC2\xB1 " + format_fixed(rows[0].std_auc, 4));
  std::vector<double> final_acc;
  for (const auto& f : run.folds) final_acc.push_back(f.final_val_acc);
  doc.set("final_epoch.mean_val_acc", format_percent_pm(mean_of(final_acc), sample_std(final_acc)));
  doc.set("gap_threshold", f6(gap_threshold));
  doc.set("gap_passes", std::to_string(gap_passes(run, gap_threshold)) + "/" + std::to_string(run.folds.size()));
  for (const auto& f : run.folds) {
    const std::string p = "fold" + std::to_string(f.fold) + ".";
    doc.set(p + "best_epoch", f.best_epoch);
    doc.set(p + "val_acc", f6(f.best_val_acc));
    doc.set(p + "train_acc", f6(f.best_train_acc));
    doc.set(p + "val_loss", f6(f.best_val_loss));
    doc.set(p + "auc", f6(f.roc.auc));
    doc.set(p + "sensitivity", f6(f.metrics.sensitivity));
    doc.set(p + "specificity", f6(f.metrics.specificity));
    const Confusion& c = f.metrics.confusion;
    doc.set(p + "confusion", "tp=" + std::to_string(c.tp) + " fn=" + std::to_string(c.fn) +
                                 " fp=" + std::to_string(c.fp) + " tn=" + std::to_string(c.tn));
    doc.set(p + "gap", f6(f.best_train_acc - f.best_val_acc));
    doc.set(p + "gap_ok", gap_check(f.best_train_acc, f.best_val_acc, gap_threshold));
    if (f.tta_accuracy >= 0.0) doc.set(p + "tta_acc", f6(f.tta_accuracy));
    std::string kept;
    for (const auto& n : f.selection.kept_names) kept += (kept.empty() ? "" : " ") + n;
    doc.set(p + "concepts", kept);
  }
  return doc.to_string();
}

std::vector<std::filesystem::path> emit_report(const RunReport& run, const std::filesystem::path& out_dir,
                                               double gap_threshold) {
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) throw IoError("cannot create " + out_dir.string() + ": " + ec.message());
  std::vector<std::filesystem::path> written;
  auto put = [&](const std::string& name, const std::string& text) {
    write_text_file(out_dir / name, text);
    written.push_back(out_dir / name);
  };
  put("aggregate.csv", aggregate_csv(run));
  for (const auto& f : run.folds) {
    const std::string p = "fold" + std::to_string(f.fold) + "_";
    put(p + "roc.csv", roc_csv(f));
    put(p + "confusion.csv", confusion_csv(f));
    put(p + "epochs.csv", epochs_csv(f));
  }
  put("summary.txt", summary_text(run, gap_threshold));
  return written;
}

}  // namespace softcbm
