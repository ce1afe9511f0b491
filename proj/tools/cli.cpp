#include "cli.hpp"

#include <chrono>
#include <ctime>
#include <iomanip>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "softcbm/checkpoint.hpp"
#include "softcbm/cohort.hpp"
#include "softcbm/crossval.hpp"
#include "softcbm/error.hpp"
#include "softcbm/experiment.hpp"
#include "softcbm/inference.hpp"
#include "softcbm/report.hpp"

namespace softcbm::cli {

namespace fs = std::filesystem;

namespace {

std::string utc_now() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&t, &tm);
  std::ostringstream os;
  os << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return os.str();
}

void make_dirs(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
}

std::pair<std::string, std::string> split_assignment(const std::string& text) {
  const auto eq = text.find('=');
  if (eq == std::string::npos || eq == 0) throw ValidationError("expected name=value, got '" + text + "'");
  return {trim(text.substr(0, eq)), trim(text.substr(eq + 1))};
}

// Options shared by commands that read an experiment config.
struct ConfigFlags {
  std::string config_path;
  std::vector<std::string> overrides;
  std::optional<std::uint64_t> seed;
};

void add_config_flags(CLI::App* cmd, ConfigFlags& flags, bool config_required) {
  auto* opt = cmd->add_option("--config", flags.config_path, "Key/value experiment config");
  if (config_required) opt->required()->check(CLI::ExistingFile);
  cmd->add_option("--override", flags.overrides, "Config override key=value (repeatable)");
  cmd->add_option("--seed", flags.seed, "Master seed; beats SOFTCBM_SEED and the config file");
}

// Built-in defaults, then the config file, then --override, then dedicated flags.
ExperimentConfig resolve_config(const ConfigFlags& flags) {
  KeyValueDocument doc;
  if (!flags.config_path.empty()) doc = KeyValueDocument::load(flags.config_path);
  std::optional<std::uint64_t> file_seed;
  if (auto s = doc.get("seed")) file_seed = parse_seed(*s);
  for (const auto& o : flags.overrides) {
    auto [k, v] = split_assignment(o);
    doc.set(k, v);
  }
  ExperimentConfig cfg = ExperimentConfig::from_document(doc);
  std::optional<std::uint64_t> flag_seed = flags.seed;
  for (const auto& o : flags.overrides)
    if (split_assignment(o).first == "seed") flag_seed = parse_seed(split_assignment(o).second);
  cfg.seed = resolve_seed(flag_seed, file_seed, cfg.seed);
  cfg.train.seed = cfg.seed;
  cfg.validate();
  return cfg;
}

class ManifestWriter {
 public:
  ManifestWriter(std::string command, const std::vector<std::string>& args) {
    m_.command = std::move(command);
    m_.arguments = args;
    m_.started_at = utc_now();
  }
  void config(const ExperimentConfig& cfg) {
    m_.config = cfg.to_document();
    m_.seed = cfg.seed;
  }
  void artifact(const fs::path& p) { files_.push_back(p); }
  void artifacts(const std::vector<fs::path>& ps) { files_.insert(files_.end(), ps.begin(), ps.end()); }

  fs::path write(const fs::path& dir) {
    m_.finished_at = utc_now();
    const fs::path path = dir / (m_.command + ".manifest.json");
    for (const auto& f : files_) {
      std::error_code ec;
      const fs::path rel = fs::relative(f, dir, ec);
      m_.artifacts.push_back(!ec && !rel.empty() && *rel.begin() != ".." ? rel.generic_string() : f.generic_string());
    }
    write_text_file(path, m_.to_json());
    return path;
  }

 private:
  RunManifest m_;
  std::vector<fs::path> files_;
};

// Everything a finished run directory provides to evaluate/tta/intervene.
struct RunDir {
  fs::path dir;
  ExperimentConfig cfg;
  fs::path cohort_dir;
  FoldPlan plan;
};

fs::path cohort_dir_for(const ExperimentConfig& cfg, const fs::path& out_dir) {
  return cfg.cohort_dir.empty() ? out_dir / "cohort" : fs::path(cfg.cohort_dir);
}

RunDir open_run(const fs::path& dir, const std::string& cohort_override) {
  RunDir r;
  r.dir = dir;
  if (!fs::exists(dir / "config.cfg")) throw IoError("no config.cfg in run directory " + dir.string());
  r.cfg = ExperimentConfig::from_document(KeyValueDocument::load(dir / "config.cfg"));
  r.cohort_dir = cohort_override.empty() ? cohort_dir_for(r.cfg, dir) : fs::path(cohort_override);
  r.plan = FoldPlan::from_json(read_text_file(dir / "folds.json"));
  return r;
}

std::string selection_file(int fold) { return "fold" + std::to_string(fold) + "_selection.json"; }
std::string checkpoint_file(int fold) { return "checkpoints/fold" + std::to_string(fold) + ".ckpt"; }

const Fold& fold_of(const FoldPlan& plan, int fold) {
  require(fold >= 1 && fold <= static_cast<int>(plan.folds.size()),
          "fold must lie in [1, " + std::to_string(plan.folds.size()) + "]");
  return plan.folds[static_cast<std::size_t>(fold - 1)];
}

Model load_fold_model(const RunDir& run, int fold, ConceptSelection& selection) {
  selection = ConceptSelection::from_json(read_text_file(run.dir / selection_file(fold)));
  Model model(run.cfg.backbone, static_cast<int>(selection.size()), run.cfg.train.dropout,
              fold_init_seed(run.cfg.seed, fold));
  load_checkpoint(model, run.dir / checkpoint_file(fold), true);
  return model;
}

CohortData load_or_generate(const ExperimentConfig& cfg, const fs::path& cohort_dir, std::ostream& out,
                            ManifestWriter* manifest) {
  if (!fs::exists(cohort_dir / kCohortManifestName)) {
    out << "generating cohort in " << cohort_dir.string() << "\n";
    CohortOptions opts = cfg.cohort;
    opts.jobs = cfg.jobs;
    const auto records = generate_cohort(cfg.patients, cfg.controls, cfg.seed, cohort_dir, opts);
    if (manifest) {
      for (const auto& r : records) {
        manifest->artifact(volume_header_path(cohort_dir / r.volume_path));
        manifest->artifact(volume_payload_path(cohort_dir / r.volume_path));
      }
      manifest->artifact(cohort_dir / kCohortManifestName);
      manifest->artifact(cohort_dir / kConceptTableName);
    }
  }
  return load_cohort(cohort_dir, cfg.backbone.input_shape);
}

std::vector<std::string> subject_ids(const std::vector<SubjectRecord>& records) {
  std::vector<std::string> ids;
  for (const auto& r : records) ids.push_back(r.subject_id);
  return ids;
}

// Writes fold plan and per-fold concept selections; oversampling logs match what training will do.
std::vector<fs::path> write_split(const ExperimentConfig& cfg, const std::vector<SubjectRecord>& records,
                                  const ConceptTable& table, const fs::path& dir) {
  std::vector<int> labels;
  for (const auto& r : records) labels.push_back(r.label);
  FoldPlan plan = stratified_kfold(labels, cfg.train.folds, cfg.seed);
  std::vector<fs::path> written;
  for (std::size_t f = 0; f < plan.folds.size(); ++f) {
    const int k = static_cast<int>(f) + 1;
    oversample_controls(plan.folds[f].train, labels, cfg.train.oversample_target,
                        oversample_seed(fold_seed(cfg.seed, k)), &plan.oversample_log[f]);
    const auto sel = select_concepts(table, labels, plan.folds[f].train, cfg.train.n_concepts, k, cfg.train.leakage);
    write_text_file(dir / selection_file(k), sel.to_json());
    written.push_back(dir / selection_file(k));
  }
  const auto ids = subject_ids(records);
  write_text_file(dir / "folds.json", plan.to_json(ids));
  written.push_back(dir / "folds.json");
  return written;
}

std::string fixed(double v, int d = 4) { return format_fixed(v, d); }

std::function<void(int, const EpochRecord&, const Model&)> progress_printer(std::ostream& out, bool quiet) {
  if (quiet) return {};
  return [&out](int fold, const EpochRecord& r, const Model&) {
    out << "fold " << fold << " epoch " << r.epoch << " train_loss " << fixed(r.train_loss.total) << " train_acc "
        << fixed(r.train_acc, 3) << " val_loss " << fixed(r.val_loss.total) << " val_acc " << fixed(r.val_acc, 3)
        << " val_auc " << fixed(r.val_auc, 3) << " lr " << format_exact(r.lr) << (r.encoder_frozen ? " frozen" : "")
        << "\n"
        << std::flush;
  };
}

std::string predictions_csv(const std::vector<PredictionRecord>& preds) {
  std::string s = "subject_id,true_label,probability,predicted_label,per_pass\n";
  for (const auto& p : preds) {
    std::string passes;
    for (double q : p.per_pass_probabilities) passes += (passes.empty() ? "" : " ") + format_fixed(q, 9);
    s += p.subject_id + "," + std::to_string(p.true_label) + "," + format_fixed(p.probability, 9) + "," +
         std::to_string(p.predicted_label) + "," + passes + "\n";
  }
  return s;
}

void print_metrics(std::ostream& out, const std::string& label, const std::vector<PredictionRecord>& preds) {
  const MetricsSummary m = compute_metrics(preds);
  const Confusion& c = m.confusion;
  out << label << ": accuracy " << fixed(m.accuracy) << " sensitivity " << fixed(m.sensitivity) << " specificity "
      << fixed(m.specificity) << " auc " << fixed(m.auc) << " (tp " << c.tp << " fn " << c.fn << " fp " << c.fp
      << " tn " << c.tn << ")\n";
}

// ---- commands ----

int cmd_generate(const ConfigFlags& flags, std::optional<int> patients, std::optional<int> controls,
                 std::optional<int> jobs, const std::string& out_dir, const std::vector<std::string>& args,
                 std::ostream& out) {
  ExperimentConfig cfg = resolve_config(flags);
  if (patients) cfg.patients = *patients;
  if (controls) cfg.controls = *controls;
  if (jobs) cfg.jobs = *jobs;
  cfg.cohort_dir = out_dir;
  cfg.validate();
  ManifestWriter manifest("generate", args);
  manifest.config(cfg);
  make_dirs(out_dir);
  CohortOptions opts = cfg.cohort;
  opts.jobs = cfg.jobs;
  const auto records = generate_cohort(cfg.patients, cfg.controls, cfg.seed, out_dir, opts);
  for (const auto& r : records) {
    manifest.artifact(volume_header_path(fs::path(out_dir) / r.volume_path));
    manifest.artifact(volume_payload_path(fs::path(out_dir) / r.volume_path));
  }
  manifest.artifact(fs::path(out_dir) / kCohortManifestName);
  manifest.artifact(fs::path(out_dir) / kConceptTableName);
  manifest.write(out_dir);
  out << "wrote " << records.size() << " subjects (" << cfg.patients << " patients, " << cfg.controls
      << " controls) to " << out_dir << "\n";
  return kExitOk;
}

int cmd_split(const ConfigFlags& flags, const std::string& cohort, std::optional<int> folds,
              const std::string& out_dir, const std::vector<std::string>& args, std::ostream& out) {
  ExperimentConfig cfg = resolve_config(flags);
  if (!cohort.empty()) cfg.cohort_dir = cohort;
  if (folds) cfg.train.folds = *folds;
  require(!cfg.cohort_dir.empty(), "split needs --cohort or cohort.dir");
  cfg.validate();
  ManifestWriter manifest("split", args);
  manifest.config(cfg);
  make_dirs(out_dir);
  const auto records = read_cohort_manifest(cfg.cohort_dir);
  const auto table = concept_table_from(records);
  manifest.artifacts(write_split(cfg, records, table, out_dir));
  manifest.write(out_dir);
  out << "wrote " << cfg.train.folds << "-fold split of " << records.size() << " subjects to " << out_dir << "\n";
  return kExitOk;
}

int cmd_train(const ConfigFlags& flags, const std::string& cohort, int fold, const std::string& out_dir,
              bool quiet, const std::vector<std::string>& args, std::ostream& out) {
  ExperimentConfig cfg = resolve_config(flags);
  if (!cohort.empty()) cfg.cohort_dir = cohort;
  cfg.validate();
  ManifestWriter manifest("train", args);
  manifest.config(cfg);
  make_dirs(out_dir);
  const CohortData data = load_or_generate(cfg, cohort_dir_for(cfg, out_dir), out, &manifest);

  write_text_file(fs::path(out_dir) / "config.cfg", cfg.to_document().to_string());
  manifest.artifact(fs::path(out_dir) / "config.cfg");
  manifest.artifacts(write_split(cfg, data.records, data.table, out_dir));

  RunReport run;
  run.backbone = to_string(cfg.backbone.kind);
  run.spec = cfg.backbone;
  run.config = cfg.train;
  run.plan = stratified_kfold(data.labels(), cfg.train.folds, cfg.seed);
  CrossValOptions opts;
  opts.checkpoint_dir = fs::path(out_dir) / "checkpoints";
  make_dirs(opts.checkpoint_dir);
  opts.on_epoch = progress_printer(out, quiet);
  run.folds.push_back(train_fold(data, cfg.train, cfg.backbone, fold_of(run.plan, fold), fold, opts));
  run.plan.oversample_log.assign(run.plan.folds.size(), {});
  run.plan.oversample_log[static_cast<std::size_t>(fold - 1)] = run.folds.back().oversample_log;

  const fs::path ckpt = fs::path(out_dir) / checkpoint_file(fold);
  manifest.artifact(ckpt);
  manifest.artifact(checkpoint_manifest_path(ckpt));
  write_text_file(fs::path(out_dir) / "run_report.json", run.to_json());
  manifest.artifact(fs::path(out_dir) / "run_report.json");
  manifest.artifacts(emit_report(run, out_dir, cfg.gap_threshold));
  manifest.write(out_dir);
  const FoldReport& f = run.folds.back();
  out << "fold " << fold << " best epoch " << f.best_epoch << " val_acc " << fixed(f.best_val_acc) << " auc "
      << fixed(f.roc.auc) << "\n";
  return kExitOk;
}

int cmd_crossval(const ConfigFlags& flags, const std::string& cohort, std::optional<int> jobs,
                 const std::string& out_dir, bool quiet, const std::vector<std::string>& args, std::ostream& out) {
  ExperimentConfig cfg = resolve_config(flags);
  if (!cohort.empty()) cfg.cohort_dir = cohort;
  if (jobs) cfg.jobs = *jobs;
  cfg.validate();
  ManifestWriter manifest("crossval", args);
  manifest.config(cfg);
  make_dirs(out_dir);
  write_text_file(fs::path(out_dir) / "config.cfg", cfg.to_document().to_string());
  manifest.artifact(fs::path(out_dir) / "config.cfg");

  const CohortData data = load_or_generate(cfg, cohort_dir_for(cfg, out_dir), out, &manifest);
  manifest.artifacts(write_split(cfg, data.records, data.table, out_dir));

  CrossValOptions opts;
  opts.jobs = cfg.jobs;
  opts.checkpoint_dir = fs::path(out_dir) / "checkpoints";
  make_dirs(opts.checkpoint_dir);
  opts.on_epoch = cfg.jobs == 1 ? progress_printer(out, quiet) : nullptr;
  const RunReport run = cross_validate(data, cfg.train, cfg.backbone, opts);
  for (const auto& f : run.folds) {
    const fs::path ckpt = fs::path(out_dir) / checkpoint_file(f.fold);
    manifest.artifact(ckpt);
    manifest.artifact(checkpoint_manifest_path(ckpt));
  }
  write_text_file(fs::path(out_dir) / "run_report.json", run.to_json());
  manifest.artifact(fs::path(out_dir) / "run_report.json");
  manifest.artifacts(emit_report(run, out_dir, cfg.gap_threshold));
  manifest.write(out_dir);

  const auto rows = aggregate_rows(run);
  for (const auto& r : rows)
    out << r.strategy << ": mean val acc " << format_percent_pm(r.mean_val_acc, r.std_val_acc) << ", mean auc "
        << fixed(r.mean_auc) << "\n";
  out << "gap check passes on " << gap_passes(run, cfg.gap_threshold) << "/" << run.folds.size() << " folds\n";
  out << "summary: " << (fs::path(out_dir) / "summary.txt").string() << "\n";
  return kExitOk;
}

int cmd_evaluate(const std::string& run_dir, int fold, const std::string& cohort, const std::string& out_file,
                 const std::vector<std::string>& args, std::ostream& out) {
  const RunDir run = open_run(run_dir, cohort);
  ManifestWriter manifest("evaluate", args);
  manifest.config(run.cfg);
  ConceptSelection sel;
  const Model model = load_fold_model(run, fold, sel);
  const CohortData data = load_cohort(run.cohort_dir, run.cfg.backbone.input_shape);
  std::vector<const Volume*> vols;
  std::vector<std::string> ids;
  std::vector<int> labels;
  for (std::size_t i : fold_of(run.plan, fold).val) {
    vols.push_back(&data.volumes[i]);
    ids.push_back(data.records[i].subject_id);
    labels.push_back(data.records[i].label);
  }
  const auto preds = predict_many(model, vols, ids, labels, run.cfg.train.batch_size);
  print_metrics(out, "fold " + std::to_string(fold), preds);
  const fs::path path = out_file.empty() ? run.dir / ("evaluate_fold" + std::to_string(fold) + ".csv") : fs::path(out_file);
  write_text_file(path, predictions_csv(preds));
  manifest.artifact(path);
  manifest.write(run.dir);
  return kExitOk;
}

int cmd_tta(const std::string& run_dir, int fold, const std::string& cohort, int passes,
            std::optional<std::uint64_t> seed, int jobs, const std::string& out_file,
            const std::vector<std::string>& args, std::ostream& out) {
  const RunDir run = open_run(run_dir, cohort);
  ManifestWriter manifest("tta", args);
  manifest.config(run.cfg);
  ConceptSelection sel;
  const Model model = load_fold_model(run, fold, sel);
  const CohortData data = load_cohort(run.cohort_dir, run.cfg.backbone.input_shape);
  TtaOptions opts;
  opts.passes = passes;
  opts.seed = seed ? *seed : derive_seed({fold_seed(run.cfg.seed, fold), 0x747461ULL});
  opts.jobs = jobs;
  std::vector<PredictionRecord> single, tta;
  for (std::size_t i : fold_of(run.plan, fold).val) {
    const auto& r = data.records[i];
    single.push_back(predict_single(model, data.volumes[i], r.subject_id, r.label));
    tta.push_back(predict_tta(model, data.volumes[i], opts, r.subject_id, r.label));
  }
  print_metrics(out, "single-pass", single);
  print_metrics(out, "tta-" + std::to_string(passes), tta);
  const fs::path path = out_file.empty() ? run.dir / ("tta_fold" + std::to_string(fold) + ".csv") : fs::path(out_file);
  write_text_file(path, predictions_csv(tta));
  manifest.artifact(path);
  manifest.write(run.dir);
  return kExitOk;
}

int cmd_intervene(const std::string& run_dir, int fold, const std::string& cohort, const std::string& subject,
                  const std::vector<std::string>& sets, const std::vector<std::string>& args, std::ostream& out) {
  const RunDir run = open_run(run_dir, cohort);
  ManifestWriter manifest("intervene", args);
  manifest.config(run.cfg);
  ConceptSelection sel;
  const Model model = load_fold_model(run, fold, sel);
  const auto records = read_cohort_manifest(run.cohort_dir);
  const SubjectRecord* rec = nullptr;
  for (const auto& r : records)
    if (r.subject_id == subject) rec = &r;
  if (!rec) throw ValidationError("unknown subject '" + subject + "'");
  const Volume vol = preprocess_volume(load_volume(run.cohort_dir / rec->volume_path), run.cfg.backbone.input_shape);

  std::map<std::string, double> overrides;
  for (const auto& s : sets) {
    auto [name, value] = split_assignment(s);
    overrides[name] = parse_double(value);
  }
  const InterventionResult res = intervene(model, vol, overrides, sel, rec->subject_id, rec->label);
  out << "subject " << rec->subject_id << " (label " << rec->label << ")\n";
  out << "before: p(patient) = " << format_fixed(res.before.probability, 6) << "\n";
  out << "after:  p(patient) = " << format_fixed(res.after.probability, 6) << "\n";
  for (const auto& c : res.changes)
    out << "  " << c.name << ": " << format_fixed(c.predicted, 4) << " -> " << format_fixed(c.value, 4) << "\n";

  nlohmann::ordered_json j;
  j["subject_id"] = rec->subject_id;
  j["fold"] = fold;
  j["probability_before"] = res.before.probability;
  j["probability_after"] = res.after.probability;
  auto& ch = j["changes"] = nlohmann::ordered_json::array();
  for (const auto& c : res.changes) ch.push_back({{"name", c.name}, {"predicted", c.predicted}, {"value", c.value}});
  const fs::path path = run.dir / ("intervene_" + rec->subject_id + ".json");
  write_text_file(path, j.dump(2) + "\n");
  manifest.artifact(path);
  manifest.write(run.dir);
  return kExitOk;
}

int cmd_report(const std::string& run_dir, const std::string& out_dir, std::optional<double> gap_threshold,
               const std::vector<std::string>& args, std::ostream& out) {
  const fs::path dir(run_dir);
  const RunReport run = RunReport::from_json(read_text_file(dir / "run_report.json"));
  ExperimentConfig cfg;
  if (fs::exists(dir / "config.cfg")) cfg = ExperimentConfig::from_document(KeyValueDocument::load(dir / "config.cfg"));
  const double thr = gap_threshold ? *gap_threshold : cfg.gap_threshold;
  require(thr >= 0.0, "gap threshold must be >= 0");
  const fs::path target = out_dir.empty() ? dir : fs::path(out_dir);
  ManifestWriter manifest("report", args);
  manifest.config(cfg);
  manifest.artifacts(emit_report(run, target, thr));
  manifest.write(target);
  out << read_text_file(target / "summary.txt");
  return kExitOk;
}

}  // namespace

std::string RunManifest::to_json() const {
  nlohmann::ordered_json j;
  j["format"] = "softcbm-run-manifest";
  j["command"] = command;
  j["arguments"] = arguments;
  j["seed"] = seed;
  j["started_at"] = started_at;
  j["finished_at"] = finished_at;
  nlohmann::ordered_json cfg = nlohmann::ordered_json::object();
  for (const auto& [k, v] : config.entries()) cfg[k] = v;
  j["config"] = cfg;
  j["artifacts"] = artifacts;
  return j.dump(2) + "\n";
}

RunManifest RunManifest::from_json(std::string_view text) {
  try {
    const auto j = nlohmann::ordered_json::parse(text);
    RunManifest m;
    m.command = j.at("command").get<std::string>();
    m.arguments = j.at("arguments").get<std::vector<std::string>>();
    m.seed = j.at("seed").get<std::uint64_t>();
    m.started_at = j.at("started_at").get<std::string>();
    m.finished_at = j.at("finished_at").get<std::string>();
    for (const auto& [k, v] : j.at("config").items()) m.config.set(k, v.get<std::string>());
    m.artifacts = j.at("artifacts").get<std::vector<std::string>>();
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("bad run manifest: ") + e.what());
  }
}

int run_command(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Concept-bottleneck classifier for synthetic 3D vessel volumes", "softcbm"};
  app.require_subcommand(1);

  ConfigFlags gen_flags, split_flags, train_flags, cv_flags;
  std::optional<int> patients, controls, gen_jobs, split_folds, cv_jobs;
  std::string gen_out, split_cohort, split_out = ".", train_cohort, train_out = "train_run", cv_cohort,
                                     cv_out = "crossval_run";
  int train_fold_number = 1;
  bool quiet = false;

  auto* gen = app.add_subcommand("generate", "Synthesize a phantom cohort");
  add_config_flags(gen, gen_flags, false);
  gen->add_option("--patients", patients, "Number of patients");
  gen->add_option("--controls", controls, "Number of controls");
  gen->add_option("--jobs", gen_jobs, "Generation threads");
  gen->add_option("--out", gen_out, "Output directory")->required();

  auto* spl = app.add_subcommand("split", "Stratified folds, oversampling logs and concept selections");
  add_config_flags(spl, split_flags, false);
  spl->add_option("--cohort", split_cohort, "Cohort directory");
  spl->add_option("--folds", split_folds, "Number of folds");
  spl->add_option("--out", split_out, "Output directory");

  auto* trn = app.add_subcommand("train", "Train and evaluate one fold");
  add_config_flags(trn, train_flags, false);
  trn->add_option("--cohort", train_cohort, "Cohort directory (generated under --out when absent)");
  trn->add_option("--fold", train_fold_number, "Fold number, 1-based");
  trn->add_option("--out", train_out, "Run directory");
  trn->add_flag("--quiet", quiet, "No per-epoch output");

  auto* cv = app.add_subcommand("crossval", "Full k-fold cross-validation with reports");
  add_config_flags(cv, cv_flags, true);
  cv->add_option("--cohort", cv_cohort, "Cohort directory (generated under --out when absent)");
  cv->add_option("--jobs", cv_jobs, "Folds trained in parallel");
  cv->add_option("--out", cv_out, "Run directory");
  cv->add_flag("--quiet", quiet, "No per-epoch output");

  std::string run_dir = ".", cohort_override, out_file;
  int fold = 1;
  auto add_run_flags = [&](CLI::App* cmd) {
    cmd->add_option("--run", run_dir, "Run directory from train or crossval");
    cmd->add_option("--fold", fold, "Fold number, 1-based");
    cmd->add_option("--cohort", cohort_override, "Cohort directory override");
  };

  auto* ev = app.add_subcommand("evaluate", "Single-pass inference on a validation fold");
  add_run_flags(ev);
  ev->add_option("--out", out_file, "Predictions CSV");

  int passes = 8, tta_jobs = 1;
  std::optional<std::uint64_t> tta_seed;
  auto* tta = app.add_subcommand("tta", "Test-time augmentation on a validation fold");
  add_run_flags(tta);
  tta->add_option("--passes", passes, "Augmented passes per volume")->check(CLI::PositiveNumber);
  tta->add_option("--seed", tta_seed, "Augmentation seed");
  tta->add_option("--jobs", tta_jobs, "Threads per volume")->check(CLI::PositiveNumber);
  tta->add_option("--out", out_file, "Predictions CSV");

  std::string subject;
  std::vector<std::string> sets;
  auto* itv = app.add_subcommand("intervene", "Override concept values and re-run the task head");
  add_run_flags(itv);
  itv->add_option("--subject", subject, "Subject id")->required();
  itv->add_option("--set", sets, "Concept override name=value in [0,1] (repeatable)");

  std::string report_out;
  std::optional<double> gap_threshold;
  auto* rep = app.add_subcommand("report", "Rebuild CSV reports and summary from run_report.json");
  rep->add_option("--run", run_dir, "Run directory");
  rep->add_option("--out", report_out, "Report directory (default: the run directory)");
  rep->add_option("--gap-threshold", gap_threshold, "Train/val accuracy gap threshold");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    CLI::App* sub = app.get_subcommands().empty() ? &app : app.get_subcommands().front();
    err << sub->help();
    return kExitValidation;
  }

  try {
    if (gen->parsed()) return cmd_generate(gen_flags, patients, controls, gen_jobs, gen_out, args, out);
    if (spl->parsed()) return cmd_split(split_flags, split_cohort, split_folds, split_out, args, out);
    if (trn->parsed()) return cmd_train(train_flags, train_cohort, train_fold_number, train_out, quiet, args, out);
    if (cv->parsed()) return cmd_crossval(cv_flags, cv_cohort, cv_jobs, cv_out, quiet, args, out);
    if (ev->parsed()) return cmd_evaluate(run_dir, fold, cohort_override, out_file, args, out);
    if (tta->parsed()) return cmd_tta(run_dir, fold, cohort_override, passes, tta_seed, tta_jobs, out_file, args, out);
    if (itv->parsed()) return cmd_intervene(run_dir, fold, cohort_override, subject, sets, args, out);
    if (rep->parsed()) return cmd_report(run_dir, report_out, gap_threshold, args, out);
  } catch (const IoError& e) {
    err << "io error: " << e.what() << "\n";
    return kExitIo;
  } catch (const FormatError& e) {
    err << "format error: " << e.what() << "\n";
    return kExitIo;
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return kExitValidation;
  }
  return kExitValidation;
}

}  // namespace softcbm::cli
