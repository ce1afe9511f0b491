#include "softcbm/inference.hpp"

#include <algorithm>
#include <thread>

#include "softcbm/error.hpp"
#include "softcbm/losses.hpp"

namespace softcbm {

namespace {

PredictionRecord record_from(const ForwardOutput<float>& out, std::size_t row, const std::string& id, int label) {
  PredictionRecord r;
  r.subject_id = id;
  r.true_label = label;
  const double l0 = out.logits[2 * row], l1 = out.logits[2 * row + 1];
  r.logits = {l0, l1};
  r.probability = patient_probability(l0, l1);
  r.predicted_label = r.probability >= kDecisionThreshold ? 1 : 0;
  const int k = out.c.dim(1);
  for (int j = 0; j < k; ++j) r.predicted_concepts.push_back(out.c[row * k + j]);
  return r;
}

ForwardOutput<float> eval_forward(const Model& model, const Volume& volume) {
  return model.forward(make_batch({&volume}), nn::Mode::eval);
}

}  // namespace

PredictionRecord predict_single(const Model& model, const Volume& volume, const std::string& subject_id,
                                int true_label) {
  return record_from(eval_forward(model, volume), 0, subject_id, true_label);
}

std::vector<PredictionRecord> predict_many(const Model& model, const std::vector<const Volume*>& volumes,
                                           const std::vector<std::string>& subject_ids,
                                           const std::vector<int>& labels, int batch_size) {
  require(subject_ids.size() == volumes.size() && labels.size() == volumes.size(), "prediction inputs differ in length");
  require(batch_size >= 1, "batch size must be >= 1");
  std::vector<PredictionRecord> out;
  for (std::size_t start = 0; start < volumes.size(); start += static_cast<std::size_t>(batch_size)) {
    const std::size_t end = std::min(volumes.size(), start + static_cast<std::size_t>(batch_size));
    std::vector<const Volume*> chunk(volumes.begin() + static_cast<std::ptrdiff_t>(start),
                                     volumes.begin() + static_cast<std::ptrdiff_t>(end));
    const auto fwd = model.forward(make_batch(chunk), nn::Mode::eval);
    for (std::size_t i = start; i < end; ++i) out.push_back(record_from(fwd, i - start, subject_ids[i], labels[i]));
  }
  return out;
}

PredictionRecord predict_tta(const Model& model, const Volume& volume, const TtaOptions& options,
                             const std::string& subject_id, int true_label) {
  require(options.passes >= 1, "TTA needs at least one pass");
  require(options.jobs >= 1, "jobs must be >= 1");
  options.policy.validate();
  std::vector<PredictionRecord> passes(static_cast<std::size_t>(options.passes));
  auto run = [&](std::size_t i) {
    const Volume v = apply_augment(volume, options.policy, options.seed, 0, i);
    passes[i] = predict_single(model, v, subject_id, true_label);
  };
  const std::size_t workers = std::min<std::size_t>(static_cast<std::size_t>(options.jobs), passes.size());
  if (workers <= 1) {
    for (std::size_t i = 0; i < passes.size(); ++i) run(i);
  } else {
    std::vector<std::thread> threads;
    std::vector<std::exception_ptr> errors(workers);
    for (std::size_t w = 0; w < workers; ++w)
      threads.emplace_back([&, w] {
        try {
          for (std::size_t i = w; i < passes.size(); i += workers) run(i);
        } catch (...) {
          errors[w] = std::current_exception();
        }
      });
    for (auto& t : threads) t.join();
    for (auto& e : errors)
      if (e) std::rethrow_exception(e);
  }

  PredictionRecord r;
  r.subject_id = subject_id;
  r.true_label = true_label;
  double mean = 0.0;
  std::vector<double> concept_mean(passes[0].predicted_concepts.size(), 0.0);
  for (std::size_t i = 0; i < passes.size(); ++i) {
    // Running mean: exact when every pass agrees.
    mean += (passes[i].probability - mean) / static_cast<double>(i + 1);
    for (std::size_t j = 0; j < concept_mean.size(); ++j)
      concept_mean[j] += (passes[i].predicted_concepts[j] - concept_mean[j]) / static_cast<double>(i + 1);
    r.per_pass_probabilities.push_back(passes[i].probability);
  }
  r.probability = mean;
  r.predicted_label = mean >= kDecisionThreshold ? 1 : 0;
  r.predicted_concepts = std::move(concept_mean);
  return r;
}

Tensor<float> logits_with_concepts(const Model& model, const Tensor<float>& z, const Tensor<float>& concepts) {
  return model.task_logits(z, concepts);
}

InterventionResult intervene(const Model& model, const Volume& volume, const std::map<std::string, double>& overrides,
                             const ConceptSelection& selection, const std::string& subject_id, int true_label) {
  require(static_cast<int>(selection.size()) == model.n_concepts(),
          "selection size does not match the model's concept count");
  std::vector<std::pair<std::size_t, double>> edits;
  for (const auto& [name, value] : overrides) {
    const std::size_t idx = selection.index_of(name);
    require(value >= 0.0 && value <= 1.0, "override for " + name + " must lie in [0, 1]");
    edits.emplace_back(idx, value);
  }
  std::sort(edits.begin(), edits.end());

  const auto fwd = eval_forward(model, volume);
  InterventionResult out;
  out.before = record_from(fwd, 0, subject_id, true_label);

  Tensor<float> c = fwd.c;
  for (const auto& [idx, value] : edits) {
    out.changes.push_back({selection.kept_names[idx], static_cast<double>(fwd.c[idx]), value});
    c[idx] = static_cast<float>(value);
  }
  ForwardOutput<float> edited{fwd.z, c, edits.empty() ? fwd.logits : model.task_logits(fwd.z, c)};
  out.after = record_from(edited, 0, subject_id, true_label);
  return out;
}

}  // namespace softcbm
