// SPDX-License-Identifier: Apache-2.0
#include "medseq/training.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

namespace medseq {

namespace {

// splitmix64 finalizer; derives independent stream seeds from one user seed.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

std::vector<MedicationStatus> labels_of(std::span<const SequenceSample> samples) {
  std::vector<MedicationStatus> out;
  out.reserve(samples.size());
  for (const auto& s : samples) out.push_back(s.label);
  return out;
}

std::optional<double> query_age(const SequenceSample& sample) {
  for (auto m : kModalities) {
    const auto& rec = sample.query->member(m);
    if (rec && rec->demographics.age) return rec->demographics.age;
  }
  return std::nullopt;
}

MetricSummary summarize(const std::vector<double>& values) {
  MetricSummary s;
  if (values.empty()) return s;
  const double n = static_cast<double>(values.size());
  s.mean = std::accumulate(values.begin(), values.end(), 0.0) / n;
  double ss = 0.0;
  for (double v : values) ss += (v - s.mean) * (v - s.mean);
  s.std = std::sqrt(ss / n);
  return s;
}

std::vector<PatientTimeline> select_timelines(std::span<const PatientTimeline> timelines,
                                              const std::set<std::string>& ids) {
  std::vector<PatientTimeline> out;
  for (const auto& t : timelines) {
    if (ids.count(t.patient_id)) out.push_back(t);
  }
  return out;
}

class Trainer {
 public:
  Trainer(const ModelConfig& model, const TrainConfig& config)
      : model_(model),
        config_(config),
        params_(init_params(model, config.seed)),
        state_(AdamWState::zeros_like(params_)),
        order_rng_(derive_seed(config.seed, 1)),
        shuffle_rng_(derive_seed(config.seed, 2)) {
    model_.validate();
    config_.validate();
  }

  EpochRecord run_epoch(int epoch, std::span<const SequenceSample> samples) {
    if (samples.empty()) throw std::invalid_argument("train: empty dataset");
    std::vector<std::size_t> order(samples.size());
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), order_rng_);

    const auto bs = static_cast<std::size_t>(config_.batch_size);
    Matrix probs(static_cast<Eigen::Index>(samples.size()), kStatusCount);
    std::vector<MedicationStatus> labels;
    labels.reserve(samples.size());
    double loss_sum = 0.0;
    std::vector<SequenceSample> batch;
    std::vector<ShufflePlan> plans;
    for (std::size_t start = 0, b = 0; start < order.size(); start += bs, ++b) {
      batch.clear();
      plans.clear();
      for (std::size_t i = start; i < std::min(order.size(), start + bs); ++i) {
        batch.push_back(samples[order[i]]);
      }
      for (const auto& s : batch) {
        plans.push_back(training_plan(tokenize(s, params_, model_), model_, shuffle_rng_));
      }
      GradientResult g;
      try {
        g = compute_gradients(batch, params_, model_, plans);
      } catch (const std::runtime_error& e) {
        throw std::runtime_error("training diverged at epoch " + std::to_string(epoch) +
                                 ", batch " + std::to_string(b) + ": " + e.what());
      }
      adamw_step(params_, g.grads, state_, config_.optimizer);
      if (!params_.all_finite()) {
        throw std::runtime_error("training diverged at epoch " + std::to_string(epoch) +
                                 ", batch " + std::to_string(b) + ": non-finite parameters");
      }
      loss_sum += g.loss * static_cast<double>(batch.size());
      const Matrix p = softmax(g.logits);
      for (std::size_t i = 0; i < batch.size(); ++i) {
        probs.row(static_cast<Eigen::Index>(labels.size())) = p.row(static_cast<Eigen::Index>(i));
        labels.push_back(batch[i].label);
      }
    }
    EpochRecord rec;
    rec.epoch = epoch;
    rec.loss = loss_sum / static_cast<double>(samples.size());
    rec.metrics = compute_metrics(labels, probs);
    return rec;
  }

  ModelParams& params() { return params_; }

 private:
  ModelConfig model_;
  TrainConfig config_;
  ModelParams params_;
  AdamWState state_;
  std::mt19937_64 order_rng_;
  std::mt19937_64 shuffle_rng_;
};

}  // namespace

void TrainConfig::validate() const {
  if (epochs < 0) throw std::invalid_argument("train.epochs must be >= 0");
  if (batch_size < 1) throw std::invalid_argument("train.batch_size must be >= 1");
  if (!(optimizer.learning_rate > 0.0)) throw std::invalid_argument("train.lr must be > 0");
  if (optimizer.weight_decay < 0.0) throw std::invalid_argument("train.weight_decay must be >= 0");
  if (!(optimizer.beta1 >= 0.0 && optimizer.beta1 < 1.0 && optimizer.beta2 >= 0.0 &&
        optimizer.beta2 < 1.0)) {
    throw std::invalid_argument("train.beta1 and train.beta2 must lie in [0, 1)");
  }
  if (!(optimizer.eps > 0.0)) throw std::invalid_argument("train.eps must be > 0");
}

void ExperimentConfig::validate() const {
  model.validate();
  train.validate();
  preprocess.validate();
  if (train_sequences.k < 0 || eval_sequences.k < 0) {
    throw std::invalid_argument("sequence.k must be >= 0");
  }
  if (merge_window < 0) throw std::invalid_argument("sequence.merge_window must be >= 0");
  if (folds < 2) throw std::invalid_argument("experiment.folds must be >= 2");
}

// ---------------------------------------------------------------------------

GradientResult compute_gradients(std::span<const SequenceSample> batch, const ModelParams& params,
                                 const ModelConfig& config, std::span<const ShufflePlan> plans,
                                 const std::optional<ClassWeights>& weights) {
  if (batch.empty()) throw std::invalid_argument("compute_gradients: empty batch");
  if (plans.size() != batch.size()) {
    throw std::invalid_argument("compute_gradients: one shuffle plan per sample required");
  }
  const auto labels = labels_of(batch);
  std::vector<TokenBatch> tokens;
  std::vector<EncoderState> states;
  tokens.reserve(batch.size());
  states.reserve(batch.size());
  GradientResult out;
  out.logits.resize(static_cast<Eigen::Index>(batch.size()), kStatusCount);
  for (std::size_t i = 0; i < batch.size(); ++i) {
    tokens.push_back(tokenize(batch[i], params, config));
    states.push_back(forward(tokens.back(), params, config, plans[i]));
    out.logits.row(static_cast<Eigen::Index>(i)) = states.back().logits;
  }
  const auto loss = weighted_cross_entropy(out.logits, labels, weights ? *weights : class_weights(labels));
  if (!std::isfinite(loss.loss)) throw std::runtime_error("non-finite loss");
  out.loss = loss.loss;
  out.grads = params.zeros_like();
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const Logits dl = loss.logit_grad.row(static_cast<Eigen::Index>(i));
    const Matrix dtok = backward(states[i], dl, params, config, out.grads);
    tokenize_backward(batch[i], tokens[i], dtok, config, out.grads);
  }
  if (!out.grads.all_finite()) throw std::runtime_error("non-finite gradients");
  return out;
}

GradientResult compute_gradients(std::span<const SequenceSample> batch, const ModelParams& params,
                                 const ModelConfig& config, std::mt19937_64& rng) {
  std::vector<ShufflePlan> plans;
  for (const auto& s : batch) plans.push_back(training_plan(tokenize(s, params, config), config, rng));
  return compute_gradients(batch, params, config, plans);
}

double batch_loss(std::span<const SequenceSample> batch, const ModelParams& params,
                  const ModelConfig& config, std::span<const ShufflePlan> plans,
                  const std::optional<ClassWeights>& weights) {
  if (plans.size() != batch.size()) {
    throw std::invalid_argument("batch_loss: one shuffle plan per sample required");
  }
  const auto labels = labels_of(batch);
  Matrix logits(static_cast<Eigen::Index>(batch.size()), kStatusCount);
  for (std::size_t i = 0; i < batch.size(); ++i) {
    logits.row(static_cast<Eigen::Index>(i)) =
        forward(tokenize(batch[i], params, config), params, config, plans[i]).logits;
  }
  return weighted_cross_entropy(logits, labels, weights ? *weights : class_weights(labels)).loss;
}

// ---------------------------------------------------------------------------

TrainResult train(std::span<const SequenceSample> dataset, const ModelConfig& model,
                  const TrainConfig& config, const EpochCallback& on_epoch) {
  if (dataset.empty()) throw std::invalid_argument("train: empty dataset");
  Trainer trainer(model, config);
  TrainResult out;
  for (int e = 0; e < config.epochs; ++e) {
    out.history.push_back(trainer.run_epoch(e, dataset));
    if (on_epoch) on_epoch(out.history.back());
  }
  out.params = std::move(trainer.params());
  return out;
}

TrainResult train(std::span<const PatientTimeline> timelines, const SequenceOptions& sequences,
                  const ModelConfig& model, const TrainConfig& config, const EpochCallback& on_epoch) {
  Trainer trainer(model, config);
  std::mt19937_64 sample_rng(derive_seed(config.seed, 3));
  auto build = [&] { return build_sequences(timelines, sequences, sample_rng).samples; };
  auto samples = build();
  if (samples.empty()) throw std::invalid_argument("train: no sequence samples could be built");
  TrainResult out;
  for (int e = 0; e < config.epochs; ++e) {
    if (e > 0 && config.resample_history && sequences.history == HistoryPolicy::Random) {
      samples = build();
    }
    out.history.push_back(trainer.run_epoch(e, samples));
    if (on_epoch) on_epoch(out.history.back());
  }
  out.params = std::move(trainer.params());
  return out;
}

std::string history_to_jsonl(std::span<const EpochRecord> history) {
  std::string out;
  for (const auto& h : history) {
    nlohmann::ordered_json j;
    j["epoch"] = h.epoch;
    j["loss"] = h.loss;
    j["accuracy"] = h.metrics.accuracy;
    j["macro_f1"] = h.metrics.macro_f1;
    j["macro_auc"] = h.metrics.macro_auc ? nlohmann::ordered_json(*h.metrics.macro_auc)
                                         : nlohmann::ordered_json(nullptr);
    out += j.dump();
    out += '\n';
  }
  return out;
}

// ---------------------------------------------------------------------------

std::string_view to_string(GroupBy g) {
  switch (g) {
    case GroupBy::None: return "none";
    case GroupBy::AgeBucket: return "age";
    case GroupBy::SameLabelHistory: return "same_label_history";
  }
  return "none";
}

GroupBy parse_group_by(std::string_view s) {
  for (auto g : {GroupBy::None, GroupBy::AgeBucket, GroupBy::SameLabelHistory}) {
    if (s == to_string(g)) return g;
  }
  throw std::invalid_argument("unknown group_by '" + std::string(s) + "'");
}

std::string age_bucket(std::optional<double> age) {
  if (!age) return "unknown";
  if (*age <= 50.0) return "45-50";
  if (*age > 75.0) return "75+";
  const int lo = 50 + 5 * static_cast<int>(std::ceil((*age - 50.0) / 5.0) - 1.0);
  return std::to_string(lo) + "-" + std::to_string(lo + 5);
}

Logits predict(const SequenceSample& sample, const ModelParams& params, const ModelConfig& config,
               std::uint64_t eval_seed) {
  const auto batch = tokenize(sample, params, config);
  const auto st = forward(batch, params, config, evaluation_plan(batch, config, eval_seed));
  return softmax(Matrix(st.logits)).row(0);
}

Evaluation evaluate(const ModelParams& params, std::span<const SequenceSample> dataset,
                    const ModelConfig& config, std::uint64_t eval_seed, GroupBy group_by) {
  if (dataset.empty()) throw std::invalid_argument("evaluate: empty dataset");
  Evaluation out;
  Matrix scores(static_cast<Eigen::Index>(dataset.size()), kStatusCount);
  std::vector<MedicationStatus> labels;
  std::vector<std::string> keys;
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    const auto& s = dataset[i];
    Prediction p;
    p.patient_id = s.patient_id;
    p.observation_time = s.query->observation_time;
    p.label = s.label;
    p.probabilities = predict(s, params, config, eval_seed);
    p.predicted = status_from_index(argmax(p.probabilities));
    p.age = query_age(s);
    for (const auto& h : s.history) p.same_label_history += h->status == s.label ? 1 : 0;
    scores.row(static_cast<Eigen::Index>(i)) = p.probabilities;
    labels.push_back(s.label);
    switch (group_by) {
      case GroupBy::AgeBucket: keys.push_back(age_bucket(p.age)); break;
      case GroupBy::SameLabelHistory: keys.push_back(std::to_string(p.same_label_history)); break;
      case GroupBy::None: break;
    }
    out.predictions.push_back(std::move(p));
  }
  out.metrics = group_by == GroupBy::None ? compute_metrics(labels, scores)
                                          : compute_metrics(labels, scores, keys);
  return out;
}

// ---------------------------------------------------------------------------

PreparedCohort prepare_cohort(std::span<const TestRecord> records, const ExperimentConfig& config) {
  config.preprocess.validate();
  PreparedCohort out;
  out.cohort = filter_cohort(records, config.filter);
  std::vector<TestRecord> flat;
  for (auto& [id, recs] : out.cohort.patients) {
    for (auto& r : recs) {
      r = preprocess_record(r, config.preprocess);
      flat.push_back(r);
    }
  }
  out.timelines = group_timelines(synchronize(flat, config.merge_window));
  return out;
}

KFoldResult run_kfold(const PreparedCohort& prepared, const ExperimentConfig& config,
                      const KFoldOptions& options) {
  return run_kfold(prepared, kfold_split(prepared.cohort, config.folds, config.split_seed), config,
                   options);
}

KFoldResult run_kfold(const PreparedCohort& prepared, const FoldAssignment& assignment,
                      const ExperimentConfig& config, const KFoldOptions& options) {
  config.validate();
  KFoldResult out;
  out.assignment = assignment;
  std::vector<double> acc, f1, auc;
  for (int f = 0; f < assignment.fold_count; ++f) {
    if (!options.only_folds.empty() &&
        std::find(options.only_folds.begin(), options.only_folds.end(), f) == options.only_folds.end()) {
      continue;
    }
    FoldResult fr;
    fr.fold = f;
    fr.train_patients = assignment.patients_not_in(f);
    fr.eval_patients = assignment.patients_in(f);
    const std::set<std::string> train_ids(fr.train_patients.begin(), fr.train_patients.end());
    const std::set<std::string> eval_ids(fr.eval_patients.begin(), fr.eval_patients.end());
    for (const auto& id : eval_ids) {
      if (train_ids.count(id)) {
        throw std::logic_error("fold " + std::to_string(f) + ": patient " + id +
                               " is in both training and evaluation");
      }
    }
    const auto train_tl = select_timelines(prepared.timelines, train_ids);
    const auto eval_tl = select_timelines(prepared.timelines, eval_ids);

    std::mt19937_64 eval_rng(derive_seed(config.eval_seed, static_cast<std::uint64_t>(f)));
    const auto eval_samples = build_sequences(eval_tl, config.eval_sequences, eval_rng).samples;
    for (const auto& s : eval_samples) {
      if (train_ids.count(s.patient_id)) {
        throw std::logic_error("fold " + std::to_string(f) + ": evaluation sample from training patient " +
                               s.patient_id);
      }
    }

    TrainConfig tc = config.train;
    tc.seed = derive_seed(config.train.seed, 100 + static_cast<std::uint64_t>(f));
    EpochCallback cb;
    if (options.on_epoch) cb = [&](const EpochRecord& r) { options.on_epoch(f, r); };
    fr.training = train(train_tl, config.train_sequences, config.model, tc, cb);
    if (!eval_samples.empty()) {
      fr.evaluation = evaluate(fr.training.params, eval_samples, config.model, config.eval_seed,
                               options.group_by);
      acc.push_back(fr.evaluation.metrics.accuracy);
      f1.push_back(fr.evaluation.metrics.macro_f1);
      if (fr.evaluation.metrics.macro_auc) auc.push_back(*fr.evaluation.metrics.macro_auc);
    }
    out.folds.push_back(std::move(fr));
  }
  out.accuracy = summarize(acc);
  out.macro_f1 = summarize(f1);
  out.macro_auc = summarize(auc);
  return out;
}

// ---------------------------------------------------------------------------

std::vector<AblationSetting> ablation_grid(const ModelConfig& base) {
  std::vector<AblationSetting> grid;
  auto add = [&](std::string axis, std::string name, ModelConfig m) {
    grid.push_back({std::move(axis), std::move(name), std::move(m)});
  };
  {
    ModelConfig off = base;
    off.sequence_modeling = false;
    add("sequence_modeling", "off", off);
    add("sequence_modeling", "on", base);
  }
  for (int g : {1, 2, 4}) {
    ModelConfig m = base;
    m.encoder.merge_group = g;
    add("merge_group", "G=" + std::to_string(g), m);
  }
  {
    EncodingMask mask{false, false, false, false};
    ModelConfig m = base;
    m.tokenizer.encodings = mask;
    add("encodings", "none", m);
    mask.status = true;
    m.tokenizer.encodings = mask;
    add("encodings", "+status", m);
    mask.positional = true;
    m.tokenizer.encodings = mask;
    add("encodings", "+positional", m);
    mask.modality = true;
    m.tokenizer.encodings = mask;
    add("encodings", "+modality", m);
    mask.time = true;
    m.tokenizer.encodings = mask;
    add("encodings", "+time", m);
  }
  {
    ModelConfig off = base;
    off.encoder.shuffle = false;
    off.encoder.merge_group = 1;
    add("shuffle_merge", "off", off);
    add("shuffle_merge", "on", base);
  }
  return grid;
}

std::vector<AblationRow> run_ablations(const PreparedCohort& prepared, const ExperimentConfig& config,
                                       std::span<const AblationSetting> grid,
                                       const std::function<void(const AblationRow&)>& on_row) {
  const auto assignment = kfold_split(prepared.cohort, config.folds, config.split_seed);
  std::vector<AblationRow> rows;
  for (const auto& setting : grid) {
    ExperimentConfig c = config;
    c.model = setting.model;
    rows.push_back({setting, run_kfold(prepared, assignment, c)});
    if (on_row) on_row(rows.back());
  }
  return rows;
}

std::string ablations_to_csv(std::span<const AblationRow> rows) {
  std::ostringstream os;
  os << "axis,setting,sequence_modeling,merge_group,shuffle,enc_positional,enc_time,enc_modality,"
        "enc_status,folds,accuracy_mean,accuracy_std,macro_f1_mean,macro_f1_std,macro_auc_mean,"
        "macro_auc_std\n";
  os.precision(6);
  os << std::fixed;
  for (const auto& r : rows) {
    const auto& m = r.setting.model;
    const auto& e = m.tokenizer.encodings;
    os << r.setting.axis << ',' << r.setting.name << ',' << int(m.sequence_modeling) << ','
       << m.encoder.merge_group << ',' << int(m.encoder.shuffle) << ',' << int(e.positional) << ','
       << int(e.time) << ',' << int(e.modality) << ',' << int(e.status) << ',' << r.result.folds.size()
       << ',' << r.result.accuracy.mean << ',' << r.result.accuracy.std << ','
       << r.result.macro_f1.mean << ',' << r.result.macro_f1.std << ',' << r.result.macro_auc.mean
       << ',' << r.result.macro_auc.std << '\n';
  }
  return os.str();
}

SequenceSample strip_history(const SequenceSample& sample) {
  SequenceSample out = sample;
  out.history.clear();
  return out;
}

}  // namespace medseq
