// SPDX-License-Identifier: Apache-2.0
#include "medseq_cli/commands.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <set>
#include <sstream>
#include <stdexcept>

#include "json.hpp"
#include "medseq/report.hpp"

namespace medseq::cli {

namespace {

RunConfig setup(const CommonArgs& common) {
  RunConfig c = load_run_config(common.config, common.overrides, common.seed);
  fs::create_directories(common.out);
  write_atomic(common.out / "config.resolved", format_config(c));
  return c;
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

struct MeanStd {
  double mean = 0.0;
  double std = 0.0;
};

MeanStd mean_std(const std::vector<double>& v) {
  MeanStd m;
  if (v.empty()) return m;
  for (double x : v) m.mean += x;
  m.mean /= static_cast<double>(v.size());
  for (double x : v) m.std += (x - m.mean) * (x - m.mean);
  m.std = std::sqrt(m.std / static_cast<double>(v.size()));
  return m;
}

nlohmann::ordered_json cohort_summary(const Cohort& cohort) {
  std::array<std::size_t, kStatusCount> by_status{};
  std::array<std::size_t, kModalityCount> by_modality{};
  std::vector<double> per_patient, ages;
  for (const auto& [id, recs] : cohort.patients) {
    per_patient.push_back(static_cast<double>(recs.size()));
    for (const auto& r : recs) {
      ++by_status[static_cast<std::size_t>(index_of(r.status))];
      ++by_modality[static_cast<std::size_t>(index_of(r.modality))];
    }
  }
  for (const auto& [id, d] : cohort.demographics) {
    if (d.age) ages.push_back(*d.age);
  }
  const double total = static_cast<double>(cohort.record_count());
  nlohmann::ordered_json j;
  j["patients"] = cohort.patients.size();
  j["records"] = cohort.record_count();
  for (auto s : kStatuses) {
    const auto n = by_status[static_cast<std::size_t>(index_of(s))];
    j["status"][std::string(to_string(s))] = {{"count", n}, {"ratio", total > 0 ? n / total : 0.0}};
  }
  for (auto m : kModalities) {
    const auto n = by_modality[static_cast<std::size_t>(index_of(m))];
    j["modality"][std::string(to_string(m))] = {{"count", n}, {"ratio", total > 0 ? n / total : 0.0}};
  }
  const auto pp = mean_std(per_patient);
  j["records_per_patient"] = {{"mean", pp.mean}, {"std", pp.std}};
  if (!ages.empty()) {
    const auto a = mean_std(ages);
    j["age"] = {{"mean", a.mean}, {"std", a.std}};
  }
  return j;
}

void print_summary(const nlohmann::ordered_json& s, std::ostream& log) {
  log << std::fixed << std::setprecision(1);
  log << "patients " << s["patients"].get<std::size_t>() << ", records " << s["records"].get<std::size_t>()
      << "\n";
  for (const char* group : {"status", "modality"}) {
    for (const auto& [name, e] : s[group].items()) {
      log << "  " << std::left << std::setw(12) << name << std::right << std::setw(8)
          << e["count"].get<std::size_t>() << "  " << std::setw(5) << 100.0 * e["ratio"].get<double>()
          << "%\n";
    }
  }
  log << "  records/patient " << s["records_per_patient"]["mean"].get<double>() << " ("
      << s["records_per_patient"]["std"].get<double>() << ")\n";
  log.unsetf(std::ios::floatfield);
}

std::set<std::string> selected_patients(const PreparedCohort& prepared, const DataArgs& data,
                                        bool training) {
  std::set<std::string> out;
  if (!data.folds) {
    if (data.fold) throw std::invalid_argument("--fold requires --folds");
    for (const auto& t : prepared.timelines) out.insert(t.patient_id);
    return out;
  }
  if (!data.fold) throw std::invalid_argument("--folds requires --fold");
  const auto folds = read_folds(*data.folds);
  if (*data.fold < 0 || *data.fold >= folds.fold_count) {
    throw std::invalid_argument("--fold must lie in [0, " + std::to_string(folds.fold_count) + ")");
  }
  const auto ids = training ? folds.patients_not_in(*data.fold) : folds.patients_in(*data.fold);
  out.insert(ids.begin(), ids.end());
  return out;
}

std::vector<PatientTimeline> timelines_for(const PreparedCohort& prepared, const std::set<std::string>& ids) {
  std::vector<PatientTimeline> out;
  for (const auto& t : prepared.timelines) {
    if (ids.count(t.patient_id)) out.push_back(t);
  }
  return out;
}

PreparedCohort load_prepared(const fs::path& in, const RunConfig& config) {
  const auto records = read_records(in);
  return prepare_cohort(records, config.experiment);
}

nlohmann::ordered_json metrics_object(const Metrics& m) { return nlohmann::ordered_json::parse(metrics_json(m)); }

void log_epoch(std::ostream& log, const std::string& prefix, const EpochRecord& r) {
  log << prefix << "epoch " << r.epoch << " loss " << std::setprecision(6) << r.loss << " acc "
      << r.metrics.accuracy;
  if (r.metrics.macro_auc) log << " auc " << *r.metrics.macro_auc;
  log << std::endl;
}

}  // namespace

void write_atomic(const fs::path& path, const std::string& content) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + tmp.string());
    out << content;
    out.flush();
    if (!out) throw std::runtime_error("write failed for " + tmp.string());
  }
  fs::rename(tmp, path);
}

std::vector<TestRecord> read_records(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  try {
    return parse_records(in);
  } catch (const ParseError& e) {
    throw std::runtime_error(path.string() + ": " + e.what());
  }
}

std::string folds_json(const FoldAssignment& folds) {
  nlohmann::ordered_json j;
  j["folds"] = folds.fold_count;
  j["seed"] = folds.seed;
  j["assignment"] = nlohmann::ordered_json::object();
  for (const auto& [id, f] : folds.assignment) j["assignment"][id] = f;
  return j.dump(2) + "\n";
}

FoldAssignment read_folds(const fs::path& path) {
  try {
    const auto j = nlohmann::json::parse(read_file(path));
    FoldAssignment f;
    f.fold_count = j.at("folds").get<int>();
    f.seed = j.at("seed").get<std::uint64_t>();
    for (const auto& [id, fold] : j.at("assignment").items()) {
      const int v = fold.get<int>();
      if (v < 0 || v >= f.fold_count) throw std::invalid_argument("fold index out of range for " + id);
      f.assignment[id] = v;
    }
    return f;
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error(path.string() + ": " + e.what());
  }
}

// ---------------------------------------------------------------------------

void cmd_ingest(const CommonArgs& common, const fs::path& in, std::ostream& log) {
  const RunConfig config = setup(common);
  const auto records = read_records(in);
  Cohort cohort = filter_cohort(records, config.experiment.filter);
  std::string store;
  for (const auto& [id, recs] : cohort.patients) {
    for (const auto& r : recs) {
      (void)preprocess_record(r, config.experiment.preprocess);  // throws on unusable series
      store += serialize_record(r);
      store += '\n';
    }
  }
  const auto summary = cohort_summary(cohort);
  write_atomic(common.out / "records.jsonl", store);
  write_atomic(common.out / "summary.json", summary.dump(2) + "\n");
  log << "read " << records.size() << " records from " << in.string() << "\n";
  print_summary(summary, log);
}

void cmd_synth(const CommonArgs& common, std::ostream& log) {
  const RunConfig config = setup(common);
  const auto corpus = generate(config.synth);
  write_atomic(common.out / "records.jsonl", corpus_jsonl(corpus));
  write_atomic(common.out / "manifest.json", manifest_json(config.synth, corpus));
  log << "generated " << corpus.records.size() << " records for " << corpus.latents.size()
      << " patients\n";
}

void cmd_split(const CommonArgs& common, const fs::path& in, std::ostream& log) {
  const RunConfig config = setup(common);
  const auto records = read_records(in);
  const Cohort cohort = filter_cohort(records, config.experiment.filter);
  const auto folds = kfold_split(cohort, config.experiment.folds, config.experiment.split_seed);
  write_atomic(common.out / "folds.json", folds_json(folds));
  for (int f = 0; f < folds.fold_count; ++f) {
    std::size_t n = 0;
    std::array<std::size_t, kStatusCount> by_status{};
    const auto ids = folds.patients_in(f);
    for (const auto& id : ids) {
      for (const auto& r : cohort.patients.at(id)) {
        ++n;
        ++by_status[static_cast<std::size_t>(index_of(r.status))];
      }
    }
    log << "fold " << f << ": " << ids.size() << " patients, " << n << " records";
    for (auto s : kStatuses) {
      log << ", " << to_string(s) << " " << std::fixed << std::setprecision(3)
          << (n ? static_cast<double>(by_status[static_cast<std::size_t>(index_of(s))]) / n : 0.0);
    }
    log.unsetf(std::ios::floatfield);
    log << "\n";
  }
}

void cmd_train(const CommonArgs& common, const DataArgs& data, std::ostream& log) {
  const RunConfig config = setup(common);
  const auto prepared = load_prepared(data.records, config);
  const auto tl = timelines_for(prepared, selected_patients(prepared, data, true));
  const auto& e = config.experiment;
  const auto result = train(tl, e.train_sequences, e.model, e.train,
                            [&](const EpochRecord& r) { log_epoch(log, "", r); });
  write_atomic(common.out / "params.json", params_to_json(result.params));
  write_atomic(common.out / "history.jsonl", history_to_jsonl(result.history));
}

void cmd_eval(const CommonArgs& common, const DataArgs& data, const std::optional<fs::path>& params,
              std::ostream& log) {
  const RunConfig config = setup(common);
  const auto prepared = load_prepared(data.records, config);
  const auto& e = config.experiment;
  if (params) {
    const ModelParams p = params_from_json(read_file(*params), e.model);
    const auto tl = timelines_for(prepared, selected_patients(prepared, data, false));
    std::mt19937_64 rng(e.eval_seed);
    const auto samples = build_sequences(tl, e.eval_sequences, rng).samples;
    const auto ev = evaluate(p, samples, e.model, e.eval_seed, config.group_by);
    write_atomic(common.out / "metrics.json", metrics_json(ev.metrics));
    write_atomic(common.out / "predictions.csv", predictions_csv(ev.predictions));
    log << "samples " << ev.metrics.count << " accuracy " << ev.metrics.accuracy << " macro_f1 "
        << ev.metrics.macro_f1 << " macro_auc "
        << (ev.metrics.macro_auc ? std::to_string(*ev.metrics.macro_auc) : "undefined") << "\n";
    return;
  }
  if (data.fold) throw std::invalid_argument("--fold needs --params; omit it for a full k-fold run");
  const auto folds = data.folds ? read_folds(*data.folds)
                                : kfold_split(prepared.cohort, e.folds, e.split_seed);
  KFoldOptions opt;
  opt.group_by = config.group_by;
  opt.on_epoch = [&](int f, const EpochRecord& r) { log_epoch(log, "fold " + std::to_string(f) + " ", r); };
  const auto result = run_kfold(prepared, folds, e, opt);

  nlohmann::ordered_json j;
  auto summary = [](const MetricSummary& m) { return nlohmann::ordered_json{{"mean", m.mean}, {"std", m.std}}; };
  j["summary"] = {{"accuracy", summary(result.accuracy)},
                  {"macro_f1", summary(result.macro_f1)},
                  {"macro_auc", summary(result.macro_auc)}};
  j["folds"] = nlohmann::ordered_json::array();
  std::vector<Prediction> all;
  for (const auto& f : result.folds) {
    auto fj = metrics_object(f.evaluation.metrics);
    fj["fold"] = f.fold;
    fj["train_patients"] = f.train_patients.size();
    fj["eval_patients"] = f.eval_patients.size();
    j["folds"].push_back(std::move(fj));
    all.insert(all.end(), f.evaluation.predictions.begin(), f.evaluation.predictions.end());
    write_atomic(common.out / ("fold_" + std::to_string(f.fold)) / "history.jsonl",
                 history_to_jsonl(f.training.history));
  }
  write_atomic(common.out / "folds.json", folds_json(folds));
  write_atomic(common.out / "metrics.json", j.dump(2) + "\n");
  write_atomic(common.out / "predictions.csv", predictions_csv(all));
  log << std::setprecision(4) << "accuracy " << result.accuracy.mean << " +- " << result.accuracy.std
      << ", macro_f1 " << result.macro_f1.mean << " +- " << result.macro_f1.std << ", macro_auc "
      << result.macro_auc.mean << " +- " << result.macro_auc.std << "\n";
}

void cmd_explain(const CommonArgs& common, const fs::path& in, const fs::path& params,
                 const std::string& patient, std::optional<int> sample_index, std::ostream& log) {
  const RunConfig config = setup(common);
  const auto prepared = load_prepared(in, config);
  const auto& e = config.experiment;
  const ModelParams p = params_from_json(read_file(params), e.model);
  const auto tl = timelines_for(prepared, {patient});
  if (tl.empty()) throw std::invalid_argument("patient '" + patient + "' has no usable records");
  std::mt19937_64 rng(e.eval_seed);
  const auto samples = build_sequences(tl, e.eval_sequences, rng).samples;
  if (samples.empty()) throw std::invalid_argument("patient '" + patient + "' has too few observations");
  const int idx = sample_index.value_or(static_cast<int>(samples.size()) - 1);
  if (idx < 0 || idx >= static_cast<int>(samples.size())) {
    throw std::invalid_argument("--sample must lie in [0, " + std::to_string(samples.size()) + ")");
  }
  const auto& sample = samples[static_cast<std::size_t>(idx)];
  const auto batch = tokenize(sample, p, e.model);
  const auto st = forward(batch, p, e.model, evaluation_plan(batch, e.model, e.eval_seed), true);
  const auto agg = aggregate_history_attention(*st.trace);

  std::ostringstream csv;
  csv << "history_record,status,mean,median,samples\n";
  for (std::size_t r = 0; r < agg.mean.size(); ++r) {
    csv << r << ',' << to_string(sample.history[r]->status) << ',' << agg.mean[r] << ',' << agg.median[r]
        << ',' << agg.samples[r].size() << '\n';
  }
  write_atomic(common.out / "trace.json", trace_json(*st.trace));
  write_atomic(common.out / "attention.csv", csv.str());
  const Logits probs = softmax(Matrix(st.logits)).row(0);
  log << "patient " << patient << " sample " << idx << " label " << to_string(sample.label)
      << " predicted " << to_string(status_from_index(argmax(probs))) << "\n";
  for (std::size_t r = 0; r < agg.mean.size(); ++r) {
    log << "  history " << r << " (" << to_string(sample.history[r]->status) << ") mean attention "
        << agg.mean[r] << "\n";
  }
}

void cmd_ablate(const CommonArgs& common, const fs::path& in, std::ostream& log) {
  const RunConfig config = setup(common);
  const auto prepared = load_prepared(in, config);
  const auto grid = ablation_grid(config.experiment.model);
  const auto rows = run_ablations(prepared, config.experiment, grid, [&](const AblationRow& r) {
    log << r.setting.axis << "/" << r.setting.name << ": macro_auc " << r.result.macro_auc.mean << " +- "
        << r.result.macro_auc.std << std::endl;
  });
  write_atomic(common.out / "ablations.csv", ablations_to_csv(rows));
}

void cmd_report(const CommonArgs& common, const fs::path& eval_dir, std::ostream& log) {
  setup(common);
  const fs::path pred_path = eval_dir / "predictions.csv";
  std::ifstream in(pred_path);
  if (!in) throw std::runtime_error("missing evaluation output " + pred_path.string());
  std::vector<Prediction> preds;
  try {
    preds = parse_predictions_csv(in);
  } catch (const ParseError& e) {
    throw std::runtime_error(pred_path.string() + ": " + e.what());
  }
  const auto hourly = hourly_ratios(preds);
  const auto drift = drift_summary(hourly);
  std::vector<MedicationStatus> labels;
  std::vector<std::string> age_keys, same_keys;
  Matrix scores(static_cast<Eigen::Index>(preds.size()), kStatusCount);
  for (std::size_t i = 0; i < preds.size(); ++i) {
    labels.push_back(preds[i].label);
    scores.row(static_cast<Eigen::Index>(i)) = preds[i].probabilities;
    age_keys.push_back(age_bucket(preds[i].age));
    same_keys.push_back(std::to_string(preds[i].same_label_history));
  }
  write_atomic(common.out / "hourly.csv", hourly_csv(hourly));
  write_atomic(common.out / "groups_age.csv", groups_csv(compute_metrics(labels, scores, age_keys)));
  write_atomic(common.out / "groups_same_label.csv", groups_csv(compute_metrics(labels, scores, same_keys)));
  write_atomic(common.out / "timeline.csv", timeline_csv(dominant_timeline(preds)));
  nlohmann::ordered_json dj{{"mean", drift.mean}, {"std", drift.std}, {"hours", drift.hours}};
  write_atomic(common.out / "drift.json", dj.dump(2) + "\n");
  log << preds.size() << " predictions; hourly drift " << drift.mean << " +- " << drift.std << " over "
      << drift.hours << " hours\n";
}

}  // namespace medseq::cli
