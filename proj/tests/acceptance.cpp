// SPDX-License-Identifier: Apache-2.0
// Acceptance suite: one PASS/FAIL line per criterion.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <functional>
#include <iostream>
#include <numbers>
#include <set>
#include <sstream>

#include <CLI11.hpp>

#include "medseq_cli/commands.hpp"
#include "medseq_cli/run_config.hpp"
#include "oracles.hpp"

namespace {

using namespace medseq;
using namespace medseq::testing;
namespace fs = std::filesystem;
using S = MedicationStatus;

struct Outcome {
  bool pass = false;
  std::string detail;
};

class Clock {
 public:
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

std::string fmt(double v, int precision = 4) {
  std::ostringstream os;
  os.precision(precision);
  os << v;
  return os.str();
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

cli::RunConfig desk_config(const std::vector<std::string>& overrides = {}) {
  return cli::load_run_config(fs::path(MEDSEQ_CONFIG_DIR) / "desk.cfg", overrides, std::nullopt);
}

std::vector<int> sizes_of(const TokenBatch& tb) { return source_sizes(tb); }

// 1 -------------------------------------------------------------------------
Outcome gradient_check() {
  Clock clock;
  const auto cfg = tiny_config();
  const auto batch = tiny_batch();
  const auto params = init_params(cfg, 7);
  std::mt19937_64 rng(5);
  std::vector<ShufflePlan> plans;
  std::size_t max_tokens = 0;
  for (const auto& s : batch) {
    const auto tb = tokenize(s, params, cfg);
    max_tokens = std::max(max_tokens, tb.token_count());
    plans.push_back(ShufflePlan::random(cfg.encoder.layers, sizes_of(tb), rng));
  }
  const auto gc = check_gradients(batch, params, cfg, plans);
  const double t = clock.seconds();
  return {gc.max_rel_error < 1e-4 && max_tokens <= 24 && t < 60.0,
          "max rel error " + fmt(gc.max_rel_error, 3) + " (" + gc.worst_tensor + "), " +
              std::to_string(gc.per_tensor.size()) + " tensors, " + std::to_string(max_tokens) + " tokens, " +
              fmt(t, 3) + " s"};
}

// 2 -------------------------------------------------------------------------
Outcome attention_rows() {
  double worst = 0.0;
  std::size_t rows = 0;
  for (int pass = 0; pass < 100; ++pass) {
    auto cfg = tiny_config();
    cfg.encoder.merge_group = std::array{1, 2, 4}[pass % 3];
    const auto params = init_params(cfg, 100 + static_cast<std::uint64_t>(pass));
    std::mt19937_64 rng(static_cast<std::uint64_t>(pass));
    for (const auto& s : tiny_batch(1000 + static_cast<std::uint64_t>(pass))) {
      const auto st = forward(tokenize(s, params, cfg), params, cfg, rng);
      for (const auto& layer : st.layers) {
        for (const auto& p : layer.probs) {
          for (Eigen::Index r = 0; r < p.rows(); ++r, ++rows) {
            worst = std::max(worst, std::abs(p.row(r).sum() - 1.0));
            if ((p.row(r).array() < 0.0).any()) worst = std::max(worst, 1.0);
          }
        }
      }
    }
  }
  return {worst < 1e-6, std::to_string(rows) + " rows, max |sum - 1| " + fmt(worst, 3)};
}

// 3 -------------------------------------------------------------------------
Outcome structural() {
  std::vector<std::string> problems;
  // Token-count conservation per layer.
  for (int g : {1, 2, 4}) {
    auto cfg = tiny_config();
    cfg.encoder.merge_group = g;
    const auto params = init_params(cfg, 3);
    std::mt19937_64 rng(static_cast<std::uint64_t>(g));
    for (const auto& s : tiny_batch()) {
      const auto tb = tokenize(s, params, cfg);
      const auto st = forward(tb, params, cfg, rng);
      for (const auto& layer : st.layers) {
        if (layer.shuffled.rows() != tb.tokens.rows() || layer.attended.rows() != tb.tokens.rows()) {
          problems.push_back("G=" + std::to_string(g) + " layer changed token count");
        }
      }
      if (st.final_tokens.rows() != tb.tokens.rows()) problems.push_back("G=" + std::to_string(g) + " output count");
    }
  }
  // Permutation invariance with G=1 and shuffle off.
  double worst_perm = 0.0;
  {
    auto cfg = tiny_config();
    cfg.encoder.merge_group = 1;
    cfg.encoder.shuffle = false;
    const auto params = init_params(cfg, 4);
    std::mt19937_64 rng(9);
    for (int trial = 0; trial < 20; ++trial) {
      for (const auto& s : tiny_batch(static_cast<std::uint64_t>(trial))) {
        const auto tb = tokenize(s, params, cfg);
        auto permuted = tb;
        for (const auto& src : tb.sources) {
          std::vector<int> perm(static_cast<std::size_t>(src.count));
          for (int i = 0; i < src.count; ++i) perm[static_cast<std::size_t>(i)] = i;
          std::shuffle(perm.begin(), perm.end(), rng);
          for (int i = 0; i < src.count; ++i) {
            permuted.tokens.row(src.offset + i) = tb.tokens.row(src.offset + perm[static_cast<std::size_t>(i)]);
            permuted.position[static_cast<std::size_t>(src.offset + i)] =
                tb.position[static_cast<std::size_t>(src.offset + perm[static_cast<std::size_t>(i)])];
          }
        }
        const auto a = forward(tb, params, cfg, rng).logits;
        const auto b = forward(permuted, params, cfg, rng).logits;
        worst_perm = std::max(worst_perm, (a - b).cwiseAbs().maxCoeff());
      }
    }
  }
  if (!(worst_perm <= 1e-9)) problems.push_back("permutation drift " + fmt(worst_perm, 3));
  // Balanced batch: weighted CE equals unweighted CE exactly.
  bool ce_equal = true;
  std::mt19937_64 rng(12);
  std::normal_distribution<double> n01(0.0, 2.0);
  for (int trial = 0; trial < 50; ++trial) {
    const int per_class = 1 + trial % 5;
    std::vector<S> labels;
    for (int i = 0; i < per_class; ++i) labels.insert(labels.end(), kStatuses.begin(), kStatuses.end());
    std::shuffle(labels.begin(), labels.end(), rng);
    Matrix logits(static_cast<Eigen::Index>(labels.size()), 3);
    for (Eigen::Index i = 0; i < logits.size(); ++i) logits.data()[i] = n01(rng);
    const auto weighted = weighted_cross_entropy(logits, labels, class_weights(labels));
    const auto plain = weighted_cross_entropy(logits, labels, ClassWeights{1.0, 1.0, 1.0});
    ce_equal = ce_equal && weighted.loss == plain.loss && weighted.logit_grad == plain.logit_grad;
  }
  if (!ce_equal) problems.push_back("balanced weighted CE differs");
  std::string detail = "G in {1,2,4} conserved, permutation drift " + fmt(worst_perm, 3) + ", balanced CE exact";
  if (!problems.empty()) detail = problems.front();
  return {problems.empty(), detail};
}

// 4 -------------------------------------------------------------------------
Outcome synchronization() {
  std::mt19937_64 rng(4);
  int mismatches = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    std::vector<TestRecord> recs;
    const int n = 1 + static_cast<int>(rng() % 20);
    for (int i = 0; i < n; ++i) {
      recs.push_back(make_record("p" + std::to_string(rng() % 3), kModalities[rng() % 3],
                                 static_cast<std::int64_t>(rng() % 14400), kStatuses[rng() % 3],
                                 static_cast<double>(i)));
    }
    const auto got = synchronize(recs, kDefaultMergeWindow);
    const auto want = brute_force_synchronize(recs, kDefaultMergeWindow);
    bool same = got.size() == want.size();
    for (std::size_t g = 0; same && g < got.size(); ++g) {
      std::multiset<int> a, b;
      for (const auto& m : got[g].members) {
        if (m) a.insert(static_cast<int>(m->series(0, 0)));
      }
      for (auto i : want[g].members) b.insert(static_cast<int>(i));
      same = got[g].patient_id == want[g].patient && got[g].status == want[g].status && a == b;
    }
    if (!same) ++mismatches;
  }
  return {mismatches == 0, std::to_string(mismatches) + " mismatches in 1000 instances"};
}

// 5 -------------------------------------------------------------------------
Outcome fold_validity() {
  const auto config = desk_config({"train.epochs=1"});
  const auto corpus = generate(config.synth);
  const auto prepared = prepare_cohort(corpus.records, config.experiment);
  const auto folds = kfold_split(prepared.cohort, 5, config.experiment.split_seed);
  std::vector<std::string> problems;
  std::set<std::string> seen;
  std::array<double, kStatusCount> overall{};
  std::vector<std::array<double, kStatusCount>> per_fold(5);
  std::vector<double> totals(5, 0.0);
  for (int f = 0; f < 5; ++f) {
    for (const auto& id : folds.patients_in(f)) {
      if (!seen.insert(id).second) problems.push_back("patient " + id + " in two folds");
      for (const auto& r : prepared.cohort.patients.at(id)) {
        const auto si = static_cast<std::size_t>(index_of(r.status));
        per_fold[static_cast<std::size_t>(f)][si] += 1.0;
        overall[si] += 1.0;
        totals[static_cast<std::size_t>(f)] += 1.0;
      }
    }
  }
  if (seen.size() != prepared.cohort.patients.size()) problems.push_back("folds do not cover the cohort");
  const double all = overall[0] + overall[1] + overall[2];
  const double mean = all / 5.0;
  double worst_total = 0.0, worst_class = 0.0;
  for (int f = 0; f < 5; ++f) {
    const auto fi = static_cast<std::size_t>(f);
    worst_total = std::max(worst_total, std::abs(totals[fi] - mean) / mean);
    for (std::size_t c = 0; c < kStatusCount; ++c) {
      worst_class = std::max(worst_class, std::abs(per_fold[fi][c] / totals[fi] - overall[c] / all));
    }
  }
  if (worst_total > 0.20) problems.push_back("fold total off by " + fmt(worst_total));
  if (worst_class > 0.10) problems.push_back("class proportion off by " + fmt(worst_class));
  const auto result = run_kfold(prepared, folds, config.experiment);
  for (const auto& fr : result.folds) {
    const std::set<std::string> trained(fr.train_patients.begin(), fr.train_patients.end());
    for (const auto& id : fr.eval_patients) {
      if (trained.count(id)) problems.push_back("fold " + std::to_string(fr.fold) + " evaluates trained " + id);
    }
    for (const auto& p : fr.evaluation.predictions) {
      if (trained.count(p.patient_id)) problems.push_back("prediction for trained patient " + p.patient_id);
    }
  }
  return {problems.empty(), problems.empty() ? prepared.cohort.patients.size() > 0
                                                   ? "max total deviation " + fmt(worst_total) +
                                                         ", max class deviation " + fmt(worst_class) +
                                                         ", no overlap"
                                                   : std::string("empty cohort")
                                             : problems.front()};
}

// 6 -------------------------------------------------------------------------
Outcome loss_metrics() {
  std::vector<std::string> problems;
  const std::vector<S> labels{S::AnotherTime, S::BeforeMedication, S::AfterMedication, S::BeforeMedication};
  const auto uniform = weighted_cross_entropy(Matrix::Zero(4, 3), labels, class_weights(labels));
  if (std::abs(uniform.loss - std::log(3.0)) > 1e-9) problems.push_back("uniform loss " + fmt(uniform.loss, 12));
  const std::vector<std::pair<std::array<double, 4>, std::array<bool, 4>>> tables{
      {{0.9, 0.4, 0.4, 0.1}, {true, false, true, false}},
      {{0.1, 0.2, 0.3, 0.4}, {true, true, false, false}},
      {{0.5, 0.5, 0.5, 0.5}, {true, false, false, true}},
      {{0.8, 0.3, 0.6, 0.2}, {true, false, false, false}},
      {{0.2, 0.7, 0.7, 0.9}, {false, true, false, true}},
  };
  for (const auto& [scores, pos] : tables) {
    const auto auc = roc_auc(scores, pos);
    if (!auc || *auc != pairwise_auc(scores, pos)) problems.push_back("hand table AUC mismatch");
  }
  // Random scorer on synthetic labels.
  SynthConfig sc;
  sc.seed = 6;
  std::vector<S> synth_labels;
  for (const auto& r : generate(sc).records) synth_labels.push_back(r.status);
  std::mt19937_64 rng(6);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Matrix scores(static_cast<Eigen::Index>(synth_labels.size()), 3);
  for (Eigen::Index i = 0; i < scores.size(); ++i) scores.data()[i] = u(rng);
  const auto m = compute_metrics(synth_labels, scores);
  const double random_auc = m.macro_auc.value_or(-1.0);
  if (synth_labels.size() < 1000 || random_auc < 0.45 || random_auc > 0.55) {
    problems.push_back("random AUC " + fmt(random_auc) + " on " + std::to_string(synth_labels.size()));
  }
  return {problems.empty(), problems.empty() ? "ln 3 exact to 1e-9, " + std::to_string(tables.size()) +
                                                   " hand tables, random AUC " + fmt(random_auc) + " on " +
                                                   std::to_string(synth_labels.size()) + " samples"
                                             : problems.front()};
}

// 7 -------------------------------------------------------------------------
Outcome learnability(const fs::path& work) {
  Clock clock;
  const auto config = desk_config();
  const auto corpus = generate(config.synth);
  const auto prepared = prepare_cohort(corpus.records, config.experiment);
  const auto folds = kfold_split(prepared.cohort, config.experiment.folds, config.experiment.split_seed);
  std::ofstream log(work / "learnability.log");
  auto progress = [&](const char* tag) {
    return [&log, tag](int fold, const EpochRecord& r) {
      log << tag << " fold " << fold << " epoch " << r.epoch << " loss " << r.loss << std::endl;
    };
  };
  KFoldOptions on_opt;
  on_opt.on_epoch = progress("seq_on");
  const auto on = run_kfold(prepared, folds, config.experiment, on_opt);
  auto off_config = config.experiment;
  off_config.model.sequence_modeling = false;
  KFoldOptions off_opt;
  off_opt.on_epoch = progress("seq_off");
  const auto off = run_kfold(prepared, folds, off_config, off_opt);
  const double t = clock.seconds();
  std::string per_fold;
  for (std::size_t f = 0; f < on.folds.size(); ++f) {
    per_fold += (f ? "/" : "") + fmt(on.folds[f].evaluation.metrics.macro_auc.value_or(-1.0), 3);
  }
  log << "seq_on " << on.macro_auc.mean << " seq_off " << off.macro_auc.mean << " seconds " << t << "\n";
  const bool ok = on.folds.size() == 5 && on.macro_auc.mean >= 0.90 &&
                  on.macro_auc.mean - off.macro_auc.mean >= 0.10 && t < 1800.0;
  return {ok, "AUC " + fmt(on.macro_auc.mean) + " [" + per_fold + "] vs seq-off " + fmt(off.macro_auc.mean) +
                  ", gap " + fmt(on.macro_auc.mean - off.macro_auc.mean) + ", " + fmt(t, 4) + " s"};
}

// 8 -------------------------------------------------------------------------
Outcome ablation(const fs::path& work) {
  Clock clock;
  const fs::path dir = work / "ablate";
  cli::CommonArgs common;
  common.config = fs::path(MEDSEQ_CONFIG_DIR) / "desk.cfg";
  common.overrides = {"synth.patients=20", "train.epochs=5"};
  common.out = dir;
  std::ostringstream log;
  cli::cmd_synth(common, log);
  cli::cmd_ablate(common, dir / "records.jsonl", log);
  const double t = clock.seconds();
  std::vector<std::string> problems;
  std::istringstream csv(slurp(dir / "ablations.csv"));
  std::string line;
  std::size_t lines = 0, columns = 0;
  while (std::getline(csv, line)) {
    const auto c = static_cast<std::size_t>(std::count(line.begin(), line.end(), ',')) + 1;
    if (lines == 0) columns = c;
    if (c != columns) problems.push_back("ragged row " + std::to_string(lines));
    if (lines > 0 && line.find(",,") != std::string::npos && line.find("nan") != std::string::npos) {
      problems.push_back("empty metric in row " + std::to_string(lines));
    }
    ++lines;
  }
  if (lines != 13) problems.push_back(std::to_string(lines) + " csv lines, expected 13");
  const auto config = desk_config(common.overrides);
  const auto grid = ablation_grid(config.experiment.model);
  const AblationSetting* g1 = nullptr;
  const AblationSetting* shuffle_off = nullptr;
  for (const auto& s : grid) {
    if (s.axis == "merge_group" && s.name == "G=1") g1 = &s;
    if (s.axis == "shuffle_merge" && s.name == "off") shuffle_off = &s;
  }
  if (!g1 || !shuffle_off) {
    problems.push_back("grid lacks G=1 or shuffle-off row");
  } else {
    const auto a = init_params(g1->model, 1);
    const auto b = init_params(shuffle_off->model, 1);
    bool same = a.scalar_count() == b.scalar_count();
    for (std::size_t i = 0; same && i < a.scalar_count(); ++i) same = a.at(i) == b.at(i);
    if (!same) problems.push_back("G=1 and shuffle-off parameter families differ");
    if (g1->model.encoder.merging() || shuffle_off->model.encoder.merging() || shuffle_off->model.encoder.shuffle) {
      problems.push_back("shuffle-off row still merges or shuffles");
    }
  }
  if (t >= 1800.0) problems.push_back("took " + fmt(t) + " s");
  return {problems.empty(), problems.empty() ? std::to_string(grid.size()) + " rows, " + std::to_string(columns) +
                                                   " columns, G=1 and shuffle-off share a model family, " +
                                                   fmt(t, 4) + " s"
                                             : problems.front()};
}

// 9 -------------------------------------------------------------------------
Outcome determinism(const fs::path& work) {
  const fs::path dir = work / "determinism";
  cli::CommonArgs common;
  common.config = fs::path(MEDSEQ_CONFIG_DIR) / "desk.cfg";
  common.overrides = {"synth.patients=10", "train.epochs=3"};
  common.seed = 42;
  common.out = dir;
  std::ostringstream log;
  cli::cmd_synth(common, log);
  cli::DataArgs data;
  data.records = dir / "records.jsonl";
  common.out = dir / "run_a";
  cli::cmd_train(common, data, log);
  common.out = dir / "run_b";
  cli::cmd_train(common, data, log);
  const auto a = slurp(dir / "run_a" / "history.jsonl");
  const auto b = slurp(dir / "run_b" / "history.jsonl");
  const auto pa = slurp(dir / "run_a" / "params.json");
  const auto pb = slurp(dir / "run_b" / "params.json");
  return {!a.empty() && a == b && pa == pb,
          std::to_string(a.size()) + " history bytes, identical " + std::string(a == b ? "yes" : "no") +
              ", params identical " + (pa == pb ? "yes" : "no")};
}

// 10 ------------------------------------------------------------------------
Outcome overfit() {
  const auto cfg = tiny_config();
  const std::vector<SequenceSample> one{tiny_batch()[0]};
  TrainConfig tc;
  tc.epochs = 500;
  tc.batch_size = 1;
  tc.optimizer.learning_rate = 1e-2;
  tc.seed = 10;
  int first = -1;
  const auto result = train(one, cfg, tc, [&](const EpochRecord& r) {
    if (first < 0 && r.loss < 0.1) first = r.epoch + 1;
  });
  return {first > 0 && first <= 500, first > 0 ? "loss < 0.1 after " + std::to_string(first) + " steps, final " +
                                                      fmt(result.history.back().loss, 3)
                                                : "final loss " + fmt(result.history.back().loss, 3)};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"medseq acceptance suite"};
  fs::path work = "acceptance_work";
  std::vector<int> only;
  app.add_option("--work-dir", work, "scratch directory");
  app.add_option("--only", only, "run only these criteria");
  CLI11_PARSE(app, argc, argv);
  fs::create_directories(work);

  const std::vector<std::pair<int, std::function<Outcome()>>> criteria{
      {1, gradient_check},
      {2, attention_rows},
      {3, structural},
      {4, synchronization},
      {5, fold_validity},
      {6, loss_metrics},
      {7, [&] { return learnability(work); }},
      {8, [&] { return ablation(work); }},
      {9, [&] { return determinism(work); }},
      {10, overfit},
  };
  int failed = 0;
  for (const auto& [id, run] : criteria) {
    if (!only.empty() && std::find(only.begin(), only.end(), id) == only.end()) continue;
    Outcome o;
    try {
      o = run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    if (!o.pass) ++failed;
    std::cout << "criterion " << id << ": " << (o.pass ? "PASS" : "FAIL") << " - " << o.detail << std::endl;
  }
  return failed == 0 ? 0 : 1;
}
