// SPDX-License-Identifier: Apache-2.0
#include "medseq_cli/run_config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>
#include <stdexcept>

namespace medseq::cli {

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

[[noreturn]] void bad(const std::string& key, const std::string& value, const char* want) {
  throw std::invalid_argument("config key '" + key + "': expected " + want + ", got '" + value + "'");
}

template <class T>
T parse_number(const std::string& key, const std::string& v) {
  T out{};
  const auto* end = v.data() + v.size();
  const auto r = std::from_chars(v.data(), end, out);
  if (r.ec != std::errc() || r.ptr != end) bad(key, v, "a number");
  return out;
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "on" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "off" || v == "no") return false;
  bad(key, v, "a boolean");
}

template <std::size_t N>
std::array<double, N> parse_list(const std::string& key, const std::string& v) {
  std::array<double, N> out{};
  std::stringstream ss(v);
  std::string cell;
  std::size_t i = 0;
  while (std::getline(ss, cell, ',')) {
    if (i >= N) bad(key, v, "a comma-separated list of the right length");
    out[i++] = parse_number<double>(key, trim(cell));
  }
  if (i != N) bad(key, v, "a comma-separated list of the right length");
  return out;
}

template <std::size_t N>
std::string format_list(const std::array<double, N>& a) {
  std::ostringstream os;
  os.precision(17);
  for (std::size_t i = 0; i < N; ++i) os << (i ? "," : "") << a[i];
  return os.str();
}

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

std::string_view to_string(HistoryPolicy h) {
  switch (h) {
    case HistoryPolicy::Random: return "random";
    case HistoryPolicy::MostRecent: return "most_recent";
    case HistoryPolicy::Earliest: return "earliest";
  }
  return "random";
}

HistoryPolicy parse_history(const std::string& key, const std::string& v) {
  for (auto h : {HistoryPolicy::Random, HistoryPolicy::MostRecent, HistoryPolicy::Earliest}) {
    if (v == to_string(h)) return h;
  }
  bad(key, v, "random, most_recent or earliest");
}

std::string_view to_string(QueryPolicy q) { return q == QueryPolicy::AllEligible ? "all" : "last"; }

QueryPolicy parse_query(const std::string& key, const std::string& v) {
  if (v == "all") return QueryPolicy::AllEligible;
  if (v == "last") return QueryPolicy::LastAsQuery;
  bad(key, v, "all or last");
}

struct Field {
  std::function<void(RunConfig&, const std::string& key, const std::string& value)> set;
  std::function<std::string(const RunConfig&)> get;
};

#define MEDSEQ_INT(expr)                                                                     \
  Field {                                                                                    \
    [](RunConfig& c, const std::string& k, const std::string& v) {                           \
      expr = parse_number<std::remove_reference_t<decltype(expr)>>(k, v);                    \
    },                                                                                       \
        [](const RunConfig& c) { return std::to_string(expr); }                              \
  }
#define MEDSEQ_REAL(expr)                                                                    \
  Field {                                                                                    \
    [](RunConfig& c, const std::string& k, const std::string& v) { expr = parse_number<double>(k, v); }, \
        [](const RunConfig& c) { return fmt(expr); }                                         \
  }
#define MEDSEQ_BOOL(expr)                                                                    \
  Field {                                                                                    \
    [](RunConfig& c, const std::string& k, const std::string& v) { expr = parse_bool(k, v); }, \
        [](const RunConfig& c) { return std::string(expr ? "true" : "false"); }              \
  }
#define MEDSEQ_LIST(expr, n)                                                                 \
  Field {                                                                                    \
    [](RunConfig& c, const std::string& k, const std::string& v) { expr = parse_list<n>(k, v); }, \
        [](const RunConfig& c) { return format_list(expr); }                                 \
  }

const std::map<std::string, Field>& fields() {
  static const std::map<std::string, Field> table = [] {
    std::map<std::string, Field> f;
    f["seed"] = MEDSEQ_INT(c.seed);
    // model
    f["model.d"] = MEDSEQ_INT(c.experiment.model.d);
    f["model.sequence_modeling"] = MEDSEQ_BOOL(c.experiment.model.sequence_modeling);
    f["tokenizer.segment.tapping"] = MEDSEQ_INT(c.experiment.model.tokenizer.segment_length[0]);
    f["tokenizer.segment.walking"] = MEDSEQ_INT(c.experiment.model.tokenizer.segment_length[1]);
    f["tokenizer.segment.memory"] = MEDSEQ_INT(c.experiment.model.tokenizer.segment_length[2]);
    f["tokenizer.encoding.positional"] = MEDSEQ_BOOL(c.experiment.model.tokenizer.encodings.positional);
    f["tokenizer.encoding.time"] = MEDSEQ_BOOL(c.experiment.model.tokenizer.encodings.time);
    f["tokenizer.encoding.modality"] = MEDSEQ_BOOL(c.experiment.model.tokenizer.encodings.modality);
    f["tokenizer.encoding.status"] = MEDSEQ_BOOL(c.experiment.model.tokenizer.encodings.status);
    f["encoder.layers"] = MEDSEQ_INT(c.experiment.model.encoder.layers);
    f["encoder.heads"] = MEDSEQ_INT(c.experiment.model.encoder.heads);
    f["encoder.d_ff"] = MEDSEQ_INT(c.experiment.model.encoder.d_ff);
    f["encoder.merge_group"] = MEDSEQ_INT(c.experiment.model.encoder.merge_group);
    f["encoder.shuffle"] = MEDSEQ_BOOL(c.experiment.model.encoder.shuffle);
    f["encoder.norm_eps"] = MEDSEQ_REAL(c.experiment.model.encoder.norm_eps);
    // training
    f["train.epochs"] = MEDSEQ_INT(c.experiment.train.epochs);
    f["train.batch_size"] = MEDSEQ_INT(c.experiment.train.batch_size);
    f["train.lr"] = MEDSEQ_REAL(c.experiment.train.optimizer.learning_rate);
    f["train.beta1"] = MEDSEQ_REAL(c.experiment.train.optimizer.beta1);
    f["train.beta2"] = MEDSEQ_REAL(c.experiment.train.optimizer.beta2);
    f["train.eps"] = MEDSEQ_REAL(c.experiment.train.optimizer.eps);
    f["train.weight_decay"] = MEDSEQ_REAL(c.experiment.train.optimizer.weight_decay);
    f["train.seed"] = MEDSEQ_INT(c.experiment.train.seed);
    f["train.resample_history"] = MEDSEQ_BOOL(c.experiment.train.resample_history);
    // records and sequences
    f["records.sample_rate"] = MEDSEQ_REAL(c.experiment.preprocess.sample_rate);
    f["records.cutoff"] = MEDSEQ_REAL(c.experiment.preprocess.cutoff);
    f["records.high_pass"] = MEDSEQ_BOOL(c.experiment.preprocess.high_pass);
    f["filter.require_pd"] = MEDSEQ_BOOL(c.experiment.filter.require_pd);
    f["filter.min_records"] = MEDSEQ_INT(c.experiment.filter.min_records);
    f["filter.keep.another_time"] = MEDSEQ_BOOL(c.experiment.filter.keep_status[0]);
    f["filter.keep.before_med"] = MEDSEQ_BOOL(c.experiment.filter.keep_status[1]);
    f["filter.keep.after_med"] = MEDSEQ_BOOL(c.experiment.filter.keep_status[2]);
    f["sequence.merge_window"] = MEDSEQ_INT(c.experiment.merge_window);
    f["sequence.k"] = Field{
        [](RunConfig& c, const std::string& k, const std::string& v) {
          c.experiment.train_sequences.k = c.experiment.eval_sequences.k = parse_number<int>(k, v);
        },
        [](const RunConfig& c) { return std::to_string(c.experiment.train_sequences.k); }};
    f["sequence.train_history"] = Field{
        [](RunConfig& c, const std::string& k, const std::string& v) {
          c.experiment.train_sequences.history = parse_history(k, v);
        },
        [](const RunConfig& c) { return std::string(to_string(c.experiment.train_sequences.history)); }};
    f["sequence.eval_history"] = Field{
        [](RunConfig& c, const std::string& k, const std::string& v) {
          c.experiment.eval_sequences.history = parse_history(k, v);
        },
        [](const RunConfig& c) { return std::string(to_string(c.experiment.eval_sequences.history)); }};
    f["sequence.train_query"] = Field{
        [](RunConfig& c, const std::string& k, const std::string& v) {
          c.experiment.train_sequences.query = parse_query(k, v);
        },
        [](const RunConfig& c) { return std::string(to_string(c.experiment.train_sequences.query)); }};
    f["sequence.eval_query"] = Field{
        [](RunConfig& c, const std::string& k, const std::string& v) {
          c.experiment.eval_sequences.query = parse_query(k, v);
        },
        [](const RunConfig& c) { return std::string(to_string(c.experiment.eval_sequences.query)); }};
    // experiment
    f["experiment.folds"] = MEDSEQ_INT(c.experiment.folds);
    f["experiment.split_seed"] = MEDSEQ_INT(c.experiment.split_seed);
    f["experiment.eval_seed"] = MEDSEQ_INT(c.experiment.eval_seed);
    f["experiment.group_by"] = Field{
        [](RunConfig& c, const std::string&, const std::string& v) { c.group_by = parse_group_by(v); },
        [](const RunConfig& c) { return std::string(to_string(c.group_by)); }};
    // synthetic corpus
    f["synth.patients"] = MEDSEQ_INT(c.synth.patients);
    f["synth.records_min"] = MEDSEQ_INT(c.synth.records_min);
    f["synth.records_max"] = MEDSEQ_INT(c.synth.records_max);
    f["synth.modality_mix"] = MEDSEQ_LIST(c.synth.modality_mix, 3);
    f["synth.status_mix"] = MEDSEQ_LIST(c.synth.status_mix, 3);
    f["synth.status_multiplier"] = MEDSEQ_LIST(c.synth.status_multiplier, 3);
    f["synth.amplitude_min"] = MEDSEQ_REAL(c.synth.amplitude_min);
    f["synth.amplitude_max"] = MEDSEQ_REAL(c.synth.amplitude_max);
    f["synth.tremor_freq_min"] = MEDSEQ_REAL(c.synth.tremor_freq_min);
    f["synth.tremor_freq_max"] = MEDSEQ_REAL(c.synth.tremor_freq_max);
    f["synth.gait_freq_min"] = MEDSEQ_REAL(c.synth.gait_freq_min);
    f["synth.gait_freq_max"] = MEDSEQ_REAL(c.synth.gait_freq_max);
    f["synth.gait_amplitude"] = MEDSEQ_REAL(c.synth.gait_amplitude);
    f["synth.noise_sigma"] = MEDSEQ_REAL(c.synth.noise_sigma);
    f["synth.memory_shift"] = MEDSEQ_LIST(c.synth.memory_shift, 3);
    f["synth.memory_base_min"] = MEDSEQ_REAL(c.synth.memory_base_min);
    f["synth.memory_base_max"] = MEDSEQ_REAL(c.synth.memory_base_max);
    f["synth.memory_noise"] = MEDSEQ_REAL(c.synth.memory_noise);
    f["synth.peak_weight"] = MEDSEQ_REAL(c.synth.peak_weight);
    f["synth.peak_hours"] = MEDSEQ_LIST(c.synth.peak_hours, 2);
    f["synth.peak_width_hours"] = MEDSEQ_REAL(c.synth.peak_width_hours);
    f["synth.day_start_hour"] = MEDSEQ_REAL(c.synth.day_start_hour);
    f["synth.day_end_hour"] = MEDSEQ_REAL(c.synth.day_end_hour);
    f["synth.start_time"] = MEDSEQ_INT(c.synth.start_time);
    f["synth.span_days"] = MEDSEQ_INT(c.synth.span_days);
    f["synth.max_session_size"] = MEDSEQ_INT(c.synth.max_session_size);
    f["synth.sample_rate"] = MEDSEQ_REAL(c.synth.sample_rate);
    f["synth.seed"] = MEDSEQ_INT(c.synth.seed);
    return f;
  }();
  return table;
}

constexpr std::array<const char*, 4> kSeedKeys{"train.seed", "synth.seed", "experiment.split_seed",
                                               "experiment.eval_seed"};

}  // namespace

std::map<std::string, std::string> parse_key_values(const std::string& text, const std::string& origin) {
  std::map<std::string, std::string> out;
  std::istringstream in(text);
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    const auto hash = line.find('#');
    const std::string body = trim(hash == std::string::npos ? line : line.substr(0, hash));
    if (body.empty()) continue;
    const auto eq = body.find('=');
    if (eq == std::string::npos) {
      throw std::invalid_argument(origin + ": line " + std::to_string(n) + ": expected key = value");
    }
    const std::string key = trim(body.substr(0, eq));
    if (key.empty()) throw std::invalid_argument(origin + ": line " + std::to_string(n) + ": empty key");
    out[key] = trim(body.substr(eq + 1));
  }
  return out;
}

RunConfig make_run_config(const std::map<std::string, std::string>& values) {
  RunConfig c;
  const auto& table = fields();
  for (const auto& [key, value] : values) {
    const auto it = table.find(key);
    if (it == table.end()) throw std::invalid_argument("unknown config key '" + key + "'");
  }
  if (const auto it = values.find("seed"); it != values.end()) table.at("seed").set(c, "seed", it->second);
  for (const char* k : kSeedKeys) table.at(k).set(c, k, std::to_string(c.seed));
  for (const auto& [key, value] : values) {
    if (key != "seed") table.at(key).set(c, key, value);
  }
  c.experiment.validate();
  c.synth.validate();
  return c;
}

RunConfig load_run_config(const std::optional<std::filesystem::path>& path,
                          const std::vector<std::string>& overrides, std::optional<std::uint64_t> seed) {
  std::map<std::string, std::string> values;
  if (path) {
    std::ifstream in(*path);
    if (!in) throw std::runtime_error("cannot open config file " + path->string());
    std::stringstream buf;
    buf << in.rdbuf();
    values = parse_key_values(buf.str(), path->string());
  }
  for (const auto& o : overrides) {
    const auto kv = parse_key_values(o, "--set");
    if (kv.size() != 1) throw std::invalid_argument("--set expects key=value, got '" + o + "'");
    values[kv.begin()->first] = kv.begin()->second;
  }
  if (seed) values["seed"] = std::to_string(*seed);
  return make_run_config(values);
}

std::map<std::string, std::string> RunConfig::resolved() const {
  std::map<std::string, std::string> out;
  for (const auto& [key, field] : fields()) out[key] = field.get(*this);
  return out;
}

std::string format_config(const RunConfig& config) {
  std::string out;
  for (const auto& [k, v] : config.resolved()) out += k + " = " + v + "\n";
  return out;
}

}  // namespace medseq::cli
