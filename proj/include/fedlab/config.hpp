#pragma once

#include <cstdint>
#include <cstdio>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "fedlab/errors.hpp"
#include "fedlab/fed_types.hpp"
#include "fedlab/model.hpp"

namespace fedlab {

enum class DatasetKind { kCifar10, kSynth };
enum class PartitionKind { kIid, kSgm, kDirichlet };

struct SynthSpec {
  std::size_t n = 2000;
  std::size_t dim = 32;
  double spread = 0.35;
  int classes = 10;

  bool operator==(const SynthSpec&) const = default;
};

// One experiment: dataset x model x partition x FedAvg hyperparameters,
// repeated once per seed.
struct ExperimentConfig {
  std::string name = "experiment";
  DatasetKind dataset = DatasetKind::kSynth;
  std::string cifar_dir;  // dataset=cifar10 only
  SynthSpec synth;        // dataset=synth only
  ModelKind model = ModelKind::kMlp;
  std::vector<std::size_t> hidden{64};  // model=mlp only
  PartitionKind partition = PartitionKind::kIid;
  double alpha = 0.0;  // partition=dirichlet only
  double sgm = 0.0;    // partition=sgm only

  double eta_g = 1.0;
  double eta_l = 0.0;
  std::size_t batch_size = 0;
  std::size_t local_epochs = 0;
  std::size_t num_clients = 0;
  std::size_t rounds = 0;
  double client_fraction = 1.0;
  std::size_t sync_period = 1;
  AggMode agg_mode = AggMode::kWeighted;
  UpdateOption update_option = UpdateOption::kDelta;

  std::vector<std::uint64_t> seeds{1};
  std::string output_dir = "out";
  std::size_t threads = 1;
  std::size_t eval_batch = 256;

  bool operator==(const ExperimentConfig&) const = default;

  FedConfig fed_config(std::uint64_t seed) const {
    FedConfig cfg;
    cfg.eta_g = eta_g;
    cfg.eta_l = eta_l;
    cfg.batch_size = batch_size;
    cfg.local_epochs = local_epochs;
    cfg.num_clients = num_clients;
    cfg.rounds = rounds;
    cfg.client_fraction = client_fraction;
    cfg.sync_period = sync_period;
    cfg.agg_mode = agg_mode;
    cfg.update_option = update_option;
    cfg.seed = seed;
    return cfg;
  }
};

namespace detail {

// Shortest decimal that round-trips the double exactly.
inline std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.15g", v);
  if (std::stod(buf) == v) return buf;
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

template <class T>
std::string join(const std::vector<T>& values) {
  std::string out;
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(values[i]);
  }
  return out;
}

struct ConfigLine {
  std::string value;
  std::size_t line_number = 0;
  bool used = false;
};

class KeyedConfig {
 public:
  explicit KeyedConfig(const std::string& text) {
    std::istringstream in(text);
    std::string line;
    std::size_t line_number = 0;
    while (std::getline(in, line)) {
      ++line_number;
      const auto hash = line.find('#');
      if (hash != std::string::npos) line = line.substr(0, hash);
      const auto first = line.find_first_not_of(" \t\r");
      if (first == std::string::npos) continue;
      const auto last = line.find_last_not_of(" \t\r");
      line = line.substr(first, last - first + 1);
      const auto eq = line.find('=');
      if (eq == std::string::npos)
        throw ConfigError("line " + std::to_string(line_number) + ": expected key=value");
      std::string key = line.substr(0, eq);
      std::string value = line.substr(eq + 1);
      auto trim = [](std::string& s) {
        const auto b = s.find_first_not_of(" \t");
        const auto e = s.find_last_not_of(" \t");
        s = b == std::string::npos ? "" : s.substr(b, e - b + 1);
      };
      trim(key);
      trim(value);
      if (key.empty())
        throw ConfigError("line " + std::to_string(line_number) + ": empty key");
      if (entries_.count(key))
        throw ConfigError("line " + std::to_string(line_number) + ": duplicate key '" + key +
                          "'");
      entries_[key] = {value, line_number, false};
    }
  }

  bool has(const std::string& key) const { return entries_.count(key) > 0; }

  const ConfigLine* fetch(const std::string& key) {
    auto it = entries_.find(key);
    if (it == entries_.end()) return nullptr;
    it->second.used = true;
    return &it->second;
  }

  std::string where(const std::string& key) const {
    auto it = entries_.find(key);
    return it == entries_.end() ? "?" : std::to_string(it->second.line_number);
  }

  void reject_unused(const std::string& reason_suffix) const {
    for (const auto& [key, entry] : entries_) {
      if (!entry.used)
        throw ConfigError("line " + std::to_string(entry.line_number) + ": unknown key '" +
                          key + "'" + reason_suffix);
    }
  }

 private:
  std::map<std::string, ConfigLine> entries_;
};

inline std::size_t parse_size(const std::string& key, const ConfigLine& entry) {
  try {
    std::size_t pos = 0;
    const long long v = std::stoll(entry.value, &pos);
    if (pos != entry.value.size() || v < 0) throw std::invalid_argument("");
    return static_cast<std::size_t>(v);
  } catch (...) {
    throw ConfigError("line " + std::to_string(entry.line_number) + ": key '" + key +
                      "' expects a nonnegative integer, got '" + entry.value + "'");
  }
}

inline double parse_real(const std::string& key, const ConfigLine& entry) {
  try {
    std::size_t pos = 0;
    const double v = std::stod(entry.value, &pos);
    if (pos != entry.value.size()) throw std::invalid_argument("");
    return v;
  } catch (...) {
    throw ConfigError("line " + std::to_string(entry.line_number) + ": key '" + key +
                      "' expects a real number, got '" + entry.value + "'");
  }
}

template <class T, class ParseOne>
std::vector<T> parse_list(const std::string& key, const ConfigLine& entry, ParseOne one) {
  std::vector<T> out;
  std::string item;
  std::istringstream in(entry.value);
  while (std::getline(in, item, ',')) {
    ConfigLine sub{item, entry.line_number, true};
    out.push_back(one(key, sub));
  }
  if (out.empty())
    throw ConfigError("line " + std::to_string(entry.line_number) + ": key '" + key +
                      "' expects a comma-separated list");
  return out;
}

}  // namespace detail

inline const std::vector<std::string>& required_config_keys() {
  static const std::vector<std::string> keys{"dataset", "model",  "partition", "K",    "R",
                                             "E",       "B",      "eta_l",     "seeds"};
  return keys;
}

// Flat key=value config text ('#' starts a comment). Unknown keys are errors,
// including keys that only apply under a different dataset/model/partition
// selection. Defaults: eta_g=1, c_frac=1, agg=weighted, option=delta,
// sync_period=1, threads=1, eval_batch=256, output_dir=out, hidden=64,
// synth_n=2000, synth_dim=32, synth_spread=0.35, classes=10.
inline ExperimentConfig parse_config(const std::string& text,
                                     const std::string& default_name = "experiment") {
  detail::KeyedConfig keyed(text);

  std::vector<std::string> missing;
  for (const auto& key : required_config_keys())
    if (!keyed.has(key)) missing.push_back(key);
  if (!missing.empty()) {
    std::string list;
    for (std::size_t i = 0; i < missing.size(); ++i) list += (i ? ", " : "") + missing[i];
    throw ConfigError("missing required key(s): " + list);
  }

  ExperimentConfig cfg;
  cfg.name = default_name;
  cfg.hidden.clear();

  auto take = [&](const char* key) { return keyed.fetch(key); };

  if (const auto* e = take("name")) cfg.name = e->value;

  {
    const auto* e = take("dataset");
    if (e->value == "cifar10")
      cfg.dataset = DatasetKind::kCifar10;
    else if (e->value == "synth")
      cfg.dataset = DatasetKind::kSynth;
    else
      throw ConfigError("line " + std::to_string(e->line_number) +
                        ": dataset must be 'cifar10' or 'synth'");
  }
  {
    const auto* e = take("model");
    if (e->value == "logistic")
      cfg.model = ModelKind::kLogistic;
    else if (e->value == "mlp")
      cfg.model = ModelKind::kMlp;
    else if (e->value == "paper_cnn")
      cfg.model = ModelKind::kPaperCnn;
    else
      throw ConfigError("line " + std::to_string(e->line_number) +
                        ": model must be 'logistic', 'mlp' or 'paper_cnn'");
  }
  {
    const auto* e = take("partition");
    if (e->value == "iid")
      cfg.partition = PartitionKind::kIid;
    else if (e->value == "sgm")
      cfg.partition = PartitionKind::kSgm;
    else if (e->value == "dirichlet")
      cfg.partition = PartitionKind::kDirichlet;
    else
      throw ConfigError("line " + std::to_string(e->line_number) +
                        ": partition must be 'iid', 'sgm' or 'dirichlet'");
  }

  cfg.num_clients = detail::parse_size("K", *take("K"));
  cfg.rounds = detail::parse_size("R", *take("R"));
  cfg.local_epochs = detail::parse_size("E", *take("E"));
  cfg.batch_size = detail::parse_size("B", *take("B"));
  cfg.eta_l = detail::parse_real("eta_l", *take("eta_l"));
  cfg.seeds = detail::parse_list<std::uint64_t>(
      "seeds", *take("seeds"), [](const std::string& key, const detail::ConfigLine& e) {
        return static_cast<std::uint64_t>(detail::parse_size(key, e));
      });

  if (const auto* e = take("eta_g")) cfg.eta_g = detail::parse_real("eta_g", *e);
  if (const auto* e = take("c_frac")) cfg.client_fraction = detail::parse_real("c_frac", *e);
  if (const auto* e = take("sync_period")) cfg.sync_period = detail::parse_size("sync_period", *e);
  if (const auto* e = take("threads")) cfg.threads = detail::parse_size("threads", *e);
  if (const auto* e = take("eval_batch")) cfg.eval_batch = detail::parse_size("eval_batch", *e);
  if (const auto* e = take("output_dir")) cfg.output_dir = e->value;
  if (const auto* e = take("agg")) {
    if (e->value == "weighted")
      cfg.agg_mode = AggMode::kWeighted;
    else if (e->value == "naive")
      cfg.agg_mode = AggMode::kNaive;
    else
      throw ConfigError("line " + std::to_string(e->line_number) +
                        ": agg must be 'weighted' or 'naive'");
  }
  if (const auto* e = take("option")) {
    if (e->value == "delta")
      cfg.update_option = UpdateOption::kDelta;
    else if (e->value == "params")
      cfg.update_option = UpdateOption::kParams;
    else
      throw ConfigError("line " + std::to_string(e->line_number) +
                        ": option must be 'delta' (I) or 'params' (II)");
  }
  if (const auto* e = take("repeats")) {
    const std::size_t repeats = detail::parse_size("repeats", *e);
    if (repeats != cfg.seeds.size())
      throw ConfigError("line " + std::to_string(e->line_number) + ": repeats=" +
                        std::to_string(repeats) + " but " + std::to_string(cfg.seeds.size()) +
                        " seed(s) listed");
  }

  // Selection-dependent keys.
  if (cfg.dataset == DatasetKind::kCifar10) {
    const auto* e = take("cifar_dir");
    if (!e) throw ConfigError("dataset=cifar10 requires key 'cifar_dir'");
    cfg.cifar_dir = e->value;
  } else {
    if (const auto* e = take("synth_n")) cfg.synth.n = detail::parse_size("synth_n", *e);
    if (const auto* e = take("synth_dim")) cfg.synth.dim = detail::parse_size("synth_dim", *e);
    if (const auto* e = take("synth_spread"))
      cfg.synth.spread = detail::parse_real("synth_spread", *e);
    if (const auto* e = take("classes"))
      cfg.synth.classes = static_cast<int>(detail::parse_size("classes", *e));
  }
  if (cfg.model == ModelKind::kMlp) {
    cfg.hidden = {64};
    if (const auto* e = take("hidden"))
      cfg.hidden = detail::parse_list<std::size_t>("hidden", *e, detail::parse_size);
  }
  if (cfg.partition == PartitionKind::kDirichlet) {
    const auto* e = take("alpha");
    if (!e) throw ConfigError("partition=dirichlet requires key 'alpha'");
    cfg.alpha = detail::parse_real("alpha", *e);
    if (!(cfg.alpha > 0.0))
      throw ConfigError("line " + keyed.where("alpha") + ": alpha must be > 0");
  }
  if (cfg.partition == PartitionKind::kSgm) {
    const auto* e = take("sgm");
    if (!e) throw ConfigError("partition=sgm requires key 'sgm'");
    cfg.sgm = detail::parse_real("sgm", *e);
    if (cfg.sgm < 0.0) throw ConfigError("line " + keyed.where("sgm") + ": sgm must be >= 0");
  }

  std::string hint;
  if (keyed.has("alpha") && cfg.partition != PartitionKind::kDirichlet)
    hint = " (only valid with partition=dirichlet)";
  else if (keyed.has("sgm") && cfg.partition != PartitionKind::kSgm)
    hint = " (only valid with partition=sgm)";
  else if (keyed.has("hidden") && cfg.model != ModelKind::kMlp)
    hint = " (only valid with model=mlp)";
  keyed.reject_unused(hint);

  // Semantic validation shared with the optimizer.
  validate(cfg.fed_config(cfg.seeds.empty() ? 1 : cfg.seeds[0]));
  if (cfg.eval_batch < 1) throw ConfigError("eval_batch must be >= 1");
  return cfg;
}

// Canonical rendering; parse_config(render_config(cfg)) == cfg.
inline std::string render_config(const ExperimentConfig& cfg) {
  std::ostringstream out;
  out << "name=" << cfg.name << "\n";
  out << "dataset=" << (cfg.dataset == DatasetKind::kCifar10 ? "cifar10" : "synth") << "\n";
  if (cfg.dataset == DatasetKind::kCifar10) {
    out << "cifar_dir=" << cfg.cifar_dir << "\n";
  } else {
    out << "synth_n=" << cfg.synth.n << "\n";
    out << "synth_dim=" << cfg.synth.dim << "\n";
    out << "synth_spread=" << detail::format_double(cfg.synth.spread) << "\n";
    out << "classes=" << cfg.synth.classes << "\n";
  }
  out << "model="
      << (cfg.model == ModelKind::kLogistic
              ? "logistic"
              : cfg.model == ModelKind::kMlp ? "mlp" : "paper_cnn")
      << "\n";
  if (cfg.model == ModelKind::kMlp) out << "hidden=" << detail::join(cfg.hidden) << "\n";
  out << "partition="
      << (cfg.partition == PartitionKind::kIid
              ? "iid"
              : cfg.partition == PartitionKind::kSgm ? "sgm" : "dirichlet")
      << "\n";
  if (cfg.partition == PartitionKind::kDirichlet)
    out << "alpha=" << detail::format_double(cfg.alpha) << "\n";
  if (cfg.partition == PartitionKind::kSgm)
    out << "sgm=" << detail::format_double(cfg.sgm) << "\n";
  out << "K=" << cfg.num_clients << "\n";
  out << "R=" << cfg.rounds << "\n";
  out << "E=" << cfg.local_epochs << "\n";
  out << "B=" << cfg.batch_size << "\n";
  out << "eta_l=" << detail::format_double(cfg.eta_l) << "\n";
  out << "eta_g=" << detail::format_double(cfg.eta_g) << "\n";
  out << "c_frac=" << detail::format_double(cfg.client_fraction) << "\n";
  out << "sync_period=" << cfg.sync_period << "\n";
  out << "agg=" << (cfg.agg_mode == AggMode::kWeighted ? "weighted" : "naive") << "\n";
  out << "option=" << (cfg.update_option == UpdateOption::kDelta ? "delta" : "params") << "\n";
  out << "seeds=" << detail::join(cfg.seeds) << "\n";
  out << "repeats=" << cfg.seeds.size() << "\n";
  out << "threads=" << cfg.threads << "\n";
  out << "eval_batch=" << cfg.eval_batch << "\n";
  out << "output_dir=" << cfg.output_dir << "\n";
  return out.str();
}

}  // namespace fedlab
