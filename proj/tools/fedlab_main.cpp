// fedlab: deterministic federated-learning simulation lab.
//
// Subcommands:
//   run <config-file> [--desk] [--out DIR] [--seed-offset N]
//   preset <name> [--print|--run] [--desk] [--out DIR]
//   gradcheck <model>
//   partition-report <config-file> [--out FILE]
//   toy <name> [--out DIR]
//
// Exit codes: 0 success, 1 config error, 2 runtime/divergence, 3 I/O.
// FEDLAB_OUT overrides the output directory; an explicit --out wins.

#include <CLI11.hpp>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "fedlab/harness.hpp"
#include "fedlab/presets.hpp"

namespace fs = std::filesystem;

namespace {

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw fedlab::IoError("cannot open config file '" + path + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

// --out flag beats FEDLAB_OUT beats the config's own output_dir.
std::string resolve_out(const std::string& flag_value, const std::string& config_value) {
  if (!flag_value.empty()) return flag_value;
  if (const char* env = std::getenv("FEDLAB_OUT"); env && *env) return env;
  return config_value;
}

void apply_seed_offset(fedlab::ExperimentConfig& cfg, std::uint64_t offset) {
  for (auto& seed : cfg.seeds) seed += offset;
}

int report_run(const fedlab::RunManifest& manifest) {
  for (const auto& rep : manifest.repeats) {
    if (rep.ok)
      std::cout << "repeat seed=" << rep.seed << " ok (" << rep.metrics.size()
                << " rounds) -> " << rep.metrics_csv << "\n";
    else
      std::cout << "repeat seed=" << rep.seed << " FAILED: " << rep.error << "\n";
  }
  std::cout << "aggregate: " << manifest.aggregate_csv << "\n";
  std::cout << "manifest:  " << manifest.manifest_path << "\n";
  if (!manifest.all_ok()) {
    std::cerr << "error: at least one repeat failed\n";
    return 2;
  }
  return 0;
}

int cmd_run(const std::string& config_path, bool desk, const std::string& out_flag,
            std::uint64_t seed_offset) {
  auto cfg = fedlab::parse_config(read_file(config_path), fs::path(config_path).stem().string());
  if (desk) cfg = fedlab::desk_config(cfg);
  cfg.output_dir = resolve_out(out_flag, cfg.output_dir);
  apply_seed_offset(cfg, seed_offset);
  return report_run(fedlab::run_experiment(cfg));
}

int cmd_preset(const std::string& name, bool print, bool run, bool desk,
               const std::string& out_flag, std::size_t rounds_override) {
  auto p = fedlab::preset(name);
  if (desk) p = fedlab::desk_preset(p);
  if (rounds_override > 0)
    for (auto& v : p.variants) v.config.rounds = rounds_override;
  fedlab::validate_preset(p);
  const std::string out_dir = resolve_out(out_flag, "out");

  if (p.kind == fedlab::PresetKind::kToy) {
    if (print || !run) {
      std::cout << p.name << ": " << p.summary << "\n";
      if (!run) std::cout << "(use --run to emit trajectory CSVs)\n";
    }
    if (run) {
      for (const auto& file : fedlab::run_toy_preset(p.name, out_dir))
        std::cout << "wrote " << file << "\n";
    }
    return 0;
  }

  if (!print && !run) {
    std::cout << p.name << ": " << p.summary << "\n";
    for (const auto& v : p.variants) std::cout << "  " << v.label << "\n";
    std::cout << "(--print to dump configs, --run to execute)\n";
    return 0;
  }
  if (print) {
    for (const auto& v : p.variants) {
      std::cout << "# --- " << p.name << " / " << v.label << " ---\n";
      std::cout << fedlab::render_config(v.config);
    }
  }
  int rc = 0;
  if (run) {
    for (const auto& v : p.variants) {
      auto cfg = v.config;
      cfg.output_dir = (fs::path(out_dir) / p.name).string();
      std::cout << "== " << p.name << " / " << v.label << "\n";
      const int one = report_run(fedlab::run_experiment(cfg));
      rc = rc ? rc : one;
    }
  }
  return rc;
}

int cmd_gradcheck(const std::string& model) {
  using namespace fedlab;
  ModelSpec spec;
  if (model == "logistic")
    spec = ModelSpec::logistic(16, 10);
  else if (model == "mlp")
    spec = ModelSpec::mlp(16, {32}, 10);
  else if (model == "paper_cnn")
    spec = ModelSpec::paper_cnn(3, 8, 8, 10);
  else
    throw ConfigError("gradcheck: model must be logistic, mlp or paper_cnn");

  const auto params = init_params(spec, 1);
  Rng rng(12345);
  Batch batch;
  batch.n = 8;
  batch.feature_dim = model == "paper_cnn" ? 3 * 8 * 8 : 16;
  batch.features.resize(batch.n * batch.feature_dim);
  batch.labels.resize(batch.n);
  for (auto& f : batch.features) f = rng.normal();
  for (auto& label : batch.labels) label = static_cast<int>(rng.uniform_int(10));

  FdCheckStats stats;
  const double err = grad_check(spec, params, batch, 1e-5, &stats);
  std::cout << model << ": max relative error " << err << " over " << stats.checked
            << " coordinates (" << stats.skipped_kinks << " kink-crossing skipped)\n";
  if (err < 1e-4) {
    std::cout << "PASS (< 1e-4)\n";
    return 0;
  }
  std::cout << "FAIL (>= 1e-4)\n";
  return 2;
}

int cmd_partition_report(const std::string& config_path, const std::string& out_file) {
  auto cfg = fedlab::parse_config(read_file(config_path), fs::path(config_path).stem().string());
  const auto seed = cfg.seeds.front();
  const auto data = fedlab::build_dataset(cfg, seed);
  const auto shards = fedlab::build_partition(cfg, data.train, seed);
  const auto report = fedlab::partition_report(data.train, shards);

  std::ostringstream out;
  out << "client_id,size";
  for (int c = 0; c < data.train.num_classes; ++c) out << ",class_" << c;
  out << "\n";
  for (std::size_t k = 0; k < report.shard_sizes.size(); ++k) {
    out << k << "," << report.shard_sizes[k];
    for (auto count : report.class_counts[k]) out << "," << count;
    out << "\n";
  }
  if (out_file.empty()) {
    std::cout << out.str();
  } else {
    std::ofstream f(out_file, std::ios::binary | std::ios::trunc);
    if (!f) throw fedlab::IoError("cannot open '" + out_file + "' for writing");
    f << out.str();
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"fedlab: deterministic federated-learning simulation lab"};
  app.require_subcommand(1);

  std::string config_path, preset_name, model, out_dir, out_file, toy_name;
  bool desk = false, do_print = false, do_run = false;
  std::uint64_t seed_offset = 0;
  std::size_t rounds_override = 0;

  auto* run = app.add_subcommand("run", "run an experiment config");
  run->add_option("config", config_path, "key=value config file")->required();
  run->add_flag("--desk", desk, "desk-scale variant (synthetic data, reduced rounds)");
  run->add_option("--out", out_dir, "output directory (beats FEDLAB_OUT)");
  run->add_option("--seed-offset", seed_offset, "shift every seed by N");

  auto* preset = app.add_subcommand("preset", "inspect or run a named preset");
  preset->add_option("name", preset_name, "preset name")->required();
  preset->add_flag("--print", do_print, "print variant configs");
  preset->add_flag("--run", do_run, "execute all variants");
  preset->add_flag("--desk", desk, "desk-scale variants");
  preset->add_option("--out", out_dir, "output directory");
  preset->add_option("--rounds", rounds_override, "override R for every variant");

  auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference gradient check");
  gradcheck->add_option("model", model, "logistic | mlp | paper_cnn")->required();

  auto* partition = app.add_subcommand("partition-report", "per-client class counts");
  partition->add_option("config", config_path, "key=value config file")->required();
  partition->add_option("--out", out_file, "write CSV here instead of stdout");

  auto* toy = app.add_subcommand("toy", "emit toy-landscape trajectory CSVs");
  toy->add_option("name", toy_name, "toy_fig1 | toy_fig8")->required();
  toy->add_option("--out", out_dir, "output directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 1;
  }

  try {
    if (run->parsed()) return cmd_run(config_path, desk, out_dir, seed_offset);
    if (preset->parsed())
      return cmd_preset(preset_name, do_print, do_run, desk, out_dir, rounds_override);
    if (gradcheck->parsed()) return cmd_gradcheck(model);
    if (partition->parsed()) return cmd_partition_report(config_path, out_file);
    if (toy->parsed()) {
      for (const auto& file : fedlab::run_toy_preset(toy_name, resolve_out(out_dir, "out")))
        std::cout << "wrote " << file << "\n";
      return 0;
    }
  } catch (const fedlab::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 1;
  } catch (const fedlab::IoError& e) {
    std::cerr << "io error: " << e.what() << "\n";
    return 3;
  } catch (const fedlab::FormatError& e) {
    std::cerr << "format error: " << e.what() << "\n";
    return 3;
  } catch (const fedlab::DivergedError& e) {
    std::cerr << "diverged: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
