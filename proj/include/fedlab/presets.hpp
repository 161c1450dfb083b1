#pragma once

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "fedlab/config.hpp"
#include "fedlab/harness.hpp"
#include "fedlab/toy.hpp"

namespace fedlab {

// Preset catalog. Federated presets replay the experiment grids behind the
// study's result figures at full scale (CIFAR-10); every one also carries a
// desk variant (synthetic blobs, reduced rounds) that finishes in well under
// a minute per variant. Toy presets emit closed-form 2D trajectories.

struct PresetVariant {
  std::string label;
  ExperimentConfig config;
  Rational eta_rational;  // exact local learning rate, for u-matching checks
};

enum class PresetKind { kFederated, kToy };

struct Preset {
  std::string name;
  std::string summary;
  PresetKind kind = PresetKind::kFederated;
  bool matched_u = false;  // all variants must produce equal Eq.-4 u
  std::vector<PresetVariant> variants;
};

namespace detail {

inline ExperimentConfig preset_base() {
  ExperimentConfig cfg;
  cfg.name = "base";
  cfg.dataset = DatasetKind::kCifar10;
  cfg.cifar_dir = "data/cifar10";
  cfg.model = ModelKind::kPaperCnn;
  cfg.hidden.clear();
  cfg.partition = PartitionKind::kIid;
  cfg.eta_l = 0.005;
  cfg.eta_g = 1.0;
  cfg.batch_size = 50;
  cfg.local_epochs = 1;
  cfg.num_clients = 10;
  cfg.rounds = 100;
  cfg.client_fraction = 1.0;
  cfg.seeds = {1};
  cfg.eval_batch = 500;
  cfg.output_dir = "out";
  return cfg;
}

inline PresetVariant variant(std::string label, ExperimentConfig cfg,
                             const std::string& eta_text) {
  cfg.name = label;
  cfg.eta_l = Rational::from_decimal(eta_text).value();
  return {std::move(label), std::move(cfg), Rational::from_decimal(eta_text)};
}

inline std::string trim_zeros(double v) { return detail::format_double(v); }

}  // namespace detail

inline std::vector<std::string> preset_names() {
  return {"base",           "fig2_cl_to_fl", "fig3_matched_u", "fig4_hparams_iid",
          "fig5_pp_iid",    "fig7_imbalance", "fig9_dirichlet", "fig9_pp_noniid",
          "fig10_traces",   "fig11_cosine",   "toy_fig1",       "toy_fig8"};
}

inline Preset preset(const std::string& name) {
  using detail::preset_base;
  using detail::variant;
  Preset p;
  p.name = name;

  if (name == "base") {
    p.summary = "the base setting: K=10, E=1, B=50, eta=0.005, weighted, IID";
    p.variants.push_back(variant("base", preset_base(), "0.005"));
  } else if (name == "fig2_cl_to_fl") {
    p.summary = "K in {1, 10, 50} with fixed hyperparameters (B=500, eta=0.005, E=1)";
    for (std::size_t k : {1u, 10u, 50u}) {
      auto cfg = preset_base();
      cfg.num_clients = k;
      cfg.batch_size = 500;
      p.variants.push_back(variant("k" + std::to_string(k), cfg, "0.005"));
    }
  } else if (name == "fig3_matched_u") {
    p.summary = "matched effective update amount u across K via B, E, or eta";
    p.matched_u = true;
    {
      auto cfg = preset_base();
      cfg.num_clients = 1;
      cfg.batch_size = 500;
      p.variants.push_back(variant("k1_base", cfg, "0.005"));
    }
    for (std::size_t k : {10u, 50u}) {
      const std::string suffix = "_k" + std::to_string(k);
      auto b = preset_base();
      b.num_clients = k;
      b.batch_size = 500 / k;
      p.variants.push_back(variant("adjust_b" + suffix, b, "0.005"));
      auto e = preset_base();
      e.num_clients = k;
      e.batch_size = 500;
      e.local_epochs = k;
      p.variants.push_back(variant("adjust_e" + suffix, e, "0.005"));
      auto lr = preset_base();
      lr.num_clients = k;
      lr.batch_size = 500;
      p.variants.push_back(
          variant("adjust_eta" + suffix, lr, k == 10 ? "0.05" : "0.25"));
    }
  } else if (name == "fig4_hparams_iid") {
    p.summary = "E, B, eta sweeps around the base setting under IID data";
    for (std::size_t e : {1u, 5u, 10u, 50u}) {
      auto cfg = preset_base();
      cfg.local_epochs = e;
      p.variants.push_back(variant("e" + std::to_string(e), cfg, "0.005"));
    }
    for (std::size_t b : {5u, 10u, 50u, 500u}) {
      auto cfg = preset_base();
      cfg.batch_size = b;
      p.variants.push_back(variant("b" + std::to_string(b), cfg, "0.005"));
    }
    for (const char* eta : {"0.001", "0.005", "0.025", "0.05"}) {
      auto cfg = preset_base();
      p.variants.push_back(variant(std::string("lr") + eta, cfg, eta));
    }
  } else if (name == "fig5_pp_iid") {
    p.summary = "partial participation 1/2/5/10 of 10 clients under IID data";
    for (const auto& [label, frac] :
         std::vector<std::pair<std::string, double>>{
             {"pp1", 0.1}, {"pp2", 0.2}, {"pp5", 0.5}, {"pp10", 1.0}}) {
      auto cfg = preset_base();
      cfg.client_fraction = frac;
      p.variants.push_back(variant(label, cfg, "0.005"));
    }
  } else if (name == "fig7_imbalance") {
    p.summary = "SGM size imbalance x weighted/naive aggregation, IID labels";
    for (double sgm : {0.0, 0.3, 0.6, 0.9}) {
      for (AggMode agg : {AggMode::kWeighted, AggMode::kNaive}) {
        auto cfg = preset_base();
        cfg.partition = PartitionKind::kSgm;
        cfg.sgm = sgm;
        cfg.agg_mode = agg;
        const std::string label = std::string(agg == AggMode::kWeighted ? "weighted" : "naive") +
                                  "_sgm" + detail::trim_zeros(sgm);
        p.variants.push_back(variant(label, cfg, "0.005"));
      }
    }
  } else if (name == "fig9_dirichlet") {
    p.summary = "Dirichlet alpha sweep, 3 repeats with min-max bands";
    for (double alpha : {0.1, 0.5, 1.0, 10.0}) {
      auto cfg = preset_base();
      cfg.partition = PartitionKind::kDirichlet;
      cfg.alpha = alpha;
      cfg.seeds = {1, 2, 3};
      p.variants.push_back(variant("alpha" + detail::trim_zeros(alpha), cfg, "0.005"));
    }
  } else if (name == "fig9_pp_noniid") {
    p.summary = "partial participation under Dirichlet alpha=0.1, 3 repeats";
    for (const auto& [label, frac] :
         std::vector<std::pair<std::string, double>>{
             {"pp1", 0.1}, {"pp2", 0.2}, {"pp5", 0.5}, {"pp10", 1.0}}) {
      auto cfg = preset_base();
      cfg.partition = PartitionKind::kDirichlet;
      cfg.alpha = 0.1;
      cfg.client_fraction = frac;
      cfg.seeds = {1, 2, 3};
      p.variants.push_back(variant(label, cfg, "0.005"));
    }
  } else if (name == "fig10_traces") {
    p.summary = "per-client training-loss traces, IID vs Dirichlet alpha=0.1";
    {
      auto cfg = preset_base();
      p.variants.push_back(variant("iid", cfg, "0.005"));
    }
    {
      auto cfg = preset_base();
      cfg.partition = PartitionKind::kDirichlet;
      cfg.alpha = 0.1;
      p.variants.push_back(variant("dirichlet01", cfg, "0.005"));
    }
  } else if (name == "fig11_cosine") {
    p.summary = "layer-wise pairwise update cosine similarity, IID vs alpha=0.1";
    {
      auto cfg = preset_base();
      p.variants.push_back(variant("iid", cfg, "0.005"));
    }
    {
      auto cfg = preset_base();
      cfg.partition = PartitionKind::kDirichlet;
      cfg.alpha = 0.1;
      p.variants.push_back(variant("dirichlet01", cfg, "0.005"));
    }
  } else if (name == "toy_fig1") {
    p.summary = "GD / SGD / mini-batch descent paths on a 2D quadratic mixture";
    p.kind = PresetKind::kToy;
  } else if (name == "toy_fig8") {
    p.summary = "two-client drift: local paths, averaged model, true optimum";
    p.kind = PresetKind::kToy;
  } else {
    std::string catalog;
    for (const auto& n : preset_names()) catalog += "\n  " + n;
    throw ConfigError("unknown preset '" + name + "'; catalog:" + catalog);
  }
  return p;
}

// Desk variant: synthetic blobs, MLP instead of the CNN, fewer rounds and a
// smaller eval batch. Sweep semantics (E/B/eta/alpha/C/...) are preserved.
inline ExperimentConfig desk_config(ExperimentConfig cfg) {
  cfg.dataset = DatasetKind::kSynth;
  cfg.cifar_dir.clear();
  cfg.synth = SynthSpec{};  // n=2000, dim=32, spread=0.35, 10 classes
  if (cfg.model == ModelKind::kPaperCnn) {
    cfg.model = ModelKind::kMlp;
    cfg.hidden = {32};
  }
  cfg.rounds = std::min<std::size_t>(cfg.rounds, 25);
  cfg.batch_size = std::min<std::size_t>(cfg.batch_size, cfg.synth.n / cfg.num_clients);
  cfg.batch_size = std::max<std::size_t>(cfg.batch_size, 1);
  cfg.eval_batch = 250;
  cfg.name += "_desk";
  return cfg;
}

inline Preset desk_preset(Preset p) {
  for (auto& v : p.variants) {
    v.config = desk_config(v.config);
    v.label += "_desk";
  }
  // The matched-u invariant is defined against the full-scale dataset size;
  // desk variants exist to execute the sweep shape, not to re-match u.
  p.matched_u = false;
  return p;
}

// Load-time validation: every federated variant parses through the config
// round trip, and matched-u presets agree on u by exact rational arithmetic.
inline void validate_preset(const Preset& p) {
  if (p.kind == PresetKind::kToy) return;
  std::optional<Rational> u;
  for (const auto& v : p.variants) {
    const auto round_trip = parse_config(render_config(v.config), v.config.name);
    if (!(round_trip == v.config))
      throw ConfigError("preset '" + p.name + "' variant '" + v.label +
                        "' does not survive the config round trip");
    if (p.matched_u) {
      const std::size_t n = 50000;  // CIFAR-10 training set
      const auto u_v = effective_update_amount_rational(
          v.eta_rational, v.config.local_epochs, n, v.config.batch_size,
          v.config.num_clients);
      if (!u) {
        u = u_v;
      } else if (!(*u == u_v)) {
        throw ConfigError("preset '" + p.name + "' variant '" + v.label +
                          "' breaks the matched-u invariant");
      }
    }
  }
}

// Toy preset emission. Trajectory files use the schema step,theta_x,theta_y,loss.
namespace toyrun {

inline void write_trajectory(const std::filesystem::path& path, const toy::Trajectory& traj) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out << csv::kTrajectoryHeader << "\n";
  for (std::size_t t = 0; t < traj.points.size(); ++t) {
    const auto& pt = traj.points[t];
    out << t << "," << csv::num(pt.x) << "," << csv::num(pt.y) << "," << csv::num(pt.loss)
        << "\n";
  }
  if (!out) throw IoError("failed writing '" + path.string() + "'");
}

// The fig-1 landscape: a handful of per-sample quadratics around a shared
// valley, descended with exact GD, single-sample SGD, and mini-batches.
inline std::vector<toy::QuadClient> fig1_clients() {
  std::vector<toy::QuadClient> clients;
  const double hessians[4][2] = {{1.0, 3.0}, {2.5, 1.2}, {1.6, 2.2}, {3.2, 0.8}};
  const double minima[4][2] = {{0.4, -0.3}, {-0.5, 0.2}, {0.1, 0.5}, {-0.2, -0.4}};
  for (int i = 0; i < 4; ++i) {
    toy::QuadClient c;
    c.hessian << hessians[i][0], 0.0, 0.0, hessians[i][1];
    c.minimizer << minima[i][0], minima[i][1];
    clients.push_back(c);
  }
  return clients;
}

// The fig-8 drift pair: equal-strength but rotated curvatures with different
// minimizers, so averaging local optima misses the global optimum.
inline std::vector<toy::QuadClient> fig8_clients() {
  std::vector<toy::QuadClient> clients(2);
  clients[0].hessian << 1.0, 0.0, 0.0, 4.0;
  clients[0].minimizer << 0.0, 0.0;
  clients[1].hessian << 4.0, 0.0, 0.0, 1.0;
  clients[1].minimizer << 2.0, 2.0;
  return clients;
}

inline std::vector<std::string> run_toy_fig1(const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  const auto clients = fig1_clients();
  const Eigen::Vector2d theta0(2.5, 2.5);
  const double eta = 0.12;
  const std::size_t steps = 60;
  std::vector<std::string> files;
  for (const auto& [label, mode, batch] :
       std::vector<std::tuple<std::string, toy::DescentMode, std::size_t>>{
           {"gd", toy::DescentMode::kGd, 0},
           {"sgd", toy::DescentMode::kSgd, 0},
           {"minibatch", toy::DescentMode::kMinibatch, 2}}) {
    const auto traj = toy::trace_descent(clients, mode, theta0, eta, steps, 1, batch ? batch : 1);
    const auto path = dir / (label + ".csv");
    write_trajectory(path, traj);
    files.push_back(path.string());
  }
  return files;
}

inline std::vector<std::string> run_toy_fig8(const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  const auto clients = fig8_clients();
  std::vector<std::string> files;

  // Each client's own descent to its local optimum from the shared start.
  const Eigen::Vector2d theta0(-1.0, 3.0);
  for (std::size_t k = 0; k < clients.size(); ++k) {
    const std::vector<toy::QuadClient> solo{clients[k]};
    const auto traj = toy::trace_descent(solo, toy::DescentMode::kGd, theta0, 0.2, 40, 1);
    const auto path = dir / ("client" + std::to_string(k) + "_local.csv");
    write_trajectory(path, traj);
    files.push_back(path.string());
  }

  // Synchronized local-GD rounds (the FedAvg mechanism on quadratics).
  {
    toy::QuadProblem problem{clients};
    const auto shards = toy::one_shard_per_client(clients.size());
    toy::Trajectory traj;
    ParamVector theta = toy::QuadProblem::pack(theta0);
    traj.points.push_back({theta.values[0], theta.values[1],
                           toy::mean_loss(clients, toy::QuadProblem::unpack(theta))});
    for (std::size_t round = 0; round < 30; ++round) {
      theta = local_sgd_run(problem, shards, theta, 0.2, 1, 1, 5, 1);
      traj.points.push_back({theta.values[0], theta.values[1],
                             toy::mean_loss(clients, toy::QuadProblem::unpack(theta))});
    }
    const auto path = dir / "fed_rounds.csv";
    write_trajectory(path, traj);
    files.push_back(path.string());
  }

  // Reference markers: global optimum, naive minimizer average, drift gap.
  {
    const auto path = dir / "markers.csv";
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
    const auto opt = toy::global_optimum(clients);
    const auto avg = toy::naive_parameter_average(clients);
    out << "name,x,y\n";
    out << "global_optimum," << csv::num(opt(0)) << "," << csv::num(opt(1)) << "\n";
    out << "naive_average," << csv::num(avg(0)) << "," << csv::num(avg(1)) << "\n";
    out << "drift_gap," << csv::num(toy::drift_gap(clients)) << ",0\n";
    files.push_back(path.string());
  }
  return files;
}

}  // namespace toyrun

inline std::vector<std::string> run_toy_preset(const std::string& name,
                                               const std::filesystem::path& out_dir) {
  if (name == "toy_fig1" || name == "fig1") return toyrun::run_toy_fig1(out_dir / "toy_fig1");
  if (name == "toy_fig8" || name == "fig8") return toyrun::run_toy_fig8(out_dir / "toy_fig8");
  throw ConfigError("unknown toy preset '" + name + "' (have: toy_fig1, toy_fig8)");
}

}  // namespace fedlab
