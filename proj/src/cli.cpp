#include "ltm/cli.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "ltm/config.hpp"
#include "ltm/errors.hpp"
#include "ltm/metrics.hpp"
#include "ltm/ordering.hpp"
#include "ltm/samplers.hpp"
#include "ltm/training.hpp"

namespace fs = std::filesystem;

namespace ltm {

namespace {

// Failure tied to input data or files rather than to usage.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct CommonOptions {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out_dir = "out";
  bool smoke = false;
  std::vector<std::string> overrides;
};

void add_common(CLI::App* cmd, CommonOptions& opts) {
  cmd->add_option("--config", opts.config_path, "TOML-style configuration file");
  cmd->add_option("--seed", opts.seed, "Seed for every random stream");
  cmd->add_option("--out", opts.out_dir, "Output directory")->capture_default_str();
  cmd->add_flag("--smoke", opts.smoke, "Reduced profile: L=4, 200 epochs, 2000-step chains");
  cmd->add_option("--set", opts.overrides, "Override one setting, section.key=value (repeatable)");
}

// defaults < smoke < file < flags
RunConfig resolve_config(const CommonOptions& opts, bool needs_lattice) {
  RunConfig cfg;
  if (opts.smoke) cfg.apply_smoke();
  if (!opts.config_path.empty()) cfg.merge_file(opts.config_path);
  if (opts.seed) cfg.set("run.seed", std::to_string(*opts.seed), "--seed");
  for (const std::string& kv : opts.overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects section.key=value, got '" + kv + "'");
    cfg.set(kv.substr(0, eq), kv.substr(eq + 1), "--set");
  }
  if (needs_lattice && !opts.smoke) cfg.require("lattice.L");
  cfg.validate();
  return cfg;
}

fs::path prepare_out(const CommonOptions& opts, const RunConfig& cfg) {
  const fs::path dir(opts.out_dir);
  fs::create_directories(dir);
  std::ofstream echo(dir / "config.toml");
  cfg.write(echo);
  return dir;
}

std::ofstream open_out(const fs::path& path) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw DataError("cannot write '" + path.string() + "'");
  return f;
}

int cmd_train(const CommonOptions& opts, std::ostream& out) {
  const RunConfig cfg = resolve_config(opts, true);
  const fs::path dir = prepare_out(opts, cfg);
  const MapSpec spec = cfg.map_spec();
  TriangularMap map = make_initialized_map(spec, cfg.seed(), cfg.get_double("map.init_scale"));
  const PhiFourAction action(cfg.couplings(), cfg.geometry());
  TrainConfig tc = cfg.train_config();
  tc.checkpoint_path = (dir / "checkpoint.ltm").string();
  std::ofstream csv = open_out(dir / "train.csv");
  const TrainRecord rec = train(tc, map, action, &csv);
  if (tc.epochs == 0) save_checkpoint(map, tc.checkpoint_path);

  nlohmann::json summary;
  summary["parameter_count"] = map.parameter_count();
  summary["initial_ess"] = rec.initial_ess;
  summary["final_ess"] = rec.final_ess();
  summary["epochs"] = tc.epochs;
  if (rec.size() > 0) summary["final_loss"] = rec.loss.back();
  open_out(dir / "train_summary.json") << summary.dump(2) << '\n';
  out << "trained " << spec.ordering << " order " << spec.neighborhood << " map for " << tc.epochs
      << " epochs; final ESS " << rec.final_ess() << "\n";
  return kExitOk;
}

int cmd_sweep(const CommonOptions& opts, std::ostream& out, std::ostream& err) {
  const RunConfig cfg = resolve_config(opts, true);
  const auto orderings = cfg.get_string_list("sweep.orderings");
  const auto orders = cfg.get_int_list("sweep.orders");
  if (orderings.empty() || orders.empty()) throw ConfigError("sweep needs at least one ordering and one order");
  const fs::path dir = prepare_out(opts, cfg);
  const PhiFourAction action(cfg.couplings(), cfg.geometry());

  std::ofstream ess_csv = open_out(dir / "sweep_ess.csv");
  std::ofstream status_csv = open_out(dir / "sweep_status.csv");
  ess_csv.precision(17);
  status_csv.precision(17);
  ess_csv << "ordering,nbhd_order,epoch,ess\n";
  status_csv << "ordering,nbhd_order,status,initial_ess,final_ess,message\n";
  int failures = 0;
  for (const std::string& ordering : orderings) {
    for (int order : orders) {
      const std::string cell = ordering + "_n" + std::to_string(order);
      const fs::path cell_dir = dir / cell;
      fs::create_directories(cell_dir);
      try {
        TriangularMap map =
            make_initialized_map(cfg.map_spec(ordering, order), cfg.seed(), cfg.get_double("map.init_scale"));
        TrainConfig tc = cfg.train_config();
        tc.checkpoint_path = (cell_dir / "checkpoint.ltm").string();
        std::ofstream csv = open_out(cell_dir / "train.csv");
        const TrainRecord rec = train(tc, map, action, &csv);
        ess_csv << ordering << ',' << order << ",0," << rec.initial_ess << '\n';
        for (std::size_t i = 0; i < rec.size(); ++i) {
          if (rec.ess[i]) ess_csv << ordering << ',' << order << ',' << rec.epoch[i] << ',' << *rec.ess[i] << '\n';
        }
        status_csv << ordering << ',' << order << ",ok," << rec.initial_ess << ',' << rec.final_ess() << ",\n";
        out << cell << ": final ESS " << rec.final_ess() << "\n";
      } catch (const std::exception& e) {
        ++failures;
        std::string msg = e.what();
        for (char& c : msg) {
          if (c == ',' || c == '\n') c = ';';
        }
        status_csv << ordering << ',' << order << ",failed,,," << msg << '\n';
        err << cell << ": failed: " << e.what() << "\n";
      }
      ess_csv.flush();
      status_csv.flush();
    }
  }
  return failures == static_cast<int>(orderings.size() * orders.size()) ? kExitData : kExitOk;
}

int cmd_sample(const CommonOptions& opts, const std::string& sampler, const std::string& checkpoint,
               std::ostream& out) {
  if (sampler != "imh" && sampler != "hmc") throw ConfigError("--sampler must be imh or hmc");
  if (sampler == "imh" && checkpoint.empty()) throw ConfigError("the imh sampler needs --checkpoint");
  const RunConfig cfg = resolve_config(opts, true);
  const LatticeGeometry geom = cfg.geometry();
  const PhiFourAction action(cfg.couplings(), geom);

  std::optional<TriangularMap> map;
  if (!checkpoint.empty()) {
    try {
      map.emplace(load_checkpoint(checkpoint));
    } catch (const std::exception& e) {
      throw DataError(std::string("cannot load checkpoint: ") + e.what());
    }
    if (map->size() != geom.volume()) {
      throw DataError("checkpoint has " + std::to_string(map->size()) + " sites but the lattice has " +
                      std::to_string(geom.volume()));
    }
    if (const MapSpec* spec = map->spec(); spec != nullptr && (spec->extent != geom.extent() || spec->dim != geom.dim())) {
      throw DataError("checkpoint was trained for L=" + std::to_string(spec->extent) + " but the config has L=" +
                      std::to_string(geom.extent()));
    }
  }
  const fs::path dir = prepare_out(opts, cfg);

  ChainRecord chain;
  try {
    chain = sampler == "hmc" ? hmc_run(cfg.hmc_config(), action) : imh_run(cfg.imh_config(), *map, action);
  } catch (const SamplerError& e) {
    throw DataError(e.what());
  }
  std::ofstream csv = open_out(dir / ("chain_" + sampler + ".csv"));
  write_chain_csv(chain, csv);
  nlohmann::json extra;
  extra["L"] = geom.extent();
  extra["D"] = geom.dim();
  extra["m0_sq"] = cfg.couplings().m0_sq;
  extra["lambda0"] = cfg.couplings().lambda0;
  if (!checkpoint.empty()) extra["checkpoint"] = checkpoint;
  open_out(dir / ("chain_" + sampler + ".json")) << chain_metadata_json(chain, extra.dump()) << '\n';
  out << sampler << ": kept " << chain.size() << " samples, acceptance " << chain.acceptance_rate << "\n";
  return kExitOk;
}

int cmd_compare(const CommonOptions& opts, const std::vector<std::string>& chains, std::ostream& out) {
  if (chains.empty()) throw ConfigError("compare needs at least one chain CSV");
  const RunConfig cfg = resolve_config(opts, false);
  const fs::path dir = prepare_out(opts, cfg);
  const int resamples = static_cast<int>(cfg.get_int("compare.resamples"));

  std::ofstream csv = open_out(dir / "compare.csv");
  csv.precision(17);
  csv << "M,estimate,err_lo,err_hi,statistic,sampler,err_ref\n";
  nlohmann::json summary;
  summary["energy_def"] = kEnergyDefinition;
  summary["chains"] = nlohmann::json::array();

  for (const std::string& path : chains) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot read chain '" + path + "'");
    ChainTable table;
    try {
      table = read_chain_csv(in);
    } catch (const ChainFormatError& e) {
      throw DataError(path + ": " + e.what());
    }
    if (table.step.size() < 2) throw DataError(path + ": chain needs at least two samples");

    std::string sampler = fs::path(path).stem().string();
    int volume = cfg.geometry().volume();
    const fs::path sidecar = fs::path(path).replace_extension(".json");
    if (fs::exists(sidecar)) {
      try {
        std::ifstream js(sidecar);
        const nlohmann::json meta = nlohmann::json::parse(js);
        sampler = meta.value("sampler", sampler);
        volume = meta.value("volume", volume);
      } catch (const nlohmann::json::exception& e) {
        throw DataError(sidecar.string() + ": " + e.what());
      }
    }

    const int n = static_cast<int>(table.step.size());
    std::vector<int> sizes;
    for (int m : cfg.get_int_list("compare.sizes")) {
      if (m >= 2 && m <= n) sizes.push_back(m);
    }
    if (sizes.empty() || sizes.back() != n) sizes.push_back(n);

    std::vector<double> energies(n);
    for (int i = 0; i < n; ++i) energies[i] = table.action[i] / volume;
    const std::vector<ErrorRow> e_rows =
        error_vs_samples(energies, mean, sizes, "energy", sampler, cfg.seed(), resamples);
    const std::vector<ErrorRow> x_rows = error_vs_samples(table.magnetization, susceptibility_statistic(volume),
                                                          sizes, "susceptibility", sampler, cfg.seed(), resamples);
    nlohmann::json chain_summary;
    chain_summary["file"] = path;
    chain_summary["sampler"] = sampler;
    chain_summary["samples"] = n;
    for (const auto* rows : {&e_rows, &x_rows}) {
      const double ref_err = rows->front().half_width();
      const double ref_m = rows->front().m;
      for (const ErrorRow& r : *rows) {
        csv << r.m << ',' << r.estimate << ',' << r.err_lo << ',' << r.err_hi << ',' << r.statistic << ','
            << r.sampler << ',' << ref_err * std::sqrt(ref_m / r.m) << '\n';
      }
      if (rows->size() >= 2) chain_summary[rows->front().statistic + "_slope"] = loglog_slope(*rows);
    }
    summary["chains"].push_back(chain_summary);
    out << path << ": " << n << " samples, <E> " << e_rows.back().estimate << ", chi2 " << x_rows.back().estimate
        << "\n";
  }
  open_out(dir / "compare.json") << summary.dump(2) << '\n';
  return kExitOk;
}

int cmd_fillin(const CommonOptions& opts, const std::vector<int>& sizes_flag,
               const std::vector<std::string>& orderings_flag, std::ostream& out) {
  const RunConfig cfg = resolve_config(opts, false);
  const auto sizes = sizes_flag.empty() ? cfg.get_int_list("fillin.sizes") : sizes_flag;
  const auto orderings = orderings_flag.empty() ? cfg.get_string_list("fillin.orderings") : orderings_flag;
  if (sizes.empty() || orderings.empty()) throw ConfigError("fillin needs at least one size and one ordering");
  std::vector<FillInRow> rows;
  try {
    rows = fill_in_stats(orderings, sizes);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  const fs::path dir = prepare_out(opts, cfg);
  std::ofstream csv = open_out(dir / "fillin.csv");
  write_fill_in_csv(csv, rows);
  out << "wrote " << rows.size() << " fill-in rows\n";
  return kExitOk;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Sparse triangular transport maps for lattice phi^4 sampling", "ltm"};
  app.require_subcommand(1);

  CommonOptions train_opts, sweep_opts, sample_opts, compare_opts, fillin_opts;
  auto* train_cmd = app.add_subcommand("train", "Train a map by reverse KL");
  add_common(train_cmd, train_opts);
  auto* sweep_cmd = app.add_subcommand("sweep-orderings", "Train every ordering x neighbourhood order cell");
  add_common(sweep_cmd, sweep_opts);
  auto* sample_cmd = app.add_subcommand("sample", "Run an HMC or flow-proposal IMH chain");
  add_common(sample_cmd, sample_opts);
  std::string sampler, checkpoint;
  sample_cmd->add_option("--sampler", sampler, "imh or hmc")->required();
  sample_cmd->add_option("--checkpoint", checkpoint, "Trained map (required for imh)");
  auto* compare_cmd = app.add_subcommand("compare", "Bootstrap error versus sample count for chain CSVs");
  add_common(compare_cmd, compare_opts);
  std::vector<std::string> chains;
  compare_cmd->add_option("chains", chains, "Chain CSV files");
  auto* fillin_cmd = app.add_subcommand("fillin", "Sparse versus exact conditioning set sizes");
  add_common(fillin_cmd, fillin_opts);
  std::vector<int> sizes;
  std::vector<std::string> orderings;
  fillin_cmd->add_option("--sizes", sizes, "Lattice extents")->delimiter(',');
  fillin_cmd->add_option("--orderings", orderings, "Ordering names")->delimiter(',');

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (train_cmd->parsed()) return cmd_train(train_opts, out);
    if (sweep_cmd->parsed()) return cmd_sweep(sweep_opts, out, err);
    if (sample_cmd->parsed()) return cmd_sample(sample_opts, sampler, checkpoint, out);
    if (compare_cmd->parsed()) return cmd_compare(compare_opts, chains, out);
    if (fillin_cmd->parsed()) return cmd_fillin(fillin_opts, sizes, orderings, out);
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const DataError& e) {
    err << "error: " << e.what() << "\n";
    return kExitData;
  } catch (const TrainingDiverged& e) {
    err << "error: " << e.what() << "\n";
    return kExitData;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitData;
  }
  return kExitUsage;
}

}  // namespace ltm
