#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <limits>
#include <map>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "samsa/alloc.hpp"
#include "samsa/checkpoint.hpp"
#include "samsa/config.hpp"
#include "samsa/train.hpp"
#include "samsa/verification/verify.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace samsa;

namespace {

constexpr int kOk = 0, kConfigError = 2, kNumericError = 3, kCheckFailed = 4;

// Flags that map straight onto config keys.
struct Overrides {
  std::string config_file;
  std::vector<std::string> sets;
  std::map<std::string, std::string> values;
  std::map<std::string, CLI::Option*> options;

  void bind(CLI::App* app, const std::string& flag, const std::string& key, const std::string& help) {
    options[key] = app->add_option(flag, values[key], help + " (" + key + ")");
  }

  void common(CLI::App* app) {
    app->add_option("--config", config_file, "config file (section/key = value)");
    app->add_option("--set", sets, "override any key: section.key=value (repeatable)");
    bind(app, "--seed", "run.seed", "seed");
    bind(app, "--precision", "run.precision", "32 or 64");
    bind(app, "--out", "run.out_dir", "output directory");
  }

  void model(CLI::App* app) {
    bind(app, "--task", "task.kind", "task");
    bind(app, "--n", "task.n", "tokens / nodes / points");
    bind(app, "--kind", "model.kind", "samsa or full");
    bind(app, "--mode", "model.mode", "hard or soft");
    bind(app, "--k", "model.k", "tokens per head");
    bind(app, "--heads", "model.n_heads", "heads");
    bind(app, "--d-model", "model.d_model", "width");
    bind(app, "--depth", "model.n_depth", "layers");
    bind(app, "--steps", "train.steps", "optimizer steps");
    bind(app, "--lr", "train.lr", "peak learning rate");
    bind(app, "--batch", "train.batch", "batch size");
  }

  // defaults < file < environment < --set < flags
  RunConfig resolve(RunConfig c = {}) const {
    if (!config_file.empty()) apply_config_file(c, config_file);
    apply_config_env(c);
    for (const auto& s : sets) {
      const auto eq = s.find('=');
      if (eq == std::string::npos) throw ConfigError(s, "--set expects section.key=value, got '" + s + "'");
      set_config(c, s.substr(0, eq), s.substr(eq + 1));
    }
    for (const auto& [key, opt] : options)
      if (opt->count()) set_config(c, key, values.at(key));
    validate_config(c);
    return c;
  }
};

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
}

tasks::Dataset load_data(const RunConfig& c) {
  const auto spec = effective_task(c);
  return c.data_cache.empty() ? tasks::generate_task(spec) : tasks::load_or_generate(spec, c.data_cache);
}

const char* metric_key(bool regression) { return regression ? "mae" : "acc"; }

template <class Real>
int run_train(const RunConfig& c) {
  const fs::path out = c.out_dir;
  fs::create_directories(out);
  write_text(out / "config.ini", config_to_text(c));
  const auto data = load_data(c);
  TaskModel<Real> model(data.spec, c.model, c.seed, c.graph_pe_noise_at_eval);
  const json meta{{"config", config_to_json(c)}};
  save_checkpoint<Real>(out / "checkpoint_init.bin", model.named_parameters(), meta);

  std::ofstream csv(out / "metrics.csv");
  csv << kMetricsCsvHeader << "\n";
  const auto tc = effective_train(c);
  const bool regression = model.shape().regression;
  // Outputs location is left out so identical runs give identical summaries.
  auto run_config = config_to_json(c);
  run_config.erase("run.out_dir");
  json summary{{"task", tasks::task_name(data.spec.kind)}, {"config", run_config}};
  try {
    const auto result = train(model, data, tc, [&](const MetricsRecord& r) {
      csv << to_csv(r) << "\n";
      if (r.split == "val")
        std::cerr << "step " << r.step << " val loss " << r.loss << " " << metric_key(regression) << " "
                  << r.metric << "\n";
    });
    const auto test = evaluate(model, data.test, tasks::splitmix64(c.seed ^ 0x74657374ull));
    summary["result"] = to_json(result);
    summary[std::string("val_") + metric_key(regression)] = result.final_val_metric;
    summary[std::string("test_") + metric_key(regression)] = test.metric;
    summary["test_loss"] = test.loss;
    if (regression) summary["constant_baseline_test_mae"] = tasks::constant_baseline_mae(data.train, data.test);
  } catch (const DivergenceError& e) {
    summary["error"] = e.what();
    summary["diverged_at_step"] = e.step();
    write_text(out / "summary.json", summary.dump(2) + "\n");
    std::cerr << "error: " << e.what() << "\n";
    return kNumericError;
  }
  save_checkpoint<Real>(out / "checkpoint.bin", model.named_parameters(), meta);
  write_text(out / "summary.json", summary.dump(2) + "\n");
  std::cout << summary.dump(2) << "\n";
  return kOk;
}

template <class Real>
int run_eval(const RunConfig& c, const Checkpoint& ck, const std::string& split) {
  const auto data = load_data(c);
  TaskModel<Real> model(data.spec, c.model, c.seed, c.graph_pe_noise_at_eval);
  auto named = model.named_parameters();
  restore_parameters(ck, named);
  const auto which = split == "test" ? tasks::Split::test : split == "train" ? tasks::Split::train : tasks::Split::val;
  const auto r = evaluate(model, data.split(which), tasks::splitmix64(c.seed ^ 0x6576616cull));
  const bool regression = model.shape().regression;
  const json j{{"split", split}, {"loss", r.loss}, {metric_key(regression), r.metric}, {"samples", r.samples}};
  std::cout << j.dump(2) << "\n";
  return std::isfinite(r.loss) ? kOk : kNumericError;
}

json tensor_stats(const StoredTensor& t) {
  double lo = std::numeric_limits<double>::infinity(), hi = -lo, sum = 0, sq = 0;
  for (double v : t.values) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
    sum += v;
    sq += v * v;
  }
  const double n = static_cast<double>(t.values.size());
  json j{{"shape", t.shape}, {"size", t.values.size()}};
  if (!t.values.empty()) {
    j["min"] = lo;
    j["max"] = hi;
    j["mean"] = sum / n;
    j["l2"] = std::sqrt(sq);
  }
  return j;
}

template <class Real>
json bench_rows(const std::vector<std::size_t>& grid, AttentionConfig cfg, const std::vector<std::string>& modes,
                bool with_full, std::size_t repeats, std::uint64_t seed, std::map<std::string, json>& medians) {
  json rows = json::array();
  auto add = [&](verify::LayerKind kind) {
    const auto rep = verify::complexity_probe<Real>(kind, grid, cfg, repeats, seed);
    for (const auto& r : rep.rows) {
      rows.push_back({{"model", verify::layer_name(kind)},
                      {"n", r.n},
                      {"k", kind == verify::LayerKind::full ? r.n : cfg.k},
                      {"median_ms", r.median_ms},
                      {"ms", r.ms},
                      {"attention_scores", r.attention_scores}});
      medians[verify::layer_name(kind)][std::to_string(r.n)] = r.median_ms;
    }
  };
  for (const auto& m : modes) {
    if (m == "hard") add(verify::LayerKind::samsa_hard);
    else if (m == "soft") add(verify::LayerKind::samsa_soft);
    else throw ConfigError("--modes", "unknown bench mode '" + m + "'");
  }
  if (with_full) add(verify::LayerKind::full);
  return rows;
}

}  // namespace

int main(int argc, char** argv) {
  retain_freed_memory();
  CLI::App app{"samsa: sampled self-attention with differentiable top-k selection"};
  app.footer(config_help());
  app.require_subcommand(1);

  Overrides ov_train, ov_eval, ov_grad, ov_oracle, ov_bench, ov_inspect;

  auto* train_cmd = app.add_subcommand("train", "train a model on a synthetic task");
  ov_train.common(train_cmd);
  ov_train.model(train_cmd);
  train_cmd->footer(config_help());

  std::string checkpoint, split = "val";
  auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint");
  ov_eval.common(eval_cmd);
  eval_cmd->add_option("--checkpoint", checkpoint, "checkpoint file")->required();
  eval_cmd->add_option("--split", split, "train | val | test")->check(CLI::IsMember({"train", "val", "test"}));
  eval_cmd->footer(config_help());

  std::string target = "all";
  verify::GradcheckSize gsize;
  auto* grad_cmd = app.add_subcommand("gradcheck", "finite-difference gradient checks (64-bit)");
  ov_grad.common(grad_cmd);
  grad_cmd->add_option("--target", target, "all or one of the named checks");
  grad_cmd->add_option("--n", gsize.n, "candidate rows for sampler targets");
  grad_cmd->add_option("--k", gsize.k, "selected rows for sampler targets");

  std::size_t n_max = 12, k_max = 6, trials = 500;
  auto* oracle_cmd = app.add_subcommand("oracle", "arg_topk against exhaustive subset enumeration");
  ov_oracle.common(oracle_cmd);
  oracle_cmd->add_option("--n-max", n_max, "largest n")->check(CLI::Range(2, 20));
  oracle_cmd->add_option("--k-max", k_max, "largest k")->check(CLI::Range(1, 20));
  oracle_cmd->add_option("--trials", trials, "random instances");

  std::vector<std::size_t> bench_n{1024};
  std::size_t repeats = 3;
  std::string compare;
  std::vector<std::string> modes{"hard"};
  double min_ratio = 0;
  auto* bench_cmd = app.add_subcommand("bench", "layer forward wall time, sampled vs full attention");
  ov_bench.common(bench_cmd);
  ov_bench.bind(bench_cmd, "--k", "model.k", "tokens per head");
  ov_bench.bind(bench_cmd, "--heads", "model.n_heads", "heads");
  ov_bench.bind(bench_cmd, "--d-model", "model.d_model", "width");
  bench_cmd->add_option("--n", bench_n, "sequence lengths")->delimiter(',');
  bench_cmd->add_option("--repeats", repeats, "timed repeats per point (median reported)");
  bench_cmd->add_option("--compare", compare, "also time this baseline")->check(CLI::IsMember({"full"}));
  bench_cmd->add_option("--modes", modes, "sampler modes: hard,soft")->delimiter(',');
  bench_cmd->add_option("--min-ratio", min_ratio, "fail unless full/hard time ratio reaches this at every n");

  std::string inspect_path;
  auto* inspect_cmd = app.add_subcommand("inspect-checkpoint", "print checkpoint header and tensor statistics");
  ov_inspect.common(inspect_cmd);
  inspect_cmd->add_option("path", inspect_path, "checkpoint file")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kConfigError;
  }

  try {
    if (train_cmd->parsed()) {
      const auto c = ov_train.resolve();
      return c.precision == 64 ? run_train<double>(c) : run_train<float>(c);
    }

    if (eval_cmd->parsed()) {
      const auto ck = load_checkpoint(checkpoint);
      RunConfig base;
      if (ck.header.contains("config"))
        for (const auto& [key, value] : ck.header["config"].items()) set_config(base, key, value.get<std::string>());
      const auto c = ov_eval.resolve(base);
      return c.precision == 64 ? run_eval<double>(c, ck, split) : run_eval<float>(c, ck, split);
    }

    if (grad_cmd->parsed()) {
      RunConfig base;
      base.precision = 64;
      const auto c = ov_grad.resolve(base);
      if (c.precision != 64) throw ConfigError("run.precision", "gradcheck runs at 64-bit only (--precision 64)");
      gsize.seed = c.seed;
      std::vector<std::string> targets;
      if (target == "all") targets = verify::gradcheck_targets();
      else targets.push_back(target);
      json out = json::object();
      bool pass = true;
      for (const auto& t : targets) {
        try {
          const auto r = verify::run_gradcheck(t, gsize);
          out[t] = verify::to_json(r);
          pass = pass && r.pass;
        } catch (const std::invalid_argument& e) {
          throw ConfigError("--target", e.what());
        }
      }
      std::cout << out.dump(2) << "\n";
      return pass ? kOk : kCheckFailed;
    }

    if (oracle_cmd->parsed()) {
      const auto c = ov_oracle.resolve();
      const auto r = c.precision == 64 ? verify::oracle_sweep<double>(n_max, k_max, trials, c.seed)
                                       : verify::oracle_sweep<float>(n_max, k_max, trials, c.seed);
      std::cout << verify::to_json(r).dump(2) << "\n";
      return r.pass() ? kOk : kCheckFailed;
    }

    if (bench_cmd->parsed()) {
      const auto c = ov_bench.resolve();
      std::map<std::string, json> medians;
      const bool with_full = compare == "full";
      const auto rows = c.precision == 64
                            ? bench_rows<double>(bench_n, c.model.attention, modes, with_full, repeats, c.seed, medians)
                            : bench_rows<float>(bench_n, c.model.attention, modes, with_full, repeats, c.seed, medians);
      json out{{"precision", c.precision}, {"rows", rows}};
      bool pass = true;
      if (with_full) {
        json ratios = json::object();
        for (const auto& m : modes) {
          const std::string name = m == "hard" ? "samsa-hard" : "samsa-soft";
          for (std::size_t n : bench_n) {
            const double r = medians["full"][std::to_string(n)].get<double>() /
                             medians[name][std::to_string(n)].get<double>();
            ratios["full_over_" + m][std::to_string(n)] = r;
            if (m == "hard" && min_ratio > 0 && r < min_ratio) pass = false;
          }
        }
        out["speed_ratio"] = ratios;
      }
      if (modes.size() > 1) {
        json hs = json::object();
        for (std::size_t n : bench_n)
          hs[std::to_string(n)] = medians["samsa-soft"][std::to_string(n)].get<double>() /
                                  medians["samsa-hard"][std::to_string(n)].get<double>();
        out["soft_over_hard"] = hs;
      }
      std::cout << out.dump(2) << "\n";
      return pass ? kOk : kCheckFailed;
    }

    if (inspect_cmd->parsed()) {
      (void)ov_inspect.resolve();
      const auto ck = load_checkpoint(inspect_path);
      json tensors = json::object();
      for (const auto& name : ck.order) tensors[name] = tensor_stats(ck.tensors.at(name));
      json header = ck.header;
      header.erase("tensors");
      std::cout << json{{"header", header}, {"tensors", tensors}}.dump(2) << "\n";
      return kOk;
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error [" << e.key() << "]: " << e.what() << "\n";
    return kConfigError;
  } catch (const CheckpointError& e) {
    std::cerr << "checkpoint error: " << e.what() << "\n";
    return kConfigError;
  } catch (const DivergenceError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kNumericError;
  }
  return kOk;
}
