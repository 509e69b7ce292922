// mfhogp: generate datasets, train and evaluate emulators, run benchmarks.

#include <chrono>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "mfhogp/mfhogp.hpp"

using namespace mfhogp;
namespace fs = std::filesystem;

namespace {

struct Flags {
  std::string config;
  std::optional<std::string> dataset, out, preset, model, method, init;
  std::optional<std::size_t> bases, factors, fidelities, epochs, samples, mc_samples, log_every, test_count;
  std::optional<double> lr, lengthscale_floor, h, threshold;
  std::optional<std::uint64_t> seed;
  std::vector<std::size_t> counts, bases_list;
  std::vector<std::string> methods;
  std::vector<std::uint64_t> seeds;
};

void add_training_flags(CLI::App* c, Flags& f) {
  c->add_option("--factors", f.factors, "CP factors per basis (R)");
  c->add_option("--epochs", f.epochs, "Adam steps");
  c->add_option("--lr", f.lr, "learning rate");
  c->add_option("--mc-samples", f.mc_samples, "reparameterised draws per step");
  c->add_option("--init", f.init, "initialisation: pca or random")->check(CLI::IsMember({"pca", "random"}));
  c->add_option("--lengthscale-floor", f.lengthscale_floor, "keep input lengthscales >= this fraction of their initial values");
  c->add_option("--log-every", f.log_every, "trace interval in steps");
  c->add_option("--samples", f.samples, "predictive samples S");
  c->add_option("--config", f.config, "JSON config file; flags take precedence");
}

/// Resolved settings: built-in defaults, then the config file, then flags.
Json resolve(const Flags& f, Json defaults) {
  Json j = std::move(defaults);
  if (!f.config.empty()) j.merge_patch(read_json(f.config));
  auto put = [&j](const char* key, const auto& v) {
    if (v) j[key] = *v;
  };
  put("dataset", f.dataset);
  put("out", f.out);
  put("preset", f.preset);
  put("model", f.model);
  put("method", f.method);
  put("init", f.init);
  put("bases", f.bases);
  put("factors", f.factors);
  put("fidelities", f.fidelities);
  put("epochs", f.epochs);
  put("samples", f.samples);
  put("mc_samples", f.mc_samples);
  put("log_every", f.log_every);
  put("test_count", f.test_count);
  put("learning_rate", f.lr);
  put("lengthscale_floor", f.lengthscale_floor);
  put("h", f.h);
  put("threshold", f.threshold);
  put("seed", f.seed);
  if (!f.counts.empty()) j["counts"] = f.counts;
  if (!f.bases_list.empty()) j["bases"] = f.bases_list;
  if (!f.methods.empty()) j["methods"] = f.methods;
  if (!f.seeds.empty()) j["seeds"] = f.seeds;
  return j;
}

std::string required(const Json& j, const char* key) {
  require(j.contains(key) && j[key].is_string() && !j[key].get<std::string>().empty(), ErrorCode::InvalidArgument,
          std::string("--") + key + " is required");
  return j[key];
}

bool is_small_preset(const std::string& name) { return name.size() > 6 && name.ends_with("-small"); }

/// Training defaults for a preset, before any file or flag overrides.
RunConfig defaults_for(const std::string& preset) { return is_small_preset(preset) ? small_preset_config() : RunConfig{}; }

std::string dataset_preset(const fs::path& dir) { return read_json(dir / "manifest.json").value("preset", ""); }

/// Keeps the first F levels; F = 0 keeps all of them.
MultiFidelityDataset first_levels(MultiFidelityDataset data, std::size_t f) {
  if (f == 0) return data;
  require(f <= data.fidelity_count(), ErrorCode::InvalidArgument,
          "--fidelities " + std::to_string(f) + " exceeds the " + std::to_string(data.fidelity_count()) + " levels in the dataset");
  data.levels.resize(f);
  return data;
}

void write_manifest(const fs::path& dir, const std::string& command, Json resolved) {
  resolved["command"] = command;
  resolved["tool_version"] = 1;
  write_text(dir / "manifest.json", resolved.dump(2) + "\n");
}

// ---------------------------------------------------------------------------

int cmd_generate(const Flags& f) {
  const Json j = resolve(f, {{"seed", 0}});
  const fs::path out = required(j, "out");
  const Preset p = find_preset(required(j, "preset"));
  const auto counts = j.contains("counts") ? j["counts"].get<std::vector<std::size_t>>() : p.counts;
  const std::size_t test_count = j.value("test_count", p.test_count);
  const std::uint64_t seed = j["seed"];
  const GeneratedData g = generate_dataset(p.spec, counts, seed, test_count);
  write_dataset(out, g, p.name);
  std::cout << "wrote " << out.string() << ": " << equation_name(p.spec.equation) << ", N = (";
  for (std::size_t i = 0; i < counts.size(); ++i) std::cout << (i ? "," : "") << counts[i];
  std::cout << "), d = " << g.train.output_dim() << ", test " << test_count << " at fidelity " << g.test_fidelity << "\n";
  return 0;
}

int cmd_train(const Flags& f) {
  Json seed_json = resolve(f, Json::object());
  const fs::path dataset = required(seed_json, "dataset");
  RunConfig defaults = defaults_for(dataset_preset(dataset));
  Json j = defaults.to_json();
  j["method"] = "mfhogp";
  j["fidelities"] = 0;
  j = resolve(f, j);
  const fs::path out = required(j, "out");
  RunConfig cfg;
  cfg.merge(j);
  const std::string method = j["method"];
  const GeneratedData g = read_dataset(dataset);
  const MultiFidelityDataset train = first_levels(g.train, j["fidelities"]);
  fs::create_directories(out);

  const Standardizer st = Standardizer::fit(train);
  Json extra{{"dataset", fs::absolute(dataset).string()},
             {"fidelities", train.fidelity_count()},
             {"method", method},
             {"standardizer", st.to_json()},
             {"config", cfg.to_json()}};
  Json summary{{"method", method}};
  const auto t0 = std::chrono::steady_clock::now();
  if (method == "mfhogp") {
    std::ofstream trace(out / "trace.jsonl");
    require(trace.good(), ErrorCode::IoFailure, "cannot write " + (out / "trace.jsonl").string());
    const TrainedEmulator e = train_emulator(train, cfg, [&](const TraceRecord& r) {
      trace << Json{{"step", r.step}, {"elbo", r.elbo}, {"rmse", r.rmse}, {"seconds", r.seconds}}.dump() << "\n";
      std::cerr << "step " << r.step << "  elbo " << r.elbo << "\n";
    });
    save_model(out / "model.mfhg", e.model, extra);
    summary["elbo"] = e.trace.empty() ? Json(nullptr) : Json(e.trace.back().elbo);
    summary["train_rmse"] = training_rmse(e.model, e.standardized);
  } else {
    BaselineMode mode = BaselineMode::F1;
    if (method == "pcagp-ftop") mode = BaselineMode::FTop;
    else if (method == "pcagp-all") mode = BaselineMode::All;
    else require(method == "pcagp-f1", ErrorCode::InvalidArgument, "unknown method '" + method + "'");
    const FidelityData set = baseline_training_set(train, mode);
    ScalarGpOptions o;
    o.restarts = cfg.baseline_restarts;
    o.steps = cfg.baseline_steps;
    o.seed = cfg.seed;
    const PcaGpModel m = fit_pca_gp(st.inputs(set.inputs), set.outputs, cfg.bases, o);
    save_pca_gp(out / "model.mfhg", m, extra);
    summary["train_rmse"] = std::vector<double>{rmse(predict_pca_gp(m, st.inputs(set.inputs)).mean, set.outputs)};
  }
  summary["seconds"] = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  write_text(out / "summary.json", summary.dump(2) + "\n");
  write_manifest(out, "train", j);
  std::cout << summary.dump() << "\n";
  return 0;
}

int cmd_predict(const Flags& f) {
  Json j = resolve(f, {{"samples", kDefaultPredictiveSamples}, {"seed", 0}});
  const fs::path model_path = required(j, "model");
  const fs::path out = required(j, "out");
  const auto [header, arrays] = read_container(model_path);
  const Json extra = header.value("extra", Json::object());
  if (!j.contains("dataset")) j["dataset"] = extra.value("dataset", "");
  const GeneratedData g = read_dataset(required(j, "dataset"));
  const Standardizer st = Standardizer::from_json(extra.at("standardizer"));
  const std::size_t samples = j["samples"];
  const std::uint64_t seed = j["seed"];
  fs::create_directories(out);

  Matrix mean, var;
  double loglik = 0.0;
  if (header.value("format", "") == "mfhogp-model") {
    TrainedEmulator e;
    e.model = load_model(model_path).model;
    e.standardizer = st;
    e.standardized = st.apply(first_levels(g.train, extra.value("fidelities", std::size_t{0})));
    const EvaluatedPrediction p = evaluate_emulator(e, g.test, samples, seed);
    mean = p.mean;
    var = p.variance;
    loglik = p.loglik;
  } else {
    const PcaGpPrediction p = predict_pca_gp(load_pca_gp(model_path).model, st.inputs(g.test.inputs));
    mean = p.mean;
    var = p.variance;
    loglik = pca_gp_log_likelihood(p, g.test.outputs);
  }
  write_matrix_f64(out / "mean.f64", mean);
  write_matrix_f64(out / "var.f64", var);
  const Json summary{{"rows", mean.rows()},
                     {"cols", mean.cols()},
                     {"rmse", rmse(mean, g.test.outputs)},
                     {"n_rmse", n_rmse(mean, g.test.outputs)},
                     {"loglik", loglik},
                     {"test_hash", matrix_hash(g.test.outputs)}};
  write_text(out / "summary.json", summary.dump(2) + "\n");
  write_manifest(out, "predict", j);
  std::cout << summary.dump() << "\n";
  return 0;
}

int cmd_benchmark(const Flags& f) {
  Json first = resolve(f, Json::object());
  const std::string preset_name = first.value("preset", first.contains("dataset") ? dataset_preset(first["dataset"].get<std::string>()) : "");
  BenchmarkPlan plan;
  plan.config = defaults_for(preset_name);
  Json j = plan.config.to_json();
  j["methods"] = plan.methods;
  j["bases"] = plan.bases;
  j["seeds"] = plan.seeds;
  j = resolve(f, j);
  require(j.contains("dataset") != j.contains("preset"), ErrorCode::InvalidArgument, "give exactly one of --dataset or --preset");
  const fs::path out = required(j, "out");
  plan.methods = j["methods"].get<std::vector<std::string>>();
  plan.bases = j["bases"].is_array() ? j["bases"].get<std::vector<std::size_t>>() : std::vector<std::size_t>{j["bases"].get<std::size_t>()};
  j["bases"] = plan.bases;
  plan.seeds = j["seeds"].get<std::vector<std::uint64_t>>();
  Json run = j;
  run.erase("bases");
  plan.config.merge(run);

  const DatasetProvider provider =
      j.contains("preset") ? regenerated_dataset(find_preset(j["preset"])) : fixed_dataset(read_dataset(j["dataset"].get<std::string>()));
  fs::create_directories(out);
  write_manifest(out, "benchmark", j);
  std::cout << csv_header() << "\n";
  const auto rows = run_benchmark(provider, plan, [](const BenchmarkRow& r) { std::cout << csv_line(r) << std::endl; });
  std::string csv = csv_header() + "\n";
  for (const auto& r : rows) csv += csv_line(r) + "\n";
  write_text(out / "results.csv", csv);
  const std::string table = format_table(summarise(rows));
  write_text(out / "table.txt", table);
  std::cout << "\n" << table;
  return 0;
}

int cmd_check_gradients(const Flags& f) {
  const Json j = resolve(f, {{"bases", 2}, {"factors", 1}, {"seed", 0}, {"h", 1e-5}, {"threshold", 1e-4}});
  MultiFidelityDataset data;
  if (j.contains("dataset")) {
    data = Standardizer::fit(read_dataset(j["dataset"].get<std::string>()).train).apply(read_dataset(j["dataset"].get<std::string>()).train);
  } else {
    // nested two-level instance with N = (6, 3), d = 4
    RngStream rng(j["seed"].get<std::uint64_t>());
    Matrix x(6, 1), y1(6, 4), y2(3, 4);
    for (Eigen::Index r = 0; r < 6; ++r) x(r, 0) = 1.5 * static_cast<double>(r) + 0.2 * rng.normal();
    for (Eigen::Index r = 0; r < 6; ++r)
      for (Eigen::Index c = 0; c < 4; ++c) y1(r, c) = rng.normal();
    for (Eigen::Index r = 0; r < 3; ++r)
      for (Eigen::Index c = 0; c < 4; ++c) y2(r, c) = rng.normal();
    data.levels = {FidelityData{x, y1, {}}, FidelityData{x.topRows(3), y2, {0, 1, 2}}};
  }
  const ModelState m = initialize_model(data, InitOptions{.bases = j["bases"], .factors = j["factors"], .seed = j["seed"]});
  const GradientCheckReport r = check_gradients(m, data, j["seed"], j["h"], ElboOptions{},
                                                [&](const ModelState& s) { return elbo_gradient(s, data, j["seed"]).gradient; },
                                                j["threshold"]);
  std::size_t failing = 0;
  for (const auto& e : r.entries)
    if (!e.pass) {
      ++failing;
      std::cout << "FAIL " << e.path << " analytic " << e.analytic << " numeric " << e.numeric << " rel " << e.relative_error << "\n";
    }
  std::cout << r.entries.size() << " parameters checked, " << failing << " above " << r.threshold << ", max relative error "
            << r.max_relative_error << "\n";
  return r.all_pass() ? 0 : 2;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multi-fidelity high-order GP emulator"};
  app.require_subcommand(1);
  Flags f;

  auto* gen = app.add_subcommand("generate", "solve a PDE preset and write a dataset directory");
  gen->add_option("--preset", f.preset, "preset name")->required();
  gen->add_option("--out", f.out, "output directory")->required();
  gen->add_option("--seed", f.seed, "generation seed");
  gen->add_option("--counts", f.counts, "per-level training counts, e.g. 100,10")->delimiter(',');
  gen->add_option("--test-count", f.test_count, "held-out examples");
  gen->add_option("--config", f.config, "JSON config file; flags take precedence");

  auto* train = app.add_subcommand("train", "fit a model on a dataset directory");
  train->add_option("--dataset", f.dataset, "dataset directory");
  train->add_option("--out", f.out, "output directory");
  train->add_option("--method", f.method, "mfhogp, pcagp-f1, pcagp-ftop or pcagp-all");
  train->add_option("--bases", f.bases, "bases per level (K)");
  train->add_option("--fidelities", f.fidelities, "use the first F levels (0 = all)");
  train->add_option("--seed", f.seed, "training seed");
  add_training_flags(train, f);

  auto* pred = app.add_subcommand("predict", "predict the test split of a dataset");
  pred->add_option("--model", f.model, "checkpoint written by train");
  pred->add_option("--dataset", f.dataset, "dataset directory (default: the one used in training)");
  pred->add_option("--out", f.out, "output directory");
  pred->add_option("--samples", f.samples, "predictive samples S");
  pred->add_option("--seed", f.seed, "sampling seed");
  pred->add_option("--config", f.config, "JSON config file; flags take precedence");

  auto* bench = app.add_subcommand("benchmark", "score every method over K values and seeds");
  bench->add_option("--dataset", f.dataset, "fixed dataset directory");
  bench->add_option("--preset", f.preset, "regenerate this preset with each seed");
  bench->add_option("--out", f.out, "output directory");
  bench->add_option("--bases", f.bases_list, "K values, e.g. 5,10,15,20")->delimiter(',');
  bench->add_option("--seeds", f.seeds, "seeds, e.g. 0,1,2,3,4")->delimiter(',');
  bench->add_option("--methods", f.methods, "subset of mfhogp,pcagp-f1,pcagp-ftop,pcagp-all")->delimiter(',');
  add_training_flags(bench, f);

  auto* grad = app.add_subcommand("check-gradients", "compare analytic and finite-difference ELBO gradients");
  grad->add_option("--dataset", f.dataset, "dataset directory (default: a built-in two-level instance)");
  grad->add_option("--bases", f.bases, "bases per level (K)");
  grad->add_option("--factors", f.factors, "CP factors per basis (R)");
  grad->add_option("--seed", f.seed, "seed for the instance and the estimator");
  grad->add_option("--step", f.h, "central-difference step");
  grad->add_option("--threshold", f.threshold, "relative error bound");
  grad->add_option("--config", f.config, "JSON config file; flags take precedence");

  CLI11_PARSE(app, argc, argv);
  try {
    if (gen->parsed()) return cmd_generate(f);
    if (train->parsed()) return cmd_train(f);
    if (pred->parsed()) return cmd_predict(f);
    if (bench->parsed()) return cmd_benchmark(f);
    if (grad->parsed()) return cmd_check_gradients(f);
  } catch (const Error& e) {
    std::cerr << "error[" << to_string(e.code()) << "]: " << e.detail() << "\n";
    return 1;
  } catch (const Json::exception& e) {
    std::cerr << "error[InvalidArgument]: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error[Internal]: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
