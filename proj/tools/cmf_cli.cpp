#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "cmf/errors.hpp"
#include "cmf/evalcli.hpp"

namespace fs = std::filesystem;
using namespace cmf;

namespace {

// Missing inputs are usage errors (exit 2), checked before anything is written.
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Options {
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> n;
  std::optional<double> lambda_geo;
  std::optional<double> beta;
  std::string mode;
  std::string config;
  std::string out;
  std::string data;
  std::string checkpoint;
  std::string tag = "model";
  bool resume = false;
  bool quiet = false;
};

void require_file(const std::string& path, const char* what) {
  if (path.empty()) throw UsageError(std::string(what) + " is required");
  if (!fs::is_regular_file(path)) throw UsageError(std::string(what) + " not found: " + path);
}

// Stencil steps come from the config when it already uses a stencil.
diff::DiffMode parse_mode(const std::string& mode, const diff::DiffMode& fallback) {
  if (mode.empty()) return fallback;
  if (mode == "exact") return diff::DiffMode::exact();
  if (fallback.kind == diff::DiffKind::Stencil) return fallback;
  return diff::DiffMode::stencil(1e-3, 1e-2);
}

eval::RunConfig run_config(const Options& o) {
  eval::RunConfig c;
  if (!o.config.empty()) {
    require_file(o.config, "--config");
    c = eval::load_config(o.config);
  }
  if (o.seed) c.train.seed = *o.seed;
  if (o.n) c.n = *o.n;
  if (o.lambda_geo) c.train.weights.lambda_geo = *o.lambda_geo;
  if (o.beta) c.train.weights.beta = *o.beta;
  c.validate();
  return c;
}

scm::DatasetSplit load_or_generate(const Options& o, const eval::RunConfig& c) {
  if (!o.data.empty()) {
    require_file(o.data, "--data");
    return scm::import_dataset(o.data);
  }
  return scm::sample_dataset(c.n, c.train.seed, c.label_threshold);
}

void say(const Options& o, const std::string& s) {
  if (!o.quiet) std::cerr << s << '\n';
}

void cmd_gen(const Options& o) {
  const eval::RunConfig c = run_config(o);
  const auto data = scm::sample_dataset(c.n, c.train.seed, c.label_threshold);
  fs::create_directories(o.out);
  scm::export_dataset(data, fs::path(o.out) / "dataset.csv");
  say(o, "wrote " + (fs::path(o.out) / "dataset.csv").string());
}

void cmd_train(const Options& o) {
  eval::RunConfig c = run_config(o);
  c.train.geometry_mode = parse_mode(o.mode, c.train.geometry_mode);
  const fs::path out = o.out;
  const fs::path ckpt = out / "checkpoint.json";
  if (o.resume) require_file(ckpt.string(), "checkpoint to resume");
  const auto data = load_or_generate(o, c);
  fs::create_directories(out);

  train::TrainOptions opts;
  opts.checkpoint_path = ckpt;
  opts.log_path = out / "train_log.csv";
  opts.on_epoch = [&](std::size_t epoch, const obj::LossBreakdown& v) {
    if (epoch % 25 == 0) {
      char buf[128];
      std::snprintf(buf, sizeof buf, "epoch %zu: val total %.4f mse %.4f bce %.4f", epoch, v.total,
                    v.recon_mse, v.cls_bce);
      say(o, buf);
    }
  };
  train::Trainer t = o.resume ? train::Trainer::resume(ckpt, data)
                              : train::Trainer(c.train, data, net::ModelBundle::create(c.arch, c.train.seed));
  t.run(opts);
  net::write_file_atomic(out / "config.txt", eval::format_config(c));
  say(o, "wrote " + ckpt.string());
}

void cmd_eval(const Options& o) {
  require_file(o.checkpoint, "--checkpoint");
  const eval::RunConfig c = run_config(o);
  const auto data = load_or_generate(o, c);
  const net::ModelBundle model = eval::load_model(o.checkpoint);
  const diff::DiffMode mode = parse_mode(o.mode.empty() ? "exact" : o.mode, c.train.geometry_mode);
  const eval::MetricReport r = eval::evaluate(model, data.test, o.tag, eval::config_digest(c), mode);
  fs::create_directories(o.out);
  eval::write_report(fs::path(o.out) / "report.json", r);
  std::cout << eval::format_table({r});
}

void cmd_dump(const Options& o) {
  require_file(o.checkpoint, "--checkpoint");
  const eval::RunConfig c = run_config(o);
  const auto data = load_or_generate(o, c);
  const net::ModelBundle model = eval::load_model(o.checkpoint);
  fs::create_directories(o.out);
  eval::dump_latents(model, data.test, fs::path(o.out) / "latents.csv");
  say(o, "wrote " + (fs::path(o.out) / "latents.csv").string());
}

void cmd_experiment(const Options& o) {
  eval::RunConfig c = run_config(o);
  c.train.geometry_mode = parse_mode(o.mode, c.train.geometry_mode);
  const auto r = eval::run_experiment(c, o.out, [&](const std::string& s) { say(o, s); });
  std::cout << eval::format_table({r.baseline, r.cmf});
  std::printf("centroid gap: baseline %.4f cmf %.4f\n", r.baseline_centroid_gap, r.cmf_centroid_gap);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Counterfactual geometry toolkit: data, training, evaluation"};
  app.require_subcommand(1);
  Options o;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--seed", o.seed, "Dataset and initialization seed");
    sub->add_option("--n", o.n, "Dataset size");
    sub->add_option("--config", o.config, "key = value run configuration");
    sub->add_option("--out", o.out, "Output directory")->required();
    sub->add_flag("--quiet", o.quiet, "No progress on stderr");
  };
  auto add_weights = [&](CLI::App* sub) {
    sub->add_option("--lambda-geo", o.lambda_geo, "Geometric loss weight")->check(CLI::NonNegativeNumber);
    sub->add_option("--beta", o.beta, "Curvature share of the geometric loss")->check(CLI::NonNegativeNumber);
  };
  auto add_mode = [&](CLI::App* sub, const char* help) {
    sub->add_option("--mode", o.mode, help)->check(CLI::IsMember({"exact", "stencil"}));
  };

  auto* gen = app.add_subcommand("gen", "Sample a dataset to <out>/dataset.csv");
  add_common(gen);
  auto* trn = app.add_subcommand("train", "Train to <out>/checkpoint.json and <out>/train_log.csv");
  add_common(trn);
  add_weights(trn);
  add_mode(trn, "Derivatives for the geometric training loss");
  trn->add_option("--data", o.data, "Dataset CSV (default: sample from --seed/--n)");
  trn->add_flag("--resume", o.resume, "Continue from <out>/checkpoint.json");
  auto* ev = app.add_subcommand("eval", "Write <out>/report.json for a checkpoint");
  add_common(ev);
  add_mode(ev, "Derivatives for the geometric metrics (default exact)");
  ev->add_option("--checkpoint", o.checkpoint, "Checkpoint to evaluate")->required();
  ev->add_option("--data", o.data, "Dataset CSV (default: sample from --seed/--n)");
  ev->add_option("--tag", o.tag, "Model name in the report");
  auto* dump = app.add_subcommand("dump-latents", "Write <out>/latents.csv for a checkpoint");
  add_common(dump);
  dump->add_option("--checkpoint", o.checkpoint, "Checkpoint to encode with")->required();
  dump->add_option("--data", o.data, "Dataset CSV (default: sample from --seed/--n)");
  auto* exp = app.add_subcommand("experiment", "Baseline vs geometric run with a comparison table");
  add_common(exp);
  add_weights(exp);
  add_mode(exp, "Derivatives for the geometric training loss");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 2;  // help requests exit 0
  }

  try {
    if (*gen) cmd_gen(o);
    else if (*trn) cmd_train(o);
    else if (*ev) cmd_eval(o);
    else if (*dump) cmd_dump(o);
    else if (*exp) cmd_experiment(o);
    return 0;
  } catch (const UsageError& e) {
    std::cerr << "cmf: " << e.what() << '\n';
    return 2;
  } catch (const ArgumentError& e) {
    std::cerr << "cmf: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "cmf: " << e.what() << '\n';
    return 1;
  }
}
