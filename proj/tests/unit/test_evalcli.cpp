#include <cmath>
#include <filesystem>
#include <fstream>

#include "cmf/evalcli.hpp"
#include "cmf/io_util.hpp"
#include "doctest.h"

using namespace cmf::eval;
using cmf::net::ModelBundle;

namespace {

std::filesystem::path temp_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("cmf_test_evalcli_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

// Encoder keeps (x1, x2), decoder puts them back with x3 = 0, classifier
// outputs a constant zero logit.
ModelBundle projection_model() {
  ModelBundle m;
  m.latent_dim = 2;
  m.encoder.spec = {{3, 2}};
  m.encoder.params.values = {1, 0, 0, 1, 0, 0, 0, 0};
  m.decoder.spec = {{2, 3}};
  m.decoder.params.values = {1, 0, 0, 0, 1, 0, 0, 0, 0};
  m.classifier.spec = {{2, 1}};
  m.classifier.params.values = {0, 0, 0};
  return m;
}

RunConfig tiny_run() {
  RunConfig c;
  c.n = 200;
  c.arch.hidden = {8};
  c.arch.classifier_hidden = {4};
  c.train.epochs = 2;
  c.train.batch_size = 32;
  c.train.weights.lambda_geo = 0.1;
  return c;
}

}  // namespace

TEST_CASE("config text parses, formats and round trips") {
  const RunConfig c = parse_config(
      "# comment line\n"
      "n = 500\n"
      "seed = 42   # trailing comment\n"
      "learning_rate = 3e-3\n"
      "optimizer = sgd\n"
      "lambda_geo = 2.5\n"
      "geo_squared = true\n"
      "geometry_mode = exact\n"
      "hidden = 32,16\n"
      "classifier_hidden = none\n"
      "activation = softplus\n");
  CHECK(c.n == 500);
  CHECK(c.train.seed == 42);
  CHECK(c.train.learning_rate == 3e-3);
  CHECK(c.train.optimizer.kind == cmf::train::OptimizerKind::Sgd);
  CHECK(c.train.weights.lambda_geo == 2.5);
  CHECK(c.train.weights.geo_squared);
  CHECK(c.train.geometry_mode.kind == cmf::diff::DiffKind::Exact);
  CHECK(c.arch.hidden == std::vector<std::size_t>{32, 16});
  CHECK(c.arch.classifier_hidden.empty());
  CHECK(c.arch.activation == cmf::net::Activation::softplus());
  CHECK(c.train.weights.beta == kRunBeta);

  const RunConfig back = parse_config(format_config(c));
  CHECK(to_json(back) == to_json(c));
  CHECK(format_config(back) == format_config(c));
  CHECK(format_config(RunConfig{}) == format_config(parse_config("")));
}

TEST_CASE("config errors name the offending line") {
  auto message = [](const std::string& text) {
    try {
      parse_config(text);
    } catch (const cmf::ArgumentError& e) {
      return std::string(e.what());
    }
    return std::string("no error");
  };
  CHECK(message("n = 100\nbogus = 1\n").find("line 2") != std::string::npos);
  CHECK(message("n = 100\nbogus = 1\n").find("bogus") != std::string::npos);
  CHECK(message("epochs = ten\n").find("line 1") != std::string::npos);
  CHECK(message("epochs = 1.5\n").find("line 1") != std::string::npos);
  CHECK(message("optimizer = rmsprop\n").find("line 1") != std::string::npos);
  CHECK(message("\n\nn\n").find("line 3") != std::string::npos);
  CHECK(message("geo_squared = maybe\n").find("line 1") != std::string::npos);

  RunConfig c;
  c.n = 5;
  CHECK_THROWS_AS(c.validate(), cmf::ArgumentError);
  CHECK_THROWS_AS(load_config("/nonexistent/run.cfg"), cmf::IoError);
}

TEST_CASE("config digest is stable and sensitive") {
  const RunConfig a;
  CHECK(config_digest(a) == config_digest(RunConfig{}));
  CHECK(config_digest(a).size() == 16);
  RunConfig b = a;
  b.train.weights.beta = 0.25;
  CHECK(config_digest(a) != config_digest(b));
}

TEST_CASE("report JSON round trips and rejects unknown versions") {
  MetricReport r{"cmf", 0.995, 0.754, 0.018, 0.046, 300, "0123456789abcdef"};
  const MetricReport back = report_from_json(to_json(r));
  CHECK(to_json(back) == to_json(r));
  CHECK(back.accuracy == 0.995);

  auto j = to_json(r);
  j["version"] = kReportVersion + 1;
  CHECK_THROWS_AS(report_from_json(j), cmf::FormatError);
  j = to_json(r);
  j.erase("mse");
  CHECK_THROWS_AS(report_from_json(j), cmf::FormatError);
  CHECK_THROWS_AS(report_from_json(nlohmann::json{{"format", "other"}}), cmf::FormatError);
}

TEST_CASE("projection model gives closed-form metrics") {
  const auto data = cmf::scm::sample_dataset(200, 3);
  const ModelBundle m = projection_model();
  const MetricReport r = evaluate(m, data.test, "proj", "d");

  double x3_sq = 0.0;
  std::size_t zeros = 0;
  for (const auto& rec : data.test) {
    x3_sq += rec.x[2] * rec.x[2];
    zeros += rec.y == 0 ? 1 : 0;
  }
  const double n = static_cast<double>(data.test.size());
  CHECK(r.n_test == data.test.size());
  CHECK(r.mse == doctest::Approx(x3_sq / n).epsilon(1e-12));
  CHECK(r.accuracy == doctest::Approx(static_cast<double>(zeros) / n));
  CHECK(r.metric_error == 0.0);
  CHECK(r.curvature_error == 0.0);

  for (const LatentRow& row : latents(m, data.test)) {
    const auto x = cmf::scm::structural_map(row.u, row.v, row.a);
    CHECK(row.z1 == x[0]);
    CHECK(row.z2 == x[1]);
  }
}

TEST_CASE("evaluation is pure and an untrained model sits near chance") {
  const auto data = cmf::scm::sample_dataset(1000, 11);
  const ModelBundle m = ModelBundle::create(cmf::net::Architecture{}, 11);
  const ModelBundle copy = m;
  const MetricReport a = evaluate(m, data.test, "init", "x");
  const MetricReport b = evaluate(m, data.test, "init", "x");
  CHECK(to_json(a).dump() == to_json(b).dump());
  CHECK(m == copy);
  CHECK(a.metric_error > 0.0);
  CHECK(std::isfinite(a.curvature_error));

  const MetricReport s = evaluate(m, data.test, "init", "x", cmf::diff::DiffMode::stencil(1e-3, 1e-2));
  CHECK(s.metric_error == doctest::Approx(a.metric_error).epsilon(1e-4));
  CHECK_THROWS_AS(evaluate(m, {}, "init", "x"), cmf::ArgumentError);

  // One random network can be a fixed, strongly signed function of u, so
  // chance level is checked on the average over initializations.
  double mean_acc = 0.0;
  for (std::uint64_t seed = 100; seed < 120; ++seed) {
    mean_acc += evaluate(ModelBundle::create(cmf::net::Architecture{}, seed), data.test, "init", "x")
                    .accuracy /
                20.0;
  }
  CHECK(mean_acc > 0.4);
  CHECK(mean_acc < 0.6);
}

TEST_CASE("latent dumps round trip and centroid gap") {
  auto dir = temp_dir("latents");
  const auto data = cmf::scm::sample_dataset(200, 5);
  const ModelBundle m = ModelBundle::create(cmf::net::Architecture{}, 5);
  dump_latents(m, data.test, dir / "lat.csv");

  std::ifstream in(dir / "lat.csv");
  std::string header;
  std::getline(in, header);
  CHECK(header == kLatentHeader);
  const auto rows = read_latents(dir / "lat.csv");
  REQUIRE(rows.size() == data.test.size());
  const auto direct = latents(m, data.test);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    CHECK(rows[i].z1 == direct[i].z1);
    CHECK(rows[i].zcf2 == direct[i].zcf2);
    CHECK(rows[i].a == data.test[i].a);
  }

  std::vector<LatentRow> pts{{0, 0, 0, 0, 0, 0, 0, 0}, {0, 0, 0, 0, 2, 0, 0, 0},
                             {0, 0, 1, 0, 1, 3, 0, 0}, {0, 0, 1, 0, 1, 5, 0, 0}};
  CHECK(centroid_gap(pts) == doctest::Approx(std::hypot(0.0, 4.0)));
  pts.resize(2);
  CHECK_THROWS_AS(centroid_gap(pts), cmf::ArgumentError);

  std::ofstream(dir / "bad.csv") << "u,v\n1,2\n";
  CHECK_THROWS_AS(read_latents(dir / "bad.csv"), cmf::FormatError);
}

TEST_CASE("load_model prefers the best snapshot") {
  auto dir = temp_dir("load");
  const ModelBundle a = projection_model();
  ModelBundle b = a;
  b.decoder.params.values[0] = 2.0;
  cmf::net::save_checkpoint(dir / "plain.json", {a, {}});
  CHECK(load_model(dir / "plain.json") == a);
  cmf::net::save_checkpoint(dir / "train.json", {a, {{"best_model", cmf::net::to_json(b)}}});
  CHECK(load_model(dir / "train.json") == b);
  CHECK_THROWS_AS(load_model(dir / "missing.json"), cmf::IoError);
}

TEST_CASE("experiment writes the table and artifacts") {
  auto dir = temp_dir("experiment");
  const RunConfig c = tiny_run();
  const ExperimentResult r = run_experiment(c, dir);
  for (const char* f : {"dataset.csv", "dataset.meta.json", "table.json", "table.txt"})
    CHECK(std::filesystem::exists(dir / f));
  for (const char* tag : {"baseline", "cmf"})
    for (const char* f : {"checkpoint.json", "train_log.csv", "report.json", "latents.csv"})
      CHECK(std::filesystem::exists(dir / tag / f));

  const auto table = nlohmann::json::parse(cmf::io::read_file(dir / "table.json"));
  CHECK(table["format"] == "cmf-table");
  CHECK(table["version"] == kTableVersion);
  CHECK(table["columns"] ==
        nlohmann::json{"model", "accuracy", "mse", "metric_error", "curvature_error"});
  REQUIRE(table["reports"].size() == 2);
  CHECK(report_from_json(table["reports"][0]).model == "baseline");
  CHECK(report_from_json(table["reports"][1]).model == "cmf");
  CHECK(table["centroid_gap"]["cmf"].get<double>() == r.cmf_centroid_gap);

  const auto on_disk =
      report_from_json(nlohmann::json::parse(cmf::io::read_file(dir / "cmf" / "report.json")));
  CHECK(to_json(on_disk) == to_json(r.cmf));
  CHECK(r.cmf.config_digest == config_digest(c));
  CHECK(r.baseline.config_digest != r.cmf.config_digest);
  CHECK(r.baseline.n_test == 30);
  CHECK(load_model(dir / "cmf" / "checkpoint.json").parameter_count() ==
        ModelBundle::create(c.arch, 0).parameter_count());
}
