#include "cmf/evalcli.hpp"

#include <cmath>
#include <cstdio>
#include <map>
#include <sstream>

#include "cmf/errors.hpp"
#include "cmf/geom.hpp"
#include "cmf/io_util.hpp"

namespace cmf::eval {
namespace {

using diff::Tape;
using diff::Tensor;
using diff::Var;

constexpr const char* kReportFormat = "cmf-report";
constexpr const char* kTableFormat = "cmf-table";

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

double to_double(const std::string& v, const std::string& where) {
  try {
    return io::parse_double(v, where);
  } catch (const FormatError& e) {
    throw ArgumentError(e.what());
  }
}

std::size_t to_count(const std::string& v, const std::string& where) {
  const double d = to_double(v, where);
  if (d < 0 || d != std::floor(d) || d > 9.0e15) {
    throw ArgumentError(where + ": expected a non-negative integer, got '" + v + "'");
  }
  return static_cast<std::size_t>(d);
}

bool to_bool(const std::string& v, const std::string& where) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ArgumentError(where + ": expected true or false, got '" + v + "'");
}

std::vector<std::size_t> to_widths(const std::string& v, const std::string& where) {
  std::vector<std::size_t> out;
  if (trim(v).empty() || trim(v) == "none") return out;
  for (const std::string& cell : io::split_csv_line(v)) out.push_back(to_count(trim(cell), where));
  return out;
}

std::string widths_text(const std::vector<std::size_t>& w) {
  if (w.empty()) return "none";
  std::string s;
  for (std::size_t i = 0; i < w.size(); ++i) s += (i ? "," : "") + std::to_string(w[i]);
  return s;
}

using Setter = std::function<void(RunConfig&, const std::string&, const std::string&)>;

const std::map<std::string, Setter>& setters() {
  static const std::map<std::string, Setter> table = {
      {"n", [](RunConfig& c, auto& v, auto& w) { c.n = to_count(v, w); }},
      {"label_threshold", [](RunConfig& c, auto& v, auto& w) { c.label_threshold = to_double(v, w); }},
      {"seed", [](RunConfig& c, auto& v, auto& w) { c.train.seed = to_count(v, w); }},
      {"epochs", [](RunConfig& c, auto& v, auto& w) { c.train.epochs = to_count(v, w); }},
      {"batch_size", [](RunConfig& c, auto& v, auto& w) { c.train.batch_size = to_count(v, w); }},
      {"learning_rate", [](RunConfig& c, auto& v, auto& w) { c.train.learning_rate = to_double(v, w); }},
      {"optimizer",
       [](RunConfig& c, auto& v, auto& w) {
         if (v == "adam") {
           c.train.optimizer.kind = train::OptimizerKind::Adam;
         } else if (v == "sgd") {
           c.train.optimizer.kind = train::OptimizerKind::Sgd;
         } else {
           throw ArgumentError(w + ": optimizer must be adam or sgd");
         }
       }},
      {"adam_beta1", [](RunConfig& c, auto& v, auto& w) { c.train.optimizer.beta1 = to_double(v, w); }},
      {"adam_beta2", [](RunConfig& c, auto& v, auto& w) { c.train.optimizer.beta2 = to_double(v, w); }},
      {"adam_eps", [](RunConfig& c, auto& v, auto& w) { c.train.optimizer.eps = to_double(v, w); }},
      {"sgd_momentum", [](RunConfig& c, auto& v, auto& w) { c.train.optimizer.momentum = to_double(v, w); }},
      {"lambda_geo", [](RunConfig& c, auto& v, auto& w) { c.train.weights.lambda_geo = to_double(v, w); }},
      {"beta", [](RunConfig& c, auto& v, auto& w) { c.train.weights.beta = to_double(v, w); }},
      {"w_recon", [](RunConfig& c, auto& v, auto& w) { c.train.weights.w_recon = to_double(v, w); }},
      {"w_cls", [](RunConfig& c, auto& v, auto& w) { c.train.weights.w_cls = to_double(v, w); }},
      {"w_align", [](RunConfig& c, auto& v, auto& w) { c.train.weights.w_align = to_double(v, w); }},
      {"geo_squared", [](RunConfig& c, auto& v, auto& w) { c.train.weights.geo_squared = to_bool(v, w); }},
      {"geometry_mode",
       [](RunConfig& c, auto& v, auto& w) {
         if (v == "exact") {
           c.train.geometry_mode.kind = diff::DiffKind::Exact;
         } else if (v == "stencil") {
           c.train.geometry_mode.kind = diff::DiffKind::Stencil;
         } else {
           throw ArgumentError(w + ": geometry_mode must be exact or stencil");
         }
       }},
      {"stencil_step", [](RunConfig& c, auto& v, auto& w) { c.train.geometry_mode.step = to_double(v, w); }},
      {"hessian_step",
       [](RunConfig& c, auto& v, auto& w) { c.train.geometry_mode.hessian_step = to_double(v, w); }},
      {"geo_subsample", [](RunConfig& c, auto& v, auto& w) { c.train.geo_subsample = to_double(v, w); }},
      {"log_geometry", [](RunConfig& c, auto& v, auto& w) { c.train.log_geometry = to_bool(v, w); }},
      {"latent_dim", [](RunConfig& c, auto& v, auto& w) { c.arch.latent_dim = to_count(v, w); }},
      {"hidden", [](RunConfig& c, auto& v, auto& w) { c.arch.hidden = to_widths(v, w); }},
      {"classifier_hidden",
       [](RunConfig& c, auto& v, auto& w) { c.arch.classifier_hidden = to_widths(v, w); }},
      {"activation",
       [](RunConfig& c, auto& v, auto& w) {
         try {
           c.arch.activation.kind = diff::parse_activation_kind(v);
         } catch (const std::exception&) {
           throw ArgumentError(w + ": unknown activation '" + v + "'");
         }
       }},
      {"elu_alpha", [](RunConfig& c, auto& v, auto& w) { c.arch.activation.alpha = to_double(v, w); }},
  };
  return table;
}

std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return h;
}

RunConfig baseline_of(const RunConfig& c) {
  RunConfig b = c;
  b.train.weights.lambda_geo = 0.0;
  b.train.weights.w_align = 0.0;
  return b;
}

double mean_of(const Tensor& t) {
  double s = 0.0;
  for (double v : t.values()) s += v;
  return s / static_cast<double>(t.size());
}

}  // namespace

void RunConfig::validate() const {
  if (n < 10) throw ArgumentError("n must be at least 10");
  if (!std::isfinite(label_threshold)) throw ArgumentError("label_threshold must be finite");
  if (arch.input_dim != 3) throw ArgumentError("input_dim is fixed at 3");
  if (arch.latent_dim == 0) throw ArgumentError("latent_dim must be positive");
  for (std::size_t w : arch.hidden)
    if (w == 0) throw ArgumentError("hidden widths must be positive");
  for (std::size_t w : arch.classifier_hidden)
    if (w == 0) throw ArgumentError("classifier widths must be positive");
  if (!(arch.activation.alpha > 0.0)) throw ArgumentError("elu_alpha must be positive");
  train.validate(n * 70 / 100);
}

RunConfig parse_config(const std::string& text, RunConfig base) {
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const std::string where = "config line " + std::to_string(line_no);
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ArgumentError(where + ": expected 'key = value'");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    const auto it = setters().find(key);
    if (it == setters().end()) throw ArgumentError(where + ": unknown key '" + key + "'");
    if (value.empty()) throw ArgumentError(where + ": empty value for '" + key + "'");
    it->second(base, value, where);
  }
  return base;
}

RunConfig load_config(const std::filesystem::path& path, RunConfig base) {
  return parse_config(io::read_file(path), std::move(base));
}

std::string format_config(const RunConfig& c) {
  using io::format_double;
  const auto& t = c.train;
  std::ostringstream os;
  os << "n = " << c.n << '\n'
     << "label_threshold = " << format_double(c.label_threshold) << '\n'
     << "seed = " << t.seed << '\n'
     << "epochs = " << t.epochs << '\n'
     << "batch_size = " << t.batch_size << '\n'
     << "learning_rate = " << format_double(t.learning_rate) << '\n'
     << "optimizer = " << (t.optimizer.kind == train::OptimizerKind::Adam ? "adam" : "sgd") << '\n'
     << "adam_beta1 = " << format_double(t.optimizer.beta1) << '\n'
     << "adam_beta2 = " << format_double(t.optimizer.beta2) << '\n'
     << "adam_eps = " << format_double(t.optimizer.eps) << '\n'
     << "sgd_momentum = " << format_double(t.optimizer.momentum) << '\n'
     << "lambda_geo = " << format_double(t.weights.lambda_geo) << '\n'
     << "beta = " << format_double(t.weights.beta) << '\n'
     << "w_recon = " << format_double(t.weights.w_recon) << '\n'
     << "w_cls = " << format_double(t.weights.w_cls) << '\n'
     << "w_align = " << format_double(t.weights.w_align) << '\n'
     << "geo_squared = " << (t.weights.geo_squared ? "true" : "false") << '\n'
     << "geometry_mode = " << (t.geometry_mode.kind == diff::DiffKind::Exact ? "exact" : "stencil") << '\n'
     << "stencil_step = " << format_double(t.geometry_mode.step) << '\n'
     << "hessian_step = " << format_double(t.geometry_mode.hessian_step) << '\n'
     << "geo_subsample = " << format_double(t.geo_subsample) << '\n'
     << "log_geometry = " << (t.log_geometry ? "true" : "false") << '\n'
     << "latent_dim = " << c.arch.latent_dim << '\n'
     << "hidden = " << widths_text(c.arch.hidden) << '\n'
     << "classifier_hidden = " << widths_text(c.arch.classifier_hidden) << '\n'
     << "activation = " << c.arch.activation.name() << '\n'
     << "elu_alpha = " << format_double(c.arch.activation.alpha) << '\n';
  return os.str();
}

nlohmann::json to_json(const RunConfig& c) {
  return {{"n", c.n},
          {"label_threshold", c.label_threshold},
          {"architecture",
           {{"input_dim", c.arch.input_dim},
            {"latent_dim", c.arch.latent_dim},
            {"hidden", c.arch.hidden},
            {"classifier_hidden", c.arch.classifier_hidden},
            {"activation", c.arch.activation.name()},
            {"alpha", c.arch.activation.alpha}}},
          {"train", train::to_json(c.train)}};
}

std::string config_digest(const RunConfig& c) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a(to_json(c).dump())));
  return buf;
}

nlohmann::json to_json(const MetricReport& r) {
  return {{"format", kReportFormat},       {"version", kReportVersion},
          {"model", r.model},              {"accuracy", r.accuracy},
          {"mse", r.mse},                  {"metric_error", r.metric_error},
          {"curvature_error", r.curvature_error}, {"n_test", r.n_test},
          {"config_digest", r.config_digest}};
}

MetricReport report_from_json(const nlohmann::json& j) {
  if (j.value("format", "") != kReportFormat) throw FormatError("not a cmf metric report");
  if (j.value("version", -1) != kReportVersion) throw FormatError("unsupported report version");
  MetricReport r;
  try {
    r.model = j.at("model").get<std::string>();
    r.accuracy = j.at("accuracy").get<double>();
    r.mse = j.at("mse").get<double>();
    r.metric_error = j.at("metric_error").get<double>();
    r.curvature_error = j.at("curvature_error").get<double>();
    r.n_test = j.at("n_test").get<std::size_t>();
    r.config_digest = j.at("config_digest").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed report: ") + e.what());
  }
  return r;
}

MetricReport evaluate(const net::ModelBundle& bundle, const std::vector<scm::SampleRecord>& test,
                      const std::string& tag, const std::string& digest, const diff::DiffMode& mode) {
  if (test.empty()) throw ArgumentError("evaluate: empty test split");
  bundle.validate();
  if (bundle.encoder.spec.input_dim() != 3) throw DimensionError("evaluate: model must take 3-D inputs");
  const scm::Batch batch = scm::make_batch(test);
  const std::size_t b = batch.size();

  Tape tape;
  const net::BoundModel m = net::bind(bundle, tape.constant(Tensor::vector(bundle.flat())));
  const Var x = tape.constant(batch.x);
  const Var z = m.encode(x);
  const Var z_cf = m.encode(tape.constant(batch.x_cf));
  const Var xr = m.decoder_fn()(diff::primal(z)).value;
  const Tensor logits = m.classify(z).value();
  const Tensor sq = diff::row_sum(diff::square(xr - x)).value();

  const Var both[] = {z, z_cf};
  const diff::Jet jet = diff::differentiate(m.decoder_fn(), diff::vconcat(both), mode, 2);
  auto half = [&](std::size_t begin) {
    diff::Jet out{diff::slice_rows(jet.value, begin, b), {}, {}};
    for (const Var& v : jet.d1) out.d1.push_back(diff::slice_rows(v, begin, b));
    for (const Var& v : jet.d2) out.d2.push_back(diff::slice_rows(v, begin, b));
    return out;
  };
  const diff::Jet ja = half(0), jb = half(b);

  MetricReport r;
  r.model = tag;
  r.n_test = b;
  r.config_digest = digest;
  std::size_t correct = 0;
  for (std::size_t i = 0; i < b; ++i) {
    const int pred = diff::logistic(logits[i]) > 0.5 ? 1 : 0;
    if (pred == static_cast<int>(batch.y[i])) ++correct;
  }
  r.accuracy = static_cast<double>(correct) / static_cast<double>(b);
  r.mse = mean_of(sq);
  r.metric_error = mean_of(geom::metric_discrepancy_rows(ja, jb).value());
  r.curvature_error = mean_of(geom::curvature_discrepancy_rows(ja, jb).value());
  return r;
}

std::vector<LatentRow> latents(const net::ModelBundle& bundle,
                               const std::vector<scm::SampleRecord>& records) {
  if (bundle.latent_dim != 2) throw DimensionError("latent dump needs a 2-D latent space");
  const scm::Batch batch = scm::make_batch(records);
  const Tensor z = net::encode(bundle, batch.x);
  const Tensor zcf = net::encode(bundle, batch.x_cf);
  std::vector<LatentRow> out;
  out.reserve(records.size());
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto& r = records[i];
    out.push_back({r.u, r.v, r.a, r.y, z(i, 0), z(i, 1), zcf(i, 0), zcf(i, 1)});
  }
  return out;
}

void dump_latents(const net::ModelBundle& bundle, const std::vector<scm::SampleRecord>& records,
                  const std::filesystem::path& path) {
  using io::format_double;
  std::ostringstream os;
  os << kLatentHeader << '\n';
  for (const LatentRow& r : latents(bundle, records)) {
    os << format_double(r.u) << ',' << format_double(r.v) << ',' << r.a << ',' << r.y << ','
       << format_double(r.z1) << ',' << format_double(r.z2) << ',' << format_double(r.zcf1) << ','
       << format_double(r.zcf2) << '\n';
  }
  net::write_file_atomic(path, os.str());
}

std::vector<LatentRow> read_latents(const std::filesystem::path& path) {
  std::istringstream in(io::read_file(path));
  std::string line;
  if (!std::getline(in, line) || line != kLatentHeader) {
    throw FormatError(path.string() + ": unexpected latent dump header");
  }
  std::vector<LatentRow> out;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const std::string where = path.string() + ":" + std::to_string(line_no);
    const auto c = io::split_csv_line(line);
    if (c.size() != 8) throw FormatError(where + ": expected 8 fields");
    LatentRow r{};
    r.u = io::parse_double(c[0], where);
    r.v = io::parse_double(c[1], where);
    r.a = static_cast<int>(io::parse_double(c[2], where));
    r.y = static_cast<int>(io::parse_double(c[3], where));
    r.z1 = io::parse_double(c[4], where);
    r.z2 = io::parse_double(c[5], where);
    r.zcf1 = io::parse_double(c[6], where);
    r.zcf2 = io::parse_double(c[7], where);
    out.push_back(r);
  }
  return out;
}

double centroid_gap(const std::vector<LatentRow>& rows) {
  double sum[2][2] = {{0, 0}, {0, 0}};
  std::size_t count[2] = {0, 0};
  for (const LatentRow& r : rows) {
    if (r.a != 0 && r.a != 1) throw FormatError("latent row with a outside {0, 1}");
    sum[r.a][0] += r.z1;
    sum[r.a][1] += r.z2;
    ++count[r.a];
  }
  if (count[0] == 0 || count[1] == 0) throw ArgumentError("centroid_gap needs both groups");
  const double dx = sum[0][0] / static_cast<double>(count[0]) - sum[1][0] / static_cast<double>(count[1]);
  const double dy = sum[0][1] / static_cast<double>(count[0]) - sum[1][1] / static_cast<double>(count[1]);
  return std::hypot(dx, dy);
}

net::ModelBundle load_model(const std::filesystem::path& checkpoint) {
  const net::Checkpoint c = net::load_checkpoint(checkpoint);
  if (c.extras.is_object() && c.extras.contains("best_model")) {
    try {
      return net::bundle_from_json(c.extras.at("best_model"));
    } catch (const nlohmann::json::exception& e) {
      throw FormatError("malformed best_model in " + checkpoint.string() + ": " + e.what());
    }
  }
  return c.model;
}

void write_report(const std::filesystem::path& path, const MetricReport& r) {
  net::write_file_atomic(path, to_json(r).dump(2) + "\n");
}

std::string format_table(const std::vector<MetricReport>& reports) {
  std::ostringstream os;
  char line[160];
  std::snprintf(line, sizeof line, "%-10s %10s %10s %14s %12s\n", "model", "Acc(up)", "MSE(down)",
                "MetricErr(down)", "CurvErr(down)");
  os << line;
  for (const MetricReport& r : reports) {
    std::snprintf(line, sizeof line, "%-10s %10.4f %10.4f %14.4f %12.4f\n", r.model.c_str(),
                  r.accuracy, r.mse, r.metric_error, r.curvature_error);
    os << line;
  }
  return os.str();
}

ExperimentResult run_experiment(const RunConfig& config, const std::filesystem::path& out,
                                const std::function<void(const std::string&)>& progress) {
  config.validate();
  auto say = [&](const std::string& s) {
    if (progress) progress(s);
  };
  std::filesystem::create_directories(out);
  const std::uint64_t seed = config.train.seed;
  const scm::DatasetSplit data = scm::sample_dataset(config.n, seed, config.label_threshold);
  scm::export_dataset(data, out / "dataset.csv");
  const net::ModelBundle initial = net::ModelBundle::create(config.arch, seed);

  ExperimentResult result;
  auto run_one = [&](const RunConfig& rc, const std::string& tag, MetricReport& report, double& gap) {
    const auto dir = out / tag;
    std::filesystem::create_directories(dir);
    train::TrainOptions opts;
    opts.checkpoint_path = dir / "checkpoint.json";
    opts.log_path = dir / "train_log.csv";
    opts.on_epoch = [&](std::size_t epoch, const obj::LossBreakdown& v) {
      if (epoch % 25 == 0 || epoch == rc.train.epochs) {
        char buf[160];
        std::snprintf(buf, sizeof buf, "%s epoch %zu: val total %.4f mse %.4f bce %.4f", tag.c_str(),
                      epoch, v.total, v.recon_mse, v.cls_bce);
        say(buf);
      }
    };
    const train::TrainResult tr = train::train(rc.train, data, initial, opts);
    report = evaluate(tr.best, data.test, tag, config_digest(rc));
    write_report(dir / "report.json", report);
    dump_latents(tr.best, data.test, dir / "latents.csv");
    gap = centroid_gap(latents(tr.best, data.test));
  };
  run_one(baseline_of(config), "baseline", result.baseline, result.baseline_centroid_gap);
  run_one(config, "cmf", result.cmf, result.cmf_centroid_gap);

  nlohmann::json table{{"format", kTableFormat},
                       {"version", kTableVersion},
                       {"columns", {"model", "accuracy", "mse", "metric_error", "curvature_error"}},
                       {"reports", {to_json(result.baseline), to_json(result.cmf)}},
                       {"centroid_gap",
                        {{"baseline", result.baseline_centroid_gap}, {"cmf", result.cmf_centroid_gap}}}};
  net::write_file_atomic(out / "table.json", table.dump(2) + "\n");
  net::write_file_atomic(out / "table.txt", format_table({result.baseline, result.cmf}));
  return result;
}

}  // namespace cmf::eval
