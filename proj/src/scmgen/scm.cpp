#include "cmf/scm.hpp"

#include <cmath>
#include <random>
#include <sstream>
#include <string>

#include "cmf/errors.hpp"
#include "cmf/io_util.hpp"
#include "cmf/model.hpp"
#include "cmf/rng.hpp"
#include "json.hpp"

namespace cmf::scm {
namespace {

constexpr const char* kHeader = "u,v,a,y,x1,x2,x3,xcf1,xcf2,xcf3";
constexpr const char* kMetaFormat = "cmf-dataset";

std::vector<SampleRecord> draw_split(std::size_t count, double threshold, std::mt19937_64& gen) {
  std::vector<int> groups(count, 0);
  for (std::size_t i = 0; i < count / 2; ++i) groups[i] = 1;
  if (count % 2 == 1) groups[count - 1] = static_cast<int>(gen() >> 63);
  rng::shuffle(std::span<int>(groups), gen);

  std::vector<SampleRecord> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    const double u = kMaxAngle * rng::uniform01(gen);
    const double v = rng::uniform01(gen);
    out.push_back(make_record(u, v, groups[i], threshold));
  }
  return out;
}

void check_split(const std::vector<SampleRecord>& records, double threshold, const char* name) {
  long ones = 0;
  for (std::size_t i = 0; i < records.size(); ++i) {
    const SampleRecord& r = records[i];
    const std::string where = std::string(name) + " record " + std::to_string(i);
    if (r.a != 0 && r.a != 1) throw FormatError(where + ": a must be 0 or 1");
    SampleRecord regen;
    try {
      regen = make_record(r.u, r.v, r.a, threshold);
    } catch (const DomainError& e) {
      throw FormatError(where + ": " + e.what());
    }
    if (regen.x != r.x) throw FormatError(where + ": x does not match structural_map(u, v, a)");
    if (regen.x_cf != r.x_cf) throw FormatError(where + ": x_cf does not match the flipped map");
    if (regen.y != r.y) throw FormatError(where + ": y inconsistent with u");
    ones += r.a;
  }
  const long zeros = static_cast<long>(records.size()) - ones;
  if (std::abs(ones - zeros) > 1) throw FormatError(std::string(name) + ": attribute a is unbalanced");
}

}  // namespace

std::vector<SampleRecord> DatasetSplit::all() const {
  std::vector<SampleRecord> out = train;
  out.insert(out.end(), validation.begin(), validation.end());
  out.insert(out.end(), test.begin(), test.end());
  return out;
}

Point3 structural_map(double u, double v, int a) {
  if (!(u >= 0.0 && u <= kMaxAngle)) throw DomainError("structural_map: u outside [0, 4pi]");
  if (!(v >= 0.0 && v <= 1.0)) throw DomainError("structural_map: v outside [0, 1]");
  if (a != 0 && a != 1) throw DomainError("structural_map: a must be 0 or 1");
  const double w = 1.0 + 0.5 * a;
  const double r = u * w;
  return {r * std::cos(u), r * std::sin(u), kHeightScale * v};
}

SampleRecord make_record(double u, double v, int a, double label_threshold) {
  SampleRecord r;
  r.u = u;
  r.v = v;
  r.a = a;
  r.y = u > label_threshold ? 1 : 0;
  r.x = structural_map(u, v, a);
  r.x_cf = structural_map(u, v, 1 - a);
  return r;
}

DatasetSplit sample_dataset(std::size_t n, std::uint64_t seed, double label_threshold) {
  if (n < 10) throw ArgumentError("sample_dataset: need n >= 10, got " + std::to_string(n));
  DatasetSplit d;
  d.seed = seed;
  d.label_threshold = label_threshold;
  const std::size_t n_train = n * 70 / 100;
  const std::size_t n_val = n * 15 / 100;
  const std::size_t n_test = n - n_train - n_val;
  std::mt19937_64 gen(seed);
  d.train = draw_split(n_train, label_threshold, gen);
  d.validation = draw_split(n_val, label_threshold, gen);
  d.test = draw_split(n_test, label_threshold, gen);
  return d;
}

void validate(const DatasetSplit& d) {
  check_split(d.train, d.label_threshold, "train");
  check_split(d.validation, d.label_threshold, "validation");
  check_split(d.test, d.label_threshold, "test");
}

std::filesystem::path sidecar_path(const std::filesystem::path& csv_path) {
  std::filesystem::path p = csv_path;
  p.replace_extension(".meta.json");
  return p;
}

void export_dataset(const DatasetSplit& d, const std::filesystem::path& csv_path) {
  std::ostringstream os;
  os << kHeader << '\n';
  for (const SampleRecord& r : d.all()) {
    using io::format_double;
    os << format_double(r.u) << ',' << format_double(r.v) << ',' << r.a << ',' << r.y;
    for (double c : r.x) os << ',' << format_double(c);
    for (double c : r.x_cf) os << ',' << format_double(c);
    os << '\n';
  }
  nlohmann::json meta{{"format", kMetaFormat},
                      {"version", kDatasetFormatVersion},
                      {"seed", d.seed},
                      {"n", d.size()},
                      {"label_threshold", d.label_threshold},
                      {"height_scale", kHeightScale},
                      {"splits",
                       {{"train", d.train.size()},
                        {"validation", d.validation.size()},
                        {"test", d.test.size()}}}};
  net::write_file_atomic(csv_path, os.str());
  net::write_file_atomic(sidecar_path(csv_path), meta.dump(2) + "\n");
}

DatasetSplit import_dataset(const std::filesystem::path& csv_path) {
  nlohmann::json meta;
  try {
    meta = nlohmann::json::parse(io::read_file(sidecar_path(csv_path)));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("dataset metadata is not valid JSON: " + std::string(e.what()));
  }
  if (meta.value("format", "") != kMetaFormat) throw FormatError("not a cmf dataset sidecar");
  if (meta.value("version", -1) != kDatasetFormatVersion) {
    throw FormatError("unsupported dataset format version");
  }

  std::istringstream in(io::read_file(csv_path));
  std::string line;
  if (!std::getline(in, line) || line != kHeader) {
    throw FormatError(csv_path.string() + ": unexpected header");
  }
  std::vector<SampleRecord> rows;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const std::string where = csv_path.string() + ":" + std::to_string(line_no);
    auto cells = io::split_csv_line(line);
    if (cells.size() != 10) throw FormatError(where + ": expected 10 fields");
    SampleRecord r;
    r.u = io::parse_double(cells[0], where);
    r.v = io::parse_double(cells[1], where);
    r.a = static_cast<int>(io::parse_double(cells[2], where));
    r.y = static_cast<int>(io::parse_double(cells[3], where));
    for (int k = 0; k < 3; ++k) r.x[k] = io::parse_double(cells[4 + k], where);
    for (int k = 0; k < 3; ++k) r.x_cf[k] = io::parse_double(cells[7 + k], where);
    rows.push_back(r);
  }

  DatasetSplit d;
  try {
    d.seed = meta.at("seed").get<std::uint64_t>();
    d.label_threshold = meta.at("label_threshold").get<double>();
    const auto& s = meta.at("splits");
    const std::size_t nt = s.at("train").get<std::size_t>();
    const std::size_t nv = s.at("validation").get<std::size_t>();
    const std::size_t ne = s.at("test").get<std::size_t>();
    if (nt + nv + ne != rows.size() || meta.at("n").get<std::size_t>() != rows.size()) {
      throw FormatError(csv_path.string() + ": row count disagrees with metadata");
    }
    d.train.assign(rows.begin(), rows.begin() + static_cast<std::ptrdiff_t>(nt));
    d.validation.assign(rows.begin() + static_cast<std::ptrdiff_t>(nt),
                        rows.begin() + static_cast<std::ptrdiff_t>(nt + nv));
    d.test.assign(rows.begin() + static_cast<std::ptrdiff_t>(nt + nv), rows.end());
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("dataset metadata incomplete: " + std::string(e.what()));
  }
  validate(d);
  return d;
}

Batch make_batch(std::span<const SampleRecord> records) {
  std::vector<std::size_t> idx(records.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  return make_batch(records, idx);
}

Batch make_batch(std::span<const SampleRecord> records, std::span<const std::size_t> indices) {
  const std::size_t b = indices.size();
  Batch out{diff::Tensor(diff::Shape{b, 3}), diff::Tensor(diff::Shape{b, 3}),
            diff::Tensor(diff::Shape{b})};
  for (std::size_t i = 0; i < b; ++i) {
    const SampleRecord& r = records[indices[i]];
    for (std::size_t k = 0; k < 3; ++k) {
      out.x(i, k) = r.x[k];
      out.x_cf(i, k) = r.x_cf[k];
    }
    out.y[i] = r.y;
  }
  return out;
}

}  // namespace cmf::scm
