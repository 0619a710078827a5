#include "bmc/io.hpp"

#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <sstream>

#include "bmc/errors.hpp"

namespace bmc {

using nlohmann::json;

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string read_text(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void ensure_directory(const std::string& path) {
  if (path.empty()) return;
  std::error_code ec;
  std::filesystem::create_directories(path, ec);
  if (ec) throw IoError("cannot create directory '" + path + "': " + ec.message());
}

void write_text_file(const std::string& path, const std::string& text) {
  const std::filesystem::path p(path);
  ensure_directory(p.parent_path().string());
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write '" + path + "'");
    out << text;
    if (!out) throw IoError("write failed for '" + path + "'");
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("cannot move '" + tmp + "' to '" + path + "': " + ec.message());
}

void require_file(const std::string& path, const std::string& what) {
  if (!std::filesystem::is_regular_file(path)) throw IoError("missing " + what + ": expected file '" + path + "'");
}

// ---------------------------------------------------------------- datasets

void write_dataset(const std::string& path, const std::vector<LabeledSample>& samples) {
  std::size_t n_params = 0, n_counts = 0, n_summary = 0;
  for (const auto& s : samples) {
    n_params = std::max(n_params, s.params.size());
    n_counts = std::max(n_counts, s.counts.size());
    n_summary = std::max(n_summary, s.summary.size());
  }
  std::string out = "model,arity";
  for (std::size_t i = 0; i < n_params; ++i) out += ",p" + std::to_string(i);
  for (std::size_t i = 0; i < n_counts; ++i) out += ",x" + std::to_string(i);
  for (std::size_t i = 0; i < n_summary; ++i) out += ",s" + std::to_string(i);
  out += '\n';
  for (const auto& s : samples) {
    if (s.counts.size() != n_counts && !s.counts.empty())
      throw InputError("write_dataset: samples carry count vectors of different length");
    out += std::to_string(s.model_index) + ',' + std::to_string(s.params.size());
    for (std::size_t i = 0; i < n_params; ++i) {
      out += ',';
      if (i < s.params.size()) out += fmt(s.params[i]);
    }
    for (std::size_t i = 0; i < n_counts; ++i) {
      out += ',';
      if (i < s.counts.size()) out += std::to_string(s.counts[i]);
    }
    for (std::size_t i = 0; i < n_summary; ++i) {
      out += ',';
      if (i < s.summary.size()) out += fmt(s.summary[i]);
    }
    out += '\n';
  }
  write_text_file(path, out);
}

namespace {

std::vector<std::string> split_commas(const std::string& line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  for (;;) {
    const std::size_t comma = line.find(',', start);
    out.push_back(line.substr(start, comma == std::string::npos ? std::string::npos : comma - start));
    if (comma == std::string::npos) return out;
    start = comma + 1;
  }
}

double parse_double(const std::string& s, const std::string& where) {
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw InputError(where + ": cannot parse number '" + s + "'");
  }
}

long long parse_int(const std::string& s, const std::string& where) {
  try {
    std::size_t used = 0;
    const long long v = std::stoll(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw InputError(where + ": cannot parse integer '" + s + "'");
  }
}

}  // namespace

std::vector<LabeledSample> read_dataset(const std::string& path) {
  require_file(path, "dataset");
  std::istringstream in(read_text(path));
  std::string line;
  if (!std::getline(in, line)) throw InputError("dataset '" + path + "' is empty");
  const auto header = split_commas(line);
  if (header.size() < 2 || header[0] != "model" || header[1] != "arity")
    throw InputError("dataset '" + path + "': unexpected header");
  std::size_t n_params = 0, n_counts = 0, n_summary = 0;
  for (std::size_t i = 2; i < header.size(); ++i) {
    const char c = header[i].empty() ? '?' : header[i][0];
    if (c == 'p') ++n_params;
    else if (c == 'x') ++n_counts;
    else if (c == 's') ++n_summary;
    else throw InputError("dataset '" + path + "': unknown column '" + header[i] + "'");
  }
  std::vector<LabeledSample> out;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const std::string where = path + ":" + std::to_string(lineno);
    const auto f = split_commas(line);
    if (f.size() != header.size()) throw InputError(where + ": wrong number of fields");
    LabeledSample s;
    s.model_index = static_cast<int>(parse_int(f[0], where));
    const auto arity = static_cast<std::size_t>(parse_int(f[1], where));
    if (arity > n_params) throw InputError(where + ": arity exceeds parameter columns");
    std::size_t c = 2;
    for (std::size_t i = 0; i < n_params; ++i, ++c)
      if (i < arity) s.params.push_back(parse_double(f[c], where));
    for (std::size_t i = 0; i < n_counts; ++i, ++c)
      if (!f[c].empty()) s.counts.push_back(parse_int(f[c], where));
    for (std::size_t i = 0; i < n_summary; ++i, ++c)
      if (!f[c].empty()) s.summary.push_back(parse_double(f[c], where));
    out.push_back(std::move(s));
  }
  return out;
}

// ---------------------------------------------------------------- binary helpers

namespace {

class BinaryWriter {
 public:
  void u64(std::uint64_t v) { raw(&v, sizeof v); }
  void f64(double v) { raw(&v, sizeof v); }
  void str(const std::string& s) {
    u64(s.size());
    buf_.append(s);
  }
  void vec(const Eigen::VectorXd& v) {
    u64(static_cast<std::uint64_t>(v.size()));
    raw(v.data(), sizeof(double) * static_cast<std::size_t>(v.size()));
  }
  void mat(const Eigen::MatrixXd& m) {  // row-major on disk
    u64(static_cast<std::uint64_t>(m.rows()));
    u64(static_cast<std::uint64_t>(m.cols()));
    for (Eigen::Index i = 0; i < m.rows(); ++i)
      for (Eigen::Index j = 0; j < m.cols(); ++j) f64(m(i, j));
  }
  const std::string& data() const { return buf_; }

 private:
  void raw(const void* p, std::size_t n) { buf_.append(static_cast<const char*>(p), n); }
  std::string buf_;
};

class BinaryReader {
 public:
  BinaryReader(std::string data, std::string path) : data_(std::move(data)), path_(std::move(path)) {}
  std::uint64_t u64() {
    std::uint64_t v;
    raw(&v, sizeof v);
    return v;
  }
  double f64() {
    double v;
    raw(&v, sizeof v);
    return v;
  }
  std::string str() {
    const auto n = bounded(u64(), 1);
    std::string s = data_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  Eigen::VectorXd vec() {
    const auto n = bounded(u64(), sizeof(double));
    Eigen::VectorXd v(static_cast<Eigen::Index>(n));
    raw(v.data(), n * sizeof(double));
    return v;
  }
  Eigen::MatrixXd mat() {
    const auto r = u64();
    const auto c = u64();
    if (c != 0) bounded(r, sizeof(double) * c);
    Eigen::MatrixXd m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c));
    for (Eigen::Index i = 0; i < m.rows(); ++i)
      for (Eigen::Index j = 0; j < m.cols(); ++j) m(i, j) = f64();
    return m;
  }
  void expect_magic(const std::string& magic) {
    if (data_.size() < magic.size() || data_.compare(0, magic.size(), magic) != 0)
      throw IoError("'" + path_ + "' is not a " + magic + " file");
    pos_ = magic.size();
  }
  void expect_end() const {
    if (pos_ != data_.size()) throw IoError("'" + path_ + "' has trailing bytes");
  }

 private:
  std::uint64_t bounded(std::uint64_t n, std::size_t unit) const {
    if (n > (data_.size() - pos_) / unit) throw IoError("'" + path_ + "' is truncated");
    return n;
  }
  void raw(void* p, std::size_t n) {
    if (data_.size() - pos_ < n) throw IoError("'" + path_ + "' is truncated");
    std::memcpy(p, data_.data() + pos_, n);
    pos_ += n;
  }
  std::string data_;
  std::string path_;
  std::size_t pos_ = 0;
};

constexpr const char* kTraceMagic = "BMCTRACE1";
constexpr const char* kPcaMagic = "BMCPCA01";

}  // namespace

void save_traces(const TraceSet& t, const std::string& path) {
  BinaryWriter w;
  w.u64(t.protocols.size());
  for (const auto& p : t.protocols) {
    w.str(p.name);
    w.u64(static_cast<std::uint64_t>(p.n_sweeps));
    w.vec(Eigen::Map<const Eigen::VectorXd>(p.values.data(), static_cast<Eigen::Index>(p.values.size())));
  }
  write_text_file(path, std::string(kTraceMagic) + w.data());
}

TraceSet load_traces(const std::string& path) {
  require_file(path, "trace file");
  BinaryReader r(read_text(path), path);
  r.expect_magic(kTraceMagic);
  TraceSet t;
  const auto n = r.u64();
  for (std::uint64_t i = 0; i < n; ++i) {
    ProtocolTrace p;
    p.name = r.str();
    p.n_sweeps = static_cast<int>(r.u64());
    const Eigen::VectorXd v = r.vec();
    p.values.assign(v.data(), v.data() + v.size());
    t.protocols.push_back(std::move(p));
  }
  r.expect_end();
  return t;
}

void save_pca(const PcaBasis& b, const std::string& path) {
  BinaryWriter w;
  w.u64(b.protocols.size());
  for (const auto& p : b.protocols) {
    w.str(p.name);
    w.u64(p.reduced_rank ? 1 : 0);
    w.vec(p.mean);
    w.mat(p.basis);
    w.vec(p.explained);
  }
  write_text_file(path, std::string(kPcaMagic) + w.data());
}

PcaBasis load_pca(const std::string& path) {
  require_file(path, "PCA basis");
  BinaryReader r(read_text(path), path);
  r.expect_magic(kPcaMagic);
  PcaBasis b;
  const auto n = r.u64();
  for (std::uint64_t i = 0; i < n; ++i) {
    ProtocolBasis p;
    p.name = r.str();
    p.reduced_rank = r.u64() != 0;
    p.mean = r.vec();
    p.basis = r.mat();
    p.explained = r.vec();
    if (p.basis.rows() != p.mean.size()) throw IoError("'" + path + "': basis and mean lengths differ");
    b.protocols.push_back(std::move(p));
  }
  r.expect_end();
  return b;
}

// ---------------------------------------------------------------- networks

namespace {

constexpr int kNetworkFormat = 1;

json vec_json(const Eigen::VectorXd& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

Eigen::VectorXd json_vec(const json& j) {
  const auto v = j.get<std::vector<double>>();
  return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

json layer_json(const DenseLayer& l) {
  Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> w = l.W;
  return {{"in", l.W.cols()}, {"out", l.W.rows()},
          {"W", std::vector<double>(w.data(), w.data() + w.size())}, {"b", vec_json(l.b)}};
}

DenseLayer json_layer(const json& j) {
  const auto in = j.at("in").get<Eigen::Index>();
  const auto out = j.at("out").get<Eigen::Index>();
  const auto w = j.at("W").get<std::vector<double>>();
  if (static_cast<Eigen::Index>(w.size()) != in * out) throw IoError("network layer has the wrong weight count");
  DenseLayer l;
  l.W = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(w.data(), out, in);
  l.b = json_vec(j.at("b"));
  if (l.b.size() != out) throw IoError("network layer has the wrong bias count");
  return l;
}

json trunk_json(const FeedforwardNet& net) {
  json a = json::array();
  for (const auto& l : net.layers) a.push_back(layer_json(l));
  return a;
}

FeedforwardNet json_trunk(const json& j) {
  FeedforwardNet net;
  for (const auto& l : j) net.layers.push_back(json_layer(l));
  net.validate();
  return net;
}

json scaler_json(const ZScaler& s) { return {{"means", vec_json(s.means)}, {"stds", vec_json(s.stds)}}; }
ZScaler json_scaler(const json& j) { return {json_vec(j.at("means")), json_vec(j.at("stds"))}; }

json config_json(const TrainConfig& c) {
  return {{"learning_rate", c.learning_rate}, {"batch_size", c.batch_size}, {"epochs", c.epochs},
          {"components", c.components},       {"seed", c.seed},             {"beta1", c.beta1},
          {"beta2", c.beta2},                 {"epsilon", c.epsilon}};
}

TrainConfig json_config(const json& j) {
  TrainConfig c;
  c.learning_rate = j.at("learning_rate").get<double>();
  c.batch_size = j.at("batch_size").get<int>();
  c.epochs = j.at("epochs").get<int>();
  c.components = j.at("components").get<int>();
  c.seed = j.at("seed").get<std::uint64_t>();
  c.beta1 = j.at("beta1").get<double>();
  c.beta2 = j.at("beta2").get<double>();
  c.epsilon = j.at("epsilon").get<double>();
  return c;
}

json parse_network(const std::string& text, const std::string& kind) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw IoError(std::string("network document is not valid JSON: ") + e.what());
  }
  if (j.value("format", 0) != kNetworkFormat) throw IoError("unsupported network document version");
  if (j.value("kind", std::string()) != kind) throw IoError("network document is not a " + kind);
  return j;
}

template <class F>
auto guarded(F&& f) {
  try {
    return f();
  } catch (const json::exception& e) {
    throw IoError(std::string("malformed network document: ") + e.what());
  }
}

}  // namespace

std::string classifier_to_json(const ClassifierModel& m) {
  json j;
  j["format"] = kNetworkFormat;
  j["kind"] = "classifier";
  j["sizes"] = m.net.trunk.sizes();
  j["trunk"] = trunk_json(m.net.trunk);
  j["head"] = layer_json(m.net.head.out);
  j["input_scaler"] = scaler_json(m.input_scaler);
  j["config"] = config_json(m.config);
  j["loss_trace"] = m.loss_trace;
  return j.dump(1) + "\n";
}

ClassifierModel classifier_from_json(const std::string& text) {
  const json j = parse_network(text, "classifier");
  return guarded([&] {
    ClassifierModel m;
    m.net.trunk = json_trunk(j.at("trunk"));
    m.net.head.out = json_layer(j.at("head"));
    m.input_scaler = json_scaler(j.at("input_scaler"));
    m.config = json_config(j.at("config"));
    m.loss_trace = j.at("loss_trace").get<std::vector<double>>();
    return m;
  });
}

std::string posterior_to_json(const PosteriorModel& m) {
  json j;
  j["format"] = kNetworkFormat;
  j["kind"] = "mog_posterior";
  j["sizes"] = m.net.trunk.sizes();
  j["trunk"] = trunk_json(m.net.trunk);
  j["head"] = layer_json(m.net.head.out);
  j["components"] = m.net.head.components;
  j["dim"] = m.net.head.dim;
  j["input_scaler"] = scaler_json(m.input_scaler);
  j["param_scaler"] = scaler_json(m.param_scaler);
  j["config"] = config_json(m.config);
  j["loss_trace"] = m.loss_trace;
  return j.dump(1) + "\n";
}

PosteriorModel posterior_from_json(const std::string& text) {
  const json j = parse_network(text, "mog_posterior");
  return guarded([&] {
    PosteriorModel m;
    m.net.trunk = json_trunk(j.at("trunk"));
    m.net.head.out = json_layer(j.at("head"));
    m.net.head.components = j.at("components").get<int>();
    m.net.head.dim = j.at("dim").get<int>();
    if (m.net.head.out.W.rows() != MoGHead::output_size(m.net.head.components, m.net.head.dim))
      throw IoError("network head size does not match its mixture shape");
    m.input_scaler = json_scaler(j.at("input_scaler"));
    m.param_scaler = json_scaler(j.at("param_scaler"));
    m.config = json_config(j.at("config"));
    m.loss_trace = j.at("loss_trace").get<std::vector<double>>();
    return m;
  });
}

void save_classifier(const ClassifierModel& m, const std::string& path) { write_text_file(path, classifier_to_json(m)); }
ClassifierModel load_classifier(const std::string& path) {
  require_file(path, "classifier network");
  return classifier_from_json(read_text(path));
}
void save_posterior(const PosteriorModel& m, const std::string& path) { write_text_file(path, posterior_to_json(m)); }
PosteriorModel load_posterior(const std::string& path) {
  require_file(path, "posterior network");
  return posterior_from_json(read_text(path));
}

// ---------------------------------------------------------------- tables

void Table::add(std::vector<std::string> row) {
  if (row.size() != columns.size()) throw InputError("table row has the wrong number of fields");
  rows.push_back(std::move(row));
}

std::string Table::str() const {
  std::string out;
  for (std::size_t i = 0; i < columns.size(); ++i) out += (i ? "\t" : "") + columns[i];
  out += '\n';
  for (const auto& r : rows) {
    for (std::size_t i = 0; i < r.size(); ++i) out += (i ? "\t" : "") + r[i];
    out += '\n';
  }
  return out;
}

}  // namespace bmc
