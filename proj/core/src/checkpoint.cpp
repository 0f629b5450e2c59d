#include "energyfc/checkpoint.hpp"

#include <fstream>
#include <nlohmann/json.hpp>
#include <sstream>

#include "energyfc/errors.hpp"

namespace energyfc {

namespace {

using json = nlohmann::ordered_json;

// Records the JSON path of the value being parsed so that a truncated or
// malformed document can be reported against the field it broke in.
class PathTracker : public nlohmann::json_sax<json> {
 public:
  bool null() override { return value(); }
  bool boolean(bool) override { return value(); }
  bool number_integer(number_integer_t) override { return value(); }
  bool number_unsigned(number_unsigned_t) override { return value(); }
  bool number_float(number_float_t, const string_t&) override { return value(); }
  bool string(string_t&) override { return value(); }
  bool binary(binary_t&) override { return value(); }
  bool start_object(std::size_t) override {
    value();
    frames_.push_back({false, 0, {}});
    return true;
  }
  bool key(string_t& k) override {
    frames_.back().key = k;
    return true;
  }
  bool end_object() override {
    frames_.pop_back();
    return true;
  }
  bool start_array(std::size_t) override {
    value();
    frames_.push_back({true, -1, {}});
    return true;
  }
  bool end_array() override {
    frames_.pop_back();
    return true;
  }
  bool parse_error(std::size_t, const std::string&, const nlohmann::detail::exception& e) override {
    message_ = e.what();
    return false;
  }

  std::string path() const {
    std::string out;
    for (const auto& f : frames_) {
      if (f.array) {
        out += "[" + std::to_string(f.index < 0 ? 0 : f.index) + "]";
      } else if (!f.key.empty()) {
        if (!out.empty()) out += '.';
        out += f.key;
      }
    }
    return out.empty() ? "<document>" : out;
  }
  const std::string& message() const { return message_; }

 private:
  struct Frame {
    bool array;
    long index;
    std::string key;
  };

  bool value() {
    if (!frames_.empty() && frames_.back().array) ++frames_.back().index;
    return true;
  }

  std::vector<Frame> frames_;
  std::string message_;
};

const json& field(const json& obj, const std::string& name, const std::string& path) {
  const std::string full = path.empty() ? name : path + "." + name;
  if (!obj.is_object()) throw LoadError(path.empty() ? "<document>" : path, "expected an object");
  const auto it = obj.find(name);
  if (it == obj.end()) throw LoadError(full, "missing field");
  return *it;
}

template <typename T>
T read_as(const json& obj, const std::string& name, const std::string& path) {
  const json& v = field(obj, name, path);
  const std::string full = path.empty() ? name : path + "." + name;
  try {
    return v.get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw LoadError(full, std::string("wrong type: ") + e.what());
  }
}

json encode_tensor(const auto& t) {
  json out;
  out["shape"] = {t.rows(), t.cols()};
  json values = json::array();
  for (Eigen::Index r = 0; r < t.rows(); ++r) {
    for (Eigen::Index c = 0; c < t.cols(); ++c) values.push_back(t(r, c));
  }
  out["values"] = std::move(values);
  return out;
}

void decode_tensor(const json& obj, const std::string& path, auto&& t) {
  const json& shape = field(obj, "shape", path);
  if (!shape.is_array() || shape.size() != 2 || !shape[0].is_number_integer() ||
      !shape[1].is_number_integer()) {
    throw LoadError(path + ".shape", "expected [rows, cols]");
  }
  const auto rows = shape[0].get<Eigen::Index>();
  const auto cols = shape[1].get<Eigen::Index>();
  if (rows != t.rows() || cols != t.cols()) {
    throw LoadError(path + ".shape", "expected [" + std::to_string(t.rows()) + ", " +
                                         std::to_string(t.cols()) + "], got [" +
                                         std::to_string(rows) + ", " + std::to_string(cols) + "]");
  }
  const json& values = field(obj, "values", path);
  if (!values.is_array() || static_cast<Eigen::Index>(values.size()) != rows * cols) {
    throw LoadError(path + ".values", "expected " + std::to_string(rows * cols) + " values");
  }
  std::size_t k = 0;
  for (Eigen::Index r = 0; r < rows; ++r) {
    for (Eigen::Index c = 0; c < cols; ++c, ++k) {
      const json& v = values[k];
      if (!v.is_number()) {
        throw LoadError(path + ".values[" + std::to_string(k) + "]", "expected a number");
      }
      t(r, c) = v.get<double>();
    }
  }
}

json encode_feature(const FeatureStats& s) {
  json out;
  out["mean"] = s.mean;
  out["stddev"] = s.stddev;
  out["constant"] = s.constant;
  return out;
}

FeatureStats decode_feature(const json& obj, const std::string& path) {
  FeatureStats s;
  s.mean = read_as<double>(obj, "mean", path);
  s.stddev = read_as<double>(obj, "stddev", path);
  s.constant = read_as<bool>(obj, "constant", path);
  if (!s.constant && !(s.stddev > 0.0)) throw LoadError(path + ".stddev", "must be > 0");
  return s;
}

}  // namespace

std::string save_checkpoint(const Checkpoint& ck) {
  check_shapes(ck.config, ck.params);
  for_each_tensor(ck.params, [](int layer, std::string_view name, const auto& t) {
    if (!t.allFinite()) throw NumericError(tensor_path(layer, name) + " contains non-finite values");
  });

  json doc;
  doc["format_version"] = kCheckpointFormatVersion;
  doc["arch"] = to_string(ck.config.arch);
  doc["num_layers"] = ck.config.num_layers;
  doc["T"] = ck.config.seq_len;
  doc["H_in"] = ck.config.input_size;
  doc["H_cell"] = ck.config.cell_size;
  doc["H_out"] = ck.config.output_size;

  json layers = json::array();
  for (std::size_t l = 0; l < ck.params.layers.size(); ++l) layers.push_back(json::object());
  json head = json::object();
  for_each_tensor(ck.params, [&](int layer, std::string_view name, const auto& t) {
    json& target = layer < 0 ? head : layers[static_cast<std::size_t>(layer)];
    target[std::string(name)] = encode_tensor(t);
  });
  doc["layers"] = std::move(layers);
  if (!head.empty()) doc["head"] = std::move(head);

  json norm;
  norm["current_transform"] = to_string(ck.norm.current_transform);
  norm["sum_current"] = encode_feature(ck.norm.sum_current);
  norm["max_current"] = encode_feature(ck.norm.max_current);
  norm["transmission_rate"] = encode_feature(ck.norm.transmission_rate);
  norm["packet_size"] = encode_feature(ck.norm.packet_size);
  norm["max_nr_connections"] = ck.norm.max_nr_connections;
  doc["norm_stats"] = std::move(norm);
  return doc.dump() + "\n";
}

Checkpoint load_checkpoint(std::string_view document) {
  json doc = json::parse(document, nullptr, false);
  if (doc.is_discarded()) {
    PathTracker tracker;
    json::sax_parse(document, &tracker);
    throw LoadError(tracker.path(), "document truncated or malformed (" + tracker.message() + ")");
  }

  const int version = read_as<int>(doc, "format_version", "");
  if (version != kCheckpointFormatVersion) {
    throw LoadError("format_version", "unsupported version " + std::to_string(version) +
                                          " (expected " +
                                          std::to_string(kCheckpointFormatVersion) + ")");
  }

  Checkpoint ck;
  try {
    ck.config.arch = arch_from_string(read_as<std::string>(doc, "arch", ""));
  } catch (const ConfigError& e) {
    throw LoadError("arch", e.what());
  }
  ck.config.num_layers = read_as<int>(doc, "num_layers", "");
  ck.config.seq_len = read_as<int>(doc, "T", "");
  ck.config.input_size = read_as<int>(doc, "H_in", "");
  ck.config.cell_size = read_as<int>(doc, "H_cell", "");
  ck.config.output_size = read_as<int>(doc, "H_out", "");
  try {
    ck.config.validate();
  } catch (const ConfigError& e) {
    throw LoadError("header", e.what());
  }

  ck.params = NetworkParams::zeros(ck.config);
  const json& layers = field(doc, "layers", "");
  if (!layers.is_array() || static_cast<int>(layers.size()) != ck.config.num_layers) {
    throw LoadError("layers", "expected " + std::to_string(ck.config.num_layers) + " layers");
  }
  const json* head = nullptr;
  if (ck.config.arch == Arch::kLstmBaseline) head = &field(doc, "head", "");
  for_each_tensor(ck.params, [&](int layer, std::string_view name, auto&& t) {
    const std::string path = layer < 0 ? "head" : "layers[" + std::to_string(layer) + "]";
    const json& owner = layer < 0 ? *head : layers[static_cast<std::size_t>(layer)];
    decode_tensor(field(owner, std::string(name), path), path + "." + std::string(name), t);
  });

  const json& norm = field(doc, "norm_stats", "");
  try {
    ck.norm.current_transform =
        transform_from_string(read_as<std::string>(norm, "current_transform", "norm_stats"));
  } catch (const ConfigError& e) {
    throw LoadError("norm_stats.current_transform", e.what());
  }
  ck.norm.sum_current = decode_feature(field(norm, "sum_current", "norm_stats"),
                                       "norm_stats.sum_current");
  ck.norm.max_current = decode_feature(field(norm, "max_current", "norm_stats"),
                                       "norm_stats.max_current");
  ck.norm.transmission_rate = decode_feature(field(norm, "transmission_rate", "norm_stats"),
                                             "norm_stats.transmission_rate");
  ck.norm.packet_size = decode_feature(field(norm, "packet_size", "norm_stats"),
                                       "norm_stats.packet_size");
  ck.norm.max_nr_connections = read_as<double>(norm, "max_nr_connections", "norm_stats");
  if (!(ck.norm.max_nr_connections > 0.0)) {
    throw LoadError("norm_stats.max_nr_connections", "must be > 0");
  }
  return ck;
}

void write_checkpoint_file(const std::filesystem::path& path, const Checkpoint& checkpoint) {
  const std::string text = save_checkpoint(checkpoint);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << text;
  if (!out) throw IoError("failed writing " + path.string());
}

Checkpoint read_checkpoint_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return load_checkpoint(buf.str());
}

}  // namespace energyfc
