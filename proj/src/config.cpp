#include "ser/config.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <charconv>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

namespace ser {
namespace {

namespace pt = boost::property_tree;

[[noreturn]] void bad(const std::string& msg) { throw Error(ErrorCode::ConfigError, msg); }

std::string fmt(double x) {
  char buf[32];
  auto res = std::to_chars(buf, buf + sizeof buf, x);
  return std::string(buf, res.ptr);
}

template <typename N>
N parse_number(const std::string& key, const std::string& text) {
  N value{};
  const char* end = text.data() + text.size();
  auto res = std::from_chars(text.data(), end, value);
  if (res.ec != std::errc() || res.ptr != end) bad(key + ": '" + text + "' is not a valid number");
  return value;
}

std::array<int, 3> parse_channels(const std::string& key, const std::string& text) {
  std::array<int, 3> out{};
  std::stringstream ss(text);
  std::string part;
  std::size_t n = 0;
  while (std::getline(ss, part, ',')) {
    if (n == 3) bad(key + ": expected three comma-separated integers");
    const auto first = part.find_first_not_of(' '), last = part.find_last_not_of(' ');
    out[n++] = parse_number<int>(key, first == std::string::npos ? "" : part.substr(first, last - first + 1));
  }
  if (n != 3) bad(key + ": expected three comma-separated integers");
  return out;
}

// One binding per INI key: how to read it into a RunConfig and write it out.
struct Binding {
  std::function<void(RunConfig&, const std::string&)> read;
  std::function<std::string(const RunConfig&)> write;
};

template <typename Get>
Binding int_binding(Get get) {
  return {[get](RunConfig& c, const std::string& v) { get(c) = parse_number<std::remove_reference_t<decltype(get(c))>>("", v); },
          [get](const RunConfig& c) { return std::to_string(get(const_cast<RunConfig&>(c))); }};
}

template <typename Get>
Binding real_binding(Get get) {
  return {[get](RunConfig& c, const std::string& v) { get(c) = parse_number<double>("", v); },
          [get](const RunConfig& c) { return fmt(get(const_cast<RunConfig&>(c))); }};
}

Binding string_binding(std::string PathsConfig::*member) {
  return {[member](RunConfig& c, const std::string& v) { c.paths.*member = v; },
          [member](const RunConfig& c) { return c.paths.*member; }};
}

// Ordered so serialization is stable.
const std::vector<std::pair<std::string, Binding>>& bindings() {
  static const std::vector<std::pair<std::string, Binding>> table = [] {
    std::vector<std::pair<std::string, Binding>> t;
    auto I = [&](const char* k, auto get) { t.emplace_back(k, int_binding(get)); };
    auto R = [&](const char* k, auto get) { t.emplace_back(k, real_binding(get)); };
    I("audio.sample_rate", [](RunConfig& c) -> int& { return c.features.sample_rate; });
    R("audio.trim_threshold_db", [](RunConfig& c) -> double& { return c.features.trim_threshold_db; });
    R("features.frame_len_ms", [](RunConfig& c) -> double& { return c.features.framing.frame_len_ms; });
    R("features.hop_ms", [](RunConfig& c) -> double& { return c.features.framing.hop_ms; });
    I("features.n_fft", [](RunConfig& c) -> int& { return c.features.mel.n_fft; });
    I("features.n_mels", [](RunConfig& c) -> int& { return c.features.mel.n_mels; });
    R("features.fmin", [](RunConfig& c) -> double& { return c.features.mel.fmin; });
    R("features.fmax", [](RunConfig& c) -> double& { return c.features.mel.fmax; });
    R("features.log_floor", [](RunConfig& c) -> double& { return c.features.mel.log_floor; });
    I("features.target_frames", [](RunConfig& c) -> Eigen::Index& { return c.features.target_frames; });
    I("features.n_mfcc", [](RunConfig& c) -> int& { return c.features.n_mfcc; });
    I("features.workers", [](RunConfig& c) -> int& { return c.workers; });
    t.emplace_back("model.kind", Binding{[](RunConfig& c, const std::string& v) {
                                           auto k = parse_model_kind(v);
                                           if (!k) bad("model.kind: unknown model '" + v + "' (cnn_transformer or mlp)");
                                           c.model.kind = *k;
                                         },
                                         [](const RunConfig& c) { return std::string(model_kind_name(c.model.kind)); }});
    t.emplace_back("model.conv_channels",
                   Binding{[](RunConfig& c, const std::string& v) { c.model.conv_channels = parse_channels("model.conv_channels", v); },
                           [](const RunConfig& c) {
                             const auto& ch = c.model.conv_channels;
                             return std::to_string(ch[0]) + "," + std::to_string(ch[1]) + "," + std::to_string(ch[2]);
                           }});
    I("model.conv_kernel", [](RunConfig& c) -> int& { return c.model.conv_kernel; });
    I("model.encoder_layers", [](RunConfig& c) -> int& { return c.model.n_encoder_layers; });
    I("model.heads", [](RunConfig& c) -> int& { return c.model.n_heads; });
    I("model.d_model", [](RunConfig& c) -> int& { return c.model.d_model; });
    I("model.d_ff", [](RunConfig& c) -> int& { return c.model.d_ff; });
    I("model.n_classes", [](RunConfig& c) -> int& { return c.model.n_classes; });
    R("model.dropout", [](RunConfig& c) -> double& { return c.model.dropout; });
    R("model.bn_momentum", [](RunConfig& c) -> double& { return c.model.bn_momentum; });
    I("model.mlp_hidden", [](RunConfig& c) -> int& { return c.model.mlp_hidden; });
    R("train.lr0", [](RunConfig& c) -> double& { return c.train.lr0; });
    R("train.weight_decay", [](RunConfig& c) -> double& { return c.train.weight_decay; });
    I("train.batch_size", [](RunConfig& c) -> int& { return c.train.batch_size; });
    I("train.max_epochs", [](RunConfig& c) -> int& { return c.train.max_epochs; });
    I("train.patience", [](RunConfig& c) -> int& { return c.train.patience; });
    I("train.seed", [](RunConfig& c) -> std::uint64_t& { return c.train.seed; });
    R("train.beta1", [](RunConfig& c) -> double& { return c.train.adam.beta1; });
    R("train.beta2", [](RunConfig& c) -> double& { return c.train.adam.beta2; });
    R("train.eps", [](RunConfig& c) -> double& { return c.train.adam.eps; });
    R("train.eta_min", [](RunConfig& c) -> double& { return c.train.eta_min; });
    R("train.train_ratio", [](RunConfig& c) -> double& { return c.splits.train; });
    R("train.val_ratio", [](RunConfig& c) -> double& { return c.splits.val; });
    R("train.test_ratio", [](RunConfig& c) -> double& { return c.splits.test; });
    t.emplace_back("paths.manifest", string_binding(&PathsConfig::manifest));
    t.emplace_back("paths.cache_dir", string_binding(&PathsConfig::cache_dir));
    t.emplace_back("paths.run_dir", string_binding(&PathsConfig::run_dir));
    t.emplace_back("paths.report_dir", string_binding(&PathsConfig::report_dir));
    return t;
  }();
  return table;
}

const Binding* find_binding(const std::string& key) {
  for (const auto& [name, b] : bindings())
    if (name == key) return &b;
  return nullptr;
}

void set_key(RunConfig& cfg, const std::string& key, const std::string& value) {
  const Binding* b = find_binding(key);
  if (!b) bad("unknown config key '" + key + "'");
  try {
    b->read(cfg, value);
  } catch (const Error& e) {
    if (e.code() != ErrorCode::ConfigError) throw;
    bad(key + ": invalid value '" + value + "'");
  }
}

}  // namespace

ArchConfig RunConfig::arch() const {
  ArchConfig a = model;
  a.n_mels = features.mel.n_mels;
  a.input_frames = static_cast<int>(features.target_frames);
  a.n_mfcc = features.n_mfcc;
  return a;
}

void RunConfig::validate() const {
  if (features.sample_rate <= 0) bad("audio.sample_rate must be positive");
  features.framing.frame_samples(features.sample_rate);
  features.framing.hop_samples(features.sample_rate);
  if (features.mel.n_fft < features.framing.frame_samples(features.sample_rate))
    bad("features.n_fft must be at least the frame length in samples");
  if (features.mel.n_mels < 1 || !(features.mel.fmin >= 0) || !(features.mel.fmax > features.mel.fmin) ||
      features.mel.fmax > features.sample_rate / 2.0)
    bad("features: need n_mels >= 1 and 0 <= fmin < fmax <= sample_rate/2");
  if (!(features.mel.log_floor > 0)) bad("features.log_floor must be positive");
  if (features.target_frames < 1) bad("features.target_frames must be >= 1");
  if (features.n_mfcc < 1 || features.n_mfcc > features.mel.n_mels) bad("features.n_mfcc must lie in [1, n_mels]");
  if (workers < 0) bad("features.workers must be >= 0");
  arch().validate();
  train.validate();
  for (const auto* p : {&paths.manifest, &paths.cache_dir, &paths.run_dir, &paths.report_dir})
    if (p->empty()) bad("paths entries must be non-empty");
}

RunConfig parse_config(std::string_view ini_text) {
  pt::ptree tree;
  std::istringstream in{std::string(ini_text)};
  try {
    pt::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    bad(std::string("config: ") + e.message() + " at line " + std::to_string(e.line()));
  }
  RunConfig cfg;
  for (const auto& [section, body] : tree) {
    if (body.empty() && !body.data().empty()) bad("config: key '" + section + "' outside any section");
    for (const auto& [key, value] : body) set_key(cfg, section + "." + key, value.data());
  }
  cfg.validate();
  return cfg;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) bad("cannot read config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

std::string serialize_config(const RunConfig& cfg) {
  std::string out, section;
  for (const auto& [key, b] : bindings()) {
    const auto dot = key.find('.');
    const std::string sec = key.substr(0, dot);
    if (sec != section) {
      out += (section.empty() ? "[" : "\n[") + sec + "]\n";
      section = sec;
    }
    out += key.substr(dot + 1) + " = " + b.write(cfg) + "\n";
  }
  return out;
}

void apply_override(RunConfig& cfg, std::string_view assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string_view::npos) bad("override '" + std::string(assignment) + "' is not section.key=value");
  auto trim = [](std::string_view s) {
    const auto a = s.find_first_not_of(" \t"), b = s.find_last_not_of(" \t");
    return a == std::string_view::npos ? std::string() : std::string(s.substr(a, b - a + 1));
  };
  set_key(cfg, trim(assignment.substr(0, eq)), trim(assignment.substr(eq + 1)));
}

}  // namespace ser
