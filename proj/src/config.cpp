#include "semalign/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>

#include "semalign/errors.hpp"

namespace semalign {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <typename T>
T parse_number(const std::string& key, const std::string& text) {
  T v{};
  const std::string t = trim(text);
  const auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
  if (ec != std::errc() || ptr != t.data() + t.size() || t.empty()) {
    throw ConfigError("config key '" + key + "': cannot parse '" + text + "'");
  }
  return v;
}

bool parse_bool(const std::string& key, const std::string& text) {
  const std::string t = trim(text);
  if (t == "true" || t == "1" || t == "yes") return true;
  if (t == "false" || t == "0" || t == "no") return false;
  throw ConfigError("config key '" + key + "': expected true/false, got '" + text + "'");
}

template <typename T>
std::vector<T> parse_list(const std::string& key, const std::string& text) {
  std::vector<T> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(parse_number<T>(key, item));
  if (out.empty()) throw ConfigError("config key '" + key + "': empty list");
  return out;
}

// Shortest text that parses back to the same value.
template <typename T>
std::string num(T v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

template <typename T>
std::string join(const std::vector<T>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + num(v[i]);
  return out;
}

struct Field {
  std::function<void(RunConfig&, const std::string& key, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

template <typename Get>
Field double_field(Get ref) {
  return {[ref](RunConfig& c, const std::string& k, const std::string& v) { ref(c) = parse_number<double>(k, v); },
          [ref](const RunConfig& c) { return num(ref(c)); }};
}

template <typename Get>
Field integer_field(Get ref) {
  return {[ref](RunConfig& c, const std::string& k, const std::string& v) { ref(c) = parse_number<int>(k, v); },
          [ref](const RunConfig& c) { return std::to_string(ref(c)); }};
}

template <typename T, typename Get>
Field list_field(Get ref) {
  return {[ref](RunConfig& c, const std::string& k, const std::string& v) { ref(c) = parse_list<T>(k, v); },
          [ref](const RunConfig& c) { return join(ref(c)); }};
}

const std::vector<std::pair<std::string, Field>>& fields() {
  static const std::vector<std::pair<std::string, Field>> table = {
      {"seed",
       {[](RunConfig& c, const std::string& k, const std::string& v) { c.seed = parse_number<std::uint64_t>(k, v); },
        [](const RunConfig& c) { return std::to_string(c.seed); }}},
      {"data.image_size", integer_field([](auto& c) -> auto& { return c.data.image_size; })},
      {"data.categories", list_field<int>([](auto& c) -> auto& { return c.data.categories; })},
      {"data.semantic_pairs",
       {[](RunConfig& c, const std::string& k, const std::string& v) { c.data.semantic = parse_bool(k, v); },
        [](const RunConfig& c) { return std::string(c.data.semantic ? "true" : "false"); }}},
      {"data.dataset_size", integer_field([](auto& c) -> auto& { return c.dataset_size; })},
      {"data.split_train", double_field([](auto& c) -> auto& { return c.split[0]; })},
      {"data.split_val", double_field([](auto& c) -> auto& { return c.split[1]; })},
      {"data.split_test", double_field([](auto& c) -> auto& { return c.split[2]; })},
      {"data.validity_floor", double_field([](auto& c) -> auto& { return c.data.pair.validity_floor; })},
      {"data.max_retries", integer_field([](auto& c) -> auto& { return c.data.pair.max_retries; })},
      {"warp.max_rotation_deg", double_field([](auto& c) -> auto& { return c.data.pair.warp.max_rotation_deg; })},
      {"warp.scale_min", double_field([](auto& c) -> auto& { return c.data.pair.warp.scale_min; })},
      {"warp.scale_max", double_field([](auto& c) -> auto& { return c.data.pair.warp.scale_max; })},
      {"warp.max_translation", double_field([](auto& c) -> auto& { return c.data.pair.warp.max_translation; })},
      {"warp.tps_grid", integer_field([](auto& c) -> auto& { return c.data.pair.warp.tps_grid; })},
      {"warp.tps_std", double_field([](auto& c) -> auto& { return c.data.pair.warp.tps_std; })},
      {"warp.tps_probability", double_field([](auto& c) -> auto& { return c.data.pair.warp.tps_probability; })},
      {"photometric.brightness", double_field([](auto& c) -> auto& { return c.data.pair.photometric.brightness; })},
      {"photometric.contrast", double_field([](auto& c) -> auto& { return c.data.pair.photometric.contrast; })},
      {"photometric.noise_std", double_field([](auto& c) -> auto& { return c.data.pair.photometric.noise_std; })},
      {"occlusion.probability", double_field([](auto& c) -> auto& { return c.data.pair.occlusion.probability; })},
      {"occlusion.min_fraction", double_field([](auto& c) -> auto& { return c.data.pair.occlusion.min_fraction; })},
      {"occlusion.max_fraction", double_field([](auto& c) -> auto& { return c.data.pair.occlusion.max_fraction; })},
      {"encoder.widths", list_field<int>([](auto& c) -> auto& { return c.model.encoder.widths; })},
      {"encoder.strides", list_field<int>([](auto& c) -> auto& { return c.model.encoder.strides; })},
      {"detector.num_landmarks", integer_field([](auto& c) -> auto& { return c.model.detector.num_landmarks; })},
      {"detector.widths", list_field<int>([](auto& c) -> auto& { return c.model.detector.widths; })},
      {"detector.margin", double_field([](auto& c) -> auto& { return c.model.detector.margin; })},
      {"detector.lambda_con", double_field([](auto& c) -> auto& { return c.model.detector.lambda_con; })},
      {"detector.lambda_sep", double_field([](auto& c) -> auto& { return c.model.detector.lambda_sep; })},
      {"aligner.widths", list_field<int>([](auto& c) -> auto& { return c.model.aligner.widths; })},
      {"aligner.uncertainty_widths",
       list_field<int>([](auto& c) -> auto& { return c.model.aligner.uncertainty_widths; })},
      {"similarity.radius", integer_field([](auto& c) -> auto& { return c.model.radius; })},
      {"aligner.temperature", double_field([](auto& c) -> auto& { return c.model.temperature; })},
      {"train.batch_size", integer_field([](auto& c) -> auto& { return c.train.batch_size; })},
      {"train.pretrain_epochs", integer_field([](auto& c) -> auto& { return c.pretrain_epochs; })},
      {"train.pretrain_epoch_steps", integer_field([](auto& c) -> auto& { return c.train.pretrain_epoch_steps; })},
      {"train.pretrain_lr", double_field([](auto& c) -> auto& { return c.train.pretrain_lr; })},
      {"train.lambda_eq", double_field([](auto& c) -> auto& { return c.train.lambda_eq; })},
      {"train.lambda_anchor", double_field([](auto& c) -> auto& { return c.train.lambda_anchor; })},
      {"train.anchor_grid", integer_field([](auto& c) -> auto& { return c.train.anchor_grid; })},
      {"train.alternations", integer_field([](auto& c) -> auto& { return c.alternations; })},
      {"train.epochs_per_phase", integer_field([](auto& c) -> auto& { return c.train.epochs_per_phase; })},
      {"train.learning_rates",
       list_field<double>([](auto& c) -> auto& { return c.train.learning_rates; })},
      {"adam.beta1", double_field([](auto& c) -> auto& { return c.adam.beta1; })},
      {"adam.beta2", double_field([](auto& c) -> auto& { return c.adam.beta2; })},
      {"adam.eps", double_field([](auto& c) -> auto& { return c.adam.eps; })},
      {"eval.pck_alphas", list_field<double>([](auto& c) -> auto& { return c.pck_alphas; })},
      {"eval.report_alpha", double_field([](auto& c) -> auto& { return c.report_alpha; })},
  };
  return table;
}

const Field* find_field(const std::string& key) {
  for (const auto& [name, f] : fields()) {
    if (name == key) return &f;
  }
  return nullptr;
}

void validate(const RunConfig& c) {
  if (c.dataset_size < 1) throw ConfigError("data.dataset_size must be >= 1");
  if (c.alternations < 0 || c.alternations > kMaxAlternations) {
    throw ConfigError("train.alternations must be in [0, " + std::to_string(kMaxAlternations) + "]");
  }
  if (c.pretrain_epochs < 0) throw ConfigError("train.pretrain_epochs must be >= 0");
  if (c.train.batch_size < 1) throw ConfigError("train.batch_size must be >= 1");
  if (c.data.image_size < 8) throw ConfigError("data.image_size must be >= 8");
  for (int cat : c.data.categories) {
    if (cat < 0 || cat >= kNumCategories) throw ConfigError("data.categories: unknown category " + std::to_string(cat));
  }
  for (double a : c.pck_alphas) {
    if (!(a > 0)) throw ConfigError("eval.pck_alphas must be positive");
  }
}

}  // namespace

RunConfig::RunConfig() {
  data.semantic = true;
  data.pair.occlusion.probability = 0.3;
}

DataConfig pretrain_stream_config(const RunConfig& config) {
  DataConfig d = config.data;
  d.semantic = false;
  d.pair.occlusion.probability = 0.0;
  return d;
}

void apply_setting(RunConfig& config, const std::string& key, const std::string& value) {
  const Field* f = find_field(key);
  if (!f) throw ConfigError("unknown config key '" + key + "'");
  f->set(config, key, value);
}

RunConfig parse_config(std::istream& in, const std::string& origin) {
  RunConfig config;
  bool margin_given = false;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(origin + ":" + std::to_string(line_no) + ": expected 'key = value'");
    }
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key == "detector.margin") margin_given = true;
    try {
      apply_setting(config, key, value);
    } catch (const ConfigError& e) {
      throw ConfigError(origin + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  if (!margin_given) config.model.detector.margin = default_margin(config.model.detector.num_landmarks);
  validate(config);
  return config;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  return parse_config(in, path.string());
}

std::string format_config(const RunConfig& config) {
  std::string out;
  for (const auto& [name, f] : fields()) out += name + " = " + f.get(config) + "\n";
  return out;
}

std::vector<std::string> config_keys() {
  std::vector<std::string> keys;
  for (const auto& [name, f] : fields()) keys.push_back(name);
  return keys;
}

}  // namespace semalign
