#include "bga/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>
#include <vector>

namespace bga {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <class T>
T parse_number(const std::string& v) {
  T out{};
  auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size()) throw std::invalid_argument("not a valid number: '" + v + "'");
  return out;
}

bool parse_bool(const std::string& v) {
  if (v == "true") return true;
  if (v == "false") return false;
  throw std::invalid_argument("expected true or false, got '" + v + "'");
}

std::vector<std::string> parse_list(const std::string& v) {
  std::vector<std::string> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (item.empty()) throw std::invalid_argument("empty entry in list '" + v + "'");
    out.push_back(item);
  }
  return out;
}

std::string format_double(double v) {
  char buf[32];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

struct Field {
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

template <class T>
Field size_field(T RunConfig::*group, std::size_t T::*member) {
  return {[=](RunConfig& c, const std::string& v) { (c.*group).*member = parse_number<std::size_t>(v); },
          [=](const RunConfig& c) { return std::to_string((c.*group).*member); }};
}

template <class T>
Field double_field(T RunConfig::*group, double T::*member) {
  return {[=](RunConfig& c, const std::string& v) { (c.*group).*member = parse_number<double>(v); },
          [=](const RunConfig& c) { return format_double((c.*group).*member); }};
}

/// Keys in the order they are written, as "section.key".
const std::vector<std::pair<std::string, Field>>& fields() {
  static const std::vector<std::pair<std::string, Field>> table = [] {
    std::vector<std::pair<std::string, Field>> t;
    t.emplace_back("seed", Field{[](RunConfig& c, const std::string& v) { c.seed = parse_number<std::uint64_t>(v); },
                                 [](const RunConfig& c) { return std::to_string(c.seed); }});
    t.emplace_back("model.d", size_field(&RunConfig::model, &ModelConfig::d));
    t.emplace_back("model.heads", size_field(&RunConfig::model, &ModelConfig::heads));
    t.emplace_back("model.layers", size_field(&RunConfig::model, &ModelConfig::layers));
    t.emplace_back("model.max_len", size_field(&RunConfig::model, &ModelConfig::max_len));
    t.emplace_back("model.alpha", double_field(&RunConfig::model, &ModelConfig::alpha));
    t.emplace_back("model.temperature", double_field(&RunConfig::model, &ModelConfig::temperature));
    t.emplace_back("model.dropout", double_field(&RunConfig::model, &ModelConfig::dropout));
    t.emplace_back("model.keep_ratio", double_field(&RunConfig::model, &ModelConfig::keep_ratio));
    t.emplace_back("model.ratio_weight", double_field(&RunConfig::model, &ModelConfig::ratio_weight));
    t.emplace_back("model.text_only",
                   Field{[](RunConfig& c, const std::string& v) { c.model.text_only = parse_bool(v); },
                         [](const RunConfig& c) { return std::string(c.model.text_only ? "true" : "false"); }});
    t.emplace_back("data.types", Field{[](RunConfig& c, const std::string& v) { c.data.types = parse_list(v); },
                                       [](const RunConfig& c) {
                                         std::string s;
                                         for (const auto& x : c.data.types) s += (s.empty() ? "" : ", ") + x;
                                         return s;
                                       }});
    t.emplace_back("data.raw_dim", size_field(&RunConfig::data, &SyntheticSchema::raw_dim));
    t.emplace_back("data.patches", size_field(&RunConfig::data, &SyntheticSchema::patches));
    t.emplace_back("data.forms_per_type", size_field(&RunConfig::data, &SyntheticSchema::forms_per_type));
    t.emplace_back("data.ambiguity", double_field(&RunConfig::data, &SyntheticSchema::ambiguity));
    t.emplace_back("data.two_token_forms", double_field(&RunConfig::data, &SyntheticSchema::two_token_forms));
    t.emplace_back("data.context_words", size_field(&RunConfig::data, &SyntheticSchema::context_words));
    t.emplace_back("data.min_words", size_field(&RunConfig::data, &SyntheticSchema::min_words));
    t.emplace_back("data.max_words", size_field(&RunConfig::data, &SyntheticSchema::max_words));
    t.emplace_back("data.max_mentions", size_field(&RunConfig::data, &SyntheticSchema::max_mentions));
    t.emplace_back("data.patch_noise", double_field(&RunConfig::data, &SyntheticSchema::patch_noise));
    t.emplace_back("data.missing_image", double_field(&RunConfig::data, &SyntheticSchema::missing_image));
    t.emplace_back("data.train_size", size_field(&RunConfig::sizes, &CorpusSizes::train));
    t.emplace_back("data.dev_size", size_field(&RunConfig::sizes, &CorpusSizes::dev));
    t.emplace_back("data.test_size", size_field(&RunConfig::sizes, &CorpusSizes::test));
    t.emplace_back("train.epochs", size_field(&RunConfig::train, &TrainSettings::epochs));
    t.emplace_back("train.batch_size", size_field(&RunConfig::train, &TrainSettings::batch_size));
    t.emplace_back("train.lr", double_field(&RunConfig::train, &TrainSettings::lr));
    t.emplace_back("train.weight_decay", double_field(&RunConfig::train, &TrainSettings::weight_decay));
    t.emplace_back("train.warmup_ratio", double_field(&RunConfig::train, &TrainSettings::warmup_ratio));
    return t;
  }();
  return table;
}

const Field* find_field(const std::string& key) {
  for (const auto& [name, f] : fields())
    if (name == key) return &f;
  return nullptr;
}

}  // namespace

ModelConfig RunConfig::model_config() const {
  ModelConfig m = model;
  m.patches = data.patches;
  m.raw_dim = data.raw_dim;
  m.seed = seed;
  return m;
}

void RunConfig::validate() const {
  data.validate();
  model_config().validate();
  if (sizes.train == 0 || sizes.dev == 0 || sizes.test == 0) throw std::invalid_argument("split sizes must be >= 1");
  if (train.batch_size == 0) throw std::invalid_argument("batch_size must be >= 1");
  if (!(train.lr > 0.0)) throw std::invalid_argument("lr must be positive");
  if (!(train.warmup_ratio >= 0.0 && train.warmup_ratio <= 1.0)) {
    throw std::invalid_argument("warmup_ratio must lie in [0, 1]");
  }
  if (model.max_len < data.max_words + 2) {
    throw std::invalid_argument("model.max_len " + std::to_string(model.max_len) + " cannot hold sentences of " +
                                std::to_string(data.max_words) + " words plus [CLS] and [SEP]");
  }
}

RunConfig parse_run_config(std::istream& in, const std::string& source) {
  static const std::set<std::string> sections{"model", "data", "train"};
  RunConfig cfg;
  std::string section;
  std::set<std::string> seen;
  std::string line;
  std::size_t line_no = 0;
  auto fail = [&](const std::string& msg) -> ConfigError {
    return ConfigError(source + ":" + std::to_string(line_no) + ": " + msg);
  };
  while (std::getline(in, line)) {
    ++line_no;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw fail("unterminated section header");
      section = trim(line.substr(1, line.size() - 2));
      if (!sections.count(section)) throw fail("unknown section [" + section + "]");
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw fail("expected 'key = value'");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty()) throw fail("missing key");
    const std::string full = section.empty() ? key : section + "." + key;
    const Field* field = find_field(full);
    if (!field) throw fail("unknown key '" + full + "'");
    if (!seen.insert(full).second) throw fail("repeated key '" + full + "'");
    try {
      field->set(cfg, value);
    } catch (const std::invalid_argument& e) {
      throw fail(full + ": " + e.what());
    }
  }
  try {
    cfg.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(source + ": " + e.what());
  }
  return cfg;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  return parse_run_config(in, path.string());
}

std::string format_run_config(const RunConfig& cfg) {
  std::string out, section;
  for (const auto& [name, field] : fields()) {
    const auto dot = name.find('.');
    std::string key = name;
    if (dot != std::string::npos) {
      const std::string s = name.substr(0, dot);
      key = name.substr(dot + 1);
      if (s != section) {
        out += "\n[" + s + "]\n";
        section = s;
      }
    }
    out += key + " = " + field.get(cfg) + "\n";
  }
  return out;
}

}  // namespace bga
