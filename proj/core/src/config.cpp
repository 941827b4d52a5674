#include "essa/config.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>

#include "essa/errors.hpp"

namespace essa {

namespace {

struct IniValue {
  std::string value;
  int line = 0;
  mutable bool consumed = false;
};

/// section -> key -> value, with line numbers for diagnostics.
struct IniFile {
  std::filesystem::path path;
  std::map<std::string, std::map<std::string, IniValue>> sections;

  [[noreturn]] void fail(int line, const std::string& message) const {
    throw ConfigError(path.string() + ":" + std::to_string(line) + ": " +
                      message);
  }

  bool has_section(const std::string& name) const {
    return sections.count(name) > 0;
  }

  std::optional<std::string> get(const std::string& section,
                                 const std::string& key) const {
    auto s = sections.find(section);
    if (s == sections.end()) return std::nullopt;
    auto k = s->second.find(key);
    if (k == s->second.end()) return std::nullopt;
    k->second.consumed = true;
    return k->second.value;
  }

  /// After parsing, every key must have been consumed.
  void reject_unknown_keys() const {
    for (const auto& [section, keys] : sections) {
      for (const auto& [key, v] : keys) {
        if (!v.consumed) {
          fail(v.line, "unknown key '" + key + "' in [" + section + "]");
        }
      }
    }
  }
};

std::string trim(const std::string& s) {
  std::size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return s.substr(b, e - b);
}

IniFile parse_ini(const std::filesystem::path& path,
                  const std::vector<std::string>& known_sections) {
  std::ifstream file(path);
  if (!file) {
    throw ConfigError("cannot open config file '" + path.string() + "'");
  }
  IniFile ini;
  ini.path = path;
  std::string line;
  std::string section;
  int line_no = 0;
  while (std::getline(file, line)) {
    ++line_no;
    const std::string stripped = trim(line);
    if (stripped.empty() || stripped[0] == '#' || stripped[0] == ';') continue;
    if (stripped.front() == '[') {
      if (stripped.back() != ']') {
        ini.fail(line_no, "malformed section header '" + stripped + "'");
      }
      section = trim(stripped.substr(1, stripped.size() - 2));
      if (std::find(known_sections.begin(), known_sections.end(), section) ==
          known_sections.end()) {
        ini.fail(line_no, "unknown section [" + section + "]");
      }
      ini.sections[section];
      continue;
    }
    const std::size_t eq = stripped.find('=');
    if (eq == std::string::npos) {
      ini.fail(line_no, "expected 'key = value', got '" + stripped + "'");
    }
    if (section.empty()) {
      ini.fail(line_no, "key outside of any [section]");
    }
    const std::string key = trim(stripped.substr(0, eq));
    const std::string value = trim(stripped.substr(eq + 1));
    if (key.empty()) ini.fail(line_no, "empty key");
    auto& slot = ini.sections[section][key];
    if (slot.line != 0) {
      ini.fail(line_no, "duplicate key '" + key + "' in [" + section + "]");
    }
    slot = IniValue{value, line_no, false};
  }
  return ini;
}

template <typename T>
T parse_number(const IniFile& ini, const std::string& section,
               const std::string& key, const std::string& raw) {
  std::istringstream is(raw);
  T value;
  is >> value;
  if (is.fail() || !is.eof()) {
    const auto& slot = ini.sections.at(section).at(key);
    ini.fail(slot.line, "invalid value '" + raw + "' for " + key);
  }
  return value;
}

template <typename T>
void read_into(const IniFile& ini, const std::string& section,
               const std::string& key, T& out) {
  if (auto raw = ini.get(section, key)) {
    out = parse_number<T>(ini, section, key, *raw);
  }
}

void read_string(const IniFile& ini, const std::string& section,
                 const std::string& key, std::string& out) {
  if (auto raw = ini.get(section, key)) out = *raw;
}

int ini_line(const IniFile& ini, const std::string& section,
             const std::string& key) {
  return ini.sections.at(section).at(key).line;
}

AdapterSpec parse_adapter_section(const IniFile& ini,
                                  const std::string& section,
                                  std::uint64_t default_seed) {
  AdapterSpec spec = AdapterSpec::full();
  spec.apla_seed = default_seed;
  auto kind = ini.get(section, "kind");
  if (!kind) return spec;
  if (*kind == "full") {
    spec.kind = AdapterKind::full;
  } else if (*kind == "lora") {
    spec.kind = AdapterKind::lora;
  } else if (*kind == "vpt") {
    spec.kind = AdapterKind::vpt;
  } else if (*kind == "bitfit") {
    spec.kind = AdapterKind::bitfit;
  } else if (*kind == "apla") {
    spec.kind = AdapterKind::apla;
  } else {
    ini.fail(ini_line(ini, section, "kind"),
             "unknown adapter kind '" + *kind +
                 "' (expected full|lora|vpt|bitfit|apla)");
  }
  read_into(ini, section, "rank", spec.lora_rank);
  read_into(ini, section, "alpha", spec.lora_alpha);
  if (auto raw = ini.get(section, "targets")) {
    spec.lora_targets.clear();
    std::istringstream is(*raw);
    std::string item;
    while (std::getline(is, item, ',')) {
      item = trim(item);
      if (item == "q") {
        spec.lora_targets.insert(LoraTarget::q);
      } else if (item == "k") {
        spec.lora_targets.insert(LoraTarget::k);
      } else if (item == "v") {
        spec.lora_targets.insert(LoraTarget::v);
      } else if (item == "o") {
        spec.lora_targets.insert(LoraTarget::o);
      } else {
        ini.fail(ini_line(ini, section, "targets"),
                 "unknown lora target '" + item + "' (expected q|k|v|o)");
      }
    }
  }
  read_into(ini, section, "prompts", spec.vpt_prompts);
  if (auto raw = ini.get(section, "mode")) {
    if (*raw == "shallow") {
      spec.vpt_mode = VptMode::shallow;
    } else if (*raw == "deep") {
      spec.vpt_mode = VptMode::deep;
    } else {
      ini.fail(ini_line(ini, section, "mode"),
               "unknown vpt mode '" + *raw + "' (expected shallow|deep)");
    }
  }
  read_into(ini, section, "fraction", spec.apla_fraction);
  read_into(ini, section, "seed", spec.apla_seed);
  try {
    spec.validate();
  } catch (const ConfigError& e) {
    ini.fail(ini_line(ini, section, "kind"), e.what());
  }
  return spec;
}

StageConfig parse_stage_section(const IniFile& ini, const std::string& section,
                                Stage stage, int default_epochs,
                                double default_lr, std::uint64_t seed,
                                const AdapterSpec& adapter) {
  StageConfig cfg;
  cfg.stage = stage;
  cfg.epochs = default_epochs;
  cfg.base_lr = default_lr;
  cfg.batch_size = 64;
  cfg.seed = seed;
  cfg.adapter = adapter;
  read_into(ini, section, "epochs", cfg.epochs);
  read_into(ini, section, "batch_size", cfg.batch_size);
  read_into(ini, section, "base_lr", cfg.base_lr);
  // Warm-up defaults to a tenth of the stage, matching the 10-epochs-in-100
  // convention.
  cfg.warmup_epochs = std::max(1, cfg.epochs / 10);
  if (cfg.warmup_epochs >= cfg.epochs) cfg.warmup_epochs = 0;
  read_into(ini, section, "warmup_epochs", cfg.warmup_epochs);
  read_string(ini, section, "dataset", cfg.dataset_path);
  if (section == "sa") {
    if (auto raw = ini.get(section, "sa_mode")) {
      if (*raw == "full") {
        cfg.sa_mode = SaMode::full;
      } else if (*raw == "peft") {
        cfg.sa_mode = SaMode::peft;
      } else {
        ini.fail(ini_line(ini, section, "sa_mode"),
                 "unknown sa_mode '" + *raw + "' (expected full|peft)");
      }
    }
  }
  try {
    cfg.validate();
  } catch (const ConfigError& e) {
    throw ConfigError(ini.path.string() + ": [" + section + "]: " + e.what());
  }
  return cfg;
}

}  // namespace

std::filesystem::path RunConfig::stage_dataset(Stage stage) const {
  const StageConfig* cfg = nullptr;
  switch (stage) {
    case Stage::essa:
      cfg = &essa;
      break;
    case Stage::sa:
      cfg = &sa;
      break;
    case Stage::ttt:
      cfg = &ttt;
      break;
    default:
      throw ContractError("stage_dataset: no dataset for this stage");
  }
  if (cfg->dataset_path.empty()) return {};
  return data_root / cfg->dataset_path;
}

RunConfig parse_run_config(const std::filesystem::path& path) {
  const IniFile ini =
      parse_ini(path, {"model", "adapter.essa", "adapter.sa", "essa", "sa",
                       "ttt", "data", "eval"});
  RunConfig cfg;
  read_string(ini, "model", "preset", cfg.preset);
  if (cfg.preset != "tiny" && cfg.preset != "small") {
    throw ConfigError(path.string() + ": unknown preset '" + cfg.preset +
                      "' (expected tiny|small)");
  }
  read_into(ini, "model", "seed", cfg.seed);

  cfg.adapter_essa = parse_adapter_section(ini, "adapter.essa", cfg.seed);
  cfg.adapter_sa = ini.has_section("adapter.sa")
                       ? parse_adapter_section(ini, "adapter.sa", cfg.seed)
                       : cfg.adapter_essa;

  cfg.essa = parse_stage_section(ini, "essa", Stage::essa, 100, 5e-4, cfg.seed,
                                 cfg.adapter_essa);
  cfg.sa = parse_stage_section(ini, "sa", Stage::sa, 30, 1e-3, cfg.seed,
                               cfg.adapter_sa);
  // TTT reuses the self-supervised adapter: the same PEFT mechanism adapts
  // the feature extractor at test time.
  cfg.ttt = parse_stage_section(ini, "ttt", Stage::ttt, 10, 1e-4, cfg.seed,
                                cfg.adapter_essa);

  std::string root = ".";
  read_string(ini, "data", "root", root);
  cfg.data_root = path.parent_path() / root;

  read_into(ini, "eval", "k", cfg.eval_k);
  read_into(ini, "eval", "tau", cfg.eval_tau);
  if (auto raw = ini.get("eval", "metric")) {
    try {
      cfg.eval_metric = parse_metric(*raw);
    } catch (const ConfigError& e) {
      ini.fail(ini_line(ini, "eval", "metric"), e.what());
    }
  }
  std::string gallery, query;
  read_string(ini, "eval", "gallery", gallery);
  read_string(ini, "eval", "query", query);
  if (!gallery.empty()) cfg.eval_gallery = cfg.data_root / gallery;
  if (!query.empty()) cfg.eval_query = cfg.data_root / query;

  ini.reject_unknown_keys();
  if (cfg.eval_k < 1) {
    throw ConfigError(path.string() + ": [eval] k must be >= 1");
  }
  if (!(cfg.eval_tau > 0.0)) {
    throw ConfigError(path.string() + ": [eval] tau must be > 0");
  }
  return cfg;
}

SynthSpec parse_synth_spec(const std::filesystem::path& path) {
  const IniFile ini = parse_ini(path, {"synth"});
  SynthSpec spec;
  read_string(ini, "synth", "name", spec.name);
  read_into(ini, "synth", "classes", spec.num_classes);
  read_into(ini, "synth", "image_size", spec.image_size);
  read_into(ini, "synth", "channels", spec.channels);
  read_into(ini, "synth", "train", spec.train_count);
  read_into(ini, "synth", "val", spec.val_count);
  read_into(ini, "synth", "test", spec.test_count);
  read_into(ini, "synth", "base_frequency", spec.base_frequency);
  read_into(ini, "synth", "frequency_step", spec.frequency_step);
  read_into(ini, "synth", "phase_jitter", spec.phase_jitter);
  read_into(ini, "synth", "frequency_jitter", spec.frequency_jitter);
  read_into(ini, "synth", "texture_noise", spec.texture_noise);
  read_into(ini, "synth", "gamma", spec.gamma);
  read_into(ini, "synth", "bias_r", spec.channel_bias[0]);
  read_into(ini, "synth", "bias_g", spec.channel_bias[1]);
  read_into(ini, "synth", "bias_b", spec.channel_bias[2]);
  read_into(ini, "synth", "noise_sigma", spec.noise_sigma);
  read_into(ini, "synth", "blur_radius", spec.blur_radius);
  read_into(ini, "synth", "shift_strength", spec.shift_strength);
  read_into(ini, "synth", "seed", spec.seed);
  ini.reject_unknown_keys();
  try {
    spec.validate();
  } catch (const ConfigError& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  return spec;
}

}  // namespace essa
