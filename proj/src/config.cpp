#include "sketchfill/config.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <sstream>

#include "sketchfill/image.hpp"

namespace sketchfill {

namespace {

std::string trim(const std::string& s) {
  auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

int to_int(const std::string& key, const std::string& v) {
  try {
    size_t pos = 0;
    long long r = std::stoll(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return static_cast<int>(r);
  } catch (const std::exception&) {
    throw ConfigError("config: '" + key + "' expects an integer, got '" + v + "'");
  }
}

uint64_t to_u64(const std::string& key, const std::string& v) {
  try {
    size_t pos = 0;
    unsigned long long r = std::stoull(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return r;
  } catch (const std::exception&) {
    throw ConfigError("config: '" + key + "' expects an unsigned integer, got '" + v + "'");
  }
}

double to_double(const std::string& key, const std::string& v) {
  try {
    size_t pos = 0;
    double r = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return r;
  } catch (const std::exception&) {
    throw ConfigError("config: '" + key + "' expects a number, got '" + v + "'");
  }
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "on") return true;
  if (v == "false" || v == "0" || v == "off") return false;
  throw ConfigError("config: '" + key + "' expects true/false, got '" + v + "'");
}

std::string fmt_double(double d) {
  char buf[32];
  auto r = std::to_chars(buf, buf + sizeof buf, d);
  return std::string(buf, r.ptr);
}

struct Field {
  std::function<void(RunConfig&, const std::string&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

#define SF_INT(name)                                                                    \
  {#name, Field{[](RunConfig& c, const std::string& k, const std::string& v) { c.name = to_int(k, v); }, \
                [](const RunConfig& c) { return std::to_string(c.name); }}}
#define SF_DBL(name)                                                                       \
  {#name, Field{[](RunConfig& c, const std::string& k, const std::string& v) { c.name = to_double(k, v); }, \
                [](const RunConfig& c) { return fmt_double(c.name); }}}
#define SF_STR(name)                                                                   \
  {#name, Field{[](RunConfig& c, const std::string&, const std::string& v) { c.name = v; }, \
                [](const RunConfig& c) { return c.name; }}}
#define SF_BOOL(name)                                                                    \
  {#name, Field{[](RunConfig& c, const std::string& k, const std::string& v) { c.name = to_bool(k, v); }, \
                [](const RunConfig& c) { return std::string(c.name ? "true" : "false"); }}}
#define SF_LIST(name)                                                                        \
  {#name, Field{[](RunConfig& c, const std::string&, const std::string& v) { c.name = parse_int_list(v); }, \
                [](const RunConfig& c) { return format_int_list(c.name); }}}

const std::map<std::string, Field>& fields() {
  static const std::map<std::string, Field> table = {
      SF_STR(preset),
      SF_INT(image_size),
      SF_INT(reference_size),
      SF_DBL(sketch_threshold),
      SF_STR(corpus),
      SF_STR(schedule),
      SF_INT(timesteps),
      SF_DBL(beta_start),
      SF_DBL(beta_end),
      SF_STR(sampler),
      SF_INT(sample_steps),
      SF_STR(codec),
      SF_INT(codec_latent_channels),
      SF_INT(codec_train_steps),
      SF_STR(precision),
      SF_LIST(unet_widths),
      SF_INT(unet_res_blocks),
      SF_INT(time_embed_dim),
      SF_INT(norm_groups),
      SF_INT(attn_heads),
      SF_BOOL(mask_channel),
      SF_INT(d_cond),
      SF_LIST(encoder_widths),
      SF_INT(encoder_hidden),
      SF_STR(optimizer),
      SF_DBL(learning_rate),
      SF_DBL(weight_decay),
      SF_DBL(adam_beta1),
      SF_DBL(adam_beta2),
      SF_DBL(grad_clip),
      SF_INT(batch_size),
      SF_INT(phase1_steps),
      SF_INT(phase2_steps),
      SF_INT(epochs),
      SF_INT(phase),
      SF_INT(log_every),
      SF_INT(checkpoint_every),
      {"seed", Field{[](RunConfig& c, const std::string& k, const std::string& v) { c.seed = to_u64(k, v); },
                     [](const RunConfig& c) { return std::to_string(c.seed); }}},
  };
  return table;
}

#undef SF_INT
#undef SF_DBL
#undef SF_STR
#undef SF_BOOL
#undef SF_LIST

}  // namespace

KeyValues parse_key_values(const std::string& text) {
  KeyValues kv;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("config line " + std::to_string(lineno) + ": expected 'key = value'");
    }
    kv[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
  }
  return kv;
}

std::string format_key_values(const KeyValues& kv) {
  std::string out;
  for (const auto& [k, v] : kv) out += k + " = " + v + "\n";
  return out;
}

KeyValues read_key_values(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw ConfigError("cannot read config file " + file.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_key_values(ss.str());
}

std::vector<int> parse_int_list(const std::string& s) {
  std::vector<int> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(to_int("list", item));
  }
  return out;
}

std::string format_int_list(const std::vector<int>& v) {
  std::string out;
  for (size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + std::to_string(v[i]);
  return out;
}

void RunConfig::set(const std::string& key, const std::string& value) {
  auto it = fields().find(key);
  if (it == fields().end()) throw ConfigError("config: unknown key '" + key + "'");
  it->second.set(*this, key, value);
}

void RunConfig::apply(const KeyValues& kv) {
  for (const auto& [k, v] : kv) set(k, v);
}

KeyValues RunConfig::to_key_values() const {
  KeyValues kv;
  for (const auto& [k, f] : fields()) kv[k] = f.get(*this);
  return kv;
}

RunConfig RunConfig::from_key_values(const KeyValues& kv) {
  RunConfig c;
  c.apply(kv);
  return c;
}

std::vector<std::string> RunConfig::keys() {
  std::vector<std::string> out;
  for (const auto& [k, f] : fields()) out.push_back(k);
  return out;
}

void RunConfig::validate() const {
  if (image_size < 16) throw ConfigError("image_size must be >= 16");
  if (codec != "identity" && codec != "conv") throw ConfigError("codec must be identity or conv");
  if (image_size % spatial_factor() != 0) throw ConfigError("image_size must be divisible by the codec factor");
  const int levels = static_cast<int>(unet_widths.size());
  if (levels < 1) throw ConfigError("unet_widths must be non-empty");
  if (latent_size() % (1 << (levels - 1)) != 0) {
    throw ConfigError("latent size must be divisible by 2^(levels-1)");
  }
  if (schedule != "linear" && schedule != "cosine") throw ConfigError("schedule must be linear or cosine");
  if (sampler != "ddim" && sampler != "ddpm") throw ConfigError("sampler must be ddim or ddpm");
  if (timesteps < 2) throw ConfigError("timesteps must be >= 2");
  if (sample_steps < 1 || sample_steps > timesteps) throw ConfigError("sample_steps must be in [1, timesteps]");
  if (precision != "fp32" && precision != "bf16") throw ConfigError("precision must be fp32 or bf16");
  if (optimizer != "adamw") throw ConfigError("optimizer must be adamw");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (phase != 1 && phase != 2) throw ConfigError("phase must be 1 or 2");
  if (d_cond < 1 || encoder_widths.empty()) throw ConfigError("encoder configuration invalid");
  if (log_every < 1 || checkpoint_every < 1) throw ConfigError("log/checkpoint intervals must be >= 1");
}

int RunConfig::steps_for_phase(int which, size_t train_count) const {
  if (epochs > 0) {
    const size_t per_epoch = (train_count + batch_size - 1) / batch_size;
    return static_cast<int>(per_epoch * static_cast<size_t>(epochs));
  }
  return which == 1 ? phase1_steps : phase2_steps;
}

RunConfig preset_config(const std::string& name) {
  RunConfig c;
  if (name == "desk") return c;
  if (name == "paper") {
    // 512^2 images, AdamW at 1e-5, batch 4, 40 epochs.
    c.preset = "paper";
    c.image_size = 512;
    c.learning_rate = 1e-5;
    c.batch_size = 4;
    c.epochs = 40;
    c.timesteps = 1000;
    c.beta_start = 1e-4;
    c.beta_end = 0.02;
    return c;
  }
  throw ConfigError("unknown preset '" + name + "' (expected desk or paper)");
}

RunConfig resolve_config(const std::string& preset, const std::filesystem::path& config_file,
                         const KeyValues& overrides) {
  RunConfig c = preset_config(preset.empty() ? "desk" : preset);
  if (!config_file.empty()) {
    KeyValues file_kv = read_key_values(config_file);
    if (auto p = file_kv.find("preset"); p != file_kv.end() && preset.empty()) {
      c = preset_config(p->second);
    }
    for (auto it = file_kv.begin(); it != file_kv.end();) {
      it = it->first.rfind("service.", 0) == 0 ? file_kv.erase(it) : std::next(it);
    }
    c.apply(file_kv);
  }
  for (const auto& key : RunConfig::keys()) {
    std::string env = "SKETCHFILL_" + key;
    std::transform(env.begin(), env.end(), env.begin(), [](unsigned char ch) { return std::toupper(ch); });
    if (const char* v = std::getenv(env.c_str())) c.set(key, v);
  }
  c.apply(overrides);
  c.validate();
  return c;
}

}  // namespace sketchfill
